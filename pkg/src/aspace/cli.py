"""Command-line front end: train, eval, replay-ote, report, benchmark.

Outputs live under one root directory (--out flag, ASPACE_OUT variable,
or the run config's out_dir, in that precedence), laid out as
``<root>/<task>/<space>/seed<k>/`` per cell.  Exit codes: 0 on success,
1 on runtime failures (missing files, broken logs), 2 on usage errors.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from functools import partial
from pathlib import Path

import click
import numpy as np

from .actions import ActionSpaceConfig, ActionSpaceKind
from .metrics import (MetricReport, PerturbationProfile, load_trajectories,
                      ote_replay, rollout_policy, rollout_push_sequence,
                      save_trajectories, summarize)
from .ppo import load_checkpoint, policy_fn_from, train as ppo_train
from .runcfg import (Cell, BenchmarkSuite, RunConfig, SPACE_LABELS, out_root)
from .svgplot import Figure, PALETTE, percentile_bands
from .tasks import goal_grid

J_SPACES = tuple(s for s in SPACE_LABELS if s.endswith(("jt", "jp", "jv")))
C_SPACES = tuple(s for s in SPACE_LABELS if s.endswith(("cp", "cv")))
P_SPACES = tuple(s for s in SPACE_LABELS if s.endswith(("jp", "cp")))
V_SPACES = tuple(s for s in SPACE_LABELS if s.endswith(("jv", "cv")))


def _merged_config(config: str | None, task=None, spaces=None, seeds=None,
                   robot=None, out_dir=None, workers=None) -> RunConfig:
    """Run config from file plus CLI overrides; usage errors exit 2."""
    base: dict = {}
    if config is not None:
        path = Path(config)
        if not path.exists():
            raise click.ClickException(f"config not found: {config}")
        try:
            base = RunConfig.from_json(path).to_dict()
        except (ValueError, json.JSONDecodeError) as exc:
            raise click.UsageError(f"invalid config {config}: {exc}")
    for key, val in (("task", task), ("spaces", spaces), ("seeds", seeds),
                     ("robot", robot), ("out_dir", out_dir), ("workers", workers)):
        if val is not None:
            base[key] = val
    try:
        return RunConfig(**base)
    except ValueError as exc:
        raise click.UsageError(str(exc))


def _eval_policy(rc: RunConfig, tname: str, label: str, seed: int,
                 cell_dir: Path, deploy: bool) -> MetricReport:
    """Shared eval body: fixed protocol, trajectory log, report JSON."""
    ckpt = cell_dir / "checkpoint_best.pt"
    if not ckpt.exists():
        raise click.ClickException(f"no checkpoint at {ckpt}")
    blob = load_checkpoint(ckpt)
    if blob["space"] != label:
        raise click.ClickException(
            f"checkpoint space '{blob['space']}' does not match requested '{label}'")
    model = rc.robot_model()
    tcfg = rc.task_config(tname)
    kind = ActionSpaceKind.from_label(label)
    policy_act = policy_fn_from(blob["policy_net"], blob["normalizer"])
    space = ActionSpaceConfig.build(kind, model, deploy=deploy)
    if tcfg.is_push:
        trajs = rollout_push_sequence(model, tcfg, space, policy_act,
                                      n_goals=8, n_worlds=2, seed=seed)
    else:
        trajs = rollout_policy(model, tcfg, space, policy_act,
                               goal_grid(tcfg), seed=seed)
    save_trajectories(cell_dir / "traj_eval.jsonl", trajs)
    rep = summarize(trajs, eps=tcfg.reward.eps)
    payload = rep.to_dict()
    payload["seed"] = seed
    payload["deploy"] = deploy
    with open(cell_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
    return rep


def _replay_log(log_path: Path, profile: PerturbationProfile, out_dir: Path) -> dict:
    """Replay every episode of a log; writes per-step CSV and a summary."""
    trajs = load_trajectories(log_path)
    if not trajs:
        raise click.ClickException(f"empty log: {log_path}")
    out_dir.mkdir(parents=True, exist_ok=True)
    per_episode = []
    with open(out_dir / "ote_steps.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "ctrl_step", "abs_joint_error"])
        for i, tr in enumerate(trajs):
            errs, mean = ote_replay(tr, profile)
            per_episode.append(float(mean))
            for s, e in enumerate(errs):
                writer.writerow([i, s, repr(float(e))])
    summary = {
        "log": str(log_path),
        "profile": asdict(profile),
        "ote_per_episode": per_episode,
        "ote_mean": float(np.mean(per_episode)),
    }
    with open(out_dir / "ote_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1)
    return summary


def _train_samples(rc: RunConfig, tname: str, label: str, seed: int,
                   cell_dir: Path) -> None:
    """A few final-policy episodes on the training dynamics, for the logs."""
    ckpt = cell_dir / "checkpoint_best.pt"
    if not ckpt.exists():
        return
    blob = load_checkpoint(ckpt)
    model = rc.robot_model()
    tcfg = rc.task_config(tname)
    kind = ActionSpaceKind.from_label(label)
    policy_act = policy_fn_from(blob["policy_net"], blob["normalizer"])
    space = ActionSpaceConfig.build(kind, model, deploy=False)
    if tcfg.is_push:
        trajs = rollout_push_sequence(model, tcfg, space, policy_act,
                                      n_goals=2, n_worlds=2, seed=seed)
    else:
        trajs = rollout_policy(model, tcfg, space, policy_act,
                               goal_grid(tcfg, 2, 2, 1), seed=seed)
    save_trajectories(cell_dir / "traj_sample.jsonl", trajs)


# ---- verbs -------------------------------------------------------------------


@click.group()
def main() -> None:
    """Benchmark policy action spaces on simulated arm tasks."""


@main.command("train")
@click.option("--config", default=None, help="Run config JSON path.")
@click.option("--task", default=None, help="reach, push, or a task JSON path.")
@click.option("--space", default=None, help="Space label, comma list, or 'all'.")
@click.option("--seed", "--seeds", "seeds", default=None, help="e.g. 0, 0..2, or 0,3,7.")
@click.option("--robot", default=None, help="Robot name or JSON path.")
@click.option("--steps", type=int, default=None, help="Override total env steps.")
@click.option("--out", default=None, help="Output root.")
@click.option("--quiet", is_flag=True, help="Suppress per-iteration lines.")
def cmd_train(config, task, space, seeds, robot, steps, out, quiet) -> None:
    """Train one PPO policy per (task, space, seed); resumable."""
    rc = _merged_config(config, task=task, spaces=space, seeds=seeds,
                        robot=robot, out_dir=out)
    if steps is not None:
        rc.ppo["total_steps"] = steps
    root = out_root(out, rc.out_dir)
    runs = [(t, s, k) for t in rc.task for s in rc.spaces for k in rc.seeds]
    click.echo(f"{len(runs)} training run(s) -> {root}")
    for tname, label, seed in runs:
        cell_dir = Cell(tname, label, seed).dir(root)
        tcfg = rc.task_config(tname)
        kind = ActionSpaceKind.from_label(label)
        try:
            ppo_train(tcfg, kind, rc.ppo_config(), seed, cell_dir, quiet=quiet)
        except FloatingPointError as exc:
            raise click.ClickException(f"{tname}/{label}/seed{seed}: {exc}")
        _train_samples(rc, tname, label, seed, cell_dir)


@main.command("eval")
@click.option("--config", default=None, help="Run config JSON path.")
@click.option("--task", default=None)
@click.option("--space", default=None)
@click.option("--seed", "--seeds", "seeds", default=None)
@click.option("--robot", default=None)
@click.option("--best", type=int, default=0,
              help="Evaluate only the N seeds with the highest training ER.")
@click.option("--deploy/--no-deploy", default=True,
              help="Command governor on (default) or off during evaluation.")
@click.option("--out", default=None, help="Output root.")
def cmd_eval(config, task, space, seeds, robot, best, deploy, out) -> None:
    """Evaluate trained checkpoints on the fixed goal protocol."""
    rc = _merged_config(config, task=task, spaces=space, seeds=seeds,
                        robot=robot, out_dir=out)
    root = out_root(out, rc.out_dir)
    for tname in rc.task:
        for label in rc.spaces:
            chosen = list(rc.seeds)
            if best > 0:
                ranked = []
                for seed in chosen:
                    summary = Cell(tname, label, seed).dir(root) / "summary.json"
                    if summary.exists():
                        with open(summary, encoding="utf-8") as fh:
                            ranked.append((json.load(fh).get("best_eval_er", -np.inf), seed))
                if not ranked:
                    raise click.ClickException(
                        f"no training summaries under {root}/{tname}/{label}")
                ranked.sort(reverse=True)
                chosen = [seed for _, seed in ranked[:best]]
            for seed in chosen:
                cell_dir = Cell(tname, label, seed).dir(root)
                rep = _eval_policy(rc, tname, label, seed, cell_dir, deploy)
                click.echo(
                    f"{tname}/{label}/seed{seed}: SR {rep.sr * 100:.1f}%  "
                    f"ACC {rep.acc * 100:.2f} cm  ER {rep.er_mean:.1f}")


@main.command("replay-ote")
@click.option("--log", required=True, help="Trajectory JSONL path.")
@click.option("--mass-scale", type=float, default=None)
@click.option("--friction-scale", type=float, default=None)
@click.option("--delay", type=int, default=None, help="Actuation delay in policy steps.")
@click.option("--identity", is_flag=True, help="Replay in the unperturbed world.")
@click.option("--out", default=None, help="Output directory (default: log's directory).")
def cmd_replay_ote(log, mass_scale, friction_scale, delay, identity, out) -> None:
    """Replay a log's actions in a perturbed world and report OTE."""
    log_path = Path(log)
    if not log_path.exists():
        raise click.ClickException(f"log not found: {log}")
    profile = PerturbationProfile.identity() if identity else PerturbationProfile()
    if mass_scale is not None:
        profile.mass_scale = mass_scale
    if friction_scale is not None:
        profile.friction_scale = friction_scale
    if delay is not None:
        profile.delay_steps = delay
    out_dir = Path(out) if out else log_path.parent
    try:
        summary = _replay_log(log_path, profile, out_dir)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"OTE {summary['ote_mean']:.6f} rad over "
               f"{len(summary['ote_per_episode'])} episode(s) -> {out_dir}")


def _fmt_cell(value, scale: float = 1.0, digits: int = 2) -> str:
    if value is None:
        return "-"
    return f"{value * scale:.{digits}f}"


def _collect_cells(root: Path) -> dict[tuple[str, str], list[dict]]:
    """Per-(task, space) eval reports found under the output root."""
    found: dict[tuple[str, str], list[dict]] = {}
    for rep_path in sorted(root.glob("*/*/seed*/report.json")):
        task, space = rep_path.parts[-4], rep_path.parts[-3]
        with open(rep_path, encoding="utf-8") as fh:
            rep = json.load(fh)
        ote_path = rep_path.parent / "ote_summary.json"
        if ote_path.exists():
            with open(ote_path, encoding="utf-8") as fh:
                rep["ote"] = json.load(fh)["ote_mean"]
        rep["cell_dir"] = str(rep_path.parent)
        found.setdefault((task, space), []).append(rep)
    return found


def _curve_runs(root: Path, task: str, space: str) -> list[tuple[np.ndarray, np.ndarray]]:
    runs = []
    for curve in sorted(root.glob(f"{task}/{space}/seed*/curve.csv")):
        steps, er = [], []
        with open(curve, encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                v = float(row["er_mean"])
                if np.isfinite(v):
                    steps.append(float(row["env_steps"]))
                    er.append(v)
        if len(steps) >= 2:
            runs.append((np.asarray(steps), np.asarray(er)))
    return runs


def _emit_report(root: Path, out_dir: Path) -> Path:
    cells = _collect_cells(root)
    if not cells:
        raise click.ClickException(f"no completed evaluation cells under {root}")
    out_dir.mkdir(parents=True, exist_ok=True)

    tasks = sorted({t for t, _ in cells})
    header = ["task", "space", "SR %", "ACC cm", "ECV %", "NTE", "OTE", "ER"]
    rows, table_json = [], {}
    for task in tasks:
        for space in SPACE_LABELS:
            reps = cells.get((task, space))
            if not reps:
                rows.append([task, space] + ["-"] * 6)
                continue
            def mean_of(key):
                vals = [r[key] for r in reps if r.get(key) is not None]
                return float(np.mean(vals)) if vals else None
            agg = {k: mean_of(k) for k in ("sr", "acc", "ecv", "nte", "ote", "er_mean")}
            agg["n_seeds"] = len(reps)
            table_json[f"{task}/{space}"] = agg
            rows.append([
                task, space,
                _fmt_cell(agg["sr"], 100.0, 1),
                _fmt_cell(agg["acc"], 100.0, 2),
                _fmt_cell(agg["ecv"], 100.0, 1),
                _fmt_cell(agg["nte"], 1.0, 4),
                _fmt_cell(agg["ote"], 1.0, 4),
                _fmt_cell(agg["er_mean"], 1.0, 1),
            ])
    widths = [max(len(str(r[i])) for r in rows + [header]) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(str(c).ljust(w) for c, w in zip(r, widths)) for r in rows]
    table_text = "\n".join(lines) + "\n"
    (out_dir / "report.txt").write_text(table_text, encoding="utf-8")
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(table_json, fh, indent=1)

    # learning curves: per cell with seeds pooled, plus grouped aggregates
    groups = (("J", J_SPACES), ("C", C_SPACES), ("P", P_SPACES), ("V", V_SPACES))
    for task in tasks:
        fig = Figure(title=f"{task}: learning curves", xlabel="env steps",
                     ylabel="episodic reward")
        drew = 0
        for i, space in enumerate(SPACE_LABELS):
            runs = _curve_runs(root, task, space)
            if not runs:
                continue
            x, lo, mid, hi = percentile_bands(runs)
            color = PALETTE[i % len(PALETTE)]
            fig.add_band(x, lo, hi, color=color, opacity=0.12)
            fig.add(x, mid, label=space, color=color)
            drew += 1
        if drew:
            fig.save(out_dir / f"curves_{task}.svg")
        agg_fig = Figure(title=f"{task}: grouped aggregates", xlabel="env steps",
                         ylabel="episodic reward")
        drew = 0
        for i, (gname, members) in enumerate(groups):
            runs = [r for s in members for r in _curve_runs(root, task, s)]
            if not runs:
                continue
            x, lo, mid, hi = percentile_bands(runs)
            color = PALETTE[i % len(PALETTE)]
            agg_fig.add_band(x, lo, hi, color=color)
            agg_fig.add(x, mid, label=gname, color=color, width=2.0)
            drew += 1
        if drew:
            agg_fig.save(out_dir / f"groups_{task}.svg")

    click.echo(table_text)
    click.echo(f"report -> {out_dir}")
    return out_dir


@main.command("report")
@click.option("--root", default=None, help="Results root (default ASPACE_OUT or ./out).")
@click.option("--out", default=None, help="Report directory (default <root>/report).")
def cmd_report(root, out) -> None:
    """Aggregate evaluated cells into a metrics table and SVG plots."""
    rootp = out_root(root, None)
    if not rootp.exists():
        raise click.ClickException(f"results root not found: {rootp}")
    _emit_report(rootp, Path(out) if out else rootp / "report")


def _bench_cell(rc_dict: dict, root: str, cell: Cell) -> None:
    """One suite cell: train, sample, eval, replay, mark DONE."""
    rc = RunConfig(**rc_dict)
    rootp = Path(root)
    cell_dir = cell.dir(rootp)
    tcfg = rc.task_config(cell.task)
    kind = ActionSpaceKind.from_label(cell.space)
    ppo_train(tcfg, kind, rc.ppo_config(), cell.seed, cell_dir, quiet=True)
    _train_samples(rc, cell.task, cell.space, cell.seed, cell_dir)
    _eval_policy(rc, cell.task, cell.space, cell.seed, cell_dir, rc.deploy_eval)
    _replay_log(cell_dir / "traj_eval.jsonl", rc.profile(), cell_dir)
    cell.mark_done(rootp, artifacts={
        "checkpoint": str(cell_dir / "checkpoint_best.pt"),
        "curve": str(cell_dir / "curve.csv"),
        "eval_log": str(cell_dir / "traj_eval.jsonl"),
        "report": str(cell_dir / "report.json"),
        "ote": str(cell_dir / "ote_summary.json"),
    })


@main.command("benchmark")
@click.option("--config", default=None, help="Run config JSON path.")
@click.option("--task", default=None)
@click.option("--space", default=None)
@click.option("--seed", "--seeds", "seeds", default=None)
@click.option("--robot", default=None)
@click.option("--workers", type=int, default=None, help="Parallel cells (default 1).")
@click.option("--out", default=None, help="Output root.")
def cmd_benchmark(config, task, space, seeds, robot, workers, out) -> None:
    """Run the full suite cell by cell (resumable), then emit the report."""
    rc = _merged_config(config, task=task, spaces=space, seeds=seeds,
                        robot=robot, out_dir=out, workers=workers)
    root = out_root(out, rc.out_dir)
    suite = BenchmarkSuite.from_config(rc)
    pending = suite.pending(root)
    click.echo(f"suite: {len(suite.cells)} cell(s), {len(pending)} pending -> {root}")
    suite.run(partial(_bench_cell, rc.to_dict(), str(root)), root, workers=rc.workers)
    _emit_report(root, root / "report")


if __name__ == "__main__":
    main()
