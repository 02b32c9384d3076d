"""Run configuration files and the resumable benchmark suite.

A run config is one JSON document naming the task(s), spaces, seeds,
robot, and any overrides for reward weights, PPO settings, or the replay
perturbation profile.  The benchmark suite is the cross product of those
axes; each cell owns one output directory and is marked complete by a
DONE file, so interrupted sweeps resume where they stopped.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path

from .actions import ALL_SPACES, ActionSpaceKind
from .metrics import PerturbationProfile
from .ppo import PPOConfig
from .robot import RobotModel, load_robot
from .tasks import TaskConfig, load_task, task_from_dict

SPACE_LABELS = tuple(k.value for k in ALL_SPACES)
TASK_NAMES = ("reach", "push")
DONE_MARKER = "DONE"


def parse_seeds(text) -> list[int]:
    """Seed list syntax: "3", "0,1,4", or "0..2" (inclusive range).

    Lists and tuples pass through (validated).

    Raises:
        ValueError: empty or malformed seed specification.
    """
    if isinstance(text, (list, tuple)):
        seeds = [int(s) for s in text]
    else:
        text = str(text).strip()
        if ".." in text:
            a, _, b = text.partition("..")
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError(f"empty seed range '{text}'")
            seeds = list(range(lo, hi + 1))
        elif text:
            seeds = [int(p) for p in text.split(",") if p.strip()]
        else:
            seeds = []
    if not seeds:
        raise ValueError("need at least one seed")
    if any(s < 0 for s in seeds):
        raise ValueError("seeds must be nonnegative")
    return seeds


def expand_spaces(spec) -> list[str]:
    """Space list syntax: "all", one label, "jv,jp", or a list of labels.

    Raises:
        ValueError: unknown label (message lists the valid names).
    """
    if isinstance(spec, str):
        items = [p.strip() for p in spec.split(",") if p.strip()]
    else:
        items = list(spec)
    if items == ["all"] or items == []:
        return list(SPACE_LABELS)
    for label in items:
        ActionSpaceKind.from_label(label)  # raises with the valid names
    return items


def out_root(cli_value: str | None = None, cfg_value: str | None = None) -> Path:
    """Output root precedence: CLI flag, ASPACE_OUT, config, ./out."""
    for candidate in (cli_value, os.environ.get("ASPACE_OUT"), cfg_value):
        if candidate:
            return Path(candidate)
    return Path("out")


@dataclass
class RunConfig:
    """One benchmark run: axes plus overrides, loadable from JSON."""

    task: str | list[str] = "reach"
    spaces: str | list[str] = "all"
    seeds: str | list[int] = "0..2"
    robot: str = "planar3"
    out_dir: str = "out"
    deploy_eval: bool = True        # evaluation/replay runs the command governor
    workers: int = 1
    reward: dict = field(default_factory=dict)
    ppo: dict = field(default_factory=dict)
    perturbation: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.seeds = parse_seeds(self.seeds)
        self.spaces = expand_spaces(self.spaces)
        tasks = [self.task] if isinstance(self.task, str) else list(self.task)
        for t in tasks:
            if t not in TASK_NAMES and not Path(t).exists():
                raise ValueError(f"unknown task '{t}'; valid: {list(TASK_NAMES)} or a JSON path")
        self.task = tasks
        if self.robot not in ("planar3", "spatial7") and not Path(self.robot).exists():
            raise ValueError(f"robot file not found: {self.robot}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        unknown_ppo = set(self.ppo) - {f.name for f in fields(PPOConfig)}
        if unknown_ppo:
            raise ValueError(f"unknown ppo fields: {sorted(unknown_ppo)}")

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)

    # ---- resolved objects ----------------------------------------------

    def robot_model(self) -> RobotModel:
        return load_robot(self.robot)

    def task_config(self, name: str) -> TaskConfig:
        task = load_task(name)
        if self.reward:
            merged = asdict(task.reward)
            unknown = set(self.reward) - set(merged)
            if unknown:
                raise ValueError(f"unknown reward fields: {sorted(unknown)}")
            merged.update(self.reward)
            task = replace(task, reward=type(task.reward)(**merged))
        return task

    def ppo_config(self) -> PPOConfig:
        return PPOConfig(**self.ppo)

    def profile(self) -> PerturbationProfile:
        return PerturbationProfile.from_dict(self.perturbation) if self.perturbation \
            else PerturbationProfile()


@dataclass(frozen=True)
class Cell:
    """One (task, space, seed) unit of benchmark work."""

    task: str
    space: str
    seed: int

    def rel_dir(self) -> Path:
        return Path(self.task) / self.space / f"seed{self.seed}"

    def dir(self, root: str | Path) -> Path:
        return Path(root) / self.rel_dir()

    def done(self, root: str | Path) -> bool:
        return (self.dir(root) / DONE_MARKER).is_file()

    def mark_done(self, root: str | Path, artifacts: dict | None = None) -> None:
        d = self.dir(root)
        d.mkdir(parents=True, exist_ok=True)
        payload = {
            "completed_at": datetime.now(timezone.utc).isoformat(),
            "artifacts": artifacts or {},
        }
        with open(d / DONE_MARKER, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)


@dataclass
class BenchmarkSuite:
    """Cross product of tasks, spaces, and seeds with resumable status."""

    cells: list[Cell]

    @classmethod
    def from_config(cls, rc: RunConfig) -> "BenchmarkSuite":
        cells = [Cell(t, s, k) for t in rc.task for s in rc.spaces for k in rc.seeds]
        return cls(cells=cells)

    def pending(self, root: str | Path) -> list[Cell]:
        return [c for c in self.cells if not c.done(root)]

    def status(self, root: str | Path) -> dict[Cell, bool]:
        return {c: c.done(root) for c in self.cells}

    def run(self, fn, root: str | Path, workers: int = 1) -> list[Cell]:
        """Execute ``fn(cell)`` for every pending cell; returns them.

        Completed cells are skipped, so rerunning a finished suite is a
        no-op.  ``fn`` must be picklable when workers > 1 (process pool);
        it is responsible for calling ``cell.mark_done``.
        """
        todo = self.pending(root)
        if workers <= 1:
            for cell in todo:
                fn(cell)
            return todo
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fn, todo))
        return todo
