"""Multiple-choice preference query generation.

A query shows a start configuration and ``m`` feasible goal candidates drawn
from the constraint manifold. Candidates keep the start's elbow branch,
respect joint limits, avoid self collisions, and are picked at uniformly
spaced ranks of the wrist-sorted survivor list so the choices stay diverse.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .kinematics import (
    Arm,
    PlanarArm,
    arm_from_dict,
    arm_to_dict,
    fk_planar,
    self_collides_batch,
    within_limits,
)
from .manifold import (
    Branch,
    TaskTarget,
    TaskType,
    classify_task,
    is_reachable,
    sweep_manifold,
)
from .validation import as_vector


class InsufficientDiversityError(RuntimeError):
    """Fewer feasible candidates than requested; carries per-filter counts."""

    def __init__(self, message: str, counts: dict):
        super().__init__(message)
        self.counts = counts


class SamplingBudgetError(RuntimeError):
    """Battery generation ran out of sampling attempts."""


@dataclass(frozen=True)
class Query:
    """One preference question.

    ``candidates`` are stored in canonical order (increasing wrist value);
    ``permutation`` maps presentation slots to canonical indices, so the
    candidate shown in slot ``i`` is ``candidates[permutation[i]]``.
    """

    id: str
    start: np.ndarray
    target: TaskTarget
    candidates: np.ndarray
    permutation: np.ndarray
    task_type: TaskType
    arm_name: str

    @property
    def m(self) -> int:
        return self.candidates.shape[0]

    @property
    def presented(self) -> np.ndarray:
        """Candidates in presentation order."""
        return self.candidates[self.permutation]

    def canonical_choice(self, presented_index: int) -> int:
        """Map a presentation-slot answer back to the canonical candidate."""
        return int(self.permutation[presented_index])

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "task_type": self.task_type.value,
            "start": [float(v) for v in self.start],
            "target": self.target.to_dict(),
            "candidates_presented": [[float(v) for v in row] for row in self.presented],
            "permutation": [int(i) for i in self.permutation],
            "arm": self.arm_name,
        }

    @staticmethod
    def from_dict(data: dict) -> "Query":
        permutation = np.asarray(data["permutation"], dtype=int)
        presented = np.asarray(data["candidates_presented"], dtype=float)
        candidates = np.empty_like(presented)
        candidates[permutation] = presented
        return Query(
            id=data["id"],
            start=np.asarray(data["start"], dtype=float),
            target=TaskTarget.from_dict(data["target"]),
            candidates=candidates,
            permutation=permutation,
            task_type=TaskType(data["task_type"]),
            arm_name=data.get("arm", "planar3"),
        )


def generate_query(
    arm: PlanarArm,
    q_s,
    target: TaskTarget,
    m: int = 4,
    seed: int = 0,
    n: int = 3600,
    query_id: str = "q0",
) -> Query:
    """Generate one query by dense manifold sampling and filtering.

    Survivors are sorted by wrist value; ``m`` candidates are taken at
    uniformly spaced ranks (first and last always included) and shuffled for
    presentation with the permutation recorded. Deterministic given the seed.
    """
    if m < 2:
        raise ValueError("need at least 2 answer choices")
    if not isinstance(arm, PlanarArm):
        raise ValueError("query generation sweeps the planar constraint manifold")
    q_s = as_vector(q_s, size=3, name="start configuration")
    sweep = sweep_manifold(arm, target, n)
    start_branch = Branch.of(q_s[1])
    configs = sweep.branch_configs(start_branch)[sweep.valid]

    counts = {"manifold": int(2 * sweep.valid.sum() - sweep.boundary.sum())}
    counts["branch"] = configs.shape[0]
    limit_mask = np.array([within_limits(arm, q) for q in configs])
    configs = configs[limit_mask]
    counts["limits"] = configs.shape[0]
    if configs.shape[0]:
        collision = self_collides_batch(arm, configs)
        configs = configs[~collision]
    counts["collision_free"] = configs.shape[0]

    if configs.shape[0] < m:
        raise InsufficientDiversityError(
            f"only {configs.shape[0]} candidates survive the filters, need {m} "
            f"(counts: {counts})",
            counts,
        )

    order = np.argsort(configs[:, 2], kind="stable")
    survivors = configs[order]
    ranks = np.round(np.linspace(0, survivors.shape[0] - 1, m)).astype(int)
    # nudge forward past exact wrist ties so selected values stay distinct
    for k in range(1, m):
        while ranks[k] <= ranks[k - 1] or (
            survivors[ranks[k], 2] == survivors[ranks[k - 1], 2]
            and ranks[k] < survivors.shape[0] - 1
        ):
            ranks[k] += 1
            if ranks[k] >= survivors.shape[0]:
                raise InsufficientDiversityError(
                    f"wrist values not diverse enough for {m} distinct choices "
                    f"(counts: {counts})",
                    counts,
                )
    candidates = survivors[ranks]

    rng = np.random.default_rng(seed)
    permutation = rng.permutation(m)
    return Query(
        id=query_id,
        start=q_s.copy(),
        target=target,
        candidates=candidates,
        permutation=permutation,
        task_type=classify_task(arm, q_s, target),
        arm_name=arm.name,
    )


@dataclass(frozen=True)
class BatterySpec:
    """Counts and sampling ranges for a query battery."""

    n_contraction: int = 18
    n_expansion: int = 18
    m: int = 4
    contraction_radius: tuple[float, float] = (0.45, 1.3)
    expansion_radius: tuple[float, float] = (2.2, 2.85)
    classify_margin: float = 0.1
    sweep_n: int = 3600
    max_attempts: int = 500


@dataclass(frozen=True)
class Battery:
    arm: Arm
    queries: tuple[Query, ...]

    def __len__(self) -> int:
        return len(self.queries)

    def by_id(self, query_id: str) -> Query:
        for q in self.queries:
            if q.id == query_id:
                return q
        raise KeyError(f"unknown query id {query_id!r}")

    def to_dict(self) -> dict:
        return {
            "format": "cspace-battery/1",
            "arm": arm_to_dict(self.arm),
            "queries": [q.to_dict() for q in self.queries],
        }

    @staticmethod
    def from_dict(data: dict) -> "Battery":
        return Battery(
            arm=arm_from_dict(data["arm"]),
            queries=tuple(Query.from_dict(q) for q in data["queries"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @staticmethod
    def load(path) -> "Battery":
        with open(path, "r", encoding="utf-8") as fh:
            return Battery.from_dict(json.load(fh))


def _sample_start(arm: PlanarArm, rng: np.random.Generator) -> np.ndarray:
    lo = np.array([-np.pi, -np.pi, max(arm.joint_limits[2][0], -np.pi)])
    hi = np.array([np.pi, np.pi, min(arm.joint_limits[2][1], np.pi)])
    return rng.uniform(lo, hi)


def generate_battery(arm: PlanarArm, spec: BatterySpec | None = None, seed: int = 0) -> Battery:
    """Deterministic battery of contraction and expansion queries.

    Start configurations are rejection-sampled within limits until they are
    collision-free and give the wanted task type with a radial margin.
    """
    spec = spec or BatterySpec()
    if not isinstance(arm, PlanarArm):
        raise ValueError("battery generation sweeps the planar constraint manifold")
    rng = np.random.default_rng(seed)
    queries = []
    rejected_targets: list[tuple[float, float]] = []
    for task_type, count, radius_range, prefix in (
        (TaskType.CONTRACTION, spec.n_contraction, spec.contraction_radius, "c"),
        (TaskType.EXPANSION, spec.n_expansion, spec.expansion_radius, "e"),
    ):
        made = 0
        attempts = 0
        while made < count:
            if attempts >= spec.max_attempts + count:
                raise SamplingBudgetError(
                    f"exhausted {attempts} attempts generating {task_type.value} "
                    f"queries ({made}/{count} done; rejected targets: "
                    f"{rejected_targets[:8]})"
                )
            attempts += 1
            radius = rng.uniform(*radius_range)
            bearing = rng.uniform(-np.pi, np.pi)
            target = TaskTarget.point2(radius * np.cos(bearing), radius * np.sin(bearing))
            if not is_reachable(arm, target):
                rejected_targets.append(tuple(round(v, 3) for v in target.value))
                continue
            q_s = _sample_start(arm, rng)
            if self_collides_batch(arm, q_s[None, :])[0] or not within_limits(arm, q_s):
                continue
            start_radius = float(np.linalg.norm(fk_planar(arm, q_s).ee))
            if task_type is TaskType.CONTRACTION:
                if start_radius < radius + spec.classify_margin:
                    continue
            else:
                if start_radius > radius - spec.classify_margin:
                    continue
            try:
                query = generate_query(
                    arm,
                    q_s,
                    target,
                    m=spec.m,
                    seed=int(rng.integers(2**31)),
                    n=spec.sweep_n,
                    query_id=f"{prefix}{made:02d}",
                )
            except InsufficientDiversityError:
                continue
            queries.append(query)
            made += 1
    return Battery(arm=arm, queries=tuple(queries))
