"""Sampling and characterization of planar end-effector constraint manifolds.

The feasible set of an end-effector position constraint for the planar arm is
parameterized by the absolute orientation ``phi`` of the last link: the wrist
point is ``target - L3 * (cos phi, sin phi)`` and the first two joints follow
from closed-form two-link inverse kinematics, one solution per elbow branch.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass

import numpy as np

from .kinematics import Arm, ChainArm, PlanarArm, ee_position, fk_planar
from .validation import as_vector, wrap_angle


class UnreachableTargetError(ValueError):
    """Target lies outside the arm's reachable workspace."""


class EmptyManifoldError(ValueError):
    """The wrist circle never intersects the two-link annulus."""


class TaskType(enum.Enum):
    CONTRACTION = "contraction"
    EXPANSION = "expansion"


class Branch(enum.Enum):
    """Elbow branch: UP for relative elbow in [0, pi), DOWN otherwise."""

    UP = "up"
    DOWN = "down"

    @staticmethod
    def of(elbow: float) -> "Branch":
        return Branch.UP if 0.0 <= wrap_angle(elbow) < np.pi else Branch.DOWN


class TargetKind(enum.Enum):
    POINT2 = "point2"
    POINT3 = "point3"
    HEIGHT = "height"


@dataclass(frozen=True)
class TaskTarget:
    """End-effector task: planar point, spatial point, or height constraint."""

    kind: TargetKind
    value: tuple[float, ...]

    @staticmethod
    def point2(x: float, y: float) -> "TaskTarget":
        return TaskTarget(TargetKind.POINT2, (float(x), float(y)))

    @staticmethod
    def point3(x: float, y: float, z: float) -> "TaskTarget":
        return TaskTarget(TargetKind.POINT3, (float(x), float(y), float(z)))

    @staticmethod
    def height(z: float) -> "TaskTarget":
        return TaskTarget(TargetKind.HEIGHT, (float(z),))

    @property
    def point(self) -> np.ndarray:
        return np.asarray(self.value, dtype=float)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "value": list(self.value)}

    @staticmethod
    def from_dict(data: dict) -> "TaskTarget":
        return TaskTarget(TargetKind(data["kind"]), tuple(float(v) for v in data["value"]))


def is_reachable(arm: Arm, target: TaskTarget) -> bool:
    if target.kind is TargetKind.HEIGHT:
        base_z = arm.base[2] if isinstance(arm, ChainArm) else 0.0
        return abs(target.value[0] - base_z) <= arm.reach
    return float(np.linalg.norm(target.point - arm.base[: len(target.value)])) <= arm.reach


def require_reachable(arm: Arm, target: TaskTarget) -> None:
    if not is_reachable(arm, target):
        raise UnreachableTargetError(
            f"target {target.value} beyond total reach {arm.reach}"
        )


@dataclass(frozen=True)
class ManifoldSample:
    """One feasible configuration with its sweep coordinate and branch."""

    phi: float
    branch: Branch
    q: np.ndarray


@dataclass(frozen=True)
class ManifoldSweep:
    """Vectorized sweep over ``n`` uniform phi values and both branches.

    ``valid`` marks phi values whose wrist point lies in the two-link annulus;
    ``boundary`` masks valid phi where the branches coincide (|cos elbow| = 1).
    """

    phi: np.ndarray          # (n,)
    valid: np.ndarray        # (n,) bool
    boundary: np.ndarray     # (n,) bool
    q_up: np.ndarray         # (n, 3)
    q_down: np.ndarray       # (n, 3)

    def branch_configs(self, branch: Branch) -> np.ndarray:
        return self.q_up if branch is Branch.UP else self.q_down


_BOUNDARY_TOL = 1e-12


def sweep_manifold(arm: PlanarArm, target: TaskTarget, n: int = 3600) -> ManifoldSweep:
    """Closed-form IK over a uniform phi grid; raises if the manifold is empty."""
    if target.kind is not TargetKind.POINT2:
        raise ValueError("manifold sweep requires a planar point target")
    require_reachable(arm, target)
    if n < 8:
        raise ValueError("need at least 8 sweep samples")
    L1, L2, L3 = arm.link_lengths
    t = target.point
    phi = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    wrist = t[None, :] - L3 * np.column_stack([np.cos(phi), np.sin(phi)])
    r2 = np.einsum("ij,ij->i", wrist, wrist)
    c2 = (r2 - L1 * L1 - L2 * L2) / (2.0 * L1 * L2)
    valid = (np.abs(c2) <= 1.0 + _BOUNDARY_TOL) & (r2 > 1e-18)
    if not np.any(valid):
        raise EmptyManifoldError(
            f"wrist circle around {tuple(t)} misses the two-link annulus"
        )
    c2c = np.clip(c2, -1.0, 1.0)
    boundary = valid & (np.abs(c2) >= 1.0 - _BOUNDARY_TOL)
    elbow_up = np.arccos(c2c)
    bearing = np.arctan2(wrist[:, 1], wrist[:, 0])

    def branch_q(elbow: np.ndarray) -> np.ndarray:
        q1 = wrap_angle(bearing - np.arctan2(L2 * np.sin(elbow), L1 + L2 * np.cos(elbow)))
        q3 = wrap_angle(phi - q1 - elbow)
        return np.column_stack([q1, elbow, q3])

    return ManifoldSweep(
        phi=phi,
        valid=valid,
        boundary=boundary,
        q_up=branch_q(elbow_up),
        q_down=branch_q(-elbow_up),
    )


def sample_manifold(arm: PlanarArm, target: TaskTarget, n: int = 3600) -> list[ManifoldSample]:
    """List of feasible samples; boundary phi values yield a single sample."""
    sweep = sweep_manifold(arm, target, n)
    samples = []
    for i in np.flatnonzero(sweep.valid):
        samples.append(ManifoldSample(float(sweep.phi[i]), Branch.UP, sweep.q_up[i]))
        if not sweep.boundary[i]:
            samples.append(ManifoldSample(float(sweep.phi[i]), Branch.DOWN, sweep.q_down[i]))
    return samples


def _segment_lengths(Q: np.ndarray) -> np.ndarray:
    """C-space lengths between consecutive configs, angle-wrap aware."""
    diffs = wrap_angle(np.diff(Q, axis=0))
    return np.linalg.norm(diffs, axis=1)


def manifold_centroid(samples: list[ManifoldSample]) -> np.ndarray:
    """Arc-length-weighted mean configuration of the sampled manifold."""
    if not samples:
        raise ValueError("cannot take the centroid of an empty sample set")
    if len(samples) == 1:
        return samples[0].q.copy()
    # Weighted mean in a frame centered on the target bearing so the shoulder
    # average does not straddle the (-pi, pi] seam.
    alpha = _dominant_bearing(samples)
    by_branch: dict[Branch, list[ManifoldSample]] = {Branch.UP: [], Branch.DOWN: []}
    for s in samples:
        by_branch[s.branch].append(s)
    total_w = 0.0
    accum = np.zeros(3)
    for branch_samples in by_branch.values():
        if not branch_samples:
            continue
        branch_samples.sort(key=lambda s: s.phi)
        Q = np.array([s.q for s in branch_samples])
        centered = Q.copy()
        centered[:, 0] = wrap_angle(Q[:, 0] - alpha)
        if len(branch_samples) == 1:
            accum += centered[0]
            total_w += 1.0
            continue
        seg = _segment_lengths(Q)
        w = np.zeros(len(branch_samples))
        w[:-1] += 0.5 * seg
        w[1:] += 0.5 * seg
        accum += w @ centered
        total_w += w.sum()
    mean = accum / total_w
    mean[0] = wrap_angle(mean[0] + alpha)
    return mean


def _dominant_bearing(samples: list[ManifoldSample]) -> float:
    qs1 = np.array([s.q[0] for s in samples])
    return float(np.arctan2(np.mean(np.sin(qs1)), np.mean(np.cos(qs1))))


def reflect_config(q, alpha: float) -> np.ndarray:
    """Point-symmetry map of the manifold: (q1,q2,q3) -> (2a-q1, -q2, -q3)."""
    q = as_vector(q, size=3, name="configuration")
    return np.array(
        [wrap_angle(2.0 * alpha - q[0]), wrap_angle(-q[1]), wrap_angle(-q[2])]
    )


def classify_task(arm: Arm, q_s, target: TaskTarget) -> TaskType:
    """Contraction if the start's EE is farther from the base than the target.

    Ties classify as expansion. Height targets carry no radial position and
    cannot be classified.
    """
    if target.kind is TargetKind.HEIGHT:
        raise ValueError("contraction/expansion is undefined for height targets")
    require_reachable(arm, target)
    q_s = as_vector(q_s, size=arm.dof, name="start configuration")
    base = arm.base[: len(target.value)]
    start_radius = float(np.linalg.norm(ee_position(arm, q_s) - base))
    target_radius = float(np.linalg.norm(target.point - base))
    return TaskType.CONTRACTION if start_radius > target_radius else TaskType.EXPANSION


def samples_to_csv(samples: list[ManifoldSample]) -> str:
    """CSV export (phi, branch, q1, q2, q3) for plotting."""
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["phi", "branch", "q1", "q2", "q3"])
    for s in samples:
        writer.writerow([repr(s.phi), s.branch.value] + [repr(float(v)) for v in s.q])
    return out.getvalue()


def residuals(arm: PlanarArm, samples: list[ManifoldSample], target: TaskTarget) -> np.ndarray:
    """Constraint violation norm of every sample (diagnostic helper)."""
    t = target.point
    return np.array(
        [float(np.linalg.norm(fk_planar(arm, s.q).ee - t)) for s in samples]
    )
