"""Arm models, forward kinematics, joint limits, and planar self-collision.

Two arm families are supported: a 3-link planar arm (shoulder angle absolute
from +x, elbow and wrist relative to the parent link) and a 7-joint revolute
serial chain with per-joint rotation axes and fixed translation offsets.
All angles are radians; canonical joint values live in (-pi, pi].
"""
from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .validation import as_vector, wrap_angle

UNBOUNDED = (-math.inf, math.inf)

PLANAR_JOINT_NAMES = ("shoulder", "elbow", "wrist")


@dataclass(frozen=True)
class PlanarArm:
    """3-link planar arm: link lengths (m) and closed joint-limit intervals."""

    link_lengths: tuple[float, float, float] = (1.0, 1.0, 1.0)
    joint_limits: tuple[tuple[float, float], ...] = (UNBOUNDED, UNBOUNDED, (-2.62, 2.62))
    name: str = "planar3"

    def __post_init__(self):
        if len(self.link_lengths) != 3:
            raise ValueError("planar arm needs exactly 3 link lengths")
        if any(length <= 0 for length in self.link_lengths):
            raise ValueError("link lengths must be strictly positive")
        _check_limits(self.joint_limits, 3)

    @property
    def dof(self) -> int:
        return 3

    @property
    def joint_names(self) -> tuple[str, ...]:
        return PLANAR_JOINT_NAMES

    @property
    def reach(self) -> float:
        return float(sum(self.link_lengths))

    @property
    def base(self) -> np.ndarray:
        return np.zeros(2)


@dataclass(frozen=True)
class ChainJoint:
    """One revolute joint: local unit axis and translation to the next frame."""

    name: str
    axis: tuple[float, float, float]
    offset: tuple[float, float, float]
    limits: tuple[float, float] = (-2.9, 2.9)

    def __post_init__(self):
        norm = math.sqrt(sum(a * a for a in self.axis))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"joint {self.name!r}: axis must be unit norm, got {norm}")
        if not self.limits[0] <= self.limits[1]:
            raise ValueError(f"joint {self.name!r}: empty limit interval")


@dataclass(frozen=True)
class ChainArm:
    """7-joint revolute serial chain rooted at ``base_position``."""

    joints: tuple[ChainJoint, ...]
    base_position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    name: str = "chain7"

    def __post_init__(self):
        if len(self.joints) != 7:
            raise ValueError(f"chain arm needs exactly 7 joints, got {len(self.joints)}")

    @property
    def dof(self) -> int:
        return 7

    @property
    def joint_names(self) -> tuple[str, ...]:
        return tuple(j.name for j in self.joints)

    @property
    def joint_limits(self) -> tuple[tuple[float, float], ...]:
        return tuple(j.limits for j in self.joints)

    @property
    def reach(self) -> float:
        return float(sum(np.linalg.norm(j.offset) for j in self.joints))

    @property
    def base(self) -> np.ndarray:
        return np.asarray(self.base_position, dtype=float)


Arm = PlanarArm | ChainArm


def _check_limits(limits, dof):
    if len(limits) != dof:
        raise ValueError(f"need {dof} limit intervals, got {len(limits)}")
    for lo, hi in limits:
        if not lo <= hi:
            raise ValueError(f"empty limit interval [{lo}, {hi}]")


@dataclass(frozen=True)
class PlanarPose:
    """Planar FK result: base + joint positions, shape (4, 2)."""

    joints: np.ndarray

    @property
    def ee(self) -> np.ndarray:
        return self.joints[-1]


@dataclass(frozen=True)
class ChainPose:
    """Chain FK result: frame origins (8, 3) and rotations (8, 3, 3)."""

    origins: np.ndarray
    rotations: np.ndarray

    @property
    def ee(self) -> np.ndarray:
        return self.origins[-1]


def fk_planar(arm: PlanarArm, q) -> PlanarPose:
    """Forward kinematics of the planar arm.

    Accumulates absolute link angles (shoulder absolute, elbow/wrist relative)
    and sums link vectors; returns all joint positions including the base.
    """
    q = as_vector(q, size=3, name="configuration")
    theta = np.cumsum(q)
    steps = np.asarray(arm.link_lengths)[:, None] * np.column_stack(
        [np.cos(theta), np.sin(theta)]
    )
    joints = np.vstack([np.zeros(2), np.cumsum(steps, axis=0)])
    return PlanarPose(joints=joints)


def planar_ee_batch(arm: PlanarArm, Q: np.ndarray) -> np.ndarray:
    """End-effector positions for a batch of configurations, shape (B, 2)."""
    theta = np.cumsum(Q, axis=1)
    lengths = np.asarray(arm.link_lengths)
    x = (lengths * np.cos(theta)).sum(axis=1)
    y = (lengths * np.sin(theta)).sum(axis=1)
    return np.column_stack([x, y])


def planar_jacobian_batch(arm: PlanarArm, Q: np.ndarray) -> np.ndarray:
    """Position Jacobians d(EE)/dq for a batch, shape (B, 2, 3)."""
    theta = np.cumsum(Q, axis=1)
    lengths = np.asarray(arm.link_lengths)
    lc = lengths * np.cos(theta)
    ls = lengths * np.sin(theta)
    # dEE/dq_i = sum over links k >= i of L_k * (-sin, cos)(theta_k)
    rev_ls = np.cumsum(ls[:, ::-1], axis=1)[:, ::-1]
    rev_lc = np.cumsum(lc[:, ::-1], axis=1)[:, ::-1]
    return np.stack([-rev_ls, rev_lc], axis=1)


def _rodrigues(axis: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rotation matrices about a fixed unit axis for a batch of angles."""
    ax, ay, az = axis
    K = np.array([[0.0, -az, ay], [az, 0.0, -ax], [-ay, ax, 0.0]])
    K2 = K @ K
    s = np.sin(angles)[..., None, None]
    c = (1.0 - np.cos(angles))[..., None, None]
    return np.eye(3) + s * K + c * K2


def fk_chain(arm: ChainArm, q) -> ChainPose:
    """Forward kinematics of the serial chain.

    Each joint rotates about its local axis, then translates along the rotated
    offset to the next frame. Returns every frame origin and rotation.
    """
    q = as_vector(q, size=7, name="configuration")
    pose = fk_chain_batch(arm, q[None, :])
    return ChainPose(origins=pose[0][0], rotations=pose[1][0])


def fk_chain_batch(arm: ChainArm, Q: np.ndarray):
    """Batched chain FK: returns (origins (B,8,3), rotations (B,8,3,3))."""
    B = Q.shape[0]
    origins = np.empty((B, 8, 3))
    rotations = np.empty((B, 8, 3, 3))
    origins[:, 0] = arm.base
    rotations[:, 0] = np.eye(3)
    R = np.broadcast_to(np.eye(3), (B, 3, 3)).copy()
    p = np.broadcast_to(arm.base, (B, 3)).copy()
    for i, joint in enumerate(arm.joints):
        R = R @ _rodrigues(np.asarray(joint.axis), Q[:, i])
        p = p + np.einsum("bij,j->bi", R, np.asarray(joint.offset))
        origins[:, i + 1] = p
        rotations[:, i + 1] = R
    return origins, rotations


def chain_ee_batch(arm: ChainArm, Q: np.ndarray) -> np.ndarray:
    return fk_chain_batch(arm, Q)[0][:, -1]


def chain_jacobian_batch(arm: ChainArm, Q: np.ndarray) -> np.ndarray:
    """Geometric position Jacobians for a batch, shape (B, 3, 7)."""
    origins, rotations = fk_chain_batch(arm, Q)
    ee = origins[:, -1]
    J = np.empty((Q.shape[0], 3, 7))
    for i, joint in enumerate(arm.joints):
        axis_world = np.einsum("bij,j->bi", rotations[:, i], np.asarray(joint.axis))
        lever = ee - origins[:, i]
        J[:, :, i] = np.cross(axis_world, lever)
    return J


def fk(arm: Arm, q):
    """Dispatch to planar or chain FK based on the arm type."""
    if isinstance(arm, PlanarArm):
        return fk_planar(arm, q)
    return fk_chain(arm, q)


def ee_position(arm: Arm, q) -> np.ndarray:
    return fk(arm, q).ee


def within_limits(arm: Arm, q) -> bool:
    """True iff every canonical joint value lies in its closed limit interval."""
    q = as_vector(q, size=arm.dof, name="configuration")
    limits = arm.joint_limits if isinstance(arm, PlanarArm) else arm.joint_limits
    for value, (lo, hi) in zip(wrap_angle(q), limits):
        if hi - lo >= 2.0 * np.pi or (math.isinf(lo) and math.isinf(hi)):
            continue
        if not lo <= value <= hi:
            return False
    return True


def _segments_intersect(p1, p2, p3, p4) -> bool:
    """Segment-segment intersection, endpoints and collinear overlap included."""
    d1 = _cross2(p4 - p3, p1 - p3)
    d2 = _cross2(p4 - p3, p2 - p3)
    d3 = _cross2(p2 - p1, p3 - p1)
    d4 = _cross2(p2 - p1, p4 - p1)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True
    for d, a in ((d1, p1), (d2, p2)):
        if d == 0 and _on_segment(p3, p4, a):
            return True
    for d, a in ((d3, p3), (d4, p4)):
        if d == 0 and _on_segment(p1, p2, a):
            return True
    return False


def _cross2(u, v) -> float:
    return float(u[0] * v[1] - u[1] * v[0])


def _on_segment(a, b, p) -> bool:
    return (
        min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
        and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])
    )


def self_collides(arm: PlanarArm, q) -> bool:
    """True iff two non-adjacent links intersect (only links 1 and 3 qualify)."""
    joints = fk_planar(arm, q).joints
    return _segments_intersect(joints[0], joints[1], joints[2], joints[3])


def self_collides_batch(arm: PlanarArm, Q: np.ndarray) -> np.ndarray:
    """Vectorized link-1/link-3 intersection test for a batch of configs."""
    theta = np.cumsum(Q, axis=1)
    lengths = np.asarray(arm.link_lengths)
    steps = lengths[None, :, None] * np.stack([np.cos(theta), np.sin(theta)], axis=2)
    joints = np.concatenate(
        [np.zeros((Q.shape[0], 1, 2)), np.cumsum(steps, axis=1)], axis=1
    )
    p1, p2, p3, p4 = joints[:, 0], joints[:, 1], joints[:, 2], joints[:, 3]

    def cross(u, v):
        return u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]

    d1 = cross(p4 - p3, p1 - p3)
    d2 = cross(p4 - p3, p2 - p3)
    d3 = cross(p2 - p1, p3 - p1)
    d4 = cross(p2 - p1, p4 - p1)
    proper = ((d1 > 0) & (d2 < 0) | (d1 < 0) & (d2 > 0)) & (
        (d3 > 0) & (d4 < 0) | (d3 < 0) & (d4 > 0)
    )

    def on_seg(a, b, p):
        return (
            (np.minimum(a[:, 0], b[:, 0]) <= p[:, 0])
            & (p[:, 0] <= np.maximum(a[:, 0], b[:, 0]))
            & (np.minimum(a[:, 1], b[:, 1]) <= p[:, 1])
            & (p[:, 1] <= np.maximum(a[:, 1], b[:, 1]))
        )

    touching = (
        ((d1 == 0) & on_seg(p3, p4, p1))
        | ((d2 == 0) & on_seg(p3, p4, p2))
        | ((d3 == 0) & on_seg(p1, p2, p3))
        | ((d4 == 0) & on_seg(p1, p2, p4))
    )
    return proper | touching


# ---------------------------------------------------------------------------
# Declarative arm config files (INI key-value text, lossless round-trip).
# ---------------------------------------------------------------------------

def _fmt_floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def _parse_floats(text: str, n: int | None = None) -> tuple[float, ...]:
    parts = tuple(float(tok) for tok in text.split())
    if n is not None and len(parts) != n:
        raise ValueError(f"expected {n} numbers, got {len(parts)} in {text!r}")
    return parts


def dumps_arm(arm: Arm) -> str:
    """Serialize an arm model to the .cfg text format."""
    cfg = configparser.ConfigParser()
    cfg["arm"] = {"name": arm.name}
    if isinstance(arm, PlanarArm):
        cfg["arm"]["type"] = "planar"
        cfg["links"] = {"lengths": _fmt_floats(arm.link_lengths)}
        cfg["limits"] = {
            name: _fmt_floats(interval)
            for name, interval in zip(arm.joint_names, arm.joint_limits)
        }
    else:
        cfg["arm"]["type"] = "chain"
        cfg["base"] = {"position": _fmt_floats(arm.base_position)}
        for i, joint in enumerate(arm.joints, start=1):
            cfg[f"joint.{i}"] = {
                "name": joint.name,
                "axis": _fmt_floats(joint.axis),
                "offset": _fmt_floats(joint.offset),
                "limits": _fmt_floats(joint.limits),
            }
    out = io.StringIO()
    cfg.write(out)
    return out.getvalue()


def loads_arm(text: str) -> Arm:
    """Parse an arm model from the .cfg text format."""
    cfg = configparser.ConfigParser()
    cfg.read_string(text)
    kind = cfg["arm"]["type"]
    name = cfg["arm"].get("name", kind)
    if kind == "planar":
        lengths = _parse_floats(cfg["links"]["lengths"], 3)
        limits = tuple(
            _parse_floats(cfg["limits"][joint], 2) for joint in PLANAR_JOINT_NAMES
        )
        return PlanarArm(link_lengths=lengths, joint_limits=limits, name=name)
    if kind == "chain":
        joints = []
        for i in range(1, 8):
            section = cfg[f"joint.{i}"]
            joints.append(
                ChainJoint(
                    name=section["name"],
                    axis=_parse_floats(section["axis"], 3),
                    offset=_parse_floats(section["offset"], 3),
                    limits=_parse_floats(section["limits"], 2),
                )
            )
        base = _parse_floats(cfg["base"]["position"], 3) if "base" in cfg else (0.0, 0.0, 0.0)
        return ChainArm(joints=tuple(joints), base_position=base, name=name)
    raise ValueError(f"unknown arm type {kind!r}")


def save_arm(arm: Arm, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_arm(arm))


BUILTIN_ARMS = ("planar3", "jaco7")


def load_arm(spec) -> Arm:
    """Load an arm from a .cfg path or by builtin name ('planar3', 'jaco7')."""
    spec = str(spec)
    if spec in BUILTIN_ARMS:
        text = resources.files("cspace_metrics.configs").joinpath(f"{spec}.cfg").read_text()
        return loads_arm(text)
    with open(spec, "r", encoding="utf-8") as fh:
        return loads_arm(fh.read())


def arm_to_dict(arm: Arm) -> dict:
    """JSON-friendly arm description (embedded in battery files)."""
    if isinstance(arm, PlanarArm):
        return {
            "type": "planar",
            "name": arm.name,
            "link_lengths": list(arm.link_lengths),
            "joint_limits": [list(interval) for interval in arm.joint_limits],
        }
    return {
        "type": "chain",
        "name": arm.name,
        "base_position": list(arm.base_position),
        "joints": [
            {
                "name": j.name,
                "axis": list(j.axis),
                "offset": list(j.offset),
                "limits": list(j.limits),
            }
            for j in arm.joints
        ],
    }


def arm_from_dict(data: dict) -> Arm:
    if data["type"] == "planar":
        return PlanarArm(
            link_lengths=tuple(data["link_lengths"]),
            joint_limits=tuple(tuple(iv) for iv in data["joint_limits"]),
            name=data.get("name", "planar3"),
        )
    if data["type"] == "chain":
        return ChainArm(
            joints=tuple(
                ChainJoint(
                    name=j["name"],
                    axis=tuple(j["axis"]),
                    offset=tuple(j["offset"]),
                    limits=tuple(j["limits"]),
                )
                for j in data["joints"]
            ),
            base_position=tuple(data.get("base_position", (0.0, 0.0, 0.0))),
            name=data.get("name", "chain7"),
        )
    raise ValueError(f"unknown arm type {data['type']!r}")
