"""Independent oracles the solver tests check against.

These deliberately avoid the package's computation paths: the chain FK
oracle multiplies explicit 4x4 homogeneous transforms built from
scipy rotations, the planar oracle is a three-line angle accumulation,
the projection oracle is a dense brute-force scan with its own two-link IK,
and the self-collision oracle uses shapely segment intersection.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation


def chain_fk_oracle(arm, q) -> np.ndarray:
    """End-effector position via a 4x4 homogeneous transform product."""
    T = np.eye(4)
    T[:3, 3] = arm.base_position
    for joint, angle in zip(arm.joints, q):
        R = np.eye(4)
        R[:3, :3] = Rotation.from_rotvec(np.asarray(joint.axis) * angle).as_matrix()
        D = np.eye(4)
        D[:3, 3] = joint.offset
        T = T @ R @ D
    return T[:3, 3]


def planar_fk_oracle(lengths, q) -> np.ndarray:
    angles = [q[0], q[0] + q[1], q[0] + q[1] + q[2]]
    pos = np.zeros(2)
    for L, a in zip(lengths, angles):
        pos = pos + L * np.array([np.cos(a), np.sin(a)])
    return pos


def segments_intersect_oracle(p1, p2, p3, p4) -> bool:
    from shapely.geometry import LineString

    return LineString([tuple(p1), tuple(p2)]).intersects(LineString([tuple(p3), tuple(p4)]))


def _wrap(x):
    w = np.remainder(np.asarray(x, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def dense_projection_oracle(lengths, q_s, target, M, n=1_000_000):
    """Brute-force scan of the manifold cost at ``n`` phi samples.

    Own IK and own displacement rule (shoulder and wrist wrapped to the
    nearest representative, elbow as a plain difference of canonical
    values). Returns (best cost, best configuration).
    """
    L1, L2, L3 = lengths
    t = np.asarray(target, dtype=float)
    qs = _wrap(np.asarray(q_s, dtype=float))
    phi = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    wrist = t[None, :] - L3 * np.column_stack([np.cos(phi), np.sin(phi)])
    r2 = (wrist ** 2).sum(axis=1)
    c2 = (r2 - L1 ** 2 - L2 ** 2) / (2 * L1 * L2)
    ok = (np.abs(c2) <= 1.0) & (r2 > 1e-18)
    phi, wrist, c2 = phi[ok], wrist[ok], np.clip(c2[ok], -1, 1)
    best_cost, best_q = np.inf, None
    for sign in (+1.0, -1.0):
        elbow = sign * np.arccos(c2)
        q1 = _wrap(
            np.arctan2(wrist[:, 1], wrist[:, 0])
            - np.arctan2(L2 * np.sin(elbow), L1 + L2 * np.cos(elbow))
        )
        q3 = _wrap(phi - q1 - elbow)
        d = np.column_stack([_wrap(q1 - qs[0]), elbow - qs[1], _wrap(q3 - qs[2])])
        costs = np.einsum("bi,ij,bj->b", d, M, d)
        i = int(np.argmin(costs))
        if costs[i] < best_cost:
            best_cost = float(costs[i])
            best_q = np.array([q1[i], elbow[i], q3[i]])
    return best_cost, best_q


def finite_difference_gradient(fun, M, h=1e-5) -> np.ndarray:
    """Central finite differences on a symmetric matrix argument."""
    d = M.shape[0]
    G = np.zeros_like(M)
    for i in range(d):
        for j in range(d):
            E = np.zeros_like(M)
            E[i, j] = h
            G[i, j] = (fun(M + E) - fun(M - E)) / (2 * h)
    return G


def random_spd(rng, d, jitter=0.2) -> np.ndarray:
    A = rng.normal(size=(d, d))
    return A @ A.T + jitter * np.eye(d)
