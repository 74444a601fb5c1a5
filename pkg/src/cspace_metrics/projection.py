"""Metric-weighted closest-point projection onto task constraints.

Two solvers share one displacement convention: joint displacements are taken
in the universal cover with the representative nearest the start (within
(-pi, pi] per joint), except the planar elbow, whose displacement is the
plain difference of canonical representatives so that it never crosses the
folded singularity at pi.

``project_sweep`` is exact for the planar arm: it scans the sampled
constraint manifold and refines every candidate local minimum by
golden-section search on the sweep coordinate. ``project_multistart``
minimizes the quadratic cost plus a ramped quadratic penalty by batched
gradient descent (Barzilai-Borwein steps, backtracking line search) and
works for both arms and all supported constraints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .kinematics import (
    Arm,
    ChainArm,
    PlanarArm,
    chain_ee_batch,
    chain_jacobian_batch,
    planar_ee_batch,
    planar_jacobian_batch,
)
from .manifold import (
    Branch,
    ManifoldSweep,
    TargetKind,
    TaskTarget,
    UnreachableTargetError,
    require_reachable,
    sweep_manifold,
)
from .metrics import mahalanobis_sq, mahalanobis_sq_batch, require_valid_metric
from .validation import as_vector, wrap_angle


class InfeasibleProjectionError(RuntimeError):
    """No restart reached feasibility; carries the best residual seen."""

    def __init__(self, message: str, best_residual: float | None = None):
        super().__init__(message)
        self.best_residual = best_residual


class MirrorMapError(ValueError):
    """The chain does not admit a per-joint sagittal mirror map."""


# ---------------------------------------------------------------------------
# Displacement convention and constraint definitions.
# ---------------------------------------------------------------------------

def displacement_batch(arm: Arm, q_s, Q: np.ndarray) -> np.ndarray:
    """Per-joint displacements from the start for a batch of configurations."""
    qs = wrap_angle(as_vector(q_s, size=arm.dof, name="start configuration"))
    Qc = wrap_angle(np.asarray(Q, dtype=float))
    if isinstance(arm, PlanarArm):
        disp = np.empty_like(Qc)
        disp[:, 0] = wrap_angle(Qc[:, 0] - qs[0])
        disp[:, 1] = Qc[:, 1] - qs[1]  # elbow never crosses the fold
        disp[:, 2] = wrap_angle(Qc[:, 2] - qs[2])
        return disp
    return wrap_angle(Qc - qs)


def displacement(arm: Arm, q_s, q) -> np.ndarray:
    return displacement_batch(arm, q_s, np.asarray(q, dtype=float)[None, :])[0]


def config_distance(arm: Arm, a, b) -> float:
    """C-space distance under the displacement convention."""
    return float(np.linalg.norm(displacement(arm, a, b)))


class PointConstraint:
    """End-effector position constraint c(q) = EE(q) - target."""

    def __init__(self, target):
        self.target = np.asarray(target, dtype=float)

    def value_batch(self, arm: Arm, X: np.ndarray) -> np.ndarray:
        if isinstance(arm, PlanarArm):
            return planar_ee_batch(arm, X) - self.target
        return chain_ee_batch(arm, X) - self.target

    def jac_batch(self, arm: Arm, X: np.ndarray) -> np.ndarray:
        if isinstance(arm, PlanarArm):
            return planar_jacobian_batch(arm, X)
        return chain_jacobian_batch(arm, X)

    def value_and_jac(self, arm: Arm, X: np.ndarray):
        if isinstance(arm, PlanarArm):
            theta = np.cumsum(X, axis=1)
            lengths = np.asarray(arm.link_lengths)
            lc = lengths * np.cos(theta)
            ls = lengths * np.sin(theta)
            ee = np.column_stack([lc.sum(axis=1), ls.sum(axis=1)])
            rev_ls = np.cumsum(ls[:, ::-1], axis=1)[:, ::-1]
            rev_lc = np.cumsum(lc[:, ::-1], axis=1)[:, ::-1]
            return ee - self.target, np.stack([-rev_ls, rev_lc], axis=1)
        return self.value_batch(arm, X), self.jac_batch(arm, X)


class HeightConstraint:
    """End-effector height constraint c(q) = EE_z(q) - h (chain arms)."""

    def __init__(self, height: float):
        self.height = float(height)

    def value_batch(self, arm: Arm, X: np.ndarray) -> np.ndarray:
        if not isinstance(arm, ChainArm):
            raise ValueError("height constraints require a spatial chain arm")
        return chain_ee_batch(arm, X)[:, 2:3] - self.height

    def jac_batch(self, arm: Arm, X: np.ndarray) -> np.ndarray:
        return chain_jacobian_batch(arm, X)[:, 2:3, :]

    def value_and_jac(self, arm: Arm, X: np.ndarray):
        return self.value_batch(arm, X), self.jac_batch(arm, X)


class JointValueConstraint:
    """Single-joint equality c(q) = q_i - value."""

    def __init__(self, index: int, value: float):
        self.index = int(index)
        self.value = float(value)

    def value_batch(self, arm: Arm, X: np.ndarray) -> np.ndarray:
        return X[:, self.index : self.index + 1] - self.value

    def jac_batch(self, arm: Arm, X: np.ndarray) -> np.ndarray:
        J = np.zeros((X.shape[0], 1, arm.dof))
        J[:, 0, self.index] = 1.0
        return J

    def value_and_jac(self, arm: Arm, X: np.ndarray):
        return self.value_batch(arm, X), self.jac_batch(arm, X)


Constraint = PointConstraint | HeightConstraint | JointValueConstraint


def constraint_for(arm: Arm, target: TaskTarget) -> Constraint:
    if target.kind is TargetKind.HEIGHT:
        return HeightConstraint(target.value[0])
    if target.kind is TargetKind.POINT2 and isinstance(arm, PlanarArm):
        return PointConstraint(target.point)
    if target.kind is TargetKind.POINT3 and isinstance(arm, ChainArm):
        return PointConstraint(target.point)
    raise ValueError(f"target kind {target.kind.value} unsupported for {type(arm).__name__}")


# ---------------------------------------------------------------------------
# Results.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProjectionResult:
    q_star: np.ndarray
    cost: float
    residual: float
    solver: str
    restarts_agreeing: int | None = None
    phi: float | None = None
    branch: Branch | None = None

    def to_dict(self) -> dict:
        data = {
            "q_star": [float(v) for v in self.q_star],
            "cost": self.cost,
            "residual": self.residual,
            "solver": self.solver,
        }
        if self.restarts_agreeing is not None:
            data["restarts_agreeing"] = self.restarts_agreeing
        if self.phi is not None:
            data["phi"] = self.phi
            data["branch"] = self.branch.value
        return data


@dataclass(frozen=True)
class SublevelInterval:
    phi_lo: float
    phi_hi: float
    branch: Branch
    min_cost: float
    component: int


@dataclass(frozen=True)
class SublevelReport:
    """Connected near-optimal regions of the cost along the manifold.

    ``component_count`` counts connected components of the sublevel set
    {cost <= (1 + delta) * min} under manifold adjacency: intervals of one
    branch connect across stretched-arm joins (elbow through zero) but never
    across the folded-elbow boundary or sweep gaps. A count of 2 or more
    flags an ill-conditioned projection.
    """

    component_count: int
    intervals: tuple[SublevelInterval, ...]
    threshold: float
    min_cost: float

    def to_dict(self) -> dict:
        return {
            "component_count": self.component_count,
            "threshold": self.threshold,
            "min_cost": self.min_cost,
            "intervals": [
                {
                    "phi_lo": iv.phi_lo,
                    "phi_hi": iv.phi_hi,
                    "branch": iv.branch.value,
                    "min_cost": iv.min_cost,
                    "component": iv.component,
                }
                for iv in self.intervals
            ],
        }


# ---------------------------------------------------------------------------
# Sweep solver.
# ---------------------------------------------------------------------------

def _sweep_costs(arm: PlanarArm, q_s, M: np.ndarray, sweep: ManifoldSweep):
    """Cost of every sweep sample on both branches; inf where invalid."""
    cost_up = np.full(sweep.phi.size, np.inf)
    cost_down = np.full(sweep.phi.size, np.inf)
    idx = np.flatnonzero(sweep.valid)
    disp_up = displacement_batch(arm, q_s, sweep.q_up[idx])
    cost_up[idx] = mahalanobis_sq_batch(M, disp_up)
    not_boundary = idx[~sweep.boundary[idx]]
    disp_down = displacement_batch(arm, q_s, sweep.q_down[not_boundary])
    cost_down[not_boundary] = mahalanobis_sq_batch(M, disp_down)
    return cost_up, cost_down


def _branch_configs_at(arm: PlanarArm, target: TaskTarget, phis: np.ndarray, branch: Branch):
    """Closed-form IK at arbitrary phi values for one branch."""
    L1, L2, L3 = arm.link_lengths
    t = target.point
    wrist = t[None, :] - L3 * np.column_stack([np.cos(phis), np.sin(phis)])
    r2 = np.einsum("ij,ij->i", wrist, wrist)
    c2 = (r2 - L1 * L1 - L2 * L2) / (2.0 * L1 * L2)
    valid = (np.abs(c2) <= 1.0) & (r2 > 1e-18)
    elbow = np.arccos(np.clip(c2, -1.0, 1.0))
    if branch is Branch.DOWN:
        elbow = -elbow
    bearing = np.arctan2(wrist[:, 1], wrist[:, 0])
    q1 = wrap_angle(bearing - np.arctan2(L2 * np.sin(elbow), L1 + L2 * np.cos(elbow)))
    q3 = wrap_angle(phis - q1 - elbow)
    return np.column_stack([q1, elbow, q3]), valid


def _cost_at(arm, target, q_s, M, phis, branch):
    Q, valid = _branch_configs_at(arm, target, np.atleast_1d(phis), branch)
    costs = np.full(Q.shape[0], np.inf)
    if np.any(valid):
        disp = displacement_batch(arm, q_s, Q[valid])
        costs[valid] = mahalanobis_sq_batch(M, disp)
    return costs


def _local_min_indices(costs: np.ndarray, run: np.ndarray, circular: bool) -> list[int]:
    vals = costs[run]
    k = len(run)
    if k == 1:
        return [int(run[0])]
    minima = []
    for j in range(k):
        if not circular and (j == 0 or j == k - 1):
            continue
        prev_v = vals[j - 1] if (j > 0 or circular) else np.inf
        next_v = vals[(j + 1) % k] if (j < k - 1 or circular) else np.inf
        if vals[j] <= prev_v and vals[j] <= next_v:
            minima.append(int(run[j]))
    if not circular:
        minima.extend([int(run[0]), int(run[-1])])
    return minima


def _wrap_jump_indices(disp_col: np.ndarray, run: np.ndarray) -> list[int]:
    """Cells where a wrapped displacement component flips across +-pi."""
    vals = disp_col[run]
    jumps = np.flatnonzero(np.abs(np.diff(vals)) > np.pi)
    out = []
    for j in jumps:
        out.extend([int(run[j]), int(run[j + 1])])
    return out


def _golden_min(f, a: float, b: float, tol: float = 1e-10):
    """Golden-section minimization of a scalar function on [a, b]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = f(x1), f(x2)
    while (b - a) > tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = f(x2)
    return (x1, f1) if f1 <= f2 else (x2, f2)


def _runs_of(valid: np.ndarray) -> list[np.ndarray]:
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        return []
    splits = np.flatnonzero(np.diff(idx) > 1)
    runs = np.split(idx, splits + 1)
    if len(runs) > 1 and idx[0] == 0 and idx[-1] == valid.size - 1:
        runs[0] = np.concatenate([runs[-1], runs[0]])
        runs.pop()
    return runs


def project_sweep(
    arm: PlanarArm,
    q_s,
    target: TaskTarget,
    M,
    n: int = 3600,
) -> ProjectionResult:
    """Exact planar projection: manifold scan plus golden-section refinement.

    Every local minimum of the sampled cost profile, every arc endpoint, and
    every wrap-discontinuity cell is refined to |delta phi| <= 1e-10; the
    global minimizer over both branches is returned as the universal-cover
    representative nearest the start.
    """
    M = require_valid_metric(M)
    q_s = as_vector(q_s, size=3, name="start configuration")
    sweep = sweep_manifold(arm, target, n)
    cost_up, cost_down = _sweep_costs(arm, q_s, M, sweep)
    step = 2.0 * np.pi / n

    best = (np.inf, None, None)  # cost, phi, branch
    for branch, costs in ((Branch.UP, cost_up), (Branch.DOWN, cost_down)):
        finite = np.isfinite(costs)
        if not np.any(finite):
            continue
        disp_all = np.zeros((sweep.phi.size, 3))
        Qb = sweep.branch_configs(branch)
        disp_all[finite] = displacement_batch(arm, q_s, Qb[finite])
        seeds: set[int] = set()
        for run in _runs_of(finite):
            circular = len(run) == sweep.phi.size
            seeds.update(_local_min_indices(costs, run, circular))
            seeds.update(_wrap_jump_indices(disp_all[:, 0], run))
            seeds.update(_wrap_jump_indices(disp_all[:, 2], run))

        def f(phi: float) -> float:
            return float(_cost_at(arm, target, q_s, M, phi, branch)[0])

        for seed in seeds:
            center = sweep.phi[seed]
            lo, hi = center - 1.5 * step, center + 1.5 * step
            fine = np.linspace(lo, hi, 301)
            fine_costs = _cost_at(arm, target, q_s, M, fine, branch)
            j = int(np.argmin(fine_costs))
            if not np.isfinite(fine_costs[j]):
                continue
            a = fine[max(j - 1, 0)]
            b = fine[min(j + 1, fine.size - 1)]
            phi_star, cost_star = _golden_min(f, float(a), float(b))
            if cost_star < best[0]:
                best = (cost_star, phi_star, branch)

    if best[1] is None:
        raise InfeasibleProjectionError("manifold scan produced no feasible sample")

    cost_star, phi_star, branch = best
    q_c, _ = _branch_configs_at(arm, target, np.array([phi_star]), branch)
    q_manifold = q_c[0]
    delta = displacement(arm, q_s, q_manifold)
    q_star = q_s + delta
    cost = mahalanobis_sq(M, q_s, q_star)
    ee = planar_ee_batch(arm, q_star[None, :])[0]
    residual = float(np.linalg.norm(ee - target.point))
    return ProjectionResult(
        q_star=q_star,
        cost=cost,
        residual=residual,
        solver="sweep",
        phi=float(wrap_angle(phi_star) % (2.0 * np.pi)),
        branch=branch,
    )


def sweep_cost_profile(arm: PlanarArm, q_s, target: TaskTarget, M, n: int = 3600):
    """(phi, branch, cost) rows for every valid sample, for CSV export."""
    M = require_valid_metric(M)
    q_s = as_vector(q_s, size=3, name="start configuration")
    sweep = sweep_manifold(arm, target, n)
    cost_up, cost_down = _sweep_costs(arm, q_s, M, sweep)
    rows = []
    for branch, costs in ((Branch.UP, cost_up), (Branch.DOWN, cost_down)):
        for i in np.flatnonzero(np.isfinite(costs)):
            rows.append((float(sweep.phi[i]), branch, float(costs[i])))
    rows.sort(key=lambda r: (r[0], r[1].value))
    return rows


_OUTER_JOIN_ELBOW = 0.5 * np.pi  # |elbow| below this at an arc end: stretched join


def sublevel_components(
    arm: PlanarArm,
    q_s,
    target: TaskTarget,
    M,
    delta: float = 0.05,
    n: int = 3600,
) -> SublevelReport:
    """Connected components of the near-optimal sublevel set along the manifold."""
    if not 0.0 <= delta < 1.0:
        raise ValueError("delta must lie in [0, 1)")
    M = require_valid_metric(M)
    q_s = as_vector(q_s, size=3, name="start configuration")
    sweep = sweep_manifold(arm, target, n)
    cost_up, cost_down = _sweep_costs(arm, q_s, M, sweep)

    finite_min = min(
        cost_up[np.isfinite(cost_up)].min(initial=np.inf),
        cost_down[np.isfinite(cost_down)].min(initial=np.inf),
    )
    threshold_value = (1.0 + delta) * finite_min

    n_cells = sweep.phi.size
    nodes = {}  # (branch, idx) -> node id
    parent: list[int] = []

    def node(branch: Branch, idx: int) -> int:
        key = (branch, idx)
        if key not in nodes:
            nodes[key] = len(parent)
            parent.append(len(parent))
        return nodes[key]

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    marked = {
        Branch.UP: np.isfinite(cost_up) & (cost_up <= threshold_value),
        Branch.DOWN: np.isfinite(cost_down) & (cost_down <= threshold_value),
    }
    costs_by_branch = {Branch.UP: cost_up, Branch.DOWN: cost_down}

    for branch in (Branch.UP, Branch.DOWN):
        mask = marked[branch]
        for i in np.flatnonzero(mask):
            node(branch, int(i))
        for i in np.flatnonzero(mask & np.roll(mask, -1)):
            j = (int(i) + 1) % n_cells
            if j == int(i) + 1 or (j == 0 and sweep.valid[n_cells - 1] and sweep.valid[0]):
                union(node(branch, int(i)), node(branch, j))

    # Arc-end joins: branches meet where the first two links stretch straight
    # (elbow through 0). Folded-boundary meetings (|elbow| near pi) stay
    # separate: the elbow displacement convention forbids crossing the fold.
    for run in _runs_of(sweep.valid):
        if len(run) == n_cells:
            continue
        for end in (int(run[0]), int(run[-1])):
            if marked[Branch.UP][end] and marked[Branch.DOWN][end]:
                if abs(sweep.q_up[end, 1]) < _OUTER_JOIN_ELBOW:
                    union(node(Branch.UP, end), node(Branch.DOWN, end))

    intervals = []
    for branch in (Branch.UP, Branch.DOWN):
        mask = marked[branch]
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            continue
        splits = np.flatnonzero(np.diff(idx) > 1)
        for chunk in np.split(idx, splits + 1):
            comp = find(node(branch, int(chunk[0])))
            intervals.append(
                SublevelInterval(
                    phi_lo=float(sweep.phi[chunk[0]]),
                    phi_hi=float(sweep.phi[chunk[-1]]),
                    branch=branch,
                    min_cost=float(costs_by_branch[branch][chunk].min()),
                    component=comp,
                )
            )

    roots = {find(i) for i in range(len(parent))}
    canonical = {root: rank for rank, root in enumerate(sorted(roots))}
    intervals = [replace(iv, component=canonical[find(iv.component)]) for iv in intervals]
    return SublevelReport(
        component_count=len(roots),
        intervals=tuple(sorted(intervals, key=lambda iv: (iv.component, iv.phi_lo))),
        threshold=delta,
        min_cost=float(finite_min),
    )


# ---------------------------------------------------------------------------
# Multistart penalty solver.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultistartOptions:
    restarts: int = 32
    mu_schedule: tuple[float, ...] = (1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6)
    stage_iters: int = 35
    polish_iters: int = 250
    hop_rounds: int = 2
    coverage_probes: int = 128
    gtol: float = 1e-11
    feasibility_tol: float = 1e-6
    agree_tol: float = 1e-4
    perturb_halfwidth: float = np.pi
    seed: int = 0


def _penalty_fun(arm, constraint, M, q_s, mu):
    def fun(X: np.ndarray):
        disp = displacement_batch(arm, q_s, X)
        MD = disp @ M
        cost = np.einsum("bi,bi->b", disp, MD)
        C = constraint.value_batch(arm, X)
        J = constraint.jac_batch(arm, X)
        f = cost + mu * np.einsum("bk,bk->b", C, C)
        G = 2.0 * MD + 2.0 * mu * np.einsum("bki,bk->bi", J, C)
        return f, G

    return fun


_POLISH_STEP_CAP = 0.25
_STAGE_STEP_CAP = 1.0


def _bb_descent(fun, X: np.ndarray, max_iters: int, gtol: float) -> np.ndarray:
    """Batched gradient descent with BB steps and Armijo backtracking."""
    B = X.shape[0]
    X = X.copy()
    f, G = fun(X)
    t = 1.0 / (1.0 + np.abs(G).max(axis=1))
    hist = np.full((B, 5), np.inf)
    hist[:, 0] = f
    done = np.abs(G).max(axis=1) <= gtol
    stalled = 0
    for it in range(max_iters):
        if done.all():
            break
        gg = np.einsum("bi,bi->b", G, G)
        t = np.minimum(t, _STAGE_STEP_CAP / np.maximum(np.linalg.norm(G, axis=1), 1e-300))
        fref = hist.max(axis=1)
        cand = X - t[:, None] * G
        fc, Gc = fun(cand)
        for _ in range(50):
            bad = ~done & ~(fc <= fref - 1e-4 * t * gg)
            if not bad.any():
                break
            t = np.where(bad, 0.5 * t, t)
            frozen = bad & (t < 1e-17)
            done |= frozen
            cand = X - t[:, None] * G
            fc, Gc = fun(cand)
        improve = ~done
        gain = np.where(improve, f - fc, 0.0)
        stalled = stalled + 1 if gain.max(initial=0.0) < 1e-16 * (1.0 + np.abs(f).max()) else 0
        S = cand - X
        Y = Gc - G
        sy = np.einsum("bi,bi->b", S, Y)
        ss = np.einsum("bi,bi->b", S, S)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_bb = np.where(sy > 1e-300, ss / sy, t * 2.0)
        t_new = np.clip(np.nan_to_num(t_bb, nan=1.0), 1e-14, 1e8)
        X = np.where(improve[:, None], cand, X)
        G = np.where(improve[:, None], Gc, G)
        f = np.where(improve, fc, f)
        t = np.where(improve, t_new, t)
        hist[:, it % 5] = np.where(improve, f, hist[:, it % 5])
        done |= np.abs(G).max(axis=1) <= gtol
        if stalled >= 3:
            break
    return X


def _solve_small(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched solve for the tiny (k <= 3) normal systems, k = 1, 2 unrolled."""
    k = A.shape[1]
    if k == 1:
        return b / A[:, :, 0]
    if k == 2:
        a, c = A[:, 0, 0], A[:, 0, 1]
        d = A[:, 1, 1]
        det = a * d - c * c
        x0 = (d * b[:, 0] - c * b[:, 1]) / det
        x1 = (a * b[:, 1] - c * b[:, 0]) / det
        return np.column_stack([x0, x1])
    return np.linalg.solve(A, b[:, :, None])[:, :, 0]


def _gauss_newton_step(arm, constraint, X: np.ndarray) -> np.ndarray:
    """One Gauss-Newton step toward c(q) = 0 along the constraint normal."""
    C, J = constraint.value_and_jac(arm, X)
    JJt = np.einsum("bki,bli->bkl", J, J) + 1e-12 * np.eye(J.shape[1])
    lam = _solve_small(JJt, C)
    return X - np.einsum("bki,bk->bi", J, lam)


def _feasibility_polish(arm, constraint, X: np.ndarray, iters: int = 4) -> np.ndarray:
    for _ in range(iters):
        X = _gauss_newton_step(arm, constraint, X)
    return X


def _projected_gradient(arm, constraint, M, q_s, X: np.ndarray):
    """Cost, residual norm, and cost gradient projected on the constraint tangent."""
    disp = displacement_batch(arm, q_s, X)
    f = np.einsum("bi,bi->b", disp, disp @ M)
    G = 2.0 * disp @ M
    C, J = constraint.value_and_jac(arm, X)
    JJt = np.einsum("bki,bli->bkl", J, J) + 1e-12 * np.eye(J.shape[1])
    rhs = np.einsum("bki,bi->bk", J, G)
    lam = _solve_small(JJt, rhs)
    Gt = G - np.einsum("bki,bk->bi", J, lam)
    return f, np.linalg.norm(C, axis=1), Gt


def _tangent_polish(arm, constraint, M, q_s, X: np.ndarray, max_iters: int,
                    gtol: float) -> np.ndarray:
    """Feasible descent on the constraint surface.

    Backtracked moves along the cost gradient projected onto the constraint
    tangent space, re-projected by Gauss-Newton steps. A trial point is only
    comparable when its residual stays controlled, so acceptance requires
    both an Armijo decrease and near-feasibility. Tight accuracy here is
    cheap: the tangential problem is conditioned by the metric alone.
    """
    X = _feasibility_polish(arm, constraint, X, iters=5)
    B = X.shape[0]
    t = np.full(B, 0.1)
    prev_S = None
    prev_Y = None
    stall = np.zeros(B, dtype=int)
    frozen = np.zeros(B, dtype=bool)
    f0, resid0, Gt = _projected_gradient(arm, constraint, M, q_s, X)
    for _ in range(max_iters):
        frozen |= np.abs(Gt).max(axis=1) <= gtol
        frozen |= stall >= 3
        if frozen.all():
            break
        if prev_S is not None:
            sy = np.einsum("bi,bi->b", prev_S, prev_Y)
            ss = np.einsum("bi,bi->b", prev_S, prev_S)
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.clip(np.nan_to_num(np.where(sy > 1e-300, ss / sy, t * 2.0),
                                          nan=0.1), 1e-14, 1e6)
        gg = np.einsum("bi,bi->b", Gt, Gt)
        # trust region: an unbounded step teleports across cost ridges into
        # foreign basins, collapsing restart diversity
        t = np.minimum(t, _POLISH_STEP_CAP / np.maximum(np.linalg.norm(Gt, axis=1), 1e-300))
        resid_cap = np.maximum(2.0 * resid0, 1e-8)
        accepted = np.zeros(B, dtype=bool)
        cand = X.copy()
        work = np.flatnonzero(~frozen)
        for _ in range(30):
            if work.size == 0:
                break
            trial = _feasibility_polish(
                arm, constraint, X[work] - t[work, None] * Gt[work], iters=2
            )
            disp_t = displacement_batch(arm, q_s, trial)
            f_t = np.einsum("bi,bi->b", disp_t, disp_t @ M)
            resid_t = np.linalg.norm(constraint.value_batch(arm, trial), axis=1)
            ok = (f_t <= f0[work] - 1e-4 * t[work] * gg[work]) & (resid_t <= resid_cap[work])
            hit = work[ok]
            cand[hit] = trial[ok]
            accepted[hit] = True
            work = work[~ok]
            t[work] *= 0.5
        moved = accepted & ~frozen
        new_X = np.where(moved[:, None], cand, X)
        f_new, resid_new, Gt_new = _projected_gradient(arm, constraint, M, q_s, new_X)
        gain = np.where(moved, f0 - f_new, 0.0)
        stall = np.where(gain > 1e-14 * (1.0 + np.abs(f0)), 0, stall + 1)
        prev_S = new_X - X
        prev_Y = Gt_new - Gt
        X, f0, resid0, Gt = new_X, f_new, resid_new, Gt_new
    return _feasibility_polish(arm, constraint, X, iters=3)


def _tangent_bases(constraint, arm, X: np.ndarray) -> np.ndarray:
    """Orthonormal bases of the constraint tangent space, shape (B, d-k, d)."""
    J = constraint.jac_batch(arm, X)
    _, _, Vt = np.linalg.svd(J)
    return Vt[:, J.shape[1]:, :]


def _coverage_probes(arm, q_s, opts: MultistartOptions,
                     rng: np.random.Generator) -> np.ndarray:
    """Deterministic-resolution seeds along the planar point-constraint manifold.

    The feasible set of a planar end-effector position constraint is swept by
    the total link angle and split by the elbow sign, so seeds stratified in
    (total angle, elbow sign) project onto every basin wider than the
    stratification step. Purely numerical: the seeds are raw configurations
    later driven to feasibility by Gauss-Newton.
    """
    n = opts.coverage_probes
    if n < 2:
        return np.empty((0, 3))
    qs = wrap_angle(np.asarray(q_s, dtype=float))
    wrist_lim = arm.joint_limits[2]
    w_lo = max(wrist_lim[0], -np.pi) if np.isfinite(wrist_lim[0]) else -np.pi
    w_hi = min(wrist_lim[1], np.pi) if np.isfinite(wrist_lim[1]) else np.pi
    phis = qs.sum() + 2.0 * np.pi * (np.arange(n) + rng.uniform(0, 1, n)) / n
    seeds = []
    for sign in (1.0, -1.0):
        elbow = sign * rng.uniform(0.2, 2.9, n)
        wrist = rng.uniform(w_lo, w_hi, n)
        shoulder = wrap_angle(phis - elbow - wrist)
        seeds.append(np.column_stack([shoulder, elbow, wrist]))
    return np.vstack(seeds)


def _hop_refine(arm, constraint, M, q_s, X: np.ndarray, opts) -> np.ndarray:
    """Basin-hop round: probe along constraint tangents and re-polish.

    The displacement convention makes the cost discontinuous where a wrapped
    joint crosses the antipode of its start value; the ridges bound narrow
    basins plain descent cannot enter. Probing a few tangent offsets from
    each candidate and re-polishing reaches ridge-adjacent basins, including
    minima attained exactly at a wrap boundary.
    """
    T = _tangent_bases(constraint, arm, X)
    probes = [X]
    for delta in (0.05, 0.2, 0.6):
        for sign in (1.0, -1.0):
            for v in range(T.shape[1]):
                probes.append(X + sign * delta * T[:, v, :])
    P = np.vstack(probes)
    return _tangent_polish(arm, constraint, M, q_s, P, opts.polish_iters, opts.gtol)


def _restart_starts(arm, q_s, opts: MultistartOptions,
                    stratify_total_angle: bool = False) -> np.ndarray:
    """Start plus random perturbations, sampled in canonical coordinates.

    For planar point constraints the feasible set is swept by the total link
    angle, so the unbounded shoulder of each perturbation is adjusted to
    stratify q1+q2+q3 across restarts; this spreads the restarts' landing
    points over the whole manifold instead of leaving coverage to chance.
    """
    rng = np.random.default_rng(opts.seed)
    limits = np.array(arm.joint_limits, dtype=float)
    qs = wrap_angle(np.asarray(q_s, dtype=float))
    lo = np.where(np.isfinite(limits[:, 0]), np.maximum(limits[:, 0], -np.pi), -np.pi)
    hi = np.where(np.isfinite(limits[:, 1]), np.minimum(limits[:, 1], np.pi), np.pi)
    if opts.perturb_halfwidth < np.pi:
        lo = np.maximum(lo, qs - opts.perturb_halfwidth)
        hi = np.minimum(hi, qs + opts.perturb_halfwidth)
    X0 = rng.uniform(lo, hi, size=(opts.restarts, arm.dof))
    if stratify_total_angle and opts.restarts > 2:
        R = opts.restarts - 1
        phis = qs.sum() + 2.0 * np.pi * (np.arange(R) + rng.uniform(0, 1, R)) / R
        X0[1:, 0] = wrap_angle(phis - X0[1:, 1] - X0[1:, 2])
    X0[0] = qs
    return X0


def project_multistart(
    arm: Arm,
    q_s,
    target,
    M,
    opts: MultistartOptions | None = None,
) -> ProjectionResult:
    """Penalty-method projection with random restarts.

    ``target`` may be a :class:`TaskTarget` or a constraint object. The best
    feasible restart (residual within tolerance) wins; ties break toward
    lower cost, then lexicographically smaller configuration.
    """
    opts = opts or MultistartOptions()
    M = require_valid_metric(M)
    q_s = as_vector(q_s, size=arm.dof, name="start configuration")
    if isinstance(target, TaskTarget):
        require_reachable(arm, target)
        constraint = constraint_for(arm, target)
        reachable = True
    else:
        constraint = target
        reachable = None

    # Staggered homotopy entry: later restarts skip the shallow penalty
    # stages, dropping steeply onto the constraint surface near their own
    # perturbation instead of funneling into the first stage's basin.
    stratify = isinstance(arm, PlanarArm) and isinstance(constraint, PointConstraint)
    X = _restart_starts(arm, q_s, opts, stratify_total_angle=stratify)
    n_stages = len(opts.mu_schedule)
    entry = np.arange(opts.restarts) % n_stages
    for stage, mu in enumerate(opts.mu_schedule):
        active = entry <= stage
        gtol = max(opts.gtol, 1e-6 * math.sqrt(mu))
        X[active] = _bb_descent(
            _penalty_fun(arm, constraint, M, q_s, mu), X[active], opts.stage_iters, gtol
        )
    X = _tangent_polish(arm, constraint, M, q_s, X, opts.polish_iters, opts.gtol)

    def evaluate(Xc):
        resid = np.linalg.norm(constraint.value_batch(arm, Xc), axis=1)
        disp = displacement_batch(arm, q_s, Xc)
        return mahalanobis_sq_batch(M, disp), resid

    if stratify and opts.coverage_probes >= 2:
        probe_rng = np.random.default_rng(opts.seed + 1)
        probes = _coverage_probes(arm, q_s, opts, probe_rng)
        probes = _tangent_polish(arm, constraint, M, q_s, probes,
                                 opts.polish_iters, opts.gtol)
        X = np.vstack([X, probes])

    costs, residuals = evaluate(X)
    feasible = residuals <= opts.feasibility_tol
    if not feasible.any():
        if reachable is False or (
            isinstance(constraint, PointConstraint)
            and np.linalg.norm(constraint.target - arm.base[: constraint.target.size])
            > arm.reach
        ):
            raise UnreachableTargetError("target beyond total reach")
        raise InfeasibleProjectionError(
            f"no restart reached feasibility (best residual {residuals.min():.3e})",
            best_residual=float(residuals.min()),
        )

    # Hop rounds explore ridge-adjacent basins from the best candidates.
    pool_X, pool_costs = X[feasible], costs[feasible]
    for _ in range(opts.hop_rounds):
        order = np.argsort(pool_costs)[: min(8, pool_costs.size)]
        hopped = _hop_refine(arm, constraint, M, q_s, pool_X[order], opts)
        h_costs, h_resid = evaluate(hopped)
        keep = h_resid <= opts.feasibility_tol
        if not keep.any():
            break
        improved = h_costs[keep].min() < pool_costs.min() - 1e-12
        pool_X = np.vstack([pool_X, hopped[keep]])
        pool_costs = np.concatenate([pool_costs, h_costs[keep]])
        if not improved:
            break

    disp_pool = displacement_batch(arm, q_s, pool_X)
    order = np.lexsort(
        tuple(disp_pool[:, i] for i in reversed(range(arm.dof))) + (pool_costs,)
    )
    best = int(order[0])
    delta = disp_pool[best]
    q_star = np.asarray(q_s, dtype=float) + delta
    cost = mahalanobis_sq(M, q_s, q_star)
    agree = 0
    for i in np.flatnonzero(feasible[: opts.restarts]):
        if config_distance(arm, X[i], pool_X[best]) <= opts.agree_tol:
            agree += 1
    residual = float(np.linalg.norm(constraint.value_batch(arm, q_star[None, :])[0]))
    return ProjectionResult(
        q_star=q_star,
        cost=cost,
        residual=residual,
        solver="multistart",
        restarts_agreeing=agree,
    )


# ---------------------------------------------------------------------------
# Basin-of-attraction maps.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BasinMap:
    starts: np.ndarray
    solutions: np.ndarray
    costs: np.ndarray
    labels: np.ndarray
    cluster_sizes: tuple[int, ...]
    largest_fraction: float
    largest_members: np.ndarray
    representative: np.ndarray


def basin_map(
    arm: PlanarArm,
    target: TaskTarget,
    M,
    start_grid,
    n: int = 3600,
    cluster_tol: float = 1e-4,
) -> BasinMap:
    """Project every grid start and cluster starts sharing a solution.

    Clustering is single-linkage on C-space distance between solutions with
    the given tolerance; the report carries the fraction of grid mass in the
    largest cluster.
    """
    starts = np.asarray(start_grid, dtype=float)
    K = starts.shape[0]
    solutions = np.empty_like(starts)
    costs = np.empty(K)
    for i in range(K):
        res = project_sweep(arm, starts[i], target, M, n=n)
        solutions[i] = wrap_angle(res.q_star)
        costs[i] = res.cost

    parent = list(range(K))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    diffs = wrap_angle(solutions[:, None, :] - solutions[None, :, :])
    dist = np.linalg.norm(diffs, axis=2)
    for i, j in zip(*np.nonzero(dist <= cluster_tol)):
        if i < j:
            ri, rj = find(int(i)), find(int(j))
            if ri != rj:
                parent[rj] = ri

    roots = np.array([find(i) for i in range(K)])
    labels = np.unique(roots, return_inverse=True)[1]
    sizes = np.bincount(labels)
    largest_label = int(np.argmax(sizes))
    members = np.flatnonzero(labels == largest_label)
    return BasinMap(
        starts=starts,
        solutions=solutions,
        costs=costs,
        labels=labels,
        cluster_sizes=tuple(sorted(sizes.tolist(), reverse=True)),
        largest_fraction=float(sizes[largest_label] / K),
        largest_members=members,
        representative=solutions[members].mean(axis=0),
    )


# ---------------------------------------------------------------------------
# Sagittal mirror experiment (7DOF).
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MirrorReport:
    result_start: ProjectionResult
    result_mirrored: ProjectionResult
    mirror_gap: float
    non_robust: bool
    threshold: float = 0.1


def mirror_signs(arm: ChainArm) -> np.ndarray:
    """Per-joint angle signs of the sagittal mirror (reflection across y=0).

    Joints rotating about +-y keep their angle; joints whose axis lies in the
    xz-plane flip sign. Any other axis, or an offset leaving the plane, makes
    the per-joint mirror ill-defined.
    """
    signs = np.empty(7)
    for i, joint in enumerate(arm.joints):
        ay = abs(joint.axis[1])
        if abs(joint.offset[1]) > 1e-12:
            raise MirrorMapError(f"joint {joint.name!r}: offset leaves the sagittal plane")
        if ay > 1.0 - 1e-9:
            signs[i] = 1.0
        elif ay < 1e-9:
            signs[i] = -1.0
        else:
            raise MirrorMapError(f"joint {joint.name!r}: axis {joint.axis} not mirrorable")
    if abs(arm.base_position[1]) > 1e-12:
        raise MirrorMapError("base position leaves the sagittal plane")
    return signs


def mirror_config(arm: ChainArm, q) -> np.ndarray:
    return mirror_signs(arm) * as_vector(q, size=7, name="configuration")


def mirror_experiment(
    arm: ChainArm,
    M,
    q_s,
    elbow_index: int | None = None,
    elbow_value: float = np.pi / 2.0,
    opts: MultistartOptions | None = None,
) -> MirrorReport:
    """Solve the elbow-at-90-degrees task from a start and its mirror image.

    A mirror-invariant cost (Euclidean or any diagonal metric) produces
    mirror-consistent solutions; a metric coupling joints of opposite mirror
    parity does not, which flags the metric as start-sensitive.
    """
    signs = mirror_signs(arm)
    if elbow_index is None:
        names = [j.name for j in arm.joints]
        elbow_index = names.index("elbow") if "elbow" in names else 3
    if signs[elbow_index] != 1.0:
        raise MirrorMapError("elbow joint must keep its angle under the mirror map")
    constraint = JointValueConstraint(elbow_index, elbow_value)
    q_s = as_vector(q_s, size=7, name="start configuration")
    r1 = project_multistart(arm, q_s, constraint, M, opts)
    r2 = project_multistart(arm, signs * q_s, constraint, M, opts)
    gap = config_distance(arm, signs * r1.q_star, r2.q_star)
    return MirrorReport(
        result_start=r1,
        result_mirrored=r2,
        mirror_gap=gap,
        non_robust=gap > 0.1,
    )


# ---------------------------------------------------------------------------
# Estimator-style wrapper.
# ---------------------------------------------------------------------------

class ManifoldProjector(BaseEstimator, TransformerMixin):
    """Transformer mapping start configurations to their constrained projections.

    Parameters
    ----------
    arm : PlanarArm or ChainArm
        Arm model defining kinematics and joint limits.
    target : TaskTarget
        Constraint the projected configurations must satisfy.
    metric : array-like of shape (dof, dof), optional
        SPD cost matrix; identity (Euclidean) when omitted.
    solver : {'sweep', 'multistart'}
        'sweep' is exact but planar-only; 'multistart' works for both arms.
    n : int
        Manifold sweep resolution for the planar solver.
    options : MultistartOptions, optional
        Multistart solver settings.
    """

    def __init__(self, arm=None, target=None, metric=None, solver="sweep",
                 n=3600, options=None):
        self.arm = arm
        self.target = target
        self.metric = metric
        self.solver = solver
        self.n = n
        self.options = options

    def fit(self, X=None, y=None):
        if self.arm is None or self.target is None:
            raise ValueError("arm and target are required")
        if self.solver not in ("sweep", "multistart"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.solver == "sweep" and not isinstance(self.arm, PlanarArm):
            raise ValueError("the sweep solver requires a planar arm")
        metric = np.eye(self.arm.dof) if self.metric is None else np.asarray(self.metric)
        self.metric_ = require_valid_metric(metric)
        if isinstance(self.target, TaskTarget):
            require_reachable(self.arm, self.target)
        self.n_features_in_ = self.arm.dof
        return self

    def project(self, q_s) -> ProjectionResult:
        self._check_fitted()
        if self.solver == "sweep":
            return project_sweep(self.arm, q_s, self.target, self.metric_, n=self.n)
        return project_multistart(self.arm, q_s, self.target, self.metric_, self.options)

    def transform(self, X) -> np.ndarray:
        self._check_fitted()
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected shape (n, {self.n_features_in_}), got {X.shape}")
        return np.vstack([self.project(row).q_star for row in X])

    def _check_fitted(self):
        if not hasattr(self, "metric_"):
            raise NotFittedError("call fit() before projecting")
