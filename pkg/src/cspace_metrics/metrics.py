"""Configuration-space metrics: symmetric positive-definite weight matrices.

A metric is a plain ``numpy`` d-by-d array. Squared distances are the
quadratic form ``(a - b)^T M (a - b)``. Diagonal entries price individual
joint displacements; off-diagonals couple pairs of joints (a positive entry
makes opposite-direction motion of the pair cheaper).
"""
from __future__ import annotations

import json

import numpy as np

from .validation import as_square_matrix, as_vector

SYMMETRY_TOL = 1e-12
# Relative eigenvalue floor for positive definiteness; robust for d <= 7.
EIGEN_RTOL = 1e-9


class IndefiniteMetricError(ValueError):
    """Raised when a constructed metric fails positive definiteness."""


def validate_metric(M) -> list[str]:
    """Return a list of violations (empty means the metric is valid)."""
    M = as_square_matrix(M, name="metric")
    violations = []
    if not np.all(np.isfinite(M)):
        violations.append("non-finite entries")
        return violations
    asym = np.max(np.abs(M - M.T))
    if asym > SYMMETRY_TOL:
        violations.append(f"asymmetric: max |M_ij - M_ji| = {asym:.3e}")
        return violations
    eigvals = np.linalg.eigvalsh(M)
    floor = EIGEN_RTOL * max(eigvals[-1], 0.0)
    if eigvals[0] <= floor:
        violations.append(f"not positive definite: min eigenvalue {eigvals[0]:.6g}")
    return violations


def is_valid_metric(M) -> bool:
    return not validate_metric(M)


def require_valid_metric(M, name: str = "metric") -> np.ndarray:
    M = as_square_matrix(M, name=name)
    violations = validate_metric(M)
    if violations:
        raise IndefiniteMetricError(f"{name} invalid: {'; '.join(violations)}")
    return M


def mahalanobis_sq(M, a, b) -> float:
    """Squared metric distance (a - b)^T M (a - b)."""
    M = as_square_matrix(M, name="metric")
    a = as_vector(a, size=M.shape[0], name="a")
    b = as_vector(b, size=M.shape[0], name="b")
    diff = a - b
    return float(diff @ M @ diff)


def mahalanobis_sq_batch(M, diffs: np.ndarray) -> np.ndarray:
    """Quadratic form for a batch of difference vectors, shape (..., d)."""
    return np.einsum("...i,ij,...j->...", diffs, M, diffs)


def make_weighted(weights) -> np.ndarray:
    """Diagonal metric from strictly positive per-joint weights."""
    weights = as_vector(weights, name="weights")
    if np.any(weights <= 0):
        raise ValueError("all weights must be strictly positive")
    return np.diag(weights)


CHEAP_WEIGHT = 0.01
EXPENSIVE_WEIGHT = 100.0


def cheap_joint(d: int, index: int) -> np.ndarray:
    """Preset: joint ``index`` costs 0.01, all others 1."""
    weights = np.ones(d)
    weights[index] = CHEAP_WEIGHT
    return np.diag(weights)


def expensive_joint(d: int, index: int) -> np.ndarray:
    """Preset: joint ``index`` costs 100, all others 1."""
    weights = np.ones(d)
    weights[index] = EXPENSIVE_WEIGHT
    return np.diag(weights)


def make_correlated(base, pairs) -> np.ndarray:
    """Set normalized couplings on a base metric.

    Each pair is ``(i, j, rho)`` with 0-based joint indices and
    ``M_ij = rho * sqrt(M_ii * M_jj)``, ``|rho| < 1``. The composed matrix is
    validated; an indefinite result raises rather than being repaired.
    """
    M = as_square_matrix(base, name="base metric").copy()
    for i, j, rho in pairs:
        if i == j:
            raise ValueError(f"correlation pair ({i}, {j}) must couple distinct joints")
        if abs(rho) >= 1.0:
            raise ValueError(f"|rho| must be < 1, got {rho}")
        coupling = rho * np.sqrt(M[i, i] * M[j, j])
        M[i, j] = coupling
        M[j, i] = coupling
    violations = validate_metric(M)
    if violations:
        raise IndefiniteMetricError(
            f"correlated metric invalid: {'; '.join(violations)}"
        )
    return M


def frobenius_normalize(M) -> np.ndarray:
    """Scale to unit Frobenius norm (softmax fits fix scale this way)."""
    M = as_square_matrix(M, name="metric")
    norm = np.linalg.norm(M)
    if norm == 0.0:
        raise ValueError("cannot normalize the zero matrix")
    return M / norm


def euclidean_metric(d: int) -> np.ndarray:
    return np.eye(d)


# ---------------------------------------------------------------------------
# Serialization: plain text (d, then d*d row-major values) and JSON wire form.
# ---------------------------------------------------------------------------

def dumps_metric(M) -> str:
    M = as_square_matrix(M, name="metric")
    lines = [str(M.shape[0])]
    for row in M:
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def loads_metric(text: str) -> np.ndarray:
    tokens = text.split()
    d = int(tokens[0])
    values = [float(t) for t in tokens[1:]]
    if len(values) != d * d:
        raise ValueError(f"expected {d * d} values for a {d}x{d} metric, got {len(values)}")
    return np.asarray(values).reshape(d, d)


def save_metric(M, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_metric(M))


def load_metric(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_metric(fh.read())


def metric_to_json(M) -> dict:
    M = as_square_matrix(M, name="metric")
    return {"d": M.shape[0], "values": [float(v) for v in M.ravel()]}


def metric_from_json(data: dict) -> np.ndarray:
    d = int(data["d"])
    return np.asarray(data["values"], dtype=float).reshape(d, d)


def parse_metric_spec(spec: str, d: int, joint_names=None) -> np.ndarray:
    """Parse a CLI metric spec.

    Accepts ``euclidean``, ``cheap:<joint>``, ``expensive:<joint>``,
    ``corr:<i>,<j>,<rho>`` (joint names or 0-based indices), or a file path
    in the plain-text matrix format.
    """
    def joint_index(token: str) -> int:
        token = token.strip()
        if joint_names and token in joint_names:
            return joint_names.index(token)
        try:
            idx = int(token)
        except ValueError:
            raise ValueError(f"unknown joint {token!r}; names: {joint_names}") from None
        if not 0 <= idx < d:
            raise ValueError(f"joint index {idx} out of range for {d} joints")
        return idx

    if spec == "euclidean":
        return euclidean_metric(d)
    if spec.startswith("cheap:"):
        return cheap_joint(d, joint_index(spec[len("cheap:"):]))
    if spec.startswith("expensive:"):
        return expensive_joint(d, joint_index(spec[len("expensive:"):]))
    if spec.startswith("corr:"):
        parts = spec[len("corr:"):].split(",")
        if len(parts) != 3:
            raise ValueError("corr spec must be corr:<i>,<j>,<rho>")
        i, j = joint_index(parts[0]), joint_index(parts[1])
        return make_correlated(euclidean_metric(d), [(i, j, float(parts[2]))])
    try:
        return load_metric(spec)
    except OSError as exc:
        raise ValueError(f"metric spec {spec!r} is not a preset or readable file") from exc


def parse_metric_json(data) -> np.ndarray:
    """Metric from a JSON payload: wire dict or nested list."""
    if isinstance(data, dict):
        return metric_from_json(data)
    return as_square_matrix(np.asarray(data, dtype=float), name="metric")
