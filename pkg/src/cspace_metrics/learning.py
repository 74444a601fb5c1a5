"""Preference-based metric learning.

Aggregated multiple-choice answers define an empirical distribution per
query; a metric induces a softmax distribution over the same choices via
negative squared distances from the start. Learning minimizes the summed
KL divergence between the two, over symmetric positive-definite matrices of
unit Frobenius norm, by projected gradient descent with backtracking.

The unconstrained objective is convex in the matrix entries: each query term
is an affine function of M plus a log-sum-exp of affine functions of M.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .metrics import (
    frobenius_normalize,
    mahalanobis_sq,
    require_valid_metric,
)
from .queries import Query
from .validation import as_square_matrix, check_probability_vector


class Criterion(enum.Enum):
    NATURALNESS = "naturalness"
    VISUAL_SIMILARITY = "visual_similarity"
    CLOSENESS = "closeness"
    PREDICTABILITY = "predictability"


CRITERIA = tuple(Criterion)


@dataclass(frozen=True)
class AnswerDistribution:
    """Empirical choice distribution for one query under one criterion.

    ``probs`` are in canonical candidate order (increasing wrist value).
    """

    query_id: str
    criterion: Criterion
    probs: np.ndarray
    n_responses: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "probs", check_probability_vector(self.probs))

    def to_dict(self) -> dict:
        data = {
            "kind": "distribution",
            "query_id": self.query_id,
            "criterion": self.criterion.value,
            "probs": [float(p) for p in self.probs],
        }
        if self.n_responses is not None:
            data["n_responses"] = self.n_responses
        return data

    @staticmethod
    def from_dict(data: dict) -> "AnswerDistribution":
        return AnswerDistribution(
            query_id=data["query_id"],
            criterion=Criterion(data["criterion"]),
            probs=np.asarray(data["probs"], dtype=float),
            n_responses=data.get("n_responses"),
        )


@dataclass(frozen=True)
class PreferenceDataset:
    """Aligned (query, answer distribution) pairs sharing one arm dimension."""

    pairs: tuple[tuple[Query, AnswerDistribution], ...]

    def __post_init__(self):
        seen = set()
        for query, dist in self.pairs:
            if query.id != dist.query_id:
                raise ValueError(f"query {query.id!r} paired with {dist.query_id!r}")
            if dist.probs.shape[0] != query.m:
                raise ValueError(f"query {query.id!r}: {query.m} candidates, "
                                 f"{dist.probs.shape[0]} probabilities")
            key = (query.id, dist.criterion)
            if key in seen:
                raise ValueError(f"duplicate pair {key}")
            seen.add(key)
        dims = {q.start.shape[0] for q, _ in self.pairs}
        if len(dims) > 1:
            raise ValueError(f"mixed configuration dimensions {dims}")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def dim(self) -> int:
        if not self.pairs:
            raise ValueError("empty dataset has no dimension")
        return self.pairs[0][0].start.shape[0]


class _Features:
    """Precomputed per-query difference outer products, flattened for speed."""

    def __init__(self, dataset: PreferenceDataset):
        if not len(dataset):
            raise ValueError("dataset is empty")
        d = dataset.dim
        counts = {q.m for q, _ in dataset.pairs}
        if len(counts) > 1:
            raise ValueError(f"queries must share one answer count, got {sorted(counts)}")
        diffs = np.stack([q.start[None, :] - q.candidates for q, _ in dataset.pairs])
        self.n, self.m, self.d = diffs.shape
        outer = diffs[:, :, :, None] * diffs[:, :, None, :]
        self.outer_flat = outer.reshape(self.n * self.m, d * d)
        self.diag_flat = (diffs * diffs).reshape(self.n * self.m, d)
        self.f = np.stack([dist.probs for _, dist in dataset.pairs])
        with np.errstate(divide="ignore"):
            logf = np.where(self.f > 0.0, np.log(np.where(self.f > 0.0, self.f, 1.0)), 0.0)
        self.neg_entropy = float((self.f * logf).sum())

    def distances_sq(self, M: np.ndarray) -> np.ndarray:
        return (self.outer_flat @ M.ravel()).reshape(self.n, self.m)


def _softmax_rows(neg_d2: np.ndarray) -> np.ndarray:
    shifted = neg_d2 - neg_d2.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_dist(M, query: Query) -> np.ndarray:
    """Choice distribution induced by a metric: softmax of -d^2 per candidate."""
    M = as_square_matrix(M, name="metric")
    d2 = np.array([mahalanobis_sq(M, query.start, c) for c in query.candidates])
    return _softmax_rows(-d2[None, :])[0]


def _objective_from_features(feat: _Features, M: np.ndarray) -> float:
    d2 = feat.distances_sq(M)
    lse = _logsumexp_rows(-d2)
    return float(feat.neg_entropy + (feat.f * d2).sum() + lse.sum())


def _logsumexp_rows(A: np.ndarray) -> np.ndarray:
    mx = A.max(axis=1)
    return mx + np.log(np.exp(A - mx[:, None]).sum(axis=1))


def kl_objective(M, dataset: PreferenceDataset) -> float:
    """Summed KL divergence between answers and the metric's softmax.

    Uses the direct sum f log(f / sigma) with the 0 log 0 = 0 convention.
    """
    M = as_square_matrix(M, name="metric")
    feat = _Features(dataset)
    d2 = feat.distances_sq(M)
    sigma = _softmax_rows(-d2)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(feat.f > 0.0, feat.f * np.log(feat.f / sigma), 0.0)
    return float(terms.sum())


def kl_objective_lse(M, dataset: PreferenceDataset) -> float:
    """The same objective via the log-sum-exp expansion (cross-check route)."""
    M = as_square_matrix(M, name="metric")
    return _objective_from_features(_Features(dataset), M)


def objective_gradient(M, dataset: PreferenceDataset, parameterization: str = "full"):
    """Analytic gradient: sum over queries of (f_j - sigma_j) outer products.

    Returns a symmetric matrix for the full parameterization or the diagonal
    vector when ``parameterization='diagonal'``.
    """
    M = as_square_matrix(M, name="metric")
    feat = _Features(dataset)
    return _gradient_from_features(feat, M, parameterization)


def _gradient_from_features(feat: _Features, M: np.ndarray, parameterization: str):
    d2 = feat.distances_sq(M)
    sigma = _softmax_rows(-d2)
    w = (feat.f - sigma).reshape(-1)
    if parameterization == "diagonal":
        return w @ feat.diag_flat
    if parameterization != "full":
        raise ValueError(f"unknown parameterization {parameterization!r}")
    G = (w @ feat.outer_flat).reshape(feat.d, feat.d)
    return 0.5 * (G + G.T)


def project_spd_unit(M, eigen_floor: float = 1e-6) -> np.ndarray:
    """Symmetrize, clamp eigenvalues to the floor, and Frobenius-normalize."""
    M = as_square_matrix(M, name="metric")
    sym = 0.5 * (M + M.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    clamped = np.maximum(eigvals, eigen_floor)
    rebuilt = (eigvecs * clamped) @ eigvecs.T
    return frobenius_normalize(0.5 * (rebuilt + rebuilt.T))


@dataclass(frozen=True)
class LearnOptions:
    parameterization: str = "full"      # 'full' | 'diagonal'
    max_iters: int = 20000
    tol: float = 1e-10
    eigen_floor: float = 1e-6
    restarts: int = 8
    step0: float = 1.0
    seed: int = 0
    track_metrics: bool = False

    def __post_init__(self):
        if self.eigen_floor <= 0:
            raise ValueError("eigen_floor must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass(frozen=True)
class LearnResult:
    metric: np.ndarray
    objective: float
    n_iter: int
    trace: np.ndarray                       # objective value per iteration
    restart_index: int
    metric_trace: tuple | None = None


def _pgd(feat: _Features, M0: np.ndarray, opts: LearnOptions):
    """Projected gradient descent with backtracking on the projected step."""
    project = lambda A: project_spd_unit(A, opts.eigen_floor)
    M = project(M0)
    f = _objective_from_features(feat, M)
    trace = [f]
    metric_trace = [M] if opts.track_metrics else None
    step = opts.step0
    diagonal = opts.parameterization == "diagonal"
    for it in range(opts.max_iters):
        G = _gradient_from_features(feat, M, opts.parameterization)
        G_mat = np.diag(G) if diagonal else G
        accepted = False
        for _ in range(60):
            cand = project(M - step * G_mat)
            f_cand = _objective_from_features(feat, cand)
            move = float(np.linalg.norm(cand - M) ** 2)
            if f_cand <= f - 1e-4 / max(step, 1e-16) * move:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        improvement = f - f_cand
        M, f = cand, f_cand
        trace.append(f)
        if metric_trace is not None:
            metric_trace.append(M)
        step = min(step * 1.5, 1e6)
        if improvement < opts.tol:
            break
    return M, f, np.asarray(trace), (tuple(metric_trace) if metric_trace else None)


def _random_spd_seed(d: int, rng: np.random.Generator) -> np.ndarray:
    A = rng.normal(size=(d, d))
    return A @ A.T / d + 0.1 * np.eye(d)


def learn(dataset: PreferenceDataset, opts: LearnOptions | None = None) -> LearnResult:
    """Fit a unit-Frobenius SPD metric to a preference dataset.

    The unit-norm sphere makes the feasible set non-convex, so the best of
    ``opts.restarts`` initializations (identity plus random SPD seeds) is
    returned. Deterministic given the options.
    """
    opts = opts or LearnOptions()
    if not len(dataset):
        raise ValueError("cannot learn from an empty dataset")
    feat = _Features(dataset)
    d = feat.d
    rng = np.random.default_rng(opts.seed)
    seeds = [np.eye(d)]
    for _ in range(max(opts.restarts - 1, 0)):
        seed_mat = _random_spd_seed(d, rng)
        seeds.append(np.diag(np.diag(seed_mat)) if opts.parameterization == "diagonal"
                     else seed_mat)
    best = None
    for index, M0 in enumerate(seeds):
        M, f, trace, mtrace = _pgd(feat, M0, opts)
        if best is None or f < best.objective:
            best = LearnResult(
                metric=M,
                objective=f,
                n_iter=len(trace) - 1,
                trace=trace,
                restart_index=index,
                metric_trace=mtrace,
            )
    return best


def per_query_kl(M, dataset: PreferenceDataset) -> dict[str, float]:
    """KL(f || sigma(M)) per query id."""
    M = as_square_matrix(M, name="metric")
    out = {}
    for query, dist in dataset.pairs:
        sigma = softmax_dist(M, query)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(dist.probs > 0.0, dist.probs * np.log(dist.probs / sigma), 0.0)
        out[query.id] = float(terms.sum())
    return out


# ---------------------------------------------------------------------------
# Synthetic preference oracle and aggregation.
# ---------------------------------------------------------------------------

def synth_answers(
    M_true,
    queries,
    criterion: Criterion = Criterion.NATURALNESS,
    mode: str = "exact",
    k: int | None = None,
    seed: int = 0,
) -> PreferenceDataset:
    """Synthetic answer distributions drawn from a ground-truth metric.

    ``exact`` sets f = sigma(M_true); ``sampled`` draws ``k`` simulated
    respondents per query and normalizes the counts.
    """
    M_true = require_valid_metric(M_true, name="ground-truth metric")
    if mode not in ("exact", "sampled"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "sampled" and (k is None or k < 1):
        raise ValueError("sampled mode needs k >= 1 respondents")
    rng = np.random.default_rng(seed)
    pairs = []
    for query in queries:
        sigma = softmax_dist(M_true, query)
        if mode == "exact":
            probs = sigma
            n_resp = None
        else:
            counts = rng.multinomial(k, sigma)
            probs = counts / k
            n_resp = k
        pairs.append(
            (query, AnswerDistribution(query.id, criterion, probs, n_responses=n_resp))
        )
    return PreferenceDataset(pairs=tuple(pairs))


def sample_choices(M_true, queries, k: int, seed: int = 0, criteria=CRITERIA):
    """Simulated respondent sessions: per query, one choice per criterion.

    Returns a list of ``k`` sessions mapping query id to a dict of canonical
    choice indices, suitable for feeding through the answers endpoint.
    """
    M_true = require_valid_metric(M_true, name="ground-truth metric")
    rng = np.random.default_rng(seed)
    sigmas = {q.id: softmax_dist(M_true, q) for q in queries}
    sessions = []
    for _ in range(k):
        session = {}
        for q in queries:
            session[q.id] = {
                c: int(rng.choice(q.m, p=sigmas[q.id])) for c in criteria
            }
        sessions.append(session)
    return sessions


def aggregate(responses, queries) -> list[AnswerDistribution]:
    """Aggregate raw responses into per-(query, criterion) distributions.

    ``responses`` yields ``(query_id, criterion, presented_choice_index)``
    tuples with choices in presentation order; the recorded permutation maps
    them back to canonical candidate order. Zero-count choices keep
    probability zero.
    """
    by_id = {q.id: q for q in queries}
    counts: dict[tuple[str, Criterion], np.ndarray] = {}
    for query_id, criterion, choice in responses:
        if query_id not in by_id:
            raise KeyError(f"unknown query id {query_id!r}")
        query = by_id[query_id]
        if not 0 <= choice < query.m:
            raise ValueError(f"choice index {choice} out of range for m={query.m}")
        criterion = Criterion(criterion) if not isinstance(criterion, Criterion) else criterion
        key = (query_id, criterion)
        if key not in counts:
            counts[key] = np.zeros(query.m)
        counts[key][query.canonical_choice(choice)] += 1.0
    out = []
    for (query_id, criterion), c in sorted(
        counts.items(), key=lambda kv: (kv[0][0], kv[0][1].value)
    ):
        out.append(
            AnswerDistribution(
                query_id=query_id,
                criterion=criterion,
                probs=c / c.sum(),
                n_responses=int(c.sum()),
            )
        )
    return out


# ---------------------------------------------------------------------------
# JSON Lines persistence (one response or one distribution per line).
# ---------------------------------------------------------------------------

def save_dataset(path, distributions) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for dist in distributions:
            fh.write(json.dumps(dist.to_dict(), sort_keys=True) + "\n")


def save_responses(path, responses) -> None:
    """Write raw response lines: (session_id, query_id, criterion, choice)."""
    with open(path, "w", encoding="utf-8") as fh:
        for session_id, query_id, criterion, choice in responses:
            record = {
                "kind": "response",
                "session_id": session_id,
                "query_id": query_id,
                "criterion": criterion.value if isinstance(criterion, Criterion) else criterion,
                "choice_index": int(choice),
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_dataset(
    path,
    battery,
    criterion: Criterion | None = None,
    task_type=None,
) -> PreferenceDataset:
    """Load a JSONL dataset against its battery, aggregating response lines.

    Distribution lines are used as-is; response lines are tallied with
    :func:`aggregate`. Optional criterion and task-type filters select the
    learning split.
    """
    distributions: list[AnswerDistribution] = []
    responses = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if record.get("kind") == "response":
                responses.append(
                    (record["query_id"], record["criterion"], record["choice_index"])
                )
            else:
                distributions.append(AnswerDistribution.from_dict(record))
    if responses:
        distributions.extend(aggregate(responses, battery.queries))
    pairs = []
    for dist in distributions:
        query = battery.by_id(dist.query_id)
        if criterion is not None and dist.criterion is not criterion:
            continue
        if task_type is not None and query.task_type is not task_type:
            continue
        pairs.append((query, dist))
    return PreferenceDataset(pairs=tuple(pairs))


def learn_report(dataset: PreferenceDataset, result: LearnResult) -> dict:
    """JSON-friendly learning report with the Euclidean baseline comparison."""
    d = dataset.dim
    euclidean = frobenius_normalize(np.eye(d))
    return {
        "d": d,
        "n_queries": len(dataset),
        "objective": result.objective,
        "iterations": result.n_iter,
        "restart_index": result.restart_index,
        "metric": [[float(v) for v in row] for row in result.metric],
        "euclidean_kl": kl_objective(euclidean, dataset),
        "learned_kl": kl_objective(result.metric, dataset),
        "per_query_kl": per_query_kl(result.metric, dataset),
    }


class MetricLearner(BaseEstimator):
    """Estimator-style interface to preference-based metric learning.

    Parameters
    ----------
    parameterization : {'full', 'diagonal'}
        Learn a dense SPD matrix or only its diagonal.
    max_iters : int
        Iteration cap for each projected-gradient run.
    tol : float
        Stop when the per-iteration objective improvement drops below this.
    eigen_floor : float
        Eigenvalue clamp used by the SPD projection.
    restarts : int
        Number of initializations (identity plus random SPD seeds).
    seed : int
        Seed for the restart initializations.

    Attributes
    ----------
    metric_ : ndarray of shape (d, d)
        Learned unit-Frobenius SPD metric.
    objective_ : float
        Final KL objective value.
    n_iter_ : int
        Iterations used by the winning restart.
    """

    def __init__(self, parameterization="full", max_iters=20000, tol=1e-10,
                 eigen_floor=1e-6, restarts=8, step0=1.0, seed=0):
        self.parameterization = parameterization
        self.max_iters = max_iters
        self.tol = tol
        self.eigen_floor = eigen_floor
        self.restarts = restarts
        self.step0 = step0
        self.seed = seed

    def _options(self) -> LearnOptions:
        return LearnOptions(
            parameterization=self.parameterization,
            max_iters=self.max_iters,
            tol=self.tol,
            eigen_floor=self.eigen_floor,
            restarts=self.restarts,
            step0=self.step0,
            seed=self.seed,
        )

    def fit(self, dataset: PreferenceDataset, y=None):
        result = learn(dataset, self._options())
        self.metric_ = result.metric
        self.objective_ = result.objective
        self.n_iter_ = result.n_iter
        self.trace_ = result.trace
        self.restart_index_ = result.restart_index
        return self

    def predict_proba(self, queries) -> np.ndarray:
        self._check_fitted()
        return np.vstack([softmax_dist(self.metric_, q) for q in queries])

    def score(self, dataset: PreferenceDataset, y=None) -> float:
        """Negative KL objective (higher is better)."""
        self._check_fitted()
        return -kl_objective(self.metric_, dataset)

    def _check_fitted(self):
        if not hasattr(self, "metric_"):
            raise NotFittedError("call fit() first")
