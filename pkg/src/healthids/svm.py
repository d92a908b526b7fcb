"""Soft-margin C-SVC trained by sequential minimal optimization.

The dual problem solved for labels ``y`` in {-1, +1} is::

    max_a  sum(a) - 1/2 a^T Q a     with Q_ij = y_i y_j K(x_i, x_j)
    s.t.   y^T a = 0,  0 <= a_i <= C

Each iteration picks the maximal violating index ``i`` and then the partner
``j`` that gives the largest decrease of the objective (second-order working
set selection), solves the two-variable sub-problem analytically and updates
the gradient with the two kernel rows involved. Kernel rows are kept in an LRU
cache with a byte budget.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

MODEL_FORMAT = "healthids-svm"
MODEL_VERSION = 1
_TAU = 1e-12


class ConvergenceWarning(UserWarning):
    pass


class SingleClassError(ValueError):
    pass


class ModelFileError(ValueError):
    """Model file is corrupt, has a bad checksum or an unsupported version."""


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("rbf", "linear"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "rbf" and not self.gamma > 0:
            raise ValueError(f"rbf gamma must be positive, got {self.gamma}")

    @classmethod
    def default_for(cls, dimension: int) -> "KernelSpec":
        return cls("rbf", 1.0 / dimension)


@dataclass(frozen=True)
class SvmParams:
    c: float = 1.0
    tolerance: float = 1e-4
    max_passes: int = 10
    seed: int = 0  # recorded in manifests; the solver itself is deterministic
    cache_bytes: int = 64 << 20

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"C must be positive, got {self.c}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_passes < 1:
            raise ValueError("max_passes must be >= 1")


def _check_pair(x: np.ndarray, y: np.ndarray):
    if x.shape != y.shape:
        raise ValueError(f"vector length mismatch: {x.shape} vs {y.shape}")


def kernel_eval(x, y, spec: KernelSpec) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_pair(x, y)
    if spec.kind == "linear":
        return float(x @ y)
    d = x - y
    return float(np.exp(-spec.gamma * (d @ d)))


def kernel_matrix(A: np.ndarray, B: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """K[a, b] for every row of ``A`` against every row of ``B``."""
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    dot = A @ B.T
    if spec.kind == "linear":
        return dot
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * dot
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-spec.gamma * sq)


class KernelRowCache:
    """LRU cache of kernel matrix rows for one training set."""

    def __init__(self, X: np.ndarray, spec: KernelSpec, max_bytes: int = 64 << 20):
        self.X = X
        self.spec = spec
        self.sq = (X * X).sum(axis=1)
        self.diag = np.ones(len(X)) if spec.kind == "rbf" else self.sq.copy()
        self.capacity = max(2, int(max_bytes) // max(1, 8 * len(X)))
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def row(self, i: int) -> np.ndarray:
        r = self._rows.get(i)
        if r is not None:
            self._rows.move_to_end(i)
            self.hits += 1
            return r
        self.misses += 1
        dot = self.X @ self.X[i]
        if self.spec.kind == "linear":
            r = dot
        else:
            sq = np.maximum(self.sq[i] + self.sq - 2.0 * dot, 0.0)
            r = np.exp(-self.spec.gamma * sq)
        r[i] = self.diag[i]
        self._rows[i] = r
        if len(self._rows) > self.capacity:
            self._rows.popitem(last=False)
        return r


@dataclass
class DualSolution:
    alpha: np.ndarray
    rho: float
    gradient: np.ndarray
    iterations: int
    converged: bool
    gap: float

    def objective(self) -> float:
        return dual_objective_from_gradient(self.alpha, self.gradient)


def dual_objective_from_gradient(alpha: np.ndarray, gradient: np.ndarray) -> float:
    # gradient = Q a - e, so sum(a) - a^T Q a / 2 = sum(a (1 - gradient)) / 2
    return float(0.5 * np.sum(alpha * (1.0 - gradient)))


def dual_objective(alpha, y, K) -> float:
    alpha = np.asarray(alpha, dtype=float)
    ay = alpha * np.asarray(y, dtype=float)
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def _compute_rho(alpha, y, G, C) -> float:
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(yG[free].mean())
    at_upper = alpha >= C
    # bounds that the threshold must satisfy at the optimum
    ub_mask = (at_upper & (y < 0)) | (~at_upper & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (~at_upper & (y < 0))
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    if np.isinf(ub) or np.isinf(lb):
        return float(ub if np.isfinite(ub) else lb)
    return float((ub + lb) / 2.0)


def solve_dual(X: np.ndarray, y: np.ndarray, params: SvmParams, kernel: KernelSpec) -> DualSolution:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n == 0:
        raise SingleClassError("empty training set")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if not ((y > 0).any() and (y < 0).any()):
        raise SingleClassError("training set needs both classes")

    C = float(params.c)
    eps = float(params.tolerance)
    cache = KernelRowCache(X, kernel, params.cache_bytes)
    diag = cache.diag
    alpha = np.zeros(n)
    G = -np.ones(n)
    pos = y > 0
    max_iter = params.max_passes * max(n, 1000)
    converged = False
    gap = np.inf
    it = 0
    while it < max_iter:
        at_upper = alpha >= C
        at_lower = alpha <= 0
        up = np.where(pos, ~at_upper, ~at_lower)
        low = np.where(pos, ~at_lower, ~at_upper)
        minus_yG = -y * G
        cand_up = np.where(up, minus_yG, -np.inf)
        i = int(np.argmax(cand_up))
        m = cand_up[i]
        cand_low = np.where(low, minus_yG, np.inf)
        M = cand_low.min()
        gap = m - M
        if gap < eps:
            converged = True
            break
        Ki = cache.row(i)
        b = m - minus_yG
        a = diag[i] + diag - 2.0 * Ki
        a = np.where(a > 0, a, _TAU)
        score = np.where(low & (b > 0), -(b * b) / a, np.inf)
        j = int(np.argmin(score))
        Kj = cache.row(j)

        ai_old, aj_old = alpha[i], alpha[j]
        quad = max(diag[i] + diag[j] - 2.0 * Ki[j], _TAU)
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        d_i, d_j = ai - ai_old, aj - aj_old
        # Q_i = y_i y K_i
        G += y * (y[i] * d_i * Ki + y[j] * d_j * Kj)
        it += 1

    rho = _compute_rho(alpha, y, G, C)
    return DualSolution(alpha, rho, G, it, converged, float(gap))


@dataclass(frozen=True, eq=False)
class BinaryModel:
    """Two-class SVM. ``class_pair[0]`` wins when the decision value is >= 0."""

    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    kernel: KernelSpec
    class_pair: tuple[str, str] = ("+1", "-1")
    n_features: int = 0
    c: float = 1.0
    support_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    converged: bool = True
    iterations: int = 0

    def __post_init__(self):
        if len(self.support_vectors) != len(self.dual_coef):
            raise ValueError("support vector / coefficient count mismatch")

    @property
    def n_support(self) -> int:
        return len(self.dual_coef)

    def decision_values(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"dimension mismatch: model has {self.n_features}, input has {X.shape[1]}")
        if self.n_support == 0:
            return np.full(len(X), self.bias)
        return kernel_matrix(X, self.support_vectors, self.kernel) @ self.dual_coef + self.bias

    def predict_labels(self, X: np.ndarray) -> list[str]:
        dv = self.decision_values(X)
        return [self.class_pair[0] if v >= 0 else self.class_pair[1] for v in dv]


def decision_value(model: BinaryModel, x) -> float:
    return float(model.decision_values(np.asarray(x, dtype=float)[None, :])[0])


def sign(value: float) -> int:
    """Sign with the tie going to +1."""
    return 1 if value >= 0 else -1


def predict_binary(model: BinaryModel, x) -> int:
    return sign(decision_value(model, x))


def train_binary(
    X: np.ndarray,
    y: np.ndarray,
    params: SvmParams | None = None,
    kernel: KernelSpec | None = None,
    class_pair: tuple[str, str] = ("+1", "-1"),
) -> BinaryModel:
    """Train on ``X`` with labels ``y`` in {-1, +1}; ``+1`` maps to ``class_pair[0]``.

    A run that hits the iteration limit still returns its best solution, with
    ``converged=False`` and a :class:`ConvergenceWarning`.
    """
    params = params or SvmParams()
    X = np.asarray(X, dtype=float)
    kernel = kernel or KernelSpec.default_for(X.shape[1])
    y = np.asarray(y, dtype=float)
    sol = solve_dual(X, y, params, kernel)
    if not sol.converged:
        warnings.warn(f"SMO stopped after {sol.iterations} iterations with gap {sol.gap:.3g}",
                      ConvergenceWarning, stacklevel=2)
    sv = np.flatnonzero(sol.alpha > 0)
    return BinaryModel(
        support_vectors=X[sv].copy(),
        dual_coef=sol.alpha[sv] * y[sv],
        bias=-sol.rho,
        kernel=kernel,
        class_pair=tuple(class_pair),
        n_features=X.shape[1],
        c=params.c,
        support_indices=sv,
        converged=sol.converged,
        iterations=sol.iterations,
    )


def kkt_violations(model: BinaryModel, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-point KKT violation of a trained model on its own training set."""
    y = np.asarray(y, dtype=float)
    alpha = np.zeros(len(y))
    alpha[model.support_indices] = np.abs(model.dual_coef)
    margin = y * model.decision_values(X)
    at_zero = alpha <= 0
    at_c = alpha >= model.c
    free = ~at_zero & ~at_c
    v = np.zeros(len(y))
    v[at_zero] = np.maximum(0.0, 1.0 - margin[at_zero])
    v[at_c] = np.maximum(0.0, margin[at_c] - 1.0)
    v[free] = np.abs(margin[free] - 1.0)
    return v


# --- one-vs-one ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MulticlassModel:
    classes: tuple[str, ...]
    pairs: tuple[BinaryModel, ...]
    kernel: KernelSpec
    n_features: int

    def __post_init__(self):
        k = len(self.classes)
        if len(self.pairs) != k * (k - 1) // 2:
            raise ValueError(f"{k} classes need {k * (k - 1) // 2} pair models, got {len(self.pairs)}")

    @cached_property
    def _stacked(self):
        # shared support vectors across pairs, keyed by training index
        rows: dict[int, np.ndarray] = {}
        for p in self.pairs:
            for idx, v in zip(p.support_indices.tolist(), p.support_vectors):
                rows.setdefault(idx, v)
        keys = sorted(rows)
        pos = {k: n for n, k in enumerate(keys)}
        sv = np.array([rows[k] for k in keys]).reshape(len(keys), self.n_features)
        cols = [np.array([pos[i] for i in p.support_indices.tolist()], dtype=int) for p in self.pairs]
        return sv, cols

    def decision_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"dimension mismatch: model has {self.n_features}, input has {X.shape[1]}")
        sv, cols = self._stacked
        K = kernel_matrix(X, sv, self.kernel) if len(sv) else np.zeros((len(X), 0))
        out = np.empty((len(X), len(self.pairs)))
        for p, (model, c) in enumerate(zip(self.pairs, cols)):
            out[:, p] = K[:, c] @ model.dual_coef + model.bias
        return out

    def predict_labels(self, X: np.ndarray) -> list[str]:
        dv = self.decision_matrix(X)
        k = len(self.classes)
        index = {c: n for n, c in enumerate(self.classes)}
        votes = np.zeros((len(dv), k), dtype=int)
        conf = np.zeros((len(dv), k))
        rows = np.arange(len(dv))
        for p, model in enumerate(self.pairs):
            a, b = index[model.class_pair[0]], index[model.class_pair[1]]
            winner = np.where(dv[:, p] >= 0, a, b)
            votes[rows, winner] += 1
            conf[rows, winner] += np.abs(dv[:, p])
        tied = votes == votes.max(axis=1, keepdims=True)
        best = np.argmax(np.where(tied, conf, -np.inf), axis=1)
        return [self.classes[i] for i in best]


def predict_multiclass(model: MulticlassModel, x) -> str:
    return model.predict_labels(np.asarray(x, dtype=float)[None, :])[0]


def train_multiclass(
    X: np.ndarray,
    labels: Sequence[str],
    params: SvmParams | None = None,
    kernel: KernelSpec | None = None,
    n_jobs: int = 1,
) -> MulticlassModel:
    """One binary model per class pair, each trained on that pair's rows only."""
    params = params or SvmParams()
    X = np.asarray(X, dtype=float)
    kernel = kernel or KernelSpec.default_for(X.shape[1])
    labels = np.asarray(labels)
    classes = tuple(sorted(set(labels.tolist())))
    if len(classes) < 2:
        raise SingleClassError("multiclass training needs at least two classes")
    pairs = [(a, b) for n, a in enumerate(classes) for b in classes[n + 1:]]

    def fit(pair):
        a, b = pair
        idx = np.flatnonzero((labels == a) | (labels == b))
        y = np.where(labels[idx] == a, 1.0, -1.0)
        m = train_binary(X[idx], y, params, kernel, class_pair=(a, b))
        return BinaryModel(m.support_vectors, m.dual_coef, m.bias, m.kernel, m.class_pair,
                           m.n_features, m.c, idx[m.support_indices], m.converged, m.iterations)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            models = list(pool.map(fit, pairs))
    else:
        models = [fit(p) for p in pairs]
    return MulticlassModel(classes, tuple(models), kernel, X.shape[1])


# --- serialization ----------------------------------------------------------------


def _pair_to_dict(m: BinaryModel) -> dict:
    return {
        "class_pair": list(m.class_pair),
        "sv": [int(i) for i in m.support_indices],
        "coef": [float(v) for v in m.dual_coef],
        "bias": float(m.bias),
        "c": float(m.c),
        "converged": bool(m.converged),
        "iterations": int(m.iterations),
    }


def model_to_dict(model: BinaryModel | MulticlassModel) -> dict:
    pairs = [model] if isinstance(model, BinaryModel) else list(model.pairs)
    vectors: dict[int, list[float]] = {}
    for p in pairs:
        if len(p.support_indices) != p.n_support:
            raise ValueError("support_indices must label every support vector")
        for idx, v in zip(p.support_indices.tolist(), p.support_vectors):
            vectors.setdefault(int(idx), [float(x) for x in v])
    body = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "type": "binary" if isinstance(model, BinaryModel) else "multiclass",
        "kernel": {"kind": model.kernel.kind, "gamma": float(model.kernel.gamma)},
        "n_features": int(model.n_features),
        "classes": list(pairs[0].class_pair) if isinstance(model, BinaryModel) else list(model.classes),
        "support_vectors": [{"index": k, "values": vectors[k]} for k in sorted(vectors)],
        "pairs": [_pair_to_dict(p) for p in pairs],
    }
    body["checksum"] = _checksum(body)
    return body


def _canonical(body: dict) -> str:
    return json.dumps(body, sort_keys=True, separators=(",", ":"))


def _checksum(body: dict) -> str:
    payload = {k: v for k, v in body.items() if k != "checksum"}
    return hashlib.sha256(_canonical(payload).encode()).hexdigest()


def model_from_dict(body: dict) -> BinaryModel | MulticlassModel:
    if body.get("format") != MODEL_FORMAT:
        raise ModelFileError(f"not a {MODEL_FORMAT} file")
    if body.get("version") != MODEL_VERSION:
        raise ModelFileError(f"unsupported model version {body.get('version')!r} (expected {MODEL_VERSION})")
    if body.get("checksum") != _checksum(body):
        raise ModelFileError("checksum mismatch, model file is corrupted")
    kernel = KernelSpec(body["kernel"]["kind"], body["kernel"]["gamma"])
    d = body["n_features"]
    vectors = {e["index"]: e["values"] for e in body["support_vectors"]}
    pairs = []
    for p in body["pairs"]:
        sv = np.array([vectors[i] for i in p["sv"]], dtype=float).reshape(len(p["sv"]), d)
        pairs.append(BinaryModel(sv, np.array(p["coef"], dtype=float), p["bias"], kernel,
                                 tuple(p["class_pair"]), d, p["c"], np.array(p["sv"], dtype=int),
                                 p["converged"], p["iterations"]))
    if body["type"] == "binary":
        return pairs[0]
    return MulticlassModel(tuple(body["classes"]), tuple(pairs), kernel, d)


def save_model(model: BinaryModel | MulticlassModel, path) -> str:
    """Write the model as JSON and return its checksum."""
    body = model_to_dict(model)
    Path(path).write_text(_canonical(body) + "\n")
    return body["checksum"]


def load_model(path) -> BinaryModel | MulticlassModel:
    try:
        body = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(body)
