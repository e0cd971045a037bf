"""Nuisance learners for the outcome regression and the untreated propensity.

A :class:`LearnerSpec` names one of a fixed set of procedures:

``linear-ols``
    Least squares with intercept and a fixed ridge jitter of 1e-8 on the
    normal equations (outcome regression only).
``logistic-irls``
    Newton / iteratively reweighted least squares for Pr(A=0 | W), at most
    100 iterations, gradient-norm tolerance 1e-10.
``knn``
    k-nearest-neighbour averaging, Euclidean metric, default
    k = ceil(sqrt(#fitting rows)).
``kernel-nw``
    Nadaraya-Watson with a Gaussian product kernel; default per-covariate
    bandwidth sd(W_j) * m**(-1/5) over the m fitting rows.
``oracle-rate``
    Truth plus a deterministic perturbation c * n**(-a) * h(w); used to
    realize nuisance error rates exactly (see ``oracle_rate_nuisance``).
``misspecified-omit``
    Drops the first covariate, then fits the default parametric model
    (least squares for the outcome, IRLS for the propensity).
``misspecified-wronglink``
    Linear-probability fit of I(A=0) on W, then truncation (propensity
    only).

All propensity outputs are truncated into [eps, 1-eps]; eps defaults to
0.01.  Every fit is deterministic given its inputs and spec.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np
from scipy.special import expit

from .distributions import Observation
from .errors import (
    DegenerateTreatment,
    InvalidLearnerSpec,
    IrlsDivergence,
    NoUntreatedRows,
    SingularDesign,
)

__all__ = [
    "Dataset",
    "LearnerSpec",
    "FittedNuisance",
    "fit_outcome",
    "fit_propensity",
    "fit_nuisance",
    "oracle_rate_nuisance",
    "perturbation_shape",
    "truncate_propensity",
    "OUTCOME_KINDS",
    "PROPENSITY_KINDS",
]

RIDGE_JITTER = 1e-8
IRLS_MAX_ITER = 100
IRLS_GRADIENT_TOL = 1e-10
DEFAULT_TRUNCATION = 0.01

OUTCOME_KINDS = ("linear-ols", "knn", "kernel-nw", "misspecified-omit", "oracle-rate")
PROPENSITY_KINDS = (
    "logistic-irls",
    "knn",
    "kernel-nw",
    "misspecified-omit",
    "misspecified-wronglink",
    "oracle-rate",
)
_ALL_KINDS = tuple(dict.fromkeys(OUTCOME_KINDS + PROPENSITY_KINDS))


@dataclass(frozen=True)
class Dataset:
    """Immutable sample of (W, A, Y) rows backed by numpy arrays.

    ``w`` has shape (n, d); ``a`` is an integer 0/1 vector; ``y`` is float.
    Arrays are copied and marked read-only at construction.
    """

    w: np.ndarray
    a: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        if w.ndim != 2 or w.shape[0] == 0 or w.shape[1] == 0:
            raise ValueError(f"covariate matrix must be (n, d) with n, d >= 1, got shape {w.shape}")
        a = np.array(self.a, dtype=np.int64).reshape(-1)
        y = np.array(self.y, dtype=float).reshape(-1)
        if not (len(a) == len(y) == w.shape[0]):
            raise ValueError("w, a, y must have matching lengths")
        if not np.isin(a, (0, 1)).all():
            raise ValueError("treatment values must be 0 or 1")
        if not (np.isfinite(w).all() and np.isfinite(y).all()):
            raise ValueError("covariates and outcomes must be finite")
        for arr in (w, a, y):
            arr.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def d(self) -> int:
        return self.w.shape[1]

    @classmethod
    def from_rows(cls, rows: Iterable[Observation]) -> "Dataset":
        rows = list(rows)
        if not rows:
            raise ValueError("cannot build a dataset from zero rows")
        return cls(
            w=np.array([r.w for r in rows], dtype=float),
            a=np.array([r.a for r in rows], dtype=np.int64),
            y=np.array([r.y for r in rows], dtype=float),
        )

    def rows(self) -> list:
        return [
            Observation(tuple(self.w[i]), int(self.a[i]), float(self.y[i]))
            for i in range(self.n)
        ]

    def subset(self, index) -> "Dataset":
        return Dataset(self.w[index], self.a[index], self.y[index])


@dataclass(frozen=True)
class LearnerSpec:
    """Declarative description of one nuisance fit.

    ``rate_exponent`` (a), ``amplitude`` (c) and ``shape`` only apply to
    ``oracle-rate``; ``k`` to ``knn``; ``bandwidth`` to ``kernel-nw``.
    ``truncation`` bounds propensity outputs away from 0 and 1.
    """

    kind: str
    k: Optional[int] = None
    bandwidth: Optional[float] = None
    rate_exponent: Optional[float] = None
    amplitude: Optional[float] = None
    shape: int = 0
    truncation: float = DEFAULT_TRUNCATION
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _ALL_KINDS:
            raise InvalidLearnerSpec(f"unknown learner kind {self.kind!r}")
        if not 0.0 < self.truncation < 0.5:
            raise InvalidLearnerSpec(f"truncation must lie in (0, 0.5), got {self.truncation!r}")
        if self.k is not None and (int(self.k) != self.k or self.k < 1):
            raise InvalidLearnerSpec(f"k must be a positive integer, got {self.k!r}")
        if self.bandwidth is not None and not self.bandwidth > 0.0:
            raise InvalidLearnerSpec(f"bandwidth must be positive, got {self.bandwidth!r}")
        if self.kind == "oracle-rate":
            if self.rate_exponent is None or not 0.0 < self.rate_exponent <= 0.5:
                raise InvalidLearnerSpec(
                    f"oracle-rate needs rate_exponent in (0, 0.5], got {self.rate_exponent!r}"
                )
            # amplitude 0 is allowed: it degenerates to the exact truth
            if self.amplitude is None or self.amplitude < 0.0:
                raise InvalidLearnerSpec(
                    f"oracle-rate needs amplitude >= 0, got {self.amplitude!r}"
                )
            if self.shape not in (0, 1, 2):
                raise InvalidLearnerSpec(f"unknown perturbation shape {self.shape!r}")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for name in ("k", "bandwidth", "rate_exponent", "amplitude"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        out["shape"] = self.shape
        out["truncation"] = self.truncation
        out["seed"] = self.seed
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "LearnerSpec":
        if not isinstance(doc, dict) or "kind" not in doc:
            raise InvalidLearnerSpec(f'learner spec must be an object with a "kind": {doc!r}')
        allowed = {"kind", "k", "bandwidth", "rate_exponent", "amplitude",
                   "shape", "truncation", "seed"}
        unknown = set(doc) - allowed
        if unknown:
            raise InvalidLearnerSpec(f"unknown learner spec fields {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class FittedNuisance:
    """Paired prediction functions for the two nuisances.

    ``predict_q`` maps covariate rows to estimated E(Y | W, A=0); it is not
    truncated.  ``predict_g`` maps covariate rows to estimated Pr(A=0 | W)
    and always returns values in [eps, 1-eps].  Both accept an (m, d) array
    (returning an (m,) array) or a single length-d vector (returning a
    float).  The specs that produced each side ride along for reporting.
    """

    predict_q: Callable
    predict_g: Callable
    spec_q: Optional[LearnerSpec] = None
    spec_g: Optional[LearnerSpec] = None
    fit_fold_id: Optional[int] = None


# ---------------------------------------------------------------------------
# prediction plumbing


def _predictor(core: Callable) -> Callable:
    def predict(w):
        arr = np.asarray(w, dtype=float)
        single = arr.ndim == 1
        out = core(np.atleast_2d(arr))
        return float(out[0]) if single else out

    return predict


def truncate_propensity(p, eps: float):
    """Clamp propensity values into [eps, 1-eps]."""
    return np.clip(p, eps, 1.0 - eps)


def _ols_beta(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    design = np.column_stack([np.ones(len(x)), x])
    gram = design.T @ design + RIDGE_JITTER * np.eye(design.shape[1])
    try:
        return np.linalg.solve(gram, design.T @ y)
    except np.linalg.LinAlgError as err:
        raise SingularDesign(f"normal equations singular despite jitter: {err}") from err


def _linear_core(beta: np.ndarray, drop_first: bool) -> Callable:
    def core(w):
        x = w[:, 1:] if drop_first else w
        return beta[0] + x @ beta[1:]

    return core


def _logistic_nll(design: np.ndarray, z: np.ndarray, beta: np.ndarray) -> float:
    eta = design @ beta
    sign = 2.0 * z - 1.0
    return float(np.logaddexp(0.0, -sign * eta).sum())


def _irls_beta(x: np.ndarray, z: np.ndarray) -> np.ndarray:
    # z is the binary target I(A=0); damped Newton with a tiny Hessian
    # jitter so saturated weights cannot make the solve blow up.  The
    # backtracking line search matters under perfect separation: the
    # likelihood keeps improving as |beta| grows, margins saturate, and
    # the gradient reaches exact zero instead of oscillating.
    design = np.column_stack([np.ones(len(x)), x])
    beta = np.zeros(design.shape[1])
    eye = np.eye(design.shape[1])
    nll = _logistic_nll(design, z, beta)
    for _ in range(IRLS_MAX_ITER):
        p = expit(design @ beta)
        grad = design.T @ (z - p)
        if math.sqrt(float(grad @ grad)) <= IRLS_GRADIENT_TOL:
            return beta
        weights = p * (1.0 - p)
        # the jitter must stay far below the curvature of near-boundary
        # rows, or separated fits stall before the gradient tolerance
        hessian = design.T @ (weights[:, None] * design) + 1e-12 * eye
        try:
            step = np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError as err:
            raise SingularDesign(f"IRLS step singular: {err}") from err
        for _halving in range(60):
            candidate = beta + step
            cand_nll = _logistic_nll(design, z, candidate)
            if cand_nll <= nll + 1e-12:
                beta, nll = candidate, cand_nll
                break
            step = 0.5 * step
        else:
            break  # no descent direction left; stationary up to rounding
    p = expit(design @ beta)
    grad = design.T @ (z - p)
    if math.sqrt(float(grad @ grad)) <= IRLS_GRADIENT_TOL:
        return beta
    raise IrlsDivergence(
        f"gradient norm {math.sqrt(float(grad @ grad)):.3e} after {IRLS_MAX_ITER} iterations"
    )


def _logistic_core(beta: np.ndarray, drop_first: bool) -> Callable:
    def core(w):
        x = w[:, 1:] if drop_first else w
        return expit(beta[0] + x @ beta[1:])

    return core


def _knn_core(train_w: np.ndarray, train_t: np.ndarray, k: int) -> Callable:
    k = min(k, len(train_t))

    def core(w):
        d2 = ((w[:, None, :] - train_w[None, :, :]) ** 2).sum(axis=2)
        if k == len(train_t):
            idx = np.broadcast_to(np.arange(len(train_t)), (len(w), len(train_t)))
        else:
            idx = np.argpartition(d2, kth=k - 1, axis=1)[:, :k]
        return train_t[idx].mean(axis=1)

    return core


def _nw_core(train_w: np.ndarray, train_t: np.ndarray, bandwidth: np.ndarray) -> Callable:
    def core(w):
        scaled = (w[:, None, :] - train_w[None, :, :]) / bandwidth
        logk = -0.5 * (scaled**2).sum(axis=2)
        # per-row stabilization keeps the nearest point's weight at 1, so
        # the denominator never underflows and far queries degrade to a
        # nearest-neighbour average instead of 0/0
        logk -= logk.max(axis=1, keepdims=True)
        weights = np.exp(logk)
        return (weights * train_t).sum(axis=1) / weights.sum(axis=1)

    return core


def _default_bandwidth(train_w: np.ndarray) -> np.ndarray:
    m = len(train_w)
    sd = train_w.std(axis=0, ddof=1) if m > 1 else np.ones(train_w.shape[1])
    sd = np.where(sd > 0.0, sd, 1.0)
    return sd * m ** (-0.2)


def _smoother_core(train_w, train_t, spec: LearnerSpec) -> Callable:
    if spec.kind == "knn":
        k = spec.k if spec.k is not None else math.ceil(math.sqrt(len(train_t)))
        return _knn_core(train_w, train_t, k)
    bw = (
        np.full(train_w.shape[1], float(spec.bandwidth))
        if spec.bandwidth is not None
        else _default_bandwidth(train_w)
    )
    return _nw_core(train_w, train_t, bw)


# ---------------------------------------------------------------------------
# fitting entry points


def fit_outcome(data: Dataset, spec: LearnerSpec) -> Callable:
    """Fit E(Y | W, A=0) on the untreated rows of ``data``.

    Returns a prediction function defined for every covariate vector.
    """
    if spec.kind not in ("linear-ols", "knn", "kernel-nw", "misspecified-omit"):
        raise InvalidLearnerSpec(f"{spec.kind!r} cannot be fit as an outcome regression here")
    mask = data.a == 0
    if not mask.any():
        raise NoUntreatedRows("no rows with a = 0 to fit the outcome regression")
    w0 = data.w[mask]
    y0 = data.y[mask]
    if spec.kind == "linear-ols":
        return _predictor(_linear_core(_ols_beta(w0, y0), drop_first=False))
    if spec.kind == "misspecified-omit":
        return _predictor(_linear_core(_ols_beta(w0[:, 1:], y0), drop_first=True))
    return _predictor(_smoother_core(w0, y0, spec))


def fit_propensity(data: Dataset, spec: LearnerSpec) -> Callable:
    """Fit Pr(A = 0 | W) on all rows; outputs truncated to [eps, 1-eps]."""
    if spec.kind not in (
        "logistic-irls",
        "knn",
        "kernel-nw",
        "misspecified-omit",
        "misspecified-wronglink",
    ):
        raise InvalidLearnerSpec(f"{spec.kind!r} cannot be fit as a propensity here")
    z = (data.a == 0).astype(float)
    if z.min() == z.max():
        raise DegenerateTreatment("all rows share one treatment value")
    eps = spec.truncation
    if spec.kind == "logistic-irls":
        core = _logistic_core(_irls_beta(data.w, z), drop_first=False)
    elif spec.kind == "misspecified-omit":
        core = _logistic_core(_irls_beta(data.w[:, 1:], z), drop_first=True)
    elif spec.kind == "misspecified-wronglink":
        core = _linear_core(_ols_beta(data.w, z), drop_first=False)
    else:
        core = _smoother_core(data.w, z, spec)

    def truncated(w):
        return truncate_propensity(core(w), eps)

    return _predictor(truncated)


def fit_nuisance(
    data: Dataset,
    spec_q: LearnerSpec,
    spec_g: LearnerSpec,
    truth=None,
    fold_id: Optional[int] = None,
) -> FittedNuisance:
    """Fit both nuisances on one dataset.

    ``truth`` must be a (q, g) pair of vectorized callables when either spec
    is ``oracle-rate``; data-driven kinds ignore it.
    """
    if spec_q.kind == "oracle-rate" or spec_g.kind == "oracle-rate":
        if truth is None:
            raise InvalidLearnerSpec("oracle-rate learners need the (q, g) truth callables")
        truth_q, truth_g = truth
    if spec_q.kind == "oracle-rate":
        predict_q = _oracle_side(truth_q, data.n, spec_q, clip_eps=None)
    else:
        predict_q = fit_outcome(data, spec_q)
    if spec_g.kind == "oracle-rate":
        predict_g = _oracle_side(truth_g, data.n, spec_g, clip_eps=spec_g.truncation)
    else:
        predict_g = fit_propensity(data, spec_g)
    return FittedNuisance(predict_q, predict_g, spec_q, spec_g, fit_fold_id=fold_id)


# ---------------------------------------------------------------------------
# rate oracle


def perturbation_shape(shape_id: int, median: float = 0.0) -> Callable:
    """Bounded perturbation direction h(w), |h| <= 1, as a function of w_1.

    shape 0: sin(pi * w_1)          (smooth, mean zero under symmetric laws)
    shape 1: sign(w_1 - median)     (discontinuous, mean zero at the median)
    shape 2: constant 1             (pure offset; nonzero mean)
    """
    if shape_id == 0:
        return lambda w: np.sin(math.pi * w[:, 0])
    if shape_id == 1:
        return lambda w: np.sign(w[:, 0] - median)
    if shape_id == 2:
        return lambda w: np.ones(len(w))
    raise InvalidLearnerSpec(f"unknown perturbation shape {shape_id!r}")


def _oracle_side(truth_fn: Callable, n: int, spec: LearnerSpec, clip_eps) -> Callable:
    shape_fn = perturbation_shape(spec.shape)
    delta = spec.amplitude * n ** (-spec.rate_exponent)

    def core(w):
        values = np.asarray(truth_fn(w), dtype=float) + delta * shape_fn(w)
        if clip_eps is not None:
            values = truncate_propensity(values, clip_eps)
        return values

    return _predictor(core)


def oracle_rate_nuisance(
    truth_q: Callable,
    truth_g: Callable,
    n: int,
    spec_q: LearnerSpec,
    spec_g: Optional[LearnerSpec] = None,
) -> FittedNuisance:
    """Truth perturbed at an exact polynomial rate in ``n``.

    predict_q(w) = q(w) + c_q * n**(-a_q) * h_q(w)
    predict_g(w) = clip(g(w) + c_g * n**(-a_g) * h_g(w), eps, 1-eps)

    ``spec_g`` defaults to ``spec_q``, giving both nuisances the same rate
    and shape (their product then scales as n**(-a_q-a_g) exactly as long
    as the truncation never binds).
    """
    if spec_g is None:
        spec_g = spec_q
    for spec in (spec_q, spec_g):
        if spec.kind != "oracle-rate":
            raise InvalidLearnerSpec(f"oracle_rate_nuisance needs oracle-rate specs, got {spec.kind!r}")
    if n < 1:
        raise InvalidLearnerSpec(f"sample size must be positive, got {n!r}")
    return FittedNuisance(
        predict_q=_oracle_side(truth_q, n, spec_q, clip_eps=None),
        predict_g=_oracle_side(truth_g, n, spec_g, clip_eps=spec_g.truncation),
        spec_q=spec_q,
        spec_g=spec_g,
    )
