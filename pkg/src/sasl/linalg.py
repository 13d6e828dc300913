"""Least squares on pivoted QR, and the F distribution via the incomplete beta."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import betaln

from .errors import EmptyMatrix, NonFiniteInput, NonpositiveDegreesOfFreedom

# |R_kk| below RANK_RTOL * ||X||_F marks column k as numerically dependent
RANK_RTOL = 1e-10
# scaled dependency coefficient below which a basic column is unrelated to a
# non-basic one
_DEPENDENCY_TOL = 1e-8


def _as_matrix(X):
    return np.asarray(getattr(X, "values", X), dtype=float)


@dataclass(frozen=True)
class OlsFit:
    """Result of an ordinary least squares fit.

    ``df`` is the residual degrees of freedom ``n - rank``; it equals
    ``n - p`` whenever the design has full column rank.
    """

    coefficients: np.ndarray
    sse: float
    n: int
    p: int
    rank: int
    rank_deficient: np.ndarray

    @property
    def df(self) -> int:
        return self.n - self.rank


@dataclass(frozen=True)
class _Decomposition:
    fit: OlsFit
    basic: np.ndarray  # column indices of the retained basis, pivot order
    R11: np.ndarray
    dependency: np.ndarray  # R11^{-1} R12, basic x non-basic


def _decompose(X, y) -> _Decomposition:
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise EmptyMatrix(f"design has shape {X.shape}")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{X.shape[0]} design rows but {y.shape[0]} responses")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise NonFiniteInput("design or response contains NaN or inf")
    n, p = X.shape
    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = RANK_RTOL * np.linalg.norm(X)
    rank = int(np.count_nonzero(diag > tol)) if tol > 0 else 0
    coef = np.zeros(p)
    R11 = R[:rank, :rank]
    if rank:
        coef[piv[:rank]] = scipy.linalg.solve_triangular(R11, Q[:, :rank].T @ y)
    resid = y - X @ coef
    deficient = np.ones(p, dtype=bool)
    deficient[piv[:rank]] = False
    fit = OlsFit(coef, float(resid @ resid), n, p, rank, deficient)
    if rank and rank < p:
        dep = scipy.linalg.solve_triangular(R11, R[:rank, rank:])
    else:
        dep = np.zeros((rank, p - rank))
    return _Decomposition(fit, piv[:rank].copy(), R11, dep)


def fit_ols(X, y) -> OlsFit:
    """Least squares coefficients minimizing ``||y - X b||^2``.

    Columns beyond the numerical rank get a zero coefficient and are flagged
    in ``rank_deficient``; column positions never shift.
    """
    return _decompose(X, y).fit


def sse(X, y) -> float:
    return fit_ols(X, y).sse


def drop_one_sse_increase(X, y) -> tuple[OlsFit, np.ndarray]:
    """SSE increase from deleting each single column, from one decomposition.

    A column lying in the span of the others can be dropped without changing
    the fitted space, so its increase is exactly 0. For the remaining
    (essential) columns the increase is ``b_j^2 / [(B'B)^-1]_jj`` over the
    retained basis ``B``, which is the refit SSE difference in closed form.
    """
    dec = _decompose(X, y)
    fit = dec.fit
    X = _as_matrix(X)
    increase = np.zeros(fit.p)
    r = fit.rank
    if r == 0:
        return fit, increase
    col_norms = np.linalg.norm(X, axis=0)
    essential = np.ones(r, dtype=bool)
    if dec.dependency.size:
        nonbasic = np.flatnonzero(fit.rank_deficient)
        scale = col_norms[dec.basic][:, None] / np.maximum(col_norms[nonbasic], 1e-300)[None, :]
        essential = ~(np.abs(dec.dependency * scale) > _DEPENDENCY_TOL).any(axis=1)
    Rinv = scipy.linalg.solve_triangular(dec.R11, np.eye(r))
    inv_diag = np.einsum("ij,ij->i", Rinv, Rinv)
    b = fit.coefficients[dec.basic]
    inc = np.where(essential, b * b / inv_diag, 0.0)
    increase[dec.basic] = np.maximum(inc, 0.0)
    return fit, increase


# ---------------------------------------------------------------------------
# Regularized incomplete beta and the F distribution
# ---------------------------------------------------------------------------

_TINY = 1e-300
_CF_EPS = 1e-15
_CF_MAX_ITER = 20000


def _beta_cf(a, b, x):
    """Continued fraction for I_x(a, b) (modified Lentz), vectorized."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _TINY, _TINY, d)
    d = 1.0 / d
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2.0 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        h = np.where(active, h * d * c, h)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(active, h * delta, h)
        active &= np.abs(delta - 1.0) >= _CF_EPS
        if not active.any():
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_pair(a, b, x, y=None):
    """Return ``(I_x(a, b), 1 - I_x(a, b))`` with both tails computed directly.

    ``y`` may carry ``1 - x`` computed without cancellation by the caller.
    """
    a, b, x = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, x)))
    y = 1.0 - x if y is None else np.broadcast_to(np.asarray(y, dtype=float), x.shape)
    lower = np.zeros(x.shape)
    upper = np.ones(x.shape)
    upper[x >= 1] = 0.0
    lower[x >= 1] = 1.0
    inner = (x > 0) & (x < 1)
    if inner.any():
        ai, bi, xi, yi = a[inner], b[inner], x[inner], y[inner]
        log_front = ai * np.log(xi) + bi * np.log(yi) - betaln(ai, bi)
        front = np.exp(log_front)
        direct = xi < (ai + 1.0) / (ai + bi + 2.0)
        lo = np.empty(xi.shape)
        hi = np.empty(xi.shape)
        if direct.any():
            v = front[direct] * _beta_cf(ai[direct], bi[direct], xi[direct]) / ai[direct]
            lo[direct] = v
            hi[direct] = 1.0 - v
        flip = ~direct
        if flip.any():
            v = front[flip] * _beta_cf(bi[flip], ai[flip], yi[flip]) / bi[flip]
            hi[flip] = v
            lo[flip] = 1.0 - v
        lower[inner] = np.clip(lo, 0.0, 1.0)
        upper[inner] = np.clip(hi, 0.0, 1.0)
    return lower, upper


def _f_tails(x, d1, d2):
    x, d1, d2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, d1, d2)))
    if (d1 <= 0).any() or (d2 <= 0).any() or np.isnan(d1).any() or np.isnan(d2).any():
        raise NonpositiveDegreesOfFreedom("F degrees of freedom must be positive")
    if np.isnan(x).any() or (x < 0).any():
        raise ValueError("F quantile must be >= 0")
    with np.errstate(over="ignore", invalid="ignore"):
        denom = d1 * x + d2
        u = np.where(np.isinf(x), 1.0, d1 * x / denom)
        v = np.where(np.isinf(x), 0.0, d2 / denom)
    return betainc_pair(d1 / 2.0, d2 / 2.0, u, v)


def _scalar_or_array(values, *inputs):
    if all(np.ndim(v) == 0 for v in inputs):
        return float(values.reshape(()))
    return values


def f_cdf(x, d1, d2):
    """CDF of the F(d1, d2) distribution."""
    return _scalar_or_array(_f_tails(x, d1, d2)[0], x, d1, d2)


def f_sf(x, d1, d2):
    """Upper tail ``1 - f_cdf(x, d1, d2)``, accurate for small tails."""
    return _scalar_or_array(_f_tails(x, d1, d2)[1], x, d1, d2)
