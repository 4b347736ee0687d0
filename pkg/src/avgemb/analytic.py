"""Closed-form consistency of average embeddings under i.i.d. entries.

Two layers live here. The first gives CLT-level normal approximations of
inner-product similarities and of ``s_in``/``s_out``/``s_diff`` (a subset
member's, a non-member's, and their difference's similarity to the subset
centroid), together with the closed-form probability that a member beats a
non-member. The second evaluates the consistency integral

    Consistency_k = (1/k) * sum_i  integral f_in,(i)(x) * F_out,(k-i+1)(x) dx

where ``f_in,(i)`` is the density of the i-th largest member similarity and
``F_out,(k-i+1)`` the CDF of the (k-i+1)-th largest non-member similarity.
That layer assumes zero-mean entries, the only regime where member
similarities are uncorrelated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import _kernels
from .errors import DegenerateError, DomainError, InvalidParameterError, QuadratureError
from .evaluator import ConsistencyCurve
from .stats_core import MomentSet, log_binomial_range, normal_log_cdf

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
# |mean| / sd below this counts as centered
ZERO_MEAN_RTOL = 1e-9


@dataclass(frozen=True)
class NormalApprox:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise DegenerateError(f"normal approximation needs variance > 0, got {self.variance}")

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class QuadratureConfig:
    """Adaptive Simpson settings for the p+ integrals.

    Each integral runs over ``mu_in +/- half_width * sigma_in``; the
    truncated tails hold less than 1e-30 of the mass.
    """

    rel_tol: float = 1e-8
    half_width: float = 12.0
    max_depth: int = 50
    panels: int = 64

    def __post_init__(self):
        if not 0 < self.rel_tol < 1:
            raise InvalidParameterError("rel_tol must be in (0, 1)")
        if not self.half_width > 0:
            raise InvalidParameterError("half_width must be > 0")
        if self.max_depth < 2 or self.panels < 1:
            raise InvalidParameterError("max_depth must be >= 2 and panels >= 1")


def _check_d(d):
    if int(d) < 1:
        raise InvalidParameterError(f"d must be >= 1, got {d}")
    return int(d)


def _check_k(k):
    if int(k) < 2:
        raise InvalidParameterError(f"k must be >= 2, got {k}")
    return int(k)


# --------------------------------------------------------------------------
# similarity moments
# --------------------------------------------------------------------------


def inner_product_moments(mx: MomentSet, my: MomentSet, d: int) -> NormalApprox:
    """CLT approximation of s(X, Y) for independent vectors X, Y."""
    d = _check_d(d)
    ex2 = mx.variance + mx.mean**2
    ey2 = my.variance + my.mean**2
    return NormalApprox(d * mx.mean * my.mean, d * (ex2 * ey2 - mx.mean**2 * my.mean**2))


def inner_self_moments(mx: MomentSet, d: int) -> NormalApprox:
    """CLT approximation of the squared norm s(X, X).

    Raises ``DegenerateError`` when the norm is a point mass, e.g. for
    Rademacher entries where ||X||^2 = d surely.
    """
    d = _check_d(d)
    mu, var, sd = mx.mean, mx.variance, mx.sd
    mean = d * (mu * mu + var)
    variance = d * (4 * mu * mu * var + 4 * mu * mx.skewness * sd**3 + (mx.kurtosis - 1) * var * var)
    if variance <= 0:
        raise DegenerateError(f"s(X, X) is a point mass at {mean} (zero variance)")
    return NormalApprox(mean, variance)


def cov_xy_xz(mx: MomentSet, my: MomentSet, mz: MomentSet, d: int) -> float:
    """Cov(s(X, Y), s(X, Z)) for independent X, Y, Z."""
    return _check_d(d) * mx.variance * my.mean * mz.mean


def cov_xx_xy(mx: MomentSet, my: MomentSet, d: int) -> float:
    """Cov(s(X, X), s(X, Y)) for independent X, Y."""
    return _check_d(d) * my.mean * (mx.skewness * mx.sd**3 + 2 * mx.mean * mx.variance)


def s_out_params(m: MomentSet, k: int, d: int) -> NormalApprox:
    k, d = _check_k(k), _check_d(d)
    mu, var = m.mean, m.variance
    return NormalApprox(d * mu * mu, d * (var * var + (k + 1) * var * mu * mu) / k)


def s_in_params(m: MomentSet, k: int, d: int) -> NormalApprox:
    """Member-to-centroid similarity.

    The skewness term carries 2(k+1) mu gamma sigma^3; it is exact, which
    the Monte Carlo tests on skewed non-centered entries confirm.
    """
    k, d = _check_k(k), _check_d(d)
    mu, var, sd = m.mean, m.variance, m.sd
    variance = d * (
        k * (k + 3) * mu * mu * var
        + 2 * (k + 1) * mu * m.skewness * sd**3
        + (m.kurtosis + k - 2) * var * var
    ) / (k * k)
    return NormalApprox(d * (mu * mu + var / k), variance)


def s_diff_params(m: MomentSet, k: int, d: int) -> NormalApprox:
    k, d = _check_k(k), _check_d(d)
    mu, var, sd = m.mean, m.variance, m.sd
    variance = d * (
        (2 * (k - 1) + m.kurtosis) * var * var + 2 * k * m.skewness * mu * sd**3 + 2 * k * k * var * mu * mu
    ) / (k * k)
    return NormalApprox(d * var / k, variance)


def _crossing_argument(m: MomentSet, k: int, d: int) -> float:
    k, d = _check_k(k), _check_d(d)
    mu, var, sd = m.mean, m.variance, m.sd
    denom = (2 * (k - 1) + m.kurtosis) * var + 2 * k * m.skewness * mu * sd + 2 * k * k * mu * mu
    if not denom > 0 or not var > 0:
        raise DomainError(f"infeasible moments for the crossing probability (denominator {denom})")
    return math.sqrt(d * var / (2.0 * denom))


def prob_in_beats_out(m: MomentSet, k: int, d: int) -> float:
    """P(s(u_in, centroid) > s(u_out, centroid)) under the CLT approximation."""
    return 0.5 * (1.0 + math.erf(_crossing_argument(m, k, d)))


def prob_out_beats_in(m: MomentSet, k: int, d: int) -> float:
    """Complement of ``prob_in_beats_out``, accurate deep in the tail."""
    return 0.5 * math.erfc(_crossing_argument(m, k, d))


# --------------------------------------------------------------------------
# order statistics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class InOutParams:
    """Member / non-member similarity parameters for zero-mean entries."""

    mu_in: float
    sigma_in: float
    sigma_out: float
    k: int
    n_catalog: int
    d: int

    def __post_init__(self):
        if not self.sigma_in > 0 or not self.sigma_out > 0:
            raise DegenerateError("sigma_in and sigma_out must be > 0")
        if not 2 <= self.k < self.n_catalog:
            raise InvalidParameterError(f"need 2 <= k < n_catalog, got k={self.k}, N={self.n_catalog}")

    @classmethod
    def from_moments(cls, m: MomentSet, k: int, n_catalog: int, d: int) -> "InOutParams":
        k, d = _check_k(k), _check_d(d)
        _require_zero_mean(m)
        var = m.variance
        if m.kurtosis + k - 2 <= 0:
            raise DegenerateError("kurtosis + k - 2 must be > 0")
        return cls(
            mu_in=d * var / k,
            sigma_in=var * math.sqrt(d * (m.kurtosis + k - 2)) / k,
            sigma_out=var * math.sqrt(d / k),
            k=k,
            n_catalog=int(n_catalog),
            d=d,
        )


def _require_zero_mean(m: MomentSet):
    if not m.variance > 0:
        raise DegenerateError("entry variance must be > 0")
    if abs(m.mean) > ZERO_MEAN_RTOL * m.sd:
        raise DomainError(
            f"the consistency integral requires zero-mean entries (mu = 0), got mu = {m.mean}; center the embeddings first"
        )


def normal_order_density(i: int, n: int, mean: float, sd: float):
    """Density of the i-th largest of n i.i.d. N(mean, sd^2) draws."""
    if not 1 <= i <= n:
        raise DomainError(f"rank {i} out of range for {n} draws")
    if not sd > 0:
        raise InvalidParameterError("sd must be > 0")
    log_coef = math.lgamma(n + 1) - math.lgamma(i) - math.lgamma(n - i + 1)

    def density(x):
        z = (np.asarray(x, dtype=np.float64) - mean) / sd
        log_f = log_coef - 0.5 * z * z - _LOG_SQRT_2PI - math.log(sd)
        if n - i:
            log_f = log_f + (n - i) * normal_log_cdf(z)
        if i - 1:
            log_f = log_f + (i - 1) * normal_log_cdf(-z)
        out = np.exp(log_f)
        return float(out) if np.ndim(x) == 0 else out

    return density


def normal_order_cdf(r: int, n: int, mean: float, sd: float):
    """CDF of the r-th largest of n i.i.d. N(mean, sd^2) draws.

    ``P(at most r-1 draws exceed x) = sum_{j=n-r+1}^{n} C(n,j) F^j (1-F)^(n-j)``,
    every term formed in log space. Above 1/2 the value is taken as one minus
    the regularized incomplete beta ``I_q(r, n-r+1)`` of the exceedance
    probability q, which keeps the flat upper tail monotone and accurate.
    ``r = n + 1`` is accepted and yields 1.
    """
    if not 1 <= r <= n + 1:
        raise DomainError(f"rank {r} out of range for {n} draws")
    if not sd > 0:
        raise InvalidParameterError("sd must be > 0")
    j_lo = n - r + 1
    j = np.arange(j_lo, n + 1, dtype=np.float64)
    lb = log_binomial_range(n, j_lo, n)
    rest = n - j

    def cdf(x):
        z = (np.atleast_1d(np.asarray(x, dtype=np.float64)) - mean) / sd
        lp = normal_log_cdf(z)[:, None]
        lq = normal_log_cdf(-z)[:, None]
        terms = lb[None, :] + j[None, :] * np.where(j[None, :] > 0, lp, 0.0)
        terms = terms + np.where(rest[None, :] > 0, rest[None, :] * lq, 0.0)
        top = terms.max(axis=1)
        out = np.exp(top) * np.exp(terms - top[:, None]).sum(axis=1)
        if r <= n:
            upper = out > 0.5
            if upper.any():
                out[upper] = 1.0 - special.betainc(r, n - r + 1, np.exp(lq[upper, 0]))
        out = np.minimum(out, 1.0)
        return float(out[0]) if np.ndim(x) == 0 else out

    return cdf


def f_in_order_density(i: int, p: InOutParams):
    """Density of the i-th highest member similarity."""
    if not 1 <= i <= p.k:
        raise DomainError(f"rank {i} out of range for k={p.k}")
    return normal_order_density(i, p.k, p.mu_in, p.sigma_in)


def F_out_order_cdf(i: int, p: InOutParams):
    """CDF of the (k-i+1)-th highest non-member similarity."""
    if not 1 <= i <= p.k:
        raise DomainError(f"rank {i} out of range for k={p.k}")
    if p.n_catalog - 2 * p.k + i < 0:
        raise DomainError(f"N - 2k + i must be >= 0, got N={p.n_catalog}, k={p.k}, i={i}")
    return normal_order_cdf(p.k - i + 1, p.n_catalog - p.k, 0.0, p.sigma_out)


# --------------------------------------------------------------------------
# consistency integral
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AnalyticConsistency:
    k: int
    score: float
    pplus: tuple
    abs_error: float


def _build_jobs(m: MomentSet, ks, n_catalog: int, d: int):
    lb_parts = []
    cols = {name: [] for name in ("mu_in", "s_in", "s_out", "log_coef", "k", "i", "m_out", "j0", "lb_start")}
    base = 0
    for k in ks:
        p = InOutParams.from_moments(m, k, n_catalog, d)
        m_out = n_catalog - k
        first_j = n_catalog - 2 * k + 1
        lb_parts.append(log_binomial_range(m_out, first_j, m_out))
        for i in range(1, k + 1):
            cols["mu_in"].append(p.mu_in)
            cols["s_in"].append(p.sigma_in)
            cols["s_out"].append(p.sigma_out)
            cols["log_coef"].append(math.lgamma(k + 1) - math.lgamma(i) - math.lgamma(k - i + 1))
            cols["k"].append(k)
            cols["i"].append(i)
            cols["m_out"].append(m_out)
            cols["j0"].append(n_catalog - 2 * k + i)
            cols["lb_start"].append(base + i - 1)
        base += k
    float_cols = ("mu_in", "s_in", "s_out", "log_coef")
    jobs = {name: np.asarray(vals, dtype=np.float64 if name in float_cols else np.int64) for name, vals in cols.items()}
    return jobs, np.concatenate(lb_parts)


def _check_consistency_args(m, k, n_catalog, d):
    k, d = _check_k(k), _check_d(d)
    if 2 * k > n_catalog:
        raise DomainError(f"need k <= N/2, got k={k}, N={n_catalog}")
    _require_zero_mean(m)
    return k


def consistency_breakdown(m: MomentSet, k_values, n_catalog: int, d: int,
                          quad: QuadratureConfig = QuadratureConfig()) -> list:
    """Per-k analytic consistency with its p+ terms, one quadrature per (k, i)."""
    ks = [_check_consistency_args(m, k, int(n_catalog), d) for k in k_values]
    if not ks:
        raise InvalidParameterError("empty k range")
    jobs, lb_flat = _build_jobs(m, ks, int(n_catalog), int(d))
    val, err, conv = _kernels.pplus_batch(jobs, lb_flat, quad.rel_tol, quad.max_depth, quad.panels, quad.half_width)
    if not conv.all():
        bad = int(np.flatnonzero(~conv)[0])
        raise QuadratureError(
            f"quadrature did not converge for k={jobs['k'][bad]}, i={jobs['i'][bad]}"
            f" (achieved error estimate {err[bad]:.3e}, rel_tol {quad.rel_tol})",
            value=float(val[bad]),
            error_estimate=float(err[bad]),
        )
    out = []
    pos = 0
    for k in ks:
        pplus = np.clip(val[pos: pos + k], 0.0, 1.0)
        score = math.fsum(pplus.tolist()) / k
        out.append(AnalyticConsistency(k, min(max(score, 0.0), 1.0), tuple(pplus.tolist()),
                                       math.fsum(err[pos: pos + k].tolist()) / k))
        pos += k
    return out


def consistency_analytic(m: MomentSet, k: int, n_catalog: int, d: int,
                         quad: QuadratureConfig = QuadratureConfig()) -> float:
    """Expected Precision_k under i.i.d. zero-mean entries."""
    return consistency_breakdown(m, [k], n_catalog, d, quad)[0].score


def consistency_curve(m: MomentSet, k_range, n_catalog: int, d: int,
                      quad: QuadratureConfig = QuadratureConfig(), label: str = "") -> ConsistencyCurve:
    rows = consistency_breakdown(m, list(k_range), n_catalog, d, quad)
    return ConsistencyCurve(
        k_values=tuple(r.k for r in rows),
        scores=tuple(r.score for r in rows),
        stderr=tuple(0.0 for _ in rows),
        provenance="analytic",
        label=label,
        details={"pplus": [list(r.pplus) for r in rows], "abs_error": [r.abs_error for r in rows]},
    )


def pplus_from_order_statistics(i: int, p: InOutParams, quad: QuadratureConfig = QuadratureConfig()) -> float:
    """One p+ term through the public order-statistic callables.

    Slow, generic path; used to cross-check the fused kernel.
    """
    f = f_in_order_density(i, p)
    F = F_out_order_cdf(i, p)
    value, _, ok = _kernels.adaptive_simpson_np(
        lambda x: f(x) * F(x),
        p.mu_in - quad.half_width * p.sigma_in,
        p.mu_in + quad.half_width * p.sigma_in,
        rel_tol=quad.rel_tol,
        max_depth=quad.max_depth,
        panels=quad.panels,
    )
    if not ok:
        raise QuadratureError("quadrature did not converge", value=value)
    return value


__all__ = [
    "NormalApprox",
    "QuadratureConfig",
    "InOutParams",
    "AnalyticConsistency",
    "inner_product_moments",
    "inner_self_moments",
    "cov_xy_xz",
    "cov_xx_xy",
    "s_out_params",
    "s_in_params",
    "s_diff_params",
    "prob_in_beats_out",
    "prob_out_beats_in",
    "normal_order_density",
    "normal_order_cdf",
    "f_in_order_density",
    "F_out_order_cdf",
    "consistency_breakdown",
    "consistency_analytic",
    "consistency_curve",
    "pplus_from_order_statistics",
]
