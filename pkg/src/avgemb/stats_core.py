"""Scalar special functions, moment arithmetic and seeded sampling.

Kurtosis is the plain (non-excess) fourth standardized moment throughout,
so a normal distribution has kurtosis 3 and Rademacher has 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy import special

from .errors import DegenerateError, DomainError, InvalidParameterError

_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_U64 = 1 << 64
# Rounding slack for the Pearson bound kurtosis >= skewness**2 + 1; empirical
# distributions sit exactly on it (two-point laws) and must not be rejected.
_FEASIBILITY_SLACK = 1e-9


# --------------------------------------------------------------------------
# moments
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentSet:
    """Mean, variance, skewness and plain kurtosis of one scalar law."""

    mean: float
    variance: float
    skewness: float
    kurtosis: float

    def __post_init__(self):
        for name in ("mean", "variance", "skewness", "kurtosis"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidParameterError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, float(value))
        if self.variance < 0:
            raise InvalidParameterError(f"variance must be >= 0, got {self.variance}")
        bound = self.skewness**2 + 1.0
        if self.kurtosis < bound - _FEASIBILITY_SLACK * max(1.0, bound):
            raise InvalidParameterError(
                f"infeasible moments: kurtosis {self.kurtosis} < skewness^2 + 1 = {bound}"
            )

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)

    def as_dict(self) -> dict:
        return {
            "mean": self.mean,
            "variance": self.variance,
            "skewness": self.skewness,
            "kurtosis": self.kurtosis,
        }


def estimate_moments(values: Iterable[float]) -> MomentSet:
    """Population moment estimates (1/n normalization) of a flat sample."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < 4:
        raise InvalidParameterError(f"need at least 4 values, got {x.size}")
    mean = float(np.mean(x))
    dev = x - mean
    dev2 = dev * dev
    m2 = float(np.mean(dev2))
    if m2 <= 0.0:
        raise DegenerateError("zero variance: moments beyond the mean are undefined")
    m3 = float(np.mean(dev2 * dev))
    m4 = float(np.mean(dev2 * dev2))
    return MomentSet(mean, m2, m3 / m2**1.5, m4 / (m2 * m2))


# --------------------------------------------------------------------------
# distributions
# --------------------------------------------------------------------------

DISTRIBUTION_KINDS = ("normal", "shifted_normal", "uniform", "rademacher", "beta")


@dataclass(frozen=True)
class DistributionSpec:
    """A samplable entry distribution together with its exact moments.

    Use the classmethod constructors; ``params`` is the kind-specific tuple
    ``(mean, sd)``, ``(lo, hi)``, ``()`` or ``(alpha, beta)``.
    ``shifted_normal`` samples exactly like ``normal`` and only differs in
    its default mean of 0.5.
    """

    kind: str
    params: tuple = ()
    moments: MomentSet = field(init=False, compare=False)

    def __post_init__(self):
        if self.kind not in DISTRIBUTION_KINDS:
            raise InvalidParameterError(f"unknown distribution kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        object.__setattr__(self, "moments", _theoretical_moments(self.kind, self.params))

    @classmethod
    def normal(cls, mean=0.0, sd=1.0):
        return cls("normal", (mean, sd))

    @classmethod
    def shifted_normal(cls, mean=0.5, sd=1.0):
        return cls("shifted_normal", (mean, sd))

    @classmethod
    def uniform(cls, lo=-1.0, hi=1.0):
        return cls("uniform", (lo, hi))

    @classmethod
    def rademacher(cls):
        return cls("rademacher", ())

    @classmethod
    def beta(cls, alpha=2.0, beta=2.0):
        return cls("beta", (alpha, beta))

    def describe(self) -> dict:
        names = {
            "normal": ("mean", "sd"),
            "shifted_normal": ("mean", "sd"),
            "uniform": ("lo", "hi"),
            "rademacher": (),
            "beta": ("alpha", "beta"),
        }[self.kind]
        return {"kind": self.kind, **dict(zip(names, self.params))}

    def sample(self, rng: np.random.Generator, shape, dtype=np.float64) -> np.ndarray:
        dtype = np.dtype(dtype)
        if self.kind in ("normal", "shifted_normal"):
            mean, sd = self.params
            out = rng.standard_normal(shape, dtype=dtype)
            if sd != 1.0:
                out *= dtype.type(sd)
            if mean != 0.0:
                out += dtype.type(mean)
            return out
        if self.kind == "uniform":
            lo, hi = self.params
            out = rng.random(shape, dtype=dtype)
            out *= dtype.type(hi - lo)
            out += dtype.type(lo)
            return out
        if self.kind == "rademacher":
            bits = rng.integers(0, 2, size=shape, dtype=np.int8)
            return (2 * bits - 1).astype(dtype)
        alpha, beta = self.params
        return rng.beta(alpha, beta, size=shape).astype(dtype, copy=False)


def _theoretical_moments(kind, params) -> MomentSet:
    if kind in ("normal", "shifted_normal"):
        if len(params) != 2:
            raise InvalidParameterError(f"{kind} takes (mean, sd)")
        mean, sd = params
        if not sd > 0:
            raise InvalidParameterError(f"sd must be > 0, got {sd}")
        return MomentSet(mean, sd * sd, 0.0, 3.0)
    if kind == "uniform":
        if len(params) != 2:
            raise InvalidParameterError("uniform takes (lo, hi)")
        lo, hi = params
        if not hi > lo:
            raise InvalidParameterError(f"uniform needs lo < hi, got ({lo}, {hi})")
        return MomentSet(0.5 * (lo + hi), (hi - lo) ** 2 / 12.0, 0.0, 9.0 / 5.0)
    if kind == "rademacher":
        if params:
            raise InvalidParameterError("rademacher takes no parameters")
        return MomentSet(0.0, 1.0, 0.0, 1.0)
    if len(params) != 2:
        raise InvalidParameterError("beta takes (alpha, beta)")
    a, b = params
    if not (a > 0 and b > 0):
        raise InvalidParameterError(f"beta parameters must be > 0, got ({a}, {b})")
    s = a + b
    mean = a / s
    var = a * b / (s * s * (s + 1.0))
    skew = 2.0 * (b - a) * math.sqrt(s + 1.0) / ((s + 2.0) * math.sqrt(a * b))
    excess = 6.0 * ((a - b) ** 2 * (s + 1.0) - a * b * (s + 2.0)) / (a * b * (s + 2.0) * (s + 3.0))
    return MomentSet(mean, var, skew, excess + 3.0)


# --------------------------------------------------------------------------
# seeding
# --------------------------------------------------------------------------


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) % _U64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) % _U64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) % _U64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class RandomSeed:
    """Key of a counter-based Philox stream.

    ``(seed, stream)`` is used verbatim as the 128-bit Philox key, so equal
    pairs always replay the same sequence. ``derive`` hashes a child index
    into a fresh stream, which is how per-k and per-trial sub-streams are
    obtained without any shared generator state.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            value = getattr(self, name)
            if not (isinstance(value, (int, np.integer)) and 0 <= int(value) < _U64):
                raise InvalidParameterError(f"{name} must be an unsigned 64-bit integer, got {value!r}")
            object.__setattr__(self, name, int(value))

    def derive(self, *children: int) -> "RandomSeed":
        stream = self.stream
        for child in children:
            stream = _splitmix64(stream ^ _splitmix64(int(child) % _U64))
        return RandomSeed(self.seed, stream)

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def as_dict(self) -> dict:
        return {"seed": self.seed, "stream": self.stream}


# --------------------------------------------------------------------------
# special functions
# --------------------------------------------------------------------------


def erf(x):
    """Gauss error function; scalars go through libm, arrays through scipy."""
    if np.ndim(x) == 0:
        return math.erf(float(x))
    return special.erf(np.asarray(x, dtype=np.float64))


def erfc(x):
    """Complementary error function, accurate in the right tail."""
    if np.ndim(x) == 0:
        return math.erfc(float(x))
    return special.erfc(np.asarray(x, dtype=np.float64))


def _standardize(x, mean, sd):
    if not sd > 0:
        raise InvalidParameterError(f"sd must be > 0, got {sd}")
    return (np.asarray(x, dtype=np.float64) - mean) / sd


def _scalar_out(result, x):
    return float(result) if np.ndim(x) == 0 else result


def normal_pdf(x, mean=0.0, sd=1.0):
    z = _standardize(x, mean, sd)
    return _scalar_out(np.exp(-0.5 * z * z - _LOG_SQRT_2PI) / sd, x)


def normal_cdf(x, mean=0.0, sd=1.0):
    z = _standardize(x, mean, sd)
    return _scalar_out(0.5 * special.erfc(-z / _SQRT2), x)


def normal_sf(x, mean=0.0, sd=1.0):
    z = _standardize(x, mean, sd)
    return _scalar_out(0.5 * special.erfc(z / _SQRT2), x)


def normal_log_cdf(x, mean=0.0, sd=1.0):
    z = _standardize(x, mean, sd)
    return _scalar_out(special.log_ndtr(z), x)


def normal_log_sf(x, mean=0.0, sd=1.0):
    z = _standardize(x, mean, sd)
    return _scalar_out(special.log_ndtr(-z), x)


# --------------------------------------------------------------------------
# log binomial
# --------------------------------------------------------------------------

_DIRECT_SUM_BELOW = 20


def _stirling_tail(x: float) -> float:
    """lgamma(x + 1) - [(x + 1/2) log x - x + log sqrt(2 pi)], valid for x >= 20."""
    r = 1.0 / x
    r2 = r * r
    return r * (1 / 12 - r2 * (1 / 360 - r2 * (1 / 1260 - r2 * (1 / 1680 - r2 / 1188))))


def log_binomial(n: int, j: int) -> float:
    """Natural log of C(n, j) with ~1e-15 relative error up to n ~ 1e9.

    Small complements are summed term by term; otherwise the Stirling
    expansion is differenced analytically so the huge log-factorials never
    cancel numerically.
    """
    n, j = int(n), int(j)
    if n < 0 or j < 0 or j > n:
        raise DomainError(f"log_binomial requires 0 <= j <= n, got n={n}, j={j}")
    m = min(j, n - j)
    if m == 0:
        return 0.0
    if m < _DIRECT_SUM_BELOW:
        base = n - m
        return math.fsum(math.log((base + t) / t) for t in range(1, m + 1))
    a = n - m
    terms = (
        m * math.log(n / m),
        -(a + 0.5) * math.log1p(-m / n),
        -0.5 * math.log(m),
        -_LOG_SQRT_2PI,
        _stirling_tail(n) - _stirling_tail(a) - _stirling_tail(m),
    )
    return math.fsum(terms)


def log_binomial_range(n: int, j_lo: int, j_hi: int) -> np.ndarray:
    """``log_binomial(n, j)`` for every j in ``[j_lo, j_hi]`` inclusive."""
    return np.array([log_binomial(n, j) for j in range(j_lo, j_hi + 1)], dtype=np.float64)


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------

_SAMPLE_CHUNK_ROWS = 65536


def sample_matrix(spec: DistributionSpec, n: int, d: int, seed: RandomSeed, dtype=np.float64) -> np.ndarray:
    """``n x d`` matrix of i.i.d. draws from ``spec``, keyed by ``seed``.

    Rows are produced in fixed-size chunks from a single Philox stream, so
    the output is bitwise reproducible and peak memory stays near the size
    of the result even for float32 catalogs of millions of rows.
    """
    n, d = int(n), int(d)
    if n < 1 or d < 1:
        raise InvalidParameterError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    rng = seed.generator()
    out = np.empty((n, d), dtype=dtype)
    for start in range(0, n, _SAMPLE_CHUNK_ROWS):
        stop = min(n, start + _SAMPLE_CHUNK_ROWS)
        out[start:stop] = spec.sample(rng, (stop - start, d), dtype=dtype)
    return out
