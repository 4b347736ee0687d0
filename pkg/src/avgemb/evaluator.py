"""Exact top-k retrieval, Precision_k and Monte Carlo Consistency_k.

Similarity is the plain inner product. Neighbors are drawn from the whole
catalog, subset members included, and ties are broken by ascending item
index so every result is reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .errors import DomainError, InvalidParameterError
from .stats_core import RandomSeed

PROVENANCES = ("analytic", "simulated", "empirical")
ORIGINS = ("synthetic", "file", "memory")


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """``n_items x dim`` catalog of item vectors.

    ``data`` is stored read-only and C-contiguous (float32 or float64).
    ``origin`` decides whether Monte Carlo curves over it are labelled
    ``simulated`` (synthetic draws) or ``empirical`` (anything else).
    """

    data: np.ndarray
    item_ids: Optional[tuple] = None
    origin: str = "memory"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidParameterError(f"embedding data must be a non-empty 2-D array, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr)
        if not np.isfinite(arr).all():
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise InvalidParameterError(f"non-finite entry at row {bad[0]}, column {bad[1]}")
        if arr.flags.writeable and arr is self.data:
            arr = arr.view()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        if self.item_ids is not None:
            ids = tuple(self.item_ids)
            if len(ids) != arr.shape[0]:
                raise InvalidParameterError(f"{len(ids)} item ids for {arr.shape[0]} items")
            if len(set(ids)) != len(ids):
                raise InvalidParameterError("item ids must be unique")
            object.__setattr__(self, "item_ids", ids)
        if self.origin not in ORIGINS:
            raise InvalidParameterError(f"origin must be one of {ORIGINS}")

    @property
    def n_items(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


class SubsetSample:
    """Sorted, duplicate-free set of k item indices."""

    __slots__ = ("indices",)

    def __init__(self, indices: Sequence[int]):
        idx = np.unique(np.asarray(indices, dtype=np.int64))
        if idx.size != len(indices):
            raise InvalidParameterError("subset indices must be unique")
        if idx.size < 1:
            raise InvalidParameterError("subset must hold at least one item")
        if idx[0] < 0:
            raise InvalidParameterError("subset indices must be non-negative")
        idx.flags.writeable = False
        self.indices = idx

    @property
    def k(self) -> int:
        return int(self.indices.size)

    def check(self, m: EmbeddingMatrix):
        if self.indices[-1] >= m.n_items:
            raise InvalidParameterError(f"subset index {self.indices[-1]} out of range for {m.n_items} items")

    def __repr__(self):
        return f"SubsetSample({self.indices.tolist()})"


@dataclass(frozen=True)
class ConsistencyCurve:
    """Consistency scores over a grid of k, with where they came from."""

    k_values: tuple
    scores: tuple
    stderr: tuple
    provenance: str
    trials: int = 0
    seed: Optional[RandomSeed] = None
    label: str = ""
    details: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n = len(self.k_values)
        if len(self.scores) != n or len(self.stderr) != n:
            raise InvalidParameterError("k_values, scores and stderr must have equal lengths")
        if self.provenance not in PROVENANCES:
            raise InvalidParameterError(f"provenance must be one of {PROVENANCES}")
        for s in self.scores:
            if not 0.0 <= s <= 1.0:
                raise InvalidParameterError(f"score {s} outside [0, 1]")
        if any(e < 0 for e in self.stderr):
            raise InvalidParameterError("stderr must be >= 0")
        object.__setattr__(self, "k_values", tuple(int(k) for k in self.k_values))
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        object.__setattr__(self, "stderr", tuple(float(e) for e in self.stderr))

    def score_at(self, k: int) -> float:
        return self.scores[self.k_values.index(k)]

    def as_dict(self) -> dict:
        return {
            "label": self.label,
            "provenance": self.provenance,
            "k_values": list(self.k_values),
            "scores": list(self.scores),
            "stderr": list(self.stderr),
            "trials": self.trials,
            "seed": None if self.seed is None else self.seed.as_dict(),
            "details": self.details,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ConsistencyCurve":
        seed = raw.get("seed")
        return cls(
            k_values=tuple(raw["k_values"]),
            scores=tuple(raw["scores"]),
            stderr=tuple(raw["stderr"]),
            provenance=raw["provenance"],
            trials=int(raw.get("trials", 0)),
            seed=None if seed is None else RandomSeed(seed["seed"], seed["stream"]),
            label=raw.get("label", ""),
            details=raw.get("details", {}),
        )


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------


def centroid(m: EmbeddingMatrix, s: SubsetSample) -> np.ndarray:
    s.check(m)
    return m.data[s.indices].astype(np.float64).mean(axis=0)


def top_k(query, m: EmbeddingMatrix, k: int) -> np.ndarray:
    """Indices of the k items with the largest inner product, best first."""
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.size != m.dim:
        raise InvalidParameterError(f"query has dimension {q.size}, catalog has {m.dim}")
    if not 1 <= k <= m.n_items:
        raise InvalidParameterError(f"k must be in [1, {m.n_items}], got {k}")
    idx, _ = _kernels.topk(m.data, q, int(k))
    return idx


def precision_k(m: EmbeddingMatrix, s: SubsetSample) -> float:
    """Fraction of the subset found among the top-k neighbors of its centroid."""
    s.check(m)
    return float(_kernels.precision_batch(m.data, s.indices[None, :])[0])


def draw_subsets(n_items: int, k: int, trials: int, seed: RandomSeed) -> np.ndarray:
    """``trials x k`` sorted uniform k-subsets; trial t uses ``seed.derive(t)``."""
    bounds = n_items - np.arange(k, dtype=np.int64)
    offsets = np.empty((trials, k), dtype=np.int64)
    for t in range(trials):
        offsets[t] = seed.derive(t).generator().integers(0, bounds)
    return _kernels.subsets_from_offsets(n_items, offsets)


def _mean_and_stderr(values: np.ndarray):
    n = values.size
    mean = math.fsum(values.tolist()) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum(((values - mean) ** 2).tolist()) / (n - 1)
    return mean, math.sqrt(var / n)


def consistency_mc(m: EmbeddingMatrix, k: int, trials: int, seed: RandomSeed):
    """Monte Carlo Consistency_k: mean and standard error of Precision_k."""
    if not 1 <= k <= m.n_items:
        raise InvalidParameterError(f"k must be in [1, {m.n_items}], got {k}")
    if trials < 1:
        raise InvalidParameterError(f"trials must be >= 1, got {trials}")
    if k == m.n_items:
        return 1.0, 0.0
    subsets = draw_subsets(m.n_items, k, trials, seed)
    precisions = _kernels.precision_batch(m.data, subsets)
    score, stderr = _mean_and_stderr(precisions)
    return min(max(score, 0.0), 1.0), stderr


def consistency_curve_mc(m: EmbeddingMatrix, k_range, trials: int, seed: RandomSeed,
                         provenance: Optional[str] = None, label: str = "") -> ConsistencyCurve:
    """Batch of ``consistency_mc`` calls; the entry for k uses ``seed.derive(k)``."""
    ks = [int(k) for k in k_range]
    if not ks:
        raise InvalidParameterError("empty k range")
    if provenance is None:
        provenance = "simulated" if m.origin == "synthetic" else "empirical"
    scores, errs = [], []
    for k in ks:
        s, e = consistency_mc(m, k, trials, seed.derive(k))
        scores.append(s)
        errs.append(e)
    return ConsistencyCurve(tuple(ks), tuple(scores), tuple(errs), provenance, trials, seed, label)


def similarity_sample(m: EmbeddingMatrix, pairs: int, seed: RandomSeed) -> np.ndarray:
    """Inner products of ``pairs`` uniformly drawn index pairs with i != j."""
    if m.n_items < 2:
        raise DomainError("need at least two items to form a pair")
    if pairs < 1:
        raise InvalidParameterError("pairs must be >= 1")
    rng = seed.generator()
    i = rng.integers(0, m.n_items, size=pairs)
    j = rng.integers(0, m.n_items - 1, size=pairs)
    j += j >= i
    a = m.data[i].astype(np.float64)
    b = m.data[j].astype(np.float64)
    return np.einsum("ij,ij->i", a, b)


@dataclass(frozen=True)
class PairSimilarityStats:
    """All-pairs similarity sample with jackknife standard errors.

    The n(n-1)/2 similarities share vectors and are correlated, so naive
    standard errors would be far too small; the delete-one-vector jackknife
    accounts for that.
    """

    values: np.ndarray
    mean: float
    variance: float
    mean_stderr: float
    variance_stderr: float


def all_pair_similarities(m: EmbeddingMatrix) -> PairSimilarityStats:
    n = m.n_items
    if n < 3:
        raise DomainError("need at least three items for jackknife pair statistics")
    X = m.data.astype(np.float64)
    G = X @ X.T
    iu = np.triu_indices(n, 1)
    values = G[iu]
    diag = np.diag(G)
    row1 = G.sum(axis=1) - diag
    row2 = (G * G).sum(axis=1) - diag * diag
    s1 = values.sum()
    s2 = (values * values).sum()
    p_all = n * (n - 1) / 2
    p_del = (n - 1) * (n - 2) / 2
    mean = s1 / p_all
    variance = s2 / p_all - mean * mean
    m_del = (s1 - row1) / p_del
    v_del = (s2 - row2) / p_del - m_del * m_del
    scale = (n - 1) / n
    mean_se = math.sqrt(scale * np.sum((m_del - m_del.mean()) ** 2))
    var_se = math.sqrt(scale * np.sum((v_del - v_del.mean()) ** 2))
    return PairSimilarityStats(values, float(mean), float(variance), mean_se, var_se)
