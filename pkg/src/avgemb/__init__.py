"""Consistency of average embeddings: closed form, Monte Carlo and empirical."""

from .analytic import (
    InOutParams,
    NormalApprox,
    QuadratureConfig,
    consistency_analytic,
    consistency_breakdown,
    consistency_curve,
    inner_product_moments,
    prob_in_beats_out,
    s_diff_params,
    s_in_params,
    s_out_params,
)
from .datasets import DiagnosticsReport, center, diagnostics, load_embeddings, synth, write_embeddings
from .errors import (
    AvgEmbError,
    DegenerateError,
    DomainError,
    FileFormatError,
    InvalidParameterError,
    QuadratureError,
)
from .evaluator import (
    ConsistencyCurve,
    EmbeddingMatrix,
    SubsetSample,
    centroid,
    consistency_curve_mc,
    consistency_mc,
    precision_k,
    top_k,
)
from .report import RunReport
from .stats_core import DistributionSpec, MomentSet, RandomSeed, estimate_moments

__version__ = "0.1.0"
