"""Statistically gated caching for toy diffusion-transformer generation.

Tokens whose representations barely move between timesteps bypass the block
stack through a learned affine map; whole blocks are skipped when the
relative change of their input passes a chi-squared test, which bounds the
relative error each skip can introduce. An interpretability toolkit
(autoregressive background/motion decomposition, exact Harsanyi token
interactions, Taylor and drift diagnostics) explains when caching is safe.
"""

from .approx import (
    ApproximatorFit,
    LinearApproximator,
    fit_affine_map,
    fit_approximators,
    identity_approximator,
    load_approximators,
    save_approximators,
)
from .engine import (
    CacheDecision,
    EngineConfig,
    EngineState,
    FastCacheEngine,
    RunReport,
    fastcache_timestep,
    record_full_trace,
    replay_gate_decisions,
    run_fixed_interval,
    run_full,
    run_generation,
)
from .model import (
    Schedule,
    ToyModel,
    TransformerBlock,
    block_flops,
    linear_flops,
    load_model,
    make_schedule,
    save_model,
)
from .saliency import (
    SaliencyConfig,
    TokenPartition,
    blend,
    compute_saliency,
    partition_tokens,
    reassemble,
    static_bypass,
)
from .stats import (
    ChiSquareTest,
    DegenerateReferenceError,
    cache_error_bound,
    chi2_cdf,
    chi2_quantile,
    relative_change,
    should_skip,
)
from .traceio import (
    Trace,
    TraceCorruptionError,
    TraceFormatError,
    TraceFrame,
    read_trace,
    write_trace,
)
from . import interp

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "interp",
    "ChiSquareTest",
    "DegenerateReferenceError",
    "chi2_cdf",
    "chi2_quantile",
    "relative_change",
    "should_skip",
    "cache_error_bound",
    "SaliencyConfig",
    "TokenPartition",
    "compute_saliency",
    "partition_tokens",
    "static_bypass",
    "blend",
    "reassemble",
    "LinearApproximator",
    "ApproximatorFit",
    "identity_approximator",
    "fit_affine_map",
    "fit_approximators",
    "save_approximators",
    "load_approximators",
    "TransformerBlock",
    "ToyModel",
    "Schedule",
    "make_schedule",
    "block_flops",
    "linear_flops",
    "save_model",
    "load_model",
    "Trace",
    "TraceFrame",
    "TraceFormatError",
    "TraceCorruptionError",
    "read_trace",
    "write_trace",
    "EngineConfig",
    "EngineState",
    "CacheDecision",
    "RunReport",
    "FastCacheEngine",
    "fastcache_timestep",
    "run_generation",
    "run_full",
    "run_fixed_interval",
    "record_full_trace",
    "replay_gate_decisions",
]
