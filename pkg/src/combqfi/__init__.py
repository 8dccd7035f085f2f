"""Exact task QFI of N-step quantum processes under strategy constraints.

The package computes the maximal quantum Fisher information attainable by
parallel, sequential, quantum-SWITCH, causal-superposition and general
indefinite-causal-order strategies, synthesizes strategies attaining it,
and cross-validates every result with an independent state-QFI oracle.
"""

from .comb_algebra import (
    FactorizedComb,
    KrausChannel,
    choi_from_kraus,
    factorize,
    kraus_product_comb,
    link_product,
    purify,
    validate_comb,
)
from .qfi_oracle import (
    OracleReport,
    cfi,
    output_state,
    single_channel_qfi_scan,
    state_qfi_sld,
    verify_strategy,
)
from .sdp_engine import SdpProblem, SdpSolution, solve
from .strategy_spaces import (
    AffineSpace,
    StrategySetSpec,
    causal_witness_value,
    dual_space,
    ocb_process,
    ocb_witness,
    primal_space,
    switch_template,
)
from .strategy_synthesis import (
    IsometrySequence,
    StrategyChoi,
    comb_to_isometries,
    isometries_to_comb,
    optimal_strategy,
    purify_strategy,
    saddle_residual,
)
from .task_qfi import HermitianGauge, QfiResult, performance_operator, product_comb, task_qfi
from .tensor_algebra import (
    LabeledMatrix,
    SubsystemLayout,
    herm_expm,
    neutralize,
    partial_trace,
    partial_transpose,
    realify,
)

__all__ = [
    "AffineSpace",
    "FactorizedComb",
    "HermitianGauge",
    "IsometrySequence",
    "KrausChannel",
    "LabeledMatrix",
    "OracleReport",
    "QfiResult",
    "SdpProblem",
    "SdpSolution",
    "StrategyChoi",
    "StrategySetSpec",
    "SubsystemLayout",
    "causal_witness_value",
    "cfi",
    "choi_from_kraus",
    "comb_to_isometries",
    "dual_space",
    "factorize",
    "herm_expm",
    "isometries_to_comb",
    "kraus_product_comb",
    "link_product",
    "neutralize",
    "ocb_process",
    "ocb_witness",
    "optimal_strategy",
    "output_state",
    "partial_trace",
    "partial_transpose",
    "performance_operator",
    "primal_space",
    "product_comb",
    "purify",
    "purify_strategy",
    "realify",
    "saddle_residual",
    "single_channel_qfi_scan",
    "solve",
    "state_qfi_sld",
    "switch_template",
    "task_qfi",
    "validate_comb",
    "verify_strategy",
]

__version__ = "0.1.0"
