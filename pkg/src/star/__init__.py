"""Bit-exact functional simulator of a resistive-crossbar softmax engine
for attention models, plus a parameterized cost and pipeline model."""

__version__ = "0.1.0"

from .fxp import FxFormat, FxValue, dequantize, fx_sub, quantize
from .crossbar import (
    CamTable,
    LutTable,
    VmmUnit,
    cam_search,
    first_set_index,
    lut_read,
    merge_matches,
    sub_drive,
    vmm_dot,
)
from .softmax_engine import (
    EngineConfig,
    EngineTrace,
    SoftmaxEngine,
    divide,
    exp_stage,
    find_max_and_subtract,
    reference_softmax,
    softmax,
    strip_sign,
)
from .attention import (
    AttentionConfig,
    ErrorReport,
    attention_forward,
    bitwidth_sweep,
    error_metrics,
    synth_logits,
)
from .costmodel import (
    Baselines,
    CostParams,
    CostReport,
    StageLatencyModel,
    cost_report,
    efficiency,
    op_count,
    pipeline_schedule,
    softmax_latency,
)

__all__ = [
    "__version__",
    "FxFormat",
    "FxValue",
    "quantize",
    "dequantize",
    "fx_sub",
    "CamTable",
    "LutTable",
    "VmmUnit",
    "cam_search",
    "merge_matches",
    "first_set_index",
    "sub_drive",
    "lut_read",
    "vmm_dot",
    "EngineConfig",
    "EngineTrace",
    "SoftmaxEngine",
    "find_max_and_subtract",
    "strip_sign",
    "exp_stage",
    "divide",
    "softmax",
    "reference_softmax",
    "AttentionConfig",
    "ErrorReport",
    "attention_forward",
    "error_metrics",
    "bitwidth_sweep",
    "synth_logits",
    "CostParams",
    "CostReport",
    "Baselines",
    "StageLatencyModel",
    "cost_report",
    "op_count",
    "softmax_latency",
    "pipeline_schedule",
    "efficiency",
]
