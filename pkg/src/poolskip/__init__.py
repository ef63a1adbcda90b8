"""Pool Skip: max-pool / max-unpool / 3x3 conv skip module for CNNs, with a
closed-form oracle, elimination-singularity diagnostics and a small training
harness."""
from . import backend
from .autodiff import (
    GradTape,
    InertiaRecord,
    OptimizerConfig,
    backward,
    finite_diff_grad,
    inertia_probe,
    sgd_step,
)
from .diagnostics import LayerDiagnostics, dead_unit_fraction, hoyer_ratio, snapshot_report
from .module import (
    CompensationReport,
    PoolSkipConfig,
    Variant,
    compensation_decompose,
    poolskip_backward,
    poolskip_closed_form,
    poolskip_forward,
    validate_pool_size,
)
from .ops import ConvKernel, PoolIndices
from .tensor import Shape2D, Tensor, tensor_add, tensor_from_data, tensor_scale

__version__ = "0.1.0"
