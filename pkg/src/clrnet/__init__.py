"""Channel-wise lightweight reprogramming on a frozen CNN for task-incremental learning."""

__version__ = "0.1.0"

from .arch import ArchSpec, preset  # noqa: E402
from .backbone import BackboneState, build_network, forward_features, freeze, pretrain  # noqa: E402
from .clr import ClrVariant, count_parameters, flop_estimate, make_adapter, reprogrammed_forward  # noqa: E402
from .continual import AccuracyMatrix, TaskHyper, bootstrap_summary, run_sequence  # noqa: E402

__all__ = [
    "__version__", "ArchSpec", "preset", "BackboneState", "build_network", "forward_features", "freeze",
    "pretrain", "ClrVariant", "count_parameters", "flop_estimate", "make_adapter", "reprogrammed_forward",
    "AccuracyMatrix", "TaskHyper", "bootstrap_summary", "run_sequence",
]
