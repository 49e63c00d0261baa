"""Energy-aware multi-exit convolutional classifiers."""

__version__ = "0.1.0"

from .dataset import Dataset, load_cifar10, synthetic_blobs  # noqa: E402
from .energy import MacBreakdown, mac_network  # noqa: E402
from .exit_policy import ExitPolicyParams, evaluate_policy, select_exit  # noqa: E402
from .model import (  # noqa: E402
    Arch,
    MultiExitModel,
    build_multi_exit,
    build_single,
    count_params,
    load_checkpoint,
    save_checkpoint,
)
from .training import TrainConfig, train_combined, train_individual, train_single  # noqa: E402

__all__ = [
    "Arch", "Dataset", "ExitPolicyParams", "MacBreakdown", "MultiExitModel", "TrainConfig",
    "build_multi_exit", "build_single", "count_params", "evaluate_policy", "load_checkpoint",
    "load_cifar10", "mac_network", "save_checkpoint", "select_exit", "synthetic_blobs",
    "train_combined", "train_individual", "train_single",
]
