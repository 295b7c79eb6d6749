"""Layer-wise adaptive rate scaling (LARS) and SGD baselines on a numpy MLP."""
from .nn import MLP, Batch, ParamGroup, ParamKind
from .optim import OptimizerConfig, ScheduleSpec, global_lr, lars_step, local_lr, sgd_step

__version__ = "0.1.0"

__all__ = ["MLP", "Batch", "ParamGroup", "ParamKind", "OptimizerConfig", "ScheduleSpec",
           "global_lr", "lars_step", "local_lr", "sgd_step"]
