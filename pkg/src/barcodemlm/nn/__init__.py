from barcodemlm.nn import functional
from barcodemlm.nn.checkpoint import load_tensors, save_tensors
from barcodemlm.nn.gradcheck import finite_difference_check
from barcodemlm.nn.optim import AdamW, OptimizerState, adamw_step, linear_schedule, step_schedule

__all__ = [
    "AdamW",
    "OptimizerState",
    "adamw_step",
    "finite_difference_check",
    "functional",
    "linear_schedule",
    "load_tensors",
    "save_tensors",
    "step_schedule",
]
