from .blocks import (
    ConditionalResBlock1d,
    Conv1dBlock,
    Downsample1d,
    SinusoidalPosEmb,
    Upsample1d,
    mlp,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .optim import EmaTracker, cosine_warmup_lr

__all__ = [
    "ConditionalResBlock1d",
    "Conv1dBlock",
    "Downsample1d",
    "EmaTracker",
    "SinusoidalPosEmb",
    "Upsample1d",
    "cosine_warmup_lr",
    "grad_check",
    "load_checkpoint",
    "mlp",
    "save_checkpoint",
]
