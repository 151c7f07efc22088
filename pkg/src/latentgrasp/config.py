"""Flat key=value run configuration.

Keys for the two training stages carry a ``vae.`` / ``ldp.`` prefix because the
stages share option names (``optimizer.lr`` etc.); everything else is unprefixed.
Unknown keys are rejected, and every resolved config has a stable hash that is
logged and embedded in datasets, checkpoints, and results files.
"""

from __future__ import annotations

import hashlib
import math
from typing import Dict, Mapping

from .errors import UsageError

DEFAULTS: Dict[str, object] = {
    # stage 1: action chunk VAE
    "horizon": 16,
    "n_obs_steps": 2,
    "n_latent_dims": 16,
    "use_conv_encoder": True,
    "conv_latent_dims": 64,
    "conv_layer_num": 1,
    "use_rnn_decoder": True,
    "rnn_latent_dims": 64,
    "rnn_layer_num": 1,
    "kl_multiplier": 1e-6,
    "n_embed": 16,
    "use_vq": False,
    "vae.dataloader.batch_size": 128,
    "vae.optimizer.lr": 1e-3,
    "vae.optimizer.weight_decay": 1e-4,
    "vae.training.lr_scheduler": "cosine",
    "vae.training.lr_warmup_steps": 100,
    "vae.training.num_epochs": 1000,
    # stage 2: diffusion on the latent action space
    "observation_horizon": 2,
    "prediction_horizon": 16,
    "action_horizon": 8,
    "unet.diffusion_step_embed_dim": 256,
    "unet.down_dims": [64, 128, 256],  # desk-scale; [256, 512, 1024] selectable
    "unet.kernel_size": 5,
    "unet.n_groups": 8,
    "enable_ddim": True,
    "num_training_timesteps": 100,
    "num_inference_timesteps": 10,
    "prediction_type": "epsilon",
    "use_recon": True,
    "recon_loss_weight": 0.2,
    "obs_feature_dim": 64,
    "ldp.dataloader.batch_size": 64,
    "ldp.optimizer.lr": 1e-4,
    "ldp.optimizer.weight_decay": 1e-6,
    "ldp.training.lr_scheduler": "cosine",
    "ldp.training.lr_warmup_steps": 100,
    "ldp.training.num_epochs": 1500,
    "ldp.training.use_ema": True,
    "ldp.training.ema_power": 0.75,
    # inference pipeline
    "guidance": "latent",  # latent | condition | none
    "use_cue": True,
    "tau": 0.2,
    "k": 30,
    "w_t": 100.0,
    "w_r": 20.0,
    "nms_trans": 0.02,
    "nms_rot": math.radians(30.0),
    "select_strategy": "hps",  # hps | random | highest | nearest
    "detect_every_cycle": True,
    "discard_head_actions": 0,  # set 3 to drop the first actions of each chunk
    "detector_samples": 48,
    # simulator
    "raster_size": 64,
    "t_max": 150,
    "lift_height": 0.10,
    "max_step_translation": 0.03,
    "max_step_rotation": math.radians(15.0),
    "gripper_max_width": 0.08,
    "action_trans_scale": 0.1,  # tightens translation precision in the MSE
    # run control
    "seed": 0,
    "threads": 1,
}

VALID_GUIDANCE = ("latent", "condition", "none")
VALID_STRATEGIES = ("hps", "random", "highest", "nearest")


def parse_value(text: str, like: object) -> object:
    """Coerce a text value to the type of the corresponding default."""
    text = text.strip()
    if isinstance(like, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise UsageError(f"expected a boolean, got {text!r}")
    if isinstance(like, int):
        try:
            return int(text)
        except ValueError as exc:
            raise UsageError(f"expected an integer, got {text!r}") from exc
    if isinstance(like, float):
        try:
            return float(text)
        except ValueError as exc:
            raise UsageError(f"expected a number, got {text!r}") from exc
    if isinstance(like, list):
        inner = text.strip("[]")
        if not inner:
            return []
        try:
            return [int(v) for v in inner.split(",")]
        except ValueError as exc:
            raise UsageError(f"expected a list of integers, got {text!r}") from exc
    return text


def resolve(overrides: Mapping[str, object] | None = None) -> Dict[str, object]:
    """Defaults plus overrides; unknown keys are usage errors."""
    cfg = dict(DEFAULTS)
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(value, str) and not isinstance(DEFAULTS[key], str):
            value = parse_value(value, DEFAULTS[key])
        cfg[key] = value
    if cfg["guidance"] not in VALID_GUIDANCE:
        raise UsageError(f"guidance must be one of {VALID_GUIDANCE}")
    if cfg["select_strategy"] not in VALID_STRATEGIES:
        raise UsageError(f"select_strategy must be one of {VALID_STRATEGIES}")
    return cfg


def format_value(value: object) -> str:
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return "[" + ",".join(str(v) for v in value) + "]"
    return str(value)


def config_lines(cfg: Mapping[str, object]) -> str:
    return "".join(f"{k}={format_value(cfg[k])}\n" for k in sorted(cfg))


def config_hash(cfg: Mapping[str, object]) -> str:
    return hashlib.sha256(config_lines(cfg).encode("utf-8")).hexdigest()[:16]


def load_config_file(path) -> Dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out
