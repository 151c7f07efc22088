"""Stage 2: diffusion over the action latent space.

A temporal 1-D UNet denoises the VAE latent, conditioned via FiLM on a
sinusoidal timestep embedding and features from a small conv encoder over the
stacked wrist/agent rasters plus proprioception. An auxiliary head reconstructs
the cue-masked wrist raster from the UNet bottleneck during training. Sampling
is deterministic DDIM over an evenly spaced sub-schedule.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import (
    BadConfig,
    CheckpointMismatch,
    EmptyDataset,
    IndexOutOfRange,
    MissingVAE,
    ShapeMismatch,
)
from .netcore import (
    ConditionalResBlock1d,
    Downsample1d,
    EmaTracker,
    SinusoidalPosEmb,
    Upsample1d,
    cosine_warmup_lr,
    load_checkpoint,
    mlp,
    save_checkpoint,
)
from .netcore.training import (
    epoch_permutation,
    load_module_state,
    module_state_arrays,
    optimizer_state_arrays,
    restore_optimizer_state,
    step_generator,
)
from .vae import GRASP_CONDITION_DIM, ActionChunkVAE

RASTER_CHANNELS = 2  # [depth, cue]
PROPRIO_DIM = 10


# -- noise schedule ----------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal coefficients alpha_bar[0..K] with alpha_bar[0] = 1."""

    K: int
    alpha_bar: np.ndarray

    def __post_init__(self):
        if self.alpha_bar.shape != (self.K + 1,):
            raise BadConfig("alpha_bar must have K+1 entries")
        if self.alpha_bar[0] != 1.0:
            raise BadConfig("alpha_bar[0] must be 1")
        if not (np.diff(self.alpha_bar) < 0).all():
            raise BadConfig("alpha_bar must be strictly decreasing")
        if self.alpha_bar[-1] <= 0.0:
            raise BadConfig("alpha_bar must stay positive")


def build_schedule(K: int = 100, kind: str = "squared-cosine") -> NoiseSchedule:
    """Noise schedule for K training timesteps."""
    if K < 2:
        raise BadConfig("schedule needs at least 2 timesteps")
    if kind == "squared-cosine":
        s = 0.008
        t = np.arange(K + 1) / K
        f = np.cos((t + s) / (1.0 + s) * np.pi / 2.0) ** 2
        raw = f / f[0]
        betas = np.clip(1.0 - raw[1:] / raw[:-1], 0.0, 0.999)
    elif kind == "linear":
        betas = np.linspace(1e-4, 0.02, K)
    else:
        raise BadConfig(f"unknown schedule kind {kind!r}")
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(K, alpha_bar)


def q_sample(z0: torch.Tensor, k: torch.Tensor, eps: torch.Tensor,
             sched: NoiseSchedule) -> torch.Tensor:
    """Forward marginal sqrt(ab_k) z0 + sqrt(1 - ab_k) eps, k in [1, K] per item."""
    k = torch.as_tensor(k).reshape(-1)
    if ((k < 1) | (k > sched.K)).any():
        raise IndexOutOfRange(f"timestep outside [1, {sched.K}]")
    ab = torch.as_tensor(sched.alpha_bar, dtype=z0.dtype)[k]
    shape = (-1,) + (1,) * (z0.ndim - 1)
    return ab.sqrt().reshape(shape) * z0 + (1.0 - ab).sqrt().reshape(shape) * eps


def ddim_timesteps(K: int, steps: int) -> np.ndarray:
    """Evenly spaced sub-schedule K = k_0 > k_1 > ... > k_steps = 0."""
    if not 1 <= steps <= K:
        raise BadConfig(f"inference steps must be in [1, {K}]")
    ks = np.round(np.linspace(K, 0, steps + 1)).astype(int)
    if not (np.diff(ks) < 0).all():
        raise BadConfig("sub-schedule is not strictly decreasing")
    return ks


def ddim_step(z_k: torch.Tensor, eps_hat: torch.Tensor, k: int, k_prev: int,
              sched: NoiseSchedule) -> torch.Tensor:
    """One deterministic (eta = 0) DDIM update from timestep k to k_prev."""
    ab_k = float(sched.alpha_bar[k])
    ab_prev = float(sched.alpha_bar[k_prev])
    x0 = (z_k - math.sqrt(1.0 - ab_k) * eps_hat) / math.sqrt(ab_k)
    return math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * eps_hat


# -- observation handling ----------------------------------------------------

@dataclass
class ObservationBundle:
    """Stacked wrist/agent rasters (n_obs, H, W, 2) and proprio history (n_obs, 10)."""

    wrist: np.ndarray
    agent: np.ndarray
    proprio: np.ndarray

    def __post_init__(self):
        self.wrist = np.asarray(self.wrist, dtype=np.float32)
        self.agent = np.asarray(self.agent, dtype=np.float32)
        self.proprio = np.asarray(self.proprio, dtype=np.float32)
        if self.wrist.shape != self.agent.shape or self.wrist.ndim != 4:
            raise ShapeMismatch("wrist and agent rasters must share (n_obs, H, W, C)")
        if self.wrist.shape[-1] != RASTER_CHANNELS:
            raise ShapeMismatch(f"rasters must have {RASTER_CHANNELS} channels")
        if self.proprio.shape != (self.wrist.shape[0], PROPRIO_DIM):
            raise ShapeMismatch("proprio must be (n_obs, 10)")

    def raster_stack(self) -> np.ndarray:
        """(n_obs * 2 cams * 2 ch, H, W) channel-first stack, wrist first per step."""
        per_step = [np.concatenate([self.wrist[i], self.agent[i]], axis=-1)
                    for i in range(self.wrist.shape[0])]
        stacked = np.concatenate(per_step, axis=-1)
        return np.moveaxis(stacked, -1, 0)


def zero_cue_channels(rasters: np.ndarray) -> np.ndarray:
    """Drop the cue information from a channel-first raster stack (pure config
    change for the no-cue ablation; the layout and code path stay identical)."""
    out = np.array(rasters, copy=True)
    out[..., 1::2, :, :] = 0.0
    return out


# -- networks ----------------------------------------------------------------

class ObservationEncoder(nn.Module):
    """Conv trunk over the raster stack plus a dense proprio embedding."""

    def __init__(self, in_channels: int, proprio_dim: int, feature_dim: int,
                 conv_widths=(16, 32, 64, 64), proprio_hidden: int = 32):
        super().__init__()
        layers = []
        cin = in_channels
        for w in conv_widths:
            layers += [nn.Conv2d(cin, w, 3, stride=2, padding=1), nn.SiLU()]
            cin = w
        layers.append(nn.AdaptiveAvgPool2d(1))
        self.conv = nn.Sequential(*layers)
        self.proprio = mlp([proprio_dim, proprio_hidden, proprio_hidden])
        self.head = nn.Linear(cin + proprio_hidden, feature_dim)

    def forward(self, rasters: torch.Tensor, proprio: torch.Tensor) -> torch.Tensor:
        h = self.conv(rasters).flatten(1)
        p = self.proprio(proprio.flatten(1))
        return self.head(torch.cat([h, p], dim=-1))


class ReconHead(nn.Module):
    """Transposed-conv stack from a pooled UNet feature map to a 2-channel raster."""

    def __init__(self, in_channels: int, raster_size: int, base_channels: int = 8):
        super().__init__()
        if raster_size % 16 != 0:
            raise BadConfig("raster size must be divisible by 16")
        self.seed_hw = raster_size // 16
        widths = [8 * base_channels, 4 * base_channels, 2 * base_channels,
                  base_channels]
        self.seed_channels = widths[0]
        self.proj = nn.Linear(in_channels, widths[0] * self.seed_hw * self.seed_hw)
        layers = []
        for cin, cout in zip(widths[:-1], widths[1:]):
            layers += [nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1),
                       nn.SiLU()]
        layers.append(nn.ConvTranspose2d(widths[-1], RASTER_CHANNELS, 4,
                                         stride=2, padding=1))
        self.deconv = nn.Sequential(*layers)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        pooled = features.mean(dim=-1)
        h = self.proj(pooled).reshape(-1, self.seed_channels, self.seed_hw,
                                      self.seed_hw)
        return self.deconv(h)


class ConditionalUNet1d(nn.Module):
    """FiLM-conditioned temporal UNet over the latent sequence."""

    def __init__(self, channels: int, down_dims, cond_dim: int, kernel_size: int,
                 n_groups: int):
        super().__init__()
        dims = list(down_dims)
        self.downs = nn.ModuleList()
        cin = channels
        for d in dims[:-1]:
            self.downs.append(nn.ModuleList([
                ConditionalResBlock1d(cin, d, cond_dim, kernel_size, n_groups),
                ConditionalResBlock1d(d, d, cond_dim, kernel_size, n_groups),
                Downsample1d(d),
            ]))
            cin = d
        self.mid1 = ConditionalResBlock1d(cin, dims[-1], cond_dim, kernel_size, n_groups)
        self.mid2 = ConditionalResBlock1d(dims[-1], dims[-1], cond_dim, kernel_size, n_groups)
        self.ups = nn.ModuleList()
        cin = dims[-1]
        for d, skip in zip(reversed(dims[:-1]), reversed(dims[:-1])):
            self.ups.append(nn.ModuleList([
                Upsample1d(cin),
                ConditionalResBlock1d(cin + skip, d, cond_dim, kernel_size, n_groups),
                ConditionalResBlock1d(d, d, cond_dim, kernel_size, n_groups),
            ]))
            cin = d
        self.out = nn.Conv1d(cin, channels, 1)
        self.executed_layers: list[str] = []

    def forward(self, z: torch.Tensor, cond: torch.Tensor):
        trace = self.executed_layers = []
        skips = []
        h = z
        for i, (res1, res2, down) in enumerate(self.downs):
            h = res2(res1(h, cond), cond)
            skips.append(h)
            h = down(h)
            trace.append(f"down{i}")
        h = self.mid1(h, cond)
        h = self.mid2(h, cond)
        trace.append("mid")
        features = {"mid": h}
        for i, (up, res1, res2) in enumerate(self.ups):
            h = up(h)
            h = torch.cat([h, skips.pop()], dim=1)
            h = res2(res1(h, cond), cond)
            trace.append(f"up{i}")
        trace.append("out")
        features["final"] = h
        return self.out(h), features


class DenoiserNet(nn.Module):
    """Full epsilon predictor: observation encoder, timestep embed, UNet, recon head."""

    def __init__(self, latent_channels: int, latent_len: int, raster_channels: int,
                 raster_size: int, proprio_dim: int, down_dims, kernel_size: int,
                 n_groups: int, step_embed_dim: int, obs_feature_dim: int,
                 with_grasp_cond: bool, recon_tap: str = "mid",
                 obs_conv_widths=(16, 32, 64, 64), obs_proprio_hidden: int = 32,
                 grasp_embed_dim: int = 32, recon_base_channels: int = 8):
        super().__init__()
        if recon_tap not in ("mid", "final"):
            raise BadConfig("recon_tap must be 'mid' or 'final'")
        self.recon_tap = recon_tap
        self.latent_len = latent_len
        self.time_embed = nn.Sequential(
            SinusoidalPosEmb(step_embed_dim),
            nn.Linear(step_embed_dim, step_embed_dim), nn.SiLU(),
            nn.Linear(step_embed_dim, step_embed_dim),
        )
        self.obs_encoder = ObservationEncoder(raster_channels, proprio_dim,
                                              obs_feature_dim, obs_conv_widths,
                                              obs_proprio_hidden)
        cond_dim = step_embed_dim + obs_feature_dim
        self.grasp_embed = None
        if with_grasp_cond:
            self.grasp_embed = mlp([GRASP_CONDITION_DIM, grasp_embed_dim,
                                    grasp_embed_dim])
            cond_dim += grasp_embed_dim
        self.unet = ConditionalUNet1d(latent_channels, down_dims, cond_dim,
                                      kernel_size, n_groups)
        tap_channels = down_dims[-1] if recon_tap == "mid" else down_dims[0]
        self.recon_head = ReconHead(tap_channels, raster_size, recon_base_channels)

    def forward(self, z_k: torch.Tensor, rasters: torch.Tensor,
                proprio: torch.Tensor, k: torch.Tensor,
                grasp_cond: Optional[torch.Tensor] = None):
        """Epsilon prediction plus the UNet feature maps keyed by tap point."""
        cond = torch.cat([self.time_embed(k.to(z_k.dtype)),
                          self.obs_encoder(rasters, proprio)], dim=-1)
        if self.grasp_embed is not None:
            if grasp_cond is None:
                raise ShapeMismatch("condition-guided denoiser needs a grasp condition")
            cond = torch.cat([cond, self.grasp_embed(grasp_cond)], dim=-1)
        return self.unet(z_k, cond)

    def reconstruct_cue(self, features) -> torch.Tensor:
        return self.recon_head(features[self.recon_tap])


def _as_batch(x, dtype=np.float32) -> torch.Tensor:
    return torch.as_tensor(np.asarray(x, dtype=dtype))


@dataclass
class DenoiserOutput:
    """Epsilon prediction plus the tapped feature map, as numpy arrays."""

    eps_hat: np.ndarray
    mid_features: np.ndarray


def ddim_sample(denoise_fn, sched: NoiseSchedule, shape, steps: int,
                seed: int, dtype=torch.float32) -> torch.Tensor:
    """Deterministic DDIM from seeded Gaussian noise.

    ``denoise_fn(z_k, k) -> eps_hat`` is evaluated on the evenly spaced
    sub-schedule; eta = 0, so the result is a pure function of (seed, params).
    """
    ks = ddim_timesteps(sched.K, steps)
    g = torch.Generator().manual_seed(seed)
    z = torch.randn(shape, generator=g, dtype=dtype)
    for k, k_prev in zip(ks[:-1], ks[1:]):
        eps_hat = denoise_fn(z, int(k))
        z = ddim_step(z, eps_hat, int(k), int(k_prev), sched)
    return z


class LatentDiffusionPolicy(BaseEstimator):
    """Observation-conditioned denoiser over the frozen VAE's latent space.

    ``guidance`` selects how the target grasp pose enters the pipeline:
    ``latent`` leaves it to the VAE decoder, ``condition`` feeds it to the
    denoiser conditioning instead, ``none`` removes it entirely (the plain
    baseline). ``use_cue=False`` zeroes the cue channel of every raster.
    """

    def __init__(self, n_latent_dims=16, latent_len=8, observation_horizon=2,
                 prediction_horizon=16, raster_size=64, down_dims=(64, 128, 256),
                 kernel_size=5, n_groups=8, diffusion_step_embed_dim=256,
                 obs_feature_dim=64, num_training_timesteps=100,
                 num_inference_timesteps=10, schedule_kind="squared-cosine",
                 guidance="latent", use_cue=True, use_recon=True,
                 recon_loss_weight=0.2, recon_tap="mid", lr=1e-4,
                 weight_decay=1e-6, warmup_steps=100, num_epochs=1500,
                 batch_size=64, use_ema=True, ema_power=0.75, seed=0):
        self.n_latent_dims = n_latent_dims
        self.latent_len = latent_len
        self.observation_horizon = observation_horizon
        self.prediction_horizon = prediction_horizon
        self.raster_size = raster_size
        self.down_dims = down_dims
        self.kernel_size = kernel_size
        self.n_groups = n_groups
        self.diffusion_step_embed_dim = diffusion_step_embed_dim
        self.obs_feature_dim = obs_feature_dim
        self.num_training_timesteps = num_training_timesteps
        self.num_inference_timesteps = num_inference_timesteps
        self.schedule_kind = schedule_kind
        self.guidance = guidance
        self.use_cue = use_cue
        self.use_recon = use_recon
        self.recon_loss_weight = recon_loss_weight
        self.recon_tap = recon_tap
        self.lr = lr
        self.weight_decay = weight_decay
        self.warmup_steps = warmup_steps
        self.num_epochs = num_epochs
        self.batch_size = batch_size
        self.use_ema = use_ema
        self.ema_power = ema_power
        self.seed = seed

    # -- construction ------------------------------------------------------

    @property
    def raster_stack_channels(self) -> int:
        return self.observation_horizon * 2 * RASTER_CHANNELS

    def _build(self):
        if self.guidance not in ("latent", "condition", "none"):
            raise BadConfig(f"unknown guidance mode {self.guidance!r}")
        torch.manual_seed(self.seed)
        self.model_ = DenoiserNet(
            latent_channels=self.n_latent_dims,
            latent_len=self.latent_len,
            raster_channels=self.raster_stack_channels,
            raster_size=self.raster_size,
            proprio_dim=self.observation_horizon * PROPRIO_DIM,
            down_dims=self.down_dims,
            kernel_size=self.kernel_size,
            n_groups=self.n_groups,
            step_embed_dim=self.diffusion_step_embed_dim,
            obs_feature_dim=self.obs_feature_dim,
            with_grasp_cond=self.guidance == "condition",
            recon_tap=self.recon_tap,
        )
        self.schedule_ = build_schedule(self.num_training_timesteps,
                                        self.schedule_kind)
        self.loss_log_ = []

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("LatentDiffusionPolicy is not fitted")

    def _latent_shape(self):
        return (self.n_latent_dims, self.latent_len)

    def _prep_rasters(self, rasters: np.ndarray) -> np.ndarray:
        rasters = np.asarray(rasters, dtype=np.float32)
        if not self.use_cue:
            rasters = zero_cue_channels(rasters)
        return rasters

    # -- training ----------------------------------------------------------

    def fit(self, windows, vae: ActionChunkVAE, resume_from=None,
            stop_after_steps: Optional[int] = None):
        """Train on dataset windows against latents from the frozen VAE.

        ``windows`` provides chunks (N, T, 10), grasp_conds (N, 9), plus
        per-window observation tensors (see datagen.TrainingWindows).
        """
        if vae is None:
            raise MissingVAE("stage-2 training requires a fitted stage-1 VAE")
        try:
            vae._check_fitted()
        except NotFittedError as exc:
            raise MissingVAE("the stage-1 VAE is not fitted") from exc
        if vae.latent_len != self.latent_len or vae.n_latent_dims != self.n_latent_dims:
            raise CheckpointMismatch(
                f"VAE latent ({vae.latent_len}x{vae.n_latent_dims}) does not match "
                f"policy ({self.latent_len}x{self.n_latent_dims})")
        n = len(windows.chunks)
        if n == 0:
            raise EmptyDataset("stage-2 training needs at least one window")

        # latents from the frozen encoder are the denoising target
        z0_all = np.empty((n, self.n_latent_dims, self.latent_len), dtype=np.float32)
        for lo in range(0, n, 256):
            hi = min(n, lo + 256)
            code = vae.encode(windows.chunks[lo:hi])
            z0_all[lo:hi] = np.transpose(code.mu, (0, 2, 1)).astype(np.float32)

        self._build()
        opt = torch.optim.AdamW(self.model_.parameters(), lr=self.lr,
                                weight_decay=self.weight_decay)
        names = [n_ for n_, _ in self.model_.named_parameters()]
        ema = EmaTracker(dict(self.model_.named_parameters()), self.ema_power) \
            if self.use_ema else None

        steps_per_epoch = max(1, math.ceil(n / self.batch_size))
        total = self.num_epochs * steps_per_epoch
        start = 0
        if resume_from is not None:
            arrays, manifest = load_checkpoint(resume_from)
            if manifest.get("kind") != self.MANIFEST_KIND:
                raise CheckpointMismatch("resume checkpoint is not a policy checkpoint")
            load_module_state(self.model_, "model", arrays)
            restore_optimizer_state(opt, names, arrays)
            if ema is not None:
                for key, shadow in ema.shadow.items():
                    shadow.copy_(torch.from_numpy(arrays[f"ema.{key}"].copy()))
            start = int(arrays["train.step"][0])

        stop = total if stop_after_steps is None else min(total, stop_after_steps)
        self.model_.train()
        K = self.schedule_.K
        for step in range(start, stop):
            epoch, pos = divmod(step, steps_per_epoch)
            perm = epoch_permutation(self.seed, epoch, n)
            idx = perm[pos * self.batch_size:(pos + 1) * self.batch_size]
            z0 = torch.as_tensor(z0_all[idx])
            rasters = _as_batch(self._prep_rasters(windows.raster_batch(idx)))
            proprio = _as_batch(windows.proprio[idx])
            grasp = (_as_batch(windows.grasp_conds[idx])
                     if self.guidance == "condition" else None)
            g = step_generator(self.seed, step, salt=3)
            k = torch.randint(1, K + 1, (len(idx),), generator=g)
            eps = torch.randn(z0.shape, generator=g)
            z_k = q_sample(z0, k, eps, self.schedule_)
            eps_hat, features = self.model_(z_k, rasters, proprio, k, grasp)
            loss = F.mse_loss(eps_hat, eps)
            if self.use_recon:
                cue_hat = self.model_.reconstruct_cue(features)
                cue_target = _as_batch(windows.cue_batch(idx))
                loss = loss + self.recon_loss_weight * F.mse_loss(cue_hat, cue_target)
            for group in opt.param_groups:
                group["lr"] = cosine_warmup_lr(step, self.warmup_steps, total, self.lr)
            opt.zero_grad()
            loss.backward()
            opt.step()
            if ema is not None:
                ema.update(dict(self.model_.named_parameters()), step)
            self.loss_log_.append(float(loss.detach()))
        self._optimizer = opt
        self._param_names = names
        self.ema_ = ema
        self.global_step_ = stop
        self._refresh_eval_model()
        return self

    def _refresh_eval_model(self):
        self.eval_model_ = copy.deepcopy(self.model_)
        if self.use_ema and getattr(self, "ema_", None) is not None:
            self.ema_.copy_to(dict(self.eval_model_.named_parameters()))
        self.eval_model_.eval()

    # -- inference ---------------------------------------------------------

    def _obs_tensors(self, obs: ObservationBundle):
        rasters = self._prep_rasters(obs.raster_stack()[None])
        if rasters.shape[1] != self.raster_stack_channels:
            raise ShapeMismatch("observation stack does not match observation_horizon")
        return _as_batch(rasters), _as_batch(obs.proprio[None])

    def predict_latent(self, obs: ObservationBundle,
                       grasp_cond: Optional[np.ndarray] = None,
                       seed: int = 0) -> np.ndarray:
        """DDIM-sample a latent (latent_len, channels) for one observation."""
        self._check_fitted()
        rasters, proprio = self._obs_tensors(obs)
        grasp = None
        if self.guidance == "condition":
            if grasp_cond is None:
                raise ShapeMismatch("condition guidance requires a grasp condition")
            grasp = _as_batch(np.asarray(grasp_cond).reshape(1, GRASP_CONDITION_DIM))

        def denoise_fn(z, k):
            with torch.no_grad():
                eps_hat, _ = self.eval_model_(z, rasters, proprio,
                                              torch.tensor([float(k)]), grasp)
            return eps_hat

        z0 = ddim_sample(denoise_fn, self.schedule_,
                         (1,) + self._latent_shape(),
                         self.num_inference_timesteps, seed)
        return z0[0].T.numpy().astype(np.float64)

    def denoise(self, z_k: np.ndarray, obs: ObservationBundle, k: int,
                grasp_cond: Optional[np.ndarray] = None) -> DenoiserOutput:
        """Single denoiser evaluation exposing the tapped features."""
        self._check_fitted()
        rasters, proprio = self._obs_tensors(obs)
        grasp = (_as_batch(np.asarray(grasp_cond).reshape(1, -1))
                 if self.guidance == "condition" else None)
        z = _as_batch(np.asarray(z_k).T[None])
        with torch.no_grad():
            eps_hat, features = self.eval_model_(z, rasters, proprio,
                                                 torch.tensor([float(k)]), grasp)
        return DenoiserOutput(eps_hat[0].T.numpy().astype(np.float64),
                              features[self.recon_tap][0].numpy().astype(np.float64))

    def executed_layer_manifest(self) -> str:
        """Layer names hit by the most recent denoiser forward."""
        self._check_fitted()
        return ",".join(self.eval_model_.unet.executed_layers)

    # -- persistence -------------------------------------------------------

    MANIFEST_KIND = "latent_diffusion_policy"

    def _manifest(self):
        entries = {f"param.{k}": v for k, v in self.get_params().items()}
        entries["kind"] = self.MANIFEST_KIND
        return entries

    def save(self, path, extra_manifest=None) -> None:
        self._check_fitted()
        arrays = module_state_arrays(self.model_, "model")
        arrays["train.step"] = np.array([getattr(self, "global_step_", 0)],
                                        dtype=np.float32)
        if getattr(self, "ema_", None) is not None:
            for key, shadow in self.ema_.shadow.items():
                arrays[f"ema.{key}"] = shadow.detach().numpy()
        if hasattr(self, "_optimizer"):
            arrays.update(optimizer_state_arrays(self._optimizer, self._param_names))
        manifest = self._manifest()
        manifest.update(extra_manifest or {})
        save_checkpoint(path, arrays, manifest)

    @classmethod
    def load(cls, path) -> "LatentDiffusionPolicy":
        arrays, manifest = load_checkpoint(path)
        if manifest.get("kind") != cls.MANIFEST_KIND:
            raise CheckpointMismatch(
                f"expected a {cls.MANIFEST_KIND} checkpoint, got {manifest.get('kind')}")
        defaults = cls().get_params()
        params = {}
        for key, value in manifest.items():
            if not key.startswith("param."):
                continue
            name = key[len("param."):]
            default = defaults[name]
            if isinstance(default, bool):
                params[name] = value == "True"
            elif isinstance(default, int):
                params[name] = int(value)
            elif isinstance(default, float):
                params[name] = float(value)
            elif isinstance(default, (tuple, list)):
                params[name] = tuple(int(v) for v in value.strip("()[]").split(",") if v)
            else:
                params[name] = value
        est = cls(**params)
        est._build()
        load_module_state(est.model_, "model", arrays)
        if est.use_ema:
            est.ema_ = EmaTracker(dict(est.model_.named_parameters()), est.ema_power)
            for key, shadow in est.ema_.shadow.items():
                shadow.copy_(torch.from_numpy(arrays[f"ema.{key}"].copy()))
        else:
            est.ema_ = None
        est.global_step_ = int(arrays["train.step"][0])
        est._refresh_eval_model()
        return est

    @classmethod
    def from_config(cls, cfg, seed: Optional[int] = None):
        if cfg["prediction_horizon"] != cfg["horizon"]:
            raise BadConfig("prediction_horizon must equal the VAE horizon")
        if cfg["observation_horizon"] != cfg["n_obs_steps"]:
            raise BadConfig("observation_horizon must equal n_obs_steps")
        if cfg["prediction_type"] != "epsilon":
            raise BadConfig("only epsilon prediction is supported")
        if not cfg["enable_ddim"]:
            raise BadConfig("only DDIM sampling is supported; set enable_ddim=True")
        latent_len = cfg["horizon"] // (2 ** cfg["conv_layer_num"])
        return cls(
            n_latent_dims=cfg["n_latent_dims"],
            latent_len=latent_len,
            observation_horizon=cfg["observation_horizon"],
            prediction_horizon=cfg["prediction_horizon"],
            raster_size=cfg["raster_size"],
            down_dims=tuple(cfg["unet.down_dims"]),
            kernel_size=cfg["unet.kernel_size"],
            n_groups=cfg["unet.n_groups"],
            diffusion_step_embed_dim=cfg["unet.diffusion_step_embed_dim"],
            obs_feature_dim=cfg["obs_feature_dim"],
            num_training_timesteps=cfg["num_training_timesteps"],
            num_inference_timesteps=cfg["num_inference_timesteps"],
            guidance=cfg["guidance"],
            use_cue=cfg["use_cue"],
            use_recon=cfg["use_recon"] and cfg["use_cue"],
            recon_loss_weight=cfg["recon_loss_weight"],
            lr=cfg["ldp.optimizer.lr"],
            weight_decay=cfg["ldp.optimizer.weight_decay"],
            warmup_steps=cfg["ldp.training.lr_warmup_steps"],
            num_epochs=cfg["ldp.training.num_epochs"],
            batch_size=cfg["ldp.dataloader.batch_size"],
            use_ema=cfg["ldp.training.use_ema"],
            ema_power=cfg["ldp.training.ema_power"],
            seed=cfg["seed"] if seed is None else seed,
        )
