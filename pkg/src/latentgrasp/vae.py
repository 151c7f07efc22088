"""Stage 1: compress action chunks into temporal latents and decode them back
under grasp-pose guidance.

The encoder is a strided 1-D CNN over the chunk (one stage per conv layer), the
decoder a GRU unrolled over the horizon whose per-step input is the upsampled
latent frame concatenated with the 9-dim grasp condition. With ``guided=False``
the decoder sees only the latent (the plain baseline and the condition-guidance
ablation both use that variant).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import CheckpointMismatch, EmptyDataset, ShapeMismatch
from .geometry import ACTION_DIM
from .netcore import cosine_warmup_lr, load_checkpoint, save_checkpoint
from .netcore.training import (
    epoch_permutation,
    load_module_state,
    module_state_arrays,
    optimizer_state_arrays,
    restore_optimizer_state,
    step_generator,
)

GRASP_CONDITION_DIM = 9  # translation (3) + 6D rotation
LOGVAR_CLAMP = 20.0


@dataclass
class LatentCode:
    """Temporal latent (batch, latent_len, channels) with encoder statistics."""

    z: np.ndarray
    mu: np.ndarray
    logvar: np.ndarray


class ChunkEncoder(nn.Module):
    def __init__(self, action_dim: int, conv_dims: int, n_layers: int,
                 latent_channels: int):
        super().__init__()
        layers = []
        channels = action_dim
        for _ in range(n_layers):
            layers += [nn.Conv1d(channels, conv_dims, 3, stride=2, padding=1),
                       nn.SiLU()]
            channels = conv_dims
        self.body = nn.Sequential(*layers)
        self.mu_head = nn.Conv1d(channels, latent_channels, 1)
        self.logvar_head = nn.Conv1d(channels, latent_channels, 1)

    def forward(self, chunk: torch.Tensor):
        """chunk (B, T, action_dim) -> mu, logvar (B, latent_channels, T / 2^n)."""
        h = self.body(chunk.transpose(1, 2))
        return self.mu_head(h), self.logvar_head(h).clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)


class ChunkDecoder(nn.Module):
    def __init__(self, latent_channels: int, cond_dim: int, rnn_dims: int,
                 rnn_layers: int, action_dim: int, upsample: int):
        super().__init__()
        self.upsample = upsample
        self.gru = nn.GRU(latent_channels + cond_dim, rnn_dims,
                          num_layers=rnn_layers, batch_first=True)
        self.head = nn.Linear(rnn_dims, action_dim)

    def forward(self, z: torch.Tensor, cond: Optional[torch.Tensor]):
        """z (B, C, L), cond (B, cond_dim) or None -> actions (B, T, action_dim)."""
        frames = z.repeat_interleave(self.upsample, dim=2).transpose(1, 2)
        if cond is not None:
            frames = torch.cat(
                [frames, cond.unsqueeze(1).expand(-1, frames.shape[1], -1)], dim=-1)
        out, _ = self.gru(frames)
        raw = self.head(out)
        return torch.cat([raw[..., :-1], torch.sigmoid(raw[..., -1:])], dim=-1)


def vae_loss(chunk: torch.Tensor, recon: torch.Tensor, mu: torch.Tensor,
             logvar: torch.Tensor, kl_multiplier: float) -> torch.Tensor:
    """MSE reconstruction plus KL(N(mu, sigma^2) || N(0, I)) summed over latent
    dims and averaged over the batch."""
    if chunk.shape != recon.shape:
        raise ShapeMismatch(f"chunk {tuple(chunk.shape)} vs recon {tuple(recon.shape)}")
    recon_term = F.mse_loss(recon, chunk)
    kl = 0.5 * (mu.pow(2) + logvar.exp() - logvar - 1.0)
    kl_term = kl.reshape(kl.shape[0], -1).sum(dim=1).mean()
    return recon_term + kl_multiplier * kl_term


class ActionChunkVAE(BaseEstimator):
    """Action-chunk autoencoder with an optional grasp-pose-conditioned decoder."""

    def __init__(self, horizon=16, n_latent_dims=16, conv_latent_dims=64,
                 conv_layer_num=1, rnn_latent_dims=64, rnn_layer_num=1,
                 kl_multiplier=1e-6, guided=True, lr=1e-3, weight_decay=1e-4,
                 warmup_steps=100, num_epochs=1000, batch_size=128,
                 trans_scale=0.25, seed=0):
        self.horizon = horizon
        self.n_latent_dims = n_latent_dims
        self.conv_latent_dims = conv_latent_dims
        self.conv_layer_num = conv_layer_num
        self.rnn_latent_dims = rnn_latent_dims
        self.rnn_layer_num = rnn_layer_num
        self.kl_multiplier = kl_multiplier
        self.guided = guided
        self.lr = lr
        self.weight_decay = weight_decay
        self.warmup_steps = warmup_steps
        self.num_epochs = num_epochs
        self.batch_size = batch_size
        self.trans_scale = trans_scale
        self.seed = seed

    # -- construction ------------------------------------------------------

    @property
    def latent_len(self) -> int:
        return self.horizon // (2 ** self.conv_layer_num)

    def _build(self):
        torch.manual_seed(self.seed)
        self.encoder_ = ChunkEncoder(ACTION_DIM, self.conv_latent_dims,
                                     self.conv_layer_num, self.n_latent_dims)
        cond = GRASP_CONDITION_DIM if self.guided else 0
        self.decoder_ = ChunkDecoder(self.n_latent_dims, cond, self.rnn_latent_dims,
                                     self.rnn_layer_num, ACTION_DIM,
                                     2 ** self.conv_layer_num)
        self.loss_log_ = []

    def _check_fitted(self):
        if not hasattr(self, "encoder_"):
            raise NotFittedError("ActionChunkVAE is not fitted; call fit or load")

    # -- normalization -----------------------------------------------------

    def _norm_chunk(self, chunks: np.ndarray) -> torch.Tensor:
        x = torch.as_tensor(np.asarray(chunks, dtype=np.float32))
        if x.ndim != 3 or x.shape[1] != self.horizon or x.shape[2] != ACTION_DIM:
            raise ShapeMismatch(
                f"chunks must be (N, {self.horizon}, {ACTION_DIM}), got {tuple(x.shape)}")
        x = x.clone()
        x[..., :3] /= self.trans_scale
        return x

    def _denorm_chunk(self, x: torch.Tensor) -> np.ndarray:
        out = x.detach().numpy().astype(np.float64).copy()
        out[..., :3] *= self.trans_scale
        return out

    def _norm_cond(self, conds: np.ndarray) -> Optional[torch.Tensor]:
        if not self.guided:
            return None
        c = torch.as_tensor(np.asarray(conds, dtype=np.float32))
        if c.ndim != 2 or c.shape[1] != GRASP_CONDITION_DIM:
            raise ShapeMismatch(f"conditions must be (N, {GRASP_CONDITION_DIM})")
        c = c.clone()
        c[:, :3] /= self.trans_scale
        return c

    # -- estimator API -----------------------------------------------------

    def fit(self, chunks: np.ndarray, conditions: Optional[np.ndarray] = None,
            resume_from=None, stop_after_steps: Optional[int] = None):
        chunks = np.asarray(chunks, dtype=np.float32)
        if chunks.size == 0:
            raise EmptyDataset("VAE training needs at least one chunk")
        if self.guided and conditions is None:
            raise ShapeMismatch("guided VAE requires grasp conditions")
        x = self._norm_chunk(chunks)
        c = self._norm_cond(conditions) if self.guided else None

        self._build()
        params = list(self.encoder_.parameters()) + list(self.decoder_.parameters())
        names = ([f"enc.{n}" for n, _ in self.encoder_.named_parameters()]
                 + [f"dec.{n}" for n, _ in self.decoder_.named_parameters()])
        opt = torch.optim.AdamW(params, lr=self.lr, weight_decay=self.weight_decay)

        n = x.shape[0]
        steps_per_epoch = max(1, math.ceil(n / self.batch_size))
        total = self.num_epochs * steps_per_epoch
        start = 0
        if resume_from is not None:
            arrays, manifest = load_checkpoint(resume_from)
            self._check_manifest(manifest)
            load_module_state(self.encoder_, "enc", arrays)
            load_module_state(self.decoder_, "dec", arrays)
            restore_optimizer_state(opt, names, arrays)
            start = int(arrays["train.step"][0])

        stop = total if stop_after_steps is None else min(total, stop_after_steps)
        self.encoder_.train()
        self.decoder_.train()
        for step in range(start, stop):
            epoch, pos = divmod(step, steps_per_epoch)
            perm = epoch_permutation(self.seed, epoch, n)
            idx = perm[pos * self.batch_size:(pos + 1) * self.batch_size]
            xb = x[idx]
            cb = c[idx] if c is not None else None
            mu, logvar = self.encoder_(xb)
            g = step_generator(self.seed, step)
            eps = torch.randn(mu.shape, generator=g)
            z = mu + eps * torch.exp(0.5 * logvar)
            recon = self.decoder_(z, cb)
            loss = vae_loss(xb, recon, mu, logvar, self.kl_multiplier)
            for group in opt.param_groups:
                group["lr"] = cosine_warmup_lr(step, self.warmup_steps, total, self.lr)
            opt.zero_grad()
            loss.backward()
            opt.step()
            self.loss_log_.append(float(loss.detach()))
        self._optimizer = opt
        self._param_names = names
        self.global_step_ = stop
        return self

    def encode(self, chunks: np.ndarray, sample: bool = False,
               seed: int = 0) -> LatentCode:
        """Latent code for chunks; deterministic (z = mu) unless sampling."""
        self._check_fitted()
        x = self._norm_chunk(chunks)
        self.encoder_.eval()
        with torch.no_grad():
            mu, logvar = self.encoder_(x)
            if sample:
                g = step_generator(seed, 0, salt=2)
                z = mu + torch.randn(mu.shape, generator=g) * torch.exp(0.5 * logvar)
            else:
                z = mu
        to_np = lambda t: t.transpose(1, 2).numpy().astype(np.float64)
        return LatentCode(to_np(z), to_np(mu), to_np(logvar))

    def decode(self, z: np.ndarray, conditions: Optional[np.ndarray] = None) -> np.ndarray:
        """Action chunks (batch, horizon, 10) from latents (batch, latent_len, C)."""
        self._check_fitted()
        zt = torch.as_tensor(np.asarray(z, dtype=np.float32))
        if zt.ndim != 3 or zt.shape[1] != self.latent_len or zt.shape[2] != self.n_latent_dims:
            raise ShapeMismatch(
                f"latent must be (N, {self.latent_len}, {self.n_latent_dims}),"
                f" got {tuple(zt.shape)}")
        c = self._norm_cond(conditions) if self.guided else None
        self.decoder_.eval()
        with torch.no_grad():
            out = self.decoder_(zt.transpose(1, 2), c)
        return self._denorm_chunk(out)

    def reconstruction_mse(self, chunks: np.ndarray,
                           conditions: Optional[np.ndarray] = None,
                           raw_units: bool = True) -> float:
        """Eval-mode reconstruction MSE over chunks.

        raw_units measures in the chunk's native units (meters for translation);
        otherwise in the normalized space the loss is trained in.
        """
        code = self.encode(chunks)
        zt = torch.as_tensor(code.z.astype(np.float32)).transpose(1, 2)
        c = self._norm_cond(conditions) if self.guided else None
        with torch.no_grad():
            recon = self.decoder_(zt, c)
        if raw_units:
            out = self._denorm_chunk(recon)
            return float(np.mean((out - np.asarray(chunks, dtype=np.float64)) ** 2))
        x = self._norm_chunk(chunks)
        return float(F.mse_loss(recon, x))

    # -- persistence -------------------------------------------------------

    MANIFEST_KIND = "action_chunk_vae"

    def _manifest(self):
        entries = {f"param.{k}": v for k, v in self.get_params().items()}
        entries["kind"] = self.MANIFEST_KIND
        return entries

    def _check_manifest(self, manifest):
        if manifest.get("kind") != self.MANIFEST_KIND:
            raise CheckpointMismatch(
                f"expected a {self.MANIFEST_KIND} checkpoint, got {manifest.get('kind')}")

    def save(self, path, extra_manifest=None) -> None:
        self._check_fitted()
        arrays = {}
        arrays.update(module_state_arrays(self.encoder_, "enc"))
        arrays.update(module_state_arrays(self.decoder_, "dec"))
        arrays["train.step"] = np.array([getattr(self, "global_step_", 0)],
                                        dtype=np.float32)
        if hasattr(self, "_optimizer"):
            arrays.update(optimizer_state_arrays(self._optimizer, self._param_names))
        manifest = self._manifest()
        manifest.update(extra_manifest or {})
        save_checkpoint(path, arrays, manifest)

    @classmethod
    def load(cls, path) -> "ActionChunkVAE":
        arrays, manifest = load_checkpoint(path)
        if manifest.get("kind") != cls.MANIFEST_KIND:
            raise CheckpointMismatch(
                f"expected a {cls.MANIFEST_KIND} checkpoint, got {manifest.get('kind')}")
        params = {}
        for key, value in manifest.items():
            if key.startswith("param."):
                name = key[len("param."):]
                default = cls().get_params()[name]
                if isinstance(default, bool):
                    params[name] = value == "True"
                elif isinstance(default, int):
                    params[name] = int(value)
                elif isinstance(default, float):
                    params[name] = float(value)
                else:
                    params[name] = value
        est = cls(**params)
        est._build()
        load_module_state(est.encoder_, "enc", arrays)
        load_module_state(est.decoder_, "dec", arrays)
        est.global_step_ = int(arrays["train.step"][0])
        return est

    @classmethod
    def from_config(cls, cfg, guided: bool = True, seed: Optional[int] = None):
        from .errors import BadConfig
        if cfg["use_vq"]:
            raise BadConfig("vector quantization is not supported; set use_vq=False")
        if not (cfg["use_conv_encoder"] and cfg["use_rnn_decoder"]):
            raise BadConfig("only the conv encoder / rnn decoder pairing is supported")
        return cls(
            horizon=cfg["horizon"],
            n_latent_dims=cfg["n_latent_dims"],
            conv_latent_dims=cfg["conv_latent_dims"],
            conv_layer_num=cfg["conv_layer_num"],
            rnn_latent_dims=cfg["rnn_latent_dims"],
            rnn_layer_num=cfg["rnn_layer_num"],
            kl_multiplier=cfg["kl_multiplier"],
            guided=guided,
            lr=cfg["vae.optimizer.lr"],
            weight_decay=cfg["vae.optimizer.weight_decay"],
            warmup_steps=cfg["vae.training.lr_warmup_steps"],
            num_epochs=cfg["vae.training.num_epochs"],
            batch_size=cfg["vae.dataloader.batch_size"],
            trans_scale=cfg["action_trans_scale"],
            seed=cfg["seed"] if seed is None else seed,
        )
