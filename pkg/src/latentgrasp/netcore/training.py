"""Deterministic training helpers.

All randomness is keyed by (seed, step) or (seed, epoch) instead of carrying a
stateful RNG, so resuming from a checkpoint only needs the global step counter
to reproduce the remaining run bitwise.
"""

from typing import Dict, List

import numpy as np
import torch

MIX = 0x9E3779B97F4A7C15


def _mix(seed: int, index: int, salt: int) -> int:
    return (seed * 1000003 + index * MIX + salt) % (2 ** 63 - 1)


def step_generator(seed: int, step: int, salt: int = 0) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(_mix(seed, step, salt))
    return g


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng(_mix(seed, epoch, 1)).permutation(n)


def named_parameters(module: torch.nn.Module) -> Dict[str, torch.Tensor]:
    return dict(module.named_parameters())


def optimizer_state_arrays(opt: torch.optim.Optimizer,
                           names: List[str]) -> Dict[str, np.ndarray]:
    """Flatten AdamW moments into checkpoint arrays, one name per parameter."""
    out: Dict[str, np.ndarray] = {}
    params = [p for group in opt.param_groups for p in group["params"]]
    assert len(params) == len(names)
    for name, p in zip(names, params):
        state = opt.state.get(p)
        if not state:
            continue
        out[f"optim.{name}.step"] = np.array([float(state["step"])], dtype=np.float32)
        out[f"optim.{name}.exp_avg"] = state["exp_avg"].detach().numpy()
        out[f"optim.{name}.exp_avg_sq"] = state["exp_avg_sq"].detach().numpy()
    return out


def restore_optimizer_state(opt: torch.optim.Optimizer, names: List[str],
                            arrays: Dict[str, np.ndarray]) -> None:
    params = [p for group in opt.param_groups for p in group["params"]]
    for name, p in zip(names, params):
        key = f"optim.{name}.step"
        if key not in arrays:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(arrays[key][0])),
            "exp_avg": torch.from_numpy(arrays[f"optim.{name}.exp_avg"].copy()),
            "exp_avg_sq": torch.from_numpy(arrays[f"optim.{name}.exp_avg_sq"].copy()),
        }


def module_state_arrays(module: torch.nn.Module, prefix: str) -> Dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v.detach().numpy() for k, v in module.state_dict().items()}


def load_module_state(module: torch.nn.Module, prefix: str,
                      arrays: Dict[str, np.ndarray]) -> None:
    state = {}
    for k, v in module.state_dict().items():
        key = f"{prefix}.{k}"
        if key not in arrays:
            raise KeyError(f"checkpoint is missing {key}")
        state[k] = torch.from_numpy(arrays[key].copy()).to(v.dtype).reshape(v.shape)
    module.load_state_dict(state)
