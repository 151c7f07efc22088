"""Central finite-difference checking of analytic gradients."""

from typing import Callable, Iterable

import torch


def grad_check(f: Callable[[], torch.Tensor], params: Iterable[torch.Tensor],
               eps: float = 1e-5) -> float:
    """Max elementwise error between autograd and central finite differences.

    ``f`` must be a deterministic scalar function of ``params`` (fix any noise
    inputs beforehand). Use double precision; the error is relative for large
    gradients and absolute below magnitude 1.
    """
    params = list(params)
    for p in params:
        if p.grad is not None:
            p.grad = None
    loss = f()
    if loss.requires_grad:
        loss.backward()
    analytic = [p.grad.detach().clone() if p.grad is not None
                else torch.zeros_like(p) for p in params]

    worst = 0.0
    with torch.no_grad():
        for p, a in zip(params, analytic):
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                hi = float(f())
                flat[i] = orig - eps
                lo = float(f())
                flat[i] = orig
                numeric = (hi - lo) / (2.0 * eps)
                ana = float(a.view(-1)[i])
                err = abs(ana - numeric) / max(abs(ana), abs(numeric), 1.0)
                worst = max(worst, err)
    return worst
