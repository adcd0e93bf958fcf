"""Independent central finite-difference gradient oracle for torch modules.

Deliberately avoids torch's own gradcheck: the analytic side comes from
backward(), the reference side from explicit two-point central differences
over the flattened parameter vector.
"""

import numpy as np
import torch


def param_vector(module: torch.nn.Module) -> torch.Tensor:
    return torch.cat([p.detach().reshape(-1) for p in module.parameters() if p.requires_grad])


def set_param_vector(module: torch.nn.Module, vec: torch.Tensor) -> None:
    i = 0
    with torch.no_grad():
        for p in module.parameters():
            if not p.requires_grad:
                continue
            n = p.numel()
            p.copy_(vec[i : i + n].reshape(p.shape))
            i += n


def analytic_gradient(module: torch.nn.Module, loss_fn) -> torch.Tensor:
    for p in module.parameters():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    grads = []
    for p in module.parameters():
        if not p.requires_grad:
            continue
        grads.append(
            (p.grad if p.grad is not None else torch.zeros_like(p)).detach().reshape(-1)
        )
    return torch.cat(grads)


def finite_difference_gradient(module, loss_fn, indices, step: float = 1e-5) -> np.ndarray:
    base = param_vector(module).clone()
    grad = np.zeros(len(indices))
    for j, i in enumerate(indices):
        shifted = base.clone()
        shifted[i] += step
        set_param_vector(module, shifted)
        with torch.no_grad():
            up = float(loss_fn())
        shifted[i] -= 2 * step
        set_param_vector(module, shifted)
        with torch.no_grad():
            down = float(loss_fn())
        grad[j] = (up - down) / (2.0 * step)
    set_param_vector(module, base)
    return grad


def gradient_relative_error(
    module: torch.nn.Module,
    loss_fn,
    step: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Norm-relative error between analytic and finite-difference gradients.

    Checks every parameter coordinate unless max_coords caps the count, in
    which case a seeded random subset is compared.
    """
    analytic = analytic_gradient(module, loss_fn).cpu().numpy()
    n = analytic.shape[0]
    if max_coords is not None and n > max_coords:
        indices = np.random.default_rng(seed).choice(n, size=max_coords, replace=False)
    else:
        indices = np.arange(n)
    numeric = finite_difference_gradient(module, loss_fn, indices, step=step)
    sel = analytic[indices]
    denom = max(np.linalg.norm(numeric), np.linalg.norm(sel), 1e-12)
    return float(np.linalg.norm(numeric - sel) / denom)
