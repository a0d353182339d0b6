"""Central finite-difference gradient oracle for 64-bit torch models."""

import torch


def autograd_gradient(loss_fn, params: list[torch.nn.Parameter]) -> torch.Tensor:
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    return torch.cat([
        (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1).clone()
        for p in params
    ])


def fd_gradient(loss_fn, params: list[torch.nn.Parameter], base_h: float = 1e-6) -> torch.Tensor:
    """Central differences over every scalar weight, step scaled by magnitude."""
    grads = []
    with torch.no_grad():
        for p in params:
            flat = p.reshape(-1)
            g = torch.zeros_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                h = base_h * max(1.0, abs(orig))
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                g[i] = (up - down) / (2 * h)
            grads.append(g)
    return torch.cat(grads)


def max_relative_error(g_ref: torch.Tensor, g_test: torch.Tensor) -> float:
    """Max-norm relative error, robust to zero entries."""
    scale = max(g_ref.abs().max().item(), g_test.abs().max().item(), 1e-12)
    return ((g_ref - g_test).abs().max() / scale).item()
