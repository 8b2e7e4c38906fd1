"""Central finite-difference check of autograd gradients."""
import numpy as np
import torch


def fd_relative_error(loss_fn, params, n_samples=60, eps=1e-6, seed=0):
    """||analytic - numeric|| / max(||analytic||, ||numeric||) over sampled entries."""
    params = list(params)
    grads = torch.autograd.grad(loss_fn(), params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    sizes = np.array([p.numel() for p in params])
    rng = np.random.default_rng(seed)
    picks = rng.choice(sizes.sum(), size=min(n_samples, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    analytic, numeric = [], []
    with torch.no_grad():
        for flat in picks:
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            i = int(flat - offsets[k])
            view = params[k].view(-1)
            orig = view[i].item()
            view[i] = orig + eps
            up = loss_fn().item()
            view[i] = orig - eps
            down = loss_fn().item()
            view[i] = orig
            numeric.append((up - down) / (2 * eps))
            analytic.append(grads[k].view(-1)[i].item())
    a, n = np.array(analytic), np.array(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    return float(np.linalg.norm(a - n) / denom) if denom > 0 else 0.0
