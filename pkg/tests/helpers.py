"""Central finite-difference gradient check."""
import torch


def fd_rel_error(fn, tensors, eps=1e-6, n_coords=16, seed=0):
    """Worst relative error between autograd and central differences.

    ``fn`` returns a float64 scalar; ``tensors`` are the leaves to check.
    Error per tensor is ||a - n|| / max(||a||, ||n||) over up to
    ``n_coords`` randomly chosen coordinates.
    """
    grads = torch.autograd.grad(fn(), tensors, allow_unused=True)
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    for t, g in zip(tensors, grads):
        if g is None:
            g = torch.zeros_like(t)
        flat = t.data.view(-1)
        k = min(n_coords, flat.numel())
        idx = torch.randperm(flat.numel(), generator=gen)[:k]
        num = []
        with torch.no_grad():
            for i in idx.tolist():
                orig = flat[i].item()
                flat[i] = orig + eps
                fp = fn().item()
                flat[i] = orig - eps
                fm = fn().item()
                flat[i] = orig
                num.append((fp - fm) / (2 * eps))
        a = g.reshape(-1)[idx]
        n = torch.tensor(num, dtype=a.dtype)
        scale = max(a.norm().item(), n.norm().item())
        if scale < 1e-6:
            # exactly invariant direction (e.g. a bias cancelled by batch norm)
            continue
        worst = max(worst, (a - n).norm().item() / scale)
    return worst



# (criterion number, passed, detail), filled by the acceptance module and
# printed in the terminal summary
ACCEPTANCE = []
