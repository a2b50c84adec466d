"""Independent reference computations shared by unit and acceptance tests."""
import numpy as np
import torch


def ce_numpy(logits, y):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(1, keepdims=True))
    return float(-logp[np.arange(len(y)), np.asarray(y)].mean())


def finite_difference_check(loss_fn, params, n_coords=100, h=1e-6, seed=0):
    """Compare autograd with central differences on random coordinates of `params`.

    Returns an array of (analytic, numeric) pairs.
    """
    params = [p for p in params if p.requires_grad]
    for p in params:
        p.grad = None
    loss_fn().backward()
    sizes = np.array([p.numel() for p in params])
    rng = np.random.default_rng(seed)
    flat = rng.choice(sizes.sum(), size=min(n_coords, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)
    pairs = []
    with torch.no_grad():
        for c in flat:
            i = int(np.searchsorted(bounds, c, side="right"))
            j = int(c - (bounds[i - 1] if i else 0))
            view = params[i].view(-1)
            analytic = float(params[i].grad.view(-1)[j])
            orig = float(view[j])
            view[j] = orig + h
            up = float(loss_fn())
            view[j] = orig - h
            down = float(loss_fn())
            view[j] = orig
            pairs.append((analytic, (up - down) / (2 * h)))
    return np.array(pairs)


def relative_errors(pairs, floor=1e-7):
    a, n = pairs[:, 0], pairs[:, 1]
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
