"""Central finite differences against the tape's gradients."""
import numpy as np

from gcprune.engine import Tensor, backward

STEP = 1e-5


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-10)
    return float(np.linalg.norm(a - b) / scale)


def numeric_grad(f, arrays, i, step=STEP):
    x = arrays[i]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + step
        hi = f(*arrays)
        x[idx] = old - step
        lo = f(*arrays)
        x[idx] = old
        g[idx] = (hi - lo) / (2 * step)
    return g


def check(build, arrays, step=STEP):
    """Max relative error over inputs; ``build(*tensors) -> scalar Tensor``."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*ts)
    backward(out)

    def value(*arrs):
        return build(*[Tensor(a) for a in arrs]).item()

    worst = 0.0
    for i, t in enumerate(ts):
        analytic = t.grad if t.grad is not None else np.zeros_like(arrays[i])
        worst = max(worst, rel_error(analytic, numeric_grad(value, arrays, i, step)))
    return worst


def weighted(t: Tensor, rng) -> Tensor:
    """Random linear functional of ``t`` so every output element matters."""
    return (t * Tensor(rng.standard_normal(t.shape))).sum()
