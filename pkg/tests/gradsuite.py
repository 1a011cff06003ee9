"""Random micro-fixtures for every differentiable operation, checked by finite differences."""
import numpy as np

from gcprune.detectcore import hard_loss
from gcprune.distill import attention_loss, attention_vectors, soft_box_loss, soft_class_loss
from gcprune.distill.train import student_boxes_at
from gcprune.engine import BNParams, Tensor
from gcprune.engine import functional as F
from gcprune.sparsetrain import sparse_penalty

from fdcheck import check, numeric_grad, rel_error, weighted

N_FIXTURES = 20
TOL = 1e-4


def _away_from_zero(rng, shape, gap=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * gap, x)


def _distinct(rng, shape):
    """Values with pairwise gaps well above the FD step, so argmax never flips."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.01 + rng.uniform(0, 0.001, n)).reshape(shape) - n * 0.005


def conv(rng):
    k = int(rng.choice([1, 3]))
    s = int(rng.choice([1, 2]))
    cin, cout = rng.integers(1, 4, size=2)
    x = rng.standard_normal((2, cin, 5, 4))
    w = rng.standard_normal((cout, cin, k, k))
    b = rng.standard_normal(cout)
    r = np.random.default_rng(rng.integers(1 << 31))
    coef = r.standard_normal((2, cout) + (-(-5 // s), -(-4 // s)))
    return lambda x, w, b: (F.conv2d(x, w, s, b) * Tensor(coef)).sum(), [x, w, b]


def batchnorm(rng):
    c = int(rng.integers(1, 4))
    training = bool(rng.integers(0, 2))
    x = rng.standard_normal((3, c, 2, 3)) * 2 + 1
    gamma, beta = rng.standard_normal(c), rng.standard_normal(c)
    coef = rng.standard_normal(x.shape)
    rm, rv = rng.standard_normal(c), rng.uniform(0.5, 2, c)

    def build(x, gamma, beta):
        p = BNParams(gamma, beta, rm.copy(), rv.copy(), 1e-5)
        return (F.batchnorm(x, p, training) * Tensor(coef)).sum()
    return build, [x, gamma, beta]


def mish(rng):
    x = rng.standard_normal((2, 3, 4)) * 4
    coef = rng.standard_normal(x.shape)
    return lambda x: (F.mish(x) * Tensor(coef)).sum(), [x]


def leaky(rng):
    x = _away_from_zero(rng, (2, 3, 4))
    coef = rng.standard_normal(x.shape)
    return lambda x: (F.leaky_relu(x) * Tensor(coef)).sum(), [x]


def add(rng):
    a, b = rng.standard_normal((2, 3, 2, 2)), rng.standard_normal((2, 3, 2, 2))
    coef = rng.standard_normal(a.shape)
    return lambda a, b: (F.add(a, b) * F.add(a, b) * Tensor(coef)).sum(), [a, b]


def concat(rng):
    c1, c2 = rng.integers(1, 4, size=2)
    a, b = rng.standard_normal((2, c1, 2, 3)), rng.standard_normal((2, c2, 2, 3))
    coef = rng.standard_normal((2, c1 + c2, 2, 3))
    return lambda a, b: (F.concat([a, b]) * Tensor(coef)).sum(), [a, b]


def upsample(rng):
    x = rng.standard_normal((1, 2, 2, 3))
    coef = rng.standard_normal((1, 2, 4, 6))
    return lambda x: (F.upsample_nearest(x, 2) ** 2 * Tensor(coef)).sum(), [x]


def maxpool(rng):
    k, s = [(2, 2), (3, 1), (2, 1), (3, 2)][int(rng.integers(0, 4))]
    x = _distinct(rng, (2, 2, 5, 4))
    coef = rng.standard_normal((2, 2, -(-5 // s), -(-4 // s)))
    return lambda x: (F.maxpool2d(x, k, s) * Tensor(coef)).sum(), [x]


def spp(rng):
    x = _distinct(rng, (1, 2, 6, 6))
    coef = rng.standard_normal((1, 8, 6, 6))

    def build(x):
        return (F.concat([F.maxpool2d(x, 5), F.maxpool2d(x, 9), F.maxpool2d(x, 13), x]) * Tensor(coef)).sum()
    return build, [x]


def _heads(rng, n=2, classes=2, grids=((2, 2), (1, 2), (1, 1))):
    a = 3
    return [rng.standard_normal((n, a * (5 + classes), h, w)) for h, w in grids]


def _labels(rng, n, classes):
    out = []
    for _ in range(n):
        k = int(rng.integers(0, 3))
        rows = np.column_stack([rng.integers(0, classes, k), rng.uniform(0.1, 0.9, (k, 2)),
                                rng.uniform(0.1, 0.6, (k, 2))])
        out.append(rows.reshape(-1, 5))
    return out


ANCHORS = np.array([[[0.05, 0.06], [0.08, 0.1], [0.12, 0.1]],
                    [[0.15, 0.2], [0.25, 0.2], [0.3, 0.35]],
                    [[0.4, 0.45], [0.55, 0.5], [0.7, 0.8]]])


def hard(rng):
    heads = _heads(rng)
    labels = _labels(rng, 2, 2)
    return lambda *hs: hard_loss(list(hs), labels, ANCHORS)[0], heads


def attention(rng):
    c, h, w = int(rng.integers(1, 4)), 3, 2
    fs = rng.standard_normal((2, c, h, w))
    ft = rng.standard_normal((2, c, h, w))
    betas = [float(rng.uniform(0.5, 3))]
    qt = attention_vectors(Tensor(ft)).data
    return lambda fs: attention_loss([qt], [attention_vectors(fs)], betas), [fs]


def soft_class(rng):
    shapes = [(2, 3, 2, 2, 3), (2, 3, 1, 1, 3)]
    t = [rng.standard_normal(s) * 2 for s in shapes]
    T = float(rng.uniform(0.5, 4))
    return lambda *s: soft_class_loss(t, list(s), T), [rng.standard_normal(s) * 2 for s in shapes]


def soft_box(rng):
    head = rng.standard_normal((2, 3 * 7, 2, 2))
    k = int(rng.integers(1, 5))
    idx = (rng.integers(0, 2, k), rng.integers(0, 3, k), rng.integers(0, 2, k), rng.integers(0, 2, k))
    teacher = rng.uniform(0.1, 0.9, (k, 4))
    anchors = ANCHORS[0]

    def build(head):
        sb = student_boxes_at(head, anchors, idx)
        return soft_box_loss([teacher], [sb], [(np.arange(k),)])
    return build, [head]


TAPE_OPS = {"conv": conv, "batchnorm": batchnorm, "mish": mish, "leaky_relu": leaky, "add": add,
            "concat": concat, "upsample": upsample, "maxpool": maxpool, "spp": spp,
            "hard_loss": hard, "attention_loss": attention, "soft_class_loss": soft_class,
            "soft_box_loss": soft_box}


def sparse_penalty_error(rng) -> float:
    """The penalty's returned subgradient vs. FD of its value (away from gamma = 0)."""
    gam = _away_from_zero(rng, int(rng.integers(2, 30)), gap=0.01)
    rates = rng.uniform(0, 0.01, gam.size)
    _, sub = sparse_penalty(gam, rates)
    num = numeric_grad(lambda g: sparse_penalty(g, rates)[0], [gam.copy()], 0)
    return rel_error(sub, num)


def op_error(name: str, rng) -> float:
    if name == "sparse_penalty":
        return sparse_penalty_error(rng)
    build, arrays = TAPE_OPS[name](rng)
    return check(build, arrays)


ALL_OPS = tuple(TAPE_OPS) + ("sparse_penalty",)


def worst_errors(n=N_FIXTURES, seed=0) -> dict[str, float]:
    out = {}
    for i, name in enumerate(ALL_OPS):
        rng = np.random.default_rng([seed, i])
        out[name] = max(op_error(name, rng) for _ in range(n))
    return out


__all__ = ["ALL_OPS", "N_FIXTURES", "TOL", "op_error", "weighted", "worst_errors"]
