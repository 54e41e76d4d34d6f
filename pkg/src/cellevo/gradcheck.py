"""Central finite-difference checks for every differentiable op.

Each check builds a random small case in float64 ("wide" precision),
reduces the op's output to a scalar through a fixed random weighting, and
compares the analytic gradients with central differences at step 1e-5.
"""

from __future__ import annotations

import numpy as np

from cellevo.nn import (
    PRECISIONS,
    BatchNorm1d,
    Conv1d,
    Embedding,
    Linear,
    adaptive_avg_pool,
    adaptive_avg_pool_backward,
    concat_channels,
    concat_channels_backward,
    relu,
    relu_backward,
    softmax_cross_entropy,
)

STEP = 1e-5
TOLERANCE = 1e-4
WIDE = PRECISIONS["wide"]


def max_relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    err = np.where(diff == 0.0, 0.0, diff / scale)
    return float(err.max()) if err.size else 0.0


def numeric_gradient(f, x, step=STEP):
    """Central differences of a scalar function over every element of x."""
    grad = np.zeros_like(x, dtype=float)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = f()
        flat[i] = orig - step
        f_minus = f()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2 * step)
    return grad


def _loss_weights(rng, shape):
    return rng.standard_normal(shape)


def check_conv1d(rng):
    batch = int(rng.integers(1, 3))
    c_in = int(rng.integers(1, 4))
    c_out = int(rng.integers(1, 4))
    kernel = int(rng.choice([1, 3, 5, 7]))
    length = int(rng.integers(1, 9))
    stride = int(rng.integers(1, 4))
    padding = int(rng.integers(0, 3))
    layer = Conv1d(c_in, c_out, kernel, stride, padding, rng, WIDE)
    x = rng.standard_normal((batch, c_in, length))
    r = _loss_weights(rng, (batch, c_out, layer.output_length(length)))

    def f():
        return float((layer.forward(x) * r).sum())

    f()
    layer.W.grad[...] = 0
    layer.b.grad[...] = 0
    dx = layer.backward(r.copy())
    errs = [
        max_relative_error(dx, numeric_gradient(f, x)),
        max_relative_error(layer.W.grad, numeric_gradient(f, layer.W.data)),
        max_relative_error(layer.b.grad, numeric_gradient(f, layer.b.data)),
    ]
    return max(errs)


def check_batchnorm1d(rng):
    batch = int(rng.integers(2, 5))
    channels = int(rng.integers(1, 4))
    length = int(rng.integers(2, 7))
    layer = BatchNorm1d(channels, WIDE)
    layer.gamma.data = rng.standard_normal(channels) + 1.5
    layer.beta.data = rng.standard_normal(channels)
    x = rng.standard_normal((batch, channels, length))
    r = _loss_weights(rng, x.shape)

    def f():
        return float((layer.forward(x, train=True) * r).sum())

    f()
    layer.gamma.grad[...] = 0
    layer.beta.grad[...] = 0
    dx = layer.backward(r.copy())
    errs = [
        max_relative_error(dx, numeric_gradient(f, x)),
        max_relative_error(layer.gamma.grad, numeric_gradient(f, layer.gamma.data)),
        max_relative_error(layer.beta.grad, numeric_gradient(f, layer.beta.data)),
    ]
    return max(errs)


def check_linear(rng):
    batch = int(rng.integers(1, 5))
    n_in = int(rng.integers(1, 6))
    n_out = int(rng.integers(1, 6))
    layer = Linear(n_in, n_out, rng, WIDE)
    x = rng.standard_normal((batch, n_in))
    r = _loss_weights(rng, (batch, n_out))

    def f():
        return float((layer.forward(x) * r).sum())

    f()
    layer.W.grad[...] = 0
    layer.b.grad[...] = 0
    dx = layer.backward(r.copy())
    errs = [
        max_relative_error(dx, numeric_gradient(f, x)),
        max_relative_error(layer.W.grad, numeric_gradient(f, layer.W.data)),
        max_relative_error(layer.b.grad, numeric_gradient(f, layer.b.data)),
    ]
    return max(errs)


def check_embedding(rng):
    vocab = int(rng.integers(3, 8))
    dim = int(rng.integers(1, 5))
    batch = int(rng.integers(1, 3))
    length = int(rng.integers(1, 6))
    layer = Embedding(vocab, dim, rng, WIDE)
    idx = rng.integers(0, vocab, size=(batch, length))
    r = _loss_weights(rng, (batch, dim, length))

    def f():
        return float((layer.forward(idx) * r).sum())

    f()
    layer.table.grad[...] = 0
    layer.backward(r.copy())
    return max_relative_error(layer.table.grad, numeric_gradient(f, layer.table.data))


def check_relu(rng):
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 7)))
    x = rng.standard_normal(shape)
    x[np.abs(x) < 0.05] += 0.1  # keep clear of the kink
    r = _loss_weights(rng, shape)

    def f():
        return float((relu(x) * r).sum())

    dx = relu_backward(r.copy(), x)
    return max_relative_error(dx, numeric_gradient(f, x))


def check_concat_channels(rng):
    batch = int(rng.integers(1, 3))
    parts = [rng.standard_normal((batch, int(rng.integers(1, 4)), int(rng.integers(1, 7))))
             for _ in range(int(rng.integers(2, 4)))]
    out_shape = concat_channels(parts).shape
    r = _loss_weights(rng, out_shape)

    def f():
        return float((concat_channels(parts) * r).sum())

    grads = concat_channels_backward(r.copy(), [p.shape for p in parts])
    return max(max_relative_error(g, numeric_gradient(f, p)) for g, p in zip(grads, parts))


def check_adaptive_avg_pool(rng):
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 9)))
    x = rng.standard_normal(shape)
    r = _loss_weights(rng, shape[:2])

    def f():
        return float((adaptive_avg_pool(x) * r).sum())

    dx = adaptive_avg_pool_backward(r.copy(), shape[2])
    return max_relative_error(dx, numeric_gradient(f, x))


def check_softmax_cross_entropy(rng):
    batch = int(rng.integers(2, 6))
    classes = int(rng.integers(2, 6))
    logits = rng.standard_normal((batch, classes))
    labels = rng.integers(0, classes, size=batch)

    def f():
        return softmax_cross_entropy(logits, labels)[0]

    _, dlogits = softmax_cross_entropy(logits, labels)
    return max_relative_error(dlogits, numeric_gradient(f, logits))


CHECKS = {
    "conv1d": check_conv1d,
    "batchnorm1d": check_batchnorm1d,
    "linear": check_linear,
    "embedding": check_embedding,
    "relu": check_relu,
    "concat_channels": check_concat_channels,
    "adaptive_avg_pool": check_adaptive_avg_pool,
    "softmax_cross_entropy": check_softmax_cross_entropy,
}


def run_suite(cases_per_op: int = 20, seed: int = 0) -> dict:
    """Run every op's check on ``cases_per_op`` random shapes; returns the
    max relative error per op."""
    results = {}
    for i, name in enumerate(sorted(CHECKS)):
        rng = np.random.default_rng([seed, i])
        results[name] = max(CHECKS[name](rng) for _ in range(cases_per_op))
    return results
