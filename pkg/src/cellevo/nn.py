"""Minimal tensor/backprop engine for decoded phenotypes.

Implements exactly the layer set a phenotype needs: character embedding,
1-D convolution, temporal batch norm, ReLU, channel concatenation with
zero padding, adaptive average pooling, a linear classifier and softmax
cross-entropy, each with a hand-written backward pass.

Three precision policies are supported.  ``full`` computes and stores in
float32.  ``reduced`` emulates half-precision surrogate training: weights
and activations pass through float16 storage while all arithmetic and the
optimizer accumulate in float32.  ``wide`` is float64 end to end and is
what the finite-difference gradient checks run under.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from cellevo.decoder import INPUT, OUTPUT, PhenotypeGraph


class Precision:
    def __init__(self, compute, storage=None):
        self.compute = compute
        self.storage = storage

    def q(self, arr):
        """Round-trip through the storage dtype (no-op without one)."""
        if self.storage is None:
            return arr
        return arr.astype(self.storage).astype(self.compute)


PRECISIONS = {
    "full": Precision(np.float32),
    "reduced": Precision(np.float32, np.float16),
    "wide": Precision(np.float64),
}


class Param:
    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = data
        self.grad = np.zeros_like(data)

    @property
    def size(self):
        return self.data.size


# ---------------------------------------------------------------------------
# Functional ops
# ---------------------------------------------------------------------------

def relu(x):
    return np.maximum(x, 0)


def relu_backward(dy, x):
    return dy * (x > 0)


def concat_channels(xs):
    """Stack channels of same-batch tensors; shorter inputs are right-padded
    with zeros to the longest temporal length."""
    if not xs:
        raise ValueError("concat_channels needs at least one input")
    batch = xs[0].shape[0]
    if any(x.shape[0] != batch for x in xs):
        raise ValueError("concat_channels inputs must share the batch dimension")
    length = max(x.shape[2] for x in xs)
    channels = sum(x.shape[1] for x in xs)
    out = np.zeros((batch, channels, length), dtype=xs[0].dtype)
    offset = 0
    for x in xs:
        out[:, offset : offset + x.shape[1], : x.shape[2]] = x
        offset += x.shape[1]
    return out


def concat_channels_backward(dy, shapes):
    """Split a concat gradient back per input; gradients that fell on zero
    padding are dropped."""
    grads = []
    offset = 0
    for _, channels, length in shapes:
        grads.append(dy[:, offset : offset + channels, :length])
        offset += channels
    return grads


def adaptive_avg_pool(x):
    """Average over the temporal axis to length 1, returned as (batch, channels)."""
    return x.mean(axis=2)


def adaptive_avg_pool_backward(dy, length):
    return np.repeat(dy[:, :, None] / length, length, axis=2)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy via a numerically stable log-sum-exp, plus the
    gradient w.r.t. the logits.  The loss itself is accumulated in float64."""
    z = logits.astype(np.float64)
    z -= z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    se = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(se)
    n = len(labels)
    loss = -float(logp[np.arange(n), labels].mean())
    dlogits = ez / se
    dlogits[np.arange(n), labels] -= 1.0
    return loss, (dlogits / n).astype(logits.dtype)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

def _kaiming_normal(rng, shape, fan_in, dtype):
    # fan-in mode with the rectifier gain sqrt(2)
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Conv1d:
    def __init__(self, in_channels, out_channels, kernel, stride, padding, rng, policy):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self.policy = policy
        self.W = Param(_kaiming_normal(rng, (out_channels, in_channels, kernel),
                                       in_channels * kernel, policy.compute))
        self.b = Param(np.zeros(out_channels, dtype=policy.compute))
        self._cache = None

    def params(self):
        return [self.W, self.b]

    def output_length(self, length):
        padded = max(length + 2 * self.padding, self.kernel)
        return (padded - self.kernel) // self.stride + 1

    def forward(self, x):
        batch, channels, length = x.shape
        if channels != self.in_channels:
            raise ValueError(
                "conv1d expected %d input channels, got %d" % (self.in_channels, channels)
            )
        k, s, p = self.kernel, self.stride, self.padding
        padded = max(length + 2 * p, k)  # short inputs are right-padded to the kernel
        l_out = (padded - k) // s + 1
        xp = np.zeros((batch, channels, padded), dtype=x.dtype)
        xp[:, :, p : p + length] = x
        cols = np.empty((batch, channels, k, l_out), dtype=x.dtype)
        for j in range(k):
            cols[:, :, j, :] = xp[:, :, j : j + s * l_out : s]
        cols2 = cols.reshape(batch, channels * k, l_out)
        w2 = self.policy.q(self.W.data).reshape(self.out_channels, channels * k)
        y = np.matmul(w2, cols2) + self.policy.q(self.b.data)[:, None]
        self._cache = (cols2, length, padded, l_out, w2)
        return y

    def backward(self, dy):
        cols2, length, padded, l_out, w2 = self._cache
        batch = dy.shape[0]
        k, s, p = self.kernel, self.stride, self.padding
        self.b.grad += dy.sum(axis=(0, 2))
        dw = np.tensordot(dy, cols2, axes=([0, 2], [0, 2]))
        self.W.grad += dw.reshape(self.W.data.shape)
        dcols = np.matmul(w2.T, dy).reshape(batch, self.in_channels, k, l_out)
        dxp = np.zeros((batch, self.in_channels, padded), dtype=dy.dtype)
        for j in range(k):
            dxp[:, :, j : j + s * l_out : s] += dcols[:, :, j, :]
        return dxp[:, :, p : p + length]


class BatchNorm1d:
    def __init__(self, channels, policy, momentum=0.1, eps=1e-5):
        self.channels = channels
        self.policy = policy
        self.momentum = momentum
        self.eps = eps
        self.gamma = Param(np.ones(channels, dtype=policy.compute))
        self.beta = Param(np.zeros(channels, dtype=policy.compute))
        self.running_mean = np.zeros(channels, dtype=policy.compute)
        self.running_var = np.ones(channels, dtype=policy.compute)
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def forward(self, x, train):
        if train:
            mean = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            n = x.shape[0] * x.shape[2]
            m = self.momentum
            self.running_mean = ((1 - m) * self.running_mean + m * mean).astype(self.policy.compute)
            unbiased = var * n / (n - 1) if n > 1 else var
            self.running_var = ((1 - m) * self.running_var + m * unbiased).astype(self.policy.compute)
        else:
            mean = self.running_mean
            var = self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[:, None]) * inv[:, None]
        y = self.policy.q(self.gamma.data)[:, None] * xhat + self.policy.q(self.beta.data)[:, None]
        if train:
            self._cache = (xhat, inv)
        return y

    def backward(self, dy):
        xhat, inv = self._cache
        self.gamma.grad += (dy * xhat).sum(axis=(0, 2))
        self.beta.grad += dy.sum(axis=(0, 2))
        g = self.policy.q(self.gamma.data)[:, None]
        mean_dy = dy.mean(axis=(0, 2), keepdims=True)
        mean_dyx = (dy * xhat).mean(axis=(0, 2), keepdims=True)
        return g * inv[:, None] * (dy - mean_dy - xhat * mean_dyx)


class Linear:
    def __init__(self, in_features, out_features, rng, policy):
        self.policy = policy
        self.W = Param(_kaiming_normal(rng, (out_features, in_features), in_features,
                                       policy.compute))
        self.b = Param(np.zeros(out_features, dtype=policy.compute))
        self._cache = None

    def params(self):
        return [self.W, self.b]

    def forward(self, x):
        w = self.policy.q(self.W.data)
        # per-sample matmul keeps results bit-identical across batch sizes
        y = np.matmul(x[:, None, :], w.T)[:, 0, :] + self.policy.q(self.b.data)
        self._cache = (x, w)
        return y

    def backward(self, dy):
        x, w = self._cache
        self.W.grad += np.tensordot(dy, x, axes=([0], [0]))
        self.b.grad += dy.sum(axis=0)
        return np.matmul(dy, w)


class Embedding:
    def __init__(self, vocab_size, dim, rng, policy):
        self.policy = policy
        self.table = Param(rng.standard_normal((vocab_size, dim)).astype(policy.compute))
        self._cache = None

    def params(self):
        return [self.table]

    def forward(self, idx):
        t = self.policy.q(self.table.data)
        out = t[idx].transpose(0, 2, 1)  # (batch, dim, length)
        self._cache = idx
        return out

    def backward(self, dy):
        idx = self._cache
        dim = dy.shape[1]
        np.add.at(self.table.grad, idx.reshape(-1), dy.transpose(0, 2, 1).reshape(-1, dim))


class CellBlock:
    """Two (conv -> batch norm -> ReLU) stages; the cell's stride applies
    to the first convolution, the second runs at stride 1."""

    def __init__(self, cell, rng, policy):
        self.conv1 = Conv1d(cell.in_channels, cell.out_channels, cell.kernel,
                            cell.stride, cell.padding, rng, policy)
        self.bn1 = BatchNorm1d(cell.out_channels, policy)
        self.conv2 = Conv1d(cell.out_channels, cell.out_channels, cell.kernel,
                            1, cell.padding, rng, policy)
        self.bn2 = BatchNorm1d(cell.out_channels, policy)
        self.policy = policy
        self._cache = None

    def params(self):
        return self.conv1.params() + self.bn1.params() + self.conv2.params() + self.bn2.params()

    def forward(self, x, train, capture=None):
        q = self.policy.q
        a1 = q(self.conv1.forward(x))
        h1 = q(self.bn1.forward(a1, train))
        r1 = relu(h1)
        a2 = q(self.conv2.forward(r1))
        h2 = q(self.bn2.forward(a2, train))
        r2 = relu(h2)
        if capture is not None:
            capture["conv1"] = a1[0].copy()
            capture["bn1"] = h1[0].copy()
            capture["relu1"] = r1[0].copy()
            capture["conv2"] = a2[0].copy()
            capture["bn2"] = h2[0].copy()
            capture["relu2"] = r2[0].copy()
        self._cache = (h1, h2)
        return r2

    def backward(self, dy):
        h1, h2 = self._cache
        d = relu_backward(dy, h2)
        d = self.bn2.backward(d)
        d = self.conv2.backward(d)
        d = relu_backward(d, h1)
        d = self.bn1.backward(d)
        return self.conv1.backward(d)


class Network:
    """A trainable phenotype: embedding, cells executed in topological
    order with channel concatenation at shared inputs, then pool + linear."""

    def __init__(self, graph: PhenotypeGraph, vocab_size, class_count, rng,
                 precision="full"):
        if not graph.resolved:
            raise ValueError("graph channels must be resolved before building a network")
        self.graph = graph
        self.vocab_size = vocab_size
        self.class_count = class_count
        self.precision = precision
        self.policy = PRECISIONS[precision]
        self.embedding = Embedding(vocab_size, graph.embed_dim, rng, self.policy)
        self.cells = {}
        for cell in graph.cells:  # ascending id order fixes the init draw order
            self.cells[cell.id] = CellBlock(cell, rng, self.policy)
        self.fc = Linear(graph.fc_in, class_count, rng, self.policy)
        self.order = graph.topological_cells()
        self._cache = None

    def params(self):
        out = self.embedding.params()
        for cid in sorted(self.cells):
            out.extend(self.cells[cid].params())
        out.extend(self.fc.params())
        return out

    def parameter_count(self):
        return sum(p.size for p in self.params())

    def zero_grad(self):
        for p in self.params():
            p.grad[...] = 0

    def _gather(self, outs, node):
        srcs = self.graph.in_edges[node]
        xs = [outs[s] for s in srcs]
        if len(xs) == 1:
            return xs[0], None
        return concat_channels(xs), [x.shape for x in xs]

    def forward(self, idx, train=False, capture=None):
        outs = {INPUT: self.embedding.forward(idx)}
        gathers = {}
        for cid in self.order:
            x, shapes = self._gather(outs, cid)
            gathers[cid] = shapes
            cap = None
            if capture is not None:
                cap = capture.setdefault(cid, {})
            outs[cid] = self.cells[cid].forward(x, train, cap)
        xcat, out_shapes = self._gather(outs, OUTPUT)
        pooled = self.policy.q(adaptive_avg_pool(xcat))
        logits = self.policy.q(self.fc.forward(pooled))
        self._cache = (gathers, out_shapes, xcat.shape[2],
                       {n: o.shape for n, o in outs.items()})
        return logits

    def _scatter(self, grads_by_node, node, dx, shapes):
        srcs = self.graph.in_edges[node]
        if shapes is None:
            parts = [dx]
        else:
            parts = concat_channels_backward(dx, shapes)
        for src, part in zip(srcs, parts):
            if src in grads_by_node:
                grads_by_node[src] = grads_by_node[src] + part
            else:
                grads_by_node[src] = part

    def backward(self, dlogits):
        gathers, out_shapes, cat_length, shapes_by_node = self._cache
        dpooled = self.fc.backward(dlogits)
        dxcat = adaptive_avg_pool_backward(dpooled, cat_length)
        grads = {}
        self._scatter(grads, OUTPUT, dxcat, out_shapes)
        for cid in reversed(self.order):
            dy = grads.pop(cid)
            assert dy.shape == shapes_by_node[cid]
            dx = self.cells[cid].backward(dy)
            self._scatter(grads, cid, dx, gathers[cid])
        self.embedding.backward(grads[INPUT])


def build_network(graph, vocab_size, class_count, rng, precision="full") -> Network:
    return Network(graph, vocab_size, class_count, rng, precision)


# ---------------------------------------------------------------------------
# Training and evaluation
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    lr0: float = 0.01
    momentum: float = 0.9
    lr_halve_every: int = 3
    precision: str = "full"
    seed: int = 0

    def validate(self):
        from cellevo.errors import ConfigError

        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if self.lr_halve_every < 1:
            raise ConfigError("lr_halve_every must be >= 1")


def schedule_lr(lr0, halve_every, epoch):
    """Halve the initial rate after every ``halve_every`` epochs (0-based)."""
    return lr0 * 0.5 ** (epoch // halve_every)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def to_csv(self, path):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_accuracy", "lr", "seconds"])
            for e in range(len(self.train_loss)):
                w.writerow([e, repr(self.train_loss[e]), repr(self.val_accuracy[e]),
                            repr(self.lr[e]), repr(self.seconds[e])])


def sgd_step(params, velocities, lr, momentum):
    for p, v in zip(params, velocities):
        v *= momentum
        v += p.grad
        p.data -= lr * v


def train(network: Network, train_set, val_set, cfg: TrainConfig, rng=None) -> TrainHistory:
    """SGD with momentum over shuffled mini-batches.

    The learning rate follows the halving schedule; validation accuracy is
    recorded after every epoch.  Deterministic given (seed, config, data).
    """
    cfg.validate()
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation sets must be non-empty")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    params = network.params()
    velocities = [np.zeros_like(p.data) for p in params]
    history = TrainHistory()
    n = len(train_set)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = schedule_lr(cfg.lr0, cfg.lr_halve_every, epoch)
        perm = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            sel = perm[start : start + cfg.batch_size]
            if len(sel) == 0:
                continue
            network.zero_grad()
            logits = network.forward(train_set.X[sel], train=True)
            loss, dlogits = softmax_cross_entropy(logits, train_set.y[sel])
            network.backward(dlogits)
            sgd_step(params, velocities, lr, cfg.momentum)
            loss_sum += loss * len(sel)
        history.train_loss.append(loss_sum / n)
        history.val_accuracy.append(evaluate(network, val_set, cfg.batch_size))
        history.lr.append(lr)
        history.seconds.append(time.perf_counter() - t0)
    return history


def evaluate(network: Network, dataset, batch_size=128) -> float:
    """Argmax accuracy in eval mode (batch norm running statistics)."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    correct = 0
    for start in range(0, len(dataset), batch_size):
        x = dataset.X[start : start + batch_size]
        logits = network.forward(x, train=False)
        correct += int((logits.argmax(axis=1) == dataset.y[start : start + batch_size]).sum())
    return correct / len(dataset)


def capture_activations(network: Network, sample) -> dict:
    """Per-cell post-conv, post-bn and post-ReLU feature maps for one
    encoded sample, in eval mode.  Keys are cell ids; values map stage
    names to (channels, length) arrays."""
    capture = {}
    network.forward(np.asarray(sample)[None, :], train=False, capture=capture)
    return capture


ACTIVATION_STAGES = ["conv1", "bn1", "relu1", "conv2", "bn2", "relu2"]


def write_activations(capture: dict, out_dir) -> list:
    """One CSV per cell: stage,channel,position,value rows in stable order."""
    import csv
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for cid in sorted(capture):
        path = out_dir / ("cell_%d.csv" % cid)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", "channel", "position", "value"])
            for stage in ACTIVATION_STAGES:
                arr = capture[cid][stage]
                for ch in range(arr.shape[0]):
                    for pos in range(arr.shape[1]):
                        w.writerow([stage, ch, pos, repr(float(arr[ch, pos]))])
        paths.append(path)
    return paths
