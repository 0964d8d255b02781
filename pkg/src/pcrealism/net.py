"""Layers, losses and optimizer for the realism network.

There is no general autodiff here: each layer has a ``forward`` that
returns its output together with whatever the matching ``backward`` needs,
and gradients are accumulated into a name -> array dict that mirrors the
parameter dict. Shapes follow the ``[Q, K, C]`` / ``[Q, C]`` convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .spatial import Neighborhoods

LEAKY_SLOPE = 0.2
DROPOUT_RATE = 0.5

CATEGORIES = ("real", "synthetic", "misc")


@numba.vectorize(["float32(float32)", "float64(float64)"], cache=True)
def leaky_relu(x):
    return x if x > 0 else x * LEAKY_SLOPE


# sign(y) == sign(x) for a positive slope, so the output is enough
@numba.vectorize(["float32(float32, float32)", "float64(float64, float64)"], cache=True)
def leaky_relu_backward(y, g):
    return g if y > 0 else g * LEAKY_SLOPE


def softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class Dense:
    """Affine map over the last axis, shared across all leading axes.

    Applied to ``[Q, K, C]`` blocks this is the 1x1 convolution of a
    per-point MLP.
    """

    def __init__(self, name: str, n_in: int, n_out: int):
        self.name = name
        self.n_in = n_in
        self.n_out = n_out

    @property
    def keys(self):
        return (f"{self.name}.W", f"{self.name}.b")

    def init(self, params, rng, dtype=np.float32):
        bound = np.sqrt(6.0 / self.n_in)
        params[f"{self.name}.W"] = rng.uniform(-bound, bound, (self.n_in, self.n_out)).astype(dtype)
        params[f"{self.name}.b"] = np.zeros(self.n_out, dtype=dtype)

    def forward(self, params, x):
        return x @ params[f"{self.name}.W"] + params[f"{self.name}.b"]

    def backward(self, params, grads, x, g, need_dx: bool = True):
        W = params[f"{self.name}.W"]
        x2 = x.reshape(-1, self.n_in)
        g2 = g.reshape(-1, self.n_out)
        grads[f"{self.name}.W"] += x2.T @ g2
        grads[f"{self.name}.b"] += g2.sum(axis=0)
        if not need_dx:
            return None
        return g @ W.T


class MLP:
    """Stack of Dense + leaky ReLU layers (every layer activated)."""

    def __init__(self, name: str, n_in: int, widths):
        self.layers = []
        for i, w in enumerate(widths):
            self.layers.append(Dense(f"{name}.{i}", n_in, w))
            n_in = w

    def init(self, params, rng, dtype=np.float32):
        for layer in self.layers:
            layer.init(params, rng, dtype)

    def forward(self, params, x):
        inputs = []
        for layer in self.layers:
            inputs.append(x)
            x = leaky_relu(layer.forward(params, x))
        return x, (inputs, x)

    def backward(self, params, grads, cache, g, need_dx: bool = True):
        inputs, out = cache
        n = len(self.layers)
        for i, (layer, x) in enumerate(zip(reversed(self.layers), reversed(inputs))):
            g = leaky_relu_backward(out, g)
            g = layer.backward(params, grads, x, g, need_dx or i < n - 1)
            out = x
        return g


@numba.njit(cache=True)
def neighbor_max(x):
    """Max over the neighbour axis of ``[Q, K, C]``.

    Returns the ``[Q, C]`` maxima and the winning neighbour per channel;
    on ties the first neighbour in canonical order wins.
    """
    q, k, c = x.shape
    out = x[:, 0, :].copy()
    arg = np.zeros((q, c), dtype=np.int64)
    for i in range(q):
        for j in range(1, k):
            for h in range(c):
                if x[i, j, h] > out[i, h]:
                    out[i, h] = x[i, j, h]
                    arg[i, h] = j
    return out, arg


@numba.njit(cache=True)
def neighbor_max_backward(arg, g, k):
    q, c = g.shape
    out = np.zeros((q, k, c), dtype=g.dtype)
    for i in range(q):
        for h in range(c):
            out[i, arg[i, h], h] = g[i, h]
    return out


@numba.njit(cache=True)
def scatter_rows(index, rows, n):
    """``out[index[i]] += rows[i]`` into an ``[n, C]`` zero array."""
    out = np.zeros((n, rows.shape[1]), dtype=rows.dtype)
    for i in range(index.shape[0]):
        j = index[i]
        for h in range(rows.shape[1]):
            out[j, h] += rows[i, h]
    return out


def dropout(x, rate, rng):
    """Inverted dropout; returns the output and the scaled keep-mask."""
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * keep, keep


class GradientReversal:
    """Identity on the forward pass; scales the backward gradient by -lam."""

    def __init__(self, lam: float):
        if lam < 0:
            raise ValueError(f"lambda must be >= 0, got {lam}")
        self.lam = lam

    def forward(self, x):
        return x

    def backward(self, g):
        return (-self.lam) * g


def weighted_cross_entropy(logits, target: int, weight: float = 1.0):
    """Mean over rows of ``-log softmax(logits)[target]``, times ``weight``.

    All rows share one target class (one label per cloud). Returns the loss
    and its gradient with respect to ``logits``.
    """
    if weight < 0:
        raise ValueError("weight must be >= 0")
    q, u = logits.shape
    if not 0 <= target < u:
        raise ValueError(f"target {target} outside [0, {u})")
    if weight == 0:
        return 0.0, np.zeros_like(logits)
    logp = log_softmax(logits)
    loss = -float(logp[:, target].mean()) * weight
    grad = np.exp(logp)
    grad[:, target] -= 1.0
    grad *= weight / q
    return loss, grad


def lr_schedule(t, lr0=1e-3, warmup=500, gamma=0.5, decay_steps=5000):
    """Warm-up to ``lr0`` over ``warmup`` steps, then exponential decay."""
    warm = min(t / warmup, 1.0) if warmup > 0 else 1.0
    return lr0 * warm * gamma ** (max(t - warmup, 0) / decay_steps)


@dataclass
class Adam:
    lr0: float = 1e-3
    warmup: int = 500
    gamma: float = 0.5
    decay_steps: int = 5000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def lr(self, t=None):
        return lr_schedule(self.t if t is None else t, self.lr0, self.warmup, self.gamma, self.decay_steps)

    def step(self, params, grads):
        """Apply one in-place update; ``t`` counts from 1."""
        self.t += 1
        lr = self.lr()
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            p = params[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def adam_step(params, grads, t, schedule=None, state=None):
    """Functional wrapper: one Adam update at step ``t`` (>= 1).

    ``state`` is an :class:`Adam` carrying the moments; a fresh one is used
    when omitted. Returns the updated parameter dict (updated in place).
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    opt = state if state is not None else Adam(**(schedule or {}))
    opt.t = t - 1
    opt.step(params, grads)
    return params


@dataclass
class HeadOutput:
    logits: np.ndarray
    probs: np.ndarray


class MetricModel:
    """Feature extractor plus classifier and adversary heads.

    Parameters live in ``self.params`` (name -> array). ``u_a`` is the number
    of adversary outputs (one per dataset), ``lam`` the reversal factor.
    """

    level1 = (64, 64, 128)
    level2 = (128, 128, 256)
    hidden = 128

    def __init__(self, u_a: int = 7, lam: float = 0.3, seed: int = 0,
                 dtype=np.float32, u_c: int = 3):
        if u_c != 3:
            raise ValueError("the classifier has exactly three categories")
        if lam < 0:
            raise ValueError("lambda must be >= 0")
        self.u_c = u_c
        self.u_a = u_a
        self.lam = lam
        self.seed = seed
        self.mlp1 = MLP("F1", 3, self.level1)
        self.mlp2 = MLP("F2", 3 + self.level1[-1], self.level2)
        self.heads = {
            "C": (Dense("C.0", self.level2[-1], self.hidden), Dense("C.1", self.hidden, u_c)),
            "A": (Dense("A.0", self.level2[-1], self.hidden), Dense("A.1", self.hidden, u_a)),
        }
        self.params = {}
        rng = np.random.default_rng(seed)
        self.mlp1.init(self.params, rng, dtype)
        self.mlp2.init(self.params, rng, dtype)
        for dense in (*self.heads["C"], *self.heads["A"]):
            dense.init(self.params, rng, dtype)

    @property
    def dtype(self):
        return self.params["F1.0.W"].dtype

    def astype(self, dtype):
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        return self

    def zero_grads(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def hparams(self):
        return {"u_c": self.u_c, "u_a": self.u_a, "lam": self.lam, "seed": self.seed}

    # -- feature extractor ------------------------------------------------

    def extract(self, nh: Neighborhoods):
        """Latent features ``z [Q2, 256]`` and the backward cache."""
        dt = self.dtype
        local1 = nh.local1.astype(dt, copy=False)
        h1, c1 = self.mlp1.forward(self.params, local1)
        f1, arg1 = neighbor_max(h1)
        grouped = np.concatenate([nh.local2.astype(dt, copy=False), f1[nh.nbr2]], axis=-1)
        h2, c2 = self.mlp2.forward(self.params, grouped)
        z, arg2 = neighbor_max(h2)
        return z, (c1, arg1, f1.shape, c2, arg2, nh.nbr2, local1.shape[1])

    def extract_backward(self, grads, cache, dz):
        c1, arg1, f1_shape, c2, arg2, nbr2, k1 = cache
        dh2 = neighbor_max_backward(arg2, dz, nbr2.shape[1])
        dgrouped = self.mlp2.backward(self.params, grads, c2, dh2)
        dfeat = np.ascontiguousarray(dgrouped[..., 3:]).reshape(-1, f1_shape[1])
        df1 = scatter_rows(nbr2.ravel(), dfeat, f1_shape[0])
        dh1 = neighbor_max_backward(arg1, df1, k1)
        self.mlp1.backward(self.params, grads, c1, dh1, need_dx=False)

    # -- heads ------------------------------------------------------------

    def head(self, which: str, z, dropout_on: bool = False, rng=None):
        """Dense(128) + leaky ReLU -> dropout -> Dense(U) -> softmax."""
        d0, d1 = self.heads[which]
        h = leaky_relu(d0.forward(self.params, z))
        keep = None
        if dropout_on:
            if rng is None:
                raise ValueError("dropout needs an rng")
            h_drop, keep = dropout(h, DROPOUT_RATE, rng)
        else:
            h_drop = h
        logits = d1.forward(self.params, h_drop)
        return HeadOutput(logits, softmax(logits)), (z, h, keep, h_drop)

    def head_backward(self, which: str, grads, cache, dlogits):
        d0, d1 = self.heads[which]
        z, h, keep, h_drop = cache
        dh = d1.backward(self.params, grads, h_drop, dlogits)
        if keep is not None:
            dh = dh * keep
        dh = leaky_relu_backward(h, dh)
        return d0.backward(self.params, grads, z, dh)

    # -- whole model ------------------------------------------------------

    def predict(self, nh: Neighborhoods):
        """Inference: per-query classifier probabilities ``[Q2, 3]``."""
        z, _ = self.extract(nh)
        return self.head("C", z)[0].probs

    def loss_and_grads(self, nh: Neighborhoods, category: int, dataset: int,
                       adv_weight: float, grads, rng=None, dropout_on: bool = True,
                       scale: float = 1.0):
        """Forward/backward for one cloud under the combined objective.

        The classifier loss has weight 1, the adversary loss ``adv_weight``.
        The adversary head receives its plain gradient; the feature extractor
        receives it through the reversal node. Gradients are multiplied by
        ``scale`` (batch averaging) and added to ``grads``.
        """
        z, fcache = self.extract(nh)
        out_c, hc = self.head("C", z, dropout_on, rng)
        out_a, ha = self.head("A", GradientReversal(self.lam).forward(z), dropout_on, rng)
        loss_c, dlc = weighted_cross_entropy(out_c.logits, category, 1.0)
        loss_a, dla = weighted_cross_entropy(out_a.logits, dataset, adv_weight)
        dz = self.head_backward("C", grads, hc, dlc * scale)
        if adv_weight != 0:
            dza = self.head_backward("A", grads, ha, dla * scale)
            dz = dz + GradientReversal(self.lam).backward(dza)
        self.extract_backward(grads, fcache, dz)
        return loss_c, loss_a, out_c, out_a
