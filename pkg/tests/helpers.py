"""Shared fixtures for the unit and acceptance tests."""

import numpy as np

from pcrealism import spatial
from pcrealism.net import MetricModel, weighted_cross_entropy


def small_model(rng, u_a=4, lam=0.3, seed=0):
    """A MetricModel with random narrow widths, in float64."""
    w1 = tuple(int(v) for v in rng.integers(2, 7, size=3))
    w2 = tuple(int(v) for v in rng.integers(2, 7, size=3))
    cls = type("SmallModel", (MetricModel,), {"level1": w1, "level2": w2,
                                              "hidden": int(rng.integers(2, 7))})
    model = cls(u_a=u_a, lam=lam, seed=seed, dtype=np.float64)
    # non-zero biases keep the self-neighbour (local xyz = 0) off the kink
    for key, p in model.params.items():
        if key.endswith(".b"):
            p[:] = rng.normal(size=p.shape) * 0.5
    return model


def small_neighborhoods(rng, n=40, q1=12, q2=4, k1=4, k2=3):
    pts = rng.normal(size=(n, 3))
    return spatial.build_neighborhoods(pts, q1=q1, q2=q2, k1=k1, k2=k2, budget=None)


def central_difference(f, x, idx, h=1e-3):
    """d f / d x[idx] by central differences; ``x`` is perturbed in place."""
    old = x[idx]
    x[idx] = old + h
    fp = f()
    x[idx] = old - h
    fm = f()
    x[idx] = old
    return (fp - fm) / (2 * h)


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / den)


def region(model, nh):
    """Signature of the piecewise-linear region: activation signs and max winners."""
    z, (c1, arg1, _, c2, arg2, _, _) = model.extract(nh)
    parts = [arg1.ravel(), arg2.ravel()]
    for inputs, out in (c1, c2):
        for a in (*inputs[1:], out):
            parts.append((a > 0).ravel())
    for which in ("C", "A"):
        _, (_, h, _, _) = model.head(which, z)
        parts.append((h > 0).ravel())
    return np.concatenate([p.astype(np.int64) for p in parts])


def smooth_central_difference(model, nh, f, x, idx, h=1e-3):
    """Central difference, or None when x[idx] +- h leaves the current region."""
    base = region(model, nh)
    old = x[idx]
    for step in (h, -h):
        x[idx] = old + step
        same = np.array_equal(region(model, nh), base)
        x[idx] = old
        if not same:
            return None
    return central_difference(f, x, idx, h)


def model_gradient_check(model, nh, f, grads, keys, rng, per_key=4, h=1e-3):
    """Max relative error over ``keys`` between ``grads`` and central differences.

    Entries are drawn at random; draws whose perturbation crosses a kink or
    changes a max winner are replaced by fresh draws. Returns None when some
    key has no smooth entry at all (the caller should draw a new instance).
    """
    worst = 0.0
    for key in keys:
        p = model.params[key]
        ana, num = [], []
        for _ in range(50 * per_key):
            i = tuple(int(rng.integers(s)) for s in p.shape)
            d = smooth_central_difference(model, nh, f, p, i, h)
            if d is None:
                continue
            ana.append(grads[key][i])
            num.append(d)
            if len(num) == per_key:
                break
        if not num:
            return None
        worst = max(worst, rel_error(ana, num))
    return worst


def forward_losses(model, nh, category, dataset):
    """(L_C, L_A) of one cloud, dropout off, unit weights."""
    z, _ = model.extract(nh)
    lc, _ = weighted_cross_entropy(model.head("C", z)[0].logits, category, 1.0)
    la, _ = weighted_cross_entropy(model.head("A", z)[0].logits, dataset, 1.0)
    return lc, la


def reversal_errors(model, nh, rng):
    """(extractor error vs -lambda * numeric, adversary-head error) or None."""
    lam = model.lam
    g_both = model.zero_grads()
    model.loss_and_grads(nh, 0, 1, 1.0, g_both, dropout_on=False)
    g_cls = model.zero_grads()
    model.loss_and_grads(nh, 0, 1, 0.0, g_cls, dropout_on=False)
    f_keys = [k for k in model.params if k.startswith("F")]
    # the adversary's share of the extractor gradient, divided by -lambda
    adv = {k: (g_both[k] - g_cls[k]) / -lam for k in f_keys}
    loss_a = lambda: forward_losses(model, nh, 0, 1)[1]  # noqa: E731
    e_f = model_gradient_check(model, nh, loss_a, adv, f_keys, rng)
    a_keys = [k for k in model.params if k.startswith("A")]
    e_a = model_gradient_check(model, nh, loss_a, g_both, a_keys, rng)
    if e_f is None or e_a is None:
        return None
    return e_f, e_a
