"""Adversarial proxy-classification training and its bookkeeping."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import spatial
from .datasets import DatasetSpec, check_datasets, default_datasets
from .net import Adam, MetricModel
from .pcgen import MISC, REAL, SYNTHETIC, derive_seed

log = logging.getLogger(__name__)

TRAIN_SPLIT, TEST_SPLIT = 0, 1


@dataclass
class TrainConfig:
    datasets: list = field(default_factory=default_datasets)
    batch_size: int = 8
    steps: int = 6000
    lam: float = 0.3
    seed: int = 0
    model_seed: int = 0
    eval_every: int = 0
    eval_clouds: int = 60
    lr0: float = 1e-3
    warmup: int = 500
    gamma: float = 0.5
    decay_steps: int = 5000
    point_budget: int = 16384
    u_a: int | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        check_datasets(self.datasets)

    @property
    def n_outputs_adversary(self) -> int:
        need = max(s.dataset_id for s in self.datasets) + 1
        if self.u_a is None:
            return need
        if self.u_a < need:
            raise ValueError(f"u_a={self.u_a} is smaller than the largest dataset id + 1 ({need})")
        return self.u_a

    def adversary_weights(self) -> dict:
        """Per-dataset adversary loss weight: 1 for Real sets, 0 otherwise."""
        return {s.dataset_id: 1.0 if s.category == REAL else 0.0 for s in self.datasets}

    def new_model(self) -> MetricModel:
        return MetricModel(u_a=self.n_outputs_adversary, lam=self.lam, seed=self.model_seed)

    def new_optimizer(self) -> Adam:
        return Adam(lr0=self.lr0, warmup=self.warmup, gamma=self.gamma, decay_steps=self.decay_steps)


@dataclass
class Sample:
    nh: spatial.Neighborhoods
    category: int
    dataset: int


class SampleSource:
    """Deterministic cloud supply for training and evaluation.

    Sample ``i`` of dataset ``d`` in split ``s`` is generated from seed
    ``derive_seed(seed, s, d, i)``. Finite training sets are cached after
    the neighbourhood computation, so each distinct cloud is processed
    once; infinite streams are regenerated on every draw.
    """

    def __init__(self, datasets, seed: int = 0, point_budget: int = 16384, cache: bool = True):
        self.datasets = {s.dataset_id: s for s in datasets}
        self.seed = seed
        self.point_budget = point_budget
        self.cache = {} if cache else None

    def cloud(self, dataset_id: int, index: int, split: int = TRAIN_SPLIT):
        spec = self.dataset(dataset_id)
        return spec.generate(derive_seed(self.seed, split, dataset_id, index))

    def dataset(self, dataset_id: int) -> DatasetSpec:
        try:
            return self.datasets[dataset_id]
        except KeyError:
            raise KeyError(f"unknown dataset id {dataset_id}") from None

    def sample(self, dataset_id: int, index: int, split: int = TRAIN_SPLIT) -> Sample:
        spec = self.dataset(dataset_id)
        key = (split, dataset_id, index)
        if self.cache is not None and spec.size is not None and key in self.cache:
            return self.cache[key]
        pc = self.cloud(dataset_id, index, split)
        s = Sample(spatial.build_neighborhoods(pc.points, budget=self.point_budget),
                   spec.category, dataset_id)
        if self.cache is not None and spec.size is not None:
            self.cache[key] = s
        return s


def draw_batch(config: TrainConfig, step: int):
    """(dataset id, sample index) pairs for one step.

    Categories are drawn uniformly, then a dataset uniformly within the
    category; finite sets draw an index below their size, streams use a
    fresh index per (step, slot).
    """
    rng = np.random.default_rng(derive_seed(config.seed, 2, step))
    by_cat = {c: [s for s in config.datasets if s.category == c] for c in (REAL, SYNTHETIC, MISC)}
    out = []
    for slot in range(config.batch_size):
        cands = by_cat[int(rng.integers(3))]
        spec = cands[int(rng.integers(len(cands)))]
        if spec.size is None:
            index = step * config.batch_size + slot
        else:
            if spec.size == 0:
                raise ValueError(f"dataset {spec.name} is empty")
            index = int(rng.integers(spec.size))
        out.append((spec.dataset_id, index))
    return out


def train_step(model: MetricModel, opt: Adam, batch, adv_weights: dict, rng):
    """One combined update on a batch of :class:`Sample`.

    Losses (and gradients) are averaged over the clouds in the batch.
    Returns ``(loss_c, loss_a)``.
    """
    grads = model.zero_grads()
    lc = la = 0.0
    scale = 1.0 / len(batch)
    for s in batch:
        if s.dataset not in adv_weights:
            raise KeyError(f"unknown dataset id {s.dataset}")
        c, a, _, _ = model.loss_and_grads(s.nh, s.category, s.dataset, adv_weights[s.dataset],
                                          grads, rng=rng, dropout_on=True, scale=scale)
        lc += c * scale
        la += a * scale
    opt.step(model.params, grads)
    return lc, la


@dataclass
class EvalResult:
    """Held-out accuracies.

    ``confusion_c`` counts clouds, ``confusion_a`` counts query points of
    Real clouds. ``acc_a_cloud`` is the cloud-level majority vote of the
    adversary, kept for reference.
    """

    acc_c: float
    acc_a: float
    confusion_c: np.ndarray
    confusion_a: np.ndarray
    n_clouds: int
    n_real: int
    acc_a_cloud: float = float("nan")


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)
    final: EvalResult | None = None

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss_c", "loss_a", "acc_c", "acc_a"])
        for r in self.rows:
            w.writerow([r["step"], _fmt(r.get("loss_c")), _fmt(r.get("loss_a")),
                        _fmt(r.get("acc_c")), _fmt(r.get("acc_a"))])
        return buf.getvalue()


def _fmt(x):
    return "" if x is None else repr(float(x))


def confusion_csv(matrix: np.ndarray, row_labels, col_labels) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred", *col_labels])
    for label, row in zip(row_labels, matrix):
        w.writerow([label, *[int(v) for v in row]])
    return buf.getvalue()


def evaluate(model: MetricModel, source: SampleSource, n_per_dataset: int,
             split: int = TEST_SPLIT, dataset_ids=None) -> EvalResult:
    """Held-out accuracy of both heads (dropout off).

    A cloud's category is the argmax of its scene score. The adversary is
    scored on the query points of Real clouds only, at the level it is
    trained on. A majority vote over a cloud's queries turns any per-query
    bias into a confident cloud label, so it is reported separately.
    """
    ids = sorted(source.datasets) if dataset_ids is None else list(dataset_ids)
    if n_per_dataset < 1 or not ids:
        raise ValueError("empty evaluation set")
    conf_c = np.zeros((3, 3), dtype=np.int64)
    conf_a = np.zeros((model.u_a, model.u_a), dtype=np.int64)
    n_real = cloud_hits = 0
    for d in ids:
        for i in range(n_per_dataset):
            s = source.sample(d, i, split)
            z, _ = model.extract(s.nh)
            pc = model.head("C", z)[0].probs
            conf_c[s.category, int(pc.mean(axis=0).argmax())] += 1
            if s.category == REAL:
                votes = np.bincount(model.head("A", z)[0].logits.argmax(axis=1), minlength=model.u_a)
                conf_a[s.dataset] += votes
                cloud_hits += int(votes.argmax()) == s.dataset
                n_real += 1
    total = conf_c.sum()
    acc_c = float(np.trace(conf_c) / total)
    nan = float("nan")
    acc_a = float(np.trace(conf_a) / conf_a.sum()) if n_real else nan
    acc_a_cloud = cloud_hits / n_real if n_real else nan
    return EvalResult(acc_c, acc_a, conf_c, conf_a, int(total), n_real, acc_a_cloud)


def train(config: TrainConfig, model: MetricModel | None = None, opt: Adam | None = None,
          source: SampleSource | None = None, callback=None, evaluate_at_end: bool = True):
    """Run ``config.steps`` updates. Returns ``(model, opt, report)``."""
    model = model or config.new_model()
    opt = opt or config.new_optimizer()
    source = source or SampleSource(config.datasets, config.seed, config.point_budget)
    weights = config.adversary_weights()
    report = TrainReport()
    t0 = time.time()
    for step in range(opt.t + 1, config.steps + 1):
        batch = [source.sample(d, i) for d, i in draw_batch(config, step)]
        rng = np.random.default_rng(derive_seed(config.seed, 3, step))
        lc, la = train_step(model, opt, batch, weights, rng)
        row = {"step": step, "loss_c": lc, "loss_a": la}
        if config.eval_every and step % config.eval_every == 0 and step < config.steps:
            ev = evaluate(model, source, config.eval_clouds)
            row.update(acc_c=ev.acc_c, acc_a=ev.acc_a)
            log.info("step %d  L_C %.4f  L_A %.4f  ACC_C %.3f  ACC_A %.3f  (%.0fs)",
                     step, lc, la, ev.acc_c, ev.acc_a, time.time() - t0)
        elif step % 50 == 0:
            log.info("step %d  L_C %.4f  L_A %.4f  (%.0fs)", step, lc, la, time.time() - t0)
        report.rows.append(row)
        if callback is not None:
            callback(step, model, opt, row)
    if evaluate_at_end and config.steps > 0:
        report.final = evaluate(model, source, config.eval_clouds)
        if report.rows:
            report.rows[-1].update(acc_c=report.final.acc_c, acc_a=report.final.acc_a)
    return model, opt, report


def lambda_sweep(config: TrainConfig, lambdas, source: SampleSource | None = None):
    """Independent trainings per lambda with shared seeds.

    Returns rows ``(lambda, acc_c, acc_a)`` and the CSV text.
    """
    lambdas = list(lambdas)
    if len(lambdas) < 2:
        raise ValueError("a sweep needs at least two lambda values")
    source = source or SampleSource(config.datasets, config.seed, config.point_budget)
    rows = []
    for lam in lambdas:
        _, _, rep = train(replace(config, lam=float(lam)), source=source)
        rows.append((float(lam), rep.final.acc_c, rep.final.acc_a))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lambda", "acc_c", "acc_a"])
    for r in rows:
        w.writerow([repr(float(v)) for v in r])
    return rows, buf.getvalue()


def adversary_lower_bound(u_c: int, u_a: int, filtered: bool = False, n_real: int | None = None) -> float:
    """Adversary accuracy of a perfectly accurate, perfectly fair model.

    Unfiltered, the adversary can still tell the categories apart, so it
    reaches ``u_c / u_a``; with the Real-only filter it only has to choose
    among the Real sets: ``1 / n_real``.
    """
    if filtered:
        if not n_real or n_real < 1:
            raise ValueError("n_real must be >= 1 for the filtered bound")
        return 1.0 / n_real
    if u_c < 1 or u_a < 1:
        raise ValueError("u_c and u_a must be >= 1")
    if u_a < u_c:
        raise ValueError("u_a must be >= u_c")
    return u_c / u_a
