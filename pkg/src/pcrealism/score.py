"""Inference: local and scene-level realism scores, anomaly maps, features."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from . import spatial
from .net import CATEGORIES, MetricModel
from .pcgen import PointCloud

# PLY colour channel per category: Real -> green, Synthetic -> blue, Misc -> red
CATEGORY_RGB = np.array([[0, 255, 0], [0, 0, 255], [255, 0, 0]], dtype=np.float64)


@dataclass
class QueryScores:
    """Classifier output at the level-2 query points of one cloud."""

    xyz: np.ndarray
    probs: np.ndarray

    @property
    def scene(self) -> np.ndarray:
        """Scene score S: mean of the per-query probability rows."""
        return self.probs.mean(axis=0)

    @property
    def realism(self) -> float:
        return float(self.scene[0])

    def to_dict(self) -> dict:
        s = self.scene.tolist()
        return {
            "scene": dict(zip(CATEGORIES, s)),
            "queries": [{"xyz": x, "p": p} for x, p in zip(self.xyz.tolist(), self.probs.tolist())],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "z", "p_real", "p_synthetic", "p_misc"])
        for x, p in zip(self.xyz.tolist(), self.probs.astype(np.float64).tolist()):
            w.writerow([repr(v) for v in (*x, *p)])
        return buf.getvalue()


def _points(pc):
    return pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64).reshape(-1, 3)


def score_cloud(model: MetricModel, pc, budget: int | None = 16384) -> QueryScores:
    """Per-query category probabilities (dropout off, deterministic)."""
    pts = _points(pc)
    if pts.shape[0] == 0:
        raise ValueError("cannot score an empty cloud")
    nh = spatial.build_neighborhoods(pts, budget=budget)
    probs = model.predict(nh).astype(np.float64)
    return QueryScores(nh.xyz2.copy(), probs)


@dataclass
class AnomalyMap:
    """Per-point interpolated probabilities.

    ``values[i]`` is a convex combination of the probabilities of the
    ``k`` query points nearest to point ``i``, weighted by inverse squared
    distance.
    """

    points: np.ndarray
    values: np.ndarray
    scores: QueryScores
    k: int

    def colors(self) -> np.ndarray:
        return self.values @ CATEGORY_RGB

    def write_ply(self, path) -> None:
        from .io import write_ply

        write_ply(path, self.points, self.colors())


def interpolate(points, query_xyz, query_probs, k: int = 4) -> np.ndarray:
    """Inverse-squared-distance interpolation from the ``k`` nearest queries.

    A point that coincides with a query takes that query's value exactly
    (averaged if several queries coincide).
    """
    points = np.asarray(points, dtype=np.float64)
    k = min(k, len(query_xyz))
    nbr = spatial.knn(query_xyz, points, k)
    d2 = spatial._sqdist(query_xyz[nbr], points[:, None, :])
    vals = query_probs[nbr]
    exact = d2 == 0
    w = np.where(exact.any(axis=1, keepdims=True), exact.astype(np.float64),
                 1.0 / np.where(d2 > 0, d2, 1.0))
    w /= w.sum(axis=1, keepdims=True)
    return np.einsum("nk,nkc->nc", w, vals)


def anomaly_map(model: MetricModel, pc, k: int = 4, budget: int | None = 16384) -> AnomalyMap:
    pts = _points(pc)
    scores = score_cloud(model, pts, budget)
    return AnomalyMap(pts, interpolate(pts, scores.xyz, scores.probs, k), scores, k)


# -- latent feature export and probe ------------------------------------------


@dataclass
class FeatureTable:
    """Latent rows ``z`` (one per query per cloud) with their labels."""

    z: np.ndarray
    cloud: np.ndarray
    dataset: np.ndarray
    category: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cloud", "dataset", "category", *[f"z{i}" for i in range(self.z.shape[1])]])
        for c, d, g, row in zip(self.cloud.tolist(), self.dataset.tolist(), self.category.tolist(),
                                self.z.astype(np.float32).tolist()):
            w.writerow([c, d, g, *[repr(v) for v in row]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "FeatureTable":
        rows = list(csv.reader(io.StringIO(text)))[1:]
        arr = np.array([[float(v) for v in r[3:]] for r in rows], dtype=np.float32)
        ints = np.array([[int(v) for v in r[:3]] for r in rows], dtype=np.int64).reshape(-1, 3)
        return cls(arr.reshape(len(rows), -1), ints[:, 0], ints[:, 1], ints[:, 2])

    def save_npz(self, path) -> None:
        np.savez(path, z=self.z, cloud=self.cloud, dataset=self.dataset, category=self.category)

    @classmethod
    def load_npz(cls, path) -> "FeatureTable":
        with np.load(path) as f:
            return cls(f["z"], f["cloud"], f["dataset"], f["category"])


def export_features(model: MetricModel, clouds, budget: int | None = 16384) -> FeatureTable:
    """Latent features of every query of every cloud."""
    zs, cl, ds, cs = [], [], [], []
    for i, pc in enumerate(clouds):
        nh = spatial.build_neighborhoods(_points(pc), budget=budget)
        z, _ = model.extract(nh)
        zs.append(z)
        cl.append(np.full(len(z), i))
        ds.append(np.full(len(z), -1 if pc.dataset is None else pc.dataset))
        cs.append(np.full(len(z), -1 if pc.category is None else pc.category))
    if not zs:
        return FeatureTable(np.zeros((0, model.level2[-1]), np.float32), *(np.zeros(0, np.int64),) * 3)
    return FeatureTable(np.concatenate(zs), np.concatenate(cl), np.concatenate(ds), np.concatenate(cs))


def knn_feature_probe(features, datasets, clouds, k: int = 15, chunk: int = 1024) -> float:
    """Leave-one-cloud-out k-NN accuracy of predicting the dataset from z.

    Each row is classified by majority vote among its ``k`` nearest rows
    (Euclidean) that belong to other clouds; vote ties go to the label of
    the nearest tied neighbour. High accuracy means the features still
    carry dataset identity.
    """
    z = np.asarray(features, dtype=np.float64)
    y = np.asarray(datasets)
    cl = np.asarray(clouds)
    labels = np.unique(y)
    if labels.size < 2:
        raise ValueError("the probe needs at least two datasets")
    yi = np.searchsorted(labels, y)
    sq = np.einsum("ij,ij->i", z, z)
    correct = 0
    for s in range(0, len(z), chunk):
        e = min(s + chunk, len(z))
        d = sq[s:e, None] - 2.0 * z[s:e] @ z.T + sq[None, :]
        d[cl[s:e, None] == cl[None, :]] = np.inf
        kk = min(k, len(z) - 1)
        nn = np.argpartition(d, kk - 1, axis=1)[:, :kk]
        order = np.argsort(np.take_along_axis(d, nn, axis=1), axis=1, kind="stable")
        nn = np.take_along_axis(nn, order, axis=1)
        votes = yi[nn]
        for row, v in enumerate(votes):
            counts = np.bincount(v, minlength=labels.size)
            best = np.flatnonzero(counts == counts.max())
            pred = best[0] if best.size == 1 else next(x for x in v if x in best)
            correct += pred == yi[s + row]
    return correct / len(z)
