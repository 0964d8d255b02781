"""Range-image baselines and verification experiments.

Covers the cylindrical projection used by range-image up-samplers, the
bilinear up-sampling baseline, reconstruction errors (Chamfer, masked
MSE/MAE) and the noise sweep that probes how scores move between
categories.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .io import FormatError
from .pcgen import PointCloud, ScanPattern, add_range_noise, derive_seed
from .score import score_cloud

SENTINEL = 0.0  # range stored in unmeasured pixels


@dataclass
class RangeImage:
    """Dense ``H x W`` range image.

    ``elevations[i]`` and ``azimuths[j]`` are the ray angles of row ``i`` and
    column ``j``; unmeasured pixels hold :data:`SENTINEL` and are ``False``
    in ``mask``.
    """

    ranges: np.ndarray
    mask: np.ndarray
    elevations: np.ndarray
    azimuths: np.ndarray

    @property
    def shape(self):
        return self.ranges.shape

    def __eq__(self, other):
        return (isinstance(other, RangeImage)
                and np.array_equal(self.ranges, other.ranges)
                and np.array_equal(self.mask, other.mask)
                and np.array_equal(self.elevations, other.elevations)
                and np.array_equal(self.azimuths, other.azimuths))


def project(pc, pattern: ScanPattern):
    """Nearest-bin cylindrical projection.

    Returns ``(image, n_dropped)``; points whose elevation falls more than
    half a row outside the pattern (or beyond a partial azimuth span) are
    dropped. When several points land in one pixel the closest is kept.
    """
    pts = pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64).reshape(-1, 3)
    H, W = pattern.rows, pattern.cols
    elev = pattern.elevations()
    az = pattern.azimuths()
    ranges = np.full((H, W), np.inf)
    if len(pts):
        r = np.linalg.norm(pts, axis=1)
        ok = r > 0
        theta = np.arcsin(np.clip(pts[ok, 2] / r[ok], -1, 1))
        phi = np.arctan2(pts[ok, 1], pts[ok, 0])
        if H > 1:
            step = (pattern.elevation_max - pattern.elevation_min) / (H - 1)
            rowf = (pattern.elevation_max - theta) / step
            half = 0.5
        else:
            rowf = np.zeros_like(theta)
            step = pattern.elevation_max - pattern.elevation_min
            half = 0.0
            inside = (theta >= pattern.elevation_min) & (theta <= pattern.elevation_max)
            rowf = np.where(inside, 0.0, np.inf)
        row = np.rint(rowf)
        colf = np.mod(phi - pattern.azimuth_start, 2 * math.pi) / pattern.azimuth_step
        col = np.rint(colf)
        full = pattern.azimuth_span >= 2 * math.pi
        col = np.mod(col, W) if full else col
        valid = (rowf >= -half) & (rowf <= H - 1 + half) & (col >= 0) & (col <= W - 1)
        row = row[valid].astype(np.int64)
        col = col[valid].astype(np.int64)
        rv = r[ok][valid]
        np.minimum.at(ranges, (row, col), rv)
        dropped = int(len(pts) - valid.sum())
    else:
        dropped = 0
    mask = np.isfinite(ranges)
    ranges[~mask] = SENTINEL
    return RangeImage(ranges.astype(np.float32), mask, elev.copy(), az.copy()), dropped


def unproject(img: RangeImage) -> PointCloud:
    """Measured pixels back to points along their calibrated rays."""
    rows, cols = np.nonzero(img.mask)
    el = img.elevations[rows]
    az = img.azimuths[cols]
    r = img.ranges[rows, cols].astype(np.float64)
    pts = np.stack([r * np.cos(el) * np.cos(az), r * np.cos(el) * np.sin(az), r * np.sin(el)], axis=1)
    return PointCloud(pts, rays=np.stack([rows, cols], axis=1))


def downsample_rows(img: RangeImage, factor: int) -> RangeImage:
    """Keep every ``factor``-th row (the low-resolution scan)."""
    return RangeImage(img.ranges[::factor].copy(), img.mask[::factor].copy(),
                      img.elevations[::factor].copy(), img.azimuths.copy())


def bilinear_upsample(img: RangeImage, factor: int) -> RangeImage:
    """Vertical linear interpolation to ``factor * H`` rows, align-corners.

    Output row ``i`` samples input position ``i * (H - 1) / (factor*H - 1)``.
    An output pixel is measured only if every input pixel with non-zero
    weight is measured. Row elevations are interpolated the same way.
    """
    if factor not in (2, 4, 8):
        raise ValueError(f"unsupported up-sampling factor {factor}")
    H, W = img.shape
    Ho = factor * H
    pos = np.arange(Ho) * ((H - 1) / (Ho - 1)) if H > 1 else np.zeros(Ho)
    lo = np.floor(pos).astype(np.int64)
    lo = np.minimum(lo, H - 1)
    hi = np.minimum(lo + 1, H - 1)
    w = (pos - lo)[:, None]
    r = img.ranges.astype(np.float64)
    ranges = (1 - w) * r[lo] + w * r[hi]
    mask = img.mask[lo] & (img.mask[hi] | (w == 0))
    ranges = np.where(mask, ranges, SENTINEL)
    wl = w[:, 0]
    elev = (1 - wl) * img.elevations[lo] + wl * img.elevations[hi]
    return RangeImage(ranges.astype(np.float32), mask, elev, img.azimuths.copy())


def chamfer(a, b) -> float:
    """Symmetric Chamfer distance: mean squared NN distance A->B plus B->A.

    Per-direction means are summed exactly (``math.fsum``), so the result
    does not depend on point order and ``chamfer(a, b) == chamfer(b, a)``.
    """
    a = a.points if isinstance(a, PointCloud) else np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = b.points if isinstance(b, PointCloud) else np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance of an empty set")
    return _directed(a, b) + _directed(b, a)


def _directed(a, b):
    if len(a) * len(b) <= 4_000_000:
        best = _nearest_brute(a, b)
    else:
        best = _nearest_tree(a, b)
    return math.fsum(best.tolist()) / len(a)


def _nearest_brute(a, b):
    best = np.empty(len(a))
    step = max(1, 4_000_000 // len(b))
    for s in range(0, len(a), step):
        best[s:s + step] = _sq(a[s:s + step, None, :] - b[None, :, :]).min(axis=1)
    return best


def _nearest_tree(a, b):
    # k-d tree candidates, distances re-evaluated the same way as brute force
    _, idx = cKDTree(b).query(a, k=min(4, len(b)))
    idx = np.asarray(idx).reshape(len(a), -1)
    return _sq(b[idx] - a[:, None, :]).min(axis=1)


def _sq(diff):
    return (diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1]) + diff[..., 2] * diff[..., 2]


def masked_error(pred: RangeImage, gt: RangeImage, kind: str = "mse") -> float:
    """MSE or MAE over pixels measured in both images."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    both = pred.mask & gt.mask
    if not both.any():
        raise ValueError("no pixel is measured in both images")
    diff = pred.ranges[both].astype(np.float64) - gt.ranges[both].astype(np.float64)
    kind = kind.lower()
    if kind == "mse":
        return float(np.mean(diff * diff))
    if kind == "mae":
        return float(np.mean(np.abs(diff)))
    raise ValueError(f"unknown error kind {kind!r}")


# -- range image file ----------------------------------------------------------
#
# 0   8 bytes  magic b"PCRLRIMG"
# 8   uint32   version (1)
# 12  uint32   H
# 16  uint32   W
# 20  H float64 row elevations, then W float64 column azimuths
# ..  H*W float32 ranges, row-major
# ..  ceil(H*W/8) bytes mask, numpy packbits order (MSB first), row-major
# all little-endian

RIMG_MAGIC = b"PCRLRIMG"


def save_range_image(path, img: RangeImage) -> None:
    H, W = img.shape
    parts = [RIMG_MAGIC, struct.pack("<III", 1, H, W),
             np.asarray(img.elevations, "<f8").tobytes(), np.asarray(img.azimuths, "<f8").tobytes(),
             np.asarray(img.ranges, "<f4").tobytes(), np.packbits(img.mask.ravel()).tobytes()]
    Path(path).write_bytes(b"".join(parts))


def load_range_image(path) -> RangeImage:
    data = Path(path).read_bytes()
    if data[:8] != RIMG_MAGIC:
        raise FormatError("bad range-image magic", 0, path)
    if len(data) < 20:
        raise FormatError("truncated range-image header", len(data), path)
    version, H, W = struct.unpack("<III", data[8:20])
    if version != 1:
        raise FormatError(f"unsupported range-image version {version}", 8, path)
    need = 20 + 8 * (H + W) + 4 * H * W + (H * W + 7) // 8
    if len(data) != need:
        raise FormatError(f"expected {need} bytes, found {len(data)}", min(len(data), need), path)
    o = 20
    elev = np.frombuffer(data, "<f8", H, o).copy()
    o += 8 * H
    az = np.frombuffer(data, "<f8", W, o).copy()
    o += 8 * W
    ranges = np.frombuffer(data, "<f4", H * W, o).reshape(H, W).copy()
    o += 4 * H * W
    mask = np.unpackbits(np.frombuffer(data, np.uint8, (H * W + 7) // 8, o))[:H * W]
    return RangeImage(ranges, mask.reshape(H, W).astype(bool), elev, az)


# -- experiments ---------------------------------------------------------------

SWEEP_COLUMNS = ["sigma", "real_mean", "real_std", "synthetic_mean", "synthetic_std",
                 "misc_mean", "misc_std", "n"]


def noise_sweep(model, generator, sigmas, n_clouds: int = 100, seed: int = 0,
                budget: int | None = 16384):
    """Scene scores of generated clouds under increasing range noise.

    ``generator(seed) -> PointCloud``. Cloud ``i`` is the same for every
    sigma; only the noise differs. Returns ``(rows, csv_text)`` where each
    row is ``(sigma, mean[3], std[3])``.
    """
    clouds = [generator(derive_seed(seed, 0, i)) for i in range(n_clouds)]
    rows = []
    for si, sigma in enumerate(sigmas):
        scores = np.array([
            score_cloud(model, add_range_noise(pc, float(sigma), derive_seed(seed, 1, si, i)),
                        budget).scene
            for i, pc in enumerate(clouds)
        ])
        rows.append((float(sigma), scores.mean(axis=0), scores.std(axis=0)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for sigma, mean, std in rows:
        w.writerow([repr(float(sigma)), *[repr(float(v)) for pair in zip(mean, std) for v in pair], n_clouds])
    return rows, buf.getvalue()


BASELINE_COLUMNS = ["scan", "factor", "chamfer", "mse", "mae", "realism_gt", "realism_bilinear"]


def upsampling_baselines(clouds, pattern: ScanPattern, factor: int = 4, model=None,
                         budget: int | None = 16384):
    """Bilinear reconstruction of row-subsampled scans versus ground truth.

    For each cloud: project, keep every ``factor``-th row, up-sample back,
    and compare. With a model, the realism score of both versions is added.
    Returns ``(rows, csv_text)``.
    """
    rows = []
    for i, pc in enumerate(clouds):
        gt, _ = project(pc, pattern)
        rec = bilinear_upsample(downsample_rows(gt, factor), factor)
        gt_pc = unproject(gt)
        rec_pc = unproject(rec)
        row = {"scan": i, "factor": factor,
               "chamfer": chamfer(rec_pc, gt_pc),
               "mse": masked_error(rec, gt, "mse"),
               "mae": masked_error(rec, gt, "mae")}
        if model is not None:
            row["realism_gt"] = score_cloud(model, gt_pc, budget).realism
            row["realism_bilinear"] = score_cloud(model, rec_pc, budget).realism
        rows.append(row)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BASELINE_COLUMNS)
    for r in rows:
        w.writerow([r["scan"], r["factor"]] + [repr(float(r[c])) if c in r else ""
                                               for c in BASELINE_COLUMNS[2:]])
    return rows, buf.getvalue()
