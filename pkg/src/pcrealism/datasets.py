"""Support-set definitions: which generator produces which dataset id."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

from . import pcgen
from .pcgen import MISC, REAL, SYNTHETIC, ScanPattern

CATEGORY_IDS = {"real": REAL, "synthetic": SYNTHETIC, "misc": MISC}

PATTERNS = {"hdl64": pcgen.HDL64, "hdl32": pcgen.HDL32_WIDE}

# generator -> accepted parameter keys (besides the pattern keys)
GENERATOR_KEYS = {
    "real_surrogate": {"style", "sigma_r", "dropout", "jitter"},
    "synthetic_city": {"style"},
    "geometric_set": {"n_objects", "radius_min", "radius_max", "disc_radius", "min_distance",
                      "box_fraction"},
    "misc": {"kind", "d_min", "d_max", "sigma", "sigma_min", "sigma_max", "blob_sigma",
             "blob_sigma_min", "blob_sigma_max", "n_points"},
}
PATTERN_KEYS = {"pattern", "rows", "cols", "elevation_min_deg", "elevation_max_deg", "max_range"}


@dataclass(frozen=True)
class DatasetSpec:
    """One support set.

    ``size`` is the number of distinct samples in the set (samples are
    indexed ``0 .. size-1``); ``None`` marks an infinite stream that is
    generated on the fly.
    """

    dataset_id: int
    name: str
    category: int
    generator: str
    params: dict = field(default_factory=dict)
    size: int | None = None

    def __post_init__(self):
        if self.category not in (REAL, SYNTHETIC, MISC):
            raise ValueError(f"dataset {self.name}: unknown category {self.category}")
        if self.generator not in GENERATOR_KEYS:
            raise ValueError(f"dataset {self.name}: unknown generator {self.generator!r}")
        allowed = GENERATOR_KEYS[self.generator] | PATTERN_KEYS
        for key in self.params:
            if key not in allowed:
                raise ValueError(f"dataset {self.name}: unknown key {key!r}")
        if self.size is not None and self.size < 0:
            raise ValueError(f"dataset {self.name}: size must be >= 0")

    def pattern(self, default: ScanPattern = pcgen.HDL64) -> ScanPattern:
        p = self.params
        base = PATTERNS[p["pattern"]] if "pattern" in p else default
        kw = {}
        if "rows" in p:
            kw["rows"] = int(p["rows"])
        if "cols" in p:
            kw["cols"] = int(p["cols"])
        if "elevation_min_deg" in p:
            kw["elevation_min"] = math.radians(float(p["elevation_min_deg"]))
        if "elevation_max_deg" in p:
            kw["elevation_max"] = math.radians(float(p["elevation_max_deg"]))
        if "max_range" in p:
            kw["max_range"] = float(p["max_range"])
        return replace(base, **kw) if kw else base

    def generate(self, seed: int) -> pcgen.PointCloud:
        p = self.params
        if self.generator == "real_surrogate":
            base = pcgen.REAL_STYLES[p.get("style", "urban")]
            kw = {k: p[k] for k in ("sigma_r", "dropout") if k in p}
            if "jitter" in p:
                kw["jitter"] = int(p["jitter"])
            params = replace(base, pattern=self.pattern(base.pattern), **kw)
            pc = pcgen.gen_real_surrogate(params, seed)
        elif self.generator == "synthetic_city":
            pc = pcgen.gen_synthetic_city(p.get("style", "city"), self.pattern(), seed)
        elif self.generator == "geometric_set":
            d = pcgen.GeometricSetParams()
            params = replace(
                d,
                n_objects=int(p.get("n_objects", d.n_objects)),
                radius_range=(float(p.get("radius_min", d.radius_range[0])),
                              float(p.get("radius_max", d.radius_range[1]))),
                disc_radius=float(p.get("disc_radius", d.disc_radius)),
                min_distance=float(p.get("min_distance", d.min_distance)),
                box_fraction=float(p.get("box_fraction", d.box_fraction)),
                pattern=self.pattern(),
            )
            pc = pcgen.gen_geometric_set(params, seed)
        else:
            d = pcgen.MiscParams()
            params = replace(
                d,
                d_min=float(p.get("d_min", d.d_min)),
                d_max=float(p.get("d_max", d.d_max)),
                sigma=None if p.get("sigma") is None else float(p["sigma"]),
                sigma_range=(float(p.get("sigma_min", d.sigma_range[0])),
                             float(p.get("sigma_max", d.sigma_range[1]))),
                blob_sigma=None if p.get("blob_sigma") is None else float(p["blob_sigma"]),
                blob_sigma_range=(float(p.get("blob_sigma_min", d.blob_sigma_range[0])),
                                  float(p.get("blob_sigma_max", d.blob_sigma_range[1]))),
                n_points=int(p.get("n_points", d.n_points)),
            )
            pc = pcgen.gen_misc(int(p.get("kind", 1)), self.pattern(), params, seed)
        pc.dataset = self.dataset_id
        pc.category = self.category
        pc.meta["dataset_name"] = self.name
        return pc


def default_datasets(real_size: int | None = 400, synthetic_size: int | None = 400):
    """The seven training support sets: 2 Real, 2 Synthetic, 3 Misc."""
    return [
        DatasetSpec(0, "real_urban", REAL, "real_surrogate", {"style": "urban"}, real_size),
        DatasetSpec(1, "real_suburban", REAL, "real_surrogate", {"style": "suburban"}, real_size),
        DatasetSpec(2, "sim_city", SYNTHETIC, "synthetic_city", {"style": "city"}, synthetic_size),
        DatasetSpec(3, "geometric_set", SYNTHETIC, "geometric_set", {}, synthetic_size),
        DatasetSpec(4, "misc1", MISC, "misc", {"kind": 1}, None),
        DatasetSpec(5, "misc2", MISC, "misc", {"kind": 2}, None),
        DatasetSpec(6, "misc3", MISC, "misc", {"kind": 3}, None),
    ]


def evaluation_datasets():
    """Sets never used for training: an unseen real style and Misc 4."""
    return [
        DatasetSpec(100, "real_rural", REAL, "real_surrogate", {"style": "rural"}, None),
        DatasetSpec(101, "misc4", MISC, "misc", {"kind": 4}, None),
    ]


def check_datasets(specs):
    """Validate a support-set list: unique ids, every category, >= 2 Real."""
    ids = [s.dataset_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ValueError("dataset ids must be unique")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError("dataset names must be unique")
    if any(i < 0 for i in ids):
        raise ValueError("dataset ids must be >= 0")
    cats = [s.category for s in specs]
    for c, name in enumerate(pcgen.CATEGORY_NAMES):
        if c not in cats:
            raise ValueError(f"no dataset in category {name!r}")
    if cats.count(REAL) < 2:
        raise ValueError("at least two Real datasets are required")
    return specs


def spec_field_names():
    return [f.name for f in fields(DatasetSpec)]
