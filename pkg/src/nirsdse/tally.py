"""Detector tallies, energy ledger and their JSON snapshot."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import kernel
from .medium import DetectorSpec

__all__ = [
    "SCHEMA_VERSION",
    "ProvenanceMismatch",
    "SchemaVersionError",
    "TallySet",
    "load_tally",
    "merge",
    "record_exit",
    "save_tally",
    "standard_error",
]

SCHEMA_VERSION = 1

BUCKETS = ("absorbed", "sal_absorbed", "escaped_undetected", "transmitted_bottom", "roulette_residual")


class ProvenanceMismatch(ValueError):
    pass


class SchemaVersionError(ValueError):
    pass


def _zeros(*shape, dtype=np.float64):
    return np.zeros(shape, dtype=dtype)


@dataclass
class TallySet:
    detector_distances: tuple
    detector_radius: float
    geometry: str
    depth_grid: tuple
    seed: int = 0
    scene_hash: str = ""
    wavelength_nm: float = 0.0
    sal_depth_mm: float | None = None
    mode: str = "tag"
    launched_photons: int = 0
    launched_weight: float = 0.0
    specular_weight: float = 0.0
    detected_weight: np.ndarray = None
    detected_weight_sq: np.ndarray = None
    detected_count: np.ndarray = None
    detected_by_depth: np.ndarray = None
    detected_by_depth_sq: np.ndarray = None
    reached_by_depth: np.ndarray = None
    reached_by_depth_sq: np.ndarray = None
    absorbed: float = 0.0
    sal_absorbed: float = 0.0
    escaped_undetected: float = 0.0
    transmitted_bottom: float = 0.0
    roulette_residual: float = 0.0
    roulette_gain: float = 0.0
    detected_exit_weight: float = 0.0
    ledger_sq: float = 0.0
    event_overflow: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        d, k = len(self.detector_distances), len(self.depth_grid)
        self.detector_distances = tuple(float(x) for x in self.detector_distances)
        self.depth_grid = tuple(float(x) for x in self.depth_grid)
        if list(self.depth_grid) != sorted(self.depth_grid):
            raise ValueError("depth grid must be ascending")
        defaults = {
            "detected_weight": (d,), "detected_weight_sq": (d,), "detected_by_depth": (d, k),
            "detected_by_depth_sq": (d, k), "reached_by_depth": (k,), "reached_by_depth_sq": (k,),
        }
        for name, shape in defaults.items():
            value = getattr(self, name)
            setattr(self, name, _zeros(*shape) if value is None else np.asarray(value, dtype=np.float64).reshape(shape))
        if self.detected_count is None:
            self.detected_count = _zeros(d, dtype=np.int64)
        else:
            self.detected_count = np.asarray(self.detected_count, dtype=np.int64).reshape(d)
        if self.geometry == "annulus":
            self.metadata.setdefault("annulus_detectors", True)

    @classmethod
    def empty_like(cls, other: "TallySet") -> "TallySet":
        return cls(**{name: getattr(other, name) for name in _PROVENANCE}, metadata=dict(other.metadata))

    @classmethod
    def for_detectors(cls, detectors: DetectorSpec, depth_grid, **provenance) -> "TallySet":
        return cls(detectors.distances, detectors.radius, detectors.geometry, tuple(depth_grid), **provenance)

    @property
    def n_detectors(self) -> int:
        return len(self.detector_distances)

    @property
    def bucket_total(self) -> float:
        return (self.absorbed + self.sal_absorbed + self.escaped_undetected
                + self.transmitted_bottom + self.roulette_residual)

    def ledger(self) -> dict:
        """Energy balance of the run.

        ``physical`` excludes roulette bookkeeping and balances the launched
        weight in expectation; ``exact`` adds the killed residual and removes
        the weight handed to survivors, so it balances to rounding.
        """
        physical = (self.detected_exit_weight + self.absorbed + self.sal_absorbed
                    + self.escaped_undetected + self.transmitted_bottom)
        exact = physical + self.roulette_residual - self.roulette_gain
        n = self.launched_photons
        mean_net = (self.roulette_gain - self.roulette_residual) / n if n else 0.0
        var = max(self.ledger_sq / n - mean_net * mean_net, 0.0) if n else 0.0
        return {
            "launched": self.launched_weight,
            "physical": physical,
            "exact": exact,
            "exact_rel_error": abs(exact - self.launched_weight) / self.launched_weight if self.launched_weight else 0.0,
            "physical_se": math.sqrt(var * n),
        }


_PROVENANCE = ("detector_distances", "detector_radius", "geometry", "depth_grid", "seed",
               "scene_hash", "wavelength_nm", "sal_depth_mm", "mode")
_SUMMED = tuple(f.name for f in fields(TallySet) if f.name not in _PROVENANCE + ("metadata",))


def check_compatible(a: TallySet, b: TallySet, ignore=()) -> None:
    for name in _PROVENANCE:
        if name in ignore:
            continue
        if getattr(a, name) != getattr(b, name):
            raise ProvenanceMismatch(f"tallies differ in {name}: {getattr(a, name)!r} != {getattr(b, name)!r}")


def merge(a: TallySet, b: TallySet) -> TallySet:
    """Field-wise sum of two tallies from the same run configuration."""
    check_compatible(a, b)
    out = TallySet.empty_like(a)
    for name in _SUMMED:
        setattr(out, name, getattr(a, name) + getattr(b, name))
    out.metadata = {**a.metadata, **b.metadata}
    return out


def record_exit(tally: TallySet, exit_x: float, exit_y: float, weight: float, max_depth: float,
                detectors: DetectorSpec | None = None, depth_grid=None) -> TallySet:
    """Score one photon leaving the top surface (in place; returns the tally).

    ``detectors`` and ``depth_grid`` default to the tally's own geometry and
    must match it when given.
    """
    if detectors is not None and (tuple(detectors.distances) != tally.detector_distances
                                  or detectors.radius != tally.detector_radius
                                  or detectors.geometry != tally.geometry):
        raise ProvenanceMismatch("detector spec does not match the tally")
    if depth_grid is not None and tuple(float(d) for d in depth_grid) != tally.depth_grid:
        raise ProvenanceMismatch("depth grid does not match the tally")
    hit = kernel.score_exit(
        float(exit_x), float(exit_y), float(weight), float(max_depth),
        np.asarray(tally.detector_distances, dtype=np.float64), tally.detector_radius,
        tally.geometry == "annulus", np.asarray(tally.depth_grid, dtype=np.float64),
        tally.detected_weight, tally.detected_weight_sq, tally.detected_count,
        tally.detected_by_depth, tally.detected_by_depth_sq)
    if hit >= 0:
        tally.detected_exit_weight += weight
    else:
        tally.escaped_undetected += weight
    return tally


def _se(total: float, total_sq: float, n: int) -> float:
    if n < 1:
        return 0.0
    mean = total / n
    return math.sqrt(max(total_sq / n - mean * mean, 0.0) / n)


def standard_error(tally: TallySet, detector_index: int) -> float:
    """Standard error of the per-photon mean detected weight at one detector."""
    return _se(tally.detected_weight[detector_index], tally.detected_weight_sq[detector_index],
               tally.launched_photons)


# --- JSON snapshot ---------------------------------------------------------

def to_record(tally: TallySet) -> dict:
    rec = {"schema_version": SCHEMA_VERSION, "kind": "tally"}
    for f in fields(TallySet):
        value = getattr(tally, f.name)
        if isinstance(value, np.ndarray):
            value = value.tolist()
        elif isinstance(value, tuple):
            value = list(value)
        elif isinstance(value, (np.floating, np.integer)):
            value = value.item()
        rec[f.name] = value
    return rec


def from_record(rec: dict) -> TallySet:
    version = rec.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"unsupported tally schema_version {version!r} (expected {SCHEMA_VERSION})")
    kwargs = {f.name: rec[f.name] for f in fields(TallySet) if f.name in rec}
    return TallySet(**kwargs)


def dumps(tally: TallySet) -> str:
    return json.dumps(to_record(tally), indent=1, sort_keys=True) + "\n"


def save_tally(tally: TallySet, path) -> Path:
    path = Path(path)
    path.write_text(dumps(tally), encoding="utf-8")
    return path


def load_tally(path) -> TallySet:
    return from_record(json.loads(Path(path).read_text(encoding="utf-8")))
