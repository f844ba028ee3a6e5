"""Reported quantities: photon energy, transmission ratio, penetration metrics, minimum input power.

Units: powers in W, energies in J, lengths in mm, wavelengths in nm. The
nm -> m conversion happens only in :func:`photon_energy`.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

from .tally import SCHEMA_VERSION, SchemaVersionError, TallySet, check_compatible, standard_error

__all__ = [
    "PLANCK",
    "SPEED_OF_LIGHT",
    "IncompleteGridError",
    "MetricRow",
    "NotReachableError",
    "RunSet",
    "UndefinedSensitivityError",
    "build_metric_table",
    "min_input_power",
    "min_power_by_detector",
    "penetration_fraction",
    "photon_energy",
    "read_metrics",
    "sensitivity_percent",
    "transmission_ratio",
    "write_metrics_csv",
    "write_metrics_json",
]

PLANCK = 6.62607015e-34  # J s, exact SI
SPEED_OF_LIGHT = 2.99792458e8  # m / s, exact SI
DEFAULT_MIN_OUTPUT_W = 1e-9  # placeholder detector floor, override per detector datasheet

CSV_HEADER = ("wavelength_nm", "sal_depth_mm", "detector_mm", "transmission_ratio", "ratio_se",
              "penetration_fraction", "pf_se", "sensitivity_pct", "sens_se", "min_input_power_w", "flags")


class NotReachableError(ValueError):
    pass


class UndefinedSensitivityError(ValueError):
    pass


class IncompleteGridError(ValueError):
    def __init__(self, missing):
        self.missing = list(missing)
        cells = ", ".join(f"({w:g} nm, {'baseline' if d is None else f'{d:g} mm'})" for w, d in self.missing[:20])
        more = f" and {len(self.missing) - 20} more" if len(self.missing) > 20 else ""
        super().__init__(f"run set is missing {len(self.missing)} cell(s): {cells}{more}")


@dataclass
class Diagnostics:
    negative_clamped: int = 0


def photon_energy(n_photons, wavelength_nm: float) -> float:
    if not wavelength_nm > 0:
        raise ValueError(f"wavelength must be positive, got {wavelength_nm}")
    return n_photons * PLANCK * SPEED_OF_LIGHT / (wavelength_nm * 1e-9)


def transmission_ratio(tally: TallySet, detector_index: int) -> float:
    """Detected over launched power; photon energies cancel at a single wavelength."""
    if not tally.launched_weight > 0:
        raise ValueError("tally has no launched weight")
    return tally.detected_weight[detector_index] / tally.launched_weight


def _ratio_se(tally: TallySet, i: int) -> float:
    return standard_error(tally, i) * tally.launched_photons / tally.launched_weight


def _check_pair(baseline: TallySet, with_sal: TallySet) -> None:
    check_compatible(baseline, with_sal, ignore=("seed", "sal_depth_mm", "mode", "depth_grid"))
    if baseline.launched_photons != with_sal.launched_photons:
        raise ValueError("baseline and SAL runs launched different photon counts")
    if baseline.sal_depth_mm is not None:
        raise ValueError("baseline tally must come from a run without SAL")


def penetration_fraction(baseline: TallySet, with_sal: TallySet, detector_index: int,
                         diagnostics: Diagnostics | None = None) -> float:
    """Detected weight lost to the SAL, over launched weight; clamped at 0."""
    _check_pair(baseline, with_sal)
    diff = baseline.detected_weight[detector_index] - with_sal.detected_weight[detector_index]
    if diff < 0:
        if diagnostics is not None:
            diagnostics.negative_clamped += 1
        diff = 0.0
    return diff / baseline.launched_weight


def sensitivity_percent(baseline: TallySet, with_sal: TallySet, detector_index: int) -> float:
    _check_pair(baseline, with_sal)
    b = baseline.detected_weight[detector_index]
    if not b > 0:
        raise UndefinedSensitivityError(f"no baseline detections at detector {detector_index}")
    return 100.0 * (max(b - with_sal.detected_weight[detector_index], 0.0) / b)


def min_input_power(ratio, min_sensible_output):
    """Input power needed so the detector receives ``min_sensible_output``.

    Plain division, so it stays exact for exact number types (``Fraction``).
    """
    if not min_sensible_output > 0:
        raise ValueError("minimum sensible output power must be positive")
    if ratio == 0:
        raise NotReachableError("transmission ratio is zero: detector receives nothing at any power")
    return min_sensible_output / ratio


# --- metric table ------------------------------------------------------------

@dataclass
class MetricRow:
    wavelength_nm: float
    sal_depth_mm: float
    detector_mm: float
    transmission_ratio: float
    ratio_se: float
    penetration_fraction: float | None
    pf_se: float | None
    sensitivity_pct: float | None
    sens_se: float | None
    min_input_power_w: float | None
    flags: tuple = ()


@dataclass
class RunSet:
    """Tallies of one sweep, keyed by (wavelength, sal depth or None for baseline)."""

    mode: str  # "difference" | "tag"
    wavelengths: tuple
    sal_depths: tuple
    tallies: dict = field(default_factory=dict)

    def required(self):
        for w in self.wavelengths:
            yield (w, None)
            if self.mode == "difference":
                for d in self.sal_depths:
                    yield (w, d)

    def missing(self):
        return [cell for cell in self.required() if cell not in self.tallies]


def _mean_var(total, total_sq, n):
    mean = total / n
    return mean, max(total_sq / n - mean * mean, 0.0)


def _ratio_of_means_se(a, a2, b, b2, ab, n):
    """Delta-method SE of sum(a)/sum(b) from per-photon sums."""
    if not b > 0:
        return None
    ma, va = _mean_var(a, a2, n)
    mb, vb = _mean_var(b, b2, n)
    cov = ab / n - ma * mb
    r = ma / mb
    var = (va + r * r * vb - 2.0 * r * cov) / (n * mb * mb)
    return math.sqrt(max(var, 0.0))


def _depth_cell(rs: RunSet, w, d, i, diag):
    """(numerator sum, numerator SE of the launched-normalised value, sens SE) for one cell."""
    base = rs.tallies[(w, None)]
    n = base.launched_photons
    norm = n / base.launched_weight
    b, b2 = base.detected_weight[i], base.detected_weight_sq[i]
    if rs.mode == "tag":
        k = base.depth_grid.index(float(d))
        a, a2 = base.detected_by_depth[i, k], base.detected_by_depth_sq[i, k]
        ab = a2
        clamped = False
    else:
        sal = rs.tallies[(w, d)]
        _check_pair(base, sal)
        s, s2 = sal.detected_weight[i], sal.detected_weight_sq[i]
        a = b - s
        clamped = a < 0
        if clamped:
            diag.negative_clamped += 1
            a = 0.0
        if sal.seed == base.seed:
            # common random numbers: each SAL-run photon either matches its
            # baseline twin or was absorbed, so per-photon differences are 0 or b
            a2 = max(b2 - s2, 0.0)
            ab = a2
        else:
            _, vb = _mean_var(b, b2, n)
            _, vs = _mean_var(s, s2, n)
            pf_se = math.sqrt((vb + vs) / n) * norm
            sens_se = None
            if b > 0:
                r = s / b
                rel2 = vb / (n * (b / n) ** 2) + (vs / (n * (s / n) ** 2) if s > 0 else 0.0)
                sens_se = 100.0 * r * math.sqrt(rel2)
            return a, pf_se, sens_se, clamped
    _, va = _mean_var(a, a2, n)
    pf_se = math.sqrt(va / n) * norm
    sens = _ratio_of_means_se(a, a2, b, b2, ab, n)
    return a, pf_se, (None if sens is None else 100.0 * sens), clamped


def build_metric_table(run_set: RunSet, min_sensible_output: float = DEFAULT_MIN_OUTPUT_W,
                       diagnostics: Diagnostics | None = None) -> list[MetricRow]:
    """One row per (wavelength, SAL depth, detector); undefined cells are flagged, never zeroed."""
    missing = run_set.missing()
    if missing:
        raise IncompleteGridError(missing)
    diag = diagnostics if diagnostics is not None else Diagnostics()
    rows = []
    for w in run_set.wavelengths:
        base = run_set.tallies[(w, None)]
        for d in run_set.sal_depths:
            for i, dist in enumerate(base.detector_distances):
                flags = []
                tr = transmission_ratio(base, i)
                num, pf_se, sens_se, clamped = _depth_cell(run_set, w, d, i, diag)
                if clamped:
                    flags.append("negative_clamped")
                pf = num / base.launched_weight
                if tr > 0:
                    sens = 100.0 * (pf / tr)  # ratio first, so pf <= tr keeps this <= 100
                    power = min_input_power(tr, min_sensible_output)
                else:
                    sens, sens_se, power = None, None, None
                    flags += ["undefined_sensitivity", "unreachable"]
                if base.geometry == "annulus":
                    flags.append("annulus")
                rows.append(MetricRow(float(w), float(d), float(dist), tr, _ratio_se(base, i), pf, pf_se,
                                      sens, sens_se, power, tuple(flags)))
    return rows


def min_power_by_detector(rows: list[MetricRow]) -> dict:
    """Per-(wavelength, detector) minimum input power from the no-SAL baseline ratio."""
    out = {}
    for r in rows:
        out.setdefault((r.wavelength_nm, r.detector_mm), r.min_input_power_w)
    return out


# --- serialisation -----------------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, tuple):
        return ";".join(v)
    return repr(float(v))


def metrics_csv(rows: list[MetricRow]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version: {SCHEMA_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow([_cell(getattr(r, name)) for name in CSV_HEADER])
    return buf.getvalue()


def write_metrics_csv(rows, path) -> None:
    """Metrics CSV, preceded by a ``# schema_version: N`` comment line."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(metrics_csv(rows))


def metrics_record(rows: list[MetricRow], mode: str = "", min_sensible_output: float | None = None) -> dict:
    aggregate = [{"wavelength_nm": w, "detector_mm": d, "min_input_power_w": p}
                 for (w, d), p in min_power_by_detector(rows).items()]
    return {"schema_version": SCHEMA_VERSION, "kind": "metrics", "mode": mode,
            "min_sensible_output_w": min_sensible_output,
            "rows": [{**asdict(r), "flags": list(r.flags)} for r in rows],
            "min_input_power_by_detector": aggregate}


def write_metrics_json(rows, path, **meta) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(metrics_record(rows, **meta), fh, indent=1, sort_keys=True)
        fh.write("\n")


def _parse(v: str):
    return None if v == "" else float(v)


def read_metrics(path) -> list[MetricRow]:
    """Load a metric table written as CSV or JSON."""
    text = open(path, encoding="utf-8").read()
    if text.lstrip().startswith("{"):
        rec = json.loads(text)
        if rec.get("schema_version") != SCHEMA_VERSION:
            raise SchemaVersionError(f"unsupported metrics schema_version {rec.get('schema_version')!r}")
        return [MetricRow(**{**r, "flags": tuple(r["flags"])}) for r in rec["rows"]]
    first, _, body = text.partition("\n")
    if first.strip() != f"# schema_version: {SCHEMA_VERSION}":
        raise SchemaVersionError(f"{path}: missing or unsupported schema_version line {first.strip()!r}")
    reader = csv.DictReader(io.StringIO(body))
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise ValueError(f"{path}: unexpected metrics CSV header")
    rows = []
    for rec in reader:
        values = {k: _parse(rec[k]) for k in CSV_HEADER[:-1]}
        rows.append(MetricRow(**values, flags=tuple(f for f in rec["flags"].split(";") if f)))
    return rows


def exact_round_trip(ratio: float, power: float) -> bool:
    """min_input_power(r, p) * r == p in exact rational arithmetic."""
    r, p = Fraction(ratio), Fraction(power)
    return min_input_power(r, p) * r == p
