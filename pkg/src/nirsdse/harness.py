"""Sweep orchestration: grid expansion, deterministic seeding, run manifest, resume."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

from .analysis import RunSet
from .configtext import ConfigSyntaxError, parse_range, parse_sections
from .medium import (DEFAULT_WAVELENGTHS, SceneConfig, SuperAbsorbentLayer, dump_scene, load_scene,
                     properties_for, scene_hash)
from .rng import derive_seed
from .tally import SCHEMA_VERSION, SchemaVersionError, load_tally, save_tally
from .transport import BATCH_SIZE, TransportOptions, simulate

__all__ = [
    "RunDescriptor",
    "SweepGrid",
    "SweepResult",
    "builtin_scene",
    "expand_grid",
    "load_grid",
    "load_run_set",
    "run_sweep",
]

log = logging.getLogger(__name__)

MANIFEST = "manifest.jsonl"
SWEEP_INFO = "sweep.json"


@dataclass(frozen=True)
class SweepGrid:
    wavelengths: tuple = DEFAULT_WAVELENGTHS
    sal_depths: tuple = (10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0)
    photons_per_run: int = 1_000_000
    sal_mode: str = "tag"  # "difference" | "tag"
    seed: int = 42
    pairing: str = "common_random_numbers"  # | "independent"
    transport: TransportOptions = field(default_factory=TransportOptions)

    def validate(self) -> None:
        if not self.wavelengths:
            raise ValueError("sweep grid has no wavelengths")
        if not self.sal_depths:
            raise ValueError("sweep grid has no SAL depths")
        if any(not w > 0 for w in self.wavelengths) or any(not d > 0 for d in self.sal_depths):
            raise ValueError("wavelengths and SAL depths must be positive")
        if len(set(self.wavelengths)) != len(self.wavelengths) or len(set(self.sal_depths)) != len(self.sal_depths):
            raise ValueError("duplicate wavelength or SAL depth in grid")
        if self.sal_mode not in ("difference", "tag"):
            raise ValueError(f"sal_mode must be 'difference' or 'tag', got {self.sal_mode!r}")
        if self.pairing not in ("common_random_numbers", "independent"):
            raise ValueError(f"unknown pairing {self.pairing!r}")
        if self.photons_per_run < 2:
            raise ValueError("photons_per_run must be at least 2")


def load_grid(text: str) -> SweepGrid:
    grid = SweepGrid()
    values = {}
    transport = {}
    for section in parse_sections(text):
        if section.name == "grid":
            section.unknown_keys(("wavelengths_nm", "wavelength_range", "sal_depths_mm", "sal_depth_range",
                                  "photons", "sal_mode", "seed", "pairing"))
            if section.has("wavelengths_nm"):
                values["wavelengths"] = tuple(section.floats("wavelengths_nm"))
            elif section.has("wavelength_range"):
                values["wavelengths"] = tuple(parse_range(section, "wavelength_range"))
            if section.has("sal_depths_mm"):
                values["sal_depths"] = tuple(section.floats("sal_depths_mm"))
            elif section.has("sal_depth_range"):
                values["sal_depths"] = tuple(parse_range(section, "sal_depth_range"))
            if section.has("photons"):
                values["photons_per_run"] = section.int("photons")
            if section.has("seed"):
                values["seed"] = section.int("seed")
            if section.has("sal_mode"):
                values["sal_mode"] = section.choice("sal_mode", ("difference", "tag"))
            if section.has("pairing"):
                values["pairing"] = section.choice("pairing", ("common_random_numbers", "independent"))
        elif section.name == "transport":
            section.unknown_keys(("roulette", "roulette_threshold", "survival_p", "max_events"))
            if section.has("roulette"):
                transport["roulette"] = section.choice("roulette", ("true", "false")) == "true"
            if section.has("roulette_threshold"):
                transport["roulette_threshold"] = section.float("roulette_threshold")
            if section.has("survival_p"):
                transport["survival_p"] = section.float("survival_p")
            if section.has("max_events"):
                transport["max_events"] = section.int("max_events")
        else:
            raise ConfigSyntaxError(f"unknown section [{section.name}] in grid file", section.line)
    grid = replace(grid, transport=replace(grid.transport, **transport), **values)
    grid.validate()
    return grid


def builtin_scene(name: str) -> SceneConfig:
    """One of the scene files shipped in ``nirsdse/data`` (without extension)."""
    return load_scene(resources.files("nirsdse").joinpath("data", f"{name}.ini").read_text(encoding="utf-8"))


def builtin_grid() -> SweepGrid:
    return load_grid(resources.files("nirsdse").joinpath("data", "default_grid.ini").read_text(encoding="utf-8"))


@dataclass(frozen=True)
class RunDescriptor:
    wavelength: float
    sal_depth: float | None  # None: baseline (difference mode) or the single tag-mode run
    mode: str  # transport mode, "sal" or "tag"
    seed: int
    photons: int
    depth_grid: tuple

    @property
    def cell(self) -> tuple:
        return (self.wavelength, self.sal_depth)

    @property
    def label(self) -> str:
        depth = "baseline" if self.sal_depth is None else f"sal{self.sal_depth:g}mm"
        return f"{self.wavelength:g}nm_{depth}"

    @property
    def tally_name(self) -> str:
        return f"tally_{self.label}_{self.photons}ph_{self.seed:016x}.json"

    @property
    def n_batches(self) -> int:
        return -(-self.photons // BATCH_SIZE)


def cell_seed(grid: SweepGrid, wavelength: float, sal_depth: float | None) -> int:
    """Run seed = BLAKE2b-64 of base seed and cell coordinates.

    Common-random-number pairing keys only on the wavelength, so baseline and
    SAL runs of one wavelength share photon streams.
    """
    if grid.pairing == "common_random_numbers" or grid.sal_mode == "tag":
        return derive_seed(grid.seed, "wavelength", float(wavelength))
    return derive_seed(grid.seed, "wavelength", float(wavelength), "sal",
                       "baseline" if sal_depth is None else float(sal_depth))


def expand_grid(grid: SweepGrid) -> list[RunDescriptor]:
    grid.validate()
    depths = tuple(sorted(float(d) for d in grid.sal_depths))
    runs = []
    for w in grid.wavelengths:
        w = float(w)
        runs.append(RunDescriptor(w, None, "tag", cell_seed(grid, w, None), grid.photons_per_run, depths))
        if grid.sal_mode == "difference":
            for d in depths:
                runs.append(RunDescriptor(w, d, "sal", cell_seed(grid, w, d), grid.photons_per_run, ()))
    return runs


@dataclass
class SweepResult:
    out_dir: Path
    records: list
    failed: list

    @property
    def ok(self) -> bool:
        return not self.failed


def _read_manifest(path: Path) -> list[dict]:
    if not path.exists():
        return []
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            if rec.get("schema_version") != SCHEMA_VERSION:
                raise SchemaVersionError(f"{path}: unsupported manifest schema_version {rec.get('schema_version')!r}")
            records.append(rec)
    return records


def _sweep_info(grid: SweepGrid, scene: SceneConfig) -> dict:
    g = asdict(grid)
    g["wavelengths"] = list(grid.wavelengths)
    g["sal_depths"] = list(grid.sal_depths)
    return {"schema_version": SCHEMA_VERSION, "kind": "sweep", "grid": g,
            "scene_hash": scene_hash(scene), "scene": dump_scene(scene)}


def run_sweep(grid: SweepGrid, scene: SceneConfig, workers: int | None = None, out_dir=".",
              resume: bool = False) -> SweepResult:
    """Execute every cell of the grid, persisting one tally file per run.

    Manifest rows are appended as runs finish. With ``resume`` the cells
    already recorded as done (and whose tally file is present) are skipped.
    Failures are recorded and the sweep moves on.
    """
    runs = expand_grid(grid)
    for w in grid.wavelengths:
        for i in range(len(scene.layers)):
            properties_for(scene, i, w)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / MANIFEST
    done = set()
    if resume:
        for rec in _read_manifest(manifest):
            if rec["status"] == "ok" and (out / rec["tally"]).exists():
                done.add(rec["tally"])
    elif manifest.exists():
        manifest.unlink()
    (out / SWEEP_INFO).write_text(json.dumps(_sweep_info(grid, scene), indent=1, sort_keys=True) + "\n",
                                  encoding="utf-8")
    records, failed = [], []
    for run in runs:
        if run.tally_name in done:
            continue
        rec = {"schema_version": SCHEMA_VERSION, "wavelength_nm": run.wavelength, "sal_depth_mm": run.sal_depth,
               "mode": run.mode, "seed": run.seed, "photons": run.photons,
               "stream_range": [0, run.n_batches], "tally": run.tally_name}
        start = time.perf_counter()
        try:
            run_scene = scene.with_sal(SuperAbsorbentLayer(run.sal_depth)) if run.mode == "sal" else scene.with_sal(None)
            tally = simulate(run_scene, run.wavelength, run.photons, run.seed, mode=run.mode,
                             depth_grid=run.depth_grid, options=grid.transport, workers=workers)
            tally.metadata["pairing"] = grid.pairing
            save_tally(tally, out / run.tally_name)
            rec["status"] = "ok"
        except Exception as exc:  # recorded per cell; the sweep carries on
            log.exception("run %s failed", run.label)
            rec["status"] = "failed"
            rec["error"] = f"{type(exc).__name__}: {exc}"
            failed.append(run)
        rec["wall_time_s"] = round(time.perf_counter() - start, 3)
        with manifest.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        records.append(rec)
        log.info("%s %s in %.1fs", run.label, rec["status"], rec["wall_time_s"])
    return SweepResult(out, records, failed)


def load_run_set(runs_dir) -> RunSet:
    """Rebuild the run set from a sweep directory's sweep.json and manifest."""
    runs_dir = Path(runs_dir)
    info = json.loads((runs_dir / SWEEP_INFO).read_text(encoding="utf-8"))
    if info.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionError(f"unsupported sweep schema_version {info.get('schema_version')!r}")
    g = info["grid"]
    rs = RunSet(g["sal_mode"], tuple(float(w) for w in g["wavelengths"]),
                tuple(sorted(float(d) for d in g["sal_depths"])))
    for rec in _read_manifest(runs_dir / MANIFEST):
        if rec["status"] != "ok":
            continue
        depth = rec["sal_depth_mm"]
        rs.tallies[(float(rec["wavelength_nm"]), None if depth is None else float(depth))] = \
            load_tally(runs_dir / rec["tally"])
    return rs
