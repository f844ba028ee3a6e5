"""Photon transport through a layered scene.

Weighted (implicit-capture) packets, MCML-style step splitting at
interfaces, Henyey-Greenstein scattering, Fresnel boundaries and Russian
roulette. The per-operation functions here wrap the compiled routines in
:mod:`nirsdse.kernel`; :func:`simulate` runs whole batches.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import kernel as K
from .medium import CompiledScene, SceneConfig, compile_scene, scene_hash
from .rng import STATE_SIZE, RngStream, seed_state, next_uniform
from .tally import TallySet

__all__ = [
    "BATCH_SIZE",
    "InvalidMediumError",
    "PhotonState",
    "TransportOptions",
    "advance",
    "attenuate",
    "cross_boundary",
    "fresnel_reflectance",
    "launch_photon",
    "roulette",
    "sample_hg_cosines",
    "sample_step",
    "scatter_hg",
    "simulate",
    "trace",
]

BATCH_SIZE = 1 << 16
MAX_EVENTS = 10_000_000


class InvalidMediumError(ValueError):
    pass


@dataclass(frozen=True)
class TransportOptions:
    roulette: bool = True
    roulette_threshold: float = 1e-4
    survival_p: float = 0.1
    max_events: int = MAX_EVENTS

    def env(self, compiled: CompiledScene) -> np.ndarray:
        threshold = self.roulette_threshold if self.roulette else 0.0
        return np.array([compiled.n_above, compiled.n_below, compiled.sal_z, threshold,
                         self.survival_p, float(self.max_events)], dtype=np.float64)


@dataclass
class PhotonState:
    position: tuple = (0.0, 0.0, 0.0)
    direction: tuple = (0.0, 0.0, 1.0)
    weight: float = 1.0
    layer_index: int = 0
    max_depth: float = 0.0
    status: str = "alive"
    detector_index: int | None = None
    exit_weight: float | None = None
    step_left: float = 0.0  # dimensionless optical depth still to travel

    def to_array(self) -> np.ndarray:
        p = np.empty(K.PHOTON_SIZE, dtype=np.float64)
        p[K.X:K.Z + 1] = self.position
        p[K.UX:K.UZ + 1] = self.direction
        p[K.W] = self.weight
        p[K.REGION] = self.layer_index
        p[K.MAXD] = self.max_depth
        p[K.STATUS] = K.STATUS_NAMES.index(self.status)
        p[K.SLEFT] = self.step_left
        return p

    @classmethod
    def from_array(cls, p: np.ndarray) -> "PhotonState":
        return cls(
            position=(float(p[K.X]), float(p[K.Y]), float(p[K.Z])),
            direction=(float(p[K.UX]), float(p[K.UY]), float(p[K.UZ])),
            weight=float(p[K.W]),
            layer_index=int(p[K.REGION]),
            max_depth=float(p[K.MAXD]),
            status=K.STATUS_NAMES[int(p[K.STATUS])],
            step_left=float(p[K.SLEFT]),
        )


def _compiled(scene, wavelength, use_sal=True) -> CompiledScene:
    if isinstance(scene, CompiledScene):
        return scene
    if wavelength is None:
        wavelength = scene.wavelengths[0]
    return compile_scene(scene, wavelength, use_sal)


def launch_photon(ambient_n: float = 1.0, n_top: float = 1.0) -> PhotonState:
    """Pencil beam at the origin heading +z, less specular reflection."""
    p = np.empty(K.PHOTON_SIZE)
    K.launch(p, float(ambient_n), float(n_top))
    return PhotonState.from_array(p)


def sample_step(xi: float, mu_t: float) -> float:
    if not mu_t > 0:
        raise InvalidMediumError(f"interaction coefficient must be positive, got {mu_t}")
    return K.sample_step(float(xi), float(mu_t))


def advance(photon: PhotonState, s: float, scene, wavelength=None) -> PhotonState:
    """Move by ``s`` mm or to the first plane in the way (interface, surface, SAL)."""
    c = _compiled(scene, wavelength)
    p = photon.to_array()
    K.advance(p, float(s), c.regions, c.sal_z)
    return PhotonState.from_array(p)


def attenuate(photon: PhotonState, props) -> tuple[PhotonState, float]:
    p = photon.to_array()
    absorbed = K.attenuate(p, props.mu_a, props.mu_s)
    out = PhotonState.from_array(p)
    if out.weight <= 0.0:
        out.status = "absorbed"
    return out, absorbed


def scatter_hg(direction, g: float, xi1: float, xi2: float) -> tuple:
    ux, uy, uz = (float(v) for v in direction)
    return K.rotate(ux, uy, uz, K.hg_cos(float(g), float(xi1)), 2.0 * math.pi * float(xi2))


def fresnel_reflectance(n_i: float, n_t: float, cos_incident: float) -> float:
    return K.fresnel(float(n_i), float(n_t), float(cos_incident))[0]


def cross_boundary(photon: PhotonState, scene, xi: float, wavelength=None) -> PhotonState:
    c = _compiled(scene, wavelength)
    p = photon.to_array()
    K.cross_boundary(p, c.regions, c.n_above, c.n_below, float(xi))
    out = PhotonState.from_array(p)
    if out.status == "exited_top" and not isinstance(scene, CompiledScene):
        _detect(out, c)
    return out


def _detect(photon: PhotonState, c: CompiledScene) -> None:
    i, scale = K.find_detector(photon.position[0], photon.position[1],
                               c.detector_distances, c.detector_radius, c.annulus)
    if i >= 0:
        photon.status = "detected"
        photon.detector_index = int(i)
        photon.exit_weight = photon.weight * scale
    else:
        photon.status = "escaped_undetected"
        photon.exit_weight = photon.weight


def roulette(photon: PhotonState, xi: float, threshold: float = 1e-4, survival_p: float = 0.1) -> PhotonState:
    p = photon.to_array()
    K.roulette(p, float(xi), float(threshold), float(survival_p))
    return PhotonState.from_array(p)


def trace(rng: RngStream, scene: SceneConfig, mode: str = "tag", wavelength=None, photon: int = 0,
          options: TransportOptions = TransportOptions()) -> PhotonState:
    """Full history of one photon; ``mode`` is "sal" or "tag"."""
    if mode == "sal" and scene.sal is None:
        raise ValueError("sal mode needs a scene with a SAL")
    c = _compiled(scene, wavelength, use_sal=(mode == "sal"))
    state = np.empty(STATE_SIZE, dtype=np.uint64)
    seed_state(state, np.uint64(rng.seed), np.uint64(rng.stream_id), np.uint64(photon))
    p = np.empty(K.PHOTON_SIZE)
    K.launch(p, c.n_above, c.regions[0, 5])
    dep = np.zeros(5)
    K.trace_photon(p, c.regions, options.env(c), state, dep)
    out = PhotonState.from_array(p)
    if out.status == "exited_top":
        _detect(out, c)
    return out


def sample_hg_cosines(g: float, n: int, seed: int = 0) -> np.ndarray:
    """Cosines between incoming and scattered directions for ``n`` HG draws."""
    return K.sample_hg_cosines(float(g), int(n), np.uint64(seed), np.uint64(0))


# --- batched runs ------------------------------------------------------------

def default_workers() -> int:
    value = os.environ.get("NIRSDSE_WORKERS")
    if value:
        return max(1, int(value))
    return os.cpu_count() or 1


def _run_one_batch(c: CompiledScene, env, depth_grid, seed: int, batch: int, n: int) -> dict:
    d, k = c.detector_distances.shape[0], depth_grid.shape[0]
    out = {
        "det_w": np.zeros(d), "det_w2": np.zeros(d), "det_n": np.zeros(d, dtype=np.int64),
        "dbd_w": np.zeros((d, k)), "dbd_w2": np.zeros((d, k)),
        "reach_w": np.zeros(k), "reach_w2": np.zeros(k), "scalars": np.zeros(K.N_SCALARS),
    }
    K.run_batch(c.regions, env, c.detector_distances, c.detector_radius, c.annulus, depth_grid,
                np.uint64(seed), np.uint64(batch), n,
                out["det_w"], out["det_w2"], out["det_n"], out["dbd_w"], out["dbd_w2"],
                out["reach_w"], out["reach_w2"], out["scalars"])
    return out


def _batch_tally(template: TallySet, n: int, out: dict) -> TallySet:
    t = TallySet.empty_like(template)
    s = out["scalars"]
    t.launched_photons = n
    t.launched_weight = s[K.S_LAUNCHED]
    t.specular_weight = s[K.S_SPECULAR]
    t.detected_weight = out["det_w"]
    t.detected_weight_sq = out["det_w2"]
    t.detected_count = out["det_n"]
    t.detected_by_depth = out["dbd_w"]
    t.detected_by_depth_sq = out["dbd_w2"]
    t.reached_by_depth = out["reach_w"]
    t.reached_by_depth_sq = out["reach_w2"]
    t.absorbed = s[K.S_ABSORBED]
    t.sal_absorbed = s[K.S_SAL]
    t.escaped_undetected = s[K.S_ESCAPED]
    t.transmitted_bottom = s[K.S_TRANSMITTED]
    t.roulette_residual = s[K.S_RESIDUAL]
    t.roulette_gain = s[K.S_GAIN]
    t.detected_exit_weight = s[K.S_DETECTED_EXIT]
    t.ledger_sq = s[K.S_LEDGER_SQ]
    t.event_overflow = int(s[K.S_OVERFLOW])
    return t


def simulate(scene: SceneConfig, wavelength: float, n_photons: int, seed: int, mode: str = "tag",
             depth_grid=(), options: TransportOptions = TransportOptions(), workers: int | None = None,
             batches: list[int] | None = None) -> TallySet:
    """Trace ``n_photons`` and return the merged tally.

    Photons are split into fixed batches of BATCH_SIZE, one RNG stream per
    batch. Batches may run on any number of worker threads; partial tallies
    are always reduced in batch order, so results are bit-identical for every
    ``workers`` value. ``batches`` restricts the run to a subset of batch
    indices (used to check batch decomposition).
    """
    from .tally import merge

    if mode not in ("sal", "tag"):
        raise ValueError(f"mode must be 'sal' or 'tag', got {mode!r}")
    if mode == "sal" and scene.sal is None:
        raise ValueError("sal mode needs a scene with a SAL")
    if n_photons < 1:
        raise ValueError("n_photons must be positive")
    c = compile_scene(scene, wavelength, use_sal=(mode == "sal"))
    for r in c.regions:
        if not r[2] + r[3] > 0:
            raise InvalidMediumError("every region needs mu_a + mu_s > 0")
    env = options.env(c)
    grid = np.array(sorted(float(d) for d in depth_grid), dtype=np.float64)
    template = TallySet.for_detectors(
        scene.detectors, grid, seed=int(seed), scene_hash=scene_hash(scene), wavelength_nm=float(wavelength),
        sal_depth_mm=float(scene.sal.depth) if (mode == "sal") else None, mode=mode)
    n_batches = -(-n_photons // BATCH_SIZE)
    sizes = [min(BATCH_SIZE, n_photons - b * BATCH_SIZE) for b in range(n_batches)]
    todo = list(range(n_batches)) if batches is None else list(batches)
    workers = default_workers() if workers is None else max(1, int(workers))

    def job(b):
        return _run_one_batch(c, env, grid, seed, b, sizes[b])

    if workers == 1 or len(todo) == 1:
        parts = [job(b) for b in todo]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, todo))
    total = TallySet.empty_like(template)
    for b, part in zip(todo, parts):
        total = merge(total, _batch_tally(template, sizes[b], part))
    total.metadata = {"roulette": options.roulette, "roulette_threshold": options.roulette_threshold,
                      "survival_p": options.survival_p, "batch_size": BATCH_SIZE}
    if scene.detectors.geometry == "annulus":
        total.metadata["annulus_detectors"] = True
    return total
