"""Physics self-checks behind ``nirsdse validate``."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tally as tally_mod
from .analysis import RunSet, build_metric_table
from .harness import builtin_scene
from .medium import SuperAbsorbentLayer
from .transport import TransportOptions, sample_hg_cosines, simulate

__all__ = ["CheckResult", "beer_lambert_check", "conservation_check", "determinism_check",
           "equivalence_check", "hg_moment_check", "validate_physics"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    expected: float
    tolerance: float
    detail: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.measured, self.expected, self.tolerance = map(float, (self.measured, self.expected, self.tolerance))

    def as_dict(self) -> dict:
        return asdict(self)


def beer_lambert_check(n_photons: int, mu_a: float = 1.0, depth: float = 1.0, seed: int = 1) -> CheckResult:
    scene = builtin_scene("beer_lambert")
    t = simulate(scene, 850.0, n_photons, seed, depth_grid=(depth,))
    frac = t.reached_by_depth[0] / t.launched_weight
    p = math.exp(-mu_a * depth)
    sigma = math.sqrt(p * (1 - p) / n_photons)
    return CheckResult("beer_lambert", abs(frac - p) <= 3 * sigma, frac, p, 3 * sigma,
                       f"{n_photons} photons, mu_a={mu_a:g}/mm, d={depth:g} mm")


def hg_moment_check(g: float, n: int, sampler=sample_hg_cosines, seed: int = 3) -> CheckResult:
    cosines = np.asarray(sampler(g, n, seed))
    mean = float(cosines.mean())
    tol = 3 * float(cosines.std()) / math.sqrt(n)
    return CheckResult(f"hg_moment[g={g:g}]", abs(mean - g) <= tol, mean, g, tol, f"{n} draws")


def conservation_check(n_photons: int, roulette: bool, seed: int = 5):
    scene = builtin_scene("three_layer")
    t = simulate(scene, 850.0, n_photons, seed, options=TransportOptions(roulette=roulette))
    led = t.ledger()
    out = [CheckResult(f"conservation_exact[roulette={'on' if roulette else 'off'}]",
                       led["exact_rel_error"] <= 1e-9, led["exact"], led["launched"], 1e-9,
                       "relative error of the full ledger incl. roulette residual and gain")]
    if roulette and n_photons >= 100_000:
        # roulette gains are rare and large; below ~1e5 photons the sample SE is unreliable
        tol = 3 * led["physical_se"]
        out.append(CheckResult("conservation_physical[roulette=on]", abs(led["physical"] - led["launched"]) <= tol,
                               led["physical"], led["launched"], tol,
                               "terminal buckets without roulette bookkeeping, 3 standard errors"))
    elif not roulette:
        tally_total = t.bucket_total + t.detected_exit_weight
        out.append(CheckResult("conservation_buckets[roulette=off]",
                               abs(tally_total - t.launched_weight) <= 1e-9 * t.launched_weight,
                               tally_total, t.launched_weight, 1e-9 * t.launched_weight,
                               "bucket total + detected = launched"))
    return out


def equivalence_check(n_photons: int, depths=(10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0), seed: int = 11,
                      scene_name: str = "equivalence"):
    """SAL difference method against depth tagging, per detector and depth.

    Both routes use common random numbers; the tag-mode estimate is its own
    run, not the baseline of the difference method.
    """
    scene = builtin_scene(scene_name)
    wl = scene.wavelengths[0]
    tag = simulate(scene, wl, n_photons, seed, mode="tag", depth_grid=depths)
    diff = RunSet("difference", (wl,), tuple(depths))
    diff.tallies[(wl, None)] = simulate(scene, wl, n_photons, seed, mode="tag")
    for d in depths:
        diff.tallies[(wl, d)] = simulate(scene.with_sal(SuperAbsorbentLayer(d)), wl, n_photons, seed, mode="sal")
    tagged = RunSet("tag", (wl,), tuple(depths), {(wl, None): tag})
    rows_d = build_metric_table(diff)
    rows_t = build_metric_table(tagged)
    worst, worst_cell, failures = 0.0, None, 0
    for a, b in zip(rows_d, rows_t):
        sigma = math.hypot(a.pf_se, b.pf_se)
        delta = abs(a.penetration_fraction - b.penetration_fraction)
        if delta > 3 * sigma:
            failures += 1
        score = delta / sigma if sigma > 0 else (0.0 if delta == 0 else math.inf)
        if score >= worst:
            worst, worst_cell = score, (a.sal_depth_mm, a.detector_mm)
    return CheckResult("sal_tag_equivalence", failures == 0, worst, 0.0, 3.0,
                       f"{len(rows_d)} cells, {failures} outside 3 sigma; worst |delta|/sigma at {worst_cell}")


def determinism_check(n_photons: int, seed: int = 42) -> CheckResult:
    """Worker count and batch decomposition must not change a single bit."""
    scene = builtin_scene("equivalence")
    wl = scene.wavelengths[0]
    depths = (10.0, 20.0)
    one = simulate(scene, wl, n_photons, seed, depth_grid=depths, workers=1)
    many = simulate(scene, wl, n_photons, seed, depth_grid=depths, workers=4)
    n_batches = len(range(0, n_photons, 1 << 16))
    parts = [simulate(scene, wl, n_photons, seed, depth_grid=depths, workers=1, batches=[b])
             for b in range(n_batches)]
    merged = parts[0]
    for p in parts[1:]:
        merged = tally_mod.merge(merged, p)
    merged.metadata = one.metadata
    ok = tally_mod.dumps(one) == tally_mod.dumps(many) == tally_mod.dumps(merged)
    return CheckResult("determinism", ok, float(ok), 1.0, 0.0,
                       f"{n_photons} photons in {n_batches} batches, workers 1 vs 4 vs per-batch merge")


def validate_physics(quick: bool = False, hg_sampler=sample_hg_cosines) -> list[CheckResult]:
    """Run the invariant suite; ``quick`` drops to a 1e4-photon smoke subset."""
    big = 10_000 if quick else 1_000_000
    mid = 10_000 if quick else 100_000
    results = [beer_lambert_check(big)]
    results += [hg_moment_check(g, big, hg_sampler) for g in (0.0, 0.5, 0.9)]
    results += conservation_check(mid, roulette=False)
    results += conservation_check(mid, roulette=True)
    if not quick:
        results.append(equivalence_check(mid))
        results.append(determinism_check(150_000))
    else:
        results.append(equivalence_check(mid, depths=(10.0, 20.0)))
    return results
