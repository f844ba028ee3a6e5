import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from nirsdse.analysis import RunSet
from nirsdse.medium import DEFAULT_WAVELENGTHS, DetectorSpec, Layer, OpticalProperties, SceneConfig
from nirsdse.tally import TallySet

FIXTURES = Path(__file__).parent / "fixtures"

# first calls into numba kernels pay for loading the compiled cache
settings.register_profile("nirsdse", deadline=None)
settings.load_profile("nirsdse")


def pytest_addoption(parser):
    parser.addoption("--skip-slow", action="store_true", help="skip tests marked slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--skip-slow"):
        skip = pytest.mark.skip(reason="--skip-slow")
        for item in items:
            if "slow" in item.keywords:
                item.add_marker(skip)


def slab(*layers, wavelength=800.0, ambient_n=1.0, sal=None, detectors=None):
    """Scene from (thickness, mu_a, mu_s, g, n) tuples at one wavelength."""
    built = tuple(Layer(f"l{i}", t, {wavelength: OpticalProperties(a, s, g, n)})
                  for i, (t, a, s, g, n) in enumerate(layers))
    scene = SceneConfig(built, detectors or DetectorSpec(), sal, ambient_n)
    scene.validate()
    return scene


def synthetic_tally(detected, launched=2.0**20, photons=2**20, sal_depth=None, seed=1, depth_grid=()):
    """Hand-made tally; dyadic weights keep every ratio exact."""
    detected = np.asarray(detected, dtype=float)
    t = TallySet.for_detectors(DetectorSpec(tuple(10.0 + 5 * i for i in range(detected.size))), depth_grid,
                               seed=seed, scene_hash="s", sal_depth_mm=sal_depth,
                               mode="tag" if sal_depth is None else "sal")
    t.launched_photons, t.launched_weight = photons, launched
    t.detected_weight = detected
    t.detected_weight_sq = detected * 0.5
    return t


DEFAULT_DEPTHS = (10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0)


def difference_run_set(wavelengths=DEFAULT_WAVELENGTHS, depths=DEFAULT_DEPTHS, n_det=16):
    """Difference-mode run set with SAL losses that shrink with depth."""
    rng = np.random.default_rng(5)
    rs = RunSet("difference", tuple(wavelengths), tuple(depths))
    for w in wavelengths:
        base = rng.integers(1000, 2000, n_det) * 2.0**-4
        rs.tallies[(w, None)] = synthetic_tally(base, seed=int(w))
        for d in depths:
            lost = np.floor(base * rng.uniform(0, 1, n_det) * math.exp(-d / 20)) + 1.0
            rs.tallies[(w, d)] = synthetic_tally(base - lost, sal_depth=d, seed=int(w))
    return rs


@pytest.fixture
def canonical_path():
    return FIXTURES / "canonical_scene.ini"


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
