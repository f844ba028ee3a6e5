import json
import math
from dataclasses import replace

import numpy as np
import pytest
from conftest import slab
from hypothesis import given
from hypothesis import strategies as st

from nirsdse.harness import builtin_scene
from nirsdse.medium import DetectorSpec
from nirsdse.tally import (ProvenanceMismatch, SchemaVersionError, TallySet, dumps, from_record, load_tally, merge,
                           record_exit, save_tally, standard_error, to_record)
from nirsdse.transport import TransportOptions, simulate

INF = math.inf
DEPTHS = (10.0, 20.0, 30.0)


def blank(**kw):
    return TallySet.for_detectors(DetectorSpec(), DEPTHS, seed=1, scene_hash="abc", **kw)


# --- record_exit -------------------------------------------------------------------------

def test_centre_hit():
    t = record_exit(blank(), 10.0, 0.0, 0.5, 25.0, DetectorSpec(), DEPTHS)
    assert t.detected_weight[0] == 0.5 and t.detected_count[0] == 1
    assert t.detected_by_depth[0].tolist() == [0.5, 0.5, 0.0]
    assert t.escaped_undetected == 0.0


def test_just_outside_radius():
    t = record_exit(blank(), 10.0, 1.42, 0.5, 25.0)
    assert t.detected_weight.sum() == 0.0
    assert t.escaped_undetected == 0.5


def test_depth_threshold_is_inclusive():
    t = record_exit(blank(), 20.0, 0.0, 1.0, 20.0)
    assert t.detected_by_depth[2].tolist() == [1.0, 1.0, 0.0]


def test_geometry_mismatch_rejected():
    with pytest.raises(ProvenanceMismatch):
        record_exit(blank(), 10.0, 0.0, 1.0, 0.0, DetectorSpec(radius=1.0))
    with pytest.raises(ProvenanceMismatch):
        record_exit(blank(), 10.0, 0.0, 1.0, 0.0, depth_grid=(5.0,))


def test_annulus_weight_scale():
    t = TallySet.for_detectors(DetectorSpec(geometry="annulus"), ())
    record_exit(t, 0.0, 30.0, 1.0, 0.0)  # anywhere on the 30 mm ring
    r = 1.41
    assert t.detected_weight[4] == pytest.approx(math.pi * r * r / (2 * math.pi * 30.0 * 2 * r), rel=1e-15)


@pytest.mark.slow
def test_annulus_matches_disc():
    scene = builtin_scene("equivalence")
    n = 1_000_000
    disc = simulate(scene, 800.0, n, seed=31)
    ring = simulate(replace(scene, detectors=DetectorSpec(geometry="annulus")), 800.0, n, seed=32)
    for i in range(disc.n_detectors):
        a, b = disc.detected_weight[i] / n, ring.detected_weight[i] / n
        sigma = math.hypot(standard_error(disc, i), standard_error(ring, i))
        assert abs(a - b) <= 3 * sigma, (i, a, b, sigma)


# --- merge ---------------------------------------------------------------------------------

per_detector = st.lists(st.floats(0.0, 10.0), min_size=16, max_size=16)


@st.composite
def tallies(draw):
    t = blank()
    t.launched_photons = draw(st.integers(0, 10**6))
    t.launched_weight = draw(st.floats(0.0, 1e6))
    t.absorbed = draw(st.floats(0.0, 1e6))
    t.roulette_residual = draw(st.floats(0.0, 10.0))
    t.detected_weight = np.array(draw(per_detector))
    t.detected_weight_sq = np.array(draw(per_detector))
    t.detected_by_depth = np.array([draw(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3))
                                    for _ in range(16)])
    t.detected_count = np.array(draw(st.lists(st.integers(0, 1000), min_size=16, max_size=16)))
    return t


@given(tallies())
def test_merge_identity(t):
    assert dumps(merge(t, blank())) == dumps(t)


@given(tallies(), tallies())
def test_merge_commutes(a, b):
    assert dumps(merge(a, b)) == dumps(merge(b, a))


@pytest.mark.parametrize("field, value", [("seed", 2), ("scene_hash", "xyz"), ("depth_grid", (10.0,)),
                                          ("detector_radius", 1.0), ("wavelength_nm", 700.0)])
def test_merge_provenance_mismatch(field, value):
    other = TallySet(**{**{k: getattr(blank(), k) for k in ("detector_distances", "detector_radius", "geometry",
                                                              "depth_grid", "seed", "scene_hash")}, field: value})
    with pytest.raises(ProvenanceMismatch):
        merge(blank(), other)


def test_eight_batch_merge_is_bit_identical():
    scene = slab((INF, 0.5, 1.0, 0.5, 1.4))
    n = 8 * 65536
    whole = simulate(scene, 800.0, n, 5, depth_grid=(1.0, 2.0), workers=1)
    merged = simulate(scene, 800.0, n, 5, depth_grid=(1.0, 2.0), batches=[0])
    for b in range(1, 8):
        merged = merge(merged, simulate(scene, 800.0, n, 5, depth_grid=(1.0, 2.0), batches=[b]))
    merged.metadata = whole.metadata
    assert dumps(merged) == dumps(whole)


# --- standard_error ------------------------------------------------------------------------

def test_se_zero_detections():
    t = blank()
    t.launched_photons = 100
    assert standard_error(t, 0) == 0.0


def test_se_bernoulli():
    t = blank()
    n, k, w = 1000, 37, 0.25
    for _ in range(k):
        record_exit(t, 15.0, 0.0, w, 0.0)
    t.launched_photons = n
    assert standard_error(t, 1) == pytest.approx(math.sqrt(w * w * (k / n) * (1 - k / n) / n), rel=1e-12)


def test_se_matches_bootstrap():
    rng = np.random.default_rng(2024)
    n = 100_000
    values = np.where(rng.random(n) < 0.03, rng.uniform(0.1, 1.0, n), 0.0)
    t = blank()
    for v in values[values > 0]:
        record_exit(t, 10.0, 0.0, v, 0.0)
    t.launched_photons = n
    boot = np.array([values[rng.integers(0, n, n)].mean() for _ in range(400)])
    assert standard_error(t, 0) == pytest.approx(boot.std(ddof=1), rel=0.10)


# --- invariants on real runs ------------------------------------------------------------------

def test_roulette_off_ledger_is_exact():
    scene = builtin_scene("three_layer")
    t = simulate(scene, 850.0, 50_000, 3, options=TransportOptions(roulette=False))
    assert t.roulette_residual == 0.0 and t.roulette_gain == 0.0
    assert t.bucket_total + t.detected_exit_weight == pytest.approx(t.launched_weight, rel=1e-12)
    assert t.transmitted_bottom > 0 and t.absorbed > 0 and t.escaped_undetected > 0


def test_sums_non_negative_and_depth_monotone():
    scene = builtin_scene("equivalence")
    t = simulate(scene, 800.0, 50_000, 4, depth_grid=(2.0, 4.0, 6.0, 10.0, 15.0))
    for name in ("detected_weight", "detected_weight_sq", "detected_by_depth", "reached_by_depth"):
        assert (getattr(t, name) >= 0).all()
    assert (np.diff(t.detected_by_depth, axis=1) <= 0).all()
    assert (np.diff(t.reached_by_depth) <= 0).all()
    assert (t.detected_by_depth[:, 0] <= t.detected_weight).all()


# --- serialisation -------------------------------------------------------------------------------

def test_json_round_trip(tmp_path):
    t = simulate(slab((INF, 0.5, 1.0, 0.5, 1.4)), 800.0, 2000, 6, depth_grid=(1.0,))
    path = save_tally(t, tmp_path / "t.json")
    assert dumps(load_tally(path)) == dumps(t)
    assert json.loads(path.read_text())["schema_version"] == 1


def test_unknown_schema_version_rejected():
    rec = to_record(blank())
    rec["schema_version"] = 99
    with pytest.raises(SchemaVersionError):
        from_record(rec)
    del rec["schema_version"]
    with pytest.raises(SchemaVersionError):
        from_record(rec)
