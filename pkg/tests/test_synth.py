import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from weather_experts.synth import (
    DegradationSpec,
    Family,
    degrade,
    dump_samples,
    family_statistics_separation,
    generate_clean,
    haze,
    make_batch,
    make_pair,
    to_ppm,
)

FAMILIES = list(Family)


def test_clean_is_deterministic():
    assert generate_clean(3, 17).tobytes() == generate_clean(3, 17).tobytes()


def test_clean_range_over_many_samples():
    lo, hi = 1.0, 0.0
    for i in range(10_000):
        img = generate_clean(0, i, size=8)
        lo, hi = min(lo, img.min()), max(hi, img.max())
    assert 0.0 <= lo and hi <= 1.0


def test_distinct_indices_differ():
    same = sum(np.abs(generate_clean(1, 2 * i, 8) - generate_clean(1, 2 * i + 1, 8)).sum() == 0
               for i in range(1000))
    assert same == 0


def test_clean_size_precondition():
    with pytest.raises(ValueError):
        generate_clean(0, 0, size=4)


def test_haze_formula():
    np.testing.assert_allclose(haze(np.ones((3, 4, 4)), 0.5, 0.8), 0.9, rtol=0, atol=1e-15)
    c = generate_clean(0, 1)
    assert np.array_equal(haze(c, 1.0, 0.9), c)
    assert np.all(haze(c, 0.0, 0.85) == 0.85)


@pytest.mark.parametrize("family", [Family.RAIN, Family.SNOW])
def test_additive_families_brighten(family):
    for i in range(20):
        c = generate_clean(0, i)
        out = degrade(c, DegradationSpec(family), i, clamp=False)
        assert np.all(out >= c)
        assert np.any(out > c)


@given(st.sampled_from(FAMILIES), st.integers(0, 2**32 - 1), st.integers(0, 10**9))
def test_pairs_in_range_and_reproducible(family, seed, index):
    a = make_pair(family, seed, index, size=16)
    b = make_pair(family, seed, index, size=16)
    assert a.degraded.tobytes() == b.degraded.tobytes()
    for img in (a.clean, a.degraded):
        assert np.all(np.isfinite(img)) and img.min() >= 0 and img.max() <= 1


def test_generation_order_does_not_matter():
    fwd, _ = make_batch("rain", 5, [3, 4, 5])
    rev, _ = make_batch("rain", 5, [5, 4, 3])
    assert np.array_equal(fwd, rev[::-1])


def test_haze_rain_composition_differs_from_parts():
    pair = make_pair("haze_rain", 0, 4)
    assert not np.array_equal(pair.degraded, make_pair("haze", 0, 4).degraded)


def test_families_shift_statistics_as_designed():
    means = {}
    for fam in ("haze", "rain", "snow"):
        x, gt = make_batch(fam, 0, range(32))
        means[fam] = (x - gt).mean()
    assert all(v > 0 for v in means.values())


def test_separation_report():
    rep = family_statistics_separation(32)
    assert rep == family_statistics_separation(32)
    assert rep["separated"]
    assert min(rep["intra"].values()) > max(rep["inter"].values())
    with pytest.raises(ValueError):
        family_statistics_separation(16)


def test_ppm_quantisation():
    img = np.zeros((3, 1, 2))
    img[:, 0, 0] = 0.5 / 255          # exactly half a step rounds up
    img[:, 0, 1] = 1.2                # clipped
    blob = to_ppm(img)
    assert blob.startswith(b"P6\n2 1\n255\n")
    assert list(blob[-6:]) == [1, 1, 1, 255, 255, 255]


def test_dump_samples(tmp_path):
    path = dump_samples("snow", 3, tmp_path)
    manifest = json.loads(path.read_text())
    assert manifest["family"] == "snow" and len(manifest["samples"]) == 3
    for entry in manifest["samples"]:
        assert (tmp_path / entry["degraded"]).read_bytes().startswith(b"P6")
