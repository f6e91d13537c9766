import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from jointflow.datasets import (CRESCENT, IMAGE_LEVELS, LEVEL_STEP, MEMBERSHIP, SHAPES4, DatasetSpec, JointData, build_dataset,
                                dequantize, export_csv, gen_circle, gen_crescents, gen_sectors, gen_shapes4,
                                gen_toy_images, inverse_standardize, load_dataset, make_batches, save_dataset,
                                shape_distance, standardize)
from jointflow.superres import avg_pool

from oracles import chi2_uniform_angles


def _angular_distance(a, b):
    return np.abs((a - b + np.pi) % (2 * np.pi) - np.pi)


# -- circle ---------------------------------------------------------------------


def test_circle_degenerate_radius():
    x = gen_circle(1000, r=1.7, sigma_r=0.0, seed=0)
    np.testing.assert_allclose(np.linalg.norm(x, axis=1), 1.7, rtol=1e-15)


def test_circle_radius_mean_within_clt_bound():
    x = gen_circle(100_000, r=1.0, sigma_r=0.1, seed=1)
    assert abs(np.linalg.norm(x, axis=1).mean() - 1.0) < 3 * 0.1 / np.sqrt(100_000)


def test_circle_angles_uniform():
    stat, crit = chi2_uniform_angles(gen_circle(20_000, seed=2))
    assert stat < crit


def test_circle_rejects_bad_radius():
    with pytest.raises(ValueError):
        gen_circle(10, r=0.0)


# -- crescents ------------------------------------------------------------------


def test_crescents_labels_and_balance():
    d = gen_crescents(1000, seed=0)
    assert set(np.unique(d.labels)) == {-1, 1}
    assert np.sum(d.labels == 1) == 500
    np.testing.assert_array_equal(d.y[:, 0], d.labels)
    assert d.meta["offset"] == list(CRESCENT["offset"])


def test_crescents_satisfy_own_predicate():
    d = gen_crescents(4000, seed=3)
    assert np.all(MEMBERSHIP["crescents"](d.x, d.labels, 0.0))


def test_crescents_classes_interleave():
    d = gen_crescents(4000, seed=4)
    up, low = d.x[d.labels == 1], d.x[d.labels == -1]
    assert up[:, 1].min() > -0.4 and low[:, 1].max() < 0.9
    assert low[:, 0].mean() > up[:, 0].mean()


def test_crescents_need_even_n():
    with pytest.raises(ValueError):
        gen_crescents(7)


# -- sectors --------------------------------------------------------------------


def test_sectors_by_construction():
    d = gen_sectors(5000, seed=0)
    assert np.all(np.linalg.norm(d.x, axis=1) <= 1.0)
    ang = np.arctan2(d.x[:, 1], d.x[:, 0])
    assert np.all(_angular_distance(ang, d.y[:, 0]) <= 0.5 + 1e-12)
    assert np.all(MEMBERSHIP["sectors"](d.x, d.y, 0.0))


def test_sector_mean_radius_is_two_thirds():
    d = gen_sectors(100_000, seed=1)
    assert abs(np.linalg.norm(d.x, axis=1).mean() - 2 / 3) < 0.005


def test_sector_angle_histogram_uniform():
    y = gen_sectors(20_000, seed=2).y[:, 0]
    counts, _ = np.histogram(y, bins=16, range=(0, 2 * np.pi))
    assert stats.chisquare(counts).pvalue > 0.01


def test_sector_predicate_rejects_opposite_side():
    assert not MEMBERSHIP["sectors"](np.array([[-0.5, 0.0]]), np.array([0.0]), 0.1)[0]
    assert MEMBERSHIP["sectors"](np.array([[1.05, 0.0]]), np.array([0.0]), 0.1)[0]


# -- four shapes ------------------------------------------------------------------


def test_shapes4_balance_and_construction():
    d = gen_shapes4(8000, seed=0)
    assert np.all(np.bincount(d.labels) == 2000)
    ring = d.x[d.labels == 0]
    c = SHAPES4["ring"]
    assert np.all(np.abs(np.linalg.norm(ring - c["center"], axis=1) - c["radius"]) <= 3 * c["sigma"] + 1e-12)
    assert np.all(MEMBERSHIP["shapes4"](d.x, d.labels, 0.0))


def test_shapes4_overlap():
    d = gen_shapes4(8000, seed=1)
    disk = d.x[d.labels == 2]
    inside_ring_support = shape_distance(disk, np.zeros(len(disk))) == 0
    assert inside_ring_support.mean() >= 0.01


def test_shapes4_need_multiple_of_four():
    with pytest.raises(ValueError):
        gen_shapes4(10)


# -- images ---------------------------------------------------------------------


@pytest.mark.parametrize("size", [8, 16])
def test_toy_images_quantized_and_deterministic(size):
    a, b = gen_toy_images(50, size, seed=5), gen_toy_images(50, size, seed=5)
    assert a.x.tobytes() == b.x.tobytes()
    levels = a.x / LEVEL_STEP
    np.testing.assert_array_equal(levels, np.round(levels))
    assert a.x.min() >= 0 and a.x.max() <= IMAGE_LEVELS * LEVEL_STEP
    pooled = avg_pool(a.x, 4)
    assert pooled.shape == (50, size // 4, size // 4, 1)
    assert pooled.min() >= 0 and pooled.max() <= 1
    np.testing.assert_array_equal(a.y[:, 0, 0, 0], a.labels)
    assert np.all(a.y == a.labels[:, None, None, None])


def test_toy_images_reject_size():
    with pytest.raises(ValueError):
        gen_toy_images(3, 12)


# -- preprocessing ----------------------------------------------------------------


def test_dequantize_zero_alpha_is_identity():
    v = np.linspace(0, 1, 8)
    np.testing.assert_array_equal(dequantize(v, 0.0, np.random.default_rng(0)), v)


def test_dequantize_constant_variance():
    out = dequantize(np.full(200_000, 0.4), 0.02, np.random.default_rng(1))
    assert out.var() == pytest.approx(0.02**2, rel=0.02)
    assert out.mean() == pytest.approx(0.98 * 0.4, abs=1e-3)


def test_dequantize_fresh_noise_each_call():
    rng = np.random.default_rng(2)
    assert not np.array_equal(dequantize(np.zeros(5), 0.02, rng), dequantize(np.zeros(5), 0.02, rng))


def test_dequantize_adjacent_levels_barely_overlap():
    # the two noise distributions around levels 1/7 apart cross at their midpoint
    sigma, gap = 0.02, 0.98 / 7
    assert stats.norm.sf(gap / 2 / sigma) < 0.01


def test_dequantize_mean_within_clt_bound():
    d = gen_toy_images(200, 8, seed=0).x
    out = dequantize(d, 0.02, np.random.default_rng(3))
    # shrinking by (1 - alpha) moves the mean deterministically; the noise part obeys the CLT bound
    assert abs(out.mean() - 0.98 * d.mean()) < 0.02 * 3 / np.sqrt(d.size)


def test_dequantize_rejects_alpha():
    with pytest.raises(ValueError):
        dequantize(np.zeros(3), 1.0, np.random.default_rng(0))


def test_standardize_round_trip():
    d = gen_toy_images(100, 8, seed=1)
    s, st_ = standardize(d)
    allv = np.concatenate([s.x.ravel(), s.y.ravel()])
    assert abs(allv.mean()) < 1e-10 and abs(allv.std() - 1) < 1e-10
    back = inverse_standardize(s, st_)
    assert np.max(np.abs(back.x - d.x)) < 1e-10 and np.max(np.abs(back.y - d.y)) < 1e-10
    assert s.meta["standardization"] == {"mean": st_.mean, "std": st_.std}


def test_standardize_already_standard():
    rng = np.random.default_rng(0)
    d = JointData(rng.normal(size=(50_000, 2)), rng.normal(size=(50_000, 1)))
    _, st_ = standardize(d)
    assert abs(st_.mean) < 0.02 and abs(st_.std - 1) < 0.02


def test_standardize_zero_variance():
    with pytest.raises(ValueError):
        standardize(JointData(np.ones((4, 2)), np.ones((4, 1))))


# -- batching ----------------------------------------------------------------------


def test_segregated_batches_single_class_round_robin():
    d = gen_crescents(1000, seed=0)
    batches = make_batches(d.labels, 64, segregate=True, seed=1)
    classes = [set(d.labels[b]) for b in batches]
    assert all(len(c) == 1 for c in classes)
    firsts = [c.pop() for c in classes]
    assert firsts[:6] == [firsts[0], -firsts[0]] * 3
    assert np.array_equal(np.sort(np.concatenate(batches)), np.arange(1000))


def test_plain_batches_mix_conditions():
    d = gen_sectors(1000, seed=0)
    batches = make_batches(len(d), 64, seed=1)
    assert all(np.ptp(d.y[b]) > 1.0 for b in batches[:-1])
    assert np.array_equal(np.sort(np.concatenate(batches)), np.arange(1000))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 300), st.integers(1, 64), st.integers(0, 2**31))
def test_batches_cover_epoch_once(n, batch, seed):
    idx = np.concatenate(make_batches(n, batch, seed=seed))
    assert np.array_equal(np.sort(idx), np.arange(n))


def test_segregation_rejects_oversized_batch():
    with pytest.raises(ValueError):
        make_batches(np.array([0, 0, 1, 1, 1]), 3, segregate=True)


# -- specs and files ----------------------------------------------------------------


@pytest.mark.parametrize("kind", ["crescents", "sectors", "shapes4", "images"])
def test_build_dataset_is_deterministic(kind, tmp_path):
    spec = DatasetSpec(kind, 64, seed=9, standardize=kind == "images", image_size=8)
    a, _ = build_dataset(spec)
    b, _ = build_dataset(DatasetSpec(kind, 64, seed=9, standardize=kind == "images", image_size=8))
    pa, pb = save_dataset(tmp_path / "a.bin", a), save_dataset(tmp_path / "b.bin", b)
    assert pa.read_bytes() == pb.read_bytes()


def test_dataset_file_round_trip(tmp_path):
    d, _ = build_dataset(DatasetSpec("shapes4", 40, seed=2))
    path = save_dataset(tmp_path / "d.bin", d, {"note": "x"})
    back = load_dataset(path)
    assert back.x.tobytes() == d.x.tobytes() and back.y.tobytes() == d.y.tobytes()
    np.testing.assert_array_equal(back.labels, d.labels)
    assert back.meta["spec"]["seed"] == 2


def test_dataset_file_size_checked(tmp_path):
    path = save_dataset(tmp_path / "d.bin", gen_crescents(10))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError, match="payload"):
        load_dataset(path)


def test_export_csv(tmp_path):
    d = gen_crescents(6, seed=0)
    lines = export_csv(tmp_path / "d.csv", d).read_text().splitlines()
    assert lines[0] == "x0,x1,y0,label" and len(lines) == 7


def test_spec_validation():
    with pytest.raises(ValueError, match="dataset.kind"):
        build_dataset(DatasetSpec("spirals", 10))
    with pytest.raises(ValueError, match="size"):
        build_dataset(DatasetSpec("crescents", 0))
