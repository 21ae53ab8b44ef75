import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wakesense.dataset import (LabeledDataset, build_dataset, clip_and_normalize, debias,
                               encode_labels, make_windows, stratified_split, window_indices)
from wakesense.wake import PressureTrace, generate_corpus, scenario_grid


def make_trace(frames, x=None, v=None, d="P"):
    frames = np.asarray(frames, dtype=float)
    if frames.ndim == 1:
        frames = frames[:, None]
    n = len(frames)
    x = np.linspace(-100, 100, n) if x is None else np.asarray(x, dtype=float)
    v = np.full(n, 500.0) if v is None else np.asarray(v, dtype=float)
    return PressureTrace(np.arange(n) * 0.002, frames, x, v, np.full(n, d))


# ---------------------------------------------------------------- debias

def test_debias_example():
    out = debias(make_trace([2.0, 2.0, 4.0, 6.0]), baseline_len=2)
    np.testing.assert_array_equal(out.frames[:, 0], [0.0, 0.0, 2.0, 4.0])


def test_debias_per_sensor():
    frames = np.array([[1.0, 10.0], [3.0, 30.0], [5.0, 0.0]])
    out = debias(make_trace(frames), baseline_len=2)
    np.testing.assert_array_equal(out.frames, [[-1.0, -10.0], [1.0, 10.0], [3.0, -20.0]])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (20, 3), elements=st.floats(-1e4, 1e4)), st.integers(1, 20))
def test_debias_is_idempotent(frames, n0):
    once = debias(make_trace(frames), n0)
    twice = debias(once, n0)
    np.testing.assert_allclose(twice.frames, once.frames, atol=1e-9)
    np.testing.assert_allclose(once.frames[:n0].mean(axis=0), 0.0, atol=1e-9)


def test_debias_rejects_bad_baseline():
    with pytest.raises(ValueError):
        debias(make_trace([1.0, 2.0]), baseline_len=3)
    with pytest.raises(ValueError):
        debias(make_trace([1.0, 2.0]), baseline_len=0)


# ---------------------------------------------------------------- clip

def test_clip_keeps_boundary_and_normalises():
    tr = make_trace(np.zeros(5), x=[-130.0, -120.0, -60.0, 120.0, 121.0])
    out = clip_and_normalize(tr)
    np.testing.assert_array_equal(out.x, [-1.0, -0.5, 1.0])
    assert len(out) == 3


def test_clip_drops_parked_samples():
    tr = make_trace(np.zeros(4), x=[0.0, 0.0, 10.0, 20.0], v=[0.0, 0.0, 500.0, 500.0])
    out = clip_and_normalize(tr)
    np.testing.assert_array_equal(out.x, [10 / 120, 20 / 120])


def test_clip_with_nothing_left_raises():
    with pytest.raises(ValueError):
        clip_and_normalize(make_trace(np.zeros(3), x=[200.0, 300.0, 400.0]))


# ---------------------------------------------------------------- windows and labels

def test_window_count():
    assert len(window_indices(100, 64)) == 37
    assert len(window_indices(100, 64, stride=4)) == 10
    tr = make_trace(np.zeros((100, 3)))
    assert len(make_windows(tr, 64)) == 37


def test_length_one_windows_are_the_samples():
    frames = np.random.default_rng(0).normal(size=(10, 3))
    ws = make_windows(make_trace(frames), 1)
    np.testing.assert_array_equal(np.stack([w.frames[0] for w, _ in ws]), frames)


def test_short_trace_warns_and_yields_nothing():
    with pytest.warns(RuntimeWarning, match="shorter"):
        assert make_windows(make_trace(np.zeros(10)), 64) == []


def test_windows_are_labelled_with_state_at_last_sample():
    n = 50
    frames = np.arange(n * 2, dtype=float).reshape(n, 2)
    x = np.linspace(-1, 1, n)
    tr = make_trace(frames, x=x, v=np.full(n, 700.0), d="N")
    for stride in (1, 3):
        for w, s in make_windows(tr, 8, stride):
            k = w.end_index
            np.testing.assert_array_equal(w.frames, frames[k - 7:k + 1])
            assert s.x == x[k] and s.v_class == 3 and s.d_class == 1


def test_label_encoding():
    assert encode_labels(600, "P") == (2, 0)
    assert encode_labels(400.0, "N") == (0, 1)
    assert encode_labels(800, "N", speeds=[800, 400]) == (1, 1)
    with pytest.raises(ValueError):
        encode_labels(650, "P")
    with pytest.raises(ValueError):
        encode_labels(600, "Q")


# ---------------------------------------------------------------- split

def test_split_sizes_and_disjointness():
    strata = np.repeat(np.arange(5), 20)
    train, test = stratified_split(strata, 0.9, seed=1)
    assert len(train) == 90 and len(test) == 10
    assert not set(train) & set(test)
    assert sorted(np.r_[train, test]) == list(range(100))


def test_split_represents_every_class():
    rng = np.random.default_rng(2)
    v = rng.integers(0, 5, 1000)
    d = rng.integers(0, 2, 1000)
    strata = np.stack([v, d], axis=1)
    train, test = stratified_split(strata, 0.9, seed=3)
    assert len(test) == 100
    for part in (train, test):
        assert len({tuple(r) for r in strata[part]}) == 10
    # proportions follow the population within one sample per class
    for key in {tuple(r) for r in strata}:
        n_all = np.all(strata == key, axis=1).sum()
        n_test = np.all(strata[test] == key, axis=1).sum()
        assert abs(n_test - 0.1 * n_all) <= 1


def test_split_is_seeded():
    strata = np.repeat(np.arange(4), 7)
    a = stratified_split(strata, 0.8, seed=9)
    b = stratified_split(strata, 0.8, seed=9)
    c = stratified_split(strata, 0.8, seed=10)
    np.testing.assert_array_equal(a[1], b[1])
    assert not np.array_equal(a[1], c[1])


def test_split_rejects_singleton_class_and_bad_ratio():
    with pytest.raises(ValueError, match="fewer than 2"):
        stratified_split(np.array([0, 0, 1]))
    with pytest.raises(ValueError):
        stratified_split(np.array([0, 0]), ratio=1.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(2, 30), min_size=1, max_size=6), st.floats(0.5, 0.95))
def test_split_property(counts, ratio):
    strata = np.repeat(np.arange(len(counts)), counts)
    train, test = stratified_split(strata, ratio)
    assert len(train) + len(test) == len(strata)
    assert set(strata[train]) == set(strata[test]) == set(range(len(counts)))


# ---------------------------------------------------------------- full build

@pytest.fixture(scope="module")
def small_dataset():
    traces = generate_corpus(scenario_grid(offsets=[250.0]), repeats=2, seed=0)
    return build_dataset(traces, sl=16, stride=8, seed=0)


def test_build_dataset_shapes_and_ranges(small_dataset):
    ds = small_dataset
    assert ds.windows.shape[1:] == (16, 3)
    assert np.all(np.abs(ds.x) <= 1.0)
    assert set(ds.v_class) == set(range(5)) and set(ds.d_class) == {0, 1}
    assert len(ds.train_idx) + len(ds.test_idx) == len(ds)
    # standardisation statistics come from training windows only
    z = ds.inputs(ds.train_idx).reshape(-1, 3)
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(z.std(axis=0), 1.0, atol=1e-10)


def test_build_dataset_debiases_against_still_water(small_dataset):
    # inside the clip range the wake is tens of Pa, far below the ~980 Pa bias
    assert np.abs(small_dataset.windows).max() < 100.0


def test_dataset_save_load_round_trip(small_dataset, tmp_path):
    small_dataset.save(tmp_path / "d.npz")
    back = LabeledDataset.load(tmp_path / "d.npz")
    for name in ("windows", "x", "v_class", "d_class", "train_idx", "test_idx", "mean", "std"):
        np.testing.assert_array_equal(getattr(back, name), getattr(small_dataset, name))
    assert back.meta == small_dataset.meta and back.split_seed == 0


def test_build_dataset_rejects_all_short_traces():
    traces = generate_corpus(scenario_grid(offsets=[250.0], speeds=[800.0], directions=["P"]),
                             repeats=2)
    with pytest.raises(ValueError, match="long enough"):
        with pytest.warns(RuntimeWarning):
            build_dataset(traces, sl=1000, speeds=[800.0])
