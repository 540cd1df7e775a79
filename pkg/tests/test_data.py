import numpy as np
import pytest

from sigflow.data import (
    DEFAULT_AR_COEFFS,
    WindowSpec,
    ar_dataset,
    bucket_mean,
    companion_radius,
    leak_free_stride,
    load_csv,
    make_windows,
    simulate_ar,
    split_and_normalize,
    write_csv,
)
from sigflow.errors import DataError
from sigflow.signature import Stream


def series(n, d=1, seed=0):
    return Stream(np.arange(n, dtype=float), np.random.default_rng(seed).standard_normal((n, d)))


def test_ar_zero_coefficients_and_noise():
    s = simulate_ar([0.0] * 3, 0.0, 50, 10, 0)
    assert s.length == 50 and np.all(s.values == 0.0)
    np.testing.assert_array_equal(s.times, np.arange(50.0))


def test_ar_determinism():
    a, b = simulate_ar(seed=4), simulate_ar(seed=4)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, simulate_ar(seed=5).values)


def test_ar1_stationary_variance():
    s = simulate_ar([0.5], 1.0, 100_000, 1000, 1)
    assert abs(s.values.var() / (1.0 / (1 - 0.25)) - 1.0) < 0.05


def test_ar_recursion_by_hand():
    coeffs = [0.3, -0.1]
    s = simulate_ar(coeffs, 1.0, 20, 0, 2)
    eps = np.random.default_rng(2).standard_normal(20)
    x = [0.0, 0.0]
    for e in eps:
        x.append(coeffs[0] * x[-1] + coeffs[1] * x[-2] + e)
    np.testing.assert_allclose(s.values[:, 0], x[2:], rtol=1e-14, atol=1e-14)


def test_ar_nonstationary_rejected():
    assert companion_radius(DEFAULT_AR_COEFFS) < 1.0
    with pytest.raises(DataError, match="stationary"):
        simulate_ar([1.1], 1.0, 10)
    with pytest.raises(DataError, match="stationary"):
        simulate_ar([0.5, 0.5], 1.0, 10)


def test_csv_round_trip(tmp_path):
    s = Stream([0.0, 0.5, 1.25], np.random.default_rng(0).standard_normal((3, 2)) * 1e3)
    write_csv(s, tmp_path / "a.csv")
    back = load_csv(tmp_path / "a.csv")
    np.testing.assert_array_equal(back.times, s.times)
    np.testing.assert_array_equal(back.values, s.values)


def test_csv_errors(tmp_path):
    (tmp_path / "dup.csv").write_text("t,v1\n0,1\n1,2\n1,3\n")
    with pytest.raises(DataError, match="row 4"):
        load_csv(tmp_path / "dup.csv")
    (tmp_path / "bad.csv").write_text("t,v1\n0,1\n1,abc\n")
    with pytest.raises(DataError, match="row 3, column 2"):
        load_csv(tmp_path / "bad.csv")
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(DataError, match="empty"):
        load_csv(tmp_path / "empty.csv")
    with pytest.raises(DataError, match="no such file"):
        load_csv(tmp_path / "missing.csv")


def test_csv_log_transform(tmp_path):
    (tmp_path / "p.csv").write_text("t,price\n0,1\n1,2.718281828459045\n2,10\n")
    s = load_csv(tmp_path / "p.csv", log_transform=True)
    np.testing.assert_allclose(s.values[:, 0], [0.0, 1.0, np.log(10.0)], atol=1e-15)
    (tmp_path / "n.csv").write_text("t,price\n0,1\n1,-2\n")
    with pytest.raises(DataError):
        load_csv(tmp_path / "n.csv", log_transform=True)


@pytest.mark.parametrize("length,count", [(100, 1), (101, 2), (150, 51)])
def test_window_counts(length, count):
    pairs = make_windows(series(length), WindowSpec(60, 40, 1))
    assert len(pairs) == count
    for x, y in pairs:
        assert x.length == 60 and y.length == 40
        assert y.times[0] > x.times[-1]


def test_window_contents_and_stride():
    s = series(20)
    pairs = make_windows(s, WindowSpec(3, 2, 4))
    assert len(pairs) == (20 - 5) // 4 + 1
    x, y = pairs[1]
    np.testing.assert_array_equal(x.values, s.values[4:7])
    np.testing.assert_array_equal(y.values, s.values[7:9])
    with pytest.raises(DataError):
        make_windows(series(4), WindowSpec(3, 2))
    with pytest.raises(DataError):
        WindowSpec(0, 1)


def test_split_all_train():
    pairs = make_windows(series(30), WindowSpec(3, 2))
    ds = split_and_normalize(pairs, (1.0, 0.0, 0.0))
    assert len(ds.train) == len(pairs) and not ds.val and not ds.test


def test_split_normalization_statistics():
    pairs = make_windows(series(300, d=2, seed=3), WindowSpec(5, 3))
    ds = split_and_normalize(pairs, (0.6, 0.2, 0.2))
    pool = np.concatenate([x.values for x, _ in ds.train])
    np.testing.assert_allclose(pool.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(pool.std(axis=0), 1.0, atol=1e-10)
    raw = pairs[0][1].values
    np.testing.assert_allclose(ds.denormalize(ds.train[0][1]).values, raw, atol=1e-12)


def test_chronological_split_order():
    pairs = make_windows(series(200), WindowSpec(5, 3))
    ds = split_and_normalize(pairs, (0.7, 0.15, 0.15))
    last_train = max(x.times[0] for x, _ in ds.train)
    assert all(x.times[0] > last_train for x, _ in ds.val + ds.test)
    assert all(x.times[0] > max(v[0].times[0] for v in ds.val) for x, _ in ds.test)


def test_leak_free_windows():
    spec = WindowSpec(5, 3)
    stride = leak_free_stride(spec)
    pairs = make_windows(series(400), WindowSpec(5, 3, stride))
    ds = split_and_normalize(pairs, (0.7, 0.15, 0.15))
    stamps = lambda split: {t for x, y in split for t in np.concatenate([x.times, y.times])}
    assert not stamps(ds.train) & stamps(ds.test)


def test_split_errors():
    pairs = make_windows(series(12), WindowSpec(3, 2))
    with pytest.raises(DataError, match="zero pairs"):
        split_and_normalize(pairs[:2], (0.5, 0.25, 0.25))
    with pytest.raises(DataError):
        split_and_normalize(pairs, (0.5, 0.5, 0.5))


def test_bucket_mean():
    s = Stream([0.0, 10.0, 20.0, 35.0, 95.0], [[1.0], [3.0], [5.0], [7.0], [9.0]])
    b = bucket_mean(s, 30.0)
    np.testing.assert_array_equal(b.times, [0.0, 30.0, 90.0])
    np.testing.assert_array_equal(b.values[:, 0], [3.0, 7.0, 9.0])


def test_ar_dataset_manifest():
    ds = ar_dataset(100, WindowSpec(20, 10), seed=2)
    assert len(ds.train) + len(ds.val) + len(ds.test) == 100
    lines = ds.manifest_lines()
    assert "n_train = 80" in lines
    assert any(line.startswith("norm_mean = ") for line in lines)
    assert ds.info["source"] == "ar"
