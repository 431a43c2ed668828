import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedks import datastore as ds
from fedks.errors import DegenerateDataError, FormatError, InvalidArgument
from fedks.kssolver import KSParams, Trajectory


def random_splits(rng, rows=(7, 3, 5), cols=4):
    train, val, test = (rng.standard_normal((r, cols)) for r in rows)
    return ds.DatasetSplits(train, val, test, ds.fit_scaler(train))


# -- split ------------------------------------------------------------------------


def test_split_counts_full_protocol():
    X = np.zeros((10_000, 2))
    train, val = ds.split(X, 0.8)
    assert train.shape[0] == 8_000 and val.shape[0] == 2_000


def test_split_is_temporal_prefix(rng):
    X = rng.standard_normal((11, 3))
    train, val = ds.split(X, 0.5)
    np.testing.assert_array_equal(np.vstack([train, val]), X)
    assert train.shape[0] == 5


def test_split_fraction_one():
    X = np.arange(12.0).reshape(6, 2)
    train, val = ds.split(X, 1.0)
    assert train.shape == (6, 2) and val.shape == (0, 2)


def test_split_accepts_trajectory():
    traj = Trajectory(np.ones((10, 4)), np.arange(10.0), KSParams())
    train, val = ds.split(traj, 0.8)
    assert (len(train), len(val)) == (8, 2)


@pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5])
def test_split_rejects_bad_fraction(fraction):
    with pytest.raises(InvalidArgument):
        ds.split(np.ones((4, 2)), fraction)


def test_split_rejects_empty():
    with pytest.raises(InvalidArgument):
        ds.split(np.zeros((0, 4)))


@given(st.integers(1, 300), st.floats(0.01, 1.0))
def test_split_conserves_rows(m, fraction):
    train, val = ds.split(np.zeros((m, 1)), fraction)
    assert len(train) + len(val) == m
    assert len(train) == int(np.floor(fraction * m + 1e-9))


# -- partition --------------------------------------------------------------------------


def test_partition_ten_equal_shards():
    shards = ds.partition(np.zeros((8_000, 2)), 10)
    assert [s.n_k for s in shards] == [800] * 10
    assert [s.client_id for s in shards] == list(range(10))


@pytest.mark.parametrize("scheme", ds.SCHEMES)
def test_partition_single_client(scheme, rng):
    X = rng.standard_normal((9, 3))
    (only,) = ds.partition(X, 1, scheme, seed=4)
    np.testing.assert_array_equal(only.data, X)


def test_partition_contiguous_blocks():
    X = np.arange(10.0)[:, None]
    shards = ds.partition(X, 3, "contiguous")
    assert [s.data[:, 0].tolist() for s in shards] == [[0, 1, 2, 3], [4, 5, 6], [7, 8, 9]]


def test_partition_strided_round_robin():
    X = np.arange(7.0)[:, None]
    shards = ds.partition(X, 3, "strided")
    assert [s.data[:, 0].tolist() for s in shards] == [[0, 3, 6], [1, 4], [2, 5]]


def test_partition_strided_seeded_rotation_is_reproducible():
    X = np.arange(50.0)[:, None]
    a = ds.partition(X, 7, "strided", seed=11)
    b = ds.partition(X, 7, "strided", seed=11)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.data, y.data)


def test_partition_errors():
    with pytest.raises(InvalidArgument):
        ds.partition(np.zeros((3, 2)), 4)
    with pytest.raises(InvalidArgument):
        ds.partition(np.zeros((3, 2)), 0)
    with pytest.raises(InvalidArgument):
        ds.partition(np.zeros((3, 2)), 2, "random")


@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 120),
    st.integers(1, 120),
    st.sampled_from(ds.SCHEMES),
    st.one_of(st.none(), st.integers(0, 2**32 - 1)),
    st.integers(0, 2**32 - 1),
)
def test_partition_conservation_and_balance(rows, K, scheme, seed, data_seed):
    K = min(K, rows)
    X = np.random.default_rng(data_seed).standard_normal((rows, 3))
    shards = ds.partition(X, K, scheme, seed)
    assert len(shards) == K
    sizes = [s.n_k for s in shards]
    assert max(sizes) - min(sizes) <= 1 and min(sizes) >= 1
    union = np.vstack([s.data for s in shards])
    # multiset equality via lexicographically sorted rows
    np.testing.assert_array_equal(union[np.lexsort(union.T)], X[np.lexsort(X.T)])


# -- scaler -------------------------------------------------------------------------------


def test_scaler_standardizes_train(rng):
    X = 3.0 + 2.0 * rng.standard_normal((200, 16))
    s = ds.fit_scaler(X)
    Z = s.apply(X)
    assert abs(Z.mean()) < 1e-10 and abs(Z.std() - 1) < 1e-10


def test_scaler_on_ks_train_split(desk_splits):
    Z = desk_splits.scaler.apply(desk_splits.train)
    assert abs(Z.mean()) < 1e-10 and abs(Z.std() - 1) < 1e-10


def test_scaler_constant_data():
    with pytest.raises(DegenerateDataError):
        ds.fit_scaler(np.full((5, 4), 2.0))
    with pytest.raises(DegenerateDataError):
        ds.Scaler(0.0, 0.0)


def test_scaler_module_functions(rng):
    X = rng.standard_normal((4, 4))
    s = ds.Scaler(0.5, 2.0)
    np.testing.assert_array_equal(ds.apply(s, X), (X - 0.5) / 2.0)
    np.testing.assert_array_equal(ds.invert(s, ds.apply(s, X)), s.invert(s.apply(X)))


@settings(max_examples=100)
@given(
    arrays(np.float64, (3, 5), elements=st.floats(-1e3, 1e3)),
    st.floats(-10, 10),
    st.floats(0.1, 10),
)
def test_scaler_round_trip(X, mean, std):
    s = ds.Scaler(mean, std)
    assert np.all(np.abs(s.invert(s.apply(X)) - X) <= 1e-12 * np.maximum(1.0, np.abs(X)))


# -- binary format ---------------------------------------------------------------------------


def test_round_trip_bit_exact(tmp_path, rng):
    sp = random_splits(rng)
    path = tmp_path / "d.ksds"
    ds.save_dataset(path, sp)
    back = ds.load_dataset(path)
    for name in ("train", "validation", "test"):
        a, b = getattr(sp, name), getattr(back, name)
        assert a.shape == b.shape and a.tobytes() == b.tobytes()
    assert back.scaler == sp.scaler


def test_file_size_arithmetic(tmp_path, rng):
    sp = random_splits(rng, rows=(10, 4, 6), cols=8)
    path = tmp_path / "d.ksds"
    ds.save_dataset(path, sp)
    # 4 magic + 2 version + 2 reserved + 3 * 16 block headers + 16 scaler
    assert ds.HEADER_BYTES == 72
    assert path.stat().st_size == 72 + 8 * (10 + 4 + 6) * 8


def test_header_layout(rng):
    raw = ds.dumps(random_splits(rng, rows=(2, 1, 1), cols=3))
    magic, version, reserved = struct.unpack_from("<4sHH", raw, 0)
    assert (magic, version, reserved) == (b"KSDS", 1, 0)
    assert struct.unpack_from("<QQ", raw, 8) == (2, 3)


def test_empty_validation_round_trips(rng):
    sp = random_splits(rng, rows=(5, 0, 2))
    back = ds.loads(ds.dumps(sp))
    assert back.validation.shape == (0, 4)


def test_corrupt_magic_reports_offset_zero(rng):
    raw = bytearray(ds.dumps(random_splits(rng)))
    raw[0] ^= 0xFF
    with pytest.raises(FormatError) as info:
        ds.loads(bytes(raw))
    assert info.value.offset == 0
    assert "offset 0" in str(info.value)


def test_version_mismatch(rng):
    raw = bytearray(ds.dumps(random_splits(rng)))
    raw[4] = 9
    with pytest.raises(FormatError) as info:
        ds.loads(bytes(raw))
    assert info.value.offset == 4


@pytest.mark.parametrize("cut", [3, 20, 100, 1])
def test_truncation(cut, rng):
    raw = ds.dumps(random_splits(rng))
    with pytest.raises(FormatError):
        ds.loads(raw[:-cut])


def test_trailing_bytes(rng):
    raw = ds.dumps(random_splits(rng))
    with pytest.raises(FormatError) as info:
        ds.loads(raw + b"\0")
    assert info.value.offset == len(raw)


def test_client_shards_use_scaled_train(rng):
    sp = random_splits(rng, rows=(20, 5, 5))
    shards = ds.client_shards(sp, 4)
    np.testing.assert_array_equal(np.vstack([s.data for s in shards]), sp.scaler.apply(sp.train))


def test_error_field_matrix_round_trip(tmp_path, rng):
    X = np.abs(rng.standard_normal((6, 64)))
    path = tmp_path / "e.ksef"
    ds.save_matrix(path, X)
    assert path.read_bytes()[:4] == b"KSEF"
    assert ds.load_matrix(path).tobytes() == X.tobytes()
    raw = bytearray(path.read_bytes())
    raw[1] = 0
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        ds.load_matrix(path)


def test_shard_requires_rows():
    with pytest.raises(InvalidArgument):
        ds.ClientShard(0, np.zeros((0, 3)))
