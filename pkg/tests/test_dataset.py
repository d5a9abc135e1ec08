import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualspace.dataset import (
    AUDIO_FILE,
    LABELS_FILE,
    MANIFEST,
    VISUAL_FILE,
    Dataset,
    load_dataset,
    one_hot,
    pool_frames,
    save_dataset,
    split,
    split_indices,
    synth_generate,
)
from dualspace.errors import (
    DimensionMismatchError,
    EmptyInputError,
    LabelRangeError,
    MissingFileError,
    NonFiniteDataError,
    SizeMismatchError,
    UnsplittableCategoryError,
    ValidationError,
)
from dualspace.retrieval import evaluate_orders, rank_all, similarity_matrix
from oracles import loop_pool

# Same-modality raw-feature cosine MAP on synth_generate(10, 50, noise=0.5, seed=7),
# computed once with the brute-force ranking/AP oracle in oracles.py.
RAW_AUDIO_MAP = 0.9084309229909073
RAW_VISUAL_MAP = 0.9149914260248142


def small_dataset(rng, n=12, d_a=3, d_v=5, c=3):
    return Dataset(rng.standard_normal((n, d_a)), rng.standard_normal((n, d_v)),
                   np.arange(n) % c, c)


# -- pooling and labels -------------------------------------------------------

def test_pool_frames_mean():
    np.testing.assert_array_equal(pool_frames([[1, 3], [3, 5]]), [2, 4])


def test_pool_single_frame():
    np.testing.assert_array_equal(pool_frames([[7, 7, 7]]), [7, 7, 7])


def test_pool_matches_loop(rng):
    frames = rng.standard_normal((20, 128))
    np.testing.assert_allclose(pool_frames(frames), loop_pool(frames.tolist()), atol=1e-12)


def test_pool_repeated_frames_is_exact(rng):
    frames = rng.integers(-8, 8, size=(6, 4)).astype(float)
    np.testing.assert_array_equal(pool_frames(np.vstack([frames] * 4)), pool_frames(frames))


def test_pool_empty():
    with pytest.raises(EmptyInputError):
        pool_frames(np.zeros((0, 3)))


def test_one_hot():
    assert one_hot(2, 4).tolist() == [0, 0, 1, 0]
    assert one_hot(0, 1).tolist() == [1]
    with pytest.raises(LabelRangeError):
        one_hot(4, 4)


@given(c=st.integers(1, 30), data=st.data())
def test_one_hot_sums_to_one(c, data):
    label = data.draw(st.integers(0, c - 1))
    assert one_hot(label, c).sum() == 1.0


# -- dataset type -------------------------------------------------------------

def test_dataset_validation(rng):
    with pytest.raises(DimensionMismatchError):
        Dataset(np.zeros((3, 2)), np.zeros((4, 2)), [0, 0, 0], 1)
    with pytest.raises(LabelRangeError) as err:
        Dataset(np.zeros((3, 2)), np.zeros((3, 2)), [0, 2, 1], 2)
    assert err.value.row == 1
    with pytest.raises(EmptyInputError):
        Dataset(np.zeros((0, 2)), np.zeros((0, 2)), [], 2)
    with pytest.raises(ValidationError):
        small_dataset(rng).with_split([0, 1], [1, 2])


def test_dataset_is_read_only(rng):
    ds = small_dataset(rng)
    with pytest.raises(ValueError):
        ds.audio[0, 0] = 1.0


# -- storage ------------------------------------------------------------------

def test_roundtrip_with_split_and_names(tmp_path, rng):
    ds = Dataset(rng.standard_normal((6, 2)), rng.standard_normal((6, 3)), [0, 1, 2, 0, 1, 2], 3,
                 names=["dog", "car", "rain"]).with_split([0, 1, 2], [3, 4, 5])
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert back.names == ["dog", "car", "rain"]
    assert back.split == {"train": [0, 1, 2], "test": [3, 4, 5]}
    np.testing.assert_array_equal(back.audio, ds.audio.astype(np.float32))


def test_file_layout_is_raw_little_endian(tmp_path):
    ds = Dataset([[1.0, -2.0]], [[0.5]], [3], 4)
    save_dataset(ds, tmp_path)
    assert (tmp_path / AUDIO_FILE).read_bytes() == np.array([1.0, -2.0], "<f4").tobytes()
    assert (tmp_path / VISUAL_FILE).read_bytes() == np.array([0.5], "<f4").tobytes()
    assert (tmp_path / LABELS_FILE).read_bytes() == b"\x03\x00\x00\x00"
    manifest = json.loads((tmp_path / MANIFEST).read_text())
    assert manifest == {"format_version": 1, "n": 1, "d_a": 2, "d_v": 1, "c": 4}


def test_truncated_payload_reports_sizes(tmp_path, rng):
    save_dataset(small_dataset(rng), tmp_path)
    raw = (tmp_path / AUDIO_FILE).read_bytes()
    (tmp_path / AUDIO_FILE).write_bytes(raw[:-4])
    with pytest.raises(SizeMismatchError) as err:
        load_dataset(tmp_path)
    assert (err.value.expected, err.value.found) == (len(raw), len(raw) - 4)
    assert str(len(raw)) in str(err.value) and str(len(raw) - 4) in str(err.value)


def test_label_equal_to_c_names_row(tmp_path, rng):
    save_dataset(small_dataset(rng), tmp_path)
    labels = np.frombuffer((tmp_path / LABELS_FILE).read_bytes(), "<u4").copy()
    labels[7] = 3
    (tmp_path / LABELS_FILE).write_bytes(labels.tobytes())
    with pytest.raises(LabelRangeError) as err:
        load_dataset(tmp_path)
    assert err.value.row == 7


def test_non_finite_payload(tmp_path, rng):
    save_dataset(small_dataset(rng), tmp_path)
    vis = np.frombuffer((tmp_path / VISUAL_FILE).read_bytes(), "<f4").copy()
    vis[11] = np.inf
    (tmp_path / VISUAL_FILE).write_bytes(vis.tobytes())
    with pytest.raises(NonFiniteDataError, match="row 2"):
        load_dataset(tmp_path)


def test_missing_file(tmp_path, rng):
    save_dataset(small_dataset(rng), tmp_path)
    (tmp_path / LABELS_FILE).unlink()
    with pytest.raises(MissingFileError):
        load_dataset(tmp_path)


def test_error_kinds_are_distinct():
    kinds = {MissingFileError, SizeMismatchError, NonFiniteDataError, LabelRangeError}
    for a in kinds:
        for b in kinds - {a}:
            assert not issubclass(a, b)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 20), d_a=st.integers(0, 6), d_v=st.integers(1, 6),
       c=st.integers(1, 5), seed=st.integers(0, 2**32 - 1))
def test_roundtrip_property(tmp_path_factory, n, d_a, d_v, c, seed):
    rng = np.random.default_rng(seed)
    ds = Dataset(rng.standard_normal((n, d_a)) * 1e3, rng.standard_normal((n, d_v)),
                 rng.integers(0, c, n), c)
    path = tmp_path_factory.mktemp("rt")
    save_dataset(ds, path)
    back = load_dataset(path)
    np.testing.assert_array_equal(back.audio, ds.audio.astype(np.float32).astype(np.float64))
    np.testing.assert_array_equal(back.visual, ds.visual.astype(np.float32).astype(np.float64))
    np.testing.assert_array_equal(back.labels, ds.labels)


# -- generation ---------------------------------------------------------------

def test_synth_deterministic_and_balanced():
    a = synth_generate(4, 6, 5, 7, seed=3)
    b = synth_generate(4, 6, 5, 7, seed=3)
    assert a.same_as(b)
    assert np.bincount(a.labels).tolist() == [6, 6, 6, 6]
    assert (a.d_a, a.d_v, a.n) == (5, 7, 24)
    assert not a.same_as(synth_generate(4, 6, 5, 7, seed=4))


def test_synth_noiseless_classes_collapse():
    ds = synth_generate(5, 8, 6, 9, noise=0.0, cross_noise=0.0, seed=1)
    for cat in range(5):
        rows = ds.audio[ds.labels == cat]
        np.testing.assert_array_equal(rows, np.broadcast_to(rows[0], rows.shape))
    # nearest-centroid (cosine to the class mean) retrieval is perfect
    centroids = np.stack([ds.audio[ds.labels == k].mean(axis=0) for k in range(5)])
    assert np.array_equal(np.argmax(similarity_matrix(ds.audio, centroids), axis=1), ds.labels)
    sim = similarity_matrix(ds.audio, ds.audio)
    report = evaluate_orders(rank_all(sim), rank_all(sim.T), ds.labels)
    assert report.map_avg == 1.0


def test_synth_rejects_bad_counts():
    with pytest.raises(ValidationError):
        synth_generate(c=0)
    with pytest.raises(ValidationError):
        synth_generate(noise=-1.0)


def test_synth_raw_feature_map_pinned():
    ds = synth_generate(10, 50, 128, 1024, 0.5, 0.3, seed=7)
    for m, pinned in ((ds.audio, RAW_AUDIO_MAP), (ds.visual, RAW_VISUAL_MAP)):
        order = rank_all(similarity_matrix(m, m))
        assert evaluate_orders(order, order, ds.labels).map_a2v == pytest.approx(pinned, abs=1e-12)


# -- splitting ----------------------------------------------------------------

def test_split_eighty_twenty():
    ds = synth_generate(10, 100, 4, 4, seed=0)
    train, test = split(ds, 0.8, seed=5)
    assert np.bincount(train.labels).tolist() == [80] * 10
    assert np.bincount(test.labels).tolist() == [20] * 10


def test_split_half_of_two():
    ds = synth_generate(3, 2, 2, 2, seed=0)
    train, test = split(ds, 0.5, seed=0)
    assert np.bincount(train.labels).tolist() == [1, 1, 1]
    assert np.bincount(test.labels).tolist() == [1, 1, 1]


def test_split_unsplittable():
    ds = Dataset(np.zeros((3, 1)), np.zeros((3, 1)), [0, 0, 1], 2)
    with pytest.raises(UnsplittableCategoryError):
        split(ds, 0.5)
    with pytest.raises(ValidationError):
        split(synth_generate(2, 4, 2, 2), 1.0)


@settings(max_examples=40, deadline=None)
@given(sizes=st.lists(st.integers(2, 15), min_size=1, max_size=6),
       frac=st.floats(0.05, 0.95), seed=st.integers(0, 1000))
def test_split_is_stratified_partition(sizes, frac, seed):
    labels = np.repeat(np.arange(len(sizes)), sizes)
    ds = Dataset(np.zeros((labels.size, 1)), np.zeros((labels.size, 1)), labels, len(sizes))
    tr, te = split_indices(ds, frac, seed)
    assert np.intersect1d(tr, te).size == 0
    np.testing.assert_array_equal(np.sort(np.concatenate([tr, te])), np.arange(labels.size))
    for cat, m in enumerate(sizes):
        assert abs(np.sum(labels[tr] == cat) - frac * m) <= 1
    again = split_indices(ds, frac, seed)
    assert np.array_equal(again[0], tr) and np.array_equal(again[1], te)
