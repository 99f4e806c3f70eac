import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clrnet.data import (
    ClassSplit,
    Compose,
    PixelPermute,
    Rotate,
    TaskSequenceSpec,
    TaskSpec,
    generator_from_dict,
    load_idx,
    load_manifest,
    make_tasks,
    normalize,
    read_idx,
    read_pnm,
    stratified_indices,
    write_idx,
    write_pnm,
)
from clrnet.data.idx import IMAGES_MAGIC, LABELS_MAGIC
from clrnet.data.synthetic import generate, write_synthetic_idx
from clrnet.data.tasks import permute_pixels
from clrnet.errors import DataError, FormatError, SpecError

from conftest import make_dataset


# --- IDX -------------------------------------------------------------------------

def test_idx_round_trip_and_header_bytes(tmp_path, rng):
    imgs = rng.integers(0, 256, (5, 4, 3), dtype=np.uint8)
    write_idx(tmp_path / "i", imgs)
    raw = (tmp_path / "i").read_bytes()
    assert raw[:4] == b"\x00\x00\x08\x03" and struct.unpack(">3I", raw[4:16]) == (5, 4, 3)
    np.testing.assert_array_equal(read_idx(tmp_path / "i", IMAGES_MAGIC), imgs)


def test_idx_gzip_is_transparent(tmp_path):
    write_idx(tmp_path / "l", np.arange(7, dtype=np.uint8))
    (tmp_path / "l.gz").write_bytes(gzip.compress((tmp_path / "l").read_bytes()))
    np.testing.assert_array_equal(read_idx(tmp_path / "l.gz", LABELS_MAGIC), np.arange(7))


def test_idx_errors(tmp_path):
    write_idx(tmp_path / "l", np.arange(7, dtype=np.uint8))
    with pytest.raises(FormatError):
        read_idx(tmp_path / "l", IMAGES_MAGIC)
    (tmp_path / "t").write_bytes((tmp_path / "l").read_bytes()[:-2])
    with pytest.raises(FormatError):
        read_idx(tmp_path / "t", LABELS_MAGIC)
    with pytest.raises(FormatError):
        read_idx(tmp_path / "missing", LABELS_MAGIC)


def test_load_idx_scaling_and_count_mismatch(tmp_path):
    imgs = np.zeros((3, 2, 2), np.uint8)
    imgs[0] = 255
    write_idx(tmp_path / "i", imgs)
    write_idx(tmp_path / "l", np.array([0, 1, 2], np.uint8))
    ds = load_idx(tmp_path / "i", tmp_path / "l", normalization=([0.0], [1.0]))
    assert ds.image_shape == (1, 2, 2) and len(ds) == 3
    np.testing.assert_allclose(ds.images[0], 1.0)
    np.testing.assert_allclose(ds.images[1], 0.0)
    write_idx(tmp_path / "l2", np.array([0, 1], np.uint8))
    with pytest.raises(FormatError):
        load_idx(tmp_path / "i", tmp_path / "l2")


def test_label_beyond_class_set_is_data_error(tmp_path):
    write_idx(tmp_path / "i", np.zeros((2, 2, 2), np.uint8))
    write_idx(tmp_path / "l", np.array([3, 10], np.uint8))
    with pytest.raises(DataError):
        load_idx(tmp_path / "i", tmp_path / "l", class_names=[str(i) for i in range(10)])
    ds = make_dataset(4, n_classes=4)
    with pytest.raises(DataError):
        TaskSpec(0, "t", ds, ds.subset([0]), num_classes=3)


def test_synthetic_idx_files_load(tmp_path):
    paths = write_synthetic_idx(tmp_path, "digits", 20, 10, seed=2)
    ds = load_idx(paths["train_images"], paths["train_labels"])
    assert ds.image_shape == (1, 28, 28) and len(ds) == 20
    assert np.bincount(ds.labels).tolist() == [2] * 10
    a, _ = generate("clothing", 5, 3)
    b, _ = generate("clothing", 5, 3)
    np.testing.assert_array_equal(a, b)


# --- normalization ---------------------------------------------------------------

def test_normalize_defaults_to_dataset_stats(rng):
    raw = rng.uniform(0, 1, (10, 3, 4, 4)).astype(np.float32)
    out, (mean, std) = normalize(raw)
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-5)
    np.testing.assert_allclose(out.std(axis=(0, 2, 3)), 1, atol=1e-4)
    assert mean.shape == (3,)


# --- manifest / PNM --------------------------------------------------------------

def _manifest(tmp_path, rows, classes=("cat", "dog")):
    (tmp_path / "classes.txt").write_text("\n".join(classes) + "\n")
    (tmp_path / "manifest.csv").write_text("path,label\n" + "".join(f"{p},{l}\n" for p, l in rows))


def test_pnm_round_trip_and_16_bit(tmp_path, rng):
    gray = rng.integers(0, 256, (5, 7), dtype=np.uint8)
    write_pnm(tmp_path / "a.pgm", gray)
    np.testing.assert_allclose(read_pnm(tmp_path / "a.pgm")[0], gray / 255, rtol=1e-6)
    rgb = rng.integers(0, 256, (3, 4, 6), dtype=np.uint8)
    write_pnm(tmp_path / "b.ppm", rgb)
    np.testing.assert_allclose(read_pnm(tmp_path / "b.ppm"), rgb / 255, rtol=1e-6)
    (tmp_path / "c.pgm").write_bytes(b"P5\n# comment\n2 1\n1000\n" + np.array([0, 1000], ">u2").tobytes())
    np.testing.assert_allclose(read_pnm(tmp_path / "c.pgm")[0], [[0, 1]])


def test_manifest_rows_duplicates_and_resize(tmp_path, rng):
    write_pnm(tmp_path / "a.pgm", rng.integers(0, 256, (8, 10), dtype=np.uint8))
    write_pnm(tmp_path / "b.ppm", rng.integers(0, 256, (3, 12, 12), dtype=np.uint8))
    _manifest(tmp_path, [("a.pgm", "cat"), ("b.ppm", "dog"), ("a.pgm", "cat"), ("b.ppm", "dog")])
    ds = load_manifest(tmp_path, shape=(3, 6, 6))
    assert len(ds) == 4 and ds.image_shape == (3, 6, 6)
    assert ds.labels.tolist() == [0, 1, 0, 1]
    np.testing.assert_array_equal(ds.images[0], ds.images[2])


def test_manifest_errors(tmp_path, rng):
    write_pnm(tmp_path / "a.pgm", rng.integers(0, 256, (4, 4), dtype=np.uint8))
    _manifest(tmp_path, [("a.pgm", "bird")])
    with pytest.raises(DataError):
        load_manifest(tmp_path)
    _manifest(tmp_path, [("gone.pgm", "cat")])
    with pytest.raises(FormatError):
        load_manifest(tmp_path)


# --- stratification --------------------------------------------------------------

@given(st.integers(1, 60), st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_stratified_counts(size, seed):
    labels = np.repeat(np.arange(5), 20)
    idx = stratified_indices(labels, size, np.random.Generator(np.random.PCG64(seed)))
    counts = np.bincount(labels[idx], minlength=5)
    base, extra = divmod(size, 5)
    assert counts.tolist() == [base + (1 if c < extra else 0) for c in range(5)]
    assert (np.diff(idx) > 0).all()


# --- task generators -------------------------------------------------------------

@pytest.fixture
def base():
    return make_dataset(100, seed=0, name="base"), make_dataset(50, seed=1, name="base")


def test_class_split_relabels_and_conserves(base):
    tasks = make_tasks(TaskSequenceSpec(ClassSplit(((0, 1), (2, 3), (4, 5), (6, 7), (8, 9)))), base, seed=0)
    assert len(tasks) == 5 and all(t.num_classes == 2 for t in tasks)
    assert sum(len(t.train) for t in tasks) == 100
    assert all(set(t.train.labels.tolist()) == {0, 1} for t in tasks)
    assert all(not np.intersect1d(t.train.ids, t.test.ids).size for t in tasks)


def test_overlapping_groups_rejected(base):
    with pytest.raises(SpecError):
        make_tasks(TaskSequenceSpec(ClassSplit(((0, 1), (1, 2)))), base, seed=0)


def test_pixel_permute_identity_and_inverse(base):
    tasks = make_tasks(TaskSequenceSpec(PixelPermute(3, seed=4)), base, seed=0)
    np.testing.assert_array_equal(tasks[0].train.images, base[0].images)
    perm = np.random.Generator(np.random.PCG64(4)).permutation(28 * 28)
    np.testing.assert_array_equal(tasks[1].train.images, permute_pixels(base[0].images, perm))
    np.testing.assert_array_equal(permute_pixels(tasks[1].train.images, np.argsort(perm)), base[0].images)


def test_rotate_zero_is_bitwise_base(base):
    tasks = make_tasks(TaskSequenceSpec(Rotate((0.0, 90.0))), base, seed=0)
    np.testing.assert_array_equal(tasks[0].train.images, base[0].images)
    np.testing.assert_array_equal(tasks[1].train.images, np.rot90(base[0].images, k=1, axes=(2, 3)))
    with pytest.raises(SpecError):
        make_tasks(TaskSequenceSpec(Rotate((10.0, 10.0))), base, seed=0)


def test_compose_and_from_dict(base):
    gen = generator_from_dict({"kind": "compose", "parts": [
        {"kind": "class_split", "groups": [[0, 1], [2, 3]]}, {"kind": "rotate", "angles": [0]}]})
    assert isinstance(gen, Compose) and len(gen) == 2
    tasks = make_tasks(TaskSequenceSpec(gen, train_size=10, test_size=4), base, seed=1)
    assert [len(t.train) for t in tasks] == [10, 10]
    with pytest.raises(SpecError):
        generator_from_dict({"kind": "shuffle"})


def test_make_tasks_is_pure(base):
    spec = TaskSequenceSpec(PixelPermute(2), train_size=30, test_size=10, val_size=10)
    a, b = make_tasks(spec, base, 5), make_tasks(spec, base, 5)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.train.images, y.train.images)
        np.testing.assert_array_equal(x.val.ids, y.val.ids)
        assert not np.intersect1d(x.val.ids, x.train.ids).size
