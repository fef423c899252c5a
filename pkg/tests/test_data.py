"""IDX/CIFAR ingestion, persistence round trips, and filename conventions."""

import struct

import numpy as np
import pytest

from dstforge.data import (
    CIFAR_RECORD,
    DataError,
    ImageSet,
    corrupted_set_filename,
    guess_idx_labels_path,
    load_cifar_binary,
    load_idx,
    load_image_set,
    parse_corrupted_set_filename,
    save_image_set,
    write_corrupted_sets,
)


def toy_images(n=6, c=1, h=5, w=4, seed=0):
    return np.random.default_rng(seed).random((n, c, h, w)).astype(np.float32)


def test_image_set_validation():
    with pytest.raises(DataError):
        ImageSet(images=np.zeros((3, 5, 4), dtype=np.float32),
                 labels=np.zeros(3, dtype=np.int64))
    with pytest.raises(DataError):
        ImageSet(images=toy_images(), labels=np.zeros(5, dtype=np.int64))
    with pytest.raises(DataError):
        ImageSet(images=toy_images(), labels=np.zeros(6, dtype=np.int64), fmt="npz")


def test_load_idx_pair(idx_dir):
    s = load_idx(f"{idx_dir}/train-images-idx3-ubyte",
                 f"{idx_dir}/train-labels-idx1-ubyte")
    assert s.images.shape == (1500, 1, 12, 12)
    assert s.images.dtype == np.float32
    assert 0.0 <= s.images.min() and s.images.max() <= 1.0
    assert s.labels.dtype == np.int64
    assert s.fmt == "idx"


def test_load_idx_autoguesses_labels(idx_dir):
    explicit = load_idx(f"{idx_dir}/train-images-idx3-ubyte",
                        f"{idx_dir}/train-labels-idx1-ubyte")
    guessed = load_idx(f"{idx_dir}/train-images-idx3-ubyte")
    np.testing.assert_array_equal(explicit.images, guessed.images)
    np.testing.assert_array_equal(explicit.labels, guessed.labels)


def test_guess_labels_path_requires_images_token(tmp_path):
    assert guess_idx_labels_path(str(tmp_path / "mystery.bin")) is None


def test_load_idx_bad_magic(tmp_path):
    p = tmp_path / "bad-images-idx3-ubyte"
    p.write_bytes(struct.pack(">IIII", 0x9999, 1, 2, 2) + bytes(4))
    with pytest.raises(DataError, match="magic"):
        load_idx(str(p), str(p))


def test_load_idx_truncated(tmp_path):
    img = tmp_path / "t-images-idx3-ubyte"
    img.write_bytes(struct.pack(">IIII", 0x803, 10, 5, 5) + bytes(30))
    lab = tmp_path / "t-labels-idx1-ubyte"
    lab.write_bytes(struct.pack(">II", 0x801, 10) + bytes(10))
    with pytest.raises(DataError, match="expected"):
        load_idx(str(img), str(lab))


def test_load_idx_count_mismatch(tmp_path):
    img = tmp_path / "t-images-idx3-ubyte"
    img.write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + bytes(8))
    lab = tmp_path / "t-labels-idx1-ubyte"
    lab.write_bytes(struct.pack(">II", 0x801, 3) + bytes(3))
    with pytest.raises(DataError, match="images but"):
        load_idx(str(img), str(lab))


def test_load_idx_label_out_of_range(tmp_path):
    img = tmp_path / "t-images-idx3-ubyte"
    img.write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + bytes(8))
    lab = tmp_path / "t-labels-idx1-ubyte"
    lab.write_bytes(struct.pack(">II", 0x801, 2) + bytes([1, 10]))
    with pytest.raises(DataError, match="outside"):
        load_idx(str(img), str(lab), classes=10)


def test_missing_file_is_data_error():
    with pytest.raises(DataError, match="not found"):
        load_idx("/nonexistent/x-images-idx3-ubyte", "/nonexistent/y")


def test_load_cifar_binary(tmp_path):
    r = np.random.default_rng(1)
    rec = np.zeros((7, CIFAR_RECORD), dtype=np.uint8)
    rec[:, 0] = r.integers(0, 10, 7)
    rec[:, 1:] = r.integers(0, 256, (7, 3072))
    p = tmp_path / "batch.bin"
    p.write_bytes(rec.tobytes())
    s = load_cifar_binary(str(p))
    assert s.images.shape == (7, 3, 32, 32)
    assert s.fmt == "cifar"
    np.testing.assert_array_equal(s.labels, rec[:, 0])
    # two files concatenate in argument order
    s2 = load_cifar_binary([str(p), str(p)])
    assert len(s2) == 14
    np.testing.assert_array_equal(s2.images[:7], s.images)


def test_load_cifar_rejects_ragged_file(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(bytes(CIFAR_RECORD + 1))
    with pytest.raises(DataError, match="records"):
        load_cifar_binary(str(p))


def test_idx_set_save_load_round_trip(tmp_path):
    imgs = toy_images()
    s = ImageSet(images=imgs, labels=np.arange(6, dtype=np.int64) % 3, name="toy")
    p = tmp_path / "toy.bin"
    save_image_set(s, p)
    back = load_image_set(p)
    assert back.fmt == "idx"
    np.testing.assert_array_equal(back.labels, s.labels)
    # uint8 quantization: within half a level
    assert np.abs(back.images - imgs).max() <= 0.5 / 255 + 1e-6


def test_cifar_set_save_load_round_trip(tmp_path):
    imgs = np.random.default_rng(2).random((4, 3, 32, 32)).astype(np.float32)
    s = ImageSet(images=imgs, labels=np.array([0, 1, 2, 3], dtype=np.int64),
                 name="toy", fmt="cifar")
    p = tmp_path / "toy.bin"
    save_image_set(s, p)
    back = load_image_set(p)
    assert back.fmt == "cifar"
    assert np.abs(back.images - imgs).max() <= 0.5 / 255 + 1e-6


def test_save_quantization_is_idempotent(tmp_path):
    """Saving a loaded set reproduces the file byte for byte."""
    imgs = toy_images(seed=3)
    s = ImageSet(images=imgs, labels=np.zeros(6, dtype=np.int64), name="toy")
    p1 = tmp_path / "a.bin"
    p2 = tmp_path / "b.bin"
    save_image_set(s, p1)
    save_image_set(load_image_set(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_save_layout_constraints(tmp_path):
    with pytest.raises(DataError, match="channel"):
        save_image_set(ImageSet(images=toy_images(c=3), labels=np.zeros(6, dtype=np.int64)),
                       tmp_path / "x.bin")
    with pytest.raises(DataError, match="cifar"):
        save_image_set(ImageSet(images=toy_images(), labels=np.zeros(6, dtype=np.int64),
                                fmt="cifar"), tmp_path / "x.bin")


def test_load_image_set_sniffs_garbage(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"\x01\x02\x03")
    with pytest.raises(DataError, match="neither"):
        load_image_set(p)


def test_corrupted_filename_round_trip():
    name = corrupted_set_filename("t10k", "gaussian_noise", 3)
    assert name == "t10k-gaussian_noise-s3.bin"
    assert parse_corrupted_set_filename(name) == ("t10k", "gaussian_noise", 3)
    assert parse_corrupted_set_filename("/a/b/t10k-motion_blur-s5.bin") == (
        "t10k", "motion_blur", 5)
    stem, kind, sev = parse_corrupted_set_filename("plain.bin")
    assert (stem, kind, sev) == ("plain", "plain", 0)


def test_write_corrupted_sets(tmp_path):
    imgs = toy_images(n=3)
    s = ImageSet(images=imgs, labels=np.zeros(3, dtype=np.int64), name="toy")
    sets = {("contrast", 1): s, ("contrast", 2): s}
    paths = write_corrupted_sets(sets, tmp_path / "out", "toy")
    assert sorted(p.rsplit("/", 1)[1] for p in paths) == [
        "toy-contrast-s1.bin", "toy-contrast-s2.bin"]
    for p in paths:
        assert len(load_image_set(p)) == 3
