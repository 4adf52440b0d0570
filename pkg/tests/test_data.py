"""PGM/IDX parsing, phantom generation, dataset manifests, and splits."""

import json
import os
import struct

import numpy as np
import pytest

from d2gp.data import (gen_data, load_dataset, load_idx_images, load_pgm,
                       resize_nearest, save_pgm, split_dataset)
from d2gp.errors import DataError, FormatError, ParameterError


def write_idx(path, images):
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, *images.shape))
        fh.write(images.tobytes())


class TestPgm:
    def test_roundtrip(self, tmp_path, rng):
        img = rng.random((8, 10))
        p = str(tmp_path / "a.pgm")
        save_pgm(p, img)
        back = load_pgm(p)
        assert back.shape == (8, 10)
        assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12  # 8-bit quantization

    def test_header_with_comments(self, tmp_path):
        p = str(tmp_path / "c.pgm")
        with open(p, "wb") as fh:
            fh.write(b"P5\n# a comment\n4 2\n# another\n255\n" + bytes(8))
        assert load_pgm(p).shape == (2, 4)

    def test_bad_magic(self, tmp_path):
        p = str(tmp_path / "bad.pgm")
        with open(p, "wb") as fh:
            fh.write(b"P2\n2 2\n255\n0 0 0 0")
        with pytest.raises(FormatError):
            load_pgm(p)

    def test_unsupported_maxval(self, tmp_path):
        p = str(tmp_path / "m.pgm")
        with open(p, "wb") as fh:
            fh.write(b"P5\n2 2\n65535\n" + bytes(8))
        with pytest.raises(FormatError):
            load_pgm(p)

    def test_truncated_payload(self, tmp_path):
        p = str(tmp_path / "t.pgm")
        with open(p, "wb") as fh:
            fh.write(b"P5\n4 4\n255\n" + bytes(3))
        with pytest.raises(FormatError) as exc:
            load_pgm(p)
        assert "truncated" in str(exc.value)

    def test_non_2d_rejected(self, tmp_path):
        with pytest.raises(DataError):
            save_pgm(str(tmp_path / "x.pgm"), np.zeros(4))


class TestIdx:
    def test_roundtrip(self, tmp_path, rng):
        imgs = (rng.random((5, 6, 7)) * 255).astype(np.uint8)
        p = str(tmp_path / "im.idx")
        write_idx(p, imgs)
        back = load_idx_images(p)
        assert back.shape == (5, 6, 7)
        assert np.array_equal((back * 255).round().astype(np.uint8), imgs)

    def test_label_magic_rejected(self, tmp_path):
        # 0x00000801 is the IDX *label* magic; images must be refused
        p = str(tmp_path / "lab.idx")
        with open(p, "wb") as fh:
            fh.write(struct.pack(">II", 0x00000801, 4) + bytes(4))
        with pytest.raises(FormatError) as exc:
            load_idx_images(p)
        assert "0x00000801" in str(exc.value)

    def test_trailing_bytes_rejected(self, tmp_path):
        p = str(tmp_path / "tr.idx")
        with open(p, "wb") as fh:
            fh.write(struct.pack(">IIII", 0x00000803, 1, 2, 2) + bytes(5))
        with pytest.raises(FormatError) as exc:
            load_idx_images(p)
        assert "trailing" in str(exc.value)

    def test_truncated_payload(self, tmp_path):
        p = str(tmp_path / "short.idx")
        with open(p, "wb") as fh:
            fh.write(struct.pack(">IIII", 0x00000803, 2, 4, 4) + bytes(10))
        with pytest.raises(FormatError):
            load_idx_images(p)


class TestPhantoms:
    def test_gen_data_writes_manifest_and_files(self, tmp_path):
        out = str(tmp_path / "ds")
        man = gen_data(10, 16, seed=3, out_dir=out)
        assert man["count"] == 10
        assert len(man["files"]) == 10
        assert os.path.exists(os.path.join(out, "manifest.json"))
        for f in man["files"]:
            assert os.path.exists(os.path.join(out, f))

    def test_gen_data_byte_determinism(self, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        gen_data(5, 16, seed=9, out_dir=a)
        gen_data(5, 16, seed=9, out_dir=b)
        for name in sorted(os.listdir(a)):
            with open(os.path.join(a, name), "rb") as f1, \
                    open(os.path.join(b, name), "rb") as f2:
                assert f1.read() == f2.read()

    def test_phantom_statistics(self, tmp_path):
        out = str(tmp_path / "ds")
        man = gen_data(32, 16, seed=0, out_dir=out)
        X = load_dataset(man, base_dir=out)
        assert X.shape == (32, 256)
        assert np.all(X >= 0) and np.all(X <= 1)
        assert 0.05 <= X.mean() <= 0.5  # sparse-ish foreground on black
        # phantoms differ from one another
        assert len({x.tobytes() for x in X}) == 32

    def test_count_validation(self, tmp_path):
        with pytest.raises(ParameterError):
            gen_data(0, 16, 0, str(tmp_path / "x"))


class TestLoadDataset:
    def test_from_manifest_path(self, tmp_path):
        out = str(tmp_path / "ds")
        gen_data(4, 16, seed=1, out_dir=out)
        X = load_dataset(os.path.join(out, "manifest.json"))
        assert X.shape == (4, 256)

    def test_resize_on_mismatched_side(self, tmp_path):
        out = str(tmp_path / "ds")
        man = gen_data(3, 32, seed=1, out_dir=out)
        X = load_dataset(man, base_dir=out, image_side=16)
        assert X.shape == (3, 256)

    def test_idx_source(self, tmp_path, rng):
        imgs = (rng.random((6, 28, 28)) * 255).astype(np.uint8)
        idx_path = str(tmp_path / "im.idx")
        write_idx(idx_path, imgs)
        man = {"schema": 1, "source": "idx_pair", "images": "im.idx",
               "image_side": 16, "count": 4}
        X = load_dataset(man, base_dir=str(tmp_path))
        assert X.shape == (4, 256)

    def test_unknown_source(self):
        with pytest.raises(DataError):
            load_dataset({"source": "csv", "image_side": 8})

    def test_missing_side(self):
        with pytest.raises(DataError):
            load_dataset({"source": "synthetic"})


def test_resize_nearest_identity(rng):
    img = rng.random((8, 8))
    assert np.array_equal(resize_nearest(img, 8), img)


def test_split_dataset_deterministic(rng):
    X = rng.random((20, 4))
    a_tr, a_te = split_dataset(X, 7, 0.75)
    b_tr, b_te = split_dataset(X, 7, 0.75)
    assert np.array_equal(a_tr, b_tr) and np.array_equal(a_te, b_te)
    assert len(a_tr) == 15 and len(a_te) == 5
    # disjoint and exhaustive
    joined = np.vstack([a_tr, a_te])
    assert {r.tobytes() for r in joined} == {r.tobytes() for r in X}
