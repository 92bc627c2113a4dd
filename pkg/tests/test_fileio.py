import struct

import numpy as np
import pytest

from hfprune import fileio
from hfprune import model as M
from hfprune.fileio import FormatError
from hfprune.numerics import ShapeError
from conftest import make_config


class TestModelRoundTrip:
    def test_save_load_byte_identical(self, tiny_model, tmp_path):
        p1 = tmp_path / "a.hfpw"
        p2 = tmp_path / "b.hfpw"
        fileio.save_model(tiny_model, p1)
        loaded = fileio.load_model(p1)
        fileio.save_model(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
        for name, arr in tiny_model.all_tensors().items():
            assert np.array_equal(arr, loaded.all_tensors()[name]), name

    def test_tied_round_trip(self, rng, tmp_path):
        m = M.random_model(make_config(), rng, tied=True)
        path = tmp_path / "tied.hfpw"
        fileio.save_model(m, path)
        loaded = fileio.load_model(path)
        assert loaded.tied and loaded.lm_head is None
        assert np.array_equal(loaded.embedding, m.embedding)

    def test_model_bytes_matches_file(self, tiny_model, tmp_path):
        path = tmp_path / "m.hfpw"
        fileio.save_model(tiny_model, path)
        assert fileio.model_bytes(tiny_model) == path.read_bytes()


class TestModelFormatErrors:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.hfpw"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(FormatError, match="magic"):
            fileio.load_model(path)

    def test_truncated_tensor_table(self, tiny_model, tmp_path):
        path = tmp_path / "m.hfpw"
        fileio.save_model(tiny_model, path)
        data = path.read_bytes()
        # cut inside the tensor table, right after the entry count
        header = 4 + 4 + 20 + 8 + 1 + 4 * tiny_model.config.n_layers
        path.write_bytes(data[: header + 7])
        with pytest.raises(FormatError, match="tensor table"):
            fileio.load_model(path)

    def test_truncated_payload(self, tiny_model, tmp_path):
        path = tmp_path / "m.hfpw"
        fileio.save_model(tiny_model, path)
        path.write_bytes(path.read_bytes()[:-40])
        with pytest.raises(FormatError, match="payload"):
            fileio.load_model(path)

    def test_header_tensor_width_mismatch(self, tiny_model, tmp_path):
        path = tmp_path / "m.hfpw"
        fileio.save_model(tiny_model, path)
        data = bytearray(path.read_bytes())
        # first table entry is "embedding" rank 2 [V, d_model]; shrink d_model
        header = 4 + 4 + 20 + 8 + 1 + 4 * tiny_model.config.n_layers
        dims_at = header + 4 + 2 + len(b"embedding") + 1
        second_dim_at = dims_at + 4
        (d_model,) = struct.unpack_from("<I", data, second_dim_at)
        assert d_model == tiny_model.config.d_model
        struct.pack_into("<I", data, second_dim_at, d_model - 1)
        path.write_bytes(bytes(data))
        with pytest.raises(ShapeError, match="embedding"):
            fileio.load_model(path)

    def test_bad_version(self, tiny_model, tmp_path):
        path = tmp_path / "m.hfpw"
        fileio.save_model(tiny_model, path)
        data = bytearray(path.read_bytes())
        struct.pack_into("<I", data, 4, 9)
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="version"):
            fileio.load_model(path)


class TestTokens:
    def test_round_trip(self, rng, tmp_path):
        seqs = rng.integers(0, 1000, size=(5, 16), dtype=np.uint32)
        path = tmp_path / "c.tok"
        fileio.save_tokens(seqs, path)
        assert np.array_equal(fileio.load_tokens(path), seqs)

    def test_save_twice_identical(self, rng, tmp_path):
        seqs = rng.integers(0, 1000, size=(5, 16), dtype=np.uint32)
        a, b = tmp_path / "a.tok", tmp_path / "b.tok"
        fileio.save_tokens(seqs, a)
        fileio.save_tokens(seqs, b)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.tok"
        path.write_bytes(b"XXXX" + b"\x00" * 12)
        with pytest.raises(FormatError, match="magic"):
            fileio.load_tokens(path)

    def test_truncated(self, rng, tmp_path):
        path = tmp_path / "c.tok"
        fileio.save_tokens(rng.integers(0, 10, size=(4, 4), dtype=np.uint32), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FormatError, match="payload"):
            fileio.load_tokens(path)

    def test_digest_depends_on_content(self, rng):
        a = rng.integers(0, 10, size=(4, 4), dtype=np.uint32)
        b = a.copy()
        b[0, 0] += 1
        assert fileio.token_digest(a) != fileio.token_digest(b)
        assert fileio.token_digest(a) == fileio.token_digest(a.copy())
