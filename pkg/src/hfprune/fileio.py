"""Binary file formats: ".hfpw" weight files and ".tok" token corpora.

Both formats are little-endian and fully deterministic: saving the same
model or corpus twice produces byte-identical files.

.hfpw layout:
  magic "HFPW" | u32 version=1
  u32 d_model, n_layers, n_heads, vocab_size, max_seq
  f32 rope_theta, f32 rms_eps, u8 tied
  u32 d_hidden[n_layers]
  u32 tensor count, then per tensor:
    u16 name length | name (UTF-8) | u8 rank | u32 dims[rank] | u64 offset
  payload: raw row-major float32, offsets relative to payload start

.tok layout:
  magic "HFTK" | u32 version=1 | u32 seq_len T | u32 seq_count N | u32 ids[N*T]
"""

from __future__ import annotations

import hashlib
import io
import struct

import numpy as np

from .model import LayerWeights, Model, ModelConfig
from .numerics import ShapeError

WEIGHT_MAGIC = b"HFPW"
TOKEN_MAGIC = b"HFTK"
VERSION = 1


class FormatError(ValueError):
    """Malformed or truncated file."""


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}")
    return buf


def _expected_shapes(config: ModelConfig, tied: bool) -> dict[str, tuple[int, ...]]:
    d, v = config.d_model, config.vocab_size
    shapes: dict[str, tuple[int, ...]] = {"embedding": (v, d)}
    for i, dh in enumerate(config.d_hidden):
        p = f"layers.{i}."
        shapes[p + "attn_norm"] = (d,)
        for n in ("W_q", "W_k", "W_v", "W_o"):
            shapes[p + n] = (d, d)
        shapes[p + "mlp_norm"] = (d,)
        shapes[p + "W_gate"] = (dh, d)
        shapes[p + "W_up"] = (dh, d)
        shapes[p + "W_down"] = (d, dh)
    shapes["final_norm"] = (d,)
    if not tied:
        shapes["lm_head"] = (v, d)
    return shapes


def _write_model(model: Model, f) -> None:
    model.validate()
    cfg = model.config
    tensors = model.all_tensors()

    table = io.BytesIO()
    payload = io.BytesIO()
    table.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        raw = name.encode("utf-8")
        table.write(struct.pack("<H", len(raw)))
        table.write(raw)
        table.write(struct.pack("<B", arr.ndim))
        table.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        table.write(struct.pack("<Q", payload.tell()))
        payload.write(arr.astype("<f4").tobytes())

    f.write(WEIGHT_MAGIC)
    f.write(struct.pack("<I", VERSION))
    f.write(struct.pack("<5I", cfg.d_model, cfg.n_layers, cfg.n_heads,
                        cfg.vocab_size, cfg.max_seq))
    f.write(struct.pack("<ff", cfg.rope_theta, cfg.rms_eps))
    f.write(struct.pack("<B", 1 if model.tied else 0))
    f.write(struct.pack(f"<{cfg.n_layers}I", *cfg.d_hidden))
    f.write(table.getvalue())
    f.write(payload.getvalue())


def save_model(model: Model, path) -> None:
    with open(path, "wb") as f:
        _write_model(model, f)


def load_model(path) -> Model:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != WEIGHT_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {WEIGHT_MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise FormatError(f"unsupported version {version}")
        d_model, n_layers, n_heads, vocab, max_seq = struct.unpack(
            "<5I", _read_exact(f, 20, "config"))
        rope_theta, rms_eps = struct.unpack("<ff", _read_exact(f, 8, "config"))
        (tied_flag,) = struct.unpack("<B", _read_exact(f, 1, "config"))
        d_hidden = struct.unpack(f"<{n_layers}I",
                                 _read_exact(f, 4 * n_layers, "d_hidden table"))
        config = ModelConfig(d_model=d_model, n_layers=n_layers, n_heads=n_heads,
                             d_hidden=tuple(d_hidden), vocab_size=vocab,
                             max_seq=max_seq, rope_theta=rope_theta, rms_eps=rms_eps)
        config.validate()
        tied = bool(tied_flag)

        (count,) = struct.unpack("<I", _read_exact(f, 4, "tensor table"))
        entries = []
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, "tensor table"))
            name = _read_exact(f, name_len, "tensor table").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(f, 1, "tensor table"))
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "tensor table"))
            (offset,) = struct.unpack("<Q", _read_exact(f, 8, "tensor table"))
            entries.append((name, dims, offset))
        payload = f.read()

    expected = _expected_shapes(config, tied)
    seen = {name for name, _, _ in entries}
    missing = sorted(set(expected) - seen)
    extra = sorted(seen - set(expected))
    if missing or extra:
        raise FormatError(f"tensor table mismatch: missing={missing} extra={extra}")

    tensors: dict[str, np.ndarray] = {}
    for name, dims, offset in entries:
        if dims != expected[name]:
            raise ShapeError(f"tensor {name} has dims {dims}, expected {expected[name]}")
        n_elems = int(np.prod(dims, dtype=np.int64))
        end = offset + 4 * n_elems
        if end > len(payload):
            raise FormatError(f"tensor {name} payload extends past end of file")
        tensors[name] = np.frombuffer(payload[offset:end], dtype="<f4").reshape(dims).copy()

    layers = []
    for i in range(config.n_layers):
        p = f"layers.{i}."
        layers.append(LayerWeights(
            W_q=tensors[p + "W_q"], W_k=tensors[p + "W_k"],
            W_v=tensors[p + "W_v"], W_o=tensors[p + "W_o"],
            W_gate=tensors[p + "W_gate"], W_up=tensors[p + "W_up"],
            W_down=tensors[p + "W_down"],
            attn_norm=tensors[p + "attn_norm"], mlp_norm=tensors[p + "mlp_norm"]))
    model = Model(config=config, embedding=tensors["embedding"], layers=layers,
                  final_norm=tensors["final_norm"],
                  lm_head=None if tied else tensors["lm_head"], tied=tied)
    model.validate()
    return model


def model_bytes(model: Model) -> bytes:
    """The exact bytes save_model would write (for digests)."""
    buf = io.BytesIO()
    _write_model(model, buf)
    return buf.getvalue()


def save_tokens(sequences: np.ndarray, path) -> None:
    """Write an [N x T] uint32 token array."""
    seqs = np.asarray(sequences)
    if seqs.ndim != 2 or seqs.shape[0] < 1 or seqs.shape[1] < 1:
        raise ShapeError("token corpus must be a non-empty [N x T] array")
    if np.any(seqs < 0) or np.any(seqs > 0xFFFFFFFF):
        raise ShapeError("token id out of u32 range")
    n, t = seqs.shape
    with open(path, "wb") as f:
        f.write(TOKEN_MAGIC)
        f.write(struct.pack("<III", VERSION, t, n))
        f.write(seqs.astype("<u4").tobytes())


def load_tokens(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != TOKEN_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {TOKEN_MAGIC!r}")
        version, t, n = struct.unpack("<III", _read_exact(f, 12, "token header"))
        if version != VERSION:
            raise FormatError(f"unsupported version {version}")
        if t < 1 or n < 1:
            raise FormatError("token header declares an empty corpus")
        raw = _read_exact(f, 4 * n * t, "token payload")
    return np.frombuffer(raw, dtype="<u4").reshape(n, t).copy()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def token_digest(sequences: np.ndarray) -> str:
    """Content hash of a token array (shape header + little-endian ids)."""
    seqs = np.asarray(sequences, dtype="<u4")
    h = hashlib.sha256()
    h.update(struct.pack("<II", seqs.shape[1], seqs.shape[0]))
    h.update(seqs.tobytes())
    return h.hexdigest()


def model_digest(model: Model) -> str:
    return hashlib.sha256(model_bytes(model)).hexdigest()
