"""Checkpoint and adapter-file persistence.

Both formats share the same skeleton: an 8-byte magic+version, a
length-prefixed JSON header, length-prefixed named float32 records sorted
by name, and a trailing sha256 over everything before it. The checksum is
verified before any parameter is exposed. Serialization is canonical, so
save -> load -> save is byte-identical.

An adapter file records the lineage fingerprint of the base it was trained
against: the checksum of the freshly built base's weights plus config,
carried unchanged through fine-tuning and checkpoint round-trips. Loading
an adapter onto a base with a different lineage is a hard error; loading
onto any descendant of its own base (e.g. the task fine-tuned model) is
the intended swap path.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .model import AdapterSet, Model, ModelConfig, build_model, swap_adapters

CKPT_MAGIC = b"SSWP"
ADAPTER_MAGIC = b"SSWA"
FORMAT_VERSION = 1


class StoreError(RuntimeError):
    """Malformed, corrupt, or incompatible artifact file."""


class FingerprintMismatch(StoreError):
    """Adapter was trained against a different base model."""


def _canon_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _pack_records(named: list[tuple[str, np.ndarray]]) -> bytes:
    parts = [struct.pack("<I", len(named))]
    for name, arr in sorted(named):
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", 0, arr.ndim))  # dtype tag 0 = float32
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    return b"".join(parts)


def _write(path: Path, magic: bytes, header: dict, named) -> None:
    body = bytearray()
    body += magic
    body += struct.pack("<I", FORMAT_VERSION)
    header_bytes = _canon_json(header)
    body += struct.pack("<I", len(header_bytes))
    body += header_bytes
    body += _pack_records(named)
    body += hashlib.sha256(bytes(body)).digest()
    Path(path).write_bytes(bytes(body))


class _Reader:
    def __init__(self, path: Path, magic: bytes):
        raw = Path(path).read_bytes()
        if len(raw) < 48:
            raise StoreError(f"{path}: truncated file")
        body, checksum = raw[:-32], raw[-32:]
        if hashlib.sha256(body).digest() != checksum:
            raise StoreError(f"{path}: checksum mismatch (corrupt file)")
        if body[:4] != magic:
            raise StoreError(f"{path}: bad magic {body[:4]!r}, expected {magic!r}")
        (version,) = struct.unpack_from("<I", body, 4)
        if version != FORMAT_VERSION:
            raise StoreError(f"{path}: unsupported format version {version}")
        (header_len,) = struct.unpack_from("<I", body, 8)
        self.header = json.loads(body[12 : 12 + header_len])
        self._buf = body
        self._pos = 12 + header_len
        self.path = path

    def records(self) -> dict[str, np.ndarray]:
        (count,) = struct.unpack_from("<I", self._buf, self._pos)
        self._pos += 4
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", self._buf, self._pos)
            self._pos += 2
            name = self._buf[self._pos : self._pos + name_len].decode()
            self._pos += name_len
            dtype_tag, ndim = struct.unpack_from("<BB", self._buf, self._pos)
            self._pos += 2
            if dtype_tag != 0:
                raise StoreError(f"{self.path}: unknown dtype tag {dtype_tag}")
            shape = struct.unpack_from(f"<{ndim}I", self._buf, self._pos)
            self._pos += 4 * ndim
            n_bytes = 4 * int(np.prod(shape)) if ndim else 4
            flat = np.frombuffer(self._buf, dtype="<f4", count=n_bytes // 4,
                                 offset=self._pos)
            self._pos += n_bytes
            out[name] = flat.reshape(shape).astype(np.float64)
        return out


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: Model, path: Path) -> None:
    header = {"kind": "checkpoint", "config": asdict(model.config),
              "base_id": model.base_id}
    _write(path, CKPT_MAGIC, header, [(n, t.data) for n, t in model.params.items()])


def load_checkpoint(path: Path) -> Model:
    reader = _Reader(path, CKPT_MAGIC)
    config = ModelConfig(**reader.header["config"])
    stored = reader.records()
    model = build_model(config)
    missing = set(model.params) - set(stored)
    extra = set(stored) - set(model.params)
    if missing or extra:
        raise StoreError(f"{path}: parameter names do not match config "
                         f"(missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]})")
    for name, arr in stored.items():
        model.params[name].data[:] = arr
    model.base_id = reader.header["base_id"]
    return model


def clone_model(model: Model) -> Model:
    """Independent copy of the base (same lineage); adapter slot left empty."""
    twin = build_model(model.config)
    for name, t in model.params.items():
        twin.params[name].data[:] = t.data
    twin.base_id = model.base_id
    return twin


# ---------------------------------------------------------------------------
# adapter files


def save_adapter(adapters: AdapterSet, base_id: str, path: Path) -> None:
    header = {"kind": "adapter", "style_id": adapters.style_id,
              "mode": adapters.mode, "base_id": base_id}
    _write(path, ADAPTER_MAGIC, header, [(n, t.data) for n, t in adapters.named()])


def load_adapter(path: Path, model: Model) -> AdapterSet:
    """Read an adapter file and install it via swap; base parameters untouched."""
    reader = _Reader(path, ADAPTER_MAGIC)
    if reader.header["base_id"] != model.base_id:
        raise FingerprintMismatch(
            f"{path}: adapter was trained against base {reader.header['base_id'][:12]}..., "
            f"model is {model.base_id[:12]}...")
    stored = reader.records()
    n_layers = model.config.n_dec_layers
    layers = []
    for i in range(n_layers):
        try:
            layers.append({key: Tensor(stored[f"adapter.{i}.{key}"])
                           for key in ("ln_g", "ln_b", "w_down", "w_up")})
        except KeyError as exc:
            raise StoreError(f"{path}: missing adapter record {exc.args[0]!r}") from None
    adapters = AdapterSet(style_id=reader.header["style_id"],
                          mode=reader.header["mode"], layers=layers)
    swap_adapters(model, adapters)
    return adapters
