"""Binary tensor container used for every backbone and adapter file.

Layout (all integers little-endian)::

    b"CLRK"                      magic
    u16                          format version
    u32                          entry count
    per entry:
        u16 + bytes              UTF-8 name
        u8                       dtype tag (0 = float32)
        u8                       ndim
        u32 * ndim               dims
        f32 * prod(dims)         payload
    u32                          CRC32 of every preceding byte

Metadata (architecture, provenance, task info) travels as an ordinary
float32 entry named ``__meta__`` whose values are the bytes of a UTF-8
JSON document, so readers only ever need the one dtype.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .arch import ArchSpec
from .autodiff import Tensor
from .backbone import BackboneState
from .clr import ClrLayer, ClrVariant, TaskAdapter
from .errors import FormatError

MAGIC = b"CLRK"
VERSION = 1
META_KEY = "__meta__"
DTYPE_F32 = 0


def _encode(tensors: dict, meta) -> bytes:
    items = dict(tensors)
    if meta is not None:
        items[META_KEY] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    out = bytearray(MAGIC)
    out += struct.pack("<HI", VERSION, len(items))
    for name, value in items.items():
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF or arr.ndim > 0xFF:
            raise FormatError(f"entry {name!r} cannot be encoded")
        out += struct.pack("<H", len(raw_name)) + raw_name
        out += struct.pack("<BB", DTYPE_F32, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    out += struct.pack("<I", zlib.crc32(out) & 0xFFFFFFFF)
    return bytes(out)


def _decode(buf: bytes, source="checkpoint"):
    if len(buf) < 14:
        raise FormatError(f"{source}: too short to be a checkpoint")
    if buf[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {buf[:4]!r}")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) & 0xFFFFFFFF != crc:
        raise FormatError(f"{source}: CRC mismatch, file is corrupted")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version > VERSION:
        raise FormatError(f"{source}: format version {version} is newer than supported version {VERSION}")
    pos, end = 10, len(buf) - 4
    tensors = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            dtype, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            if dtype != DTYPE_F32:
                raise FormatError(f"{source}: entry {name!r} has unknown dtype tag {dtype}")
            dims = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            nbytes = 4 * int(np.prod(dims, dtype=np.int64))
            if pos + nbytes > end:
                raise FormatError(f"{source}: entry {name!r} runs past the end of the file")
            tensors[name] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims).astype(np.float32)
            pos += nbytes
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"{source}: malformed entry table ({exc})") from None
    if pos != end:
        raise FormatError(f"{source}: {end - pos} unexpected trailing bytes")
    meta = None
    if META_KEY in tensors:
        raw = tensors.pop(META_KEY).astype(np.uint8).tobytes()
        meta = json.loads(raw.decode("utf-8"))
    return tensors, meta


def save_checkpoint(path, tensors: dict, meta=None):
    """Write atomically (temp file + rename) so a crash never leaves half a file."""
    path = Path(path)
    data = _encode(tensors, meta)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Return ``(tensors, meta)``; nothing is returned unless the whole file verifies."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except FileNotFoundError:
        raise FormatError(f"{path}: no such checkpoint") from None
    return _decode(buf, str(path))


# --- typed helpers ---------------------------------------------------------------

def save_backbone(path, state: BackboneState):
    meta = {"kind": "backbone", "arch": state.arch.to_dict(), "frozen": state.frozen,
            "provenance": state.provenance}
    save_checkpoint(path, state.params, meta)


def load_backbone(path, freeze: bool = True) -> BackboneState:
    tensors, meta = load_checkpoint(path)
    if not meta or meta.get("kind") != "backbone":
        raise FormatError(f"{path}: not a backbone checkpoint")
    arch = ArchSpec.from_dict(meta["arch"])
    from .backbone import build_network, freeze as freeze_state

    template = build_network(arch, 0)
    if set(template.params) != set(tensors):
        missing = sorted(set(template.params) - set(tensors))[:3]
        raise FormatError(f"{path}: tensors do not match the architecture (missing e.g. {missing})")
    params = {}
    for name, t in template.params.items():
        if tensors[name].shape != t.shape:
            raise FormatError(f"{path}: {name} has shape {tensors[name].shape}, expected {t.shape}")
        params[name] = Tensor(tensors[name], requires_grad=t.requires_grad)
    state = BackboneState(arch, params, provenance=meta.get("provenance") or {"dataset": "imported"})
    if freeze or meta.get("frozen"):
        freeze_state(state)
    return state


def save_adapter(path, adapter: TaskAdapter, extra_meta=None):
    meta = {
        "kind": "adapter",
        "task_id": adapter.task_id,
        "task_name": adapter.task_name,
        "variant": adapter.variant.value,
        "arch_fingerprint": adapter.arch_fingerprint,
        "num_classes": adapter.num_classes,
        "clr_layers": sorted(adapter.layers),
        "norm_affine": sorted(adapter.norm_affine) if adapter.norm_affine else None,
        "training_log": adapter.training_log,
    }
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, adapter.named_tensors(), meta)


def load_adapter(path) -> TaskAdapter:
    tensors, meta = load_checkpoint(path)
    if not meta or meta.get("kind") != "adapter":
        raise FormatError(f"{path}: not an adapter checkpoint")
    try:
        layers = {}
        for lp in meta["clr_layers"]:
            blend = tensors.get(f"clr.{lp}.blend")
            layers[lp] = ClrLayer(Tensor(tensors[f"clr.{lp}.kernels"], requires_grad=True), lp,
                                  None if blend is None else Tensor(blend, requires_grad=True))
        norm = None
        if meta.get("norm_affine"):
            norm = {p: (Tensor(tensors[f"norm.{p}.gamma"], requires_grad=True),
                        Tensor(tensors[f"norm.{p}.beta"], requires_grad=True)) for p in meta["norm_affine"]}
        return TaskAdapter(
            task_id=int(meta["task_id"]),
            variant=ClrVariant.parse(meta["variant"]),
            layers=layers,
            head_weight=Tensor(tensors["head.weight"], requires_grad=True),
            head_bias=Tensor(tensors["head.bias"], requires_grad=True),
            arch_fingerprint=meta["arch_fingerprint"],
            norm_affine=norm,
            task_name=meta.get("task_name", ""),
            training_log=meta.get("training_log", []),
        )
    except KeyError as exc:
        raise FormatError(f"{path}: adapter entry {exc} missing") from None


def adapter_filename(task_id: int) -> str:
    return f"task{task_id:03d}.adapter"
