import struct
import zlib

import numpy as np
import pytest

from clrnet.backbone import state_hash
from clrnet.checkpoint import (
    adapter_filename,
    load_adapter,
    load_backbone,
    load_checkpoint,
    save_adapter,
    save_backbone,
    save_checkpoint,
)
from clrnet.clr import make_adapter
from clrnet.errors import FormatError


def test_layout_is_bit_exact(tmp_path):
    save_checkpoint(tmp_path / "c", {"w": np.array([[1.5, -2.0]], np.float32)})
    raw = (tmp_path / "c").read_bytes()
    expected = b"CLRK" + struct.pack("<HI", 1, 1) + struct.pack("<H", 1) + b"w" + struct.pack("<BB", 0, 2)
    expected += struct.pack("<2I", 1, 2) + np.array([1.5, -2.0], "<f4").tobytes()
    expected += struct.pack("<I", zlib.crc32(expected))
    assert raw == expected


def test_round_trip_is_bitwise(tmp_path, rng):
    tensors = {"a": rng.standard_normal((3, 4, 5)).astype(np.float32), "b.c": np.float32([np.nan, -0.0, np.inf])}
    save_checkpoint(tmp_path / "c", tensors, meta={"k": [1, 2]})
    back, meta = load_checkpoint(tmp_path / "c")
    assert meta == {"k": [1, 2]}
    for k, v in tensors.items():
        assert back[k].tobytes() == v.tobytes()


def test_corruption_and_version(tmp_path):
    save_checkpoint(tmp_path / "c", {"w": np.ones(4, np.float32)})
    raw = bytearray((tmp_path / "c").read_bytes())
    raw[20] ^= 0xFF
    (tmp_path / "bad").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="CRC"):
        load_checkpoint(tmp_path / "bad")
    body = bytearray((tmp_path / "c").read_bytes()[:-4])
    body[4:6] = struct.pack("<H", 9)
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    (tmp_path / "v9").write_bytes(bytes(body))
    with pytest.raises(FormatError, match="9.*1"):
        load_checkpoint(tmp_path / "v9")
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "nope")


def test_backbone_round_trip(tmp_path, frozen_tinynet):
    save_backbone(tmp_path / "b.ckpt", frozen_tinynet)
    again = load_backbone(tmp_path / "b.ckpt")
    assert again.frozen and again.arch == frozen_tinynet.arch
    assert state_hash(again) == state_hash(frozen_tinynet)


def test_adapter_round_trip(tmp_path, frozen_tinynet):
    ad = make_adapter(frozen_tinynet, "mixed", 4, seed=1, task_id=7, train_norm_affine=True, task_name="x")
    ad.training_log.append({"epoch": 1, "loss": 0.5, "train_acc": 0.75})
    save_adapter(tmp_path / adapter_filename(7), ad)
    assert adapter_filename(7) == "task007.adapter"
    back = load_adapter(tmp_path / "task007.adapter")
    assert (back.task_id, back.task_name, back.variant, back.training_log) == (7, "x", ad.variant, ad.training_log)
    a, b = ad.named_tensors(), back.named_tensors()
    assert a.keys() == b.keys()
    assert all(a[k].data.tobytes() == b[k].data.tobytes() for k in a)


def test_wrong_kind_rejected(tmp_path, frozen_tinynet):
    save_backbone(tmp_path / "b.ckpt", frozen_tinynet)
    with pytest.raises(FormatError):
        load_adapter(tmp_path / "b.ckpt")
