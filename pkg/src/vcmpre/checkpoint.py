"""Single-file checkpoint container for training state.

Layout: magic ``VCMP1``, little-endian uint64 section count, then sections
sorted by name.  Each section is ``u64 name_len, name (utf-8), u64
payload_len, payload``.  Array sections encode ``u32 ndim, ndim x u64 dims,
float32 little-endian data``; the single ``meta`` section holds canonical
JSON (sorted keys) with the config snapshot, optimizer step count, frozen
flag and training position.  Sorting plus canonical JSON make a
load-then-save round trip byte-identical, which the tests pin.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import analyzer as _analyzer
from . import codec as _codec
from . import preprocessor as _preprocessor

MAGIC = b"VCMP1"


@dataclass
class Checkpoint:
    preprocessor: object          # PreprocessorParams
    entropy: object               # EntropyModelParams
    analyzer: object              # AnalyzerParams
    analyzer_frozen: bool
    adam_m: dict                  # param name -> float32 array
    adam_v: dict
    adam_t: int
    config: dict                  # TrainConfig snapshot
    next_step: int                # first step a resumed run would execute

    def named_params(self):
        """All model arrays under their section names."""
        for name, t in self.preprocessor.named():
            yield f"pre.{name}", t
        for name, t in self.entropy.named():
            yield name, t          # already "entropy.*"
        for name, t in self.analyzer.named():
            yield f"an.{name}", t


def _encode_array(arr):
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    head = struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.astype("<f4").tobytes()


def _decode_array(payload):
    (ndim,) = struct.unpack_from("<I", payload, 0)
    dims = struct.unpack_from(f"<{ndim}Q", payload, 4)
    data = np.frombuffer(payload, dtype="<f4", offset=4 + 8 * ndim)
    if data.size != int(np.prod(dims, dtype=np.int64)):
        raise ValueError(f"array payload size {data.size} != shape {dims}")
    return data.reshape(dims).astype(np.float32)


def save_checkpoint(path, ckpt):
    sections = {"meta": json.dumps(
        {
            "adam_t": int(ckpt.adam_t),
            "analyzer_frozen": bool(ckpt.analyzer_frozen),
            "config": ckpt.config,
            "next_step": int(ckpt.next_step),
        },
        sort_keys=True, separators=(",", ":"),
    ).encode()}
    for name, t in ckpt.named_params():
        sections[name] = _encode_array(t.values)
    for name, arr in ckpt.adam_m.items():
        sections[f"adam.m.{name}"] = _encode_array(arr)
    for name, arr in ckpt.adam_v.items():
        sections[f"adam.v.{name}"] = _encode_array(arr)

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(sections)))
        for name in sorted(sections):
            raw = name.encode()
            f.write(struct.pack("<Q", len(raw)))
            f.write(raw)
            f.write(struct.pack("<Q", len(sections[name])))
            f.write(sections[name])
    return path


def _read_sections(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    off = len(MAGIC)
    (count,) = struct.unpack_from("<Q", blob, off)
    off += 8
    sections = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<Q", blob, off)
        off += 8
        name = blob[off : off + nlen].decode()
        off += nlen
        (plen,) = struct.unpack_from("<Q", blob, off)
        off += 8
        sections[name] = blob[off : off + plen]
        off += plen
    if off != len(blob):
        raise ValueError(f"{path}: {len(blob) - off} trailing bytes")
    return sections


def load_checkpoint(path):
    sections = _read_sections(path)
    if "meta" not in sections:
        raise ValueError(f"{path}: missing meta section")
    meta = json.loads(sections.pop("meta").decode())
    arrays = {name: _decode_array(payload) for name, payload in sections.items()}

    channels = arrays["entropy.matrix0"].shape[0]
    pre = _preprocessor.init_preprocessor(0)
    ent = _codec.init_entropy_model(channels=channels)
    ana = _analyzer.init_analyzer(0)
    ckpt = Checkpoint(
        preprocessor=pre,
        entropy=ent,
        analyzer=ana,
        analyzer_frozen=bool(meta["analyzer_frozen"]),
        adam_m={}, adam_v={}, adam_t=int(meta["adam_t"]),
        config=meta["config"],
        next_step=int(meta["next_step"]),
    )
    for name, t in ckpt.named_params():
        if name not in arrays:
            raise ValueError(f"{path}: missing section {name}")
        got = arrays.pop(name)
        if got.shape != t.values.shape:
            raise ValueError(
                f"{path}: {name} has shape {got.shape}, expected {t.values.shape}"
            )
        t.values = got
    for name, arr in arrays.items():
        if name.startswith("adam.m."):
            ckpt.adam_m[name[len("adam.m."):]] = arr
        elif name.startswith("adam.v."):
            ckpt.adam_v[name[len("adam.v."):]] = arr
        else:
            raise ValueError(f"{path}: unexpected section {name!r}")
    if set(ckpt.adam_m) != set(ckpt.adam_v):
        raise ValueError(f"{path}: Adam moment sections do not pair up")
    ckpt.analyzer.set_trainable(not ckpt.analyzer_frozen)
    return ckpt
