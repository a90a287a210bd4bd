"""
Checkpoint objects for splatproto.

Layout of a checkpoint file:

    b"SPLATPRO" | uint16 version | uint32 header length | JSON header | zlib(payload)

The header holds the object type, the sha1 of the uncompressed payload, the
array index and free-form metadata. The payload is the concatenation of the
arrays in .npy format, so identical objects produce identical bytes.
"""

import hashlib
import io
import json
import struct
import zlib
from collections import OrderedDict
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from .backbone import BackboneHyper, BackboneParams
from .disentangler import Curriculum, DisentangleState, PrototypeRegistry
from .errors import CheckpointError

MAGIC = b"SPLATPRO"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<HI")


class CheckpointObject:
    """Base class for checkpoint objects."""

    obj_type = ""

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        raise NotImplementedError

    def meta(self) -> Dict[str, Any]:
        raise NotImplementedError

    @classmethod
    def from_parts(cls, arrays: Dict[str, np.ndarray], meta: Dict[str, Any]):
        raise NotImplementedError

    def serialize(self) -> bytes:
        """Serialize object to bytes."""
        payload = io.BytesIO()
        index = []
        for name, array in self.arrays().items():
            start = payload.tell()
            np.lib.format.write_array(payload, np.ascontiguousarray(array), allow_pickle=False)
            index.append([name, start, payload.tell() - start])
        raw = payload.getvalue()
        header = json.dumps({
            "type": self.obj_type,
            "payload_sha1": hashlib.sha1(raw).hexdigest(),
            "arrays": index,
            "meta": self.meta(),
        }, sort_keys=True).encode("utf-8")
        return MAGIC + _PREAMBLE.pack(FORMAT_VERSION, len(header)) + header + zlib.compress(raw)

    def hash(self) -> str:
        """SHA-1 of the serialized object."""
        return hashlib.sha1(self.serialize()).hexdigest()


def _parse(data: bytes) -> Tuple[Dict[str, Any], "OrderedDict[str, np.ndarray]"]:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a splatproto checkpoint (bad magic)")
    offset = len(MAGIC)
    try:
        version, header_len = _PREAMBLE.unpack_from(data, offset)
    except struct.error:
        raise CheckpointError("truncated checkpoint header")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    offset += _PREAMBLE.size
    try:
        header = json.loads(data[offset:offset + header_len].decode("utf-8"))
        raw = zlib.decompress(data[offset + header_len:])
    except (ValueError, zlib.error) as e:
        raise CheckpointError(f"corrupt checkpoint: {e}")
    if hashlib.sha1(raw).hexdigest() != header["payload_sha1"]:
        raise CheckpointError("checkpoint payload checksum mismatch")

    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, start, length in header["arrays"]:
        arrays[name] = np.lib.format.read_array(io.BytesIO(raw[start:start + length]),
                                                allow_pickle=False)
    return header, arrays


class BackboneCheckpoint(CheckpointObject):
    """Stage-1 weights with their hyper block and seed."""

    obj_type = "backbone"

    def __init__(self, params: BackboneParams):
        self.params = params

    def arrays(self):
        return self.params.arrays

    def meta(self):
        return {"hyper": asdict(self.params.hyper), "seed": self.params.seed}

    @classmethod
    def from_parts(cls, arrays, meta):
        params = BackboneParams(OrderedDict(arrays), BackboneHyper(**meta["hyper"]), seed=meta["seed"])
        return cls(params)


class DisentangleCheckpoint(CheckpointObject):
    """Stage-2 rotation, compensated classifier, registry and curriculum."""

    obj_type = "disentangle"

    def __init__(self, state: DisentangleState):
        self.state = state

    def arrays(self):
        return OrderedDict([("P", self.state.P), ("U", self.state.U), ("W_prime", self.state.W_prime)])

    def meta(self):
        s = self.state
        return {
            "registry": s.registry.to_dict(),
            "curriculum": asdict(s.curriculum),
            "eps": s.eps,
            "backbone_hash": s.backbone_hash,
            "epochs_run": s.epochs_run,
            "purity_history": [list(item) for item in s.purity_history],
        }

    @classmethod
    def from_parts(cls, arrays, meta):
        return cls(DisentangleState(
            P=arrays["P"],
            U=arrays["U"],
            W_prime=arrays["W_prime"],
            registry=PrototypeRegistry.from_dict(meta["registry"]),
            curriculum=Curriculum(**meta["curriculum"]),
            eps=meta["eps"],
            backbone_hash=meta["backbone_hash"],
            epochs_run=meta["epochs_run"],
            purity_history=[(int(e), float(p)) for e, p in meta["purity_history"]],
        ))


OBJECT_TYPES = {cls.obj_type: cls for cls in (BackboneCheckpoint, DisentangleCheckpoint)}


def write_checkpoint(path: Union[str, Path], obj: CheckpointObject) -> str:
    """
    Write a checkpoint object to disk.

    Args:
        path: Destination file
        obj: Object to write

    Returns:
        SHA-1 hash of the written bytes
    """
    data = obj.serialize()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(data)
    return hashlib.sha1(data).hexdigest()


def read_checkpoint(path: Union[str, Path], expected_type: str = None) -> CheckpointObject:
    """
    Read a checkpoint object, verifying magic, version and checksum.

    Args:
        path: Checkpoint file
        expected_type: Raise unless the stored type matches

    Returns:
        Deserialized object
    """
    with open(path, "rb") as f:
        data = f.read()
    header, arrays = _parse(data)
    obj_type = header["type"]
    if expected_type and obj_type != expected_type:
        raise CheckpointError(f"{path}: expected a {expected_type} checkpoint, found {obj_type}")
    if obj_type not in OBJECT_TYPES:
        raise CheckpointError(f"Unknown checkpoint type: {obj_type}")
    return OBJECT_TYPES[obj_type].from_parts(arrays, header["meta"])
