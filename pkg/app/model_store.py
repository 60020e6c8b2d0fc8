"""
Self-describing model files.

Byte layout (all integers little-endian):

    offset      size  content
    0           8     magic b"RKMODEL\\0"
    8           4     uint32 format version
    12          8     uint64 header length H
    20          H     UTF-8 JSON header (ModelHeader)
    20+H        P     raw tensor payload, little-endian, C order
    20+H+P      32    SHA-256 of bytes [0, 20+H+P)

Tensor offsets in the header are relative to the start of the payload.
"""
import hashlib
import logging
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from .exceptions import ModelChecksumError, ModelFileError, ModelShapeError, ModelVersionError, ShapeMismatchError
from .layers import build_layer
from .network import Network
from .preprocessing import PreprocessTransform, TransformKind

logger = logging.getLogger(__name__)

MAGIC = b"RKMODEL\0"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<8sIQ")
_DIGEST_BYTES = 32
_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}


class TensorEntry(BaseModel):
    name: str
    shape: List[int]
    offset: int = Field(ge=0)
    nbytes: int = Field(ge=0)


class LayerEntry(BaseModel):
    kind: str
    hyperparameters: Dict[str, Any] = {}
    tensors: List[TensorEntry] = []


class TransformEntry(BaseModel):
    kind: TransformKind = TransformKind.IDENTITY
    tensors: List[TensorEntry] = []


class Provenance(BaseModel):
    architecture: Optional[str] = None
    training_seed: Optional[int] = None
    epochs: Optional[int] = None
    train_accuracy: Optional[float] = None
    loss_curve: List[float] = []


class ModelHeader(BaseModel):
    input_shape: List[int]
    num_classes: int = Field(ge=1)
    dtype: Literal["float32", "float64"]
    layers: List[LayerEntry]
    transform: TransformEntry
    provenance: Provenance = Provenance()
    payload_bytes: int = Field(ge=0)


@dataclass(frozen=True)
class LoadedModel:
    network: Network
    transform: PreprocessTransform
    header: ModelHeader


class _PayloadWriter:
    def __init__(self):
        self.chunks: List[bytes] = []
        self.size = 0

    def add(self, name: str, array: np.ndarray, dtype: np.dtype) -> TensorEntry:
        data = np.ascontiguousarray(array, dtype=dtype).tobytes()
        entry = TensorEntry(name=name, shape=list(array.shape), offset=self.size, nbytes=len(data))
        self.chunks.append(data)
        self.size += len(data)
        return entry


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def save_model(network: Network, transform: Optional[PreprocessTransform], path: Union[str, Path],
               provenance: Optional[Provenance] = None) -> Path:
    """Write ``network`` and its pre-processing to ``path`` (written to a temp file, then renamed)."""
    path = Path(path)
    transform = transform or PreprocessTransform.identity()
    dtype_name = network.dtype.name
    if dtype_name not in _DTYPES:
        raise ModelFileError(f"unsupported parameter dtype {dtype_name}")
    payload = _PayloadWriter()
    layers = []
    for layer in network.layers:
        tensors = [payload.add(name, value, _DTYPES[dtype_name]) for name, value in layer.params.items()]
        layers.append(LayerEntry(kind=layer.kind, hyperparameters=layer.hyperparameters(), tensors=tensors))
    transform_tensors = [payload.add(name, getattr(transform, name), _DTYPES["float64"])
                         for name in ("mean", "std") if getattr(transform, name) is not None]
    header = ModelHeader(
        input_shape=list(network.input_shape),
        num_classes=network.num_classes,
        dtype=dtype_name,
        layers=layers,
        transform=TransformEntry(kind=transform.kind, tensors=transform_tensors),
        provenance=provenance or Provenance(),
        payload_bytes=payload.size,
    )
    header_bytes = header.model_dump_json().encode("utf-8")
    body = _PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header_bytes)) + header_bytes + b"".join(payload.chunks)
    _atomic_write(path, body + hashlib.sha256(body).digest())
    logger.info("Saved model (%d parameters) to %s", network.parameter_count(), path)
    return path


def _tensor(payload: bytes, entry: TensorEntry, dtype: np.dtype) -> np.ndarray:
    expected = int(np.prod(entry.shape, dtype=np.int64)) * dtype.itemsize
    if entry.nbytes != expected or entry.offset + entry.nbytes > len(payload):
        raise ModelShapeError(f"tensor {entry.name!r}: declared shape {entry.shape} does not match "
                              f"{entry.nbytes} stored bytes at offset {entry.offset}")
    data = np.frombuffer(payload, dtype=dtype, count=expected // dtype.itemsize, offset=entry.offset)
    return data.reshape(entry.shape).astype(dtype.newbyteorder("="))


def read_model_file(path: Union[str, Path]) -> LoadedModel:
    """Parse and verify a model file; nothing is returned unless every check passes."""
    path = Path(path)
    if not path.is_file():
        raise ModelFileError(f"model file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _PREAMBLE.size + _DIGEST_BYTES:
        raise ModelFileError(f"{path}: file too short to be a model file")
    magic, version, header_len = _PREAMBLE.unpack_from(raw)
    if magic != MAGIC:
        raise ModelFileError(f"{path}: not a model file (bad magic)")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"{path}: format version {version} is not supported (expected {FORMAT_VERSION})")
    body, digest = raw[:-_DIGEST_BYTES], raw[-_DIGEST_BYTES:]
    if hashlib.sha256(body).digest() != digest:
        raise ModelChecksumError(f"{path}: checksum mismatch, file is corrupted")

    header_end = _PREAMBLE.size + header_len
    try:
        header = ModelHeader.model_validate_json(body[_PREAMBLE.size:header_end])
    except ValidationError as exc:
        raise ModelFileError(f"{path}: invalid header: {exc}") from exc
    payload = body[header_end:]
    if len(payload) != header.payload_bytes:
        raise ModelShapeError(f"{path}: payload has {len(payload)} bytes, header declares {header.payload_bytes}")

    dtype = _DTYPES[header.dtype]
    try:
        layers = [
            build_layer(entry.kind, {t.name: _tensor(payload, t, dtype) for t in entry.tensors}, entry.hyperparameters)
            for entry in header.layers
        ]
        network = Network(layers, header.input_shape, header.num_classes, dtype=dtype.newbyteorder("="))
    except ShapeMismatchError as exc:
        raise ModelShapeError(f"{path}: {exc}") from exc
    stats = {t.name: _tensor(payload, t, _DTYPES["float64"]) for t in header.transform.tensors}
    transform = PreprocessTransform(header.transform.kind, **stats)
    return LoadedModel(network, transform, header)


def load_model(path: Union[str, Path]) -> Tuple[Network, PreprocessTransform]:
    loaded = read_model_file(path)
    return loaded.network, loaded.transform


def summarize_model(loaded: LoadedModel) -> Dict[str, Any]:
    """Topology, trainable parameter counts, pre-processing and provenance of a loaded model."""
    network = loaded.network
    layers = [
        {"index": index, "kind": layer.kind, "hyperparameters": layer.hyperparameters(),
         "parameters": layer.parameter_count()}
        for index, layer in enumerate(network.layers)
    ]
    return {
        "input_shape": list(network.input_shape),
        "num_classes": network.num_classes,
        "dtype": loaded.header.dtype,
        "layers": layers,
        "total_parameters": network.parameter_count(),
        "transform": loaded.transform.describe(),
        "provenance": loaded.header.provenance.model_dump(),
    }
