"""
Binary model files.

Layout (all integers little-endian):

    b"SFCN" | version: uint32 | header length: uint64 | JSON header | payload

The JSON header holds the architecture, indicator names, slot order, norm stats
 and a tensor manifest of {name, shape, offset, length}, with offset and length
 in bytes relative to the start of the payload. The payload is the tensors in
 manifest order as little-endian float64.
"""
import io
import json
import logging
import struct
import typing as ty
from dataclasses import dataclass

import numpy as np
import pydantic

from sfcnn.errors import (
    BadMagicError,
    ModelFileError,
    NonFiniteValueError,
    PayloadLengthMismatchError,
    ShapeChainError,
    ShapeMismatchError,
    UnsupportedVersionError,
)
from sfcnn.ingest import Level, NormStats
from sfcnn.model.architecture import Architecture
from sfcnn.model.network import ModelParams

logger = logging.getLogger(__name__)

MAGIC = b"SFCN"
VERSION = 1
PAYLOAD_DTYPE = np.dtype("<f8")
_PREAMBLE = struct.Struct("<4sIQ")


@dataclass
class ModelBundle:
    params: ModelParams
    arch: Architecture
    norm_stats: NormStats
    indicator_names: ty.List[str]


def _header(
    params: ModelParams, norm_stats: NormStats, indicator_names: ty.Sequence[str]
) -> dict:
    manifest = []
    offset = 0
    for name, tensor in params.tensors.items():
        length = tensor.size * PAYLOAD_DTYPE.itemsize
        manifest.append({"name": name, "shape": list(tensor.shape), "offset": offset, "length": length})
        offset += length
    return {
        "architecture": params.arch.dump(),
        "indicator_names": list(indicator_names),
        "slot_order": [level.value for level in norm_stats.slot_levels],
        "norm_stats": norm_stats.to_dict(),
        "tensors": manifest,
    }


def save_model(
    params: ModelParams,
    arch: Architecture,
    norm_stats: NormStats,
    sink: ty.BinaryIO,
    indicator_names: ty.Optional[ty.Sequence[str]] = None,
) -> None:
    if params.arch != arch:
        raise ShapeMismatchError("Parameters were built for a different architecture")
    if norm_stats.d != arch.d or len(norm_stats.slot_levels) != arch.num_slots:
        raise ShapeMismatchError(
            f"Norm stats ({len(norm_stats.slot_levels)} slots, d={norm_stats.d}) do not match"
            f" architecture ({arch.num_slots} slots, d={arch.d})"
        )
    if indicator_names is None:
        indicator_names = [f"ind_{i:02d}" for i in range(arch.d)]
    if len(indicator_names) != arch.d:
        raise ShapeMismatchError(f"{len(indicator_names)} indicator names for d={arch.d}")
    for name, tensor in params.tensors.items():
        if not np.all(np.isfinite(tensor)):
            raise NonFiniteValueError(f"Tensor {name!r} holds non-finite values")

    header = json.dumps(_header(params, norm_stats, indicator_names), sort_keys=True).encode("utf-8")
    sink.write(_PREAMBLE.pack(MAGIC, VERSION, len(header)))
    sink.write(header)
    for tensor in params.tensors.values():
        sink.write(np.ascontiguousarray(tensor, dtype=PAYLOAD_DTYPE).tobytes())


def dumps_model(
    params: ModelParams, norm_stats: NormStats, indicator_names: ty.Optional[ty.Sequence[str]] = None
) -> bytes:
    buffer = io.BytesIO()
    save_model(params, params.arch, norm_stats, buffer, indicator_names)
    return buffer.getvalue()


def _read_exact(source: ty.BinaryIO, size: int, what: str) -> bytes:
    data = source.read(size)
    if len(data) != size:
        raise PayloadLengthMismatchError(f"Truncated {what}: expected {size} bytes, got {len(data)}")
    return data


def _parse_header(raw: bytes) -> ty.Tuple[Architecture, NormStats, ty.List[str], ty.List[dict]]:
    try:
        header = json.loads(raw.decode("utf-8"))
        arch = Architecture(**header["architecture"])
        norm_stats = NormStats.from_dict(header["norm_stats"])
        slot_order = tuple(Level(level) for level in header["slot_order"])
        indicator_names = [str(name) for name in header["indicator_names"]]
        manifest = list(header["tensors"])
    except (pydantic.ValidationError, ShapeChainError) as exc:
        raise ModelFileError(f"Malformed architecture in model header: {exc}") from exc
    except (UnicodeDecodeError, KeyError, TypeError, ValueError, ShapeMismatchError) as exc:
        raise ModelFileError(f"Malformed model header: {exc}") from exc

    if slot_order != norm_stats.slot_levels:
        raise ModelFileError(f"Slot order {slot_order} != norm stats slots {norm_stats.slot_levels}")
    if not (np.all(np.isfinite(norm_stats.mean)) and np.all(np.isfinite(norm_stats.std))):
        raise NonFiniteValueError("Norm stats hold non-finite values")
    if norm_stats.d != arch.d or len(norm_stats.slot_levels) != arch.num_slots:
        raise ModelFileError("Norm stats do not match the stored architecture")
    if len(indicator_names) != arch.d:
        raise ModelFileError(f"{len(indicator_names)} indicator names for d={arch.d}")
    return arch, norm_stats, indicator_names, manifest


def load_bundle(source: ty.BinaryIO) -> ModelBundle:
    preamble = source.read(_PREAMBLE.size)
    if len(preamble) < 4 or preamble[:4] != MAGIC:
        raise BadMagicError(f"Not a model file: magic {preamble[:4]!r} != {MAGIC!r}")
    if len(preamble) != _PREAMBLE.size:
        raise PayloadLengthMismatchError("Truncated model file preamble")
    _, version, header_length = _PREAMBLE.unpack(preamble)
    if version != VERSION:
        raise UnsupportedVersionError(f"Unsupported model file version {version}, expected {VERSION}")

    arch, norm_stats, indicator_names, manifest = _parse_header(
        _read_exact(source, header_length, "header")
    )
    payload = source.read()

    shapes = arch.tensor_shapes()
    if [entry.get("name") for entry in manifest] != list(shapes):
        raise ModelFileError(
            f"Manifest tensors {[entry.get('name') for entry in manifest]} != expected {list(shapes)}"
        )
    expected_length = sum(int(entry["length"]) for entry in manifest)
    if len(payload) != expected_length:
        raise PayloadLengthMismatchError(
            f"Payload length mismatch: manifest declares {expected_length} bytes, file has {len(payload)}"
        )

    tensors = {}
    for entry in manifest:
        name, shape = entry["name"], tuple(entry["shape"])
        offset, length = int(entry["offset"]), int(entry["length"])
        if shape != shapes[name] or length != int(np.prod(shape)) * PAYLOAD_DTYPE.itemsize:
            raise ModelFileError(f"Manifest entry {name!r} does not match the architecture")
        if offset < 0 or offset + length > len(payload):
            raise PayloadLengthMismatchError(f"Tensor {name!r} lies outside the payload")
        tensor = np.frombuffer(payload, dtype=PAYLOAD_DTYPE, count=length // 8, offset=offset)
        tensor = tensor.astype(np.float64).reshape(shape)
        if not np.all(np.isfinite(tensor)):
            raise NonFiniteValueError(f"Tensor {name!r} holds non-finite values")
        tensors[name] = tensor

    return ModelBundle(
        params=ModelParams(arch=arch, tensors=tensors),
        arch=arch,
        norm_stats=norm_stats,
        indicator_names=indicator_names,
    )


def load_model(source: ty.BinaryIO) -> ty.Tuple[ModelParams, Architecture, NormStats]:
    bundle = load_bundle(source)
    return bundle.params, bundle.arch, bundle.norm_stats


def save_model_file(
    path: str,
    params: ModelParams,
    norm_stats: NormStats,
    indicator_names: ty.Optional[ty.Sequence[str]] = None,
) -> None:
    with open(path, "wb") as fd:
        save_model(params, params.arch, norm_stats, fd, indicator_names)
    logger.debug(f"Saved model to {path}")


def load_model_file(path: str) -> ModelBundle:
    with open(path, "rb") as fd:
        return load_bundle(fd)
