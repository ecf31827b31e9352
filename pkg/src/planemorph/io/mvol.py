# planemorph/io/mvol.py
"""
Reader and writer for MVOL volume files.

Layout::

    b"MVOL" | version (1 byte) | header length (uint32 LE) | UTF-8 JSON header | payload

The header holds "dtype" ("f32" or "u16"), "shape" [H, W, D] and "spacing"
[sx, sy, sz]; deformation fields add "components": 3. The payload is the
little-endian array in (H, W, D[, 3]) row-major order.
"""
import json
import logging
import struct
from typing import Any, Dict, Union

import numpy as np

from planemorph.common.exceptions import LibraryError, ShapeMismatchError
from planemorph.data.volume import DeformationField, LabelMap, Volume

logger = logging.getLogger(__name__)

MAGIC = b"MVOL"
VERSION = 1
_LENGTH_STRUCT = struct.Struct("<I")
_PREAMBLE_SIZE = len(MAGIC) + 1 + _LENGTH_STRUCT.size

DTYPES: Dict[str, np.dtype] = {
    "f32": np.dtype("<f4"),
    "u16": np.dtype("<u2"),
}

MvolObject = Union[Volume, LabelMap, DeformationField]


class MvolError(LibraryError, IOError):
    """Base error for MVOL encoding and decoding."""
    pass


class BadMagicError(MvolError):
    """File does not start with the MVOL magic bytes."""
    pass


class UnsupportedVersionError(MvolError):
    pass


class UnsupportedDtypeError(MvolError):
    pass


class TruncatedPayloadError(MvolError):
    """File ends before the header or payload it declares."""
    pass


class MvolHeaderError(MvolError):
    """Header is not valid JSON or lacks required keys."""
    pass


class MvolWriteError(MvolError):
    pass


def _header_for(obj: MvolObject) -> Dict[str, Any]:
    header: Dict[str, Any] = {
        "dtype": "u16" if isinstance(obj, LabelMap) else "f32",
        "shape": [int(n) for n in obj.shape],
        "spacing": [float(s) for s in obj.spacing],
    }
    if isinstance(obj, DeformationField):
        header["components"] = 3
    return header


def encode_mvol(obj: MvolObject) -> bytes:
    """Serializes a volume, label map or deformation field to MVOL bytes."""
    header = _header_for(obj)
    expected = tuple(obj.shape) + ((3,) if isinstance(obj, DeformationField) else ())
    if tuple(obj.data.shape) != expected:
        raise ShapeMismatchError("payload shape does not match header shape",
                                 expected=expected, actual=obj.data.shape, parameter="data")
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(obj.data, dtype=DTYPES[header["dtype"]]).tobytes(order="C")
    return b"".join([MAGIC, bytes([VERSION]), _LENGTH_STRUCT.pack(len(header_bytes)), header_bytes, payload])


def write_mvol(path: str, obj: MvolObject) -> None:
    """
    Writes `obj` to `path` in MVOL format.

    Raises:
        ShapeMismatchError: If the payload does not match the declared shape.
        MvolWriteError: If the file cannot be written.
    """
    blob = encode_mvol(obj)
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as e_os:
        raise MvolWriteError(f"Cannot write MVOL file '{path}': {e_os}") from e_os
    logger.debug("Wrote MVOL '%s' (%s, shape=%s, %d bytes).", path,
                 type(obj).__name__, tuple(obj.shape), len(blob))


def decode_mvol(blob: bytes, source: str = "<bytes>") -> MvolObject:
    """Parses MVOL bytes; `source` only labels error messages."""
    if len(blob) < len(MAGIC) or blob[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"'{source}' is not an MVOL file (magic {blob[:len(MAGIC)]!r}).")
    if len(blob) < _PREAMBLE_SIZE:
        raise TruncatedPayloadError(f"'{source}' ends inside the preamble.")
    version = blob[len(MAGIC)]
    if version != VERSION:
        raise UnsupportedVersionError(f"'{source}' has unsupported MVOL version {version}.")
    (header_len,) = _LENGTH_STRUCT.unpack_from(blob, len(MAGIC) + 1)
    header_end = _PREAMBLE_SIZE + header_len
    if len(blob) < header_end:
        raise TruncatedPayloadError(f"'{source}' ends inside the header ({len(blob)} < {header_end} bytes).")

    try:
        header = json.loads(blob[_PREAMBLE_SIZE:header_end].decode("utf-8"))
        dtype_key = header["dtype"]
        shape = tuple(int(n) for n in header["shape"])
        spacing = tuple(float(s) for s in header["spacing"])
        components = int(header.get("components", 1))
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e_hdr:
        raise MvolHeaderError(f"'{source}' has a malformed header: {e_hdr}") from e_hdr
    if dtype_key not in DTYPES:
        raise UnsupportedDtypeError(f"'{source}' declares unsupported dtype '{dtype_key}'.")
    if len(shape) != 3 or len(spacing) != 3 or components not in (1, 3):
        raise MvolHeaderError(f"'{source}' declares shape={shape}, spacing={spacing}, components={components}.")
    if components == 3 and dtype_key != "f32":
        raise UnsupportedDtypeError(f"'{source}': deformation fields must be f32, got '{dtype_key}'.")

    dtype = DTYPES[dtype_key]
    full_shape = shape + ((3,) if components == 3 else ())
    n_bytes = int(np.prod(full_shape)) * dtype.itemsize
    available = len(blob) - header_end
    if available < n_bytes:
        raise TruncatedPayloadError(
            f"'{source}' payload is truncated: {available} of {n_bytes} bytes present.")
    if available > n_bytes:
        raise MvolHeaderError(f"'{source}' has {available - n_bytes} trailing bytes after the payload.")

    data = np.frombuffer(blob, dtype=dtype, count=int(np.prod(full_shape)), offset=header_end)
    data = data.reshape(full_shape)
    if components == 3:
        return DeformationField(shape=shape, spacing=spacing, data=data)
    if dtype_key == "u16":
        return LabelMap(shape=shape, spacing=spacing, data=data)
    return Volume(shape=shape, spacing=spacing, data=data)


def read_mvol(path: str) -> MvolObject:
    """
    Reads an MVOL file.

    Returns:
        Volume, LabelMap or DeformationField depending on the header.

    Raises:
        BadMagicError, UnsupportedVersionError, UnsupportedDtypeError,
        TruncatedPayloadError, MvolHeaderError: For malformed files.
        FileNotFoundError: If `path` does not exist.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    obj = decode_mvol(blob, source=path)
    logger.debug("Read MVOL '%s' (%s, shape=%s).", path, type(obj).__name__, tuple(obj.shape))
    return obj


def read_volume(path: str) -> Volume:
    obj = read_mvol(path)
    if not isinstance(obj, Volume):
        raise MvolHeaderError(f"'{path}' holds a {type(obj).__name__}, expected an f32 volume.")
    return obj


def read_label_map(path: str) -> LabelMap:
    obj = read_mvol(path)
    if not isinstance(obj, LabelMap):
        raise MvolHeaderError(f"'{path}' holds a {type(obj).__name__}, expected a u16 label map.")
    return obj


def read_field(path: str) -> DeformationField:
    obj = read_mvol(path)
    if not isinstance(obj, DeformationField):
        raise MvolHeaderError(f"'{path}' holds a {type(obj).__name__}, expected a deformation field.")
    return obj
