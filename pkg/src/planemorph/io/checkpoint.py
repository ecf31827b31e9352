# planemorph/io/checkpoint.py
"""
Model checkpoints: a JSON manifest at `path` plus a parameter blob at
`path + ".bin"`.

The blob starts with the 32-byte SHA-256 digest of the canonical config JSON,
followed by each parameter as little-endian float32 at its manifest offset.
Both files are written atomically.
"""
import hashlib
import json
import logging
import os
from typing import Any, Dict, Optional, Tuple

import numpy as np
import torch
from pydantic import ValidationError

from planemorph.common.exceptions import LibraryError
from planemorph.common.schemas import ModelConfig
from planemorph.common.torch_utils import resolve_device
from planemorph.io.jsonio import atomic_write_bytes, dumps_json
from planemorph.nn.network import RegistrationNet, build_model

logger = logging.getLogger(__name__)

FORMAT_NAME = "planemorph-checkpoint"
FORMAT_VERSION = 1
BLOB_SUFFIX = ".bin"
HASH_SIZE = 32
PARAM_DTYPE = np.dtype("<f4")


class CheckpointError(LibraryError, IOError):
    """Base error for checkpoint save/load."""
    pass


class CorruptManifestError(CheckpointError):
    """Manifest is unreadable or disagrees with the model it describes."""
    pass


class CheckpointSizeError(CheckpointError):
    """Blob size differs from what the manifest declares."""
    pass


class ConfigHashMismatchError(CheckpointError):
    """Blob was written for a different config than the manifest holds."""
    pass


def config_digest(cfg: ModelConfig) -> bytes:
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).digest()


def blob_path(path: str) -> str:
    return path + BLOB_SUFFIX


def save_checkpoint(model: RegistrationNet, path: str, metadata: Optional[Dict[str, Any]] = None) -> str:
    """
    Writes `model` to `path` (manifest) and `path + ".bin"` (parameters).

    Args:
        model (RegistrationNet): Model to persist.
        path (str): Manifest path.
        metadata (Optional[Dict[str, Any]]): Extra JSON-serializable info (epoch, step, ...).

    Returns:
        str: The manifest path.
    """
    cfg: ModelConfig = model.config
    digest = config_digest(cfg)
    chunks = [digest]
    entries: Dict[str, Dict[str, Any]] = {}
    offset = HASH_SIZE
    for name, param in model.named_parameters():
        array = param.detach().cpu().to(torch.float32).numpy().astype(PARAM_DTYPE, copy=False)
        raw = np.ascontiguousarray(array).tobytes(order="C")
        entries[name] = {"shape": list(param.shape), "offset": offset}
        chunks.append(raw)
        offset += len(raw)

    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": cfg.model_dump(mode="json"),
        "config_sha256": digest.hex(),
        "blob": os.path.basename(blob_path(path)),
        "blob_bytes": offset,
        "parameters": entries,
        "metadata": metadata or {},
    }
    try:
        atomic_write_bytes(blob_path(path), b"".join(chunks))
        atomic_write_bytes(path, dumps_json(manifest).encode("utf-8"))
    except OSError as e_os:
        raise CheckpointError(f"Cannot write checkpoint '{path}': {e_os}") from e_os
    logger.info("Saved checkpoint '%s' (%d parameter tensors, %d bytes).", path, len(entries), offset)
    return path


def _read_manifest(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e_json:
        raise CorruptManifestError(f"Checkpoint manifest '{path}' is not valid JSON: {e_json}") from e_json
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT_NAME:
        raise CorruptManifestError(f"'{path}' is not a {FORMAT_NAME} manifest.")
    if manifest.get("version") != FORMAT_VERSION:
        raise CorruptManifestError(f"'{path}' has unsupported version {manifest.get('version')}.")
    for key in ("config", "parameters", "blob_bytes"):
        if key not in manifest:
            raise CorruptManifestError(f"'{path}' lacks the '{key}' entry.")
    return manifest


def load_checkpoint_with_metadata(path: str) -> Tuple[RegistrationNet, Dict[str, Any]]:
    """
    Restores a model and the metadata stored with it.

    Raises:
        CorruptManifestError: Unreadable manifest, invalid config, unknown or
            missing parameter names, or shapes that disagree with the model.
        CheckpointSizeError: Blob length differs from the manifest.
        ConfigHashMismatchError: Blob digest differs from the manifest config.
    """
    manifest = _read_manifest(path)
    try:
        cfg = ModelConfig.model_validate(manifest["config"])
    except ValidationError as e_val:
        raise CorruptManifestError(f"'{path}' holds an invalid model config: {e_val}") from e_val

    bin_path = blob_path(path)
    try:
        with open(bin_path, "rb") as fh:
            blob = fh.read()
    except OSError as e_os:
        raise CheckpointError(f"Cannot read checkpoint blob '{bin_path}': {e_os}") from e_os

    model = build_model(cfg)
    params = dict(model.named_parameters())
    entries: Dict[str, Dict[str, Any]] = manifest["parameters"]
    unknown = sorted(set(entries) - set(params))
    missing = sorted(set(params) - set(entries))
    if unknown or missing:
        raise CorruptManifestError(f"'{path}' parameter names disagree with the model "
                                   f"(unknown={unknown[:3]}, missing={missing[:3]}).")

    expected_bytes = HASH_SIZE + sum(p.numel() for p in params.values()) * PARAM_DTYPE.itemsize
    if int(manifest["blob_bytes"]) != expected_bytes or len(blob) != expected_bytes:
        raise CheckpointSizeError(f"'{bin_path}' holds {len(blob)} bytes; expected {expected_bytes}.")
    if blob[:HASH_SIZE] != config_digest(cfg):
        raise ConfigHashMismatchError(f"'{bin_path}' was written for a different model config.")

    with torch.no_grad():
        for name, param in params.items():
            entry = entries[name]
            shape = tuple(int(n) for n in entry.get("shape", []))
            if shape != tuple(param.shape):
                raise CorruptManifestError(
                    f"'{path}': parameter '{name}' has shape {shape}, model expects {tuple(param.shape)}.")
            offset = int(entry.get("offset", -1))
            count = param.numel()
            if offset < HASH_SIZE or offset + count * PARAM_DTYPE.itemsize > len(blob):
                raise CorruptManifestError(f"'{path}': parameter '{name}' has an invalid offset {offset}.")
            values = np.frombuffer(blob, dtype=PARAM_DTYPE, count=count, offset=offset).reshape(shape)
            param.copy_(torch.from_numpy(values.copy()).to(param.dtype))
    logger.info("Loaded checkpoint '%s' (%s, %d parameter tensors).", path, cfg.variant, len(params))
    return model, dict(manifest.get("metadata") or {})


def load_checkpoint(path: str, device: Optional[str] = None) -> RegistrationNet:
    """
    Restores the model saved at `path` onto `device` (PLANEMORPH_DEVICE by default).

    See `load_checkpoint_with_metadata` for the errors raised.
    """
    model, _ = load_checkpoint_with_metadata(path)
    return model.to(resolve_device(device))
