# planemorph/io/__init__.py
"""
File formats: MVOL volumes, dataset manifests, landmark JSON and checkpoints.
"""
from .mvol import (
    read_mvol,
    write_mvol,
    read_volume,
    read_label_map,
    read_field,
    MvolError,
    BadMagicError,
    UnsupportedVersionError,
    UnsupportedDtypeError,
    TruncatedPayloadError,
    MvolHeaderError,
    MvolWriteError,
)
from .dataset import (
    DatasetError,
    DatasetManifest,
    PairEntry,
    load_dataset,
    read_manifest,
    write_manifest,
    save_landmarks,
    load_landmarks,
)
from .checkpoint import (
    save_checkpoint,
    load_checkpoint,
    load_checkpoint_with_metadata,
    CheckpointError,
    CorruptManifestError,
    CheckpointSizeError,
    ConfigHashMismatchError,
)
from .jsonio import write_json, read_json, write_csv

__all__ = [
    "read_mvol",
    "write_mvol",
    "read_volume",
    "read_label_map",
    "read_field",
    "MvolError",
    "BadMagicError",
    "UnsupportedVersionError",
    "UnsupportedDtypeError",
    "TruncatedPayloadError",
    "MvolHeaderError",
    "MvolWriteError",
    "DatasetError",
    "DatasetManifest",
    "PairEntry",
    "load_dataset",
    "read_manifest",
    "write_manifest",
    "save_landmarks",
    "load_landmarks",
    "save_checkpoint",
    "load_checkpoint",
    "load_checkpoint_with_metadata",
    "CheckpointError",
    "CorruptManifestError",
    "CheckpointSizeError",
    "ConfigHashMismatchError",
    "write_json",
    "read_json",
    "write_csv",
]
