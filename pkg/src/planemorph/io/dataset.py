# planemorph/io/dataset.py
"""
Dataset directories: a ``manifest.json`` listing MVOL files and landmark JSON
files per registration pair.
"""
import logging
import os
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from planemorph.common.exceptions import LibraryError
from planemorph.data.volume import LandmarkSet, RegistrationPair
from planemorph.io.jsonio import read_json, write_json
from planemorph.io.mvol import read_field, read_label_map, read_volume

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


class DatasetError(LibraryError, IOError):
    """Raised when a dataset directory or its manifest cannot be used."""
    pass


class PairEntry(BaseModel):
    """Files of one pair, relative to the dataset directory."""
    model_config = ConfigDict(extra="forbid")

    name: str
    fixed: str
    moving: str
    seg_fixed: Optional[str] = None
    seg_moving: Optional[str] = None
    landmarks: Optional[str] = None
    gt_field: Optional[str] = None


class DatasetManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: int = 1
    generator: Dict[str, object] = Field(default_factory=dict)
    pairs: List[PairEntry]


# --- Landmarks ---

def landmarks_to_json(landmarks: LandmarkSet) -> Dict[str, list]:
    return {"ids": [int(i) for i in landmarks.ids],
            "points": [[float(c) for c in p] for p in landmarks.points]}


def landmarks_from_json(doc: Dict[str, list]) -> LandmarkSet:
    return LandmarkSet(points=doc["points"], ids=[int(i) for i in doc["ids"]])


def save_landmarks(path: str, fixed: LandmarkSet, moving: LandmarkSet) -> None:
    """Writes corresponding fixed/moving landmark sets to one JSON file."""
    write_json(path, {"fixed": landmarks_to_json(fixed), "moving": landmarks_to_json(moving)})


def load_landmarks(path: str) -> Tuple[LandmarkSet, LandmarkSet]:
    try:
        doc = read_json(path)
        return landmarks_from_json(doc["fixed"]), landmarks_from_json(doc["moving"])
    except (KeyError, TypeError, ValueError) as e_doc:
        raise DatasetError(f"Malformed landmark file '{path}': {e_doc}") from e_doc


# --- Manifest ---

def write_manifest(directory: str, manifest: DatasetManifest) -> str:
    path = os.path.join(directory, MANIFEST_NAME)
    write_json(path, manifest.model_dump(mode="json"))
    return path


def read_manifest(directory: str) -> DatasetManifest:
    path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(path):
        raise DatasetError(f"No {MANIFEST_NAME} in dataset directory '{directory}'.")
    try:
        return DatasetManifest.model_validate(read_json(path))
    except (ValueError, ValidationError) as e_val:
        raise DatasetError(f"Invalid manifest '{path}': {e_val}") from e_val


def load_pair(directory: str, entry: PairEntry) -> RegistrationPair:
    """Reads every file of one manifest entry."""
    def _path(rel: str) -> str:
        return os.path.join(directory, rel)

    seg_fixed = read_label_map(_path(entry.seg_fixed)) if entry.seg_fixed else None
    seg_moving = read_label_map(_path(entry.seg_moving)) if entry.seg_moving else None
    lm_fixed = lm_moving = None
    if entry.landmarks:
        lm_fixed, lm_moving = load_landmarks(_path(entry.landmarks))
    return RegistrationPair(
        name=entry.name,
        fixed=read_volume(_path(entry.fixed)),
        moving=read_volume(_path(entry.moving)),
        seg_fixed=seg_fixed,
        seg_moving=seg_moving,
        landmarks_fixed=lm_fixed,
        landmarks_moving=lm_moving,
    )


def load_dataset(directory: str) -> List[RegistrationPair]:
    """
    Loads all pairs listed in ``<directory>/manifest.json``.

    Raises:
        DatasetError: If the manifest is missing, invalid or lists no pairs.
    """
    manifest = read_manifest(directory)
    if not manifest.pairs:
        raise DatasetError(f"Manifest in '{directory}' lists no pairs.")
    pairs = [load_pair(directory, entry) for entry in manifest.pairs]
    logger.info("Loaded %d pairs from '%s'.", len(pairs), directory)
    return pairs


def load_gt_field(directory: str, entry: PairEntry):
    """Returns the ground-truth field of a synthetic pair, or None."""
    if not entry.gt_field:
        return None
    return read_field(os.path.join(directory, entry.gt_field))
