# planemorph/data/phantoms.py
"""
Synthetic anatomies and smooth ground-truth deformations.

Phantoms are sums of Gaussian blobs (std = size/8 per axis). Label k marks the
voxels where blob k dominates and exceeds LABEL_THRESHOLD; landmarks are the
blob centers.
"""
import logging
from typing import Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from planemorph.common.exceptions import InvalidParameterError
from planemorph.data.volume import DeformationField, LabelMap, LandmarkSet, Volume, normalize

logger = logging.getLogger(__name__)

LABEL_THRESHOLD = 0.2
MIN_PHANTOM_SIZE = 8
MIN_PEAK_SEPARATION = 2.0  # in units of blob std
AMPLITUDE_RANGE = (0.6, 1.0)
MAX_PLACEMENT_ATTEMPTS = 2000


def _check_size(size: Sequence[int], minimum: int) -> Tuple[int, int, int]:
    if len(size) != 3:
        raise InvalidParameterError(f"size must have three axes, got {tuple(size)}", parameter="size")
    dims = tuple(int(n) for n in size)
    if any(n < minimum for n in dims):
        raise InvalidParameterError(f"size must be >= {minimum} per axis, got {dims}", parameter="size")
    return dims


def _place_centers(rng: np.random.Generator, dims: Tuple[int, int, int],
                   sigma: np.ndarray, n_blobs: int) -> np.ndarray:
    """Draws integer blob centers whose peaks are at least MIN_PEAK_SEPARATION stds apart."""
    margin = np.ceil(2.0 * sigma).astype(int)
    low = margin
    high = np.asarray(dims) - 1 - margin
    if np.any(high < low):
        raise InvalidParameterError(f"size {dims} is too small to place blobs", parameter="size")

    centers = []
    attempts = 0
    while len(centers) < n_blobs:
        attempts += 1
        if attempts > MAX_PLACEMENT_ATTEMPTS * n_blobs:
            raise InvalidParameterError(
                f"size {dims} is too small to place {n_blobs} non-overlapping blobs",
                parameter="n_labels")
        candidate = rng.integers(low, high + 1)
        if all(np.linalg.norm((candidate - c) / sigma) >= MIN_PEAK_SEPARATION for c in centers):
            centers.append(candidate)
    return np.asarray(centers, dtype=np.int64)


def gen_phantom(seed: int, size: Sequence[int], n_labels: int) -> Tuple[Volume, LabelMap, LandmarkSet]:
    """
    Generates a blob phantom with labels and landmarks.

    Args:
        seed (int): RNG seed; outputs are a pure function of the arguments.
        size (Sequence[int]): Grid shape (H, W, D), each >= 8.
        n_labels (int): Number of blobs (and foreground labels), >= 1.

    Returns:
        Tuple[Volume, LabelMap, LandmarkSet]: Intensity in [0, 1], labels 0..n_labels,
        one landmark per blob with ids 1..n_labels.

    Raises:
        InvalidParameterError: If n_labels < 1, the size is too small, or the blobs
            cannot be placed without overlapping peaks.
    """
    if n_labels < 1:
        raise InvalidParameterError(f"n_labels must be >= 1, got {n_labels}", parameter="n_labels")
    dims = _check_size(size, MIN_PHANTOM_SIZE)
    rng = np.random.default_rng(seed)
    sigma = np.asarray(dims, dtype=np.float64) / 8.0

    centers = _place_centers(rng, dims, sigma, n_labels)
    amplitudes = rng.uniform(*AMPLITUDE_RANGE, size=n_labels)

    grid = np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij")
    blobs = np.empty((n_labels,) + dims, dtype=np.float64)
    for k in range(n_labels):
        r2 = sum(((grid[a] - centers[k, a]) / sigma[a]) ** 2 for a in range(3))
        blobs[k] = amplitudes[k] * np.exp(-0.5 * r2)

    intensity = normalize(Volume.from_array(blobs.sum(axis=0)))
    dominant = np.argmax(blobs, axis=0)
    peak = np.max(blobs, axis=0)
    labels = np.where(peak > LABEL_THRESHOLD, dominant + 1, 0)

    label_map = LabelMap.from_array(labels, n_labels=n_labels)
    landmarks = LandmarkSet(points=centers.astype(np.float64), ids=list(range(1, n_labels + 1)))
    logger.debug("Phantom seed=%d size=%s: centers=%s", seed, dims, centers.tolist())
    return intensity, label_map, landmarks


def gen_smooth_field(seed: int, size: Sequence[int], max_disp: float, sigma: float) -> DeformationField:
    """
    Generates a smooth random displacement field.

    White noise per component is Gaussian-smoothed with std `sigma` and rescaled
    so that the largest component magnitude equals `max_disp`.
    """
    if max_disp < 0:
        raise InvalidParameterError(f"max_disp must be >= 0, got {max_disp}", parameter="max_disp")
    if sigma <= 0:
        raise InvalidParameterError(f"sigma must be > 0, got {sigma}", parameter="sigma")
    dims = _check_size(size, 1)

    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((3,) + dims)
    smooth = np.stack([gaussian_filter(noise[a], sigma=sigma, mode="reflect") for a in range(3)], axis=-1)

    peak = float(np.max(np.abs(smooth)))
    if max_disp == 0 or peak == 0.0:
        data = np.zeros(dims + (3,), dtype=np.float32)
    else:
        data = smooth * (max_disp / peak)
    return DeformationField(shape=dims, data=data)
