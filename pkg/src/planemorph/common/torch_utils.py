# planemorph/common/torch_utils.py
"""
Common torch runtime utilities: seeding, thread caps and determinism.
"""
import logging
import random
from typing import Optional

import numpy as np
import torch

from planemorph.config import THREADS, DEVICE, DETERMINISTIC

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = torch.float32
"""Parameter and activation dtype used everywhere except 64-bit gradient checks."""


def seed_everything(seed: int) -> None:
    """Seeds python, numpy and torch RNGs."""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)


def configure_runtime(threads: Optional[int] = None, deterministic: Optional[bool] = None) -> int:
    """
    Applies thread and determinism settings to torch.

    Args:
        threads (Optional[int]): Intra-op thread count. Defaults to PLANEMORPH_THREADS.
        deterministic (Optional[bool]): Force deterministic kernels. Defaults to
            PLANEMORPH_DETERMINISTIC.

    Returns:
        int: The thread count that was applied.
    """
    n_threads = threads if threads is not None else THREADS
    use_det = DETERMINISTIC if deterministic is None else deterministic
    torch.set_num_threads(max(1, int(n_threads)))
    torch.use_deterministic_algorithms(use_det, warn_only=True)
    logger.debug("Runtime configured: threads=%d, deterministic=%s", n_threads, use_det)
    return n_threads


def resolve_device(device: Optional[str] = None) -> torch.device:
    """Returns the torch device to run on (PLANEMORPH_DEVICE unless overridden)."""
    return torch.device(device or DEVICE)
