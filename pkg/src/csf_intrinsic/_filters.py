"""Small 3x3 window filters with window truncation at the image border."""

import numpy as np


def _stack3x3(field):
    h, w = field.shape
    padded = np.full((h + 2, w + 2), np.nan)
    padded[1:-1, 1:-1] = field
    return np.stack([padded[dy:dy + h, dx:dx + w]
                     for dy in range(3) for dx in range(3)])


def median3x3(field):
    return np.nanmedian(_stack3x3(np.asarray(field, dtype=float)), axis=0)


def mean3x3(field):
    return np.nanmean(_stack3x3(np.asarray(field, dtype=float)), axis=0)


def var3x3(field):
    """Population variance over each truncated 3x3 window."""
    return np.nanvar(_stack3x3(np.asarray(field, dtype=float)), axis=0)
