"""Drawing an accepted path at further times, conditional on its skeleton."""

from __future__ import annotations

import bisect

import numpy as np

from .errors import ContractError, InvalidModelError
from .layers import insert_point
from .model import UnitVolatilityModel
from .skeleton import BridgeSkeleton


def restore(skeleton: BridgeSkeleton, times, stream):
    """Values at ``times`` and the skeleton extended by the new points.

    The input skeleton is left untouched. A query at a stored time returns the
    stored value; at a jump time this is the post-jump value (paths are
    right-continuous). Queries are processed in increasing order, each one
    conditioning on every earlier point through the refined layers.
    """
    times = [float(q) for q in times]
    for q in times:
        if not 0.0 <= q <= skeleton.T:
            raise ValueError(f"query time {q} outside [0, {skeleton.T}]")
    for seg in skeleton.segments:
        if len(seg.layers) != len(seg.times) - 1 or any(lay is None for lay in seg.layers):
            raise ContractError("skeleton lacks per-gap layers; augment it before restoring")
    out = skeleton.copy()
    starts = [seg.start_time for seg in out.segments]
    values = {}
    for q in sorted(set(times)):
        k = bisect.bisect_right(starts, q) - 1
        seg = out.segments[k]
        i = seg.locate(q)
        if q == seg.times[i]:
            values[q] = seg.values[i]
            continue
        if q == seg.times[i + 1]:
            # right end of the final segment; a jump time belongs to the next segment
            values[q] = seg.values[i + 1]
            continue
        z, left, right = insert_point(seg.record(i), q, stream, None)
        seg.split(i, q, z, left, right, kind="restored")
        values[q] = z
    return np.array([values[q] for q in times]), out


def restore_original_scale(m: UnitVolatilityModel, values):
    """Map transformed values back to the original state via ``eta^-1``."""
    arr = np.asarray(values, dtype=float)
    out = np.array([m.eta_inverse(float(v)) for v in np.ravel(arr)], dtype=float).reshape(arr.shape)
    if not np.all(np.isfinite(out)):
        raise InvalidModelError("eta^-1 produced non-finite values")
    return out
