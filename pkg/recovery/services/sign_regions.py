import logging

import numpy as np
from django.core.exceptions import ValidationError

from meshes.models import RegionMask

from ..models import SignSplit

logger = logging.getLogger(__name__)


def _mask(labels, regions, label):
    return RegionMask(np.flatnonzero(np.isin(labels, list(regions))), len(labels), label)


def _valid(mesh, d1, d2):
    if d1.is_empty:
        return False
    if d2.is_empty:
        return True
    if not mesh.is_connected(d2.complement().triangles):
        return False
    return not np.all(d2.indicator[mesh.gamma_triangles])


def piecewise_sign_regions(mesh, labels, field_a, field_b, tolerance=1e-12):
    """
    Split the partition for two piecewise-constant fields given as
    region -> value mappings.

    Orientation 'i': D1 holds the regions where a - ã > 0 and D2 those where
    a - ã < 0, so a >= ã off D2. Orientation 'ii' swaps the sign. A split
    is valid when the complement of D2 stays connected and D2 leaves Γ
    reachable; if both are valid the larger D1 wins.
    """
    labels = np.asarray(labels, dtype=np.int64)
    regions = sorted(set(int(r) for r in np.unique(labels)) | set(field_a) | set(field_b))
    difference = {r: float(field_a.get(r, 0.0)) - float(field_b.get(r, 0.0)) for r in regions}
    if all(abs(value) <= tolerance for value in difference.values()):
        raise ValidationError("The fields agree on every region", code='fields_equal')

    splits = []
    for orientation, sign in (('i', 1.0), ('ii', -1.0)):
        positive = [r for r in regions if sign * difference[r] > tolerance]
        negative = [r for r in regions if sign * difference[r] < -tolerance]
        d1, d2 = _mask(labels, positive, 'D1'), _mask(labels, negative, 'D2')
        if _valid(mesh, d1, d2):
            splits.append(SignSplit(d1, d2, orientation, difference))
    if not splits:
        raise ValidationError(
            "No orientation keeps the complement of D2 connected",
            code='no_valid_split',
        )
    best = splits[0]
    for split in splits[1:]:
        if split.d1.area(mesh) > best.d1.area(mesh):
            best = split
    logger.debug("Sign split: orientation %s, D1 %s, D2 %s", best.orientation, best.d1, best.d2)
    return best
