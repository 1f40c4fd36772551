"""Dice overlap and boundary Hausdorff distance for binary masks."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError


@dataclass
class EvalReport:
    dsc: float | None
    hd_mm: float | None
    counts: dict
    per_region: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write(self, path):
        Path(path).write_text(self.to_json() + "\n")


def _check(a, b):
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValidationError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def overlap_counts(a, b) -> dict:
    a, b = _check(a, b)
    return {"prediction": int(a.sum()), "reference": int(b.sum()),
            "intersection": int((a & b).sum())}


def dice_from_counts(n_a: int, n_b: int, n_ab: int) -> float:
    if n_a + n_b == 0:
        return 1.0
    return 2.0 * n_ab / (n_a + n_b)


def dice(a, b) -> float:
    c = overlap_counts(a, b)
    return dice_from_counts(c["prediction"], c["reference"], c["intersection"])


def boundary(mask) -> np.ndarray:
    """Positive voxels with an in-plane 4-neighbour that is negative or off-grid.

    In-plane means the last two axes; a 3-D mask is treated slice by slice.
    """
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(m, [(0, 0)] * (m.ndim - 2) + [(1, 1), (1, 1)], constant_values=False)
    inner = (slice(None),) * (m.ndim - 2)
    core = padded[inner + (slice(1, -1), slice(1, -1))]
    interior = (padded[inner + (slice(0, -2), slice(1, -1))]
                & padded[inner + (slice(2, None), slice(1, -1))]
                & padded[inner + (slice(1, -1), slice(0, -2))]
                & padded[inner + (slice(1, -1), slice(2, None))])
    return core & ~interior


def boundary_points(mask, spacing) -> np.ndarray:
    """Boundary voxel centres in millimetres; ``spacing`` follows array axis order."""
    idx = np.argwhere(boundary(mask))
    return idx * np.asarray(spacing, dtype=float)


def hausdorff_mm(a, b, spacing) -> float:
    """Symmetric Hausdorff distance between boundary sets, exact.

    ``spacing`` gives millimetres per voxel in array axis order.
    """
    a, b = _check(a, b)
    if not a.any() or not b.any():
        raise ValidationError("Hausdorff distance is undefined for an empty mask")
    if len(spacing) != a.ndim:
        raise ValidationError(f"need {a.ndim} spacing values, got {len(spacing)}")
    sp = np.asarray(spacing, dtype=float)
    ia, ib = np.argwhere(boundary(a)), np.argwhere(boundary(b))
    best = (-1.0, None, None)
    for src, dst in ((ia, ib), (ib, ia)):
        d, j = cKDTree(dst * sp).query(src * sp)
        i = int(np.argmax(d))
        if d[i] > best[0]:
            best = (d[i], src[i], dst[j[i]])
    # re-measure the extremal pair from integer offsets: scaling first and
    # subtracting afterwards costs a few ulps
    _, p, q = best
    return math.hypot(*((p - q) * sp))


def array_spacing(spacing_xyz, ndim: int = 3):
    """Convert header ``(sx, sy, sz)`` spacing to array axis order."""
    sx, sy, sz = spacing_xyz
    return (sz, sy, sx) if ndim == 3 else (sy, sx)


def evaluate(prediction, reference, spacing_xyz, regions=None, notes=None,
             slices=None) -> EvalReport:
    """Pooled DSC/HD plus optional per-region rows.

    ``regions`` is a list of ``(region_id, slice, mask2d)``; each is scored
    against the reference on that slice only. With ``slices`` the pooled
    scores only see those slices of both volumes.
    """
    pred = np.asarray(prediction, bool)
    ref = np.asarray(reference, bool)
    notes = list(notes or [])
    if slices is not None and pred.ndim == 3:
        keep = np.zeros(pred.shape[0], bool)
        keep[list(slices)] = True
        pred = pred & keep[:, None, None]
        ref = ref & keep[:, None, None]
        notes.append(f"pooled scores restricted to predicted slices {sorted(slices)}")
    counts = overlap_counts(pred, ref)
    dsc = dice_from_counts(counts["prediction"], counts["reference"], counts["intersection"])
    sp = array_spacing(spacing_xyz, pred.ndim)
    hd = None
    if pred.any() and ref.any():
        hd = hausdorff_mm(pred, ref, sp)
    else:
        notes.append("hausdorff undefined: empty mask")
    rows = []
    for rid, z, m in regions or []:
        ref_z = ref[z]
        row = {"region": rid, "slice": int(z), "dsc": dice(m, ref_z), "hd_mm": None}
        if m.any() and ref_z.any():
            row["hd_mm"] = hausdorff_mm(m, ref_z, sp[-2:])
        rows.append(row)
    if rows and ref.ndim == 3:
        notes.append("per-region scores use the reference on the predicted slice only")
    return EvalReport(dsc, hd, counts, rows, notes)
