"""Foreground/background seed selection for one attention region."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NoBoundaryFound, ParseError, ValidationError
from .gaze import AttentionRegion, disk_mask
from .saliency import SaliencyMap, most_salient_pixel

SEED_HEADER = ["label", "slice", "x", "y"]

# (drow, dcol) in the fixed search order +x, -x, +y, -y
DIRECTIONS = ((0, 1), (0, -1), (1, 0), (-1, 0))


@dataclass(frozen=True)
class SeedParams:
    grad_quantile: float = 0.98
    drop_fraction: float = 0.5
    max_radius_mm: float = 30.0
    bg_margin_px: int = 2

    def __post_init__(self):
        if not 0 < self.grad_quantile < 1:
            raise ValidationError("grad_quantile must lie in (0, 1)")
        if not 0 < self.drop_fraction < 1:
            raise ValidationError("drop_fraction must lie in (0, 1)")
        if self.max_radius_mm <= 0 or self.bg_margin_px < 0:
            raise ValidationError("max_radius_mm must be > 0 and bg_margin_px >= 0")


@dataclass(frozen=True)
class SeedSet:
    """Seeds as slice ``(row, col)`` pixels."""

    fg: tuple[tuple[int, int], ...]
    bg: tuple[tuple[int, int], ...]
    slice: int

    def __post_init__(self):
        fg = tuple((int(r), int(c)) for r, c in self.fg)
        bg = tuple((int(r), int(c)) for r, c in self.bg)
        if not fg:
            raise ValidationError("a seed set needs at least one foreground seed")
        if set(fg) & set(bg):
            raise ValidationError("foreground and background seeds overlap")
        object.__setattr__(self, "fg", fg)
        object.__setattr__(self, "bg", bg)

    def check_bounds(self, shape):
        h, w = shape
        for r, c in self.fg + self.bg:
            if not (0 <= r < h and 0 <= c < w):
                raise ValidationError(f"seed ({r}, {c}) outside {h}x{w} slice")


def gradient_magnitude(image, spacing_mm=(1.0, 1.0)) -> np.ndarray:
    """Central-difference gradient norm; ``spacing_mm`` is ``(row, col)``.

    ``np.gradient`` falls back to one-sided differences on the border.
    """
    img = np.asarray(image, dtype=float)
    if min(img.shape) < 2:
        raise ValidationError("gradient needs a slice of at least 2x2")
    gy, gx = np.gradient(img, *spacing_mm)
    return np.hypot(gy, gx)


def select_fg_seed(region: AttentionRegion, smap: SaliencyMap, pitch) -> tuple[int, int]:
    """Most salient pixel inside the region disk, in slice coordinates.

    ``pitch`` is ``(x, y)`` mm per pixel.
    """
    r0, c0, r1, c1 = smap.window
    cx, cy = region.center
    local = disk_mask((cx - c0, cy - r0), region.radius_mm, pitch, (c1 - c0, r1 - r0))
    if not local.any():
        raise ValueError("attention disk does not intersect the saliency window")
    r, c = most_salient_pixel(smap, restrict=local)
    return r + r0, c + c0


def boundary_threshold(grad, window, q: float) -> float:
    r0, c0, r1, c1 = window
    return float(np.quantile(grad[r0:r1, c0:c1], q))


def _walk(grad, start, step, spacing, threshold, params: SeedParams):
    h, w = grad.shape
    r, c = start
    dr, dc = step
    max_steps = int(np.floor(params.max_radius_mm / (spacing[0] if dr else spacing[1])))
    peak = 0.0
    for k in range(1, max_steps + 1):
        rr, cc = r + k * dr, c + k * dc
        if not (0 <= rr < h and 0 <= cc < w):
            return None
        g = grad[rr, cc]
        peak = max(peak, g)
        if peak > threshold and g < params.drop_fraction * peak:
            m = params.bg_margin_px
            return (min(max(rr + m * dr, 0), h - 1), min(max(cc + m * dc, 0), w - 1))
    return None


def select_bg_seeds(fg, grad, threshold: float, spacing_mm=(1.0, 1.0),
                    params: SeedParams = SeedParams()) -> list[tuple[int, int]]:
    """Walk four axis rays from ``fg`` and drop a seed just past each edge.

    An edge counts as passed once the running gradient peak along the ray
    has exceeded ``threshold`` and the current magnitude falls below
    ``drop_fraction`` of that peak.
    """
    grad = np.asarray(grad, dtype=float)
    seeds = []
    for step in DIRECTIONS:
        s = _walk(grad, fg, step, spacing_mm, threshold, params)
        if s is not None and s != tuple(fg) and s not in seeds:
            seeds.append(s)
    if not seeds:
        raise NoBoundaryFound(f"no gradient boundary around seed {tuple(fg)}", stage="seeding")
    return seeds


def make_seeds(region: AttentionRegion, smap: SaliencyMap, slice_image, spacing_mm,
               params: SeedParams = SeedParams()) -> SeedSet:
    """FG from saliency, BG from the gradient rays; ``spacing_mm`` is ``(x, y)``."""
    row_col = (spacing_mm[1], spacing_mm[0])
    fg = select_fg_seed(region, smap, spacing_mm)
    grad = gradient_magnitude(slice_image, row_col)
    threshold = boundary_threshold(grad, smap.window, params.grad_quantile)
    bg = select_bg_seeds(fg, grad, threshold, row_col, params)
    return SeedSet((fg,), tuple(bg), region.slice)


def write_seeds(path, seeds: SeedSet | list[SeedSet]):
    sets = [seeds] if isinstance(seeds, SeedSet) else list(seeds)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SEED_HEADER)
        for s in sets:
            for r, c in s.fg:
                w.writerow(["fg", s.slice, c, r])
            for r, c in s.bg:
                w.writerow(["bg", s.slice, c, r])
    return Path(path)


def read_seeds(path) -> list[SeedSet]:
    """One seed set per slice, in order of first appearance."""
    by_slice: dict[int, tuple[list, list]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != SEED_HEADER:
            raise ParseError(f"{path}: expected header {','.join(SEED_HEADER)}", line=1)
        for row in reader:
            if not row:
                continue
            try:
                label, sl, x, y = row[0].strip(), int(row[1]), int(row[2]), int(row[3])
            except (ValueError, IndexError):
                raise ParseError(f"{path}: malformed seed row", line=reader.line_num) from None
            if label not in ("fg", "bg"):
                raise ParseError(f"{path}: unknown seed label {label!r}", line=reader.line_num)
            fg, bg = by_slice.setdefault(sl, ([], []))
            (fg if label == "fg" else bg).append((y, x))
    return [SeedSet(tuple(fg), tuple(bg), sl) for sl, (fg, bg) in by_slice.items()]
