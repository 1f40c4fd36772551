"""Jitter removal and dwell-time attention maps."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .ingest import GazeTrace

log = logging.getLogger(__name__)

FRAME_PERIOD_MS = 1000.0 / 60.0


@dataclass(frozen=True)
class GazeParams:
    epsilon_mm: float = 7.5
    t_hat_ms: float = 500.0
    # (x, y) millimetres per stimulus pixel
    pixel_pitch_mm: tuple[float, float] = (1.0, 1.0)
    frame_period_ms: float = FRAME_PERIOD_MS

    def __post_init__(self):
        pitch = self.pixel_pitch_mm
        if np.isscalar(pitch):
            pitch = (pitch, pitch)
        object.__setattr__(self, "pixel_pitch_mm", tuple(float(p) for p in pitch))
        if not self.epsilon_mm > 0:
            raise ValidationError("epsilon_mm must be > 0")
        if not self.t_hat_ms >= 0:
            raise ValidationError("t_hat_ms must be >= 0")
        if min(self.pixel_pitch_mm) <= 0 or self.frame_period_ms <= 0:
            raise ValidationError("pixel pitch and frame period must be > 0")


@dataclass(frozen=True)
class StabilizedPoint:
    stim_xy: tuple[float, float]
    slice: int
    dwell_ms: float
    t_first_ms: int
    n_samples: int = 1
    # index of the contiguous on-screen, same-slice stretch the point came from
    segment: int = 0


@dataclass(frozen=True)
class AttentionRegion:
    center: tuple[float, float]
    slice: int
    radius_mm: float
    attention: float
    t_first_ms: int = 0
    dwell_ms: float = 0.0


@dataclass(frozen=True, eq=False)
class AttentionMap:
    slice: int
    values: np.ndarray
    regions: tuple[AttentionRegion, ...] = ()
    note: str = ""


def _segments(trace: GazeTrace):
    """Split a trace at slice changes and off-screen samples."""
    start = None
    for i in range(len(trace)):
        if trace.offscreen[i]:
            if start is not None:
                yield start, i
                start = None
            continue
        if start is None:
            start = i
        elif trace.slice[i] != trace.slice[i - 1]:
            yield start, i
            start = i
    if start is not None:
        yield start, len(trace)


def _smooth_positions(xy: np.ndarray, pitch, eps: float) -> np.ndarray:
    # reverse pass: g(i) takes g(i+1) (already updated) when within eps
    g = xy.copy()
    px, py = pitch
    for i in range(len(g) - 2, -1, -1):
        dx = (g[i, 0] - g[i + 1, 0]) * px
        dy = (g[i, 1] - g[i + 1, 1]) * py
        if np.hypot(dx, dy) <= eps:
            g[i] = g[i + 1]
    return g


def stabilize_trace(trace: GazeTrace, params: GazeParams) -> list[StabilizedPoint]:
    """Collapse jitter within ``epsilon_mm`` and accumulate dwell per fixation.

    Each contiguous same-slice, on-screen stretch of the trace is smoothed
    on its own. A sample's dwell is the gap to the next sample of its
    stretch; the stretch's last sample gets one nominal frame period.
    """
    if len(trace) == 0:
        return []
    if np.any(trace.slice[~trace.offscreen] < 0):
        raise ValidationError("stabilize_trace needs slice-assigned samples")
    points: list[StabilizedPoint] = []
    for seg, (a, b) in enumerate(_segments(trace)):
        t = trace.t_ms[a:b]
        g = _smooth_positions(trace.stim_xy[a:b], params.pixel_pitch_mm, params.epsilon_mm)
        gaps = np.diff(t)
        sl = int(trace.slice[a])
        i = 0
        m = len(t)
        while i < m:
            j = i + 1
            while j < m and g[j, 0] == g[i, 0] and g[j, 1] == g[i, 1]:
                j += 1
            dwell = float(gaps[i:j].sum()) if j < m else float(gaps[i:j - 1].sum())
            if j == m:
                dwell += params.frame_period_ms
            points.append(StabilizedPoint(
                stim_xy=(float(g[i, 0]), float(g[i, 1])), slice=sl, dwell_ms=dwell,
                t_first_ms=int(t[i]), n_samples=j - i, segment=seg))
            i = j
    return points


def points_to_trace(points: Sequence[StabilizedPoint],
                    frame_period_ms: float = FRAME_PERIOD_MS) -> GazeTrace:
    """Rebuild a trace whose stabilization reproduces ``points``.

    One sample per point at ``t_first_ms``; the last point of each segment
    gets a second sample so its dwell survives the round trip, and an
    off-screen marker separates same-slice segments.
    """
    t, xy, sl, off = [], [], [], []
    for k, p in enumerate(points):
        if k and p.segment != points[k - 1].segment and p.slice == points[k - 1].slice:
            t.append(p.t_first_ms)
            xy.append((-1e9, -1e9))
            sl.append(p.slice)
            off.append(True)
        t.append(p.t_first_ms)
        xy.append(p.stim_xy)
        sl.append(p.slice)
        off.append(False)
        last_of_segment = k + 1 == len(points) or points[k + 1].segment != p.segment
        if last_of_segment:
            extra = int(round(p.dwell_ms - frame_period_ms))
            if extra > 0:
                t.append(p.t_first_ms + extra)
                xy.append(p.stim_xy)
                sl.append(p.slice)
                off.append(False)
    if not t:
        return GazeTrace.empty()
    xy = np.array(xy, dtype=float)
    return GazeTrace(t, xy, xy, np.full(len(t), np.nan), sl, off)


def attention_value(t, t_hat: float, t_max: float):
    """Piecewise-linear dwell to attention mapping, zero at or below ``t_hat``."""
    t = np.asarray(t, dtype=float)
    if not t_max > t_hat:
        return np.zeros_like(t)
    a = np.where(t > t_hat, (t - t_hat) / (t_max - t_hat), 0.0)
    return np.clip(a, 0.0, 1.0)


def disk_mask(center, radius_mm: float, pitch, raster) -> np.ndarray:
    """Boolean ``[y, x]`` mask of pixels within ``radius_mm`` of ``center``."""
    w, h = raster
    ys, xs = np.ogrid[:h, :w]
    d = np.hypot((xs - center[0]) * pitch[0], (ys - center[1]) * pitch[1])
    return d <= radius_mm


def build_attention_map(points: Sequence[StabilizedPoint], slice: int,
                        params: GazeParams, raster,
                        t_max: float | None = None) -> AttentionMap:
    """Attention field for one slice of a ``(width, height)`` raster.

    ``t_max`` defaults to the longest dwell among ``points``, so passing
    the whole reading keeps attention values comparable across slices.
    """
    w, h = raster
    values = np.zeros((h, w), dtype=float)
    if t_max is None:
        t_max = max((p.dwell_ms for p in points), default=0.0)
    if not t_max > params.t_hat_ms:
        note = f"t_max={t_max:g} ms does not exceed t_hat={params.t_hat_ms:g} ms"
        log.info("slice %d: %s", slice, note)
        return AttentionMap(slice, values, (), note)
    on_slice = [p for p in points if p.slice == slice]
    a = attention_value([p.dwell_ms for p in on_slice], params.t_hat_ms, t_max)
    regions = []
    for p, ai in zip(on_slice, a):
        if ai <= 0.0:
            continue
        region = AttentionRegion(center=p.stim_xy, slice=slice, radius_mm=params.epsilon_mm,
                                 attention=float(ai), t_first_ms=p.t_first_ms,
                                 dwell_ms=p.dwell_ms)
        regions.append(region)
        disk = disk_mask(p.stim_xy, params.epsilon_mm, params.pixel_pitch_mm, raster)
        np.maximum(values, np.where(disk, ai, 0.0), out=values)
    return AttentionMap(slice, values, tuple(regions))


def build_attention_maps(points: Sequence[StabilizedPoint], params: GazeParams,
                         raster) -> list[AttentionMap]:
    """One map per slice that received gaze, in slice order, sharing ``t_max``."""
    t_max = max((p.dwell_ms for p in points), default=0.0)
    slices = sorted({p.slice for p in points})
    return [build_attention_map(points, s, params, raster, t_max=t_max) for s in slices]


def _region_key(r: AttentionRegion):
    return (-r.attention, r.t_first_ms, r.slice, r.center[1], r.center[0])


def rank_regions(maps: Iterable[AttentionMap]) -> list[AttentionRegion]:
    return sorted((r for m in maps for r in m.regions), key=_region_key)


def select_regions(ranked: Sequence[AttentionRegion], top_k: int | None = None,
                   min_attention: float = 0.5) -> list[AttentionRegion]:
    """``top_k`` leading regions, or every region with attention >= ``min_attention``."""
    if top_k is not None:
        return list(ranked[:top_k])
    return [r for r in ranked if r.attention >= min_attention]
