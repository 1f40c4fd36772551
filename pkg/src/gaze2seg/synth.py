"""Phantom volumes with known lesion masks and simulated reading sessions."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .ingest import (LabelMask, SceneToStimulusTransform, ViewerEvent, Volume,
                     write_gaze_log, write_mask, write_viewer_log, write_volume)


@dataclass(frozen=True)
class Lesion:
    center: tuple[int, int, int]  # voxel (x, y, z)
    radii_mm: tuple[float, float, float]
    contrast: float


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int]  # (nx, ny, nz)
    spacing_mm: tuple[float, float, float]
    lesions: tuple[Lesion, ...] = ()
    background: float = -800.0
    noise_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        for les in self.lesions:
            if not all(0 <= c < n for c, n in zip(les.center, self.dims)):
                raise ValidationError(f"lesion centre {les.center} outside {self.dims}")
            if les.contrast == 0:
                raise ValidationError("lesion contrast must be non-zero")
            if min(les.radii_mm) <= 0:
                raise ValidationError("lesion radii must be > 0")


def ellipsoid_mask(dims, spacing_mm, lesion: Lesion) -> np.ndarray:
    nx, ny, nz = dims
    z, y, x = np.ogrid[:nz, :ny, :nx]
    cx, cy, cz = lesion.center
    rx, ry, rz = lesion.radii_mm
    sx, sy, sz = spacing_mm
    return (((x - cx) * sx / rx) ** 2 + ((y - cy) * sy / ry) ** 2
            + ((z - cz) * sz / rz) ** 2) <= 1.0


def make_phantom(spec: PhantomSpec):
    """Return ``(Volume, LabelMask)``; overlapping lesions are rejected."""
    nx, ny, nz = spec.dims
    mask = np.zeros((nz, ny, nx), bool)
    vol = np.full((nz, ny, nx), spec.background, dtype=float)
    for les in spec.lesions:
        m = ellipsoid_mask(spec.dims, spec.spacing_mm, les)
        if (m & mask).any():
            raise ValidationError(f"lesion at {les.center} overlaps another lesion")
        mask |= m
        vol[m] += les.contrast
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.rng_seed)
        vol += rng.normal(0.0, spec.noise_sigma, size=vol.shape)
    return Volume(vol.astype(np.float32), spec.spacing_mm), LabelMask(mask, spec.spacing_mm)


@dataclass(frozen=True)
class FixationTarget:
    slice: int
    xy: tuple[float, float]  # stimulus pixels
    dwell_ms: float


@dataclass(frozen=True)
class GazeSimSpec:
    pattern: str = "scanner"
    targets: tuple[FixationTarget, ...] = ()
    jitter_sigma_mm: float = 1.5
    sample_rate_hz: float = 60.0
    rng_seed: int = 0
    # drillers scroll through this many slices either side of each target
    drill_span: int = 2
    glance_samples: int = 5

    def __post_init__(self):
        if self.pattern not in ("driller", "scanner"):
            raise ValidationError(f"unknown reading pattern {self.pattern!r}")
        if self.sample_rate_hz <= 0:
            raise ValidationError("sample rate must be > 0")
        if any(t.dwell_ms <= 0 for t in self.targets):
            raise ValidationError("fixation dwell must be > 0")


@dataclass
class SimulatedSession:
    t_ms: np.ndarray
    scene_xy: np.ndarray
    events: list = field(default_factory=list)

    def write(self, gaze_path, viewer_path):
        write_gaze_log(gaze_path, self.t_ms, self.scene_xy)
        write_viewer_log(viewer_path, self.events)


def make_gaze(spec: GazeSimSpec, phantom: PhantomSpec,
              transform: SceneToStimulusTransform | None = None) -> SimulatedSession:
    """Simulate a reading session; samples are emitted in scene coordinates.

    With no ``transform`` scene and stimulus coordinates coincide.
    """
    nx, ny, nz = phantom.dims
    sx, sy, _ = phantom.spacing_mm
    for tgt in spec.targets:
        x, y = tgt.xy
        if not (0 <= tgt.slice < nz and -0.5 <= x < nx - 0.5 and -0.5 <= y < ny - 0.5):
            raise ValidationError(f"fixation target {tgt} outside the phantom")
    rng = np.random.default_rng(spec.rng_seed)
    period = 1000.0 / spec.sample_rate_hz
    t0 = 0
    times, pts, events = [], [], []
    current = None

    def emit(n, center, sigma_mm):
        nonlocal t0
        for k in range(n):
            times.append(t0 + int(np.floor(k * period)))
            jitter = rng.normal(0.0, 1.0, 2) * sigma_mm / np.array([sx, sy])
            pts.append(np.asarray(center, float) + jitter)
        t0 += int(np.floor(n * period))

    def show(sl):
        nonlocal current
        if sl != current:
            events.append(ViewerEvent(t0, "slice_change", int(sl), ""))
            current = sl

    for tgt in spec.targets:
        if spec.pattern == "driller":
            lo = max(0, tgt.slice - spec.drill_span)
            hi = min(nz - 1, tgt.slice + spec.drill_span)
            sweep = list(range(lo, hi + 1)) + list(range(hi - 1, tgt.slice, -1))
            for sl in sweep:
                if sl == tgt.slice:
                    continue
                show(sl)
                glance = (rng.uniform(0, nx - 1), rng.uniform(0, ny - 1))
                emit(spec.glance_samples, glance, 0.0)
        show(tgt.slice)
        n = int(round(tgt.dwell_ms * spec.sample_rate_hz / 1000.0))
        emit(n, tgt.xy, spec.jitter_sigma_mm)

    stim = np.array(pts, dtype=float).reshape(-1, 2)
    scene = transform.inverse().apply(stim) if transform is not None else stim
    return SimulatedSession(np.array(times, dtype=np.int64), scene, events)


# --------------------------------------------------------------------------
# presets

DEMO_SPACING = (0.58, 0.58, 1.5)
DEMO_LESION = Lesion(center=(140, 118, 10), radii_mm=(4.0, 4.0, 4.0), contrast=300.0)


def demo_phantom(noise_sigma: float = 20.0, rng_seed: int = 0) -> PhantomSpec:
    """256x256x20 chest-like phantom with one 8 mm nodule."""
    return PhantomSpec(dims=(256, 256, 20), spacing_mm=DEMO_SPACING,
                       lesions=(DEMO_LESION,), background=-800.0,
                       noise_sigma=noise_sigma, rng_seed=rng_seed)


def demo_gaze(target_xy: Sequence[float] = (142.0, 116.0), dwell_ms: float = 1500.0,
              pattern: str = "scanner", rng_seed: int = 1) -> GazeSimSpec:
    return GazeSimSpec(pattern=pattern,
                       targets=(FixationTarget(DEMO_LESION.center[2], tuple(target_xy), dwell_ms),),
                       rng_seed=rng_seed)


PRESETS = {
    # gaze resting on the nodule
    "demo": lambda: (demo_phantom(), demo_gaze()),
    # gaze resting on empty lung field
    "control": lambda: (demo_phantom(), demo_gaze(target_xy=(60.0, 200.0))),
}


def write_case(out_dir, phantom: PhantomSpec, gaze: GazeSimSpec) -> dict:
    """Write volume, reference mask, gaze and viewer logs into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    volume, mask = make_phantom(phantom)
    session = make_gaze(gaze, phantom)
    paths = {
        "volume": write_volume(volume, out / "volume.hdr"),
        "reference": write_mask(mask, out / "reference.hdr"),
        "gaze": out / "gaze.csv",
        "viewer": out / "viewer.csv",
    }
    session.write(paths["gaze"], paths["viewer"])
    return paths
