"""Gaze/viewer log parsing, scene-to-stimulus mapping and volume I/O.

Coordinate conventions used across the package:

* stimulus points are ``(x, y)`` with ``x`` the column and ``y`` the row of
  the displayed slice, pixel centres at integer coordinates;
* volume arrays are indexed ``[z, y, x]`` while ``dims``/``spacing_mm`` are
  reported in ``(x, y, z)`` order, as in the header files.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, FormatError, ParseError, ValidationError

log = logging.getLogger(__name__)

GAZE_HEADER = ["t_ms", "scene_x", "scene_y", "pupil_mm"]
VIEWER_HEADER = ["t_ms", "kind", "slice", "payload"]
EVENT_KINDS = ("slice_change", "window_level", "click")

DTYPES = {"u8": np.dtype("<u1"), "i16": np.dtype("<i2"), "f32": np.dtype("<f4")}


def _frozen(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------
# gaze samples


@dataclass(frozen=True)
class GazeSample:
    t_ms: int
    scene_xy: tuple[float, float]
    stim_xy: tuple[float, float] | None = None
    pupil_mm: float | None = None
    slice: int | None = None
    offscreen: bool = False


@dataclass(frozen=True, eq=False)
class GazeTrace:
    """Time-ordered gaze samples stored column-wise.

    ``slice`` uses -1 for "not yet assigned", ``pupil_mm`` uses NaN for a
    missing reading.
    """

    t_ms: np.ndarray
    scene_xy: np.ndarray
    stim_xy: np.ndarray
    pupil_mm: np.ndarray
    slice: np.ndarray
    offscreen: np.ndarray

    def __post_init__(self):
        n = len(self.t_ms)
        for name in ("scene_xy", "stim_xy", "pupil_mm", "slice", "offscreen"):
            if len(getattr(self, name)) != n:
                raise ValidationError(f"trace column {name!r} has wrong length")
        object.__setattr__(self, "t_ms", _frozen(np.asarray(self.t_ms, dtype=np.int64)))
        object.__setattr__(self, "scene_xy", _frozen(np.asarray(self.scene_xy, float).reshape(n, 2)))
        object.__setattr__(self, "stim_xy", _frozen(np.asarray(self.stim_xy, float).reshape(n, 2)))
        object.__setattr__(self, "pupil_mm", _frozen(np.asarray(self.pupil_mm, float)))
        object.__setattr__(self, "slice", _frozen(np.asarray(self.slice, dtype=np.int64)))
        object.__setattr__(self, "offscreen", _frozen(np.asarray(self.offscreen, dtype=bool)))
        if n > 1 and np.any(np.diff(self.t_ms) < 0):
            raise ValidationError("gaze timestamps must be non-decreasing")

    def __len__(self):
        return len(self.t_ms)

    def __getitem__(self, i) -> GazeSample:
        p = self.pupil_mm[i]
        s = int(self.slice[i])
        return GazeSample(
            t_ms=int(self.t_ms[i]),
            scene_xy=(float(self.scene_xy[i, 0]), float(self.scene_xy[i, 1])),
            stim_xy=(float(self.stim_xy[i, 0]), float(self.stim_xy[i, 1])),
            pupil_mm=None if math.isnan(p) else float(p),
            slice=None if s < 0 else s,
            offscreen=bool(self.offscreen[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def n_flagged(self) -> int:
        return int(self.offscreen.sum())

    @classmethod
    def empty(cls) -> "GazeTrace":
        return cls(np.zeros(0), np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0),
                   np.zeros(0), np.zeros(0))

    @classmethod
    def from_samples(cls, samples: Iterable[GazeSample]) -> "GazeTrace":
        samples = list(samples)
        if not samples:
            return cls.empty()
        return cls(
            t_ms=[s.t_ms for s in samples],
            scene_xy=[s.scene_xy for s in samples],
            stim_xy=[s.stim_xy if s.stim_xy is not None else s.scene_xy for s in samples],
            pupil_mm=[np.nan if s.pupil_mm is None else s.pupil_mm for s in samples],
            slice=[-1 if s.slice is None else s.slice for s in samples],
            offscreen=[s.offscreen for s in samples],
        )

    def with_slices(self, slices) -> "GazeTrace":
        return GazeTrace(self.t_ms, self.scene_xy, self.stim_xy, self.pupil_mm,
                         np.asarray(slices, dtype=np.int64), self.offscreen)


# --------------------------------------------------------------------------
# scene -> stimulus


@dataclass(frozen=True, eq=False)
class SceneToStimulusTransform:
    """Plane-projective map from scene-camera pixels to stimulus pixels."""

    matrix: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ConfigurationError(f"homography must be 3x3, got shape {m.shape}")
        if not np.all(np.isfinite(m)) or abs(np.linalg.det(m)) <= 1e-12:
            raise ConfigurationError("homography is singular (|det| <= 1e-12)")
        object.__setattr__(self, "matrix", _frozen(m))

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    @classmethod
    def scaling(cls, scene_size, stimulus_size):
        """Pure scaling from a ``(w, h)`` scene frame onto a ``(w, h)`` raster."""
        sx = stimulus_size[0] / scene_size[0]
        sy = stimulus_size[1] / scene_size[1]
        return cls(np.diag([sx, sy, 1.0]))

    @classmethod
    def from_file(cls, path):
        text = Path(path).read_text()
        try:
            vals = [float(v) for v in text.split()]
        except ValueError as exc:
            raise ConfigurationError(f"{path}: calibration values must be reals") from exc
        if len(vals) != 9:
            raise ConfigurationError(f"{path}: expected 9 reals, found {len(vals)}")
        return cls(np.array(vals).reshape(3, 3))

    def to_file(self, path):
        Path(path).write_text(
            "\n".join(" ".join(repr(float(v)) for v in row) for row in self.matrix) + "\n")

    def inverse(self) -> "SceneToStimulusTransform":
        return SceneToStimulusTransform(np.linalg.inv(self.matrix))

    def apply(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        pts = xy.reshape(-1, 2)
        h = pts @ self.matrix[:, :2].T + self.matrix[:, 2]
        out = h[:, :2] / h[:, 2:3]
        return out.reshape(xy.shape)


def on_raster(xy, raster) -> np.ndarray:
    """True where a stimulus point falls on a ``(width, height)`` raster."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    w, h = raster
    return ((xy[:, 0] >= -0.5) & (xy[:, 0] < w - 0.5)
            & (xy[:, 1] >= -0.5) & (xy[:, 1] < h - 0.5))


# --------------------------------------------------------------------------
# CSV logs


def _read_rows(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            return []
        if [c.strip() for c in first] != header:
            raise ParseError(f"{path}: expected header {','.join(header)}", line=1)
        rows = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            rows.append((reader.line_num, row))
        return rows


def parse_gaze_log(path, transform: SceneToStimulusTransform | None = None,
                   raster: Sequence[int] | None = None) -> GazeTrace:
    """Read a gaze CSV and map every sample to stimulus coordinates.

    Samples landing outside ``raster`` (``(width, height)`` in stimulus
    pixels) are kept but flagged as off-screen.
    """
    transform = transform or SceneToStimulusTransform.identity()
    t, xy, pupil = [], [], []
    for line, row in _read_rows(path, GAZE_HEADER):
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", line=line)
        try:
            ti = int(row[0])
            x, y = float(row[1]), float(row[2])
            p = float(row[3]) if row[3].strip() else np.nan
        except ValueError as exc:
            raise ParseError(f"malformed value ({exc})", line=line) from None
        if ti < 0:
            raise ParseError("negative timestamp", line=line)
        if t and ti < t[-1]:
            raise ValidationError(f"{path}: timestamps decrease at line {line}")
        t.append(ti)
        xy.append((x, y))
        pupil.append(p)
    if not t:
        return GazeTrace.empty()
    scene = np.array(xy, dtype=float)
    stim = transform.apply(scene)
    if raster is not None:
        offscreen = ~on_raster(stim, raster)
    else:
        offscreen = np.zeros(len(t), dtype=bool)
    trace = GazeTrace(t, scene, stim, pupil, np.full(len(t), -1), offscreen)
    if trace.n_flagged:
        log.info("%s: %d of %d samples off-screen", path, trace.n_flagged, len(trace))
    return trace


@dataclass(frozen=True)
class ViewerEvent:
    t_ms: int
    kind: str
    slice: int | None = None
    payload: str = ""


def parse_viewer_log(path, n_slices: int | None = None) -> list[ViewerEvent]:
    events: list[ViewerEvent] = []
    for line, row in _read_rows(path, VIEWER_HEADER):
        row = row + [""] * (4 - len(row))
        if len(row) > 4:
            # payload may itself contain commas
            row = row[:3] + [",".join(row[3:])]
        try:
            t = int(row[0])
        except ValueError:
            raise ParseError(f"bad timestamp {row[0]!r}", line=line) from None
        kind = row[1].strip()
        if kind not in EVENT_KINDS:
            raise ValidationError(f"{path}: unknown event kind {kind!r} at line {line}")
        sl = None
        if row[2].strip():
            try:
                sl = int(row[2])
            except ValueError:
                raise ParseError(f"bad slice index {row[2]!r}", line=line) from None
        if kind == "slice_change":
            if sl is None:
                raise ValidationError(f"{path}: slice_change without slice at line {line}")
            if sl < 0 or (n_slices is not None and sl >= n_slices):
                raise ValidationError(f"{path}: slice {sl} out of bounds at line {line}")
        if events and t < events[-1].t_ms:
            raise ValidationError(f"{path}: event timestamps decrease at line {line}")
        events.append(ViewerEvent(t, kind, sl, row[3]))
    if not events:
        log.warning("%s: no viewer events, all gaze maps to the default slice", path)
    return events


def assign_slices(trace: GazeTrace, events: Sequence[ViewerEvent],
                  default_slice: int = 0) -> GazeTrace:
    """Give every sample the slice of the latest slice change at or before it."""
    changes = [e for e in events if e.kind == "slice_change"]
    times = np.array([e.t_ms for e in changes], dtype=np.int64)
    slices = np.array([default_slice] + [e.slice for e in changes], dtype=np.int64)
    idx = np.searchsorted(times, trace.t_ms, side="right")
    return trace.with_slices(slices[idx])


def write_gaze_log(path, t_ms, scene_xy, pupil_mm=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GAZE_HEADER)
        for i, (t, (x, y)) in enumerate(zip(t_ms, scene_xy)):
            p = "" if pupil_mm is None or np.isnan(pupil_mm[i]) else repr(float(pupil_mm[i]))
            w.writerow([int(t), repr(float(x)), repr(float(y)), p])


def write_viewer_log(path, events: Iterable[ViewerEvent]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(VIEWER_HEADER)
        for e in events:
            w.writerow([e.t_ms, e.kind, "" if e.slice is None else e.slice, e.payload])


# --------------------------------------------------------------------------
# volumes and masks


@dataclass(frozen=True, eq=False)
class Volume:
    """Scalar grid indexed ``[z, y, x]`` with spacing given as ``(sx, sy, sz)``."""

    intensities: np.ndarray
    spacing_mm: tuple[float, float, float]

    def __post_init__(self):
        a = np.asarray(self.intensities)
        if a.ndim != 3 or min(a.shape) < 1:
            raise ValidationError(f"volume must be 3-D with dims >= 1, got {a.shape}")
        sp = tuple(float(s) for s in self.spacing_mm)
        if len(sp) != 3 or min(sp) <= 0:
            raise ValidationError(f"spacing must be 3 positive reals, got {sp}")
        object.__setattr__(self, "intensities", _frozen(a))
        object.__setattr__(self, "spacing_mm", sp)

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.intensities.shape
        return nx, ny, nz

    @property
    def in_plane_spacing(self) -> tuple[float, float]:
        """``(row, column)`` spacing in millimetres."""
        return self.spacing_mm[1], self.spacing_mm[0]


@dataclass(frozen=True, eq=False)
class LabelMask:
    values: np.ndarray
    spacing_mm: tuple[float, float, float]

    def __post_init__(self):
        v = np.asarray(self.values).astype(bool)
        if v.ndim != 3:
            raise ValidationError("label mask must be 3-D")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))

    @property
    def dims(self):
        nz, ny, nx = self.values.shape
        return nx, ny, nz

    @classmethod
    def empty_like(cls, volume: Volume) -> "LabelMask":
        return cls(np.zeros(volume.intensities.shape, bool), volume.spacing_mm)

    def matches(self, volume: Volume) -> bool:
        return self.dims == volume.dims and self.spacing_mm == volume.spacing_mm


def _dtype_key(dtype) -> str:
    dtype = np.dtype(dtype)
    if dtype == np.bool_ or dtype == np.uint8:
        return "u8"
    if dtype == np.int16:
        return "i16"
    return "f32"


def _body_path(header_path: Path) -> Path:
    return header_path.with_suffix(".raw")


def write_raw(path, array, spacing_mm, dtype=None):
    """Write a header/body pair; ``path`` names the text header."""
    path = Path(path)
    a = np.asarray(array)
    if a.ndim == 2:
        a = a[None]
    key = dtype or _dtype_key(a.dtype)
    if key not in DTYPES:
        raise FormatError(f"unsupported dtype {key!r}")
    nz, ny, nx = a.shape
    header = (f"dims = {nx} {ny} {nz}\n"
              f"spacing_mm = {' '.join(repr(float(s)) for s in spacing_mm)}\n"
              f"dtype = {key}\n")
    path.write_text(header)
    _body_path(path).write_bytes(np.ascontiguousarray(a, dtype=DTYPES[key]).tobytes())
    return path


def read_raw(path):
    """Return ``(array[z, y, x], spacing_mm, dtype_key)`` from a header/body pair."""
    path = Path(path)
    fields = {}
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}: line {n} is not key = value")
        k, v = line.split("=", 1)
        fields[k.strip()] = v.split()
    missing = {"dims", "spacing_mm", "dtype"} - fields.keys()
    if missing:
        raise FormatError(f"{path}: missing header keys {sorted(missing)}")
    try:
        dims = [int(v) for v in fields["dims"]]
        spacing = tuple(float(v) for v in fields["spacing_mm"])
    except ValueError as exc:
        raise FormatError(f"{path}: bad header value ({exc})") from None
    key = fields["dtype"][0] if fields["dtype"] else ""
    if key not in DTYPES:
        raise FormatError(f"{path}: unsupported dtype {key!r}")
    if len(dims) != 3 or min(dims) < 1 or len(spacing) != 3 or min(spacing) <= 0:
        raise FormatError(f"{path}: dims/spacing must be 3 positive values")
    body = _body_path(path).read_bytes()
    dt = DTYPES[key]
    expected = dims[0] * dims[1] * dims[2] * dt.itemsize
    if len(body) != expected:
        raise FormatError(f"{path}: body has {len(body)} bytes, header implies {expected}")
    arr = np.frombuffer(body, dtype=dt).reshape(dims[2], dims[1], dims[0])
    return arr, spacing, key


def read_volume(path) -> Volume:
    arr, spacing, _ = read_raw(path)
    return Volume(arr, spacing)


def write_volume(volume: Volume, path, dtype=None):
    return write_raw(path, volume.intensities, volume.spacing_mm, dtype)


def read_mask(path) -> LabelMask:
    arr, spacing, _ = read_raw(path)
    return LabelMask(arr != 0, spacing)


def write_pgm(path, image, bits=8):
    """Binary portable graymap; 16-bit samples are big-endian per the format."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise FormatError("PGM images are 2-D")
    maxval = 255 if bits == 8 else 65535
    dt = ">u1" if bits == 8 else ">u2"
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(np.clip(img, 0, maxval).astype(dt).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    dt = ">u1" if maxval < 256 else ">u2"
    return np.frombuffer(data[pos + 1:], dtype=dt).reshape(h, w)


def _slice_pgm_paths(path: Path, nz: int):
    if nz == 1:
        return [path.with_suffix(".pgm")]
    return [path.with_name(f"{path.stem}_z{z:03d}.pgm") for z in range(nz)]


def write_mask(mask: LabelMask, path):
    path = Path(path)
    write_raw(path, mask.values.astype(np.uint8), mask.spacing_mm, "u8")
    v = mask.values
    for z, p in enumerate(_slice_pgm_paths(path, v.shape[0])):
        write_pgm(p, v[z].astype(np.uint8) * 255)
    return path


def write_scalar_map(values, path, spacing_mm=(1.0, 1.0, 1.0), bits=8):
    """Raw f32 copy for analysis plus a min-max scaled PGM preview per slice.

    Fields already inside [0, 1] are scaled as-is so that previews of
    different attention/saliency maps stay comparable.
    """
    path = Path(path)
    v = np.asarray(values, dtype=np.float32)
    if v.ndim == 2:
        v = v[None]
    write_raw(path, v, spacing_mm, "f32")
    lo, hi = float(v.min()), float(v.max())
    if lo >= 0.0 and hi <= 1.0:
        lo, hi = 0.0, 1.0
    span = hi - lo if hi > lo else 1.0
    maxval = 255 if bits == 8 else 65535
    for z, p in enumerate(_slice_pgm_paths(path, v.shape[0])):
        write_pgm(p, np.rint((v[z] - lo) / span * maxval), bits=bits)
    return path
