"""Context-aware saliency on a slice window.

Pipeline per window: min-max normalise, resample to each scale, score each
pixel by its K most similar patches (intensity distance damped by spatial
distance), average over scales, then attenuate by distance to the foci of
attention.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .errors import ValidationError

log = logging.getLogger(__name__)

# extra candidates kept from the fast pass before exact re-ranking
_CANDIDATE_SLACK = 16
_ROW_CHUNK = 256


@dataclass(frozen=True)
class SaliencyParams:
    patch_size: int = 7
    k: int = 64
    lam: float = 3.0
    scales: tuple[float, ...] = (1.0, 0.8, 0.5, 0.3)
    foci_threshold: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise ValidationError("patch_size must be odd and >= 3")
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.lam < 0:
            raise ValidationError("lambda must be >= 0")
        if not self.scales or not all(0 < s <= 1 for s in self.scales):
            raise ValidationError("every scale must lie in (0, 1]")
        if not 0 < self.foci_threshold < 1:
            raise ValidationError("foci_threshold must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    """Refined saliency over ``window = (row0, col0, row1, col1)`` (half-open)."""

    window: tuple[int, int, int, int]
    values: np.ndarray
    mean: np.ndarray
    per_scale: dict = field(default_factory=dict)
    foci: np.ndarray | None = None

    @property
    def origin(self):
        return self.window[0], self.window[1]


def normalize_window(image) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    lo, hi = img.min(), img.max()
    if hi <= lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def patch_distance(p_u, p_v, pos_u, pos_v, lam: float) -> float:
    """Intensity distance between two patches damped by their separation.

    The intensity term is the RMS difference, so patches offset by a
    constant 1.0 are at distance 1. Positions are in window-diagonal units.
    """
    p_u = np.asarray(p_u, dtype=float)
    p_v = np.asarray(p_v, dtype=float)
    if p_u.shape != p_v.shape:
        raise ValueError(f"patch shapes differ: {p_u.shape} vs {p_v.shape}")
    d_int = np.sqrt(np.sum((p_u - p_v) ** 2) / p_u.size)
    d_pos = np.hypot(pos_u[0] - pos_v[0], pos_u[1] - pos_v[1])
    return float(d_int / (1.0 + lam * d_pos))


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Rows average the input cells each output cell overlaps."""
    m = np.zeros((n_out, n_in))
    step = n_in / n_out
    for i in range(n_out):
        a, b = i * step, (i + 1) * step
        j0, j1 = int(np.floor(a)), int(np.ceil(b))
        for j in range(j0, min(j1, n_in)):
            m[i, j] = min(b, j + 1) - max(a, j)
    return m / m.sum(axis=1, keepdims=True)


def _linear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation with pixel-centre alignment and edge clamping."""
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    src = np.clip((np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5, 0, n_in - 1)
    j0 = np.minimum(np.floor(src).astype(int), n_in - 2)
    frac = src - j0
    m[np.arange(n_out), j0] = 1.0 - frac
    m[np.arange(n_out), j0 + 1] += frac
    return m


def resample_area(image, shape) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    if img.shape == tuple(shape):
        return img.copy()
    return _area_matrix(img.shape[0], shape[0]) @ img @ _area_matrix(img.shape[1], shape[1]).T


def resize_bilinear(image, shape) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    if img.shape == tuple(shape):
        return img.copy()
    return _linear_matrix(img.shape[0], shape[0]) @ img @ _linear_matrix(img.shape[1], shape[1]).T


def extract_patches(image, patch_size: int) -> np.ndarray:
    """``(h*w, patch_size**2)`` patches centred on every pixel, reflect-padded."""
    r = patch_size // 2
    padded = np.pad(np.asarray(image, dtype=float), r, mode="reflect")
    win = sliding_window_view(padded, (patch_size, patch_size))
    return win.reshape(-1, patch_size * patch_size)


def normalized_positions(shape) -> np.ndarray:
    """Pixel ``(row, col)`` positions scaled so the window diagonal is 1."""
    h, w = shape
    diag = np.hypot(h - 1, w - 1) or 1.0
    rr, cc = np.mgrid[:h, :w]
    return np.stack([rr.ravel(), cc.ravel()], axis=1) / diag


def _mean_k_smallest(patches, pos, k: int, lam: float) -> np.ndarray:
    n, dim = patches.shape
    k = min(k, n - 1)
    out = np.empty(n)
    if k < 1:
        out[:] = 0.0
        return out
    n_cand = min(n - 1, k + _CANDIDATE_SLACK)
    sq = np.einsum("ij,ij->i", patches, patches)
    for start in range(0, n, _ROW_CHUNK):
        rows = np.arange(start, min(n, start + _ROW_CHUNK))
        if n_cand == n - 1:
            cand = np.broadcast_to(np.arange(n), (len(rows), n))
            cand = cand[cand != rows[:, None]].reshape(len(rows), n - 1)
        else:
            # fast pass: squared distances from a product expansion
            d2 = sq[rows, None] + sq[None, :] - 2.0 * (patches[rows] @ patches.T)
            d_int = np.sqrt(np.maximum(d2, 0.0) / dim)
            d_pos = np.hypot(pos[rows, None, 0] - pos[None, :, 0],
                             pos[rows, None, 1] - pos[None, :, 1])
            approx = d_int / (1.0 + lam * d_pos)
            approx[np.arange(len(rows)), rows] = np.inf
            cand = np.argpartition(approx, n_cand - 1, axis=1)[:, :n_cand]
            cand.sort(axis=1)
        # exact distances on the candidate set
        diff = patches[rows, None, :] - patches[cand]
        d_int = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff) / dim)
        d_pos = np.hypot(pos[rows, None, 0] - pos[cand, 0], pos[rows, None, 1] - pos[cand, 1])
        exact = d_int / (1.0 + lam * d_pos)
        if k < exact.shape[1]:
            exact = np.partition(exact, k - 1, axis=1)[:, :k]
        exact.sort(axis=1)
        out[rows] = exact.sum(axis=1) / k
    return out


def scale_shape(shape, scale: float) -> tuple[int, int]:
    return tuple(max(1, int(round(s * scale))) for s in shape)


def single_scale_saliency(window, scale: float, params: SaliencyParams,
                          native: bool = False):
    """Per-pixel saliency at one resize factor.

    Returns ``None`` when the resized window is smaller than a patch. The
    result is bilinearly resized back to the window unless ``native``.
    """
    img = normalize_window(window)
    shape = scale_shape(img.shape, scale)
    if min(shape) < params.patch_size:
        log.info("scale %.3g skipped: %s window smaller than %d px patch",
                 scale, shape, params.patch_size)
        return None
    small = resample_area(img, shape)
    patches = extract_patches(small, params.patch_size)
    pos = normalized_positions(shape)
    avg = _mean_k_smallest(patches, pos, params.k, params.lam)
    s = (1.0 - np.exp(-avg)).reshape(shape)
    if native:
        return s
    return resize_bilinear(s, img.shape)


def multi_scale_saliency(window, params: SaliencyParams):
    """Mean of the usable per-scale fields; returns ``(mean, {scale: field})``."""
    per_scale = {}
    for r in params.scales:
        s = single_scale_saliency(window, r, params)
        if s is not None:
            per_scale[r] = s
    if not per_scale:
        raise ValidationError(
            f"window {np.shape(window)} too small for patch size {params.patch_size} "
            "at every scale; enlarge the window")
    mean = sum(per_scale[r] for r in params.scales if r in per_scale) / len(per_scale)
    return mean, per_scale


def refine_with_foci(mean, params: SaliencyParams, window=None,
                     per_scale=None) -> SaliencyMap:
    """Attenuate saliency with the normalised distance to the nearest focus."""
    mean = np.asarray(mean, dtype=float)
    h, w = mean.shape
    if window is None:
        window = (0, 0, h, w)
    foci = mean >= np.quantile(mean, params.foci_threshold)
    diag = np.hypot(h - 1, w - 1)
    if foci.all() or diag == 0:
        d_foci = np.zeros_like(mean)
    else:
        d_foci = np.minimum(ndimage.distance_transform_edt(~foci) / diag, 1.0)
    values = mean * (1.0 - d_foci)
    return SaliencyMap(tuple(int(v) for v in window), values, mean, dict(per_scale or {}), foci)


def compute_saliency(window_image, params: SaliencyParams, window=None) -> SaliencyMap:
    mean, per_scale = multi_scale_saliency(window_image, params)
    return refine_with_foci(mean, params, window=window, per_scale=per_scale)


def most_salient_pixel(smap, restrict=None) -> tuple[int, int]:
    """Window-relative ``(row, col)`` of the maximum; row-major order breaks ties."""
    values = smap.values if isinstance(smap, SaliencyMap) else np.asarray(smap)
    if restrict is not None:
        restrict = np.asarray(restrict, dtype=bool)
        if not restrict.any():
            raise ValueError("restriction mask selects no pixels")
        values = np.where(restrict, values, -np.inf)
    flat = int(np.argmax(values))
    return divmod(flat, values.shape[1])


def saliency_window(center_xy, radius_mm: float, margin_mm: float, pitch, raster):
    """Bounding box of a disk dilated by ``margin_mm``, clipped to the raster.

    ``pitch`` is ``(x, y)`` mm per pixel and ``raster`` is ``(width, height)``;
    returns ``(row0, col0, row1, col1)``.
    """
    reach = radius_mm + margin_mm
    cx, cy = center_xy
    w, h = raster
    c0 = max(0, int(np.floor(cx - reach / pitch[0])))
    c1 = min(w, int(np.ceil(cx + reach / pitch[0])) + 1)
    r0 = max(0, int(np.floor(cy - reach / pitch[1])))
    r1 = min(h, int(np.ceil(cy + reach / pitch[1])) + 1)
    return r0, c0, r1, c1
