"""Two-label random walker on a 4-connected pixel lattice."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse

from .errors import ConvergenceError, ValidationError
from .saliency import normalize_window
from .seeding import SeedSet


@dataclass(frozen=True)
class RwParams:
    beta: float = 90.0
    cg_tolerance: float = 1e-8
    max_iters: int | None = None
    crop_margin_mm: float = 15.0
    # keeps edges across strong contrast numerically present; exp(-90) alone
    # vanishes next to unit weights and splits the system in floating point
    weight_floor: float = 1e-6

    def __post_init__(self):
        if self.beta < 0:
            raise ValidationError("beta must be >= 0")
        if not 0 < self.cg_tolerance < 1:
            raise ValidationError("cg_tolerance must lie in (0, 1)")
        if self.crop_margin_mm < 0:
            raise ValidationError("crop_margin_mm must be >= 0")
        if not 0 <= self.weight_floor < 1:
            raise ValidationError("weight_floor must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class Lattice:
    """Weighted graph on an ``h x w`` grid; nodes are row-major pixel indices."""

    shape: tuple[int, int]
    heads: np.ndarray
    tails: np.ndarray
    weights: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.shape[0] * self.shape[1]

    def laplacian(self) -> sparse.csr_matrix:
        n = self.n_nodes
        w = sparse.coo_matrix((self.weights, (self.heads, self.tails)), shape=(n, n))
        w = (w + w.T).tocsr()
        deg = np.asarray(w.sum(axis=1)).ravel()
        return (sparse.diags(deg) - w).tocsr()


@dataclass(frozen=True, eq=False)
class RwResult:
    probabilities: np.ndarray
    mask: np.ndarray
    iterations: int
    residual: float


def lattice_edges(shape):
    h, w = shape
    idx = np.arange(h * w).reshape(h, w)
    heads = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    tails = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    return heads, tails


def build_lattice(image, beta: float = 90.0, weight_floor: float = 0.0) -> Lattice:
    """Edge weight ``exp(-beta * dI**2)`` on min-max normalised intensities.

    Weights below ``weight_floor`` are raised to it.
    """
    img = normalize_window(image)
    heads, tails = lattice_edges(img.shape)
    flat = img.ravel()
    weights = np.maximum(np.exp(-beta * (flat[heads] - flat[tails]) ** 2), weight_floor)
    return Lattice(img.shape, heads, tails, weights)


def conjugate_gradient(A, b, tol: float, max_iters: int, error_scale: float | None = None):
    """Jacobi-preconditioned CG from a zero start.

    Converged once both ``||r|| <= tol * ||b||`` and the same test on the
    diagonally scaled residual ``D^-1 r`` hold; the second keeps nodes with
    tiny edge weights from converging in name only. With ``error_scale``
    the iteration then continues, for at most as many steps again, until
    ``error_scale * max|D^-1 r|`` is also within ``tol``.
    Returns ``(x, iterations, rel_residual)``.
    """
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0, 0.0
    inv_diag = 1.0 / A.diagonal()
    znorm = np.linalg.norm(inv_diag * b)
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    met_at = None
    best = None
    for it in range(1, max_iters + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0.0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = inv_diag * r
        res = max(np.linalg.norm(r) / bnorm, np.linalg.norm(z) / znorm)
        if res <= tol:
            if error_scale is None or error_scale * np.abs(z).max() <= tol:
                return x, it, res
            if met_at is None:
                met_at = it
            best = (x.copy(), it, res)
            if it >= 2 * met_at:
                return best
        rz_new = r @ z
        if rz_new == 0.0:
            break
        p = z + (rz_new / rz) * p
        rz = rz_new
    if best is not None:
        return best
    res = max(np.linalg.norm(r) / bnorm, np.linalg.norm(inv_diag * r) / znorm)
    if res <= tol:
        return x, it, res
    raise ConvergenceError(f"CG stopped after {it} iterations at relative "
                           f"residual {res:.3e}", residual=res, iterations=it,
                           stage="rw")


def absorption_bound(A, max_iters: int) -> float | None:
    """``max(h)`` for ``A h = diag(A)``: expected walk length before absorption.

    For the grounded Laplacian ``|x - x*| <= max(h) * max|D^-1 r|``, which
    turns a residual into a max-norm error bound.
    """
    try:
        h, _, _ = conjugate_gradient(A, np.asarray(A.diagonal(), float), 1e-6, max_iters)
    except ConvergenceError:
        return None
    return float(h.max()) * (1.0 + 1e-3)


def solve_dirichlet(lattice: Lattice, fg, bg, params: RwParams = RwParams()) -> RwResult:
    """Probability that a walker from each pixel reaches a foreground seed first.

    ``fg`` and ``bg`` are node indices or ``(row, col)`` pairs on the lattice.
    """
    h, w = lattice.shape
    fg = _as_nodes(fg, lattice.shape)
    bg = _as_nodes(bg, lattice.shape)
    if len(fg) == 0 or len(bg) == 0:
        raise ValidationError("random walker needs foreground and background seeds")
    if np.intersect1d(fg, bg).size:
        raise ValidationError("a pixel cannot be both foreground and background seed")
    n = lattice.n_nodes
    seeded = np.zeros(n, bool)
    seeded[fg] = seeded[bg] = True
    x = np.zeros(n)
    x[fg] = 1.0
    free = np.flatnonzero(~seeded)
    it, res = 0, 0.0
    if free.size:
        L = lattice.laplacian()
        L_u = L[free][:, free].tocsr()
        rhs = -(L[free][:, fg] @ np.ones(len(fg)))
        max_iters = params.max_iters or 10 * free.size
        scale = absorption_bound(L_u, max_iters)
        xu, it, res = conjugate_gradient(L_u, rhs, params.cg_tolerance, max_iters, scale)
        x[free] = np.clip(xu, 0.0, 1.0)
    prob = x.reshape(h, w)
    return RwResult(prob, prob >= 0.5, it, res)


def _as_nodes(seeds, shape) -> np.ndarray:
    a = np.asarray(seeds, dtype=np.int64)
    if a.ndim == 2:
        return np.ravel_multi_index((a[:, 0], a[:, 1]), shape)
    return a.ravel()


def harmonic_defect(lattice: Lattice, x, seeded) -> np.ndarray:
    """|x - weighted neighbour mean| at every unseeded node."""
    L = lattice.laplacian()
    x = np.asarray(x, float).ravel()
    deg = L.diagonal()
    defect = (L @ x) / deg
    return np.abs(defect[~np.asarray(seeded, bool).ravel()])


def crop_window(seeds: SeedSet, shape, spacing_mm, margin_mm: float):
    """Seed bounding box padded by ``margin_mm``; ``spacing_mm`` is ``(x, y)``."""
    pts = np.array(seeds.fg + seeds.bg)
    h, w = shape
    mr = int(np.ceil(margin_mm / spacing_mm[1]))
    mc = int(np.ceil(margin_mm / spacing_mm[0]))
    r0 = max(0, pts[:, 0].min() - mr)
    r1 = min(h, pts[:, 0].max() + mr + 1)
    c0 = max(0, pts[:, 1].min() - mc)
    c1 = min(w, pts[:, 1].max() + mc + 1)
    return int(r0), int(c0), int(r1), int(c1)


def segment_region(slice_image, seeds: SeedSet, spacing_mm=(1.0, 1.0),
                   params: RwParams = RwParams()):
    """Crop, solve and threshold; returns ``(mask, result, window)``.

    The full-slice mask keeps only the 4-connected components that contain
    a foreground seed.
    """
    img = np.asarray(slice_image, dtype=float)
    seeds.check_bounds(img.shape)
    r0, c0, r1, c1 = crop_window(seeds, img.shape, spacing_mm, params.crop_margin_mm)
    lattice = build_lattice(img[r0:r1, c0:c1], params.beta, params.weight_floor)
    fg = [(r - r0, c - c0) for r, c in seeds.fg]
    bg = [(r - r0, c - c0) for r, c in seeds.bg]
    result = solve_dirichlet(lattice, fg, bg, params)
    labels, _ = ndimage.label(result.mask)
    keep = np.unique([labels[r, c] for r, c in fg])
    keep = keep[keep > 0]
    mask = np.zeros(img.shape, bool)
    mask[r0:r1, c0:c1] = np.isin(labels, keep)
    return mask, result, (r0, c0, r1, c1)
