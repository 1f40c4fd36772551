"""PNG renderings of attention maps, saliency windows and segmentations."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "font.size": 8,
    "axes.titlesize": 9,
    "figure.dpi": 110,
    "savefig.bbox": "tight",
})


def _gray(ax, image, extent=None):
    ax.imshow(image, cmap="gray", interpolation="nearest", extent=extent)
    ax.set_xticks([])
    ax.set_yticks([])


def _seeds(ax, seeds, origin=(0, 0)):
    if seeds is None:
        return
    r0, c0 = origin
    fg = np.array(seeds.fg) - (r0, c0)
    bg = np.array(seeds.bg) - (r0, c0)
    ax.plot(fg[:, 1], fg[:, 0], "o", ms=5, mfc="none", mec="lime", label="FG")
    if len(bg):
        ax.plot(bg[:, 1], bg[:, 0], "x", ms=5, color="red", label="BG")


def attention_figure(image, amap, path):
    fig, ax = plt.subplots(figsize=(4, 4))
    _gray(ax, image)
    overlay = np.ma.masked_where(amap.values <= 0, amap.values)
    im = ax.imshow(overlay, cmap="jet", alpha=0.45, vmin=0, vmax=1)
    for r in amap.regions:
        ax.plot(r.center[0], r.center[1], "+", color="white", ms=6)
    ax.set_title(f"attention, slice {amap.slice}")
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    fig.savefig(path)
    plt.close(fig)


def saliency_figure(image, smap, seeds, path):
    r0, c0, r1, c1 = smap.window
    fig, axes = plt.subplots(1, 3, figsize=(9, 3.2))
    _gray(axes[0], image[r0:r1, c0:c1])
    axes[0].set_title("window")
    axes[1].imshow(smap.mean, cmap="magma", vmin=0, vmax=1)
    axes[1].set_title("multi-scale saliency")
    axes[2].imshow(smap.values, cmap="magma", vmin=0, vmax=1)
    axes[2].set_title("foci-refined saliency")
    for ax in axes[1:]:
        ax.set_xticks([])
        ax.set_yticks([])
    for ax in (axes[0], axes[2]):
        _seeds(ax, seeds, (r0, c0))
    axes[0].legend(loc="lower right", fontsize=6)
    fig.savefig(path)
    plt.close(fig)


def segmentation_figure(image, mask, seeds, path, reference=None, pad=12):
    rows, cols = np.nonzero(mask)
    if seeds is not None:
        pts = np.array(seeds.fg + seeds.bg)
        rows = np.concatenate([rows, pts[:, 0]])
        cols = np.concatenate([cols, pts[:, 1]])
    h, w = image.shape
    r0, r1 = max(0, rows.min() - pad), min(h, rows.max() + pad + 1)
    c0, c1 = max(0, cols.min() - pad), min(w, cols.max() + pad + 1)
    fig, ax = plt.subplots(figsize=(4, 4))
    _gray(ax, image[r0:r1, c0:c1])
    if mask[r0:r1, c0:c1].any():
        ax.contour(mask[r0:r1, c0:c1], levels=[0.5], colors="yellow", linewidths=1)
    if reference is not None and reference[r0:r1, c0:c1].any():
        ax.contour(reference[r0:r1, c0:c1], levels=[0.5], colors="cyan",
                   linewidths=0.8, linestyles="dashed")
    _seeds(ax, seeds, (r0, c0))
    ax.set_title("random walker (yellow), reference (cyan)")
    fig.savefig(path)
    plt.close(fig)


def render_all(out, volume, maps, outcomes, reference=None, composite=None):
    out = Path(out)
    figs = out / "figures"
    figs.mkdir(parents=True, exist_ok=True)
    written = []
    for m in maps:
        if not m.regions:
            continue
        p = figs / f"attention_slice_{m.slice:03d}.png"
        attention_figure(volume.intensities[m.slice], m, p)
        written.append(p)
    for o in outcomes:
        image = volume.intensities[o.region.slice]
        if o.smap is not None:
            p = figs / f"region_{o.rank}_saliency.png"
            saliency_figure(image, o.smap, o.seeds, p)
            written.append(p)
        if o.mask is not None:
            p = figs / f"region_{o.rank}_segmentation.png"
            ref = reference[o.region.slice] if reference is not None else None
            segmentation_figure(image, o.mask, o.seeds, p, ref)
            written.append(p)
    return written
