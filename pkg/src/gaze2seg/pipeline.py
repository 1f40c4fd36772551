"""End-to-end orchestration: gaze -> attention -> saliency -> seeds -> RW -> metrics."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ConvergenceError, Gaze2SegError, NoBoundaryFound
from .gaze import (AttentionRegion, GazeParams, build_attention_maps, rank_regions,
                   select_regions, stabilize_trace)
from .ingest import (LabelMask, SceneToStimulusTransform, Volume, assign_slices,
                     parse_gaze_log, parse_viewer_log, read_mask, read_volume, write_mask,
                     write_scalar_map)
from .metrics import evaluate
from .rw import RwParams, segment_region
from .saliency import SaliencyParams, compute_saliency, saliency_window
from .seeding import SeedParams, SeedSet, make_seeds, write_seeds

log = logging.getLogger(__name__)

REGION_HEADER = ["rank", "slice", "x", "y", "radius_mm", "attention", "dwell_ms", "t_first_ms"]


@dataclass
class PipelineConfig:
    epsilon_mm: float = 7.5
    t_hat_ms: float = 500.0
    patch_size: int = 7
    k_patches: int = 64
    lambda_: float = 3.0
    scales: tuple = (1.0, 0.8, 0.5, 0.3)
    foci_threshold: float = 0.8
    window_margin_mm: float = 20.0
    grad_quantile: float = 0.98
    drop_fraction: float = 0.5
    max_radius_mm: float = 30.0
    bg_margin_px: int = 2
    beta: float = 90.0
    cg_tolerance: float = 1e-8
    max_iters: int = 0  # 0: ten times the number of unknowns
    crop_margin_mm: float = 15.0
    top_k: int = 0  # 0: every region with attention >= min_attention
    min_attention: float = 0.5
    jobs: int = 1
    out: str = "gaze2seg_out"

    # config-file keys differ from attribute names only where Python forbids it
    @staticmethod
    def key(name: str) -> str:
        return name.rstrip("_")

    @classmethod
    def keys(cls) -> dict:
        return {cls.key(f.name): f for f in fields(cls)}

    @classmethod
    def parse_value(cls, key: str, text: str):
        f = cls.keys()[key]
        try:
            if f.name == "scales":
                return tuple(float(v) for v in text.replace(",", " ").split())
            return type(f.default)(text) if not isinstance(f.default, int) else int(text)
        except ValueError:
            raise ConfigurationError(f"bad value {text!r} for {key}") from None

    @classmethod
    def from_mapping(cls, values: dict) -> "PipelineConfig":
        known = cls.keys()
        unknown = set(values) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**{known[k].name: v for k, v in values.items()})
        cfg.validate()
        return cfg

    @classmethod
    def read_file(cls, path) -> dict:
        """Parse a flat ``key = value`` file; ``#`` starts a comment."""
        values = {}
        for n, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}: line {n} is not key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            if k not in cls.keys():
                raise ConfigurationError(f"{path}: unknown config key {k!r} on line {n}")
            values[k] = cls.parse_value(k, v)
        return values

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "scales":
                v = ",".join(repr(s) for s in v)
            lines.append(f"{self.key(f.name)} = {v}")
        return "\n".join(lines) + "\n"

    def validate(self):
        try:
            self.gaze_params((1.0, 1.0))
            self.saliency_params()
            self.seed_params()
            self.rw_params()
        except Gaze2SegError as exc:
            raise ConfigurationError(str(exc)) from None
        if self.top_k < 0 or self.jobs < 1 or self.max_iters < 0:
            raise ConfigurationError("top_k and max_iters must be >= 0, jobs >= 1")
        if not 0 <= self.min_attention <= 1:
            raise ConfigurationError("min_attention must lie in [0, 1]")

    def gaze_params(self, pitch) -> GazeParams:
        return GazeParams(self.epsilon_mm, self.t_hat_ms, tuple(pitch))

    def saliency_params(self) -> SaliencyParams:
        return SaliencyParams(self.patch_size, self.k_patches, self.lambda_,
                              tuple(self.scales), self.foci_threshold)

    def seed_params(self) -> SeedParams:
        return SeedParams(self.grad_quantile, self.drop_fraction, self.max_radius_mm,
                          self.bg_margin_px)

    def rw_params(self) -> RwParams:
        return RwParams(self.beta, self.cg_tolerance, self.max_iters or None,
                        self.crop_margin_mm)


def load_config(path=None, overrides=None) -> PipelineConfig:
    """Defaults, then the file, then explicit overrides (``None`` values ignored)."""
    values = PipelineConfig.read_file(path) if path else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return PipelineConfig.from_mapping(values)


# --------------------------------------------------------------------------
# stages


def raster_of(volume: Volume):
    nx, ny, _ = volume.dims
    return nx, ny


def pitch_of(volume: Volume):
    return volume.spacing_mm[0], volume.spacing_mm[1]


def load_transform(calibration=None, identity=False) -> SceneToStimulusTransform:
    if calibration and Path(calibration).exists():
        return SceneToStimulusTransform.from_file(calibration)
    if calibration and not identity:
        raise ConfigurationError(f"calibration file {calibration} not found "
                                 "(pass --identity-calibration to use the identity)")
    return SceneToStimulusTransform.identity()


def attention_stage(volume: Volume, gaze_path, viewer_path, config: PipelineConfig,
                    transform: SceneToStimulusTransform):
    """Return ``(maps, ranked_regions, trace)`` for a reading session."""
    raster = raster_of(volume)
    trace = parse_gaze_log(gaze_path, transform, raster)
    events = parse_viewer_log(viewer_path, n_slices=volume.dims[2]) if viewer_path else []
    trace = assign_slices(trace, events, default_slice=0)
    params = config.gaze_params(pitch_of(volume))
    points = stabilize_trace(trace, params)
    maps = build_attention_maps(points, params, raster)
    return maps, rank_regions(maps), trace


def seeding_stage(volume: Volume, region: AttentionRegion, config: PipelineConfig):
    """Saliency window and seeds for one region; returns ``(smap, seeds)``."""
    pitch = pitch_of(volume)
    image = volume.intensities[region.slice]
    win = saliency_window(region.center, region.radius_mm, config.window_margin_mm,
                          pitch, raster_of(volume))
    r0, c0, r1, c1 = win
    smap = compute_saliency(image[r0:r1, c0:c1], config.saliency_params(), window=win)
    seeds = make_seeds(region, smap, image, pitch, config.seed_params())
    return smap, seeds


def rw_stage(volume: Volume, seed_sets, config: PipelineConfig) -> np.ndarray:
    """Union of per-set segmentations as a full ``[z, y, x]`` mask."""
    mask = np.zeros(volume.intensities.shape, bool)
    for s in seed_sets:
        m, _, _ = segment_region(volume.intensities[s.slice], s, pitch_of(volume),
                                 config.rw_params())
        mask[s.slice] |= m
    return mask


@dataclass
class RegionOutcome:
    rank: int
    region: AttentionRegion
    status: str = "ok"
    error: str = ""
    seeds: SeedSet | None = None
    mask: np.ndarray | None = None  # 2-D, on region.slice
    smap: object = None
    rw_iterations: int = 0
    rw_residual: float = 0.0


def process_region(volume: Volume, rank: int, region: AttentionRegion,
                   config: PipelineConfig) -> RegionOutcome:
    out = RegionOutcome(rank, region)
    stage = "saliency"
    try:
        out.smap, out.seeds = seeding_stage(volume, region, config)
        stage = "rw"
        out.mask, res, _ = segment_region(volume.intensities[region.slice], out.seeds,
                                          pitch_of(volume), config.rw_params())
        out.rw_iterations, out.rw_residual = res.iterations, float(res.residual)
    except NoBoundaryFound as exc:
        exc.region, exc.stage = rank, exc.stage or "seeding"
        out.status, out.error = "no_boundary", str(exc)
    except ConvergenceError as exc:
        exc.region, exc.stage = rank, stage
        out.status, out.error = "no_convergence", str(exc)
    return out


def write_regions_csv(path, regions):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REGION_HEADER)
        for rank, r in enumerate(regions, 1):
            w.writerow([rank, r.slice, repr(r.center[0]), repr(r.center[1]), repr(r.radius_mm),
                        repr(r.attention), repr(r.dwell_ms), r.t_first_ms])


def read_regions_csv(path) -> list[AttentionRegion]:
    regions = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            regions.append(AttentionRegion(
                center=(float(row["x"]), float(row["y"])), slice=int(row["slice"]),
                radius_mm=float(row["radius_mm"]), attention=float(row["attention"]),
                t_first_ms=int(row["t_first_ms"]), dwell_ms=float(row["dwell_ms"])))
    return regions


def write_attention_maps(out: Path, maps, volume: Volume):
    d = out / "attention"
    d.mkdir(parents=True, exist_ok=True)
    for m in maps:
        write_scalar_map(m.values, d / f"slice_{m.slice:03d}.hdr", volume.spacing_mm)


def write_region_artifacts(out: Path, outcome: RegionOutcome, volume: Volume):
    d = out / f"region_{outcome.rank}"
    d.mkdir(parents=True, exist_ok=True)
    if outcome.smap is not None:
        write_scalar_map(outcome.smap.values, d / "saliency.hdr", volume.spacing_mm)
    if outcome.seeds is not None:
        write_seeds(d / "seeds.csv", outcome.seeds)
    if outcome.mask is not None:
        full = np.zeros(volume.intensities.shape, bool)
        full[outcome.region.slice] = outcome.mask
        write_mask(LabelMask(full, volume.spacing_mm), d / "mask.hdr")


@dataclass
class PipelineResult:
    report: dict
    mask: np.ndarray
    outcomes: list = field(default_factory=list)
    maps: list = field(default_factory=list)
    exit_code: int = 0


def run_pipeline(volume_path, gaze_path, viewer_path, config: PipelineConfig,
                 calibration=None, identity_calibration=False, reference=None,
                 figures=False) -> PipelineResult:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    volume = read_volume(volume_path)
    transform = load_transform(calibration, identity_calibration)
    maps, ranked, trace = attention_stage(volume, gaze_path, viewer_path, config, transform)
    selected = select_regions(ranked, config.top_k or None, config.min_attention)
    write_attention_maps(out, maps, volume)
    write_regions_csv(out / "regions.csv", selected)

    jobs = max(1, min(config.jobs, len(selected) or 1))
    args = [(volume, rank, r, config) for rank, r in enumerate(selected, 1)]
    if jobs == 1:
        outcomes = [process_region(*a) for a in args]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(lambda a: process_region(*a), args))
    for o in outcomes:
        write_region_artifacts(out, o, volume)

    composite = np.zeros(volume.intensities.shape, bool)
    for o in outcomes:
        if o.mask is not None:
            composite[o.region.slice] |= o.mask
    write_mask(LabelMask(composite, volume.spacing_mm), out / "mask.hdr")

    notes = []
    if not selected:
        notes.append("no attention regions")
    for o in outcomes:
        if o.status != "ok":
            notes.append(f"region {o.rank}: {o.error}")
    if trace.n_flagged:
        notes.append(f"{trace.n_flagged} off-screen gaze samples excluded")
    region_rows = [{
        "rank": o.rank, "slice": o.region.slice,
        "center": [o.region.center[0], o.region.center[1]],
        "attention": o.region.attention, "dwell_ms": o.region.dwell_ms, "status": o.status,
        "fg": [[c, r] for r, c in o.seeds.fg] if o.seeds else [],
        "bg": [[c, r] for r, c in o.seeds.bg] if o.seeds else [],
        "mask_voxels": int(o.mask.sum()) if o.mask is not None else 0,
        "rw_iterations": o.rw_iterations,
    } for o in outcomes]

    if reference is not None:
        ref = read_mask(reference)
        if ref.values.shape != composite.shape:
            raise ConfigurationError("reference mask dims differ from the volume")
        scored = [(o.rank, o.region.slice, o.mask) for o in outcomes if o.mask is not None]
        slices = sorted({z for _, z, _ in scored}) or None
        ev = evaluate(composite, ref.values, volume.spacing_mm, scored, notes, slices=slices)
        report = asdict(ev)
    else:
        report = {"dsc": None, "hd_mm": None, "counts": {"prediction": int(composite.sum())},
                  "per_region": [], "notes": notes + ["no reference mask: metrics skipped"]}
    report["regions"] = region_rows
    report["config"] = {PipelineConfig.key(f.name): getattr(config, f.name)
                        for f in fields(config) if f.name not in ("jobs", "out")}
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    if figures:
        from . import plotting
        plotting.render_all(out, volume, maps, outcomes,
                            read_mask(reference).values if reference else None, composite)

    code = 0
    if any(o.status == "no_convergence" for o in outcomes):
        code = ConvergenceError.exit_code
    elif outcomes and all(o.status == "no_boundary" for o in outcomes):
        code = NoBoundaryFound.exit_code
    return PipelineResult(report, composite, outcomes, maps, code)
