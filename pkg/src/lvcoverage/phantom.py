"""Deterministic synthetic short-axis LV phantoms plus the triplet pipeline.

A volume is an ordered base-to-apex stack: slice 0 carries a rotated
elliptical blood pool merged with an LVOT protrusion (the basal signature),
interior slices are circular pool/myocardium annuli of gently decreasing
radius, and the final slice is an apical cap whose pool nearly vanishes.
Myocardium intensity fades toward the cap (a partial-volume effect); without
the fade a thresholding detector cannot isolate a few-pixel pool against a
full-contrast rim.

All randomness flows through per-volume generators derived as
``default_rng([seed, volume_index])``, so cohorts are reproducible regardless
of generation order.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import tensorfile
from .errors import InputError, SampleError, SpecError
from .network import TrainingSet

CROP = 120
AUGMENT_ROTATIONS = (-45.0, 45.0)
AUGMENT_SCALES = (0.75, 1.25)


@dataclass(frozen=True)
class PhantomSpec:
    n_slices: int = 10
    canvas: int = 160
    spacing: tuple = (1.8, 1.8, 8.0)
    center_jitter: float = 4.0
    pool_radius_range: tuple = (11.5, 13.5)      # mid-slice pool radius, px
    myo_thickness_range: tuple = (5.0, 7.0)
    basal_axis_scale: float = 1.5                # ellipse a / mid pool radius
    basal_axis_ratio: float = 0.73               # ellipse b / a
    lvot_length_factor: float = 0.9              # of mid pool radius
    lvot_width_factor: float = 0.55
    base_pool_factor: float = 1.18               # slice 1 radius factor
    apex_pool_factor: float = 0.70               # slice n-2 radius factor
    cap_pool_factor: float = 0.07                # last slice, near-vanishing
    orientation_deg: tuple = (-45.0, 45.0)
    pool_intensity: float = 0.90
    myo_intensity: float = 0.30
    cap_myo_intensity: float = 0.22
    background: float = 0.15
    texture_amp: float = 0.05
    noise_sd: float = 0.03
    es_base_scale: float = 0.85                  # ES pool scale at the base
    es_apex_scale: float = 0.55                  # ... and at the apex

    def __post_init__(self):
        if self.n_slices < 3:
            raise SpecError("phantoms need at least 3 slices")
        if self.canvas < CROP:
            raise SpecError(f"canvas {self.canvas} smaller than the {CROP} crop")


@dataclass
class VolumeStack:
    """Ordered short-axis stack, index 0 = most basal slice present."""

    slices: np.ndarray          # (n, H, W) float32 intensities in [0, 1]
    labels: np.ndarray          # (n, H, W) uint8: 0 bg, 1 blood pool, 2 myo
    spacing: tuple
    has_base: bool
    has_apex: bool
    volume_id: str
    seed: int
    analytic_pool_mm2: np.ndarray | None = None  # per-slice, generator only

    def __post_init__(self):
        if self.slices.shape[0] < 3:
            raise SpecError("a volume stack needs at least 3 slices")
        if self.labels.shape != self.slices.shape:
            raise SpecError("labels misaligned with slices")

    @property
    def n_slices(self) -> int:
        return self.slices.shape[0]

    def pool_mask(self, index: int) -> np.ndarray:
        return self.labels[index] == 1

    def drop_slices(self, base: bool = False, apex: bool = False) -> "VolumeStack":
        lo = 1 if base else 0
        hi = self.n_slices - 1 if apex else self.n_slices
        areas = self.analytic_pool_mm2
        return VolumeStack(
            slices=self.slices[lo:hi].copy(),
            labels=self.labels[lo:hi].copy(),
            spacing=self.spacing,
            has_base=self.has_base and not base,
            has_apex=self.has_apex and not apex,
            volume_id=self.volume_id,
            seed=self.seed,
            analytic_pool_mm2=None if areas is None else areas[lo:hi].copy(),
        )


@dataclass
class Triplet:
    """Three adjacent slices, center-cropped: the network's input unit."""

    block: np.ndarray           # (120, 120, 3), slice order base -> apex
    classifier: str | None      # "MBS" | "MAS" | None for unlabeled
    polarity: int | None        # 1 = target structure absent, 0 = present
    volume_id: str = ""
    slice_indices: tuple = ()


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def crop_center(image: np.ndarray, size: int = CROP) -> np.ndarray:
    """Center crop to ``size`` per axis; pad symmetrically with zeros if smaller."""
    out = image
    for axis in (-2, -1):
        n = out.shape[axis]
        if n >= size:
            lo = (n - size) // 2
            out = np.take(out, np.arange(lo, lo + size), axis=axis)
        else:
            pad = size - n
            widths = [(0, 0)] * out.ndim
            widths[axis] = (pad // 2, pad - pad // 2)
            out = np.pad(out, widths)
    return out


@dataclass(frozen=True)
class _SliceShape:
    """Continuous pool/myo indicator for one slice."""

    cy: float
    cx: float
    kind: str                  # "basal" | "round"
    pool_r: float              # circle radius (round) / unused for basal
    ellipse_a: float
    ellipse_b: float
    theta: float
    lvot_from: float           # protrusion start/end along the major axis
    lvot_to: float
    lvot_halfwidth: float
    myo_thickness: float

    def pool_indicator(self, y, x):
        if self.kind == "round":
            return (y - self.cy) ** 2 + (x - self.cx) ** 2 <= self.pool_r ** 2
        return self._basal(y, x, 0.0)

    def myo_outer_indicator(self, y, x):
        t = self.myo_thickness
        if self.kind == "round":
            return (y - self.cy) ** 2 + (x - self.cx) ** 2 <= (self.pool_r + t) ** 2
        return self._basal(y, x, t)

    def _basal(self, y, x, grow):
        ct, st = math.cos(self.theta), math.sin(self.theta)
        u = (x - self.cx) * ct + (y - self.cy) * st      # along major axis
        v = -(x - self.cx) * st + (y - self.cy) * ct
        a, b = self.ellipse_a + grow, self.ellipse_b + grow
        ell = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        hw = self.lvot_halfwidth + grow * 0.6
        lo, hi = self.lvot_from, self.lvot_to + grow * 0.6
        stadium = (u >= lo) & (u <= hi) & (np.abs(v) <= hw)
        cap = (u - hi) ** 2 + v ** 2 <= hw ** 2
        return ell | stadium | cap

    def max_extent(self) -> float:
        if self.kind == "round":
            return self.pool_r + self.myo_thickness
        return max(self.ellipse_a, self.lvot_to + self.lvot_halfwidth * 0.6) \
            + self.myo_thickness


def _pool_factors(spec: PhantomSpec, n: int) -> np.ndarray:
    """Per-slice pool radius factors, slice 0 unused (basal ellipse)."""
    factors = np.empty(n)
    factors[0] = np.nan
    interior = max(n - 2, 1)
    for s in range(1, n - 1):
        frac = (s - 1) / max(interior - 1, 1)
        factors[s] = spec.base_pool_factor + frac * (
            spec.apex_pool_factor - spec.base_pool_factor)
    factors[n - 1] = spec.cap_pool_factor
    return factors


def _myo_fade(spec: PhantomSpec, factor: float) -> float:
    """Myocardium intensity fades as the pool factor approaches the cap."""
    lo, hi = spec.cap_pool_factor, spec.apex_pool_factor
    frac = min(max((factor - lo) / (hi - lo), 0.0), 1.0)
    return spec.cap_myo_intensity + frac * (spec.myo_intensity - spec.cap_myo_intensity)


def _phase_scale(spec: PhantomSpec, phase: str, s: int, n: int) -> float:
    if phase == "ED":
        return 1.0
    if phase != "ES":
        raise SpecError(f"unknown cardiac phase {phase!r}")
    frac = s / max(n - 1, 1)
    return spec.es_base_scale + frac * (spec.es_apex_scale - spec.es_base_scale)


def _volume_shapes(spec: PhantomSpec, rng: np.random.Generator, phase: str):
    n = spec.n_slices
    half = spec.canvas / 2.0
    cy = half + rng.uniform(-spec.center_jitter, spec.center_jitter)
    cx = half + rng.uniform(-spec.center_jitter, spec.center_jitter)
    r_mid = rng.uniform(*spec.pool_radius_range)
    thickness = rng.uniform(*spec.myo_thickness_range)
    theta = math.radians(rng.uniform(*spec.orientation_deg))
    lvot_side = 1.0 if rng.random() < 0.5 else -1.0
    factors = _pool_factors(spec, n)

    shapes = []
    for s in range(n):
        scale = _phase_scale(spec, phase, s, n)
        if s == 0:
            a = spec.basal_axis_scale * r_mid * scale
            b = spec.basal_axis_ratio * a
            hw = 0.5 * spec.lvot_width_factor * r_mid * scale
            start = 0.55 * a
            end = a + spec.lvot_length_factor * r_mid * scale - hw * 0.6
            th = theta if lvot_side > 0 else theta + math.pi
            shapes.append(_SliceShape(
                cy=cy, cx=cx, kind="basal", pool_r=0.0,
                ellipse_a=a, ellipse_b=b, theta=th,
                lvot_from=start, lvot_to=end, lvot_halfwidth=hw,
                myo_thickness=thickness,
            ))
        else:
            f = factors[s]
            rim = thickness * (0.35 + 0.65 * min(f, 1.0))
            shapes.append(_SliceShape(
                cy=cy, cx=cx, kind="round", pool_r=f * r_mid * scale,
                ellipse_a=0.0, ellipse_b=0.0, theta=0.0,
                lvot_from=0.0, lvot_to=0.0, lvot_halfwidth=0.0,
                myo_thickness=rim,
            ))

    jitter = math.hypot(cy - half, cx - half)
    reach = jitter + max(sh.max_extent() for sh in shapes)
    # Must survive re-cropping after the largest augmentation scale.
    limit = (CROP / 2.0 - 2.0) / max(AUGMENT_SCALES)
    if reach > limit:
        raise SpecError(
            f"geometry reach {reach:.1f}px overflows the {CROP} center crop "
            f"at scale {max(AUGMENT_SCALES)}"
        )
    return shapes, factors


def _background(spec: PhantomSpec, rng: np.random.Generator, shape):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    field = np.full(shape, spec.background)
    for _ in range(2):
        u, v = rng.uniform(0.5, 1.5, size=2)
        phase = rng.uniform(0, 2 * math.pi)
        field = field + (spec.texture_amp / 2.0) * np.sin(
            2 * math.pi * (u * yy + v * xx) / spec.canvas + phase)
    return field


def analytic_pool_area(shape: _SliceShape, sub: int = 8) -> float:
    """Continuous pool area in px^2, independent of the rasterizer.

    Circles use the closed form; the basal ellipse+LVOT union is integrated
    by sub x sub quadrature of the continuous indicator over a bounding box.
    """
    if shape.kind == "round":
        return math.pi * shape.pool_r ** 2
    reach = math.ceil(shape.max_extent()) + 2
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    ticks = np.arange(-reach, reach + 1, dtype=np.float64)
    ys = shape.cy + (ticks[:, None] + offs[None, :]).reshape(-1)
    xs = shape.cx + (ticks[:, None] + offs[None, :]).reshape(-1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return float(shape.pool_indicator(yy, xx).sum()) / (sub * sub)


def gen_volume(spec: PhantomSpec, rng: np.random.Generator,
               phase: str = "ED", volume_id: str = "0000",
               seed: int = 0) -> VolumeStack:
    """Render one full-coverage volume; deterministic in the rng state."""
    n = spec.n_slices
    shapes, _ = _volume_shapes(spec, rng, phase)
    hw = (spec.canvas, spec.canvas)
    yy, xx = np.mgrid[0:hw[0], 0:hw[1]].astype(np.float64)

    slices = np.empty((n,) + hw, dtype=np.float32)
    labels = np.zeros((n,) + hw, dtype=np.uint8)
    areas = np.empty(n, dtype=np.float64)
    factors = _pool_factors(spec, n)
    dx, dy, _ = spec.spacing

    for s, shape in enumerate(shapes):
        pool = shape.pool_indicator(yy, xx)
        myo = shape.myo_outer_indicator(yy, xx) & ~pool
        myo_int = spec.myo_intensity if s == 0 else _myo_fade(spec, factors[s])
        image = _background(spec, rng, hw)
        image[myo] = myo_int
        image[pool] = spec.pool_intensity
        if spec.noise_sd > 0:
            image = image + rng.normal(0.0, spec.noise_sd, hw)
        slices[s] = np.clip(image, 0.0, 1.0)
        labels[s][myo] = 2
        labels[s][pool] = 1
        areas[s] = analytic_pool_area(shape) * dx * dy

    return VolumeStack(
        slices=slices, labels=labels, spacing=spec.spacing,
        has_base=True, has_apex=True, volume_id=volume_id, seed=seed,
        analytic_pool_mm2=areas,
    )


ABLATIONS = ("none", "drop_base", "drop_apex", "drop_both")


def apply_ablation(volume: VolumeStack, ablation: str) -> VolumeStack:
    if ablation == "none":
        return volume
    if ablation == "drop_base":
        return volume.drop_slices(base=True)
    if ablation == "drop_apex":
        return volume.drop_slices(apex=True)
    if ablation == "drop_both":
        return volume.drop_slices(base=True, apex=True)
    raise InputError(f"unknown ablation {ablation!r}; pick one of {ABLATIONS}")


def gen_cohort(n_volumes: int, spec: PhantomSpec, seed: int,
               ablation: str = "none", phase: str = "ED") -> list:
    """Full-coverage volumes with the requested slice removal applied."""
    if n_volumes < 1:
        raise InputError("n_volumes must be >= 1")
    volumes = []
    for idx in range(n_volumes):
        rng = np.random.default_rng([seed, idx])
        vol = gen_volume(spec, rng, phase=phase, volume_id=f"{idx:04d}", seed=seed)
        volumes.append(apply_ablation(vol, ablation))
    return volumes


# ---------------------------------------------------------------------------
# Triplet extraction and augmentation
# ---------------------------------------------------------------------------

def _block(volume: VolumeStack, start: int) -> np.ndarray:
    stack = crop_center(volume.slices[start:start + 3])
    return np.moveaxis(stack, 0, 2).astype(np.float32)


def make_training_samples(volume: VolumeStack) -> list:
    """Four training triplets: two negatives at the ends, two mid positives.

    The positive (structure-absent) block for each classifier is anchored at
    the middle slice and shifted just enough to stay disjoint from that
    classifier's own negative block; needs at least 6 slices.
    """
    n = volume.n_slices
    if n < 6:
        raise SampleError(f"need at least 6 slices for training samples, got {n}")
    mid = n // 2
    mbs_pos = max(3, mid - 2)
    mas_pos = min(n - 6, mid)
    starts = {
        ("MBS", 0): 0,
        ("MAS", 0): n - 3,
        ("MBS", 1): mbs_pos,
        ("MAS", 1): mas_pos,
    }
    out = []
    for (classifier, polarity), start in starts.items():
        out.append(Triplet(
            block=_block(volume, start),
            classifier=classifier,
            polarity=polarity,
            volume_id=volume.volume_id,
            slice_indices=(start, start + 1, start + 2),
        ))
    return out


def extract_test_triplets(volume: VolumeStack) -> list:
    """Sliding window of width 3, stride 1: n_slices - 2 unlabeled triplets."""
    n = volume.n_slices
    if n < 3:
        raise SampleError(f"need at least 3 slices, got {n}")
    return [
        Triplet(block=_block(volume, k), classifier=None, polarity=None,
                volume_id=volume.volume_id, slice_indices=(k, k + 1, k + 2))
        for k in range(n - 2)
    ]


def warp_image(image: np.ndarray, angle_deg: float, scale: float) -> np.ndarray:
    """In-plane rotate+scale about the image center, bilinear, zero exterior.

    The inverse map is evaluated analytically, so the identity transform
    reproduces the input exactly.
    """
    h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    ang = math.radians(angle_deg)
    ct, st = math.cos(ang), math.sin(ang)
    # Destination -> source: undo scale, then rotation.
    dy, dx = (yy - cy) / scale, (xx - cx) / scale
    sy = cy + ct * dy + st * dx
    sx = cx - st * dy + ct * dx
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy, fx = sy - y0, sx - x0

    def sample(yi, xi):
        inside = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = np.zeros_like(sy)
        vals[inside] = image[yi[inside], xi[inside]]
        return vals

    top = sample(y0, x0) * (1 - fx) + sample(y0, x0 + 1) * fx
    bot = sample(y0 + 1, x0) * (1 - fx) + sample(y0 + 1, x0 + 1) * fx
    return (top * (1 - fy) + bot * fy).astype(image.dtype)


def warp_block(block: np.ndarray, angle_deg: float, scale: float) -> np.ndarray:
    return np.stack(
        [warp_image(block[:, :, k], angle_deg, scale) for k in range(block.shape[2])],
        axis=2,
    )


def augment(triplet: Triplet) -> list:
    """The rotation x scale cross product: four transformed copies, labels kept."""
    out = []
    for angle in AUGMENT_ROTATIONS:
        for scale in AUGMENT_SCALES:
            out.append(replace(
                triplet, block=warp_block(triplet.block, angle, scale)
            ))
    return out


def training_set(volumes, classifier: str, augmented: bool = True) -> TrainingSet:
    """Assemble one classifier's TrainingSet from full-coverage volumes."""
    base = []
    for vol in volumes:
        base.extend(t for t in make_training_samples(vol)
                    if t.classifier == classifier)
    triplets = list(base)
    if augmented:
        for t in base:
            triplets.extend(augment(t))
    x = np.stack([t.block for t in triplets])
    y = np.array([t.polarity for t in triplets], dtype=np.int64)
    return TrainingSet(x, y)


# ---------------------------------------------------------------------------
# Cohort persistence
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.tsv"


def save_cohort(volumes, out_dir) -> None:
    """One TNSR per volume and per label stack, plus the tab-separated manifest."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for vol in volumes:
        tensorfile.save_tensor(
            os.path.join(out_dir, f"vol_{vol.volume_id}.tnsr"),
            vol.slices.astype(np.float32),
        )
        tensorfile.save_tensor(
            os.path.join(out_dir, f"msk_{vol.volume_id}.tnsr"),
            vol.labels.astype(np.float32),
        )
        rows.append("\t".join([
            vol.volume_id, str(vol.n_slices),
            "true" if vol.has_base else "false",
            "true" if vol.has_apex else "false",
            str(vol.seed),
        ]))
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as fh:
        fh.write("\n".join(rows) + "\n")


def load_cohort(in_dir, spacing=(1.8, 1.8, 8.0)) -> list:
    path = os.path.join(in_dir, MANIFEST_NAME)
    if not os.path.exists(path):
        raise InputError(f"no {MANIFEST_NAME} in {in_dir}")
    volumes = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            vid, n_slices, has_base, has_apex, seed = line.split("\t")
            slices = tensorfile.load_tensor(os.path.join(in_dir, f"vol_{vid}.tnsr"))
            labels = tensorfile.load_tensor(os.path.join(in_dir, f"msk_{vid}.tnsr"))
            vol = VolumeStack(
                slices=slices.astype(np.float32),
                labels=labels.astype(np.uint8),
                spacing=spacing,
                has_base=has_base == "true",
                has_apex=has_apex == "true",
                volume_id=vid,
                seed=int(seed),
            )
            if vol.n_slices != int(n_slices):
                raise InputError(f"manifest says {n_slices} slices for {vid}, "
                                 f"file has {vol.n_slices}")
            volumes.append(vol)
    return volumes
