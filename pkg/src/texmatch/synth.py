"""Synthetic ridge imagery and planted-truth match instances.

References are rendered as sinusoidal ridge patterns, either with a
constant ridge direction or with a smoothly warped flow field, then run
through the real extraction pipeline. Latents derive from a reference by
cropping a connected region of its minutiae, applying a rigid rotation
plus per-point jitter, and re-emitting each surviving point as a dual
pair. Both duals' descriptors are re-extracted from the reference image
at the jittered pose (the opposite one with the sampling frame flipped
by pi), so each dual carries real image content and only the
true-orientation dual resembles the enrolled descriptor. The
latent-to-reference index map is returned as ground truth, which makes
identification experiments self-scoring.

The module also hosts the exhaustive matching oracle used to validate
the spectral stage on small instances.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy import ndimage

from .errors import ConfigError, ValidationError
from .matcher import CompatibilityMatrix, Correspondence
from .ridgeflow import GrayImage, estimate_orientation_field, segment_roi
from .template import (DESCRIPTOR_LENS, ExtractionConfig, TextureTemplate,
                       VirtualMinutia, build_template)

BRUTE_FORCE_LIMIT = 12

# latent minutiae are translated so every coordinate clears this margin
_LATENT_MARGIN = 16


@dataclasses.dataclass(frozen=True)
class SynthConfig:
    """Settings for reference rendering and latent derivation."""

    seed: int = 0
    width: int = 512
    height: int = 512
    ridge_period: float = 9.0
    orientation_model: str = "smooth"   # "constant" or "smooth"
    base_angle: float | None = None     # constant-model ridge direction
    crop_fraction: float = 0.4
    position_jitter: float = 2.0        # px, std of planted coordinate noise
    orientation_jitter: float = math.radians(5.0)
    descriptor_noise: float = 0.05      # std per descriptor component
    rotation_range: tuple[float, float] = (0.0, 0.0)
    extraction: ExtractionConfig = ExtractionConfig()

    def __post_init__(self):
        if self.orientation_model not in ("constant", "smooth"):
            raise ConfigError(
                f"unknown orientation model {self.orientation_model!r}")
        if not 0.0 < self.crop_fraction <= 1.0:
            raise ConfigError(
                f"crop fraction {self.crop_fraction} outside (0, 1]")
        if min(self.position_jitter, self.orientation_jitter,
               self.descriptor_noise) < 0:
            raise ConfigError("noise magnitudes must be nonnegative")
        if self.ridge_period <= 2.0:
            raise ConfigError(f"ridge period {self.ridge_period} too small")
        if self.rotation_range[0] > self.rotation_range[1]:
            raise ConfigError("empty rotation range")


@dataclasses.dataclass(frozen=True)
class PlantedPair:
    """A reference, a latent derived from it, and the true index map.

    truth maps the latent index of each true-orientation dual to the
    reference minutia it was derived from.
    """

    reference: TextureTemplate
    latent: TextureTemplate
    truth: dict[int, int]


def _phase_field(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Ridge-normal phase over the image grid, in periods."""
    y, x = np.mgrid[0:cfg.height, 0:cfg.width].astype(np.float64)
    if cfg.orientation_model == "constant":
        ridge = cfg.base_angle if cfg.base_angle is not None \
            else rng.uniform(0.0, math.pi)
    else:
        ridge = rng.uniform(0.0, math.pi)
        # smooth sinusoidal warp of the coordinate frame bends the flow
        amp = rng.uniform(6.0, 12.0, size=2)
        wav = rng.uniform(160.0, 320.0, size=2)
        phs = rng.uniform(0.0, 1.0, size=2)
        x = x + amp[0] * np.sin(2.0 * np.pi * (y / wav[0] + phs[0]))
        y = y + amp[1] * np.sin(2.0 * np.pi * (x / wav[1] + phs[1]))
    normal = ridge + math.pi / 2.0
    return (x * math.cos(normal) + y * math.sin(normal)) / cfg.ridge_period


def render_reference_image(cfg: SynthConfig) -> GrayImage:
    """Sinusoidal ridge image for the config's seed.

    The smooth model multiplies the carrier by a low-frequency contrast
    envelope with a random phase. A pure grating is symmetric under a
    point reflection, which would make the two dual orientations of a
    patch indistinguishable; the envelope breaks that symmetry and also
    varies texture across subjects.
    """
    rng = np.random.default_rng([cfg.seed, 0])
    phase = _phase_field(cfg, rng)
    amplitude = 90.0
    texture = 0.0
    if cfg.orientation_model == "smooth":
        y, x = np.mgrid[0:cfg.height, 0:cfg.width].astype(np.float64)
        alpha = rng.uniform(0.0, math.pi)
        wavelength = rng.uniform(80.0, 160.0)
        psi = rng.uniform(0.0, 2.0 * math.pi)
        envelope = 1.0 + 0.35 * np.cos(
            2.0 * np.pi * (x * math.cos(alpha) + y * math.sin(alpha))
            / wavelength + psi)
        amplitude = amplitude * envelope
        # band-limited random texture: smooth enough to survive pose
        # jitter, unique enough to pin locations and subjects apart
        rough = rng.standard_normal((cfg.height, cfg.width))
        rough = ndimage.gaussian_filter(rough, sigma=5.0, mode="reflect")
        texture = rough * (16.0 / rough.std())
    pixels = 127.5 + amplitude * np.cos(2.0 * np.pi * phase) + texture
    return GrayImage(pixels=np.clip(np.round(pixels), 0, 255).astype(np.uint8))


def generate_reference(cfg: SynthConfig) -> tuple[GrayImage, TextureTemplate]:
    """Render a reference image and extract its texture template."""
    image = render_reference_image(cfg)
    field = estimate_orientation_field(image)
    roi = segment_roi(image, field)
    template = build_template(image, roi, field, cfg.extraction, variant="raw")
    return image, template


def _connected_crop(template: TextureTemplate, count: int,
                    rng: np.random.Generator) -> list[int]:
    """Indices of a connected minutiae subset of the requested size.

    Connectivity is 4-neighborhood on the placement grid. Growth is
    breadth-first from a random seed point, so the crop is one compact
    region rather than a scatter.
    """
    n = template.n_minutiae
    if n == 0 or count == 0:
        return []
    coords = template.coords()
    index_of = {(cx, cy): i for i, (cx, cy) in enumerate(map(tuple, coords))}
    start = int(rng.integers(n))
    chosen = [start]
    chosen_set = {start}
    frontier = [start]
    s = float(template.stride)
    while frontier and len(chosen) < count:
        nxt = []
        for i in frontier:
            cx, cy = coords[i]
            for dx, dy in ((s, 0.0), (-s, 0.0), (0.0, s), (0.0, -s)):
                j = index_of.get((cx + dx, cy + dy))
                if j is not None and j not in chosen_set:
                    chosen_set.add(j)
                    chosen.append(j)
                    nxt.append(j)
                    if len(chosen) >= count:
                        return chosen
        frontier = nxt
    return chosen


def _random_unit(rng: np.random.Generator, length: int) -> np.ndarray:
    v = rng.standard_normal(length)
    return v / np.linalg.norm(v)


def derive_latent(image: GrayImage, reference: TextureTemplate,
                  cfg: SynthConfig) -> PlantedPair:
    """Derive a planted latent from a reference image and its template.

    A connected region holding about crop_fraction of the reference
    minutiae is selected and each point's pose is jittered. Both dual
    descriptors are re-extracted from the reference image at the
    jittered pose (the opposite dual at theta + pi), then perturbed by
    component-wise Gaussian noise and renormalized. Coordinates and
    orientations rotate rigidly about the crop centroid by an angle
    drawn from rotation_range and shift into the positive quadrant.
    Sampling before the rotation is exact, not an approximation: patch
    content rides along with a rigid motion of the scene, so the source
    pose and the rotated pose see identical pixels.
    """
    from .descriptor import template_descriptors  # deferred: imports template

    rng = np.random.default_rng([cfg.seed, 1])
    count = max(1, round(cfg.crop_fraction * reference.n_minutiae)) \
        if reference.n_minutiae else 0
    picked = _connected_crop(reference, count, rng)
    if not picked:
        empty = TextureTemplate(
            kind="latent", variant=reference.variant, stride=reference.stride,
            minutiae=(), descriptors=np.zeros((0, reference.descriptor_len),
                                              dtype=np.float32),
            descriptor_len=reference.descriptor_len)
        return PlantedPair(reference=reference, latent=empty, truth={})

    n = len(picked)
    samp_pts = reference.coords()[picked] \
        + rng.normal(0.0, cfg.position_jitter, size=(n, 2))
    samp_th = np.mod(reference.thetas()[picked]
                     + rng.normal(0.0, cfg.orientation_jitter, size=n),
                     2.0 * math.pi)
    probes = []
    for k in range(n):
        x, y = float(samp_pts[k, 0]), float(samp_pts[k, 1])
        probes.append(VirtualMinutia(x, y, float(samp_th[k]), 2 * k))
        probes.append(VirtualMinutia(
            x, y, float(np.mod(samp_th[k] + math.pi, 2.0 * math.pi)),
            2 * k + 1))
    rows = template_descriptors(image, probes, cfg.extraction)
    if cfg.descriptor_noise > 0:
        rows = rows + rng.normal(0.0, cfg.descriptor_noise, size=rows.shape)
        norms = np.linalg.norm(rows, axis=1, keepdims=True)
        rows = np.divide(rows, norms, out=np.zeros_like(rows), where=norms > 0)

    rho = rng.uniform(*cfg.rotation_range)
    center = samp_pts.mean(axis=0)
    c, s = math.cos(rho), math.sin(rho)
    pts = (samp_pts - center) @ np.array([[c, s], [-s, c]]) + center
    pts = np.round(pts - pts.min(axis=0) + _LATENT_MARGIN)
    angles = np.mod(samp_th + rho, 2.0 * math.pi)

    minutiae: list[VirtualMinutia] = []
    desc: list[np.ndarray] = []
    truth: dict[int, int] = {}
    for k, ref_idx in enumerate(picked):
        x, y = float(pts[k, 0]), float(pts[k, 1])
        folded = float(np.float32(angles[k] % math.pi))
        flipped = float(np.float32(folded + math.pi))
        # slot whose orientation reproduces the rotated true direction
        true_slot = 0 if angles[k] < math.pi else 1
        for slot, theta in enumerate((folded, flipped)):
            minutiae.append(VirtualMinutia(x, y, theta, k))
            desc.append(rows[2 * k + (0 if slot == true_slot else 1)])
            if slot == true_slot:
                truth[2 * k + slot] = ref_idx
    latent = TextureTemplate(kind="latent", variant=reference.variant,
                             stride=reference.stride, minutiae=tuple(minutiae),
                             descriptors=np.asarray(desc, dtype=np.float32),
                             descriptor_len=reference.descriptor_len)
    return PlantedPair(reference=reference, latent=latent, truth=truth)


def planted_pair(cfg: SynthConfig) -> tuple[GrayImage, PlantedPair]:
    """Convenience: generate a reference and derive its latent."""
    image, reference = generate_reference(cfg)
    return image, derive_latent(image, reference, cfg)


def random_template(kind: str, n_points: int, descriptor_len: int, seed: int,
                    stride: int = 32, extent: int = 1024,
                    variant: str = "raw") -> TextureTemplate:
    """Random grid-placed template with random unit descriptors.

    Latent kind emits dual pairs, so the minutiae count is 2 * n_points.
    Intended for benchmarks and randomized tests, not for imagery.
    """
    if descriptor_len not in DESCRIPTOR_LENS:
        raise ValidationError(
            f"descriptor length {descriptor_len} not in {DESCRIPTOR_LENS}")
    rng = np.random.default_rng(seed)
    side = extent // stride - 1
    if n_points > side * side:
        raise ValidationError(
            f"{n_points} points exceed the {side}x{side} grid")
    cells = rng.choice(side * side, size=n_points, replace=False)
    xs = (cells % side + 1) * stride
    ys = (cells // side + 1) * stride
    minutiae: list[VirtualMinutia] = []
    rows: list[np.ndarray] = []
    for k in range(n_points):
        theta = float(np.float32(rng.uniform(0.0, math.pi)))
        if kind == "latent":
            minutiae.append(VirtualMinutia(float(xs[k]), float(ys[k]), theta, k))
            minutiae.append(VirtualMinutia(float(xs[k]), float(ys[k]),
                                           float(np.float32(theta + math.pi)), k))
            rows.append(_random_unit(rng, descriptor_len))
            rows.append(_random_unit(rng, descriptor_len))
        else:
            minutiae.append(VirtualMinutia(float(xs[k]), float(ys[k]), theta, k))
            rows.append(_random_unit(rng, descriptor_len))
    return TextureTemplate(kind=kind, variant=variant, stride=stride,
                           minutiae=tuple(minutiae),
                           descriptors=np.asarray(rows, dtype=np.float32),
                           descriptor_len=descriptor_len)


def pair_objective(h2: CompatibilityMatrix, indices) -> float:
    """Quadratic objective of an index subset: sum of H2 over all pairs."""
    idx = np.fromiter(indices, dtype=np.int64)
    if idx.size == 0:
        return 0.0
    sub = h2.values[np.ix_(idx, idx)]
    return float(sub.sum())


def brute_force_match(h2: CompatibilityMatrix,
                      correspondences: list[Correspondence],
                      dual_groups: np.ndarray | None = None
                      ) -> tuple[list[Correspondence], float]:
    """Exhaustive conflict-free subset maximizing the quadratic objective.

    Bounded to instances of at most 12 correspondences. Ties prefer the
    smaller subset, then the lexicographically smaller index tuple.
    Conflicts follow the matcher's rule: shared i1, shared i2, or shared
    latent dual group.
    """
    m = h2.size
    if m != len(correspondences):
        raise ValidationError(
            f"matrix size {m} != correspondence count {len(correspondences)}")
    if m > BRUTE_FORCE_LIMIT:
        raise ValidationError(
            f"instance size {m} exceeds brute-force limit {BRUTE_FORCE_LIMIT}")
    i1 = np.array([c.i1 for c in correspondences], dtype=np.int64)
    i2 = np.array([c.i2 for c in correspondences], dtype=np.int64)
    if dual_groups is None:
        conflict = (i1[:, None] == i1[None, :]) | (i2[:, None] == i2[None, :])
    else:
        groups = np.asarray(dual_groups, dtype=np.int64)
        conflict = _pairwise_or(i1, i2, groups)
    np.fill_diagonal(conflict, False)
    conflict_bits = [int(sum(1 << j for j in np.flatnonzero(conflict[i])))
                     for i in range(m)]

    best_obj = 0.0
    best: tuple[int, ...] = ()
    for mask in range(1 << m):
        bits = [i for i in range(m) if mask >> i & 1]
        if any(mask & conflict_bits[i] for i in bits):
            continue
        obj = pair_objective(h2, bits)
        key = tuple(bits)
        if obj > best_obj or (obj == best_obj
                              and (len(key), key) < (len(best), best)):
            best_obj = obj
            best = key
    return [correspondences[i] for i in best], best_obj


def _pairwise_or(i1, i2, groups):
    return ((i1[:, None] == i1[None, :]) | (i2[:, None] == i2[None, :])
            | (groups[:, None] == groups[None, :]))
