"""Second-order graph matching of texture templates.

Matching runs as a fixed pipeline: cosine similarity matrix over
descriptor rows, similarity normalization, top-N correspondence
selection, then two spectral filtering stages over pairwise
compatibility matrices. The first stage scores pairs of correspondences
on length preservation alone; the second re-scores the survivors with
both length and relative-angle consistency. The match score is the sum
of the surviving correspondences' unnormalized descriptor similarities.

Pairwise compatibility uses a truncated sigmoid: a feature difference v
maps to 1 / (1 + exp(-tau * (v - mu))) when v <= t and to 0 beyond the
cutoff. With negative tau this is a soft step that is ~1 at v = 0 and
decays toward the cutoff.
"""

from __future__ import annotations

import dataclasses
import functools
import math
import time

import numpy as np

from .errors import ConfigError, DescriptorMismatchError, ValidationError
from .template import TextureTemplate


@dataclasses.dataclass(frozen=True)
class GraphMatchParams:
    """Tuning constants for the matching pipeline.

    top_n bounds the correspondence count entering graph filtering.
    (mu_d, tau_d, t_d) shape the length-difference sigmoid in pixels;
    (mu_a, tau_a, t_a) the angle-difference sigmoid in radians. eps and
    max_iters control power iteration; y_min sets the greedy acceptance
    floor as a fraction of the leading eigenvector's peak component.
    """

    top_n: int = 200
    mu_d: float = 20.0
    tau_d: float = -0.3
    t_d: float = 40.0
    mu_a: float = math.pi / 9
    tau_a: float = -12.0
    t_a: float = math.pi / 4
    eps: float = 1e-6
    max_iters: int = 100
    y_min: float = 0.1

    def __post_init__(self):
        if self.top_n < 1:
            raise ConfigError(f"top_n must be positive, got {self.top_n}")
        if self.tau_d >= 0 or self.tau_a >= 0:
            raise ConfigError("sigmoid slopes tau_d and tau_a must be negative")
        if self.t_d <= 0 or self.t_a <= 0:
            raise ConfigError("sigmoid cutoffs t_d and t_a must be positive")
        if self.eps <= 0 or self.max_iters < 1:
            raise ConfigError("eps must be positive and max_iters at least 1")
        if not 0 < self.y_min <= 1:
            raise ConfigError(f"y_min must be in (0, 1], got {self.y_min}")


@dataclasses.dataclass(frozen=True)
class Correspondence:
    """Pairing of latent minutia i1 with reference minutia i2.

    desc_sim is the unnormalized cosine similarity of their descriptors.
    """

    i1: int
    i2: int
    desc_sim: float


@dataclasses.dataclass(eq=False)
class SimilarityMatrix:
    """Latent-by-reference descriptor similarities.

    raw keeps the pre-normalization cosines so correspondences can carry
    them after the values have been normalized in place of the cosines.
    """

    values: np.ndarray
    normalized: bool = False
    raw: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclasses.dataclass(eq=False)
class CompatibilityMatrix:
    """Symmetric nonnegative pairwise compatibility of correspondences."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValidationError(f"compatibility matrix must be square, got {v.shape}")

    @property
    def size(self) -> int:
        return self.values.shape[0]


def truncated_sigmoid(v, mu: float, tau: float, t: float):
    """Soft step 1 / (1 + exp(-tau * (v - mu))) for v <= t, else 0."""
    arr = np.asarray(v, dtype=np.float64)
    with np.errstate(over="ignore"):
        out = np.where(arr <= t, 1.0 / (1.0 + np.exp(-tau * (arr - mu))), 0.0)
    return float(out) if out.ndim == 0 else out


def similarity_matrix(latent: TextureTemplate,
                      reference: TextureTemplate) -> SimilarityMatrix:
    """Cosine similarities between all latent and reference descriptors."""
    if latent.descriptor_len != reference.descriptor_len:
        raise DescriptorMismatchError("descriptor length",
                                      latent.descriptor_len,
                                      reference.descriptor_len)
    values = latent.descriptors @ reference.descriptors.T
    return SimilarityMatrix(values=values)


def normalize_similarity(sim: SimilarityMatrix) -> SimilarityMatrix:
    """Clamp negatives to zero, then two alternating row/column passes.

    Each pass divides every row by its sum and then every column by its
    sum, skipping rows or columns that sum to zero.
    """
    raw = sim.raw if sim.raw is not None else sim.values
    v = np.maximum(sim.values, 0.0)
    for _ in range(2):
        rs = v.sum(axis=1, keepdims=True)
        rs[rs == 0.0] = 1.0  # zero-sum rows are all zero; dividing by 1 keeps them
        v /= rs
        cs = v.sum(axis=0, keepdims=True)
        cs[cs == 0.0] = 1.0
        v /= cs
    return SimilarityMatrix(values=v, normalized=True, raw=raw)


def select_top_n(sim: SimilarityMatrix, n: int) -> list[Correspondence]:
    """Top-n positive entries of a normalized similarity matrix.

    Ordered by normalized value descending, ties broken by smaller
    (i1, i2) in row-major order. Fewer than n positive entries yields
    all of them. Correspondences carry the unnormalized cosines.
    """
    if not sim.normalized:
        raise ValidationError("top-N selection requires a normalized matrix")
    if n < 1:
        raise ValidationError(f"n must be positive, got {n}")
    v = sim.values
    raw = sim.raw if sim.raw is not None else v
    flat = v.ravel()
    cand = np.flatnonzero(flat > 0)
    if cand.size == 0:
        return []
    vals = flat[cand]
    if cand.size > n:
        # partition the compacted positives: selecting on the full
        # raster hits a quickselect slow path on its zero-run structure
        kth = np.partition(vals, vals.size - n)[vals.size - n]
        keep = vals >= kth
        cand, vals = cand[keep], vals[keep]
        k = n
    else:
        k = cand.size
    order = np.lexsort((cand, -vals))
    chosen = cand[order][:k]
    cols = v.shape[1]
    return [Correspondence(int(f // cols), int(f % cols),
                           float(raw[f // cols, f % cols])) for f in chosen]


def _conflict_mask(i1: np.ndarray, i2: np.ndarray,
                   groups: np.ndarray) -> np.ndarray:
    """Pairs sharing a minutia on either side or a latent dual group."""
    return ((i1[:, None] == i1[None, :]) | (i2[:, None] == i2[None, :])
            | (groups[:, None] == groups[None, :]))


def _corr_arrays(correspondences: list[Correspondence],
                 latent: TextureTemplate, reference: TextureTemplate):
    i1 = np.array([c.i1 for c in correspondences], dtype=np.int64)
    i2 = np.array([c.i2 for c in correspondences], dtype=np.int64)
    lc = latent.coords()
    rc = reference.coords()
    groups = latent.dual_groups()[i1]
    return i1, i2, lc[i1], rc[i2], groups


def _pairwise_dist(points: np.ndarray) -> np.ndarray:
    dx = points[:, None, 0] - points[None, :, 0]
    dy = points[:, None, 1] - points[None, :, 1]
    return np.sqrt(dx * dx + dy * dy)


@functools.lru_cache(maxsize=8)
def _upper_mask(m: int) -> np.ndarray:
    mask = np.triu(np.ones((m, m), dtype=bool), 1)
    mask.setflags(write=False)
    return mask


def build_h2_modified(correspondences: list[Correspondence],
                      latent: TextureTemplate, reference: TextureTemplate,
                      params: GraphMatchParams) -> CompatibilityMatrix:
    """Length-preservation compatibility: sigmoid of |d_latent - d_reference|.

    Entries for correspondence pairs sharing a minutia on either side or
    a latent dual group are zero, as is the diagonal.
    """
    m = len(correspondences)
    if m < 2:
        return CompatibilityMatrix(np.zeros((0, 0)))
    i1, i2, lp, rp, groups = _corr_arrays(correspondences, latent, reference)
    diff = np.abs(_pairwise_dist(lp) - _pairwise_dist(rp))
    keep = (diff <= params.t_d) & _upper_mask(m)
    keep &= ~_conflict_mask(i1, i2, groups)
    h = np.zeros((m, m))
    h[keep] = 1.0 / (1.0 + np.exp(-params.tau_d * (diff[keep] - params.mu_d)))
    return CompatibilityMatrix(h + h.T)


def _wrapped_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Absolute angular difference folded to [0, pi]."""
    return np.abs(np.mod(a - b + np.pi, 2.0 * np.pi) - np.pi)


def build_h2_original(correspondences: list[Correspondence],
                      latent: TextureTemplate, reference: TextureTemplate,
                      params: GraphMatchParams) -> CompatibilityMatrix:
    """Length and relative-angle compatibility.

    For each ordered correspondence pair the connecting segment defines
    three angles per template: each endpoint's minutia direction relative
    to the segment, and the direction difference between the endpoints.
    The entry is the product of the length sigmoid and one angle sigmoid
    per folded cross-template difference. Zero rules match the
    length-only builder.
    """
    m = len(correspondences)
    if m < 2:
        return CompatibilityMatrix(np.zeros((0, 0)))
    i1, i2, lp, rp, groups = _corr_arrays(correspondences, latent, reference)
    lt = latent.thetas()[i1]
    rt = reference.thetas()[i2]

    def features(points, thetas):
        dx = points[None, :, 0] - points[:, None, 0]
        dy = points[None, :, 1] - points[:, None, 1]
        dist = np.sqrt(dx * dx + dy * dy)
        phi = np.arctan2(dy, dx)
        f1 = thetas[:, None] - phi
        f2 = thetas[None, :] - phi
        f3 = thetas[:, None] - thetas[None, :]
        return dist, f1, f2, f3

    dl, lf1, lf2, lf3 = features(lp, lt)
    dr, rf1, rf2, rf3 = features(rp, rt)
    h = truncated_sigmoid(np.abs(dl - dr), params.mu_d, params.tau_d, params.t_d)
    for la, ra in ((lf1, rf1), (lf2, rf2), (lf3, rf3)):
        h *= truncated_sigmoid(_wrapped_diff(la, ra),
                               params.mu_a, params.tau_a, params.t_a)
    h[_conflict_mask(i1, i2, groups)] = 0.0
    h = np.triu(h, 1)
    return CompatibilityMatrix(h + h.T)


def spectral_match(h2: CompatibilityMatrix,
                   correspondences: list[Correspondence],
                   params: GraphMatchParams,
                   dual_groups: np.ndarray | None = None) -> list[Correspondence]:
    """Leading-eigenvector relaxation plus greedy conflict-aware rounding.

    Power iteration starts from the uniform unit vector and stops when
    the iterate moves less than eps or after max_iters rounds. Greedy
    rounding repeatedly accepts the largest remaining component while it
    stays at or above y_min times the eigenvector's initial peak, then
    zeroes every correspondence conflicting with the accepted one (same
    i1, same i2, or same latent dual group).

    Exactly symmetric candidates — dual twins see identical geometry —
    tie in the eigenvector up to floating-point dust, so the largest
    component is read with a relative tolerance and the earliest
    candidate inside that band wins. Candidate order comes from the
    similarity stage and ignores pose, which keeps the rounding, and
    with it the final score, stable under rigid motion of either
    template.
    """
    m = h2.size
    if m == 0 or not np.any(h2.values):
        return []
    if m != len(correspondences):
        raise ValidationError(
            f"matrix size {m} != correspondence count {len(correspondences)}")
    h = h2.values
    v = np.full(m, 1.0 / math.sqrt(m))
    eps_sq = params.eps * params.eps
    for _ in range(params.max_iters):
        w = h @ v
        norm_sq = float(w @ w)
        if norm_sq == 0.0:
            return []
        w /= math.sqrt(norm_sq)
        d = w - v
        done = float(d @ d) < eps_sq
        v = w
        if done:
            break

    i1 = np.array([c.i1 for c in correspondences], dtype=np.int64)
    i2 = np.array([c.i2 for c in correspondences], dtype=np.int64)
    floor = params.y_min * v.max()
    comps = v.copy()
    alive = np.ones(m, dtype=bool)
    accepted: list[Correspondence] = []
    while alive.any():
        masked = np.where(alive, comps, -np.inf)
        peak = float(masked.max())
        if peak < floor:
            break
        idx = int(np.flatnonzero(masked >= peak - 1e-9 * peak)[0])
        accepted.append(correspondences[idx])
        conflict = (i1 == i1[idx]) | (i2 == i2[idx])
        if dual_groups is not None:
            conflict |= dual_groups == dual_groups[idx]
        alive &= ~conflict
    return accepted


def score_correspondences(correspondences: list[Correspondence]) -> float:
    """Match score: sum of unnormalized descriptor similarities."""
    return float(sum(c.desc_sim for c in correspondences))


def match_templates(latent: TextureTemplate, reference: TextureTemplate,
                    params: GraphMatchParams | None = None
                    ) -> tuple[float, list[Correspondence]]:
    """Run the full pipeline; returns (score, final correspondences)."""
    score, final, _ = match_templates_timed(latent, reference, params)
    return score, final


def match_templates_timed(latent: TextureTemplate, reference: TextureTemplate,
                          params: GraphMatchParams | None = None
                          ) -> tuple[float, list[Correspondence], dict]:
    """match_templates plus per-stage wall times in milliseconds."""
    if params is None:
        params = GraphMatchParams()
    timings = {"sim_ms": 0.0, "norm_ms": 0.0, "topn_ms": 0.0, "graph_ms": 0.0}
    if latent.n_minutiae == 0 or reference.n_minutiae == 0:
        return 0.0, [], timings

    t0 = time.perf_counter()
    sim = similarity_matrix(latent, reference)
    t1 = time.perf_counter()
    normed = normalize_similarity(sim)
    t2 = time.perf_counter()
    selected = select_top_n(normed, params.top_n)
    t3 = time.perf_counter()

    groups = latent.dual_groups()
    if len(selected) >= 2:
        stage1 = spectral_match(
            build_h2_modified(selected, latent, reference, params),
            selected, params,
            dual_groups=groups[[c.i1 for c in selected]])
    else:
        stage1 = selected
    if len(stage1) >= 2:
        final = spectral_match(
            build_h2_original(stage1, latent, reference, params),
            stage1, params,
            dual_groups=groups[[c.i1 for c in stage1]])
    else:
        final = stage1
    t4 = time.perf_counter()

    timings["sim_ms"] = (t1 - t0) * 1e3
    timings["norm_ms"] = (t2 - t1) * 1e3
    timings["topn_ms"] = (t3 - t2) * 1e3
    timings["graph_ms"] = (t4 - t3) * 1e3
    return score_correspondences(final), final, timings
