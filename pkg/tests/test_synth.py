"""Synthetic generator and exhaustive-oracle tests."""

import itertools
import math

import numpy as np
import pytest

from texmatch.errors import ConfigError, ValidationError
from texmatch.matcher import CompatibilityMatrix, Correspondence
from texmatch.synth import (SynthConfig, brute_force_match, derive_latent,
                            generate_reference, pair_objective, planted_pair,
                            random_template, render_reference_image)

SMALL = SynthConfig(seed=13, width=320, height=320, position_jitter=0.0,
                    orientation_jitter=0.0, descriptor_noise=0.0)


@pytest.fixture(scope="module")
def small_ref():
    return generate_reference(SMALL)


@pytest.fixture(scope="module")
def zero_noise_pair(small_ref):
    image, reference = small_ref
    return reference, derive_latent(image, reference, SMALL)


# --- reference generation ---------------------------------------------------

def test_generation_is_deterministic():
    cfg = SynthConfig(seed=11, width=256, height=256)
    img_a, ref_a = generate_reference(cfg)
    img_b, ref_b = generate_reference(cfg)
    assert np.array_equal(img_a.pixels, img_b.pixels)
    assert ref_a == ref_b
    assert not np.array_equal(
        img_a.pixels, render_reference_image(SynthConfig(seed=12, width=256,
                                                         height=256)).pixels)


def test_constant_model_renders_requested_direction():
    cfg = SynthConfig(seed=1, width=256, height=256,
                      orientation_model="constant", base_angle=0.6)
    from texmatch.ridgeflow import estimate_orientation_field
    field = estimate_orientation_field(render_reference_image(cfg))
    interior = field.angles[4:-4, 4:-4]
    assert np.abs(interior - 0.6).max() < 0.05


def test_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig(orientation_model="wavy")
    with pytest.raises(ConfigError):
        SynthConfig(crop_fraction=0.0)
    with pytest.raises(ConfigError):
        SynthConfig(crop_fraction=1.5)
    with pytest.raises(ConfigError):
        SynthConfig(position_jitter=-1.0)
    with pytest.raises(ConfigError):
        SynthConfig(ridge_period=2.0)
    with pytest.raises(ConfigError):
        SynthConfig(rotation_range=(1.0, 0.0))


# --- latent derivation ------------------------------------------------------

def test_crop_counts_on_full_grid(planted):
    _, pair, _ = planted
    assert pair.reference.n_minutiae == 169   # full 13x13 grid at 512x512
    assert len(pair.truth) == 68              # round(0.4 * 169)
    assert pair.latent.n_minutiae == 2 * len(pair.truth)


def test_crop_region_is_grid_connected(zero_noise_pair):
    reference, pair = zero_noise_pair
    picked = sorted(set(pair.truth.values()))
    coords = {tuple(reference.coords()[i]) for i in picked}
    start = next(iter(coords))
    seen = {start}
    frontier = [start]
    s = float(reference.stride)
    while frontier:
        x, y = frontier.pop()
        for dx, dy in ((s, 0), (-s, 0), (0, s), (0, -s)):
            nb = (x + dx, y + dy)
            if nb in coords and nb not in seen:
                seen.add(nb)
                frontier.append(nb)
    assert seen == coords


def test_zero_noise_latent_reproduces_reference(zero_noise_pair):
    reference, pair = zero_noise_pair
    latent = pair.latent
    assert len(pair.truth) == 20              # round(0.4 * 49)
    assert latent.n_minutiae == 40
    assert all(k % 2 == 0 for k in pair.truth)  # no rotation: first slot wins
    assert np.array_equal(latent.coords().min(axis=0), [16.0, 16.0])

    keys = sorted(pair.truth)
    mates = [pair.truth[k] for k in keys]
    for k, m in zip(keys, mates):
        assert np.array_equal(latent.descriptors[k], reference.descriptors[m])
        assert latent.thetas()[k] == reference.thetas()[m]

    # rigid translation preserves every pairwise distance (integer grid)
    lp = latent.coords()[keys]
    rp = reference.coords()[mates]
    dl = np.hypot(lp[:, 0, None] - lp[None, :, 0], lp[:, 1, None] - lp[None, :, 1])
    dr = np.hypot(rp[:, 0, None] - rp[None, :, 0], rp[:, 1, None] - rp[None, :, 1])
    assert np.array_equal(dl, dr)


def test_zero_noise_false_slots_diverge(zero_noise_pair):
    reference, pair = zero_noise_pair
    latent = pair.latent
    for k, m in pair.truth.items():
        other = k + 1 if k % 2 == 0 else k - 1
        mate = reference.descriptors[m]
        true_sim = float(latent.descriptors[k] @ mate)
        false_sim = float(latent.descriptors[other] @ mate)
        assert true_sim > false_sim
        assert true_sim > 0.999
        assert false_sim < 0.9


def test_half_turn_rotation_moves_truth_to_second_slot(small_ref):
    image, reference = small_ref
    cfg = SynthConfig(seed=13, width=320, height=320, position_jitter=0.0,
                      orientation_jitter=0.0, descriptor_noise=0.0,
                      rotation_range=(math.pi, math.pi))
    pair = derive_latent(image, reference, cfg)
    assert pair.truth
    assert all(k % 2 == 1 for k in pair.truth)
    for k, m in pair.truth.items():
        want = (reference.thetas()[m] + math.pi) % (2.0 * math.pi)
        assert pair.latent.thetas()[k] == pytest.approx(want, abs=1e-6)


def test_descriptor_noise_perturbs_but_keeps_unit_rows(small_ref):
    image, reference = small_ref
    cfg = SynthConfig(seed=13, width=320, height=320, position_jitter=0.0,
                      orientation_jitter=0.0, descriptor_noise=0.05)
    noisy = derive_latent(image, reference, cfg).latent
    clean = derive_latent(image, reference, SMALL).latent
    assert not np.array_equal(noisy.descriptors, clean.descriptors)
    assert np.allclose(np.linalg.norm(noisy.descriptors, axis=1), 1.0,
                       atol=1e-6)


def test_derive_latent_is_deterministic(small_ref):
    image, reference = small_ref
    a = derive_latent(image, reference, SMALL)
    b = derive_latent(image, reference, SMALL)
    assert a.latent == b.latent and a.truth == b.truth


def test_truth_map_is_injective(planted):
    _, pair, _ = planted
    values = list(pair.truth.values())
    assert len(values) == len(set(values))


def test_planted_pair_convenience_equals_manual():
    cfg = SynthConfig(seed=13, width=320, height=320)
    image, pair = planted_pair(cfg)
    img2, ref2 = generate_reference(cfg)
    assert np.array_equal(image.pixels, img2.pixels)
    assert pair.reference == ref2
    assert pair.latent == derive_latent(img2, ref2, cfg).latent


# --- random templates -------------------------------------------------------

def test_random_template_shapes_and_grid():
    ref = random_template("reference", 30, 192, seed=5, extent=512)
    assert ref.n_minutiae == 30
    coords = ref.coords()
    assert np.array_equal(coords % 32, np.zeros_like(coords))
    assert coords.min() >= 32 and coords.max() <= 512 - 32
    assert np.allclose(np.linalg.norm(ref.descriptors, axis=1), 1.0, atol=1e-6)

    lat = random_template("latent", 30, 192, seed=5, extent=512)
    assert lat.n_minutiae == 60
    groups = lat.dual_groups()
    for k in range(0, 60, 2):
        assert groups[k] == groups[k + 1]
        assert lat.thetas()[k + 1] == pytest.approx(
            lat.thetas()[k] + math.pi, abs=1e-6)


def test_random_template_determinism_and_validation():
    assert random_template("reference", 10, 96, seed=7) == \
        random_template("reference", 10, 96, seed=7)
    assert random_template("reference", 10, 96, seed=7) != \
        random_template("reference", 10, 96, seed=8)
    with pytest.raises(ValidationError):
        random_template("reference", 10, 100, seed=7)
    with pytest.raises(ValidationError):
        random_template("reference", 50, 96, seed=7, extent=128)


# --- exhaustive oracle ------------------------------------------------------

def oracle_best_subset(h, corrs, groups):
    m = len(corrs)

    def ok(subset):
        for a, b in itertools.combinations(subset, 2):
            if (corrs[a].i1 == corrs[b].i1 or corrs[a].i2 == corrs[b].i2
                    or groups[a] == groups[b]):
                return False
        return True

    best, best_obj = (), 0.0
    for r in range(m + 1):
        for subset in itertools.combinations(range(m), r):
            if not ok(subset):
                continue
            obj = float(h[np.ix_(subset, subset)].sum()) if subset else 0.0
            if obj > best_obj or (obj == best_obj
                                  and (r, subset) < (len(best), best)):
                best, best_obj = subset, obj
    return list(best), best_obj


def test_brute_force_matches_enumeration_oracle():
    rng = np.random.default_rng(17)
    for _ in range(10):
        m = int(rng.integers(3, 7))
        i1 = rng.integers(0, 4, m)
        i2 = rng.integers(0, 4, m)
        groups = i1.astype(np.int64)
        h = rng.uniform(0.0, 1.0, (m, m))
        h = np.triu(h, 1)
        h = h + h.T
        corrs = [Correspondence(int(a), int(b), 0.5) for a, b in zip(i1, i2)]
        got, got_obj = brute_force_match(CompatibilityMatrix(h), corrs,
                                         dual_groups=groups)
        want_idx, want_obj = oracle_best_subset(h, corrs, groups)
        assert got_obj == pytest.approx(want_obj, abs=1e-12)
        assert got == [corrs[i] for i in want_idx]


def test_brute_force_tie_breaks():
    # conflicts allow only {0,3} and {1,2}; equal weight -> lex smaller wins
    corrs = [Correspondence(0, 0, 1.0), Correspondence(0, 1, 1.0),
             Correspondence(1, 0, 1.0), Correspondence(1, 1, 1.0)]
    h = np.zeros((4, 4))
    h[0, 3] = h[3, 0] = 0.7
    h[1, 2] = h[2, 1] = 0.7
    got, obj = brute_force_match(CompatibilityMatrix(h), corrs)
    assert got == [corrs[0], corrs[3]]
    assert obj == pytest.approx(1.4, abs=1e-12)

    # all-zero objective prefers the empty set
    got, obj = brute_force_match(CompatibilityMatrix(np.zeros((3, 3))),
                                 [Correspondence(k, k, 0.1) for k in range(3)])
    assert got == [] and obj == 0.0


def test_brute_force_size_limits():
    corrs = [Correspondence(k, k, 0.1) for k in range(13)]
    with pytest.raises(ValidationError):
        brute_force_match(CompatibilityMatrix(np.zeros((13, 13))), corrs)
    with pytest.raises(ValidationError):
        brute_force_match(CompatibilityMatrix(np.zeros((2, 2))), corrs[:3])


def test_pair_objective_sums_submatrix():
    h = np.arange(16, dtype=np.float64).reshape(4, 4)
    h2 = CompatibilityMatrix(h)
    assert pair_objective(h2, []) == 0.0
    assert pair_objective(h2, [1]) == h[1, 1]
    assert pair_objective(h2, [0, 2]) == h[0, 0] + h[0, 2] + h[2, 0] + h[2, 2]
