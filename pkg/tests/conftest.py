"""Shared fixtures: small deterministic images and templates.

Session-scoped fixtures cache the expensive synthetic renders so the
module suites stay fast; tests must treat them as read-only.
"""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from texmatch.ridgeflow import GrayImage, estimate_orientation_field, segment_roi
from texmatch.synth import SynthConfig, derive_latent, generate_reference

settings.register_profile(
    "suite", deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("suite")


def grating(width: int, height: int, period: float = 9.0,
            angle: float = 0.0, amplitude: float = 90.0) -> GrayImage:
    """Sinusoidal ridge pattern whose ridges run along `angle`."""
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    normal = angle + np.pi / 2.0
    phase = (x * np.cos(normal) + y * np.sin(normal)) / period
    pixels = 127.5 + amplitude * np.cos(2.0 * np.pi * phase)
    return GrayImage(np.clip(np.round(pixels), 0, 255).astype(np.uint8))


@pytest.fixture(scope="session")
def ridge_image():
    cfg = SynthConfig(seed=5)
    image, _ = generate_reference(cfg)
    return image


@pytest.fixture(scope="session")
def reference_pack():
    """One rendered reference: image, field, roi, and its template."""
    cfg = SynthConfig(seed=5)
    image, template = generate_reference(cfg)
    field = estimate_orientation_field(image)
    roi = segment_roi(image, field)
    return image, field, roi, template, cfg


@pytest.fixture(scope="session")
def planted():
    """A noisy planted latent/reference pair plus the source image."""
    cfg = SynthConfig(seed=3)
    image, reference = generate_reference(cfg)
    pair = derive_latent(image, reference, cfg)
    return image, pair, cfg
