"""Texture templates: virtual minutiae placed on a raster grid.

A template is the matchable unit: oriented sample points ("virtual
minutiae") plus one unit-norm descriptor row per point. Latent templates
carry each sample point twice, at theta and theta + pi, because the
block orientation field only determines ridge direction mod pi; the two
entries of such a pair share a dual_group id so the matcher can treat
them as mutually exclusive.

Binary layout (fixed little-endian, magic "FTT1", version 1):

    4s  magic        u8  version      u8  kind (0 latent, 1 reference)
    u8  variant (0 raw, 1 e1, 2 e2, 3 t)   u16 stride
    u32 n            u16 descriptor_len
    n records of (u16 x, u16 y, f32 theta, u32 dual_group)
    n * descriptor_len f32 descriptor values, row-major
"""

from __future__ import annotations

import dataclasses
import struct

import numpy as np

from .errors import (BadMagicError, ConfigError, DescriptorLengthError,
                     DimensionError, FormatError, TruncatedError,
                     ValidationError, VersionError)
from .ridgeflow import BLOCK_SIZE, GrayImage, OrientationField, RoiMask, orientation_at

MAGIC = b"FTT1"
VERSION = 1
KINDS = ("latent", "reference")
VARIANTS = ("raw", "e1", "e2", "t")
DESCRIPTOR_LENS = (96, 192, 384)
PATCH_LENS = (32, 64, 128)

_HEADER = struct.Struct("<4sBBBHIH")
_RECORD_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"),
                          ("theta", "<f4"), ("group", "<u4")])


@dataclasses.dataclass(frozen=True)
class VirtualMinutia:
    """Oriented sample point. theta is radians in [0, 2*pi)."""

    x: float
    y: float
    theta: float
    dual_group: int


@dataclasses.dataclass(frozen=True)
class ExtractionConfig:
    """Raster-scan extraction settings.

    patch_len is the per-patch descriptor length l; the concatenated
    template descriptor length is 3 * l. dual controls latent-style
    placement (both orientations per point).
    """

    stride: int = 32
    border_margin: int = 48
    dual: bool = False
    patch_len: int = 64
    projection_seed: int = 7919

    def __post_init__(self):
        if self.stride < BLOCK_SIZE:
            raise ConfigError(f"stride {self.stride} below block size {BLOCK_SIZE}")
        if self.border_margin < 0:
            raise ConfigError(f"negative border margin {self.border_margin}")
        if self.patch_len not in PATCH_LENS:
            raise ConfigError(
                f"patch length {self.patch_len} not in {PATCH_LENS}")

    @property
    def descriptor_len(self) -> int:
        return 3 * self.patch_len


@dataclasses.dataclass(eq=False)
class TextureTemplate:
    """Virtual minutiae plus their descriptor matrix.

    Descriptor rows are quantized to single precision — the storage
    format — on construction, then held as float64 so comparisons never
    recast; matching a template before saving and after reloading gives
    identical results.
    """

    kind: str
    variant: str
    stride: int
    minutiae: tuple[VirtualMinutia, ...]
    descriptors: np.ndarray
    descriptor_len: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown template kind {self.kind!r}")
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown template variant {self.variant!r}")
        if self.stride < BLOCK_SIZE:
            raise ValidationError(f"stride {self.stride} below block size")
        if self.descriptor_len not in DESCRIPTOR_LENS:
            raise ValidationError(
                f"descriptor length {self.descriptor_len} not in {DESCRIPTOR_LENS}")
        self.minutiae = tuple(self.minutiae)
        desc = np.ascontiguousarray(self.descriptors, dtype=np.float32)
        desc = desc.astype(np.float64)
        n = len(self.minutiae)
        if desc.shape != (n, self.descriptor_len):
            raise ValidationError(
                f"descriptor matrix {desc.shape} does not match "
                f"{n} minutiae x {self.descriptor_len}")
        self.descriptors = desc
        if self.kind == "latent":
            self._check_dual_pairs()
        else:
            self._check_reference()
        # geometry arrays are read every comparison; build them once
        self._coords = np.array([(m.x, m.y) for m in self.minutiae],
                                dtype=np.float64).reshape(n, 2)
        self._thetas = np.array([m.theta for m in self.minutiae],
                                dtype=np.float64)
        self._groups = np.array([m.dual_group for m in self.minutiae],
                                dtype=np.int64)
        for arr in (self._coords, self._thetas, self._groups):
            arr.setflags(write=False)

    def _check_dual_pairs(self):
        if len(self.minutiae) % 2:
            raise ValidationError("latent template has an odd minutiae count")
        seen_groups = set()
        seen_coords = set()
        for k in range(0, len(self.minutiae), 2):
            a, b = self.minutiae[k], self.minutiae[k + 1]
            if (a.x, a.y) != (b.x, b.y) or a.dual_group != b.dual_group:
                raise ValidationError(
                    f"minutiae {k},{k + 1} do not form a dual pair")
            if a.dual_group in seen_groups:
                raise ValidationError(f"dual_group {a.dual_group} reused")
            if (a.x, a.y) in seen_coords:
                raise ValidationError(
                    f"coordinates ({a.x}, {a.y}) shared across dual pairs")
            seen_groups.add(a.dual_group)
            seen_coords.add((a.x, a.y))

    def _check_reference(self):
        coords = set()
        groups = set()
        for m in self.minutiae:
            if (m.x, m.y) in coords:
                raise ValidationError(f"duplicate coordinates ({m.x}, {m.y})")
            if m.dual_group in groups:
                raise ValidationError(f"dual_group {m.dual_group} reused")
            coords.add((m.x, m.y))
            groups.add(m.dual_group)

    @property
    def n_minutiae(self) -> int:
        return len(self.minutiae)

    def low_quality(self) -> np.ndarray:
        """Boolean mask of zero-descriptor (unusable) minutiae."""
        return ~np.any(self.descriptors, axis=1)

    def dual_groups(self) -> np.ndarray:
        """(n,) int64 array of dual-group labels (read-only view)."""
        return self._groups

    def coords(self) -> np.ndarray:
        """(n, 2) float64 array of x, y positions (read-only view)."""
        return self._coords

    def thetas(self) -> np.ndarray:
        """(n,) float64 array of orientations (read-only view)."""
        return self._thetas

    def __eq__(self, other):
        if not isinstance(other, TextureTemplate):
            return NotImplemented
        return (self.kind == other.kind and self.variant == other.variant
                and self.stride == other.stride
                and self.descriptor_len == other.descriptor_len
                and self.minutiae == other.minutiae
                and np.array_equal(self.descriptors, other.descriptors))


def place_virtual_minutiae(roi: RoiMask, field: OrientationField,
                           config: ExtractionConfig) -> list[VirtualMinutia]:
    """Raster-scan grid placement of virtual minutiae.

    Candidates sit at (i*stride, j*stride) for i, j >= 1. A candidate is
    kept when the square window of half-width border_margin around it lies
    inside the image and every block the window touches is ROI foreground.
    Scan order is row-major (y outer, x inner). Orientations come from the
    nearest block center; with config.dual each point contributes the
    (theta, theta + pi) pair sharing a fresh dual_group.
    """
    if roi.flags.shape != field.angles.shape:
        raise DimensionError("ROI grid does not match the field grid")
    s, b = config.stride, config.border_margin
    out: list[VirtualMinutia] = []
    group = 0
    for y in range(s, field.height, s):
        if y - b < 0 or y + b > field.height - 1:
            continue
        r0, r1 = (y - b) // BLOCK_SIZE, (y + b) // BLOCK_SIZE
        for x in range(s, field.width, s):
            if x - b < 0 or x + b > field.width - 1:
                continue
            c0, c1 = (x - b) // BLOCK_SIZE, (x + b) // BLOCK_SIZE
            if not roi.flags[r0:r1 + 1, c0:c1 + 1].all():
                continue
            theta = float(np.float32(orientation_at(field, x, y)))
            if config.dual:
                out.append(VirtualMinutia(x, y, theta, group))
                out.append(VirtualMinutia(
                    x, y, float(np.float32(theta + np.pi)), group))
            else:
                out.append(VirtualMinutia(x, y, theta, group))
            group += 1
    return out


def build_template(image: GrayImage, roi: RoiMask, field: OrientationField,
                   config: ExtractionConfig, variant: str = "raw") -> TextureTemplate:
    """Full extraction: placement plus one descriptor row per minutia."""
    from .descriptor import template_descriptors  # deferred: descriptor imports us

    minutiae = place_virtual_minutiae(roi, field, config)
    l_d = config.descriptor_len
    desc = template_descriptors(image, minutiae, config).astype(np.float32)
    return TextureTemplate(kind="latent" if config.dual else "reference",
                           variant=variant, stride=config.stride,
                           minutiae=tuple(minutiae), descriptors=desc,
                           descriptor_len=l_d)


def serialize(template: TextureTemplate) -> bytes:
    """Encode a template into the binary layout described in the module doc."""
    n = template.n_minutiae
    records = np.empty(n, dtype=_RECORD_DTYPE)
    for i, m in enumerate(template.minutiae):
        for name, value in (("x", m.x), ("y", m.y)):
            if value != int(value) or not 0 <= value <= 0xFFFF:
                raise ValidationError(
                    f"{name}={value} not representable as u16")
        if not 0 <= m.dual_group <= 0xFFFFFFFF:
            raise ValidationError(f"dual_group {m.dual_group} out of u32 range")
        records[i] = (int(m.x), int(m.y), m.theta, m.dual_group)
    header = _HEADER.pack(MAGIC, VERSION, KINDS.index(template.kind),
                          VARIANTS.index(template.variant), template.stride,
                          n, template.descriptor_len)
    return header + records.tobytes() + template.descriptors.astype("<f4").tobytes()


def deserialize(data: bytes) -> TextureTemplate:
    """Decode a template, rejecting malformed payloads before construction."""
    if len(data) < _HEADER.size:
        if data[:4] not in (MAGIC, MAGIC[:len(data)]):
            raise BadMagicError(f"bad magic {data[:4]!r}")
        raise TruncatedError(f"header holds {len(data)} of {_HEADER.size} bytes")
    magic, version, kind_code, variant_code, stride, n, l_d = \
        _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionError(f"unsupported version {version}")
    if kind_code >= len(KINDS):
        raise FormatError(f"unknown kind code {kind_code}")
    if variant_code >= len(VARIANTS):
        raise FormatError(f"unknown variant code {variant_code}")
    if l_d not in DESCRIPTOR_LENS:
        raise DescriptorLengthError(
            f"descriptor length {l_d} not in {DESCRIPTOR_LENS}")
    expect = _HEADER.size + n * _RECORD_DTYPE.itemsize + 4 * n * l_d
    if len(data) < expect:
        raise TruncatedError(f"payload holds {len(data)} of {expect} bytes")
    if len(data) > expect:
        raise FormatError(f"{len(data) - expect} trailing bytes after payload")
    records = np.frombuffer(data, dtype=_RECORD_DTYPE, count=n,
                            offset=_HEADER.size)
    desc = np.frombuffer(data, dtype="<f4", count=n * l_d,
                         offset=_HEADER.size + n * _RECORD_DTYPE.itemsize)
    minutiae = tuple(
        VirtualMinutia(float(r["x"]), float(r["y"]), float(r["theta"]),
                       int(r["group"]))
        for r in records)
    return TextureTemplate(kind=KINDS[kind_code], variant=VARIANTS[variant_code],
                           stride=int(stride), minutiae=minutiae,
                           descriptors=desc.reshape(n, l_d).copy(),
                           descriptor_len=int(l_d))


def write_template(path, template: TextureTemplate) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(template))


def read_template(path) -> TextureTemplate:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
