"""Image decoding and syntactic fingerprints.

Two perceptual hashes are produced from a shared grayscale plane:

* ``phash64``  -- 64-bit DCT hash: 32x32 box resize, orthonormal 2-D DCT,
  sign-of-median over the lowest-frequency 8x8 block (DC row/column dropped).
* ``pdqhash256`` -- 256-bit hash: two box-filter passes per axis (a tent
  kernel), center-decimation to 64x64, 16x64 DCT on both axes keeping
  frequencies 1..16, sign-of-median over the 256 coefficients, plus a
  gradient-energy quality score.

Both are deterministic pure functions; bit values are pinned by fixture
images under tests/fixtures.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, KindMismatch, TooSmall

MIN_DIMENSION = 16

# Accepted container formats. Anything else is rejected rather than silently
# hashed, so corpus contents stay within the formats the fixtures pin.
_ALLOWED_FORMATS = {"JPEG", "PNG"}


class HashKind(enum.Enum):
    PHASH64 = "phash64"
    PDQ256 = "pdq256"

    @property
    def bit_length(self) -> int:
        return 64 if self is HashKind.PHASH64 else 256

    @property
    def byte_length(self) -> int:
        return self.bit_length // 8

    @property
    def hex_length(self) -> int:
        return self.byte_length * 2

    @property
    def default_radius(self) -> int:
        """Widest usable visual-match radius for this hash family."""
        return 10 if self is HashKind.PHASH64 else 90


@dataclass(frozen=True)
class LuminancePlane:
    """Row-major grayscale intensities in [0, 255]."""

    width: int
    height: int
    samples: np.ndarray  # uint8, shape (height, width)

    def __post_init__(self) -> None:
        if self.width < MIN_DIMENSION or self.height < MIN_DIMENSION:
            raise TooSmall(f"image is {self.width}x{self.height}, need at least "
                           f"{MIN_DIMENSION}x{MIN_DIMENSION}")
        if self.samples.shape != (self.height, self.width):
            raise ValueError("samples shape does not match declared dimensions")


@dataclass(frozen=True)
class PerceptualHash:
    """Fixed-width binary fingerprint of an image."""

    kind: HashKind
    bits: bytes
    quality: int | None = None  # 0..100, PDQ only

    def __post_init__(self) -> None:
        if len(self.bits) != self.kind.byte_length:
            raise ValueError(f"{self.kind.name} needs {self.kind.byte_length} bytes, "
                             f"got {len(self.bits)}")
        if (self.quality is not None) != (self.kind is HashKind.PDQ256):
            raise ValueError("quality is present iff kind is PDQ256")
        if self.quality is not None and not 0 <= self.quality <= 100:
            raise ValueError("quality out of range")

    def to_hex(self) -> str:
        """Lowercase hex, most-significant bit first."""
        return self.bits.hex()

    @classmethod
    def from_hex(cls, kind: HashKind, text: str, quality: int | None = None) -> "PerceptualHash":
        if len(text) != kind.hex_length:
            raise ValueError(f"{kind.name} hex form has {kind.hex_length} chars")
        if quality is None and kind is HashKind.PDQ256:
            quality = 0
        return cls(kind, bytes.fromhex(text), quality)

    def as_int(self) -> int:
        return int.from_bytes(self.bits, "big")

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.to_hex()}"


def hamming(a: PerceptualHash, b: PerceptualHash) -> int:
    """Number of differing bits between two equal-kind hashes."""
    if a.kind is not b.kind:
        raise KindMismatch(f"cannot compare {a.kind.name} with {b.kind.name}")
    return (a.as_int() ^ b.as_int()).bit_count()


# ---------------------------------------------------------------------------
# Decoding


def decode_image(data: bytes) -> LuminancePlane:
    """Decode JPEG/PNG bytes to a grayscale plane.

    Alpha is composited over white; luma uses the 0.299/0.587/0.114 weights
    with round-half-up to the nearest integer.
    """
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode image: {exc}") from exc
    if img.format not in _ALLOWED_FORMATS:
        raise DecodeError(f"unsupported format {img.format!r}; expected JPEG or PNG")
    if img.width < MIN_DIMENSION or img.height < MIN_DIMENSION:
        raise TooSmall(f"image is {img.width}x{img.height}, need at least "
                       f"{MIN_DIMENSION}x{MIN_DIMENSION}")

    rgba = img.convert("RGBA")
    arr = np.asarray(rgba, dtype=np.float64)
    rgb, alpha = arr[..., :3], arr[..., 3:] / 255.0
    composited = rgb * alpha + 255.0 * (1.0 - alpha)
    luma = (composited[..., 0] * 0.299
            + composited[..., 1] * 0.587
            + composited[..., 2] * 0.114)
    samples = np.floor(luma + 0.5).clip(0, 255).astype(np.uint8)
    return LuminancePlane(width=img.width, height=img.height, samples=samples)


# ---------------------------------------------------------------------------
# pHash-64


def _area_resize(plane: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Exact box (area-average) resample of a float 2-D array."""
    return _axis_weights(plane.shape[0], out_h) @ plane @ _axis_weights(plane.shape[1], out_w).T


def _axis_weights(n_in: int, n_out: int) -> np.ndarray:
    # Row i of the result averages source interval [i*n_in/n_out, (i+1)*n_in/n_out).
    w = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        first, last = int(np.floor(lo)), int(np.ceil(hi))
        for s in range(first, min(last, n_in)):
            overlap = min(hi, s + 1) - max(lo, s)
            if overlap > 0:
                w[i, s] = overlap / scale
    return w


def _dct2_ortho(block: np.ndarray) -> np.ndarray:
    from scipy.fft import dct

    return dct(dct(block, axis=0, norm="ortho"), axis=1, norm="ortho")


def phash64(plane: LuminancePlane) -> PerceptualHash:
    """64-bit DCT perceptual hash of a grayscale plane."""
    small = _area_resize(plane.samples.astype(np.float64), 32, 32)
    coeffs = _dct2_ortho(small)
    # Lowest-frequency 8x8 block with the DC row and column dropped, so a
    # constant image yields the all-zero hash under the strict > median rule.
    block = coeffs[1:9, 1:9]
    median = np.median(block)
    bits = (block > median).flatten()
    return PerceptualHash(HashKind.PHASH64, np.packbits(bits).tobytes())


# ---------------------------------------------------------------------------
# PDQ-256

_PDQ_OUT = 64          # downsample target per axis
_PDQ_DCT_SIZE = 16     # frequencies 1..16 kept per axis
_PDQ_BOX_PASSES = 2    # two box passes approximate a tent kernel


def _box_window(dim: int) -> int:
    # Window sized so two passes cover one 64th of the image extent.
    return (dim + 2 * _PDQ_OUT - 1) // (2 * _PDQ_OUT)


def _box_pass(arr: np.ndarray, window: int, axis: int) -> np.ndarray:
    """One running-mean box pass along ``axis`` with edge-clipped windows.

    Output k averages in[max(0, k-(w-h)) : min(k+h, n)] where h = (w+2)//2,
    matching a centered window whose ends shrink at the borders.
    """
    if window <= 1:
        return arr
    if axis == 1:
        return _box_pass(arr.T, window, 0).T
    n = arr.shape[0]
    half = (window + 2) // 2
    csum = np.zeros((n + 1,) + arr.shape[1:])
    np.cumsum(arr, axis=0, out=csum[1:])
    k = np.arange(n)
    lo = np.maximum(0, k - (window - half))
    hi = np.minimum(n, k + half)
    out = (csum[hi] - csum[lo]) / (hi - lo).reshape(-1, *([1] * (arr.ndim - 1)))
    return out


def _tent_downsample(plane: np.ndarray) -> np.ndarray:
    """Two box passes per axis, then center-point decimation to 64x64."""
    rows, cols = plane.shape
    w_v, w_h = _box_window(rows), _box_window(cols)
    out = plane
    for _ in range(_PDQ_BOX_PASSES):
        out = _box_pass(out, w_h, axis=1)
        out = _box_pass(out, w_v, axis=0)
    ri = ((np.arange(_PDQ_OUT) + 0.5) * rows / _PDQ_OUT).astype(np.int64)
    ci = ((np.arange(_PDQ_OUT) + 0.5) * cols / _PDQ_OUT).astype(np.int64)
    return out[np.ix_(ri, ci)]


def _gradient_quality(buf: np.ndarray) -> int:
    """Quality in [0, 100] from summed truncated gradient magnitudes."""
    dv = np.trunc((buf[1:, :] - buf[:-1, :]) * 100.0 / 255.0)
    dh = np.trunc((buf[:, 1:] - buf[:, :-1]) * 100.0 / 255.0)
    total = int(np.abs(dv).sum() + np.abs(dh).sum())
    return min(total // 90, 100)


def _pdq_dct_matrix() -> np.ndarray:
    i = np.arange(1, _PDQ_DCT_SIZE + 1).reshape(-1, 1)
    j = np.arange(_PDQ_OUT).reshape(1, -1)
    return np.sqrt(2.0 / _PDQ_OUT) * np.cos(np.pi / (2 * _PDQ_OUT) * i * (2 * j + 1))


_PDQ_DCT = _pdq_dct_matrix()


def pdqhash256(plane: LuminancePlane) -> PerceptualHash:
    """256-bit perceptual hash with a gradient-based quality score."""
    buf64 = _tent_downsample(plane.samples.astype(np.float64))
    quality = _gradient_quality(buf64)
    dct16 = _PDQ_DCT @ buf64 @ _PDQ_DCT.T
    median = np.median(dct16)
    bits = (dct16 > median).flatten()
    return PerceptualHash(HashKind.PDQ256, np.packbits(bits).tobytes(), quality=quality)


def hash_image(data: bytes, kind: HashKind) -> PerceptualHash:
    """Decode and hash in one step."""
    plane = decode_image(data)
    return phash64(plane) if kind is HashKind.PHASH64 else pdqhash256(plane)
