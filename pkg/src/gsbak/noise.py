"""Low-frequency probe noise: orthonormal 2-D DCT per channel, with Gaussian
coefficients drawn only in the top-left block and everything else zeroed.

Flat d-dimensional inputs are treated as shape (1, 1, d); the length-1 axis
makes the transform effectively 1-D.
"""

from dataclasses import dataclass

import numpy as np
from scipy import fft as _fft


class ShapeError(Exception):
    pass


def dct2(channel: np.ndarray) -> np.ndarray:
    """Orthonormal type-II DCT over the last two axes."""
    return _fft.dctn(np.asarray(channel, dtype=np.float64), type=2, norm="ortho",
                     axes=(-2, -1))


def idct2(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of dct2 (orthonormal type-III over the last two axes)."""
    return _fft.idctn(np.asarray(coeffs, dtype=np.float64), type=2, norm="ortho",
                      axes=(-2, -1))


@dataclass(frozen=True)
class NoiseConfig:
    """shape is (channels, H, W); reduction_factor f divides H and W
    (only W when H == 1, the flat-input case); sigma is the per-coefficient
    standard deviation."""

    shape: tuple
    reduction_factor: int = 4
    sigma: float = 0.0002
    seed: int = 0

    def __post_init__(self):
        if len(self.shape) != 3:
            raise ShapeError(f"shape must be (channels, H, W), got {self.shape}")
        c, h, w = self.shape
        f = self.reduction_factor
        if c < 1 or h < 1 or w < 1 or f < 1:
            raise ShapeError("shape entries and reduction_factor must be positive")
        if h > 1 and h % f != 0:
            raise ShapeError(f"reduction factor {f} does not divide height {h}")
        if w % f != 0:
            raise ShapeError(f"reduction factor {f} does not divide width {w}")
        if self.sigma <= 0:
            raise ShapeError("sigma must be positive")

    @property
    def block_shape(self) -> tuple:
        c, h, w = self.shape
        f = self.reduction_factor
        return (c, h // f if h > 1 else 1, w // f)

    @property
    def nonzero_coefficients(self) -> int:
        c, bh, bw = self.block_shape
        return c * bh * bw


class NoiseSampler:
    """Owns the RNG state; identical (cfg, seed) gives bit-identical streams.
    Not shared across threads — clone with distinct seeds for parallel runs."""

    def __init__(self, cfg: NoiseConfig, seed: int | None = None):
        self.cfg = cfg
        self._rng = np.random.Generator(np.random.PCG64(cfg.seed if seed is None else seed))

    def sample(self) -> np.ndarray:
        return self.sample_batch(1)[0]

    def sample_batch(self, n: int) -> np.ndarray:
        """n noise tensors of cfg.shape, drawn as one deterministic block."""
        if n < 1:
            raise ValueError("batch size must be positive")
        c, h, w = self.cfg.shape
        _, bh, bw = self.cfg.block_shape
        coeffs = np.zeros((n, c, h, w), dtype=np.float64)
        coeffs[:, :, :bh, :bw] = self._rng.standard_normal((n, c, bh, bw)) * self.cfg.sigma
        return idct2(coeffs)


def sample_lowfreq_noise(cfg: NoiseConfig, rng: np.random.Generator) -> np.ndarray:
    """One noise tensor from an externally held RNG state."""
    c, h, w = cfg.shape
    _, bh, bw = cfg.block_shape
    coeffs = np.zeros((c, h, w), dtype=np.float64)
    coeffs[:, :bh, :bw] = rng.standard_normal((c, bh, bw)) * cfg.sigma
    return idct2(coeffs)
