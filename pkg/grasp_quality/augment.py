"""
Input pipeline: flips, Gamma multiplicative noise (optionally carried over
to the grasp depth), bicubic-upsampled Gaussian grid noise, normalization
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from utils.data_models import AugmentConfig, FlipMode, GraspExample, NormStats
from .errors import ConfigError, DimensionError

logger = logging.getLogger(__name__)

CATMULL_ROM_A = -0.5
GP_IMAGE_SIZE = 32


@dataclass
class AugmentDraws:
    """Random decisions taken for one example, kept for audit"""

    flip_vertical: bool = False
    flip_horizontal: bool = False
    gain: float = 1.0
    gp_applied: bool = False


# Normalization


def compute_norm_stats(images: np.ndarray) -> NormStats:
    """Pooled pixel mean and standard deviation of the training images"""
    images = np.asarray(images)
    if images.size == 0:
        raise ConfigError("cannot compute normalization stats of zero images")
    pixels = images.astype(np.float64).reshape(-1)
    mean = float(pixels.mean())
    std = float(np.sqrt(np.mean((pixels - mean) ** 2)))
    if not std > 0:
        raise ConfigError("training pixels have zero variance")
    return NormStats(mean=mean, std=std)


def normalize(image: np.ndarray, stats: NormStats) -> np.ndarray:
    return (image - stats.mean) / stats.std


def denormalize(image: np.ndarray, stats: NormStats) -> np.ndarray:
    return image * stats.std + stats.mean


# Symmetrize


def flip_vertical(image: np.ndarray) -> np.ndarray:
    return image[::-1, :].copy()


def flip_horizontal(image: np.ndarray) -> np.ndarray:
    return image[:, ::-1].copy()


def draw_flips(
    rng: np.random.Generator, flip_prob: float, mode: FlipMode = FlipMode.INDEPENDENT
) -> Tuple[bool, bool]:
    first, second = rng.random(), rng.random()
    if FlipMode(mode) == FlipMode.EXCLUSIVE:
        if first >= flip_prob:
            return False, False
        return (True, False) if second < 0.5 else (False, True)
    return bool(first < flip_prob), bool(second < flip_prob)


def apply_flips(image: np.ndarray, vertical: bool, horizontal: bool) -> np.ndarray:
    if vertical:
        image = flip_vertical(image)
    if horizontal:
        image = flip_horizontal(image)
    return image


def symmetrize(
    image: np.ndarray,
    rng: np.random.Generator,
    flip_prob: float = 0.5,
    mode: FlipMode = FlipMode.INDEPENDENT,
) -> np.ndarray:
    """Random vertical and horizontal flips; grasp depth and label are untouched"""
    vertical, horizontal = draw_flips(rng, flip_prob, mode)
    return apply_flips(image, vertical, horizontal)


# Multiplicative noise


def sample_gamma_factor(rng: np.random.Generator, a: float = 1000.0, b: float = 0.001) -> float:
    """One draw from Gamma(shape a, scale b)"""
    if a <= 0 or b <= 0:
        raise ConfigError(f"gamma parameters must be positive, got a={a}, b={b}")
    return float(rng.gamma(a, b))


def apply_gain(
    image: np.ndarray, z: float, gain: float, adjust_z: bool
) -> Tuple[np.ndarray, float]:
    return image * gain, (z * gain if adjust_z else z)


def mult_augment(
    image: np.ndarray,
    z: float,
    rng: np.random.Generator,
    adjust_z: bool,
    a: float = 1000.0,
    b: float = 0.001,
) -> Tuple[np.ndarray, float]:
    """Scale every pixel, and optionally the grasp depth, by one Gamma factor"""
    return apply_gain(image, z, sample_gamma_factor(rng, a, b), adjust_z)


# Gaussian-process style noise


def cubic_kernel(x: np.ndarray, a: float = CATMULL_ROM_A) -> np.ndarray:
    """Keys cubic convolution kernel (Catmull-Rom for a = -0.5)"""
    x = np.abs(np.asarray(x, dtype=np.float64))
    near = ((a + 2) * x - (a + 3)) * x * x + 1
    far = ((a * x - 5 * a) * x + 8 * a) * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def upsample_matrix(in_size: int, out_size: int) -> np.ndarray:
    """out_size x in_size interpolation weights, half-pixel centers, clamped edges"""
    weights = np.zeros((out_size, in_size), dtype=np.float64)
    for dst in range(out_size):
        src = (dst + 0.5) * in_size / out_size - 0.5
        base = int(np.floor(src))
        frac = src - base
        for tap in range(-1, 3):
            index = min(max(base + tap, 0), in_size - 1)
            weights[dst, index] += cubic_kernel(frac - tap)
    return weights


def bicubic_upsample(grid: np.ndarray, out_shape: Tuple[int, int] = (32, 32)) -> np.ndarray:
    """Separable cubic-convolution resize of a small grid"""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise DimensionError(f"grid must be 2-D, got shape {grid.shape}")
    rows = upsample_matrix(grid.shape[0], out_shape[0])
    cols = upsample_matrix(grid.shape[1], out_shape[1])
    return rows @ grid @ cols.T


def gp_augment(
    image: np.ndarray,
    rng: np.random.Generator,
    sigma: float = 0.005,
    grid_size: int = 8,
    prob: float = 0.5,
) -> np.ndarray:
    """With probability prob, add an upsampled grid of Normal(0, sigma^2) samples"""
    noisy, _ = _gp_noise(image, rng, sigma, grid_size, prob)
    return noisy


def _gp_noise(image, rng, sigma, grid_size, prob) -> Tuple[np.ndarray, bool]:
    if image.shape != (GP_IMAGE_SIZE, GP_IMAGE_SIZE):
        raise DimensionError(
            f"GP noise expects a {GP_IMAGE_SIZE}x{GP_IMAGE_SIZE} image, got {image.shape}"
        )
    if rng.random() >= prob:
        return image, False
    grid = rng.normal(0.0, sigma, size=(grid_size, grid_size))
    return image + bicubic_upsample(grid, image.shape), True


# Pipeline


def augment_arrays(
    image: np.ndarray,
    z: float,
    cfg: AugmentConfig,
    stats: Optional[NormStats],
    rng: np.random.Generator,
) -> Tuple[np.ndarray, float, AugmentDraws]:
    """symmetrize -> mult_augment -> gp_augment -> normalize; disabled stages pass through"""
    draws = AugmentDraws()
    image = np.asarray(image, dtype=np.float64)

    if cfg.symmetrize:
        draws.flip_vertical, draws.flip_horizontal = draw_flips(rng, cfg.flip_prob, cfg.flip_mode)
        image = apply_flips(image, draws.flip_vertical, draws.flip_horizontal)
    if cfg.mult_pixels:
        draws.gain = sample_gamma_factor(rng, cfg.gamma_shape, cfg.gamma_scale)
        image, z = apply_gain(image, z, draws.gain, cfg.mult_adjust_z)
    if cfg.gp_noise:
        image, draws.gp_applied = _gp_noise(image, rng, cfg.gp_sigma, cfg.gp_grid, cfg.gp_prob)
    if cfg.normalize:
        if stats is None:
            raise ConfigError("normalization is enabled but no stats were given")
        image = normalize(image, stats)
    return image, z, draws


def apply_pipeline(
    example: GraspExample,
    cfg: AugmentConfig,
    stats: Optional[NormStats],
    rng: np.random.Generator,
) -> Tuple[np.ndarray, float, int]:
    """Model-ready (image, z, label) for one example"""
    image, z, _ = augment_arrays(example.image, example.z, cfg, stats, rng)
    return image, z, example.label
