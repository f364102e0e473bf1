"""GraCIAS input transformation and the simple baselines it is compared with.

A defense transform is any callable ``f(image, rng) -> image``.  Randomised
transforms draw from the supplied :class:`~gracias.rng.Xoshiro256`; the
deterministic ones ignore it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .rng import Xoshiro256, sub_seed
from .tensor import as_tensor, conv2d_bank, numerical_rank, thin_svd

log = logging.getLogger(__name__)

Defense = Callable[[np.ndarray, Xoshiro256], np.ndarray]


class DegenerateBankError(ValueError):
    """The mean-centred image bank is numerically zero."""


@dataclass(frozen=True)
class DefenseConfig:
    k_min: int = 10
    k_max: int = 60
    kernel_size: int | None = None  # None: 7 for images >= 32 px, else 3
    var_min: float = 0.60
    var_max: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.k_min <= self.k_max:
            raise ValueError(f"need 1 <= k_min <= k_max, got {self.k_min}, {self.k_max}")
        if not 0.0 < self.var_min <= self.var_max <= 1.0:
            raise ValueError(f"need 0 < var_min <= var_max <= 1, got {self.var_min}, {self.var_max}")
        if self.kernel_size is not None and (self.kernel_size < 1 or self.kernel_size % 2 == 0):
            raise ValueError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")

    def kernel_size_for(self, shape: Sequence[int]) -> int:
        if self.kernel_size is not None:
            return self.kernel_size
        return 7 if min(shape[0], shape[1]) >= 32 else 3


@dataclass(frozen=True)
class KernelBank:
    kernels: np.ndarray  # (k, s, s)

    @property
    def k(self) -> int:
        return self.kernels.shape[0]

    @property
    def size(self) -> int:
        return self.kernels.shape[1]


@dataclass(frozen=True)
class ImageBank:
    matrix: np.ndarray  # (N, k); column i = vec(x * h_i)
    source_shape: tuple[int, int, int]

    @property
    def k(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class Subspace:
    mean: np.ndarray  # (N,)
    basis: np.ndarray  # (N, d), orthonormal columns
    spectrum: np.ndarray  # (d,) retained singular values
    source_shape: tuple[int, int, int]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class DefenseOutput:
    image: np.ndarray
    k: int
    dim: int
    variance_fraction: float
    degenerate: bool = False


def sample_kernel(size: int, rng: Xoshiro256) -> np.ndarray:
    """Random s x s filter with i.i.d. U[0, 1] weights, scaled to unit l1 norm."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size}")
    while True:
        w = rng.uniform_array(size * size)
        total = w.sum()
        if total > 0.0:
            return (w / total).reshape(size, size)


def build_bank(x, config: DefenseConfig, rng: Xoshiro256) -> tuple[KernelBank, ImageBank]:
    x = as_tensor(x, name="image")
    if x.ndim != 3:
        raise ValueError(f"image must be (H, W, C), got shape {x.shape}")
    size = config.kernel_size_for(x.shape)
    if size > min(x.shape[0], x.shape[1]):
        raise ValueError(f"image {x.shape[0]}x{x.shape[1]} is smaller than the {size}x{size} kernel")
    k = rng.integers(config.k_min, config.k_max)
    kernels = KernelBank(np.stack([sample_kernel(size, rng) for _ in range(k)]))
    return kernels, bank_from_kernels(x, kernels)


def bank_from_kernels(x, kernels: KernelBank) -> ImageBank:
    x = as_tensor(x, name="image")
    return ImageBank(matrix=conv2d_bank(x, kernels.kernels), source_shape=tuple(x.shape))


def retained_dim(singular_values: np.ndarray, variance_fraction: float) -> int:
    """Smallest d whose leading squared singular values reach the fraction of the total."""
    s = np.asarray(singular_values)
    r = numerical_rank(s)
    if r == 0:
        return 1
    energy = np.cumsum(s[:r] ** 2)
    ratio = energy / energy[-1]
    d = int(np.searchsorted(ratio, variance_fraction - 1e-12, side="left")) + 1
    return max(1, min(d, r))


def estimate_subspace(bank: ImageBank, variance_fraction: float) -> Subspace:
    if bank.matrix.size == 0:
        raise ValueError("empty image bank")
    if not 0.0 < variance_fraction <= 1.0:
        raise ValueError(f"variance_fraction must lie in (0, 1], got {variance_fraction}")
    x = bank.matrix
    mean = x.mean(axis=1)
    centered = x - mean[:, None]
    if np.linalg.norm(centered) <= 1e-12 * max(1.0, float(np.linalg.norm(x))):
        raise DegenerateBankError("degenerate bank: centred columns are zero")
    svd = thin_svd(centered)
    d = retained_dim(svd.S, variance_fraction)
    return Subspace(
        mean=mean,
        basis=np.ascontiguousarray(svd.U[:, :d]),
        spectrum=svd.S[:d].copy(),
        source_shape=bank.source_shape,
    )


def project_reconstruct(x, sub: Subspace, *, clamp: bool = True) -> np.ndarray:
    """PCA projection onto ``sub`` followed by reconstruction in image space."""
    x = as_tensor(x, name="image")
    if tuple(x.shape) != tuple(sub.source_shape):
        raise ValueError(f"image shape {x.shape} does not match subspace shape {sub.source_shape}")
    centered = x.reshape(-1) - sub.mean
    out = sub.mean + sub.basis @ (sub.basis.T @ centered)
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return out.reshape(x.shape)


def gracias_transform(x, config: DefenseConfig, rng: Xoshiro256) -> DefenseOutput:
    """Full defense with its random draws exposed for inspection."""
    x = as_tensor(x, name="image")
    _, bank = build_bank(x, config, rng)
    fraction = rng.uniform(config.var_min, config.var_max)
    try:
        sub = estimate_subspace(bank, fraction)
    except DegenerateBankError:
        log.warning("degenerate image bank; returning input unchanged")
        return DefenseOutput(image=x.copy(), k=bank.k, dim=0, variance_fraction=fraction, degenerate=True)
    return DefenseOutput(
        image=project_reconstruct(x, sub), k=bank.k, dim=sub.dim, variance_fraction=fraction
    )


def gracias_defend(x, config: DefenseConfig, rng: Xoshiro256) -> np.ndarray:
    return gracias_transform(x, config, rng).image


def bitdepth_reduce(x, bits: int) -> np.ndarray:
    """Quantise to 2**bits evenly spaced levels on [0, 1] (halves round up)."""
    if not 1 <= bits <= 8:
        raise ValueError(f"bits must lie in [1, 8], got {bits}")
    levels = (1 << bits) - 1
    x = as_tensor(x, name="image")
    return np.floor(np.clip(x, 0.0, 1.0) * levels + 0.5) / levels


def identity(x, rng=None) -> np.ndarray:
    return as_tensor(x, name="image").copy()


def gracias(config: DefenseConfig | None = None) -> Defense:
    config = config or DefenseConfig()

    def defend(x, rng):
        return gracias_defend(x, config, rng)

    defend.__name__ = "gracias"
    return defend


def bitdepth(bits: int = 3) -> Defense:
    if not 1 <= bits <= 8:
        raise ValueError(f"bits must lie in [1, 8], got {bits}")

    def defend(x, rng=None):
        return bitdepth_reduce(x, bits)

    defend.__name__ = f"bitdepth{bits}"
    return defend


def chain(defenses: Sequence[Defense]) -> Defense:
    """Compose transforms left to right; they share (and advance) one stream."""
    stages = list(defenses)
    if not stages:
        raise ValueError("chain needs at least one defense")

    def defend(x, rng):
        for stage in stages:
            x = stage(x, rng)
        return x

    defend.__name__ = "->".join(getattr(f, "__name__", "defense") for f in stages)
    return defend


def defend_batch(images: Sequence[np.ndarray], defense: Defense, master_seed: int) -> list[np.ndarray]:
    """Defend each image with its own stream seeded by ``sub_seed(master_seed, i)``."""
    return [defense(img, Xoshiro256(sub_seed(master_seed, i))) for i, img in enumerate(images)]
