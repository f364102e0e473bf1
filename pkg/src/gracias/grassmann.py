"""Subspace geometry for image banks.

Grassmann points, principal angles, geodesic distances, explicit
block-Toeplitz (BTTB) convolution matrices, and a sampled check of the
perturbation bound

    d_ng(X_c, X_p)^2  <=  ||X_c^+||_2^2 * sum_i ||H_i||_2^2 * ||delta||_2^2

tying the clean and perturbed bank subspaces together.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .defense import ImageBank, KernelBank, bank_from_kernels, sample_kernel
from .rng import Xoshiro256, sub_seed
from .tensor import as_tensor, numerical_rank, singular_values, sym_eig, thin_svd

BTTB_MAX_PIXELS = 4096


@dataclass(frozen=True)
class GrassmannPoint:
    basis: np.ndarray  # (N, d), orthonormal columns

    def __post_init__(self):
        b = self.basis
        if b.ndim != 2 or b.shape[1] < 1 or b.shape[1] > b.shape[0]:
            raise ValueError(f"basis must be N x d with 1 <= d <= N, got {b.shape}")
        if np.max(np.abs(b.T @ b - np.eye(b.shape[1]))) > 1e-8:
            raise ValueError("basis columns are not orthonormal")

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def truncate(self, d: int) -> "GrassmannPoint":
        return GrassmannPoint(self.basis[:, :d])


@dataclass(frozen=True)
class PrincipalAngles:
    angles: np.ndarray  # ascending, in [0, pi/2]


def orthonormal_point(m) -> GrassmannPoint:
    """Grassmann point spanned by the columns of a full-column-rank matrix."""
    svd = thin_svd(m)
    if svd.rank < svd.S.size:
        raise ValueError(f"matrix has rank {svd.rank} < {svd.S.size} columns")
    return GrassmannPoint(svd.U)


def bank_basis(bank: ImageBank, centered: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Left singular vectors and singular values of the (optionally centred) bank."""
    x = bank.matrix
    if centered:
        x = x - x.mean(axis=1, keepdims=True)
    svd = thin_svd(x)
    return svd.U, svd.S


def grassmann_from_bank(bank: ImageBank, d: int, centered: bool = False) -> GrassmannPoint:
    u, s = bank_basis(bank, centered)
    rank = numerical_rank(s)
    if not 1 <= d <= rank:
        raise ValueError(f"requested dimension {d} outside [1, numerical rank {rank}]")
    return GrassmannPoint(np.ascontiguousarray(u[:, :d]))


def _check_pair(a: GrassmannPoint, b: GrassmannPoint) -> None:
    if a.ambient_dim != b.ambient_dim or a.dim != b.dim:
        raise ValueError(
            f"subspaces must share ambient and subspace dimensions, got "
            f"{a.ambient_dim}/{a.dim} and {b.ambient_dim}/{b.dim}"
        )


def principal_angles(a: GrassmannPoint, b: GrassmannPoint) -> PrincipalAngles:
    """Principal angles, ascending.

    Cosines come from the singular values of A^T B.  Angles below pi/4 are
    taken from the sines, i.e. the singular values of (I - A A^T) B, because
    arccos loses all precision near zero.
    """
    _check_pair(a, b)
    cross = a.basis.T @ b.basis
    cosines = np.clip(singular_values(cross), 0.0, 1.0)  # descending
    from_cos = np.arccos(cosines)  # ascending
    resid = b.basis - a.basis @ cross
    sines = np.clip(singular_values(resid)[: a.dim][::-1], 0.0, 1.0)  # ascending
    from_sin = np.arcsin(sines)
    angles = np.where(cosines * cosines > 0.5, from_sin, from_cos)
    return PrincipalAngles(np.sort(angles))


def geodesic_distance(a: GrassmannPoint, b: GrassmannPoint) -> float:
    return float(np.sqrt(np.sum(principal_angles(a, b).angles ** 2)))


def max_geodesic(d: int) -> float:
    """Largest geodesic distance between d-planes, reached when all angles are pi/2 (needs 2d <= N)."""
    return 0.5 * math.pi * math.sqrt(d)


def normalized_geodesic(a: GrassmannPoint, b: GrassmannPoint) -> float:
    return geodesic_distance(a, b) / max_geodesic(a.dim)


def bttb_matrix(kernel, image_shape: tuple[int, int]) -> np.ndarray:
    """Explicit HW x HW matrix of ``conv2d_same`` on a single-channel image.

    Block-Toeplitz with Toeplitz blocks: ``H @ x.ravel() == conv2d_same(x, kernel).ravel()``.
    """
    kernel = as_tensor(kernel, name="kernel")
    h, w = int(image_shape[0]), int(image_shape[1])
    if h * w > BTTB_MAX_PIXELS:
        raise ValueError(f"{h}x{w} image exceeds the {BTTB_MAX_PIXELS}-pixel cap for explicit BTTB matrices")
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1] or kernel.shape[0] % 2 == 0:
        raise ValueError(f"kernel must be odd and square, got shape {kernel.shape}")
    s = kernel.shape[0]
    if s > min(h, w):
        raise ValueError(f"kernel size {s} exceeds image size {h}x{w}")
    r = s // 2
    out = np.zeros((h * w, h * w))
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    rows = (ii * w + jj).ravel()
    for a in range(s):
        for b in range(s):
            si, sj = (ii + a - r).ravel(), (jj + b - r).ravel()
            ok = (si >= 0) & (si < h) & (sj >= 0) & (sj < w)
            out[rows[ok], si[ok] * w + sj[ok]] += kernel[a, b]
    return out


def spectral_norm(m) -> float:
    m = as_tensor(m, name="matrix")
    small = m.T @ m if m.shape[0] >= m.shape[1] else m @ m.T
    return float(np.sqrt(max(sym_eig(small).values[0], 0.0)))


def sigma_min(m) -> float:
    """Smallest singular value; 0 when the matrix is numerically rank deficient."""
    return float(thin_svd(m).S[-1])


def pinv_sigma(m) -> float:
    """Smallest non-zero singular value, so that ||M^+||_2 = 1 / pinv_sigma(M); 0 for a zero matrix."""
    s = thin_svd(m).S
    r = numerical_rank(s)
    return float(s[r - 1]) if r else 0.0


@dataclass(frozen=True)
class BoundTerms:
    squared: float  # ||H||^2 ||delta||^2 / sigma^2
    literal: float  # same with sigma unsquared
    sigma: float  # smallest non-zero singular value of the clean bank
    kernel_norm_sq: float  # sum_i ||H_i||_2^2
    delta_sq: float
    full_rank: bool
    degenerate: bool


def kernel_norm_sq(kernels: KernelBank, image_shape) -> float:
    return float(sum(spectral_norm(bttb_matrix(h, image_shape[:2])) ** 2 for h in kernels.kernels))


def bound_rhs(clean_bank: ImageBank, kernels: KernelBank, delta, *, norm_sq: float | None = None) -> BoundTerms:
    """Right-hand side(s) of the clean/perturbed subspace proximity bound.

    Multi-channel banks are handled as per-channel stacks: the convolution
    operator is block diagonal with identical blocks, so its spectral norm is
    that of the single-channel BTTB matrix.
    """
    delta = as_tensor(delta, name="delta")
    if delta.size != clean_bank.matrix.shape[0]:
        raise ValueError(f"delta has {delta.size} entries, bank has {clean_bank.matrix.shape[0]} rows")
    s = thin_svd(clean_bank.matrix).S
    r = numerical_rank(s)
    hs = kernel_norm_sq(kernels, clean_bank.source_shape) if norm_sq is None else norm_sq
    dsq = float(delta.ravel() @ delta.ravel())
    if r == 0:
        return BoundTerms(math.inf, math.inf, 0.0, hs, dsq, full_rank=False, degenerate=True)
    sigma = float(s[r - 1])
    return BoundTerms(
        squared=hs * dsq / sigma**2,
        literal=hs * dsq / sigma,
        sigma=sigma,
        kernel_norm_sq=hs,
        delta_sq=dsq,
        full_rank=r == s.size,
        degenerate=False,
    )


@dataclass
class BoundTrial:
    index: int
    lhs: float  # d_ng^2 of the uncentred spans
    rhs_squared: float
    rhs_literal: float
    delta_x_fro_sq: float  # ||X_c - X_p||_F^2, measured
    operator_bound: float  # sum_i ||H_i||_2^2 * ||delta||_2^2
    dim: int
    degenerate: bool


@dataclass
class BoundReport:
    trials: int
    geometry: dict
    eps: float
    seed: int
    degenerate: int = 0
    violations_squared: int = 0
    violations_literal: int = 0
    operator_violations: int = 0  # measured ||dX||_F^2 above its kernel-norm bound
    min_margin_squared: float | None = None
    max_ratio_squared: float | None = None  # largest lhs / rhs
    mean_lhs: float | None = None
    records: list[BoundTrial] = field(default_factory=list)

    def to_dict(self, with_records: bool = False) -> dict:
        out = asdict(self)
        if not with_records:
            out.pop("records")
        return out


def bound_trial(index: int, geometry: dict, eps: float, rng: Xoshiro256) -> BoundTrial:
    h, w, c = geometry["height"], geometry["width"], geometry.get("channels", 1)
    k, s = geometry["k"], geometry["kernel_size"]
    n = h * w * c
    # clean pixels kept eps away from the range ends so x + delta stays an image
    x = (eps + (1.0 - 2.0 * eps) * rng.uniform_array(n)).reshape(h, w, c)
    raw = 2.0 * rng.uniform_array(n) - 1.0
    peak = np.max(np.abs(raw))
    delta = (eps * raw / peak if peak > 0 else np.zeros(n)).reshape(h, w, c)
    kernels = KernelBank(np.stack([sample_kernel(s, rng) for _ in range(k)]))
    clean = bank_from_kernels(x, kernels)
    pert = bank_from_kernels(x + delta, kernels)
    terms = bound_rhs(clean, kernels, delta)
    uc, sc = bank_basis(clean)
    up, sp = bank_basis(pert)
    d = min(numerical_rank(sc), numerical_rank(sp))
    dx = clean.matrix - pert.matrix
    fro = float(np.sum(dx * dx))
    op = terms.kernel_norm_sq * terms.delta_sq
    if terms.degenerate or d == 0:
        return BoundTrial(index, math.nan, terms.squared, terms.literal, fro, op, d, True)
    lhs = normalized_geodesic(GrassmannPoint(uc[:, :d]), GrassmannPoint(up[:, :d])) ** 2
    return BoundTrial(index, lhs, terms.squared, terms.literal, fro, op, d, False)


def verify_bound(trials: int, geometry: dict, eps: float, seed: int = 0, *, keep_records: bool = True) -> BoundReport:
    """Sample clean images, L-inf perturbations and shared kernel banks; count bound violations.

    ``geometry`` holds ``height``, ``width``, ``channels`` (default 1), ``k``
    and ``kernel_size``.  Trial ``t`` draws from ``Xoshiro256(sub_seed(seed, t))``.
    Degenerate trials (zero clean bank) are counted and left out of the statistics.
    """
    report = BoundReport(trials=max(trials, 0), geometry=dict(geometry), eps=eps, seed=seed)
    lhs_values, margins, ratios = [], [], []
    for t in range(max(trials, 0)):
        trial = bound_trial(t, geometry, eps, Xoshiro256(sub_seed(seed, t)))
        if keep_records:
            report.records.append(trial)
        if trial.degenerate:
            report.degenerate += 1
            continue
        report.violations_squared += trial.lhs > trial.rhs_squared
        report.violations_literal += trial.lhs > trial.rhs_literal
        report.operator_violations += trial.delta_x_fro_sq > trial.operator_bound * (1 + 1e-12)
        lhs_values.append(trial.lhs)
        margins.append(trial.rhs_squared - trial.lhs)
        ratios.append(trial.lhs / trial.rhs_squared if trial.rhs_squared > 0 else 0.0)
    if lhs_values:
        report.min_margin_squared = float(np.min(margins))
        report.max_ratio_squared = float(np.max(ratios))
        report.mean_lhs = float(np.mean(lhs_values))
    return report
