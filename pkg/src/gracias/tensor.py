"""Dense numerical kernels: zero-boundary convolution, Jacobi eigensolver, thin SVD.

Tensors are plain float64 numpy arrays.  ``as_tensor`` is the single
validation point (finite values, float64, C order).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Relative to the largest Gram eigenvalue, i.e. S_i < 1e-6 * S_max.
GRAM_RANK_TOL = 1e-12
JACOBI_TOL = 1e-12


def as_tensor(a, *, name: str = "tensor") -> np.ndarray:
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def _check_kernel(kernel: np.ndarray, height: int, width: int) -> None:
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise ValueError(f"kernel must be square 2-D, got shape {kernel.shape}")
    s = kernel.shape[0]
    if s % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {s}")
    if s > min(height, width):
        raise ValueError(f"kernel size {s} exceeds image size {height}x{width}")


def _patches(image: np.ndarray, s: int) -> np.ndarray:
    """(H, W, C, s, s) view of zero-padded neighbourhoods."""
    r = s // 2
    padded = np.pad(image, ((r, r), (r, r), (0, 0)))
    return sliding_window_view(padded, (s, s), axis=(0, 1))


def conv2d_same(image, kernel) -> np.ndarray:
    """Filter every channel of an (H, W, C) image with one odd s x s kernel.

    ``out[i, j, c] = sum_{a,b} image[i + a - s//2, j + b - s//2, c] * kernel[a, b]``
    with zero reads outside the image.  The output has the input's shape.
    """
    image = as_tensor(image, name="image")
    kernel = as_tensor(kernel, name="kernel")
    if image.ndim != 3:
        raise ValueError(f"image must be (H, W, C), got shape {image.shape}")
    _check_kernel(kernel, image.shape[0], image.shape[1])
    s = kernel.shape[0]
    return np.einsum("hwcab,ab->hwc", _patches(image, s), kernel)


def conv2d_bank(image, kernels) -> np.ndarray:
    """Filter one image with a stack of kernels (k, s, s).

    Returns the N x k matrix whose column i is ``conv2d_same(image, kernels[i])``
    flattened row-major.  One im2col matmul instead of k separate passes.
    """
    image = as_tensor(image, name="image")
    kernels = as_tensor(kernels, name="kernels")
    if image.ndim != 3:
        raise ValueError(f"image must be (H, W, C), got shape {image.shape}")
    if kernels.ndim != 3:
        raise ValueError(f"kernels must be (k, s, s), got shape {kernels.shape}")
    _check_kernel(kernels[0], image.shape[0], image.shape[1])
    k, s, _ = kernels.shape
    cols = _patches(image, s).reshape(image.size, s * s)
    return cols @ kernels.reshape(k, s * s).T


@dataclass(frozen=True)
class EigenResult:
    values: np.ndarray  # descending
    vectors: np.ndarray  # columns match values


@numba.njit(cache=True)
def _jacobi_sweeps(a, tol, max_sweeps):
    n = a.shape[0]
    a = a.copy()
    v = np.eye(n)
    fro = np.sqrt(np.sum(a * a))
    for _ in range(max_sweeps):
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += a[i, j] * a[i, j]
        if np.sqrt(off) <= tol * fro:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    return np.diag(a).copy(), v


def sym_eig(a, *, tol: float = JACOBI_TOL, max_sweeps: int = 100) -> EigenResult:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Pairs (p, q) are visited in row-major order each sweep until the
    off-diagonal Frobenius norm drops below ``tol * ||A||_F``.  Eigenvectors are
    sign-normalised so their largest-magnitude entry is positive.
    """
    a = as_tensor(a, name="matrix")
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.linalg.norm(a)))
    if np.max(np.abs(a - a.T)) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    values, vectors = _jacobi_sweeps(0.5 * (a + a.T), tol, max_sweeps)
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = vectors[:, order]
    pivot = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivot, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return EigenResult(values=values, vectors=np.ascontiguousarray(vectors * signs))


class ThinSVD(NamedTuple):
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return numerical_rank(self.S)


def rank_cutoff(s_max: float) -> float:
    """Singular values at or below this are treated as zero."""
    return np.sqrt(GRAM_RANK_TOL) * s_max


def numerical_rank(singular_values: np.ndarray) -> int:
    s = np.asarray(singular_values)
    if s.size == 0 or s[0] <= 0.0:
        return 0
    return int(np.count_nonzero(s > rank_cutoff(s[0])))


def thin_svd(m) -> ThinSVD:
    """Thin SVD of an N x k matrix (N >= k) through its k x k Gram matrix.

    ``S`` is descending.  Columns of ``U`` past the numerical rank are zero.
    Squaring the matrix limits resolvable singular values to about
    ``1e-8 * S_max``, which is why the rank cutoff sits at ``1e-6 * S_max``.
    """
    m = as_tensor(m, name="matrix")
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    n, k = m.shape
    if k < 1 or k > n:
        raise ValueError(f"thin_svd needs N >= k >= 1, got {n} x {k}")
    eig = sym_eig(m.T @ m)
    s = np.sqrt(np.clip(eig.values, 0.0, None))
    v = eig.vectors
    r = numerical_rank(s)
    s[r:] = 0.0
    u = np.zeros((n, k))
    if r:
        u[:, :r] = (m @ v[:, :r]) / s[:r]
    return ThinSVD(U=u, S=s, V=v)


def singular_values(m) -> np.ndarray:
    """All min(N, k) singular values, descending, with no rank cutoff applied."""
    m = as_tensor(m, name="matrix")
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    gram = m.T @ m if m.shape[0] >= m.shape[1] else m @ m.T
    return np.sqrt(np.clip(sym_eig(gram).values, 0.0, None))
