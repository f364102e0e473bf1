import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from gracias.tensor import conv2d_bank, conv2d_same, singular_values, sym_eig, thin_svd


def conv_loops(image, kernel):
    h, w, c = image.shape
    s = kernel.shape[0]
    r = s // 2
    out = np.zeros_like(image)
    for i in range(h):
        for j in range(w):
            for ch in range(c):
                acc = 0.0
                for a in range(s):
                    for b in range(s):
                        ii, jj = i + a - r, j + b - r
                        if 0 <= ii < h and 0 <= jj < w:
                            acc += image[ii, jj, ch] * kernel[a, b]
                out[i, j, ch] = acc
    return out


def test_delta_kernel_is_identity(rng):
    x = rng.random((5, 5, 1))
    k = np.zeros((3, 3))
    k[1, 1] = 1.0
    assert np.array_equal(conv2d_same(x, k), x)


def test_zero_padding_corners():
    out = conv2d_same(np.full((4, 4, 1), 0.5), np.full((3, 3), 1.0 / 9.0))
    assert np.allclose(out[1:3, 1:3], 0.5, atol=1e-15)
    assert np.allclose(out[[0, 0, 3, 3], [0, 3, 0, 3], 0], 0.5 * 4 / 9, atol=1e-15)


@pytest.mark.parametrize("shape,s", [((8, 8, 1), 3), ((7, 9, 3), 5), ((6, 6, 2), 1)])
def test_conv_matches_loops(rng, shape, s):
    x = rng.random(shape)
    k = rng.random((s, s))
    assert np.max(np.abs(conv2d_same(x, k) - conv_loops(x, k))) < 1e-12


def test_conv_bank_columns(rng):
    x = rng.random((9, 9, 3))
    ks = rng.random((4, 3, 3))
    bank = conv2d_bank(x, ks)
    for i in range(4):
        assert np.max(np.abs(bank[:, i] - conv2d_same(x, ks[i]).ravel())) < 1e-13


def test_conv_errors():
    with pytest.raises(ValueError, match="odd"):
        conv2d_same(np.zeros((4, 4, 1)), np.zeros((2, 2)))
    with pytest.raises(ValueError, match="exceeds"):
        conv2d_same(np.zeros((4, 4, 1)), np.zeros((5, 5)))
    with pytest.raises(ValueError, match="NaN"):
        conv2d_same(np.full((4, 4, 1), np.nan), np.ones((3, 3)))


@given(
    arrays(np.float64, (6, 6, 2), elements=st.floats(-1, 1)),
    arrays(np.float64, (6, 6, 2), elements=st.floats(-1, 1)),
    arrays(np.float64, (3, 3), elements=st.floats(-1, 1)),
    st.floats(-3, 3),
    st.floats(-3, 3),
)
def test_conv_linear(x, y, k, a, b):
    lhs = conv2d_same(a * x + b * y, k)
    rhs = a * conv2d_same(x, k) + b * conv2d_same(y, k)
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_conv_pure(rng):
    x, k = rng.random((8, 8, 3)), rng.random((3, 3))
    assert conv2d_same(x, k).tobytes() == conv2d_same(x, k).tobytes()


def test_sym_eig_closed_forms():
    r = sym_eig(np.eye(3))
    assert np.allclose(r.values, 1.0)
    r = sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert np.allclose(r.values, [3.0, 1.0], atol=1e-14)
    assert np.allclose(np.abs(r.vectors[:, 0]), [2**-0.5] * 2, atol=1e-14)
    assert abs(r.vectors[:, 1] @ np.array([1.0, -1.0]) / np.sqrt(2)) == pytest.approx(1.0, abs=1e-14)


def test_sym_eig_recovers_known_spectrum(rng):
    q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    lam = np.array([5.0, 3.5, 2.0, 0.25, -1.0, -4.0])
    r = sym_eig(q @ np.diag(lam) @ q.T)
    assert np.max(np.abs(r.values - lam)) < 1e-9


@given(arrays(np.float64, (7, 7), elements=st.floats(-10, 10)))
def test_sym_eig_properties(m):
    a = m + m.T
    r = sym_eig(a)
    fro = max(np.linalg.norm(a), 1e-300)
    assert np.all(np.diff(r.values) <= 0)
    assert np.max(np.abs(r.vectors.T @ r.vectors - np.eye(7))) < 1e-10
    assert abs(r.values.sum() - np.trace(a)) <= 1e-9 * max(fro, 1.0)
    for i in range(7):
        assert np.linalg.norm(a @ r.vectors[:, i] - r.values[i] * r.vectors[:, i]) <= 1e-8 * max(fro, 1e-12)


def test_sym_eig_rejects_asymmetric():
    with pytest.raises(ValueError, match="symmetric"):
        sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_sym_eig_matches_lapack(rng):
    m = rng.standard_normal((12, 12))
    a = m @ m.T
    assert np.allclose(sym_eig(a).values, np.linalg.eigvalsh(a)[::-1], rtol=1e-11, atol=1e-11)


def test_thin_svd_diag():
    m = np.zeros((5, 3))
    m[[0, 1, 2], [0, 1, 2]] = [3.0, 2.0, 1.0]
    assert np.allclose(thin_svd(m).S, [3.0, 2.0, 1.0], atol=1e-14)


def test_thin_svd_duplicate_column(rng):
    m = rng.random((10, 3))
    m[:, 2] = m[:, 0]
    svd = thin_svd(m)
    assert svd.S[-1] == 0.0 and svd.rank == 2
    assert np.allclose(svd.U[:, 2], 0.0)


def test_thin_svd_reconstruction(rng):
    m = rng.standard_normal((20, 6))
    u, s, v = thin_svd(m)
    assert np.linalg.norm(m - u @ np.diag(s) @ v.T) / np.linalg.norm(m) < 1e-9
    assert np.max(np.abs(u.T @ u - np.eye(6))) < 1e-10
    assert np.max(np.abs(v.T @ v - np.eye(6))) < 1e-10


@given(arrays(np.float64, (15, 5), elements=st.floats(-5, 5)))
def test_thin_svd_matches_gram_eig(m):
    s = thin_svd(m).S
    ref = np.sqrt(np.clip(sym_eig(m.T @ m).values, 0, None))
    r = thin_svd(m).rank
    assert np.allclose(s[:r], ref[:r], rtol=1e-9, atol=0)


def test_thin_svd_shape_errors():
    with pytest.raises(ValueError):
        thin_svd(np.zeros((3, 5)))


def test_singular_values_wide(rng):
    m = rng.standard_normal((4, 9))
    assert np.allclose(singular_values(m), np.linalg.svd(m, compute_uv=False), rtol=1e-10)
