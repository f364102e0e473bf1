import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gracias.defense import ImageBank, KernelBank, bank_from_kernels, sample_kernel
from gracias.grassmann import (
    BTTB_MAX_PIXELS,
    GrassmannPoint,
    bound_rhs,
    bttb_matrix,
    geodesic_distance,
    grassmann_from_bank,
    normalized_geodesic,
    orthonormal_point,
    pinv_sigma,
    principal_angles,
    sigma_min,
    spectral_norm,
    verify_bound,
)
from gracias.rng import Xoshiro256
from gracias.tensor import conv2d_same

E = np.eye(4)


def span(*cols):
    return GrassmannPoint(np.stack(cols, axis=1))


def random_point(rng, n, d):
    q, _ = np.linalg.qr(rng.standard_normal((n, d)))
    return GrassmannPoint(q)


def test_closed_form_angles():
    assert np.allclose(principal_angles(span(E[0], E[1]), span(E[0], E[1])).angles, 0.0)
    assert np.allclose(principal_angles(span(E[0], E[1]), span(E[2], E[3])).angles, math.pi / 2)
    ang = principal_angles(span(E[0]), span((E[0] + E[1]) / math.sqrt(2))).angles
    assert ang[0] == pytest.approx(math.pi / 4, abs=1e-14)
    assert geodesic_distance(span(E[0], E[1]), span(E[2], E[3])) == pytest.approx(math.sqrt(2) * math.pi / 2, abs=1e-12)
    assert normalized_geodesic(span(E[0], E[1]), span(E[2], E[3])) == pytest.approx(1.0, abs=1e-12)


def test_angles_match_scipy(rng):
    from scipy.linalg import subspace_angles

    for _ in range(20):
        a, b = random_point(rng, 30, 4), random_point(rng, 30, 4)
        ours = principal_angles(a, b).angles
        ref = np.sort(subspace_angles(a.basis, b.basis))
        assert np.max(np.abs(ours - ref)) < 1e-10


def test_small_angle_precision():
    t = 1e-9
    a = span(E[0])
    b = span(math.cos(t) * E[0] + math.sin(t) * E[1])
    assert principal_angles(a, b).angles[0] == pytest.approx(t, rel=1e-6)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        principal_angles(span(E[0]), span(E[0], E[1]))
    with pytest.raises(ValueError, match="orthonormal"):
        GrassmannPoint(np.ones((4, 2)))


@given(st.integers(0, 2**32), st.integers(1, 4))
def test_geodesic_properties(seed, d):
    rng = np.random.default_rng(seed)
    a, b, c = (random_point(rng, 12, d) for _ in range(3))
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    dab = geodesic_distance(a, b)
    assert abs(dab - geodesic_distance(b, a)) < 1e-12
    assert abs(dab - geodesic_distance(GrassmannPoint(a.basis @ q), b)) < 1e-10
    assert dab <= geodesic_distance(a, c) + geodesic_distance(c, b) + 1e-8
    assert geodesic_distance(a, a) < 1e-10
    ang = principal_angles(a, b).angles
    assert np.all(ang >= 0) and np.all(ang <= math.pi / 2 + 1e-10) and np.all(np.diff(ang) >= 0)
    assert 0.0 <= normalized_geodesic(a, b) <= 1.0 + 1e-12


def test_grassmann_from_bank(rng):
    bank = ImageBank(np.stack([E[0], E[1]], axis=1), (4, 1, 1))
    p = grassmann_from_bank(bank, 2)
    assert geodesic_distance(p, span(E[0], E[1])) < 1e-10
    m = rng.random((40, 6))
    p = grassmann_from_bank(ImageBank(m, (40, 1, 1)), 6)
    assert np.max(np.abs(p.basis @ (p.basis.T @ m) - m)) < 1e-8
    assert np.max(np.abs(p.basis.T @ p.basis - np.eye(6))) < 1e-10
    with pytest.raises(ValueError, match="rank"):
        grassmann_from_bank(ImageBank(np.stack([E[0], E[0]], axis=1), (4, 1, 1)), 2)


def test_grassmann_centered_option(rng):
    m = rng.random((20, 5))
    c = grassmann_from_bank(ImageBank(m, (20, 1, 1)), 3, centered=True)
    centered = m - m.mean(axis=1, keepdims=True)
    u = np.linalg.svd(centered)[0][:, :3]
    assert geodesic_distance(c, GrassmannPoint(u)) < 1e-8


def test_bttb_delta_and_oracle(rng):
    delta = np.zeros((3, 3))
    delta[1, 1] = 1.0
    assert np.array_equal(bttb_matrix(delta, (6, 5)), np.eye(30))
    h = rng.random((3, 3))
    H = bttb_matrix(h, (8, 8))
    for _ in range(10):
        x = rng.random((8, 8, 1))
        assert np.max(np.abs(H @ x.ravel() - conv2d_same(x, h).ravel())) < 1e-12
    # block Toeplitz with Toeplitz blocks
    blocks = H.reshape(8, 8, 8, 8).transpose(0, 2, 1, 3)
    assert np.array_equal(blocks[1, 2], blocks[3, 4])
    assert np.array_equal(blocks[2, 2][1:, 1:], blocks[2, 2][:-1, :-1])


def test_bttb_full_rank_and_cap():
    H = bttb_matrix(np.full((3, 3), 1.0 / 9.0), (8, 8))
    assert np.linalg.svd(H, compute_uv=False).min() > 0
    with pytest.raises(ValueError, match="cap"):
        bttb_matrix(np.ones((3, 3)), (65, 64))
    assert BTTB_MAX_PIXELS == 4096


def test_sigma_min(rng):
    q, _ = np.linalg.qr(rng.standard_normal((10, 4)))
    assert sigma_min(q) == pytest.approx(1.0, abs=1e-12)
    dup = rng.random((10, 3))
    dup[:, 1] = dup[:, 0]
    assert sigma_min(dup) == 0.0
    assert pinv_sigma(dup) > 0
    m = rng.random((20, 5))
    assert sigma_min(m) == pytest.approx(np.sqrt(np.linalg.eigvalsh(m.T @ m)[0]), rel=1e-9)
    assert spectral_norm(m) == pytest.approx(np.linalg.norm(m, 2), rel=1e-12)


def _setup(rng):
    x = rng.random((8, 8, 1))
    kernels = KernelBank(np.stack([sample_kernel(3, Xoshiro256(i)) for i in range(12)]))
    return bank_from_kernels(x, kernels), kernels


def test_bound_rhs_homogeneous(rng):
    bank, kernels = _setup(rng)
    delta = rng.uniform(-1, 1, (8, 8, 1)) * 8 / 255
    assert bound_rhs(bank, kernels, np.zeros((8, 8, 1))).squared == 0.0
    a = bound_rhs(bank, kernels, delta)
    b = bound_rhs(bank, kernels, 3.0 * delta)
    assert b.squared == pytest.approx(9.0 * a.squared, rel=1e-12)
    assert a.literal == pytest.approx(a.squared * a.sigma, rel=1e-12)
    # k = 12 > 9 kernel weights: rank at most 9, sigma is the smallest non-zero one
    assert not a.full_rank and a.sigma > 0


def test_bound_rhs_degenerate():
    bank = ImageBank(np.zeros((64, 12)), (8, 8, 1))
    kernels = KernelBank(np.stack([sample_kernel(3, Xoshiro256(i)) for i in range(12)]))
    t = bound_rhs(bank, kernels, np.ones((8, 8, 1)))
    assert t.degenerate and math.isinf(t.squared)


def test_operator_inequality(rng):
    bank, kernels = _setup(rng)
    delta = rng.uniform(-1, 1, (8, 8, 1))
    dx = bank_from_kernels(delta, kernels).matrix
    t = bound_rhs(bank, kernels, delta)
    assert np.sum(dx * dx) <= t.kernel_norm_sq * t.delta_sq * (1 + 1e-12)


def test_verify_bound_small():
    geo = {"height": 8, "width": 8, "channels": 1, "k": 12, "kernel_size": 3}
    empty = verify_bound(0, geo, 8 / 255)
    assert empty.trials == 0 and empty.mean_lhs is None
    zero = verify_bound(5, geo, 0.0, seed=3)
    assert all(r.lhs < 1e-20 for r in zero.records)
    rep = verify_bound(20, geo, 8 / 255, seed=1)
    assert rep.violations_squared == 0 and rep.operator_violations == 0
    assert rep.to_dict()["trials"] == 20 and "records" not in rep.to_dict()


def test_orthonormal_point(rng):
    m = rng.random((9, 3))
    p = orthonormal_point(m)
    assert np.max(np.abs(p.basis @ (p.basis.T @ m) - m)) < 1e-10
