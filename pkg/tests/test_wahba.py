import numpy as np
import pytest
from hypothesis import given, strategies as st

from varpose.geometry import exp_so3, hat3, principal_angle, random_rotation
from varpose.sensors import MeasurementSet
from varpose.wahba import (
    RankDeficient,
    WeightSpec,
    critical_rotations,
    epoch_terms,
    rotational_potential,
    s_Gamma,
    s_K,
    select_weights,
    wahba_value,
)

seeds = st.integers(0, 2**31 - 1)


def test_identity_reference_matrix():
    ctx = select_weights(np.eye(3))
    assert np.allclose(ctx.W, np.diag([3.0, 2.0, 1.0]), atol=1e-14)
    assert np.allclose(ctx.K, np.diag([3.0, 2.0, 1.0]), atol=1e-14)
    assert np.allclose(ctx.U_D, np.eye(3))


def test_scaled_identity_reference_matrix():
    ctx = select_weights(2 * np.eye(3))
    assert np.allclose(np.diag(ctx.W), [0.75, 0.5, 0.25], atol=1e-14)
    assert np.allclose(ctx.K, np.diag([3.0, 2.0, 1.0]), atol=1e-14)


@given(seeds)
def test_random_D_gives_prescribed_eigenvalues(seed):
    rng = np.random.default_rng(seed)
    D = rng.normal(size=(3, 5))
    ctx = select_weights(D)
    assert np.allclose(np.linalg.eigvalsh(ctx.K), [1.0, 2.0, 3.0], atol=1e-10)
    assert np.allclose(D @ ctx.W @ D.T, ctx.K, atol=1e-10)
    assert np.allclose(ctx.U_D @ ctx.Delta @ ctx.U_D.T, ctx.K, atol=1e-10)
    assert np.allclose(ctx.W, ctx.W.T) and np.linalg.eigvalsh(ctx.W).min() > 0
    assert np.linalg.det(ctx.U_D) == pytest.approx(1.0)


def test_rank_deficient_and_spec_validation():
    with pytest.raises(RankDeficient):
        select_weights(np.array([[1.0, 0, 2.0], [0, 1.0, 0], [0, 0, 0]]))
    with pytest.raises(RankDeficient):
        select_weights(np.eye(3)[:, :2])
    with pytest.raises(ValueError):
        WeightSpec((1.0, 2.0, 3.0))
    with pytest.raises(ValueError):
        WeightSpec((3.0, 2.0, 2.0))
    with pytest.raises(ValueError):
        WeightSpec(tail_weight=0.0)


def test_permutation_invariance(rng):
    D = rng.normal(size=(3, 6))
    K1 = select_weights(D).K
    K2 = select_weights(D[:, rng.permutation(6)]).K
    assert np.allclose(K1, K2, atol=1e-10)


def test_critical_rotations_identity_basis():
    C = critical_rotations(select_weights(np.eye(3)))
    expected = [np.eye(3), np.diag([1.0, -1, -1]), np.diag([-1.0, 1, -1]), np.diag([-1.0, -1, 1])]
    for a, b in zip(C, expected):
        assert np.allclose(a, b, atol=1e-14)
    for Q in C[1:]:
        assert principal_angle(Q) == pytest.approx(np.pi)


@given(seeds)
def test_gradient_vanishes_on_critical_set(seed):
    ctx = select_weights(np.random.default_rng(seed).normal(size=(3, 4)))
    for Q in critical_rotations(ctx):
        assert np.abs(np.linalg.det(Q) - 1) < 1e-12
        assert np.linalg.norm(s_K(Q, ctx.K)) < 1e-8


def test_wahba_value_examples(rng):
    K = np.diag([3.0, 2.0, 1.0])
    assert wahba_value(np.eye(3), K) == 0.0
    assert wahba_value(np.diag([1.0, -1, -1]), K) == pytest.approx(6.0)
    for _ in range(20):
        Q, U = random_rotation(rng), random_rotation(rng)
        assert wahba_value(U @ Q @ U.T, U @ K @ U.T) == pytest.approx(wahba_value(Q, K))


def test_wahba_value_bounds(rng):
    K = np.diag([3.0, 2.0, 1.0])
    vals = np.array([wahba_value(random_rotation(rng), K) for _ in range(20000)])
    assert vals.min() >= 0 and vals.max() <= 2 * (3 + 2) + 1e-12
    assert wahba_value(np.diag([-1.0, -1, 1]), K) == pytest.approx(10.0)


@given(seeds)
def test_s_K_is_directional_derivative(seed):
    rng = np.random.default_rng(seed)
    K = select_weights(rng.normal(size=(3, 4))).K
    Q = random_rotation(rng)
    S = rng.normal(size=3)
    h = 1e-6
    fd = (wahba_value(Q @ exp_so3(h * S), K) - wahba_value(Q @ exp_so3(-h * S), K)) / (2 * h)
    assert fd == pytest.approx(s_K(Q, K) @ S, abs=1e-6)


def test_s_K_zero_only_near_critical_set(rng):
    ctx = select_weights(rng.normal(size=(3, 4)))
    C = critical_rotations(ctx)
    for _ in range(10_000):
        Q = random_rotation(rng)
        if np.linalg.norm(s_K(Q, ctx.K)) < 1e-8:
            assert min(principal_angle(Q @ c.T) for c in C) < 1e-4


@given(seeds)
def test_s_Gamma_equals_s_K_noise_free(seed):
    rng = np.random.default_rng(seed)
    D = rng.normal(size=(3, 5))
    R, R_hat = random_rotation(rng), random_rotation(rng)
    L = R.T @ D
    ctx = select_weights(D)
    assert np.allclose(s_Gamma(R_hat, L, D, ctx.W), s_K(R @ R_hat.T, ctx.K), atol=1e-12)
    assert np.allclose(s_Gamma(R, L, D, ctx.W), 0, atol=1e-12)


def test_s_Gamma_is_gradient_of_potential(rng):
    D = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    R = random_rotation(rng)
    L = R.T @ D + 0.01 * rng.normal(size=(3, 3))
    W = select_weights(D).W
    for _ in range(10):
        R_hat, S = random_rotation(rng), rng.normal(size=3)
        h = 1e-6
        # perturbation on the left: R_hat -> exp(-h S^) R_hat
        fp = rotational_potential(exp_so3(-h * S) @ R_hat, L, D, W)
        fm = rotational_potential(exp_so3(h * S) @ R_hat, L, D, W)
        fd = (fp - fm) / (2 * h)
        g = s_Gamma(R_hat, L, D, W) @ S
        assert fd == pytest.approx(g, rel=1e-6, abs=1e-9)


def _epoch(D, L, kinds, p=None, a=None):
    p = np.zeros((0, 3)) if p is None else p
    a = np.zeros((0, 3)) if a is None else a
    return MeasurementSet(
        t=0.0, index=list(range(len(p))), a_m=a, p=p, D=D, L_m=L,
        kinds=kinds, pairs=[(0, 0)] * len(kinds), beta_count=kinds.count("inertial"),
    )


def test_epoch_terms_matches_direct_formulas(rng):
    R = random_rotation(rng)
    p = rng.normal(size=(4, 3))
    b = rng.normal(size=3)
    a = (p - b) @ R
    D = np.array([p[i] - p[j] for i in range(4) for j in range(i + 1, 4)]).T
    L = R.T @ D
    T = epoch_terms(_epoch(D, L, ["pair"] * 6, p, a))
    W = select_weights(D).W
    R_hat = random_rotation(rng)
    assert T.U0r(R_hat) == pytest.approx(rotational_potential(R_hat, L, D, W), rel=1e-10)
    assert np.allclose(T.S_Gamma(R_hat), s_Gamma(R_hat, L, D, W), atol=1e-12)
    assert T.U0r(R) == pytest.approx(0.0, abs=1e-10)


def test_epoch_terms_rank_deficient_fallback():
    d1, d2 = np.array([0, 0, -1.0]), np.array([0.0, 1.0, 0.0])
    D = np.stack([d1, 2 * d1, d2], axis=1)  # rank 2
    L = D.copy()
    prev = epoch_terms(_epoch(np.eye(3), np.eye(3), ["pair"] * 3))
    T = epoch_terms(_epoch(D, L, ["pair", "inertial", "inertial"]), previous=prev)
    assert not T.weighted
    assert np.array_equal(T.K, prev.K)
    assert np.allclose(T.Gamma, D[:, 1:] @ L[:, 1:].T)
    assert T.p_bar is None and np.array_equal(T.y(None), np.zeros(3))


def test_hat_convention_in_s_K():
    # small rotation by theta about e3: s_K is about theta (k1 + k2) e3
    K = np.diag([3.0, 2.0, 1.0])
    Q = exp_so3([0, 0, 1e-3])
    assert np.allclose(s_K(Q, K), [0, 0, 1e-3 * (3 + 2)], rtol=1e-5, atol=1e-12)
    assert np.allclose(K @ Q - Q.T @ K, hat3(s_K(Q, K)), atol=1e-15)
