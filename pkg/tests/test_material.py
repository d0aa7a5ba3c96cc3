import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shellvk.material import (
    Material,
    QuadraticForms,
    dist_to_rotations,
    empirical_gradient_constant,
    energy_density,
    l2,
    l3,
    q2_analytic,
    q2_relaxed,
    q3,
    stress,
)

RNG = np.random.default_rng(7)


def random_rotation(rng):
    A = rng.standard_normal((3, 3))
    Q, _ = np.linalg.qr(A)
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def fd_gradient(m, F, step=1e-6):
    """Independent central-difference oracle for DW."""
    out = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            Fp, Fm = F.copy(), F.copy()
            Fp[i, j] += step
            Fm[i, j] -= step
            out[i, j] = (energy_density(m, Fp) - energy_density(m, Fm)) / (2 * step)
    return out


def fd_hessian_quadratic(m, F, eps=1e-4):
    """Second-difference oracle for D^2 W(Id)(F, F)."""
    Wp = energy_density(m, np.eye(3) + eps * F)
    W0 = energy_density(m, np.eye(3))
    Wm = energy_density(m, np.eye(3) - eps * F)
    return (Wp - 2 * W0 + Wm) / (eps * eps)


def brute_force_q2(m, Ftan, lo=-3.0, hi=3.0, n=61):
    """Dense grid search over symmetric completions; upper bound oracle."""
    best = np.inf
    grid = np.linspace(lo, hi, n)
    F = np.zeros((3, 3))
    F[:2, :2] = Ftan
    for a in grid:
        for b in grid:
            for c in grid:
                F[0, 2] = F[2, 0] = a
                F[1, 2] = F[2, 1] = b
                F[2, 2] = c
                v = q3(m, F)
                if v < best:
                    best = v
    return best


class TestEnergyDensity:
    def test_identity_zero(self):
        for m in (Material("dist2", 1.0), Material("biot", 1.0, 1.0)):
            assert energy_density(m, np.eye(3)) == pytest.approx(0.0, abs=1e-14)

    def test_dist2_double_identity(self):
        m = Material("dist2", mu=1.0)
        assert energy_density(m, 2 * np.eye(3)) == pytest.approx(3.0, abs=1e-12)

    def test_biot_hand_value(self):
        # mu=1, lam=1, F = diag(1.1,1,1): 0.1^2 + 0.5*0.1^2 = 0.015
        m = Material("biot", mu=1.0, lam=1.0)
        F = np.diag([1.1, 1.0, 1.0])
        assert energy_density(m, F) == pytest.approx(0.015, abs=1e-13)

    def test_zero_on_rotations(self):
        m = Material("biot", 1.0, 0.5)
        for _ in range(50):
            assert energy_density(m, random_rotation(RNG)) < 1e-12

    def test_frame_indifference_sampled(self):
        m = Material("biot", 1.3, 0.7)
        for _ in range(200):
            F = np.eye(3) + 0.5 * RNG.standard_normal((3, 3))
            R = random_rotation(RNG)
            W1, W2 = energy_density(m, R @ F), energy_density(m, F)
            assert abs(W1 - W2) <= 1e-10 * (1 + abs(W2))

    def test_quadratic_lower_bound(self):
        m = Material("biot", mu=2.0, lam=1.5)
        for _ in range(200):
            F = np.eye(3) + 0.4 * RNG.standard_normal((3, 3))
            if np.linalg.det(F) <= 0:
                continue
            assert energy_density(m, F) >= m.mu * dist_to_rotations(F) ** 2 - 1e-12

    def test_continuous_across_orientation_flip(self):
        m = Material("dist2", 1.0)
        F = np.diag([1.0, 1.0, 1e-9])
        Fm = np.diag([1.0, 1.0, -1e-9])
        assert abs(energy_density(m, F) - energy_density(m, Fm)) < 1e-8

    def test_dist2_requires_zero_lam(self):
        with pytest.raises(ValueError):
            Material("dist2", 1.0, 0.5)

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_frame_indifference_property(self, seed):
        rng = np.random.default_rng(seed)
        m = Material("biot", 1.0, 1.0)
        F = np.eye(3) + rng.standard_normal((3, 3))
        R = random_rotation(rng)
        assert abs(energy_density(m, R @ F) - energy_density(m, F)) <= 1e-10 * (
            1 + energy_density(m, F)
        )


class TestStress:
    def test_zero_at_identity(self):
        m = Material("biot", 1.0, 1.0)
        assert np.max(np.abs(stress(m, np.eye(3)))) < 1e-9

    def test_dist2_hand_value(self):
        m = Material("dist2", 1.0)
        DW = stress(m, np.diag([2.0, 1.0, 1.0]))
        assert np.allclose(DW, np.diag([2.0, 0.0, 0.0]), atol=1e-9)

    def test_matches_fd(self):
        m = Material("biot", 1.0, 0.5)
        for _ in range(50):
            F = np.eye(3) + 0.4 * RNG.standard_normal((3, 3))
            s = np.linalg.svd(F, compute_uv=False)
            if s[1] - s[2] < 1e-4:
                continue
            DW = stress(m, F)
            ref = fd_gradient(m, F)
            denom = max(1.0, np.linalg.norm(ref))
            assert np.linalg.norm(DW - ref) / denom < 1e-5

    def test_stress_times_ft_symmetric(self):
        m = Material("biot", 2.0, 1.0)
        for _ in range(100):
            F = np.eye(3) + 0.5 * RNG.standard_normal((3, 3))
            if np.linalg.det(F) <= 0:
                continue
            S = stress(m, F) @ F.T
            assert np.max(np.abs(S - S.T)) < 1e-10 * max(1.0, np.max(np.abs(S)))

    def test_gradient_bound(self):
        m = Material("biot", 1.0, 1.0)
        C = m.gradient_bound
        F = np.eye(3) + 0.8 * RNG.standard_normal((500, 3, 3))
        d = dist_to_rotations(F)
        DW = stress(m, F)
        norms = np.linalg.norm(DW, axis=(1, 2))
        keep = d > 1e-8
        assert np.all(norms[keep] <= C * d[keep] * (1 + 1e-9))

    def test_batched_matches_loop(self):
        m = Material("biot", 1.0, 0.3)
        F = np.eye(3) + 0.3 * RNG.standard_normal((10, 3, 3))
        batch = stress(m, F)
        for k in range(10):
            assert np.allclose(batch[k], stress(m, F[k]), atol=1e-12)

    def test_empirical_constant_reported(self):
        m = Material("biot", 1.0, 1.0)
        c = empirical_gradient_constant(m, n_samples=500, seed=3)
        assert 0 < c <= m.gradient_bound


class TestQuadraticForms:
    def test_skew_gives_zero(self):
        m = Material("biot", 1.0, 1.0)
        H = np.array([[0.0, 1.0, -2.0], [-1.0, 0.0, 0.5], [2.0, -0.5, 0.0]])
        assert q3(m, H) == pytest.approx(0.0, abs=1e-14)
        assert np.max(np.abs(l3(m, H))) < 1e-14

    def test_q3_fd_oracle(self):
        # second differences of W at the identity
        m0 = Material("biot", 1.0, 0.0)
        m1 = Material("biot", 1.0, 1.0)
        assert fd_hessian_quadratic(m0, np.eye(3)) == pytest.approx(6.0, rel=1e-6)
        assert fd_hessian_quadratic(m1, np.eye(3)) == pytest.approx(15.0, rel=1e-6)
        assert q3(m0, np.eye(3)) == pytest.approx(6.0, abs=1e-12)
        assert q3(m1, np.eye(3)) == pytest.approx(15.0, abs=1e-12)
        for _ in range(20):
            F = RNG.standard_normal((3, 3))
            assert fd_hessian_quadratic(m1, F) == pytest.approx(
                q3(m1, F), rel=1e-5, abs=1e-8
            )

    def test_l3_reproduces_q3(self):
        m = Material("biot", 1.7, 0.4)
        for _ in range(20):
            F = RNG.standard_normal((3, 3))
            assert np.sum(l3(m, F) * F) == pytest.approx(q3(m, F), rel=1e-12)

    def test_operators_symmetric(self):
        m = Material("biot", 1.0, 2.0)
        for _ in range(20):
            F, G = RNG.standard_normal((3, 3)), RNG.standard_normal((3, 3))
            assert np.sum(l3(m, F) * G) == pytest.approx(
                np.sum(l3(m, G) * F), abs=1e-12
            )
            f, g = RNG.standard_normal((2, 2)), RNG.standard_normal((2, 2))
            assert np.sum(l2(m, f) * g) == pytest.approx(
                np.sum(l2(m, g) * f), abs=1e-12
            )

    def test_q2_positive_definite_on_symmetric(self):
        m = Material("biot", 1.0, 0.0)
        for _ in range(50):
            S = RNG.standard_normal((2, 2))
            S = 0.5 * (S + S.T)
            if np.linalg.norm(S) < 1e-12:
                continue
            assert q2_analytic(m, S) > 0


class TestRelaxation:
    def test_zero_minor(self):
        m = Material("biot", 1.0, 1.0)
        val, comp = q2_relaxed(m, np.zeros((2, 2)))
        assert val == pytest.approx(0.0, abs=1e-14)
        assert np.max(np.abs(comp)) < 1e-12

    def test_identity_minor_value(self):
        # mu=1, lam=1: relaxed value 2*2 + (2/3)*4 = 20/3
        m = Material("biot", 1.0, 1.0)
        val, comp = q2_relaxed(m, np.eye(2))
        assert val == pytest.approx(20.0 / 3.0, abs=1e-12)
        assert comp[0, 1] == pytest.approx(0.0, abs=1e-12)
        # grid search confirms no better completion exists
        assert brute_force_q2(m, np.eye(2), -1.0, 1.0, 41) >= val - 1e-6

    def test_shear_minor(self):
        m = Material("biot", 1.0, 0.0)
        F = np.array([[0.0, 1.0], [0.0, 0.0]])
        val, comp = q2_relaxed(m, F)
        assert val == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(comp[:, 2], 0.0, atol=1e-12)

    def test_traceless_diag(self):
        m = Material("biot", 1.0, 1.0)
        val, _ = q2_relaxed(m, np.diag([1.0, -1.0]))
        assert val == pytest.approx(4.0, abs=1e-12)
        assert q2_analytic(m, np.diag([1.0, -1.0])) == pytest.approx(4.0)

    def test_skew_minor_zero(self):
        m = Material("biot", 2.0, 0.5)
        F = np.array([[0.0, 1.0], [-1.0, 0.0]])
        assert q2_analytic(m, F) == pytest.approx(0.0, abs=1e-14)
        val, _ = q2_relaxed(m, F)
        assert val == pytest.approx(0.0, abs=1e-12)

    def test_relaxed_below_any_completion(self):
        m = Material("biot", 1.0, 0.7)
        for _ in range(50):
            Ftan = RNG.standard_normal((2, 2))
            val, _ = q2_relaxed(m, Ftan)
            F = np.zeros((3, 3))
            F[:2, :2] = Ftan
            F[2] = RNG.standard_normal(3)
            F[:, 2] += RNG.standard_normal(3)
            F[:2, :2] = Ftan
            assert val <= q3(m, F) + 1e-12

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_relaxed_equals_analytic(self, seed):
        rng = np.random.default_rng(seed)
        mu, lam = 0.5 + rng.random(), rng.random()
        m = Material("biot", mu, lam)
        Ftan = rng.standard_normal((2, 2))
        val, _ = q2_relaxed(m, Ftan)
        assert val == pytest.approx(q2_analytic(m, Ftan), abs=1e-10)

    def test_l2_reproduces_q2(self):
        m = Material("biot", 1.2, 0.9)
        for _ in range(20):
            F = RNG.standard_normal((2, 2))
            assert np.sum(l2(m, F) * F) == pytest.approx(
                q2_analytic(m, F), rel=1e-12
            )

    def test_forms_bundle(self):
        m = Material("biot", 1.0, 1.0)
        qf = QuadraticForms(m)
        assert qf.trace_coeff == pytest.approx(2.0 / 3.0)
        s = qf.l2_components(np.array([1.0]), np.array([2.0]), np.array([0.5]))
        ref = l2(m, np.array([[1.0, 0.5], [0.5, 2.0]]))
        assert s[0][0] == pytest.approx(ref[0, 0])
        assert s[1][0] == pytest.approx(ref[1, 1])
        assert s[2][0] == pytest.approx(ref[0, 1])
