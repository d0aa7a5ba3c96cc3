import numpy as np
import pytest

from shellvk.geometry import make_surface, mesh_surface
from shellvk.kinematics import (
    a_squared_tan,
    axial_to_matrix,
    bending_strain,
    cross_matrix,
    finite_strain_space,
    get_operators,
    isometry_space,
    project_finite_strain,
    rigid_fields,
    rotation_field,
    rotation_residual,
    stretching_strain,
    sym_components,
)
from shellvk.material import Material

RNG = np.random.default_rng(11)


def plate_mesh(res=8):
    return mesh_surface(make_surface("plate"), res)


def cylinder_mesh(res=8):
    s = make_surface("cylinder_patch", {"radius": 1.0, "sweep": np.pi / 2})
    return mesh_surface(s, res)


def cap_mesh(res=8):
    s = make_surface("spherical_cap", {"radius": 1.0, "extent": 0.35})
    return mesh_surface(s, res)


def nodal(mesh, fn):
    """Nodal field from a function of the parameter coordinates."""
    return np.array([fn(xi) for xi in mesh.nodes_xi])


def strain_norm(mesh, V):
    ops = get_operators(mesh)
    s = (ops.strain @ V.reshape(-1)).reshape(-1, 3)
    return np.sqrt(
        np.sum(mesh.w * (s[:, 0] ** 2 + s[:, 1] ** 2 + 2 * s[:, 2] ** 2))
    )


class TestRotationField:
    @pytest.mark.parametrize("mesh_fn", [plate_mesh, cylinder_mesh, cap_mesh])
    def test_rigid_fields_give_constant_rotation(self, mesh_fn):
        mesh = mesh_fn(6)
        W = cross_matrix(np.array([0.3, -1.1, 0.7]))
        V = mesh.node_x @ W.T + np.array([0.1, 0.2, -0.3])
        a = rotation_field(mesh, V)
        assert np.allclose(a, [0.3, -1.1, 0.7], atol=1e-12)
        assert np.max(rotation_residual(mesh, V)) < 1e-12

    def test_plate_normal_displacement_formula(self):
        # V = (0,0,w): A = [[0,0,-w_1],[0,0,-w_2],[w_1,w_2,0]]
        mesh = plate_mesh(16)
        w = nodal(mesh, lambda xi: 0.5 * xi[0] ** 2 + 0.25 * xi[0] * xi[1])
        V = np.zeros((mesh.n_nodes, 3))
        V[:, 2] = w
        a = rotation_field(mesh, V)
        # axial = (w_2, -w_1, 0); exact derivative of the interpolant at qps
        g = mesh.tangential_gradient(w)
        assert np.allclose(a[:, 0], g[:, 0, 1], atol=1e-12)
        assert np.allclose(a[:, 1], -g[:, 0, 0], atol=1e-12)
        assert np.allclose(a[:, 2], 0.0, atol=1e-12)
        A = axial_to_matrix(a[0])
        assert A[0, 2] == pytest.approx(-g[0, 0, 0])
        assert A[2, 0] == pytest.approx(g[0, 0, 0])

    def test_identity_field_least_squares_zero(self):
        # V = x is pure stretch: the skew fit vanishes, the residual is the
        # Frobenius norm of the (identity) symmetric strain
        mesh = plate_mesh(6)
        V = mesh.node_x.copy()
        a = rotation_field(mesh, V)
        assert np.max(np.abs(a)) < 1e-12
        res = rotation_residual(mesh, V)
        assert np.allclose(res, np.sqrt(2.0), atol=1e-12)


class TestIsometrySpace:
    def test_plate_dimension(self):
        mesh = plate_mesh(5)
        basis = isometry_space(mesh)
        # 3 in-plane rigid motions plus every pure-normal nodal field
        assert basis.dim == mesh.n_nodes + 3
        assert basis.dim >= 25

    def test_sphere_cap_near_rigid(self):
        # the closed sphere is infinitesimally rigid; a cap with free
        # boundary is bendable, and this discretization resolves exactly one
        # bending beyond the 6 rigid fields (checked stable across meshes)
        mesh = cap_mesh(8)
        basis = isometry_space(mesh, tol_iso=1e-7)
        assert basis.n_rigid == 6
        assert basis.dim == 7
        # the under-resolved bending family sits orders of magnitude higher
        above = basis.singular_values[basis.dim] / basis.sigma_max
        assert above > 1e-6

    @pytest.mark.parametrize("mesh_fn", [plate_mesh, cylinder_mesh, cap_mesh])
    def test_rigid_fields_in_null_space(self, mesh_fn):
        mesh = mesh_fn(5)
        R = rigid_fields(mesh)
        for k in range(6):
            assert strain_norm(mesh, R[:, k].reshape(-1, 3)) < 1e-12

    def test_basis_orthonormal(self):
        mesh = plate_mesh(4)
        basis = isometry_space(mesh)
        G = basis.basis.T @ basis.basis
        assert np.allclose(G, np.eye(basis.dim), atol=1e-10)

    def test_member_fields_have_small_strain(self):
        mesh = cylinder_mesh(6)
        basis = isometry_space(mesh)
        coeffs = RNG.standard_normal(basis.dim)
        V = basis.nodal(coeffs)
        norm_v = np.linalg.norm(V)
        assert strain_norm(mesh, V) <= 10 * basis.tol_iso * basis.sigma_max * norm_v


class TestBendingStrain:
    @pytest.mark.parametrize("mesh_fn", [plate_mesh, cylinder_mesh, cap_mesh])
    def test_rigid_motion_nullity(self, mesh_fn):
        mesh = mesh_fn(6)
        W = cross_matrix(np.array([0.5, 0.2, -0.4]))
        V = mesh.node_x @ W.T + np.array([1.0, -2.0, 0.5])
        b = bending_strain(mesh, V)
        assert np.max(np.abs(b)) < 1e-12

    def test_plate_quadratic_bending(self):
        # w = x1^2 gives curvature change diag(-2, 0) exactly on uniform grids
        mesh = plate_mesh(8)
        V = np.zeros((mesh.n_nodes, 3))
        V[:, 2] = mesh.nodes_xi[:, 0] ** 2
        b = bending_strain(mesh, V)
        ref = np.array([[-2.0, 0.0], [0.0, 0.0]])
        assert np.max(np.abs(b - ref)) < 1e-10

    def test_plate_reduction_convergence(self):
        # bending of (0,0,w) approaches -hess(w) at second order in L2
        def hess_err(res):
            mesh = plate_mesh(res)
            V = np.zeros((mesh.n_nodes, 3))
            V[:, 2] = np.sin(np.pi * mesh.nodes_xi[:, 0]) * np.sin(
                np.pi * mesh.nodes_xi[:, 1]
            )
            b = bending_strain(mesh, V)
            x = mesh.qp_xi
            s1, s2 = np.sin(np.pi * x[:, 0]), np.sin(np.pi * x[:, 1])
            c1, c2 = np.cos(np.pi * x[:, 0]), np.cos(np.pi * x[:, 1])
            H = np.empty_like(b)
            H[:, 0, 0] = -np.pi**2 * s1 * s2
            H[:, 1, 1] = -np.pi**2 * s1 * s2
            H[:, 0, 1] = H[:, 1, 0] = np.pi**2 * c1 * c2
            diff = b + H
            return np.sqrt(np.sum(mesh.w * np.sum(diff * diff, axis=(1, 2))))

        e1, e2, e3 = hess_err(8), hess_err(16), hess_err(32)
        assert np.log2(e1 / e2) > 1.6
        assert np.log2(e2 / e3) > 1.6

    def test_linearity_in_v(self):
        mesh = cylinder_mesh(5)
        V1 = RNG.standard_normal((mesh.n_nodes, 3))
        V2 = RNG.standard_normal((mesh.n_nodes, 3))
        b = bending_strain(mesh, 2.0 * V1 - 0.5 * V2)
        assert np.allclose(
            b,
            2.0 * bending_strain(mesh, V1) - 0.5 * bending_strain(mesh, V2),
            atol=1e-10,
        )


class TestStretchingStrain:
    def test_kappa_zero_returns_b(self):
        mesh = plate_mesh(4)
        basis = finite_strain_space(mesh, Material("biot", 1.0, 1.0))
        w = RNG.standard_normal(3 * mesh.n_nodes)
        V = RNG.standard_normal((mesh.n_nodes, 3))
        s = stretching_strain(mesh, w, V, 0.0)
        assert np.allclose(s, basis.strain_of(w), atol=1e-14)

    def test_plate_gradient_outer_product(self):
        # V=(0,0,w), B=0, kappa=1: stretching = +(1/2) grad w (x) grad w
        mesh = plate_mesh(10)
        w = nodal(mesh, lambda xi: 0.3 * xi[0] + 0.1 * xi[1] + 0.2 * xi[0] * xi[1])
        V = np.zeros((mesh.n_nodes, 3))
        V[:, 2] = w
        s = stretching_strain(mesh, None, V, 1.0)
        g = mesh.tangential_gradient(w)[:, 0, :]
        ref = 0.5 * np.einsum("mi,mj->mij", g, g)
        assert np.max(np.abs(s - ref)) < 1e-12

    def test_b_equals_sym_gradient(self):
        mesh = cylinder_mesh(6)
        basis = finite_strain_space(mesh, Material("biot", 1.0, 0.5))
        w = RNG.standard_normal((mesh.n_nodes, 3))
        s = stretching_strain(mesh, w.reshape(-1), np.zeros_like(w), 1.0)
        ops = get_operators(mesh)
        comp = (ops.strain @ w.reshape(-1)).reshape(-1, 3)
        assert np.allclose(sym_components(s), comp, atol=1e-13)

    def test_quadratic_in_v(self):
        mesh = plate_mesh(5)
        V = RNG.standard_normal((mesh.n_nodes, 3))
        s1 = stretching_strain(mesh, None, V, 1.0)
        s2 = stretching_strain(mesh, None, 2.0 * V, 1.0)
        assert np.allclose(s2, 4.0 * s1, atol=1e-11)


class TestFiniteStrainProjection:
    def test_projection_idempotent_on_range(self):
        mesh = plate_mesh(6)
        basis = finite_strain_space(mesh, Material("biot", 1.0, 1.0))
        w = RNG.standard_normal(3 * mesh.n_nodes)
        M = basis.strain_of(w)
        w2 = project_finite_strain(basis, M)
        assert np.max(np.abs(basis.strain_of(w2) - M)) < 1e-10

    def test_residual_orthogonal_to_range(self):
        mesh = cylinder_mesh(6)
        basis = finite_strain_space(mesh, Material("biot", 1.0, 0.7))
        M = RNG.standard_normal((mesh.n_qp, 2, 2))
        M = 0.5 * (M + np.swapaxes(M, 1, 2))
        w = project_finite_strain(basis, M)
        resid_pair = basis.pair(basis.strain_of(w) - M)
        # pairing against every generator vanishes up to the Gram scale
        scale = basis.evals[-1] * np.linalg.norm(M)
        assert np.linalg.norm(resid_pair) < 1e-10 * max(scale, 1.0)

    def test_dense_solve_oracle(self):
        # dense least-squares on the assembled strain matrix
        mesh = plate_mesh(4)
        m = Material("biot", 1.0, 1.0)
        basis = finite_strain_space(mesh, m)
        x = mesh.qp_xi
        M = np.zeros((mesh.n_qp, 2, 2))
        g = 2 * np.pi * np.cos(2 * np.pi * x[:, 0])
        M[:, 0, 0] = g * g
        w = project_finite_strain(basis, M)
        proj = sym_components(basis.strain_of(w))

        ops = get_operators(mesh)
        S = ops.strain.toarray()
        Wh = np.zeros((3 * mesh.n_qp, 3 * mesh.n_qp))
        from shellvk.kinematics import l2_weight_diag
        from shellvk.material import QuadraticForms

        Wh = l2_weight_diag(mesh, QuadraticForms(m)).toarray()
        L = np.linalg.cholesky(Wh + 1e-15 * np.eye(Wh.shape[0]))
        target = sym_components(M).reshape(-1)
        sol, *_ = np.linalg.lstsq(L.T @ S, L.T @ target, rcond=1e-10)
        ref = (S @ sol).reshape(-1, 3)
        assert np.max(np.abs(proj - ref)) < 1e-8

    def test_zero_for_orthogonal_field(self):
        # skew fields pair to zero against symmetric strains
        mesh = plate_mesh(5)
        basis = finite_strain_space(mesh, Material("biot", 1.0, 1.0))
        M = np.zeros((mesh.n_qp, 2, 2))
        M[:, 0, 1] = 1.0
        M[:, 1, 0] = -1.0
        w = project_finite_strain(basis, M)
        assert np.max(np.abs(basis.strain_of(w))) < 1e-12


class TestASquared:
    def test_plate_formula(self):
        mesh = plate_mesh(7)
        w = nodal(mesh, lambda xi: np.sin(xi[0]) * xi[1])
        V = np.zeros((mesh.n_nodes, 3))
        V[:, 2] = w
        g = mesh.tangential_gradient(w)[:, 0, :]
        ref = -np.einsum("mi,mj->mij", g, g)
        assert np.allclose(a_squared_tan(mesh, V), ref, atol=1e-12)
