"""Discrete function spaces and strain operators on a midsurface mesh.

Displacements are nodal vector fields with bilinear interpolation. The
pointwise rotation of a displacement is the least-squares skew matrix
matching its tangential derivatives; the space of (discrete) infinitesimal
isometries is the numerical null space of the symmetrized tangential strain
operator. Curvature-change (bending) strains differentiate the interpolated
rotation-times-normal field against the *discrete* shape operator, which
makes rigid motions exactly strain-free on curved meshes as well.

Nodal rotation values are recovered from element-center samples by local
least-squares patch fits; on uniform grids this reproduces derivatives of
quadratic fields exactly, boundary nodes included.

Flat DOF layout everywhere: a nodal field V of shape (n_nodes, 3) is the
vector V.reshape(-1), i.e. dof = 3 * node + component.
"""

from __future__ import annotations

import warnings
import weakref
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .material import QuadraticForms

GRAM_PINV_RTOL = 1e-10  # relative eigenvalue cutoff for rank-deficient Grams


def cross_matrix(v):
    """[v]_x with [v]_x w = v x w, batched over leading axes."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def axial_to_matrix(a):
    return cross_matrix(a)


def _blockdiag_3x3(blocks):
    """Block-diagonal sparse matrix from (n, 3, 3) blocks."""
    n = blocks.shape[0]
    base = 3 * np.arange(n)[:, None, None]
    rows = base + np.arange(3)[None, :, None] + np.zeros((1, 1, 3), int)
    cols = base + np.zeros((1, 3, 1), int) + np.arange(3)[None, None, :]
    return sp.csr_matrix(
        (blocks.reshape(-1), (rows.reshape(-1), cols.reshape(-1))),
        shape=(3 * n, 3 * n),
    )


def _component_interp(mesh, ncomp):
    """Interpolation matrix acting componentwise on nodal ncomp-vectors."""
    Nq = mesh.Nq.tocoo()
    rows = (ncomp * Nq.row[:, None] + np.arange(ncomp)).reshape(-1)
    cols = (ncomp * Nq.col[:, None] + np.arange(ncomp)).reshape(-1)
    vals = np.repeat(Nq.data, ncomp)
    return sp.csr_matrix(
        (vals, (rows, cols)),
        shape=(ncomp * Nq.shape[0], ncomp * Nq.shape[1]),
    )


def _block_coo(blocks, pt_nodes, n_pts, n_nodes):
    """Assemble (3*n_pts, 3*n_nodes) sparse from per-(point, node) 3x3 blocks.

    blocks: (n_pts, nen, 3, 3); pt_nodes: (n_pts, nen) node ids.
    """
    npts, nen = pt_nodes.shape
    rows = (3 * np.arange(npts))[:, None, None, None] + np.arange(3)[
        None, None, :, None
    ]
    cols = (3 * pt_nodes)[:, :, None, None] + np.arange(3)[None, None, None, :]
    rows = np.broadcast_to(rows, blocks.shape).reshape(-1)
    cols = np.broadcast_to(cols, blocks.shape).reshape(-1)
    return sp.csr_matrix(
        (blocks.reshape(-1), (rows, cols)), shape=(3 * npts, 3 * n_nodes)
    )


class KinematicOperators:
    """Sparse linear operators tied to one SurfaceMesh.

    rot_qp / rot_cen : nodal V -> rotation axial vector per point
    strain           : nodal V -> (s11, s22, s12) per quadrature point
    bend             : nodal V -> flattened 2x2 curvature-change per qp
    """

    def __init__(self, mesh):
        self.mesh = mesh
        E, nqpe = mesh.Dtan.shape[0], mesh.Dtan.shape[1]
        nq = E * nqpe
        N = mesh.n_nodes
        qp_nodes = mesh.elems[np.repeat(np.arange(E), nqpe)]  # (nq, 4)

        D = mesh.Dtan.reshape(nq, 4, 2)
        tau = (mesh.itau1, mesh.itau2)

        # --- symmetrized tangential strain -------------------------------
        rows, cols, vals = [], [], []
        comps = [
            (0, [(1.0, 0, 0)]),            # s11 = tau1 . dV/dtau1
            (1, [(1.0, 1, 1)]),            # s22
            (2, [(0.5, 0, 1), (0.5, 1, 0)]),  # s12 sym part
        ]
        for row_off, terms in comps:
            val = np.zeros((nq, 4, 3))
            for wgt, i_tau, j_dir in terms:
                val += wgt * D[:, :, j_dir][:, :, None] * tau[i_tau][:, None, :]
            rows.append(
                (3 * np.arange(nq) + row_off)[:, None, None]
                * np.ones((1, 4, 3), int)
            )
            cols.append(3 * qp_nodes[:, :, None] + np.arange(3)[None, None, :])
            vals.append(val)
        self.strain = sp.csr_matrix(
            (
                np.concatenate([v.reshape(-1) for v in vals]),
                (
                    np.concatenate([r.reshape(-1) for r in rows]),
                    np.concatenate([c.reshape(-1) for c in cols]),
                ),
            ),
            shape=(3 * nq, 3 * N),
        )

        # --- pointwise rotation (least-squares skew fit) ------------------
        def rotation_blocks(Dloc, tau1, tau2, Minv, pt_nodes):
            npts = Dloc.shape[0]
            K1 = Minv @ cross_matrix(tau1)
            K2 = Minv @ cross_matrix(tau2)
            blocks = (
                Dloc[:, :, 0][:, :, None, None] * K1[:, None, :, :]
                + Dloc[:, :, 1][:, :, None, None] * K2[:, None, :, :]
            )
            return _block_coo(blocks, pt_nodes, npts, N)

        self.rot_qp = rotation_blocks(D, mesh.itau1, mesh.itau2, mesh.Minv, qp_nodes)
        Dc = mesh.c_Dtan.reshape(E, 4, 2)
        self.rot_cen = rotation_blocks(
            Dc, mesh.c_itau1, mesh.c_itau2, mesh.c_Minv, mesh.elems
        )

        # --- curvature change: grad(A n) - A * (discrete shape operator) --
        # Rotation axials are recovered at nodes, A n is formed nodally and
        # differentiated at element centers (the superconvergent points for
        # bilinear gradients), and the directional derivatives are recovered
        # directly at the quadrature points by the same patch fits. The
        # discrete normal derivative enters both terms through the identical
        # chain, so rigid motions yield an exactly zero field.
        rec3 = sp.kron(mesh.rec, sp.eye(3), format="csr")
        recq3 = sp.kron(mesh.rec_qp, sp.eye(3), format="csr")
        recq6 = sp.kron(mesh.rec_qp, sp.eye(6), format="csr")
        eta_of_a = _blockdiag_3x3(-cross_matrix(mesh.node_n))
        nodal_a = rec3 @ self.rot_cen  # nodal V -> nodal rotation axial
        nodal_eta = eta_of_a @ nodal_a  # nodal V -> nodal A n

        # center samples of the two tangential direction derivatives of a
        # nodal 3-vector field, stacked (elem; direction j; component)
        Dc3 = mesh.c_Dtan.reshape(E, 4, 2)
        rows = (
            6 * np.arange(E)[:, None, None, None]
            + 3 * np.arange(2)[None, None, :, None]
            + np.arange(3)[None, None, None, :]
        )
        cols = (3 * mesh.elems)[:, :, None, None] + np.arange(3)[
            None, None, None, :
        ]
        vals = Dc3[:, :, :, None] * np.ones((1, 1, 1, 3))
        shape4 = (E, 4, 2, 3)
        grad_cen = sp.csr_matrix(
            (
                np.broadcast_to(vals, shape4).reshape(-1),
                (
                    np.broadcast_to(rows, shape4).reshape(-1),
                    np.broadcast_to(cols, shape4).reshape(-1),
                ),
            ),
            shape=(6 * E, 3 * N),
        )

        # recovered derivative samples of the interpolated normal at the qps
        pi_qp = (recq6 @ (grad_cen @ mesh.node_n.reshape(-1))).reshape(nq, 2, 3)

        # contract recovered 3-vector derivatives with the qp frames
        rows, cols, vals = [], [], []
        for i in range(2):
            for j in range(2):
                rows.append(
                    (4 * np.arange(nq) + 2 * i + j)[:, None]
                    + np.zeros((1, 3), int)
                )
                cols.append(6 * np.arange(nq)[:, None] + 3 * j + np.arange(3))
                vals.append(tau[i])
        frame_contract = sp.csr_matrix(
            (
                np.concatenate([v.reshape(-1) for v in vals]),
                (
                    np.concatenate([r.reshape(-1) for r in rows]),
                    np.concatenate([c.reshape(-1) for c in cols]),
                ),
            ),
            shape=(4 * nq, 6 * nq),
        )

        # (A pi_j) . tau_i at the qps, linear in the recovered axial there
        rows, cols, vals = [], [], []
        for i in range(2):
            for j in range(2):
                coeff = np.cross(pi_qp[:, j, :], tau[i])  # (nq, 3)
                rows.append(
                    (4 * np.arange(nq) + 2 * i + j)[:, None]
                    + np.zeros((1, 3), int)
                )
                cols.append(3 * np.arange(nq)[:, None] + np.arange(3))
                vals.append(coeff)
        pi_term = sp.csr_matrix(
            (
                np.concatenate([v.reshape(-1) for v in vals]),
                (
                    np.concatenate([r.reshape(-1) for r in rows]),
                    np.concatenate([c.reshape(-1) for c in cols]),
                ),
            ),
            shape=(4 * nq, 3 * nq),
        )

        self.bend = (
            frame_contract @ recq6 @ grad_cen @ nodal_eta
            - pi_term @ recq3 @ self.rot_cen
        ).tocsr()
        self.n_qp = nq


_OPERATOR_CACHE = weakref.WeakKeyDictionary()


def get_operators(mesh):
    ops = _OPERATOR_CACHE.get(mesh)
    if ops is None:
        ops = KinematicOperators(mesh)
        _OPERATOR_CACHE[mesh] = ops
    return ops


def rotation_field(mesh, V, at="qp"):
    """Axial vectors of the pointwise least-squares rotation of V."""
    ops = get_operators(mesh)
    op = ops.rot_qp if at == "qp" else ops.rot_cen
    return (op @ np.asarray(V, dtype=float).reshape(-1)).reshape(-1, 3)


def rotation_residual(mesh, V):
    """Pointwise mismatch |A tau_j - dV/dtau_j| of the skew fit, per qp."""
    a = rotation_field(mesh, V)
    g = mesh.tangential_gradient(np.asarray(V, dtype=float))
    r1 = np.cross(a, mesh.itau1) - g[:, :, 0]
    r2 = np.cross(a, mesh.itau2) - g[:, :, 1]
    return np.sqrt(np.sum(r1 * r1, -1) + np.sum(r2 * r2, -1))


def bending_strain(mesh, V):
    """(grad(A n) - A Pi)_tan per quadrature point, (nq, 2, 2)."""
    ops = get_operators(mesh)
    return (ops.bend @ np.asarray(V, dtype=float).reshape(-1)).reshape(-1, 2, 2)


def a_squared_tan(mesh, V, axial=None):
    """Tangential minor of A^2 per quadrature point (symmetric)."""
    a = rotation_field(mesh, V) if axial is None else axial
    p1 = np.sum(a * mesh.itau1, -1)
    p2 = np.sum(a * mesh.itau2, -1)
    nrm2 = np.sum(a * a, -1)
    out = np.empty((a.shape[0], 2, 2))
    out[:, 0, 0] = p1 * p1 - nrm2
    out[:, 1, 1] = p2 * p2 - nrm2
    out[:, 0, 1] = out[:, 1, 0] = p1 * p2
    return out


def sym_components(field):
    """(nq, 2, 2) -> symmetric components (nq, 3) ordered (11, 22, 12)."""
    return np.stack(
        [
            field[:, 0, 0],
            field[:, 1, 1],
            0.5 * (field[:, 0, 1] + field[:, 1, 0]),
        ],
        axis=-1,
    )


def components_to_field(comp):
    out = np.empty((comp.shape[0], 2, 2))
    out[:, 0, 0] = comp[:, 0]
    out[:, 1, 1] = comp[:, 1]
    out[:, 0, 1] = out[:, 1, 0] = comp[:, 2]
    return out


def rigid_fields(mesh):
    """The six nodal rigid fields W x + c, as columns (3N, 6)."""
    N = mesh.n_nodes
    out = np.zeros((3 * N, 6))
    for c in range(3):
        out[c::3, c] = 1.0
    for k in range(3):
        W = cross_matrix(np.eye(3)[k])
        out[:, 3 + k] = (mesh.node_x @ W.T).reshape(-1)
    return out


@dataclass(eq=False)
class IsometryBasis:
    """Orthonormal basis of the discrete infinitesimal-isometry space.

    Columns of `basis` span the numerical null space of the strain operator;
    the first six columns are the rigid fields, the remainder (`free`) is
    the gauge-fixed complement used by the solvers.
    """

    mesh: object
    basis: np.ndarray
    n_rigid: int
    sigma_max: float
    singular_values: np.ndarray
    tol_iso: float

    @property
    def dim(self):
        return self.basis.shape[1]

    @property
    def free(self):
        return self.basis[:, self.n_rigid :]

    @property
    def rigid(self):
        return self.basis[:, : self.n_rigid]

    def nodal(self, coeffs):
        return (self.basis @ coeffs).reshape(-1, 3)

    def nodal_free(self, coeffs):
        return (self.free @ coeffs).reshape(-1, 3)


def _strain_weight_diag(mesh):
    """Quadrature weights of the L2 norm on symmetric components."""
    w = np.repeat(mesh.w, 3)
    w[2::3] *= 2.0  # off-diagonal counts twice in the Frobenius norm
    return sp.diags(w)


def isometry_space(mesh, tol_iso=1e-8):
    """Null space of the symmetrized tangential strain, rigid fields first.

    Basis vectors are singular vectors with sigma <= tol_iso * sigma_max.
    """
    ops = get_operators(mesh)
    S = ops.strain
    Wd = _strain_weight_diag(mesh)
    K = (S.T @ Wd @ S).toarray()
    evals, evecs = np.linalg.eigh(K)
    evals = np.maximum(evals, 0.0)
    sigmas = np.sqrt(evals)
    sigma_max = sigmas[-1]
    # eigenvalues of the Gram carry O(eps * lam_max) noise, which would
    # swamp sigma thresholds near sqrt(eps); take generous candidates and
    # re-measure their strain norms directly
    cand = sigmas <= max(1e3 * tol_iso, 1e-6) * sigma_max
    Ucand = evecs[:, cand]
    resid = np.sqrt(
        np.maximum(np.sum((Wd @ (S @ Ucand)) * (S @ Ucand), axis=0), 0.0)
    )
    U0 = Ucand[:, resid <= tol_iso * sigma_max]
    sigmas = np.sort(np.concatenate([resid, sigmas[~cand]]))
    dim = U0.shape[1]
    if dim < 6:
        warnings.warn(
            f"isometry space dimension {dim} < 6; tol_iso={tol_iso} too tight",
            stacklevel=2,
        )
    R = rigid_fields(mesh)
    Qr, _ = np.linalg.qr(R)
    # complement of the rigid span inside the null space
    P = U0 - Qr @ (Qr.T @ U0)
    Uc, sc, _ = np.linalg.svd(P, full_matrices=False)
    free = Uc[:, sc > 0.5]
    basis = np.concatenate([Qr, free], axis=1)
    return IsometryBasis(
        mesh=mesh,
        basis=basis,
        n_rigid=6,
        sigma_max=float(sigma_max),
        singular_values=sigmas,
        tol_iso=tol_iso,
    )


@dataclass(eq=False)
class FiniteStrainBasis:
    """Range of w -> sym tangential gradient(w), with its weighted Gram.

    Coefficients are nodal generator fields w (flat 3N vectors); the basis
    is implicit through the strain operator. The Gram matrix (weighted by
    the relaxed elasticity form) is factored once; rank-deficiency is
    resolved by pseudo-inverse with a relative eigenvalue cutoff.
    """

    mesh: object
    forms: QuadraticForms
    evals: np.ndarray
    evecs: np.ndarray
    rank: int
    weight: sp.spmatrix = field(repr=False, default=None)

    def pinv_apply(self, rhs):
        lam = self.evals
        keep = lam > GRAM_PINV_RTOL * lam[-1]
        coeff = self.evecs[:, keep].T @ rhs
        return self.evecs[:, keep] @ (coeff / lam[keep])

    def strain_of(self, w_vec):
        ops = get_operators(self.mesh)
        return components_to_field(
            (ops.strain @ np.asarray(w_vec, dtype=float).reshape(-1)).reshape(-1, 3)
        )

    def pair(self, field2x2):
        """Pairing vector over generators: integral l2(field) : sym grad(w)."""
        ops = get_operators(self.mesh)
        comps = sym_components(np.asarray(field2x2))
        return ops.strain.T @ (self.weight @ comps.reshape(-1))


def l2_weight_diag(mesh, forms):
    """Block-diagonal weight of the pairing integral l2(F) : G by quadrature."""
    mu, c = forms.mu, forms.trace_coeff
    blk = np.array(
        [[2 * mu + c, c, 0.0], [c, 2 * mu + c, 0.0], [0.0, 0.0, 4 * mu]]
    )
    data = blk[None, :, :] * mesh.w[:, None, None]
    return _blockdiag_3x3(data)


def finite_strain_space(mesh, material):
    forms = QuadraticForms(material)
    ops = get_operators(mesh)
    Wl2 = l2_weight_diag(mesh, forms)
    G = (ops.strain.T @ Wl2 @ ops.strain).toarray()
    evals, evecs = np.linalg.eigh(G)
    evals = np.maximum(evals, 0.0)
    rank = int(np.sum(evals > GRAM_PINV_RTOL * evals[-1]))
    return FiniteStrainBasis(
        mesh=mesh, forms=forms, evals=evals, evecs=evecs, rank=rank, weight=Wl2
    )


def project_finite_strain(basis, field2x2):
    """Weighted projection of a 2x2 field onto the finite-strain range.

    Returns generator coefficients w with sym grad(w) closest to the field
    in the l2-weighted norm; the residual is Gram-orthogonal to the range.
    """
    rhs = basis.pair(field2x2)
    return basis.pinv_apply(rhs)


def stretching_strain(mesh, b_coeffs, V, kappa, strain_basis=None, axial=None):
    """B_tan - (kappa/2) (A^2)_tan per quadrature point.

    b_coeffs are generator coefficients (flat nodal field w); pass
    kappa = 0 to drop the rotation term.
    """
    ops = get_operators(mesh)
    B = (
        components_to_field(
            (ops.strain @ np.asarray(b_coeffs, dtype=float).reshape(-1)).reshape(
                -1, 3
            )
        )
        if b_coeffs is not None
        else np.zeros((ops.n_qp, 2, 2))
    )
    if kappa:
        B = B - 0.5 * kappa * a_squared_tan(mesh, V, axial=axial)
    return B
