"""Assembly and solution of the 2D limit models on a midsurface mesh.

The energy of a state (V, B, Qbar) is

    1/2 int q2(B - kappa/2 (A^2)_tan) + 1/24 int q2(curvature change)
        - int f . Qbar V,

with B eliminated exactly through the weighted projection of
(kappa/2)(A^2)_tan onto the finite-strain range whenever the solver runs.
For kappa = 0 the stretching term and the B unknown are dropped and the
problem is linear.

The solver optimizes over a gauge-fixed subspace of the discrete isometry
space: rigid fields are removed (translations are exactly neutral, the
rotational freedom is the business of the torque constraint), and so are
discrete bending mechanisms, i.e. isometry directions annihilated by the
recovered curvature operator (checkerboard-type artifacts that would make
the kappa = 0 problem unbounded).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from . import kinematics as kin
from .material import QuadraticForms

MECH_RTOL = 1e-12  # relative bending-stiffness eigenvalue below which an
# isometry direction counts as a discrete mechanism


@dataclass(eq=False)
class ForceField:
    """Surface force density with its quadrature moments."""

    mesh: object
    nodal: np.ndarray
    qp: np.ndarray = field(default=None, repr=False)
    mean: np.ndarray = field(default=None)
    moment: np.ndarray = field(default=None)  # B_f = int f x^T

    def __post_init__(self):
        if self.qp is None:
            self.qp = self.mesh.interpolate(self.nodal)
        w = self.mesh.w
        self.mean = np.einsum("q,qi->i", w, self.qp)
        self.moment = np.einsum("q,qi,qj->ij", w, self.qp, self.mesh.qp_x)

    def rotated(self, R):
        return ForceField(self.mesh, self.nodal @ np.asarray(R).T)


def _subtract_zero_mean_and_torque(mesh, nodal, fix_torque):
    """Remove the constant and (optionally) torque-generating components."""
    f = ForceField(mesh, nodal)
    if not fix_torque:
        shift = f.mean / mesh.area
        return nodal - shift
    # unknowns: constant shift c and rotation coefficients d with
    # correction c + sum_k d_k W_k x; enforce zero mean and symmetric moment
    basis = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        basis.append(np.broadcast_to(e, (mesh.n_nodes, 3)).copy())
    for k in range(3):
        W = kin.cross_matrix(np.eye(3)[k])
        basis.append(mesh.node_x @ W.T)

    def constraints(ff):
        sk = 0.5 * (ff.moment - ff.moment.T)
        return np.concatenate(
            [ff.mean, [sk[2, 1], sk[0, 2], sk[1, 0]]]
        )

    M = np.column_stack([constraints(ForceField(mesh, b)) for b in basis])
    rhs = constraints(f)
    coef = np.linalg.solve(M, rhs)
    corrected = nodal - sum(c * b for c, b in zip(coef, basis))
    return corrected


def make_force(mesh, preset, amplitude=1.0):
    """Canonical zero-mean force presets on the parameter square."""
    xi = mesh.nodes_xi
    zeros = np.zeros((mesh.n_nodes, 3))
    fix_torque = False
    if preset == "zero":
        nodal = zeros
    elif preset == "cos-x":
        nodal = zeros.copy()
        nodal[:, 2] = amplitude * np.cos(2 * np.pi * xi[:, 0])
    elif preset == "sin-x":
        nodal = zeros.copy()
        nodal[:, 2] = amplitude * np.sin(2 * np.pi * xi[:, 0])
    elif preset == "inplane-sin":
        nodal = zeros.copy()
        nodal[:, 0] = amplitude * np.sin(2 * np.pi * xi[:, 0])
    elif preset == "pressure":
        nodal = amplitude * np.cos(2 * np.pi * xi[:, 0])[:, None] * mesh.node_n
        fix_torque = True
    else:
        raise ValueError(f"unknown force preset '{preset}'")
    nodal = _subtract_zero_mean_and_torque(mesh, nodal, fix_torque)
    return ForceField(mesh, nodal)


def torque(f, Qbar):
    """Average torque int f x (Qbar x)."""
    Qx = f.mesh.qp_x @ np.asarray(Qbar).T
    return np.einsum("q,qi->i", f.mesh.w, np.cross(f.qp, Qx))


def moment_skew(f, Qbar):
    M = np.asarray(Qbar).T @ f.moment
    return 0.5 * (M - M.T)


def in_M(f, Qbar, tol=1e-8):
    """Whether Qbar satisfies the torque constraint skew(Qbar^T B_f) = 0."""
    return float(np.linalg.norm(moment_skew(f, Qbar))) <= tol


def admissible_direction(Qh, Bf, F, guard=1e-14):
    """Skew direction F corrected so that the torque pairing vanishes at Qh."""
    M = np.asarray(Qh).T @ np.asarray(Bf)
    D = 0.5 * (M - M.T)
    nD = np.linalg.norm(D)
    if nD < guard:
        return np.asarray(F, dtype=float).copy()
    return F - (np.sum(M * F) / nD**2) * D


def third_el_check(mesh, f, Qbar, V_nodal, F):
    """Quadrature of int f . Qbar F V; a diagnostic, not a pass/fail test."""
    Vq = mesh.interpolate(np.asarray(V_nodal, dtype=float))
    QF = np.asarray(Qbar) @ np.asarray(F)
    return float(np.einsum("q,qi->", mesh.w, f.qp * (Vq @ QF.T)))


@dataclass
class VKState:
    """Solution triple: isometry coefficients, strain generators, rotation."""

    v_coeffs: np.ndarray
    b_coeffs: np.ndarray | None
    qbar: np.ndarray
    kappa: float
    energy: float = np.nan
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        Q = np.asarray(self.qbar, dtype=float)
        if np.max(np.abs(Q.T @ Q - np.eye(3))) > 1e-12 or np.linalg.det(Q) < 0:
            raise ValueError("qbar must be a rotation")

    def to_dict(self):
        return {
            "v_coeffs": np.asarray(self.v_coeffs).tolist(),
            "b_coeffs": None
            if self.b_coeffs is None
            else np.asarray(self.b_coeffs).tolist(),
            "qbar": np.asarray(self.qbar).tolist(),
            "kappa": self.kappa,
            "energy": self.energy,
            "info": {
                k: v for k, v in self.info.items() if np.isscalar(v) or v is None
            },
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        return cls(
            v_coeffs=np.array(d["v_coeffs"]),
            b_coeffs=None if d["b_coeffs"] is None else np.array(d["b_coeffs"]),
            qbar=np.array(d["qbar"]),
            kappa=d["kappa"],
            energy=d.get("energy", np.nan),
            info=d.get("info", {}),
        )


@dataclass
class StressMoments:
    """Zeroth and first thickness moments of the limit stress, per qp."""

    zeroth: np.ndarray  # l2(stretching strain)
    first: np.ndarray  # (h0/12) l2(curvature change)


class VKModel:
    """Mesh + material + discrete spaces, ready to assemble and solve."""

    def __init__(self, mesh, material, tol_iso=1e-8, mech_rtol=MECH_RTOL):
        self.mesh = mesh
        self.material = material
        self.forms = QuadraticForms(material)
        self.ops = kin.get_operators(mesh)
        self.iso = kin.isometry_space(mesh, tol_iso)
        self.strain_basis = kin.finite_strain_space(mesh, material)
        self._setup_solver_space(mech_rtol)

    # -- solver subspace ---------------------------------------------------
    def _setup_solver_space(self, mech_rtol):
        """Eigen-analysis of the reduced curvature stiffness.

        Directions with (numerically) zero q2-weighted bending energy are
        discrete mechanisms: the recovered curvature operator cannot see
        them, and with kappa = 0 they would make the energy unbounded. The
        solver works on the orthogonal complement, with coordinates scaled
        by the bending spectrum, which also makes the kappa = 0 stiffness
        diagonal.
        """
        free = self.iso.free
        bend_free = self._bend_columns(free)
        Kb = self._bend_quadratic_matrix(bend_free)
        evals, evecs = np.linalg.eigh(Kb)
        evals = np.maximum(evals, 0.0)
        top = evals[-1] if evals.size else 0.0
        keep = evals > mech_rtol * top
        self.n_mechanisms = int(np.sum(~keep))
        self.solver_basis = free @ evecs[:, keep]
        self.mechanism_basis = free @ evecs[:, ~keep]
        self.bend_eigenvalues = evals
        self.bend_diag = evals[keep]

    def _bend_quadratic_matrix(self, bend_cols):
        """Matrix of (1/24) int q2(sym bend . , sym bend .) doubled, i.e.
        the Hessian (1/12)-weighted stiffness, for dense column blocks."""
        mu, c = self.forms.mu, self.forms.trace_coeff
        b11 = bend_cols[0::4]
        b12 = 0.5 * (bend_cols[1::4] + bend_cols[2::4])
        b22 = bend_cols[3::4]
        w = self.mesh.w[:, None]
        tr = b11 + b22
        K = (
            b11.T @ (w * (2 * mu * b11 + c * tr))
            + b22.T @ (w * (2 * mu * b22 + c * tr))
            + b12.T @ (w * (4 * mu * b12))
        ) / 12.0
        return 0.5 * (K + K.T)

    def _bend_columns(self, cols, chunk=256):
        out = np.empty((self.ops.bend.shape[0], cols.shape[1]))
        for start in range(0, cols.shape[1], chunk):
            out[:, start : start + chunk] = (
                self.ops.bend @ cols[:, start : start + chunk]
            )
        return out

    # -- pointwise fields ---------------------------------------------------
    def strain_fields(self, V_nodal, b_coeffs, kappa, b_field=None):
        """(stretch components, bend 2x2, rotation axial) at the qps."""
        mesh = self.mesh
        if V_nodal is None:
            V_nodal = np.zeros((mesh.n_nodes, 3))
        flat = np.asarray(V_nodal, dtype=float).reshape(-1)
        a = (self.ops.rot_qp @ flat).reshape(-1, 3)
        bend = (self.ops.bend @ flat).reshape(-1, 2, 2)
        if b_field is not None:
            st = kin.sym_components(np.asarray(b_field))
        elif b_coeffs is not None:
            st = (self.ops.strain @ np.asarray(b_coeffs).reshape(-1)).reshape(-1, 3)
        else:
            st = np.zeros((mesh.n_qp, 3))
        if kappa:
            st = st - 0.5 * kappa * kin.sym_components(
                kin.a_squared_tan(mesh, None, axial=a)
            )
        return st, bend, a

    def _q2_of_components(self, comps):
        mu, c = self.forms.mu, self.forms.trace_coeff
        tr = comps[:, 0] + comps[:, 1]
        return (
            2 * mu * (comps[:, 0] ** 2 + comps[:, 1] ** 2 + 2 * comps[:, 2] ** 2)
            + c * tr * tr
        )

    def _l2_pair_coeffs(self, comps):
        """w-weighted l2(s) ready for pairing against strain components."""
        mu, c = self.forms.mu, self.forms.trace_coeff
        tr = comps[:, 0] + comps[:, 1]
        out = np.empty_like(comps)
        out[:, 0] = 2 * mu * comps[:, 0] + c * tr
        out[:, 1] = 2 * mu * comps[:, 1] + c * tr
        out[:, 2] = 4 * mu * comps[:, 2]
        return out * self.mesh.w[:, None]

    def energy_parts(self, V_nodal, b_coeffs, f, Qbar, kappa, b_field=None):
        st, bend, _ = self.strain_fields(V_nodal, b_coeffs, kappa, b_field)
        w = self.mesh.w
        stretch_e = 0.5 * np.sum(w * self._q2_of_components(st)) if kappa else 0.0
        bsym = kin.sym_components(bend)
        bend_e = np.sum(w * self._q2_of_components(bsym)) / 24.0
        Vq = self.mesh.interpolate(np.asarray(V_nodal, dtype=float))
        force_e = float(
            np.einsum("q,qi->", w, (f.qp @ np.asarray(Qbar)) * Vq)
        )
        return stretch_e, bend_e, force_e

    def gradient_nodal(self, V_nodal, b_coeffs, f, Qbar, kappa, b_field=None):
        """Gradient of the energy in the nodal displacement, flat (3N,)."""
        st, bend, a = self.strain_fields(V_nodal, b_coeffs, kappa, b_field)
        mesh = self.mesh
        grad = np.zeros(3 * mesh.n_nodes)

        bsym = kin.sym_components(bend)
        pair_b = self._l2_pair_coeffs(bsym)  # includes w
        # expand symmetric pairing to the 4-component bend layout
        full = np.empty((mesh.n_qp, 4))
        full[:, 0] = pair_b[:, 0]
        full[:, 3] = pair_b[:, 1]
        full[:, 1] = full[:, 2] = 0.5 * pair_b[:, 2]
        grad += (1.0 / 12.0) * (self.ops.bend.T @ full.reshape(-1))

        if kappa:
            L2st = kin.components_to_field(
                self._l2_pair_coeffs(st) / mesh.w[:, None]
            )
            # adjust the off-diagonal doubling back to matrix form
            L2st[:, 0, 1] = L2st[:, 1, 0] = 0.5 * L2st[:, 0, 1]
            taus = (mesh.itau1, mesh.itau2)
            A = kin.cross_matrix(a)
            g = np.zeros((mesh.n_qp, 3))
            for j in range(2):
                qj = np.zeros((mesh.n_qp, 3))
                for i in range(2):
                    qj += L2st[:, i, j][:, None] * np.einsum(
                        "qik,qk->qi", A, taus[i]
                    )
                g += np.cross(taus[j], qj)
            grad += kappa * (self.ops.rot_qp.T @ (mesh.w[:, None] * g).reshape(-1))

        fq = f.qp @ np.asarray(Qbar)
        grad -= kin._component_interp(mesh, 3).T @ (
            (mesh.w[:, None] * fq).reshape(-1)
        )
        return grad

    # -- residuals -----------------------------------------------------------
    def el1_residual(self, state_or_V, b_coeffs=None, kappa=None, b_field=None):
        if isinstance(state_or_V, VKState):
            st = state_or_V
            V = self.iso.nodal(st.v_coeffs)
            b_coeffs, kappa = st.b_coeffs, st.kappa
        else:
            V = state_or_V
        stc, _, _ = self.strain_fields(V, b_coeffs, kappa, b_field)
        return self.ops.strain.T @ self._l2_pair_coeffs(stc).reshape(-1)

    def el2_residual(self, state, f, b_field=None):
        V = self.iso.nodal(state.v_coeffs)
        grad = self.gradient_nodal(
            V, state.b_coeffs, f, state.qbar, state.kappa, b_field
        )
        return self.iso.basis.T @ grad

    def el2_residual_nodal(self, V_nodal, b_field, f, Qbar, kappa):
        grad = self.gradient_nodal(
            V_nodal, None, f, Qbar, kappa, b_field=b_field
        )
        return self.iso.basis.T @ grad

    def project_b(self, V_nodal, kappa):
        """Exact elimination of B: weighted projection of (kappa/2) A^2."""
        half = 0.5 * kappa * kin.a_squared_tan(self.mesh, V_nodal)
        return kin.project_finite_strain(self.strain_basis, half)

    def assemble_energy(self, state, f, b_field=None):
        V = self.iso.nodal(state.v_coeffs)
        se, be, fe = self.energy_parts(
            V, state.b_coeffs, f, state.qbar, state.kappa, b_field
        )
        return se + be - fe

    def stress_moments(self, state, h0):
        st, bend, _ = self.strain_fields(
            self.iso.nodal(state.v_coeffs), state.b_coeffs, state.kappa
        )
        from .material import l2

        zero = l2(self.material, kin.components_to_field(st))
        first = (h0 / 12.0) * l2(
            self.material, 0.5 * (bend + np.swapaxes(bend, 1, 2))
        )
        return StressMoments(zeroth=zero, first=first)

    def reconstruct_limit_strain(self, state, t, h0):
        """Affine-in-thickness limit strain at fiber coordinate t."""
        st, bend, _ = self.strain_fields(
            self.iso.nodal(state.v_coeffs), state.b_coeffs, state.kappa
        )
        return kin.components_to_field(st) + (t / h0) * bend


@dataclass
class SolveOptions:
    tol: float = 1e-9
    max_iter: int = 2000
    seed: int = 0
    hessian_probes: int = 4
    x0: np.ndarray | None = None


def solve_vk(model, f, Qbar=None, kappa=1.0, opts=None):
    """Minimize the reduced limit functional over the gauge-fixed space.

    B is eliminated through the exact projection, so el1 vanishes by
    construction; el2 is driven below opts.tol on the solver subspace.
    """
    opts = opts or SolveOptions()
    Qbar = np.eye(3) if Qbar is None else np.asarray(Qbar, dtype=float)
    if not in_M(f, Qbar):
        warnings.warn(
            "Qbar violates the torque constraint; the rotational force "
            "pairing does not vanish",
            stacklevel=2,
        )
    basis = model.solver_basis
    dim = basis.shape[1]
    # coordinates scaled by the bending spectrum: the curvature stiffness
    # becomes the identity, which keeps quasi-Newton iterations well
    # conditioned on fine meshes
    scale = 1.0 / np.sqrt(np.maximum(model.bend_diag, 1e-14))

    def split(v):
        V = (basis @ (scale * v)).reshape(-1, 3)
        b = model.project_b(V, kappa) if kappa else None
        return V, b

    def fun(v):
        V, b = split(v)
        se, be, fe = model.energy_parts(V, b, f, Qbar, kappa)
        e = se + be - fe
        g = scale * (basis.T @ model.gradient_nodal(V, b, f, Qbar, kappa))
        return e, g

    def unscaled_residual(v):
        V, b = split(v)
        return basis.T @ model.gradient_nodal(V, b, f, Qbar, kappa)

    x0 = np.zeros(dim) if opts.x0 is None else np.asarray(opts.x0, dtype=float)
    converged = True
    accepted = []
    if kappa == 0.0:
        # linear problem, diagonal in the scaled coordinates
        fq = f.qp @ Qbar
        rhs = basis.T @ (
            kin._component_interp(model.mesh, 3).T
            @ (model.mesh.w[:, None] * fq).reshape(-1)
        )
        v = (rhs / model.bend_diag) / scale
        iters = 1
        hess_signature = "positive-definite"
    else:

        def track(xk):
            V, b = split(xk)
            se, be, fe = model.energy_parts(V, b, f, Qbar, kappa)
            accepted.append(se + be - fe)

        result = scipy.optimize.minimize(
            fun,
            x0,
            jac=True,
            method="L-BFGS-B",
            callback=track,
            options={
                "gtol": 0.1 * opts.tol * float(np.min(scale)),
                "ftol": 0.0,
                "maxiter": opts.max_iter,
                "maxcor": 30,
            },
        )
        v = result.x
        iters = result.nit
        if np.linalg.norm(unscaled_residual(v), np.inf) > opts.tol:
            polished = scipy.optimize.minimize(
                fun,
                v,
                jac=True,
                method="Newton-CG",
                hessp=_fd_hessp(fun),
                options={"maxiter": 60, "xtol": 1e-14},
            )
            if polished.fun <= result.fun + 1e-15:
                v = polished.x
                iters += polished.nit
        hess_signature = _hessian_signature(fun, v, opts)

    V, b = split(v)
    se, be, fe = model.energy_parts(V, b, f, Qbar, kappa)
    energy = se + be - fe
    res = basis.T @ model.gradient_nodal(V, b, f, Qbar, kappa)
    if kappa:
        converged = np.linalg.norm(res, np.inf) <= opts.tol

    state = VKState(
        v_coeffs=model.iso.basis.T @ (basis @ (scale * v)),
        b_coeffs=b,
        qbar=Qbar,
        kappa=kappa,
        energy=float(energy),
    )
    el1 = (
        np.linalg.norm(model.el1_residual(V, b, kappa), np.inf) if kappa else 0.0
    )
    state.info = {
        "iterations": int(iters),
        "converged": bool(converged),
        "el1_inf": float(el1),
        "el2_solver_inf": float(np.linalg.norm(res, np.inf)),
        "hessian_signature": hess_signature,
        "energy_stretch": float(se),
        "energy_bend": float(be),
        "energy_force": float(fe),
        "n_mechanisms": model.n_mechanisms,
        "accepted_energies": [float(x) for x in accepted],
    }
    if not converged:
        warnings.warn(
            f"limit solver stopped at residual {state.info['el2_solver_inf']:.3e}"
            f" > tol {opts.tol}",
            stacklevel=2,
        )
    return state


def _fd_hessp(fun, eps=1e-7):
    def hessp(x, p):
        norm = np.linalg.norm(p)
        if norm == 0:
            return np.zeros_like(p)
        d = p / norm
        _, gp = fun(x + eps * d)
        _, gm = fun(x - eps * d)
        return norm * (gp - gm) / (2 * eps)

    return hessp


def _hessian_signature(fun, x, opts, eps=1e-6):
    rng = np.random.default_rng(opts.seed)
    negative = 0
    for _ in range(opts.hessian_probes):
        d = rng.standard_normal(x.shape)
        d /= np.linalg.norm(d)
        _, gp = fun(x + eps * d)
        _, gm = fun(x - eps * d)
        curv = np.dot(gp - gm, d) / (2 * eps)
        if curv < -1e-8 * max(1.0, abs(np.dot(gp, d))):
            negative += 1
    if negative:
        return f"indefinite ({negative}/{opts.hessian_probes} negative probes)"
    return "positive-semidefinite (probed)"
