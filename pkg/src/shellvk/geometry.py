"""Parametric midsurfaces, their differential geometry, and shell meshes.

A surface is a single chart over the unit parameter square. Meshes carry two
layers of geometric data:

* exact-chart quantities (tangents, frames, normal, shape operator, area
  weights) used for quadrature and for geometric invariants, and
* interpolated (isoparametric) quantities derived from the nodal positions
  and nodal normals, used by the kinematic operators so that rigid motions
  are annihilated exactly on curved meshes.

Extruded shell meshes use the exact normal-offset map x + t*n(x); their
quadrature weights carry the fiber Jacobian det(Id + t*Pi).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .elements import gauss_tensor, tensor_basis

_EPS_FD = 1e-5  # finite-difference step for graph-surface normals


@dataclass(frozen=True)
class Surface:
    """A parametric midsurface over the unit square.

    chart maps (m, 2) parameter points to (m, 3) positions; tangents returns
    the two chart derivatives as (m, 3, 2). Normals are unit length and the
    shape operator follows the convention grad(n), so the unit sphere with
    outward normal has Pi tau = tau.
    """

    kind: str
    params: dict
    chart: Callable[[np.ndarray], np.ndarray]
    tangents: Callable[[np.ndarray], np.ndarray]
    dnormal: Callable[[np.ndarray], np.ndarray] | None = None
    max_metric_cond: float = 1e8

    def normal(self, xi):
        t = self.tangents(np.atleast_2d(xi))
        n = np.cross(t[..., 0], t[..., 1])
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def dnormal_dxi(self, xi):
        """Chart derivatives of the unit normal, (m, 3, 2)."""
        xi = np.atleast_2d(xi)
        if self.dnormal is not None:
            return self.dnormal(xi)
        out = np.empty((xi.shape[0], 3, 2))
        for d in range(2):
            step = np.zeros(2)
            step[d] = _EPS_FD
            out[:, :, d] = (self.normal(xi + step) - self.normal(xi - step)) / (
                2 * _EPS_FD
            )
        return out


def _plate(params):
    lx = float(params.get("lx", 1.0))
    ly = float(params.get("ly", 1.0))

    def chart(xi):
        xi = np.atleast_2d(xi)
        return np.stack(
            [lx * xi[:, 0], ly * xi[:, 1], np.zeros(xi.shape[0])], axis=-1
        )

    def tangents(xi):
        xi = np.atleast_2d(xi)
        t = np.zeros((xi.shape[0], 3, 2))
        t[:, 0, 0] = lx
        t[:, 1, 1] = ly
        return t

    def dnormal(xi):
        xi = np.atleast_2d(xi)
        return np.zeros((xi.shape[0], 3, 2))

    return Surface("plate", {"lx": lx, "ly": ly}, chart, tangents, dnormal)


def _cylinder(params):
    R = float(params.get("radius", 1.0))
    sweep = float(params.get("sweep", np.pi / 2))
    height = float(params.get("height", 1.0))
    theta0 = float(params.get("theta0", -sweep / 2))
    if R <= 0:
        raise ValueError("cylinder radius must be positive")
    if not 0 < sweep < 2 * np.pi:
        raise ValueError("cylinder sweep must lie in (0, 2*pi)")
    if height <= 0:
        raise ValueError("cylinder height must be positive")

    def theta(xi):
        return theta0 + sweep * xi[:, 0]

    def chart(xi):
        xi = np.atleast_2d(xi)
        th = theta(xi)
        return np.stack(
            [R * np.cos(th), R * np.sin(th), height * xi[:, 1]], axis=-1
        )

    def tangents(xi):
        xi = np.atleast_2d(xi)
        th = theta(xi)
        t = np.zeros((xi.shape[0], 3, 2))
        t[:, 0, 0] = -R * sweep * np.sin(th)
        t[:, 1, 0] = R * sweep * np.cos(th)
        t[:, 2, 1] = height
        return t

    def dnormal(xi):
        # outward normal (cos, sin, 0); curvature 1/R along the hoop direction
        xi = np.atleast_2d(xi)
        th = theta(xi)
        d = np.zeros((xi.shape[0], 3, 2))
        d[:, 0, 0] = -sweep * np.sin(th)
        d[:, 1, 0] = sweep * np.cos(th)
        return d

    return Surface(
        "cylinder_patch",
        {"radius": R, "sweep": sweep, "height": height, "theta0": theta0},
        chart,
        tangents,
        dnormal,
    )


def _spherical_cap(params):
    R = float(params.get("radius", 1.0))
    extent = float(params.get("extent", R / 2))
    if R <= 0:
        raise ValueError("sphere radius must be positive")
    if not 0 < extent * np.sqrt(2.0) < R:
        raise ValueError("cap extent must satisfy extent*sqrt(2) < radius")

    def xy(xi):
        xi = np.atleast_2d(xi)
        return extent * (2 * xi[:, 0] - 1), extent * (2 * xi[:, 1] - 1)

    def chart(xi):
        x, y = xy(xi)
        z = np.sqrt(R * R - x * x - y * y)
        return np.stack([x, y, z], axis=-1)

    def tangents(xi):
        x, y = xy(xi)
        z = np.sqrt(R * R - x * x - y * y)
        t = np.zeros((x.shape[0], 3, 2))
        t[:, 0, 0] = 2 * extent
        t[:, 2, 0] = -2 * extent * x / z
        t[:, 1, 1] = 2 * extent
        t[:, 2, 1] = -2 * extent * y / z
        return t

    def dnormal(xi):
        # outward normal is position/R, so dn = dchart/R
        return tangents(xi) / R

    return Surface(
        "spherical_cap", {"radius": R, "extent": extent}, chart, tangents, dnormal
    )


def _graph(params):
    """Height-function surface z = g(x, y) over the unit square.

    params either carries a callable ``g`` (vectorized, with optional
    gradient ``dg`` returning (gx, gy)) or the named preset
    ``preset='paraboloid'`` with coefficients ax, ay.
    """
    if "g" in params:
        g = params["g"]
        dg = params.get("dg")
    elif params.get("preset") == "paraboloid":
        ax = float(params.get("ax", 0.5))
        ay = float(params.get("ay", 0.5))

        def g(x, y):
            return ax * (x - 0.5) ** 2 + ay * (y - 0.5) ** 2

        def dg(x, y):
            return 2 * ax * (x - 0.5), 2 * ay * (y - 0.5)

    else:
        raise ValueError("graph surface needs a callable 'g' or a named preset")

    def chart(xi):
        xi = np.atleast_2d(xi)
        return np.stack([xi[:, 0], xi[:, 1], g(xi[:, 0], xi[:, 1])], axis=-1)

    if dg is not None:

        def tangents(xi):
            xi = np.atleast_2d(xi)
            gx, gy = dg(xi[:, 0], xi[:, 1])
            t = np.zeros((xi.shape[0], 3, 2))
            t[:, 0, 0] = 1.0
            t[:, 2, 0] = gx
            t[:, 1, 1] = 1.0
            t[:, 2, 1] = gy
            return t

    else:

        def tangents(xi):
            xi = np.atleast_2d(xi)
            t = np.empty((xi.shape[0], 3, 2))
            for d in range(2):
                step = np.zeros(2)
                step[d] = _EPS_FD
                t[:, :, d] = (chart(xi + step) - chart(xi - step)) / (2 * _EPS_FD)
            return t

    # shape operator via finite differences of the normal (dnormal=None)
    return Surface("graph", dict(params), chart, tangents, None)


_MAKERS = {
    "plate": _plate,
    "cylinder_patch": _cylinder,
    "spherical_cap": _spherical_cap,
    "graph": _graph,
}


def make_surface(kind, params=None):
    """Construct one of the built-in surfaces; rejects degenerate parameters."""
    if kind not in _MAKERS:
        raise ValueError(f"unknown surface kind '{kind}'")
    return _MAKERS[kind](params or {})


def shape_operator(surface, xi):
    """Shape operator grad(n) as (m, 3, 3) matrices with Pi n = 0.

    Built from chart derivatives of the normal and the dual tangent basis,
    so the matrix maps the tangent plane to itself for any chart.
    """
    xi = np.atleast_2d(xi)
    t = surface.tangents(xi)  # (m,3,2)
    dn = surface.dnormal_dxi(xi)  # (m,3,2)
    g = np.einsum("mid,mie->mde", t, t)  # metric (m,2,2)
    ginv = np.linalg.inv(g)
    dual = np.einsum("mde,mie->mid", ginv, t)  # dual tangent vectors
    return np.einsum("mid,mjd->mij", dn, dual)


def _orthonormal_frames(t1, t2):
    tau1 = t1 / np.linalg.norm(t1, axis=-1, keepdims=True)
    t2p = t2 - np.sum(t2 * tau1, axis=-1, keepdims=True) * tau1
    tau2 = t2p / np.linalg.norm(t2p, axis=-1, keepdims=True)
    nrm = np.cross(tau1, tau2)
    return tau1, tau2, nrm


@dataclass(eq=False)
class SurfaceMesh:
    """Structured bilinear quad mesh of a parametric surface.

    Quadrature data (weights, frames, shape operator) is evaluated from the
    exact chart; Dtan/pj/Minv and the element-center tables come from the
    interpolated geometry and drive the kinematic operators. All arrays are
    read-only by convention once built.
    """

    surface: Surface
    r1: int
    r2: int
    nodes_xi: np.ndarray
    node_x: np.ndarray
    node_n: np.ndarray
    node_tau1: np.ndarray
    node_tau2: np.ndarray
    elems: np.ndarray
    qp_xi: np.ndarray
    qp_x: np.ndarray
    w: np.ndarray
    tau1: np.ndarray
    tau2: np.ndarray
    nrm: np.ndarray
    Pi: np.ndarray
    itau1: np.ndarray
    itau2: np.ndarray
    inrm: np.ndarray
    Dtan: np.ndarray
    pj: np.ndarray
    Minv: np.ndarray
    c_xi: np.ndarray
    c_Dtan: np.ndarray
    c_itau1: np.ndarray
    c_itau2: np.ndarray
    c_inrm: np.ndarray
    c_Minv: np.ndarray
    rec: sp.csr_matrix
    rec_qp: sp.csr_matrix
    Nq: sp.csr_matrix
    qp_elem: np.ndarray
    _chart_J: np.ndarray = field(default=None, repr=False)

    @property
    def n_nodes(self):
        return self.node_x.shape[0]

    @property
    def n_elems(self):
        return self.elems.shape[0]

    @property
    def n_qp(self):
        return self.qp_xi.shape[0]

    @property
    def area(self):
        return float(np.sum(self.w))

    def interpolate(self, nodal):
        """Values of a nodal field at the quadrature points."""
        nodal = np.asarray(nodal)
        if nodal.ndim == 1:
            return self.Nq @ nodal
        return np.stack([self.Nq @ nodal[:, c] for c in range(nodal.shape[1])], axis=-1)

    def tangential_gradient(self, nodal, at="qp"):
        """Per-point derivatives along the interpolated frame directions.

        Returns (npts, ncomp, 2); scalar fields give (npts, 2) squeezed to
        (npts, 1, 2) semantics via ncomp=1.
        """
        nodal = np.asarray(nodal, dtype=float)
        scalar = nodal.ndim == 1
        if scalar:
            nodal = nodal[:, None]
        D = self.Dtan if at == "qp" else self.c_Dtan
        vals = nodal[self.elems]  # (E, 4, ncomp)
        nqpe = D.shape[1]
        out = np.einsum("eqnd,enc->eqcd", D, vals).reshape(-1, nodal.shape[1], 2)
        assert out.shape[0] == self.n_elems * nqpe
        return out

    def integrate(self, qp_values):
        return float(np.sum(self.w * qp_values))

    def dump(self, path):
        """Plain-text dump: node table then element table."""
        with open(path, "w") as fh:
            fh.write(f"# surface {self.surface.kind} nodes {self.n_nodes} "
                     f"elems {self.n_elems}\n")
            fh.write("# node: id xi1 xi2 x y z\n")
            for a, (xi, x) in enumerate(zip(self.nodes_xi, self.node_x)):
                fh.write(f"{a} {xi[0]:.12g} {xi[1]:.12g} "
                         f"{x[0]:.12g} {x[1]:.12g} {x[2]:.12g}\n")
            fh.write("# elem: id n0 n1 n2 n3\n")
            for e, conn in enumerate(self.elems):
                fh.write(f"{e} {conn[0]} {conn[1]} {conn[2]} {conn[3]}\n")


def _recovery_matrix(r1, r2, c_xi, targets_xi, anchors):
    """Sparse map from element-center samples to values at target points.

    Each target point carries an interior anchor node; a linear polynomial
    is least-squares fitted to the center samples of the 2x2 element patch
    around the anchor and evaluated at the target. Exact for center data
    that is linear in the parameters, which makes recovered gradients of
    quadratics exact on uniform grids, boundary targets included.

    anchors: (n_targets, 2) integer node indices, clipped to the interior.
    """
    n_t = targets_xi.shape[0]
    rows, cols, vals = [], [], []
    fit_cache = {}
    for t in range(n_t):
        ic, jc = anchors[t]
        patch = (
            (ic - 1) + r1 * (jc - 1),
            ic + r1 * (jc - 1),
            (ic - 1) + r1 * jc,
            ic + r1 * jc,
        )
        if patch not in fit_cache:
            centers = c_xi[list(patch)]
            xc = centers.mean(axis=0)
            P = np.column_stack(
                [np.ones(4), centers[:, 0] - xc[0], centers[:, 1] - xc[1]]
            )
            fit_cache[patch] = (np.linalg.pinv(P), xc)
        Pinv, xc = fit_cache[patch]
        b = np.array([1.0, targets_xi[t, 0] - xc[0], targets_xi[t, 1] - xc[1]])
        wrow = b @ Pinv
        rows.extend([t] * 4)
        cols.extend(patch)
        vals.extend(wrow)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_t, r1 * r2))


def _node_anchors(r1, r2):
    out = np.empty(((r1 + 1) * (r2 + 1), 2), dtype=int)
    for j in range(r2 + 1):
        for i in range(r1 + 1):
            out[i + (r1 + 1) * j] = (
                min(max(i, 1), r1 - 1),
                min(max(j, 1), r2 - 1),
            )
    return out


def _qp_anchors(r1, r2, qp_elem):
    ei = qp_elem % r1
    ej = qp_elem // r1
    return np.stack(
        [np.clip(ei, 1, r1 - 1), np.clip(ej, 1, r2 - 1)], axis=-1
    )


def mesh_surface(surface, resolution):
    """Mesh the parameter square with bilinear quads and 2x2 Gauss points."""
    if np.isscalar(resolution):
        r1 = r2 = int(resolution)
    else:
        r1, r2 = (int(r) for r in resolution)
    if r1 < 2 or r2 < 2:
        raise ValueError("resolution must be at least 2 per direction")

    xi1 = np.linspace(0.0, 1.0, r1 + 1)
    xi2 = np.linspace(0.0, 1.0, r2 + 1)
    X1, X2 = np.meshgrid(xi1, xi2, indexing="ij")
    nodes_xi = np.stack([X1.reshape(-1, order="F"), X2.reshape(-1, order="F")], -1)
    node_x = surface.chart(nodes_xi)
    node_n = surface.normal(nodes_xi)
    node_t = surface.tangents(nodes_xi)
    node_tau1, node_tau2, _ = _orthonormal_frames(node_t[..., 0], node_t[..., 1])

    def nid(i, j):
        return i + (r1 + 1) * j

    elems = np.array(
        [
            [nid(i, j), nid(i + 1, j), nid(i, j + 1), nid(i + 1, j + 1)]
            for j in range(r2)
            for i in range(r1)
        ],
        dtype=int,
    )
    E = elems.shape[0]
    d1, d2 = 1.0 / r1, 1.0 / r2

    ref_pts, ref_w = gauss_tensor(2, 2)
    Nref, dNref = tensor_basis(1, 2, ref_pts)  # (4qp, 4), (4qp, 4, 2)
    nqpe = ref_pts.shape[0]

    # parameter coordinates of quadrature points, per element
    origins = nodes_xi[elems[:, 0]]  # lower-left corner of each element
    half = np.array([d1 / 2, d2 / 2])
    qp_xi = (origins[:, None, :] + half * (ref_pts[None, :, :] + 1.0)).reshape(-1, 2)
    qp_elem = np.repeat(np.arange(E), nqpe)

    qp_x = surface.chart(qp_xi)
    t = surface.tangents(qp_xi)
    tau1, tau2, nrm = _orthonormal_frames(t[..., 0], t[..., 1])
    metric = np.einsum("mid,mie->mde", t, t)
    cond = np.linalg.cond(metric)
    if np.any(cond > surface.max_metric_cond):
        raise ValueError("chart is degenerate: metric condition number too large")
    sqrtg = np.sqrt(np.linalg.det(metric))
    jac_param = d1 * d2 / 4.0
    w = sqrtg * jac_param * np.tile(ref_w, E)
    if np.any(w <= 0):
        raise ValueError("element Jacobian is not positive")
    Pi = shape_operator(surface, qp_xi)

    # chart Jacobians [t1, t2, n] at quadrature points (reused by extrusion)
    chart_J = np.empty((qp_xi.shape[0], 3, 3))
    chart_J[:, :, :2] = t
    chart_J[:, :, 2] = nrm

    # interpolated-geometry tables at the quadrature points
    dN_param = dNref * np.array([2.0 / d1, 2.0 / d2])  # (qp, 4, 2)
    xe = node_x[elems]  # (E, 4, 3)
    it = np.einsum("enc,qnd->eqcd", xe, dN_param)  # (E, qp, 3, 2)
    it = it.reshape(-1, 3, 2)
    itau1, itau2, inrm = _orthonormal_frames(it[..., 0], it[..., 1])

    def dtan_tables(it_flat, taus, count):
        T = np.empty((count, 2, 2))
        T[:, 0, 0] = np.sum(taus[0] * it_flat[..., 0], -1)
        T[:, 0, 1] = np.sum(taus[0] * it_flat[..., 1], -1)
        T[:, 1, 0] = np.sum(taus[1] * it_flat[..., 0], -1)
        T[:, 1, 1] = np.sum(taus[1] * it_flat[..., 1], -1)
        Tinv = np.linalg.inv(T)
        return Tinv

    Tinv = dtan_tables(it, (itau1, itau2), it.shape[0])
    # Dtan[e, q, n, i] = sum_j dN_param[q, n, j] * Tinv[eq, j, i]
    Dtan = np.einsum(
        "qnj,eqji->eqni", dN_param, Tinv.reshape(E, nqpe, 2, 2)
    )

    ne = node_n[elems]  # (E, 4, 3)
    dn_i = np.einsum("enc,qnd->eqcd", ne, dN_param).reshape(-1, 3, 2)
    pj = np.einsum("mcd,mdj->mjc", dn_i, Tinv)  # (m, 2, 3): pj[:, j] = dn/dtau_j

    eye = np.eye(3)
    Minv = eye - 0.5 * np.einsum("mi,mj->mij", inrm, inrm)

    # element centers for gradient recovery
    c_ref = np.zeros((1, 2))
    _, dNc = tensor_basis(1, 2, c_ref)
    dNc_param = dNc[0] * np.array([2.0 / d1, 2.0 / d2])  # (4, 2)
    c_xi = origins + half
    itc = np.einsum("enc,nd->ecd", xe, dNc_param)
    c_itau1, c_itau2, c_inrm = _orthonormal_frames(itc[..., 0], itc[..., 1])
    Tc = np.empty((E, 2, 2))
    Tc[:, 0, 0] = np.sum(c_itau1 * itc[..., 0], -1)
    Tc[:, 0, 1] = np.sum(c_itau1 * itc[..., 1], -1)
    Tc[:, 1, 0] = np.sum(c_itau2 * itc[..., 0], -1)
    Tc[:, 1, 1] = np.sum(c_itau2 * itc[..., 1], -1)
    Tcinv = np.linalg.inv(Tc)
    c_Dtan = np.einsum("nj,eji->eni", dNc_param, Tcinv)[:, None, :, :]
    c_Minv = eye - 0.5 * np.einsum("ei,ej->eij", c_inrm, c_inrm)

    rec = _recovery_matrix(r1, r2, c_xi, nodes_xi, _node_anchors(r1, r2))
    rec_qp = _recovery_matrix(r1, r2, c_xi, qp_xi, _qp_anchors(r1, r2, qp_elem))

    rows = np.repeat(np.arange(E * nqpe), 4)
    cols = elems[np.repeat(np.arange(E), nqpe)].reshape(-1)
    vals = np.tile(Nref, (E, 1)).reshape(-1)
    Nq = sp.csr_matrix(
        (vals, (rows, cols)), shape=(E * nqpe, (r1 + 1) * (r2 + 1))
    )

    return SurfaceMesh(
        surface=surface,
        r1=r1,
        r2=r2,
        nodes_xi=nodes_xi,
        node_x=node_x,
        node_n=node_n,
        node_tau1=node_tau1,
        node_tau2=node_tau2,
        elems=elems,
        qp_xi=qp_xi,
        qp_x=qp_x,
        w=w,
        tau1=tau1,
        tau2=tau2,
        nrm=nrm,
        Pi=Pi,
        itau1=itau1,
        itau2=itau2,
        inrm=inrm,
        Dtan=Dtan,
        pj=pj,
        Minv=Minv,
        c_xi=c_xi,
        c_Dtan=c_Dtan,
        c_itau1=c_itau1,
        c_itau2=c_itau2,
        c_inrm=c_inrm,
        c_Minv=c_Minv,
        rec=rec,
        rec_qp=rec_qp,
        Nq=Nq,
        qp_elem=qp_elem,
        _chart_J=chart_J,
    )


def max_curvature(mesh):
    """Largest absolute principal curvature over the quadrature points."""
    k11 = np.einsum("mi,mij,mj->m", mesh.tau1, mesh.Pi, mesh.tau1)
    k12 = np.einsum("mi,mij,mj->m", mesh.tau1, mesh.Pi, mesh.tau2)
    k22 = np.einsum("mi,mij,mj->m", mesh.tau2, mesh.Pi, mesh.tau2)
    tr = k11 + k22
    det = k11 * k22 - k12 * k12
    disc = np.sqrt(np.maximum(tr * tr / 4 - det, 0.0))
    return float(np.max(np.abs(tr / 2) + disc))


@dataclass(eq=False)
class ShellMesh:
    """Normal extrusion of a SurfaceMesh into a thin 3D shell mesh.

    Nodes sit at x_a + t_k n(x_a) on layers+1 equispaced levels; flat node
    ids are surface-node-major (id = a + n_surface * level). Cells are
    tensor-product Lagrange hexes of the given order; quadrature weights
    carry the exact fiber Jacobian det(Id + t*Pi) * sqrt(det g).
    """

    base: SurfaceMesh
    h: float
    layers: int
    order: int
    levels: np.ndarray
    node_x: np.ndarray
    cells: np.ndarray
    Nval: np.ndarray
    dNphys: np.ndarray
    w3: np.ndarray
    qp_xi: np.ndarray
    qp_t: np.ndarray
    qp_x: np.ndarray
    qp_tau1: np.ndarray
    qp_tau2: np.ndarray
    qp_nrm: np.ndarray
    qp_detfac: np.ndarray
    qp_col: np.ndarray
    qp_tindex: np.ndarray
    Nsurf: sp.csr_matrix
    ncols: int
    nt_per_col: int

    @property
    def n_nodes(self):
        return self.node_x.shape[0]

    @property
    def n_surface_nodes(self):
        return self.base.n_nodes

    @property
    def n_qp(self):
        return self.w3.shape[0]

    @property
    def volume(self):
        return float(np.sum(self.w3))

    def node_flat(self, a, k):
        return a + self.base.n_nodes * k

    def identity_deformation(self):
        return self.node_x.copy()

    def grad(self, u):
        """Deformation gradient of a nodal field at all quadrature points."""
        u = np.asarray(u, dtype=float)
        ue = u[self.cells]  # (C, nen, 3)
        g = np.einsum("cni,cqnd->cqid", ue, self.dNphys)
        return g.reshape(-1, 3, 3)

    def scatter_qp_to_nodes(self, qp_mat):
        """Adjoint of grad: sum_q w3 * M_q : (e_i x gradN) into nodal vectors."""
        C, nqpc = self.dNphys.shape[0], self.dNphys.shape[1]
        M = (qp_mat * self.w3[:, None, None]).reshape(C, nqpc, 3, 3)
        ge = np.einsum("cqid,cqnd->cni", M, self.dNphys)
        out = np.zeros((self.n_nodes, 3))
        np.add.at(out, self.cells, ge)
        return out

    def interpolate(self, u):
        """Nodal field values at the quadrature points, (nq, ncomp)."""
        u = np.asarray(u, dtype=float)
        ue = u[self.cells]
        vals = np.einsum("cn...,qn->cq...", ue, self.Nval)
        return vals.reshape(self.n_qp, *u.shape[1:])

    def scatter_values_to_nodes(self, qp_vec):
        """Adjoint of interpolate with quadrature weights applied."""
        C, nqpc = self.dNphys.shape[0], self.dNphys.shape[1]
        V = (qp_vec * self.w3[:, None]).reshape(C, nqpc, -1)
        ge = np.einsum("cqi,qn->cni", V, self.Nval)
        out = np.zeros((self.n_nodes, qp_vec.shape[1]))
        np.add.at(out, self.cells, ge)
        return out

    def dump(self, path):
        with open(path, "w") as fh:
            fh.write(f"# shell h={self.h} layers={self.layers} order={self.order} "
                     f"nodes {self.n_nodes} cells {self.cells.shape[0]}\n")
            fh.write("# node: id x y z\n")
            for a, x in enumerate(self.node_x):
                fh.write(f"{a} {x[0]:.12g} {x[1]:.12g} {x[2]:.12g}\n")
            fh.write("# cell: id nodes...\n")
            for c, conn in enumerate(self.cells):
                fh.write(f"{c} " + " ".join(str(n) for n in conn) + "\n")


def extrude_shell(mesh, h, layers=2, order=1):
    """Extrude a surface mesh to thickness h with the exact normal offset.

    Rejects thicknesses violating injectivity (h >= 2 / max curvature) and
    odd layer counts (the midsurface must be a node level).
    """
    if h <= 0:
        raise ValueError("thickness must be positive")
    kmax = max_curvature(mesh)
    if kmax > 0 and h >= 2.0 / kmax:
        raise ValueError(
            f"thickness h={h} violates injectivity bound 2/max|curvature|="
            f"{2.0 / kmax:.6g}"
        )
    if layers < 1 or layers % 2 != 0:
        raise ValueError("layers must be a positive even count")
    if order not in (1, 2):
        raise ValueError("element order must be 1 or 2")
    r1, r2 = mesh.r1, mesh.r2
    if order == 2 and (r1 % 2 or r2 % 2 or layers % 2):
        raise ValueError("order-2 extrusion needs even resolutions and layers")

    N2 = mesh.n_nodes
    levels = h * (np.arange(layers + 1) / layers - 0.5)
    node_x = (
        mesh.node_x[None, :, :] + levels[:, None, None] * mesh.node_n[None, :, :]
    ).reshape(-1, 3)

    o = order
    nc1, nc2, nct = r1 // o, r2 // o, layers // o
    ncols = nc1 * nc2

    def nid2(i, j):
        return i + (r1 + 1) * j

    cells = []
    for K in range(nct):
        for J in range(nc2):
            for I in range(nc1):
                conn = []
                for dk in range(o + 1):
                    for dj in range(o + 1):
                        for di in range(o + 1):
                            a = nid2(o * I + di, o * J + dj)
                            conn.append(a + N2 * (o * K + dk))
                cells.append(conn)
    cells = np.array(cells, dtype=int)
    C = cells.shape[0]

    ref_pts, ref_w = gauss_tensor(o + 1, 3)
    Nval, dNref = tensor_basis(o, 3, ref_pts)
    nqpc = ref_pts.shape[0]
    n1sq = (o + 1) ** 2

    d1, d2 = o / r1, o / r2
    dt = o * h / layers

    # parameter coordinates (xi1, xi2, t) of every quadrature point
    qp_xi = np.empty((C * nqpc, 2))
    qp_t = np.empty(C * nqpc)
    qp_col = np.empty(C * nqpc, dtype=int)
    qp_tindex = np.empty(C * nqpc, dtype=int)
    idx = 0
    tq = ref_pts[:, 2]
    for K in range(nct):
        t0 = levels[o * K]
        for J in range(nc2):
            for I in range(nc1):
                qp_xi[idx : idx + nqpc, 0] = I * d1 + d1 / 2 * (ref_pts[:, 0] + 1)
                qp_xi[idx : idx + nqpc, 1] = J * d2 + d2 / 2 * (ref_pts[:, 1] + 1)
                qp_t[idx : idx + nqpc] = t0 + dt / 2 * (tq + 1)
                qp_col[idx : idx + nqpc] = I + nc1 * J
                qp_tindex[idx : idx + nqpc] = K * (o + 1) + np.arange(nqpc) // n1sq
                idx += nqpc

    surf = mesh.surface
    x2 = surf.chart(qp_xi)
    t = surf.tangents(qp_xi)
    tau1, tau2, nrm = _orthonormal_frames(t[..., 0], t[..., 1])
    dn = surf.dnormal_dxi(qp_xi)
    Pi = shape_operator(surf, qp_xi)
    qp_x = x2 + qp_t[:, None] * nrm

    J = np.empty((C * nqpc, 3, 3))
    J[:, :, 0] = t[..., 0] + qp_t[:, None] * dn[..., 0]
    J[:, :, 1] = t[..., 1] + qp_t[:, None] * dn[..., 1]
    J[:, :, 2] = nrm
    detJ = np.linalg.det(J)
    if np.any(detJ <= 0):
        raise ValueError("extrusion produced a non-positive Jacobian")
    sqrtg = np.sqrt(np.linalg.det(np.einsum("mid,mie->mde", t, t)))
    detfac = detJ / sqrtg

    scale = np.array([2.0 / d1, 2.0 / d2, 2.0 / dt])
    dN_param = dNref * scale  # (nqpc, nen, 3)
    Jinv = np.linalg.inv(J).reshape(C, nqpc, 3, 3)
    dNphys = np.einsum("qnd,cqdk->cqnk", dN_param, Jinv)

    w3 = detJ * (d1 * d2 * dt / 8.0) * np.tile(ref_w, C)

    # bilinear interpolation of surface nodal fields at 3D quadrature points
    fe1 = np.clip((qp_xi[:, 0] * r1).astype(int), 0, r1 - 1)
    fe2 = np.clip((qp_xi[:, 1] * r2).astype(int), 0, r2 - 1)
    loc1 = qp_xi[:, 0] * r1 - fe1
    loc2 = qp_xi[:, 1] * r2 - fe2
    rows = np.repeat(np.arange(C * nqpc), 4)
    cols4 = np.stack(
        [
            nid2(fe1, fe2),
            nid2(fe1 + 1, fe2),
            nid2(fe1, fe2 + 1),
            nid2(fe1 + 1, fe2 + 1),
        ],
        axis=-1,
    ).reshape(-1)
    vals4 = np.stack(
        [
            (1 - loc1) * (1 - loc2),
            loc1 * (1 - loc2),
            (1 - loc1) * loc2,
            loc1 * loc2,
        ],
        axis=-1,
    ).reshape(-1)
    Nsurf = sp.csr_matrix((vals4, (rows, cols4)), shape=(C * nqpc, N2))

    return ShellMesh(
        base=mesh,
        h=h,
        layers=layers,
        order=order,
        levels=levels,
        node_x=node_x,
        cells=cells,
        Nval=Nval,
        dNphys=dNphys,
        w3=w3,
        qp_xi=qp_xi,
        qp_t=qp_t,
        qp_x=qp_x,
        qp_tau1=tau1,
        qp_tau2=tau2,
        qp_nrm=nrm,
        qp_detfac=detfac,
        qp_col=qp_col,
        qp_tindex=qp_tindex,
        Nsurf=Nsurf,
        ncols=ncols,
        nt_per_col=nct * (o + 1),
    )
