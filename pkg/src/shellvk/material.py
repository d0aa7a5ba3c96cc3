"""Stored energy densities and the derived quadratic forms.

Two frame-indifferent densities are provided, both vanishing exactly on
rotations, with quadratic growth in the distance to SO(3) and a gradient
bounded linearly by that distance:

* ``dist2``: W(F) = mu * dist^2(F, SO(3)),
* ``biot``:  W(F) = mu * sum (s_i - 1)^2 + lam/2 * (sum s_i - 3)^2,

where s_i are signed singular values (the smallest one flips sign when
det F < 0, keeping W continuous across orientation reversal). ``dist2`` is
the lam = 0 member of the family.

The second differential at the identity is
q3(F) = 2 mu |sym F|^2 + lam (tr F)^2, and its relaxation over completions
with a prescribed tangential 2x2 minor is
q2(F) = 2 mu |sym F|^2 + (2 mu lam / (2 mu + lam)) (tr F)^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_DEGENERATE_GAP = 1e-8  # singular-value gap below which stress falls back to FD
_FD_STEP = 1e-6


@dataclass(frozen=True)
class Material:
    """Isotropic stored energy density with moduli (mu, lam)."""

    variant: str = "biot"
    mu: float = 1.0
    lam: float = 0.0

    def __post_init__(self):
        if self.variant not in ("dist2", "biot"):
            raise ValueError(f"unknown material variant '{self.variant}'")
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.variant == "dist2" and self.lam != 0:
            raise ValueError("dist2 is the lam=0 density; use biot for lam>0")

    @property
    def gradient_bound(self):
        """Constant C with |DW(F)| <= C * dist(F, SO(3))."""
        return 2.0 * (2.0 * self.mu + 3.0 * self.lam)


def _signed_singular_values(F):
    """SVD with orientation sign absorbed into the smallest singular value.

    Returns (U, s, Vt, signed_s) for a batch (..., 3, 3).
    """
    U, s, Vt = np.linalg.svd(F)
    sgn = np.sign(np.linalg.det(F))
    sgn = np.where(sgn == 0, 1.0, sgn)
    signed = s.copy()
    signed[..., 2] *= sgn
    return U, s, Vt, signed


def dist_to_rotations(F):
    """dist(F, SO(3)) under the signed singular-value convention."""
    _, _, _, signed = _signed_singular_values(np.asarray(F, dtype=float))
    return np.sqrt(np.sum((signed - 1.0) ** 2, axis=-1))


def energy_density(m, F):
    """W(F), vectorized over leading axes of F (..., 3, 3)."""
    F = np.asarray(F, dtype=float)
    _, _, _, sv = _signed_singular_values(F)
    d = sv - 1.0
    W = m.mu * np.sum(d * d, axis=-1)
    if m.lam != 0.0:
        W = W + 0.5 * m.lam * np.sum(d, axis=-1) ** 2
    return W


def _stress_fd_batch(m, F):
    """Five-point finite-difference gradient of W for a batch (n, 3, 3)."""
    F = np.asarray(F, dtype=float)
    n = F.shape[0]
    step = _FD_STEP * (1.0 + np.linalg.norm(F, axis=(1, 2)))
    coeffs = np.array([-2.0, -1.0, 1.0, 2.0])
    pert = np.repeat(F.reshape(n, 1, 1, 9), 9, axis=1).repeat(4, axis=2)
    for k in range(9):
        pert[:, k, :, k] += coeffs * step[:, None]
    W = energy_density(m, pert.reshape(-1, 3, 3)).reshape(n, 9, 4)
    d = (W[:, :, 0] - 8 * W[:, :, 1] + 8 * W[:, :, 2] - W[:, :, 3]) / (
        12 * step[:, None]
    )
    return d.reshape(n, 3, 3)


def stress(m, F):
    """DW(F), vectorized over leading axes.

    Uses the singular-value form U diag(g) V^T; when the two smallest
    singular values nearly coincide the formula degenerates and the value
    falls back to a five-point finite-difference gradient.
    """
    F = np.asarray(F, dtype=float)
    batched = F.ndim > 2
    Fb = F.reshape(-1, 3, 3)
    U, s, Vt, sv = _signed_singular_values(Fb)
    g = 2.0 * m.mu * (sv - 1.0)
    if m.lam != 0.0:
        g = g + m.lam * np.sum(sv - 1.0, axis=-1, keepdims=True)
    sgn = np.sign(np.linalg.det(Fb))
    sgn = np.where(sgn == 0, 1.0, sgn)
    g = g.copy()
    g[:, 2] *= sgn
    DW = np.einsum("mik,mk,mkj->mij", U, g, Vt)
    weird = np.abs(s[:, 1] - s[:, 2]) < _DEGENERATE_GAP
    if np.any(weird):
        DW[weird] = _stress_fd_batch(m, Fb[weird])
    return DW.reshape(F.shape) if batched else DW.reshape(3, 3)


def q3(m, F):
    """Second differential of W at the identity, as a quadratic form."""
    F = np.asarray(F, dtype=float)
    symF = 0.5 * (F + np.swapaxes(F, -1, -2))
    tr = np.trace(F, axis1=-2, axis2=-1)
    return 2.0 * m.mu * np.sum(symF * symF, axis=(-2, -1)) + m.lam * tr * tr


def l3(m, F):
    """Linear operator with q3(F) = l3(F) : F; annihilates skew matrices."""
    F = np.asarray(F, dtype=float)
    symF = 0.5 * (F + np.swapaxes(F, -1, -2))
    tr = np.trace(F, axis1=-2, axis2=-1)
    return 2.0 * m.mu * symF + m.lam * tr[..., None, None] * np.eye(3)


def reduced_trace_coefficient(m):
    """Coefficient 2 mu lam / (2 mu + lam) of the relaxed trace term."""
    return 2.0 * m.mu * m.lam / (2.0 * m.mu + m.lam)


def q2_analytic(m, Ftan):
    """Closed form of the tangential relaxation of q3."""
    Ftan = np.asarray(Ftan, dtype=float)
    symF = 0.5 * (Ftan + np.swapaxes(Ftan, -1, -2))
    tr = np.trace(Ftan, axis1=-2, axis2=-1)
    c = reduced_trace_coefficient(m)
    return 2.0 * m.mu * np.sum(symF * symF, axis=(-2, -1)) + c * tr * tr


def l2(m, Ftan):
    """Linear operator with q2(F) = l2(F) : F on tangential 2x2 minors."""
    Ftan = np.asarray(Ftan, dtype=float)
    symF = 0.5 * (Ftan + np.swapaxes(Ftan, -1, -2))
    tr = np.trace(Ftan, axis1=-2, axis2=-1)
    c = reduced_trace_coefficient(m)
    return 2.0 * m.mu * symF + c * tr[..., None, None] * np.eye(2)


# symmetric completions of a 2x2 tangential minor: the two normal
# row/column pairs and the normal-normal entry
_COMPLETIONS = np.zeros((3, 3, 3))
_COMPLETIONS[0, 0, 2] = _COMPLETIONS[0, 2, 0] = 1.0
_COMPLETIONS[1, 1, 2] = _COMPLETIONS[1, 2, 1] = 1.0
_COMPLETIONS[2, 2, 2] = 1.0


def q2_relaxed(m, Ftan, tol=1e-12):
    """Minimize q3 over all completions with the given tangential minor.

    Returns (value, completion). q3 sees only symmetric parts, so the
    minimization runs over symmetric completions (3 unknowns); the reduced
    system is assembled by polarization of q3 and must be positive definite
    for mu > 0.
    """
    Ftan = np.asarray(Ftan, dtype=float)
    F0 = np.zeros((3, 3))
    F0[:2, :2] = Ftan

    def bil(X, Y):
        return 0.25 * (q3(m, X + Y) - q3(m, X - Y))

    G = np.array([[bil(Ei, Ej) for Ej in _COMPLETIONS] for Ei in _COMPLETIONS])
    r = np.array([bil(F0, Ei) for Ei in _COMPLETIONS])
    try:
        np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(
            "completion system is singular; requires mu > 0"
        ) from exc
    if np.min(np.linalg.eigvalsh(G)) <= tol * np.max(np.abs(G)):
        raise ArithmeticError("completion system is numerically singular")
    v = np.linalg.solve(G, -r)
    comp = F0 + np.einsum("k,kij->ij", v, _COMPLETIONS)
    return float(q3(m, comp)), comp


@dataclass(frozen=True)
class QuadraticForms:
    """Bundle of the quadratic forms and operators derived from a material."""

    material: Material
    mu: float = field(init=False)
    lam: float = field(init=False)
    trace_coeff: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "mu", self.material.mu)
        object.__setattr__(self, "lam", self.material.lam)
        object.__setattr__(
            self, "trace_coeff", reduced_trace_coefficient(self.material)
        )

    def q3(self, F):
        return q3(self.material, F)

    def l3(self, F):
        return l3(self.material, F)

    def q2(self, Ftan):
        return q2_analytic(self.material, Ftan)

    def l2(self, Ftan):
        return l2(self.material, Ftan)

    def l2_components(self, s11, s22, s12):
        """l2 on symmetric component triples; returns the same layout."""
        c = self.trace_coeff
        tr = s11 + s22
        return (
            2 * self.mu * s11 + c * tr,
            2 * self.mu * s22 + c * tr,
            2 * self.mu * s12,
        )


def empirical_gradient_constant(m, n_samples=2000, seed=0, spread=1.0):
    """Sampled sup of |DW(F)| / dist(F, SO(3)); reported, not asserted."""
    rng = np.random.default_rng(seed)
    F = np.eye(3) + spread * rng.standard_normal((n_samples, 3, 3))
    d = dist_to_rotations(F)
    good = d > 1e-9
    DW = stress(m, F[good])
    ratios = np.linalg.norm(DW, axis=(1, 2)) / d[good]
    return float(np.max(ratios))
