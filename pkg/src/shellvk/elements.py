"""Reference-element tables: Gauss rules and tensor-product Lagrange shape functions.

All elements live on [-1, 1]^d. Node and quadrature orderings are
lexicographic with the first axis fastest, which every mesh builder in this
package relies on.
"""

from __future__ import annotations

import numpy as np

_GAUSS = {
    1: (np.array([0.0]), np.array([2.0])),
    2: (np.array([-1.0, 1.0]) / np.sqrt(3.0), np.array([1.0, 1.0])),
    3: (
        np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)]),
        np.array([5.0, 8.0, 5.0]) / 9.0,
    ),
}


def gauss_1d(n):
    """Return (points, weights) of the n-point Gauss-Legendre rule on [-1, 1]."""
    if n not in _GAUSS:
        raise ValueError(f"unsupported Gauss rule n={n}")
    return _GAUSS[n]


def lagrange_1d(order, z):
    """Values and derivatives of the 1D Lagrange basis of given order at z.

    Returns (vals, ders) with shape (len(z), order+1). Nodes are equispaced
    on [-1, 1] ({-1, 1} for order 1, {-1, 0, 1} for order 2).
    """
    z = np.asarray(z, dtype=float)
    if order == 1:
        vals = np.stack([(1.0 - z) / 2.0, (1.0 + z) / 2.0], axis=-1)
        ders = np.stack([np.full_like(z, -0.5), np.full_like(z, 0.5)], axis=-1)
    elif order == 2:
        vals = np.stack(
            [z * (z - 1.0) / 2.0, 1.0 - z * z, z * (z + 1.0) / 2.0], axis=-1
        )
        ders = np.stack([z - 0.5, -2.0 * z, z + 0.5], axis=-1)
    else:
        raise ValueError(f"unsupported element order {order}")
    return vals, ders


def tensor_basis(order, dims, points):
    """Tensor-product Lagrange basis on [-1,1]^dims evaluated at points.

    points: (npts, dims). Returns (N, dN) with N of shape (npts, nen) and
    dN of shape (npts, nen, dims); nen = (order+1)**dims. Local node k maps
    to 1D indices (k % (order+1), (k // (order+1)) % (order+1), ...), i.e.
    the first axis varies fastest.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    npts = points.shape[0]
    n1 = order + 1
    vals = []
    ders = []
    for d in range(dims):
        v, g = lagrange_1d(order, points[:, d])
        vals.append(v)
        ders.append(g)
    nen = n1**dims
    N = np.ones((npts, nen))
    dN = np.ones((npts, nen, dims))
    for k in range(nen):
        idx = [(k // n1**d) % n1 for d in range(dims)]
        for d in range(dims):
            N[:, k] *= vals[d][:, idx[d]]
            for dd in range(dims):
                dN[:, k, dd] *= ders[d][:, idx[d]] if d == dd else vals[d][:, idx[d]]
    return N, dN


def gauss_tensor(n, dims):
    """Tensor Gauss rule: points (n**dims, dims) and weights (n**dims,)."""
    p1, w1 = gauss_1d(n)
    grids = np.meshgrid(*([p1] * dims), indexing="ij")
    # first axis fastest, consistent with tensor_basis node ordering
    pts = np.stack([g.reshape(-1, order="F") for g in grids], axis=-1)
    wgrids = np.meshgrid(*([w1] * dims), indexing="ij")
    w = np.ones(n**dims)
    for g in wgrids:
        w *= g.reshape(-1, order="F")
    return pts, w
