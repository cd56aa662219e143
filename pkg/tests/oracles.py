"""Independent reference computations used by the test suite.

These deliberately avoid the package's own fast paths: brute-force grid
scans, sequential load sweeps, and all-pairs shortest-path envelopes via
scipy.sparse.csgraph. Slow and dumb on purpose.
"""

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as csgraph_dijkstra

from lipfield.material import Strain2D, local_objective_f, local_damage_update


def grid_scan_damage(eps, d_n, mat, n=10001):
    """Minimize f(eps, .) over [d_n, 1] by exhaustive evaluation."""
    grid = np.linspace(d_n, 1.0, n)
    vals = [local_objective_f(eps, d, mat) for d in grid]
    return grid[int(np.argmin(vals))]


def sweep_uniaxial(mat, step, eps_max):
    """Sequential monotonic uniaxial-strain sweep.

    Applies exx = k*step with the damage carried from one level to the
    next. Returns (strains, damages) arrays.
    """
    n = int(np.floor(eps_max / step)) + 1
    strains = step * np.arange(1, n + 1)
    d = 0.0
    out = np.empty(n)
    for k, exx in enumerate(strains):
        d = local_damage_update(Strain2D(exx, 0.0, 0.0), d, mat)
        out[k] = d
    return strains, out


def grid_scan_field(strains, areas, d_n, lip, mat, levels=201):
    """Constrained field minimizer by exhaustive grid search.

    Scans the tensor grid of per-vertex damage levels between d_n and 1,
    discards points violating any triangle gradient bound, and returns
    the feasible grid point with the least total incremental potential.
    Only tractable for meshes with a handful of Lip vertices.
    """
    from lipfield.material import _g, damage_coeffs, principal_from_voigt

    n = lip.n_vertices
    axes = [np.linspace(d_n[i], 1.0, levels) for i in range(n)]
    grids = np.meshgrid(*axes, indexing="ij")
    d = np.stack([g.ravel() for g in grids], axis=1)   # (levels**n, n)
    ok = np.ones(len(d), dtype=bool)
    for t in range(lip.n_triangles):
        tv = lip.triangles[t]
        g = d[:, tv] @ lip.grad[t].T
        ok &= np.hypot(g[:, 0], g[:, 1]) <= 1.0 / mat.l + 1.0e-12
    d = d[ok]
    e1, e2 = principal_from_voigt(np.asarray(strains, dtype=float))
    w, a = damage_coeffs(e1, e2, mat)
    total = np.zeros(len(d))
    for i in range(n):
        gv = _g(a[i][None, :] * d[:, i, None], mat.eta)
        total += areas[i] * (gv @ w[i]
                             + mat.Yc * (2.0 * d[:, i] + 3.0 * d[:, i] ** 2))
    best = int(np.argmin(total))
    return d[best], float(total[best])


def allpairs_graph_distance(n_vertices, edges, lengths):
    """Dense all-pairs edge-path distance matrix via scipy csgraph."""
    edges = np.asarray(edges)
    w = csr_matrix((np.asarray(lengths, dtype=float),
                    (edges[:, 0], edges[:, 1])),
                   shape=(n_vertices, n_vertices))
    return csgraph_dijkstra(w, directed=False)


def envelope_bounds_bruteforce(d_loc, dist, l):
    """Lower/upper Lipschitz envelopes from a dense distance matrix."""
    d_loc = np.asarray(d_loc, dtype=float)
    lower = np.min(d_loc[None, :] + dist / l, axis=1)
    upper = np.max(d_loc[None, :] - dist / l, axis=1)
    return lower, upper
