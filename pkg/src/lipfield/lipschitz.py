"""Lipschitz machinery for the damage field.

The damage lives on the Lip-mesh vertices and must stay 1/l-Lipschitz:
per Lip triangle ||grad d|| <= 1/l (the set checked with "Lh"), implied
along every edge |d_i - d_j| <= ||x_i - x_j||/l ("Lh_plus"). The damage
update is a convex minimization under these constraints, accelerated by
Dijkstra envelope bounds that freeze every vertex whose value is already
decided.

The constrained minimizer is an ADMM splitting: the coupling through the
gradient operator sits in a quadratic penalty (sparse direct solves in
the x block), the cone and box constraints become cheap projections, and
warm starts from the local field carry over untouched. KKT residuals are
checked explicitly before returning.
"""

import heapq
import logging
from collections import namedtuple

import numpy as np
from dataclasses import dataclass
from scipy.optimize import minimize as _scipy_minimize
from scipy.sparse import bmat, coo_matrix, csr_matrix, diags, identity
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra
from scipy.sparse.linalg import splu

from .material import (MaterialParams, damage_coeffs, phi_prime_of_d,
                       phi_second_of_d, principal_from_voigt,
                       local_update_field)
from .mesh import EdgeGraph, LipMesh

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoundsPair:
    lower: np.ndarray
    upper: np.ndarray


class PatchInfeasible(RuntimeError):
    """No field in the patch box satisfies the gradient constraints.

    Carries the frozen vertices implicated by the feasibility probe so
    the caller can release exactly those and retry.
    """

    def __init__(self, vertices):
        super().__init__("frozen patch values admit no Lipschitz field")
        self.vertices = vertices


@dataclass(frozen=True)
class Patch:
    """Frozen vertices with their values, and the active remainder.

    active_triangles lists every Lip triangle with at least one active
    vertex; the complement T^l touches frozen vertices only. Active
    vertices carry the box [lower, 1].
    """
    frozen: np.ndarray            # (n,) bool, True on V^l
    values: np.ndarray            # (n,) field, binding on frozen vertices
    lower: np.ndarray             # (n,) box lower bound (d_n)
    active_triangles: np.ndarray  # indices into lip.triangles

    @property
    def n_active(self):
        return int((~self.frozen).sum())


# ---------------------------------------------------------------------------
# Local update and envelope bounds
# ---------------------------------------------------------------------------

def local_field_update(strains, d_n, mat: MaterialParams, tol=1.0e-10):
    """Pointwise constrained minimizer of f over [d_n, 1], one per element.

    strains: (n, 3) Voigt [exx, eyy, gamma_xy]. Uses the material's
    residual stiffness floor so the minimized density is exactly the one
    the equilibrium solve works with.
    """
    e1, e2 = principal_from_voigt(strains)
    w, a = damage_coeffs(e1, e2, mat)
    return local_update_field(w, a, d_n, mat, tol=tol, k_res=mat.k_res)


def _lower_envelope(vals, graph: EdgeGraph, l):
    """min_y (vals(y) + dist(x, y)/l) by multi-source Dijkstra.

    Binary heap with lazy decrease-key: stale entries are skipped on pop.
    """
    best = np.array(vals, dtype=float)
    heap = [(best[v], v) for v in range(graph.n)]
    heapq.heapify(heap)
    settled = np.zeros(graph.n, dtype=bool)
    indptr, indices, weights = graph.indptr, graph.indices, graph.weights
    while heap:
        key, v = heapq.heappop(heap)
        if settled[v] or key > best[v]:
            continue
        settled[v] = True
        for idx in range(indptr[v], indptr[v + 1]):
            u = indices[idx]
            cand = key + weights[idx] / l
            if cand < best[u]:
                best[u] = cand
                heapq.heappush(heap, (cand, u))
    return best


def dijkstra_bounds(d_loc, graph: EdgeGraph, l) -> BoundsPair:
    """Envelopes min_y(d_loc + dist/l) and max_y(d_loc - dist/l)."""
    if l <= 0.0:
        raise ValueError("regularizing length l must be positive")
    d_loc = np.asarray(d_loc, dtype=float)
    lower = _lower_envelope(d_loc, graph, l)
    upper = -_lower_envelope(-d_loc, graph, l)
    return BoundsPair(lower=lower, upper=upper)


def bruteforce_bounds(d_loc, graph: EdgeGraph, l) -> BoundsPair:
    """Same envelopes from explicit all-pairs distances (validation only)."""
    if l <= 0.0:
        raise ValueError("regularizing length l must be positive")
    d_loc = np.asarray(d_loc, dtype=float)
    adj = csr_matrix((graph.lengths,
                      (graph.edges[:, 0], graph.edges[:, 1])),
                     shape=(graph.n, graph.n))
    dist = _csgraph_dijkstra(adj, directed=False)
    with np.errstate(invalid="ignore"):
        lower = np.min(d_loc[None, :] + dist / l, axis=1)
        upper = np.max(d_loc[None, :] - dist / l, axis=1)
    return BoundsPair(lower=lower, upper=upper)


def lipschitz_check(d, lip: LipMesh, l, which="Lh"):
    """Max constraint violation (lhs - 1/l); <= 0 means membership.

    which = "Lh": per-triangle gradient norm. which = "Lh_plus": per-edge
    difference quotient.
    """
    d = np.asarray(d, dtype=float)
    if which == "Lh":
        g = np.einsum("tij,tj->ti", lip.grad, d[lip.triangles])
        lhs = np.hypot(g[:, 0], g[:, 1])
    elif which == "Lh_plus":
        lhs = np.abs(d[lip.edges[:, 1]] - d[lip.edges[:, 0]]) \
            / lip.edge_lengths
    else:
        raise ValueError("unknown constraint set %r" % (which,))
    return float(lhs.max() - 1.0 / l)


def extract_patch(bounds: BoundsPair, d_loc, d_n, lip: LipMesh,
                  tol_eq=1.0e-9) -> Patch:
    """Freeze every vertex whose envelopes coincide; keep the rest active.

    The envelope argument pins the edge-wise constrained minimizer
    exactly, but the triangle-gradient minimizer can drift off the
    frozen values (the max of two fields is no longer a nodal
    interpolant), so callers treat the patch as an acceleration and
    certify the result afterwards.
    """
    d_loc = np.asarray(d_loc, dtype=float)
    d_n = np.asarray(d_n, dtype=float)
    frozen = (bounds.upper - bounds.lower) <= tol_eq
    active_any = ~frozen[lip.triangles].all(axis=1)
    return Patch(frozen=frozen, values=d_loc.copy(), lower=d_n.copy(),
                 active_triangles=np.where(active_any)[0])


# ---------------------------------------------------------------------------
# Constrained minimization (ADMM splitting)
# ---------------------------------------------------------------------------

def _ball_project(v, radius):
    nv = np.hypot(v[:, 0], v[:, 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(nv > radius, radius / nv, 1.0)
    return v * scale[:, None]


# scaled gradient operator over the active triangles of a patch: K maps
# active vertex values to stacked per-triangle gradients (2 rows each,
# offset b carrying the frozen contributions), cols the local column of
# each triangle vertex (-1 where frozen), G the scaled gradient blocks
ConeOp = namedtuple("ConeOp", "K b act scales cols G")


def _active_cone_operator(patch: Patch, lip: LipMesh) -> ConeOp:
    """Build the scaled cone operator for the active part of a patch.

    Each triangle's 2-row gradient block is divided by its Frobenius norm
    so all rows sit at unit scale; the per-triangle constraint radii pick
    up the same factor (held in scales). Without this a single penalty
    cannot serve the box block and the h-sized gradient rows at once.
    """
    act = np.where(~patch.frozen)[0]
    amap = np.full(len(patch.frozen), -1, dtype=np.int64)
    amap[act] = np.arange(act.size)
    at = patch.active_triangles
    tv = lip.triangles[at]
    G = lip.grad[at]
    scales = 1.0 / np.maximum(np.sqrt((G ** 2).sum(axis=(1, 2))), 1.0e-300)
    G = G * scales[:, None, None]
    k = len(at)
    cols = amap[tv]
    rows_, cols_, vals_ = [], [], []
    for j in range(3):
        lj = cols[:, j]
        m = lj >= 0
        for r in range(2):
            rows_.append(2 * np.arange(k)[m] + r)
            cols_.append(lj[m])
            vals_.append(G[m, r, j])
    K = coo_matrix((np.concatenate(vals_),
                    (np.concatenate(rows_), np.concatenate(cols_))),
                   shape=(2 * k, act.size)).tocsr()
    base = patch.values.copy()
    base[act] = 0.0
    b = np.einsum("kij,kj->ki", G, base[tv]).ravel()
    return ConeOp(K=K, b=b, act=act, scales=scales, cols=cols, G=G)


def _kkt_residuals(x, p_flat, grad, K, b, lo, hi, radius, scales):
    """(feasibility, projected-gradient stationarity, complementarity).

    Feasibility is reported in unscaled units (||grad d|| - 1/l), the
    other two in the scaled metric the solver works in.
    """
    y = (K @ x + b).reshape(-1, 2)
    ny = np.hypot(y[:, 0], y[:, 1])
    feas = float(np.maximum((ny - radius) / scales, 0.0).max(initial=0.0))
    s = grad + K.T @ p_flat
    at_lo = x <= lo + 1.0e-12
    at_hi = x >= hi - 1.0e-12
    pg = np.where(at_lo, np.maximum(-s, 0.0),
                  np.where(at_hi, np.maximum(s, 0.0), np.abs(s)))
    p = p_flat.reshape(-1, 2)
    np_norm = np.hypot(p[:, 0], p[:, 1])
    compl = float((np_norm * np.maximum(radius - ny, 0.0)).max(initial=0.0))
    return feas, float(pg.max(initial=0.0)), compl


def _kkt_newton(xw, lam, C, free, cone: ConeOp, radius, grad, hess):
    """Newton solve of the KKT system on fixed working sets.

    Pinned coordinates of xw stay put; the cone constraints listed in C
    are smooth equalities with multipliers lam (signs are the caller's
    problem). Returns the refined (xw, lam, stacked dual, stationarity
    vector); an iterate that missed the inner tolerance is still handed
    back (incompatible working sets show up as blown-up multipliers that
    the caller's sign rule then drops), None only on actual divergence.
    """
    K, b, cols, G = cone.K, cone.b, cone.cols, cone.G
    n = xw.size
    nt = len(radius)
    fidx = np.where(free)[0]
    nf = fidx.size
    fmap = np.full(n, -1, dtype=np.int64)
    fmap[fidx] = np.arange(nf)
    GC = G[C]
    colC = cols[C]

    def residuals(xw, lam):
        y = (K @ xw + b).reshape(-1, 2)
        nyC = np.maximum(np.hypot(y[C, 0], y[C, 1]), 1.0e-12)
        yhat = y[C] / nyC[:, None]
        p_full = np.zeros((nt, 2))
        p_full[C] = lam[:, None] * yhat
        gL = grad(xw) + K.T @ p_full.ravel()
        return y, nyC, yhat, p_full.ravel(), gL, nyC - radius[C]

    top0 = np.inf
    for k in range(15):
        y, nyC, yhat, p_flat, gL, cres = residuals(xw, lam)
        r1 = gL[fidx]
        top = max(float(np.abs(r1).max(initial=0.0)),
                  float(np.abs(cres).max(initial=0.0)))
        if k == 0:
            top0 = top
        if top <= 1.0e-13 * (1.0 + float(np.abs(grad(xw)).max(initial=0.0))):
            break
        # curvature of the norm constraints, restricted to free coords
        yB = np.einsum("ir,irj->ij", yhat, GC)
        if len(C):
            Bdot = np.einsum("irj,irl->ijl", GC, GC)
            block = (Bdot - yB[:, :, None] * yB[:, None, :]) \
                * (lam / nyC)[:, None, None]
            rr = np.repeat(colC, 3, axis=1).ravel()
            cc = np.tile(colC, (1, 3)).ravel()
            vv = block.ravel()
            m = (rr >= 0) & (cc >= 0) & (fmap[np.maximum(rr, 0)] >= 0) \
                & (fmap[np.maximum(cc, 0)] >= 0)
            Hc = coo_matrix((vv[m], (fmap[rr[m]], fmap[cc[m]])),
                            shape=(nf, nf))
            jr, jc, jv = [], [], []
            for j in range(3):
                cj = colC[:, j]
                mm = (cj >= 0) & (fmap[np.maximum(cj, 0)] >= 0)
                jr.append(np.where(mm)[0])
                jc.append(fmap[cj[mm]])
                jv.append(yB[mm, j])
            J = coo_matrix((np.concatenate(jv),
                            (np.concatenate(jr), np.concatenate(jc))),
                           shape=(len(C), nf)).tocsr()
        else:
            Hc = coo_matrix((nf, nf))
            J = csr_matrix((0, nf))
        Hf = hess(xw).tocsr()[fidx][:, fidx] + Hc
        if len(C):
            kkt = bmat([[Hf, J.T],
                        [J, -1.0e-12 * identity(len(C))]], format="csc")
            rhs = np.concatenate([-r1, -cres])
        else:
            kkt = Hf.tocsc()
            rhs = -r1
        try:
            sol = splu(kkt).solve(rhs)
        except RuntimeError:
            return None
        if not np.isfinite(sol).all():
            return None
        step = min(1.0, 1.0 / max(1.0, float(np.abs(sol[:nf])
                                             .max(initial=0.0))))
        xw[fidx] += step * sol[:nf]
        lam += step * sol[nf:]
    else:
        if not np.isfinite(xw).all() or top > 1.0e3 * (1.0 + top0):
            return None
    y, nyC, yhat, p_flat, gL, cres = residuals(xw, lam)
    return xw, lam, p_flat, gL


def _active_set_solve(x, p2, cone: ConeOp, radius, grad, hess, lo, hi,
                      tol_kkt, max_rounds=25):
    """Primal-dual active-set solve of the patch optimality system.

    Alternates the fixed-set Newton solve with working-set updates: box
    and cone constraints violated at the iterate are added, constraints
    with negative multipliers are dropped. A wrong initial guess corrects
    itself in a few rounds instead of failing outright; cycling past the
    round budget returns None and the operator-splitting solver takes
    over. On success the full first-order conditions are verified to
    tol_kkt, so a certificate from here is as good as one from the
    splitting iteration.
    """
    K, b, scales = cone.K, cone.b, cone.scales
    y = (K @ x + b).reshape(-1, 2)
    ny = np.hypot(y[:, 0], y[:, 1])
    inC = (ny - radius) >= -1.0e-9
    fix_lo = (x - lo) <= 1.0e-9
    fix_hi = ((hi - x) <= 1.0e-9) & ~fix_lo
    pm = p2.reshape(-1, 2)
    lam_full = np.hypot(pm[:, 0], pm[:, 1])
    xw = np.clip(x, lo, hi)
    for _ in range(max_rounds):
        xw[fix_lo] = lo[fix_lo]
        xw[fix_hi] = hi[fix_hi]
        C = np.where(inC)[0]
        out = _kkt_newton(xw, lam_full[C].copy(), C, ~(fix_lo | fix_hi),
                          cone, radius, grad, hess)
        if out is None:
            return None
        xw, lamC, p_flat, gL = out
        lam_full[:] = 0.0
        lam_full[C] = lamC
        y = (K @ xw + b).reshape(-1, 2)
        ny = np.hypot(y[:, 0], y[:, 1])
        gscale = 1.0 + float(np.abs(grad(xw)).max(initial=0.0))
        lscale = 1.0 + float(lamC.max(initial=0.0))
        drop_c = np.zeros_like(inC)
        drop_c[C[lamC < -1.0e-10 * lscale]] = True
        add_c = ~inC & ((ny - radius) / scales > 1.0e-9)
        add_lo = ~(fix_lo | fix_hi) & (xw < lo - 1.0e-9)
        add_hi = ~(fix_lo | fix_hi) & (xw > hi + 1.0e-9)
        drop_lo = fix_lo & (gL < -1.0e-10 * gscale)
        drop_hi = fix_hi & (gL > 1.0e-10 * gscale)
        if not (drop_c.any() or add_c.any() or add_lo.any() or add_hi.any()
                or drop_lo.any() or drop_hi.any()):
            xw = np.clip(xw, lo, hi)
            lam_full = np.maximum(lam_full, 0.0)
            feas, stat, compl = _kkt_residuals(xw, p_flat, grad(xw), K, b,
                                               lo, hi, radius, scales)
            if feas <= tol_kkt and stat <= tol_kkt * gscale \
                    and compl <= tol_kkt * gscale:
                return xw, p_flat
            return None
        inC[drop_c] = False
        lam_full[drop_c] = 0.0
        inC |= add_c
        fix_lo = (fix_lo | add_lo) & ~drop_lo
        fix_hi = ((fix_hi | add_hi) & ~drop_hi) & ~fix_lo
    return None


def constrained_damage_minimize(strains, areas, patch: Patch, lip: LipMesh,
                                mat: MaterialParams, tol_kkt=1.0e-8,
                                max_iter=20000, dual_seed=None,
                                return_duals=False):
    """Minimize sum_e A_e f(eps_e, d_e) on the patch under the cone bounds.

    Frozen vertices keep their patch values; active vertices carry the box
    [d_n, 1] and every active triangle the constraint ||grad d|| <= 1/l.
    Warm-started from the clipped patch values; returns a field feasible
    and stationary to tol_kkt. dual_seed, one 2-vector per active
    triangle, primes the constraint multipliers (they converge far slower
    than the primal field, so recycling them across related solves is the
    difference between one Newton round and hundreds of splitting
    sweeps); with return_duals=True the multipliers found are handed back
    alongside the field for exactly that reuse.
    """
    values = patch.values
    if patch.n_active == 0:
        if return_duals:
            return values.copy(), np.zeros(2 * len(patch.active_triangles))
        return values.copy()
    cone = _active_cone_operator(patch, lip)
    K, b, act, scales = cone.K, cone.b, cone.act, cone.scales
    KtK = (K.T @ K).tocsc()
    radius = scales / mat.l

    e1, e2 = principal_from_voigt(np.asarray(strains, dtype=float)[act])
    w, a = damage_coeffs(e1, e2, mat)
    A_act = np.asarray(areas, dtype=float)[act]
    lo = patch.lower[act]
    hi = np.ones_like(lo)
    Yc, eta, k_res = mat.Yc, mat.eta, mat.k_res

    def grad_f(x):
        return A_act * (phi_prime_of_d(w, a, x, eta, k_res)
                        + Yc * (2.0 + 6.0 * x))

    def hess_f(x):
        return A_act * (phi_second_of_d(w, a, x, eta, k_res) + 6.0 * Yc)

    def done(x_final, p_flat):
        out = values.copy()
        out[act] = x_final
        if return_duals:
            return out, np.asarray(p_flat, dtype=float)
        return out

    p_seed = np.zeros(2 * len(scales)) if dual_seed is None \
        else np.asarray(dual_seed, dtype=float).ravel()
    x = np.clip(values[act], lo, 1.0)
    z1 = x.copy()
    u1 = np.zeros_like(x)
    y = (K @ x + b).reshape(-1, 2)
    z2 = _ball_project(y, radius)
    # the active-set solve handles most patches in a few Newton rounds;
    # the splitting iteration below is the fallback when its working
    # sets cycle (degenerate actives, infeasible frozen values)
    pol = _active_set_solve(x.copy(), p_seed, cone, radius, grad_f,
                            lambda v: diags(hess_f(v)).tocsr(),
                            lo, hi, tol_kkt)
    if pol is not None:
        return done(pol[0], pol[1])
    # penalty balancing the objective curvature against the cone rows
    rho = float(max(hess_f(x).max(), 1.0e-8))
    u2 = p_seed.reshape(-1, 2) / rho
    feas = stat = compl = np.inf
    frozen_any = bool(patch.frozen.any())
    probe_at, probe_feas = 250, np.inf
    lu, lu_diag = None, None
    for it in range(1, max_iter + 1):
        # x block: smooth strictly convex, damped Newton on the gradient
        rhs2 = (z2 - u2).ravel() - b
        for _ in range(8):
            r = grad_f(x) + rho * (x - z1 + u1) + rho * (K.T @ (K @ x - rhs2))
            rn = float(np.abs(r).max())
            if rn <= 1.0e-12 * (1.0 + rho):
                break
            hd = hess_f(x) + rho
            # a slightly stale factorization still gives a descent
            # direction; the residual line search guards the step
            if lu is None or \
                    float((np.abs(hd - lu_diag) / lu_diag).max()) > 0.05:
                lu = splu((diags(hd) + rho * KtK).tocsc())
                lu_diag = hd
            dx = lu.solve(-r)
            step, improved = 1.0, False
            for _ in range(6):
                xn = x + step * dx
                r2 = grad_f(xn) + rho * (xn - z1 + u1) \
                    + rho * (K.T @ (K @ xn - rhs2))
                if float(np.abs(r2).max()) <= rn:
                    improved = True
                    break
                step *= 0.5
            x = x + step * dx
            if not improved:
                lu = None
        z1_old, z2_old = z1, z2
        z1 = np.clip(x + u1, lo, 1.0)
        y = (K @ x + b).reshape(-1, 2)
        z2 = _ball_project(y + u2, radius)
        u1 = u1 + x - z1
        u2 = u2 + y - z2
        if it % 5 == 0:
            x_ret = np.clip(x, lo, 1.0)
            feas, stat, compl = _kkt_residuals(
                x_ret, rho * u2.ravel(), grad_f(x_ret), K, b, lo, hi, radius,
                scales)
            scale = 1.0 + float(np.abs(grad_f(x_ret)).max())
            if feas <= tol_kkt and stat <= tol_kkt * scale \
                    and compl <= tol_kkt * scale:
                return done(x_ret, rho * u2.ravel())
        if it % 50 == 0:
            pol = _active_set_solve(np.clip(x, lo, 1.0), rho * u2.ravel(),
                                    cone, radius, grad_f,
                                    lambda v: diags(hess_f(v)).tocsr(),
                                    lo, hi, tol_kkt)
            if pol is not None:
                return done(pol[0], pol[1])
        if it == probe_at and frozen_any:
            # a feasibility gap that stopped shrinking usually means the
            # frozen values are incompatible with the cone set; probing
            # early avoids burning the whole budget on an infeasible patch
            if feas > 50.0 * tol_kkt and feas > 0.5 * probe_feas:
                verts = _infeasible_frozen_release(patch, lip, mat, 1.0e-8)
                if verts is not None:
                    raise PatchInfeasible(verts)
                probe_at = it + 2000
            else:
                probe_at = it + 250
            probe_feas = feas
        if it % 25 == 0 and it < max_iter // 2:
            r_prim = max(float(np.abs(x - z1).max()),
                         float(np.abs(y - z2).max()))
            r_dual = rho * max(float(np.abs(z1 - z1_old).max()),
                               float(np.abs(K.T @ (z2 - z2_old).ravel())
                                     .max()))
            if r_prim > 10.0 * r_dual:
                rho *= 2.0
                u1 *= 0.5
                u2 *= 0.5
                lu = None
            elif r_dual > 10.0 * r_prim:
                rho *= 0.5
                u1 *= 2.0
                u2 *= 2.0
                lu = None
    raise RuntimeError(
        "constrained damage minimization did not converge in %d iterations "
        "(feasibility %.3e, stationarity %.3e, complementarity %.3e)"
        % (max_iter, feas, stat, compl))


# ---------------------------------------------------------------------------
# The damage step (Steps 1-4) and its full-domain oracle
# ---------------------------------------------------------------------------

def _violating_triangles(d, lip: LipMesh, l, tol):
    g = np.einsum("tij,tj->ti", lip.grad, d[lip.triangles])
    return np.where(np.hypot(g[:, 0], g[:, 1]) > 1.0 / l + tol)[0]


def _box_minimize(fun_and_grad, x0, lo):
    res = _scipy_minimize(fun_and_grad, x0, jac=True, method="L-BFGS-B",
                          bounds=[(low, 1.0) for low in lo],
                          options={"maxiter": 5000, "ftol": 1.0e-18,
                                   "gtol": 1.0e-14})
    return res.x


def _frozen_pair_conflicts(patch: Patch, lip: LipMesh, l, tol):
    """Frozen vertices of active triangles that are infeasible outright.

    An active triangle with two frozen vertices constrains a single free
    value; minimizing ||grad d|| over its box is a scalar quadratic, so
    incompatibility is detectable without running the solver. Returns the
    offending frozen vertices or None. Cheaper screen than the hinge
    minimization in _infeasible_frozen_release, which remains the
    backstop for conflicts spread across several triangles.
    """
    tv = lip.triangles[patch.active_triangles]
    fz = patch.frozen[tv]
    two = np.where(fz.sum(axis=1) == 2)[0]
    if two.size == 0:
        return None
    G = lip.grad[patch.active_triangles][two]
    vals = patch.values[tv[two]]
    rows = np.arange(two.size)
    free_j = np.argmin(fz[two], axis=1)
    c1 = G[rows, :, free_j]
    base = np.einsum("kij,kj->ki", G, np.where(fz[two], vals, 0.0))
    lo = patch.lower[tv[two][rows, free_j]]
    den = np.maximum((c1 ** 2).sum(axis=1), 1.0e-300)
    v = np.clip(-np.einsum("ki,ki->k", base, c1) / den, lo, 1.0)
    g = base + c1 * v[:, None]
    bad = np.hypot(g[:, 0], g[:, 1]) > 1.0 / l + tol
    if not bad.any():
        return None
    return np.unique(tv[two][bad][fz[two][bad]])


def _infeasible_frozen_release(patch: Patch, lip: LipMesh, mat, tol):
    """Frozen vertices blocking patch feasibility, or None if none do.

    Minimizes the squared hinge of the cone violations over the active
    box (smooth convex, so the minimum certifies feasibility). Needed
    because the envelopes freeze values consistent with the edge-wise
    Lipschitz set only; on irregular meshes they can be incompatible
    with the triangle-gradient set the minimization enforces.
    """
    cone = _active_cone_operator(patch, lip)
    K, b, act, scales = cone.K, cone.b, cone.act, cone.scales
    radius = scales / mat.l
    lo = patch.lower[act]

    def hinge(x):
        y = (K @ x + b).reshape(-1, 2)
        ny = np.hypot(y[:, 0], y[:, 1])
        h = np.maximum(ny - radius, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            coef = np.where(ny > 0.0, h / ny, 0.0)
        return 0.5 * float(h @ h), K.T @ (coef[:, None] * y).ravel()

    x0 = np.clip(patch.values[act], lo, 1.0)
    res = _box_minimize(hinge, x0, lo)
    y = (K @ res + b).reshape(-1, 2)
    over = (np.hypot(y[:, 0], y[:, 1]) - radius) / scales
    bad = patch.active_triangles[over > tol]
    if bad.size == 0:
        return None
    verts = np.unique(lip.triangles[bad].ravel())
    verts = verts[patch.frozen[verts]]
    if verts.size == 0:
        # conflict not attributable to specific frozen values; release all
        verts = np.where(patch.frozen)[0]
    return verts


def damage_step(strains, areas, d_n, lip: LipMesh, graph: EdgeGraph,
                mat: MaterialParams, tol_eq=1.0e-9, tol_release=1.0e-8,
                tol_kkt=1.0e-8, tol_local=1.0e-10, max_iter=20000,
                validate=False, warm=None, warm_duals=None,
                return_info=False):
    """One damage update: local step, bounds, patch minimization, release.

    Returns the new field in the intersection of the irreversibility box
    and the per-triangle Lipschitz set. If the local field already
    satisfies the gradient constraints it is optimal and returned as is.
    warm, when given, seeds the active vertices of the solve (a staggered
    caller passes its previous iterate, which is feasible and close), and
    warm_duals, one 2-vector per Lip triangle, seeds the constraint
    multipliers; neither influences what is frozen or the certified
    result. With return_info=True the result comes back as
    (field, duals) so the caller can recycle the multipliers.

    The envelope bounds pin the minimizer of the edge-constrained
    relaxation, not of the triangle-constrained problem solved here, so
    freezing the coincidence region is an acceleration heuristic. The
    patched solution is therefore certified against the optimality
    conditions of the unpatched problem before being returned; if the
    certificate fails, the full problem is re-solved starting from the
    patched field. With validate=True the Dijkstra envelopes are checked
    against the brute-force ones and the result against an independent
    cold-started full-domain minimization.
    """
    d_n = np.asarray(d_n, dtype=float)
    d_loc = local_field_update(strains, d_n, mat, tol=tol_local)
    if lipschitz_check(d_loc, lip, mat.l, "Lh") <= tol_release:
        # unconstrained minimizer: every multiplier is zero
        if return_info:
            return d_loc, np.zeros((lip.n_triangles, 2))
        return d_loc
    bounds = dijkstra_bounds(d_loc, graph, mat.l)
    if validate:
        ref = bruteforce_bounds(d_loc, graph, mat.l)
        gap = max(np.abs(bounds.lower - ref.lower).max(),
                  np.abs(bounds.upper - ref.upper).max())
        if gap > 1.0e-12:
            raise RuntimeError("envelope mismatch between Dijkstra and "
                               "brute force: %.3e" % gap)
    patch = extract_patch(bounds, d_loc, d_n, lip, tol_eq)
    if warm is not None:
        w = np.clip(np.asarray(warm, dtype=float), patch.lower, 1.0)
        patch = Patch(frozen=patch.frozen,
                      values=np.where(patch.frozen, patch.values, w),
                      lower=patch.lower,
                      active_triangles=patch.active_triangles)
    frozen = patch.frozen.copy()
    while True:
        seed = patch.values
        # screen the frozen set before solving: triangles whose vertices
        # are all frozen never reach the solver's constraint list, and a
        # two-frozen active triangle can be checked by a scalar quadratic
        viol = _violating_triangles(patch.values, lip, mat.l, tol_release)
        viol = viol[frozen[lip.triangles[viol]].all(axis=1)]
        verts = np.unique(lip.triangles[viol].ravel()) if viol.size \
            else _frozen_pair_conflicts(patch, lip, mat.l, tol_release)
        if verts is not None:
            log.debug("releasing %d frozen vertices with conflicting "
                      "values", verts.size)
            frozen[verts] = False
        else:
            try:
                d = constrained_damage_minimize(strains, areas, patch, lip,
                                                mat, tol_kkt, max_iter)
            except PatchInfeasible as exc:
                if not frozen.any():
                    raise
                log.warning("releasing %d frozen vertices blocking patch "
                            "feasibility", exc.vertices.size)
                frozen[exc.vertices] = False
            except RuntimeError:
                # frozen values may be incompatible with the gradient bounds
                release = _infeasible_frozen_release(patch, lip, mat,
                                                     tol_release)
                if release is None or not frozen.any():
                    raise
                log.warning("releasing %d frozen vertices blocking patch "
                            "feasibility", release.size)
                frozen[release] = False
            else:
                viol = _violating_triangles(d, lip, mat.l, tol_release)
                viol = viol[frozen[lip.triangles[viol]].all(axis=1)]
                if viol.size == 0:
                    break
                # release the offending frozen triangles and their vertices
                frozen[lip.triangles[viol].ravel()] = False
                seed = d
        active_any = ~frozen[lip.triangles].all(axis=1)
        patch = Patch(frozen=frozen, values=seed,
                      lower=patch.lower,
                      active_triangles=np.where(active_any)[0])
    # certify against the unpatched problem; a correct patch makes this a
    # single Newton polish, a wrong one falls back to a warm full solve
    whole = Patch(frozen=np.zeros(len(d_n), dtype=bool), values=d,
                  lower=d_n.copy(),
                  active_triangles=np.arange(lip.n_triangles))
    d = constrained_damage_minimize(strains, areas, whole, lip, mat,
                                    tol_kkt, max_iter)
    if validate:
        ref = full_domain_minimize(strains, areas, d_n, lip, mat,
                                   tol_kkt, max_iter)
        gap = float(np.abs(d - ref).max())
        if gap > 1.0e-6:
            log.warning("patched and full-domain damage steps differ by "
                        "%.3e in max norm", gap)
    return d


def full_domain_minimize(strains, areas, d_n, lip: LipMesh,
                         mat: MaterialParams, tol_kkt=1.0e-8,
                         max_iter=20000):
    """Constrained minimization over the whole Lip-mesh (no patching).

    Reference implementation used by validation mode and testing; the
    result should match damage_step up to solver tolerance.
    """
    d_n = np.asarray(d_n, dtype=float)
    d_loc = local_field_update(strains, d_n, mat)
    patch = Patch(frozen=np.zeros(len(d_n), dtype=bool), values=d_loc,
                  lower=d_n.copy(),
                  active_triangles=np.arange(lip.n_triangles))
    return constrained_damage_minimize(strains, areas, patch, lip, mat,
                                       tol_kkt, max_iter)


# ---------------------------------------------------------------------------
# L2 projection onto the Lipschitz set (benchmark)
# ---------------------------------------------------------------------------

def _lip_areas(lip: LipMesh):
    p = lip.points[lip.triangles]
    v1 = p[:, 1] - p[:, 0]
    v2 = p[:, 2] - p[:, 0]
    return 0.5 * (v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0])


def consistent_mass(lip: LipMesh):
    """Exact mass matrix of the linear Lip-mesh interpolation."""
    areas = _lip_areas(lip)
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    rows = np.repeat(lip.triangles, 3, axis=1).ravel()
    cols = np.tile(lip.triangles, (1, 3)).ravel()
    vals = (areas[:, None, None] * local[None, :, :]).ravel()
    n = lip.n_vertices
    return coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()


def lip_project_L2(d_in, lip: LipMesh, l, tol=1.0e-8, max_iter=50000):
    """Closest field in the per-triangle Lipschitz set, L2 distance.

    Consistent-mass quadrature of the norm on the Lip-mesh; ADMM with the
    quadratic x block pre-factored per penalty value. Idempotent on
    feasible inputs.
    """
    if l <= 0.0:
        raise ValueError("regularizing length l must be positive")
    d_in = np.asarray(d_in, dtype=float)
    n = lip.n_vertices
    full = Patch(frozen=np.zeros(n, dtype=bool), values=d_in,
                 lower=np.full(n, -np.inf),
                 active_triangles=np.arange(lip.n_triangles))
    cone = _active_cone_operator(full, lip)
    K, scales = cone.K, cone.scales
    KtK = (K.T @ K).tocsc()
    M = consistent_mass(lip)
    Md = M @ d_in
    radius = scales / l
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)

    rho = float(M.diagonal().max())
    solver = splu((M + rho * KtK).tocsc())
    x = d_in.copy()
    y = (K @ x).reshape(-1, 2)
    z2 = _ball_project(y, radius)
    u2 = np.zeros_like(z2)
    feas = stat = np.inf
    for it in range(1, max_iter + 1):
        x = solver.solve(Md + rho * (K.T @ (z2 - u2).ravel()))
        z2_old = z2
        y = (K @ x).reshape(-1, 2)
        z2 = _ball_project(y + u2, radius)
        u2 = u2 + y - z2
        if it % 5 == 0:
            ny = np.hypot(y[:, 0], y[:, 1])
            feas = float(np.maximum((ny - radius) / scales, 0.0).max())
            grad = M @ (x - d_in)
            s = grad + K.T @ (rho * u2).ravel()
            scale = 1.0 + float(np.abs(grad).max())
            stat = float(np.abs(s).max())
            p = rho * u2
            compl = float((np.hypot(p[:, 0], p[:, 1])
                           * np.maximum(radius - ny, 0.0)).max())
            if feas <= tol and stat <= tol * scale and compl <= tol * scale:
                return x
        if it % 50 == 0:
            pol = _active_set_solve(x.copy(), rho * u2.ravel(), cone, radius,
                                    lambda v: M @ (v - d_in), lambda v: M,
                                    lo, hi, tol)
            if pol is not None:
                return pol[0]
        if it % 25 == 0 and it < max_iter // 2:
            r_prim = float(np.abs(y - z2).max())
            r_dual = rho * float(np.abs(K.T @ (z2 - z2_old).ravel()).max())
            if r_prim > 10.0 * r_dual:
                rho *= 2.0
                u2 *= 0.5
                solver = splu((M + rho * KtK).tocsc())
            elif r_dual > 10.0 * r_prim:
                rho *= 0.5
                u2 *= 2.0
                solver = splu((M + rho * KtK).tocsc())
    raise RuntimeError(
        "Lipschitz projection did not converge in %d iterations "
        "(feasibility %.3e, stationarity %.3e)" % (max_iter, feas, stat))
