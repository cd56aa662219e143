"""Displacement equilibrium at fixed damage.

Linear triangles in plane strain. Dirichlet values are eliminated from
the system; rigid-link groups (a boundary tag following a linearized
rigid motion of a master point, each of ux, uy, theta either prescribed
or left free) and tied node pairs are enforced with Lagrange
multipliers, so reactions stay recoverable. The saddle system is solved
with a sparse LU factorization.

The symmetric model (beta = 1) is linear in u and solved directly. For
beta < 1 the energy is minimized by damped Newton steps on a
regime-dependent positive definite surrogate stiffness with an Armijo
backtracking line search.

Units: mm, MPa, N/mm (forces per unit thickness).
"""

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse import bmat, coo_matrix, csr_matrix
from scipy.sparse.linalg import splu

from .material import (MaterialParams, Strain2D, _g, damage_coeffs,
                       phi_of_d, principal_from_voigt, stress)
from .mesh import FeMesh

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Constraints
# ---------------------------------------------------------------------------

def _bc_value(spec, t):
    """A float c means c*t (proportional loading); a callable means spec(t)."""
    return float(spec(t)) if callable(spec) else float(spec) * t


@dataclass(frozen=True)
class Dirichlet:
    node: int
    comp: int            # 0 -> u_x, 1 -> u_y
    value: object = 0.0  # float coefficient on t, or callable t -> value


@dataclass(frozen=True)
class RigidLink:
    """Boundary tag moving as a linearized rigid motion of a master point.

    u(x, y) = (ux - theta*(y - my), uy + theta*(x - mx)). Each parameter
    is either "free" (unknown with zero generalized force, e.g. a free
    theta makes the grip a frictionless pin) or prescribed like a
    Dirichlet value.
    """
    tag: int
    master: tuple
    ux: object = "free"
    uy: object = "free"
    theta: object = "free"


@dataclass(frozen=True)
class ConstraintSet:
    dirichlet: tuple = ()
    links: tuple = ()
    ties: np.ndarray = None        # (m, 2) coincident node pairs
    tie_active: np.ndarray = None  # (m,) bool


def constraint_set(mesh: FeMesh, dirichlet=(), links=(), ties=None,
                   tie_active=None) -> ConstraintSet:
    """Validated constraint set: no dof claimed twice, ties coincident."""
    claimed = set()
    for bc in dirichlet:
        if not 0 <= bc.node < mesh.n_nodes or bc.comp not in (0, 1):
            raise ValueError("Dirichlet entry out of range: %r" % (bc,))
        key = (bc.node, bc.comp)
        if key in claimed:
            raise ValueError("dof %r constrained twice" % (key,))
        claimed.add(key)
    for link in links:
        for node in mesh.nodes_with_tag(link.tag):
            for comp in (0, 1):
                key = (int(node), comp)
                if key in claimed:
                    raise ValueError("dof %r constrained twice" % (key,))
                claimed.add(key)
    if ties is None:
        ties = np.empty((0, 2), dtype=np.int64)
        tie_active = np.empty(0, dtype=bool)
    else:
        ties = np.asarray(ties, dtype=np.int64)
        if ties.ndim != 2 or ties.shape[1] != 2:
            raise ValueError("ties must be an (m, 2) index array")
        if tie_active is None:
            tie_active = np.ones(len(ties), dtype=bool)
        else:
            tie_active = np.asarray(tie_active, dtype=bool)
            if tie_active.shape != (len(ties),):
                raise ValueError("tie_active must have one flag per pair")
        flat = ties.ravel()
        if len(np.unique(flat)) != flat.size:
            raise ValueError("a node appears in more than one tied pair")
        for node in flat:
            if (int(node), 0) in claimed or (int(node), 1) in claimed:
                raise ValueError("tied node %d already constrained" % node)
        gap = np.linalg.norm(mesh.nodes[ties[:, 0]] - mesh.nodes[ties[:, 1]],
                             axis=1)
        if gap.size and gap.max() >= 1.0e-10 * mesh.bbox_diag:
            raise ValueError("tied pairs must reference coincident nodes "
                             "(max gap %.3e)" % gap.max())
    return ConstraintSet(dirichlet=tuple(dirichlet), links=tuple(links),
                         ties=ties, tie_active=tie_active)


def with_tie_activation(cs: ConstraintSet, active) -> ConstraintSet:
    active = np.asarray(active, dtype=bool)
    if active.shape != (len(cs.ties),):
        raise ValueError("activation mask must have one flag per pair")
    return replace(cs, tie_active=active)


# ---------------------------------------------------------------------------
# Element matrices and assembly
# ---------------------------------------------------------------------------

def elastic_matrix(mat: MaterialParams):
    """Plane-strain Hooke matrix on [exx, eyy, gamma_xy] (3x3, MPa)."""
    lam, mu = mat.lam, mat.mu
    return np.array([[lam + 2.0 * mu, lam, 0.0],
                     [lam, lam + 2.0 * mu, 0.0],
                     [0.0, 0.0, mu]])


def _b_core(p, areas):
    """B operators (m, 3, 6) for triangles p (m, 3, 2): eps = B @ u_el.

    Rows are [exx, eyy, gamma_xy]; element dofs interleave as
    (ux1, uy1, ux2, uy2, ux3, uy3).
    """
    x, y = p[:, :, 0], p[:, :, 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]],
                 axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]],
                 axis=1)
    B = np.zeros((len(p), 3, 6))
    B[:, 0, 0::2] = b
    B[:, 1, 1::2] = c
    B[:, 2, 0::2] = c
    B[:, 2, 1::2] = b
    return B / (2.0 * areas)[:, None, None]


def _b_matrices(mesh: FeMesh):
    return _b_core(mesh.nodes[mesh.triangles], mesh.areas)


def _triangle_area(xy):
    v1 = xy[1] - xy[0]
    v2 = xy[2] - xy[0]
    return 0.5 * (v1[0] * v2[1] - v1[1] * v2[0])


def element_stiffness(xy, d_e, mat: MaterialParams):
    """6x6 stiffness of one counterclockwise triangle at damage d_e.

    The softening multiplier is floored at k_res so the block never
    degenerates completely; three rigid modes stay in the kernel.
    """
    xy = np.asarray(xy, dtype=float)
    area = _triangle_area(xy)
    if area <= 0.0:
        raise ValueError("element must be counterclockwise with area > 0")
    if not 0.0 <= d_e <= 1.0:
        raise ValueError("damage outside [0, 1]")
    B = _b_core(xy[None], np.array([area]))[0]
    g_eff = max(_g(float(d_e), mat.eta), mat.k_res)
    return g_eff * area * (B.T @ elastic_matrix(mat) @ B)


def _element_damage(d, mesh):
    d = np.asarray(d, dtype=float)
    if d.ndim == 0:
        d = np.full(mesh.n_elements, float(d))
    if d.shape != (mesh.n_elements,):
        raise ValueError("damage must be a scalar or one value per element")
    if (d < 0.0).any() or (d > 1.0).any():
        raise ValueError("damage outside [0, 1]")
    return d


def _assemble_scaled(mesh: FeMesh, factors, mat: MaterialParams):
    """Global stiffness (2n x 2n csr) with per-element multipliers."""
    B = _b_matrices(mesh)
    D = elastic_matrix(mat)
    Ke = np.einsum("e,eki,kl,elj->eij", factors * mesh.areas, B, D, B,
                   optimize=True)
    dof = np.empty((mesh.n_elements, 6), dtype=np.int64)
    dof[:, 0::2] = 2 * mesh.triangles
    dof[:, 1::2] = 2 * mesh.triangles + 1
    rows = np.repeat(dof, 6, axis=1).ravel()
    cols = np.tile(dof, (1, 6)).ravel()
    n2 = 2 * mesh.n_nodes
    return coo_matrix((Ke.ravel(), (rows, cols)), shape=(n2, n2)).tocsr()


def assemble_stiffness(mesh: FeMesh, d, mat: MaterialParams):
    """Symmetric-model global stiffness at per-element damage d."""
    d = _element_damage(d, mesh)
    return _assemble_scaled(mesh, np.maximum(_g(d, mat.eta), mat.k_res), mat)


# ---------------------------------------------------------------------------
# Constrained linear solve
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AssembledSystem:
    K: csr_matrix          # full stiffness, all dofs
    saddle: object         # csc matrix on [free dofs, link params, lams]
    rhs: np.ndarray
    free: np.ndarray       # global dof indices of the free unknowns
    u_fix: np.ndarray      # (2n,) prescribed values, 0 on free dofs
    n_params: int
    n_lagrange: int


def _dirichlet_split(mesh, cs, t):
    n2 = 2 * mesh.n_nodes
    u_fix = np.zeros(n2)
    fixed = np.zeros(n2, dtype=bool)
    for bc in cs.dirichlet:
        g = 2 * bc.node + bc.comp
        fixed[g] = True
        u_fix[g] = _bc_value(bc.value, t)
    free = np.where(~fixed)[0]
    fmap = np.full(n2, -1, dtype=np.int64)
    fmap[free] = np.arange(free.size)
    return free, fmap, u_fix


def _constraint_rows(mesh, cs, t, fmap, nf):
    """Sparse coupling rows over [free dofs | link params] and their rhs."""
    rows, cols, vals, rhs = [], [], [], []
    n_par = 0
    par_of = {}
    for link in cs.links:
        for name in ("ux", "uy", "theta"):
            if getattr(link, name) == "free":
                par_of[(link.tag, name)] = nf + n_par
                n_par += 1
    r = 0
    for link in cs.links:
        mx, my = link.master
        for node in mesh.nodes_with_tag(link.tag):
            x, y = mesh.nodes[node]
            arm = ({"ux": 1.0, "theta": -(y - my)},
                   {"uy": 1.0, "theta": x - mx})
            for comp in (0, 1):
                rows.append(r)
                cols.append(fmap[2 * node + comp])
                vals.append(1.0)
                c = 0.0
                for name, coef in arm[comp].items():
                    spec = getattr(link, name)
                    if spec == "free":
                        rows.append(r)
                        cols.append(par_of[(link.tag, name)])
                        vals.append(-coef)
                    else:
                        c += coef * _bc_value(spec, t)
                rhs.append(c)
                r += 1
    for (na, nb), active in zip(cs.ties, cs.tie_active):
        if not active:
            continue
        for comp in (0, 1):
            rows.extend([r, r])
            cols.extend([fmap[2 * na + comp], fmap[2 * nb + comp]])
            vals.extend([1.0, -1.0])
            rhs.append(0.0)
            r += 1
    B = coo_matrix((vals, (rows, cols)), shape=(r, nf + n_par)).tocsr()
    return B, np.array(rhs), n_par


def _saddle_matrix(Kff, B, n_par):
    """[[K 0 Bu'; 0 0 -A'; Bu -A 0]] with the link params inside B."""
    if n_par:
        Kaug = bmat([[Kff, None],
                     [None, csr_matrix((n_par, n_par))]], format="csr")
    else:
        Kaug = Kff
    if B.shape[0]:
        return bmat([[Kaug, B.T], [B, None]], format="csc")
    return Kaug.tocsc()


def assemble_system(mesh: FeMesh, d, cs: ConstraintSet, t,
                    mat: MaterialParams) -> AssembledSystem:
    K = assemble_stiffness(mesh, d, mat)
    free, fmap, u_fix = _dirichlet_split(mesh, cs, t)
    Kff = K[free][:, free].tocsr()
    f = -(K @ u_fix)[free]
    B, c, n_par = _constraint_rows(mesh, cs, t, fmap, free.size)
    lhs = _saddle_matrix(Kff, B, n_par)
    rhs = np.concatenate([f, np.zeros(n_par), c]) if B.shape[0] else f
    return AssembledSystem(K=K, saddle=lhs, rhs=rhs, free=free, u_fix=u_fix,
                           n_params=n_par, n_lagrange=B.shape[0])


def _solve_sparse(lhs, rhs):
    if lhs.shape[0] == 0:
        # fully prescribed problem, nothing to solve
        return np.zeros(0)
    try:
        lu = splu(lhs)
    except RuntimeError as err:
        raise RuntimeError("singular equilibrium system (insufficient "
                           "constraints?): %s" % err)
    piv = np.abs(lu.U.diagonal())
    if piv.min(initial=np.inf) <= 1.0e-13 * piv.max(initial=0.0):
        # a free mechanism leaves a numerically zero pivot; the rhs is
        # always consistent under pure Dirichlet loading, so the residual
        # alone would not notice
        raise RuntimeError("singular equilibrium system: a rigid mechanism "
                           "remains unconstrained")
    z = lu.solve(rhs)
    if not np.isfinite(z).all():
        raise RuntimeError("equilibrium solve produced non-finite values")
    res = np.abs(lhs @ z - rhs).max(initial=0.0)
    scale = max(np.abs(rhs).max(initial=0.0), 1.0e-30)
    if res > 1.0e-8 * scale and res > 1.0e-12:
        raise RuntimeError("equilibrium solve inaccurate (relative residual "
                           "%.3e); system near singular" % (res / scale))
    return z


@dataclass(frozen=True)
class Solution:
    u: np.ndarray          # (n, 2) nodal displacements, mm
    K: csr_matrix          # stiffness consistent with u (full dofs)
    f_int: np.ndarray      # (2n,) internal nodal forces at u
    mesh: FeMesh
    t: float


def solve_displacement_linear(mesh: FeMesh, d, cs: ConstraintSet, t,
                              mat: MaterialParams) -> Solution:
    """Equilibrium displacement for the symmetric (beta = 1) model."""
    if mat.beta != 1.0:
        raise ValueError("linear pathway requires beta = 1")
    sys = assemble_system(mesh, d, cs, t, mat)
    z = _solve_sparse(sys.saddle, sys.rhs)
    u = sys.u_fix.copy()
    u[sys.free] = z[:sys.free.size]
    return Solution(u=u.reshape(-1, 2), K=sys.K, f_int=sys.K @ u, mesh=mesh,
                    t=float(t))


def reaction_force(sol: Solution, tag):
    """Net constraint force on a tagged node group, N/mm (2-vector).

    Summing internal-force rows over the group picks up exactly the
    reactions there; rows of unloaded free nodes are in equilibrium and
    add zero.
    """
    nodes = sol.mesh.nodes_with_tag(tag)
    return sol.f_int.reshape(-1, 2)[nodes].sum(axis=0)


# ---------------------------------------------------------------------------
# Energies
# ---------------------------------------------------------------------------

def element_strains(mesh: FeMesh, u):
    """Per-element Voigt strains [exx, eyy, gamma_xy] from nodal u."""
    u = np.asarray(u, dtype=float).reshape(-1, 2)
    ue = u[mesh.triangles].reshape(mesh.n_elements, 6)
    return np.einsum("eij,ej->ei", _b_matrices(mesh), ue)


def strain_energy(sol: Solution, d, mat: MaterialParams):
    """Total stored energy sum_e A_e phi(eps_e, d_e), N*mm per thickness.

    Applies the k_res floor, i.e. reports the energy carried by the same
    stiffness the displacement was solved with.
    """
    eps = element_strains(sol.mesh, sol.u)
    d = _element_damage(d, sol.mesh)
    e1, e2 = principal_from_voigt(eps)
    w, a = damage_coeffs(e1, e2, mat)
    phi = phi_of_d(w, a, d, mat.eta, mat.k_res)
    return float(sol.mesh.areas @ phi)


# ---------------------------------------------------------------------------
# Newton solve for the asymmetric model
# ---------------------------------------------------------------------------

def _asym_energy(mesh, u, d, mat):
    # no k_res floor here: must stay the exact antiderivative of the
    # branch-wise stress for the line search to be trustworthy
    eps = element_strains(mesh, u)
    e1, e2 = principal_from_voigt(eps)
    w, a = damage_coeffs(e1, e2, mat)
    return float(mesh.areas @ phi_of_d(w, a, d, mat.eta))


def _asym_internal_force(mesh, B, u, d, mat):
    eps = element_strains(mesh, u)
    f = np.zeros(2 * mesh.n_nodes)
    dof = np.empty(6, dtype=np.int64)
    for e in range(mesh.n_elements):
        s = stress(Strain2D(eps[e, 0], eps[e, 1], 0.5 * eps[e, 2]),
                   d[e], mat)
        sv = np.array([s[0, 0], s[1, 1], s[0, 1]])
        dof[0::2] = 2 * mesh.triangles[e]
        dof[1::2] = 2 * mesh.triangles[e] + 1
        np.add.at(f, dof, mesh.areas[e] * (B[e].T @ sv))
    return f


def _asym_tangent(eps, d, mat):
    """Per-element tangent moduli (m, 3, 3) of the branch-wise energy.

    Built in the principal strain frame, where the regime factors G sit
    on the eigen terms and the shear stiffness is the secant
    mu (G2 e2 - G1 e1)/(e2 - e1) from the eigenvector rotation, then
    pushed to xy coordinates. Exact wherever the regime is locally
    constant; a small floor keeps the direction systems factorizable
    when elements soften all the way to zero.
    """
    mu, lam, eta = mat.mu, mat.lam, mat.eta
    e1, e2 = principal_from_voigt(eps)
    _, a = damage_coeffs(e1, e2, mat)
    floor = max(mat.k_res, 1.0e-12)
    G = np.maximum(_g(a * d[:, None], eta), floor)
    gap = e2 - e1
    scale = np.abs(e1) + np.abs(e2) + 1.0e-30
    secant = np.where(gap > 1.0e-9 * scale,
                      (G[:, 1] * e2 - G[:, 0] * e1) / np.where(gap > 0.0,
                                                               gap, 1.0),
                      0.5 * (G[:, 0] + G[:, 1]))
    mu_eff = np.maximum(mu * secant, mu * floor)
    Dp = np.zeros((len(eps), 3, 3))
    Dp[:, 0, 0] = 2.0 * mu * G[:, 0] + lam * G[:, 2]
    Dp[:, 1, 1] = 2.0 * mu * G[:, 1] + lam * G[:, 2]
    Dp[:, 0, 1] = Dp[:, 1, 0] = lam * G[:, 2]
    Dp[:, 2, 2] = mu_eff
    # frame angle of the e1 axis; T maps xy Voigt strain into the frame
    alpha = 0.5 * np.arctan2(eps[:, 2], eps[:, 0] - eps[:, 1]) + 0.5 * np.pi
    c, s = np.cos(alpha), np.sin(alpha)
    T = np.empty((len(eps), 3, 3))
    T[:, 0, 0] = c * c
    T[:, 0, 1] = s * s
    T[:, 0, 2] = c * s
    T[:, 1, 0] = s * s
    T[:, 1, 1] = c * c
    T[:, 1, 2] = -c * s
    T[:, 2, 0] = -2.0 * c * s
    T[:, 2, 1] = 2.0 * c * s
    T[:, 2, 2] = c * c - s * s
    return np.einsum("eki,ekl,elj->eij", T, Dp, T, optimize=True)


def _assemble_tangent(mesh, Dt):
    B = _b_matrices(mesh)
    Ke = np.einsum("e,eki,ekl,elj->eij", mesh.areas, B, Dt, B,
                   optimize=True)
    dof = np.empty((mesh.n_elements, 6), dtype=np.int64)
    dof[:, 0::2] = 2 * mesh.triangles
    dof[:, 1::2] = 2 * mesh.triangles + 1
    rows = np.repeat(dof, 6, axis=1).ravel()
    cols = np.tile(dof, (1, 6)).ravel()
    n2 = 2 * mesh.n_nodes
    return coo_matrix((Ke.ravel(), (rows, cols)), shape=(n2, n2)).tocsr()


def solve_displacement_newton(mesh: FeMesh, d, cs: ConstraintSet, t,
                              mat: MaterialParams, u_init=None, tol=1.0e-8,
                              max_iter=100) -> Solution:
    """Energy minimization for the asymmetric (beta < 1) model.

    Damped Newton with the exact branch-wise tangent moduli, Armijo
    backtracking on the energy, constraints satisfied exactly at every
    iterate. The tangent is positive semidefinite because the energy is
    convex in the strain at fixed damage, so every step is a descent
    direction; convergence is quadratic once the regime pattern settles.
    """
    d = _element_damage(d, mesh)
    B = _b_matrices(mesh)
    n2 = 2 * mesh.n_nodes
    free, fmap, u_fix = _dirichlet_split(mesh, cs, t)
    Bc, c, n_par = _constraint_rows(mesh, cs, t, fmap, free.size)

    if u_init is not None and not cs.links:
        u = np.asarray(u_init, dtype=float).reshape(-1, 2).ravel().copy()
        fixed = np.ones(n2, dtype=bool)
        fixed[free] = False
        u[fixed] = u_fix[fixed]
        # warm starts are only trusted up to tie feasibility; repair by
        # averaging each pair
        for (na, nb), active in zip(cs.ties, cs.tie_active):
            if active:
                mean = 0.5 * (u[2 * na:2 * na + 2] + u[2 * nb:2 * nb + 2])
                u[2 * na:2 * na + 2] = mean
                u[2 * nb:2 * nb + 2] = mean
    else:
        sys0 = assemble_system(mesh, d, cs, t, replace(mat, beta=1.0))
        z = _solve_sparse(sys0.saddle, sys0.rhs)
        u = sys0.u_fix.copy()
        u[free] = z[:free.size]

    energy = _asym_energy(mesh, u, d, mat)
    rel = np.inf
    for _ in range(max_iter):
        g_full = _asym_internal_force(mesh, B, u, d, mat)
        g_f = g_full[free]
        Dt = _asym_tangent(element_strains(mesh, u), d, mat)
        Kff = _assemble_tangent(mesh, Dt)[free][:, free].tocsr()
        lhs = _saddle_matrix(Kff, Bc, n_par)
        if Bc.shape[0]:
            rhs = np.concatenate([-g_f, np.zeros(n_par + Bc.shape[0])])
        else:
            rhs = -g_f
        z = _solve_sparse(lhs, rhs)
        s = z[:free.size]
        lam = z[free.size + n_par:]
        r = g_f + (Bc.T @ lam)[:free.size] if Bc.shape[0] else g_f
        rel = np.abs(r).max(initial=0.0) / (1.0 + np.abs(g_f).max(initial=0.0))
        if rel <= tol:
            break
        slope = float(g_f @ s)
        if slope > 0.0:
            raise RuntimeError("search direction lost descent (residual "
                               "%.3e)" % rel)
        step = 1.0
        for _ in range(60):
            un = u.copy()
            un[free] += step * s
            en = _asym_energy(mesh, un, d, mat)
            if en <= energy + 1.0e-4 * step * slope:
                break
            step *= 0.5
        else:
            raise RuntimeError("line search failed (residual %.3e)" % rel)
        u = un
        energy = en
    else:
        raise RuntimeError("energy minimization did not converge in %d "
                           "iterations (relative residual %.3e)"
                           % (max_iter, rel))
    K = _assemble_tangent(mesh, _asym_tangent(element_strains(mesh, u), d,
                                              mat))
    return Solution(u=u.reshape(-1, 2), K=K,
                    f_int=_asym_internal_force(mesh, B, u, d, mat),
                    mesh=mesh, t=float(t))


# ---------------------------------------------------------------------------
# Griffith node-release analysis
# ---------------------------------------------------------------------------

def _tie_spacing(mesh: FeMesh, ties):
    ties = np.asarray(ties, dtype=np.int64)
    x = mesh.nodes[ties[:, 0], 0]
    h = np.diff(x)
    if h.size == 0 or (h <= 0.0).any():
        raise ValueError("tie pairs must be ordered by position along the "
                         "interface")
    if np.abs(h - h[0]).max() > 1.0e-9 * h[0]:
        raise ValueError("tie pairs must be regularly spaced")
    return float(h[0])


def _released_solution(mesh, cs, ties, k, mat):
    """Elastic solve at t = 1 with the first k pairs released."""
    active = np.ones(len(ties), dtype=bool)
    active[:k] = False
    cs_k = constraint_set(mesh, cs.dirichlet, cs.links, ties, active)
    return solve_displacement_linear(mesh, 0.0, cs_k, 1.0,
                                     replace(mat, beta=1.0))


def griffith_release_rate(mesh: FeMesh, cs: ConstraintSet, ties, a,
                          mat: MaterialParams):
    """Energy release rate G1(a) at unit imposed displacement, N/mm.

    The crack of length a = k*h is the first k released tie pairs; G1 is
    the central difference -d(e1)/da of the equilibrium strain energy,
    positive because releasing pairs only adds compliance. The
    constraints must impose the unit grip displacement at t = 1.
    """
    h = _tie_spacing(mesh, ties)
    k = a / h
    if abs(k - round(k)) > 1.0e-9:
        raise ValueError("crack length must be a multiple of the tie "
                         "spacing %.6g" % h)
    k = int(round(k))
    if not 1 <= k <= len(ties) - 1:
        raise ValueError("crack length %.6g outside the admissible range "
                         "[%g, %g]" % (a, h, (len(ties) - 1) * h))
    e_minus = strain_energy(_released_solution(mesh, cs, ties, k - 1, mat),
                            0.0, mat)
    e_plus = strain_energy(_released_solution(mesh, cs, ties, k + 1, mat),
                           0.0, mat)
    return (e_minus - e_plus) / (2.0 * h)


def fracture_toughness_to_gc(E, nu, K_Ic):
    """G_c in N/mm from K_Ic in MPa*sqrt(m): (1 - nu^2)/E * K_Ic^2 * 1000."""
    return (1.0 - nu * nu) / E * K_Ic * K_Ic * 1.0e3


def griffith_critical_curves(mesh: FeMesh, cs: ConstraintSet, ties,
                             mat: MaterialParams, K_Ic, load_tag=2,
                             load_comp=1):
    """Critical displacement and force versus crack length.

    Rows (a, G1, u_c, F_c) sorted by a, interior release counts only.
    u_c(a) = sqrt(G_c / G1(a)) and F_c(a) = u_c(a) times the
    unit-displacement reaction on the loaded grip, both from the same
    cached elastic solves.
    """
    h = _tie_spacing(mesh, ties)
    gc = fracture_toughness_to_gc(mat.E, mat.nu, K_Ic)
    energies = {}
    reactions = {}
    for k in range(0, len(ties) + 1):
        sol = _released_solution(mesh, cs, ties, k, mat)
        energies[k] = strain_energy(sol, 0.0, mat)
        reactions[k] = reaction_force(sol, load_tag)[load_comp]
    rows = []
    for k in range(1, len(ties)):
        g1 = (energies[k - 1] - energies[k + 1]) / (2.0 * h)
        u_c = float(np.sqrt(gc / g1))
        rows.append((k * h, g1, u_c, u_c * reactions[k]))
    return np.array(rows)
