"""Quasi-static load stepping with alternating equilibrium/damage solves.

The damage field lives on the Lip-mesh vertices, one per FE element, so
the same array drives the element stiffness and the Lipschitz-constrained
update. Each load step repeats (equilibrium at fixed damage) then (damage
update at fixed displacement) until the damage stops moving in sup norm.
Both half-steps minimize the same incremental potential

    F(u, d) = sum_e A_e (phi(eps_e, d_e) + Yc h(d_e))

over their own block, so F is non-increasing across half-steps and serves
as the convergence backstop.
"""

import logging
import os
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from . import output
from .equilibrium import (Dirichlet, constraint_set, element_strains,
                          reaction_force, solve_displacement_linear,
                          solve_displacement_newton, strain_energy)
from .lipschitz import damage_step, full_domain_minimize
from .material import MaterialParams, dissipation_h
from .mesh import FeMesh, LipMesh, MeshError, build_lip_mesh, edge_graph

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# configuration and records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimulationConfig:
    """Everything a run needs besides the mesh tags themselves.

    load_factors are the imposed grip displacements in mm, one entry per
    step. The crack path, when given, is the polyline along which
    crack_length is measured each step.
    """
    mesh: FeMesh
    material: MaterialParams
    load_factors: tuple
    tol_d: float = 1.0e-4      # sup-norm stop on the damage iterates
    max_stagger: int = 200
    tol_f: float = 1.0e-8      # relative potential-change backstop
    tol_kkt: float = 1.0e-8    # damage-update KKT tolerance
    tol_u: float = 1.0e-8      # Newton tolerance (asymmetric model only)
    out_dir: str = None
    output_every: int = 1      # write fields every k-th step
    validate: bool = False     # log the gap to the unpatched damage solve
    crack_path: np.ndarray = None
    crack_threshold: float = 0.99

    def __post_init__(self):
        lf = tuple(float(t) for t in self.load_factors)
        if lf and not np.all(np.isfinite(lf)):
            raise ValueError("load factors must be finite")
        object.__setattr__(self, "load_factors", lf)
        for name in ("tol_d", "tol_f", "tol_kkt", "tol_u"):
            if not getattr(self, name) > 0.0:
                raise ValueError(name + " must be positive")
        if self.max_stagger < 1:
            raise ValueError("max_stagger must be at least 1")
        if self.output_every < 1:
            raise ValueError("output_every must be at least 1")
        if not 0.0 < self.crack_threshold <= 1.0:
            raise ValueError("crack_threshold must lie in (0, 1]")
        if self.crack_path is not None:
            p = np.asarray(self.crack_path, dtype=float)
            if p.ndim != 2 or p.shape[0] < 2 or p.shape[1] != 2:
                raise ValueError("crack_path must be an (n, 2) polyline "
                                 "with n >= 2")
            object.__setattr__(self, "crack_path", p)


@dataclass(frozen=True)
class StepRecord:
    load: float          # imposed grip displacement, mm
    reaction: float      # load-axis reaction on the pulled grip, N/mm
    iterations: int      # staggered passes used
    free_energy: float   # stored elastic energy, N mm per mm thickness
    dissipated: float    # cumulative sum_e A_e Yc h(d_e), N mm per mm
    crack_length: float  # mm along the configured crack path
    d_min: float
    d_max: float

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iteration count must be at least 1")


@dataclass(frozen=True)
class StaggerDiagnostics:
    """Convergence trace of one load step.

    potentials holds F after every half-step (equilibrium, then damage,
    alternating, plus the final consistency re-solve); solution is the
    equilibrium state at the returned damage field.
    """
    iterations: int
    delta_d: float
    potentials: tuple
    solution: object


@dataclass(frozen=True)
class SimulationState:
    """Converged configuration at one load level plus the fixed wiring."""
    mesh: FeMesh
    lip: LipMesh
    graph: object
    constraints: object
    load_tag: int
    load_comp: int
    load_sign: float
    d: np.ndarray
    u: np.ndarray = None


# ---------------------------------------------------------------------------
# boundary-condition convention
# ---------------------------------------------------------------------------

def grip_constraints(mesh: FeMesh, ties=None):
    """Dirichlet program pulling the tag-2 grip away from the tag-1 grip.

    The load axis is the dominant direction between the two grip
    centroids. When tag-3 pin lines exist the grips impose only the axis
    component (lubricated grips) and the pins fix the transverse
    component; without pins both grips are clamped. The imposed value on
    the pulled grip is sign * t, sign chosen so positive t separates the
    grips. Returns (constraints, load_tag, load_comp, load_sign).
    """
    lo = mesh.nodes_with_tag(1)
    hi = mesh.nodes_with_tag(2)
    axis = mesh.nodes[hi].mean(axis=0) - mesh.nodes[lo].mean(axis=0)
    comp = int(np.argmax(np.abs(axis)))
    perp = 1 - comp
    sign = 1.0 if axis[comp] >= 0.0 else -1.0
    dirichlet = []
    try:
        pins = mesh.nodes_with_tag(3)
    except MeshError:
        pins = None
    if pins is not None:
        dirichlet += [Dirichlet(n, comp, 0.0) for n in lo]
        dirichlet += [Dirichlet(n, perp, 0.0) for n in pins]
    else:
        for n in lo:
            dirichlet += [Dirichlet(n, 0, 0.0), Dirichlet(n, 1, 0.0)]
        dirichlet += [Dirichlet(n, perp, 0.0) for n in hi]
    dirichlet += [Dirichlet(n, comp, sign) for n in hi]
    return constraint_set(mesh, dirichlet, ties=ties), 2, comp, sign


def initial_state(config: SimulationConfig) -> SimulationState:
    mesh = config.mesh
    lip = build_lip_mesh(mesh)
    cs, tag, comp, sign = grip_constraints(mesh)
    return SimulationState(mesh=mesh, lip=lip, graph=edge_graph(lip),
                           constraints=cs, load_tag=tag, load_comp=comp,
                           load_sign=sign,
                           d=np.zeros(mesh.n_elements))


# ---------------------------------------------------------------------------
# energies
# ---------------------------------------------------------------------------

def dissipated_energy(d, mesh: FeMesh, mat: MaterialParams):
    """Total dissipation sum_e A_e Yc h(d_e), N mm per mm thickness."""
    return float(mat.Yc * (mesh.areas @ dissipation_h(np.asarray(d,
                                                                 dtype=float))))


def _total_potential(sol, d, mesh, mat):
    return strain_energy(sol, d, mat) + dissipated_energy(d, mesh, mat)


def _equilibrium(mesh, d, cs, t, mat, config, u_init):
    if mat.beta == 1.0:
        return solve_displacement_linear(mesh, d, cs, t, mat)
    return solve_displacement_newton(mesh, d, cs, t, mat, u_init=u_init,
                                     tol=config.tol_u)


# ---------------------------------------------------------------------------
# the staggered step
# ---------------------------------------------------------------------------

def staggered_step(state: SimulationState, t, config: SimulationConfig):
    """One load increment of the alternating scheme.

    Returns (u, d, diagnostics) at load factor t starting from the
    converged state of the previous step. The damage history bound is the
    incoming state.d throughout, so irreversibility refers to load steps,
    not to inner iterates. Raises RuntimeError with the potential trace
    when max_stagger passes do not settle the damage field.
    """
    mesh, mat = state.mesh, config.material
    d_n = np.asarray(state.d, dtype=float)
    d = d_n
    u_warm = state.u
    pots = []
    delta = np.inf
    f_prev = None
    for it in range(1, config.max_stagger + 1):
        sol = _equilibrium(mesh, d, state.constraints, t, mat, config,
                           u_warm)
        u_warm = sol.u
        pots.append(_total_potential(sol, d, mesh, mat))
        eps = element_strains(mesh, sol.u)
        d_new = damage_step(eps, mesh.areas, d_n, state.lip, state.graph,
                            mat, tol_kkt=config.tol_kkt, warm=d)
        if config.validate:
            ref = full_domain_minimize(eps, mesh.areas, d_n, state.lip,
                                       mat, tol_kkt=config.tol_kkt)
            log.info("damage oracle gap %.3e at load %.6g",
                     float(np.abs(d_new - ref).max(initial=0.0)), t)
        drop = float((d_n - d_new).max(initial=0.0))
        if drop > 1.0e-9:
            raise RuntimeError("damage update broke irreversibility by "
                               "%.3e" % drop)
        delta = float(np.abs(d_new - d).max(initial=0.0))
        d = np.maximum(d_new, d_n)
        f_cur = _total_potential(sol, d, mesh, mat)
        pots.append(f_cur)
        if delta <= config.tol_d:
            break
        if f_prev is not None \
                and abs(f_prev - f_cur) <= config.tol_f * (1.0 + abs(f_cur)):
            break
        f_prev = f_cur
    else:
        tail = ", ".join("%.10g" % p for p in pots[-6:])
        raise RuntimeError(
            "staggered loop did not converge in %d iterations at load %.6g "
            "(last damage change %.3e, potential tail [%s])"
            % (config.max_stagger, t, delta, tail))
    if delta > 0.0:
        # re-solve so the reported displacement matches the final damage
        sol = _equilibrium(mesh, d, state.constraints, t, mat, config,
                           u_warm)
        pots.append(_total_potential(sol, d, mesh, mat))
    return sol.u, d, StaggerDiagnostics(iterations=it, delta_d=delta,
                                        potentials=tuple(pots), solution=sol)


# ---------------------------------------------------------------------------
# crack measurement
# ---------------------------------------------------------------------------

def crack_length(d, lip: LipMesh, path, threshold=0.99):
    """Arc length from the path origin to the farthest cracked point.

    Walks a dense sampling of the polyline; a sample counts as cracked
    when the Lip vertex nearest to it carries d >= threshold. Returns the
    arc coordinate of the farthest cracked sample, 0.0 when none is.
    """
    d = np.asarray(d, dtype=float)
    if d.shape != (lip.n_vertices,):
        raise ValueError("damage field does not match the Lip-mesh")
    path = np.asarray(path, dtype=float)
    if path.ndim != 2 or path.shape[0] < 2 or path.shape[1] != 2:
        raise ValueError("path must be an (n, 2) polyline with n >= 2")
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    seg = np.diff(path, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    arc0 = np.concatenate([[0.0], np.cumsum(seg_len)])
    step = 0.25 * float(np.median(lip.edge_lengths))
    pts, arcs = [], []
    for k, length in enumerate(seg_len):
        n = max(int(np.ceil(length / step)), 1)
        s = np.linspace(0.0, 1.0, n + 1)
        pts.append(path[k] + s[:, None] * seg[k])
        arcs.append(arc0[k] + s * length)
    pts = np.vstack(pts)
    arc = np.concatenate(arcs)
    _, idx = cKDTree(lip.points).query(pts)
    hit = d[idx] >= threshold
    return float(arc[hit].max()) if hit.any() else 0.0


# ---------------------------------------------------------------------------
# the run loop
# ---------------------------------------------------------------------------

def _make_record(state, t, diag, config):
    sol = diag.solution
    r = state.load_sign * reaction_force(sol, state.load_tag)[state.load_comp]
    d = state.d
    if config.crack_path is not None:
        a = crack_length(d, state.lip, config.crack_path,
                         config.crack_threshold)
    else:
        a = 0.0
    return StepRecord(load=float(t), reaction=float(r),
                      iterations=diag.iterations,
                      free_energy=strain_energy(sol, d, config.material),
                      dissipated=dissipated_energy(d, state.mesh,
                                                   config.material),
                      crack_length=a, d_min=float(d.min()),
                      d_max=float(d.max()))


def _write_step_outputs(out, config, state, records, k):
    files = []
    if k % config.output_every == 0 or k == len(config.load_factors):
        fe = os.path.join(out, "step_%04d_fe.vtk" % k)
        output.write_fe_fields(fe, state.mesh, state.u, state.d)
        lp = os.path.join(out, "step_%04d_lip.vtk" % k)
        output.write_lip_fields(lp, state.lip, state.d)
        files += [fe, lp]
    curve = os.path.join(out, "curve.csv")
    output.write_curve_csv(curve, records)
    files.append(curve)
    return tuple(files)


def run_simulation(config: SimulationConfig, on_step=None):
    """Execute the load program and return the list of StepRecords.

    With out_dir set, the per-step VTK fields (every output_every steps
    and always the final step) and the cumulative curve.csv are written
    after each converged step, so an aborted run keeps every completed
    step on disk. on_step(step, state, diagnostics, record, files) is
    called after each step when given; an empty load program produces no
    records and touches nothing.
    """
    state = initial_state(config)
    records = []
    out = None
    if config.out_dir is not None and config.load_factors:
        out = str(config.out_dir)
        os.makedirs(out, exist_ok=True)
    prev_diss = 0.0
    for k, t in enumerate(config.load_factors, start=1):
        u, d, diag = staggered_step(state, t, config)
        state = replace(state, d=d, u=u)
        rec = _make_record(state, t, diag, config)
        if rec.dissipated < prev_diss - 1.0e-9 * (1.0 + prev_diss):
            raise RuntimeError("dissipated energy decreased between steps")
        prev_diss = max(prev_diss, rec.dissipated)
        records.append(rec)
        files = ()
        if out is not None:
            files = _write_step_outputs(out, config, state, records, k)
        if on_step is not None:
            on_step(k, state, diag, rec, files)
    return records
