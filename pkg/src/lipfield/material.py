"""Local constitutive model for the damage simulator.

Softening g, dissipation h, the asymmetric tension/compression free energy,
stress, the scalar incremental objective f and its box-constrained minimizer.
Everything here is a pure function of its inputs; the vectorized helpers at
the bottom are what the field-level solvers actually call in hot loops.

Units: MPa for moduli and energies per volume, mm for lengths.
"""

import numpy as np
from dataclasses import dataclass


@dataclass(frozen=True)
class MaterialParams:
    """Elastic constants plus the damage model parameters.

    E, nu      : Young modulus (MPa) and Poisson ratio, plane strain.
    Yc         : critical energy release rate density (MPa).
    l          : regularizing length, the Lipschitz slope budget (mm).
    eta        : softening tail parameter, must sit in [0, 1/3] so that the
                 softening function stays convex.
    beta       : tension/compression asymmetry. 1 is fully symmetric, 0
                 recovers the full stiffness in compression.
    k_res      : residual stiffness floor applied to the stiffness multiplier
                 so the equilibrium system stays nonsingular at d = 1.
    """

    E: float
    nu: float
    Yc: float
    l: float
    eta: float = 0.0
    beta: float = 1.0
    k_res: float = 1.0e-6

    def __post_init__(self):
        if self.E <= 0.0:
            raise ValueError("E must be positive, got %g" % self.E)
        if not -1.0 < self.nu < 0.5:
            raise ValueError("nu must lie in (-1, 0.5), got %g" % self.nu)
        if self.Yc <= 0.0:
            raise ValueError("Yc must be positive, got %g" % self.Yc)
        if self.l <= 0.0:
            raise ValueError("l must be positive, got %g" % self.l)
        if not 0.0 <= self.eta <= 1.0 / 3.0 + 1e-15:
            raise ValueError("eta must lie in [0, 1/3], got %g" % self.eta)
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1], got %g" % self.beta)
        if not 0.0 <= self.k_res < 1.0:
            raise ValueError("k_res must lie in [0, 1), got %g" % self.k_res)

    @property
    def lam(self):
        # plane strain Lame coefficient
        return self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))

    @property
    def mu(self):
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def pwave(self):
        """lambda + 2 mu, the uniaxial-strain (oedometric) modulus."""
        return self.lam + 2.0 * self.mu


@dataclass(frozen=True)
class Strain2D:
    """In-plane strain state, plane strain (the out-of-plane strain is zero).

    exy is the tensor shear component, half the engineering shear.
    """

    exx: float
    eyy: float
    exy: float = 0.0

    @property
    def trace(self):
        return self.exx + self.eyy

    def principal(self):
        """Return the in-plane eigenvalues (e1, e2) with e1 <= e2."""
        m = 0.5 * (self.exx + self.eyy)
        r = np.hypot(0.5 * (self.exx - self.eyy), self.exy)
        return m - r, m + r

    def principal_axes(self):
        """Eigenvalues and unit eigenvectors ((e1, n1), (e2, n2)), e1 <= e2."""
        e1, e2 = self.principal()
        theta = 0.5 * np.arctan2(2.0 * self.exy, self.exx - self.eyy)
        n2 = np.array([np.cos(theta), np.sin(theta)])
        n1 = np.array([-n2[1], n2[0]])
        return (e1, n1), (e2, n2)


# ---------------------------------------------------------------------------
# Scalar softening and dissipation functions
# ---------------------------------------------------------------------------

def _check_unit_interval(d, name="d"):
    d = np.asarray(d)
    if np.any(d < -1e-15) or np.any(d > 1.0 + 1e-15):
        raise ValueError("%s outside [0, 1]" % name)


def softening_g(d, eta):
    """Stiffness reduction g(d) = (1-d)^2 + eta (1-d) d^3, g(0)=1, g(1)=0."""
    _check_unit_interval(d)
    d = np.asarray(d, dtype=float)
    out = 1.0 + d * (-2.0 + d * (1.0 + d * (eta - eta * d)))
    return out if out.ndim else float(out)


def softening_g_prime(d, eta):
    _check_unit_interval(d)
    d = np.asarray(d, dtype=float)
    out = -2.0 + d * (2.0 + d * (3.0 * eta - 4.0 * eta * d))
    return out if out.ndim else float(out)


def softening_g_second(d, eta):
    _check_unit_interval(d)
    d = np.asarray(d, dtype=float)
    out = 2.0 + eta * d * (6.0 - 12.0 * d)
    return out if out.ndim else float(out)


def dissipation_h(d):
    """Dissipation shape h(d) = 2d + 3d^2; energy spent per volume is Yc h."""
    _check_unit_interval(d)
    d = np.asarray(d, dtype=float)
    out = d * (2.0 + 3.0 * d)
    return out if out.ndim else float(out)


def dissipation_h_prime(d):
    _check_unit_interval(d)
    d = np.asarray(d, dtype=float)
    out = 2.0 + 6.0 * d
    return out if out.ndim else float(out)


# unchecked array kernels for the hot paths
def _g(d, eta):
    return 1.0 + d * (-2.0 + d * (1.0 + d * (eta - eta * d)))


def _gp(d, eta):
    return -2.0 + d * (2.0 + d * (3.0 * eta - 4.0 * eta * d))


def _gpp(d, eta):
    return 2.0 + eta * d * (6.0 - 12.0 * d)


# ---------------------------------------------------------------------------
# Free energy and stress
# ---------------------------------------------------------------------------

def _alphas(e1, e2, tr, beta):
    """Asymmetry factors for the two in-plane eigenvalues and the trace.

    Negative eigenvalue (or trace) contributions get factor beta, tensile
    ones get 1. Ties at zero resolve to the tensile branch; the term is zero
    there anyway. The out-of-plane eigenvalue is zero in plane strain and
    contributes nothing, so its factor never matters.
    """
    a1 = beta if e1 < 0.0 else 1.0
    a2 = beta if e2 < 0.0 else 1.0
    at = beta if tr < 0.0 else 1.0
    return a1, a2, at


def free_energy(eps: Strain2D, d, mat: MaterialParams):
    """Damaged elastic energy density phi(eps, d).

    phi = mu sum_i g(alpha_i d) eps_i^2 + lambda/2 g(alpha d) Tr^2 with the
    asymmetry factors switching between 1 (tension) and beta (compression).
    For beta = 1 this reduces to g(d) times the undamaged energy.
    """
    _check_unit_interval(d)
    e1, e2 = eps.principal()
    tr = eps.trace
    a1, a2, at = _alphas(e1, e2, tr, mat.beta)
    eta = mat.eta
    return (mat.mu * (_g(a1 * d, eta) * e1 * e1 + _g(a2 * d, eta) * e2 * e2)
            + 0.5 * mat.lam * _g(at * d, eta) * tr * tr)


def phi_split(eps: Strain2D, mat: MaterialParams):
    """Split the plane-strain energy into a damage-blind part phi0 and a
    damageable part phi1 so that phi = phi0 + g(d) phi1 on the tension
    branch. The compressed eigen contributions sit in phi0; the trace term
    is always damageable. phi1 >= 0.
    """
    e1, e2 = eps.principal()
    tr = e1 + e2
    trace_term = 0.5 * mat.lam * tr * tr
    if e1 >= 0.0:            # both eigenvalues tensile
        phi0 = 0.0
        phi1 = trace_term + mat.mu * (e1 * e1 + e2 * e2)
    elif e2 < 0.0:           # both compressive
        phi0 = mat.mu * (e1 * e1 + e2 * e2)
        phi1 = trace_term
    else:                    # e1 < 0 <= e2
        phi0 = mat.mu * e1 * e1
        phi1 = trace_term + mat.mu * e2 * e2
    return phi0, phi1


def undamaged_energy(eps: Strain2D, mat: MaterialParams):
    """Elastic energy density at d = 0."""
    e1, e2 = eps.principal()
    tr = e1 + e2
    return mat.mu * (e1 * e1 + e2 * e2) + 0.5 * mat.lam * tr * tr


def stress(eps: Strain2D, d, mat: MaterialParams):
    """Cauchy stress as a symmetric 2x2 array.

    The symmetric model (beta = 1) scales the Hooke stress by
    max(g(d), k_res). The asymmetric model differentiates the eigenvalue
    form branch-wise; it carries no stiffness floor.
    """
    _check_unit_interval(d)
    if mat.beta == 1.0:
        g_eff = max(_g(float(d), mat.eta), mat.k_res)
        tr = eps.trace
        sxx = g_eff * (mat.lam * tr + 2.0 * mat.mu * eps.exx)
        syy = g_eff * (mat.lam * tr + 2.0 * mat.mu * eps.eyy)
        sxy = g_eff * 2.0 * mat.mu * eps.exy
        return np.array([[sxx, sxy], [sxy, syy]])
    (e1, n1), (e2, n2) = eps.principal_axes()
    tr = e1 + e2
    a1, a2, at = _alphas(e1, e2, tr, mat.beta)
    eta = mat.eta
    s = (2.0 * mat.mu * _g(a1 * d, eta) * e1) * np.outer(n1, n1)
    s += (2.0 * mat.mu * _g(a2 * d, eta) * e2) * np.outer(n2, n2)
    s += (mat.lam * _g(at * d, eta) * tr) * np.eye(2)
    return s


def local_objective_f(eps: Strain2D, d, mat: MaterialParams):
    """Incremental objective f(eps, d) = phi(eps, d) + Yc h(d)."""
    return free_energy(eps, d, mat) + mat.Yc * dissipation_h(d)


# ---------------------------------------------------------------------------
# Scalar local damage update
# ---------------------------------------------------------------------------

def local_damage_update(eps: Strain2D, d_n, mat: MaterialParams, tol=1.0e-10):
    """Minimize f(eps, .) over [d_n, 1].

    f is strictly convex in d (f'' >= 6 Yc), so the minimizer is unique:
    either a box end or the single root of f'. Safeguarded Newton on f'
    with a bisection fallback; tol is the absolute accuracy in d.
    """
    if not 0.0 <= d_n <= 1.0:
        raise ValueError("d_n outside [0, 1]")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    e1, e2 = eps.principal()
    tr = e1 + e2
    a1, a2, at = _alphas(e1, e2, tr, mat.beta)
    w1, w2, wt = mat.mu * e1 * e1, mat.mu * e2 * e2, 0.5 * mat.lam * tr * tr
    eta, Yc = mat.eta, mat.Yc

    def fp(d):
        return (w1 * a1 * _gp(a1 * d, eta) + w2 * a2 * _gp(a2 * d, eta)
                + wt * at * _gp(at * d, eta) + Yc * (2.0 + 6.0 * d))

    def fpp(d):
        return (w1 * a1 * a1 * _gpp(a1 * d, eta)
                + w2 * a2 * a2 * _gpp(a2 * d, eta)
                + wt * at * at * _gpp(at * d, eta) + 6.0 * Yc)

    if fp(d_n) >= 0.0:
        return d_n
    if fp(1.0) <= 0.0:
        return 1.0
    lo, hi = d_n, 1.0
    x = 0.5 * (lo + hi)
    for _ in range(200):
        v = fp(x)
        if v > 0.0:
            hi = x
        else:
            lo = x
        step = v / fpp(x)
        xn = x - step
        if not lo < xn < hi:
            xn = 0.5 * (lo + hi)
        if hi - lo <= tol or abs(xn - x) <= 0.1 * tol:
            return xn
        x = xn
    return x


def onset_strain(mat: MaterialParams):
    """Uniaxial strain at which damage first grows, sqrt(2 Yc/(lam+2mu))."""
    return np.sqrt(2.0 * mat.Yc / mat.pwave)


def saturation_strain(mat: MaterialParams):
    """Uniaxial strain at which d = 1 is reached.

    From stationarity of f at d = 1: the softening slope there is -eta, so
    d = 1 becomes optimal once eta phi1 >= 8 Yc, i.e. at strain
    4 sqrt(Yc / (eta (lam+2mu))). Undefined for eta = 0 where g'(1) = 0 and
    full damage is only approached asymptotically.
    """
    if mat.eta <= 0.0:
        raise ValueError("saturation strain undefined for eta = 0")
    return 4.0 * np.sqrt(mat.Yc / (mat.eta * mat.pwave))


# ---------------------------------------------------------------------------
# Vectorized kernels for field-level solvers
# ---------------------------------------------------------------------------

def principal_from_voigt(strain):
    """Eigenvalues of Voigt strains [exx, eyy, gamma_xy], engineering shear.

    strain: (n, 3) array. Returns (e1, e2) with e1 <= e2 per row.
    """
    strain = np.asarray(strain, dtype=float)
    m = 0.5 * (strain[:, 0] + strain[:, 1])
    r = np.hypot(0.5 * (strain[:, 0] - strain[:, 1]), 0.5 * strain[:, 2])
    return m - r, m + r


def damage_coeffs(e1, e2, mat: MaterialParams):
    """Per-point energy coefficients (w, a), both (n, 3).

    phi(d) at point i is sum_k w[i,k] g(a[i,k] d); columns are the two
    eigen terms and the trace term. Feeding these to phi_of_d and friends
    keeps the damage solvers free of constitutive branching.
    """
    e1 = np.asarray(e1, dtype=float)
    e2 = np.asarray(e2, dtype=float)
    tr = e1 + e2
    w = np.empty((e1.size, 3))
    w[:, 0] = mat.mu * e1 * e1
    w[:, 1] = mat.mu * e2 * e2
    w[:, 2] = 0.5 * mat.lam * tr * tr
    a = np.ones_like(w)
    if mat.beta != 1.0:
        a[:, 0] = np.where(e1 < 0.0, mat.beta, 1.0)
        a[:, 1] = np.where(e2 < 0.0, mat.beta, 1.0)
        a[:, 2] = np.where(tr < 0.0, mat.beta, 1.0)
    return w, a


def phi_of_d(w, a, d, eta, k_res=0.0):
    """Energy density per point for damage array d (n,).

    With k_res > 0 each softening factor is floored at k_res, which is the
    energy actually carried by the floored stiffness in the simulation.
    """
    ad = a * d[:, None]
    gv = _g(ad, eta)
    if k_res > 0.0:
        gv = np.maximum(gv, k_res)
    return np.einsum("ij,ij->i", w, gv)


def phi_prime_of_d(w, a, d, eta, k_res=0.0):
    """d(phi)/dd per point; zero slope inside the floored region."""
    ad = a * d[:, None]
    gp = _gp(ad, eta) * a
    if k_res > 0.0:
        gp = np.where(_g(ad, eta) > k_res, gp, 0.0)
    return np.einsum("ij,ij->i", w, gp)


def phi_second_of_d(w, a, d, eta, k_res=0.0):
    ad = a * d[:, None]
    gpp = _gpp(ad, eta) * a * a
    if k_res > 0.0:
        gpp = np.where(_g(ad, eta) > k_res, gpp, 0.0)
    return np.einsum("ij,ij->i", w, gpp)


def local_update_field(w, a, d_n, mat: MaterialParams, tol=1.0e-10,
                       k_res=0.0):
    """Vectorized box-constrained minimizer of f = phi + Yc h per point.

    Same contract as local_damage_update but over arrays, using the (w, a)
    coefficients from damage_coeffs. Bracketed Newton; every iterate stays
    inside [d_n, 1]. With k_res > 0 the floored energy is minimized, whose
    derivative jumps upward where the floor engages; the bracket handles
    the kink.
    """
    d_n = np.asarray(d_n, dtype=float)
    Yc, eta = mat.Yc, mat.eta
    out = d_n.copy()
    fp_low = phi_prime_of_d(w, a, d_n, eta, k_res) + Yc * (2.0 + 6.0 * d_n)
    idx = np.where(fp_low < 0.0)[0]
    if idx.size == 0:
        return out
    w_s, a_s = w[idx], a[idx]
    lo = d_n[idx].copy()
    hi = np.ones(idx.size)
    fp_one = phi_prime_of_d(w_s, a_s, hi, eta, k_res) + 8.0 * Yc
    sat = fp_one <= 0.0
    x = np.where(sat, 1.0, 0.5 * (lo + hi))
    active = ~sat
    for _ in range(200):
        if not active.any():
            break
        v = phi_prime_of_d(w_s, a_s, x, eta, k_res) + Yc * (2.0 + 6.0 * x)
        pos = v > 0.0
        hi = np.where(active & pos, x, hi)
        lo = np.where(active & ~pos, x, lo)
        fpp_v = phi_second_of_d(w_s, a_s, x, eta, k_res) + 6.0 * Yc
        xn = x - v / fpp_v
        off = ~((xn > lo) & (xn < hi))
        xn = np.where(off, 0.5 * (lo + hi), xn)
        done = (hi - lo <= tol) | (np.abs(xn - x) <= 0.1 * tol)
        x = np.where(active, xn, x)
        active &= ~done
    out[idx] = x
    return out
