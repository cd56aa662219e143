import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lipfield.material import (
    MaterialParams, Strain2D,
    softening_g, softening_g_prime, softening_g_second,
    dissipation_h, dissipation_h_prime,
    free_energy, phi_split, undamaged_energy, stress,
    local_objective_f, local_damage_update,
    onset_strain, saturation_strain,
    principal_from_voigt, damage_coeffs, phi_of_d, phi_prime_of_d,
    local_update_field,
)
from oracles import grid_scan_damage, sweep_uniaxial


MAT = MaterialParams(E=1.0, nu=0.2, Yc=1.0, l=0.2, eta=0.1)


def mat_with(**kw):
    base = dict(E=1.0, nu=0.2, Yc=1.0, l=0.2, eta=0.1)
    base.update(kw)
    return MaterialParams(**base)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def test_lame_plane_strain():
    assert MAT.lam == pytest.approx(0.2 / 0.72, rel=1e-14)
    assert MAT.mu == pytest.approx(1.0 / 2.4, rel=1e-14)
    assert MAT.pwave == pytest.approx(10.0 / 9.0, rel=1e-14)


@pytest.mark.parametrize("bad", [
    dict(E=-1.0), dict(nu=0.5), dict(nu=-1.0), dict(Yc=0.0),
    dict(l=0.0), dict(eta=0.4), dict(eta=-0.1), dict(beta=1.5),
    dict(k_res=1.0),
])
def test_params_validation(bad):
    with pytest.raises(ValueError):
        mat_with(**bad)


@given(st.floats(-0.05, 0.05), st.floats(-0.05, 0.05), st.floats(-0.05, 0.05))
def test_strain_eigen_invariants(exx, eyy, exy):
    eps = Strain2D(exx, eyy, exy)
    e1, e2 = eps.principal()
    assert e1 <= e2 + 1e-15
    assert e1 + e2 == pytest.approx(eps.trace, abs=1e-12)
    # eigenvalues are roots of the characteristic polynomial
    for e in (e1, e2):
        p = (exx - e) * (eyy - e) - exy * exy
        assert abs(p) < 1e-12


def test_principal_axes_reconstruct():
    eps = Strain2D(0.3, -0.1, 0.2)
    (e1, n1), (e2, n2) = eps.principal_axes()
    t = e1 * np.outer(n1, n1) + e2 * np.outer(n2, n2)
    ref = np.array([[eps.exx, eps.exy], [eps.exy, eps.eyy]])
    assert np.allclose(t, ref, atol=1e-14)


# ---------------------------------------------------------------------------
# g and h
# ---------------------------------------------------------------------------

def test_g_endpoints_and_value():
    assert softening_g(0.0, 0.1) == 1.0
    assert softening_g(1.0, 0.1) == 0.0
    assert softening_g(0.5, 0.1) == pytest.approx(0.25625, abs=1e-15)


def test_g_domain_error():
    with pytest.raises(ValueError):
        softening_g(1.2, 0.1)
    with pytest.raises(ValueError):
        dissipation_h(-0.3)


@pytest.mark.parametrize("eta", [0.0, 0.05, 0.1, 0.2, 1.0 / 3.0])
def test_g_convex_on_grid(eta):
    d = np.linspace(0.0, 1.0, 1001)
    assert np.all(softening_g_second(d, eta) >= -1e-12)


def test_h_values():
    assert dissipation_h(0.0) == 0.0
    assert dissipation_h(1.0) == pytest.approx(5.0)
    assert dissipation_h_prime(0.5) == pytest.approx(5.0)
    d = np.linspace(0.0, 1.0, 101)
    assert np.all(np.diff(dissipation_h(d)) > 0.0)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0 / 3.0))
def test_g_derivatives_match_fd(d, eta):
    hstep = 1e-6
    dm, dp = max(d - hstep, 0.0), min(d + hstep, 1.0)
    fd = (softening_g(dp, eta) - softening_g(dm, eta)) / (dp - dm)
    mid = 0.5 * (dm + dp)
    assert softening_g_prime(mid, eta) == pytest.approx(fd, abs=5e-9)


# ---------------------------------------------------------------------------
# free energy, split, stress
# ---------------------------------------------------------------------------

def test_free_energy_zero_strain():
    assert free_energy(Strain2D(0.0, 0.0, 0.0), 0.7, MAT) == 0.0


def test_free_energy_d0_is_isotropic():
    eps = Strain2D(0.02, -0.01, 0.005)
    for beta in (1.0, 0.3, 0.0):
        m = mat_with(beta=beta)
        assert free_energy(eps, 0.0, m) == pytest.approx(
            undamaged_energy(eps, m), rel=1e-14)


def test_free_energy_compression_recovery_beta0():
    m = mat_with(beta=0.0)
    eps = Strain2D(-0.1, -0.05, 0.01)   # both eigenvalues negative
    e1, e2 = eps.principal()
    assert e2 < 0.0
    for d in (0.3, 0.9, 1.0):
        assert free_energy(eps, d, m) == pytest.approx(
            free_energy(eps, 0.0, m), rel=1e-13)


def test_phi_split_pinned_branches():
    lam, mu = MAT.lam, MAT.mu
    # biaxial tension
    p0, p1 = phi_split(Strain2D(0.1, 0.1, 0.0), MAT)
    assert p0 == pytest.approx(0.0, abs=1e-16)
    assert p1 == pytest.approx(0.5 * lam * 0.04 + mu * 0.02, rel=1e-13)
    # biaxial compression
    p0, p1 = phi_split(Strain2D(-0.1, -0.1, 0.0), MAT)
    assert p0 == pytest.approx(mu * 0.02, rel=1e-13)
    assert p1 == pytest.approx(0.5 * lam * 0.04, rel=1e-13)
    # mixed, zero trace
    p0, p1 = phi_split(Strain2D(-0.1, 0.1, 0.0), MAT)
    assert p0 == pytest.approx(mu * 0.01, rel=1e-13)
    assert p1 == pytest.approx(mu * 0.01, rel=1e-13)


@given(st.floats(0.0, 0.05), st.floats(0.0, 0.05), st.floats(0.0, 1.0))
def test_split_consistent_with_energy_in_tension(e1, e2, d):
    # with both principal strains tensile, phi0 + g(d) phi1 is the energy
    eps = Strain2D(e1, e2, 0.0)
    p0, p1 = phi_split(eps, MAT)
    g = softening_g(d, MAT.eta)
    assert p0 + g * p1 == pytest.approx(free_energy(eps, d, MAT), abs=1e-14)
    assert p1 >= 0.0


def test_phi_split_nonnegative_phi1():
    rng = np.random.default_rng(3)
    for _ in range(200):
        exx, eyy, exy = rng.uniform(-0.1, 0.1, 3)
        _, p1 = phi_split(Strain2D(exx, eyy, exy), MAT)
        assert p1 >= -1e-16


def test_stress_hooke_at_d0():
    eps = Strain2D(0.01, -0.004, 0.002)
    s = stress(eps, 0.0, MAT)
    tr = eps.trace
    assert s[0, 0] == pytest.approx(MAT.lam * tr + 2 * MAT.mu * eps.exx)
    assert s[1, 1] == pytest.approx(MAT.lam * tr + 2 * MAT.mu * eps.eyy)
    assert s[0, 1] == pytest.approx(2 * MAT.mu * eps.exy)
    assert s[0, 1] == s[1, 0]


def test_stress_symmetric_scaling():
    eps = Strain2D(0.01, 0.0, 0.0)
    s0 = stress(eps, 0.0, MAT)
    s = stress(eps, 0.5, MAT)       # g(0.5) = 0.25625 for eta = 0.1
    assert np.allclose(s, 0.25625 * s0, rtol=1e-13)
    # floor engages at d = 1
    s1 = stress(eps, 1.0, MAT)
    assert np.allclose(s1, MAT.k_res * s0, rtol=1e-12)


def test_stress_beta0_compression_recovery():
    m = mat_with(beta=0.0)
    eps = Strain2D(-0.02, -0.01, 0.003)
    e1, e2 = eps.principal()
    assert e2 < 0.0
    assert np.allclose(stress(eps, 1.0, m), stress(eps, 0.0, m), rtol=1e-12)


@pytest.mark.parametrize("beta", [1.0, 0.5, 0.0])
def test_stress_matches_energy_gradient(beta):
    # sampled away from eigenvalue coincidence and sign changes
    m = mat_with(beta=beta, k_res=0.0)
    rng = np.random.default_rng(11)
    step = 1e-7
    checked = 0
    while checked < 30:
        exx, eyy, exy = rng.uniform(-0.05, 0.05, 3)
        eps = Strain2D(exx, eyy, exy)
        e1, e2 = eps.principal()
        if abs(e1) < 5e-3 or abs(e2) < 5e-3 or abs(e1 - e2) < 5e-3 \
                or abs(eps.trace) < 5e-3:
            continue
        d = rng.uniform(0.0, 0.9)
        s = stress(eps, d, m)
        fd = np.empty((2, 2))
        for (i, j), (dx, dy, dxy) in {
            (0, 0): (step, 0.0, 0.0),
            (1, 1): (0.0, step, 0.0),
            (0, 1): (0.0, 0.0, step),
        }.items():
            ep = Strain2D(exx + dx, eyy + dy, exy + dxy)
            em = Strain2D(exx - dx, eyy - dy, exy - dxy)
            fd[i, j] = (free_energy(ep, d, m) - free_energy(em, d, m)) / (2 * step)
        assert s[0, 0] == pytest.approx(fd[0, 0], rel=1e-5, abs=1e-10)
        assert s[1, 1] == pytest.approx(fd[1, 1], rel=1e-5, abs=1e-10)
        # energy differentiates to twice the shear stress through exy
        assert 2.0 * s[0, 1] == pytest.approx(fd[0, 1], rel=1e-5, abs=1e-10)
        checked += 1


# ---------------------------------------------------------------------------
# local objective and scalar update
# ---------------------------------------------------------------------------

def test_objective_definitions():
    eps = Strain2D(0.03, 0.01, -0.005)
    assert local_objective_f(eps, 0.0, MAT) == pytest.approx(
        free_energy(eps, 0.0, MAT))
    assert local_objective_f(Strain2D(0.0, 0.0, 0.0), 1.0, MAT) == \
        pytest.approx(5.0 * MAT.Yc)
    for d in (0.2, 0.7):
        diff = local_objective_f(eps, d, MAT) - free_energy(eps, d, MAT)
        assert diff == pytest.approx(MAT.Yc * dissipation_h(d), rel=1e-13)


def test_objective_derivative_matches_fd():
    rng = np.random.default_rng(5)
    for beta in (1.0, 0.4):
        m = mat_with(beta=beta)
        for _ in range(20):
            exx, eyy, exy = rng.uniform(-2.0, 2.0, 3)
            eps = Strain2D(exx, eyy, exy)
            d = rng.uniform(0.05, 0.95)
            hstep = 1e-6
            fd = (local_objective_f(eps, d + hstep, m)
                  - local_objective_f(eps, d - hstep, m)) / (2 * hstep)
            e1, e2 = principal_from_voigt(np.array([[exx, eyy, 2 * exy]]))
            w, a = damage_coeffs(e1, e2, m)
            ana = phi_prime_of_d(w, a, np.array([d]), m.eta)[0] \
                + m.Yc * dissipation_h_prime(d)
            assert ana == pytest.approx(fd, rel=1e-7, abs=1e-8)


def test_update_below_onset_stays_zero():
    eps = Strain2D(0.9 * onset_strain(MAT), 0.0, 0.0)
    assert local_damage_update(eps, 0.0, MAT) == 0.0


def test_update_box_collapse():
    assert local_damage_update(Strain2D(5.0, 0.0, 0.0), 1.0, MAT) == 1.0


def test_update_matches_grid_oracle():
    eps = Strain2D(2.0, 0.0, 0.0)
    d = local_damage_update(eps, 0.0, MAT, tol=1e-10)
    ref = grid_scan_damage(eps, 0.0, MAT)
    assert abs(d - ref) < 1e-10 + 1e-4


def test_update_matches_grid_oracle_random():
    rng = np.random.default_rng(7)
    for beta in (1.0, 0.5):
        m = mat_with(beta=beta)
        for _ in range(10):
            exx, eyy, exy = rng.uniform(-3.0, 3.0, 3)
            eps = Strain2D(exx, eyy, exy)
            d_n = rng.uniform(0.0, 0.6)
            d = local_damage_update(eps, d_n, m, tol=1e-10)
            ref = grid_scan_damage(eps, d_n, m, n=5001)
            assert abs(d - ref) <= 1e-10 + (1.0 - d_n) / 5000.0


def test_update_monotone_in_dn_and_strain():
    eps = Strain2D(3.0, 0.0, 0.0)
    prev = -1.0
    for d_n in np.linspace(0.0, 1.0, 21):
        d = local_damage_update(eps, d_n, MAT)
        assert d >= d_n
        assert d >= prev - 1e-12
        prev = d
    prev = 0.0
    for exx in np.linspace(0.5, 6.0, 30):
        d = local_damage_update(Strain2D(exx, 0.0, 0.0), 0.0, MAT)
        assert d >= prev - 1e-12
        prev = d


def test_update_frame_indifference():
    rng = np.random.default_rng(13)
    base = Strain2D(2.5, -0.4, 0.7)
    ref = local_damage_update(base, 0.1, MAT)
    t = np.array([[base.exx, base.exy], [base.exy, base.eyy]])
    for _ in range(20):
        th = rng.uniform(0.0, 2 * np.pi)
        q = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        tr = q @ t @ q.T
        rot = Strain2D(tr[0, 0], tr[1, 1], tr[0, 1])
        assert local_damage_update(rot, 0.1, MAT) == pytest.approx(ref, abs=1e-10)


# ---------------------------------------------------------------------------
# onset and saturation
# ---------------------------------------------------------------------------

def test_onset_value_and_eta_independence():
    assert onset_strain(MAT) == pytest.approx(np.sqrt(1.8), rel=1e-14)
    assert onset_strain(mat_with(eta=0.0)) == onset_strain(mat_with(eta=0.3))


def test_saturation_value_and_error():
    assert saturation_strain(MAT) == pytest.approx(12.0, rel=1e-13)
    with pytest.raises(ValueError):
        saturation_strain(mat_with(eta=0.0))


def test_sweep_oracle_confirms_thresholds():
    m = mat_with(eta=0.3)
    sat = saturation_strain(m)     # 4 sqrt(3) ~ 6.93
    strains, damages = sweep_uniaxial(m, 5e-3, 1.2 * sat)
    first_pos = strains[np.argmax(damages > 0.0)]
    first_one = strains[np.argmax(damages >= 1.0)]
    assert first_pos == pytest.approx(onset_strain(m), rel=0.01)
    assert damages[-1] >= 1.0
    assert first_one == pytest.approx(sat, rel=0.01)


# ---------------------------------------------------------------------------
# vectorized kernels
# ---------------------------------------------------------------------------

def test_principal_from_voigt_engineering_shear():
    strain = np.array([[0.3, -0.1, 0.4]])     # gamma_xy = 0.4 -> exy = 0.2
    e1, e2 = principal_from_voigt(strain)
    r1, r2 = Strain2D(0.3, -0.1, 0.2).principal()
    assert e1[0] == pytest.approx(r1)
    assert e2[0] == pytest.approx(r2)


def test_phi_of_d_matches_scalar_energy():
    rng = np.random.default_rng(19)
    for beta in (1.0, 0.2):
        m = mat_with(beta=beta)
        exx, eyy, exy = rng.uniform(-1.0, 1.0, (3, 50))
        voigt = np.stack([exx, eyy, 2 * exy], axis=1)
        e1, e2 = principal_from_voigt(voigt)
        w, a = damage_coeffs(e1, e2, m)
        d = rng.uniform(0.0, 1.0, 50)
        vals = phi_of_d(w, a, d, m.eta)
        for i in range(50):
            ref = free_energy(Strain2D(exx[i], eyy[i], exy[i]), d[i], m)
            assert vals[i] == pytest.approx(ref, rel=1e-12, abs=1e-15)


def test_local_update_field_matches_scalar():
    rng = np.random.default_rng(23)
    for beta in (1.0, 0.5):
        m = mat_with(beta=beta)
        exx, eyy, exy = rng.uniform(-3.0, 3.0, (3, 40))
        voigt = np.stack([exx, eyy, 2 * exy], axis=1)
        e1, e2 = principal_from_voigt(voigt)
        w, a = damage_coeffs(e1, e2, m)
        d_n = rng.uniform(0.0, 0.8, 40)
        out = local_update_field(w, a, d_n, m, tol=1e-10)
        for i in range(40):
            ref = local_damage_update(
                Strain2D(exx[i], eyy[i], exy[i]), d_n[i], m, tol=1e-10)
            assert out[i] == pytest.approx(ref, abs=5e-10)


def test_local_update_field_floor_caps_damage():
    # with the residual floor active the minimizer stops where g hits k_res
    m = mat_with(k_res=1e-6)
    voigt = np.array([[50.0, 0.0, 0.0]])     # far beyond saturation
    e1, e2 = principal_from_voigt(voigt)
    w, a = damage_coeffs(e1, e2, m)
    out = local_update_field(w, a, np.zeros(1), m, tol=1e-12, k_res=m.k_res)
    d = out[0]
    assert d < 1.0
    assert softening_g(d, m.eta) == pytest.approx(m.k_res, rel=1e-2)
