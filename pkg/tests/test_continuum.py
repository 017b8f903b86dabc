import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixhmm import continuum as fv
from mixhmm.continuum import (
    EXAMPLE_1,
    CflError,
    DegenerateStencilError,
    InterfaceExitError,
    Mesh1D,
    PhaseEscapeError,
    SetupError,
    SimConfig,
    bulk_flux,
    frame_solver,
    friction_factor,
    friction_source,
    hmm_step,
    interface_flux,
    lls_gradient,
    move_and_remesh,
    physical_flux,
    project_initial_data,
    riemann_data,
    run_simulation,
    totals,
)
from mixhmm.frame import identity_micro

SMALL = SimConfig(domain=(-0.02, 0.02), dx=2e-3, t_end=1e-5, snapshot_every=0)


def small_mesh(config=SMALL):
    return Mesh1D.uniform(config)


def test_reference_continuum_defaults():
    c = SimConfig()
    assert (c.t_end, c.dt, c.domain, c.dx, c.diffusion) == (0.003, 1e-7, (-5.0, 5.0), 2e-3, 1.0)
    assert c.dx_min == 1e-3 and c.boundary == ("outflow", "outflow")
    assert c.n_steps == 30000


def test_config_validation():
    with pytest.raises(SetupError):
        SimConfig(dx=-1.0)
    with pytest.raises(SetupError):
        SimConfig(interface_x=7.0)
    with pytest.raises(SetupError):
        SimConfig(boundary=("outflow", "periodic"))
    with pytest.raises(SetupError):
        Mesh1D.uniform(SimConfig(interface_x=0.0011))


def test_uniform_mesh():
    m = small_mesh()
    assert m.n_cells == 20 and m.interface == 10 and m.interface_x == 0.0
    np.testing.assert_allclose(m.widths, 2e-3, rtol=1e-9)
    assert list(m.phases) == [0] * 10 + [1] * 10


# --- initial data ----------------------------------------------------------


def test_constant_projection():
    u = np.array([800.0, 50.0, 3.0, -1.0])
    U = project_initial_data(lambda x: np.tile(u, (len(x), 1)), small_mesh())
    assert np.all(U == u)


def test_riemann_projection_exact():
    m = small_mesh()
    U = project_initial_data(riemann_data(*EXAMPLE_1), m)
    assert np.all(U[:10] == EXAMPLE_1[0]) and np.all(U[10:] == EXAMPLE_1[1])
    # analytic integral over [-0.02, 0] and [0, 0.02]
    exact = 0.02 * EXAMPLE_1[0] + 0.02 * EXAMPLE_1[1]
    np.testing.assert_allclose(totals(m, U), exact, rtol=1e-13)


def test_gauss_projection_of_linear_profile():
    m = small_mesh()
    U = project_initial_data(lambda x: np.column_stack([x, 2 * x, 0 * x, 0 * x]), m, n_quad=2)
    np.testing.assert_allclose(U[:, 0], m.centers, atol=1e-17)


# --- fluxes ----------------------------------------------------------------


def test_bulk_flux_consistency(eos):
    u = np.array([900.0, 80.0, 900.0 * 2.0, 80.0 * -1.0])
    np.testing.assert_allclose(bulk_flux(u, u, eos)[0], physical_flux(u)[0], rtol=1e-15)


def test_bulk_flux_mirror_symmetry(eos):
    uL = np.array([900.0, 80.0, 1800.0, -80.0])
    uR = np.array([950.0, 60.0, 950.0, 120.0])
    mirror = np.array([1.0, 1.0, -1.0, -1.0])
    F = bulk_flux(uL, uR, eos)[0]
    G = bulk_flux(uR * mirror, uL * mirror, eos)[0]
    np.testing.assert_allclose(G[:2], -F[:2], rtol=1e-14)


def test_bulk_flux_upwind_for_supersonic_advection(eos):
    # decoupled transport with the dissipation speed equal to the transport speed
    v = 40.0
    uL = np.array([10.0, 2.0, 10.0 * v, 2.0 * v])
    uR = np.array([5.0, 8.0, 5.0 * v, 8.0 * v])
    F = bulk_flux(uL, uR, eos, lam=np.array([v]))[0]
    np.testing.assert_allclose(F, physical_flux(uL)[0], rtol=1e-15)


def test_interface_flux_comoving_state_is_zero():
    s = 3.5
    u = np.array([700.0, 40.0, 700.0 * s, 40.0 * s])
    fm, fp = interface_flux(u, u, s)
    assert fm[0] == fp[0] == 0.0 and fm[1] == fp[1] == 0.0


def test_interface_flux_static():
    u = np.array([700.0, 40.0, 7.0, -4.0])
    fm, fp = interface_flux(u, u, 0.0)
    np.testing.assert_array_equal(fm, physical_flux(u)[0])
    np.testing.assert_array_equal(fp, fm)


# --- sources ---------------------------------------------------------------


def test_friction_factor_hand_value(eos):
    M0, M1 = 0.039948, 0.016043
    c = 10.0 / M0 + 20.0 / M1  # mol/m^3
    expected = eos.params.R / (M0 * M1 * c * 1.0)
    assert friction_factor(10.0, 20.0, M0, M1, 1.0, eos.params.R) == pytest.approx(expected, rel=1e-12)
    assert (eos.params.M0, eos.params.M1) == (M0, M1)


def test_friction_no_slip(eos):
    U = np.array([[900.0, 80.0, 900.0 * 1.5, 80.0 * 1.5]])
    assert np.all(friction_source(U, eos, 1.0) == 0.0)


@settings(max_examples=50, deadline=None)
@given(
    st.floats(1.0, 1500.0), st.floats(1.0, 500.0), st.floats(-100.0, 100.0), st.floats(-100.0, 100.0)
)
def test_friction_conserves_momentum(rho0, rho1, v0, v1):
    from mixhmm.eos import default_eos

    S = friction_source(np.array([[rho0, rho1, rho0 * v0, rho1 * v1]]), default_eos(), 1.0)[0]
    assert S[0] == S[1] == 0.0
    assert S[2] + S[3] == 0.0
    assert S[2] * (v0 - v1) <= 0.0  # drag opposes slip


def test_chem_potential_gradient_one_sided_at_interface():
    centers = np.arange(6) * 1.0
    vals = np.array([0.0, 1.0, 4.0, 100.0, 110.0, 130.0])
    g = fv.phase_gradient(vals, centers, 3)
    np.testing.assert_array_equal(g, [1.0, 2.0, 3.0, 10.0, 15.0, 20.0])


def test_chem_potential_source_vanishes_for_uniform_phases(eos):
    m = small_mesh()
    U = project_initial_data(riemann_data(*EXAMPLE_1), m)
    assert np.all(fv.chem_potential_source(U, m, eos) == 0.0)


# --- least-squares gradient ------------------------------------------------


def simplex_stencil(rng, d, h):
    center = rng.normal(size=d)
    dirs = rng.normal(size=(d + 1, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return center, center + h * dirs


@pytest.mark.parametrize("d", [2, 3])
def test_lls_exact_on_affine(rng, d):
    for _ in range(200):
        g = rng.normal(size=d)
        c0 = rng.normal()
        center, pts = simplex_stencil(rng, d, rng.uniform(0.01, 1.0))
        out = lls_gradient(g @ center + c0, center, [(p, g @ p + c0) for p in pts])
        np.testing.assert_allclose(out, g, rtol=0, atol=1e-12 * max(1.0, np.abs(g).max()))


def test_lls_constant_field(rng):
    center, pts = simplex_stencil(rng, 3, 0.1)
    np.testing.assert_allclose(lls_gradient(2.0, center, [(p, 2.0) for p in pts]), 0.0, atol=1e-15)


def test_lls_multiple_fields(rng):
    center, pts = simplex_stencil(rng, 2, 0.2)
    G = np.array([[1.0, 2.0], [-3.0, 0.5]])
    out = lls_gradient(G @ center, center, [(p, G @ p) for p in pts])
    np.testing.assert_allclose(out, G, atol=1e-12)


@pytest.mark.parametrize("d", [2, 3])
def test_lls_first_order_on_quadratic(rng, d):
    Q = rng.normal(size=(d, d))
    Q = Q + Q.T
    center = rng.normal(size=d)
    dirs = rng.normal(size=(d + 1, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    def err(h):
        pts = center + h * dirs
        f = lambda x: x @ Q @ x  # noqa: E731
        out = lls_gradient(f(center), center, [(p, f(p)) for p in pts])
        return np.linalg.norm(out - 2 * Q @ center)

    ratio = err(1e-2) / err(5e-3)
    assert 1.5 <= ratio <= 3.0


def test_lls_degenerate(rng):
    center = np.zeros(2)
    pts = [np.array([1.0, 0.0]), np.array([2.0, 0.0]), np.array([-1.0, 0.0])]
    with pytest.raises(DegenerateStencilError):
        lls_gradient(0.0, center, [(p, 0.0) for p in pts])
    with pytest.raises(DegenerateStencilError):
        lls_gradient(0.0, np.zeros(3), [(np.ones(3), 1.0)])


# --- mesh motion -----------------------------------------------------------


def test_zero_speed_keeps_mesh():
    m = small_mesh()
    m2, _ = move_and_remesh(m, 0.0, 1e-7)
    np.testing.assert_array_equal(m2.nodes, m.nodes)


def test_remesh_merges_and_splits_within_bounds(rng):
    m = small_mesh()
    U = rng.uniform(1.0, 100.0, size=(m.n_cells, 4))
    mass0 = totals(m, U)
    # march the interface to the right in CFL-sized steps
    for _ in range(15):
        w = m.widths
        k = m.interface
        s = 0.9 * m.dx_min / 1e-6
        w_new = w.copy()
        w_new[k - 1] += s * 1e-6
        w_new[k] -= s * 1e-6
        conserved = w[:, None] * U
        m, U = move_and_remesh(m, s, 1e-6, conserved / w_new[:, None])
        assert np.all(m.widths >= m.dx_min * (1 - 1e-12)) and np.all(m.widths <= m.dx_max * (1 + 1e-12))
        np.testing.assert_allclose(totals(m, U), mass0, rtol=1e-13)
        assert list(m.phases[: m.interface]) == [0] * m.interface


def test_remesh_keeps_uniform_field():
    m = small_mesh()
    u = np.array([900.0, 80.0, 0.0, 0.0])
    U = np.tile(u, (m.n_cells, 1))
    for _ in range(25):
        m, U = move_and_remesh(m, -500.0, 1e-6, U)
    np.testing.assert_allclose(U, np.tile(u, (m.n_cells, 1)), rtol=1e-15)


def test_interface_cfl_and_exit():
    m = small_mesh()
    with pytest.raises(CflError):
        move_and_remesh(m, 1e4, 1e-6)
    edge = Mesh1D(np.array([0.0, 1.0, 2.0]), 1, 1.0, 0.5, 1.5)
    with pytest.raises(InterfaceExitError):
        move_and_remesh(edge, 2.5, 1.0)


# --- time stepping ---------------------------------------------------------


def test_static_coexistence_with_identity_micro(eos):
    m = small_mesh()
    U = project_initial_data(riemann_data(*EXAMPLE_1), m)
    U0 = U.copy()
    solver = frame_solver(identity_micro)
    for _ in range(100):
        m, U, s = hmm_step(m, U, solver, eos, SMALL)
        assert s == 0.0
    np.testing.assert_array_equal(U, U0)


class TaggedEos:
    """Stub EOS: constant wave speed, flat chemical potential, phases by position."""

    def __init__(self, eos, n_liquid):
        self.params = eos.params
        self.n_liquid = n_liquid

    def wave_speeds(self, rho0, rho1, v0, v1):
        return np.full(np.shape(rho0), 300.0)

    def chemical_potential(self, rho0, rho1):
        return np.zeros_like(rho0), np.zeros_like(rho1)

    def phase_codes(self, rho0, rho1):
        codes = np.ones(len(rho0), dtype=int)
        codes[: self.n_liquid] = 0
        return codes


def test_free_stream_preservation(eos):
    cfg = SimConfig(domain=SMALL.domain, dx=SMALL.dx, friction=False)
    m = small_mesh(cfg)
    u = np.array([600.0, 30.0, 600.0 * 5.0, 30.0 * -2.0])
    U = np.tile(u, (m.n_cells, 1))
    stub = TaggedEos(eos, m.interface)
    solver = frame_solver(identity_micro)
    for _ in range(50):
        m, U, _ = hmm_step(m, U, solver, stub, cfg)
    np.testing.assert_allclose(U, np.tile(u, (m.n_cells, 1)), rtol=1e-14)


def mass_conserving_micro(s=2.0):
    """Keeps the liquid state and closes the vapour mass fluxes at speed ``s``."""

    def micro(um, up):
        um = np.array(um, dtype=float)
        up = np.array(up, dtype=float)
        up[2:] = um[2:] + s * (up[:2] - um[:2])
        return um, up, s

    return micro


def test_mass_budget_closed_domain(eos):
    cfg = SimConfig(domain=SMALL.domain, dx=SMALL.dx, boundary=("reflective", "reflective"), snapshot_every=0)
    m = small_mesh(cfg)
    U = project_initial_data(riemann_data(*EXAMPLE_1), m)
    mass0 = totals(m, U)[:2]
    solver = frame_solver(mass_conserving_micro(0.05))
    for _ in range(200):
        m, U, _ = hmm_step(m, U, solver, eos, cfg)
        np.testing.assert_allclose(totals(m, U)[:2], mass0, rtol=1e-12)
    assert m.interface_x > 0.0


def test_mass_budget_equals_boundary_flux(eos):
    cfg = SimConfig(domain=SMALL.domain, dx=SMALL.dx, snapshot_every=0)
    m = small_mesh(cfg)
    liq, vap = EXAMPLE_1[0].copy(), EXAMPLE_1[1].copy()
    liq[2:] = liq[:2] * 4.0
    vap[2:] = vap[:2] * 4.0
    U = project_initial_data(riemann_data(liq, vap), m)
    before = totals(m, U)[:2]
    m2, U2, _ = hmm_step(m, U, frame_solver(mass_conserving_micro(4.0)), eos, cfg)
    # outflow: the ghost equals the end cell, so the boundary flux is its exact flux
    net = physical_flux(U[0])[0][:2] - physical_flux(U[-1])[0][:2]
    np.testing.assert_allclose(totals(m2, U2)[:2] - before, cfg.dt * net, rtol=1e-9, atol=1e-15)


def test_cfl_violation(eos):
    cfg = SimConfig(domain=SMALL.domain, dx=SMALL.dx, dt=1e-5)
    m = small_mesh(cfg)
    U = project_initial_data(riemann_data(*EXAMPLE_1), m)
    with pytest.raises(CflError):
        hmm_step(m, U, frame_solver(identity_micro), eos, cfg)


def test_phase_escape_diagnostic(eos):
    m = small_mesh()
    U = project_initial_data(riemann_data(*EXAMPLE_1), m)
    U[12] = EXAMPLE_1[0]
    with pytest.raises(PhaseEscapeError) as err:
        fv.check_phases(U, m, eos)
    assert err.value.cell == 12 and "vapor" in str(err.value)


def test_step_error_keeps_last_good_snapshot(eos, tmp_path):
    def bad(um, up):
        up = np.array(up, dtype=float)
        up[2] = -1e6  # drains the vapour cell below zero density
        return um, up, 0.0

    cfg = SimConfig(domain=SMALL.domain, dx=SMALL.dx, t_end=1e-6, snapshot_every=0)
    res = run_simulation(cfg, frame_solver(bad), EXAMPLE_1, eos, out_dir=tmp_path)
    assert res.status == "failed" and "PhaseEscapeError" in res.error
    assert len(res.times) == 1 and len(res.snapshots) == 1


# --- driver and files ------------------------------------------------------


def test_zero_length_run(eos, tmp_path):
    cfg = SimConfig(domain=SMALL.domain, dx=SMALL.dx, t_end=0.0)
    res = run_simulation(cfg, frame_solver(identity_micro), EXAMPLE_1, eos, out_dir=tmp_path)
    assert res.status == "completed" and len(res.snapshots) == 1
    snap = fv.read_snapshot(res.snapshots[0])
    assert snap["t"] == 0.0 and snap["step"] == 0
    np.testing.assert_array_equal(snap["rho"][:, 0], [1200.0] * 10 + [10.0] * 10)
    manifest = json.loads((tmp_path / "run_manifest.json").read_text())
    assert manifest["steps"] == 0 and manifest["config"]["dt"] == 1e-7


def test_snapshot_interval_and_trajectory(eos, tmp_path):
    cfg = SimConfig(domain=SMALL.domain, dx=SMALL.dx, t_end=1e-6, snapshot_every=4)
    res = run_simulation(cfg, frame_solver(mass_conserving_micro(0.05)), EXAMPLE_1, eos, out_dir=tmp_path)
    assert [fv.read_snapshot(p)["step"] for p in res.snapshots] == [0, 4, 8, 10]
    rows = (tmp_path / "interface_trajectory.csv").read_text().splitlines()
    assert rows[0] == "t[s],interface_x[m],s[m/s]" and len(rows) == 12
    np.testing.assert_allclose(res.interface[-1], 10 * 1e-7 * 0.05, rtol=1e-12)


def test_snapshot_round_trip(eos, tmp_path, rng):
    m = small_mesh()
    U = rng.uniform(1.0, 100.0, size=(m.n_cells, 4))
    fv.write_snapshot(tmp_path / "s.txt", m, U, 1.5e-4, 1500)
    snap = fv.read_snapshot(tmp_path / "s.txt")
    assert snap["t"] == 1.5e-4 and snap["interface_x"] == m.interface_x
    np.testing.assert_array_equal(snap["rho"], U[:, :2])
    np.testing.assert_allclose(snap["v"], U[:, 2:] / U[:, :2], rtol=1e-15)
    np.testing.assert_array_equal(snap["phase"], m.phases)
