import numpy as np
import pytest

from contact_stokes.equilibrium import PhysicalParams, build_equilibrium
from contact_stokes.fem import build_mesh, rectangle_mesh
from contact_stokes.kernels import ResponseFunction
from contact_stokes.solver import (
    CHECKPOINT_VERSION,
    Simulation,
    SmallDataError,
    assemble_system,
    energy_audit,
    inf_sup_constant,
    load_checkpoint,
    manufactured_convergence,
    save_checkpoint,
    solve_saddle,
    time_derivatives,
)


def test_manufactured_solution_converges_at_the_expected_orders():
    res = manufactured_convergence(levels=(8, 16))
    assert res["orders"]["u_H1"][0] > 1.8
    assert res["orders"]["u_L2"][0] > 2.7
    assert res["orders"]["p_L2"][0] > 1.5
    assert all(r["residual"] < 1e-10 for r in res["errors"])


def test_inf_sup_constant_stays_bounded_under_refinement():
    betas = [inf_sup_constant(rectangle_mesh(n, n // 2)) for n in (4, 8, 12)]
    assert min(betas) > 0.1
    assert max(betas) / min(betas) < 1.5


def test_equilibrium_is_stationary(small_sim):
    state, records = small_sim.run(np.zeros(small_sim.mesh.nx), dt=0.05, n_steps=3)
    assert np.abs(state.eta).max() < 1e-14
    assert np.abs(state.u).max() < 1e-14
    assert all(r.energy == 0.0 for r in records)


def test_mass_is_conserved_and_energy_decreases(small_sim, mode_eta):
    eta0 = mode_eta(small_sim.mesh.surface_x, amp=0.05)
    state, records = small_sim.run(eta0, dt=0.02, n_steps=10)
    assert max(abs(r.mass) for r in records) < 1e-14
    assert max(abs(r.drift) for r in records) < 1e-12
    E = np.array([r.energy for r in records])
    assert np.all(np.diff(E) < 0)
    assert all(r.gate["ok"] for r in records)
    assert all(r.residual < 1e-10 for r in records[1:])


def test_energy_audit_shrinks_with_the_time_step(small_sim, mode_eta):
    eta0 = mode_eta(small_sim.mesh.surface_x, amp=0.05)
    a = energy_audit(small_sim.run(eta0, dt=0.02, n_steps=4)[1])
    b = energy_audit(small_sim.run(eta0, dt=0.01, n_steps=8)[1])
    assert b.max() < 0.7 * a.max()
    with pytest.raises(ValueError):
        energy_audit([])


def test_saddle_residual_and_mass_multiplier(small_sim, mode_eta):
    state = small_sim.initial_state(mode_eta(small_sim.mesh.surface_x))
    system = assemble_system(small_sim, state, 0.01)
    sol = solve_saddle(system)
    assert sol.residual < 1e-10
    # the surface flux vanishes, so eta keeps zero mean
    Bu = system.parts["B"] @ sol.u
    assert abs(small_sim.surface.mean(Bu)) < 1e-12


def test_large_data_is_refused(small_sim, mode_eta):
    state = small_sim.initial_state(mode_eta(small_sim.mesh.surface_x, amp=0.2, k=2))
    with pytest.raises(SmallDataError):
        small_sim.advance(state, 0.01)


def test_invalid_time_step(small_sim):
    state = small_sim.initial_state(np.zeros(small_sim.mesh.nx))
    with pytest.raises(ValueError):
        small_sim.advance(state, 0.0)


def test_nonlinear_response_converges(mode_eta):
    params = PhysicalParams(gamma_jump=0.5, response=ResponseFunction.sinh(1.0, 2.0))
    eq = build_equilibrium(params, n_samples=513)
    sim = Simulation(eq, build_mesh(eq, 8))
    eta0 = 0.03 * eq.min_zeta0 * np.cos(np.pi * (sim.mesh.surface_x + 1) / 2)
    state, records = sim.run(eta0, dt=0.02, n_steps=3)
    assert all(1 < r.newton_iterations <= sim.newton_maxit for r in records[1:])
    assert records[-1].energy < records[0].energy


def test_time_derivatives_of_a_polynomial_history():
    t = np.array([0.0, 0.1, 0.2, 0.3])
    hist = tuple((ti, np.array([ti**2, ti**3]), None, None, None) for ti in t)
    assert np.allclose(time_derivatives(hist, 0), [0.09, 0.027])
    assert np.allclose(time_derivatives(hist, 1), [(0.09 - 0.04) / 0.1, (0.027 - 0.008) / 0.1])
    assert np.allclose(time_derivatives(hist, 2), [2.0, 6 * 0.2])
    assert np.allclose(time_derivatives(hist, 3), [0.0, 6.0])
    with pytest.raises(ValueError):
        time_derivatives(hist[:2], 2)


def test_checkpoint_round_trip_is_byte_reproducible(tmp_path, small_sim, mode_eta):
    state, _ = small_sim.run(mode_eta(small_sim.mesh.surface_x), dt=0.02, n_steps=5)
    a, b = tmp_path / "a.npz", tmp_path / "b.npz"
    save_checkpoint(a, state)
    save_checkpoint(b, state)
    assert a.read_bytes() == b.read_bytes()
    back = load_checkpoint(a)
    assert back.step == state.step and back.time == state.time
    for name in ("eta", "u", "p", "contact_velocities"):
        assert np.array_equal(getattr(back, name), getattr(state, name))
    assert len(back.history) == len(state.history)
    for h0, h1 in zip(back.history, state.history):
        assert h0[0] == h1[0]
        assert all(np.array_equal(x, y) for x, y in zip(h0[1:], h1[1:]))
    # resuming continues bit-for-bit
    s1, _ = small_sim.advance(state, 0.02)
    s2, _ = small_sim.advance(back, 0.02)
    assert np.array_equal(s1.eta, s2.eta)


def test_checkpoint_version_is_checked(tmp_path, small_sim):
    state = small_sim.initial_state(np.zeros(small_sim.mesh.nx))
    path = tmp_path / "c.npz"
    save_checkpoint(path, state)
    with np.load(path) as z:
        arrays = dict(z)
    arrays["version"] = np.array(CHECKPOINT_VERSION + 1)
    np.savez(path, **arrays)
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(path)
