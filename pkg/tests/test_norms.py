import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from contact_stokes.equilibrium import build_equilibrium
from contact_stokes.fem import rectangle_mesh
from contact_stokes.norms import (
    CornerScenario,
    DiagnosticsReport,
    NormError,
    WeightedNormSpec,
    bracket,
    corner_probe,
    decay_fit,
    fractional_norm,
    fractional_seminorm,
    functionals,
    parallel_energy,
    probe_norm,
    recovered_hessians,
    weighted_norm,
)


def bump(center, rho):
    """C-infinity bump supported in the disc of radius ``rho``."""

    def f(x):
        s = np.sum((x - center) ** 2, axis=-1) / rho**2
        out = np.zeros(s.shape)
        inside = s < 1
        out[inside] = np.exp(-1.0 / (1.0 - s[inside]))
        return out

    return f


# ---------------------------------------------------------------- weighted norms


def test_zero_weight_gives_the_plain_l2_norm():
    mesh = rectangle_mesh(8, 4, ell=1.0, top=0.0, depth=1.0)
    f = lambda x: 1.0 + x[..., 0] - 2.0 * x[..., 1] ** 2
    got = weighted_norm(mesh, f, WeightedNormSpec(k=0, delta=0.0))
    ref, _ = integrate.dblquad(lambda y, x: (1 + x - 2 * y * y) ** 2, -1, 1, -1, 0, epsabs=1e-14)
    assert got == pytest.approx(math.sqrt(ref), abs=1e-12)


@pytest.mark.parametrize("delta", [-0.5, 0.0, 0.3, 0.8])
def test_constant_field_matches_the_quadrature_oracle(delta):
    mesh = rectangle_mesh(6, 6, ell=0.5, top=1.0, depth=0.0)
    spec = WeightedNormSpec(k=0, delta=delta, corners=((-0.5, 0.0),))
    got = weighted_norm(mesh, np.ones(mesh.n_nodes), spec, squared=True)
    ref, _ = integrate.dblquad(
        lambda y, x: (x * x + y * y) ** delta, 0, 1, 0, 1, epsabs=1e-13, epsrel=1e-13
    )
    assert got == pytest.approx(ref, abs=1e-8)


def test_second_derivatives_of_a_quadratic_are_exact():
    mesh = rectangle_mesh(4, 2, ell=1.0, top=0.0, depth=1.0)
    f = lambda x: x[..., 0] ** 2 + 3 * x[..., 0] * x[..., 1] - x[..., 1] ** 2
    full = weighted_norm(mesh, f, WeightedNormSpec(k=2), squared=True)
    first = weighted_norm(mesh, f, WeightedNormSpec(k=1), squared=True)
    # Hessian entries 2, 3, -2: the mixed derivative counts once
    assert full - first == pytest.approx(2.0 * (4 + 9 + 4), rel=1e-12)


def test_hardy_inequality_on_compactly_supported_fields():
    delta = 0.5
    corner = (-1.0, 0.0)
    mesh = rectangle_mesh(32, 16, ell=1.0, top=0.0, depth=1.0)
    rng = np.random.default_rng(7)
    ratios = []
    for _ in range(30):
        a, b = rng.uniform(0.08, 0.9, size=2)
        rho = rng.uniform(0.3, 0.95) * min(a, b, 2 - a, 1 - b)
        f = bump(np.array([corner[0] + a, corner[1] - b]), rho)
        lhs = weighted_norm(mesh, f, WeightedNormSpec(0, delta - 1, (corner,)))
        rhs = weighted_norm(mesh, f, WeightedNormSpec(1, delta, (corner,)))
        ratios.append(lhs / rhs)
    C = max(ratios)
    # radial Hardy: int r^(2d-2) f^2 <= d^-2 int r^(2d) |grad f|^2 in the plane
    assert 0 < C <= 1.0 / delta


@given(
    st.floats(-0.9, 0.9),
    st.floats(0.01, 0.9),
    st.integers(0, 2),
    st.integers(0, 2**31 - 1),
)
@settings(max_examples=25, deadline=None)
def test_weighted_norms_nest_on_a_unit_diameter_patch(d1, gap, k, seed):
    d2 = min(d1 + gap, 0.99)
    # (-0.35, 0.35) x (-0.7, 0) has diameter 0.99
    mesh = _patch_mesh()
    U = np.random.default_rng(seed).normal(size=mesh.n_nodes)
    corners = tuple(map(tuple, mesh.corner_points))
    n1 = weighted_norm(mesh, U, WeightedNormSpec(k, d1, corners))
    n2 = weighted_norm(mesh, U, WeightedNormSpec(k, d2, corners))
    assert n1 >= n2 * (1 - 1e-12)


_PATCH = []


def _patch_mesh():
    if not _PATCH:
        _PATCH.append(rectangle_mesh(6, 6, ell=0.35, top=0.0, depth=0.7))
    return _PATCH[0]


def test_orders_beyond_the_field_raise():
    mesh = rectangle_mesh(4, 2)
    with pytest.raises(NormError):
        weighted_norm(mesh, np.ones(mesh.n_pressure), WeightedNormSpec(k=2), kind="p1")
    with pytest.raises(NormError):
        weighted_norm(mesh, np.ones(mesh.n_nodes + 1), WeightedNormSpec(k=0), kind="p2")
    with pytest.raises(NormError):
        WeightedNormSpec(k=0, delta=-1.0)
    with pytest.raises(NormError):
        WeightedNormSpec(k=-1)


def test_p1_fields_are_integrated_exactly():
    mesh = rectangle_mesh(4, 2)
    p = mesh.nodes[mesh.pnodes, 0] + 1.0
    got = weighted_norm(mesh, p, WeightedNormSpec(k=1), kind="p1", squared=True)
    # int (x+1)^2 + 1 over (-1,1) x (-1,0)
    assert got == pytest.approx(8 / 3 + 2, rel=1e-13)


def test_corner_radius_restricts_the_integral():
    mesh = rectangle_mesh(16, 8)
    spec = WeightedNormSpec(k=0, delta=0.0)
    full = weighted_norm(mesh, np.ones(mesh.n_nodes), spec, squared=True)
    local = weighted_norm(mesh, np.ones(mesh.n_nodes), spec, radius=0.25, squared=True)
    assert 0 < local < 2 * math.pi * 0.25**2 / 4 * 1.01 < full


# ---------------------------------------------------------------- fractional norms


def test_seminorm_vanishes_on_constants():
    x = np.linspace(-1, 1, 33)
    assert fractional_seminorm(np.full(33, 4.2), x) == 0.0
    assert fractional_seminorm(np.full(33, 4.2), x, delta=0.5) == 0.0


def test_seminorm_of_the_identity():
    x = np.linspace(-1, 1, 65)
    # ((x - y)/(x - y))^2 integrates to 4 over the square
    assert fractional_seminorm(x, x) == pytest.approx(2.0, abs=1e-12)


def test_seminorm_of_a_smooth_function_matches_an_adaptive_oracle():
    ref, _ = integrate.dblquad(
        lambda y, x: ((np.sin(x) - np.sin(y)) / (x - y)) ** 2 if x != y else np.cos(x) ** 2,
        -1, 1, -1, 1, epsabs=1e-12,
    )
    x = np.linspace(-1, 1, 257)
    assert fractional_seminorm(np.sin(x), x, squared=True) == pytest.approx(ref, abs=1e-4)


@given(st.floats(-1e3, 1e3).filter(lambda c: c == 0 or abs(c) > 1e-100), st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_seminorm_is_homogeneous(c, seed):
    x = np.linspace(-1, 1, 17)
    f = np.random.default_rng(seed).normal(size=17)
    base = fractional_seminorm(f, x)
    assert fractional_seminorm(c * f, x) == pytest.approx(abs(c) * base, rel=1e-12, abs=1e-300)


def test_higher_order_norms_add_derivatives():
    x = np.linspace(-1, 1, 129)
    f = np.cos(x)
    n12 = fractional_norm(f, x, 0.5, squared=True)
    n32 = fractional_norm(f, x, 1.5, squared=True)
    l2 = 1 + math.sin(2) / 2  # int cos^2
    h1 = 2.0  # int cos^2 + sin^2
    assert n12 == pytest.approx(l2 + fractional_seminorm(f, x, squared=True), rel=1e-4)  # trapezoid, h = 1/64
    assert n32 == pytest.approx(h1 + fractional_seminorm(-np.sin(x), x, squared=True), rel=1e-4)
    n52 = fractional_norm(f, x, 2.5, squared=True)
    assert n52 == pytest.approx(h1 + l2 + fractional_seminorm(-f, x, squared=True), rel=1e-4)


@pytest.mark.parametrize(
    "f,x,kw",
    [
        (np.ones(7), np.linspace(0, 1, 7), {}),
        (np.ones(9), np.linspace(0, 1, 9) ** 2, {}),
        (np.ones(9), None, {}),
        (np.ones(9), np.linspace(0, 1, 9), {"s": 1.0}),
    ],
)
def test_fractional_input_errors(f, x, kw):
    with pytest.raises(NormError):
        fractional_norm(f, x, kw.get("s", 0.5))


# ---------------------------------------------------------------- functionals and fits


def test_bracket():
    assert bracket([1.0, 1.0], [1.0, 1.0], 0.7) == pytest.approx(1.4)
    assert bracket([2.0, 0.0, -1.0], [3.0, 9.0, 4.0], 1.0) == pytest.approx(2.0)


def test_decay_fit_recovers_the_exponent():
    t = np.linspace(0, 3, 40)
    fit = decay_fit(t, np.exp(-2 * t))
    assert fit["lambda"] == pytest.approx(2.0, rel=1e-12)
    assert fit["r_squared"] == pytest.approx(1.0, abs=1e-12)
    flat = decay_fit(t, np.full(40, 0.3))
    assert flat["lambda"] == 0.0 and flat["r_squared"] == 1.0


@pytest.mark.parametrize(
    "E",
    [np.r_[np.ones(30), 0.0], np.r_[np.ones(30), -1.0], np.r_[np.ones(30), np.nan], np.ones(5)],
)
def test_decay_fit_rejects_bad_series(E):
    with pytest.raises(NormError):
        decay_fit(np.arange(E.size, dtype=float), E)


def test_functionals_vanish_at_equilibrium(small_sim):
    state, _ = small_sim.run(np.zeros(small_sim.mesh.nx), dt=0.05, n_steps=3)
    F = functionals(state.history, small_sim)
    for key in ("E_parallel", "D_bar", "D_parallel", "E_full_surrogate", "D_full_surrogate"):
        assert F[key] == 0.0
    assert all(v == 0.0 for v in F["terms"].values())


def test_functionals_need_three_states(small_sim):
    state = small_sim.initial_state(np.zeros(small_sim.mesh.nx))
    with pytest.raises(NormError, match="insufficient history"):
        functionals(state.history, small_sim)
    with pytest.raises(NormError):
        parallel_energy(state.history, small_sim.surface)


def test_parallel_energy_of_an_exponential_decays_at_twice_the_rate(small_sim, mode_eta):
    lam, dt = 0.7, 0.05
    eta0 = mode_eta(small_sim.mesh.surface_x)
    t = np.arange(40) * dt
    hist = [(ti, np.exp(-lam * ti) * eta0, None, None, None) for ti in t]
    E = np.array([parallel_energy(hist[i - 2 : i + 1], small_sim.surface) for i in range(2, t.size)])
    fit = decay_fit(t[2:], E)
    assert fit["lambda"] == pytest.approx(2 * lam, rel=1e-10)


def test_parallel_energy_is_coercive_against_dissipation_on_a_decaying_run(small_sim, mode_eta):
    state = small_sim.initial_state(mode_eta(small_sim.mesh.surface_x, amp=0.05))
    samples = []
    for n in range(160):
        state, _ = small_sim.advance(state, 0.04)
        if n >= 3 and n % 8 == 0:
            F = functionals(state.history, small_sim)
            assert F["flags"]["eta_t3"] in ("ok", "noisy")
            samples.append((state.time, F["E_parallel"], F["D_parallel"]))
    t, E, D = np.array(samples).T
    ratio = E / D
    C = ratio.max()
    assert np.all(E <= C * D)
    # the constant fitted on the second half agrees with the one on the last quarter
    half = ratio[t >= t[-1] / 2].max()
    quarter = ratio[t >= 3 * t[-1] / 4].max()
    assert abs(half - quarter) < 0.05 * quarter
    assert C < 1.0


# ---------------------------------------------------------------- report


def test_report_validation_and_summary():
    t = np.linspace(0, 1, 5)
    rep = DiagnosticsReport(t, np.zeros(5), np.exp(-t), np.exp(-t), np.exp(-t), np.r_[np.nan, np.zeros(4)])
    rep.validate()
    assert rep.rows().shape == (5, 6)
    s = json.loads(rep.summary_json())
    assert s["n_steps"] == 4 and s["max_balance_residual"] == 0.0
    with pytest.raises(NormError):
        DiagnosticsReport(t, np.zeros(4), t, t, t, t)
    bad = DiagnosticsReport(t, np.zeros(5), t, -t - 1, t, t)
    with pytest.raises(NormError):
        bad.validate()


# ---------------------------------------------------------------- corner probe


def test_corner_angles_give_the_critical_weights():
    right = build_equilibrium(CornerScenario(gamma_over_sigma=0.0).params())
    assert right.omega == pytest.approx(math.pi / 2)
    assert right.delta_omega == 0.0
    obtuse = build_equilibrium(CornerScenario().params())
    assert obtuse.omega == pytest.approx(3 * math.pi / 4)
    assert obtuse.delta_omega == pytest.approx(2 / 3)


def test_probe_runs_for_a_right_corner():
    out = corner_probe(CornerScenario(gamma_over_sigma=0.0), deltas=[0.3, 0.7], levels=(8, 16))
    assert out["delta_omega"] == 0.0
    assert len(out["rows"]) == 4
    assert all(row[2] > 0 and np.isfinite(row[2]) for row in out["rows"])
    assert set(out["trend"]) == {0.3, 0.7}


def test_recovered_hessians_of_a_quadratic_are_exact():
    mesh = rectangle_mesh(8, 4)
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    U = np.column_stack([x * x - x * y, 2 * y * y + x])
    verts, H = recovered_hessians(mesh, U)
    assert np.array_equal(verts, mesh.pnodes)
    expect = np.array([[2.0, -1.0, 0.0], [0.0, 0.0, 4.0]])
    assert np.allclose(H, np.broadcast_to(expect, H.shape), atol=1e-9)


def test_probe_norm_rejects_unknown_methods():
    mesh = rectangle_mesh(8, 4)
    with pytest.raises(NormError):
        probe_norm(mesh, np.zeros(2 * mesh.n_nodes), 0.5, 0.25, method="bogus")
