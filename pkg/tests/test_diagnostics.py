"""Energy balance, functionals, residual series, layer indicator and monitors."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_smooth_field, random_smooth_map
from viscofree.constitutive import MaterialParams
from viscofree.diagnostics import (
    INTEGRAL_KEYS,
    InsufficientHistoryError,
    backward_derivative,
    basic_energy,
    boundary_layer_indicator,
    diagnose,
    dissipation_rate,
    energy_audit,
    energy_balance_residual,
    energy_functional_E,
    energy_functional_series,
    fd_weights,
    jacobi_residual,
    korn_ratio,
    layer_baseline,
    normal_system_matrix,
    q_eqn_residual,
    surface_energy,
    trace_ratio,
)
from viscofree.dynamics import (
    FlowState,
    HistoryEntry,
    RunConfig,
    Snapshot,
    equilibrium_state,
    simulate,
    stable_dt,
    well_prepared_initial,
)
from viscofree.geometry import GeometryCache
from viscofree.grid_ops import Grid


@pytest.fixture(scope="module")
def short_run():
    g = Grid(32, 17)
    p = MaterialParams(epsilon=0.01)
    init = well_prepared_initial(g, p, 0.002)
    return simulate(RunConfig(g, p, 0.2, output_interval=0.05), init)


# -- energy ---------------------------------------------------------------------------


def test_equilibrium_energy_is_surface_energy():
    g = Grid(16, 9)
    p = MaterialParams(sigma=0.05)
    eq = equilibrium_state(g)
    assert surface_energy(eq.eta, p, g) == pytest.approx(0.1)
    assert basic_energy(eq, p, g) == pytest.approx(0.1, abs=1e-15)
    assert dissipation_rate(eq, p, g) == 0.0


def test_dissipation_nonnegative_and_zero_inviscid(rng):
    g = Grid(32, 17)
    eta = random_smooth_map(g, rng)
    v = random_smooth_field(g, rng)
    st_ = FlowState(eta, v)
    assert dissipation_rate(st_, MaterialParams(epsilon=0.01, lam=-0.5), g) >= 0.0
    assert dissipation_rate(st_, MaterialParams(epsilon=0.0), g) == 0.0


def test_energy_balance_residual():
    np.testing.assert_allclose(energy_balance_residual([1.0, 0.9, 0.8], [0.0, 0.1, 0.25]), [0.0, 0.0, 0.05], atol=1e-15)


def test_energy_audit_first_order_or_better_and_D_nonnegative():
    g = Grid(32, 17)
    p = MaterialParams(epsilon=0.01, sigma=0.05)
    init = well_prepared_initial(g, p, 0.002)
    dt0 = stable_dt(init, p, g, 0.5)
    res = []
    for k in range(3):
        a = energy_audit(RunConfig(g, p, 0.5, dt=dt0 / 2**k), init)
        assert a.min_dissipation >= 0.0 and a.passed
        res.append(a.max_residual)
    assert res[0] / res[1] > 1.8 and res[1] / res[2] > 1.8


# -- time derivatives ---------------------------------------------------------------


@pytest.mark.parametrize("k,n", [(1, 2), (1, 4), (2, 3), (2, 5)])
def test_fd_weights_exact_on_polynomials(k, n):
    offsets = -np.arange(n)[::-1] * 0.1
    w = fd_weights(offsets, k)
    for p in range(n):
        exact = math.factorial(p) / math.factorial(p - k) * 0.0 ** (p - k) if p >= k else 0.0
        assert np.dot(w, offsets**p) == pytest.approx(exact, abs=1e-9)
    with pytest.raises(InsufficientHistoryError):
        fd_weights(offsets[:k], k)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_backward_derivative_order(order):
    errs = []
    for h in (0.02, 0.01):
        hist = [HistoryEntry(t, None, None, np.array([np.sin(t)])) for t in 1.0 - h * np.arange(order + 1)[::-1]]
        errs.append(abs(backward_derivative(hist, "acc", 1, order)[0] - math.cos(1.0)))
    assert np.log2(errs[0] / errs[1]) == pytest.approx(order, abs=0.2)
    with pytest.raises(ValueError):
        backward_derivative(hist, "acc", 1, 4)


def test_jacobi_and_q_residuals_first_order_in_dt():
    g = Grid(32, 17)
    p = MaterialParams(epsilon=0.01)
    init = well_prepared_initial(g, p, 0.002)
    dt0 = stable_dt(init, p, g, 0.5)
    jr, qr = [], []
    for k in range(3):
        traj = simulate(RunConfig(g, p, 0.25, dt=dt0 / 2**k, output_interval=0.05), init)
        jr.append(max(jacobi_residual(s.history, g) for s in traj.snapshots[1:]))
        qr.append(max(q_eqn_residual(s.history, p, g) for s in traj.snapshots[1:]))
    for r in (jr, qr):
        rates = np.log2(np.array(r[:-1]) / np.array(r[1:]))
        assert np.all(rates > 0.8)
    # second-order backward differences remove the leading time error
    traj = simulate(RunConfig(g, p, 0.25, dt=dt0, output_interval=0.05), init)
    j2 = max(jacobi_residual(s.history, g, order=2) for s in traj.snapshots[1:])
    assert j2 < jr[0] / 4


# -- energy functional ----------------------------------------------------------------


def test_energy_functional_needs_history():
    g = Grid(16, 9)
    snap = Snapshot(equilibrium_state(g), [])
    with pytest.raises(InsufficientHistoryError):
        energy_functional_E(snap, MaterialParams(), g)
    with pytest.raises(ValueError):
        energy_functional_E(snap, MaterialParams(), g, m_diag=5)


def test_energy_functional_series(short_run):
    series = energy_functional_series(short_run, 2)
    assert len(series) == len(short_run.snapshots) - 1
    assert all(math.isfinite(e.total) and e.total > 0 for e in series)
    for key in INTEGRAL_KEYS[:-1]:
        assert series[0].terms[key] == 0.0
    ints = [e.terms["int_grad_eta"] for e in series]
    assert np.all(np.diff(ints) > 0)


# -- normal system matrix -------------------------------------------------------------


def test_normal_system_matrix(rng):
    g = Grid(32, 17)
    c = GeometryCache.build(random_smooth_map(g, rng), g)
    p = MaterialParams()
    N = normal_system_matrix(c, p, g)
    np.testing.assert_array_equal(N.calA, N.calA.swapaxes(0, 1))
    ev = np.linalg.eigvalsh(np.moveaxis(N.calA, (0, 1), (-2, -1)))
    np.testing.assert_allclose(ev[..., 0], c.J, rtol=1e-13)
    np.testing.assert_allclose(ev[..., 1], N.eig_max, rtol=1e-13)
    np.testing.assert_allclose(N.determinant(), np.linalg.det(np.moveaxis(N.calA, (0, 1), (-2, -1))), rtol=1e-12)


# -- boundary layer ----------------------------------------------------------------------


def test_layer_indicator_uniform_gradient_gives_baseline():
    g = Grid(16, 41)
    _, X2 = g.mesh()
    v = np.stack([X2, np.zeros_like(X2)])
    for d in (0.05, 0.1, 0.2):
        assert boundary_layer_indicator(v, g, d) == pytest.approx(layer_baseline(g, d), rel=1e-12)


def test_layer_indicator_detects_synthetic_layer():
    g = Grid(16, 161)
    _, X2 = g.mesh()
    delta = 0.1
    ell = delta / 4
    prof = np.exp(-X2 / ell) + np.exp(-(1 - X2) / ell)
    r = boundary_layer_indicator(np.stack([prof, 0 * prof]), g, delta)
    assert r >= 5 * layer_baseline(g, delta)


def test_layer_indicator_edge_cases():
    g = Grid(16, 41)
    assert boundary_layer_indicator(np.zeros((2,) + g.shape), g, 0.1) == 0.0
    for bad in (0.0, 0.25, 0.4):
        with pytest.raises(ValueError):
            boundary_layer_indicator(np.zeros((2,) + g.shape), g, bad)
    _, X2 = g.mesh()
    pure_strip = np.stack([np.where(X2 < 0.05, X2, 0.05), 0 * X2])
    assert boundary_layer_indicator(pure_strip, g, 0.1) > 1e10


# -- monitors ----------------------------------------------------------------------------


def test_trace_ratio_values():
    g = Grid(16, 9)
    assert trace_ratio(np.ones(g.shape), g) == pytest.approx(1.0)
    assert trace_ratio(np.zeros(g.shape), g) == 0.0


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_monitors_finite_on_random_fields(seed):
    g = Grid(16, 9)
    r = np.random.Generator(np.random.PCG64(seed))
    c = GeometryCache.build(random_smooth_map(g, r), g)
    f = random_smooth_field(g, r)
    assert math.isfinite(trace_ratio(f, g)) and trace_ratio(f, g) >= 0
    assert math.isfinite(korn_ratio(f, c, g)) and korn_ratio(f, c, g) >= 0


# -- report ------------------------------------------------------------------------------


def test_diagnose_report(short_run):
    g, p = short_run.grid, short_run.params
    rep = diagnose(short_run.snapshots[-1], p, g)
    assert rep.is_finite()
    assert rep.piola_res <= 1e-12
    assert rep.decomp_res <= 1e-13
    assert rep.normal_matrix_min_eig > 0
    row = rep.row()
    assert "note" not in row and "v_H1" in row and "trace_ratio_v" in row
    eq = diagnose(Snapshot(equilibrium_state(g), []), p, g)
    assert eq.basic_energy == pytest.approx(2 * p.sigma) and eq.jacobi_res == 0.0 and eq.B_res == 0.0
