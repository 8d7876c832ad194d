"""Manufactured solutions and their forcing."""

import numpy as np
import pytest

from viscofree.constitutive import MaterialParams
from viscofree.dynamics import RunConfig, momentum_rhs, simulate
from viscofree.experiments import mms_order_study
from viscofree.grid_ops import Grid
from viscofree.mms import SOLUTIONS, ContinuousForcing, mms_forcing


def test_equilibrium_needs_no_forcing():
    g = Grid(16, 9)
    p = MaterialParams(epsilon=0.01)
    f = mms_forcing(SOLUTIONS["equilibrium"](), p, g, "continuous")(0.3)
    np.testing.assert_allclose(f.body, 0.0, atol=1e-13)
    np.testing.assert_allclose(f.traction_top, 0.0, atol=1e-13)


def test_manufactured_time_derivatives():
    g = Grid(16, 9)
    man = SOLUTIONS["oscillatory"]()
    h = 1e-4
    fd_v = (man.eta(g, 0.3 + h) - man.eta(g, 0.3 - h)) / (2 * h)
    fd_a = (man.v(g, 0.3 + h) - man.v(g, 0.3 - h)) / (2 * h)
    np.testing.assert_allclose(man.v(g, 0.3), fd_v, atol=1e-8)
    np.testing.assert_allclose(man.acc(g, 0.3), fd_a, atol=1e-7)


def test_continuous_forcing_truncation_error_is_second_order():
    """With the exact forcing, rhs(exact) - acc(exact) is the spatial truncation error."""
    p = MaterialParams(epsilon=0.01)
    man = SOLUTIONS["oscillatory"]()
    errs = []
    for n1, n2 in ((32, 17), (64, 33), (128, 65)):
        g = Grid(n1, n2)
        f = ContinuousForcing(man, p, g)
        st = man.state(g, 0.2)
        tau = momentum_rhs(st, p, g, f(0.2), closure="second_order") - man.acc(g, 0.2)
        errs.append(np.max(np.abs(tau[..., 2:-2])))
    assert np.log2(errs[0] / errs[1]) > 1.8 and np.log2(errs[1] / errs[2]) > 1.8


def test_continuous_forcing_requires_constant_density():
    g = Grid(16, 9)
    p = MaterialParams(rho0=np.full(g.shape, 1.0))
    with pytest.raises(ValueError):
        ContinuousForcing(SOLUTIONS["oscillatory"](), p, g)
    with pytest.raises(ValueError):
        mms_forcing(SOLUTIONS["oscillatory"](), MaterialParams(), g, "hybrid")


@pytest.mark.parametrize("closure", ["sbp", "second_order"])
def test_discrete_forcing_reproduces_translation(closure):
    g = Grid(16, 9)
    p = MaterialParams(epsilon=0.01)
    man = SOLUTIONS["translation"]()
    traj = simulate(RunConfig(g, p, 0.3, closure=closure), man.state(g, 0.0), forcing=mms_forcing(man, p, g, "discrete", closure))
    np.testing.assert_allclose(traj.final.eta, man.eta(g, 0.3), atol=1e-12)


def test_first_order_closure_is_caught_by_order_study():
    """Regression trap: the lopsided closure must not pass as second order."""
    study = mms_order_study([(16, 9), (32, 17), (64, 33)], closure="first_order")
    assert study.status == "ok"
    assert 0.8 <= study.order <= 1.4
    assert not study.within(1.9, 2.2)


def test_order_study_validates_grids():
    with pytest.raises(ValueError):
        mms_order_study([(16, 9), (32, 17)])
    with pytest.raises(ValueError):
        mms_order_study([(16, 9), (32, 17), (48, 25)])
