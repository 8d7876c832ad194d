"""Semi-discrete evolution of the flow map and velocity, and the run loop.

The momentum equation is advanced in divergence form,

    rho0 dv/dt = d1(Sigma_{.1}) + D2(Sigma_{.2}; boundary flux = s * traction),

with ``Sigma`` the Piola stress.  The x2 boundary closure is selectable:

``"sbp"`` (default)
    summation-by-parts rows.  With trapezoidal quadrature the right hand side
    is then exactly minus the gradient of the discrete stored energy plus the
    discrete viscous force, so the semi-discrete energy balance holds to
    rounding, and the scheme stays stable without viscosity.  The price is
    an O(1) truncation error on the two rows next to each face, which costs
    about half an order in H^1.
``"second_order"``
    one-sided second-order rows; second-order accurate in H^1 but without a
    discrete energy identity, and unstable over long inviscid runs.
``"first_order"``
    lopsided stencils, a regression trap for order studies.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .constitutive import MaterialParams, piola_stress, raw_pressure, traction, traction_from_tangent
from .geometry import DegenerateMapError, GeometryCache, map_d1, piola_residual
from .grid_ops import CLOSURES, Grid, d1, face_row, face_sign, flux_div2

log = logging.getLogger(__name__)

DEFAULT_CLOSURE = "sbp"
INTEGRATORS = ("rk4", "euler")


@dataclass
class FlowState:
    eta: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def copy(self) -> "FlowState":
        return FlowState(self.eta.copy(), self.v.copy(), self.t)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.eta)) and np.all(np.isfinite(self.v)))


@dataclass
class Forcing:
    """Acceleration added to dv/dt plus optional extra boundary tractions."""

    body: np.ndarray | None = None
    traction_bottom: np.ndarray | None = None
    traction_top: np.ndarray | None = None


ForcingFn = Callable[[float], Forcing]


class RunAborted(RuntimeError):
    """An invariant check failed; ``last_good`` holds the last accepted state."""

    def __init__(self, reason: str, last_good: FlowState | None = None, step: int | None = None):
        super().__init__(reason)
        self.reason = reason
        self.last_good = last_good
        self.step = step


def equilibrium_state(grid: Grid) -> FlowState:
    return FlowState(grid.identity_map(), np.zeros((2,) + grid.shape), 0.0)


def face_tractions(cache: GeometryCache, params: MaterialParams, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Surface-tension tractions (bottom, top), each of shape (2, n1)."""
    tb = traction_from_tangent(cache.tangent("bottom", grid), grid, params.sigma)
    tt = traction_from_tangent(cache.tangent("top", grid), grid, params.sigma)
    return tb, tt


def momentum_rhs(
    state: FlowState,
    params: MaterialParams,
    grid: Grid,
    forcing: Forcing | None = None,
    cache: GeometryCache | None = None,
    closure: str = DEFAULT_CLOSURE,
) -> np.ndarray:
    """dv/dt from the divergence-form momentum balance with traction closure."""
    if cache is None:
        cache = GeometryCache.build(state.eta, grid, closure)
    sigma = piola_stress(state.eta, state.v, cache, params, grid, closure)
    tb, tt = face_tractions(cache, params, grid)
    if forcing is not None:
        if forcing.traction_bottom is not None:
            tb = tb + forcing.traction_bottom
        if forcing.traction_top is not None:
            tt = tt + forcing.traction_top
    div = d1(sigma[:, 0], grid) + flux_div2(sigma[:, 1], tb, tt, grid, closure)
    acc = div / params.rho0
    if forcing is not None and forcing.body is not None:
        acc = acc + forcing.body
    if not np.all(np.isfinite(acc)):
        raise DegenerateMapError("non-finite acceleration")
    return acc


def rhs(
    state: FlowState,
    params: MaterialParams,
    grid: Grid,
    forcing: ForcingFn | None = None,
    closure: str = DEFAULT_CLOSURE,
) -> tuple[np.ndarray, np.ndarray]:
    f = forcing(state.t) if forcing is not None else None
    return state.v, momentum_rhs(state, params, grid, f, closure=closure)


def dt_limits(state: FlowState, params: MaterialParams, grid: Grid) -> dict[str, float]:
    """The three explicit-stability time scales (before the CFL factor)."""
    cache = GeometryCache.build(state.eta, grid)
    h = min(grid.h1, grid.h2)
    rho = np.broadcast_to(np.asarray(params.rho0, dtype=float), grid.shape)
    rho_min, rho_max = float(rho.min()), float(rho.max())
    # pointwise spectral norm of the cofactor
    a_norm = np.sqrt(np.max(np.linalg.eigvalsh(np.einsum("ik...,jk...->...ij", cache.a, cache.a)), axis=-1))
    a_max = float(a_norm.max())
    j_min = float(cache.J.min())
    p_max = float(raw_pressure(rho, cache.J, params).max())
    stiff = params.gamma * p_max
    if params.elastic_flux:
        stiff += rho_max * a_max**2
    w_max = math.sqrt(stiff / rho_min) * a_max / j_min
    limits = {"wave": h / w_max}
    if params.epsilon > 0:
        kappa = float((a_norm**2 / cache.J).max())
        limits["viscous"] = rho_min * h**2 / (params.epsilon * (2 * params.mu + params.lam) * kappa)
    if params.sigma > 0:
        # boundary row: mass rho h2 / 2 per unit length, stiffness sigma / h1^2
        limits["capillary"] = grid.h1 * math.sqrt(rho_min * grid.h2 / (2.0 * params.sigma))
    return limits


def stable_dt(state: FlowState, params: MaterialParams, grid: Grid, cfl: float) -> float:
    if not 0 < cfl <= 1:
        raise ValueError(f"cfl must lie in (0, 1], got {cfl}")
    limits = dt_limits(state, params, grid)
    log.debug("dt limits: %s", limits)
    return cfl * min(limits.values())


def step_rk4(
    state: FlowState,
    dt: float,
    params: MaterialParams,
    grid: Grid,
    forcing: ForcingFn | None = None,
    k1: tuple[np.ndarray, np.ndarray] | None = None,
    closure: str = DEFAULT_CLOSURE,
) -> FlowState:
    """Classical four-stage step.  ``k1`` may be passed in when already known."""
    t = state.t
    if k1 is None:
        k1 = rhs(state, params, grid, forcing, closure)
    s2 = FlowState(state.eta + 0.5 * dt * k1[0], state.v + 0.5 * dt * k1[1], t + 0.5 * dt)
    k2 = rhs(s2, params, grid, forcing, closure)
    s3 = FlowState(state.eta + 0.5 * dt * k2[0], state.v + 0.5 * dt * k2[1], t + 0.5 * dt)
    k3 = rhs(s3, params, grid, forcing, closure)
    s4 = FlowState(state.eta + dt * k3[0], state.v + dt * k3[1], t + dt)
    k4 = rhs(s4, params, grid, forcing, closure)
    eta = state.eta + (dt / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    v = state.v + (dt / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    return FlowState(eta, v, t + dt)


def step_euler(
    state: FlowState,
    dt: float,
    params: MaterialParams,
    grid: Grid,
    forcing: ForcingFn | None = None,
    k1: tuple[np.ndarray, np.ndarray] | None = None,
    closure: str = DEFAULT_CLOSURE,
) -> FlowState:
    if k1 is None:
        k1 = rhs(state, params, grid, forcing, closure)
    return FlowState(state.eta + dt * k1[0], state.v + dt * k1[1], state.t + dt)


STEPPERS = {"rk4": step_rk4, "euler": step_euler}


@dataclass
class RunConfig:
    grid: Grid
    params: MaterialParams
    t_end: float
    cfl: float = 0.5
    integrator: str = "rk4"
    output_interval: float | None = None
    dt: float | None = None
    j_drift_bound: float | None = None
    history_depth: int = 5
    check_piola: bool = False
    piola_tol: float = 1e-10
    closure: str = DEFAULT_CLOSURE

    def __post_init__(self):
        if self.closure not in CLOSURES:
            raise ValueError(f"closure must be one of {CLOSURES}, got {self.closure!r}")
        if not self.t_end > 0:
            raise ValueError(f"t_end must be positive, got {self.t_end}")
        if not 0 < self.cfl <= 1:
            raise ValueError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        if self.history_depth < 2:
            raise ValueError("history_depth must be at least 2")

    @property
    def drift_bound(self) -> float:
        return self.params.c0 / 8.0 if self.j_drift_bound is None else self.j_drift_bound


@dataclass
class HistoryEntry:
    t: float
    eta: np.ndarray
    v: np.ndarray
    acc: np.ndarray


@dataclass
class Snapshot:
    """Output-cadence record: the state plus the recent full-cadence history."""

    state: FlowState
    history: list[HistoryEntry]

    @property
    def t(self) -> float:
        return self.state.t


@dataclass
class Trajectory:
    grid: Grid
    params: MaterialParams
    dt: float
    snapshots: list[Snapshot] = field(default_factory=list)
    steps: int = 0
    status: str = "ok"
    abort_reason: str | None = None
    max_j_drift: float = 0.0
    max_piola: float = 0.0
    closure: str = DEFAULT_CLOSURE

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def initial(self) -> FlowState:
        return self.snapshots[0].state

    @property
    def final(self) -> FlowState:
        return self.snapshots[-1].state


Observer = Callable[[FlowState, np.ndarray, int], None]


def plan_steps(config: RunConfig, initial: FlowState) -> tuple[float, int, int]:
    """Return (dt, n_steps, output_every) so that the run ends exactly at t_end."""
    dt = config.dt if config.dt is not None else stable_dt(initial, config.params, config.grid, config.cfl)
    n_steps = max(1, math.ceil(config.t_end / dt - 1e-9))
    dt = config.t_end / n_steps
    if config.output_interval is None:
        every = n_steps
    else:
        every = max(1, round(config.output_interval / dt))
    return dt, n_steps, every


def simulate(
    config: RunConfig,
    initial: FlowState,
    forcing: ForcingFn | None = None,
    observers: list[Observer] | tuple = (),
) -> Trajectory:
    """Integrate from ``initial`` to ``config.t_end`` with per-step invariant checks.

    Observers are called as ``obs(state, acc, step)`` at every full-cadence
    state, including the initial one.  On an invariant violation a
    :class:`RunAborted` is raised carrying the last good state; the partial
    trajectory is attached as ``exc.trajectory``.
    """
    grid, params = config.grid, config.params
    if not initial.is_finite():
        raise ValueError("initial data must be finite")
    closure = config.closure
    cache0 = GeometryCache.build(initial.eta, grid, closure)
    J0 = cache0.J
    if J0.min() < params.c0 or J0.max() > 1.0 / params.c0:
        raise ValueError(f"initial J outside [c0, 1/c0]: [{J0.min():.4f}, {J0.max():.4f}]")

    dt, n_steps, every = plan_steps(config, initial)
    stepper = STEPPERS[config.integrator]
    traj = Trajectory(grid=grid, params=params, dt=dt, closure=closure)
    history: deque[HistoryEntry] = deque(maxlen=config.history_depth)

    state = FlowState(initial.eta.copy(), initial.v.copy(), float(initial.t))
    t_start = state.t
    k1 = rhs(state, params, grid, forcing, closure)
    history.append(HistoryEntry(state.t, state.eta, state.v, k1[1]))
    traj.snapshots.append(Snapshot(state, list(history)))
    for obs in observers:
        obs(state, k1[1], 0)

    for n in range(1, n_steps + 1):
        try:
            new = stepper(state, dt, params, grid, forcing, k1=k1, closure=closure)
            new.t = t_start + n * dt
            if not new.is_finite():
                raise DegenerateMapError("non-finite state")
            cache = GeometryCache.build(new.eta, grid, closure)
            drift = float(np.max(np.abs(cache.J - J0)))
            traj.max_j_drift = max(traj.max_j_drift, drift)
            if drift > config.drift_bound:
                raise RunAborted(f"J drift {drift:.4e} exceeds bound {config.drift_bound:.4e} at t={new.t:.6g}")
            if config.check_piola:
                res = piola_residual(cache.a, grid, "interior", closure)
                traj.max_piola = max(traj.max_piola, res)
                if res > config.piola_tol:
                    raise RunAborted(f"interior Piola residual {res:.3e} at t={new.t:.6g}")
            k1 = rhs(new, params, grid, forcing, closure)
        except (DegenerateMapError, RunAborted) as exc:
            reason = exc.reason if isinstance(exc, RunAborted) else str(exc)
            traj.status = "aborted"
            traj.abort_reason = reason
            traj.steps = n - 1
            err = RunAborted(reason, last_good=state, step=n)
            err.trajectory = traj
            log.error("run aborted at step %d: %s", n, reason)
            raise err from exc
        state = new
        history.append(HistoryEntry(state.t, state.eta, state.v, k1[1]))
        for obs in observers:
            obs(state, k1[1], n)
        if n % every == 0 or n == n_steps:
            traj.snapshots.append(Snapshot(state, list(history)))
    traj.steps = n_steps
    return traj


# -- initial data -------------------------------------------------------------


def _solve_boundary_jacobian(rho0, g, rhs_n, params: MaterialParams, iters: int = 60) -> np.ndarray:
    """Solve rho0 J - q(J) g = rhs_n (elastic) or -q(J) g = rhs_n (ablation) for J > 0."""
    J = np.ones_like(g)
    A, gam = params.A_pressure, params.gamma
    el = 1.0 if params.elastic_flux else 0.0
    for _ in range(iters):
        q = A * (rho0 / J) ** gam + 1.0 - params.p_e
        F = el * rho0 * J - q * g - rhs_n
        dF = el * rho0 + gam * A * rho0**gam * J ** (-gam - 1.0) * g
        step = F / dF
        J = J - step
        if np.max(np.abs(step)) < 1e-15:
            break
    return J


def boundary_profile(grid: Grid, amplitude: float, seed: int | None = None) -> dict[str, np.ndarray]:
    """Displacement of each boundary curve, shape (2, n1) per face.

    Without a seed a fixed two-mode profile is used; with a seed the phases and
    weights of modes 1 and 2 are drawn from numpy's PCG64 generator.
    """
    x = grid.x1
    two_pi = 2.0 * np.pi
    out = {}
    if seed is None:
        out["bottom"] = amplitude * np.stack([0.5 * np.sin(two_pi * x), np.cos(two_pi * x)])
        out["top"] = amplitude * np.stack([-0.3 * np.sin(2 * two_pi * x), np.sin(two_pi * x) + 0.4 * np.cos(2 * two_pi * x)])
        return out
    rng = np.random.Generator(np.random.PCG64(seed))
    for face in ("bottom", "top"):
        comp = []
        for _ in range(2):
            w = rng.uniform(-1.0, 1.0, size=2)
            ph = rng.uniform(0.0, two_pi, size=2)
            comp.append(sum(w[k] * np.cos(two_pi * (k + 1) * x + ph[k]) for k in range(2)) / 2.0)
        out[face] = amplitude * np.stack(comp)
    return out


def well_prepared_initial(
    grid: Grid,
    params: MaterialParams,
    amplitude: float = 0.001,
    seed: int | None = None,
) -> FlowState:
    """Perturbed flow map at rest satisfying the zeroth-order compatibility condition.

    The boundary curves are displaced by ``boundary_profile``; on each face the
    normal derivative d2 eta is then solved from the traction condition
    (v = 0, so only pressure, elastic and capillary terms enter), the interior
    is filled by cubic Hermite interpolation in x2, and the rows next to the
    boundary are adjusted so the second-order one-sided d2 reproduces the
    solved normal derivative exactly.
    """
    X = grid.identity_map()
    prof = boundary_profile(grid, amplitude, seed)
    rho = np.broadcast_to(np.asarray(params.rho0, dtype=float), grid.shape)
    pos, slope = {}, {}
    for face in ("bottom", "top"):
        j = face_row(face, grid)
        s = face_sign(face)
        P = X[..., j] + prof[face]
        t = map_d1(P, grid)
        T = traction_from_tangent(t, grid, params.sigma)
        perp = np.array([-t[1], t[0]])
        g = t[0] ** 2 + t[1] ** 2
        r0 = rho[:, j]
        J = _solve_boundary_jacobian(r0, g, s * np.sum(T * perp, axis=0), params)
        tang = s * np.sum(T * t, axis=0) / r0 if params.elastic_flux else np.zeros_like(g)
        pos[face] = P
        slope[face] = (tang * t + J * perp) / g
    y = grid.x2
    h00 = 2 * y**3 - 3 * y**2 + 1
    h10 = y**3 - 2 * y**2 + y
    h01 = -2 * y**3 + 3 * y**2
    h11 = y**3 - y**2
    eta = (
        pos["bottom"][..., None] * h00
        + slope["bottom"][..., None] * h10
        + pos["top"][..., None] * h01
        + slope["top"][..., None] * h11
    )
    h = grid.h2
    eta[..., 1] = (2 * h * slope["bottom"] + 3 * eta[..., 0] + eta[..., 2]) / 4.0
    eta[..., -2] = (3 * eta[..., -1] + eta[..., -3] - 2 * h * slope["top"]) / 4.0
    return FlowState(eta, np.zeros_like(eta), 0.0)


def compatibility_residual(initial: FlowState, params: MaterialParams, grid: Grid, closure: str = "second_order") -> float:
    """Max over both faces of |s * Sigma_{i2} - sigma d1(d1 eta_i / |d1 eta|)|."""
    cache = GeometryCache.build(initial.eta, grid, closure, j_floor=None)
    sig = piola_stress(initial.eta, initial.v, cache, params, grid, closure)
    worst = 0.0
    for face in ("bottom", "top"):
        j = face_row(face, grid)
        T = traction(initial.eta, face, params, grid)
        res = face_sign(face) * sig[:, 1, :, j] - T
        worst = max(worst, float(np.max(np.abs(res))))
    return worst


def shift_x1(state: FlowState, cells: int, grid: Grid) -> FlowState:
    """Shift the reference coordinate by whole cells (rolls the displacement)."""
    X = grid.identity_map()
    eta = X + np.roll(state.eta - X, -cells, axis=-2)
    return FlowState(eta, np.roll(state.v, -cells, axis=-2), state.t)
