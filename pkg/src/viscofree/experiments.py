"""Viscosity sweeps, the vanishing-viscosity rate fit, the boundary-layer
verdict, the elastic-flux ablation and manufactured-solution order studies.

Every run of a sweep shares the grid, the initial data, ``t_end`` and one
time step, chosen for the largest viscosity and then frozen, so the
comparison against the inviscid run isolates the effect of epsilon.  Runs
are independent and may execute in worker processes; results are reduced
sequentially in the order of ``eps_list`` so the outcome does not depend on
scheduling.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .constitutive import MaterialParams
from .diagnostics import LAYER_DELTAS, M_DIAG_DEFAULT, boundary_layer_indicator, energy_functional_series
from .dynamics import (
    DEFAULT_CLOSURE,
    FlowState,
    RunAborted,
    RunConfig,
    equilibrium_state,
    simulate,
    stable_dt,
    well_prepared_initial,
)
from .grid_ops import Grid, l2_norm, sobolev_norm
from .mms import SOLUTIONS, mms_forcing

DEFAULT_EPS = (1e-2, 10**-2.5, 1e-3, 10**-3.5, 1e-4, 0.0)
ERROR_FLOOR = 1e-12
R_BOUND = 3.0
LAYER_DELTA = 0.1
ALPHA_MIN = 0.9
R2_MIN = 0.95
ENERGY_FACTOR = 2.0

NO_LAYER = "NO_LAYER"
LAYER_SUSPECTED = "LAYER_SUSPECTED"


# -- rate fits -------------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    status: str  # "ok" or "converged to floor"

    @property
    def converged_to_floor(self) -> bool:
        return self.status == "converged to floor"


def _loglog_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def convergence_rate(errors, epsilons, floor: float = ERROR_FLOOR) -> RateFit:
    """Least-squares slope of log e against log eps over the pairs with eps > 0.

    If every error is at or below ``floor`` the fit is degenerate and the
    status ``"converged to floor"`` is returned with a NaN slope.
    """
    e = np.asarray(errors, dtype=float)
    eps = np.asarray(epsilons, dtype=float)
    if e.shape != eps.shape:
        raise ValueError("errors and epsilons must have the same length")
    keep = eps > 0
    e, eps = e[keep], eps[keep]
    if e.size < 3:
        raise ValueError(f"need at least 3 pairs with eps > 0, got {e.size}")
    if np.all(e <= floor):
        return RateFit(math.nan, math.nan, math.nan, "converged to floor")
    if np.any(e <= 0):
        raise ValueError("errors must be positive for a log-log fit")
    return RateFit(*_loglog_fit(eps, e), "ok")


# -- sweeps ----------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    grid: Grid
    params: MaterialParams
    t_end: float = 0.5
    eps_list: tuple = DEFAULT_EPS
    cfl: float = 0.5
    amplitude: float = 0.001
    seed: int | None = None
    initial: str = "well_prepared"
    # fine enough to resolve the quartic time integrands of the energy functional
    output_interval: float | None = 0.01
    closure: str = DEFAULT_CLOSURE
    m_diag: int = M_DIAG_DEFAULT
    deltas: tuple = LAYER_DELTAS
    history_depth: int = 5
    j_drift_bound: float | None = None
    threads: int = 1

    def __post_init__(self):
        eps = list(self.eps_list)
        if not eps or eps[-1] != 0:
            raise ValueError("eps_list must end with 0 (the inviscid reference)")
        if any(a <= b for a, b in zip(eps, eps[1:])):
            raise ValueError("eps_list must be strictly decreasing")
        if self.initial not in ("well_prepared", "equilibrium"):
            raise ValueError(f"unknown initial data {self.initial!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def initial_state(self) -> FlowState:
        if self.initial == "equilibrium":
            return equilibrium_state(self.grid)
        return well_prepared_initial(self.grid, self.params, self.amplitude, self.seed)


def default_sweep_config(**changes) -> SweepConfig:
    base = SweepConfig(grid=Grid(128, 65), params=MaterialParams(gamma=2.0, sigma=0.05, mu=1.0, lam=0.0))
    return replace(base, **changes)


def ablation_config(config: SweepConfig) -> SweepConfig:
    """Same sweep with the elastic flux removed.

    The exterior pressure is raised by one so the flat state stays a
    traction-free equilibrium (q = 0 at J = 1) without the elastic term.
    """
    p = config.params
    return replace(config, params=p.with_(elastic_flux=False, p_e=p.p_e + 1.0))


@dataclass
class CaseResult:
    epsilon: float
    status: str
    abort_reason: str | None
    steps: int
    times: list[float]
    etas: list[np.ndarray]
    vs: list[np.ndarray]
    E_sup: float
    layer: dict[float, float]
    max_j_drift: float


def _run_case(task) -> CaseResult:
    config, eps, dt, initial = task
    params = config.params.with_(epsilon=eps)
    run = RunConfig(
        grid=config.grid,
        params=params,
        t_end=config.t_end,
        cfl=config.cfl,
        output_interval=config.output_interval,
        dt=dt,
        j_drift_bound=config.j_drift_bound,
        history_depth=config.history_depth,
        closure=config.closure,
    )
    try:
        traj = simulate(run, initial)
    except RunAborted as exc:
        return CaseResult(eps, "aborted", exc.reason, exc.step or 0, [], [], [], math.nan, {}, math.nan)
    series = energy_functional_series(traj, config.m_diag)
    E_sup = max((ef.total for ef in series), default=0.0)
    fin = traj.final
    layer = {d: boundary_layer_indicator(fin.v, config.grid, d) for d in config.deltas}
    return CaseResult(
        epsilon=eps,
        status="ok",
        abort_reason=None,
        steps=traj.steps,
        times=[float(s.t) for s in traj.snapshots],
        etas=[s.state.eta for s in traj.snapshots],
        vs=[s.state.v for s in traj.snapshots],
        E_sup=float(E_sup),
        layer=layer,
        max_j_drift=float(traj.max_j_drift),
    )


@dataclass
class SweepResult:
    epsilons: list[float]
    dt: float
    status: str
    failed_eps: float | None = None
    failure: str | None = None
    e_H1: list[float] = field(default_factory=list)
    e_v_L2: list[float] = field(default_factory=list)
    e_H1_sup: list[float] = field(default_factory=list)
    E_sup: list[float] = field(default_factory=list)
    layer: dict[str, list[float]] = field(default_factory=dict)
    steps: list[int] = field(default_factory=list)
    fit: RateFit | None = None
    elastic_flux: bool = True

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fit"] = asdict(self.fit) if self.fit is not None else None
        return d

    def to_bytes(self) -> bytes:
        """Canonical serialization used for the reproducibility check."""
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=True).encode()

    def csv_rows(self) -> tuple[list[str], list[list]]:
        deltas = list(self.layer)
        header = ["epsilon", "e_H1", "e_v_L2", "e_H1_sup", "E_sup", "steps"] + [f"r_{d}" for d in deltas]
        rows = []
        for i, eps in enumerate(self.epsilons):
            rows.append(
                [eps, self.e_H1[i], self.e_v_L2[i], self.e_H1_sup[i], self.E_sup[i], self.steps[i]]
                + [self.layer[d][i] for d in deltas]
            )
        return header, rows

    # acceptance checks

    def positive_errors(self) -> tuple[np.ndarray, np.ndarray]:
        eps = np.array(self.epsilons)
        keep = eps > 0
        return eps[keep], np.array(self.e_H1)[keep]

    def monotone(self) -> bool:
        """e strictly decreases as epsilon decreases toward 0."""
        _, e = self.positive_errors()
        return bool(np.all(np.diff(e) < 0))

    def rate_verdict(self, alpha_min: float = ALPHA_MIN, r2_min: float = R2_MIN) -> bool:
        if not self.ok or self.fit is None:
            return False
        if self.fit.converged_to_floor:
            return True
        return self.monotone() and self.fit.slope >= alpha_min and self.fit.r2 >= r2_min

    def uniform_energy_ratio(self) -> float:
        E = np.array(self.E_sup)
        return float(np.max(E) / E[0]) if E[0] > 0 else (1.0 if np.all(E == 0) else math.inf)

    def uniform_energy_verdict(self, factor: float = ENERGY_FACTOR) -> bool:
        return self.ok and self.uniform_energy_ratio() <= factor


def _execute(tasks: list, threads: int) -> list[CaseResult]:
    if threads <= 1 or len(tasks) <= 1:
        return [_run_case(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_run_case, tasks))


def viscosity_sweep(config: SweepConfig, threads: int | None = None) -> SweepResult:
    """Run every epsilon of ``config.eps_list`` and compare against eps = 0."""
    threads = config.threads if threads is None else threads
    initial = config.initial_state()
    eps_max = config.eps_list[0]
    dt = stable_dt(initial, config.params.with_(epsilon=eps_max), config.grid, config.cfl)
    tasks = [(config, float(eps), dt, initial) for eps in config.eps_list]
    cases = _execute(tasks, threads)

    result = SweepResult(
        epsilons=[float(e) for e in config.eps_list],
        dt=float(dt),
        status="ok",
        elastic_flux=config.params.elastic_flux,
    )
    for c in cases:
        if c.status != "ok":
            result.status = "failed"
            result.failed_eps = c.epsilon
            result.failure = c.abort_reason
            return result
    ref = cases[-1]
    g = config.grid
    for c in cases:
        result.e_H1.append(sobolev_norm(c.etas[-1] - ref.etas[-1], 1, g))
        result.e_v_L2.append(l2_norm(c.vs[-1] - ref.vs[-1], g))
        result.e_H1_sup.append(max(sobolev_norm(a - b, 1, g) for a, b in zip(c.etas, ref.etas)))
        result.E_sup.append(c.E_sup)
        result.steps.append(c.steps)
    for d in config.deltas:
        result.layer[str(d)] = [c.layer[d] for c in cases]
    result.steps = [int(s) for s in result.steps]
    eps, e = result.positive_errors()
    if eps.size >= 3:
        result.fit = convergence_rate(e, eps)
    return result


# -- boundary layer verdict ---------------------------------------------------------------


@dataclass(frozen=True)
class LayerVerdict:
    verdict: str
    growth: float
    exponent: float
    ratios: tuple

    @property
    def no_layer(self) -> bool:
        return self.verdict == NO_LAYER


def layer_study(sweep: SweepResult, delta: float = LAYER_DELTA, r_bound: float = R_BOUND) -> LayerVerdict:
    """NO_LAYER iff max over eps of r(delta, eps) / r(delta, eps_max) <= r_bound.

    The exponent is minus the log-log slope of r against eps over eps > 0,
    so a layer scaling like eps^(-1/2) shows up as about 0.5.
    """
    if not sweep.ok:
        raise ValueError("layer_study needs a completed sweep")
    r = np.array(sweep.layer[str(delta)], dtype=float)
    eps = np.array(sweep.epsilons)
    if r[0] > 0:
        ratios = r / r[0]
    elif np.all(r == 0):
        ratios = np.ones_like(r)
    else:
        ratios = np.where(r > 0, math.inf, 1.0)
    growth = float(np.max(ratios))
    keep = (eps > 0) & (r > 0)
    exponent = -_loglog_fit(eps[keep], r[keep])[0] if np.count_nonzero(keep) >= 2 else math.nan
    verdict = NO_LAYER if growth <= r_bound else LAYER_SUSPECTED
    return LayerVerdict(verdict, growth, float(exponent), tuple(float(x) for x in ratios))


# -- manufactured-solution order study -------------------------------------------------------


@dataclass
class OrderStudy:
    grids: list[tuple[int, int]]
    errors_H1: list[float]
    errors_L2: list[float]
    order: float
    local_orders: list[float]
    status: str  # "ok", "floor" or "inconclusive"
    closure: str
    steps: list[int] = field(default_factory=list)

    def within(self, lo: float = 1.9, hi: float = 2.2) -> bool:
        return self.status == "ok" and lo <= self.order <= hi


def mms_order_study(
    grids,
    solution: str = "oscillatory",
    params: MaterialParams | None = None,
    t_end: float = 0.5,
    mode: str = "continuous",
    closure: str = "second_order",
    cfl: float = 0.5,
) -> OrderStudy:
    """Fitted order of ||eta_h - eta*||_{H^1} at ``t_end`` over refinement-by-2 grids.

    The J-drift guard is relaxed to c0 because manufactured solutions move
    J by prescription.
    """
    grids = [tuple(g) for g in grids]
    if len(grids) < 3:
        raise ValueError("an order study needs at least 3 grids")
    for (a1, a2), (b1, b2) in zip(grids, grids[1:]):
        if b1 != 2 * a1 or b2 - 1 != 2 * (a2 - 1):
            raise ValueError(f"grids must refine by 2: {grids}")
    params = params or MaterialParams(epsilon=1e-2, sigma=0.05)
    man = SOLUTIONS[solution]() if isinstance(solution, str) else solution
    eh1, el2, steps = [], [], []
    for n1, n2 in grids:
        g = Grid(n1, n2)
        forcing = mms_forcing(man, params, g, mode, closure)
        run = RunConfig(grid=g, params=params, t_end=t_end, cfl=cfl, j_drift_bound=params.c0, closure=closure)
        traj = simulate(run, man.state(g, 0.0), forcing=forcing)
        err = traj.final.eta - man.eta(g, t_end)
        eh1.append(sobolev_norm(err, 1, g))
        el2.append(l2_norm(err, g))
        steps.append(traj.steps)
    e = np.array(eh1)
    h = np.array([1.0 / n1 for n1, _ in grids])
    if np.all(e <= ERROR_FLOOR):
        return OrderStudy(grids, eh1, el2, math.nan, [], "floor", closure, steps)
    local = [float(np.log2(a / b)) for a, b in zip(e, e[1:])]
    order = _loglog_fit(h, e)[0] if np.all(e > 0) else math.nan
    status = "ok" if np.all(np.diff(e) < 0) else "inconclusive"
    return OrderStudy(grids, eh1, el2, float(order), local, status, closure, steps)
