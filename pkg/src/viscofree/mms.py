"""Manufactured solutions and their forcing.

Two forcing constructions are provided:

``continuous``
    The body force and the boundary traction mismatch are obtained by
    symbolic differentiation of the exact stress (sympy), so the discrete
    solution converges to the manufactured one at the spatial order of the
    scheme.  Used for order studies.
``discrete``
    The body force is ``dv*/dt - momentum_rhs_h(eta*, v*)`` with the solver's
    own operators, so the manufactured pair solves the forced semi-discrete
    system exactly and only time-integration error remains.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import sympy as sp

from .constitutive import MaterialParams
from .dynamics import DEFAULT_CLOSURE, FlowState, Forcing, momentum_rhs
from .grid_ops import Grid

x1, x2, t = sp.symbols("x1 x2 t", real=True)


@dataclass(frozen=True)
class Manufactured:
    """Closed-form flow map eta*(x1, x2, t); eta* - x must be 1-periodic in x1."""

    name: str
    eta_expr: tuple

    @cached_property
    def _funcs(self) -> dict[str, Callable]:
        eta = sp.Matrix(self.eta_expr)
        v = eta.diff(t)
        acc = v.diff(t)
        return {
            "eta": sp.lambdify((x1, x2, t), list(eta), "numpy"),
            "v": sp.lambdify((x1, x2, t), list(v), "numpy"),
            "acc": sp.lambdify((x1, x2, t), list(acc), "numpy"),
        }

    def _eval(self, key: str, grid: Grid, time: float) -> np.ndarray:
        X1, X2 = grid.mesh()
        vals = self._funcs[key](X1, X2, time)
        return np.stack([np.broadcast_to(np.asarray(c, dtype=float), grid.shape) for c in vals])

    def eta(self, grid: Grid, time: float) -> np.ndarray:
        return self._eval("eta", grid, time)

    def v(self, grid: Grid, time: float) -> np.ndarray:
        return self._eval("v", grid, time)

    def acc(self, grid: Grid, time: float) -> np.ndarray:
        return self._eval("acc", grid, time)

    def state(self, grid: Grid, time: float) -> FlowState:
        return FlowState(self.eta(grid, time), self.v(grid, time), time)


def equilibrium_solution() -> Manufactured:
    return Manufactured("equilibrium", (x1, x2))


def translation_solution(c=(0.3, -0.2)) -> Manufactured:
    return Manufactured("translation", (x1 + c[0] * t, x2 + c[1] * t))


def standing_wave_solution(amp: float = 0.01) -> Manufactured:
    """x + amp sin(2 pi x1) sin(pi x2) cos(t) e2."""
    return Manufactured("standing_wave", (x1, x2 + amp * sp.sin(2 * sp.pi * x1) * sp.sin(sp.pi * x2) * sp.cos(t)))


def oscillatory_solution(amp: float = 0.02) -> Manufactured:
    """Both components oscillate and both boundary curves move."""
    return Manufactured(
        "oscillatory",
        (
            x1 + amp * sp.sin(2 * sp.pi * x1) * sp.cos(sp.pi * x2) * sp.cos(2 * sp.pi * t),
            x2 + amp * sp.cos(2 * sp.pi * x1) * sp.sin(sp.pi * x2 + sp.Rational(1, 2)) * sp.cos(2 * sp.pi * t + 1),
        ),
    )


SOLUTIONS = {
    "equilibrium": equilibrium_solution,
    "translation": translation_solution,
    "standing_wave": standing_wave_solution,
    "oscillatory": oscillatory_solution,
}


def exact_stress(man: Manufactured, params: MaterialParams):
    """Symbolic Piola stress of the manufactured pair (constant rho0 only)."""
    rho0 = float(np.asarray(params.rho0))
    eta = sp.Matrix(man.eta_expr)
    v = eta.diff(t)
    G = eta.jacobian([x1, x2])
    J = G.det()
    a = sp.Matrix([[G[1, 1], -G[1, 0]], [-G[0, 1], G[0, 0]]])
    A = a / J
    q = params.A_pressure * (rho0 / J) ** params.gamma + 1 - params.p_e
    sig = -q * a
    if params.epsilon > 0:
        gv = v.jacobian([x1, x2])
        M = gv * A.T
        S = (M + M.T) / 2
        sig = sig + params.epsilon * (2 * params.mu * S * a + params.lam * M.trace() * a)
    if params.elastic_flux:
        sig = sig + rho0 * G
    return sig


def _tension(man: Manufactured, params: MaterialParams, face_x2):
    eta = sp.Matrix(man.eta_expr).subs(x2, face_x2)
    tan = eta.diff(x1)
    norm = sp.sqrt(tan[0] ** 2 + tan[1] ** 2)
    return params.sigma * (tan / norm).diff(x1)


@dataclass
class ContinuousForcing:
    """Callable forcing ``t -> Forcing`` built from symbolic derivatives."""

    man: Manufactured
    params: MaterialParams
    grid: Grid

    def __post_init__(self):
        if np.ndim(self.params.rho0) != 0:
            raise ValueError("continuous MMS forcing requires a constant rho0")
        sig = exact_stress(self.man, self.params)
        rho0 = float(self.params.rho0)
        div = sp.Matrix([sig[i, 0].diff(x1) + sig[i, 1].diff(x2) for i in range(2)])
        acc = sp.Matrix(self.man.eta_expr).diff(t, 2)
        body = acc - div / rho0
        self._body = sp.lambdify((x1, x2, t), list(body), "numpy", cse=True)
        self._trac = {}
        for face, xv, s in (("bottom", 0, -1), ("top", 1, 1)):
            mismatch = s * sig[:, 1].subs(x2, xv) - _tension(self.man, self.params, xv)
            self._trac[face] = sp.lambdify((x1, t), list(mismatch), "numpy", cse=True)
        self._X1, self._X2 = self.grid.mesh()

    def __call__(self, time: float) -> Forcing:
        g = self.grid
        body = np.stack([np.broadcast_to(np.asarray(c, dtype=float), g.shape) for c in self._body(self._X1, self._X2, time)])
        tr = {
            face: np.stack([np.broadcast_to(np.asarray(c, dtype=float), (g.n1,)) for c in fn(g.x1, time)])
            for face, fn in self._trac.items()
        }
        return Forcing(body=body, traction_bottom=tr["bottom"], traction_top=tr["top"])


@dataclass
class DiscreteForcing:
    """Forcing that makes the manufactured pair an exact semi-discrete solution."""

    man: Manufactured
    params: MaterialParams
    grid: Grid
    closure: str = DEFAULT_CLOSURE

    def __call__(self, time: float) -> Forcing:
        st = self.man.state(self.grid, time)
        body = self.man.acc(self.grid, time) - momentum_rhs(st, self.params, self.grid, closure=self.closure)
        return Forcing(body=body)


def mms_forcing(
    man: Manufactured,
    params: MaterialParams,
    grid: Grid,
    mode: str = "discrete",
    closure: str = DEFAULT_CLOSURE,
):
    """Forcing callable for ``man``; ``closure`` only matters in discrete mode."""
    if mode == "discrete":
        return DiscreteForcing(man, params, grid, closure)
    if mode == "continuous":
        return ContinuousForcing(man, params, grid)
    raise ValueError(f"unknown MMS mode {mode!r}")
