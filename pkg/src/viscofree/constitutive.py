"""Pressure law, viscous and elastic stresses, and surface-tension traction."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import DegenerateMapError, GeometryCache, TANGENT_FLOOR, boundary_tangent, map_d1
from .grid_ops import Grid, d1_trace, face_row, face_sign, grad


@dataclass(frozen=True, eq=False)
class MaterialParams:
    """Material constants.  ``rho0`` is the weighted reference density, a
    scalar or an ``(n1, n2)`` field.

    ``elastic_flux=False`` drops the neo-Hookean term rho0 * grad(eta) from the
    momentum flux; it exists for the ablation experiment only.
    """

    gamma: float = 2.0
    A_pressure: float = 1.0
    mu: float = 1.0
    lam: float = 0.0
    epsilon: float = 1e-2
    sigma: float = 0.05
    p_e: float = 1.0
    rho0: float | np.ndarray = 1.0
    elastic_flux: bool = True
    c0: float = 0.5
    C0: float = 2.0

    def __post_init__(self):
        if not self.gamma > 1:
            raise ValueError(f"gamma must exceed 1 (p = A rho^gamma, gamma > 1), got {self.gamma}")
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.mu + self.lam > 0:
            raise ValueError(f"mu + lambda must be positive (2 mu + 2 lambda > 0), got {self.mu + self.lam}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not self.A_pressure > 0:
            raise ValueError(f"A_pressure must be positive, got {self.A_pressure}")
        if not 0 < self.c0 <= self.C0:
            raise ValueError(f"need 0 < c0 <= C0, got c0={self.c0}, C0={self.C0}")
        r = np.asarray(self.rho0, dtype=float)
        if not (np.all(np.isfinite(r)) and np.min(r) >= self.c0 and np.max(r) <= self.C0):
            raise ValueError(f"rho0 must lie in [c0, C0] = [{self.c0}, {self.C0}]")

    def with_(self, **changes) -> "MaterialParams":
        return replace(self, **changes)

    @property
    def viscous(self) -> bool:
        return self.epsilon > 0


def pressure(rho0, J: np.ndarray, params: MaterialParams) -> np.ndarray:
    """Effective pressure q = A (rho0 / J)^gamma + 1 - p_e."""
    J = np.asarray(J, dtype=float)
    if np.min(J) <= 0:
        raise DegenerateMapError(f"pressure evaluated at J = {np.min(J):.3e} <= 0")
    return params.A_pressure * (rho0 / J) ** params.gamma + 1.0 - params.p_e


def raw_pressure(rho0, J: np.ndarray, params: MaterialParams) -> np.ndarray:
    """Thermodynamic pressure A f^gamma, f = rho0 / J."""
    return params.A_pressure * (rho0 / J) ** params.gamma


def potential_Q(f, params: MaterialParams):
    """Closed form of the integral from 1 to f of q(m) / m^2 dm."""
    f = np.asarray(f, dtype=float)
    g = params.gamma
    return params.A_pressure * (f ** (g - 1.0) - 1.0) / (g - 1.0) + (1.0 - params.p_e) * (1.0 - 1.0 / f)


def velocity_gradient_A(grad_v: np.ndarray, A: np.ndarray) -> np.ndarray:
    """M_ik = A_kj d_j v_i, the Eulerian velocity gradient pulled back."""
    return np.einsum("ij...,kj...->ik...", grad_v, A)


def symmetric_gradient(v: np.ndarray, A: np.ndarray, grid: Grid, closure: str = "second_order") -> np.ndarray:
    M = velocity_gradient_A(grad(v, grid, closure), A)
    return 0.5 * (M + M.swapaxes(0, 1))


def div_A(v: np.ndarray, A: np.ndarray, grid: Grid, closure: str = "second_order") -> np.ndarray:
    gv = grad(v, grid, closure)
    return np.einsum("kl...,kl...->...", A, gv)


def viscous_stress(grad_v: np.ndarray, cache: GeometryCache, params: MaterialParams) -> np.ndarray:
    """2 mu eps (S_A v) a + lam eps (div_A v) a, or zeros when eps = 0."""
    if not params.viscous:
        return np.zeros_like(cache.a)
    M = velocity_gradient_A(grad_v, cache.A)
    S = 0.5 * (M + M.swapaxes(0, 1))
    div = np.trace(M)
    tau = 2.0 * params.mu * np.einsum("ik...,kj...->ij...", S, cache.a)
    if params.lam != 0.0:
        tau = tau + params.lam * div * cache.a
    return params.epsilon * tau


def piola_stress(
    eta: np.ndarray,
    v: np.ndarray,
    cache: GeometryCache,
    params: MaterialParams,
    grid: Grid,
    closure: str = "second_order",
) -> np.ndarray:
    """Full momentum flux Sigma_ij = -q a_ij + viscous + rho0 d_j eta_i."""
    q = pressure(params.rho0, cache.J, params)
    sigma = -q * cache.a
    if params.viscous:
        sigma = sigma + viscous_stress(grad(v, grid, closure), cache, params)
    if params.elastic_flux:
        sigma = sigma + params.rho0 * cache.grad_eta
    return sigma


def traction_from_tangent(t: np.ndarray, grid: Grid, sigma: float) -> np.ndarray:
    norm = np.hypot(t[0], t[1])
    if np.min(norm) < TANGENT_FLOOR:
        raise DegenerateMapError(f"degenerate boundary tangent |d1 eta| = {np.min(norm):.3e}")
    return sigma * d1_trace(t / norm, grid)


def traction(eta: np.ndarray, face: str, params: MaterialParams, grid: Grid) -> np.ndarray:
    """Surface-tension force sigma d1(d1 eta / |d1 eta|) on a face, shape (2, n1)."""
    return traction_from_tangent(boundary_tangent(eta, face, grid), grid, params.sigma)


def curvature_traction(eta: np.ndarray, face: str, params: MaterialParams, grid: Grid) -> np.ndarray:
    """The same force in curvature form sigma (d1^2 eta . a_2) a_2 / |d1 eta|^3."""
    row = eta[..., face_row(face, grid)]
    t = map_d1(row, grid)
    tt = d1_trace(t, grid)
    c = np.array([-t[1], t[0]])
    g = t[0] ** 2 + t[1] ** 2
    return params.sigma * (tt[0] * c[0] + tt[1] * c[1]) * c / g**1.5


def boundary_B_residual(
    eta: np.ndarray,
    v: np.ndarray,
    cache: GeometryCache,
    params: MaterialParams,
    grid: Grid,
    face: str,
    closure: str = "second_order",
) -> float:
    """Max over the face of |LHS - RHS| of the boundary scalar identity.

    LHS = s sigma (d1^2 eta . a_2) / |d1 eta|^3 + q,
    RHS = (a_2 . (2 mu eps S_A v) a_2) / |d1 eta|^2 + lam eps div_A v + rho0 J / |d1 eta|^2.
    The face sign s makes the identity orientation-consistent on the bottom face.
    """
    j = face_row(face, grid)
    s = face_sign(face)
    row = eta[..., j]
    t = map_d1(row, grid)
    tt = d1_trace(t, grid)
    c = np.array([-t[1], t[0]])
    g = t[0] ** 2 + t[1] ** 2
    rho0 = np.broadcast_to(np.asarray(params.rho0, dtype=float), grid.shape)[:, j]
    J = cache.J[:, j]
    q = pressure(rho0, J, params)
    lhs = s * params.sigma * (tt[0] * c[0] + tt[1] * c[1]) / g**1.5 + q
    rhs = rho0 * J / g if params.elastic_flux else np.zeros_like(J)
    if params.viscous:
        gv = grad(v, grid, closure)[..., j]
        M = velocity_gradient_A(gv, cache.A[..., j])
        quad = np.einsum("k...,ki...,i...->...", c, M, c)
        rhs = rhs + 2.0 * params.mu * params.epsilon * quad / g + params.lam * params.epsilon * np.trace(M)
    return float(np.max(np.abs(lhs - rhs)))


def coercivity_gap(S: np.ndarray, div: np.ndarray, params: MaterialParams) -> np.ndarray:
    """2 mu |S|^2 + lam div^2 - c |S|^2 with c = min(2 mu, 2 mu + 2 lam)."""
    s2 = np.sum(S**2, axis=(0, 1))
    c = min(2.0 * params.mu, 2.0 * params.mu + 2.0 * params.lam)
    return 2.0 * params.mu * s2 + params.lam * div**2 - c * s2
