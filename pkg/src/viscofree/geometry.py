"""Kinematics of the flow map: deformation gradient, Jacobian, cofactor, normals.

All matrix fields use ``M[i, j]`` with the derivative index last, i.e.
``grad_eta[i, j] = d_j eta_i``.  The cofactor is assembled algebraically from
the entries of ``grad_eta`` so that ``a = J A`` holds to rounding and its
columns are discretely divergence free at interior nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid_ops import Grid, d1, d1_trace, d2, face_row, face_sign, grad

J_FLOOR = 1e-6
TANGENT_FLOOR = 1e-8


class DegenerateMapError(RuntimeError):
    """The flow map lost invertibility (J <= floor or a degenerate tangent)."""


def displacement(eta: np.ndarray, grid: Grid) -> np.ndarray:
    """eta - x, which is periodic in x1 (eta_1 itself jumps by 1 across the wrap)."""
    return eta - grid.identity_map()


def map_d1(eta: np.ndarray, grid: Grid) -> np.ndarray:
    """d1 of a flow map, d1(eta - x) + e1, for a full field or a boundary trace."""
    if eta.ndim == 3:
        out = d1(eta - grid.identity_map(), grid)
    elif eta.shape == (2, grid.n1):
        out = d1_trace(eta - np.stack([grid.x1, np.zeros(grid.n1)]), grid)
    else:
        raise ValueError(f"expected a flow map or boundary trace, got shape {eta.shape}")
    out[0] += 1.0
    return out


def map_d2(eta: np.ndarray, grid: Grid, closure: str = "second_order") -> np.ndarray:
    out = d2(eta - grid.identity_map(), grid, closure)
    out[1] += 1.0
    return out


def deformation_gradient(eta: np.ndarray, grid: Grid, closure: str = "second_order") -> np.ndarray:
    """grad_eta[i, j] = d_j eta_i, computed through the periodic displacement."""
    return np.stack([map_d1(eta, grid), map_d2(eta, grid, closure)], axis=1)


def jacobian(grad_eta: np.ndarray, j_floor: float | None = None) -> np.ndarray:
    """Pointwise determinant.  Raises if ``j_floor`` is given and violated."""
    J = grad_eta[0, 0] * grad_eta[1, 1] - grad_eta[0, 1] * grad_eta[1, 0]
    if j_floor is not None:
        jmin = float(np.min(J))
        if not jmin > j_floor:
            raise DegenerateMapError(f"min J = {jmin:.3e} <= floor {j_floor:.1e}")
    return J


def cofactor(grad_eta: np.ndarray) -> np.ndarray:
    G = grad_eta
    return np.array([[G[1, 1], -G[1, 0]], [-G[0, 1], G[0, 0]]])


def inverse_transpose(a: np.ndarray, J: np.ndarray) -> np.ndarray:
    return a / J


@dataclass
class GeometryCache:
    """Derived kinematic fields of one flow map."""

    grad_eta: np.ndarray
    J: np.ndarray
    a: np.ndarray
    A: np.ndarray

    @classmethod
    def build(
        cls,
        eta: np.ndarray,
        grid: Grid,
        closure: str = "second_order",
        j_floor: float | None = J_FLOOR,
    ) -> "GeometryCache":
        G = deformation_gradient(eta, grid, closure)
        J = jacobian(G, j_floor)
        a = cofactor(G)
        return cls(grad_eta=G, J=J, a=a, A=inverse_transpose(a, J))

    def tangent(self, face: str, grid: Grid) -> np.ndarray:
        """d1 eta on the boundary row of ``face``, shape (2, n1)."""
        return self.grad_eta[:, 0, :, face_row(face, grid)]

    def g_metric(self, face: str, grid: Grid) -> np.ndarray:
        t = self.tangent(face, grid)
        return t[0] ** 2 + t[1] ** 2

    def normal(self, face: str, grid: Grid) -> np.ndarray:
        return _unit_normal(self.tangent(face, grid), face_sign(face))


def boundary_tangent(eta: np.ndarray, face: str, grid: Grid) -> np.ndarray:
    return map_d1(eta[..., face_row(face, grid)], grid)


def _unit_normal(t: np.ndarray, s: float) -> np.ndarray:
    norm = np.hypot(t[0], t[1])
    if np.min(norm) < TANGENT_FLOOR:
        raise DegenerateMapError(f"degenerate boundary tangent |d1 eta| = {np.min(norm):.3e}")
    return s * np.array([-t[1], t[0]]) / norm


def outward_normal(eta: np.ndarray, face: str, grid: Grid) -> np.ndarray:
    """Unit outward normal s * (-d1 eta_2, d1 eta_1) / |d1 eta| on ``face``."""
    return _unit_normal(boundary_tangent(eta, face, grid), face_sign(face))


def piola_residual(a: np.ndarray, grid: Grid, region: str = "interior", closure: str = "second_order") -> float:
    """Max of |d1 a_k1 + d2 a_k2| over interior nodes or over the boundary rows."""
    div = d1(a[:, 0], grid) + d2(a[:, 1], grid, closure)
    if region == "interior":
        sel = div[..., 1:-1]
    elif region == "boundary":
        sel = div[..., [0, -1]]
    else:
        raise ValueError(f"unknown region {region!r}")
    return float(np.max(np.abs(sel)))


def metric_decomp_residual(a: np.ndarray, grad_eta: np.ndarray) -> float:
    """Relative residual of a_i2 a_j2 + d1eta_i d1eta_j = |d1 eta|^2 delta_ij on both faces."""
    worst = 0.0
    for row in (0, -1):
        c = a[:, 1, :, row]
        t = grad_eta[:, 0, :, row]
        g = t[0] ** 2 + t[1] ** 2
        lhs = c[:, None] * c[None, :] + t[:, None] * t[None, :]
        rhs = g * np.eye(2)[:, :, None]
        scale = np.maximum(g, np.finfo(float).tiny)
        worst = max(worst, float(np.max(np.abs(lhs - rhs) / scale)))
    return worst


def geo_diff_residual(eta: np.ndarray, grid: Grid, closure: str = "second_order") -> float:
    """Max over d in {d1, d2} of |d(J) - a_ij d_j(d eta_i)| at interior nodes."""
    G = deformation_gradient(eta, grid, closure)
    J = jacobian(G)
    a = cofactor(G)
    worst = 0.0
    pairs = ((lambda f: d1(f, grid), map_d1(eta, grid)), (lambda f: d2(f, grid, closure), map_d2(eta, grid, closure)))
    for diff, deta in pairs:
        dJ = diff(J)
        dG = grad(deta, grid, closure)
        rhs = np.einsum("ij...,ij...->...", a, dG)
        worst = max(worst, float(np.max(np.abs(dJ - rhs)[..., 1:-1])))
    return worst
