"""Uniform grid and finite-difference operators on the strip T x (0, 1).

Nodes are stored including both boundary rows.  Fields are plain numpy arrays
whose trailing two axes are ``(n1, n2)``: a scalar field has shape
``(n1, n2)``, a vector field ``(2, n1, n2)`` and a matrix field
``(2, 2, n1, n2)`` with ``M[i, j] = d_j eta_i`` style indexing.

Two closures are available for the x2 derivative at the boundary rows:

``"second_order"``
    one-sided (-3 f0 + 4 f1 - f2) / (2 h2), exact on quadratics.  Used for
    identity checks, norms and boundary diagnostics.
``"sbp"``
    first-order one-sided (f1 - f0) / h2.  Together with trapezoidal weights
    this is a summation-by-parts pair, which is what makes the semi-discrete
    energy balance of the solver exact.
``"first_order"``
    forward differences (backward on the top row) for ``d2`` and backward
    differences for ``flux_div2``.  The pure x2-x2 part stays a compact
    second difference, but every mixed term is shifted by half a cell, so the
    scheme is only first-order.  Kept as a regression trap for order studies.

Boundary traces are arrays with trailing axis ``n1``.  Faces are named
``"bottom"`` (x2 = 0, outward normal -e2) and ``"top"`` (x2 = 1, +e2).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

FACES = ("bottom", "top")
CLOSURES = ("second_order", "sbp", "first_order")


def face_sign(face: str) -> float:
    """Second component of the outward reference normal on ``face``."""
    if face == "bottom":
        return -1.0
    if face == "top":
        return 1.0
    raise ValueError(f"unknown face {face!r}; expected 'bottom' or 'top'")


def face_row(face: str, grid: "Grid") -> int:
    return 0 if face_sign(face) < 0 else grid.n2 - 1


@dataclass(frozen=True)
class Grid:
    """Node-centred grid: ``n1`` periodic cells in x1, ``n2`` nodes in x2."""

    n1: int
    n2: int

    def __post_init__(self):
        if self.n1 < 8 or self.n1 % 2:
            raise ValueError(f"n1 must be even and >= 8, got {self.n1}")
        if self.n2 < 5:
            raise ValueError(f"n2 must be >= 5, got {self.n2}")

    @property
    def h1(self) -> float:
        return 1.0 / self.n1

    @property
    def h2(self) -> float:
        return 1.0 / (self.n2 - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n1, self.n2)

    @cached_property
    def x1(self) -> np.ndarray:
        return np.arange(self.n1) * self.h1

    @cached_property
    def x2(self) -> np.ndarray:
        return np.arange(self.n2) * self.h2

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x1, self.x2, indexing="ij")

    def identity_map(self) -> np.ndarray:
        X1, X2 = self.mesh()
        return np.stack([X1, X2])

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights: rectangle rule in x1, trapezoidal in x2."""
        w2 = np.full(self.n2, self.h2)
        w2[0] = w2[-1] = 0.5 * self.h2
        w = np.broadcast_to(self.h1 * w2, self.shape).copy()
        w.flags.writeable = False
        return w


def d1(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Centred periodic difference along x1 (axis -2)."""
    return (np.roll(f, -1, axis=-2) - np.roll(f, 1, axis=-2)) / (2.0 * grid.h1)


def d1_trace(g: np.ndarray, grid: Grid) -> np.ndarray:
    """Centred periodic difference of a boundary trace (x1 is the last axis)."""
    return (np.roll(g, -1, axis=-1) - np.roll(g, 1, axis=-1)) / (2.0 * grid.h1)


def d2(f: np.ndarray, grid: Grid, closure: str = "second_order") -> np.ndarray:
    """Centred difference along x2 (axis -1) with a one-sided boundary closure."""
    h = grid.h2
    out = np.empty_like(f, dtype=float)
    if closure == "first_order":
        out[..., :-1] = (f[..., 1:] - f[..., :-1]) / h
        out[..., -1] = (f[..., -1] - f[..., -2]) / h
        return out
    out[..., 1:-1] = (f[..., 2:] - f[..., :-2]) / (2.0 * h)
    if closure == "second_order":
        out[..., 0] = (-3.0 * f[..., 0] + 4.0 * f[..., 1] - f[..., 2]) / (2.0 * h)
        out[..., -1] = (3.0 * f[..., -1] - 4.0 * f[..., -2] + f[..., -3]) / (2.0 * h)
    elif closure == "sbp":
        out[..., 0] = (f[..., 1] - f[..., 0]) / h
        out[..., -1] = (f[..., -1] - f[..., -2]) / h
    else:
        raise ValueError(f"unknown closure {closure!r}")
    return out


def grad(f: np.ndarray, grid: Grid, closure: str = "second_order") -> np.ndarray:
    """Gradient with the derivative index appended as a new axis before (n1, n2).

    For a vector field ``eta`` of shape (2, n1, n2) this returns ``G`` with
    ``G[i, j] = d_j eta_i``.
    """
    return np.stack([d1(f, grid), d2(f, grid, closure)], axis=-3)


def flux_div2(
    flux: np.ndarray,
    traction_bottom: np.ndarray,
    traction_top: np.ndarray,
    grid: Grid,
    closure: str = "second_order",
) -> np.ndarray:
    """x2-derivative of ``flux`` with the boundary flux replaced by s * traction.

    ``traction_*`` have the shape of ``flux[..., 0]``.  The bottom face has
    s = -1, so the flux value imposed there is ``-traction_bottom``.

    With ``closure="sbp"`` the boundary rows are the half-cell balance
    ``((F0 + F1)/2 - F_face) / (h2/2)``, which is the adjoint form used by the
    energy-consistent solver.
    """
    h = grid.h2
    fb = -np.asarray(traction_bottom, dtype=float)
    ft = np.asarray(traction_top, dtype=float)
    out = np.empty_like(flux, dtype=float)
    if closure == "first_order":
        out[..., 0] = 2.0 * (flux[..., 0] - fb) / h
        out[..., 1:-1] = (flux[..., 1:-1] - flux[..., :-2]) / h
        out[..., -1] = 2.0 * (ft - flux[..., -2]) / h
        return out
    out[..., 1:-1] = (flux[..., 2:] - flux[..., :-2]) / (2.0 * h)
    if closure == "second_order":
        out[..., 0] = (-3.0 * fb + 4.0 * flux[..., 1] - flux[..., 2]) / (2.0 * h)
        out[..., -1] = (3.0 * ft - 4.0 * flux[..., -2] + flux[..., -3]) / (2.0 * h)
    elif closure == "sbp":
        out[..., 0] = (flux[..., 0] + flux[..., 1] - 2.0 * fb) / h
        out[..., -1] = (2.0 * ft - flux[..., -1] - flux[..., -2]) / h
    else:
        raise ValueError(f"unknown closure {closure!r}")
    return out


def integrate(f: np.ndarray, grid: Grid) -> float:
    """Quadrature of a scalar field (or sum over leading components)."""
    return float(np.sum(f * grid.weights))


def l2_norm(f: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(integrate(np.asarray(f) ** 2, grid)))


def boundary_integral(trace: np.ndarray, grid: Grid) -> float:
    return float(np.sum(trace) * grid.h1)


def wavenumbers(n1: int) -> np.ndarray:
    """Integer wavenumbers in numpy FFT order, spanning -n1/2 .. n1/2 - 1."""
    return np.fft.fftfreq(n1, d=1.0 / n1)


def boundary_norm(trace: np.ndarray, s: float) -> float:
    """Fractional H^s norm of a periodic trace via its discrete Fourier series.

    The trace may carry leading component axes; their contributions add.
    Coefficients are normalised so that the constant 1 has norm 1.
    """
    if s < -1:
        raise ValueError(f"boundary_norm requires s >= -1, got {s}")
    g = np.asarray(trace, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ValueError("boundary_norm received non-finite values")
    n1 = g.shape[-1]
    ghat = np.fft.fft(g, axis=-1) / n1
    k = wavenumbers(n1)
    mult = (1.0 + k**2) ** s
    return float(np.sqrt(np.sum(mult * np.abs(ghat) ** 2)))


def sobolev_norm(f: np.ndarray, k: int, grid: Grid) -> float:
    """Discrete H^k norm built from repeated d1 / d2 applications."""
    if not 0 <= k <= 3:
        raise ValueError(f"sobolev_norm supports 0 <= k <= 3, got {k}")
    total = 0.0
    # d2 powers of f, then d1 powers of each
    col = np.asarray(f, dtype=float)
    for a2 in range(k + 1):
        g = col
        for a1 in range(k + 1 - a2):
            total += integrate(g**2, grid)
            if a1 < k - a2:
                g = d1(g, grid)
        if a2 < k:
            col = d2(col, grid)
    return float(np.sqrt(total))
