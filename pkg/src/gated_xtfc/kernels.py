"""Gaussian RBF features, boundary-constrained basis functions and the 1D
linear operators applied to them.

Every constrained basis function has the form

    psi(x) = phi(m x + b) - (1 - x) phi(b) - x phi(m + b)

so it vanishes at x = 0 and x = 1 for any slope/offset, and the trial
solution ``g(x) + sum_i c_i psi_i(x)`` carries the Dirichlet data exactly.
All derivatives are analytic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

SQRT2 = math.sqrt(2.0)


def gaussian(z):
    """Return ``(phi, phi', phi'')`` for ``phi(z) = exp(-z**2)``."""
    z = np.asarray(z, dtype=float)
    e = np.exp(-z * z)
    return e, -2.0 * z * e, (4.0 * z * z - 2.0) * e


@dataclass(frozen=True)
class RBFAtom:
    """One Gaussian feature ``exp(-((x - center) / (sqrt(2) width))**2)``."""

    center: float
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError(f"width must be positive, got {self.width}")

    @property
    def slope(self) -> float:
        return 1.0 / (SQRT2 * self.width)

    @property
    def offset(self) -> float:
        return -self.slope * self.center


def slopes_offsets(centers, widths):
    centers = np.asarray(centers, dtype=float)
    m = 1.0 / (SQRT2 * np.asarray(widths, dtype=float))
    return m, -m * centers


@dataclass(frozen=True)
class BoundaryData:
    left: float = 0.0
    right: float = 1.0

    def g(self, x):
        x = np.asarray(x, dtype=float)
        return (1.0 - x) * self.left + x * self.right

    @property
    def slope(self) -> float:
        return self.right - self.left


def _unit(x):
    return np.ones_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class LinearOperator1D:
    """``L[u] = a(x) u' - nu u'' + c0 u`` on [0, 1].

    ``convection`` must accept and return numpy arrays.
    """

    nu: float
    convection: Callable = field(default=_unit, compare=False)
    reaction: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")

    def a(self, x):
        return np.asarray(self.convection(np.asarray(x, dtype=float)), dtype=float)


def convection_diffusion(nu: float) -> LinearOperator1D:
    """``u' - nu u''`` (unit convection, no reaction)."""
    return LinearOperator1D(nu=nu, convection=_unit, reaction=0.0, name="convection-diffusion")


def _twin_convection(x):
    return 2.0 * (2.0 * x - 1.0)


def twin_layer(nu: float) -> LinearOperator1D:
    """``2(2x-1) u' - nu u'' + 4u``, with layers at both ends."""
    return LinearOperator1D(nu=nu, convection=_twin_convection, reaction=4.0, name="twin")


def constrained_basis(atom: RBFAtom, x):
    """``(psi, psi', psi'')`` of one atom at the points ``x``."""
    x = np.asarray(x, dtype=float)
    m, b = atom.slope, atom.offset
    phi, dphi, ddphi = gaussian(m * x + b)
    phi0 = math.exp(-b * b)
    phi1 = math.exp(-(m + b) ** 2)
    psi = phi - (1.0 - x) * phi0 - x * phi1
    return psi, m * dphi + phi0 - phi1, m * m * ddphi


def basis_matrix(x, slopes, offsets) -> np.ndarray:
    """``H[k, i] = psi_i(x_k)``."""
    x = np.asarray(x, dtype=float)
    m = np.asarray(slopes, dtype=float)
    b = np.asarray(offsets, dtype=float)
    z = np.multiply.outer(x, m)
    z += b
    np.square(z, out=z)
    np.negative(z, out=z)
    np.exp(z, out=z)
    z -= np.multiply.outer(1.0 - x, np.exp(-b * b))
    z -= np.multiply.outer(x, np.exp(-(m + b) ** 2))
    return z


def operator_matrix(op: LinearOperator1D, x, slopes, offsets) -> np.ndarray:
    """``R[k, i] = L[psi_i](x_k)`` for every point/atom pair."""
    x = np.asarray(x, dtype=float)
    m = np.asarray(slopes, dtype=float)
    b = np.asarray(offsets, dtype=float)
    phi0 = np.exp(-b * b)
    phi1 = np.exp(-(m + b) ** 2)
    a = op.a(x)[:, None]

    z = np.multiply.outer(x, m)
    z += b
    z2 = z * z
    e = np.exp(-z2)
    # a(x) [m phi'(z) + phi0 - phi1]
    out = z * e
    out *= -2.0 * m
    out += phi0 - phi1
    out *= a
    # - nu m^2 phi''(z)
    z2 *= 4.0
    z2 -= 2.0
    z2 *= e
    z2 *= op.nu * m * m
    out -= z2
    if op.reaction != 0.0:
        e -= np.multiply.outer(1.0 - x, phi0)
        e -= np.multiply.outer(x, phi1)
        e *= op.reaction
        out += e
    return out


def apply_operator(op: LinearOperator1D, atom: RBFAtom, x):
    """``a(x) psi' - nu psi'' + c0 psi`` for one atom."""
    psi, d1, d2 = constrained_basis(atom, x)
    return op.a(x) * d1 - op.nu * d2 + op.reaction * psi


def apply_operator_to_g(op: LinearOperator1D, bd: BoundaryData, x):
    """Operator applied to the boundary interpolant ``g``."""
    x = np.asarray(x, dtype=float)
    return op.a(x) * bd.slope + op.reaction * bd.g(x)


def exact_cd(x, nu: float):
    """Exact solution of ``u' - nu u'' = 0``, ``u(0)=0``, ``u(1)=1``.

    Evaluated as ``exp((x-1)/nu) (1 - exp(-x/nu)) / (1 - exp(-1/nu))``,
    which never overflows.
    """
    x = np.asarray(x, dtype=float)
    return np.exp((x - 1.0) / nu) * (-np.expm1(-x / nu)) / (-np.expm1(-1.0 / nu))


def exact_twin(x, nu: float):
    """Exact solution ``exp(-2x(1-x)/nu)`` of the twin-layer problem."""
    x = np.asarray(x, dtype=float)
    return np.exp(-2.0 * x * (1.0 - x) / nu)
