"""Gated collocation/center layouts.

Split locations cut [0, 1] into blocks.  Each block gets a uniform endpoint
grid of collocation points and of RBF centers; every center's nominal width
is ``k`` times its block spacing, and logistic gates blend the widths across
each split so there is no jump at the interfaces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import expit

from .csvio import write_csv
from .errors import EmptyBlock, InvalidSplit
from .kernels import RBFAtom, slopes_offsets

PHYS_FACTOR = 5.0


@dataclass(frozen=True)
class GateConfig:
    splits: tuple
    eps_scale: float
    nu: float
    k: float = 1.5
    phys_factor: float = PHYS_FACTOR

    def __post_init__(self):
        splits = tuple(float(s) for s in np.atleast_1d(self.splits))
        object.__setattr__(self, "splits", splits)
        if not splits:
            raise InvalidSplit("at least one split is required")
        if any(not 0.0 < s < 1.0 for s in splits):
            raise InvalidSplit(f"splits must lie in (0, 1), got {splits}")
        if any(b <= a for a, b in zip(splits, splits[1:])):
            raise InvalidSplit(f"splits must be strictly increasing, got {splits}")
        if not self.eps_scale > 0:
            raise ValueError("eps_scale must be positive")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not self.k > 0:
            raise ValueError("width multiplier k must be positive")

    @classmethod
    def single(cls, x_s, eps_scale, nu, k=1.5, phys_factor=PHYS_FACTOR):
        return cls((x_s,), eps_scale, nu, k, phys_factor)

    @property
    def eps_phy(self) -> float:
        return self.phys_factor * self.nu


@dataclass(frozen=True, eq=False)
class GatedLayout:
    collocation: np.ndarray
    centers: np.ndarray
    widths: np.ndarray
    gate_values: np.ndarray
    spacings: tuple
    eps_b: tuple
    gate: GateConfig = field(repr=False)

    @property
    def n_centers(self) -> int:
        return len(self.centers)

    @cached_property
    def slopes_offsets(self):
        return slopes_offsets(self.centers, self.widths)

    @property
    def slopes(self) -> np.ndarray:
        return self.slopes_offsets[0]

    @property
    def offsets(self) -> np.ndarray:
        return self.slopes_offsets[1]

    @property
    def atoms(self) -> list:
        return [RBFAtom(float(a), float(s)) for a, s in zip(self.centers, self.widths)]

    @property
    def block_widths(self) -> tuple:
        return tuple(self.gate.k * d for d in self.spacings)

    def to_csv(self, path):
        return write_csv(
            path,
            ["alpha", "sigma_x", "gate_value"],
            [self.centers, self.widths, self.gate_values],
        )


def endpoint_grid(lo: float, hi: float, n: int) -> np.ndarray:
    """``lo + (k-1)/n * (hi - lo)`` for ``k = 1..n`` (right end excluded)."""
    if n < 1:
        raise EmptyBlock(f"block [{lo}, {hi}] needs at least one point")
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    return lo + np.arange(n) / n * (hi - lo)


def logistic_gate(alpha, x_s: float, eps_b: float):
    """``1 / (1 + exp(-(alpha - x_s) / eps_b))``, overflow-safe."""
    if not eps_b > 0:
        raise ValueError("eps_b must be positive")
    return expit((np.asarray(alpha, dtype=float) - x_s) / eps_b)


def _build(gate: GateConfig, n_colloc: int, n_centers: int) -> GatedLayout:
    edges = (0.0,) + gate.splits + (1.0,)
    blocks = list(zip(edges[:-1], edges[1:]))
    if n_centers < 1 or n_colloc < 1:
        raise EmptyBlock("every block needs at least one center and one collocation point")
    spacings = tuple((hi - lo) / n_centers for lo, hi in blocks)
    colloc = np.concatenate([endpoint_grid(lo, hi, n_colloc) for lo, hi in blocks])
    centers = np.concatenate([endpoint_grid(lo, hi, n_centers) for lo, hi in blocks])

    sig = [gate.k * d for d in spacings]
    eps_b = tuple(
        max(gate.eps_scale * min(spacings[j], spacings[j + 1]), gate.eps_phy)
        for j in range(len(gate.splits))
    )
    widths = np.full_like(centers, sig[0])
    total_gate = np.zeros_like(centers)
    for j, (x_s, eb) in enumerate(zip(gate.splits, eps_b)):
        s = logistic_gate(centers, x_s, eb)
        widths += s * (sig[j + 1] - sig[j])
        total_gate += s
    # Sequential gates with unequal eps_b can leave the hull by rounding-size
    # amounts (or more when eps_b differ strongly); keep the blend convex.
    np.clip(widths, min(sig), max(sig), out=widths)
    return GatedLayout(
        collocation=colloc,
        centers=centers,
        widths=widths,
        gate_values=total_gate,
        spacings=spacings,
        eps_b=eps_b,
        gate=gate,
    )


def build_gated_layout(gate: GateConfig, n_colloc: int, n_centers: int) -> GatedLayout:
    """Two-block layout for a single split: ``2*n_colloc`` points, ``2*n_centers`` atoms."""
    if len(gate.splits) != 1:
        raise InvalidSplit(f"expected one split, got {len(gate.splits)}")
    return _build(gate, n_colloc, n_centers)


def build_multi_split_layout(gate: GateConfig, n_centers: int, n_colloc: int) -> GatedLayout:
    """Layout with one block per gap between splits; gates applied additively

    ``sigma(alpha) = sigma_1 + sum_j s_j(alpha) (sigma_{j+1} - sigma_j)``,
    which reduces to the two-block blend when there is a single split.
    """
    return _build(gate, n_colloc, n_centers)
