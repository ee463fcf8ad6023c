"""Generator-to-load voltage sensitivity built from the decoupled B matrix.

``S = B^-1`` is partitioned into generator (G) and load (D) blocks::

    [dV_G]   [S11 S12] [dQ_G]
    [dV_D] = [S21 S22] [dQ_D]

Eliminating ``dQ_G`` with ``dQ_D`` held at zero gives ``dV_D = S_GL dV_G``
with ``S_GL = S21 S11^-1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from gridevd.errors import ContractError, SingularMatrixError
from gridevd.linalg import solve_linear
from gridevd.network import BusKind, Network
from gridevd.powerflow import build_b_matrix

RCOND_MIN = 1e-12
# Entries this small are round-off on structurally zero couplings (radial
# load pockets); left in, their random signs fake two-sided conflicts.
ZERO_SNAP = 1e-12


class SingularSensitivityError(SingularMatrixError):
    pass


@dataclass(frozen=True)
class BusPartition:
    gen_buses: tuple[int, ...]
    load_buses: tuple[int, ...]

    @classmethod
    def from_network(cls, net: Network) -> "BusPartition":
        gens = sorted(b.id for b in net.buses if b.kind is not BusKind.PQ)
        loads = sorted(b.id for b in net.buses if b.kind is BusKind.PQ)
        return cls(tuple(gens), tuple(loads))

    def gen_position(self, bus: int) -> int:
        return self.gen_buses.index(bus)

    def load_position(self, bus: int) -> int:
        try:
            return self.load_buses.index(bus)
        except ValueError:
            raise ContractError(f"bus {bus} is not a load bus") from None


@dataclass(frozen=True)
class SensitivityModel:
    partition: BusPartition
    s11: np.ndarray
    s12: np.ndarray
    s21: np.ndarray
    s22: np.ndarray
    s_gl: np.ndarray  # |load| x |gen|

    def row(self, load_bus: int) -> np.ndarray:
        return self.s_gl[self.partition.load_position(load_bus)]

    def load_response(self, delta_vg, delta_qd=None) -> np.ndarray:
        """Load-bus voltage change for generator voltage steps and optional load dQ."""
        dv = self.s_gl @ np.asarray(delta_vg, dtype=float)
        if delta_qd is not None:
            schur = self.s22 - self.s_gl @ self.s12
            dv = dv + schur @ np.asarray(delta_qd, dtype=float)
        return dv


def sensitivity_from_b(B, partition: BusPartition, bus_order) -> SensitivityModel:
    """Build the model from an explicit B matrix whose rows follow ``bus_order``."""
    B = np.asarray(B, dtype=float)
    pos = {b: i for i, b in enumerate(bus_order)}
    g = [pos[b] for b in partition.gen_buses]
    d = [pos[b] for b in partition.load_buses]
    try:
        S = solve_linear(B, np.eye(B.shape[0]))
    except SingularMatrixError as exc:
        raise SingularSensitivityError(
            f"B matrix is singular ({exc}); real cases need line charging or bus shunts to ground it",
            pivot=exc.pivot,
        ) from None
    rcond = 1.0 / (np.max(np.sum(np.abs(B), axis=0)) * np.max(np.sum(np.abs(S), axis=0)))
    if rcond < RCOND_MIN:
        raise SingularSensitivityError(
            f"B matrix is numerically singular (rcond {rcond:.2e}); "
            "real cases need line charging or bus shunts to ground it"
        )
    s11 = S[np.ix_(g, g)]
    s12 = S[np.ix_(g, d)]
    s21 = S[np.ix_(d, g)]
    s22 = S[np.ix_(d, d)]
    # s_gl = s21 s11^-1, i.e. s11^T s_gl^T = s21^T
    s_gl = solve_linear(s11.T, s21.T).T if g and d else np.zeros((len(d), len(g)))
    s_gl[np.abs(s_gl) < ZERO_SNAP] = 0.0
    return SensitivityModel(partition, s11, s12, s21, s22, s_gl)


def build_sensitivity(net: Network) -> SensitivityModel:
    return sensitivity_from_b(build_b_matrix(net), BusPartition.from_network(net), net.bus_ids)


def compute_n_matrix(model: SensitivityModel, controlled: Mapping[int, float]) -> np.ndarray:
    """Quadratic-form matrix ``S_GL^T M S_GL`` with ``M`` diagonal over the controlled load buses."""
    n_gen = model.s_gl.shape[1]
    N = np.zeros((n_gen, n_gen))
    for bus, weight in controlled.items():
        if weight <= 0:
            raise ContractError(f"weight for bus {bus} must be positive, got {weight}")
        s = model.row(bus)
        N += weight * np.outer(s, s)
    return N
