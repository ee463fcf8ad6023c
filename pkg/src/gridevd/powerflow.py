"""AC load flow: admittance matrix, Newton-Raphson and fast-decoupled solvers.

Generator reactive limits are not enforced, so PV buses never switch to PQ;
the voltage-control problem constrains set-points, not reactive output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gridevd.errors import DivergenceError, SingularMatrixError, ValidationError
from gridevd.linalg import lu_factor, lu_solve, solve_linear
from gridevd.network import BusKind, Network


@dataclass(frozen=True)
class PowerFlowSolution:
    bus_ids: tuple[int, ...]
    v_mag: np.ndarray
    v_ang: np.ndarray
    q_gen: dict[int, float]  # pu, keyed by generator bus
    iterations: int
    max_mismatch: float
    method: str = "newton"
    trace: tuple[float, ...] = field(default=(), repr=False)

    @property
    def voltage(self) -> np.ndarray:
        return self.v_mag * np.exp(1j * self.v_ang)

    def magnitudes(self) -> dict[int, float]:
        return {b: float(v) for b, v in zip(self.bus_ids, self.v_mag)}

    def to_dict(self) -> dict:
        return {
            "bus_ids": list(self.bus_ids),
            "v_mag": [float(v) for v in self.v_mag],
            "v_ang": [float(a) for a in self.v_ang],
            "q_gen": {str(k): float(v) for k, v in self.q_gen.items()},
            "iterations": self.iterations,
            "max_mismatch": float(self.max_mismatch),
            "method": self.method,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PowerFlowSolution":
        return cls(
            bus_ids=tuple(int(b) for b in data["bus_ids"]),
            v_mag=np.array(data["v_mag"], dtype=float),
            v_ang=np.array(data["v_ang"], dtype=float),
            q_gen={int(k): float(v) for k, v in data["q_gen"].items()},
            iterations=int(data["iterations"]),
            max_mismatch=float(data["max_mismatch"]),
            method=data.get("method", "newton"),
        )

    def __eq__(self, other):
        if not isinstance(other, PowerFlowSolution):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def build_ybus(net: Network, *, series_only: bool = False) -> np.ndarray:
    """Bus admittance matrix in the bus order of ``net``.

    Branches use the standard pi model with an off-nominal tap (and phase
    shift) on the from side. With ``series_only`` only the series reactance
    is kept (no resistance, charging, shunts, taps or shifts), which is the
    B' construction of the XB fast-decoupled method.
    """
    idx = net.bus_index()
    n = len(net.buses)
    Y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        if br.r == 0.0 and br.x == 0.0:
            raise ValidationError(f"branch {br.from_bus}-{br.to_bus} has zero impedance")
        f, t = idx[br.from_bus], idx[br.to_bus]
        if series_only:
            ys = 1.0 / complex(0.0, br.x)
            Y[f, f] += ys
            Y[t, t] += ys
            Y[f, t] -= ys
            Y[t, f] -= ys
            continue
        ys = 1.0 / complex(br.r, br.x)
        half = 0.5j * br.b_charging
        tap = br.tap_ratio * np.exp(1j * br.shift)
        Y[f, f] += (ys + half) / (br.tap_ratio**2)
        Y[t, t] += ys + half
        Y[f, t] -= ys / np.conj(tap)
        Y[t, f] -= ys / tap
    if not series_only:
        for i, b in enumerate(net.buses):
            Y[i, i] += complex(b.shunt_g, b.shunt_b)
    return Y


def build_b_matrix(net: Network) -> np.ndarray:
    """Reactive-coupling matrix ``-Im(Ybus)`` over every bus, slack included."""
    return -build_ybus(net).imag


def build_b_prime(net: Network) -> np.ndarray:
    """Series-only ``-Im(Ybus)`` used for the angle half-iteration."""
    return -build_ybus(net, series_only=True).imag


def _specified_injection(net: Network) -> np.ndarray:
    gen_p = {g.bus: g.p_gen for g in net.generators}
    return np.array([gen_p.get(b.id, 0.0) - b.p_load - 1j * b.q_load for b in net.buses])


def _index_sets(net: Network):
    kinds = [b.kind for b in net.buses]
    pv = [i for i, k in enumerate(kinds) if k is BusKind.PV]
    pq = [i for i, k in enumerate(kinds) if k is BusKind.PQ]
    return np.array(pv + pq, dtype=int), np.array(pq, dtype=int)


def _initial_voltage(net: Network, start: PowerFlowSolution | None):
    if start is not None and tuple(start.bus_ids) == tuple(net.bus_ids):
        vm, va = start.v_mag.astype(float).copy(), start.v_ang.astype(float).copy()
    else:
        vm, va = np.ones(len(net.buses)), np.zeros(len(net.buses))
    idx = net.bus_index()
    for g in net.generators:
        vm[idx[g.bus]] = g.v_setpoint
    slack = idx[net.slack_bus]
    if start is None:
        va[slack] = net.buses[slack].v_ang
    return vm, va


def _mismatch(Y, V, Ssp, pvpq, pq):
    mis = V * np.conj(Y @ V) - Ssp
    F = np.concatenate([mis.real[pvpq], mis.imag[pq]])
    return F, (float(np.max(np.abs(F))) if F.size else 0.0)


def _finish(net, Y, vm, va, iterations, err, method, trace) -> PowerFlowSolution:
    V = vm * np.exp(1j * va)
    S = V * np.conj(Y @ V)
    idx = net.bus_index()
    q_gen = {g.bus: float(S[idx[g.bus]].imag + net.buses[idx[g.bus]].q_load) for g in net.generators}
    return PowerFlowSolution(
        bus_ids=tuple(net.bus_ids), v_mag=vm, v_ang=va, q_gen=q_gen,
        iterations=iterations, max_mismatch=err, method=method, trace=tuple(trace),
    )


def solve_newton_raphson(
    net: Network, tol: float = 1e-8, max_iter: int = 50, start: PowerFlowSolution | None = None
) -> PowerFlowSolution:
    """Full polar Newton-Raphson load flow.

    Starts flat unless ``start`` supplies a previous solution to warm from;
    generator set-points always override the starting magnitudes.
    """
    Y = build_ybus(net)
    Ssp = _specified_injection(net)
    pvpq, pq = _index_sets(net)
    npvpq = len(pvpq)
    vm, va = _initial_voltage(net, start)
    trace = []
    for it in range(max_iter + 1):
        V = vm * np.exp(1j * va)
        F, err = _mismatch(Y, V, Ssp, pvpq, pq)
        trace.append(err)
        if err < tol:
            return _finish(net, Y, vm, va, it, err, "newton", trace)
        if it == max_iter:
            break
        I = Y @ V
        diagV = np.diag(V)
        dS_dVm = diagV @ np.conj(Y @ np.diag(V / np.abs(V))) + np.diag(np.conj(I) * V / np.abs(V))
        dS_dVa = 1j * diagV @ np.conj(np.diag(I) - Y @ diagV)
        J = np.block(
            [
                [dS_dVa.real[np.ix_(pvpq, pvpq)], dS_dVm.real[np.ix_(pvpq, pq)]],
                [dS_dVa.imag[np.ix_(pq, pvpq)], dS_dVm.imag[np.ix_(pq, pq)]],
            ]
        )
        try:
            dx = solve_linear(J, -F)
        except SingularMatrixError as exc:
            raise DivergenceError(
                f"Newton-Raphson Jacobian became singular at iteration {it} (mismatch {err:.3e}): {exc}", trace
            ) from None
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
    raise DivergenceError(
        f"Newton-Raphson did not converge in {max_iter} iterations (mismatch {trace[-1]:.3e})", trace
    )


def solve_fast_decoupled(
    net: Network, tol: float = 1e-8, max_iter: int = 100, start: PowerFlowSolution | None = None
) -> PowerFlowSolution:
    """XB fast-decoupled load flow: constant B' for angles and B'' for magnitudes."""
    Y = build_ybus(net)
    Ssp = _specified_injection(net)
    pvpq, pq = _index_sets(net)
    Bp = build_b_prime(net)[np.ix_(pvpq, pvpq)]
    Bpp = build_b_matrix(net)[np.ix_(pq, pq)]
    lu_p = lu_factor(Bp) if len(pvpq) else None
    lu_pp = lu_factor(Bpp) if len(pq) else None
    vm, va = _initial_voltage(net, start)
    trace = []
    for it in range(max_iter + 1):
        V = vm * np.exp(1j * va)
        raw = V * np.conj(Y @ V) - Ssp
        err = max(np.max(np.abs(raw.real[pvpq]), initial=0.0), np.max(np.abs(raw.imag[pq]), initial=0.0))
        trace.append(float(err))
        mis = raw / vm
        if err < tol:
            return _finish(net, Y, vm, va, it, float(err), "fast-decoupled", trace)
        if it == max_iter:
            break
        if lu_p is not None:
            va[pvpq] -= lu_solve(*lu_p, mis.real[pvpq])
        V = vm * np.exp(1j * va)
        mis = (V * np.conj(Y @ V) - Ssp) / vm
        if lu_pp is not None:
            vm[pq] -= lu_solve(*lu_pp, mis.imag[pq])
    raise DivergenceError(
        f"fast-decoupled load flow did not converge in {max_iter} iterations (mismatch {trace[-1]:.3e})",
        trace,
    )


def branch_losses(net: Network, sol: PowerFlowSolution) -> complex:
    """Total complex loss summed branch by branch from terminal flows."""
    idx = net.bus_index()
    V = sol.voltage
    total = 0j
    for br in net.branches:
        f, t = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        half = 0.5j * br.b_charging
        tap = br.tap_ratio * np.exp(1j * br.shift)
        i_f = (ys + half) / br.tap_ratio**2 * V[f] - ys / np.conj(tap) * V[t]
        i_t = -ys / tap * V[f] + (ys + half) * V[t]
        total += V[f] * np.conj(i_f) + V[t] * np.conj(i_t)
    return complex(total)
