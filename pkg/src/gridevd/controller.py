"""Eigen-direction secondary voltage controller.

Each round solves the load flow, picks the least-violated load bus on each
violated side, and moves generator set-points along the top eigenvector of
``N = S_GL^T M S_GL``. For a single control bus ``N`` is rank one, so the
direction is simply the bus's sensitivity row; the step length comes from
``alpha**2 * lambda_max = dV_ctr**2`` and is then shrunk uniformly until
every generator stays in its voltage band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from gridevd.errors import (
    ContractError,
    DegenerateError,
    DivergenceError,
    GridError,
    SaturationError,
    SingularMatrixError,
)
from gridevd.linalg import max_eigenpair
from gridevd.network import Generator, Network, apply_generator_deltas
from gridevd.powerflow import PowerFlowSolution, solve_newton_raphson
from gridevd.sensitivity import BusPartition, SensitivityModel, build_sensitivity, compute_n_matrix

LAMBDA_MIN = 1e-14
HEADROOM_TOL = 1e-12

LOW = "low"
HIGH = "high"


@dataclass(frozen=True)
class ControlConfig:
    v_lower: float = 0.9
    v_upper: float = 1.1
    pf_tol: float = 1e-8
    pf_max_iter: int = 50
    max_rounds: int = 10
    # "command": conflicts judged on the signed per-side set-point changes.
    # "direction": judged on the raw eigenvector signs instead, so opposed
    # corrections that share a sign pattern are simply summed.
    conflict_basis: str = "command"

    def __post_init__(self):
        if not self.v_lower < self.v_upper:
            raise ContractError(f"v_lower ({self.v_lower}) must be below v_upper ({self.v_upper})")
        if self.pf_tol <= 0:
            raise ContractError("pf_tol must be positive")
        if self.max_rounds < 0:
            raise ContractError("max_rounds must be non-negative")
        if self.conflict_basis not in ("command", "direction"):
            raise ContractError(f"unknown conflict basis {self.conflict_basis!r}")

    def to_dict(self) -> dict:
        return {
            "v_lower": self.v_lower,
            "v_upper": self.v_upper,
            "pf_tol": self.pf_tol,
            "pf_max_iter": self.pf_max_iter,
            "max_rounds": self.max_rounds,
            "conflict_basis": self.conflict_basis,
        }


@dataclass(frozen=True)
class ViolationSet:
    low: dict[int, float]
    high: dict[int, float]
    v_lower: float = 0.9
    v_upper: float = 1.1

    def __bool__(self) -> bool:
        return bool(self.low or self.high)

    @property
    def count(self) -> int:
        return len(self.low) + len(self.high)

    @property
    def depth(self) -> float:
        """Largest distance of any violated bus outside the band."""
        lows = [self.v_lower - v for v in self.low.values()]
        highs = [v - self.v_upper for v in self.high.values()]
        return max(lows + highs, default=0.0)

    def to_dict(self) -> dict:
        return {
            "low": {str(k): v for k, v in self.low.items()},
            "high": {str(k): v for k, v in self.high.items()},
            "v_lower": self.v_lower,
            "v_upper": self.v_upper,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ViolationSet":
        return cls(
            {int(k): float(v) for k, v in data["low"].items()},
            {int(k): float(v) for k, v in data["high"].items()},
            float(data["v_lower"]),
            float(data["v_upper"]),
        )


@dataclass(frozen=True)
class ControlTarget:
    bus: int
    side: str
    v_mag: float


@dataclass(frozen=True, eq=False)
class ControlCommand:
    control_buses: tuple[int, ...]
    gen_buses: tuple[int, ...]
    delta_vg: np.ndarray
    alpha: tuple[float, ...]
    lambda_max: tuple[float, ...]
    direction: np.ndarray | None = None
    normalized: bool = False
    scale: float = 1.0
    conflict_zeroed: frozenset[int] = frozenset()
    saturated: frozenset[int] = frozenset()
    notes: tuple[str, ...] = ()

    def deltas(self) -> dict[int, float]:
        return {g: float(d) for g, d in zip(self.gen_buses, self.delta_vg)}

    def to_dict(self) -> dict:
        return {
            "control_buses": list(self.control_buses),
            "gen_buses": list(self.gen_buses),
            "delta_vg": [float(d) for d in self.delta_vg],
            "alpha": list(self.alpha),
            "lambda_max": list(self.lambda_max),
            "direction": None if self.direction is None else [float(v) for v in self.direction],
            "normalized": self.normalized,
            "scale": self.scale,
            "conflict_zeroed": sorted(self.conflict_zeroed),
            "saturated": sorted(self.saturated),
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ControlCommand":
        return cls(
            control_buses=tuple(data["control_buses"]),
            gen_buses=tuple(data["gen_buses"]),
            delta_vg=np.array(data["delta_vg"], dtype=float),
            alpha=tuple(data["alpha"]),
            lambda_max=tuple(data["lambda_max"]),
            direction=None if data["direction"] is None else np.array(data["direction"], dtype=float),
            normalized=bool(data["normalized"]),
            scale=float(data["scale"]),
            conflict_zeroed=frozenset(data["conflict_zeroed"]),
            saturated=frozenset(data["saturated"]),
            notes=tuple(data["notes"]),
        )

    def __eq__(self, other):
        if not isinstance(other, ControlCommand):
            return NotImplemented
        return self.to_dict() == other.to_dict()


@dataclass(frozen=True, eq=False)
class IterationRecord:
    index: int
    pre_solution: PowerFlowSolution
    violations: ViolationSet
    command: ControlCommand
    post_solution: PowerFlowSolution
    setpoints: dict[int, float]

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "pre_solution": self.pre_solution.to_dict(),
            "violations": self.violations.to_dict(),
            "command": self.command.to_dict(),
            "post_solution": self.post_solution.to_dict(),
            "setpoints": {str(k): v for k, v in self.setpoints.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "IterationRecord":
        return cls(
            index=int(data["index"]),
            pre_solution=PowerFlowSolution.from_dict(data["pre_solution"]),
            violations=ViolationSet.from_dict(data["violations"]),
            command=ControlCommand.from_dict(data["command"]),
            post_solution=PowerFlowSolution.from_dict(data["post_solution"]),
            setpoints={int(k): float(v) for k, v in data["setpoints"].items()},
        )

    def __eq__(self, other):
        if not isinstance(other, IterationRecord):
            return NotImplemented
        return self.to_dict() == other.to_dict()


@dataclass(frozen=True, eq=False)
class ControlReport:
    case: str
    iterations: tuple[IterationRecord, ...]
    converged: bool
    initial_solution: PowerFlowSolution | None
    final_solution: PowerFlowSolution | None
    final_violations: ViolationSet | None
    final_setpoints: dict[int, float]
    config: ControlConfig = field(default_factory=ControlConfig)
    failure: str | None = None

    def to_dict(self) -> dict:
        sol = lambda s: None if s is None else s.to_dict()  # noqa: E731
        return {
            "case": self.case,
            "converged": self.converged,
            "failure": self.failure,
            "config": self.config.to_dict(),
            "initial_solution": sol(self.initial_solution),
            "iterations": [r.to_dict() for r in self.iterations],
            "final_solution": sol(self.final_solution),
            "final_violations": None if self.final_violations is None else self.final_violations.to_dict(),
            "final_setpoints": {str(k): v for k, v in self.final_setpoints.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ControlReport":
        sol = lambda s: None if s is None else PowerFlowSolution.from_dict(s)  # noqa: E731
        fv = data["final_violations"]
        return cls(
            case=data["case"],
            iterations=tuple(IterationRecord.from_dict(r) for r in data["iterations"]),
            converged=bool(data["converged"]),
            initial_solution=sol(data["initial_solution"]),
            final_solution=sol(data["final_solution"]),
            final_violations=None if fv is None else ViolationSet.from_dict(fv),
            final_setpoints={int(k): float(v) for k, v in data["final_setpoints"].items()},
            config=ControlConfig(**data["config"]),
            failure=data["failure"],
        )

    def __eq__(self, other):
        if not isinstance(other, ControlReport):
            return NotImplemented
        return self.to_dict() == other.to_dict()


# ---------------------------------------------------------------------------
# single-step operations
# ---------------------------------------------------------------------------

def detect_violations(
    sol: PowerFlowSolution, partition: BusPartition, v_lower: float = 0.9, v_upper: float = 1.1
) -> ViolationSet:
    mags = sol.magnitudes()
    low = {b: mags[b] for b in partition.load_buses if mags[b] < v_lower}
    high = {b: mags[b] for b in partition.load_buses if mags[b] > v_upper}
    return ViolationSet(low, high, v_lower, v_upper)


def select_control_buses(v: ViolationSet) -> list[ControlTarget]:
    """Least-violated bus (closest to 1 pu) on each populated side, low side first."""
    if not v:
        raise ContractError("no violated bus to control")
    targets = []
    for side, group in ((LOW, v.low), (HIGH, v.high)):
        if group:
            bus = min(group, key=lambda b: (abs(1.0 - group[b]), b))
            targets.append(ControlTarget(bus, side, group[bus]))
    return targets


def compute_alpha(delta_v_ctr: float, lambda_max: float) -> float:
    """Step length with ``alpha**2 * lambda_max == delta_v_ctr**2`` (magnitude only)."""
    if lambda_max <= LAMBDA_MIN:
        raise DegenerateError(f"lambda_max = {lambda_max:.3e}: control bus is insensitive to every generator")
    return abs(delta_v_ctr) / math.sqrt(lambda_max)


def compute_control_input(
    model: SensitivityModel,
    control_bus: int,
    v_ctr: float,
    weight: float = 1.0,
    gen_mask: Sequence[bool] | None = None,
) -> ControlCommand:
    """Unnormalized set-point change driving ``control_bus`` toward 1 pu.

    ``gen_mask`` restricts the command to a subset of generators; masked-out
    generators get a zero component and take no part in the eigenproblem.
    """
    N = compute_n_matrix(model, {control_bus: weight})
    if gen_mask is not None:
        m = np.asarray(gen_mask, dtype=float)
        N = N * np.outer(m, m)
    try:
        lam, v = max_eigenpair(N)
        alpha = compute_alpha(1.0 - v_ctr, lam)
    except DegenerateError as exc:
        raise DegenerateError(f"control bus {control_bus}: {exc}") from None
    dv_ctr = 1.0 - v_ctr
    predicted = float(model.row(control_bus) @ v)
    if predicted * dv_ctr < 0:
        v = -v
    return ControlCommand(
        control_buses=(control_bus,),
        gen_buses=model.partition.gen_buses,
        delta_vg=alpha * v,
        alpha=(alpha,),
        lambda_max=(lam,),
        direction=v,
    )


def _headroom(x: np.ndarray, gens: Sequence[Generator], gen_buses: Sequence[int]) -> np.ndarray:
    by_bus = {g.bus: g for g in gens}
    aligned = [by_bus[b] for b in gen_buses]
    up = np.array([g.v_max - g.v_setpoint for g in aligned])
    down = np.array([g.v_setpoint - g.v_min for g in aligned])
    return np.where(x > 0, up, down)


def normalize_control_input(cmd: ControlCommand, gens: Sequence[Generator]) -> ControlCommand:
    """Scale a command uniformly so every set-point stays inside its band.

    Generators already sitting on the limit they are pushed toward are
    dropped from the command first; the remaining components share one
    min-ratio scale, which keeps the direction of the command.
    """
    x = np.asarray(cmd.delta_vg, dtype=float)
    h = _headroom(x, gens, cmd.gen_buses)
    active = x != 0
    stuck = active & (h <= HEADROOM_TOL)
    if active.any() and not (active & ~stuck).any():
        raise SaturationError("every commanded generator is already at its voltage limit")
    x = np.where(stuck, 0.0, x)
    free = x != 0
    scale = 1.0
    if free.any():
        scale = min(1.0, float(np.min(h[free] / np.abs(x[free]))))
    saturated = frozenset(b for b, s in zip(cmd.gen_buses, stuck) if s)
    return ControlCommand(
        control_buses=cmd.control_buses,
        gen_buses=cmd.gen_buses,
        delta_vg=scale * x,
        alpha=cmd.alpha,
        lambda_max=cmd.lambda_max,
        direction=cmd.direction,
        normalized=scale < 1.0,
        scale=scale,
        conflict_zeroed=cmd.conflict_zeroed,
        saturated=cmd.saturated | saturated,
        notes=cmd.notes,
    )


def conflict_merge(x, y) -> np.ndarray:
    """Element-wise ``0`` where ``x_i * y_i < 0``, otherwise ``x_i + y_i``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ContractError(f"vectors differ in shape: {x.shape} vs {y.shape}")
    return np.where(x * y < 0, 0.0, x + y)


# ---------------------------------------------------------------------------
# command assembly
# ---------------------------------------------------------------------------

def _single_sided(model, target, gens) -> ControlCommand:
    cmd = compute_control_input(model, target.bus, target.v_mag)
    return normalize_control_input(cmd, gens)


def _influence_split(model, low, high, gens, first_notes) -> ControlCommand:
    """Give each generator to the side it influences more, then command each side on its own set.

    Used when the merged command leaves no generator able to move: with
    non-negative sensitivities every generator serves both buses, so the
    element-wise merge cancels everything.
    """
    gen_buses = model.partition.gen_buses
    rows = {}
    signs = {}
    for t in (low, high):
        r = np.abs(model.row(t.bus))
        rows[t.side] = r / np.linalg.norm(r)
        signs[t.side] = np.sign(1.0 - t.v_mag) * np.sign(model.row(t.bus))
    h_up = _headroom(np.ones(len(gen_buses)), gens, gen_buses)
    h_down = _headroom(-np.ones(len(gen_buses)), gens, gen_buses)

    def can_move(side):
        s = signs[side]
        return ((s > 0) & (h_up > HEADROOM_TOL)) | ((s < 0) & (h_down > HEADROOM_TOL))

    low_ok, high_ok = can_move(LOW), can_move(HIGH)
    to_low = low_ok & (~high_ok | (rows[LOW] >= rows[HIGH]))
    to_high = high_ok & ~to_low
    parts = []
    for target, mask in ((low, to_low), (high, to_high)):
        if (mask & (model.row(target.bus) != 0)).any():
            parts.append(compute_control_input(model, target.bus, target.v_mag, gen_mask=mask))
    if not parts:
        raise SaturationError(
            f"two-sided conflict between buses {low.bus} and {high.bus} with no free generator"
        )
    merged = parts[0].delta_vg
    for p in parts[1:]:
        merged = conflict_merge(merged, p.delta_vg)
    assigned = {LOW: [b for b, m in zip(gen_buses, to_low) if m], HIGH: [b for b, m in zip(gen_buses, to_high) if m]}
    note = f"total conflict; generators split by influence: {low.bus}<-{assigned[LOW]}, {high.bus}<-{assigned[HIGH]}"
    cmd = ControlCommand(
        control_buses=(low.bus, high.bus),
        gen_buses=gen_buses,
        delta_vg=merged,
        alpha=tuple(p.alpha[0] for p in parts),
        lambda_max=tuple(p.lambda_max[0] for p in parts),
        conflict_zeroed=frozenset(),
        notes=first_notes + (note,),
    )
    return normalize_control_input(cmd, gens)


def _canonical(v: np.ndarray) -> np.ndarray:
    # eigenvector as returned by the solver: largest-magnitude entry positive
    return v if v[np.argmax(np.abs(v))] >= 0 else -v


def _two_sided(model, low, high, gens, basis) -> ControlCommand:
    a = compute_control_input(model, low.bus, low.v_mag)
    b = compute_control_input(model, high.bus, high.v_mag)
    if basis == "direction":
        opposed = _canonical(a.direction) * _canonical(b.direction) < 0
        merged = np.where(opposed, 0.0, a.delta_vg + b.delta_vg)
    else:
        opposed = a.delta_vg * b.delta_vg < 0
        merged = conflict_merge(a.delta_vg, b.delta_vg)
    zeroed = frozenset(g for g, o in zip(model.partition.gen_buses, opposed) if o)
    notes = ("two-sided: per-side commands merged, then normalized",)
    cmd = ControlCommand(
        control_buses=(low.bus, high.bus),
        gen_buses=model.partition.gen_buses,
        delta_vg=merged,
        alpha=(a.alpha[0], b.alpha[0]),
        lambda_max=(a.lambda_max[0], b.lambda_max[0]),
        conflict_zeroed=zeroed,
        notes=notes,
    )
    try:
        out = normalize_control_input(cmd, gens)
    except SaturationError:
        out = None
    if out is None or not np.any(out.delta_vg):
        return _influence_split(model, low, high, gens, notes)
    return out


def build_command(
    model: SensitivityModel, targets: Sequence[ControlTarget], gens: Sequence[Generator], basis: str = "command"
) -> ControlCommand:
    """Normalized command for one or two control targets."""
    if len(targets) == 1:
        return _single_sided(model, targets[0], gens)
    if len(targets) == 2:
        low, high = sorted(targets, key=lambda t: t.side != LOW)
        return _two_sided(model, low, high, gens, basis)
    raise ContractError(f"expected one or two control targets, got {len(targets)}")


# ---------------------------------------------------------------------------
# the control loop
# ---------------------------------------------------------------------------

Solver = Callable[..., PowerFlowSolution]


def run_control_loop(
    net: Network,
    config: ControlConfig | None = None,
    solver: Solver = solve_newton_raphson,
) -> ControlReport:
    """Iterate solve / detect / command / apply until no load bus is violated.

    Solver failures, saturation and degenerate sensitivities end the loop
    early with ``converged=False`` and a ``failure`` message rather than
    raising.
    """
    config = config or ControlConfig()
    solve = lambda n, start=None: solver(n, tol=config.pf_tol, max_iter=config.pf_max_iter, start=start)  # noqa: E731

    def report(records, converged, initial, final, violations, failure=None):
        return ControlReport(
            case=net.name,
            iterations=tuple(records),
            converged=converged,
            initial_solution=initial,
            final_solution=final,
            final_violations=violations,
            final_setpoints={g.bus: g.v_setpoint for g in current.generators},
            config=config,
            failure=failure,
        )

    current = net
    records: list[IterationRecord] = []
    try:
        sol = solve(current)
    except (DivergenceError, SingularMatrixError) as exc:
        return report(records, False, None, None, None, f"initial load flow failed: {exc}")
    initial = sol
    for round_no in range(config.max_rounds + 1):
        model = build_sensitivity(current)
        violations = detect_violations(sol, model.partition, config.v_lower, config.v_upper)
        if not violations:
            return report(records, True, initial, sol, violations)
        if round_no == config.max_rounds:
            return report(records, False, initial, sol, violations, f"violations remain after {config.max_rounds} rounds")
        targets = select_control_buses(violations)
        try:
            cmd = build_command(model, targets, current.generators, config.conflict_basis)
            if not np.any(cmd.delta_vg):
                raise SaturationError("command is zero; no generator can act")
            current = apply_generator_deltas(current, {g: d for g, d in cmd.deltas().items() if d != 0.0})
            new_sol = solve(current, start=sol)
        except GridError as exc:
            return report(records, False, initial, sol, violations, f"round {round_no + 1}: {exc}")
        records.append(
            IterationRecord(
                index=round_no + 1,
                pre_solution=sol,
                violations=violations,
                command=cmd,
                post_solution=new_sol,
                setpoints={g.bus: g.v_setpoint for g in current.generators},
            )
        )
        sol = new_sol
    raise AssertionError("unreachable")
