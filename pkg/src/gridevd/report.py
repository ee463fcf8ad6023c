"""Text, CSV and JSON renderings of load-flow and control results.

Text tables round voltages to 3 decimals; JSON and CSV keep full precision.
"""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Sequence

from gridevd.controller import ControlReport
from gridevd.network import Network
from gridevd.powerflow import PowerFlowSolution
from gridevd.sensitivity import SensitivityModel


def dump_json(data) -> str:
    """Deterministic JSON: sorted keys, shortest round-trip floats."""
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


def _table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
    fmt = "  ".join(f"{{:>{w}}}" for w in widths)
    lines = [fmt.format(*headers), "  ".join("-" * w for w in widths)]
    lines += [fmt.format(*r) for r in rows]
    return "\n".join(lines) + "\n"


def _csv(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(headers)
    writer.writerows(rows)
    return buf.getvalue()


# -- load flow --------------------------------------------------------------

def powerflow_dict(net: Network, sol: PowerFlowSolution) -> dict:
    return {"case": net.name, "solution": sol.to_dict()}


def powerflow_text(net: Network, sol: PowerFlowSolution) -> str:
    kinds = {b.id: b.kind.name for b in net.buses}
    rows = [
        (str(b), kinds[b], f"{vm:.3f}", f"{math.degrees(va):.3f}")
        for b, vm, va in zip(sol.bus_ids, sol.v_mag, sol.v_ang)
    ]
    head = f"{net.name or 'case'}: {sol.method} converged in {sol.iterations} iterations (mismatch {sol.max_mismatch:.2e})\n"
    return head + _table(("Bus", "Type", "V (pu)", "Angle (deg)"), rows)


def powerflow_csv(sol: PowerFlowSolution) -> str:
    rows = [(b, repr(float(vm)), repr(math.degrees(va))) for b, vm, va in zip(sol.bus_ids, sol.v_mag, sol.v_ang)]
    return _csv(("bus", "v_mag", "v_ang_deg"), rows)


# -- control ----------------------------------------------------------------

def _voltage_columns(report: ControlReport) -> tuple[list[str], list[PowerFlowSolution]]:
    if report.initial_solution is None:
        return [], []
    headers = ["Dist."]
    sols = [report.initial_solution]
    for rec in report.iterations:
        headers.append(f"Iter. {rec.index}")
        sols.append(rec.post_solution)
    return headers, sols


def control_text(report: ControlReport) -> str:
    headers, sols = _voltage_columns(report)
    out = []
    if sols:
        bus_ids = sols[0].bus_ids
        rows = [(str(b), *(f"{s.v_mag[i]:.3f}" for s in sols)) for i, b in enumerate(bus_ids)]
        out.append(_table(("Bus", *headers), rows))
    for rec in report.iterations:
        cmd = rec.command
        moves = ", ".join(f"G{g} {d:+.4f}" for g, d in cmd.deltas().items())
        line = f"iteration {rec.index}: control bus {', '.join(map(str, cmd.control_buses))}; {moves}"
        flags = []
        if cmd.normalized:
            flags.append(f"scaled x{cmd.scale:.3f}")
        if cmd.conflict_zeroed:
            flags.append("conflict zeroed " + ", ".join(f"G{g}" for g in sorted(cmd.conflict_zeroed)))
        if cmd.saturated:
            flags.append("at limit " + ", ".join(f"G{g}" for g in sorted(cmd.saturated)))
        if flags:
            line += " [" + "; ".join(flags) + "]"
        out.append(line + "\n")
        out.extend(f"  note: {n}\n" for n in cmd.notes)
    if report.final_setpoints:
        out.append("final set-points: " + ", ".join(f"G{g} {v:.4f}" for g, v in sorted(report.final_setpoints.items())) + "\n")
    status = "converged" if report.converged else f"not converged: {report.failure}"
    out.append(f"{len(report.iterations)} iteration(s), {status}\n")
    return "".join(out)


def control_csv(report: ControlReport) -> str:
    headers, sols = _voltage_columns(report)
    if not sols:
        return _csv(("bus",), [])
    names = ["disturbance"] + [f"iter{r.index}" for r in report.iterations]
    rows = [(b, *(repr(float(s.v_mag[i])) for s in sols)) for i, b in enumerate(sols[0].bus_ids)]
    return _csv(("bus", *names), rows)


# -- sensitivity ------------------------------------------------------------

def sensitivity_dict(model: SensitivityModel) -> dict:
    p = model.partition
    return {
        "gen_buses": list(p.gen_buses),
        "load_buses": list(p.load_buses),
        "s_gl": [[float(v) for v in row] for row in model.s_gl],
    }


def sensitivity_csv(model: SensitivityModel) -> str:
    p = model.partition
    rows = [(b, *(repr(float(v)) for v in row)) for b, row in zip(p.load_buses, model.s_gl)]
    return _csv(("load_bus", *(f"G{g}" for g in p.gen_buses)), rows)


def sensitivity_text(model: SensitivityModel) -> str:
    p = model.partition
    rows = [(str(b), *(f"{v:.4f}" for v in row)) for b, row in zip(p.load_buses, model.s_gl)]
    return _table(("Load", *(f"G{g}" for g in p.gen_buses)), rows)
