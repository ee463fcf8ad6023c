"""Acceptance criteria, one verdict line per criterion.

Each test records a PASS/FAIL line (listed in the terminal summary) and then
asserts it, so a failing criterion also fails the test run.
"""

import functools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_psd
from gridevd import load_fixture
from gridevd.controller import ControlConfig, conflict_merge, run_control_loop, select_control_buses
from gridevd.linalg import eig_symmetric, top_left_singular
from gridevd.network import add_reactive_load, apply_disturbances, apply_generator_deltas
from gridevd.powerflow import solve_newton_raphson
from gridevd.sensitivity import build_sensitivity
from reference_tables import (
    IEEE9_BUS4_BUS5,
    IEEE9_BUS7,
    IEEE9_NORMAL,
    IEEE14_BUS5,
    IEEE14_NORMAL,
    IEEE30_DISTURBANCES,
    IEEE30_ITERATIONS,
    IEEE57_DISTURBANCES,
    IEEE57_ITERATIONS,
)

EXPECTED_ITERATIONS = 3
ITERATION_CAP = 5
FD_CASES = ("case9", "case14", "case30", "case57")


class DocumentedDeviation(UserWarning):
    """A run that meets its criterion only through the documented fallback clause."""


def worst_gap(values, reference) -> float:
    return float(np.max(np.abs(np.asarray(values) - np.asarray(reference))))


def run(name, disturbances, **config):
    net = apply_disturbances(load_fixture(name), disturbances)
    return net, run_control_loop(net, ControlConfig(**config))


# 1 -------------------------------------------------------------------------

def test_c1_base_case_load_flow(criterion):
    gaps = {}
    for name, ref in (("case9", IEEE9_NORMAL), ("case14", IEEE14_NORMAL)):
        gaps[name] = worst_gap(solve_newton_raphson(load_fixture(name)).v_mag, ref)
    ok = all(g <= 0.001 for g in gaps.values())
    detail = ", ".join(f"{k} worst gap {v:.4f}" for k, v in gaps.items()) + " (tol 0.001)"
    assert criterion(1, "", ok, detail)


# 2 -------------------------------------------------------------------------

def test_c2_disturbance_reproduction(criterion):
    net = add_reactive_load(load_fixture("case9"), 7, 115)
    report = run_control_loop(net, ControlConfig(max_rounds=0))
    mags = report.initial_solution.magnitudes()
    v = report.final_violations
    ok = abs(mags[7] - 0.891) <= 0.003 and set(v.low) | set(v.high) == {7}
    detail = f"bus 7 at {mags[7]:.4f} (0.891 +/- 0.003); violated buses {sorted(set(v.low) | set(v.high))}"
    assert criterion(2, "", ok, detail)


# 3 -------------------------------------------------------------------------

def test_c3_control_command_direction(criterion):
    _, report = run("case9", [(7, 115)])
    cmd = report.iterations[0].command
    d = cmd.deltas()
    mags = {g: abs(x) for g, x in d.items()}
    ordered = mags[2] > mags[3] > mags[1]
    same_sign = len({np.sign(x) for x in d.values()}) == 1
    gap = worst_gap([d[1], d[2], d[3]], IEEE9_BUS7["command"])
    ok = ordered and same_sign and gap <= 0.01
    detail = f"dVg = [{d[1]:.4f}, {d[2]:.4f}, {d[3]:.4f}], G2>G3>G1 {ordered}, same sign {same_sign}, gap {gap:.4f} (tol 0.01)"
    assert criterion(3, "", ok, detail)


# 4 -------------------------------------------------------------------------

def test_c4_post_control_tables(criterion):
    _, r1 = run("case9", [(7, 115)])
    _, r2 = run("case9", [(4, 150), (5, 70)])
    g1 = worst_gap(r1.final_solution.v_mag, IEEE9_BUS7["control"])
    g2 = worst_gap(r2.final_solution.v_mag, IEEE9_BUS4_BUS5["control"])
    at_limit = r1.final_setpoints[2] == 1.1
    clean = r1.converged and r2.converged and not r1.final_violations and not r2.final_violations
    ok = g1 <= 0.02 and g2 <= 0.02 and at_limit and clean
    detail = (
        f"scenario 1 gap {g1:.4f}, scenario 2 gap {g2:.4f} (tol 0.02); "
        f"G2 = {r1.final_setpoints[2]!r}; violations at exit: {not clean}"
    )
    assert criterion(4, "", ok, detail)


# 5 -------------------------------------------------------------------------

def test_c5a_selection_ieee9(criterion):
    _, report = run("case9", [(4, 150), (5, 70)])
    first = report.iterations[0]
    flagged = set(first.violations.low) | set(first.violations.high)
    chosen = first.command.control_buses
    ok = flagged == {4, 5, 9} and chosen == (4,)
    assert criterion(5, "a", ok, f"IEEE-9: flagged {sorted(flagged)}, selected {list(chosen)}")


def test_c5b_selection_ieee30(criterion):
    _, report = run("case30", IEEE30_DISTURBANCES)
    first = report.iterations[0]
    chosen = first.command.control_buses
    low = first.violations.low
    ok = chosen == (20, 29)
    detail = (
        f"IEEE-30: selected {list(chosen)}, expected [20, 29]; "
        f"bus 18 at {low[18]:.4f} is closer to 1 pu than bus 20 at {low[20]:.4f}"
    )
    assert criterion(5, "b", ok, detail)


# 6 -------------------------------------------------------------------------

def test_c6_saturation(criterion):
    net, report = run("case14", [(5, 300)])
    v5 = report.final_solution.magnitudes()[5]
    # at the limit to the reference three-decimal resolution
    saturated = sorted(g.bus for g in net.generators if g.v_max - report.final_setpoints[g.bus] <= 0.001)
    listed = "final_solution" in report.to_dict() and 5 in report.final_solution.magnitudes()
    ok = len(saturated) >= 2 and abs(v5 - 0.92) <= 0.02 and listed
    setpoints = ", ".join(f"G{g} {v:.4f}" for g, v in sorted(report.final_setpoints.items()))
    detail = f"generators within 0.001 of 1.1: {saturated}; bus 5 at {v5:.4f} (0.92 +/- 0.02); {setpoints}"
    assert criterion(6, "", ok, detail)


# 7 -------------------------------------------------------------------------

def _tracking(report, table):
    sols = [report.initial_solution] + [r.post_solution for r in report.iterations]
    shared = min(len(sols), len(table))
    gaps = []
    for k in range(shared):
        mags = sols[k].magnitudes()
        gaps.append(max(abs(mags[b] - v) for b, v in table[k].items()))
    return gaps


@pytest.mark.parametrize(
    "part, name, disturbances, table",
    [("a", "case30", IEEE30_DISTURBANCES, IEEE30_ITERATIONS), ("b", "case57", IEEE57_DISTURBANCES, IEEE57_ITERATIONS)],
)
def test_c7_multi_iteration(criterion, part, name, disturbances, table):
    _, report = run(name, disturbances)
    n = len(report.iterations)
    in_band = report.final_violations is not None and not report.final_violations
    gaps = _tracking(report, table)
    tracked = all(g <= 0.03 for g in gaps)
    cols = ", ".join(f"{'dist' if k == 0 else f'iter {k}'} {g:.3f}" for k, g in enumerate(gaps))
    if n == EXPECTED_ITERATIONS:
        ok = report.converged and in_band and tracked
        verdict = "count as expected"
    else:
        # trajectories part ways after the first round, so only the disturbed
        # point and round 1 are comparable column by column
        ok = report.converged and in_band and n <= ITERATION_CAP and all(g <= 0.03 for g in gaps[:2])
        verdict = f"DEVIATION: {n} iterations instead of {EXPECTED_ITERATIONS}, gated on dist and iter 1"
        warnings.warn(f"{name}: {verdict}", DocumentedDeviation)
    detail = f"{name}: converged {report.converged} in {n} iterations ({verdict}); tracking gaps {cols} (tol 0.03)"
    assert criterion(7, part, ok, detail)


# 8 -------------------------------------------------------------------------

@functools.cache
def fd_case(name):
    net = load_fixture(name)
    return net, build_sensitivity(net), solve_newton_raphson(net, tol=1e-13)


def fd_error(name, gen, step) -> float:
    """Norm-wise relative error of the linear prediction for one generator step."""
    net, model, base = fd_case(name)
    after = solve_newton_raphson(apply_generator_deltas(net, {gen: step}), tol=1e-13, start=base)
    b0, b1 = base.magnitudes(), after.magnitudes()
    realized = np.array([b1[b] - b0[b] for b in model.partition.load_buses])
    predicted = model.s_gl[:, model.partition.gen_position(gen)] * step
    return float(np.linalg.norm(predicted - realized) / np.linalg.norm(realized))


@settings(max_examples=40, deadline=None, derandomize=True)
@given(data=st.data())
def test_c8_sensitivity_oracle_property(data):
    name = data.draw(st.sampled_from(FD_CASES))
    gen = data.draw(st.sampled_from(fd_case(name)[1].partition.gen_buses))
    step = data.draw(st.sampled_from([1e-4, -1e-4]))
    err = fd_error(name, gen, step)
    assert err <= 0.05, f"{name} G{gen} step {step:+g}: relative error {err:.3f}"


def test_c8_sensitivity_oracle(criterion):
    worst = {name: max(fd_error(name, g, 1e-4) for g in fd_case(name)[1].partition.gen_buses) for name in FD_CASES}
    ok = all(e <= 0.05 for e in worst.values())
    detail = ", ".join(f"{k} {v:.3f}" for k, v in worst.items()) + " worst relative error (tol 0.05)"
    assert criterion(8, "", ok, detail)


# 9 -------------------------------------------------------------------------

def test_c9_eigen_math(criterion):
    rng = np.random.default_rng(20240611)
    worst_pair = worst_ray = worst_sigma = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 21))
        N = random_psd(rng, n, rank=int(rng.integers(1, n + 1)))
        values, vectors = eig_symmetric(N)
        quad = np.einsum("ij,ik,kj->j", vectors, N, vectors)
        worst_pair = max(worst_pair, float(np.max(np.abs(quad - values))))
        x = rng.normal(size=(n, 200))
        x /= np.linalg.norm(x, axis=0)
        worst_ray = max(worst_ray, float(np.max(np.einsum("ij,ik,kj->j", x, N, x)) - values[0]))
        A = rng.normal(size=(n, int(rng.integers(1, 21))))
        sigma, _ = top_left_singular(A)
        reference = np.linalg.svd(A, compute_uv=False)[0]
        worst_sigma = max(worst_sigma, abs(sigma**2 - reference**2) / reference**2)
    ok = worst_pair <= 1e-9 and worst_ray <= 1e-9 and worst_sigma <= 1e-9
    detail = (
        f"max |v'Nv - lambda| {worst_pair:.1e}; max x'Nx - lambda_max {worst_ray:.1e}; "
        f"max rel |sigma1^2 - lambda_max(AA')| {worst_sigma:.1e} (tol 1e-9)"
    )
    assert criterion(9, "", ok, detail)


# 10 ------------------------------------------------------------------------

def test_c10_conflict_operator(criterion):
    failures = []
    for x in (-0.3, 0.0, 0.5):
        for y in (-0.25, 0.0, 0.75):
            got = conflict_merge([x], [y])[0]
            want = 0.0 if x * y < 0 else x + y
            if got != want:
                failures.append((x, y, got))
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = int(rng.integers(1, 12))
        x = rng.normal(size=n) * rng.integers(0, 2, size=n)
        y = rng.normal(size=n) * rng.integers(0, 2, size=n)
        if not np.array_equal(conflict_merge(x, y), conflict_merge(y, x)):
            failures.append(("commutativity", x, y))
        if not np.array_equal(conflict_merge(x, x), 2 * x):
            failures.append(("self", x))
    ok = not failures
    assert criterion(10, "", ok, f"9 sign pairs, 200 random commutativity and self-merge checks; failures {len(failures)}")


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=30))
def test_c10_self_merge_doubles(values):
    x = np.array(values)
    np.testing.assert_array_equal(conflict_merge(x, x), 2 * x)


@given(st.data())
def test_c10_commutative(data):
    n = data.draw(st.integers(1, 30))
    floats = st.floats(-1e6, 1e6, allow_nan=False)
    x = np.array(data.draw(st.lists(floats, min_size=n, max_size=n)))
    y = np.array(data.draw(st.lists(floats, min_size=n, max_size=n)))
    np.testing.assert_array_equal(conflict_merge(x, y), conflict_merge(y, x))
