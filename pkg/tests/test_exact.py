import json
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from victimtag.domain import ScenarioConfig, generate_instance, make_instance
from victimtag.exact import (
    SizeLimitError,
    SolveTimeout,
    brute_force,
    build_ilp_text,
    build_model,
    makespan,
    route_cost,
    routes_to_x,
    solve_exact,
    validate,
)


@pytest.mark.parametrize(
    "victims, speed, routes, expected",
    [
        ([[10, 0]], 1.0, [[0]], 13.0),
        ([[10, 0]], 1.0, [[]], 0.0),
        ([[4, 0], [4, 6]], 2.0, [[0, 1]], 11.0),
    ],
)
def test_route_cost_examples(victims, speed, routes, expected):
    inst = make_instance(victims, speed=speed, tag_time=3)
    assert route_cost(routes, inst, 0) == pytest.approx(expected)


@given(st.integers(0, 10_000), st.integers(2, 7), st.integers(1, 6))
def test_route_cost_is_additive(seed, m, cut):
    inst = generate_instance(ScenarioConfig(1, m, 30, 20), seed)
    route = list(np.random.default_rng(seed).permutation(m))
    cut = min(cut, m - 1)
    head, tail = route[:cut], route[cut:]
    D, tau = inst.distances, 3.0
    tail_cost = sum(D[a + 1, b] + tau for a, b in zip([head[-1]] + tail[:-1], tail))
    assert route_cost([route], inst, 0) == pytest.approx(route_cost([head], inst, 0) + tail_cost)


def test_validate_feasible_chain():
    inst = make_instance([[1, 0], [2, 0]])
    assert validate(routes_to_x([[0, 1]], 2), inst).feasible


def test_validate_double_entry():
    inst = make_instance([[1, 0], [2, 0], [3, 0]], n=2)
    x = routes_to_x([[0, 2], [1, 2]], 3)
    rep = validate(x, inst)
    assert "6" in rep.equations


def test_validate_two_cycle():
    inst = make_instance([[1, 0], [2, 0], [3, 0]])
    x = np.zeros((1, 4, 3), dtype=np.int8)
    x[0, 0, 2] = 1
    x[0, 1, 1] = 1  # v1 -> v2
    x[0, 2, 0] = 1  # v2 -> v1
    assert "12" in validate(x, inst).equations
    # any explicit order assignment must also fail
    u = np.array([[0, 1, 2, 1]])
    assert "12" in validate(x, inst, u).equations


def test_validate_flags_leaving_others_victim():
    inst = make_instance([[1, 0], [2, 0]], n=2)
    x = np.zeros((2, 3, 2), dtype=np.int8)
    x[0, 0, 0] = 1  # r1 tags v1
    x[1, 1, 1] = 1  # r2 leaves v1 for v2
    assert "9" in validate(x, inst).equations


def test_validate_flags_fork_from_start():
    # two responders keep the total departure count legal
    inst = make_instance([[1, 0], [2, 0]], n=2)
    x = np.zeros((2, 3, 2), dtype=np.int8)
    x[0, 0, 0] = x[0, 0, 1] = 1
    rep = validate(x, inst)
    assert rep.equations == {"path"}
    assert validate(x, inst, paths=False).feasible


def test_validate_rejects_bad_orders():
    inst = make_instance([[1, 0], [2, 0]])
    x = routes_to_x([[0, 1]], 2)
    assert validate(x, inst, np.array([[0, 1, 2]])).feasible
    assert "10" in validate(x, inst, np.array([[1, 1, 2]])).equations
    assert "11" in validate(x, inst, np.array([[0, 0, 2]])).equations
    with pytest.raises(ValueError):
        validate(np.zeros((2, 3, 2)), inst)


def test_solve_trivial_single_assignment():
    assert solve_exact(make_instance([[5, 0]])).makespan == pytest.approx(8.0)


def test_solve_symmetric_split():
    sol = solve_exact(make_instance([[5, 0], [-5, 0]], n=2, start=(0, 0)))
    assert sol.makespan == pytest.approx(8.0)
    assert sorted(len(r) for r in sol.routes) == [1, 1]


def test_solve_matches_brute_force_seed7():
    inst = generate_instance(ScenarioConfig(2, 4), 7)
    a, b = solve_exact(inst), brute_force(inst)
    assert a.makespan == b.makespan and a.routes == b.routes


@given(st.integers(0, 2**31), st.integers(1, 3), st.integers(2, 6))
def test_solution_is_feasible_and_consistent(seed, n, m):
    inst = generate_instance(ScenarioConfig(n, m, 30, 20), seed)
    sol = solve_exact(inst)
    assert validate(sol.x, inst).feasible
    assert validate(sol.x, inst, sol.u).feasible
    assert sol.makespan == pytest.approx(makespan(sol.routes, inst))
    assert sol.makespan == pytest.approx(max(sol.completion))


def test_tie_break_prefers_lexicographically_smallest():
    # two identical responders and mirror-image victims: many optimal labellings exist
    inst = make_instance([[3, 0], [0, 3]], n=2, start=(0, 0))
    sol = solve_exact(inst)
    flats = []
    for r0 in ([0], [1]):
        r1 = [1] if r0 == [0] else [0]
        flats.append(routes_to_x([r0, r1], 2).tobytes())
    assert sol.x.tobytes() == min(flats)


def test_size_guard():
    with pytest.raises(SizeLimitError):
        solve_exact(generate_instance(ScenarioConfig(2, 10), 0))


def test_time_limit_carries_incumbent():
    inst = generate_instance(ScenarioConfig(4, 9, 100, 60), 3)
    with pytest.raises(SolveTimeout) as info:
        solve_exact(inst, time_limit=0.0)
    inc = info.value.incumbent
    assert inc is not None and validate(inc.x, inst).feasible


def test_solution_json(tmp_path):
    sol = solve_exact(generate_instance(ScenarioConfig(2, 3, 20, 20), 1))
    doc = json.loads(sol.to_json(tmp_path / "s.json"))
    assert doc["routes"] == sol.routes and doc["makespan"] == sol.makespan


def test_m9_solves_quickly():
    t = time.perf_counter()
    solve_exact(generate_instance(ScenarioConfig(3, 9), 1))
    assert time.perf_counter() - t < 10


class TestLPExport:
    def test_counts_single(self):
        model = build_model(make_instance([[1, 1]]))
        assert (model.n_binary, model.n_general, model.n_continuous) == (2, 2, 1)
        text = build_ilp_text(make_instance([[1, 1]]))
        for fam in ("eq5", "eq6_", "eq7_", "eq8_", "eq9_", "eq10_", "eq12_"):
            assert f" {fam}" in text

    def test_binary_count_n2_m3(self):
        text = build_ilp_text(make_instance([[1, 1], [2, 2], [3, 1]], n=2))
        binaries = text.split("Binary\n")[1].split("General\n")[0].split()
        assert len(binaries) == 24

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            build_ilp_text(make_instance(np.zeros((0, 2))))

    @pytest.mark.parametrize("n, m", [(1, 3), (2, 3), (3, 4), (2, 5)])
    def test_milp_agrees_with_branch_and_bound(self, n, m):
        scipy_opt = pytest.importorskip("scipy.optimize")
        from scipy.sparse import lil_matrix

        inst = generate_instance(ScenarioConfig(n, m, 20, 20), n * 10 + m)
        model = build_model(inst)
        A = lil_matrix((len(model.rows), len(model.names)))
        lo, hi = [], []
        for r, (_, coeffs, l, h) in enumerate(model.rows):
            for k, v in coeffs.items():
                A[r, k] = v
            lo.append(l)
            hi.append(h)
        res = scipy_opt.milp(
            model.cost,
            constraints=scipy_opt.LinearConstraint(A.tocsr(), lo, hi),
            integrality=model.integer.astype(int),
            bounds=scipy_opt.Bounds(model.lower, model.upper),
        )
        assert res.status == 0
        assert res.fun == pytest.approx(solve_exact(inst).makespan, rel=1e-6)
        x = np.round(res.x[: n * (m + 1) * m]).astype(np.int8).reshape(n, m + 1, m)
        assert validate(x, inst).feasible
