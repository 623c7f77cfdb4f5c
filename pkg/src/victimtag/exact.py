"""Min-max routing model: route costs, constraint validation, exact solving and LP export.

Routes are per-responder ordered victim lists. The binary route tensor ``x``
has shape (n, m+1, m); ``x[i, j, k] = 1`` when responder i moves from node j
to victim k, where node 0 is the start and node j >= 1 is victim j-1.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .domain import Instance

TIE_EPS = 1e-9


class SizeLimitError(ValueError):
    pass


class SolveTimeout(RuntimeError):
    def __init__(self, message, incumbent: Optional["ExactSolution"]):
        super().__init__(message)
        self.incumbent = incumbent


def routes_to_x(routes: Sequence[Sequence[int]], m: int) -> np.ndarray:
    x = np.zeros((len(routes), m + 1, m), dtype=np.int8)
    for i, route in enumerate(routes):
        prev = 0
        for k in route:
            x[i, prev, k] = 1
            prev = k + 1
    return x


def x_to_routes(x: np.ndarray) -> list[list[int]]:
    """Follow each responder's arcs from the start; raises on branching or cycles."""
    n, _, m = x.shape
    routes = []
    for i in range(n):
        route, node, seen = [], 0, set()
        while True:
            nxt = np.flatnonzero(x[i, node])
            if len(nxt) == 0:
                break
            if len(nxt) > 1:
                raise ValueError(f"responder {i} branches at node {node}")
            k = int(nxt[0])
            if k in seen:
                raise ValueError(f"responder {i} revisits victim {k}")
            seen.add(k)
            route.append(k)
            node = k + 1
        routes.append(route)
    return routes


def mtz_orders(routes: Sequence[Sequence[int]], m: int) -> np.ndarray:
    """Order values u[i, j]: 0 at the start, route position for visited victims, 1 elsewhere."""
    u = np.ones((len(routes), m + 1), dtype=np.int64)
    u[:, 0] = 0
    for i, route in enumerate(routes):
        for pos, k in enumerate(route, start=1):
            u[i, k + 1] = pos
    return u


def route_cost(routes, instance: Instance, i: int) -> float:
    """Travel plus tag time along responder i's route (inner sum of the min-max objective)."""
    if isinstance(routes, np.ndarray):
        routes = x_to_routes(routes)
    route = routes[i]
    D = instance.distances
    speed = float(instance.speed[i])
    tau = float(instance.tag_time[i])
    total = 0.0
    prev = 0
    for k in route:
        total += D[prev, k] / speed + tau
        prev = k + 1
    return total


def makespan(routes, instance: Instance) -> float:
    if isinstance(routes, np.ndarray):
        routes = x_to_routes(routes)
    if not routes:
        return 0.0
    return max(route_cost(routes, instance, i) for i in range(len(routes)))


@dataclass
class Violation:
    equation: str
    detail: str


@dataclass
class FeasibilityReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def equations(self) -> set[str]:
        return {v.equation for v in self.violations}

    def add(self, equation, detail):
        self.violations.append(Violation(str(equation), detail))


def _derive_orders(xi: np.ndarray, m: int) -> Optional[np.ndarray]:
    """Smallest MTZ orders for one responder's arc set, or None when it has a cycle."""
    indeg = xi[:, :].sum(axis=0)  # into victims
    u = np.ones(m + 1, dtype=np.int64)
    u[0] = 0
    # Kahn's algorithm over victim nodes 1..m; arcs out of the start only set lower bounds
    for k in np.flatnonzero(xi[0]):
        u[k + 1] = max(u[k + 1], 1)
    remaining = {k for k in range(m)}
    incoming = {k: int(indeg[k] - xi[0, k]) for k in range(m)}
    ready = [k for k in range(m) if incoming[k] == 0]
    while ready:
        k = ready.pop()
        remaining.discard(k)
        for b in np.flatnonzero(xi[k + 1]):
            b = int(b)
            u[b + 1] = max(u[b + 1], u[k + 1] + 1)
            incoming[b] -= 1
            if incoming[b] == 0:
                ready.append(b)
    if remaining:
        return None
    return u


def validate(x: np.ndarray, instance: Instance, u: Optional[np.ndarray] = None, paths: bool = True) -> FeasibilityReport:
    """Check a route tensor against every model constraint.

    Violations are reported per equation label ("5" .. "14"); ``paths`` adds the
    per-responder single-departure check labelled "path".
    """
    report = FeasibilityReport()
    n, m = instance.n, instance.m
    x = np.asarray(x)
    if x.shape != (n, m + 1, m):
        raise ValueError(f"route tensor shape {x.shape} does not match ({n}, {m + 1}, {m})")
    if not np.isin(x, (0, 1)).all():
        report.add(13, "non-binary route entries")
    xi = x.astype(np.int64)
    if xi[:, 0, :].sum() > n:
        report.add(5, "more than n departures from the start")
    entered = xi.sum(axis=(0, 1))
    for k in np.flatnonzero(entered != 1):
        report.add(6, f"victim {k} entered {entered[k]} times")
    left = xi[:, 1:, :].sum(axis=(0, 2))
    for j in np.flatnonzero(left > 1):
        report.add(7, f"victim {j} left {left[j]} times")
    per_resp = xi.sum(axis=(1, 2))
    for i in np.flatnonzero(per_resp > m):
        report.add(8, f"responder {i} tags more than m victims")
    leaves = xi[:, 1:, :].sum(axis=2)  # (n, m): responder a leaves victim k
    total_leaves = leaves.sum(axis=0)
    for i in range(n):
        enters = xi[i].sum(axis=0)
        others = total_leaves - leaves[i]
        for k in np.flatnonzero(enters + others > 1):
            report.add(9, f"victim {k} entered by responder {i} but left by another")
    if paths:
        for i in np.flatnonzero(xi[:, 0, :].sum(axis=1) > 1):
            report.add("path", f"responder {i} leaves the start more than once")
    if u is None:
        for i in range(n):
            if np.trace(xi[i, 1:, :]) > 0:
                report.add(12, f"responder {i} has a self-loop")
                continue
            if _derive_orders(xi[i], m) is None:
                report.add(12, f"responder {i} route contains a cycle")
        return report
    u = np.asarray(u)
    if u.shape != (n, m + 1):
        raise ValueError(f"order array shape {u.shape} does not match ({n}, {m + 1})")
    if np.any(u[:, 0] != 0):
        report.add(10, "start order must be 0")
    if np.any((u[:, 1:] < 1) | (u[:, 1:] > m)):
        report.add(11, "victim orders outside [1, m]")
    lhs = u[:, :, None] - u[:, None, 1:] + 1
    rhs = m * (1 - xi)
    for i, j, k in zip(*np.nonzero(lhs > rhs)):
        report.add(12, f"order constraint fails on arc ({i}, {j}, {k})")
    if np.any((u < 0) | (u > m)) or not np.all(np.equal(np.mod(u, 1), 0)):
        report.add(14, "orders must be integers in [0, m]")
    return report


@dataclass
class ExactSolution:
    routes: list[list[int]]
    makespan: float
    completion: list[float]
    m: int
    nodes: int = 0

    @property
    def x(self) -> np.ndarray:
        return routes_to_x(self.routes, self.m)

    @property
    def u(self) -> np.ndarray:
        return mtz_orders(self.routes, self.m)

    def to_dict(self) -> dict:
        return {"routes": self.routes, "makespan": self.makespan, "completion": self.completion}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text


def _encoding(routes: Sequence[Sequence[int]], m: int) -> bytes:
    return routes_to_x(routes, m).tobytes()


def _canonical(routes: list[list[int]], instance: Instance, m: int) -> list[list[int]]:
    """Lexicographically smallest relabelling among interchangeable responders."""
    groups: dict[tuple, list[int]] = {}
    for i in range(instance.n):
        groups.setdefault((float(instance.speed[i]), int(instance.tag_time[i])), []).append(i)
    out = [list(r) for r in routes]
    for members in groups.values():
        blocks = sorted((routes_to_x([routes[i]], m).tobytes(), routes[i]) for i in members)
        for i, (_, r) in zip(members, blocks):
            out[i] = list(r)
    return out


def _better(cost, enc, best_cost, best_enc) -> bool:
    if best_enc is None or cost < best_cost - TIE_EPS:
        return True
    return abs(cost - best_cost) <= TIE_EPS and enc < best_enc


def _solution(routes, instance, nodes=0) -> ExactSolution:
    completion = [route_cost(routes, instance, i) for i in range(instance.n)]
    return ExactSolution([list(r) for r in routes], max(completion) if completion else 0.0, completion, instance.m, nodes)


def brute_force(instance: Instance) -> ExactSolution:
    """Enumerate every ordered split of the victims into n sequences.

    Independent oracle for :func:`solve_exact`; exponential, only for tiny m.
    """
    n, m = instance.n, instance.m
    cost_cache: dict[tuple[int, tuple[int, ...]], float] = {}

    def cost(i, route):
        key = (i, route)
        if key not in cost_cache:
            routes = [[] for _ in range(n)]
            routes[i] = list(route)
            cost_cache[key] = route_cost(routes, instance, i)
        return cost_cache[key]

    best_cost, best_enc, best_routes = math.inf, None, None
    for assignment in itertools.product(range(n), repeat=m):
        members = [[k for k in range(m) if assignment[k] == i] for i in range(n)]
        for orders in itertools.product(*(itertools.permutations(s) for s in members)):
            c = max(cost(i, orders[i]) for i in range(n)) if m else 0.0
            if c > best_cost + TIE_EPS:
                continue
            routes = [list(o) for o in orders]
            enc = _encoding(routes, m)
            if _better(c, enc, best_cost, best_enc):
                best_cost, best_enc, best_routes = c, enc, routes
    return _solution(best_routes, instance)


def solve_exact(instance: Instance, max_victims: int = 9, time_limit: Optional[float] = None) -> ExactSolution:
    """Provably optimal min-max routes by depth-first branch and bound.

    Victims are inserted in index order into any position of any responder's
    route, so each solution is generated once. With a metric distance an
    insertion never shortens a route, hence the current maximum route cost and
    an averaged remaining-work bound are valid lower bounds. Ties on makespan
    resolve to the lexicographically smallest flattened route tensor.
    """
    n, m = instance.n, instance.m
    if m > max_victims:
        raise SizeLimitError(f"{m} victims exceeds the exact-solver guard of {max_victims}")
    if m == 0:
        return _solution([[] for _ in range(n)], instance)
    D = instance.distances
    speed = instance.speed.astype(float)
    tau = instance.tag_time.astype(float)
    tau_min = float(tau.min())
    deadline = None if time_limit is None else time.monotonic() + time_limit

    def leg(i, a, k):
        # a is a node index (0 = start), k a victim index
        return D[a, k] / speed[i] + tau[i]

    def full_cost(i, route):
        c, prev = 0.0, 0
        for k in route:
            c += leg(i, prev, k)
            prev = k + 1
        return c

    # seed the incumbent with cheapest insertion
    routes = [[] for _ in range(n)]
    for k in range(m):
        options = []
        for i in range(n):
            for p in range(len(routes[i]) + 1):
                cand = routes[i][:p] + [k] + routes[i][p:]
                c = max(full_cost(a, cand if a == i else routes[a]) for a in range(n))
                options.append((c, i, p))
        _, i, p = min(options)
        routes[i].insert(p, k)
    inc_routes = _canonical(routes, instance, m)
    best = {
        "cost": max(route_cost(inc_routes, instance, i) for i in range(n)),
        "enc": _encoding(inc_routes, m),
        "routes": inc_routes,
    }
    nodes = 0
    costs = [0.0] * n
    routes = [[] for _ in range(n)]

    def search(k):
        nonlocal nodes
        nodes += 1
        if deadline is not None and nodes % 1024 == 1 and time.monotonic() > deadline:
            raise SolveTimeout("exact solve exceeded its time limit", _solution(best["routes"], instance, nodes))
        if k == m:
            exact_costs = [route_cost(routes, instance, i) for i in range(n)]
            c = max(exact_costs)
            canon = _canonical(routes, instance, m)
            enc = _encoding(canon, m)
            if _better(c, enc, best["cost"], best["enc"]):
                best.update(cost=c, enc=enc, routes=canon)
            return
        for i in range(n):
            route = routes[i]
            old = costs[i]
            for p in range(len(route) + 1):
                a = 0 if p == 0 else route[p - 1] + 1
                if p < len(route):
                    b = route[p]
                    delta = leg(i, a, k) + D[k + 1, b] / speed[i] - D[a, b] / speed[i]
                else:
                    delta = leg(i, a, k)
                new = old + delta
                bound = max(new, max(costs[:i] + costs[i + 1:], default=0.0))
                work = sum(costs) + delta + (m - k - 1) * tau_min
                bound = max(bound, work / n)
                if bound > best["cost"] + TIE_EPS:
                    continue
                route.insert(p, k)
                costs[i] = new
                search(k + 1)
                route.pop(p)
                costs[i] = old

    search(0)
    return _solution(best["routes"], instance, nodes)


# LP model ---------------------------------------------------------------


@dataclass
class LinearModel:
    """Mixed-integer model in row form: lo <= A x <= hi."""

    names: list[str]
    cost: np.ndarray
    rows: list[tuple[str, dict[int, float], float, float]]
    lower: np.ndarray
    upper: np.ndarray
    integer: np.ndarray  # 1 binary/general, 0 continuous
    binary: np.ndarray

    @property
    def n_binary(self) -> int:
        return int(self.binary.sum())

    @property
    def n_general(self) -> int:
        return int((self.integer & ~self.binary).sum())

    @property
    def n_continuous(self) -> int:
        return int((~self.integer).sum())

    def family_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for name, *_ in self.rows:
            fam = name.split("_")[0]
            counts[fam] = counts.get(fam, 0) + 1
        return counts


def build_model(instance: Instance, paths: bool = True) -> LinearModel:
    """Min-max model with auxiliary makespan T >= every responder's route cost."""
    n, m = instance.n, instance.m
    if m < 1:
        raise ValueError("the routing model needs at least one victim")
    D = instance.distances
    names: list[str] = []
    index: dict[tuple, int] = {}

    def add(key, name):
        index[key] = len(names)
        names.append(name)

    for i in range(n):
        for j in range(m + 1):
            for k in range(m):
                add(("x", i, j, k), f"x_{i + 1}_{j}_{k + 1}")
    for i in range(n):
        for j in range(m + 1):
            add(("u", i, j), f"u_{i + 1}_{j}")
    add(("T",), "T")
    nv = len(names)
    X = lambda i, j, k: index[("x", i, j, k)]  # noqa: E731
    U = lambda i, j: index[("u", i, j)]  # noqa: E731
    T = index[("T",)]
    inf = math.inf
    rows = []
    for i in range(n):
        coeffs = {X(i, j, k): D[j, k] / instance.speed[i] + instance.tag_time[i] for j in range(m + 1) for k in range(m)}
        coeffs[T] = -1.0
        rows.append((f"cost_{i + 1}", coeffs, -inf, 0.0))
    rows.append(("eq5", {X(i, 0, k): 1.0 for i in range(n) for k in range(m)}, -inf, float(n)))
    for k in range(m):
        rows.append((f"eq6_{k + 1}", {X(i, j, k): 1.0 for i in range(n) for j in range(m + 1)}, 1.0, 1.0))
    for j in range(1, m + 1):
        rows.append((f"eq7_{j}", {X(i, j, k): 1.0 for i in range(n) for k in range(m)}, -inf, 1.0))
    for i in range(n):
        rows.append((f"eq8_{i + 1}", {X(i, j, k): 1.0 for j in range(m + 1) for k in range(m)}, -inf, float(m)))
    for i in range(n):
        for k in range(m):
            coeffs = {X(i, j, k): 1.0 for j in range(m + 1)}
            for a in range(n):
                if a != i:
                    for b in range(m):
                        coeffs[X(a, k + 1, b)] = coeffs.get(X(a, k + 1, b), 0.0) + 1.0
            rows.append((f"eq9_{i + 1}_{k + 1}", coeffs, -inf, 1.0))
    for i in range(n):
        rows.append((f"eq10_{i + 1}", {U(i, 0): 1.0}, 0.0, 0.0))
    for i in range(n):
        for j in range(m + 1):
            for k in range(m):
                coeffs = {U(i, j): 1.0, X(i, j, k): float(m)}
                coeffs[U(i, k + 1)] = coeffs.get(U(i, k + 1), 0.0) - 1.0
                rows.append((f"eq12_{i + 1}_{j}_{k + 1}", coeffs, -inf, float(m - 1)))
    if paths:
        for i in range(n):
            rows.append((f"path_{i + 1}", {X(i, 0, k): 1.0 for k in range(m)}, -inf, 1.0))
    lower = np.zeros(nv)
    upper = np.ones(nv)
    integer = np.ones(nv, dtype=bool)
    binary = np.zeros(nv, dtype=bool)
    for i in range(n):
        for j in range(m + 1):
            for k in range(m):
                binary[X(i, j, k)] = True
        upper[U(i, 0)] = m
        for j in range(1, m + 1):
            lower[U(i, j)] = 1
            upper[U(i, j)] = m
    upper[T] = inf
    integer[T] = False
    cost = np.zeros(nv)
    cost[T] = 1.0
    return LinearModel(names, cost, rows, lower, upper, integer, binary)


def _fmt(v: float) -> str:
    return repr(float(v))


def _expr(coeffs: dict[int, float], names: list[str]) -> str:
    parts = []
    for idx, c in coeffs.items():
        if c == 0:
            continue
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        term = names[idx] if mag == 1 else f"{_fmt(mag)} {names[idx]}"
        parts.append(f"{sign} {term}")
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else text


def build_ilp_text(instance: Instance, paths: bool = True) -> str:
    """Render the model in CPLEX LP format."""
    model = build_model(instance, paths)
    names = model.names
    out = [
        f"\\ min-max victim tagging: n={instance.n} m={instance.m}",
        "Minimize",
        " obj: T",
        "Subject To",
    ]
    for name, coeffs, lo, hi in model.rows:
        expr = _expr(coeffs, names)
        if lo == hi:
            out.append(f" {name}: {expr} = {_fmt(hi)}")
        elif math.isinf(lo):
            out.append(f" {name}: {expr} <= {_fmt(hi)}")
        else:
            out.append(f" {name}: {expr} >= {_fmt(lo)}")
    out.append("Bounds")
    for idx, nm in enumerate(names):
        if model.binary[idx]:
            continue
        if math.isinf(model.upper[idx]):
            out.append(f" {nm} >= {_fmt(model.lower[idx])}")
        else:
            out.append(f" {_fmt(model.lower[idx])} <= {nm} <= {_fmt(model.upper[idx])}")
    out.append("Binary")
    out.extend(f" {nm}" for idx, nm in enumerate(names) if model.binary[idx])
    out.append("General")
    out.extend(f" {nm}" for idx, nm in enumerate(names) if model.integer[idx] and not model.binary[idx])
    out.append("End")
    return "\n".join(out) + "\n"
