"""Constrained dose allocation: greedy, exact DP, branch-and-bound, brute force.

The problem: pick exactly one grid dose per entity, maximizing the sum of
benefit-weighted dose effects, subject to a total-cost budget and optional
group-fairness bounds on mean assigned dose and mean estimated outcome gain.
Dose 0 has zero cost and zero effect, so the all-zeros policy is always
feasible and infeasibility can never arise from the budget alone.
"""

from __future__ import annotations

import csv
import heapq
import time
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .estimators import CadeMatrix, load_cade_csv, save_cade_csv
from .lpcore import LpProblem, solve_lp

BUDGET_TOL = 1e-9
FAIRNESS_TOL = 1e-7
INT_TOL = 1e-6


class AllocError(ValueError):
    """Raised for malformed allocation problems or unsupported solver inputs."""


@dataclass(frozen=True)
class AllocationProblem:
    """Dose-effect matrix plus costs, benefits, budget, and fairness slacks.

    ``eps_dt`` bounds the relative gap in mean assigned dose between the two
    groups; ``eps_do`` does the same for mean estimated outcome gain. ``None``
    disables a constraint; a slack >= 1 also disables it unless
    ``strict_eps_one`` keeps the literal inequality pair active.
    """

    cade: CadeMatrix
    costs: np.ndarray
    benefits: np.ndarray
    budget: float
    groups: np.ndarray
    eps_dt: float | None = None
    eps_do: float | None = None
    strict_eps_one: bool = False

    def __post_init__(self):
        costs = np.asarray(self.costs, dtype=float)
        benefits = np.asarray(self.benefits, dtype=float)
        groups = np.asarray(self.groups, dtype=int)
        if costs.shape != self.cade.values.shape:
            raise AllocError("cost matrix must match the dose-effect matrix shape")
        if np.any(costs[:, 0] != 0.0):
            raise AllocError("dose-0 costs must be zero")
        if np.any(costs < 0.0):
            raise AllocError("costs must be nonnegative")
        if benefits.shape != (self.cade.n,):
            raise AllocError("benefit vector must have one entry per entity")
        if groups.shape != (self.cade.n,) or not np.all((groups == 0) | (groups == 1)):
            raise AllocError("groups must be 0/1 with one entry per entity")
        if not np.isfinite(self.budget) or self.budget < 0:
            raise AllocError("budget must be finite and >= 0")
        for eps in (self.eps_dt, self.eps_do):
            if eps is not None and not (0.0 <= eps <= 1.0):
                raise AllocError("fairness slacks must lie in [0, 1] or be None")
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "benefits", benefits)
        object.__setattr__(self, "groups", groups)

    @property
    def n(self) -> int:
        return self.cade.n

    @property
    def delta(self) -> int:
        return self.cade.delta

    def value_matrix(self) -> np.ndarray:
        return self.cade.values * self.benefits[:, None]

    def with_budget(self, budget: float) -> "AllocationProblem":
        return replace(self, budget=budget)

    def active_fairness(self) -> list[tuple[str, float]]:
        """Constraint pairs that actually apply, after slack and group checks."""
        pairs = []
        for kind, eps in (("dose", self.eps_dt), ("outcome", self.eps_do)):
            if eps is None:
                continue
            if eps >= 1.0 and not self.strict_eps_one:
                continue
            pairs.append((kind, float(eps)))
        if pairs:
            n0 = int(np.sum(self.groups == 0))
            n1 = int(np.sum(self.groups == 1))
            if n0 == 0 or n1 == 0:
                warnings.warn(
                    "one protected group is empty; fairness constraints skipped",
                    stacklevel=3,
                )
                return []
        return pairs


def proportional_costs(cade: CadeMatrix) -> np.ndarray:
    """Cost equal to the dose value itself, for every entity."""
    return np.tile(cade.doses, (cade.n, 1))


def make_problem(
    cade: CadeMatrix,
    budget: float,
    groups: np.ndarray,
    costs: np.ndarray | None = None,
    benefits: np.ndarray | None = None,
    eps_dt: float | None = None,
    eps_do: float | None = None,
    strict_eps_one: bool = False,
) -> AllocationProblem:
    if costs is None:
        costs = proportional_costs(cade)
    if benefits is None:
        benefits = np.ones(cade.n)
    return AllocationProblem(
        cade=cade,
        costs=costs,
        benefits=benefits,
        budget=budget,
        groups=groups,
        eps_dt=eps_dt,
        eps_do=eps_do,
        strict_eps_one=strict_eps_one,
    )


@dataclass(frozen=True)
class Policy:
    """Binary assignment matrix: exactly one dose per entity."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.ndim != 2 or not np.all((m == 0) | (m == 1)):
            raise AllocError("policy entries must be binary")
        if not np.all(m.sum(axis=1) == 1):
            raise AllocError("each entity must receive exactly one dose")
        object.__setattr__(self, "matrix", m.astype(np.int8))

    @classmethod
    def from_dose_indices(cls, indices: np.ndarray, n_doses: int) -> "Policy":
        m = np.zeros((len(indices), n_doses), dtype=np.int8)
        m[np.arange(len(indices)), indices] = 1
        return cls(matrix=m)

    @property
    def dose_indices(self) -> np.ndarray:
        return np.argmax(self.matrix, axis=1)

    def doses(self, grid: np.ndarray) -> np.ndarray:
        return grid[self.dose_indices]


@dataclass(frozen=True)
class SolveReport:
    status: str  # optimal | infeasible | heuristic | limit
    objective: float
    policy: Policy | None
    nodes: int
    root_bound: float | None
    best_bound: float | None
    wall_ms: float

    def csv_row(self, costs: np.ndarray | None = None) -> list[str]:
        cost = policy_cost(self.policy, costs) if (self.policy is not None and costs is not None) else float("nan")
        return [
            self.status,
            repr(float(self.objective)),
            repr(float(cost)),
            str(self.nodes),
            "" if self.best_bound is None else repr(float(self.best_bound)),
            repr(float(self.wall_ms)),
        ]


REPORT_CSV_HEADER = ["status", "objective", "cost", "nodes", "bound", "wall_ms"]


def policy_cost(policy: Policy, costs: np.ndarray) -> float:
    """Total cost of the assigned doses."""
    costs = np.asarray(costs, dtype=float)
    if costs.shape != policy.matrix.shape:
        raise AllocError("cost matrix shape does not match the policy")
    return float(np.sum(policy.matrix * costs))


def policy_value(policy: Policy, cade: CadeMatrix, benefits: np.ndarray | None = None) -> float:
    """Benefit-weighted sum of the dose effects picked by the policy."""
    if cade.values.shape != policy.matrix.shape:
        raise AllocError("dose-effect matrix shape does not match the policy")
    if benefits is None:
        benefits = np.ones(cade.n)
    benefits = np.asarray(benefits, dtype=float)
    if benefits.shape != (cade.n,):
        raise AllocError("benefit vector shape does not match the policy")
    per_entity = np.sum(policy.matrix * cade.values, axis=1) * benefits
    return float(per_entity.sum())


def _group_means(policy: Policy, weights: np.ndarray, groups: np.ndarray) -> tuple[float, float]:
    """Per-group means of the policy-selected entries of ``weights``."""
    picked = np.sum(policy.matrix * weights, axis=1)
    m0 = float(picked[groups == 0].mean()) if np.any(groups == 0) else 0.0
    m1 = float(picked[groups == 1].mean()) if np.any(groups == 1) else 0.0
    return m0, m1


def fairness_violation(prob: AllocationProblem, policy: Policy) -> float:
    """Largest violation of the active fairness inequalities (0 when none)."""
    worst = 0.0
    for kind, eps in prob.active_fairness():
        weights = (
            np.tile(prob.cade.doses, (prob.n, 1)) if kind == "dose" else prob.cade.values
        )
        m0, m1 = _group_means(policy, weights, prob.groups)
        worst = max(worst, (1.0 - eps) * m1 - m0, m0 - (1.0 + eps) * m1)
    return worst


def _finish(status, objective, policy, nodes, root_bound, best_bound, t0) -> SolveReport:
    return SolveReport(
        status=status,
        objective=objective,
        policy=policy,
        nodes=nodes,
        root_bound=root_bound,
        best_bound=best_bound,
        wall_ms=(time.perf_counter() - t0) * 1e3,
    )


def solve_greedy(prob: AllocationProblem) -> SolveReport:
    """Rank entities by their best dose effect; assign while budget remains.

    Ignores fairness, so it refuses problems that require it. An entity whose
    best dose has non-positive value keeps dose 0.
    """
    t0 = time.perf_counter()
    if prob.active_fairness():
        raise AllocError("greedy heuristic does not support fairness constraints")
    values = prob.value_matrix()
    best_dose = np.argmax(values, axis=1)  # first max: lowest dose index
    best_val = values[np.arange(prob.n), best_dose]
    best_dose = np.where(best_val > 0.0, best_dose, 0)
    best_val = np.where(best_val > 0.0, best_val, 0.0)

    order = sorted(range(prob.n), key=lambda i: (-best_val[i], i))
    remaining = prob.budget
    assign = np.zeros(prob.n, dtype=int)
    for i in order:
        d = int(best_dose[i])
        if d == 0 or best_val[i] <= 0.0:
            continue
        c = prob.costs[i, d]
        if c <= remaining + BUDGET_TOL:
            assign[i] = d
            remaining -= c
    policy = Policy.from_dose_indices(assign, prob.delta + 1)
    objective = policy_value(policy, prob.cade, prob.benefits)
    return _finish("heuristic", objective, policy, 0, None, None, t0)


def solve_dp(prob: AllocationProblem, cost_resolution: int | None = None) -> SolveReport:
    """Exact multi-choice knapsack DP for budget-only problems.

    Costs must scale to exact integers at the chosen resolution; anything
    else is refused rather than silently rounded.
    """
    t0 = time.perf_counter()
    if prob.active_fairness():
        raise AllocError("DP solver does not support fairness constraints")
    if cost_resolution is None:
        cost_resolution = prob.delta
    if cost_resolution < 1:
        raise AllocError("cost_resolution must be >= 1")
    scaled = prob.costs * cost_resolution
    int_costs = np.rint(scaled).astype(np.int64)
    if np.max(np.abs(scaled - int_costs)) > 1e-9:
        raise AllocError(
            "costs are not integral at this resolution; use solve_bnb instead"
        )
    cap = int(np.floor(prob.budget * cost_resolution + BUDGET_TOL))
    cap = min(cap, int(int_costs.max(axis=1).sum()))  # beyond this, budget is slack
    if (cap + 1) * prob.n > 200_000_000:
        raise AllocError("DP table too large; use solve_bnb or a coarser resolution")

    values = prob.value_matrix()
    dp = np.zeros(cap + 1)
    choice = np.zeros((prob.n, cap + 1), dtype=np.int16)
    for i in range(prob.n):
        cand = dp.copy()
        for d in range(1, prob.delta + 1):
            c = int(int_costs[i, d])
            v = values[i, d]
            if c > cap:
                continue
            if c == 0:
                shifted = dp + v
                better = shifted > cand
                cand[better] = shifted[better]
                choice[i, better] = d
            else:
                shifted = dp[:-c] + v
                seg = cand[c:]
                better = shifted > seg
                seg[better] = shifted[better]
                choice[i, c:][better] = d
        dp = cand

    assign = np.zeros(prob.n, dtype=int)
    w = cap
    for i in range(prob.n - 1, -1, -1):
        d = int(choice[i, w])
        assign[i] = d
        w -= int(int_costs[i, d])
    policy = Policy.from_dose_indices(assign, prob.delta + 1)
    objective = policy_value(policy, prob.cade, prob.benefits)
    return _finish("optimal", objective, policy, 0, None, objective, t0)


def _build_lp(prob: AllocationProblem) -> LpProblem:
    """LP relaxation over the dose>=1 variables; dose 0 is the implicit slack.

    Dose 0 contributes nothing to the objective, the budget, or either
    fairness sum, so eliminating its column turns the one-dose-per-entity
    equalities into <= rows and makes the all-zeros origin feasible, which
    lets the simplex skip its artificial phase entirely.
    """
    n, delta = prob.n, prob.delta
    nv = n * delta
    values = prob.value_matrix()
    obj = values[:, 1:].ravel()

    fair = prob.active_fairness()
    m = n + 1 + 2 * len(fair)
    a = np.zeros((m, nv))
    senses = ["<="] * m
    rhs = np.zeros(m)
    for i in range(n):
        a[i, i * delta:(i + 1) * delta] = 1.0
        rhs[i] = 1.0
    a[n] = prob.costs[:, 1:].ravel()
    rhs[n] = prob.budget

    row = n + 1
    g0 = prob.groups == 0
    g1 = prob.groups == 1
    n0, n1 = int(g0.sum()), int(g1.sum())
    for kind, eps in fair:
        weights = (
            np.tile(prob.cade.doses, (n, 1)) if kind == "dose" else prob.cade.values
        )
        w = weights[:, 1:]
        coef0 = np.where(g0[:, None], w / n0, 0.0).ravel()
        coef1 = np.where(g1[:, None], w / n1, 0.0).ravel()
        # group-0 mean >= (1-eps) * group-1 mean, written as a <= row
        a[row] = (1.0 - eps) * coef1 - coef0
        # group-0 mean <= (1+eps) * group-1 mean
        a[row + 1] = coef0 - (1.0 + eps) * coef1
        row += 2

    return LpProblem(
        objective=obj,
        a_matrix=a,
        senses=senses,
        rhs=rhs,
        lower=np.zeros(nv),
        upper=np.ones(nv),
    )


def _policy_from_lp_x(x: np.ndarray, n: int, delta: int) -> Policy:
    assign = np.zeros(n, dtype=int)
    mat = x.reshape(n, delta)
    for i in range(n):
        d = int(np.argmax(mat[i]))
        if mat[i, d] > 0.5:
            assign[i] = d + 1
    return Policy.from_dose_indices(assign, delta + 1)


def _policy_feasible(prob: AllocationProblem, policy: Policy) -> bool:
    if policy_cost(policy, prob.costs) > prob.budget + BUDGET_TOL:
        return False
    return fairness_violation(prob, policy) <= FAIRNESS_TOL


def solve_bnb(
    prob: AllocationProblem,
    node_limit: int = 1_000_000,
    int_tol: float = INT_TOL,
) -> SolveReport:
    """Exact branch-and-bound over the LP relaxation.

    Best-bound node order, branching on the most fractional variable (fixed
    to 1 versus 0). The incumbent starts from the greedy policy when no
    fairness constraint is active, otherwise from the always-feasible
    all-zeros policy. Exceeding the node limit reports the incumbent with
    its proven bound instead of failing.
    """
    t0 = time.perf_counter()
    n, delta = prob.n, prob.delta
    base = _build_lp(prob)

    if prob.active_fairness():
        incumbent = Policy.from_dose_indices(np.zeros(n, dtype=int), delta + 1)
    else:
        incumbent = solve_greedy(prob).policy
    inc_obj = policy_value(incumbent, prob.cade, prob.benefits)

    seq = 0
    heap: list[tuple[float, int, tuple]] = [(-np.inf, seq, ())]
    nodes = 0
    root_bound = None

    while heap:
        neg_bound, _, fixings = heapq.heappop(heap)
        bound_est = -neg_bound
        if bound_est <= inc_obj + BUDGET_TOL:
            break  # best-bound order: nothing left can improve
        if nodes >= node_limit:
            best_bound = max(bound_est, inc_obj)
            return _finish("limit", inc_obj, incumbent, nodes, root_bound, best_bound, t0)
        nodes += 1

        lower = base.lower.copy()
        upper = base.upper.copy()
        for var, val in fixings:
            lower[var] = val
            upper[var] = val
            if val == 1:  # one dose per entity: siblings drop to zero
                ent = var // delta
                sib = np.arange(ent * delta, (ent + 1) * delta)
                upper[sib] = 0.0
                upper[var] = 1.0
                lower[var] = 1.0
        node_lp = LpProblem(
            objective=base.objective,
            a_matrix=base.a_matrix,
            senses=base.senses,
            rhs=base.rhs,
            lower=lower,
            upper=upper,
        )
        sol = solve_lp(node_lp)
        if sol.status == "infeasible":
            continue
        if sol.status != "optimal":
            raise RuntimeError(f"node LP ended with status {sol.status}")
        if root_bound is None:
            root_bound = sol.objective
        if sol.objective <= inc_obj + BUDGET_TOL:
            continue

        # rounding the LP point often yields a feasible policy; a better
        # incumbent prunes siblings long before the tree closes by itself
        candidate = _policy_from_lp_x(sol.x, n, delta)
        if _policy_feasible(prob, candidate):
            cand_obj = policy_value(candidate, prob.cade, prob.benefits)
            if cand_obj > inc_obj + 1e-12:
                incumbent, inc_obj = candidate, cand_obj

        frac = np.minimum(sol.x - np.floor(sol.x), np.ceil(sol.x) - sol.x)
        frac[upper - lower <= 0] = 0.0
        max_frac = float(frac.max(initial=0.0))
        if max_frac <= int_tol:
            if _policy_feasible(prob, candidate):
                continue  # node solved exactly by its integral LP optimum
            if max_frac <= 1e-12:
                raise RuntimeError("integral LP point fails exact feasibility")
        # most fractional variable; ties resolved toward low dose then entity
        target = frac.max() - 1e-12
        cands = np.nonzero(frac >= target)[0]
        d_idx = cands % delta
        e_idx = cands // delta
        pick = np.lexsort((e_idx, d_idx))[0]
        var = int(cands[pick])
        for val in (1, 0):
            seq += 1
            heapq.heappush(heap, (-sol.objective, seq, fixings + ((var, val),)))

    best_bound = inc_obj
    return _finish("optimal", inc_obj, incumbent, nodes, root_bound, best_bound, t0)


def brute_force(prob: AllocationProblem) -> SolveReport:
    """Exhaustive enumeration oracle for small instances.

    Combinations are scanned in lexicographic order with strict-improvement
    updates, so ties resolve to the lexicographically smallest assignment.
    """
    t0 = time.perf_counter()
    n, delta = prob.n, prob.delta
    n_doses = delta + 1
    combos = n_doses ** n
    if combos > 10_000_000:
        raise AllocError("instance too large for brute force")

    values = prob.value_matrix()
    fair = prob.active_fairness()
    g0 = prob.groups == 0
    g1 = prob.groups == 1
    fair_weights = [
        (np.tile(prob.cade.doses, (n, 1)) if kind == "dose" else prob.cade.values, eps)
        for kind, eps in fair
    ]
    strides = [n_doses ** (n - 1 - i) for i in range(n)]

    best_obj = -np.inf
    best_combo = None
    chunk = 1_000_000
    for start in range(0, combos, chunk):
        idx = np.arange(start, min(start + chunk, combos), dtype=np.int64)
        digits = [(idx // strides[i]) % n_doses for i in range(n)]
        total_value = np.zeros(idx.shape[0])
        total_cost = np.zeros(idx.shape[0])
        for i in range(n):
            total_value += values[i, digits[i]]
            total_cost += prob.costs[i, digits[i]]
        feasible = total_cost <= prob.budget + BUDGET_TOL
        for weights, eps in fair_weights:
            sum0 = np.zeros(idx.shape[0])
            sum1 = np.zeros(idx.shape[0])
            for i in range(n):
                if g0[i]:
                    sum0 += weights[i, digits[i]]
                else:
                    sum1 += weights[i, digits[i]]
            m0 = sum0 / g0.sum()
            m1 = sum1 / g1.sum()
            feasible &= m0 >= (1.0 - eps) * m1 - BUDGET_TOL
            feasible &= m0 <= (1.0 + eps) * m1 + BUDGET_TOL
        if not np.any(feasible):
            continue
        masked = np.where(feasible, total_value, -np.inf)
        k = int(np.argmax(masked))  # first maximum within the chunk
        if masked[k] > best_obj:
            best_obj = float(masked[k])
            best_combo = np.asarray([int(digits[i][k]) for i in range(n)])

    if best_combo is None:
        return _finish("infeasible", float("nan"), None, combos, None, None, t0)
    policy = Policy.from_dose_indices(best_combo, n_doses)
    objective = policy_value(policy, prob.cade, prob.benefits)
    return _finish("optimal", objective, policy, combos, None, objective, t0)


def flattening_budget(prob: AllocationProblem) -> float:
    """Budget beyond which the exact optimum stops improving.

    The cost of giving every entity its best nonnegative-value dose.
    """
    values = prob.value_matrix()
    best_dose = np.argmax(values, axis=1)
    best_val = values[np.arange(prob.n), best_dose]
    best_dose = np.where(best_val > 0.0, best_dose, 0)
    return float(prob.costs[np.arange(prob.n), best_dose].sum())


# ---------------------------------------------------------------------------
# problem files: cade.csv / cost.csv / meta.csv
# ---------------------------------------------------------------------------

def save_problem(prob: AllocationProblem, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_cade_csv(prob.cade, directory / "cade.csv")
    # costs reuse the dose-labeled layout
    with (directory / "cost.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["entity"] + [f"dose_{float(d)!r}" for d in prob.cade.doses])
        for i in range(prob.n):
            writer.writerow([str(i)] + [repr(float(v)) for v in prob.costs[i]])
    with (directory / "meta.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["entity", "benefit", "group", "budget", "eps_dt", "eps_do"])
        eps_dt = "disabled" if prob.eps_dt is None else repr(float(prob.eps_dt))
        eps_do = "disabled" if prob.eps_do is None else repr(float(prob.eps_do))
        for i in range(prob.n):
            writer.writerow(
                [
                    str(i),
                    repr(float(prob.benefits[i])),
                    str(int(prob.groups[i])),
                    repr(float(prob.budget)),
                    eps_dt,
                    eps_do,
                ]
            )


def load_problem(directory: str | Path) -> AllocationProblem:
    directory = Path(directory)
    cade = load_cade_csv(directory / "cade.csv")
    with (directory / "cost.csv").open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        costs = np.asarray([[float(v) for v in row[1:]] for row in reader if row])
    with (directory / "meta.csv").open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["entity", "benefit", "group", "budget", "eps_dt", "eps_do"]:
            raise AllocError(f"{directory}/meta.csv: unexpected header")
        benefits, groups = [], []
        budget = eps_dt = eps_do = None
        for row in reader:
            if not row:
                continue
            benefits.append(float(row[1]))
            groups.append(int(row[2]))
            budget = float(row[3])
            eps_dt = None if row[4] == "disabled" else float(row[4])
            eps_do = None if row[5] == "disabled" else float(row[5])
    if budget is None:
        raise AllocError(f"{directory}/meta.csv: no data rows")
    return AllocationProblem(
        cade=cade,
        costs=costs,
        benefits=np.asarray(benefits),
        budget=budget,
        groups=np.asarray(groups, dtype=int),
        eps_dt=eps_dt,
        eps_do=eps_do,
    )
