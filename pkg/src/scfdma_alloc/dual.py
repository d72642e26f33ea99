"""Canonical dual solver for the unified assignment form.

The binary program is relaxed through one dual variable per sub-channel cover
constraint (``cover_dual``), one per agent's single-choice constraint
(``choice_dual``) and one per option enforcing binarity (``binary_dual``).
On the open cone where all three are positive the dual function is concave,
and a stationary point there recovers the exact binary optimum with zero
duality gap.  The solver runs nested sub-gradient loops (binarity duals
innermost, then choice, then cover) and certifies a run only when the
converged point sits inside the cone and the recovered indicator rounds to a
feasible assignment.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .assignment import Allocation, AssignmentInstance


class DualDomainError(ValueError):
    """Dual quantities are undefined when a binarity dual is exactly zero."""


@dataclass(frozen=True)
class DualPoint:
    """One point of the dual space: cover (N,), choice (K,), binary (n_options,)."""

    cover_dual: np.ndarray
    choice_dual: np.ndarray
    binary_dual: np.ndarray

    @property
    def in_positive_cone(self) -> bool:
        return bool(
            np.all(self.cover_dual > 0)
            and np.all(self.choice_dual > 0)
            and np.all(self.binary_dual > 0)
        )

    def copy(self) -> "DualPoint":
        return DualPoint(
            cover_dual=self.cover_dual.copy(),
            choice_dual=self.choice_dual.copy(),
            binary_dual=self.binary_dual.copy(),
        )


@dataclass(frozen=True)
class SolverConfig:
    """Step sizes, tolerances and modes of the nested sub-gradient scheme.

    ``step_schedule`` picks how the per-loop step sizes are formed:

    * ``auto`` (default): each loop lands on the stationary target of its own
      sub-problem (separable for the binarity duals, linear for the choice
      and cover duals, whose shared system is solved once per round).
      Robust on realistic instances.
    * ``constant``: the literal fixed steps below.  Convergent only when the
      steps happen to suit the instance's scale; kept for strict fidelity.
    * ``diminishing``: fixed steps shrunk by 1/sqrt(iteration) inside each loop.
    """

    step_binary: float = 0.01
    step_choice: float = 0.01
    step_cover: float = 0.01
    tol: float = 1e-6
    projection_offset: float = 1e-3
    init_value: float = 1.0
    max_inner: int = 10_000
    max_outer: int = 1_000
    rho_projection: str = "sign_flip"
    step_schedule: str = "auto"
    round_tol: float = 0.1
    repair: bool = True
    ratio_bound: float = 0.05

    def __post_init__(self) -> None:
        if self.rho_projection not in ("sign_flip", "positive"):
            raise ValueError("rho_projection must be 'sign_flip' or 'positive'")
        if self.step_schedule not in ("auto", "constant", "diminishing"):
            raise ValueError("step_schedule must be 'auto', 'constant' or 'diminishing'")
        if not 0 < self.round_tol < 0.5:
            raise ValueError("round_tol must be in (0, 0.5)")
        if not 0 < self.projection_offset < 1:
            raise ValueError("projection_offset must be in (0, 1)")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


def _check_binary_dual(binary_dual: np.ndarray) -> None:
    if (np.asarray(binary_dual) == 0).any():
        raise DualDomainError("binary duals must be non-zero")


def dual_value(a: AssignmentInstance, d: DualPoint) -> float:
    """Value of the canonical dual function at ``d``.

    -1/4 * sum((u + rho - slack_terms)^2 / rho) minus the sums of the cover
    and choice duals, with u the option utilities (-weights).
    """
    _check_binary_dual(d.binary_dual)
    u = -a.weights
    slack = u + d.binary_dual - d.choice_dual[a.agent_of] - a.footprint_matrix.T @ d.cover_dual
    quad = -0.25 * float(np.sum(slack * slack / d.binary_dual))
    return quad - float(np.sum(d.cover_dual)) - float(np.sum(d.choice_dual))


def dual_gradient(a: AssignmentInstance, d: DualPoint) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact partial derivatives of ``dual_value`` w.r.t. (cover, choice, binary).

    The cover and choice components equal the half-residual sums of the
    recovered fractional indicator; the binary component is
    ((slack/rho)^2 - 1) / 4.  Its zero set |slack| = |rho| is what the
    stationarity condition prescribes.
    """
    _check_binary_dual(d.binary_dual)
    u = -a.weights
    g_cover, g_choice, g_binary = _raw_gradients(
        u, a.footprint_matrix, a.footprint_matrix.T, a.agent_of, a.n_agents,
        d.cover_dual, d.choice_dual, d.binary_dual,
    )
    return g_cover, g_choice, g_binary


def _raw_gradients(u, mat, mat_t, agent_of, n_agents, cover, choice, binary):
    slack0 = u - choice[agent_of] - mat_t @ cover
    frac = (slack0 + binary) / (2.0 * binary)
    g_cover = mat @ frac - 1.0
    g_choice = np.bincount(agent_of, weights=frac, minlength=n_agents) - 1.0
    ratio = slack0 / binary
    g_binary = 0.25 * (ratio * ratio - 1.0)
    return g_cover, g_choice, g_binary


def recover_indicator(a: AssignmentInstance, d: DualPoint) -> np.ndarray:
    """Fractional indicator (u + rho - choice - cover_terms) / (2 rho) per option."""
    _check_binary_dual(d.binary_dual)
    u = -a.weights
    slack = u + d.binary_dual - d.choice_dual[a.agent_of] - a.footprint_matrix.T @ d.cover_dual
    return slack / (2.0 * d.binary_dual)


def xi_value(a: AssignmentInstance, selection: np.ndarray, d: DualPoint) -> float:
    """Total complementarity function at an indicator vector and a dual point.

    Equals both the primal value and the dual value at a certified pair.
    """
    u = -a.weights
    x = np.asarray(selection, dtype=float)
    lin = d.choice_dual[a.agent_of] - d.binary_dual - u + a.footprint_matrix.T @ d.cover_dual
    total = float(np.sum(d.binary_dual * x * x + lin * x))
    return total - float(np.sum(d.cover_dual)) - float(np.sum(d.choice_dual))


def project_rho(previous: np.ndarray, proposed: np.ndarray, offset: float) -> np.ndarray:
    """Boundary guard for the binarity duals.

    Exact-zero proposals step off zero along the previous iterate's sign.
    Nonzero proposals keep their own sign but their magnitude is floored at
    the offset; without the floor a degenerate tie drives some dual to the
    cone boundary and the quadratic curvature ``1/(2 rho)`` overflows.
    """
    bumped = np.where(proposed == 0.0, previous + np.sign(previous) * offset, proposed)
    floored = np.where(np.abs(bumped) < offset, np.sign(bumped) * offset, bumped)
    return np.where(floored == 0.0, offset, floored)


def project_rho_positive(proposed: np.ndarray, floor: float) -> np.ndarray:
    """Positivity guard: proposals below a small floor are lifted onto it."""
    if floor <= 0:
        raise ValueError("floor must be positive")
    return np.where(proposed < floor, floor, proposed)


@dataclass(frozen=True)
class GapReport:
    """Diagnostic of how far a dual point is from certifying its allocation.

    ``theta`` is -1/0/+1 per option: 0 where the reported selection matches
    the branch implied by the recovered indicator, ``implied - selected``
    where they disagree.  ``modified_utilities`` is the utility vector
    u - 2*theta*rho; at the same dual point the recovered indicator of the
    modified problem is ``frac - theta``, which lands on the reported
    selection, so the perturbed problem is solved exactly.  ``max_ratio``
    is the largest 2|rho|/|u| over all options, with a small floor standing
    in for zero utilities; small values certify that every possible utility
    perturbation is relatively tiny, hence a near-optimal point.  A zero
    utility (the empty pattern) makes the floor bind, so the flag is
    deliberately conservative.
    """

    theta: np.ndarray
    modified_utilities: np.ndarray
    implied_selection: np.ndarray
    max_ratio: float
    near_optimal: bool


def diagnose_gap(
    a: AssignmentInstance,
    d: DualPoint,
    selection: np.ndarray | None = None,
    ratio_bound: float = 0.05,
) -> GapReport:
    """Build the perturbation certificate for a converged dual point.

    ``selection`` is the reported 0/1 option vector (defaults to the branch
    implied by the recovered indicator, which yields all-zero theta).
    """
    u = -a.weights
    frac = recover_indicator(a, d)
    implied = (frac >= 0.5).astype(np.int8)
    if selection is None:
        selection = implied
    sel = np.asarray(selection).astype(np.int8)
    theta = (implied - sel).astype(np.int8)
    modified = u - 2.0 * theta * d.binary_dual
    floor = 1e-9 * max(1.0, float(np.max(np.abs(u))))
    max_ratio = float(
        np.max(2.0 * np.abs(d.binary_dual) / np.maximum(np.abs(u), floor))
    )
    return GapReport(
        theta=theta,
        modified_utilities=modified,
        implied_selection=implied,
        max_ratio=max_ratio,
        near_optimal=bool(max_ratio <= ratio_bound),
    )


def modified_instance(a: AssignmentInstance, report: GapReport) -> AssignmentInstance:
    """Assignment instance whose utilities are the diagnostic's perturbed ones."""
    return a.with_weights(-report.modified_utilities)


@dataclass
class SolveReport:
    """Full outcome of one dual solve; see ``certified`` for the guarantee flag."""

    dual_point: DualPoint
    fractional: np.ndarray
    allocation: Allocation | None
    primal_value: float | None
    dual_value: float
    duality_gap: float | None
    in_positive_cone: bool
    binary_recovery: bool
    recovery_feasible: bool
    repaired: bool
    truncated: bool
    iterations: tuple[int, int, int]
    outer_iterations: int
    gap_report: GapReport | None
    violations: list[str] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.allocation is not None

    @property
    def certified(self) -> bool:
        """Exact-optimality guarantee: converged, in-cone, cleanly binarised."""
        return (
            not self.truncated
            and self.in_positive_cone
            and self.binary_recovery
            and self.recovery_feasible
        )

    def to_dict(self) -> dict:
        return {
            "primal_value": self.primal_value,
            "dual_value": self.dual_value,
            "duality_gap": self.duality_gap,
            "in_positive_cone": self.in_positive_cone,
            "binary_recovery": self.binary_recovery,
            "recovery_feasible": self.recovery_feasible,
            "repaired": self.repaired,
            "truncated": self.truncated,
            "certified": self.certified,
            "iterations": list(self.iterations),
            "outer_iterations": self.outer_iterations,
            "max_ratio": None if self.gap_report is None else self.gap_report.max_ratio,
            "near_optimal": None if self.gap_report is None else self.gap_report.near_optimal,
            "violations": list(self.violations),
            "allocation": None if self.allocation is None else list(self.allocation.option_index),
        }


def _binarize(frac: np.ndarray, round_tol: float) -> tuple[np.ndarray, bool]:
    near_one = np.abs(frac - 1.0) <= round_tol
    near_zero = np.abs(frac) <= round_tol
    ok = bool(np.all(near_zero | near_one))
    return near_one.astype(np.int8), ok


def _runs(mask: int) -> int:
    return (mask & ~(mask << 1)).bit_count()


def repair_selection(
    a: AssignmentInstance, frac: np.ndarray, node_cap: int = 200_000
) -> np.ndarray | None:
    """Bounded feasibility repair: heuristic, carries no optimality guarantee.

    Agents are processed in index order; children are tried by largest
    fractional indicator, then lowest weight.  The search keeps the best
    exact cover found within the node cap, so small instances are repaired
    to the best reachable selection while large ones return the incumbent
    when the budget runs out.  Returns a 0/1 selection or None when no
    exact cover was found.
    """
    n_agents = a.n_agents
    full = (1 << a.n_resources) - 1
    sizes = a.sizes
    prefs = []
    for k in range(n_agents):
        opts = sorted(a.agent_options(k), key=lambda o: (-frac[o], a.weights[o], o))
        prefs.append(opts)
    min_size = np.array([min(sizes[o] for o in a.agent_options(k)) for k in range(n_agents)])
    suffix_min = np.concatenate([np.cumsum(min_size[::-1])[::-1], [0]])
    min_weight = np.array(
        [min(a.weights[o] for o in a.agent_options(k)) for k in range(n_agents)]
    )
    suffix_weight = np.concatenate([np.cumsum(min_weight[::-1])[::-1], [0.0]])
    chosen: list[int] = []
    best: list[int] | None = None
    best_value = math.inf
    nodes = 0

    def dfs(k: int, used: int, value: float) -> None:
        nonlocal nodes, best, best_value
        if k == n_agents:
            if used == full and value < best_value:
                best_value = value
                best = chosen.copy()
            return
        if value + suffix_weight[k] >= best_value:
            return
        free = full & ~used
        if free.bit_count() < suffix_min[k]:
            return
        if _runs(free) > n_agents - k:
            return
        for o in prefs[k]:
            if a.footprint_masks[o] & used:
                continue
            nodes += 1
            if nodes > node_cap:
                return
            chosen.append(o)
            dfs(k + 1, used | a.footprint_masks[o], value + float(a.weights[o]))
            chosen.pop()

    dfs(0, 0, 0.0)
    if best is None:
        return None
    sel = np.zeros(a.n_options, dtype=np.int8)
    sel[best] = 1
    return sel


def solve(
    a: AssignmentInstance,
    cfg: SolverConfig = SolverConfig(),
    start: DualPoint | None = None,
) -> SolveReport:
    """Run the nested sub-gradient scheme on one assignment instance.

    Loop order per outer round: (1) binarity duals until their gradient's
    sup-norm is within tolerance, (2) choice duals, (3) cover duals, (4, 5)
    repeat 2-3 until both are within tolerance, (6, 7) repeat everything until
    all three gradients pass, (8) recover and round the indicator.  Exceeding
    the iteration budgets yields ``truncated=True``, never an exception.
    """
    u = -a.weights
    mat = a.footprint_matrix
    mat_t = np.ascontiguousarray(mat.T)
    agent_of = a.agent_of
    n_agents, n_res, n_opt = a.n_agents, a.n_resources, a.n_options

    if start is None:
        cover = np.full(n_res, cfg.init_value)
        choice = np.full(n_agents, cfg.init_value)
        binary = np.full(n_opt, cfg.init_value)
    else:
        cover = start.cover_dual.astype(float).copy()
        choice = start.choice_dual.astype(float).copy()
        binary = start.binary_dual.astype(float).copy()

    auto = cfg.step_schedule == "auto"
    diminish = cfg.step_schedule == "diminishing"

    def stepsize(base: float, i: int) -> float:
        return base / math.sqrt(i + 1.0) if diminish else base

    one_hot_t = None
    if auto:
        one_hot_t = np.zeros((n_opt, n_agents))
        one_hot_t[np.arange(n_opt), agent_of] = 1.0

    it_binary = it_choice = it_cover = 0
    outer_used = 0
    converged = False
    diverged = False
    prev_state: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    for outer in range(1, cfg.max_outer + 1):
        outer_used = outer
        slack0 = u - choice[agent_of] - mat_t @ cover
        for i in range(cfg.max_inner):
            ratio = slack0 / binary
            g = 0.25 * (ratio * ratio - 1.0)
            if np.max(np.abs(g)) <= cfg.tol:
                break
            if auto:
                # exact ascent target of the separable 1-D sub-problem on the
                # current half-line: |slack| with the sign of the iterate
                proposed = np.sign(binary) * np.abs(slack0)
            else:
                proposed = binary + stepsize(cfg.step_binary, i) * g
            if cfg.rho_projection == "sign_flip":
                projected = project_rho(binary, proposed, cfg.projection_offset)
            else:
                projected = project_rho_positive(proposed, cfg.projection_offset)
            it_binary += 1
            if auto and np.array_equal(projected, binary):
                break
            binary = projected
        if not np.isfinite(binary).all():
            diverged = True
            break
        inv2b = 0.5 / binary
        weighted = mat * inv2b
        m_cover = weighted @ mat_t
        cover_target = None
        if auto:
            # With the binarity duals held fixed both remaining gradients are
            # linear, so their shared stationary point solves one symmetric
            # system per round.  The cover loop lands on its component and the
            # next choice pass then lands on the matching choice component.
            cross = weighted @ one_hot_t
            s2_fixed = np.bincount(agent_of, weights=inv2b, minlength=n_agents)
            q_fixed = (u + binary) * inv2b
            h_joint = np.block([[np.diag(s2_fixed), cross.T], [cross, m_cover]])
            rhs_joint = np.concatenate(
                [
                    np.bincount(agent_of, weights=q_fixed, minlength=n_agents) - 1.0,
                    mat @ q_fixed - 1.0,
                ]
            )
            try:
                sol = np.linalg.solve(h_joint, rhs_joint)
                sol = sol + np.linalg.solve(h_joint, rhs_joint - h_joint @ sol)
                if np.isfinite(sol).all():
                    cover_target = sol[n_agents:]
            except np.linalg.LinAlgError:
                cover_target = None
        for _cycle in range(cfg.max_outer):
            base_c = u + binary - mat_t @ cover
            s1 = np.bincount(agent_of, weights=base_c * inv2b, minlength=n_agents)
            s2 = np.bincount(agent_of, weights=inv2b, minlength=n_agents)
            for i in range(cfg.max_inner):
                g = s1 - choice * s2 - 1.0
                if np.max(np.abs(g)) <= cfg.tol:
                    break
                if auto:
                    # the gradient is linear with per-coordinate slope -s2
                    moved = choice + g / s2
                    it_choice += 1
                    if np.array_equal(moved, choice):
                        break
                    choice = moved
                else:
                    choice = choice + stepsize(cfg.step_choice, i) * g
                    it_choice += 1
            if not np.isfinite(choice).all():
                diverged = True
                break
            q0 = (u + binary - choice[agent_of]) * inv2b
            v0 = mat @ q0
            for i in range(cfg.max_inner):
                g = v0 - m_cover @ cover - 1.0
                if np.max(np.abs(g)) <= cfg.tol:
                    break
                if auto:
                    if cover_target is not None and not np.array_equal(cover, cover_target):
                        cover = cover_target.copy()
                        it_cover += 1
                        break
                    landed = None
                    try:
                        landed = np.linalg.solve(m_cover, v0 - 1.0)
                    except np.linalg.LinAlgError:
                        landed = None
                    if (
                        landed is not None
                        and np.isfinite(landed).all()
                        and not np.array_equal(cover, landed)
                    ):
                        cover = landed
                        it_cover += 1
                        break
                    gersh = float(np.max(np.sum(np.abs(m_cover), axis=1)))
                    moved = cover + g / max(gersh, 1e-12)
                    it_cover += 1
                    if np.array_equal(moved, cover):
                        break
                    cover = moved
                else:
                    cover = cover + stepsize(cfg.step_cover, i) * g
                    it_cover += 1
            if not (np.isfinite(choice).all() and np.isfinite(cover).all()):
                diverged = True
                break
            g_cover, g_choice, _ = _raw_gradients(
                u, mat, mat_t, agent_of, n_agents, cover, choice, binary
            )
            if np.max(np.abs(g_choice)) <= cfg.tol and np.max(np.abs(g_cover)) <= cfg.tol:
                break
        if diverged:
            break
        g_cover, g_choice, g_binary = _raw_gradients(
            u, mat, mat_t, agent_of, n_agents, cover, choice, binary
        )
        if (
            np.max(np.abs(g_binary)) <= cfg.tol
            and np.max(np.abs(g_choice)) <= cfg.tol
            and np.max(np.abs(g_cover)) <= cfg.tol
        ):
            converged = True
            break
        # the round maps state to state deterministically, so an unchanged
        # state can never make further progress
        if prev_state is not None and (
            np.array_equal(prev_state[0], binary)
            and np.array_equal(prev_state[1], choice)
            and np.array_equal(prev_state[2], cover)
        ):
            break
        prev_state = (binary.copy(), choice.copy(), cover.copy())

    d = DualPoint(cover_dual=cover, choice_dual=choice, binary_dual=binary)
    violations: list[str] = []
    if diverged:
        violations.append("dual iterates diverged to non-finite values")
        frac = np.zeros(n_opt)
        dval = float("nan")
        sel, binary_ok = np.zeros(n_opt, dtype=np.int8), False
        cone = False
    else:
        frac = recover_indicator(a, d)
        dval = dual_value(a, d)
        sel, binary_ok = _binarize(frac, cfg.round_tol)
        cone = d.in_positive_cone
    if not binary_ok and not diverged:
        violations.append("recovery is not within rounding tolerance of 0/1")
    recovery_feasible = False
    if binary_ok:
        sel_violations = a.selection_violations(sel)
        recovery_feasible = not sel_violations
        violations.extend(sel_violations)

    final_sel: np.ndarray | None = sel if (binary_ok and recovery_feasible) else None
    repaired = False
    if final_sel is None and cfg.repair:
        rep = repair_selection(a, frac)
        if rep is not None:
            final_sel = rep
            repaired = True

    allocation = None
    primal = None
    gap = None
    if final_sel is not None:
        allocation = a.allocation_from_selection(final_sel)
        primal = a.value(allocation)
        if math.isfinite(dval):
            gap = primal - dval

    gap_report = None
    if not diverged:
        gap_report = diagnose_gap(
            a, d, selection=final_sel if final_sel is not None else None,
            ratio_bound=cfg.ratio_bound,
        )

    return SolveReport(
        dual_point=d,
        fractional=frac,
        allocation=allocation,
        primal_value=primal,
        dual_value=dval,
        duality_gap=gap,
        in_positive_cone=cone,
        binary_recovery=binary_ok,
        recovery_feasible=recovery_feasible,
        repaired=repaired,
        truncated=not converged,
        iterations=(it_binary, it_choice, it_cover),
        outer_iterations=outer_used,
        gap_report=gap_report,
        violations=violations,
    )


def count_iterations(
    make_instance: Callable[[int, int, int], AssignmentInstance],
    sweep: Sequence[tuple[int, int]],
    seeds: Sequence[int],
    cfg: SolverConfig = SolverConfig(),
) -> list[dict]:
    """Iteration-count table over (n_agents, n_subchannels) pairs.

    Operations are counted from the loop structure: each binarity iteration
    touches every option, each choice iteration every agent, each cover
    iteration every sub-channel.  Wall time is informative only.
    """
    rows = []
    for n_agents, n_sub in sweep:
        tot = {"outer": 0.0, "binary": 0.0, "choice": 0.0, "cover": 0.0, "ops": 0.0, "wall_s": 0.0}
        n_options = None
        n_patterns = None
        for seed in seeds:
            inst = make_instance(n_agents, n_sub, seed)
            t0 = time.perf_counter()
            rep = solve(inst, cfg)
            dt = time.perf_counter() - t0
            ib, ic, iv = rep.iterations
            n_options = inst.n_options
            n_patterns = inst.patterns.n_patterns
            tot["outer"] += rep.outer_iterations
            tot["binary"] += ib
            tot["choice"] += ic
            tot["cover"] += iv
            tot["ops"] += ib * inst.n_options + ic * n_agents + iv * n_sub
            tot["wall_s"] += dt
        m = float(len(seeds))
        rows.append(
            {
                "n_agents": n_agents,
                "n_subchannels": n_sub,
                "n_patterns": n_patterns,
                "n_options": n_options,
                "outer": tot["outer"] / m,
                "iters_binary": tot["binary"] / m,
                "iters_choice": tot["choice"] / m,
                "iters_cover": tot["cover"] / m,
                "ops": tot["ops"] / m,
                "ops_per_outer": tot["ops"] / max(tot["outer"], 1.0),
                "wall_s": tot["wall_s"] / m,
            }
        )
    return rows
