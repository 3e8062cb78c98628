"""Interior-point solver and homotopy driver tests.

The Rosenbrock reference solution comes from an independent oracle: a fine
grid scan over the feasible disk followed by local coordinate refinement,
sharing no machinery with the solver.
"""

import numpy as np
import pytest

from contactopt import models
from contactopt.nlpsolve import (FunctionalNlp, SolveOptions, SolveResult,
                                 solve_nlp, solve_mpec, two_stage_solve,
                                 make_initial, kkt_residual)
from contactopt.transcribe import NlpProblem, TranscriptionOptions


# ---------------------------------------------------------------- oracles

def rosenbrock_disk_oracle():
    """Reference minimum of Rosenbrock on the unit disk.

    Dense grid over the disk plus a ternary search along the boundary
    parameterized by angle; the unconstrained optimum (1, 1) lies outside, so
    the true solution sits on the circle with a nondegenerate multiplier.
    """
    def f(p):
        return (1 - p[0]) ** 2 + 100 * (p[1] - p[0] ** 2) ** 2

    best, bval = None, np.inf
    for x in np.linspace(-1.0, 1.0, 801):
        for y in np.linspace(-1.0, 1.0, 801):
            if x * x + y * y <= 1.0 and f((x, y)) < bval:
                bval, best = f((x, y)), np.array([x, y])

    def fb(th):
        return f((np.cos(th), np.sin(th)))

    th_grid = np.linspace(0, 2 * np.pi, 4001)
    th0 = th_grid[np.argmin([fb(t) for t in th_grid])]
    lo, hi = th0 - 2e-3, th0 + 2e-3
    for _ in range(200):
        m1 = lo + (hi - lo) / 3
        m2 = hi - (hi - lo) / 3
        if fb(m1) < fb(m2):
            hi = m2
        else:
            lo = m1
        if hi - lo < 1e-14:
            break
    th = 0.5 * (lo + hi)
    pb = np.array([np.cos(th), np.sin(th)])
    if f(pb) < bval:
        best, bval = pb, f(pb)
    return best, bval


# ------------------------------------------------------------- basic NLPs

def test_min_quadratic_with_bound():
    prob = FunctionalNlp(
        n=1,
        objective=lambda x: (x[0] - 1.0) ** 2,
        grad=lambda x: np.array([2 * (x[0] - 1.0)]),
        lb=np.array([0.0]),
    )
    res = solve_nlp(prob, np.array([3.0]))
    assert res.status == "optimal"
    assert abs(res.x[0] - 1.0) < 1e-6
    assert res.objective < 1e-10


def test_symmetric_geometric_program():
    # min x1 + x2 s.t. x1 x2 >= 1, x >= 0  ->  (1, 1)
    prob = FunctionalNlp(
        n=2,
        objective=lambda x: x[0] + x[1],
        grad=lambda x: np.ones(2),
        constraints=lambda x: np.array([x[0] * x[1]]),
        jacobian=lambda x: np.array([[x[1], x[0]]]),
        lb=np.zeros(2),
        cl=np.array([1.0]), cu=np.array([np.inf]),
    )
    res = solve_nlp(prob, np.array([3.0, 0.2]))
    assert res.status == "optimal"
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-6)


def test_rosenbrock_in_disk_matches_oracle():
    x_ref, f_ref = rosenbrock_disk_oracle()
    prob = FunctionalNlp(
        n=2,
        objective=lambda x: (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2,
        grad=lambda x: np.array([
            -2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2),
            200 * (x[1] - x[0] ** 2)]),
        constraints=lambda x: np.array([x @ x]),
        jacobian=lambda x: np.array([[2 * x[0], 2 * x[1]]]),
        cl=np.array([-np.inf]), cu=np.array([1.0]),
    )
    res = solve_nlp(prob, np.array([-0.5, 0.5]), SolveOptions(max_iterations=200))
    assert res.status == "optimal"
    assert np.max(np.abs(res.x - x_ref)) < 1e-6
    assert abs(res.objective - f_ref) < 1e-6


def test_bounds_respected_everywhere():
    prob = FunctionalNlp(
        n=3,
        objective=lambda x: float(np.sum((x - 2.0) ** 2)),
        grad=lambda x: 2 * (x - 2.0),
        lb=np.array([-1.0, 0.5, -np.inf]),
        ub=np.array([1.0, 0.75, 0.0]),
    )
    res = solve_nlp(prob, np.zeros(3))
    assert res.status == "optimal"
    assert np.all(res.x >= prob.lb - 1e-9)
    assert np.all(res.x <= prob.ub + 1e-9)
    assert np.allclose(res.x, [1.0, 0.75, 0.0], atol=1e-6)


def test_fixed_variables_eliminated():
    prob = FunctionalNlp(
        n=2,
        objective=lambda x: (x[0] - 3.0) ** 2 + x[1] ** 2,
        grad=lambda x: np.array([2 * (x[0] - 3.0), 2 * x[1]]),
        lb=np.array([-np.inf, 4.0]),
        ub=np.array([np.inf, 4.0]),
    )
    res = solve_nlp(prob, np.array([0.0, 0.0]))
    assert res.status == "optimal"
    assert res.x[1] == 4.0
    assert abs(res.x[0] - 3.0) < 1e-7


def test_determinism_bitwise():
    def build():
        return FunctionalNlp(
            n=2,
            objective=lambda x: (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2,
            grad=lambda x: np.array([
                -2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2),
                200 * (x[1] - x[0] ** 2)]),
            constraints=lambda x: np.array([x @ x]),
            jacobian=lambda x: np.array([[2 * x[0], 2 * x[1]]]),
            cl=np.array([-np.inf]), cu=np.array([2.0]),
        )
    r1 = solve_nlp(build(), np.array([-0.3, 0.9]))
    r2 = solve_nlp(build(), np.array([-0.3, 0.9]))
    assert r1.iterations == r2.iterations
    assert r1.x.tobytes() == r2.x.tobytes()
    assert abs(r1.objective - r2.objective) < 1e-12


def test_kkt_residual_independent_check():
    prob = FunctionalNlp(
        n=2,
        objective=lambda x: x[0] + x[1],
        grad=lambda x: np.ones(2),
        constraints=lambda x: np.array([x[0] * x[1]]),
        jacobian=lambda x: np.array([[x[1], x[0]]]),
        lb=np.zeros(2),
        cl=np.array([1.0]), cu=np.array([np.inf]),
    )
    res = solve_nlp(prob, np.array([2.0, 2.0]))
    assert res.status == "optimal"
    assert kkt_residual(prob, res) < 1e-6


def test_infeasible_problem_reported():
    prob = FunctionalNlp(
        n=1,
        objective=lambda x: x[0] ** 2,
        grad=lambda x: np.array([2 * x[0]]),
        constraints=lambda x: np.array([x[0]]),
        jacobian=lambda x: np.array([[1.0]]),
        lb=np.array([0.0]),
        cl=np.array([-np.inf]), cu=np.array([-1.0]),  # x <= -1 vs x >= 0
    )
    res = solve_nlp(prob, np.array([0.5]), SolveOptions(max_iterations=60))
    assert res.status in ("infeasible", "max_iter")
    assert res.cons_violation > 0.1


# --------------------------------------------------------------- toy MPECs

def toy_mpec(strategy):
    # min a^2 + 2 b^2 s.t. a + b >= 1, complementarity pair (a, b)
    return FunctionalNlp(
        n=2,
        objective=lambda x: x[0] ** 2 + 2 * x[1] ** 2,
        grad=lambda x: np.array([2 * x[0], 4 * x[1]]),
        constraints=lambda x: np.array([x[0] + x[1]]),
        jacobian=lambda x: np.array([[1.0, 1.0]]),
        lb=np.zeros(2),
        cl=np.array([1.0]), cu=np.array([np.inf]),
        pairs=[(0, 1)],
        use_products=(strategy == "epsilon"),
    )


def toy_mpec_branch_oracle():
    # enumerate both complementarity branches analytically
    # branch a=0: min 2 b^2 s.t. b >= 1 -> obj 2; branch b=0: min a^2, a >= 1 -> 1
    return np.array([1.0, 0.0]), 1.0


@pytest.mark.parametrize("strategy", ["epsilon", "penalty"])
def test_toy_mpec_both_strategies(strategy):
    x_ref, f_ref = toy_mpec_branch_oracle()
    prob = toy_mpec(strategy)
    res = solve_mpec(prob, SolveOptions(seed=3), start=np.array([0.6, 0.6]))
    assert res.success, res.message
    assert res.comp_residual <= 1e-6
    assert np.max(np.abs(res.x - x_ref)) < 1e-4
    assert abs(res.objective - f_ref) < 1e-4


def test_epsilon_schedule_final_residual():
    prob = toy_mpec("epsilon")
    opts = SolveOptions()
    res = solve_mpec(prob, opts, start=np.array([0.6, 0.6]))
    assert res.comp_residual <= opts.epsilon_schedule[-1]


def test_no_pairs_identical_to_solve_nlp():
    prob = FunctionalNlp(
        n=1, objective=lambda x: (x[0] - 1) ** 2,
        grad=lambda x: np.array([2 * (x[0] - 1)]), lb=np.array([0.0]))
    r_plain = solve_nlp(prob, np.array([0.2]))
    r_mpec = solve_mpec(prob, start=np.array([0.2]))
    assert r_plain.x.tobytes() == r_mpec.x.tobytes()
    assert r_plain.iterations == r_mpec.iterations


def test_warm_start_monotone_on_convex():
    # convex quadratic whose minimizer already satisfies complementarity:
    # warm-started tightening must not degrade the objective
    def build():
        return FunctionalNlp(
            n=2,
            objective=lambda x: (x[0] - 2) ** 2 + (x[1] + 1) ** 2,
            grad=lambda x: np.array([2 * (x[0] - 2), 2 * (x[1] + 1)]),
            lb=np.zeros(2),
            pairs=[(0, 1)],
            use_products=True,
        )
    opts = SolveOptions()
    prob = build()
    res = solve_mpec(prob, opts, start=np.array([1.0, 1.0]))
    assert res.success
    assert np.allclose(res.x, [2.0, 0.0], atol=1e-5)

    prob2 = build()
    x = np.array([1.0, 1.0])
    stage_objs = []
    for eps in opts.epsilon_schedule:
        prob2.set_epsilon(eps)
        r = solve_nlp(prob2, x, SolveOptions())
        stage_objs.append(r.objective)
        x = r.x
    assert stage_objs[-1] <= stage_objs[0] + 1e-6


def test_schedule_validation():
    with pytest.raises(ValueError):
        SolveOptions(epsilon_schedule=(1.0, 1.0))
    with pytest.raises(ValueError):
        SolveOptions(rho_schedule=(100.0, 10.0))


# ------------------------------------------------------------- transcription

def test_ball_free_fall_two_stage():
    # no boundary conditions: stage 1 already returns the free trajectory and
    # stage 2 leaves it (feasibility objective everywhere)
    model = models.ball_ceiling()
    topts = TranscriptionOptions(
        N=8, K=3, T=0.4, q0=np.array([0.0]), qd0=np.array([2.0]),
        objective="feasibility", mpec_strategy="penalty", h_bound_fraction=0.2)
    res = two_stage_solve(model, topts, SolveOptions(
        seed=1, init_range=(-0.5, 0.5), rho_schedule=(10.0, 100.0)))
    assert res.success, res.message
    # trajectory must match the analytic arc (no contact at these times)
    lay = res.problem.layout
    sch = res.problem.scheme
    g = 9.81
    t0 = 0.0
    for i in range(lay.N):
        h = res.x[lay.ih[i]]
        for k, tau in enumerate(sch.nodes):
            t = t0 + h * tau
            y_want = 2.0 * t - 0.5 * g * t * t
            assert abs(res.x[lay.iq[i, 0, k]] - y_want) < 1e-6
        t0 += h
    assert res.comp_residual <= 1e-6


def test_h_bounds_respected_in_stage2():
    model = models.ball_ceiling()
    topts = TranscriptionOptions(
        N=6, K=2, T=0.3, q0=np.array([0.0]), qd0=np.array([2.0]),
        objective="feasibility", mpec_strategy="penalty", h_bound_fraction=0.2)
    res = two_stage_solve(model, topts, SolveOptions(seed=0, init_range=(-0.5, 0.5)))
    assert res.success
    h = res.x[res.problem.layout.ih]
    h_lo, h_up = topts.resolved_h_bounds()
    assert np.all(h >= h_lo - 1e-9)
    assert np.all(h <= h_up + 1e-9)
    assert abs(h.sum() - topts.T) < 1e-8


def test_make_initial_protocol():
    model = models.double_pendulum_stops()
    topts = TranscriptionOptions(
        N=3, K=2, T=1.0, q0=np.zeros(2), qd0=np.zeros(2), objective="min_effort")
    prob = NlpProblem(model, topts)
    opts = SolveOptions(seed=42)
    x = make_initial(prob, opts)
    lay = prob.layout
    states = np.concatenate([x[lay.iq].ravel(), x[lay.iqd].ravel()])
    assert np.all(np.abs(states) <= np.pi)
    assert np.std(states) > 0.5            # actually randomized
    assert np.all(x[lay.ih] == topts.h_nominal)
    others = x[lay.iln].ravel()
    assert np.all(others == 0.01)
    # deterministic in the seed
    x2 = make_initial(prob, SolveOptions(seed=42))
    assert x.tobytes() == x2.tobytes()
    x3 = make_initial(prob, SolveOptions(seed=43))
    assert x.tobytes() != x3.tobytes()
