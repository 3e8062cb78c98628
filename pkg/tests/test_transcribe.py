"""Transcription tests: counts, block residuals, derivatives, pair logic."""

import numpy as np
import pytest

from contactopt import models, transcribe
from contactopt.colloc import make_scheme
from contactopt.transcribe import (NlpProblem, TranscriptionOptions, build_layout,
                                   apply_mpec_strategy, variable_count_formula,
                                   constraint_count_formula, constraint_count_as_built)


def opts_for(model, N=3, K=3, T=1.0, **kw):
    kw.setdefault("q0", np.zeros(model.n_q))
    kw.setdefault("qd0", np.zeros(model.n_q))
    kw.setdefault("h_bound_fraction", 0.5)
    kw.setdefault("objective", "feasibility")
    return TranscriptionOptions(N=N, K=K, T=T, **kw)


def feasible_point(problem, seed=0, scale=0.3):
    """Random point inside bounds with positive slack values."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-scale, scale, problem.n)
    lo = np.where(np.isfinite(problem.lb), problem.lb, -1.0)
    up = np.where(np.isfinite(problem.ub), problem.ub, 1.0)
    x = np.clip(x, lo + 0.05 * (up - lo) + 1e-3, up - 0.05 * (up - lo) - 1e-3)
    x[problem.layout.ih] = problem.options.h_nominal
    return x


# ------------------------------------------------------------------ counts

@pytest.mark.parametrize("H,C,U,N,K,expect", [
    (2, 1, 1, 100, 3, 6100),
    (1, 1, 0, 1, 1, 23),
])
def test_variable_count_paper_examples(H, C, U, N, K, expect):
    assert variable_count_formula(N, K, H, C, U) == expect


def test_layout_counts_match_formula_grid():
    # one representative model per (H, C, U) signature
    cases = [
        (models.ball_ceiling(), ),
        (models.sliding_block(), ),
        (models.double_pendulum_stops(), ),
        (models.planar_hopper(), ),
    ]
    for (model,) in cases:
        for N in (1, 4, 7):
            for K in (1, 3, 5):
                lay = build_layout(model, opts_for(model, N=N, K=K))
                assert lay.n_core == variable_count_formula(
                    N, K, model.n_q, model.n_c, model.n_u), (model.name, N, K)


def test_constraint_count_paper_example_documented_gap():
    # the paper formula gives 6200 for H=2, C=1, N=100, K=3; the honest row
    # inventory here emits N(3KH + C(7K+12)) instead (see decisions ledger)
    assert constraint_count_formula(100, 3, 2, 1) == 6200
    model = models.sliding_block()
    prob = NlpProblem(model, opts_for(model, N=10, K=3, mpec_strategy="epsilon"))
    assert prob.core_constraint_count() == constraint_count_as_built(10, 3, 2, 1)
    # boundary rows (total time) are counted separately from the core
    assert prob.m == prob.core_constraint_count() + 1


def test_ranges_disjoint_and_exhaustive():
    model = models.planar_hopper()
    lay = build_layout(model, opts_for(model, N=2, K=2))
    seen = np.concatenate([
        lay.iq.ravel(), lay.iqd.ravel(), lay.iqdd.ravel(),
        lay.iln.ravel(), lay.ilp.ravel(), lay.ilm.ravel(),
        lay.iu.ravel(), lay.ih.ravel(),
        *[lay.islk[f].ravel() for f in transcribe.SLACK_FAMILIES],
        *[lay.iprm[f].ravel() for f in transcribe.SLACK_FAMILIES],
    ])
    assert np.array_equal(np.sort(seen), np.arange(lay.n_core))


# ------------------------------------------------------------- residual blocks

def ball_problem(N=4, K=3, **kw):
    model = models.ball_ceiling()
    opts = opts_for(model, N=N, K=K, q0=np.array([0.0]), qd0=np.array([5.0]),
                    objective="feasibility", **kw)
    return NlpProblem(model, opts)


def set_trajectory(problem, q_of_t, qd_of_t, qdd_of_t, x=None):
    """Write an analytic trajectory into the decision vector (slacks consistent)."""
    lay, sch = problem.layout, problem.scheme
    if x is None:
        x = np.zeros(problem.n)
    h = problem.options.h_nominal
    x[lay.ih] = h
    t0 = 0.0
    for i in range(lay.N):
        tk = t0 + h * sch.nodes
        x[lay.iq[i]] = np.stack([q_of_t(t)[:, None] if False else q_of_t(t)
                                 for t in tk], axis=1)
        x[lay.iqd[i]] = np.stack([qd_of_t(t) for t in tk], axis=1)
        x[lay.iqdd[i]] = np.stack([qdd_of_t(t) for t in tk], axis=1)
        t0 += h
    # consistent contact slacks for force-free motion
    for c, contact in enumerate(problem.model.contacts):
        for i in range(lay.N):
            Q = x[lay.iq[i]].T  # (K, H)
            gaps = contact.gap_batch(Q)
            x[lay.islk["gap"][i, c]] = gaps
            psis = contact.tangential_velocity(Q, x[lay.iqd[i]].T)
            gam = np.abs(psis)
            x[lay.islk["gam"][i, c]] = gam
            x[lay.islk["sp"][i, c]] = gam + psis
            x[lay.islk["sm"][i, c]] = gam - psis
        q0s = np.empty((lay.N, lay.H))
        q0s[0] = problem.q0
        q0s[1:] = x[lay.iq[:-1, :, -1]] if lay.N > 1 else q0s[1:]
        gap0 = contact.gap_batch(q0s)
        for fam in transcribe.SLACK_FAMILIES:
            s = x[lay.islk[fam][:, c, :]].sum(axis=1)
            if fam == "gap":
                s = s + gap0
            x[lay.iprm[fam][:, c]] = s
    return x


def test_dynamics_ball_flight():
    prob = ball_problem()
    g = 9.81
    x = set_trajectory(prob,
                       lambda t: np.array([5 * t - g * t * t / 2]),
                       lambda t: np.array([5 - g * t]),
                       lambda t: np.array([-g]))
    res = prob.constraints(x)
    assert np.max(np.abs(res[prob.row_blocks["dynamics"]])) < 1e-12
    # wrong acceleration breaks it
    x2 = x.copy()
    x2[prob.layout.iqdd] += 0.1
    res2 = prob.constraints(x2)
    assert np.max(np.abs(res2[prob.row_blocks["dynamics"]])) > 0.09


def test_dynamics_ball_statics_force_magnitude():
    # q'' = 0 at the ceiling: residual vanishes iff the contact slot carries
    # magnitude m*g (direction is -lambda through J = [-1], so the signed
    # value is -m*g; physically the ceiling cannot push up, which is why a
    # ball cannot rest there)
    prob = ball_problem(N=1)
    lay = prob.layout
    x = np.zeros(prob.n)
    x[lay.ih] = prob.options.h_nominal
    x[lay.iq[0]] = 1.0
    x[lay.iln[0, 0]] = -9.81
    res = prob.constraints(x)[prob.row_blocks["dynamics"]]
    assert np.max(np.abs(res)) < 1e-12


def test_dynamics_pendulum_matches_model():
    model = models.double_pendulum_stops()
    opts = opts_for(model, N=2, K=2, q0=np.array([0.3, -0.2]),
                    qd0=np.zeros(2), objective="feasibility")
    prob = NlpProblem(model, opts)
    lay = prob.layout
    rng = np.random.default_rng(1)
    x = feasible_point(prob, seed=3)
    res = prob.constraints(x)[prob.row_blocks["dynamics"]].reshape(lay.N * lay.K, lay.H)
    # recompute independently point by point
    for i in range(lay.N):
        for k in range(lay.K):
            q = x[lay.iq[i, :, k]]
            qd = x[lay.iqd[i, :, k]]
            qdd = x[lay.iqdd[i, :, k]]
            u = x[lay.iu[i]]
            lam_n = x[lay.iln[i, :, k]]
            want = model.M(q) @ qdd + model.bias_at(q, qd) - model.input_map @ u
            for c, contact in enumerate(model.contacts):
                want -= contact.Jn_batch(q[None])[0] * lam_n[c]
            got = res[i * lay.K + k]
            assert np.max(np.abs(got - want)) < 1e-10


def test_collocation_constant_velocity_exact():
    model = models.ball_ceiling()
    prob = NlpProblem(model, opts_for(model, N=4, K=3, q0=np.array([0.0]),
                                      qd0=np.array([0.1])))
    x = set_trajectory(prob,
                       lambda t: np.array([0.1 * t]),
                       lambda t: np.array([0.1]),
                       lambda t: np.array([0.0]))
    res = prob.constraints(x)
    assert np.max(np.abs(res[prob.row_blocks["colloc_q"]])) < 1e-14
    assert np.max(np.abs(res[prob.row_blocks["colloc_qd"]])) < 1e-14


def test_collocation_ballistic_arc_exact_k3():
    prob = ball_problem(N=5, K=3)
    g = 9.81
    x = set_trajectory(prob,
                       lambda t: np.array([5 * t - g * t * t / 2]),
                       lambda t: np.array([5 - g * t]),
                       lambda t: np.array([-g]))
    res = prob.constraints(x)
    assert np.max(np.abs(res[prob.row_blocks["colloc_q"]])) < 1e-12
    assert np.max(np.abs(res[prob.row_blocks["colloc_qd"]])) < 1e-12


def test_exact_trajectory_is_feasible_with_zero_products():
    prob = ball_problem(N=5, K=3)
    g = 9.81
    x = set_trajectory(prob,
                       lambda t: np.array([5 * t - g * t * t / 2]),
                       lambda t: np.array([5 - g * t]),
                       lambda t: np.array([-g]))
    res = prob.constraints(x)
    viol = np.maximum(res - prob.cu, 0) + np.maximum(prob.cl - res, 0)
    # product rows have cu = +inf until an epsilon is applied
    assert np.max(np.abs(viol[np.isfinite(viol)])) < 1e-10
    assert prob.comp_residual(x) == 0.0


def test_hybrid_impulse_reduces_to_continuity():
    model = models.ball_ceiling()
    opts = opts_for(model, N=3, K=2, q0=np.array([0.0]), qd0=np.array([5.0]),
                    contact_formulation="hybrid", objective="feasibility")
    prob = NlpProblem(model, opts)
    lay = prob.layout
    g = 9.81
    x = set_trajectory(prob,
                       lambda t: np.array([5 * t - g * t * t / 2]),
                       lambda t: np.array([5 - g * t]),
                       lambda t: np.array([-g]))
    # zero impulses and continuous mesh velocities: impact rows reduce to Eq.-5 form
    x[lay.imesh_qd] = x[lay.iqd[:-1, :, -1]]
    res = prob.constraints(x)
    assert np.max(np.abs(res[prob.row_blocks["impact_momentum"]])) < 1e-12
    assert np.max(np.abs(res[prob.row_blocks["colloc_qd"]])) < 1e-12
    # a velocity jump without impulse shows up as the scaled jump
    x2 = x.copy()
    x2[lay.imesh_qd[0]] += 0.7
    res2 = prob.constraints(x2)[prob.row_blocks["impact_momentum"]]
    assert abs(res2[0] - 0.7) < 1e-12


def test_hybrid_impulse_matches_plastic_impact_oracle():
    model = models.double_pendulum_stops()
    opts = opts_for(model, N=2, K=2, q0=np.array([0.3, 0.3 + np.pi / 4]),
                    qd0=np.array([0.0, 0.0]), contact_formulation="hybrid",
                    objective="feasibility")
    prob = NlpProblem(model, opts)
    lay = prob.layout
    x = feasible_point(prob, seed=5)
    # mesh configuration at the upper stop, arm striking it
    q_mesh = np.array([0.3, 0.3 + np.pi / 4])
    qd_minus = np.array([0.5, 2.0])
    x[lay.iq[0, :, -1]] = q_mesh
    x[lay.iqd[0, :, -1]] = qd_minus
    J = model.contacts[0].Jn_batch(q_mesh[None])
    imp = models.plastic_impact(model.M(q_mesh), J, qd_minus)
    x[lay.imesh_qd[0]] = imp.qdot_plus
    x[lay.iimp_n[0]] = [imp.impulse[0], 0.0]
    x[lay.iimp_p[0]] = x[lay.iimp_m[0]] = 0.0
    res = prob.constraints(x)[prob.row_blocks["impact_momentum"]][:2]
    assert np.max(np.abs(res)) < 1e-10


# ----------------------------------------------------------- pair semantics

def test_normal_pair_flight_vs_contact_vs_mixed():
    model = models.ball_ceiling()
    prob = NlpProblem(model, opts_for(model, N=3, K=2, q0=np.array([0.0]),
                                      qd0=np.array([2.0])))
    lay = prob.layout
    g = 9.81
    x = set_trajectory(prob,
                       lambda t: np.array([2 * t - g * t * t / 2]),
                       lambda t: np.array([2 - g * t]),
                       lambda t: np.array([-g]))
    # flight: gaps positive, all forces zero -> every product is zero
    assert prob.comp_residual(x) == 0.0
    # force in element 0 with open gaps in element 1 -> pair violated
    x2 = x.copy()
    x2[lay.iln[0, 0]] = 2.0
    x2[lay.islk["fn"][0, 0]] = 2.0
    x2[lay.iprm["fn"][0, 0]] = 2.0 * lay.K
    assert prob.comp_residual(x2) > 0.1
    # closing the next element's gaps restores the pair
    x3 = x2.copy()
    x3[lay.islk["gap"][1, 0]] = 0.0
    x3[lay.iprm["gap"][1, 0]] = 0.0
    assert prob.comp_residual(x3) == 0.0


def test_friction_pairs_coulomb_sliding():
    # sliding right at the cone edge: admissible; tangential force opposes
    model = models.sliding_block(mu=0.5, m=1.0)
    opts = opts_for(model, N=1, K=1, q0=np.array([0.0, 0.0]),
                    qd0=np.array([2.0, 0.0]), objective="feasibility")
    prob = NlpProblem(model, opts)
    lay = prob.layout
    x = np.zeros(prob.n)
    x[lay.ih] = prob.options.h_nominal
    mu, m, g = 0.5, 1.0, 9.81
    lam_n = m * g
    x[lay.iqd[0, 0, 0]] = 2.0            # sliding right, psi = 2
    x[lay.iln[0, 0, 0]] = lam_n
    x[lay.ilm[0, 0, 0]] = mu * lam_n     # friction acts in -x
    x[lay.ilp[0, 0, 0]] = 0.0
    # slacks consistent
    x[lay.islk["gap"][0, 0, 0]] = 0.0
    x[lay.islk["gam"][0, 0, 0]] = 2.0
    x[lay.islk["sp"][0, 0, 0]] = 4.0
    x[lay.islk["sm"][0, 0, 0]] = 0.0
    x[lay.islk["fn"][0, 0, 0]] = lam_n
    x[lay.islk["cone"][0, 0, 0]] = mu * lam_n - mu * lam_n  # on the edge
    x[lay.islk["fxp"][0, 0, 0]] = 0.0
    x[lay.islk["fxm"][0, 0, 0]] = mu * lam_n
    for fam in transcribe.SLACK_FAMILIES:
        s = x[lay.islk[fam][:, 0, :]].sum(axis=1)
        if fam == "gap":
            s = s + model.contacts[0].gap_batch(np.array([[0.0, 0.0]]))
        x[lay.iprm[fam][:, 0]] = s
    res = prob.constraints(x)
    for name in ("c0_gap_def", "c0_sp_def", "c0_sm_def", "c0_fn_def",
                 "c0_cone_def", "c0_fxp_def", "c0_fxm_def", "c0_prime_def"):
        assert np.max(np.abs(res[prob.row_blocks[name]])) < 1e-12, name
    assert prob.comp_residual(x) < 1e-12
    # tangential force magnitude mu*m*g = 4.905 opposing motion
    assert np.isclose(x[lay.ilm[0, 0, 0]] - x[lay.ilp[0, 0, 0]], 4.905)
    # sliding with a force at the wrong edge violates the fxp pair
    x_bad = x.copy()
    x_bad[lay.ilp[0, 0, 0]] = mu * lam_n
    x_bad[lay.ilm[0, 0, 0]] = 0.0
    x_bad[lay.islk["fxp"][0, 0, 0]] = mu * lam_n
    x_bad[lay.islk["fxm"][0, 0, 0]] = 0.0
    x_bad[lay.iprm["fxp"][0, 0]] = mu * lam_n
    x_bad[lay.iprm["fxm"][0, 0]] = 0.0
    assert prob.comp_residual(x_bad) > 1.0


def test_mode_constancy_invariant_on_pairs():
    # with every product <= eps, each pair has one side below eps/other_side
    prob = ball_problem(N=4, K=2, mpec_strategy="epsilon")
    g = 9.81
    x = set_trajectory(prob,
                       lambda t: np.array([5 * t - g * t * t / 2]),
                       lambda t: np.array([5 - g * t]),
                       lambda t: np.array([-g]))
    eps = 1e-6
    prob.set_epsilon(eps)
    a = x[prob.pair_a]
    b = x[prob.pair_b]
    assert np.all(a * b <= eps)
    for av, bv in zip(a, b):
        assert av <= eps / max(bv, 1e-9) or bv <= eps / max(av, 1e-9)


# ------------------------------------------------------------- objectives

def test_objective_trivials():
    model = models.double_pendulum_stops()
    opts = opts_for(model, N=2, K=2, T=1.0, q0=np.zeros(2), qd0=np.zeros(2),
                    objective="min_effort")
    prob = NlpProblem(model, opts)
    lay = prob.layout
    x = np.zeros(prob.n)
    x[lay.ih] = 0.5
    assert prob.objective(x) == 0.0
    x[lay.iu[0, 0]] = 3.0
    x[lay.iu[1, 0]] = -1.0
    assert np.isclose(prob.objective(x), 0.5 * 9 + 0.5 * 1)

    opts_t = opts_for(model, N=4, K=2, T=2.0, q0=np.zeros(2), qd0=np.zeros(2),
                      objective="min_time")
    prob_t = NlpProblem(model, opts_t)
    xt = np.zeros(prob_t.n)
    xt[prob_t.layout.ih] = prob_t.options.h_nominal
    assert np.isclose(prob_t.objective(xt), 2.0)


def test_objective_min_effort_requires_inputs():
    model = models.ball_ceiling()  # no input
    with pytest.raises(ValueError):
        NlpProblem(model, opts_for(model, objective="min_effort",
                                   q0=np.array([0.0]), qd0=np.array([0.0])))


def test_apply_mpec_strategy():
    prob = ball_problem(N=2, K=2, mpec_strategy="epsilon")
    apply_mpec_strategy(prob, "epsilon", 0.5)
    blk = prob.row_blocks["products"]
    assert np.all(prob.cu[blk] == 0.5)
    with pytest.raises(ValueError):
        apply_mpec_strategy(prob, "epsilon", -1.0)

    prob_p = ball_problem(N=2, K=2, mpec_strategy="penalty")
    assert "products" not in prob_p.row_blocks
    apply_mpec_strategy(prob_p, "penalty", 100.0)
    x = feasible_point(prob_p)
    base = prob_p.objective(x)
    pen = float(x[prob_p.pair_a] @ x[prob_p.pair_b])
    assert np.isclose(base, 100.0 * pen)
    # penalty vanishes when one side of every pair is zero
    x0 = x.copy()
    x0[prob_p.pair_b] = 0.0
    assert prob_p.objective(x0) == 0.0


# ------------------------------------------------------- derivative checks

@pytest.mark.parametrize("make,formulation", [
    (lambda: models.ball_ceiling(with_input=True), "relaxed"),
    (lambda: models.sliding_block(), "relaxed"),
    (lambda: models.double_pendulum_stops(), "relaxed"),
    (lambda: models.planar_hopper(), "relaxed"),
    (lambda: models.ball_ceiling(with_input=True), "hybrid"),
    (lambda: models.double_pendulum_stops(), "hybrid"),
])
def test_jacobian_matches_fd(make, formulation):
    model = make()
    objective = "min_effort" if model.n_u else "feasibility"
    opts = opts_for(model, N=3, K=2, q0=np.full(model.n_q, 0.3),
                    qd0=np.zeros(model.n_q), objective=objective,
                    contact_formulation=formulation)
    if model.name == "planar_hopper":
        opts.q0 = np.array([0.0, 0.6, 0.5])
    prob = NlpProblem(model, opts)
    x = feasible_point(prob, seed=11)
    J = prob.jacobian(x).toarray()
    eps = 1e-6
    fd = np.empty_like(J)
    for j in range(prob.n):
        xp, xm = x.copy(), x.copy()
        xp[j] += eps
        xm[j] -= eps
        fd[:, j] = (prob.constraints(xp) - prob.constraints(xm)) / (2 * eps)
    scale = np.maximum(1.0, np.abs(fd))
    assert np.max(np.abs(J - fd) / scale) < 1e-6, model.name


def test_sparsity_pattern_sound():
    # every numerically nonzero FD entry must appear in the declared pattern
    model = models.double_pendulum_stops()
    opts = opts_for(model, N=2, K=3, q0=np.full(2, 0.2), qd0=np.zeros(2),
                    objective="min_effort")
    prob = NlpProblem(model, opts)
    pattern = prob.jacobian(feasible_point(prob, 1))
    pat = (np.abs(pattern.toarray()) >= 0)  # structural mask
    structural = pattern.toarray() != 0
    # accumulate structure over a few random points to avoid accidental zeros
    for seed in (2, 3):
        structural |= prob.jacobian(feasible_point(prob, seed)).toarray() != 0
    x = feasible_point(prob, seed=4)
    eps = 1e-6
    for j in range(prob.n):
        xp, xm = x.copy(), x.copy()
        xp[j] += eps
        xm[j] -= eps
        col = (prob.constraints(xp) - prob.constraints(xm)) / (2 * eps)
        hits = np.abs(col) > 1e-7
        assert not np.any(hits & ~structural[:, j]), f"undeclared entries in col {j}"


@pytest.mark.parametrize("make,strategy", [
    (lambda: models.double_pendulum_stops(), "epsilon"),
    (lambda: models.double_pendulum_stops(), "penalty"),
    (lambda: models.planar_hopper(), "epsilon"),
])
def test_lagrangian_hessian_matches_fd(make, strategy):
    model = make()
    opts = opts_for(model, N=2, K=2, q0=np.full(model.n_q, 0.25),
                    qd0=np.zeros(model.n_q), objective="min_effort",
                    mpec_strategy=strategy)
    if model.name == "planar_hopper":
        opts.q0 = np.array([0.0, 0.6, 0.5])
    prob = NlpProblem(model, opts)
    if strategy == "penalty":
        prob.set_penalty(37.0)
    rng = np.random.default_rng(8)
    x = feasible_point(prob, seed=21)
    y = rng.standard_normal(prob.m)
    ow = 1.7

    def lagr(xx):
        return ow * prob.objective(xx) + y @ prob.constraints(xx)

    Hs = prob.lag_hess(x, y, ow).toarray()
    eps = 1e-5
    n = prob.n
    fd = np.zeros((n, n))
    g0 = ow * prob.grad(x) + prob.jacobian(x).T @ y
    for j in range(n):
        xp, xm = x.copy(), x.copy()
        xp[j] += eps
        xm[j] -= eps
        gp = ow * prob.grad(xp) + prob.jacobian(xp).T @ y
        gm = ow * prob.grad(xm) + prob.jacobian(xm).T @ y
        fd[:, j] = (gp - gm) / (2 * eps)
    assert np.max(np.abs(Hs - fd)) < 5e-5, model.name
