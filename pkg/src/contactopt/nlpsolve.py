"""Primal-dual interior-point solver with an MPEC homotopy driver.

The solver handles problems of the form

    min f(x)  s.t.  cl <= c(x) <= cu,  lb <= x <= ub

by introducing slacks for inequality rows, eliminating them from the Newton
system, and factoring the regularized saddle matrix

    [ W + Sigma_x + dx*I   J^T            ] [dx]   [ -r_x ]
    [ J                   -(D_s + dc*I)   ] [dy] = [ -r_c ]

with SuperLU. D_s carries the condensed slack barrier for inequality rows and
the dual regularization makes the matrix quasi-definite, so no inertia
information is needed; negative curvature is caught by a cheap test on
dx^T (W + Sigma) dx and handled by escalating the primal regularization.
Globalization is a backtracking line search on the l1 exact-penalty merit of
the barrier subproblem. Identical inputs produce identical iterates.

solve_mpec wraps solve_nlp in a homotopy over the registered complementarity
pairs: either tightening the product bound (epsilon strategy) or escalating
the objective penalty rho until the true complementarity residual meets the
target, warm-starting every stage from the previous solution.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace

_DBG = bool(os.environ.get("CONTACTOPT_IPDBG"))

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SolveOptions",
    "SolveResult",
    "FunctionalNlp",
    "solve_nlp",
    "solve_mpec",
    "two_stage_solve",
    "make_initial",
    "kkt_residual",
]

_STATUSES = ("optimal", "feasible", "max_iter", "infeasible", "failed")


@dataclass
class SolveOptions:
    """Interior-point and homotopy settings."""

    max_iterations: int = 300
    kkt_tolerance: float = 1e-8
    feasibility_tolerance: float = 1e-8
    mu0: float = 0.1
    mu0_warm: float = 1e-3
    mu_min: float = 1e-12
    epsilon_schedule: tuple = (10.0, 1.0, 0.1, 0.01, 1e-3, 1e-4, 1e-5, 1e-6)
    rho_schedule: tuple = (10.0, 100.0, 1000.0)
    comp_target: float = 1e-6
    seed: int = 0
    init_range: tuple = (-np.pi, np.pi)
    init_fill: float = 0.01
    stage1_max_iterations: int | None = None
    stage1_parameter: float | None = None   # first schedule entry by default
    verbose: bool = False

    def __post_init__(self):
        eps = np.asarray(self.epsilon_schedule, float)
        if eps.size and np.any(np.diff(eps) >= 0):
            raise ValueError("epsilon schedule must be strictly decreasing")
        rho = np.asarray(self.rho_schedule, float)
        if rho.size and np.any(np.diff(rho) <= 0):
            raise ValueError("rho schedule must be strictly increasing")


@dataclass
class SolveResult:
    status: str
    x: np.ndarray
    objective: float
    comp_residual: float
    cons_violation: float
    kkt_residual: float
    iterations: int
    wall_time: float
    mu: float = 0.0
    multipliers: dict | None = None
    message: str = ""
    stage: int | None = None
    stage_results: list | None = None

    @property
    def success(self) -> bool:
        return self.status in ("optimal", "feasible")


class FunctionalNlp:
    """Dense callback-based problem for small NLPs and toy MPECs.

    Mirrors the evaluator surface of transcribe.NlpProblem. When `pairs`
    (list of variable index pairs) is given with use_products=True the
    product rows a*b <= epsilon are appended to the constraint set.
    """

    def __init__(self, n, objective, grad, constraints=None, jacobian=None,
                 lb=None, ub=None, cl=None, cu=None, lag_hess=None,
                 pairs=None, use_products=True):
        self.n = n
        self._f, self._g = objective, grad
        self._c = constraints
        self._J = jacobian
        self._H = lag_hess
        self.lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, float)
        self.ub = np.full(n, np.inf) if ub is None else np.asarray(ub, float)
        cl = np.zeros(0) if cl is None else np.asarray(cl, float)
        cu = np.zeros(0) if cu is None else np.asarray(cu, float)
        self.m_user = cl.size
        pairs = pairs or []
        self.pair_a = np.array([p[0] for p in pairs], dtype=np.int64)
        self.pair_b = np.array([p[1] for p in pairs], dtype=np.int64)
        self.n_pairs = len(pairs)
        self.use_products = use_products and self.n_pairs > 0
        self.penalty_rho = 0.0
        self.epsilon = np.inf
        if self.use_products:
            self.cl = np.concatenate([cl, np.full(self.n_pairs, -np.inf)])
            self.cu = np.concatenate([cu, np.full(self.n_pairs, np.inf)])
        else:
            self.cl, self.cu = cl, cu
        self.m = self.cl.size

    def objective(self, x):
        v = float(self._f(x))
        if self.penalty_rho and self.n_pairs:
            v += self.penalty_rho * float(x[self.pair_a] @ x[self.pair_b])
        return v

    def grad(self, x):
        g = np.asarray(self._g(x), float).copy()
        if self.penalty_rho and self.n_pairs:
            np.add.at(g, self.pair_a, self.penalty_rho * x[self.pair_b])
            np.add.at(g, self.pair_b, self.penalty_rho * x[self.pair_a])
        return g

    def constraints(self, x):
        parts = []
        if self.m_user:
            parts.append(np.asarray(self._c(x), float))
        if self.use_products:
            parts.append(x[self.pair_a] * x[self.pair_b])
        return np.concatenate(parts) if parts else np.zeros(0)

    def jacobian(self, x):
        rows = []
        if self.m_user:
            if self._J is not None:
                rows.append(np.atleast_2d(np.asarray(self._J(x), float)))
            else:
                eps = 1e-7
                cols = []
                for j in range(self.n):
                    xp, xm = x.copy(), x.copy()
                    xp[j] += eps
                    xm[j] -= eps
                    cols.append((self._c(xp) - self._c(xm)) / (2 * eps))
                rows.append(np.column_stack(cols))
        if self.use_products:
            P = np.zeros((self.n_pairs, self.n))
            P[np.arange(self.n_pairs), self.pair_a] += x[self.pair_b]
            P[np.arange(self.n_pairs), self.pair_b] += x[self.pair_a]
            rows.append(P)
        if not rows:
            return sp.csc_matrix((0, self.n))
        return sp.csc_matrix(np.vstack(rows))

    def lag_hess(self, x, y, obj_weight=1.0):
        if self._H is not None:
            H = np.asarray(self._H(x, y[:self.m_user], obj_weight), float)
        else:
            eps = 1e-5
            H = np.zeros((self.n, self.n))

            def lgrad(xx):
                g = obj_weight * np.asarray(self._g(xx), float).copy()
                if self.m_user:
                    g += np.atleast_2d(self.jacobian(xx).toarray()[:self.m_user]).T \
                        @ y[:self.m_user]
                return g

            for j in range(self.n):
                xp, xm = x.copy(), x.copy()
                xp[j] += eps
                xm[j] -= eps
                H[:, j] = (lgrad(xp) - lgrad(xm)) / (2 * eps)
            H = 0.5 * (H + H.T)
        H = H.copy()
        if self.use_products:
            yp = y[self.m_user:]
            for k in range(self.n_pairs):
                H[self.pair_a[k], self.pair_b[k]] += yp[k]
                H[self.pair_b[k], self.pair_a[k]] += yp[k]
        if self.penalty_rho and self.n_pairs:
            for k in range(self.n_pairs):
                H[self.pair_a[k], self.pair_b[k]] += obj_weight * self.penalty_rho
                H[self.pair_b[k], self.pair_a[k]] += obj_weight * self.penalty_rho
        return sp.csc_matrix(H)

    def set_epsilon(self, eps):
        if eps <= 0:
            raise ValueError("epsilon must be positive")
        if not self.use_products:
            raise ValueError("problem has no product rows")
        self.epsilon = float(eps)
        self.cu[self.m_user:] = eps

    def set_penalty(self, rho):
        if rho <= 0:
            raise ValueError("rho must be positive")
        self.penalty_rho = float(rho)

    def comp_residual(self, x):
        if not self.n_pairs:
            return 0.0
        return float(np.max(x[self.pair_a] * x[self.pair_b]))


# ---------------------------------------------------------------- interior point

class _InteriorPoint:
    KAPPA_EPS = 10.0
    KAPPA_MU = 0.2
    THETA_MU = 1.5
    TAU_MIN = 0.99
    KAPPA_SIGMA = 1e10
    ETA = 1e-4
    DELTA0 = 1e-4
    # filter line-search constants
    G_THETA = 1e-5
    G_PHI = 1e-5
    S_THETA = 1.1
    S_PHI = 2.3
    DELTA_SW = 1.0

    def __init__(self, problem, options: SolveOptions):
        self.p = problem
        self.o = options
        self.lb = np.asarray(problem.lb, float)
        self.ub = np.asarray(problem.ub, float)
        self.cl = np.asarray(problem.cl, float)
        self.cu = np.asarray(problem.cu, float)
        self.n_full = problem.n
        self.m = problem.m
        self.fixed = self.lb == self.ub
        self.free = np.flatnonzero(~self.fixed)
        self.nf = self.free.size
        self.eq = np.isclose(self.cl, self.cu)
        self.ineq = np.flatnonzero(~self.eq)
        self.mi = self.ineq.size

    # -------------------------------------------------------------- scaling

    def _setup_scaling(self, x0):
        g = self.p.grad(x0)
        gmax = np.max(np.abs(g)) if g.size else 0.0
        self.sig_f = min(1.0, 100.0 / gmax) if gmax > 100.0 else 1.0
        J = self.p.jacobian(x0).tocsr()
        rmax = np.zeros(self.m)
        absJ = abs(J)
        rmax = np.asarray(absJ.max(axis=1).todense()).ravel() if self.m else rmax
        with np.errstate(divide="ignore"):
            rs = np.where(rmax > 100.0, 100.0 / np.maximum(rmax, 1e-300), 1.0)
        self.row_scale = rs

    # ---------------------------------------------------------------- solve

    def solve(self, x0, warm: bool = False) -> SolveResult:
        t_start = time.perf_counter()
        o = self.o
        p = self.p
        n, m = self.nf, self.m
        push = 1e-9 if warm else 1e-2

        x = np.clip(np.asarray(x0, float), self.lb, self.ub)
        x[self.fixed] = self.lb[self.fixed]
        self._setup_scaling(x)
        scl, scu = self.row_scale * self.cl, self.row_scale * self.cu

        # strict interior push for free variables
        xl, xu = self.lb[self.free], self.ub[self.free]
        xf = self._push_interior(x[self.free], xl, xu, k1=push, k2=push)
        x = x.copy()
        x[self.free] = xf

        c_raw = p.constraints(x)
        cs = self.row_scale * c_raw
        s = np.clip(cs[self.ineq],
                    *self._push_bounds(scl[self.ineq], scu[self.ineq], k1=push, k2=push))
        y = np.zeros(m)
        mu = o.mu0_warm if warm else o.mu0
        vxl = np.where(np.isfinite(xl), mu / np.maximum(xf - xl, 1e-8), 0.0)
        vxu = np.where(np.isfinite(xu), mu / np.maximum(xu - xf, 1e-8), 0.0)
        sl, su = scl[self.ineq], scu[self.ineq]
        vsl = np.where(np.isfinite(sl), mu / np.maximum(s - sl, 1e-8), 0.0)
        vsu = np.where(np.isfinite(su), mu / np.maximum(su - s, 1e-8), 0.0)
        vxl = np.clip(vxl, 1e-10, 1e10)
        vxu = np.clip(vxu, 1e-10, 1e10)
        vsl = np.clip(np.where(np.isfinite(sl), vsl, 0.0), 0.0, 1e10)
        vsu = np.clip(np.where(np.isfinite(su), vsu, 0.0), 0.0, 1e10)
        vxl[~np.isfinite(xl)] = 0.0
        vxu[~np.isfinite(xu)] = 0.0
        vsl[~np.isfinite(sl)] = 0.0
        vsu[~np.isfinite(su)] = 0.0

        delta_last = 0.0
        it = 0
        best = None
        status = "max_iter"
        message = ""
        filt = None          # filter entries (theta, phi), reset per barrier stage
        restorations = 0

        while it < o.max_iterations:
            f_val = self.sig_f * p.objective(x)
            g = self.sig_f * p.grad(x)[self.free]
            c_raw = p.constraints(x)
            cs = self.row_scale * c_raw
            J = p.jacobian(x)
            Js = sp.diags(self.row_scale) @ J
            A = Js.tocsc()[:, self.free]

            r_all = np.empty(m)
            r_all[self.eq] = cs[self.eq] - scl[self.eq]
            r_all[self.ineq] = cs[self.ineq] - s
            viol_scaled = np.max(np.abs(r_all)) if m else 0.0
            viol_raw = self._raw_violation(c_raw)

            # dual infeasibility and complementarity (scaled system)
            Jty = (A.T @ y) if m else np.zeros(n)
            r_dual = g + Jty - vxl + vxu
            r_dual_s = -y[self.ineq] - vsl + vsu
            comp_terms = []
            for z, zl2, zu2, vl2, vu2 in ((xf, xl, xu, vxl, vxu), (s, sl, su, vsl, vsu)):
                fl = np.isfinite(zl2)
                fu = np.isfinite(zu2)
                if np.any(fl):
                    comp_terms.append(np.abs((z - zl2)[fl] * vl2[fl] - mu))
                if np.any(fu):
                    comp_terms.append(np.abs((zu2 - z)[fu] * vu2[fu] - mu))
            comp0 = []
            for z, zl2, zu2, vl2, vu2 in ((xf, xl, xu, vxl, vxu), (s, sl, su, vsl, vsu)):
                fl = np.isfinite(zl2)
                fu = np.isfinite(zu2)
                if np.any(fl):
                    comp0.append(np.abs((z - zl2)[fl] * vl2[fl]))
                if np.any(fu):
                    comp0.append(np.abs((zu2 - z)[fu] * vu2[fu]))
            ymax = np.concatenate([np.abs(y), vxl, vxu, vsl, vsu]) if m else \
                np.concatenate([vxl, vxu])
            s_d = max(100.0, np.sum(ymax) / max(1, ymax.size)) / 100.0
            E_mu = max(np.max(np.abs(np.concatenate([r_dual, r_dual_s]))) / s_d
                       if n + self.mi else 0.0,
                       viol_scaled,
                       (np.max(np.concatenate(comp_terms)) / s_d) if comp_terms else 0.0)
            E_0 = max(np.max(np.abs(np.concatenate([r_dual, r_dual_s]))) / s_d
                      if n + self.mi else 0.0,
                      viol_scaled,
                      (np.max(np.concatenate(comp0)) / s_d) if comp0 else 0.0)

            if best is None or (viol_raw, f_val) < best[0]:
                best = ((viol_raw, f_val), x.copy(), y.copy(), it)

            if E_0 <= o.kkt_tolerance and viol_raw <= o.feasibility_tolerance:
                status = "optimal"
                break

            # barrier subproblem converged: tighten mu, reset the filter
            if E_mu <= self.KAPPA_EPS * mu and mu > o.mu_min:
                mu = max(o.mu_min, min(self.KAPPA_MU * mu, mu ** self.THETA_MU))
                filt = None
                continue

            # Newton direction with regularization loop
            tau = max(self.TAU_MIN, 1.0 - mu)
            Sig_x = vxl / np.maximum(xf - xl, 1e-300) + vxu / np.maximum(xu - xf, 1e-300)
            Sig_x = np.where(np.isfinite(Sig_x), Sig_x, 0.0)
            Sig_s = vsl / np.maximum(s - sl, 1e-300) + vsu / np.maximum(su - s, 1e-300)
            Sig_s = np.where(np.isfinite(Sig_s), Sig_s, 0.0)

            grad_phi_x = g.copy()
            with np.errstate(divide="ignore", invalid="ignore"):
                bl = np.where(np.isfinite(xl), mu / (xf - xl), 0.0)
                bu = np.where(np.isfinite(xu), mu / (xu - xf), 0.0)
                bsl = np.where(np.isfinite(sl), mu / (s - sl), 0.0)
                bsu = np.where(np.isfinite(su), mu / (su - s), 0.0)
            grad_phi_x -= bl - bu
            grad_phi_s = -(bsl - bsu)
            rx = grad_phi_x + Jty
            yhat = y[self.ineq] + bsl - bsu

            rc = np.empty(m)
            rc[self.eq] = r_all[self.eq]
            inv_Sig_s = 1.0 / np.maximum(Sig_s, 1e-300)
            rc[self.ineq] = r_all[self.ineq] - inv_Sig_s * yhat

            W = p.lag_hess(x, self.row_scale * y, self.sig_f)
            Wff = W[self.free][:, self.free].tocsc() if W.shape[0] else W

            theta_k = np.sum(np.abs(r_all))
            phi_k = self._barrier_phi(f_val, xf, xl, xu, s, sl, su, mu)
            if filt is None:
                theta_ref = max(1.0, theta_k)
                theta_max = 1e4 * theta_ref
                theta_min_f = 1e-4 * theta_ref
                filt = []

            def trial_point(xf_t, s_t):
                x_trial[self.free] = xf_t
                cs_t = self.row_scale * p.constraints(x_trial)
                r_t = np.empty(m)
                r_t[self.eq] = cs_t[self.eq] - scl[self.eq]
                r_t[self.ineq] = cs_t[self.ineq] - s_t
                theta_t = np.sum(np.abs(r_t))
                phi_t = self._barrier_phi(self.sig_f * p.objective(x_trial),
                                          xf_t, xl, xu, s_t, sl, su, mu)
                return theta_t, phi_t, r_t

            def filter_ok(theta_t, phi_t):
                if not np.isfinite(phi_t) or theta_t > theta_max:
                    return False
                for tj, pj in filt + [(theta_k, phi_k)]:
                    if not (theta_t <= (1 - self.G_THETA) * tj
                            or phi_t <= pj - self.G_PHI * tj):
                        return False
                return True

            delta = 0.0 if delta_last == 0.0 else max(1e-20, delta_last / 3.0)
            dc = 1e-8
            accepted = False
            singular = True
            f_type_step = False
            alpha = a_max = dphi = 0.0
            dx = dy = ds = None
            x_trial = x.copy()
            for attempt in range(8):
                Dss = np.full(m, dc)
                Dss[self.ineq] += inv_Sig_s
                K = sp.bmat([
                    [Wff + sp.diags(Sig_x + delta), A.T],
                    [A, -sp.diags(Dss)],
                ], format="csc")
                try:
                    lu = spla.splu(K, permc_spec="COLAMD",
                                   options=dict(SymmetricMode=True))
                except RuntimeError:
                    delta = self.DELTA0 if delta == 0.0 else delta * 10.0
                    continue
                rhs = np.concatenate([-rx, -rc])
                sol = lu.solve(rhs)
                if not np.all(np.isfinite(sol)):
                    delta = self.DELTA0 if delta == 0.0 else delta * 10.0
                    continue
                singular = False
                resid = rhs - K @ sol
                if np.max(np.abs(resid)) > 1e-10 * max(1.0, np.max(np.abs(rhs))):
                    sol = sol + lu.solve(resid)
                dx = sol[:n]
                dy = sol[n:]
                ds = inv_Sig_s * (dy[self.ineq] + yhat)
                # inertia-free curvature test on the primal step (keeps the
                # iteration away from maximizers/saddles of nonconvex surfaces)
                curv = (dx @ (Wff @ dx) + (Sig_x + delta) @ dx ** 2
                        + Sig_s @ ds ** 2)
                if curv < 1e-9 * (dx @ dx + ds @ ds) and attempt < 6:
                    delta = self.DELTA0 if delta == 0.0 else delta * 10.0
                    continue
                dphi = grad_phi_x @ dx + grad_phi_s @ ds

                with np.errstate(over="ignore", divide="ignore"):
                    a_max = 1.0
                    for z, dz, zl2, zu2 in ((xf, dx, xl, xu), (s, ds, sl, su)):
                        neg = dz < 0
                        fl = neg & np.isfinite(zl2)
                        if np.any(fl):
                            a_max = min(a_max, np.min(tau * (z - zl2)[fl] / -dz[fl]))
                        pos = dz > 0
                        fu = pos & np.isfinite(zu2)
                        if np.any(fu):
                            a_max = min(a_max, np.min(tau * (zu2 - z)[fu] / dz[fu]))

                # Waechter-Biegler filter backtracking with one SOC attempt
                alpha = a_max
                soc_tried = False
                for _ in range(30):
                    xf_t = xf + alpha * dx
                    s_t = s + alpha * ds
                    theta_t, phi_t, r_t = trial_point(xf_t, s_t)
                    switching = (dphi < 0 and
                                 alpha * (-dphi) ** self.S_PHI
                                 > self.DELTA_SW * theta_k ** self.S_THETA
                                 and theta_k <= theta_min_f)
                    if switching:
                        if (np.isfinite(phi_t)
                                and phi_t <= phi_k + self.ETA * alpha * dphi
                                and filter_ok(theta_t, phi_t)):
                            accepted, f_type_step = True, True
                            break
                    elif filter_ok(theta_t, phi_t):
                        accepted, f_type_step = True, False
                        break
                    if (not soc_tried and alpha == a_max and theta_t >= theta_k
                            and np.isfinite(theta_t)):
                        # second-order correction on the constraint residuals
                        soc_tried = True
                        rhs2 = np.concatenate([np.zeros(n), -r_t])
                        rhs2[n:][self.ineq] += 0.0
                        sol2 = lu.solve(rhs2)
                        dxc = sol2[:n]
                        dsc = inv_Sig_s * sol2[n:][self.ineq]
                        with np.errstate(over="ignore", divide="ignore"):
                            a_c = 1.0
                            for z, dz, zl2, zu2 in ((xf_t, dxc, xl, xu),
                                                    (s_t, dsc, sl, su)):
                                neg = dz < 0
                                fl = neg & np.isfinite(zl2)
                                if np.any(fl):
                                    a_c = min(a_c, np.min(tau * (z - zl2)[fl] / -dz[fl]))
                                pos = dz > 0
                                fu = pos & np.isfinite(zu2)
                                if np.any(fu):
                                    a_c = min(a_c, np.min(tau * (zu2 - z)[fu] / dz[fu]))
                        xf_c = xf_t + a_c * dxc
                        s_c = s_t + a_c * dsc
                        theta_c, phi_c, _ = trial_point(xf_c, s_c)
                        ok = (phi_c <= phi_k + self.ETA * alpha * dphi
                              and filter_ok(theta_c, phi_c)) if switching else \
                            filter_ok(theta_c, phi_c)
                        if ok:
                            xf_t, s_t = xf_c, s_c
                            theta_t, phi_t = theta_c, phi_c
                            accepted, f_type_step = True, switching
                            break
                    alpha *= 0.5
                    if alpha < 1e-12:
                        break
                if accepted:
                    break
                delta = self.DELTA0 if delta == 0.0 else delta * 10.0
            if singular:
                status = "failed"
                message = "KKT system singular despite regularization"
                break
            delta_last = delta

            if not accepted:
                # feasibility restoration: pull theta down, reset slacks/duals
                restorations += 1
                if restorations > 4:
                    status = "max_iter"
                    message = "line search stalled after restoration attempts"
                    break
                x_new, rest_ok = self._restoration(x, mu)
                if not rest_ok:
                    status = "infeasible"
                    message = "feasibility restoration failed"
                    break
                x = x_new
                xf = x[self.free]
                cs = self.row_scale * p.constraints(x)
                s = np.clip(cs[self.ineq],
                            *self._push_bounds(sl, su, k1=1e-4, k2=1e-4))
                y = np.zeros(m)
                vsl = np.clip(np.where(np.isfinite(sl), mu / np.maximum(s - sl, 1e-8),
                                       0.0), 0.0, 1e10)
                vsu = np.clip(np.where(np.isfinite(su), mu / np.maximum(su - s, 1e-8),
                                       0.0), 0.0, 1e10)
                vxl = np.clip(np.where(np.isfinite(xl), mu / np.maximum(xf - xl, 1e-8),
                                       0.0), 0.0, 1e10)
                vxu = np.clip(np.where(np.isfinite(xu), mu / np.maximum(xu - xf, 1e-8),
                                       0.0), 0.0, 1e10)
                filt = None
                it += 1
                continue

            # accepted: update the filter for non-f-type steps
            if not f_type_step:
                filt.append(((1 - self.G_THETA) * theta_k,
                             phi_k - self.G_PHI * theta_k))
                if len(filt) > 200:
                    filt = filt[-200:]

            # dual steps with their own fraction-to-boundary
            dvxl = np.where(np.isfinite(xl), -vxl / np.maximum(xf - xl, 1e-300) * dx
                            + (bl - vxl), 0.0)
            dvxu = np.where(np.isfinite(xu), vxu / np.maximum(xu - xf, 1e-300) * dx
                            + (bu - vxu), 0.0)
            dvsl = np.where(np.isfinite(sl), -vsl / np.maximum(s - sl, 1e-300) * ds
                            + (bsl - vsl), 0.0)
            dvsu = np.where(np.isfinite(su), vsu / np.maximum(su - s, 1e-300) * ds
                            + (bsu - vsu), 0.0)
            a_dual = 1.0
            for v, dv in ((vxl, dvxl), (vxu, dvxu), (vsl, dvsl), (vsu, dvsu)):
                neg = dv < 0
                act = neg & (v > 0)
                if np.any(act):
                    a_dual = min(a_dual, np.min(tau * v[act] / -dv[act]))

            xf, s = xf_t, s_t   # includes any second-order correction
            x[self.free] = xf
            y = y + alpha * dy
            vxl = vxl + a_dual * dvxl
            vxu = vxu + a_dual * dvxu
            vsl = vsl + a_dual * dvsl
            vsu = vsu + a_dual * dvsu
            # multiplier safeguard around mu/(z - l)
            for v, z, zl2, lower in ((vxl, xf, xl, True), (vsl, s, sl, True)):
                fl = np.isfinite(zl2)
                if np.any(fl):
                    lo = mu / (self.KAPPA_SIGMA * np.maximum((z - zl2)[fl], 1e-300))
                    hi = self.KAPPA_SIGMA * mu / np.maximum((z - zl2)[fl], 1e-300)
                    v[fl] = np.clip(v[fl], lo, hi)
            for v, z, zu2 in ((vxu, xf, xu), (vsu, s, su)):
                fu = np.isfinite(zu2)
                if np.any(fu):
                    lo = mu / (self.KAPPA_SIGMA * np.maximum((zu2 - z)[fu], 1e-300))
                    hi = self.KAPPA_SIGMA * mu / np.maximum((zu2 - z)[fu], 1e-300)
                    v[fu] = np.clip(v[fu], lo, hi)
            it += 1
            if o.verbose:
                print(f"  it {it:4d}  mu {mu:9.2e}  f {f_val:12.5e}  "
                      f"viol {viol_raw:9.2e}  E0 {E_0:9.2e}  alpha {alpha:8.2e}  "
                      f"amax {a_max:8.2e}  delta {delta:8.2e}  dphi {dphi:9.2e}")

        # wrap up: fall back to the best iterate unless we ended optimal
        viol = self._raw_violation(p.constraints(x))
        if status != "optimal" and best is not None and best[0][0] < 0.5 * viol:
            x, y = best[1], best[2]
            viol = best[0][0]
        if status not in ("optimal", "failed"):
            if viol <= max(1e-6, o.feasibility_tolerance):
                status = "feasible"
            elif viol > 1e-2:
                status = "infeasible"
            else:
                status = "max_iter"
        mults = self._export_multipliers(y, vxl, vxu, vsl, vsu)
        comp = p.comp_residual(x) if hasattr(p, "comp_residual") else 0.0
        return SolveResult(
            status=status, x=x, objective=float(self.p.objective(x)),
            comp_residual=comp, cons_violation=viol,
            kkt_residual=self._kkt_unscaled(x, mults),
            iterations=it, wall_time=time.perf_counter() - t_start, mu=mu,
            multipliers=mults, message=message)

    # -------------------------------------------------------------- helpers

    @staticmethod
    def _push_bounds(zl, zu, k1=1e-2, k2=1e-2):
        """Strict-interior clip limits for quantities bounded by (zl, zu)."""
        fl, fu = np.isfinite(zl), np.isfinite(zu)
        both = fl & fu
        w = np.where(both, np.where(both, zu, 0.0) - np.where(both, zl, 0.0), np.inf)
        lo = np.full(zl.shape, -np.inf)
        hi = np.full(zu.shape, np.inf)
        lo[fl] = zl[fl] + np.minimum(k1 * np.maximum(1, np.abs(zl[fl])), k2 * w[fl])
        hi[fu] = zu[fu] - np.minimum(k1 * np.maximum(1, np.abs(zu[fu])), k2 * w[fu])
        # degenerate narrow boxes: fall back to the midpoint
        bad = lo > hi
        if np.any(bad):
            mid = 0.5 * (zl[bad] + zu[bad])
            lo[bad] = hi[bad] = mid
        return lo, hi

    @classmethod
    def _push_interior(cls, z, zl, zu, k1=1e-2, k2=1e-2):
        lo, hi = cls._push_bounds(zl, zu, k1, k2)
        return np.clip(z, lo, hi)

    def _raw_violation(self, c_raw):
        lo = np.maximum(self.cl - c_raw, 0.0)
        hi = np.maximum(c_raw - self.cu, 0.0)
        v = 0.0
        if c_raw.size:
            v = float(np.max(np.maximum(lo, hi)))
        return v

    @staticmethod
    def _barrier_phi(f, xf, xl, xu, s, sl, su, mu):
        """Barrier objective (no infeasibility term; the filter carries that)."""
        val = f
        for z, zl2, zu2 in ((xf, xl, xu), (s, sl, su)):
            fl = np.isfinite(zl2)
            fu = np.isfinite(zu2)
            dl = (z - zl2)[fl]
            du = (zu2 - z)[fu]
            if np.any(dl <= 0) or np.any(du <= 0):
                return np.inf
            val -= mu * (np.sum(np.log(dl)) + np.sum(np.log(du)))
        return val

    def _restoration(self, x, mu):
        """Levenberg-Marquardt descent on the raw constraint violation.

        Works on the unscaled rows clipped against [cl, cu], keeping x inside
        its bounds; returns (x_new, ok). Used when the filter line search can
        make no progress from a badly infeasible point.
        """
        p = self.p
        x = x.copy()
        lam = 1e-4

        def viol_vec(xx):
            c = p.constraints(xx)
            return np.maximum(c - self.cu, 0.0) - np.maximum(self.cl - c, 0.0)

        v = viol_vec(x)
        theta = 0.5 * float(v @ v)
        theta_enter = theta
        if theta <= 0:
            return x, True
        lo, hi = self._push_bounds(self.lb[self.free], self.ub[self.free],
                                   k1=1e-8, k2=1e-8)
        for _ in range(30):
            J = p.jacobian(x).tocsr()[:, self.free]
            active = np.abs(v) > 0
            Ja = J[active]
            va = v[active]
            if va.size == 0:
                break
            Hn = (Ja.T @ Ja + sp.diags(np.full(self.nf, lam))).tocsc()
            try:
                step = spla.splu(Hn).solve(-Ja.T @ va)
            except RuntimeError:
                lam *= 10.0
                continue
            improved = False
            a = 1.0
            for _ in range(20):
                x_t = x.copy()
                x_t[self.free] = np.clip(x[self.free] + a * step, lo, hi)
                v_t = viol_vec(x_t)
                th_t = 0.5 * float(v_t @ v_t)
                if th_t < theta * (1 - 1e-6 * a):
                    x, v, theta = x_t, v_t, th_t
                    improved = True
                    break
                a *= 0.5
            if improved:
                lam = max(1e-10, lam / 3.0)
            else:
                lam *= 10.0
                if lam > 1e8:
                    break
            if theta <= max(0.25 * theta_enter, 1e-16):
                break
        ok = theta < theta_enter * 0.999 or theta <= 1e-16
        return x, ok

    def _export_multipliers(self, y, vxl, vxu, vsl, vsu):
        y_un = self.row_scale * y / self.sig_f
        zl = np.zeros(self.n_full)
        zu = np.zeros(self.n_full)
        zl[self.free] = vxl / self.sig_f
        zu[self.free] = vxu / self.sig_f
        return dict(y=y_un, z_lower=zl, z_upper=zu,
                    s_lower=vsl / self.sig_f, s_upper=vsu / self.sig_f)

    def _kkt_unscaled(self, x, mults):
        g = self.p.grad(x)
        J = self.p.jacobian(x)
        r = g + J.T @ mults["y"] - mults["z_lower"] + mults["z_upper"]
        # slack stationarity folds into the row duals; report the x-block norm
        return float(np.max(np.abs(r[self.free]))) if self.free.size else 0.0


def solve_nlp(problem, start, options: SolveOptions | None = None,
              warm: bool = False) -> SolveResult:
    """Solve one NLP from `start` (projected into bounds if outside).

    warm=True keeps the start glued to its bounds and opens the barrier at
    mu0_warm; use it when `start` is a solution of a nearby problem.
    """
    options = options or SolveOptions()
    return _InteriorPoint(problem, options).solve(np.asarray(start, float), warm=warm)


def _true_comp(problem, x) -> float:
    return problem.comp_residual(x) if hasattr(problem, "comp_residual") else 0.0


def solve_mpec(problem, options: SolveOptions | None = None,
               start: np.ndarray | None = None,
               warm_first: bool = False) -> SolveResult:
    """Homotopy driver over the problem's registered complementarity pairs.

    epsilon strategy: product bounds follow options.epsilon_schedule.
    penalty strategy: rho follows options.rho_schedule until the true
    complementarity residual reaches options.comp_target; exhausting the
    schedule without reaching it is reported honestly via status/message.
    """
    options = options or SolveOptions()
    if start is None:
        start = make_initial(problem, options)
    if getattr(problem, "n_pairs", 0) == 0:
        return solve_nlp(problem, start, options, warm=warm_first)

    use_products = getattr(problem, "use_products", False)
    schedule = list(options.epsilon_schedule if use_products
                    else options.rho_schedule)
    x = np.asarray(start, float)
    if use_products and schedule:
        # bridge from the warm start's complementarity level down to the
        # schedule head with geometric stages, so no single tightening step
        # asks for a global trajectory reshape
        comp0 = _true_comp(problem, x)
        head = schedule[0]
        if comp0 > 3.0 * head:
            bridge = []
            level = 0.4 * comp0
            while level > 3.0 * head and len(bridge) < 12:
                bridge.append(level)
                level *= 0.25
            schedule = bridge + schedule
    stages = []
    result = None
    kick_rng = np.random.default_rng(options.seed + 1)
    for k, param in enumerate(schedule):
        last = k == len(schedule) - 1
        if use_products:
            # margin under the stage value: the homotopy rides the product
            # bound, so the applied bound keeps the true residual at or
            # below the advertised epsilon even if the stage exits early;
            # the final stage gets a 2x margin
            problem.set_epsilon(param * (0.5 if last else 0.98))
        else:
            problem.set_penalty(param)
        stage_opts = options
        if k > 0 or warm_first:
            stage_opts = replace(options,
                                 mu0_warm=min(options.mu0_warm,
                                              0.1 * param if use_products else
                                              options.mu0_warm))
        result = solve_nlp(problem, x, stage_opts, warm=(k > 0 or warm_first))
        result.stage = k
        if (not use_products and result.success
                and result.comp_residual > options.comp_target):
            # bilinear penalty surfaces carry saddles that attract Newton;
            # escalating deterministic kicks escape the basin and the best
            # complementarity-satisfying candidate (by objective) wins
            candidates = [result]
            for scale in (0.01, 0.05, 0.25):
                xk = result.x + scale * np.maximum(1.0, np.abs(result.x)) \
                    * kick_rng.standard_normal(result.x.size)
                r2 = solve_nlp(problem, xk, options, warm=True)
                if r2.success and (r2.comp_residual <= options.comp_target
                                   or r2.comp_residual < 0.1 * result.comp_residual):
                    r2.stage = k
                    candidates.append(r2)
            good = [r for r in candidates if r.comp_residual <= options.comp_target]
            if good:
                result = min(good, key=lambda r: r.objective)
            else:
                result = min(candidates, key=lambda r: r.comp_residual)
        stages.append((param, result.status, result.comp_residual))
        x = result.x
        if result.status in ("infeasible", "failed"):
            result.message = (f"homotopy stage {k} (parameter {param:g}) "
                              f"ended with status {result.status}")
            break
        if not use_products and result.comp_residual <= options.comp_target:
            break
    if (use_products and result is not None
            and result.status in ("max_iter", "feasible")):
        # one polish pass at the final bound often closes the last decade
        r3 = solve_nlp(problem, result.x, options, warm=True)
        if r3.status == "optimal" or (r3.cons_violation < result.cons_violation
                                      and r3.success):
            r3.stage = result.stage
            stages.append((schedule[-1], "polish:" + r3.status, r3.comp_residual))
            result = r3
            x = result.x
    comp = _true_comp(problem, x)
    result.comp_residual = comp
    result.stage_results = stages
    if result.status == "optimal":
        target = options.comp_target if not use_products else schedule[-1]
        if comp > target * (1 + 1e-4) + 1e-12:
            result.status = "feasible"
            result.message = (f"complementarity residual {comp:.3e} above "
                              f"target {target:.3e} after schedule")
    return result


def make_initial(problem, options: SolveOptions | None = None) -> np.ndarray:
    """Seeded start: state variables uniform in init_range, the rest at the
    fill value, element durations at nominal.

    The definitional slack copies (gaps, tangential speeds, force copies and
    their per-element aggregates) are layout artifacts, not protocol
    variables; they are initialized consistently with the sampled states so
    the start does not carry artificial constraint violation.
    """
    options = options or SolveOptions()
    rng = np.random.default_rng(options.seed)
    fill = options.init_fill
    x = np.full(problem.n, fill)
    lay = getattr(problem, "layout", None)
    if lay is not None:
        lo, hi = options.init_range
        x[lay.iq] = rng.uniform(lo, hi, lay.iq.shape)
        x[lay.iqd] = rng.uniform(lo, hi, lay.iqd.shape)
        x[lay.ih] = problem.options.h_nominal
        if lay.hybrid:
            x[lay.imesh_qd] = rng.uniform(lo, hi, lay.imesh_qd.shape)
        model = problem.model
        N, K, H = lay.N, lay.K, lay.H
        P = N * K
        Qp = x[lay.iq].transpose(0, 2, 1).reshape(P, H)
        QDp = x[lay.iqd].transpose(0, 2, 1).reshape(P, H)
        Q0 = np.empty((N, H))
        Q0[0] = problem.q0
        if N > 1:
            Q0[1:] = x[lay.iq][:-1, :, -1]
        # accelerations consistent with the sampled states and fill-valued
        # forces/controls, so the dynamics rows start satisfied
        rhs = -model.bias(Qp, QDp)
        if lay.U:
            rhs += np.full((P, lay.U), fill) @ model.input_map.T
        for c, contact in enumerate(model.contacts):
            rhs += contact.Jn_batch(Qp) * fill
            if contact.mu > 0 and contact.tangent_jacobian is not None:
                pass  # tangential fills cancel (lp == lm at init)
        Ms = model.mass_matrix(Qp)
        qdd = np.linalg.solve(Ms, rhs[..., None])[..., 0]
        x[lay.iqdd] = qdd.reshape(N, K, H).transpose(0, 2, 1)
        for c, contact in enumerate(model.contacts):
            mu = contact.mu
            gaps = contact.gap_batch(Qp).reshape(N, K)
            psis = contact.tangential_velocity(Qp, QDp).reshape(N, K)
            gam = np.abs(psis) + fill
            lam_n = np.full((N, K), fill)
            lam_t = mu * fill / 4.0
            x[lay.iln[:, c, :]] = lam_n
            x[lay.ilp[:, c, :]] = lam_t
            x[lay.ilm[:, c, :]] = lam_t
            x[lay.islk["gap"][:, c, :]] = np.maximum(gaps, fill)
            x[lay.islk["gam"][:, c, :]] = gam
            x[lay.islk["sp"][:, c, :]] = gam + psis
            x[lay.islk["sm"][:, c, :]] = gam - psis
            x[lay.islk["fn"][:, c, :]] = lam_n
            x[lay.islk["cone"][:, c, :]] = mu * lam_n - 2 * lam_t
            x[lay.islk["fxp"][:, c, :]] = lam_t
            x[lay.islk["fxm"][:, c, :]] = lam_t
            gap0 = contact.gap_batch(Q0)
            for fam in ("gap", "gam", "sp", "sm", "fn", "cone", "fxp", "fxm"):
                s = x[lay.islk[fam][:, c, :]].sum(axis=1)
                if fam == "gap":
                    s = s + np.maximum(gap0, 0.0)
                x[lay.iprm[fam][:, c]] = np.maximum(s, 0.0)
    lo_b = np.where(np.isfinite(problem.lb), problem.lb, -np.inf)
    hi_b = np.where(np.isfinite(problem.ub), problem.ub, np.inf)
    return np.clip(x, lo_b, hi_b)


def two_stage_solve(model, t_options, s_options: SolveOptions | None = None
                    ) -> SolveResult:
    """Feasibility stage with fixed element durations, then the full problem.

    Stage 1 solves the no-cost problem at a loose relaxation with every h_i
    pinned at T/N; its solution seeds stage 2, which restores the objective,
    frees h within its bounds, and runs the full homotopy.
    """
    from dataclasses import replace as drep
    from .transcribe import NlpProblem

    s_options = s_options or SolveOptions()
    # stage 1: no cost beyond a small contact-force regularizer, fixed
    # element durations, loosely epsilon-relaxed complementarity regardless
    # of the stage-2 strategy. The regularizer prices forces acting across
    # open gaps, which a pure feasibility search would exploit as free
    # actuation and hand stage 2 a nonphysical seed.
    stage1_topts = drep(t_options, objective="feasibility", h_fixed=True,
                        mpec_strategy="epsilon",
                        force_reg=max(t_options.force_reg, 1e-3))
    p1 = NlpProblem(model, stage1_topts)
    x0 = make_initial(p1, s_options)
    # loose enough that transient mode-inconsistent iterates can pass; the
    # stage-2 homotopy owns the actual tightening
    loose = (s_options.stage1_parameter if s_options.stage1_parameter is not None
             else 1000.0)
    if p1.n_pairs:
        p1.set_epsilon(loose)
    o1 = s_options if s_options.stage1_max_iterations is None else \
        replace(s_options, max_iterations=s_options.stage1_max_iterations)
    r1 = solve_nlp(p1, x0, o1)
    if r1.status in ("infeasible", "failed"):
        r1.message = f"stage 1 (feasibility seed) failed: {r1.message or r1.status}"
        r1.stage = 0
        return r1

    p2 = NlpProblem(model, t_options)
    # map stage-1 point onto stage-2 problem (identical layout)
    r2 = solve_mpec(p2, s_options, start=r1.x, warm_first=True)
    r2.stage_results = [("stage1", r1.status, r1.comp_residual)] + \
        (r2.stage_results or [])
    r2.problem = p2
    return r2


def kkt_residual(problem, result: SolveResult) -> float:
    """Independent stationarity check from the returned multipliers."""
    x = result.x
    mults = result.multipliers
    g = problem.grad(x)
    J = problem.jacobian(x)
    r = g + J.T @ mults["y"] - mults["z_lower"] + mults["z_upper"]
    free = problem.lb != problem.ub
    return float(np.max(np.abs(r[free]))) if np.any(free) else 0.0
