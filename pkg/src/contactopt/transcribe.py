"""Transcription of contact dynamics into an MPEC/NLP.

Decision variables per element i (width W, element-major layout):

    q, qd, qdd        H x K each (values at the K Radau nodes)
    lam_n/lam_p/lam_m C x K     (normal / tangential+ / tangential- forces)
    u                 U         (piecewise constant; U x K per-collocation)
    h                 1         (element duration)
    slacks            8 x C x K (gap, gam, s+, s-, fn, cone, fxp, fxm copies)
    aggregates        8 x C     (per-element sums of the families above)

so W = K(3H + 3C) + U + 1 + 8C(K+1) in the relaxed planar-friction layout.
Element-start values are shared structurally with the previous element's
final node (Radau places a node at 1), which enforces mesh continuity for q
always and for qd in relaxed mode; the initial state is a fixed parameter.

Contact complementarity uses per-element aggregated slacks. The registered
normal pair couples the force aggregate of element i with the gap aggregate
over element i+1 (including its start mesh value, i.e. the end of element i):
force during an element demands contact at that element's end and through the
following element. Forces may therefore act while the gap is still closing,
which is exactly how the finite-element impulse approximates the impact as
h -> h_L. Friction pairs aggregate within the same element.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .colloc import CollocationScheme, make_scheme
from .models import ModelSpec

SLACK_FAMILIES = ("gap", "gam", "sp", "sm", "fn", "cone", "fxp", "fxm")

__all__ = [
    "TranscriptionOptions",
    "DecisionLayout",
    "NlpProblem",
    "build_layout",
    "build_problem",
    "apply_mpec_strategy",
    "variable_count_formula",
    "constraint_count_formula",
    "SLACK_FAMILIES",
]


def variable_count_formula(N: int, K: int, H: int, C: int, U: int) -> int:
    """Core decision-variable count in the relaxed planar-friction layout."""
    return N * (K * (3 * H + 3 * C) + U + 1 + 8 * C * (K + 1))


def constraint_count_formula(N: int, K: int, H: int, C: int) -> int:
    """Published core-constraint count N(3KH + C(20+8K)); see as_built variant."""
    return N * (3 * K * H + C * (20 + 8 * K))


def constraint_count_as_built(N: int, K: int, H: int, C: int,
                              strategy: str = "epsilon") -> int:
    """Core rows this transcription emits: N(3KH + C(7K+12)) in epsilon mode.

    Per contact and element: 7K slack definitions (the gamma family has no
    independent definition), 8 aggregate definitions, and 4 complementarity
    products (dropped in penalty mode).
    """
    per_contact = 7 * K + 8 + (4 if strategy == "epsilon" else 0)
    return N * (3 * K * H + C * per_contact)


@dataclass
class TranscriptionOptions:
    """Mesh, order, formulation, and boundary data for one transcription."""

    N: int
    K: int
    T: float
    h_bounds: tuple[float, float] | None = None   # absolute (h_L, h_U)
    h_bound_fraction: float | None = 0.2          # used when h_bounds is None
    contact_formulation: str = "relaxed"          # relaxed | hybrid
    mpec_strategy: str = "epsilon"                # epsilon | penalty
    control_parameterization: str = "piecewise_constant"
    objective: str = "min_effort"                 # min_effort | min_time | feasibility
    q0: np.ndarray | None = None
    qd0: np.ndarray | None = None
    q_final: np.ndarray | None = None             # NaN entries left free
    qd_final: np.ndarray | None = None
    fix_total_time: bool = True
    h_fixed: bool = False                         # pin every h_i at nominal
    # small quadratic contact-force regularization; keeps feasibility-phase
    # trajectories physical by pricing forces that act across open gaps
    force_reg: float = 0.0

    @property
    def h_nominal(self) -> float:
        return self.T / self.N

    def resolved_h_bounds(self) -> tuple[float, float]:
        if self.h_fixed:
            return self.h_nominal, self.h_nominal
        if self.h_bounds is not None:
            h_lo, h_up = self.h_bounds
        else:
            f = self.h_bound_fraction if self.h_bound_fraction is not None else 0.2
            h_lo, h_up = self.h_nominal * (1 - f), self.h_nominal * (1 + f)
        return float(h_lo), float(h_up)

    def validate(self, model: ModelSpec) -> None:
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if not 1 <= self.K <= 5:
            raise ValueError(f"K must be in 1..5, got {self.K}")
        if self.T <= 0:
            raise ValueError(f"T must be positive, got {self.T}")
        h_lo, h_up = self.resolved_h_bounds()
        if not (0 < h_lo <= self.h_nominal * (1 + 1e-12) and self.h_nominal <= h_up * (1 + 1e-12)):
            raise ValueError(
                f"need 0 < h_L <= T/N <= h_U, got h_L={h_lo}, T/N={self.h_nominal}, h_U={h_up}")
        if self.contact_formulation not in ("relaxed", "hybrid"):
            raise ValueError(f"unknown contact_formulation {self.contact_formulation!r}")
        if self.mpec_strategy not in ("epsilon", "penalty"):
            raise ValueError(f"unknown mpec_strategy {self.mpec_strategy!r}")
        if self.control_parameterization not in ("piecewise_constant", "per_collocation"):
            raise ValueError(
                f"unknown control_parameterization {self.control_parameterization!r}")
        if self.objective not in ("min_effort", "min_time", "feasibility"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.objective == "min_effort" and model.n_u == 0:
            raise ValueError("min_effort objective requires a model with inputs")
        if self.q0 is None or self.qd0 is None:
            raise ValueError("initial state (q0, qd0) is required")
        if len(self.q0) != model.n_q or len(self.qd0) != model.n_q:
            raise ValueError("initial state dimension mismatch")


class DecisionLayout:
    """Typed index map into the flat decision vector."""

    def __init__(self, model: ModelSpec, options: TranscriptionOptions):
        self.N, self.K = options.N, options.K
        self.H, self.C = model.n_q, model.n_c
        self.U = model.n_u
        self.per_collocation = options.control_parameterization == "per_collocation"
        self.hybrid = options.contact_formulation == "hybrid"
        N, K, H, C, U = self.N, self.K, self.H, self.C, self.U

        self.u_size = U * K if self.per_collocation else U
        W = 3 * H * K + 3 * C * K + self.u_size + 1 + 8 * C * K + 8 * C
        self.W = W
        off = 0
        self.off_q, off = off, off + H * K
        self.off_qd, off = off, off + H * K
        self.off_qdd, off = off, off + H * K
        self.off_ln, off = off, off + C * K
        self.off_lp, off = off, off + C * K
        self.off_lm, off = off, off + C * K
        self.off_u, off = off, off + self.u_size
        self.off_h, off = off, off + 1
        self.off_slk, off = off, off + 8 * C * K
        self.off_prm, off = off, off + 8 * C
        assert off == W

        self.n_core = N * W
        base = np.arange(N)[:, None, None] * W

        def grid3(offset, d1, d2):
            return (base + offset
                    + np.arange(d1)[None, :, None] * d2
                    + np.arange(d2)[None, None, :])

        self.iq = grid3(self.off_q, H, K)            # (N, H, K)
        self.iqd = grid3(self.off_qd, H, K)
        self.iqdd = grid3(self.off_qdd, H, K)
        self.iln = grid3(self.off_ln, C, K)          # (N, C, K)
        self.ilp = grid3(self.off_lp, C, K)
        self.ilm = grid3(self.off_lm, C, K)
        if self.per_collocation:
            self.iu = grid3(self.off_u, U, K)        # (N, U, K)
        else:
            self.iu = (np.arange(N)[:, None] * W + self.off_u
                       + np.arange(U)[None, :])      # (N, U)
        self.ih = np.arange(N) * W + self.off_h      # (N,)
        self.islk = {}
        for fi, fam in enumerate(SLACK_FAMILIES):
            self.islk[fam] = (base + self.off_slk
                              + np.arange(C)[None, :, None] * 8 * K + fi * K
                              + np.arange(K)[None, None, :])  # (N, C, K)
        self.iprm = {}
        for fi, fam in enumerate(SLACK_FAMILIES):
            self.iprm[fam] = (np.arange(N)[:, None] * W + self.off_prm
                              + np.arange(C)[None, :] * 8 + fi)  # (N, C)

        # hybrid extras appended after the core block
        self.n_extra = 0
        if self.hybrid:
            nm = N - 1
            self.imesh_qd = self.n_core + np.arange(nm * H).reshape(nm, H)
            self.iimp_n = self.n_core + nm * H + np.arange(nm * C).reshape(nm, C)
            self.iimp_p = self.iimp_n + nm * C
            self.iimp_m = self.iimp_p + nm * C
            self.n_extra = nm * (H + 3 * C)
        self.n = self.n_core + self.n_extra

    def q_end_idx(self) -> np.ndarray:
        """Indices of the final collocation node of the last element, per state."""
        return self.iq[-1, :, -1]

    def qd_end_idx(self) -> np.ndarray:
        return self.iqd[-1, :, -1]

    def describe(self) -> dict:
        return dict(N=self.N, K=self.K, H=self.H, C=self.C, U=self.U,
                    element_width=self.W, n_core=self.n_core,
                    n_extra=self.n_extra, n=self.n)


def build_layout(model: ModelSpec, options: TranscriptionOptions) -> DecisionLayout:
    options.validate(model)
    return DecisionLayout(model, options)


class _Block:
    """One residual/Jacobian segment: fixed rows/cols, value fill at eval."""

    __slots__ = ("rows", "cols", "fill")

    def __init__(self, rows, cols, fill):
        self.rows = np.asarray(rows, dtype=np.int64).ravel()
        self.cols = np.asarray(cols, dtype=np.int64).ravel()
        self.fill = fill
        assert self.rows.size == self.cols.size


class NlpProblem:
    """Sparse NLP with registered complementarity pairs.

    Exposes the evaluator surface consumed by the interior-point solver:
    bounds (lb, ub), row bounds (cl, cu), objective/grad, constraints/
    jacobian (fixed sparsity), lag_hess, and the pair list driving the
    epsilon/penalty homotopy.
    """

    def __init__(self, model: ModelSpec, options: TranscriptionOptions,
                 scheme: CollocationScheme | None = None):
        options.validate(model)
        self.model = model
        self.options = options
        self.scheme = scheme or make_scheme(options.K)
        self.layout = DecisionLayout(model, options)
        self.q0 = np.asarray(options.q0, dtype=float)
        self.qd0 = np.asarray(options.qd0, dtype=float)
        self.penalty_rho = 0.0
        self.epsilon = np.inf
        self._build()

    # ------------------------------------------------------------ build

    def _build(self):
        lay, model, opts = self.layout, self.model, self.options
        N, K, H, C, U = lay.N, lay.K, lay.H, lay.C, lay.U
        scheme = self.scheme
        self.n = lay.n

        # ---------------- variable bounds
        lb = np.full(self.n, -np.inf)
        ub = np.full(self.n, np.inf)
        if model.q_bounds is not None:
            qlo, qup = model.q_bounds
            for h in range(H):
                lb[lay.iq[:, h, :]] = qlo[h]
                ub[lay.iq[:, h, :]] = qup[h]
        if model.qd_bounds is not None:
            vlo, vup = model.qd_bounds
            for h in range(H):
                lb[lay.iqd[:, h, :]] = vlo[h]
                ub[lay.iqd[:, h, :]] = vup[h]
        for arr in (lay.iln, lay.ilp, lay.ilm):
            lb[arr] = 0.0
        if U and model.u_bounds is not None:
            ulo, uup = model.u_bounds
            for l in range(U):
                sel = lay.iu[:, l] if not lay.per_collocation else lay.iu[:, l, :]
                lb[sel] = ulo[l]
                ub[sel] = uup[l]
        h_lo, h_up = opts.resolved_h_bounds()
        lb[lay.ih] = h_lo
        ub[lay.ih] = h_up
        for fam in SLACK_FAMILIES:
            lb[lay.islk[fam]] = 0.0
            lb[lay.iprm[fam]] = 0.0
        if lay.hybrid:
            for arr in (lay.iimp_n, lay.iimp_p, lay.iimp_m):
                lb[arr] = 0.0
        # frictionless contacts: the tangential force set {lp, lm >= 0,
        # lp + lm <= 0} has empty interior, fatal for a barrier method; pin
        # the whole tangential block at its only feasible value instead
        for c, contact in enumerate(model.contacts):
            if contact.mu == 0.0:
                for arr in (lay.ilp[:, c, :], lay.ilm[:, c, :],
                            lay.islk["cone"][:, c, :], lay.islk["fxp"][:, c, :],
                            lay.islk["fxm"][:, c, :], lay.iprm["cone"][:, c],
                            lay.iprm["fxp"][:, c], lay.iprm["fxm"][:, c]):
                    lb[arr] = 0.0
                    ub[arr] = 0.0
                if lay.hybrid:
                    for arr in (lay.iimp_p[:, c], lay.iimp_m[:, c]):
                        lb[arr] = 0.0
                        ub[arr] = 0.0
        # terminal conditions as variable fixings on the last node
        if opts.q_final is not None:
            for h, v in enumerate(np.asarray(opts.q_final, float)):
                if np.isfinite(v):
                    lb[lay.iq[-1, h, -1]] = ub[lay.iq[-1, h, -1]] = v
        if opts.qd_final is not None:
            for h, v in enumerate(np.asarray(opts.qd_final, float)):
                if np.isfinite(v):
                    lb[lay.iqd[-1, h, -1]] = ub[lay.iqd[-1, h, -1]] = v
        self.lb, self.ub = lb, ub

        # ---------------- row layout
        self.row_blocks: dict[str, slice] = {}
        r = 0

        def add_block(name, count):
            nonlocal r
            self.row_blocks[name] = slice(r, r + count)
            r += count

        add_block("colloc_q", N * H * K)
        add_block("colloc_qd", N * H * K)
        add_block("dynamics", N * H * K)
        for c in range(C):
            for fam in ("gap", "sp", "sm", "fn", "cone", "fxp", "fxm"):
                add_block(f"c{c}_{fam}_def", N * K)
            add_block(f"c{c}_prime_def", 8 * N)
        self.use_products = opts.mpec_strategy == "epsilon"
        self._register_pairs()
        if self.use_products:
            add_block("products", self.n_pairs)
        if lay.hybrid:
            add_block("impact_momentum", (N - 1) * H)
            add_block("impulse_cone", (N - 1) * C)
        if opts.fix_total_time and opts.objective != "min_time" and not opts.h_fixed:
            add_block("total_time", 1)
        self.m = r

        cl = np.zeros(self.m)
        cu = np.zeros(self.m)
        if self.use_products:
            blk = self.row_blocks["products"]
            cl[blk] = -np.inf
            cu[blk] = self.epsilon if np.isfinite(self.epsilon) else np.inf
        if lay.hybrid:
            blk = self.row_blocks["impulse_cone"]
            cl[blk] = 0.0
            cu[blk] = np.inf
        if opts.fix_total_time and opts.objective != "min_time" and not opts.h_fixed:
            blk = self.row_blocks["total_time"]
            cl[blk] = cu[blk] = opts.T
        self.cl, self.cu = cl, cu

        self._build_eval_plan()

    def _register_pairs(self):
        """Complementarity pairs as (variable, variable) index pairs."""
        lay = self.layout
        N, C, K = lay.N, lay.C, lay.K
        ia, ib, tags = [], [], []
        for c in range(C):
            # normal: force aggregate of element i vs gap aggregate over i+1;
            # last element pairs against the final-node gap slack.
            for i in range(N):
                a = lay.iprm["gap"][i + 1, c] if i + 1 < N else lay.islk["gap"][N - 1, c, K - 1]
                ia.append(a)
                ib.append(lay.iprm["fn"][i, c])
                tags.append(("normal", c, i))
            for i in range(N):
                ia.append(lay.iprm["cone"][i, c])
                ib.append(lay.iprm["gam"][i, c])
                tags.append(("cone", c, i))
            for i in range(N):
                ia.append(lay.iprm["fxp"][i, c])
                ib.append(lay.iprm["sp"][i, c])
                tags.append(("fxp", c, i))
            for i in range(N):
                ia.append(lay.iprm["fxm"][i, c])
                ib.append(lay.iprm["sm"][i, c])
                tags.append(("fxm", c, i))
        if lay.hybrid:
            for c in range(C):
                for i in range(N - 1):
                    # impulse at mesh i+1 (start of element i+1) vs contact
                    # through element i+1
                    ia.append(lay.iprm["gap"][i + 1, c])
                    ib.append(lay.iimp_n[i, c])
                    tags.append(("impulse", c, i + 1))
        self.pair_a = np.array(ia, dtype=np.int64)
        self.pair_b = np.array(ib, dtype=np.int64)
        self.pair_tags = tags
        self.n_pairs = len(ia)

    # ---------------------------------------------------- evaluation plan

    def _state(self, x: np.ndarray) -> dict:
        lay, model = self.layout, self.model
        N, K, H, C, U = lay.N, lay.K, lay.H, lay.C, lay.U
        st = {"x": x}
        Q = x[lay.iq]
        QD = x[lay.iqd]
        QDD = x[lay.iqdd]
        st["Q"], st["QD"], st["QDD"] = Q, QD, QDD
        Q0 = np.empty((N, H))
        Q0[0] = self.q0
        if N > 1:
            Q0[1:] = Q[:-1, :, -1]
        QD0 = np.empty((N, H))
        QD0[0] = self.qd0
        if N > 1:
            if lay.hybrid:
                QD0[1:] = x[lay.imesh_qd]
            else:
                QD0[1:] = QD[:-1, :, -1]
        st["Q0"], st["QD0"] = Q0, QD0
        P = N * K
        st["Qp"] = Q.transpose(0, 2, 1).reshape(P, H)
        st["QDp"] = QD.transpose(0, 2, 1).reshape(P, H)
        st["QDDp"] = QDD.transpose(0, 2, 1).reshape(P, H)
        st["LN"], st["LP"], st["LM"] = x[lay.iln], x[lay.ilp], x[lay.ilm]
        if U:
            if lay.per_collocation:
                st["Up"] = x[lay.iu].transpose(0, 2, 1).reshape(P, U)
            else:
                st["Up"] = np.repeat(x[lay.iu], K, axis=0)
            st["Uv"] = x[lay.iu]
        st["H"] = x[lay.ih]
        st["SLK"] = {fam: x[lay.islk[fam]] for fam in SLACK_FAMILIES}
        st["PRM"] = {fam: x[lay.iprm[fam]] for fam in SLACK_FAMILIES}
        st["M_b"] = model.mass_matrix(st["Qp"])
        st["bias_b"] = model.bias(st["Qp"], st["QDp"])
        st["gap"] = [c.gap_batch(st["Qp"]) for c in model.contacts]
        st["gap0"] = [c.gap_batch(Q0) for c in model.contacts]
        st["Jn"] = [c.Jn_batch(st["Qp"]) for c in model.contacts]
        st["Jn0"] = [c.Jn_batch(Q0) for c in model.contacts]
        st["Jt"] = [c.Jt_batch(st["Qp"]) for c in model.contacts]
        st["psi"] = [c.tangential_velocity(st["Qp"], st["QDp"])
                     for c in model.contacts]
        return st

    def _state_derivs(self, st: dict) -> None:
        model = self.model
        if model.d_Mqdd_dq is not None:
            st["dMa"] = model.d_Mqdd_dq(st["Qp"], st["QDDp"])
        if model.dbias_dq is not None:
            st["dbq"] = model.dbias_dq(st["Qp"], st["QDp"])
        if model.dbias_dqd is not None:
            st["dbqd"] = model.dbias_dqd(st["Qp"], st["QDp"])

    def _build_eval_plan(self):
        lay, model, opts = self.layout, self.model, self.options
        N, K, H, C, U = lay.N, lay.K, lay.H, lay.C, lay.U
        omega = self.scheme.omega
        rb = self.row_blocks

        res_fns = []       # (slice, fn(st) -> flat residual values)
        jac_blocks: list[_Block] = []

        def rowgrid(sl, d1, d2):
            start = sl.start
            return (start + np.arange(N)[:, None, None] * d1 * d2
                    + np.arange(d1)[None, :, None] * d2
                    + np.arange(d2)[None, None, :])

        # ---------------- collocation for q
        rq = rowgrid(rb["colloc_q"], H, K)  # (N,H,K)

        def f_colloc_q(st):
            rec = np.einsum("kj,nhj->nhk", omega, st["QD"])
            return (st["Q"] - st["Q0"][:, :, None] - st["H"][:, None, None] * rec).ravel()

        res_fns.append((rb["colloc_q"], f_colloc_q))
        jac_blocks.append(_Block(rq, lay.iq, lambda st: np.ones(N * H * K)))
        # d/dQD: -h * omega[k, j]
        rq_rep = np.repeat(rq[:, :, :, None], K, axis=3)
        cqd_rep = np.repeat(lay.iqd[:, :, None, :], K, axis=2)

        def f_cq_qd(st):
            # value at (row k, col j) is -h_i * omega[k, j]
            return (-st["H"][:, None, None, None]
                    * np.broadcast_to(omega[None, None], (N, H, K, K))).ravel()

        jac_blocks.append(_Block(rq_rep, cqd_rep, f_cq_qd))
        # d/dh: -(omega @ QD)
        jac_blocks.append(_Block(
            rq, np.broadcast_to(lay.ih[:, None, None], rq.shape),
            lambda st: (-np.einsum("kj,nhj->nhk", omega, st["QD"])).ravel()))
        # d/dQ0 for i >= 1
        if N > 1:
            prev_q = np.broadcast_to(lay.iq[:-1, :, -1][:, :, None], (N - 1, H, K))
            jac_blocks.append(_Block(rq[1:], prev_q,
                                     lambda st: np.full((N - 1) * H * K, -1.0)))

        # ---------------- collocation for qd
        rqd = rowgrid(rb["colloc_qd"], H, K)

        def f_colloc_qd(st):
            rec = np.einsum("kj,nhj->nhk", omega, st["QDD"])
            return (st["QD"] - st["QD0"][:, :, None] - st["H"][:, None, None] * rec).ravel()

        res_fns.append((rb["colloc_qd"], f_colloc_qd))
        jac_blocks.append(_Block(rqd, lay.iqd, lambda st: np.ones(N * H * K)))
        cqdd_rep = np.repeat(lay.iqdd[:, :, None, :], K, axis=2)
        jac_blocks.append(_Block(np.repeat(rqd[:, :, :, None], K, axis=3), cqdd_rep, f_cq_qd))
        jac_blocks.append(_Block(
            rqd, np.broadcast_to(lay.ih[:, None, None], rqd.shape),
            lambda st: (-np.einsum("kj,nhj->nhk", omega, st["QDD"])).ravel()))
        if N > 1:
            if lay.hybrid:
                prev_qd = np.broadcast_to(lay.imesh_qd[:, :, None], (N - 1, H, K))
            else:
                prev_qd = np.broadcast_to(lay.iqd[:-1, :, -1][:, :, None], (N - 1, H, K))
            jac_blocks.append(_Block(rqd[1:], prev_qd,
                                     lambda st: np.full((N - 1) * H * K, -1.0)))

        # ---------------- dynamics at collocation points
        P = N * K
        rdyn = (rb["dynamics"].start
                + np.arange(P)[:, None] * H + np.arange(H)[None, :])  # (P,H)
        ipq = lay.iq.transpose(0, 2, 1).reshape(P, H)
        ipqd = lay.iqd.transpose(0, 2, 1).reshape(P, H)
        ipqdd = lay.iqdd.transpose(0, 2, 1).reshape(P, H)
        B = model.input_map

        def f_dyn(st):
            r = np.einsum("phg,pg->ph", st["M_b"], st["QDDp"]) + st["bias_b"]
            if U:
                r -= st["Up"] @ B.T
            for c in range(C):
                lnp = st["LN"][:, c, :].reshape(P)
                r -= st["Jn"][c] * lnp[:, None]
                if model.contacts[c].tangent_jacobian is not None:
                    ltp = (st["LP"][:, c, :] - st["LM"][:, c, :]).reshape(P)
                    r -= st["Jt"][c] * ltp[:, None]
            return r.ravel()

        res_fns.append((rb["dynamics"], f_dyn))
        rdyn_hh = np.repeat(rdyn[:, :, None], H, axis=2)   # (P,H,H)
        cq_hh = np.repeat(ipq[:, None, :], H, axis=1)
        cqd_hh = np.repeat(ipqd[:, None, :], H, axis=1)
        cqdd_hh = np.repeat(ipqdd[:, None, :], H, axis=1)
        jac_blocks.append(_Block(rdyn_hh, cqdd_hh, lambda st: st["M_b"].ravel()))
        if model.d_Mqdd_dq is not None or model.dbias_dq is not None:
            def f_dyn_q(st):
                out = np.zeros((P, H, H))
                if "dMa" in st:
                    out += st["dMa"]
                if "dbq" in st:
                    out += st["dbq"]
                return out.ravel()
            jac_blocks.append(_Block(rdyn_hh, cq_hh, f_dyn_q))
        if model.dbias_dqd is not None:
            jac_blocks.append(_Block(rdyn_hh, cqd_hh, lambda st: st["dbqd"].ravel()))
        if U:
            if lay.per_collocation:
                ipu = lay.iu.transpose(0, 2, 1).reshape(P, U)
            else:
                ipu = np.repeat(lay.iu, K, axis=0)
            ru = np.repeat(rdyn[:, :, None], U, axis=2)
            cu_ = np.repeat(ipu[:, None, :], H, axis=1)
            jac_blocks.append(_Block(
                ru, cu_, lambda st: np.broadcast_to(-B[None], (P, H, U)).ravel()))
        for c in range(C):
            ipln = lay.iln[:, c, :].reshape(P)
            jac_blocks.append(_Block(
                rdyn, np.repeat(ipln[:, None], H, axis=1),
                lambda st, c=c: (-st["Jn"][c]).ravel()))
            if model.contacts[c].tangent_jacobian is not None:
                iplp = lay.ilp[:, c, :].reshape(P)
                iplm = lay.ilm[:, c, :].reshape(P)
                jac_blocks.append(_Block(
                    rdyn, np.repeat(iplp[:, None], H, axis=1),
                    lambda st, c=c: (-st["Jt"][c]).ravel()))
                jac_blocks.append(_Block(
                    rdyn, np.repeat(iplm[:, None], H, axis=1),
                    lambda st, c=c: (st["Jt"][c]).ravel()))

        # ---------------- contact slack definitions
        for c in range(C):
            mu = model.contacts[c].mu
            has_t = model.contacts[c].tangent_jacobian is not None
            rg = rowgrid(rb[f"c{c}_gap_def"], 1, K).reshape(N, K)

            def f_gapdef(st, c=c):
                return (st["SLK"]["gap"][:, c, :] - st["gap"][c].reshape(N, K)).ravel()

            res_fns.append((rb[f"c{c}_gap_def"], f_gapdef))
            jac_blocks.append(_Block(rg, lay.islk["gap"][:, c, :],
                                     lambda st: np.ones(N * K)))
            jac_blocks.append(_Block(
                np.repeat(rg.reshape(P)[:, None], H, axis=1), ipq,
                lambda st, c=c: (-st["Jn"][c]).ravel()))

            rsp = rowgrid(rb[f"c{c}_sp_def"], 1, K).reshape(N, K)
            rsm = rowgrid(rb[f"c{c}_sm_def"], 1, K).reshape(N, K)

            def f_spdef(st, c=c):
                return (st["SLK"]["sp"][:, c, :] - st["SLK"]["gam"][:, c, :]
                        - st["psi"][c].reshape(N, K)).ravel()

            def f_smdef(st, c=c):
                return (st["SLK"]["sm"][:, c, :] - st["SLK"]["gam"][:, c, :]
                        + st["psi"][c].reshape(N, K)).ravel()

            res_fns.append((rb[f"c{c}_sp_def"], f_spdef))
            res_fns.append((rb[f"c{c}_sm_def"], f_smdef))
            ones_nk = lambda st: np.ones(N * K)
            mones_nk = lambda st: -np.ones(N * K)
            jac_blocks.append(_Block(rsp, lay.islk["sp"][:, c, :], ones_nk))
            jac_blocks.append(_Block(rsp, lay.islk["gam"][:, c, :], mones_nk))
            jac_blocks.append(_Block(rsm, lay.islk["sm"][:, c, :], ones_nk))
            jac_blocks.append(_Block(rsm, lay.islk["gam"][:, c, :], mones_nk))
            if has_t:
                jac_blocks.append(_Block(
                    np.repeat(rsp.reshape(P)[:, None], H, axis=1), ipqd,
                    lambda st, c=c: (-st["Jt"][c]).ravel()))
                jac_blocks.append(_Block(
                    np.repeat(rsm.reshape(P)[:, None], H, axis=1), ipqd,
                    lambda st, c=c: (st["Jt"][c]).ravel()))

            for fam, src in (("fn", lay.iln), ("fxp", lay.ilp), ("fxm", lay.ilm)):
                rf = rowgrid(rb[f"c{c}_{fam}_def"], 1, K).reshape(N, K)

                def f_forcedef(st, c=c, fam=fam):
                    lam = {"fn": st["LN"], "fxp": st["LP"], "fxm": st["LM"]}[fam]
                    return (st["SLK"][fam][:, c, :] - lam[:, c, :]).ravel()

                res_fns.append((rb[f"c{c}_{fam}_def"], f_forcedef))
                jac_blocks.append(_Block(rf, lay.islk[fam][:, c, :], ones_nk))
                jac_blocks.append(_Block(rf, src[:, c, :], mones_nk))

            rcone = rowgrid(rb[f"c{c}_cone_def"], 1, K).reshape(N, K)

            def f_conedef(st, c=c, mu=mu):
                return (st["SLK"]["cone"][:, c, :]
                        - (mu * st["LN"][:, c, :] - st["LP"][:, c, :]
                           - st["LM"][:, c, :])).ravel()

            res_fns.append((rb[f"c{c}_cone_def"], f_conedef))
            jac_blocks.append(_Block(rcone, lay.islk["cone"][:, c, :], ones_nk))
            jac_blocks.append(_Block(rcone, lay.iln[:, c, :],
                                     lambda st, mu=mu: np.full(N * K, -mu)))
            jac_blocks.append(_Block(rcone, lay.ilp[:, c, :], ones_nk))
            jac_blocks.append(_Block(rcone, lay.ilm[:, c, :], ones_nk))

            # ------------ aggregate definitions (8 per element)
            rp = rb[f"c{c}_prime_def"].start + np.arange(8 * N).reshape(N, 8)

            def f_primes(st, c=c):
                out = np.empty((N, 8))
                for fi, fam in enumerate(SLACK_FAMILIES):
                    out[:, fi] = st["PRM"][fam][:, c] - st["SLK"][fam][:, c, :].sum(axis=1)
                out[:, 0] -= st["gap0"][c]
                return out.ravel()

            res_fns.append((rb[f"c{c}_prime_def"], f_primes))
            for fi, fam in enumerate(SLACK_FAMILIES):
                jac_blocks.append(_Block(rp[:, fi], lay.iprm[fam][:, c],
                                         lambda st: np.ones(N)))
                jac_blocks.append(_Block(
                    np.repeat(rp[:, fi][:, None], K, axis=1), lay.islk[fam][:, c, :],
                    lambda st: np.full(N * K, -1.0)))
            # gap aggregate includes the element-start mesh gap
            if N > 1:
                jac_blocks.append(_Block(
                    np.repeat(rp[1:, 0][:, None], H, axis=1), lay.iq[:-1, :, -1],
                    lambda st, c=c: (-st["Jn0"][c][1:]).ravel()))

        # ---------------- complementarity products
        if self.use_products:
            rprd = rb["products"].start + np.arange(self.n_pairs)

            def f_products(st):
                return st["x"][self.pair_a] * st["x"][self.pair_b]

            res_fns.append((rb["products"], f_products))
            jac_blocks.append(_Block(rprd, self.pair_a,
                                     lambda st: st["x"][self.pair_b]))
            jac_blocks.append(_Block(rprd, self.pair_b,
                                     lambda st: st["x"][self.pair_a]))

        # ---------------- hybrid impulse rows
        if lay.hybrid:
            nm = N - 1
            rimp = (rb["impact_momentum"].start
                    + np.arange(nm)[:, None] * H + np.arange(H)[None, :])

            def f_impact(st):
                Qm = st["Q"][:-1, :, -1]            # mesh configurations
                Mm = model.mass_matrix(Qm)
                w = st["x"][lay.imesh_qd]
                dv = w - st["QD"][:-1, :, -1]
                r = np.einsum("phg,pg->ph", Mm, dv)
                for c in range(C):
                    Jn = model.contacts[c].Jn_batch(Qm)
                    r -= Jn * st["x"][lay.iimp_n[:, c]][:, None]
                    if model.contacts[c].tangent_jacobian is not None:
                        Jt = model.contacts[c].Jt_batch(Qm)
                        r -= Jt * (st["x"][lay.iimp_p[:, c]]
                                   - st["x"][lay.iimp_m[:, c]])[:, None]
                return r.ravel()

            res_fns.append((rb["impact_momentum"], f_impact))
            rimp_hh = np.repeat(rimp[:, :, None], H, axis=2)
            cmesh = np.repeat(lay.imesh_qd[:, None, :], H, axis=1)
            cqdprev = np.repeat(lay.iqd[:-1, None, :, -1], H, axis=1)

            def f_imp_dmesh(st):
                return model.mass_matrix(st["Q"][:-1, :, -1]).ravel()

            jac_blocks.append(_Block(rimp_hh, cmesh, f_imp_dmesh))
            jac_blocks.append(_Block(rimp_hh, cqdprev,
                                     lambda st: -model.mass_matrix(st["Q"][:-1, :, -1]).ravel()))
            if model.d_Mqdd_dq is not None:
                cqmesh = np.repeat(lay.iq[:-1, None, :, -1], H, axis=1)

                def f_imp_dq(st):
                    Qm = st["Q"][:-1, :, -1]
                    dv = st["x"][lay.imesh_qd] - st["QD"][:-1, :, -1]
                    return model.d_Mqdd_dq(Qm, dv).ravel()

                jac_blocks.append(_Block(rimp_hh, cqmesh, f_imp_dq))
            for c in range(C):
                jac_blocks.append(_Block(
                    rimp, np.repeat(lay.iimp_n[:, c][:, None], H, axis=1),
                    lambda st, c=c: (-model.contacts[c].Jn_batch(st["Q"][:-1, :, -1])).ravel()))
                if model.contacts[c].tangent_jacobian is not None:
                    jac_blocks.append(_Block(
                        rimp, np.repeat(lay.iimp_p[:, c][:, None], H, axis=1),
                        lambda st, c=c: (-model.contacts[c].Jt_batch(st["Q"][:-1, :, -1])).ravel()))
                    jac_blocks.append(_Block(
                        rimp, np.repeat(lay.iimp_m[:, c][:, None], H, axis=1),
                        lambda st, c=c: (model.contacts[c].Jt_batch(st["Q"][:-1, :, -1])).ravel()))
            # friction-cone rows for impulses: mu*Ln - Lp - Lm >= 0
            rcone_i = rb["impulse_cone"].start + np.arange(nm * C).reshape(nm, C)

            def f_impcone(st):
                out = np.empty((nm, C))
                for c in range(C):
                    mu = model.contacts[c].mu
                    out[:, c] = (mu * st["x"][lay.iimp_n[:, c]]
                                 - st["x"][lay.iimp_p[:, c]]
                                 - st["x"][lay.iimp_m[:, c]])
                return out.ravel()

            res_fns.append((rb["impulse_cone"], f_impcone))
            for c in range(C):
                mu = model.contacts[c].mu
                jac_blocks.append(_Block(rcone_i[:, c], lay.iimp_n[:, c],
                                         lambda st, mu=mu: np.full(nm, mu)))
                jac_blocks.append(_Block(rcone_i[:, c], lay.iimp_p[:, c],
                                         lambda st: np.full(nm, -1.0)))
                jac_blocks.append(_Block(rcone_i[:, c], lay.iimp_m[:, c],
                                         lambda st: np.full(nm, -1.0)))

        # ---------------- total-time row
        if "total_time" in self.row_blocks:
            rt = self.row_blocks["total_time"].start

            def f_tt(st):
                return np.array([st["H"].sum()])

            res_fns.append((self.row_blocks["total_time"], f_tt))
            jac_blocks.append(_Block(np.full(N, rt), lay.ih, lambda st: np.ones(N)))

        self._res_fns = res_fns
        self._jac_blocks = jac_blocks
        self._finalize_jacobian_pattern()
        self._build_hess_plan()

    def _finalize_jacobian_pattern(self):
        rows = np.concatenate([b.rows for b in self._jac_blocks])
        cols = np.concatenate([b.cols for b in self._jac_blocks])
        order = np.lexsort((rows, cols))
        rs, cs = rows[order], cols[order]
        newgrp = np.empty(rs.size, dtype=bool)
        newgrp[0] = True
        newgrp[1:] = (rs[1:] != rs[:-1]) | (cs[1:] != cs[:-1])
        grp = np.cumsum(newgrp) - 1
        self._jac_nnz = int(grp[-1]) + 1
        inv = np.empty(rs.size, dtype=np.int64)
        inv[order] = grp
        self._jac_inv = inv
        uidx = np.flatnonzero(newgrp)
        urows, ucols = rs[uidx], cs[uidx]
        # canonical CSC structure
        self._jac_indices = urows.astype(np.int32)
        self._jac_indptr = np.searchsorted(ucols, np.arange(self.n + 1)).astype(np.int32)
        self._jac_shape = (self.m, self.n)

    def _build_hess_plan(self):
        """Coordinate plan for the exact Lagrangian Hessian."""
        lay, model = self.layout, self.model
        N, K, H, C, U = lay.N, lay.K, lay.H, lay.C, lay.U
        omega = self.scheme.omega
        P = N * K
        segs = []  # (rows, cols, fill(st, y, ow))
        rb = self.row_blocks

        def add(rows, cols, fill):
            segs.append(_Block(rows, cols, fill))

        # colloc_q: cross h x qd, weight -omega[k, j] * y
        ih_rep = np.broadcast_to(lay.ih[:, None, None], (N, H, K))

        def w_cq(st, y, ow):
            yv = y[rb["colloc_q"]].reshape(N, H, K)
            return -np.einsum("nhk,kj->nhj", yv, omega).ravel()

        add(ih_rep, lay.iqd, w_cq)
        add(lay.iqd, ih_rep, w_cq)

        def w_cqd(st, y, ow):
            yv = y[rb["colloc_qd"]].reshape(N, H, K)
            return -np.einsum("nhk,kj->nhj", yv, omega).ravel()

        add(ih_rep, lay.iqdd, w_cqd)
        add(lay.iqdd, ih_rep, w_cqd)

        # dynamics curvature (models with nonlinear M/bias)
        if model.dyn_hess is not None:
            ipq = lay.iq.transpose(0, 2, 1).reshape(P, H)
            ipqd = lay.iqd.transpose(0, 2, 1).reshape(P, H)
            ipqdd = lay.iqdd.transpose(0, 2, 1).reshape(P, H)
            q_qh = np.repeat(ipq[:, :, None], H, axis=2)
            q_hq = np.repeat(ipq[:, None, :], H, axis=1)
            qd_hq = np.repeat(ipqd[:, None, :], H, axis=1)
            qd_qh = np.repeat(ipqd[:, :, None], H, axis=2)
            qdd_hq = np.repeat(ipqdd[:, None, :], H, axis=1)
            qdd_qh = np.repeat(ipqdd[:, :, None], H, axis=2)

            def dyn_blocks(st, y):
                if "_dynH" not in st:
                    W = y[rb["dynamics"]].reshape(P, H)
                    st["_dynH"] = model.dyn_hess(st["Qp"], st["QDp"], st["QDDp"], W)
                return st["_dynH"]

            add(q_qh, q_hq, lambda st, y, ow: dyn_blocks(st, y)[0].ravel())
            add(q_qh, qd_hq, lambda st, y, ow: dyn_blocks(st, y)[1].ravel())
            add(qd_qh, q_hq, lambda st, y, ow: np.swapaxes(dyn_blocks(st, y)[1], 1, 2).ravel())
            add(qd_qh, qd_hq, lambda st, y, ow: dyn_blocks(st, y)[2].ravel())
            add(q_qh, qdd_hq, lambda st, y, ow: dyn_blocks(st, y)[3].ravel())
            add(qdd_qh, q_hq, lambda st, y, ow: np.swapaxes(dyn_blocks(st, y)[3], 1, 2).ravel())

        # product rows: d2/(da db) = y_row
        if self.use_products:
            rprd = rb["products"]

            def w_prod(st, y, ow):
                return y[rprd]

            add(self.pair_a, self.pair_b, w_prod)
            add(self.pair_b, self.pair_a, w_prod)

        # objective curvature
        if self.options.objective == "min_effort" and U:
            if lay.per_collocation:
                bw = self.scheme.quadrature_weights
                iu_f = lay.iu.reshape(N, U * K)
                wrep = np.tile(bw, U)

                def w_uu(st, y, ow):
                    return (ow * 2.0 * st["H"][:, None] * wrep[None, :]).ravel()

                def w_uh(st, y, ow):
                    return (ow * 2.0 * st["Uv"].reshape(N, U * K) * wrep[None, :]).ravel()

                add(iu_f, iu_f, w_uu)
                ih_u = np.broadcast_to(lay.ih[:, None], iu_f.shape)
                add(iu_f, ih_u, w_uh)
                add(ih_u, iu_f, w_uh)
            else:
                def w_uu(st, y, ow):
                    return (ow * 2.0 * np.repeat(st["H"][:, None], U, axis=1)).ravel()

                def w_uh(st, y, ow):
                    return (ow * 2.0 * st["Uv"]).ravel()

                add(lay.iu, lay.iu, w_uu)
                ih_u = np.broadcast_to(lay.ih[:, None], lay.iu.shape)
                add(lay.iu, ih_u, w_uh)
                add(ih_u, lay.iu, w_uh)

        if self.options.force_reg:
            for arr in (lay.iln, lay.ilp, lay.ilm):
                flat = arr.reshape(-1)
                add(flat, flat,
                    lambda st, y, ow, n_=flat.size:
                    np.full(n_, ow * 2.0 * self.options.force_reg))

        # penalty curvature rho * sum a*b (objective side)
        def w_pen(st, y, ow):
            return np.full(self.n_pairs, ow * self.penalty_rho)

        if self.n_pairs and not self.use_products:
            add(self.pair_a, self.pair_b, w_pen)
            add(self.pair_b, self.pair_a, w_pen)

        self._hess_segs = segs
        if segs:
            rows = np.concatenate([b.rows for b in segs])
            cols = np.concatenate([b.cols for b in segs])
        else:
            rows = np.zeros(0, dtype=np.int64)
            cols = np.zeros(0, dtype=np.int64)
        order = np.lexsort((rows, cols))
        rs, cs = rows[order], cols[order]
        if rs.size:
            newgrp = np.empty(rs.size, dtype=bool)
            newgrp[0] = True
            newgrp[1:] = (rs[1:] != rs[:-1]) | (cs[1:] != cs[:-1])
            grp = np.cumsum(newgrp) - 1
            self._hess_nnz = int(grp[-1]) + 1
            inv = np.empty(rs.size, dtype=np.int64)
            inv[order] = grp
            self._hess_inv = inv
            uidx = np.flatnonzero(newgrp)
            self._hess_indices = rs[uidx].astype(np.int32)
            self._hess_indptr = np.searchsorted(cs[uidx], np.arange(self.n + 1)).astype(np.int32)
        else:
            self._hess_nnz = 0
            self._hess_inv = np.zeros(0, dtype=np.int64)
            self._hess_indices = np.zeros(0, dtype=np.int32)
            self._hess_indptr = np.zeros(self.n + 1, dtype=np.int32)

    # ------------------------------------------------------------- evaluate

    def constraints(self, x: np.ndarray) -> np.ndarray:
        st = self._state(x)
        out = np.empty(self.m)
        for sl, fn in self._res_fns:
            out[sl] = fn(st)
        return out

    def jacobian(self, x: np.ndarray) -> sp.csc_matrix:
        st = self._state(x)
        self._state_derivs(st)
        vals = np.concatenate([b.fill(st) for b in self._jac_blocks])
        data = np.bincount(self._jac_inv, weights=vals, minlength=self._jac_nnz)
        return sp.csc_matrix((data, self._jac_indices, self._jac_indptr),
                             shape=self._jac_shape)

    def objective(self, x: np.ndarray) -> float:
        opts, lay = self.options, self.layout
        val = 0.0
        if opts.force_reg:
            for arr in (lay.iln, lay.ilp, lay.ilm):
                val += opts.force_reg * float(np.sum(x[arr] ** 2))
        if opts.objective == "min_effort" and lay.U:
            H = x[lay.ih]
            if lay.per_collocation:
                bw = self.scheme.quadrature_weights
                Uv = x[lay.iu]  # (N, U, K)
                val += float(np.einsum("n,nuk,k->", H, Uv ** 2, bw))
            else:
                Uv = x[lay.iu]
                val += float(H @ (Uv ** 2).sum(axis=1))
        elif opts.objective == "min_time":
            val += float(x[lay.ih].sum())
        if self.penalty_rho and self.n_pairs:
            val += self.penalty_rho * float(x[self.pair_a] @ x[self.pair_b])
        return val

    def grad(self, x: np.ndarray) -> np.ndarray:
        opts, lay = self.options, self.layout
        g = np.zeros(self.n)
        if opts.force_reg:
            for arr in (lay.iln, lay.ilp, lay.ilm):
                g[arr] += 2.0 * opts.force_reg * x[arr]
        if opts.objective == "min_effort" and lay.U:
            H = x[lay.ih]
            if lay.per_collocation:
                bw = self.scheme.quadrature_weights
                Uv = x[lay.iu]
                g_flat = 2.0 * H[:, None, None] * Uv * bw[None, None, :]
                np.add.at(g, lay.iu, g_flat)
                g[lay.ih] += np.einsum("nuk,k->n", Uv ** 2, bw)
            else:
                Uv = x[lay.iu]
                np.add.at(g, lay.iu, 2.0 * H[:, None] * Uv)
                g[lay.ih] += (Uv ** 2).sum(axis=1)
        elif opts.objective == "min_time":
            g[lay.ih] += 1.0
        if self.penalty_rho and self.n_pairs:
            np.add.at(g, self.pair_a, self.penalty_rho * x[self.pair_b])
            np.add.at(g, self.pair_b, self.penalty_rho * x[self.pair_a])
        return g

    def lag_hess(self, x: np.ndarray, y: np.ndarray, obj_weight: float = 1.0
                 ) -> sp.csc_matrix:
        st = self._state(x)
        if self._hess_segs:
            vals = np.concatenate([b.fill(st, y, obj_weight) for b in self._hess_segs])
            data = np.bincount(self._hess_inv, weights=vals, minlength=self._hess_nnz)
        else:
            data = np.zeros(0)
        return sp.csc_matrix((data, self._hess_indices, self._hess_indptr),
                             shape=(self.n, self.n))

    # ------------------------------------------------------------- homotopy

    def set_epsilon(self, eps: float) -> None:
        if eps <= 0:
            raise ValueError(f"epsilon must be positive, got {eps}")
        if not self.use_products:
            raise ValueError("problem was built for the penalty strategy")
        self.epsilon = float(eps)
        self.cu[self.row_blocks["products"]] = eps

    def set_penalty(self, rho: float) -> None:
        if rho <= 0:
            raise ValueError(f"rho must be positive, got {rho}")
        if self.use_products:
            raise ValueError("problem was built for the epsilon strategy")
        self.penalty_rho = float(rho)

    def comp_residual(self, x: np.ndarray) -> float:
        """max over registered pairs of the complementarity product."""
        if not self.n_pairs:
            return 0.0
        return float(np.max(x[self.pair_a] * x[self.pair_b]))

    # ----------------------------------------------------------- metadata

    def core_variable_count(self) -> int:
        return self.layout.n_core

    def core_constraint_count(self) -> int:
        lay = self.layout
        m = 3 * lay.N * lay.H * lay.K + lay.C * (7 * lay.N * lay.K + 8 * lay.N)
        if self.use_products:
            m += 4 * lay.C * lay.N
        return m

    def counts(self) -> dict:
        lay = self.layout
        return dict(
            n=self.n, m=self.m,
            n_core=lay.n_core,
            n_core_formula=variable_count_formula(lay.N, lay.K, lay.H, lay.C, lay.U),
            m_core=self.core_constraint_count(),
            m_core_formula=constraint_count_formula(lay.N, lay.K, lay.H, lay.C),
            m_core_as_built=constraint_count_as_built(
                lay.N, lay.K, lay.H, lay.C, self.options.mpec_strategy),
            n_pairs=self.n_pairs,
        )


def build_problem(model: ModelSpec, options: TranscriptionOptions) -> NlpProblem:
    return NlpProblem(model, options)


def apply_mpec_strategy(problem: NlpProblem, strategy: str, parameter: float
                        ) -> NlpProblem:
    """Set the current relaxation/penalty parameter on the problem.

    epsilon: registered pairs become product inequalities a*b <= parameter.
    penalty: pairs leave the constraint set; parameter * sum(a*b) joins the
    objective (every pair member is nonnegative, so the sum is the l1 norm of
    the products).
    """
    if parameter <= 0:
        raise ValueError(f"strategy parameter must be positive, got {parameter}")
    if strategy == "epsilon":
        problem.set_epsilon(parameter)
    elif strategy == "penalty":
        problem.set_penalty(parameter)
    else:
        raise ValueError(f"unknown MPEC strategy {strategy!r}")
    return problem
