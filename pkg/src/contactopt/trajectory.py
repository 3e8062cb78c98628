"""Solved-trajectory container: per-element, per-node arrays plus CSV I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Trajectory"]

CSV_SCHEMA_VERSION = 1


@dataclass
class Trajectory:
    """Per-collocation-point unpack of a decision vector.

    Arrays are indexed [element, state/contact, node]; h has one duration
    per element. mesh_times()[i] is the start time of element i.
    """

    N: int
    K: int
    n_q: int
    n_u: int
    n_c: int
    q: np.ndarray        # (N, H, K)
    qd: np.ndarray
    qdd: np.ndarray
    lam_n: np.ndarray    # (N, C, K)
    lam_p: np.ndarray
    lam_m: np.ndarray
    u: np.ndarray        # (N, U) or (N, U, K)
    h: np.ndarray        # (N,)
    gaps: np.ndarray     # (N, C, K)
    fn_prime: np.ndarray  # (N, C) per-element normal-force aggregates
    gap_prime: np.ndarray  # (N, C) per-element gap aggregates
    q0: np.ndarray
    qd0: np.ndarray
    nodes: np.ndarray    # (K,) Radau nodes
    per_collocation_u: bool = False
    meta: dict = field(default_factory=dict)

    # ------------------------------------------------------------ factory

    @classmethod
    def from_solution(cls, problem, x) -> "Trajectory":
        lay = problem.layout
        model = problem.model
        N, K, H, C = lay.N, lay.K, lay.H, lay.C
        q = x[lay.iq]
        gaps = np.empty((N, C, K))
        for c, contact in enumerate(model.contacts):
            P = N * K
            Qp = q.transpose(0, 2, 1).reshape(P, H)
            gaps[:, c, :] = contact.gap_batch(Qp).reshape(N, K)
        return cls(
            N=N, K=K, n_q=H, n_u=lay.U, n_c=C,
            q=q.copy(), qd=x[lay.iqd].copy(), qdd=x[lay.iqdd].copy(),
            lam_n=x[lay.iln].copy(), lam_p=x[lay.ilp].copy(),
            lam_m=x[lay.ilm].copy(),
            u=x[lay.iu].copy() if lay.U else np.zeros((N, 0)),
            h=x[lay.ih].copy(),
            gaps=gaps,
            fn_prime=x[lay.iprm["fn"]].copy(),
            gap_prime=x[lay.iprm["gap"]].copy(),
            q0=problem.q0.copy(), qd0=problem.qd0.copy(),
            nodes=problem.scheme.nodes.copy(),
            per_collocation_u=lay.per_collocation,
            meta=dict(model=model.name),
        )

    # ------------------------------------------------------------ access

    def mesh_times(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.h)])

    def node_times(self) -> np.ndarray:
        """(N, K) absolute times of the collocation nodes."""
        starts = self.mesh_times()[:-1]
        return starts[:, None] + self.h[:, None] * self.nodes[None, :]

    def q_start(self, i: int) -> np.ndarray:
        return self.q0 if i == 0 else self.q[i - 1, :, -1]

    def qd_start(self, i: int) -> np.ndarray:
        return self.qd0 if i == 0 else self.qd[i - 1, :, -1]

    def u_element(self, i: int) -> np.ndarray:
        if self.n_u == 0:
            return np.zeros(0)
        if self.per_collocation_u:
            return self.u[i].mean(axis=1)
        return self.u[i]

    def contact_active(self, force_thr: float = 1e-6) -> np.ndarray:
        """(N, C) bool: per-element normal-force aggregate above threshold."""
        return self.fn_prime > force_thr

    def gap_aggregate(self) -> np.ndarray:
        return self.gap_prime

    def mode_string(self, force_thr: float = 1e-6) -> str:
        """'S' where any contact carries force over the element, else 'F'."""
        act = self.contact_active(force_thr).any(axis=1)
        return "".join("S" if a else "F" for a in act)

    def mode_transitions(self, force_thr: float = 1e-6) -> int:
        s = self.mode_string(force_thr)
        return sum(1 for a, b in zip(s, s[1:]) if a != b)

    def final_state(self) -> tuple[np.ndarray, np.ndarray]:
        return self.q[-1, :, -1], self.qd[-1, :, -1]

    def intra_element_control_variation(self) -> float:
        """Total variation of u across nodes within elements, summed."""
        if self.n_u == 0 or not self.per_collocation_u:
            return 0.0
        dv = np.abs(np.diff(self.u, axis=2))
        return float(np.sum(dv))

    # --------------------------------------------------------------- CSV

    def csv_header(self) -> list[str]:
        cols = ["schema", "element", "point", "t", "h"]
        cols += [f"q{h}" for h in range(self.n_q)]
        cols += [f"qd{h}" for h in range(self.n_q)]
        cols += [f"qdd{h}" for h in range(self.n_q)]
        cols += [f"u{l}" for l in range(self.n_u)]
        for c in range(self.n_c):
            cols += [f"lam_n{c}", f"lam_tp{c}", f"lam_tm{c}", f"gap{c}"]
        return cols

    def to_csv(self, path) -> None:
        times = self.node_times()
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.csv_header())
            for i in range(self.N):
                for k in range(self.K):
                    row = [CSV_SCHEMA_VERSION, i, k + 1,
                           f"{times[i, k]:.12g}", f"{self.h[i]:.12g}"]
                    row += [f"{v:.12g}" for v in self.q[i, :, k]]
                    row += [f"{v:.12g}" for v in self.qd[i, :, k]]
                    row += [f"{v:.12g}" for v in self.qdd[i, :, k]]
                    if self.n_u:
                        uv = self.u[i, :, k] if self.per_collocation_u else self.u[i]
                        row += [f"{v:.12g}" for v in uv]
                    for c in range(self.n_c):
                        row += [f"{self.lam_n[i, c, k]:.12g}",
                                f"{self.lam_p[i, c, k]:.12g}",
                                f"{self.lam_m[i, c, k]:.12g}",
                                f"{self.gaps[i, c, k]:.12g}"]
                    w.writerow(row)

    @staticmethod
    def read_csv(path) -> dict:
        """Columns of a trajectory CSV as float arrays keyed by header name."""
        with open(path, newline="") as f:
            r = csv.reader(f)
            header = next(r)
            rows = [list(map(float, row)) for row in r]
        data = np.array(rows)
        return {name: data[:, j] for j, name in enumerate(header)}
