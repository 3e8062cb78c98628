"""Multi-body model interface, benchmark systems, and the plastic impact map.

A model supplies manipulator-form dynamics

    M(q) qdd + bias(q, qd) = B u + sum_c Jn_c(q)^T lam_n_c + Jt_c(q)^T lam_t_c

with bias = C(q, qd) qd + G(q) supplied as one term (only the product is ever
needed). Contacts carry a gap function phi(q) >= 0, its configuration Jacobian
row, and optionally a tangential direction with friction coefficient mu.

All evaluators come in batched form (leading point axis) because the
transcription layer evaluates every collocation point of every element in one
call; scalar convenience wrappers are provided for the simulator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ContactSpec",
    "ModelSpec",
    "ImpactResult",
    "SingularImpactError",
    "plastic_impact",
    "ball_ceiling",
    "double_pendulum_stops",
    "sliding_block",
    "planar_hopper",
    "builtin_model",
]


class SingularImpactError(ValueError):
    """J M^-1 J^T is singular for the requested active set."""

    def __init__(self, message, redundant=()):
        super().__init__(message)
        self.redundant = tuple(redundant)


@dataclass
class ContactSpec:
    """One unilateral contact: gap, normal Jacobian row, optional friction.

    gap/normal_jacobian take batched configurations (P, n_q). For frictionless
    contacts (mu == 0) the tangential fields may be omitted; the tangential
    velocity is then identically zero.
    """

    name: str
    gap: Callable[[np.ndarray], np.ndarray]
    normal_jacobian: Callable[[np.ndarray], np.ndarray]
    mu: float = 0.0
    tangent_jacobian: Callable[[np.ndarray], np.ndarray] | None = None

    def gap_batch(self, Q: np.ndarray) -> np.ndarray:
        return self.gap(np.atleast_2d(Q))

    def Jn_batch(self, Q: np.ndarray) -> np.ndarray:
        return self.normal_jacobian(np.atleast_2d(Q))

    def Jt_batch(self, Q: np.ndarray) -> np.ndarray:
        Q = np.atleast_2d(Q)
        if self.tangent_jacobian is None:
            return np.zeros_like(Q)
        return self.tangent_jacobian(Q)

    def tangential_velocity(self, Q: np.ndarray, QD: np.ndarray) -> np.ndarray:
        """psi(q, qd) = Jt(q) qd, batched."""
        QD = np.atleast_2d(QD)
        return np.einsum("ph,ph->p", self.Jt_batch(Q), QD)


@dataclass
class ModelSpec:
    """Dimensions, dynamics evaluators, and contact set of one system."""

    name: str
    n_q: int
    n_u: int
    mass_matrix: Callable[[np.ndarray], np.ndarray]          # (P,H) -> (P,H,H)
    bias: Callable[[np.ndarray, np.ndarray], np.ndarray]     # (P,H),(P,H) -> (P,H)
    input_map: np.ndarray                                    # (H, n_u)
    contacts: list[ContactSpec] = field(default_factory=list)
    # analytic first derivatives of the dynamics residual pieces
    d_Mqdd_dq: Callable | None = None      # (Q, QDD) -> (P,H,H): d(M(q) a)/dq
    dbias_dq: Callable | None = None       # (Q, QD) -> (P,H,H)
    dbias_dqd: Callable | None = None      # (Q, QD) -> (P,H,H)
    # exact second-order contraction for the Lagrangian Hessian (optional):
    # (Q, QD, QDD, W) -> (Hqq, Hq_qd, Hqd_qd, Hq_qdd), each (P,H,H), where
    # H** are second partials of w^T (M(q) qdd + bias(q, qd)).
    dyn_hess: Callable | None = None
    potential_energy: Callable[[np.ndarray], np.ndarray] | None = None
    q_bounds: tuple[np.ndarray, np.ndarray] | None = None
    qd_bounds: tuple[np.ndarray, np.ndarray] | None = None
    u_bounds: tuple[np.ndarray, np.ndarray] | None = None
    params: dict = field(default_factory=dict)

    # ---------------------------------------------------------- helpers

    @property
    def n_c(self) -> int:
        return len(self.contacts)

    def M(self, q: np.ndarray) -> np.ndarray:
        return self.mass_matrix(np.asarray(q, float)[None])[0]

    def bias_at(self, q: np.ndarray, qd: np.ndarray) -> np.ndarray:
        return self.bias(np.asarray(q, float)[None], np.asarray(qd, float)[None])[0]

    def gaps(self, q: np.ndarray) -> np.ndarray:
        return np.array([c.gap_batch(q[None])[0] for c in self.contacts])

    def normal_rows(self, q: np.ndarray) -> np.ndarray:
        """Stacked normal Jacobian rows, shape (n_c, n_q)."""
        return np.array([c.Jn_batch(q[None])[0] for c in self.contacts])

    def kinetic_energy(self, q: np.ndarray, qd: np.ndarray) -> float:
        return 0.5 * float(qd @ self.M(q) @ qd)

    def total_energy(self, q: np.ndarray, qd: np.ndarray) -> float:
        pe = 0.0
        if self.potential_energy is not None:
            pe = float(self.potential_energy(np.asarray(q, float)[None])[0])
        return self.kinetic_energy(q, qd) + pe

    def check_spd(self, rng_seed: int = 0, samples: int = 25) -> None:
        """Sample the mass matrix for symmetry and positive definiteness."""
        rng = np.random.default_rng(rng_seed)
        Q = rng.uniform(-np.pi, np.pi, size=(samples, self.n_q))
        Ms = self.mass_matrix(Q)
        if not np.allclose(Ms, np.swapaxes(Ms, 1, 2), atol=1e-12):
            raise ValueError(f"{self.name}: mass matrix not symmetric")
        for Mi in Ms:
            if np.min(np.linalg.eigvalsh(Mi)) <= 0:
                raise ValueError(f"{self.name}: mass matrix not positive definite")


@dataclass
class ImpactResult:
    """Outcome of a plastic (zero-restitution) impact."""

    qdot_plus: np.ndarray
    impulse: np.ndarray  # one entry per active contact row, N*s


def plastic_impact(M: np.ndarray, J: np.ndarray, qdot_minus: np.ndarray) -> ImpactResult:
    """Closed-form plastic impact for active-contact Jacobian rows J.

    Solves Lambda = -(J M^-1 J^T)^-1 J qdot_minus and
    qdot_plus = qdot_minus + M^-1 J^T Lambda, so that J qdot_plus = 0 and
    M (qdot_plus - qdot_minus) = J^T Lambda hold exactly.
    """
    M = np.asarray(M, float)
    J = np.atleast_2d(np.asarray(J, float))
    qdm = np.asarray(qdot_minus, float)
    Minv_JT = np.linalg.solve(M, J.T)
    A = J @ Minv_JT
    # rank check with an eigenvalue gate scaled to the problem
    w = np.linalg.eigvalsh(A)
    if w[0] <= 1e-12 * max(1.0, w[-1]):
        redundant = _redundant_rows(J, M)
        raise SingularImpactError(
            f"impact operator singular; redundant contact rows: {redundant}",
            redundant=redundant)
    impulse = -np.linalg.solve(A, J @ qdm)
    qdot_plus = qdm + Minv_JT @ impulse
    return ImpactResult(qdot_plus=qdot_plus, impulse=impulse)


def _redundant_rows(J: np.ndarray, M: np.ndarray) -> list[int]:
    """Indices of rows linearly dependent on earlier rows (M^-1/2 metric)."""
    L = np.linalg.cholesky(np.linalg.inv(M))
    G = J @ L
    redundant, basis = [], []
    for i, row in enumerate(G):
        if basis:
            Bm = np.array(basis)
            resid = row - Bm.T @ np.linalg.lstsq(Bm.T, row, rcond=None)[0]
        else:
            resid = row
        if np.linalg.norm(resid) <= 1e-10 * max(1.0, np.linalg.norm(row)):
            redundant.append(i)
        else:
            basis.append(row)
    return redundant


# ------------------------------------------------------------------ builtins

def _const_row(row: np.ndarray):
    row = np.asarray(row, float)

    def f(Q):
        return np.broadcast_to(row, (Q.shape[0], row.size)).copy()

    return f


def _const_mass(M: np.ndarray):
    M = np.asarray(M, float)

    def f(Q):
        return np.broadcast_to(M, (Q.shape[0],) + M.shape).copy()

    return f


def ball_ceiling(ceiling: float = 1.0, m: float = 1.0, g: float = 9.81,
                 with_input: bool = False) -> ModelSpec:
    """Vertical point mass under gravity with a ceiling contact at height c.

    State is the height y (up positive); the gap is c - y and the contact
    force pushes the ball away from the ceiling. An optional thrust input is
    available for optimization tests; the simulation benchmark uses none.
    """
    c = float(ceiling)
    n_u = 1 if with_input else 0
    B = np.ones((1, 1)) if with_input else np.zeros((1, 0))
    model = ModelSpec(
        name="ball_ceiling",
        n_q=1, n_u=n_u,
        mass_matrix=_const_mass([[m]]),
        bias=lambda Q, QD: np.full((Q.shape[0], 1), m * g),
        input_map=B,
        contacts=[ContactSpec(
            name="ceiling",
            gap=lambda Q: c - Q[:, 0],
            normal_jacobian=_const_row([-1.0]),
        )],
        potential_energy=lambda Q: m * g * Q[:, 0],
        params=dict(ceiling=c, m=m, g=g),
    )
    return model


def double_pendulum_stops(m1: float = 1.0, m2: float = 1.0, l1: float = 1.0,
                          l2: float = 1.0, g: float = 9.81,
                          stop: float = np.pi / 4,
                          tau_max: float = 25.0) -> ModelSpec:
    """Double pendulum, point masses at the link ends, hard stops at the
    elbow limiting the relative angle to |theta2 - theta1| <= stop.

    Angles are absolute, measured from the upright vertical, actuated by a
    single torque at the base joint. The stops are unilateral joint-limit
    contacts whose "forces" are rebound torques entering through the limit
    Jacobians. The paper gives no physical parameters; these unit defaults
    are declared, not inferred, and all overridable.
    """
    k = m2 * l1 * l2
    g1 = (m1 + m2) * g * l1
    g2 = m2 * g * l2
    M11 = (m1 + m2) * l1 ** 2
    M22 = m2 * l2 ** 2

    def mass(Q):
        P = Q.shape[0]
        c12 = np.cos(Q[:, 0] - Q[:, 1])
        M = np.empty((P, 2, 2))
        M[:, 0, 0] = M11
        M[:, 0, 1] = M[:, 1, 0] = k * c12
        M[:, 1, 1] = M22
        return M

    def bias(Q, QD):
        s12 = np.sin(Q[:, 0] - Q[:, 1])
        out = np.empty((Q.shape[0], 2))
        out[:, 0] = k * s12 * QD[:, 1] ** 2 - g1 * np.sin(Q[:, 0])
        out[:, 1] = -k * s12 * QD[:, 0] ** 2 - g2 * np.sin(Q[:, 1])
        return out

    def d_Mqdd_dq(Q, QDD):
        s12 = np.sin(Q[:, 0] - Q[:, 1])
        out = np.zeros((Q.shape[0], 2, 2))
        # rows: d/dq of (M(q) a); columns index q
        out[:, 0, 0] = -k * s12 * QDD[:, 1]
        out[:, 0, 1] = k * s12 * QDD[:, 1]
        out[:, 1, 0] = -k * s12 * QDD[:, 0]
        out[:, 1, 1] = k * s12 * QDD[:, 0]
        return out

    def dbias_dq(Q, QD):
        c12 = np.cos(Q[:, 0] - Q[:, 1])
        out = np.zeros((Q.shape[0], 2, 2))
        out[:, 0, 0] = k * c12 * QD[:, 1] ** 2 - g1 * np.cos(Q[:, 0])
        out[:, 0, 1] = -k * c12 * QD[:, 1] ** 2
        out[:, 1, 0] = -k * c12 * QD[:, 0] ** 2
        out[:, 1, 1] = k * c12 * QD[:, 0] ** 2 - g2 * np.cos(Q[:, 1])
        return out

    def dbias_dqd(Q, QD):
        s12 = np.sin(Q[:, 0] - Q[:, 1])
        out = np.zeros((Q.shape[0], 2, 2))
        out[:, 0, 1] = 2 * k * s12 * QD[:, 1]
        out[:, 1, 0] = -2 * k * s12 * QD[:, 0]
        return out

    def dyn_hess(Q, QD, QDD, W):
        """Second partials of w^T (M(q) qdd + bias(q, qd)) per point."""
        P = Q.shape[0]
        d = Q[:, 0] - Q[:, 1]
        c12, s12 = np.cos(d), np.sin(d)
        S = W[:, 0] * QDD[:, 1] + W[:, 1] * QDD[:, 0]    # multiplies k*c12
        T = W[:, 0] * QD[:, 1] ** 2 - W[:, 1] * QD[:, 0] ** 2  # multiplies k*s12
        sgn = np.array([[1.0, -1.0], [-1.0, 1.0]])
        Hqq = (k * (-(c12 * S) - s12 * T))[:, None, None] * sgn[None]
        Hqq = Hqq.copy()
        Hqq[:, 0, 0] += W[:, 0] * g1 * np.sin(Q[:, 0])
        Hqq[:, 1, 1] += W[:, 1] * g2 * np.sin(Q[:, 1])
        # d/dq ( d/dqd of k*s12*T ): outer([c12, -c12], [-2 w2 qd1, 2 w1 qd2])
        dT_dqd = np.stack([-2 * W[:, 1] * QD[:, 0], 2 * W[:, 0] * QD[:, 1]], axis=1)
        ds_dq = np.stack([c12, -c12], axis=1)
        Hq_qd = k * ds_dq[:, :, None] * dT_dqd[:, None, :]
        Hqd_qd = np.zeros((P, 2, 2))
        Hqd_qd[:, 0, 0] = -2 * k * s12 * W[:, 1]
        Hqd_qd[:, 1, 1] = 2 * k * s12 * W[:, 0]
        dS_da = np.stack([W[:, 1], W[:, 0]], axis=1)
        Hq_qdd = k * (-np.stack([s12, -s12], axis=1))[:, :, None] * dS_da[:, None, :]
        return Hqq, Hq_qd, Hqd_qd, Hq_qdd

    def potential(Q):
        return g1 * np.cos(Q[:, 0]) + g2 * np.cos(Q[:, 1])

    model = ModelSpec(
        name="double_pendulum_stops",
        n_q=2, n_u=1,
        mass_matrix=mass,
        bias=bias,
        input_map=np.array([[1.0], [0.0]]),
        contacts=[
            ContactSpec(
                name="stop_upper",
                gap=lambda Q: stop - (Q[:, 1] - Q[:, 0]),
                normal_jacobian=_const_row([1.0, -1.0]),
            ),
            ContactSpec(
                name="stop_lower",
                gap=lambda Q: (Q[:, 1] - Q[:, 0]) + stop,
                normal_jacobian=_const_row([-1.0, 1.0]),
            ),
        ],
        d_Mqdd_dq=d_Mqdd_dq,
        dbias_dq=dbias_dq,
        dbias_dqd=dbias_dqd,
        dyn_hess=dyn_hess,
        potential_energy=potential,
        u_bounds=(np.array([-tau_max]), np.array([tau_max])),
        params=dict(m1=m1, m2=m2, l1=l1, l2=l2, g=g, stop=stop, tau_max=tau_max),
    )
    return model


def sliding_block(mu: float = 0.5, m: float = 1.0, g: float = 9.81,
                  with_input: bool = False) -> ModelSpec:
    """Planar point mass on flat ground with Coulomb friction.

    q = (x, y); the gap is the height y, the tangential velocity is xdot.
    """
    n_u = 1 if with_input else 0
    B = np.array([[1.0], [0.0]]) if with_input else np.zeros((2, 0))
    model = ModelSpec(
        name="sliding_block",
        n_q=2, n_u=n_u,
        mass_matrix=_const_mass(np.diag([m, m])),
        bias=lambda Q, QD: np.tile([0.0, m * g], (Q.shape[0], 1)),
        input_map=B,
        contacts=[ContactSpec(
            name="ground",
            gap=lambda Q: Q[:, 1].copy(),
            normal_jacobian=_const_row([0.0, 1.0]),
            mu=mu,
            tangent_jacobian=_const_row([1.0, 0.0]),
        )],
        potential_energy=lambda Q: m * g * Q[:, 1],
        params=dict(mu=mu, m=m, g=g),
    )
    return model


def planar_hopper(m_body: float = 1.0, m_leg: float = 0.1, g: float = 9.81,
                  mu: float = 0.8, foot_half_width: float = 0.1,
                  r_min: float = 0.2, r_max: float = 0.8,
                  u_max: float = 40.0) -> ModelSpec:
    """Planar one-legged hopper: body (x, y) plus an actuated prismatic leg
    of length r with its (light) mass at the foot.

    The foot plate carries toe and heel contact points at horizontal offsets
    +-foot_half_width. With no pitch freedom both share the gap y - r and the
    tangential velocity xdot; they stand in for the multi-point feet of
    legged systems while staying desk-scale. Reduced stand-in for a full
    biped; same constraint structure, two frictional contacts.
    """
    mt = m_body + m_leg
    M = np.array([[mt, 0.0, 0.0],
                  [0.0, mt, -m_leg],
                  [0.0, -m_leg, m_leg]])

    def contact(nm):
        return ContactSpec(
            name=nm,
            gap=lambda Q: Q[:, 1] - Q[:, 2],
            normal_jacobian=_const_row([0.0, 1.0, -1.0]),
            mu=mu,
            tangent_jacobian=_const_row([1.0, 0.0, 0.0]),
        )

    model = ModelSpec(
        name="planar_hopper",
        n_q=3, n_u=1,
        mass_matrix=_const_mass(M),
        bias=lambda Q, QD: np.tile([0.0, mt * g, -m_leg * g], (Q.shape[0], 1)),
        input_map=np.array([[0.0], [0.0], [1.0]]),
        contacts=[contact("toe"), contact("heel")],
        potential_energy=lambda Q: m_body * g * Q[:, 1] + m_leg * g * (Q[:, 1] - Q[:, 2]),
        q_bounds=(np.array([-np.inf, -np.inf, r_min]),
                  np.array([np.inf, np.inf, r_max])),
        u_bounds=(np.array([-u_max]), np.array([u_max])),
        params=dict(m_body=m_body, m_leg=m_leg, g=g, mu=mu,
                    foot_half_width=foot_half_width, r_min=r_min, r_max=r_max,
                    u_max=u_max),
    )
    return model


_BUILTINS = {
    "ball_ceiling": ball_ceiling,
    "double_pendulum_stops": double_pendulum_stops,
    "sliding_block": sliding_block,
    "planar_hopper": planar_hopper,
}


def builtin_model(name: str, **params) -> ModelSpec:
    """Construct a builtin model by name with parameter overrides."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise KeyError(
            f"unknown model {name!r}; available: {sorted(_BUILTINS)}") from None
    return factory(**params)
