"""Theory-side quantities: feasibility metric, dual function, merit function,
step-size prescriptions, descent/iteration certificates, and the spectral and
projection identities used as property-test kernels and runtime monitors.

The dual vector is ``z = (lam_lo, lam_hi, mu_lo, mu_hi)`` stacked as four
N-blocks (lower/upper voltage multipliers, then lower/upper capacity
multipliers).  All functions accept an optional ``rho`` that uniformly
tightens both operating boxes, in which case they describe the restricted
problem.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, sqrt

import numpy as np

from .grid import LinearModel
from .plant import OperatingCondition, constant_term

__all__ = [
    "pack_dual", "unpack_dual", "effective_bounds", "feasibility",
    "primal_from_dual", "dual_gradient", "dual_objective", "merit_V",
    "feasibility_from_dual", "StepPrescription", "prescribe_steps",
    "step_size_caps", "descent_increment", "iteration_bound", "build_M",
    "projection_identities", "projection_identity_violations", "Certificates",
]


def pack_dual(lam_lo, lam_hi, mu_lo, mu_hi) -> np.ndarray:
    return np.concatenate([np.asarray(b, dtype=np.float64)
                           for b in (lam_lo, lam_hi, mu_lo, mu_hi)])


def unpack_dual(z: np.ndarray, n: int):
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (4 * n,):
        raise ValueError(f"dual vector must have shape ({4 * n},), got {z.shape}")
    return z[:n], z[n:2 * n], z[2 * n:3 * n], z[3 * n:]


def effective_bounds(cond: OperatingCondition, rho: float = 0.0):
    """Boxes tightened by rho on every side: (v_min, v_max, q_min, q_max)."""
    if rho < 0.0:
        raise ValueError("rho must be nonnegative")
    vmin = cond.v_min + rho
    vmax = cond.v_max - rho
    qmin = cond.q_min + rho
    qmax = cond.q_max - rho
    if rho > 0.0 and (np.any(vmin > vmax) or np.any(qmin > qmax)):
        raise ValueError(f"rho={rho:g} empties an operating box")
    return vmin, vmax, qmin, qmax


def feasibility(q, v, cond: OperatingCondition, rho: float = 0.0) -> float:
    """Euclidean distance of the stacked point (q, v) to the box product."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    vmin, vmax, qmin, qmax = effective_bounds(cond, rho)
    if q.shape != qmin.shape or v.shape != vmin.shape:
        raise ValueError("q and v must be N-vectors matching the condition")
    viol = np.concatenate((np.maximum(qmin - q, 0.0), np.maximum(q - qmax, 0.0),
                           np.maximum(vmin - v, 0.0), np.maximum(v - vmax, 0.0)))
    return float(np.sqrt(np.sum(viol * viol)))


def primal_from_dual(z, model: LinearModel) -> np.ndarray:
    """Lagrangian minimizer: ``q(z) = lam_lo - lam_hi + A_inv (mu_lo - mu_hi)``."""
    lam_lo, lam_hi, mu_lo, mu_hi = unpack_dual(z, model.n_bus)
    return lam_lo - lam_hi + model.A_inv @ (mu_lo - mu_hi)


def dual_gradient(z, model: LinearModel, cond: OperatingCondition,
                  rho: float = 0.0) -> np.ndarray:
    """Gradient of the dual function, stacked like the dual vector."""
    vmin, vmax, qmin, qmax = effective_bounds(cond, rho)
    q = primal_from_dual(z, model)
    v = model.A @ q + constant_term(model, cond)
    return np.concatenate((vmin - v, v - vmax, qmin - q, q - qmax))


def dual_objective(z, model: LinearModel, cond: OperatingCondition,
                   rho: float = 0.0) -> float:
    """Dual function value: the Lagrangian evaluated at its minimizer.

    Equals ``0.5 q(z)^T A q(z) + <z, constraint residuals at q(z)>`` with the
    same residual stacking as :func:`dual_gradient`.
    """
    z = np.asarray(z, dtype=np.float64)
    q = primal_from_dual(z, model)
    g = dual_gradient(z, model, cond, rho)
    return float(0.5 * (q @ (model.A @ q)) + z @ g)


def merit_V(z, model: LinearModel, cond: OperatingCondition,
            rho: float = 0.0) -> float:
    """Projected-gradient merit ``||z - max(z + grad D(z), 0)||``.

    Zero exactly at dual optima; dominates the feasibility of ``q(z)``.
    Evaluated in the algebraically equivalent piecewise form
    ``|grad_i|`` where ``z_i + grad_i >= 0`` and ``z_i`` otherwise, which is
    exact in floating point (no cancellation).
    """
    z = np.asarray(z, dtype=np.float64)
    if np.any(z < 0.0):
        raise ValueError("dual vector must be nonnegative")
    g = dual_gradient(z, model, cond, rho)
    terms = np.where(z + g >= 0.0, np.abs(g), z)
    return float(np.sqrt(np.sum(terms * terms)))


def feasibility_from_dual(z, model: LinearModel, cond: OperatingCondition,
                          rho: float = 0.0) -> tuple[float, float]:
    """The domination pair ``(fes(q(z)), V(z))`` from one gradient evaluation.

    Both norms accumulate over the same component ordering with the stable
    projection forms, so ``fes <= V`` holds exactly in floating point, not
    just mathematically.
    """
    z = np.asarray(z, dtype=np.float64)
    if np.any(z < 0.0):
        raise ValueError("dual vector must be nonnegative")
    g = dual_gradient(z, model, cond, rho)
    fes_terms = np.maximum(g, 0.0)
    v_terms = np.where(z + g >= 0.0, np.abs(g), z)
    return (float(np.sqrt(np.sum(fes_terms * fes_terms))),
            float(np.sqrt(np.sum(v_terms * v_terms))))


@dataclass(frozen=True)
class StepPrescription:
    """Certified step-size pair with the general-condition margins.

    ``alpha_cap`` is the strict upper limit on alpha; ``beta_cap`` the
    strict limit on beta implied by the pair of side conditions.  The
    prescription always satisfies both with the margins reported here.
    """

    alpha: float
    beta: float
    epsilon: float
    L: float
    n_bus: int
    alpha_cap: float
    beta_cap: float

    @property
    def valid(self) -> bool:
        return self.alpha < self.alpha_cap and self.beta < self.beta_cap


def step_size_caps(model: LinearModel, epsilon: float, alpha: float):
    """General step-size conditions: returns (alpha_cap, beta_cap(alpha))."""
    L = model.L
    n = model.n_bus
    alpha_cap = 2.0 / L
    if alpha >= alpha_cap:
        return alpha_cap, 0.0
    beta_cap = min(epsilon / (2.0 * n ** 1.5 * L),
                   sqrt(alpha * (1.0 - L * alpha / 2.0) * epsilon ** 2 / (2.0 * n * L)))
    return alpha_cap, beta_cap


def prescribe_steps(model: LinearModel, cond: OperatingCondition | None,
                    epsilon: float) -> StepPrescription:
    """Certified pair ``alpha = 1/L``, ``beta = eps / (4 N^{3/2} L)``.

    `cond` is accepted for interface symmetry; the prescription depends only
    on the network spectrum.
    """
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must lie in (0, 1]")
    L = model.L
    n = model.n_bus
    alpha = 1.0 / L
    beta = epsilon / (4.0 * n ** 1.5 * L)
    alpha_cap, beta_cap = step_size_caps(model, epsilon, alpha)
    pres = StepPrescription(alpha=alpha, beta=beta, epsilon=epsilon, L=L,
                            n_bus=n, alpha_cap=alpha_cap, beta_cap=beta_cap)
    assert pres.valid  # algebraic implication of the prescription
    return pres


def descent_increment(alpha: float, beta: float, epsilon: float,
                      model: LinearModel) -> float:
    """Guaranteed dual increase per round while the merit exceeds epsilon.

    Evaluates the two-branch minimum literally; positive whenever the
    general step-size conditions hold.
    """
    if alpha <= 0.0 or beta <= 0.0:
        raise ValueError("step sizes must be positive")
    L = model.L
    n = model.n_bus
    term_a = (alpha - 0.5 * L * alpha * alpha) * epsilon * epsilon / 2.0 - n * L * beta * beta
    term_b = epsilon * beta * L * n / (2.0 * n ** 1.5 * L) - beta * beta * L * n
    return min(term_a, term_b)


def iteration_bound(model: LinearModel, cond: OperatingCondition,
                    epsilon: float, rho: float = 0.0) -> int:
    """Worst-case round count ``ceil(16 N^3 L Q lambda_max / target^2)``.

    The target accuracy is `epsilon`, or `rho` in exact-solution mode
    (``rho > 0``).  ``Q`` is the largest squared capacity bound.
    """
    target = rho if rho > 0.0 else epsilon
    if not target > 0.0:
        raise ValueError("accuracy target must be positive")
    n = model.n_bus
    Q = float(np.max(np.maximum(cond.q_min ** 2, cond.q_max ** 2)))
    raw = 16.0 * n ** 3 * model.L * Q * model.lambda_max_A / (target * target)
    return int(ceil(raw))


def build_M(model: LinearModel) -> np.ndarray:
    """Affinity matrix of the dual gradient: ``grad D(z) = M z + grad D(0)``.

    Symmetric negative semidefinite with rank N; its nonzero eigenvalues are
    ``-2 (lambda_i(A) + 1 / lambda_i(A))``.
    """
    A = model.A
    Ai = model.A_inv
    n = model.n_bus
    I = np.eye(n)
    return np.block([
        [-A, A, -I, I],
        [A, -A, I, -I],
        [-I, I, -Ai, Ai],
        [I, -I, Ai, -Ai],
    ])


def _proj_dist(x, z):
    # |x - max(x + z, 0)| for x >= 0, evaluated without cancellation:
    # equals |z| where x + z >= 0 and x otherwise.
    return np.where(x + z >= 0.0, np.abs(z), x)


def projection_identity_violations(x, z, beta01, a1, a2):
    """Vectorized check of the three scalar projection identities.

    Inputs are broadcastable arrays with ``x, a1, a2 >= 0``, ``beta01`` in
    [0, 1] and ``a1 <= |x - max(x + z, 0)|`` (precondition, validated).
    Returns the number of violated identities across all samples; the
    identities hold exactly in floating point when evaluated this way.
    """
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    beta01 = np.asarray(beta01, dtype=np.float64)
    a1 = np.asarray(a1, dtype=np.float64)
    a2 = np.asarray(a2, dtype=np.float64)
    if np.any(x < 0.0) or np.any(a1 < 0.0) or np.any(a2 < 0.0):
        raise ValueError("x, a1, a2 must be nonnegative")
    if np.any(beta01 < 0.0) or np.any(beta01 > 1.0):
        raise ValueError("beta01 must lie in [0, 1]")
    base = _proj_dist(x, z)
    if np.any(a1 > base):
        raise ValueError("precondition a1 <= |x - max(x + z, 0)| violated")

    # 1) scaling a step never shrinks the projected move by more than its factor
    lhs1 = beta01 * base
    rhs1 = _proj_dist(x, beta01 * z)
    bad = int(np.count_nonzero(lhs1 > rhs1))
    # 2) a sign step of admissible length moves by exactly that length
    sgn = np.where(z > 0.0, 1.0, np.where(z < 0.0, -1.0, 0.0))
    bad += int(np.count_nonzero(_proj_dist(x, a1 * sgn) != a1))
    # 3) the projected step never opposes the step direction
    moved = np.where(x + a2 * z >= 0.0, a2 * z, -x)
    bad += int(np.count_nonzero(z * moved < 0.0))
    return bad


def projection_identities(x: float, z: float, beta01: float,
                          a1: float, a2: float) -> bool:
    """Scalar form of :func:`projection_identity_violations`; True if all hold."""
    return projection_identity_violations(
        np.array([x]), np.array([z]), np.array([beta01]),
        np.array([a1]), np.array([a2])) == 0


@dataclass(frozen=True)
class Certificates:
    """Per-run certificate summary (all quantities for the solved problem)."""

    fes: float
    V: float
    D: float
    delta: float
    iteration_bound: int
    step_alpha: float
    step_beta: float
    alpha_cap: float
    beta_cap: float

    def __post_init__(self):
        if self.fes > self.V:
            raise ValueError("feasibility exceeds merit: certificate corrupt")

    def steps_valid(self) -> bool:
        return self.step_alpha < self.alpha_cap and self.step_beta < self.beta_cap

    def format_report(self) -> str:
        lines = [
            "certificates:",
            f"  fes            = {self.fes:.6e}",
            f"  V (merit)      = {self.V:.6e}",
            f"  D (dual)       = {self.D:.6e}",
            f"  delta          = {self.delta:.6e}",
            f"  round bound    = {self.iteration_bound}",
            f"  alpha          = {self.step_alpha:.6e} (cap {self.alpha_cap:.6e}, "
            f"margin {self.alpha_cap - self.step_alpha:.3e})",
            f"  beta           = {self.step_beta:.6e} (cap {self.beta_cap:.6e}, "
            f"margin {self.beta_cap - self.step_beta:.3e})",
            f"  steps certified: {'yes' if self.steps_valid() else 'NO'}",
        ]
        return "\n".join(lines)
