"""Per-bus controllers exchanging two-bit messages in synchronous rounds.

Three controller variants share one round structure:

``VCLB``
    Sign-quantized dual ascent.  Each bus computes its reactive setpoint
    from its own voltage multipliers and the capacity multipliers of itself
    and its grid neighbors (held as local mirrors), injects it, measures
    its voltage, broadcasts the two capacity-violation signs, and advances
    all multipliers with projected steps.
``VCLBP``
    Same controller, but the *injected* value is clamped to the capacity
    box every round; voltage measurements and multiplier updates follow the
    clamped injection, while setpoint and messages keep using the raw value.
``BASELINE``
    Unquantized projected dual gradient with a single step size; neighbors
    exchange exact multiplier values instead of signs.

Convention fixed throughout: the ``lo`` member of a dual pair multiplies the
lower-bound constraint (``min - value``) and ``hi`` the upper-bound one
(``value - max``); ``sign(0) := -1`` so exact boundary contact does not push
a multiplier up.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .plant import Plant

__all__ = [
    "DualPair", "QuantizedMessage", "Variant", "ControllerParams",
    "ControllerState", "RoundResult", "primal_update", "quantize",
    "dual_update_lambda", "dual_update_mu", "project_capacity",
    "step_round", "init_states", "verify_mirrors",
]


@dataclass(frozen=True)
class DualPair:
    """Multipliers of a box constraint: `lo` for the lower bound, `hi` upper."""

    lo: float = 0.0
    hi: float = 0.0

    def __post_init__(self):
        if self.lo < 0.0 or self.hi < 0.0:
            raise ValueError("dual variables must be nonnegative")


def _sign(t: float) -> int:
    return 1 if t > 0.0 else -1


@dataclass(frozen=True)
class QuantizedMessage:
    """Two-bit capacity broadcast: ``b_hi = sign(q - q_max)``, ``b_lo = sign(q_min - q)``."""

    b_hi: int
    b_lo: int

    def __post_init__(self):
        if self.b_hi not in (-1, 1) or self.b_lo not in (-1, 1):
            raise ValueError("message components must be -1 or +1")

    def encode(self) -> int:
        """Wire format: bit0 = (b_hi+1)/2, bit1 = (b_lo+1)/2."""
        return (self.b_hi + 1) // 2 | ((self.b_lo + 1) // 2) << 1

    @classmethod
    def decode(cls, code: int) -> "QuantizedMessage":
        if not 0 <= code <= 3:
            raise ValueError("message code must fit in two bits")
        return cls(b_hi=(code & 1) * 2 - 1, b_lo=((code >> 1) & 1) * 2 - 1)


class Variant(enum.Enum):
    VCLB = "vclb"
    VCLBP = "vclbp"
    BASELINE = "baseline"


@dataclass(frozen=True)
class ControllerParams:
    """Step sizes and variant selection.

    `rho` tightens both operating boxes uniformly (exact-solution mode);
    it must leave every box nonempty, which :meth:`check_against` verifies
    for a concrete operating condition.  `gamma` is only used by the
    unquantized baseline.
    """

    alpha: float
    beta: float
    rho: float = 0.0
    variant: Variant = Variant.VCLB
    gamma: float | None = None

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise ValueError("alpha must be positive")
        if not self.beta > 0.0:
            raise ValueError("beta must be positive")
        if self.rho < 0.0:
            raise ValueError("rho must be nonnegative")
        if self.variant is Variant.BASELINE:
            if self.gamma is None or not self.gamma > 0.0:
                raise ValueError("baseline variant requires gamma > 0")
        elif self.gamma is not None:
            raise ValueError("gamma only applies to the baseline variant")

    def check_against(self, cond) -> None:
        if self.rho == 0.0:
            return
        half_q = float(np.min((cond.q_max - cond.q_min) / 2.0))
        half_v = float(np.min((cond.v_max - cond.v_min) / 2.0))
        if self.rho >= min(half_q, half_v):
            raise ValueError(
                f"rho={self.rho:g} empties a tightened box "
                f"(min half-widths: q {half_q:g}, v {half_v:g})")


@dataclass(frozen=True)
class ControllerState:
    """State owned by one bus (bus ids are 1-based)."""

    bus: int
    lam: DualPair = field(default_factory=DualPair)
    mu: DualPair = field(default_factory=DualPair)
    mu_mirror: dict[int, DualPair] = field(default_factory=dict)
    q: float = 0.0
    q_phy: float = 0.0
    a_self: float = 0.0
    a_neighbors: tuple[tuple[int, float], ...] = ()


@dataclass(frozen=True)
class RoundResult:
    q: np.ndarray
    q_phy: np.ndarray
    v: np.ndarray
    messages: tuple
    bits: int


def primal_update(state: ControllerState) -> float:
    """Next reactive setpoint of one bus from last round's dual state."""
    q = state.lam.lo - state.lam.hi + state.a_self * (state.mu.lo - state.mu.hi)
    for j, a_ij in state.a_neighbors:
        mj = state.mu_mirror[j]
        q += a_ij * (mj.lo - mj.hi)
    return q


def quantize(q: float, q_min_eff: float, q_max_eff: float) -> QuantizedMessage:
    """Two-bit message for a setpoint against the (tightened) capacity box."""
    if q_min_eff > q_max_eff:
        raise ValueError("empty effective capacity box")
    return QuantizedMessage(b_hi=_sign(q - q_max_eff), b_lo=_sign(q_min_eff - q))


def dual_update_lambda(lam: DualPair, v: float, v_min_eff: float,
                       v_max_eff: float, alpha: float) -> DualPair:
    """Projected voltage-multiplier step from a local voltage measurement."""
    return DualPair(lo=max(lam.lo + alpha * (v_min_eff - v), 0.0),
                    hi=max(lam.hi + alpha * (v - v_max_eff), 0.0))


def dual_update_mu(mu: DualPair, msg: QuantizedMessage, beta: float) -> DualPair:
    """Projected capacity-multiplier step driven by a two-bit message."""
    return DualPair(lo=max(mu.lo + beta * msg.b_lo, 0.0),
                    hi=max(mu.hi + beta * msg.b_hi, 0.0))


def project_capacity(q: float, q_min: float, q_max: float) -> float:
    """Clamp a setpoint to the physical capacity box."""
    if q_min > q_max:
        raise ValueError("empty capacity box")
    return max(min(q, q_max), q_min)


def init_states(model, params: ControllerParams) -> list[ControllerState]:
    """All-zero controller states wired to the sparse rows of ``A_inv``."""
    states = []
    for i in range(model.n_bus):
        nbrs = model.neighbor_sets[i]
        states.append(ControllerState(
            bus=i + 1,
            mu_mirror={j + 1: DualPair() for j in nbrs},
            a_self=float(model.A_inv[i, i]),
            a_neighbors=tuple((j + 1, float(model.A_inv[i, j])) for j in nbrs),
        ))
    return states


def verify_mirrors(states: list[ControllerState]) -> None:
    """Raise if any mirror disagrees with its owner's value (exact match)."""
    by_bus = {s.bus: s for s in states}
    for s in states:
        for j, mj in s.mu_mirror.items():
            owner = by_bus[j].mu
            if mj.lo != owner.lo or mj.hi != owner.hi:
                raise RuntimeError(
                    f"mirror of bus {j} at bus {s.bus} diverged: "
                    f"{mj} != {owner}")


def step_round(states: list[ControllerState], plant: Plant,
               params: ControllerParams, cond,
               per_link_bits: bool = False) -> tuple[list[ControllerState], RoundResult]:
    """Execute one synchronous round; returns new states and the round trace.

    Per-bus updates read only the previous round's snapshot, so the result
    is independent of bus ordering.  Mirror updates apply the exact same
    projected step as the owning bus, keeping mirrors bit-identical.
    """
    verify_mirrors(states)
    n = len(states)
    if sorted(s.bus for s in states) != list(range(1, n + 1)):
        raise ValueError("states must cover buses 1..N exactly once")
    rho = params.rho
    qmin_e = cond.q_min + rho
    qmax_e = cond.q_max - rho
    vmin_e = cond.v_min + rho
    vmax_e = cond.v_max - rho

    # all round outputs are indexed by bus position, not by list order
    q = np.zeros(n)
    for s in states:
        q[s.bus - 1] = primal_update(s)
    if params.variant is Variant.VCLBP:
        q_phy = np.array([project_capacity(q[i], cond.q_min[i], cond.q_max[i])
                          for i in range(n)])
    else:
        q_phy = q.copy()
    v = plant.voltages(q_phy)

    if params.variant is Variant.BASELINE:
        messages: tuple = ()
        new_lam = {s.bus: DualPair(
            lo=max(s.lam.lo + params.gamma * (vmin_e[s.bus - 1] - v[s.bus - 1]), 0.0),
            hi=max(s.lam.hi + params.gamma * (v[s.bus - 1] - vmax_e[s.bus - 1]), 0.0))
            for s in states}
        new_mu = {s.bus: DualPair(
            lo=max(s.mu.lo + params.gamma * (qmin_e[s.bus - 1] - q[s.bus - 1]), 0.0),
            hi=max(s.mu.hi + params.gamma * (q[s.bus - 1] - qmax_e[s.bus - 1]), 0.0))
            for s in states}
        bits = 0
    else:
        messages = tuple(quantize(q[i], qmin_e[i], qmax_e[i]) for i in range(n))
        new_lam = {s.bus: dual_update_lambda(s.lam, v[s.bus - 1],
                                             vmin_e[s.bus - 1], vmax_e[s.bus - 1],
                                             params.alpha)
                   for s in states}
        new_mu = {s.bus: dual_update_mu(s.mu, messages[s.bus - 1], params.beta)
                  for s in states}
        if per_link_bits:
            bits = sum(2 * len(s.a_neighbors) for s in states)
        else:
            bits = 2 * n

    new_states = []
    for s in states:
        if params.variant is Variant.BASELINE:
            mirror = {j: new_mu[j] for j in s.mu_mirror}
        else:
            mirror = {j: dual_update_mu(s.mu_mirror[j], messages[j - 1], params.beta)
                      for j in s.mu_mirror}
        new_states.append(replace(s, lam=new_lam[s.bus], mu=new_mu[s.bus],
                                  mu_mirror=mirror, q=float(q[s.bus - 1]),
                                  q_phy=float(q_phy[s.bus - 1])))
    verify_mirrors(new_states)
    return new_states, RoundResult(q=q, q_phy=q_phy, v=v, messages=messages, bits=bits)
