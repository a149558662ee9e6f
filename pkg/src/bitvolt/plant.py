"""Physical plant: voltage response to reactive injections.

Two plant kinds are supported.  The linear plant evaluates the linearized
response ``A q + d`` exactly; the DistFlow plant solves the full nonlinear
branch-flow equations on the radial tree with a backward/forward sweep,
standing in for a production power-flow engine.  Controllers only ever see
the voltages a plant returns, never flows or internal state.

Sign convention: ``p < 0`` is consumption (load).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .grid import LinearModel, RadialNetwork, voltage_map

__all__ = [
    "OperatingCondition", "LinearPlant", "DistFlowPlant", "Plant",
    "DistFlowNonConvergence", "constant_term", "evaluate_voltage",
    "linearization_gap", "distflow_solution",
]


class DistFlowNonConvergence(RuntimeError):
    """Sweep failed to settle; typically infeasible or extreme loading."""


def _vec(a, n, name):
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite values")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class OperatingCondition:
    """Fixed injections and operating boxes for one scenario.

    ``p`` are real injections, ``q_u`` non-controllable reactive injections.
    ``v_min``/``v_max`` bound squared voltages, ``q_min``/``q_max`` bound the
    controllable reactive injection, all per-unit and componentwise.
    """

    p: np.ndarray
    q_u: np.ndarray
    v_min: np.ndarray
    v_max: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.p).shape[0]
        for name in ("p", "q_u", "v_min", "v_max", "q_min", "q_max"):
            object.__setattr__(self, name, _vec(getattr(self, name), n, name))
        if np.any(self.q_min > self.q_max):
            bad = int(np.argmax(self.q_min > self.q_max)) + 1
            raise ValueError(f"empty reactive box at bus {bad}: q_min > q_max")
        if np.any(self.v_min > self.v_max):
            bad = int(np.argmax(self.v_min > self.v_max)) + 1
            raise ValueError(f"empty voltage box at bus {bad}: v_min > v_max")

    @property
    def n_bus(self) -> int:
        return self.p.shape[0]


@dataclass(frozen=True)
class LinearPlant:
    pass


@dataclass(frozen=True)
class DistFlowPlant:
    tolerance: float = 1e-10
    max_sweeps: int = 100

    def __post_init__(self):
        if not self.tolerance > 0.0:
            raise ValueError("tolerance must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")


def constant_term(model: LinearModel, cond: OperatingCondition) -> np.ndarray:
    """Constant part of the voltage response: ``A q_u + B p + 1 v0``."""
    if cond.n_bus != model.n_bus:
        raise ValueError("operating condition does not match model size")
    return model.A @ cond.q_u + model.B @ cond.p + model.v0


def distflow_solution(net: RadialNetwork, cond: OperatingCondition, q,
                      tolerance=1e-10, max_sweeps=100, include_loss=True):
    """Sweep solution ``(v_buses, send_p, send_q)`` including the feeder bus.

    Raises :class:`DistFlowNonConvergence` if the sweep does not settle.
    """
    n = net.bus_count
    q = _vec(q, n, "q")
    p_bus = np.zeros(n + 1)
    p_bus[1:] = cond.p
    q_bus = np.zeros(n + 1)
    q_bus[1:] = cond.q_u + q
    v, sp, sq, ell, sweeps, conv = kernels.distflow_sweep(
        net.sweep_order, net.parent, net.edge_r, net.edge_x,
        p_bus, q_bus, net.v0, tolerance, max_sweeps, include_loss=include_loss)
    if not conv:
        raise DistFlowNonConvergence(
            f"sweep did not converge within {max_sweeps} sweeps "
            f"(tolerance {tolerance:g})")
    return v, sp, sq


def distflow_residual(net: RadialNetwork, cond: OperatingCondition, q,
                      v, send_p, send_q) -> float:
    """Max-abs branch-flow residual of a candidate sweep solution."""
    n = net.bus_count
    p_bus = np.zeros(n + 1)
    p_bus[1:] = cond.p
    q_bus = np.zeros(n + 1)
    q_bus[1:] = cond.q_u + np.asarray(q, dtype=np.float64)
    return kernels.distflow_residual(net.sweep_order, net.parent, net.edge_r,
                                     net.edge_x, p_bus, q_bus, v, send_p, send_q)


def evaluate_voltage(kind, net: RadialNetwork, model: LinearModel,
                     cond: OperatingCondition, q) -> np.ndarray:
    """Squared branch-bus voltages under plant `kind` at injection `q`."""
    n = model.n_bus
    q = _vec(q, n, "q")
    if isinstance(kind, LinearPlant):
        return voltage_map(model, q, constant_term(model, cond))
    if isinstance(kind, DistFlowPlant):
        v, _, _ = distflow_solution(net, cond, q, kind.tolerance, kind.max_sweeps)
        return v[1:].copy()
    raise TypeError(f"unknown plant kind: {kind!r}")


def linearization_gap(net: RadialNetwork, model: LinearModel,
                      cond: OperatingCondition, q,
                      kind: DistFlowPlant = DistFlowPlant()) -> float:
    """Max-abs voltage difference between the linear and DistFlow plants."""
    v_lin = evaluate_voltage(LinearPlant(), net, model, cond, q)
    v_nl = evaluate_voltage(kind, net, model, cond, q)
    return float(np.max(np.abs(v_lin - v_nl)))


class Plant:
    """Bundled evaluator used by the controller round loop."""

    def __init__(self, kind, net: RadialNetwork, model: LinearModel,
                 cond: OperatingCondition):
        self.kind = kind
        self.net = net
        self.model = model
        self.cond = cond
        self.d = constant_term(model, cond)

    def voltages(self, q) -> np.ndarray:
        if isinstance(self.kind, LinearPlant):
            return voltage_map(self.model, np.asarray(q, dtype=np.float64), self.d)
        return evaluate_voltage(self.kind, self.net, self.model, self.cond, q)
