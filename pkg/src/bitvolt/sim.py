"""Scenario orchestration: static and dynamic runs, traces, and summaries.

A scenario couples a controller parameterization with a plant kind and a
round schedule.  Static runs execute a fixed number of rounds from all-zero
duals (with optional early stop on the feasibility metric); dynamic runs
rescale the real injections once per interval with seeded uniform draws and
keep the dual state warm across intervals.

Randomness: all draws come from NumPy's ``default_rng`` (PCG64, a named and
documented 64-bit generator with portable streams), seeded explicitly and
consumed in fixed bus order, so traces reproduce bit for bit across runs and
platforms for a given backend.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .analysis import descent_increment, effective_bounds, step_size_caps
from .control import ControllerParams, Variant
from .grid import LinearModel, RadialNetwork, build_matrices
from .plant import DistFlowPlant, LinearPlant, OperatingCondition, constant_term

__all__ = [
    "StaticSchedule", "DynamicSchedule", "Scenario", "SimulationTrace",
    "MonitorCounters", "run_static", "run_dynamic", "summarize", "Summary",
    "write_csv", "write_jsonl", "load_csv", "load_jsonl",
]

CSV_HEADER = "t,bus,v,q,q_phy,lmin,lmax,mmin,mmax,fes,V,D,bits,interval"


@dataclass(frozen=True)
class StaticSchedule:
    rounds: int

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")


@dataclass(frozen=True)
class DynamicSchedule:
    intervals: int = 8
    rounds_per_interval: int = 500
    scale_range: tuple[float, float] = (0.75, 1.25)
    seed: int = 0

    def __post_init__(self):
        if self.intervals < 1 or self.rounds_per_interval < 1:
            raise ValueError("intervals and rounds_per_interval must be >= 1")
        lo, hi = self.scale_range
        if lo > hi:
            raise ValueError("scale range must satisfy lo <= hi")


@dataclass
class Scenario:
    kind: StaticSchedule | DynamicSchedule
    params: ControllerParams
    plant: LinearPlant | DistFlowPlant = field(default_factory=LinearPlant)
    stop_threshold: float | None = None
    epsilon: float | None = None
    record_stride: int = 1
    store_scalars: bool = True
    certify: bool = False
    per_link_bits: bool = False
    global_scale: bool = False
    cold_start: bool = False
    backend: str | None = None


@dataclass
class MonitorCounters:
    descent_checks: int = 0
    descent_violations: int = 0
    worst_descent_margin: float = float("inf")
    descent_monitor_active: bool = False
    lemma5b_violations: int = 0
    mirror_violations: int = 0
    max_inj_violation: float = 0.0
    max_distflow_residual: float = 0.0
    max_sweeps_used: int = 0


@dataclass
class SimulationTrace:
    """Recorded rows plus run-level metadata.

    Per-bus arrays have shape (rows, N); ``t``, ``bits`` and ``interval``
    are row-aligned.  ``scalars`` holds the full-resolution per-round series
    (every executed round, not just recorded rows) when enabled.
    """

    n_bus: int
    variant: str
    plant: str
    t: np.ndarray
    interval: np.ndarray
    bits: np.ndarray
    v: np.ndarray
    q: np.ndarray
    q_phy: np.ndarray
    lmin: np.ndarray
    lmax: np.ndarray
    mmin: np.ndarray
    mmax: np.ndarray
    fes: np.ndarray
    V: np.ndarray
    D: np.ndarray
    scalars: dict[str, np.ndarray] | None
    rounds_executed: int
    bits_total: int
    first_feas_t: int
    bits_at_first_feas: int
    post_feas_max_fes: float
    monitors: MonitorCounters
    backend: str
    stopped_early: bool = False
    failed: bool = False
    fail_round: int = -1
    fail_reason: str = ""
    final_state: dict[str, np.ndarray] | None = None

    @property
    def rows(self) -> int:
        return self.t.shape[0]

    def final_dual(self) -> np.ndarray:
        return np.concatenate((self.final_state["lmin"], self.final_state["lmax"],
                               self.final_state["mmin"], self.final_state["mmax"]))


def _bits_per_round(model: LinearModel, params: ControllerParams,
                    per_link: bool) -> int:
    if params.variant is Variant.BASELINE:
        return 0
    if per_link:
        return 2 * sum(len(s) for s in model.neighbor_sets)
    return 2 * model.n_bus


def _loop_inputs(net, model, cond, scenario, rounds, *, t0, bits0, state,
                 emit_initial):
    params = scenario.params
    vmin_e, vmax_e, qmin_e, qmax_e = effective_bounds(cond, params.rho)
    variant = {Variant.VCLB: kernels.VARIANT_VCLB,
               Variant.VCLBP: kernels.VARIANT_VCLBP,
               Variant.BASELINE: kernels.VARIANT_BASELINE}[params.variant]
    is_df = isinstance(scenario.plant, DistFlowPlant)

    certify = False
    delta = 0.0
    eps = -1.0
    if scenario.certify and scenario.epsilon is not None:
        # Descent monitoring lives in dual-gradient theory: it applies to the
        # sign-quantized controller on the linear plant with certified steps.
        _, beta_cap = step_size_caps(model, scenario.epsilon, params.alpha)
        steps_ok = params.alpha < 2.0 / model.L and params.beta < beta_cap
        if params.variant is Variant.VCLB and not is_df and steps_ok:
            certify = True
            delta = descent_increment(params.alpha, params.beta,
                                      scenario.epsilon, model)
        eps = scenario.epsilon

    eps_report = scenario.epsilon if scenario.epsilon is not None else (
        scenario.stop_threshold if scenario.stop_threshold is not None else -1.0)

    a_diag, indptr, indices, a_off = kernels.model_csr(model)
    inp = kernels.LoopInputs(
        A=model.A, d=constant_term(model, cond),
        a_diag=a_diag, nbr_indptr=indptr, nbr_indices=indices, a_off=a_off,
        vmin=cond.v_min, vmax=cond.v_max, qmin=cond.q_min, qmax=cond.q_max,
        vmin_e=vmin_e, vmax_e=vmax_e, qmin_e=qmin_e, qmax_e=qmax_e,
        variant=variant, alpha=params.alpha, beta=params.beta,
        gamma=params.gamma if params.gamma is not None else 0.0,
        plant=kernels.PLANT_DISTFLOW if is_df else kernels.PLANT_LINEAR,
        sweep_order=net.sweep_order, parent=net.parent,
        edge_r=net.edge_r, edge_x=net.edge_x,
        p_inj=cond.p, q_u=cond.q_u, v0=net.v0,
        df_tol=scenario.plant.tolerance if is_df else 0.0,
        df_max_sweeps=scenario.plant.max_sweeps if is_df else 0,
        track_residual=is_df,
        rounds=rounds,
        stop_threshold=(scenario.stop_threshold
                        if scenario.stop_threshold is not None else -1.0),
        eps_report=eps_report,
        bits_per_round=_bits_per_round(model, params, scenario.per_link_bits),
        certify=certify, eps_cert=eps, delta_cert=delta,
        record_stride=scenario.record_stride,
        store_scalars=scenario.store_scalars,
        emit_initial=emit_initial, t0=t0, bits0=bits0,
    )
    if state is None:
        inp.with_zero_state()
    else:
        for k in ("lmin", "lmax", "mmin", "mmax", "mir_lo", "mir_hi"):
            setattr(inp, k, state[k])
    return inp


def _merge(net, model, scenario, cond, pieces, intervals) -> SimulationTrace:
    params = scenario.params
    res_last = pieces[-1]
    mon = MonitorCounters(
        descent_checks=sum(r.descent_checks for r in pieces),
        descent_violations=sum(r.descent_violations for r in pieces),
        worst_descent_margin=min(r.worst_descent_margin for r in pieces),
        descent_monitor_active=any(r.descent_checks for r in pieces),
        lemma5b_violations=sum(r.lemma5b_violations for r in pieces),
        mirror_violations=sum(r.mirror_violations for r in pieces),
        max_inj_violation=max(r.max_inj_violation for r in pieces),
        max_distflow_residual=max(r.max_distflow_residual for r in pieces),
        max_sweeps_used=max(r.max_sweeps_used for r in pieces),
    )
    first = next(((r.first_feas_t, r.bits_at_first_feas)
                  for r in pieces if r.first_feas_t >= 0), (-1, -1))
    post = max((r.post_feas_max_fes for r in pieces), default=0.0)

    n = model.n_bus

    def cat(name):
        parts = []
        for r in pieces:
            a = getattr(r, name)
            if a is None:
                a = (np.zeros((0, n)) if name.startswith("rec_") and name not in
                     ("rec_t", "rec_bits", "rec_fes", "rec_V", "rec_D")
                     else np.zeros(0, dtype=np.int64 if name in ("rec_t", "rec_bits")
                                   else np.float64))
            parts.append(a)
        return np.concatenate(parts)

    rec_rows = [np.full(r.rec_t.shape[0] if r.rec_t is not None else 0,
                        k, dtype=np.int64)
                for k, r in zip(intervals, pieces)]
    scalars = None
    if scenario.store_scalars:
        scalars = {k: np.concatenate([getattr(r, "scal_" + k) for r in pieces])
                   for k in ("t", "fes", "fes_eff", "V", "D", "vviol")}
        scalars["interval"] = np.concatenate(
            [np.full(r.scal_t.shape[0], k, dtype=np.int64)
             for k, r in zip(intervals, pieces)])

    return SimulationTrace(
        n_bus=model.n_bus,
        variant=params.variant.value,
        plant="distflow" if isinstance(scenario.plant, DistFlowPlant) else "linear",
        t=cat("rec_t"), interval=np.concatenate(rec_rows), bits=cat("rec_bits"),
        v=cat("rec_v"), q=cat("rec_q"), q_phy=cat("rec_qphy"),
        lmin=cat("rec_lmin"), lmax=cat("rec_lmax"),
        mmin=cat("rec_mmin"), mmax=cat("rec_mmax"),
        fes=cat("rec_fes"), V=cat("rec_V"), D=cat("rec_D"),
        scalars=scalars,
        rounds_executed=sum(r.rounds_done for r in pieces),
        bits_total=res_last.bits_final,
        first_feas_t=first[0], bits_at_first_feas=first[1],
        post_feas_max_fes=post,
        monitors=mon,
        backend=scenario.backend or kernels.backend_name(),
        stopped_early=res_last.stopped_early,
        failed=any(r.failed for r in pieces),
        fail_round=next((r.fail_round for r in pieces if r.failed), -1),
        fail_reason=next((r.fail_reason for r in pieces if r.failed), ""),
        final_state={"lmin": res_last.lmin, "lmax": res_last.lmax,
                     "mmin": res_last.mmin, "mmax": res_last.mmax,
                     "mir_lo": res_last.mir_lo, "mir_hi": res_last.mir_hi,
                     "q": res_last.q, "q_phy": res_last.q_phy, "v": res_last.v},
    )


def _check(net, cond, scenario):
    if scenario.record_stride < 0:
        raise ValueError("record_stride must be >= 0")
    scenario.params.check_against(cond)
    if cond.n_bus != net.bus_count:
        raise ValueError("operating condition size does not match network")


def run_static(net: RadialNetwork, cond: OperatingCondition,
               scenario: Scenario, model: LinearModel | None = None) -> SimulationTrace:
    """Run a static scenario from all-zero duals; one trace row per round.

    Stops early once the feasibility metric falls to ``stop_threshold`` (if
    set); a plant failure aborts with the partial trace flagged.
    """
    if not isinstance(scenario.kind, StaticSchedule):
        raise ValueError("run_static requires a StaticSchedule scenario")
    _check(net, cond, scenario)
    model = model or build_matrices(net)
    inp = _loop_inputs(net, model, cond, scenario, scenario.kind.rounds,
                       t0=0, bits0=0, state=None, emit_initial=True)
    res = kernels.run_rounds(inp, backend=scenario.backend)
    trace = _merge(net, model, scenario, cond, [res], [0])
    if trace.monitors.mirror_violations:
        raise RuntimeError("internal error: neighbor mirrors diverged")
    return trace


def run_dynamic(net: RadialNetwork, cond: OperatingCondition,
                scenario: Scenario, model: LinearModel | None = None) -> SimulationTrace:
    """Run the fluctuating-load protocol: per interval, rescale the static
    real injections by seeded uniform draws and run a fixed round budget.

    Dual state carries across intervals (warm start) unless
    ``scenario.cold_start``; draws are one scale per bus, or a single global
    scale with ``scenario.global_scale``.
    """
    if not isinstance(scenario.kind, DynamicSchedule):
        raise ValueError("run_dynamic requires a DynamicSchedule scenario")
    _check(net, cond, scenario)
    model = model or build_matrices(net)
    sched = scenario.kind
    rng = np.random.default_rng(sched.seed)
    lo, hi = sched.scale_range

    pieces = []
    intervals = []
    state = None
    t0 = 0
    bits0 = 0
    p_static = cond.p.copy()
    for k in range(sched.intervals):
        if scenario.global_scale:
            scale = np.full(net.bus_count, rng.uniform(lo, hi))
        else:
            scale = rng.uniform(lo, hi, size=net.bus_count)
        cond_k = dataclasses.replace(cond, p=p_static * scale)
        inp = _loop_inputs(net, model, cond_k, scenario,
                           sched.rounds_per_interval,
                           t0=t0, bits0=bits0,
                           state=None if scenario.cold_start else state,
                           emit_initial=(k == 0))
        if scenario.cold_start and state is not None:
            inp.with_zero_state()
        res = kernels.run_rounds(inp, backend=scenario.backend)
        pieces.append(res)
        intervals.append(k)
        state = {"lmin": res.lmin, "lmax": res.lmax, "mmin": res.mmin,
                 "mmax": res.mmax, "mir_lo": res.mir_lo, "mir_hi": res.mir_hi}
        t0 = res.t_final
        bits0 = res.bits_final
        if res.failed:
            break
    trace = _merge(net, model, scenario, cond, pieces, intervals)
    if trace.monitors.mirror_violations:
        raise RuntimeError("internal error: neighbor mirrors diverged")
    return trace


# --- summaries --------------------------------------------------------------

@dataclass
class Summary:
    epsilon: float | None
    reached: bool
    first_feas_t: int
    bits_at_first_feas: int
    post_feas_max_fes: float
    final_fes: float
    final_gap_q_phy: float
    max_inj_violation: float
    rounds: int
    bits_total: int
    intervals_reached: list[bool] | None
    failed: bool
    band_tol: float = 0.0
    first_vband_t: int = -1
    vband_holds_from: int = -1

    def format(self) -> str:
        out = ["run summary:"]
        if self.failed:
            out.append("  PLANT FAILURE: trace is partial")
        if self.epsilon is not None:
            if self.reached:
                out.append(f"  fes <= {self.epsilon:g} first reached at round "
                           f"{self.first_feas_t} ({self.bits_at_first_feas} bits)")
                out.append(f"  max fes after first reach = {self.post_feas_max_fes:.6e}")
            else:
                out.append(f"  fes <= {self.epsilon:g} not reached; "
                           f"final fes = {self.final_fes:.6e}")
        out.append(f"  final fes = {self.final_fes:.6e}")
        out.append(f"  final max |q - q_phy| = {self.final_gap_q_phy:.6e}")
        out.append(f"  max injected capacity violation = {self.max_inj_violation:.6e}")
        out.append(f"  rounds = {self.rounds}, bits = {self.bits_total}")
        if self.first_vband_t >= 0:
            out.append(f"  voltage band (tol {self.band_tol:g}) first reached at "
                       f"round {self.first_vband_t}; holds from round "
                       f"{self.vband_holds_from}")
        if self.intervals_reached is not None:
            flags = ",".join("yes" if f else "NO" for f in self.intervals_reached)
            out.append(f"  voltage band reached per interval: [{flags}]")
        return "\n".join(out)


def summarize(trace: SimulationTrace, epsilon: float | None = None,
              band_tol: float = 0.0) -> Summary:
    """Convergence report: first feasible round, persistence, safety.

    `band_tol` is the slack (in squared-voltage units) under which a profile
    counts as inside the voltage band; the regulated equilibrium sits exactly
    on a band edge whenever the band constraint is active at the optimum, so
    strict membership is only reached transiently.
    """
    if trace.rows == 0:
        raise ValueError("empty trace")
    final_fes = float(trace.fes[-1])
    gap = float(np.max(np.abs(trace.q[-1] - trace.q_phy[-1])))
    intervals_reached = None
    first_vband = -1
    holds_from = -1
    if trace.scalars is not None:
        vv = trace.scalars["vviol"]
        tt = trace.scalars["t"]
        in_band = np.flatnonzero(vv <= band_tol)
        if in_band.size:
            first_vband = int(tt[in_band[0]])
            k = vv.shape[0]
            while k > 0 and vv[k - 1] <= band_tol:
                k -= 1
            holds_from = int(tt[k]) if k < vv.shape[0] else -1
        if np.max(trace.interval) > 0:
            intervals_reached = []
            iv = trace.scalars["interval"]
            for k in range(int(np.max(iv)) + 1):
                mask = iv == k
                intervals_reached.append(bool(np.any(vv[mask] <= band_tol)))
    first = trace.first_feas_t
    return Summary(
        epsilon=epsilon,
        reached=first >= 0,
        first_feas_t=first,
        bits_at_first_feas=trace.bits_at_first_feas,
        post_feas_max_fes=trace.post_feas_max_fes,
        final_fes=final_fes,
        final_gap_q_phy=gap,
        max_inj_violation=trace.monitors.max_inj_violation,
        rounds=trace.rounds_executed,
        bits_total=trace.bits_total,
        intervals_reached=intervals_reached,
        failed=trace.failed,
        band_tol=band_tol,
        first_vband_t=first_vband,
        vband_holds_from=holds_from,
    )


# --- trace files ------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.12g}"


def write_csv(trace: SimulationTrace, path) -> None:
    """Long-format CSV: one line per (round, bus); 12 significant digits."""
    with open(path, "w", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for r in range(trace.rows):
            t = trace.t[r]
            tail = f"{_fmt(trace.fes[r])},{_fmt(trace.V[r])},{_fmt(trace.D[r])}," \
                   f"{trace.bits[r]},{trace.interval[r]}"
            for b in range(trace.n_bus):
                fh.write(f"{t},{b + 1},{_fmt(trace.v[r, b])},{_fmt(trace.q[r, b])},"
                         f"{_fmt(trace.q_phy[r, b])},{_fmt(trace.lmin[r, b])},"
                         f"{_fmt(trace.lmax[r, b])},{_fmt(trace.mmin[r, b])},"
                         f"{_fmt(trace.mmax[r, b])},{tail}\n")


def write_jsonl(trace: SimulationTrace, path) -> None:
    """One JSON record per round with per-bus arrays; 12 significant digits."""
    def arr(a):
        return "[" + ",".join(_fmt(x) for x in a) + "]"

    with open(path, "w", newline="\n") as fh:
        for r in range(trace.rows):
            fh.write('{"t":%d,"interval":%d,"bits":%d,"fes":%s,"V":%s,"D":%s'
                     % (trace.t[r], trace.interval[r], trace.bits[r],
                        _fmt(trace.fes[r]), _fmt(trace.V[r]), _fmt(trace.D[r])))
            for name in ("v", "q", "q_phy", "lmin", "lmax", "mmin", "mmax"):
                fh.write(f',"{name}":{arr(getattr(trace, name)[r])}')
            fh.write("}\n")


@dataclass
class TraceData:
    """Trace rows reloaded from disk (for the analyze command and tests)."""

    t: np.ndarray
    interval: np.ndarray
    bits: np.ndarray
    v: np.ndarray
    q: np.ndarray
    q_phy: np.ndarray
    lmin: np.ndarray
    lmax: np.ndarray
    mmin: np.ndarray
    mmax: np.ndarray
    fes: np.ndarray
    V: np.ndarray
    D: np.ndarray

    @property
    def rows(self) -> int:
        return self.t.shape[0]

    def dual_at(self, r: int) -> np.ndarray:
        return np.concatenate((self.lmin[r], self.lmax[r], self.mmin[r], self.mmax[r]))


def load_csv(path) -> TraceData:
    raw = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="utf-8")
    raw = np.atleast_1d(raw)
    t_col = raw["t"].astype(np.int64)
    bus = raw["bus"].astype(np.int64)
    n = int(bus.max())
    rows = t_col.shape[0] // n
    if rows * n != t_col.shape[0]:
        raise ValueError("trace file is ragged: bus rows missing")
    shape = (rows, n)
    per_bus = {k: raw[k].reshape(shape) for k in
               ("v", "q", "q_phy", "lmin", "lmax", "mmin", "mmax")}
    per_round = {k: raw[k].reshape(shape)[:, 0] for k in ("fes", "V", "D")}
    return TraceData(
        t=t_col.reshape(shape)[:, 0],
        interval=raw["interval"].astype(np.int64).reshape(shape)[:, 0],
        bits=raw["bits"].astype(np.int64).reshape(shape)[:, 0],
        fes=per_round["fes"], V=per_round["V"], D=per_round["D"], **per_bus)


def load_jsonl(path) -> TraceData:
    recs = [json.loads(line) for line in open(path) if line.strip()]
    if not recs:
        raise ValueError("empty trace file")
    get = lambda k, dt=np.float64: np.asarray([r[k] for r in recs], dtype=dt)
    return TraceData(
        t=get("t", np.int64), interval=get("interval", np.int64),
        bits=get("bits", np.int64), fes=get("fes"), V=get("V"), D=get("D"),
        v=get("v"), q=get("q"), q_phy=get("q_phy"),
        lmin=get("lmin"), lmax=get("lmax"), mmin=get("mmin"), mmax=get("mmax"))
