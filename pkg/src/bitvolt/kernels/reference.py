"""Pure-NumPy round-loop kernel (fallback backend).

Semantics of one synchronous round, executed identically by the compiled
backend: every bus computes its next reactive setpoint from last round's
dual state (own voltage multipliers, own capacity multipliers, and the
mirrored capacity multipliers of its grid neighbors), the plant responds,
two-bit capacity messages are broadcast, and all dual variables plus the
neighbor mirrors are advanced and projected onto the nonnegative orthant.

The loop also evaluates, after every round, the dual-problem monitors used
by the certificates: merit ``V`` and dual objective ``D`` at the new dual
point (via the linear model and the rho-tightened boxes), the descent
check on ``D``, and the feasibility/merit domination check.
"""

from __future__ import annotations

import numpy as np

from .common import (
    PLANT_DISTFLOW,
    PLANT_LINEAR,
    VARIANT_BASELINE,
    VARIANT_VCLB,
    VARIANT_VCLBP,
    LoopInputs,
    LoopResult,
)

BACKEND_NAME = "python"


def distflow_sweep(order, parent, edge_r, edge_x, p_bus, q_bus, v0, tol,
                   max_sweeps, include_loss=True):
    """Backward/forward sweep for radial branch-flow power flow.

    `p_bus`, `q_bus` are injections indexed by bus id (entry 0 ignored).
    Returns ``(v, send_p, send_q, ell, sweeps, converged)`` where `v` holds
    squared voltage magnitudes for buses ``0..N``, ``send_p``/``send_q`` the
    sending-end flow on the edge into each bus, and `ell` the squared
    current magnitude estimate used for the loss terms.
    """
    nb = parent.shape[0]
    v = np.full(nb, v0)
    send_p = np.zeros(nb)
    send_q = np.zeros(nb)
    ell = np.zeros(nb)
    rev = order[::-1]
    sweeps = 0
    converged = False
    for sweeps in range(1, max_sweeps + 1):
        v_prev = v.copy()
        acc_p = np.zeros(nb)
        acc_q = np.zeros(nb)
        acc_p[1:] = -p_bus[1:]
        acc_q[1:] = -q_bus[1:]
        for b in rev:
            rp = acc_p[b]
            rq = acc_q[b]
            lh = (rp * rp + rq * rq) / v[b] if include_loss else 0.0
            ell[b] = lh
            send_p[b] = rp + edge_r[b] * lh
            send_q[b] = rq + edge_x[b] * lh
            pa = parent[b]
            acc_p[pa] += send_p[b]
            acc_q[pa] += send_q[b]
        for b in order:
            pa = parent[b]
            v[b] = (v[pa]
                    - 2.0 * (edge_r[b] * send_p[b] + edge_x[b] * send_q[b])
                    + (edge_r[b] * edge_r[b] + edge_x[b] * edge_x[b]) * ell[b])
            if not v[b] > 0.0:
                return v, send_p, send_q, ell, sweeps, False
        if np.max(np.abs(v - v_prev)) <= tol:
            converged = True
            break
    return v, send_p, send_q, ell, sweeps, converged


def distflow_residual(order, parent, edge_r, edge_x, p_bus, q_bus, v, send_p, send_q):
    """Max-abs residual of the branch-flow equations at a candidate solution.

    Independent of the sweep's internal loss estimate: the squared current
    is recomputed from the sending end, ``ell = (P^2 + Q^2) / v_parent``.
    """
    nb = parent.shape[0]
    child_p = np.zeros(nb)
    child_q = np.zeros(nb)
    for b in order:
        pa = parent[b]
        child_p[pa] += send_p[b]
        child_q[pa] += send_q[b]
    res = 0.0
    for b in order:
        pa = parent[b]
        l_send = (send_p[b] * send_p[b] + send_q[b] * send_q[b]) / v[pa]
        res = max(res, abs(send_p[b] - edge_r[b] * l_send - (-p_bus[b] + child_p[b])))
        res = max(res, abs(send_q[b] - edge_x[b] * l_send - (-q_bus[b] + child_q[b])))
        res = max(res, abs(v[b] - (v[pa]
                                   - 2.0 * (edge_r[b] * send_p[b] + edge_x[b] * send_q[b])
                                   + (edge_r[b] ** 2 + edge_x[b] ** 2) * l_send)))
    return res


def _neighbor_sum(n, indptr, indices, a_off, vec):
    # Sequential per-row accumulation in storage order; matches the compiled
    # backend bit for bit (rows are tiny, np.add.at applies in order).
    out = np.zeros(n)
    if indices.shape[0]:
        rows = np.repeat(np.arange(n), np.diff(indptr))
        np.add.at(out, rows, a_off * vec[indices])
    return out


def run_rounds(inp: LoopInputs) -> LoopResult:
    n = inp.d.shape[0]
    m = inp.nbr_indices.shape[0]
    rows = np.repeat(np.arange(n), np.diff(inp.nbr_indptr)) if m else np.zeros(0, dtype=np.int64)

    lmin = inp.lmin.copy()
    lmax = inp.lmax.copy()
    mmin = inp.mmin.copy()
    mmax = inp.mmax.copy()
    mir_lo = inp.mir_lo.copy()
    mir_hi = inp.mir_hi.copy()

    p_bus = np.zeros(n + 1)
    p_bus[1:] = inp.p_inj
    q_bus = np.zeros(n + 1)

    def plant_eval(q_ctrl):
        if inp.plant == PLANT_LINEAR:
            return inp.A @ q_ctrl + inp.d, 0.0, 0
        q_bus[1:] = inp.q_u + q_ctrl
        v, sp, sq, ell, sweeps, conv = distflow_sweep(
            inp.sweep_order, inp.parent, inp.edge_r, inp.edge_x,
            p_bus, q_bus, inp.v0, inp.df_tol, inp.df_max_sweeps)
        if not conv:
            raise _PlantFailure("distflow did not converge "
                                f"within {inp.df_max_sweeps} sweeps")
        resid = 0.0
        if inp.track_residual:
            resid = distflow_residual(inp.sweep_order, inp.parent, inp.edge_r,
                                      inp.edge_x, p_bus, q_bus, v, sp, sq)
        return v[1:].copy(), resid, sweeps

    def primal(lmin_, lmax_, mmin_, mmax_, mir_lo_, mir_hi_):
        # Distributed update: self coefficient uses the bus's own capacity
        # multipliers, neighbor coefficients use the mirrored copies.
        return (lmin_ - lmax_
                + inp.a_diag * (mmin_ - mmax_)
                + _neighbor_sum(n, inp.nbr_indptr, inp.nbr_indices, inp.a_off,
                                mir_lo_ - mir_hi_))

    def monitor_eval(q_pend):
        # gradient blocks of the (rho-tightened) dual at the current duals
        v_lin = inp.A @ q_pend + inp.d
        g_lmin = inp.vmin_e - v_lin
        g_lmax = v_lin - inp.vmax_e
        g_mmin = inp.qmin_e - q_pend
        g_mmax = q_pend - inp.qmax_e
        g = np.concatenate((g_lmin, g_lmax, g_mmin, g_mmax))
        z = np.concatenate((lmin, lmax, mmin, mmax))
        # stable projection-distance forms: per component the merit addend
        # dominates the feasibility addend exactly, so Lemma-5b domination
        # holds without rounding slop.
        fes_add = np.maximum(g, 0.0)
        v_add = np.where(z + g >= 0.0, np.abs(g), z)
        fes_lin = float(np.sqrt(np.sum(fes_add * fes_add)))
        merit = float(np.sqrt(np.sum(v_add * v_add)))
        dual_obj = float(0.5 * (q_pend @ (v_lin - inp.d)) + z @ g)
        return v_lin, g_lmin, g_lmax, g_mmin, g_mmax, fes_lin, merit, dual_obj

    def fes_pair(q_ctrl, v_meas):
        qv = np.concatenate((np.maximum(inp.qmin - q_ctrl, 0.0),
                             np.maximum(q_ctrl - inp.qmax, 0.0)))
        vv = np.concatenate((np.maximum(inp.vmin - v_meas, 0.0),
                             np.maximum(v_meas - inp.vmax, 0.0)))
        fes = float(np.sqrt(np.sum(qv * qv) + np.sum(vv * vv)))
        qe = np.concatenate((np.maximum(inp.qmin_e - q_ctrl, 0.0),
                             np.maximum(q_ctrl - inp.qmax_e, 0.0)))
        ve = np.concatenate((np.maximum(inp.vmin_e - v_meas, 0.0),
                             np.maximum(v_meas - inp.vmax_e, 0.0)))
        fes_eff = float(np.sqrt(np.sum(qe * qe) + np.sum(ve * ve)))
        vviol = float(np.max(vv)) if n else 0.0
        return fes, fes_eff, vviol

    # --- allocation: stride 0 keeps only the forced rows ------------------
    record = True
    n_alloc = (inp.rounds // inp.record_stride + 3) if inp.record_stride > 0 else 4
    rec = {k: np.zeros((n_alloc, n)) for k in
           ("v", "q", "qphy", "lmin", "lmax", "mmin", "mmax")} if record else {}
    rec_t = np.zeros(n_alloc, dtype=np.int64)
    rec_bits = np.zeros(n_alloc, dtype=np.int64)
    rec_fes = np.zeros(n_alloc)
    rec_V = np.zeros(n_alloc)
    rec_D = np.zeros(n_alloc)
    n_rec = 0

    n_scal = inp.rounds + 2 if inp.store_scalars else 0
    scal_t = np.zeros(n_scal, dtype=np.int64)
    scal = {k: np.zeros(n_scal) for k in ("fes", "fes_eff", "V", "D", "vviol")}
    n_sc = 0

    res = LoopResult(rounds_done=0, t_final=inp.t0, bits_final=inp.bits0,
                     lmin=lmin, lmax=lmax, mmin=mmin, mmax=mmax,
                     mir_lo=mir_lo, mir_hi=mir_hi,
                     q=np.zeros(n), q_phy=np.zeros(n), v=np.zeros(n))

    def emit(t, bits, q_c, qp_c, v_c, fes, merit, dual_obj, force=False):
        nonlocal n_rec
        if not record:
            return
        if n_rec and rec_t[n_rec - 1] == t:
            return
        if not force and inp.record_stride != 1 and (
                inp.record_stride == 0 or t % inp.record_stride != 0):
            return
        rec_t[n_rec] = t
        rec_bits[n_rec] = bits
        rec_fes[n_rec] = fes
        rec_V[n_rec] = merit
        rec_D[n_rec] = dual_obj
        rec["v"][n_rec] = v_c
        rec["q"][n_rec] = q_c
        rec["qphy"][n_rec] = qp_c
        rec["lmin"][n_rec] = lmin
        rec["lmax"][n_rec] = lmax
        rec["mmin"][n_rec] = mmin
        rec["mmax"][n_rec] = mmax
        n_rec += 1

    def emit_scal(t, fes, fes_eff, merit, dual_obj, vviol):
        nonlocal n_sc
        if not inp.store_scalars:
            return
        scal_t[n_sc] = t
        scal["fes"][n_sc] = fes
        scal["fes_eff"][n_sc] = fes_eff
        scal["V"][n_sc] = merit
        scal["D"][n_sc] = dual_obj
        scal["vviol"][n_sc] = vviol
        n_sc += 1

    bits = inp.bits0
    t = inp.t0
    q_cur = np.zeros(n)
    qphy_cur = np.zeros(n)

    q_pend = primal(lmin, lmax, mmin, mmax, mir_lo, mir_hi)
    v_lin, g_lmin, g_lmax, g_mmin, g_mmax, fes_lin, V_cur, D_cur = monitor_eval(q_pend)

    try:
        if inp.emit_initial:
            v_cur, resid, sweeps = plant_eval(q_cur)
            res.max_distflow_residual = max(res.max_distflow_residual, resid)
            res.max_sweeps_used = max(res.max_sweeps_used, sweeps)
            fes0, fes_eff0, vviol0 = fes_pair(q_cur, v_cur)
            emit(t, bits, q_cur, qphy_cur, v_cur, fes0, V_cur, D_cur, force=True)
            emit_scal(t, fes0, fes_eff0, V_cur, D_cur, vviol0)
            res.q, res.q_phy, res.v = q_cur.copy(), qphy_cur.copy(), v_cur.copy()

        for _ in range(inp.rounds):
            t += 1
            q = q_pend
            if inp.variant == VARIANT_VCLBP:
                qphy = np.clip(q, inp.qmin, inp.qmax)
            else:
                qphy = q
            if inp.plant == PLANT_LINEAR and inp.variant != VARIANT_VCLBP:
                v_meas = v_lin
                resid, sweeps = 0.0, 0
            else:
                v_meas, resid, sweeps = plant_eval(qphy)
            res.max_distflow_residual = max(res.max_distflow_residual, resid)
            res.max_sweeps_used = max(res.max_sweeps_used, sweeps)

            inj_viol = float(np.max(np.maximum(np.maximum(qphy - inp.qmax,
                                                          inp.qmin - qphy), 0.0)))
            res.max_inj_violation = max(res.max_inj_violation, inj_viol)

            # dual ascent step
            if inp.variant == VARIANT_BASELINE:
                lmin = np.maximum(lmin + inp.gamma * (inp.vmin_e - v_meas), 0.0)
                lmax = np.maximum(lmax + inp.gamma * (v_meas - inp.vmax_e), 0.0)
                mmin = np.maximum(mmin + inp.gamma * g_mmin, 0.0)
                mmax = np.maximum(mmax + inp.gamma * g_mmax, 0.0)
                mir_lo = mmin[inp.nbr_indices].copy()
                mir_hi = mmax[inp.nbr_indices].copy()
            else:
                b_lo = np.where(g_mmin > 0.0, 1.0, -1.0)
                b_hi = np.where(g_mmax > 0.0, 1.0, -1.0)
                lmin = np.maximum(lmin + inp.alpha * (inp.vmin_e - v_meas), 0.0)
                lmax = np.maximum(lmax + inp.alpha * (v_meas - inp.vmax_e), 0.0)
                mmin = np.maximum(mmin + inp.beta * b_lo, 0.0)
                mmax = np.maximum(mmax + inp.beta * b_hi, 0.0)
                mir_lo = np.maximum(mir_lo + inp.beta * b_lo[inp.nbr_indices], 0.0)
                mir_hi = np.maximum(mir_hi + inp.beta * b_hi[inp.nbr_indices], 0.0)
            bits += inp.bits_per_round

            if m and not (np.array_equal(mir_lo, mmin[inp.nbr_indices])
                          and np.array_equal(mir_hi, mmax[inp.nbr_indices])):
                res.mirror_violations += 1

            q_pend = primal(lmin, lmax, mmin, mmax, mir_lo, mir_hi)
            v_lin, g_lmin, g_lmax, g_mmin, g_mmax, fes_lin, V_new, D_new = monitor_eval(q_pend)

            if fes_lin > V_new:
                res.lemma5b_violations += 1
            if inp.certify and V_cur > inp.eps_cert:
                res.descent_checks += 1
                margin = D_new - D_cur - inp.delta_cert
                res.worst_descent_margin = min(res.worst_descent_margin, margin)
                if margin < -inp.descent_tol:
                    res.descent_violations += 1
            V_cur, D_cur = V_new, D_new

            fes, fes_eff, vviol = fes_pair(q, v_meas)
            emit_scal(t, fes, fes_eff, V_cur, D_cur, vviol)
            if inp.eps_report >= 0.0:
                if res.first_feas_t < 0 and fes_eff <= inp.eps_report:
                    res.first_feas_t = t
                    res.bits_at_first_feas = bits
                elif res.first_feas_t >= 0:
                    res.post_feas_max_fes = max(res.post_feas_max_fes, fes_eff)

            stop = inp.stop_threshold >= 0.0 and fes_eff <= inp.stop_threshold
            last = stop or t == inp.t0 + inp.rounds
            emit(t, bits, q, qphy, v_meas, fes, V_cur, D_cur, force=last)
            q_cur, qphy_cur, v_cur = q, qphy, v_meas
            res.rounds_done += 1
            res.q, res.q_phy, res.v = q.copy(), qphy.copy(), v_meas.copy()
            if stop:
                res.stopped_early = True
                break
    except _PlantFailure as exc:
        res.failed = True
        res.fail_round = t
        res.fail_reason = str(exc)

    res.t_final = inp.t0 + res.rounds_done
    res.bits_final = bits
    res.lmin, res.lmax, res.mmin, res.mmax = lmin, lmax, mmin, mmax
    res.mir_lo, res.mir_hi = mir_lo, mir_hi
    if record:
        res.rec_t = rec_t[:n_rec]
        res.rec_bits = rec_bits[:n_rec]
        res.rec_fes = rec_fes[:n_rec]
        res.rec_V = rec_V[:n_rec]
        res.rec_D = rec_D[:n_rec]
        res.rec_v = rec["v"][:n_rec]
        res.rec_q = rec["q"][:n_rec]
        res.rec_qphy = rec["qphy"][:n_rec]
        res.rec_lmin = rec["lmin"][:n_rec]
        res.rec_lmax = rec["lmax"][:n_rec]
        res.rec_mmin = rec["mmin"][:n_rec]
        res.rec_mmax = rec["mmax"][:n_rec]
    if inp.store_scalars:
        res.scal_t = scal_t[:n_sc]
        res.scal_fes = scal["fes"][:n_sc]
        res.scal_fes_eff = scal["fes_eff"][:n_sc]
        res.scal_V = scal["V"][:n_sc]
        res.scal_D = scal["D"][:n_sc]
        res.scal_vviol = scal["vviol"][:n_sc]
    return res


class _PlantFailure(RuntimeError):
    pass
