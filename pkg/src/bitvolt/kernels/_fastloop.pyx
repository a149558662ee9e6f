# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled round-loop kernel; mirrors kernels.reference operation for
operation (same update expressions, same monitor forms).  Dense reductions
are sequential here, so cross-backend agreement is to round-off only."""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

from .common import LoopResult, PLANT_LINEAR, PLANT_DISTFLOW
from .common import VARIANT_VCLB, VARIANT_VCLBP, VARIANT_BASELINE

BACKEND_NAME = "cython"


cdef inline double dmax(double a, double b) noexcept nogil:
    return a if a > b else b

cdef inline double dmin(double a, double b) noexcept nogil:
    return a if a < b else b


cdef int sweep_c(const cnp.int64_t[::1] order, const cnp.int64_t[::1] parent,
                 const double[::1] edge_r, const double[::1] edge_x,
                 const double[::1] p_bus, const double[::1] q_bus,
                 double v0, double tol, int max_sweeps, bint include_loss,
                 double[::1] v, double[::1] send_p, double[::1] send_q,
                 double[::1] ell, double[::1] acc_p, double[::1] acc_q,
                 int* sweeps_out) noexcept nogil:
    """Returns 1 on convergence, 0 otherwise."""
    cdef Py_ssize_t nb = parent.shape[0]
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t i, k
    cdef cnp.int64_t b, pa
    cdef int sweeps
    cdef double rp, rq, lh, dv, vnew
    for i in range(nb):
        v[i] = v0
        send_p[i] = 0.0
        send_q[i] = 0.0
        ell[i] = 0.0
    for sweeps in range(1, max_sweeps + 1):
        acc_p[0] = 0.0
        acc_q[0] = 0.0
        for i in range(n):
            b = order[i]
            acc_p[b] = -p_bus[b]
            acc_q[b] = -q_bus[b]
        dv = 0.0
        for i in range(n - 1, -1, -1):
            b = order[i]
            rp = acc_p[b]
            rq = acc_q[b]
            if include_loss:
                lh = (rp * rp + rq * rq) / v[b]
            else:
                lh = 0.0
            ell[b] = lh
            send_p[b] = rp + edge_r[b] * lh
            send_q[b] = rq + edge_x[b] * lh
            pa = parent[b]
            acc_p[pa] += send_p[b]
            acc_q[pa] += send_q[b]
        for i in range(n):
            b = order[i]
            pa = parent[b]
            vnew = (v[pa]
                    - 2.0 * (edge_r[b] * send_p[b] + edge_x[b] * send_q[b])
                    + (edge_r[b] * edge_r[b] + edge_x[b] * edge_x[b]) * ell[b])
            if not vnew > 0.0:
                sweeps_out[0] = sweeps
                return 0
            dv = dmax(dv, fabs(vnew - v[b]))
            v[b] = vnew
        if dv <= tol:
            sweeps_out[0] = sweeps
            return 1
    sweeps_out[0] = max_sweeps
    return 0


cdef double residual_c(const cnp.int64_t[::1] order, const cnp.int64_t[::1] parent,
                       const double[::1] edge_r, const double[::1] edge_x,
                       const double[::1] p_bus, const double[::1] q_bus,
                       const double[::1] v, const double[::1] send_p, const double[::1] send_q,
                       double[::1] child_p, double[::1] child_q) noexcept nogil:
    cdef Py_ssize_t nb = parent.shape[0]
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t i
    cdef cnp.int64_t b, pa
    cdef double res = 0.0, l_send
    for i in range(nb):
        child_p[i] = 0.0
        child_q[i] = 0.0
    for i in range(n):
        b = order[i]
        child_p[parent[b]] += send_p[b]
        child_q[parent[b]] += send_q[b]
    for i in range(n):
        b = order[i]
        pa = parent[b]
        l_send = (send_p[b] * send_p[b] + send_q[b] * send_q[b]) / v[pa]
        res = dmax(res, fabs(send_p[b] - edge_r[b] * l_send - (-p_bus[b] + child_p[b])))
        res = dmax(res, fabs(send_q[b] - edge_x[b] * l_send - (-q_bus[b] + child_q[b])))
        res = dmax(res, fabs(v[b] - (v[pa]
                                     - 2.0 * (edge_r[b] * send_p[b] + edge_x[b] * send_q[b])
                                     + (edge_r[b] * edge_r[b] + edge_x[b] * edge_x[b]) * l_send)))
    return res


def distflow_sweep(order, parent, edge_r, edge_x, p_bus, q_bus, v0, tol,
                   max_sweeps, include_loss=True):
    """Drop-in twin of kernels.reference.distflow_sweep."""
    cdef Py_ssize_t nb = parent.shape[0]
    v = np.zeros(nb)
    send_p = np.zeros(nb)
    send_q = np.zeros(nb)
    ell = np.zeros(nb)
    acc_p = np.zeros(nb)
    acc_q = np.zeros(nb)
    cdef int sweeps = 0
    cdef int ok = sweep_c(np.ascontiguousarray(order, dtype=np.int64),
                          np.ascontiguousarray(parent, dtype=np.int64),
                          np.ascontiguousarray(edge_r), np.ascontiguousarray(edge_x),
                          np.ascontiguousarray(p_bus), np.ascontiguousarray(q_bus),
                          v0, tol, int(max_sweeps), bool(include_loss),
                          v, send_p, send_q, ell, acc_p, acc_q, &sweeps)
    return v, send_p, send_q, ell, sweeps, bool(ok)


def run_rounds(inp):
    cdef Py_ssize_t n = inp.d.shape[0]
    cdef Py_ssize_t m = inp.nbr_indices.shape[0]
    cdef Py_ssize_t nb = n + 1

    cdef const double[:, ::1] A = np.ascontiguousarray(inp.A)
    cdef const double[::1] d = np.ascontiguousarray(inp.d)
    cdef const double[::1] a_diag = np.ascontiguousarray(inp.a_diag)
    cdef const cnp.int64_t[::1] indptr = np.ascontiguousarray(inp.nbr_indptr, dtype=np.int64)
    cdef const cnp.int64_t[::1] indices = np.ascontiguousarray(inp.nbr_indices, dtype=np.int64)
    cdef const double[::1] a_off = np.ascontiguousarray(inp.a_off)

    cdef const double[::1] vmin = np.ascontiguousarray(inp.vmin)
    cdef const double[::1] vmax = np.ascontiguousarray(inp.vmax)
    cdef const double[::1] qmin = np.ascontiguousarray(inp.qmin)
    cdef const double[::1] qmax = np.ascontiguousarray(inp.qmax)
    cdef const double[::1] vmin_e = np.ascontiguousarray(inp.vmin_e)
    cdef const double[::1] vmax_e = np.ascontiguousarray(inp.vmax_e)
    cdef const double[::1] qmin_e = np.ascontiguousarray(inp.qmin_e)
    cdef const double[::1] qmax_e = np.ascontiguousarray(inp.qmax_e)

    cdef int variant = inp.variant
    cdef double alpha = inp.alpha
    cdef double beta = inp.beta
    cdef double gamma = inp.gamma

    cdef int plant = inp.plant
    cdef const cnp.int64_t[::1] order = np.ascontiguousarray(inp.sweep_order, dtype=np.int64)
    cdef const cnp.int64_t[::1] parent = np.ascontiguousarray(inp.parent, dtype=np.int64)
    cdef const double[::1] edge_r = np.ascontiguousarray(inp.edge_r)
    cdef const double[::1] edge_x = np.ascontiguousarray(inp.edge_x)
    cdef double v0 = inp.v0
    cdef double df_tol = inp.df_tol
    cdef int df_max_sweeps = inp.df_max_sweeps
    cdef bint track_residual = inp.track_residual

    p_bus_np = np.zeros(nb)
    p_bus_np[1:] = inp.p_inj
    q_bus_np = np.zeros(nb)
    cdef double[::1] p_bus = p_bus_np
    cdef double[::1] q_bus = q_bus_np
    cdef const double[::1] q_u = np.ascontiguousarray(inp.q_u)

    cdef long long rounds = inp.rounds
    cdef double stop_threshold = inp.stop_threshold
    cdef double eps_report = inp.eps_report
    cdef long long bits_per_round = inp.bits_per_round

    cdef bint certify = inp.certify
    cdef double eps_cert = inp.eps_cert
    cdef double delta_cert = inp.delta_cert
    cdef double descent_tol = inp.descent_tol

    cdef long long record_stride = inp.record_stride
    cdef bint record = 1
    cdef bint store_scalars = inp.store_scalars
    cdef bint emit_initial = inp.emit_initial
    cdef long long t0 = inp.t0
    cdef long long bits = inp.bits0

    # mutable state
    lmin_np = inp.lmin.copy(); lmax_np = inp.lmax.copy()
    mmin_np = inp.mmin.copy(); mmax_np = inp.mmax.copy()
    mir_lo_np = inp.mir_lo.copy(); mir_hi_np = inp.mir_hi.copy()
    cdef double[::1] lmin = lmin_np
    cdef double[::1] lmax = lmax_np
    cdef double[::1] mmin = mmin_np
    cdef double[::1] mmax = mmax_np
    cdef double[::1] mir_lo = mir_lo_np
    cdef double[::1] mir_hi = mir_hi_np

    # work arrays
    q_pend_np = np.zeros(n); q_cur_np = np.zeros(n)
    qphy_cur_np = np.zeros(n); v_cur_np = np.zeros(n)
    cdef double[::1] q_pend = q_pend_np
    cdef double[::1] q_cur = q_cur_np
    cdef double[::1] qphy_cur = qphy_cur_np
    cdef double[::1] v_cur = v_cur_np
    cdef double[::1] v_lin = np.zeros(n)
    cdef double[::1] g_lmin = np.zeros(n)
    cdef double[::1] g_lmax = np.zeros(n)
    cdef double[::1] g_mmin = np.zeros(n)
    cdef double[::1] g_mmax = np.zeros(n)
    cdef double[::1] b_lo = np.zeros(n)
    cdef double[::1] b_hi = np.zeros(n)
    cdef double[::1] sw_v = np.zeros(nb)
    cdef double[::1] sw_p = np.zeros(nb)
    cdef double[::1] sw_q = np.zeros(nb)
    cdef double[::1] sw_ell = np.zeros(nb)
    cdef double[::1] sw_ap = np.zeros(nb)
    cdef double[::1] sw_aq = np.zeros(nb)
    cdef double[::1] child_p = np.zeros(nb)
    cdef double[::1] child_q = np.zeros(nb)

    # recording buffers
    cdef long long n_alloc = (rounds // record_stride + 3) if record_stride > 0 else 4
    rec_t_np = np.zeros(n_alloc, dtype=np.int64)
    rec_bits_np = np.zeros(n_alloc, dtype=np.int64)
    rec_fes_np = np.zeros(n_alloc); rec_V_np = np.zeros(n_alloc); rec_D_np = np.zeros(n_alloc)
    rec_v_np = np.zeros((n_alloc, n)); rec_q_np = np.zeros((n_alloc, n))
    rec_qphy_np = np.zeros((n_alloc, n))
    rec_lmin_np = np.zeros((n_alloc, n)); rec_lmax_np = np.zeros((n_alloc, n))
    rec_mmin_np = np.zeros((n_alloc, n)); rec_mmax_np = np.zeros((n_alloc, n))
    cdef cnp.int64_t[::1] rec_t = rec_t_np
    cdef cnp.int64_t[::1] rec_bits = rec_bits_np
    cdef double[::1] rec_fes = rec_fes_np
    cdef double[::1] rec_V = rec_V_np
    cdef double[::1] rec_D = rec_D_np
    cdef double[:, ::1] rec_v = rec_v_np
    cdef double[:, ::1] rec_q = rec_q_np
    cdef double[:, ::1] rec_qphy = rec_qphy_np
    cdef double[:, ::1] rec_lmin = rec_lmin_np
    cdef double[:, ::1] rec_lmax = rec_lmax_np
    cdef double[:, ::1] rec_mmin = rec_mmin_np
    cdef double[:, ::1] rec_mmax = rec_mmax_np
    cdef long long n_rec = 0

    cdef long long n_scal = rounds + 2 if store_scalars else 0
    scal_t_np = np.zeros(n_scal, dtype=np.int64)
    scal_fes_np = np.zeros(n_scal); scal_feff_np = np.zeros(n_scal)
    scal_V_np = np.zeros(n_scal); scal_D_np = np.zeros(n_scal)
    scal_vv_np = np.zeros(n_scal)
    cdef cnp.int64_t[::1] scal_t = scal_t_np
    cdef double[::1] scal_fes = scal_fes_np
    cdef double[::1] scal_feff = scal_feff_np
    cdef double[::1] scal_V = scal_V_np
    cdef double[::1] scal_D = scal_D_np
    cdef double[::1] scal_vv = scal_vv_np
    cdef long long n_sc = 0

    # monitor/bookkeeping scalars
    cdef long long rounds_done = 0
    cdef bint failed = 0
    cdef long long fail_round = -1
    cdef long long first_feas_t = -1
    cdef long long bits_at_first_feas = -1
    cdef double post_feas_max_fes = 0.0
    cdef long long descent_checks = 0
    cdef long long descent_violations = 0
    cdef double worst_descent_margin = np.inf
    cdef long long lemma5b_violations = 0
    cdef long long mirror_violations = 0
    cdef long long safety_flag = 0
    cdef double max_inj_violation = 0.0
    cdef double max_resid = 0.0
    cdef int max_sweeps_used = 0
    cdef bint stopped_early = 0

    cdef Py_ssize_t i, k
    cdef long long t = t0, tt
    cdef int sweeps = 0
    cdef double acc, s, zi, gi, term, fes_lin2, V2, Dacc
    cdef double V_cur = 0.0, D_cur = 0.0, V_new, D_new
    cdef double fes, fes_eff, vviol, fq2, fv2, eq2, ev2, viol, margin, resid
    cdef bint stop, last, ok, mirror_ok

    # ---- helpers inlined via closures are not possible in cdef; use blocks --

    # initial pending primal + monitor at incoming state
    for i in range(n):
        acc = lmin[i] - lmax[i] + a_diag[i] * (mmin[i] - mmax[i])
        for k in range(indptr[i], indptr[i + 1]):
            acc += a_off[k] * (mir_lo[k] - mir_hi[k])
        q_pend[i] = acc
    # monitor eval
    fes_lin2 = 0.0
    V2 = 0.0
    Dacc = 0.0
    for i in range(n):
        acc = 0.0
        for k in range(n):
            acc += A[i, k] * q_pend[k]
        v_lin[i] = acc + d[i]
    for i in range(n):
        g_lmin[i] = vmin_e[i] - v_lin[i]
        g_lmax[i] = v_lin[i] - vmax_e[i]
        g_mmin[i] = qmin_e[i] - q_pend[i]
        g_mmax[i] = q_pend[i] - qmax_e[i]
    for i in range(n):
        gi = g_lmin[i]; zi = lmin[i]
        term = dmax(gi, 0.0); fes_lin2 += term * term
        term = fabs(gi) if zi + gi >= 0.0 else zi; V2 += term * term
    for i in range(n):
        gi = g_lmax[i]; zi = lmax[i]
        term = dmax(gi, 0.0); fes_lin2 += term * term
        term = fabs(gi) if zi + gi >= 0.0 else zi; V2 += term * term
    for i in range(n):
        gi = g_mmin[i]; zi = mmin[i]
        term = dmax(gi, 0.0); fes_lin2 += term * term
        term = fabs(gi) if zi + gi >= 0.0 else zi; V2 += term * term
    for i in range(n):
        gi = g_mmax[i]; zi = mmax[i]
        term = dmax(gi, 0.0); fes_lin2 += term * term
        term = fabs(gi) if zi + gi >= 0.0 else zi; V2 += term * term
    for i in range(n):
        Dacc += 0.5 * q_pend[i] * (v_lin[i] - d[i])
        Dacc += lmin[i] * g_lmin[i] + lmax[i] * g_lmax[i]
        Dacc += mmin[i] * g_mmin[i] + mmax[i] * g_mmax[i]
    V_cur = sqrt(V2)
    D_cur = Dacc

    if emit_initial:
        # plant at q = 0
        ok = 1
        if plant == PLANT_LINEAR:
            for i in range(n):
                v_cur[i] = d[i]
            resid = 0.0
            sweeps = 0
        else:
            for i in range(n):
                q_bus[i + 1] = q_u[i]
            ok = sweep_c(order, parent, edge_r, edge_x, p_bus, q_bus, v0,
                         df_tol, df_max_sweeps, 1,
                         sw_v, sw_p, sw_q, sw_ell, sw_ap, sw_aq, &sweeps)
            if ok:
                for i in range(n):
                    v_cur[i] = sw_v[i + 1]
                resid = residual_c(order, parent, edge_r, edge_x, p_bus, q_bus,
                                   sw_v, sw_p, sw_q, child_p, child_q) if track_residual else 0.0
            else:
                failed = 1
                fail_round = t0
        if not failed:
            max_resid = dmax(max_resid, resid)
            if sweeps > max_sweeps_used:
                max_sweeps_used = sweeps
            # fes pair at q=0
            fq2 = 0.0; fv2 = 0.0; eq2 = 0.0; ev2 = 0.0; vviol = 0.0
            for i in range(n):
                term = dmax(qmin[i] - 0.0, 0.0); fq2 += term * term
                term = dmax(0.0 - qmax[i], 0.0); fq2 += term * term
                term = dmax(vmin[i] - v_cur[i], 0.0); fv2 += term * term; vviol = dmax(vviol, term)
                term = dmax(v_cur[i] - vmax[i], 0.0); fv2 += term * term; vviol = dmax(vviol, term)
                term = dmax(qmin_e[i] - 0.0, 0.0); eq2 += term * term
                term = dmax(0.0 - qmax_e[i], 0.0); eq2 += term * term
                term = dmax(vmin_e[i] - v_cur[i], 0.0); ev2 += term * term
                term = dmax(v_cur[i] - vmax_e[i], 0.0); ev2 += term * term
            fes = sqrt(fq2 + fv2)
            fes_eff = sqrt(eq2 + ev2)
            if record:
                rec_t[n_rec] = t; rec_bits[n_rec] = bits
                rec_fes[n_rec] = fes; rec_V[n_rec] = V_cur; rec_D[n_rec] = D_cur
                for i in range(n):
                    rec_v[n_rec, i] = v_cur[i]; rec_q[n_rec, i] = 0.0
                    rec_qphy[n_rec, i] = 0.0
                    rec_lmin[n_rec, i] = lmin[i]; rec_lmax[n_rec, i] = lmax[i]
                    rec_mmin[n_rec, i] = mmin[i]; rec_mmax[n_rec, i] = mmax[i]
                n_rec += 1
            if store_scalars:
                scal_t[n_sc] = t
                scal_fes[n_sc] = fes; scal_feff[n_sc] = fes_eff
                scal_V[n_sc] = V_cur; scal_D[n_sc] = D_cur; scal_vv[n_sc] = vviol
                n_sc += 1

    # ---- main loop ---------------------------------------------------------
    for tt in range(rounds):
        if failed:
            break
        t = t0 + tt + 1
        for i in range(n):
            q_cur[i] = q_pend[i]
        if variant == VARIANT_VCLBP:
            for i in range(n):
                qphy_cur[i] = dmax(dmin(q_cur[i], qmax[i]), qmin[i])
        else:
            for i in range(n):
                qphy_cur[i] = q_cur[i]

        # plant
        if plant == PLANT_LINEAR and variant != VARIANT_VCLBP:
            for i in range(n):
                v_cur[i] = v_lin[i]
            resid = 0.0
            sweeps = 0
        elif plant == PLANT_LINEAR:
            for i in range(n):
                acc = 0.0
                for k in range(n):
                    acc += A[i, k] * qphy_cur[k]
                v_cur[i] = acc + d[i]
            resid = 0.0
            sweeps = 0
        else:
            for i in range(n):
                q_bus[i + 1] = q_u[i] + qphy_cur[i]
            ok = sweep_c(order, parent, edge_r, edge_x, p_bus, q_bus, v0,
                         df_tol, df_max_sweeps, 1,
                         sw_v, sw_p, sw_q, sw_ell, sw_ap, sw_aq, &sweeps)
            if not ok:
                failed = 1
                fail_round = t
                break
            for i in range(n):
                v_cur[i] = sw_v[i + 1]
            resid = residual_c(order, parent, edge_r, edge_x, p_bus, q_bus,
                               sw_v, sw_p, sw_q, child_p, child_q) if track_residual else 0.0
        max_resid = dmax(max_resid, resid)
        if sweeps > max_sweeps_used:
            max_sweeps_used = sweeps

        viol = 0.0
        for i in range(n):
            viol = dmax(viol, dmax(dmax(qphy_cur[i] - qmax[i], qmin[i] - qphy_cur[i]), 0.0))
        max_inj_violation = dmax(max_inj_violation, viol)

        # dual step (messages derive from the stored gradient blocks)
        if variant == VARIANT_BASELINE:
            for i in range(n):
                lmin[i] = dmax(lmin[i] + gamma * (vmin_e[i] - v_cur[i]), 0.0)
                lmax[i] = dmax(lmax[i] + gamma * (v_cur[i] - vmax_e[i]), 0.0)
                mmin[i] = dmax(mmin[i] + gamma * g_mmin[i], 0.0)
                mmax[i] = dmax(mmax[i] + gamma * g_mmax[i], 0.0)
            for k in range(m):
                mir_lo[k] = mmin[indices[k]]
                mir_hi[k] = mmax[indices[k]]
        else:
            for i in range(n):
                b_lo[i] = 1.0 if g_mmin[i] > 0.0 else -1.0
                b_hi[i] = 1.0 if g_mmax[i] > 0.0 else -1.0
            for i in range(n):
                lmin[i] = dmax(lmin[i] + alpha * (vmin_e[i] - v_cur[i]), 0.0)
                lmax[i] = dmax(lmax[i] + alpha * (v_cur[i] - vmax_e[i]), 0.0)
                mmin[i] = dmax(mmin[i] + beta * b_lo[i], 0.0)
                mmax[i] = dmax(mmax[i] + beta * b_hi[i], 0.0)
            for k in range(m):
                mir_lo[k] = dmax(mir_lo[k] + beta * b_lo[indices[k]], 0.0)
                mir_hi[k] = dmax(mir_hi[k] + beta * b_hi[indices[k]], 0.0)
        bits += bits_per_round

        mirror_ok = 1
        for k in range(m):
            if mir_lo[k] != mmin[indices[k]] or mir_hi[k] != mmax[indices[k]]:
                mirror_ok = 0
                break
        if not mirror_ok:
            mirror_violations += 1

        # next pending primal + monitors at the new dual point
        for i in range(n):
            acc = lmin[i] - lmax[i] + a_diag[i] * (mmin[i] - mmax[i])
            for k in range(indptr[i], indptr[i + 1]):
                acc += a_off[k] * (mir_lo[k] - mir_hi[k])
            q_pend[i] = acc
        for i in range(n):
            acc = 0.0
            for k in range(n):
                acc += A[i, k] * q_pend[k]
            v_lin[i] = acc + d[i]
        for i in range(n):
            g_lmin[i] = vmin_e[i] - v_lin[i]
            g_lmax[i] = v_lin[i] - vmax_e[i]
            g_mmin[i] = qmin_e[i] - q_pend[i]
            g_mmax[i] = q_pend[i] - qmax_e[i]
        fes_lin2 = 0.0
        V2 = 0.0
        Dacc = 0.0
        for i in range(n):
            gi = g_lmin[i]; zi = lmin[i]
            term = dmax(gi, 0.0); fes_lin2 += term * term
            term = fabs(gi) if zi + gi >= 0.0 else zi; V2 += term * term
        for i in range(n):
            gi = g_lmax[i]; zi = lmax[i]
            term = dmax(gi, 0.0); fes_lin2 += term * term
            term = fabs(gi) if zi + gi >= 0.0 else zi; V2 += term * term
        for i in range(n):
            gi = g_mmin[i]; zi = mmin[i]
            term = dmax(gi, 0.0); fes_lin2 += term * term
            term = fabs(gi) if zi + gi >= 0.0 else zi; V2 += term * term
        for i in range(n):
            gi = g_mmax[i]; zi = mmax[i]
            term = dmax(gi, 0.0); fes_lin2 += term * term
            term = fabs(gi) if zi + gi >= 0.0 else zi; V2 += term * term
        for i in range(n):
            Dacc += 0.5 * q_pend[i] * (v_lin[i] - d[i])
            Dacc += lmin[i] * g_lmin[i] + lmax[i] * g_lmax[i]
            Dacc += mmin[i] * g_mmin[i] + mmax[i] * g_mmax[i]
        V_new = sqrt(V2)
        D_new = Dacc

        if sqrt(fes_lin2) > V_new:
            lemma5b_violations += 1
        if certify and V_cur > eps_cert:
            descent_checks += 1
            margin = D_new - D_cur - delta_cert
            if margin < worst_descent_margin:
                worst_descent_margin = margin
            if margin < -descent_tol:
                descent_violations += 1
        V_cur = V_new
        D_cur = D_new

        # feasibility of what the controller produced this round
        fq2 = 0.0; fv2 = 0.0; eq2 = 0.0; ev2 = 0.0; vviol = 0.0
        for i in range(n):
            term = dmax(qmin[i] - q_cur[i], 0.0); fq2 += term * term
            term = dmax(q_cur[i] - qmax[i], 0.0); fq2 += term * term
            term = dmax(vmin[i] - v_cur[i], 0.0); fv2 += term * term; vviol = dmax(vviol, term)
            term = dmax(v_cur[i] - vmax[i], 0.0); fv2 += term * term; vviol = dmax(vviol, term)
            term = dmax(qmin_e[i] - q_cur[i], 0.0); eq2 += term * term
            term = dmax(q_cur[i] - qmax_e[i], 0.0); eq2 += term * term
            term = dmax(vmin_e[i] - v_cur[i], 0.0); ev2 += term * term
            term = dmax(v_cur[i] - vmax_e[i], 0.0); ev2 += term * term
        fes = sqrt(fq2 + fv2)
        fes_eff = sqrt(eq2 + ev2)

        if store_scalars:
            scal_t[n_sc] = t
            scal_fes[n_sc] = fes; scal_feff[n_sc] = fes_eff
            scal_V[n_sc] = V_cur; scal_D[n_sc] = D_cur; scal_vv[n_sc] = vviol
            n_sc += 1
        if eps_report >= 0.0:
            if first_feas_t < 0 and fes_eff <= eps_report:
                first_feas_t = t
                bits_at_first_feas = bits
            elif first_feas_t >= 0 and fes_eff > post_feas_max_fes:
                post_feas_max_fes = fes_eff

        stop = stop_threshold >= 0.0 and fes_eff <= stop_threshold
        last = stop or tt == rounds - 1
        if last or record_stride == 1 or (record_stride > 0 and t % record_stride == 0):
            if n_rec == 0 or rec_t[n_rec - 1] != t:
                rec_t[n_rec] = t; rec_bits[n_rec] = bits
                rec_fes[n_rec] = fes; rec_V[n_rec] = V_cur; rec_D[n_rec] = D_cur
                for i in range(n):
                    rec_v[n_rec, i] = v_cur[i]; rec_q[n_rec, i] = q_cur[i]
                    rec_qphy[n_rec, i] = qphy_cur[i]
                    rec_lmin[n_rec, i] = lmin[i]; rec_lmax[n_rec, i] = lmax[i]
                    rec_mmin[n_rec, i] = mmin[i]; rec_mmax[n_rec, i] = mmax[i]
                n_rec += 1
        rounds_done += 1
        if stop:
            stopped_early = 1
            break

    res = LoopResult(
        rounds_done=int(rounds_done),
        t_final=int(t0 + rounds_done),
        bits_final=int(bits),
        lmin=lmin_np, lmax=lmax_np, mmin=mmin_np, mmax=mmax_np,
        mir_lo=mir_lo_np, mir_hi=mir_hi_np,
        q=q_cur_np.copy(), q_phy=qphy_cur_np.copy(), v=v_cur_np.copy(),
        stopped_early=bool(stopped_early),
        first_feas_t=int(first_feas_t),
        bits_at_first_feas=int(bits_at_first_feas),
        post_feas_max_fes=float(post_feas_max_fes),
        descent_checks=int(descent_checks),
        descent_violations=int(descent_violations),
        worst_descent_margin=float(worst_descent_margin),
        lemma5b_violations=int(lemma5b_violations),
        mirror_violations=int(mirror_violations),
        max_inj_violation=float(max_inj_violation),
        max_distflow_residual=float(max_resid),
        max_sweeps_used=int(max_sweeps_used),
        failed=bool(failed),
        fail_round=int(fail_round),
        fail_reason=("distflow did not converge within "
                     f"{df_max_sweeps} sweeps") if failed else "",
    )
    if record:
        res.rec_t = rec_t_np[:n_rec]
        res.rec_bits = rec_bits_np[:n_rec]
        res.rec_fes = rec_fes_np[:n_rec]
        res.rec_V = rec_V_np[:n_rec]
        res.rec_D = rec_D_np[:n_rec]
        res.rec_v = rec_v_np[:n_rec]
        res.rec_q = rec_q_np[:n_rec]
        res.rec_qphy = rec_qphy_np[:n_rec]
        res.rec_lmin = rec_lmin_np[:n_rec]
        res.rec_lmax = rec_lmax_np[:n_rec]
        res.rec_mmin = rec_mmin_np[:n_rec]
        res.rec_mmax = rec_mmax_np[:n_rec]
    if store_scalars:
        res.scal_t = scal_t_np[:n_sc]
        res.scal_fes = scal_fes_np[:n_sc]
        res.scal_fes_eff = scal_feff_np[:n_sc]
        res.scal_V = scal_V_np[:n_sc]
        res.scal_D = scal_D_np[:n_sc]
        res.scal_vviol = scal_vv_np[:n_sc]
    return res
