"""Shared array-level structures for the round-loop kernels.

Both kernel backends (Cython extension and NumPy reference) consume a
:class:`LoopInputs` and produce a :class:`LoopResult`.  Everything is plain
float64/int64 arrays so the compiled backend can run the whole loop without
touching Python objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VARIANT_VCLB = 0
VARIANT_VCLBP = 1
VARIANT_BASELINE = 2

PLANT_LINEAR = 0
PLANT_DISTFLOW = 1


def model_csr(model):
    """Sparse row form of A_inv restricted to branch-bus neighbor links.

    Returns ``(a_diag, indptr, indices, a_off)``: per-row diagonal
    coefficient plus the off-diagonal coefficients in ascending neighbor
    order.  The mirror arrays of the controllers are aligned with
    ``indices``: entry k of row i is bus i's local copy of the capacity
    multipliers of bus ``indices[k]``.
    """
    n = model.n_bus
    a_diag = np.ascontiguousarray(np.diag(model.A_inv))
    indptr = np.zeros(n + 1, dtype=np.int64)
    idx = []
    off = []
    for i, nbrs in enumerate(model.neighbor_sets):
        for j in nbrs:
            idx.append(j)
            off.append(model.A_inv[i, j])
        indptr[i + 1] = len(idx)
    indices = np.asarray(idx, dtype=np.int64)
    a_off = np.asarray(off, dtype=np.float64)
    return a_diag, indptr, indices, a_off


@dataclass
class LoopInputs:
    # model
    A: np.ndarray            # (n, n)
    d: np.ndarray            # (n,)
    a_diag: np.ndarray       # (n,)
    nbr_indptr: np.ndarray   # (n+1,) int64
    nbr_indices: np.ndarray  # (m,) int64
    a_off: np.ndarray        # (m,)
    # boxes (original and rho-tightened "effective")
    vmin: np.ndarray
    vmax: np.ndarray
    qmin: np.ndarray
    qmax: np.ndarray
    vmin_e: np.ndarray
    vmax_e: np.ndarray
    qmin_e: np.ndarray
    qmax_e: np.ndarray
    # controller
    variant: int
    alpha: float
    beta: float
    gamma: float
    # plant
    plant: int
    sweep_order: np.ndarray  # (n,) int64, bus ids parents-first
    parent: np.ndarray       # (n+1,) int64
    edge_r: np.ndarray       # (n+1,)
    edge_x: np.ndarray       # (n+1,)
    p_inj: np.ndarray        # (n,)
    q_u: np.ndarray          # (n,)
    v0: float
    df_tol: float
    df_max_sweeps: int
    track_residual: bool
    # loop control
    rounds: int
    stop_threshold: float    # negative disables early stop (on fes_eff)
    eps_report: float        # negative disables first-feasible tracking
    bits_per_round: int
    # monitors
    certify: bool
    eps_cert: float
    delta_cert: float
    descent_tol: float = 1e-12
    # recording
    record_stride: int = 1   # 0 disables per-bus rows (final row still kept)
    store_scalars: bool = True
    emit_initial: bool = True
    t0: int = 0
    bits0: int = 0
    # incoming state (zeros for a cold start)
    lmin: np.ndarray = None
    lmax: np.ndarray = None
    mmin: np.ndarray = None
    mmax: np.ndarray = None
    mir_lo: np.ndarray = None
    mir_hi: np.ndarray = None

    def with_zero_state(self):
        n = self.d.shape[0]
        m = self.nbr_indices.shape[0]
        self.lmin = np.zeros(n)
        self.lmax = np.zeros(n)
        self.mmin = np.zeros(n)
        self.mmax = np.zeros(n)
        self.mir_lo = np.zeros(m)
        self.mir_hi = np.zeros(m)
        return self


@dataclass
class LoopResult:
    rounds_done: int
    t_final: int
    bits_final: int
    # outgoing state
    lmin: np.ndarray
    lmax: np.ndarray
    mmin: np.ndarray
    mmax: np.ndarray
    mir_lo: np.ndarray
    mir_hi: np.ndarray
    q: np.ndarray
    q_phy: np.ndarray
    v: np.ndarray
    # recorded rows (empty arrays when recording disabled)
    rec_t: np.ndarray = None
    rec_v: np.ndarray = None
    rec_q: np.ndarray = None
    rec_qphy: np.ndarray = None
    rec_lmin: np.ndarray = None
    rec_lmax: np.ndarray = None
    rec_mmin: np.ndarray = None
    rec_mmax: np.ndarray = None
    rec_fes: np.ndarray = None
    rec_V: np.ndarray = None
    rec_D: np.ndarray = None
    rec_bits: np.ndarray = None
    # full-resolution scalar series (None when store_scalars is off)
    scal_t: np.ndarray = None
    scal_fes: np.ndarray = None
    scal_fes_eff: np.ndarray = None
    scal_V: np.ndarray = None
    scal_D: np.ndarray = None
    scal_vviol: np.ndarray = None
    # convergence bookkeeping
    stopped_early: bool = False
    first_feas_t: int = -1
    bits_at_first_feas: int = -1
    post_feas_max_fes: float = 0.0
    # monitors
    descent_checks: int = 0
    descent_violations: int = 0
    worst_descent_margin: float = float("inf")
    lemma5b_violations: int = 0
    mirror_violations: int = 0
    max_inj_violation: float = 0.0
    max_distflow_residual: float = 0.0
    max_sweeps_used: int = 0
    # plant failure (partial results above remain valid)
    failed: bool = False
    fail_round: int = -1
    fail_reason: str = ""
