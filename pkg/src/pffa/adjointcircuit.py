"""Adjoint network of the split power-flow circuit.

The adjoint carries one variable per power-flow equation: lam_r/lam_i pair
with the bus KCL rows, lam_v with each PV magnitude constraint, and two
auxiliary currents pair with the slack voltage-pinning rows. Its equations
are the stationarity conditions of the feasibility optimization, one per
power-flow unknown, built from transposes:

 - linear elements transpose in place (for a reciprocal branch that is the
   split form of the conjugate admittance; current sources drop out, the
   slack voltage source becomes a short pinning lam = 0 at the slack bus);
 - each nonlinear element contributes J(V)^T lam, so its stamp is the
   transposed linearization block plus a coupling block H = d(J^T lam)/dV,
   the lam-weighted sum of the element's second partials.

H vanishes identically at lam = 0, which keeps a feasible power flow's
adjoint response exactly zero.
"""

from __future__ import annotations

from .splitcircuit import (
    StampSet,
    pq_load_hessian_terms,
    pq_load_jacobian,
    pq_load_q_cross_terms,
    pq_load_q_partials,
)


def adjoint_stamp_linear(linear: StampSet, dim_pf: int) -> StampSet:
    """Adjoint image of the linear power-flow stamps.

    Transposes every matrix entry into the adjoint block (row/col offset by
    the power-flow dimension). Right-hand-side entries are dropped: constant
    sources have no adjoint trace, and the transposed slack rows pin the
    slack adjoint voltages to zero.
    """
    return linear.transposed_into(dim_pf, dim_pf)


# ---------------------------------------------------------------------------
# constant-power load


def pq_adjoint_currents(p, q, v_r, v_i, lam_r, lam_i):
    """Adjoint current J(V)^T lam drawn by a load's adjoint image."""
    a, b = pq_load_jacobian(p, q, v_r, v_i)
    return a * lam_r + b * lam_i, b * lam_r - a * lam_i


def pq_hessian_block(p, q, v_r, v_i, lam_r, lam_i):
    """lam-contracted second-partial block H = d(J^T lam)/dV of a load.

    Returns (h_rr, h_ri, h_ir, h_ii); the block is symmetric and trace-free
    like the first-order block it derives from.
    """
    t1, t2 = pq_load_hessian_terms(p, q, v_r, v_i)
    h_rr = lam_r * t1 + lam_i * t2
    h_ri = lam_r * t2 - lam_i * t1
    return h_rr, h_ri, h_ri, -h_rr


def adjoint_pq_block(stamps: StampSet, adj_rows, lam_cols, v_cols,
                     p: float, q: float, v_r: float, v_i: float,
                     lam_r: float, lam_i: float) -> None:
    """Stamp a load's adjoint: transposed Jacobian plus voltage coupling.

    ``adj_rows`` are the stationarity equations of (V_R, V_I) at the bus,
    ``lam_cols`` the adjoint variables paired with its KCL rows, ``v_cols``
    the bus voltage unknowns entering through H.
    """
    (row_r, row_i), (lam_cr, lam_ci), (col_vr, col_vi) = (
        adj_rows, lam_cols, v_cols)
    a, b = pq_load_jacobian(p, q, v_r, v_i)
    # J is symmetric for this element, stamped transposed all the same
    stamps.add(row_r, lam_cr, a)
    stamps.add(row_r, lam_ci, b)
    stamps.add(row_i, lam_cr, b)
    stamps.add(row_i, lam_ci, -a)

    h_rr, h_ri, h_ir, h_ii = pq_hessian_block(p, q, v_r, v_i, lam_r, lam_i)
    stamps.add(row_r, col_vr, h_rr)
    stamps.add(row_r, col_vi, h_ri)
    stamps.add(row_i, col_vr, h_ir)
    stamps.add(row_i, col_vi, h_ii)
    # Taylor legacy of the coupling block (J^T lam term cancels its own)
    stamps.add_rhs(row_r, h_rr * v_r + h_ri * v_i)
    stamps.add_rhs(row_i, h_ir * v_r + h_ii * v_i)


# ---------------------------------------------------------------------------
# PV machine


def pv_adjoint_currents(p_set, q_g, v_r, v_i, lam_r, lam_i, lam_v,
                        pinned: bool = False):
    """Adjoint currents of a PV machine: J^T lam over (V_R, V_I, Q_G) rows.

    While the machine controls voltage the magnitude constraint couples
    lam_v into the voltage rows; once pinned to a reactive limit the
    constraint row is Q_G = const and lam_v moves to the Q_G row instead.
    """
    p, q = -p_set, -q_g
    a, b = pq_load_jacobian(p, q, v_r, v_i)
    dq_r, dq_i = pq_load_q_partials(v_r, v_i)
    dir_dqg, dii_dqg = -dq_r, -dq_i
    cur_r = a * lam_r + b * lam_i
    cur_i = b * lam_r - a * lam_i
    cur_q = dir_dqg * lam_r + dii_dqg * lam_i
    if pinned:
        cur_q = cur_q + lam_v
    else:
        cur_r = cur_r + 2.0 * v_r * lam_v
        cur_i = cur_i + 2.0 * v_i * lam_v
    return cur_r, cur_i, cur_q


def pv_hessian_block(p_set, q_g, v_r, v_i, lam_r, lam_i, lam_v,
                     pinned: bool = False):
    """lam-contracted second partials of a PV machine over (V_R, V_I, Q_G).

    Returns the symmetric 3x3 block as nested tuples. The magnitude
    constraint contributes 2 lam_v on the voltage diagonal only while the
    machine is unpinned; the Q_G diagonal is always zero.
    """
    p, q = -p_set, -q_g
    t1, t2 = pq_load_hessian_terms(p, q, v_r, v_i)
    c_rr, c_ri, c_ir, c_ii = pq_load_q_cross_terms(v_r, v_i)
    # drawn current uses q = -q_g: cross partials flip sign
    h_rr = lam_r * t1 + lam_i * t2
    h_ri = lam_r * t2 - lam_i * t1
    h_rq = -(lam_r * c_rr + lam_i * c_ir)
    h_iq = -(lam_r * c_ri + lam_i * c_ii)
    if not pinned:
        h_rr_d = h_rr + 2.0 * lam_v
        h_ii_d = -h_rr + 2.0 * lam_v
    else:
        h_rr_d = h_rr
        h_ii_d = -h_rr
    return ((h_rr_d, h_ri, h_rq),
            (h_ri, h_ii_d, h_iq),
            (h_rq, h_iq, 0.0))


def pv_pq_switch_adjoint(stamps: StampSet, adj_rows, lam_v_col,
                         v_r: float, v_i: float, pinned: bool) -> None:
    """Stamp the lam_v column for the active branch of the limit logic.

    Voltage control transposes the magnitude-constraint gradient
    (2 V_R, 2 V_I, 0) into the voltage stationarity rows; a pinned machine
    transposes (0, 0, 1) into the Q_G row. Exactly three matrix positions
    move when a machine switches.
    """
    row_r, row_i, row_q = adj_rows
    if pinned:
        stamps.add(row_q, lam_v_col, 1.0)
    else:
        stamps.add(row_r, lam_v_col, 2.0 * v_r)
        stamps.add(row_i, lam_v_col, 2.0 * v_i)


def adjoint_pv_block(stamps: StampSet, adj_rows, lam_cols, v_cols,
                     p_set: float, q_g: float, v_r: float, v_i: float,
                     lam_r: float, lam_i: float, lam_v: float,
                     pinned: bool = False) -> None:
    """Stamp a PV machine's adjoint: transposed 3x3 block plus coupling.

    ``adj_rows`` are the stationarity equations of (V_R, V_I, Q_G),
    ``lam_cols`` the adjoint variables (lam_R, lam_I, lam_V), ``v_cols`` the
    machine unknowns (V_R, V_I, Q_G) entering through H.
    """
    (row_r, row_i, row_q) = adj_rows
    (lam_cr, lam_ci, lam_cv) = lam_cols
    p, q = -p_set, -q_g
    a, b = pq_load_jacobian(p, q, v_r, v_i)
    dq_r, dq_i = pq_load_q_partials(v_r, v_i)
    dir_dqg, dii_dqg = -dq_r, -dq_i

    stamps.add(row_r, lam_cr, a)
    stamps.add(row_r, lam_ci, b)
    stamps.add(row_i, lam_cr, b)
    stamps.add(row_i, lam_ci, -a)
    stamps.add(row_q, lam_cr, dir_dqg)
    stamps.add(row_q, lam_ci, dii_dqg)
    pv_pq_switch_adjoint(stamps, adj_rows, lam_cv, v_r, v_i, pinned)

    block = pv_hessian_block(p_set, q_g, v_r, v_i, lam_r, lam_i, lam_v,
                             pinned)
    rows = (row_r, row_i, row_q)
    cols = v_cols
    state = (v_r, v_i, q_g)
    for i in range(3):
        acc = 0.0
        for j in range(3):
            if block[i][j] != 0.0:
                stamps.add(rows[i], cols[j], block[i][j])
            acc += block[i][j] * state[j]
        stamps.add_rhs(rows[i], acc)
