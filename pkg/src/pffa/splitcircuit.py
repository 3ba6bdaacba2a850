"""Split-circuit formulation of AC power flow.

The complex network equations are split into coupled real and imaginary
circuits solved in rectangular voltage coordinates. Every element
contributes matrix triplets ("stamps") and independent source terms to the
linear system of one Newton-Raphson step; nonlinear elements (constant-power
loads, PV machines) are stamped as their first-order Taylor models around
the previous iterate.

Conventions used throughout:
 - element currents are *drawn* from the bus (a generator stamps the load
   model with negated P and Q);
 - ``p``/``q`` arguments are absorbed power, per unit;
 - functions broadcast over numpy arrays, so the bulk assembly paths and the
   per-element stamp helpers share one set of formulas.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class StampSet:
    """Accumulates sparse matrix triplets and right-hand-side entries."""

    _rows: list = field(default_factory=list)
    _cols: list = field(default_factory=list)
    _vals: list = field(default_factory=list)
    _rhs_rows: list = field(default_factory=list)
    _rhs_vals: list = field(default_factory=list)

    def add(self, row: int, col: int, val: float) -> None:
        self._rows.append(np.array([row], dtype=np.int64))
        self._cols.append(np.array([col], dtype=np.int64))
        self._vals.append(np.array([val], dtype=np.float64))

    def add_arrays(self, rows, cols, vals) -> None:
        rows = np.asarray(rows, dtype=np.int64).ravel()
        self._rows.append(rows)
        self._cols.append(np.asarray(cols, dtype=np.int64).ravel())
        self._vals.append(np.broadcast_to(
            np.asarray(vals, dtype=np.float64), rows.shape).ravel())

    def add_rhs(self, row: int, val: float) -> None:
        self._rhs_rows.append(np.array([row], dtype=np.int64))
        self._rhs_vals.append(np.array([val], dtype=np.float64))

    def add_rhs_arrays(self, rows, vals) -> None:
        rows = np.asarray(rows, dtype=np.int64).ravel()
        self._rhs_rows.append(rows)
        self._rhs_vals.append(np.broadcast_to(
            np.asarray(vals, dtype=np.float64), rows.shape).ravel())

    def triplets(self):
        if not self._rows:
            z = np.zeros(0)
            return z.astype(np.int64), z.astype(np.int64), z
        return (np.concatenate(self._rows), np.concatenate(self._cols),
                np.concatenate(self._vals))

    def rhs_vector(self, dim: int) -> np.ndarray:
        rhs = np.zeros(dim)
        if self._rhs_rows:
            np.add.at(rhs, np.concatenate(self._rhs_rows),
                      np.concatenate(self._rhs_vals))
        return rhs

    def merged(self, *others: "StampSet") -> "StampSet":
        out = StampSet()
        for s in (self, *others):
            out._rows += s._rows
            out._cols += s._cols
            out._vals += s._vals
            out._rhs_rows += s._rhs_rows
            out._rhs_vals += s._rhs_vals
        return out

    def transposed_into(self, row_offset: int, col_offset: int) -> "StampSet":
        """Matrix entries with row/col swapped and shifted; rhs dropped.

        This is how the adjoint network inherits the linear circuit: the
        adjoint of an admittance block is its transpose, which for a split
        complex admittance is exactly the split of the conjugate.
        """
        out = StampSet()
        for r, c, v in zip(self._rows, self._cols, self._vals):
            out._rows.append(c + row_offset)
            out._cols.append(r + col_offset)
            out._vals.append(v)
        return out

    @property
    def nnz(self) -> int:
        return int(sum(len(r) for r in self._rows))


# ---------------------------------------------------------------------------
# constant-power element formulas (absorbed-power convention)


def pq_load_currents(p, q, v_r, v_i):
    """Rectangular components of the current drawn by a P + jQ demand.

    I = conj(S / V):  I_R = (P V_R + Q V_I) / |V|^2,
                      I_I = (P V_I - Q V_R) / |V|^2.
    """
    d = v_r * v_r + v_i * v_i
    return (p * v_r + q * v_i) / d, (p * v_i - q * v_r) / d


def pq_load_jacobian(p, q, v_r, v_i):
    """First partials of the drawn current w.r.t. (V_R, V_I).

    Returns (a, b) packing the 2x2 block [[a, b], [b, -a]] laid out as
    [[dI_R/dV_R, dI_R/dV_I], [dI_I/dV_R, dI_I/dV_I]]; the block is symmetric
    and trace-free.
    """
    d = v_r * v_r + v_i * v_i
    d2 = d * d
    a = (p * (v_i * v_i - v_r * v_r) - 2.0 * q * v_r * v_i) / d2
    b = (q * (v_r * v_r - v_i * v_i) - 2.0 * p * v_r * v_i) / d2
    return a, b


def pq_load_q_partials(v_r, v_i):
    """Partials of the drawn current w.r.t. the absorbed reactive power."""
    d = v_r * v_r + v_i * v_i
    return v_i / d, -v_r / d


def pq_load_hessian_terms(p, q, v_r, v_i):
    """Second partials of the drawn currents w.r.t. voltage.

    Returns (t1, t2) with
        hess(I_R) = [[t1, t2], [t2, -t1]],
        hess(I_I) = [[t2, -t1], [-t1, -t2]].
    """
    d = v_r * v_r + v_i * v_i
    i_r, i_i = pq_load_currents(p, q, v_r, v_i)
    a, _ = pq_load_jacobian(p, q, v_r, v_i)
    t1 = -2.0 * (i_r + 2.0 * v_r * a) / d
    t2 = 2.0 * (i_i - 2.0 * v_i * a) / d
    return t1, t2


def pq_load_q_cross_terms(v_r, v_i):
    """Mixed second partials d2I/(dV dQ) of the drawn currents.

    Returns (c_rr, c_ri, c_ir, c_ii) for
        d2I_R/dV_R dQ, d2I_R/dV_I dQ, d2I_I/dV_R dQ, d2I_I/dV_I dQ;
    c_ri == c_ir by symmetry of mixed partials.
    """
    d = v_r * v_r + v_i * v_i
    d2 = d * d
    c_rr = -2.0 * v_r * v_i / d2
    c_ri = (v_r * v_r - v_i * v_i) / d2
    return c_rr, c_ri, c_ri, -c_rr


# ---------------------------------------------------------------------------
# linear network elements


def split_admittance_block(y: complex):
    """Real 2x2 block [[g, -b], [b, g]] of a complex admittance."""
    return np.array([[y.real, -y.imag], [y.imag, y.real]])


def line_currents(g, b, vf_r, vf_i, vt_r, vt_i):
    """Series current from -> to of a line with series admittance g + jb."""
    dr, di = vf_r - vt_r, vf_i - vt_i
    return g * dr - b * di, g * di + b * dr


def _stamp_complex(stamps: StampSet, rows, cols, y: complex) -> None:
    """Stamp I_row += y * V_col split into the real/imaginary pair."""
    (row_r, row_i), (col_r, col_i) = rows, cols
    stamps.add(row_r, col_r, y.real)
    stamps.add(row_r, col_i, -y.imag)
    stamps.add(row_i, col_r, y.imag)
    stamps.add(row_i, col_i, y.real)


def branch_two_port(ys: complex, b_charge: float, tap: float, shift: float):
    """Complex two-port admittance blocks (yff, yft, ytf, ytt).

    Off-nominal ratio tap * e^{j shift} is on the from side; line charging
    splits half per end and sits inside the ratio on the from side.
    """
    ysh = 0.5j * b_charge
    ratio = tap * np.exp(1j * shift)
    yff = (ys + ysh) / (tap * tap)
    yft = -ys / np.conj(ratio)
    ytf = -ys / ratio
    ytt = ys + ysh
    return yff, yft, ytf, ytt


def homotopy_branch(r, x, b_charge, tap, shift, mu: float, y_scale: float):
    """Branch parameters under transmission stepping at homotopy level mu.

    The series admittance is inflated by (1 + mu * y_scale), off-nominal
    ratios relax toward 1 and phase shifts toward 0; charging is untouched:
        ys(mu) = (1 + mu Y) / (r + jx),
        tap(mu) = tap + (1 - tap) mu,
        shift(mu) = (1 - mu) shift.
    """
    ys = (1.0 + mu * y_scale) / complex(r, x)
    return ys, b_charge, tap + (1.0 - tap) * mu, (1.0 - mu) * shift


def stamp_line(stamps: StampSet, rows_f, rows_t, cols_f, cols_t,
               r: float, x: float, b_charge: float = 0.0,
               mu: float = 0.0, y_scale: float = 0.0) -> None:
    """Stamp a transmission line (nominal ratio, no phase shift)."""
    stamp_transformer(stamps, rows_f, rows_t, cols_f, cols_t,
                      r, x, b_charge, tap=1.0, shift=0.0,
                      mu=mu, y_scale=y_scale)


def stamp_transformer(stamps: StampSet, rows_f, rows_t, cols_f, cols_t,
                      r: float, x: float, b_charge: float = 0.0,
                      tap: float = 1.0, shift: float = 0.0,
                      mu: float = 0.0, y_scale: float = 0.0) -> None:
    """Stamp a two-winding branch, optionally under homotopy scaling.

    ``rows_*`` are the (KCL_R, KCL_I) equation indices at each end and
    ``cols_*`` the (V_R, V_I) unknown indices.
    """
    ys, b_c, tap_eff, shift_eff = homotopy_branch(
        r, x, b_charge, tap, shift, mu, y_scale)
    yff, yft, ytf, ytt = branch_two_port(ys, b_c, tap_eff, shift_eff)
    _stamp_complex(stamps, rows_f, cols_f, yff)
    _stamp_complex(stamps, rows_f, cols_t, yft)
    _stamp_complex(stamps, rows_t, cols_f, ytf)
    _stamp_complex(stamps, rows_t, cols_t, ytt)


def stamp_shunt(stamps: StampSet, rows, cols, g: float, b: float) -> None:
    """Stamp a fixed shunt admittance to ground."""
    _stamp_complex(stamps, rows, cols, complex(g, b))


def stamp_slack(stamps: StampSet, kcl_rows, v_cols, src_rows, src_cols,
                v_set: float, angle_set: float) -> None:
    """Stamp the slack voltage source in modified nodal form.

    Two auxiliary unknowns carry the source current injected into the bus
    (entering the KCL rows with -1), and two extra equations pin the bus
    voltage phasor to the setpoint.
    """
    (kcl_r, kcl_i), (col_vr, col_vi) = kcl_rows, v_cols
    (row_sr, row_si), (col_ir, col_ii) = src_rows, src_cols
    stamps.add(kcl_r, col_ir, -1.0)
    stamps.add(kcl_i, col_ii, -1.0)
    stamps.add(row_sr, col_vr, 1.0)
    stamps.add(row_si, col_vi, 1.0)
    stamps.add_rhs(row_sr, v_set * np.cos(angle_set))
    stamps.add_rhs(row_si, v_set * np.sin(angle_set))


# ---------------------------------------------------------------------------
# nonlinear element linearizations (first-order Taylor stamps)


def linearize_pq_load(stamps: StampSet, rows, cols, p: float, q: float,
                      v_r: float, v_i: float) -> None:
    """Stamp the Taylor model of a constant-power load around (v_r, v_i).

    The linearized current J . V + alpha is split so that J lands in the
    matrix and the legacy term -alpha = J . v0 - I(v0) on the right side.
    """
    (kcl_r, kcl_i), (col_vr, col_vi) = rows, cols
    i_r, i_i = pq_load_currents(p, q, v_r, v_i)
    a, b = pq_load_jacobian(p, q, v_r, v_i)
    stamps.add(kcl_r, col_vr, a)
    stamps.add(kcl_r, col_vi, b)
    stamps.add(kcl_i, col_vr, b)
    stamps.add(kcl_i, col_vi, -a)
    stamps.add_rhs(kcl_r, a * v_r + b * v_i - i_r)
    stamps.add_rhs(kcl_i, b * v_r - a * v_i - i_i)


def linearize_pv_generator(stamps: StampSet, rows, cols, p_set: float,
                           q_g: float, v_r: float, v_i: float,
                           v_set: float, pinned_q: float | None = None) -> None:
    """Stamp the Taylor model of a PV machine around (v_r, v_i, q_g).

    The machine draws the load current with negated (P, Q), contributing a
    3x3 block over (V_R, V_I, Q_G). The third equation is the voltage
    magnitude constraint V_R^2 + V_I^2 = v_set^2 while the machine controls
    voltage, or Q_G = pinned_q once reactive limits pin it.
    """
    (kcl_r, kcl_i, row_f), (col_vr, col_vi, col_qg) = rows, cols
    p, q = -p_set, -q_g
    i_r, i_i = pq_load_currents(p, q, v_r, v_i)
    a, b = pq_load_jacobian(p, q, v_r, v_i)
    # drawn current depends on q = -q_g, so the Q_G column flips sign
    dir_dq, dii_dq = pq_load_q_partials(v_r, v_i)
    dir_dqg, dii_dqg = -dir_dq, -dii_dq

    stamps.add(kcl_r, col_vr, a)
    stamps.add(kcl_r, col_vi, b)
    stamps.add(kcl_r, col_qg, dir_dqg)
    stamps.add(kcl_i, col_vr, b)
    stamps.add(kcl_i, col_vi, -a)
    stamps.add(kcl_i, col_qg, dii_dqg)
    stamps.add_rhs(kcl_r, a * v_r + b * v_i + dir_dqg * q_g - i_r)
    stamps.add_rhs(kcl_i, b * v_r - a * v_i + dii_dqg * q_g - i_i)

    if pinned_q is None:
        stamps.add(row_f, col_vr, 2.0 * v_r)
        stamps.add(row_f, col_vi, 2.0 * v_i)
        stamps.add_rhs(row_f, v_r * v_r + v_i * v_i + v_set * v_set)
    else:
        stamps.add(row_f, col_qg, 1.0)
        stamps.add_rhs(row_f, pinned_q)


def pv_constraint_residual(v_r, v_i, v_set):
    """Voltage-magnitude constraint value V_R^2 + V_I^2 - v_set^2."""
    return v_r * v_r + v_i * v_i - v_set * v_set
