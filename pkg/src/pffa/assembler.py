"""System assembly: index maps, stamp collection, residuals, linear solves.

Unknown ordering pairs every equation with the unknown it determines, which
makes the adjoint block of the coupled matrix the literal transpose of the
power-flow block:

    [ V_R (bus 0..N-1) | V_I | Q_G (gen 0..G-1) | slack I_R, I_I ]

rows in the same order carry [KCL_R | KCL_I | machine constraint | slack
voltage pinning]. In coupled mode the adjoint half repeats the layout at
offset ``dim_pf`` with lam_r/lam_i/lam_v/adjoint-source unknowns and the
stationarity equations of V_R/V_I/Q_G/slack currents.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import adjointcircuit as adj
from . import splitcircuit as split
from .casefile import NetworkCase
from .errors import CaseValidationError, SingularSystemError, VoltageFloorError


@dataclass(frozen=True)
class Placement:
    """Which buses receive feasibility current sources on their KCL rows.

    Sources are never attached to slack voltage-pinning rows or machine
    constraint rows; ``explicit`` buses are external ids.
    """

    mode: str = "all"  # all | loads | explicit
    buses: tuple[int, ...] = ()

    def mask(self, case: NetworkCase) -> np.ndarray:
        n = len(case.buses)
        index = case.bus_index
        if self.mode == "all":
            return np.ones(n, dtype=bool)
        if self.mode == "loads":
            mask = np.zeros(n, dtype=bool)
            for el in (*case.loads, *case.shunts):
                mask[index[el.bus]] = True
            return mask
        if self.mode == "explicit":
            mask = np.zeros(n, dtype=bool)
            for bus_id in self.buses:
                if bus_id not in index:
                    raise CaseValidationError(
                        f"unresolvable bus reference {bus_id} in placement set"
                    )
                mask[index[bus_id]] = True
            return mask
        raise CaseValidationError(f"unknown placement mode {self.mode!r}")


ALL_BUSES = Placement("all")


@dataclass
class IndexMap:
    """Row/column bookkeeping for one assembled system."""

    n_bus: int
    n_gen: int
    coupled: bool

    def __post_init__(self):
        self.vr = np.arange(self.n_bus)
        self.vi = self.n_bus + np.arange(self.n_bus)
        self.qg = 2 * self.n_bus + np.arange(self.n_gen)
        self.slack_ir = 2 * self.n_bus + self.n_gen
        self.slack_ii = self.slack_ir + 1
        self.dim_pf = 2 * self.n_bus + self.n_gen + 2
        if self.coupled:
            self.lam_r = self.dim_pf + self.vr
            self.lam_i = self.dim_pf + self.vi
            self.lam_v = self.dim_pf + self.qg
            self.adj_src_r = self.dim_pf + self.slack_ir
            self.adj_src_i = self.dim_pf + self.slack_ii
            self.dim = 2 * self.dim_pf
        else:
            self.dim = self.dim_pf


def build_index_map(case: NetworkCase, coupled: bool) -> IndexMap:
    return IndexMap(n_bus=len(case.buses), n_gen=len(case.generators),
                    coupled=coupled)


@dataclass
class CircuitModel:
    """NetworkCase compiled to internal-index numpy arrays."""

    case: NetworkCase
    bus_ids: np.ndarray
    slack: int
    slack_v_set: float
    slack_angle: float
    v_start: np.ndarray  # flat-start magnitudes (setpoints where pinned)
    br_f: np.ndarray
    br_t: np.ndarray
    br_r: np.ndarray
    br_x: np.ndarray
    br_bc: np.ndarray
    br_tap: np.ndarray
    br_shift: np.ndarray
    sh_bus: np.ndarray
    sh_g: np.ndarray
    sh_b: np.ndarray
    ld_bus: np.ndarray
    ld_p: np.ndarray
    ld_q: np.ndarray
    gen_bus: np.ndarray
    gen_p: np.ndarray
    gen_qmin: np.ndarray
    gen_qmax: np.ndarray
    gen_vset: np.ndarray


def compile_model(case: NetworkCase) -> CircuitModel:
    index = case.bus_index
    branches = [br for br in case.branches if br.in_service]
    slack = case.slack

    v_start = np.ones(len(case.buses))
    for g in case.generators:
        v_start[index[g.bus]] = g.v_set
    v_start[index[slack.id]] = slack.v_set

    def col(elems, attr):
        return np.array([getattr(e, attr) for e in elems], dtype=float)

    return CircuitModel(
        case=case,
        bus_ids=np.array([b.id for b in case.buses]),
        slack=index[slack.id],
        slack_v_set=slack.v_set,
        slack_angle=slack.angle_set,
        v_start=v_start,
        br_f=np.array([index[br.from_bus] for br in branches], dtype=int),
        br_t=np.array([index[br.to_bus] for br in branches], dtype=int),
        br_r=col(branches, "r"), br_x=col(branches, "x"),
        br_bc=col(branches, "b_charge"), br_tap=col(branches, "tap"),
        br_shift=col(branches, "shift"),
        sh_bus=np.array([index[s.bus] for s in case.shunts], dtype=int),
        sh_g=col(case.shunts, "g"), sh_b=col(case.shunts, "b"),
        ld_bus=np.array([index[l.bus] for l in case.loads], dtype=int),
        ld_p=col(case.loads, "p"), ld_q=col(case.loads, "q"),
        gen_bus=np.array([index[g.bus] for g in case.generators], dtype=int),
        gen_p=col(case.generators, "p_set"),
        gen_qmin=col(case.generators, "q_min"),
        gen_qmax=col(case.generators, "q_max"),
        gen_vset=col(case.generators, "v_set"),
    )


def pinned_q_values(model: CircuitModel, gen_modes: np.ndarray) -> np.ndarray:
    """Reactive output forced by the active limit (NaN where unpinned)."""
    q = np.full(len(model.gen_bus), np.nan)
    q[gen_modes == 1] = model.gen_qmax[gen_modes == 1]
    q[gen_modes == -1] = model.gen_qmin[gen_modes == -1]
    return q


class Assembler:
    """Builds and evaluates the (optionally coupled) Newton systems.

    Linear-element stamps depend only on topology and the homotopy level, so
    they are built once per instance; nonlinear stamps are regenerated per
    iterate. ``system`` returns the affine pair (A, rhs) whose solution is
    the next full iterate; ``residual`` evaluates the true nonlinear
    equations at a state (identical to A(x) @ x - rhs(x) by construction).
    """

    def __init__(self, case: NetworkCase, coupled: bool = True,
                 placement: Placement = ALL_BUSES, mu: float = 0.0,
                 y_scale: float = 0.0, v_floor: float = 1e-4):
        self.case = case
        self.model = compile_model(case)
        self.coupled = coupled
        self.index_map = build_index_map(case, coupled)
        self.placement_mask = placement.mask(case) if coupled else None
        self.mu = mu
        self.y_scale = y_scale
        self.v_floor = v_floor
        self._linear = self._build_linear()
        im = self.index_map
        rows, cols, vals = self._linear.triplets()
        self._lin_matrix = sp.csr_matrix(
            (vals, (rows, cols)), shape=(im.dim, im.dim))
        self._lin_rhs = self._linear.rhs_vector(im.dim)

    # -- linear stamps ----------------------------------------------------

    def _build_linear(self) -> split.StampSet:
        m, im = self.model, self.index_map
        stamps = split.StampSet()
        pf = split.StampSet()

        for k in range(len(m.br_f)):
            f, t = m.br_f[k], m.br_t[k]
            rows_f = cols_f = (im.vr[f], im.vi[f])
            rows_t = cols_t = (im.vr[t], im.vi[t])
            split.stamp_transformer(
                pf, rows_f, rows_t, cols_f, cols_t,
                m.br_r[k], m.br_x[k], m.br_bc[k], m.br_tap[k], m.br_shift[k],
                mu=self.mu, y_scale=self.y_scale)
        for k in range(len(m.sh_bus)):
            bidx = m.sh_bus[k]
            split.stamp_shunt(pf, (im.vr[bidx], im.vi[bidx]),
                              (im.vr[bidx], im.vi[bidx]), m.sh_g[k], m.sh_b[k])
        s = m.slack
        split.stamp_slack(pf, (im.vr[s], im.vi[s]), (im.vr[s], im.vi[s]),
                          (im.slack_ir, im.slack_ii),
                          (im.slack_ir, im.slack_ii),
                          m.slack_v_set, m.slack_angle)

        stamps = stamps.merged(pf)
        if self.coupled:
            stamps = stamps.merged(adj.adjoint_stamp_linear(pf, im.dim_pf))
            placed = np.flatnonzero(self.placement_mask)
            coupling = split.StampSet()
            coupling.add_arrays(im.vr[placed], im.lam_r[placed], -1.0)
            coupling.add_arrays(im.vi[placed], im.lam_i[placed], -1.0)
            stamps = stamps.merged(coupling)
        return stamps

    # -- state access ------------------------------------------------------

    def _check_floor(self, v_r: np.ndarray, v_i: np.ndarray) -> None:
        d = v_r * v_r + v_i * v_i
        if d.size and float(d.min()) < self.v_floor ** 2:
            b = int(np.argmin(d))
            raise VoltageFloorError(
                f"voltage magnitude {math.sqrt(float(d[b])):.2e} at bus "
                f"{int(self.model.bus_ids[b])} fell below the "
                f"{self.v_floor:.0e} guard floor"
            )

    def _gen_state(self, x: np.ndarray):
        im, m = self.index_map, self.model
        gb = m.gen_bus
        return x[im.vr[gb]], x[im.vi[gb]], x[im.qg]

    # -- nonlinear stamps ---------------------------------------------------

    def _build_nonlinear(self, x: np.ndarray,
                         gen_modes: np.ndarray) -> split.StampSet:
        m, im = self.model, self.index_map
        stamps = split.StampSet()
        v_r, v_i = x[: im.n_bus], x[im.n_bus: 2 * im.n_bus]
        self._check_floor(v_r, v_i)

        # loads, vectorized: same formulas as the per-element stamp helpers
        if len(m.ld_bus):
            lb = m.ld_bus
            lvr, lvi = v_r[lb], v_i[lb]
            i_r, i_i = split.pq_load_currents(m.ld_p, m.ld_q, lvr, lvi)
            a, b = split.pq_load_jacobian(m.ld_p, m.ld_q, lvr, lvi)
            rows_r, rows_i = im.vr[lb], im.vi[lb]
            cols_r, cols_i = im.vr[lb], im.vi[lb]
            stamps.add_arrays(rows_r, cols_r, a)
            stamps.add_arrays(rows_r, cols_i, b)
            stamps.add_arrays(rows_i, cols_r, b)
            stamps.add_arrays(rows_i, cols_i, -a)
            stamps.add_rhs_arrays(rows_r, a * lvr + b * lvi - i_r)
            stamps.add_rhs_arrays(rows_i, b * lvr - a * lvi - i_i)
            if self.coupled:
                lam_r = x[im.lam_r[lb]]
                lam_i = x[im.lam_i[lb]]
                arow_r, arow_i = im.lam_r[lb], im.lam_i[lb]
                stamps.add_arrays(arow_r, im.lam_r[lb], a)
                stamps.add_arrays(arow_r, im.lam_i[lb], b)
                stamps.add_arrays(arow_i, im.lam_r[lb], b)
                stamps.add_arrays(arow_i, im.lam_i[lb], -a)
                h_rr, h_ri, h_ir, h_ii = adj.pq_hessian_block(
                    m.ld_p, m.ld_q, lvr, lvi, lam_r, lam_i)
                stamps.add_arrays(arow_r, cols_r, h_rr)
                stamps.add_arrays(arow_r, cols_i, h_ri)
                stamps.add_arrays(arow_i, cols_r, h_ir)
                stamps.add_arrays(arow_i, cols_i, h_ii)
                stamps.add_rhs_arrays(arow_r, h_rr * lvr + h_ri * lvi)
                stamps.add_rhs_arrays(arow_i, h_ir * lvr + h_ii * lvi)

        pinq = pinned_q_values(m, gen_modes)
        gvr, gvi, q_g = self._gen_state(x)
        for g in range(len(m.gen_bus)):
            bidx = m.gen_bus[g]
            rows = (im.vr[bidx], im.vi[bidx], im.qg[g])
            cols = (im.vr[bidx], im.vi[bidx], im.qg[g])
            pq = None if gen_modes[g] == 0 else float(pinq[g])
            split.linearize_pv_generator(
                stamps, rows, cols, m.gen_p[g], float(q_g[g]),
                float(gvr[g]), float(gvi[g]), m.gen_vset[g], pinned_q=pq)
            if self.coupled:
                adj_rows = (im.lam_r[bidx], im.lam_i[bidx], im.lam_v[g])
                lam_cols = (im.lam_r[bidx], im.lam_i[bidx], im.lam_v[g])
                adj.adjoint_pv_block(
                    stamps, adj_rows, lam_cols, cols,
                    m.gen_p[g], float(q_g[g]), float(gvr[g]), float(gvi[g]),
                    float(x[im.lam_r[bidx]]), float(x[im.lam_i[bidx]]),
                    float(x[im.lam_v[g]]), pinned=gen_modes[g] != 0)
        return stamps

    # -- public surface ------------------------------------------------------

    def system(self, x: np.ndarray, gen_modes: np.ndarray | None = None):
        """Affine Newton system (A, rhs) linearized at x: A x_next = rhs."""
        im = self.index_map
        if gen_modes is None:
            gen_modes = np.zeros(im.n_gen, dtype=int)
        merged = self._linear.merged(self._build_nonlinear(x, gen_modes))
        rows, cols, vals = merged.triplets()
        a = sp.csc_matrix((vals, (rows, cols)), shape=(im.dim, im.dim))
        return a, merged.rhs_vector(im.dim)

    def residual(self, x: np.ndarray,
                 gen_modes: np.ndarray | None = None) -> np.ndarray:
        """Exact nonlinear residual of every equation at state x."""
        im, m = self.index_map, self.model
        if gen_modes is None:
            gen_modes = np.zeros(im.n_gen, dtype=int)
        r = self._lin_matrix @ x - self._lin_rhs
        v_r, v_i = x[: im.n_bus], x[im.n_bus: 2 * im.n_bus]
        self._check_floor(v_r, v_i)

        if len(m.ld_bus):
            lb = m.ld_bus
            i_r, i_i = split.pq_load_currents(m.ld_p, m.ld_q, v_r[lb], v_i[lb])
            np.add.at(r, im.vr[lb], i_r)
            np.add.at(r, im.vi[lb], i_i)
            if self.coupled:
                cur_r, cur_i = adj.pq_adjoint_currents(
                    m.ld_p, m.ld_q, v_r[lb], v_i[lb],
                    x[im.lam_r[lb]], x[im.lam_i[lb]])
                np.add.at(r, im.lam_r[lb], cur_r)
                np.add.at(r, im.lam_i[lb], cur_i)

        if len(m.gen_bus):
            gb = m.gen_bus
            gvr, gvi, q_g = self._gen_state(x)
            i_r, i_i = split.pq_load_currents(-m.gen_p, -q_g, gvr, gvi)
            np.add.at(r, im.vr[gb], i_r)
            np.add.at(r, im.vi[gb], i_i)
            unpinned = gen_modes == 0
            fval = np.where(
                unpinned,
                split.pv_constraint_residual(gvr, gvi, m.gen_vset),
                q_g - np.where(np.isnan(pinned_q_values(m, gen_modes)), 0.0,
                               pinned_q_values(m, gen_modes)))
            r[im.qg] += fval
            if self.coupled:
                cur_r, cur_i, cur_q = adj.pv_adjoint_currents(
                    m.gen_p, q_g, gvr, gvi,
                    x[im.lam_r[gb]], x[im.lam_i[gb]], x[im.lam_v],
                    pinned=False)
                pin = ~unpinned
                if pin.any():
                    pr, pi, pq = adj.pv_adjoint_currents(
                        m.gen_p[pin], q_g[pin], gvr[pin], gvi[pin],
                        x[im.lam_r[gb[pin]]], x[im.lam_i[gb[pin]]],
                        x[im.lam_v][pin], pinned=True)
                    cur_r[pin], cur_i[pin], cur_q[pin] = pr, pi, pq
                np.add.at(r, im.lam_r[gb], cur_r)
                np.add.at(r, im.lam_i[gb], cur_i)
                r[im.lam_v] += cur_q
        return r

    def labels(self) -> list[str]:
        """Equation label per row, for diagnostics."""
        im, m = self.index_map, self.model
        ids = m.bus_ids
        out = [f"KCL_R@bus{ids[b]}" for b in range(im.n_bus)]
        out += [f"KCL_I@bus{ids[b]}" for b in range(im.n_bus)]
        out += [f"Vmag@gen{g}(bus{ids[m.gen_bus[g]]})"
                for g in range(im.n_gen)]
        out += [f"Vpin_R@bus{ids[m.slack]}", f"Vpin_I@bus{ids[m.slack]}"]
        if self.coupled:
            out += [f"adj:{lbl}" for lbl in out[: im.dim_pf]]
        return out


# ---------------------------------------------------------------------------
# contract wrappers


def assemble_coupled(case: NetworkCase, x: np.ndarray,
                     gen_modes: np.ndarray | None = None,
                     placement: Placement = ALL_BUSES,
                     mu: float = 0.0, y_scale: float = 0.0):
    """One-shot coupled assembly; returns (A, rhs, index_map)."""
    asm = Assembler(case, coupled=True, placement=placement, mu=mu,
                    y_scale=y_scale)
    a, rhs = asm.system(x, gen_modes)
    return a, rhs, asm.index_map


def assemble_powerflow(case: NetworkCase, x: np.ndarray,
                       gen_modes: np.ndarray | None = None,
                       mu: float = 0.0, y_scale: float = 0.0):
    """One-shot power-flow-only assembly; returns (A, rhs, index_map)."""
    asm = Assembler(case, coupled=False, mu=mu, y_scale=y_scale)
    a, rhs = asm.system(x, gen_modes)
    return a, rhs, asm.index_map


# ---------------------------------------------------------------------------
# linear solve


def solve_linear(a: sp.spmatrix, b: np.ndarray, labels: list[str] | None = None,
                 pivot_ratio_floor: float = 1e-13):
    """Direct sparse solve with singularity diagnostics.

    Factorizes with SuperLU (partial pivoting, COLAMD ordering). Raises
    SingularSystemError naming the offending pivot row when the matrix is
    structurally deficient, exactly singular, or has a pivot-magnitude ratio
    below ``pivot_ratio_floor``. Returns (x, info) where info carries the
    relative residual and the smallest pivot ratio.
    """
    a = sp.csc_matrix(a)
    dim = a.shape[0]

    def bare(row: int | None) -> str | None:
        if row is not None and labels is not None and 0 <= row < len(labels):
            return labels[row]
        return None

    def name(row: int | None) -> str:
        if row is None:
            return "unknown row"
        tag = bare(row)
        return f"row {row} ({tag})" if tag else f"row {row}"

    counts_row = np.diff(sp.csr_matrix(a).indptr)
    if counts_row.min(initial=1) == 0:
        row = int(np.argmin(counts_row))
        raise SingularSystemError(
            f"structurally singular system: empty {name(row)}",
            pivot_row=row, label=bare(row))
    counts_col = np.diff(a.indptr)
    if counts_col.min(initial=1) == 0:
        col = int(np.argmin(counts_col))
        raise SingularSystemError(
            f"structurally singular system: empty column pairing {name(col)}",
            pivot_row=col, label=bare(col))

    try:
        lu = spla.splu(a)
    except RuntimeError as exc:
        row = _dense_singular_row(a)
        raise SingularSystemError(
            f"singular system ({exc}); suspect pivot at {name(row)}",
            pivot_row=row, label=bare(row),
        ) from None

    udiag = np.abs(lu.U.diagonal())
    ratio = float(udiag.min() / udiag.max()) if udiag.max() > 0 else 0.0
    if ratio < pivot_ratio_floor:
        k = int(np.argmin(udiag))
        row = int(np.argsort(lu.perm_r)[k])
        raise SingularSystemError(
            f"numerically singular system: pivot ratio {ratio:.2e} at "
            f"{name(row)}", pivot_row=row, label=bare(row))

    x = lu.solve(b)
    denom = float(np.abs(b).max()) + 1.0
    rel = float(np.abs(a @ x - b).max()) / denom
    return x, {"rel_residual": rel, "pivot_ratio": ratio}


def _dense_singular_row(a: sp.spmatrix, max_dim: int = 2000) -> int | None:
    """Locate the first vanishing pivot via dense LU (small systems only)."""
    if a.shape[0] > max_dim:
        return None
    dense = a.toarray()
    _, _, u = scipy.linalg.lu(dense)
    diag = np.abs(np.diag(u))
    bad = np.flatnonzero(diag <= diag.max() * 1e-14)
    return int(bad[0]) if bad.size else None


def dump_matrix_market(a: sp.spmatrix, rhs: np.ndarray, path: str) -> None:
    """Write the assembled system in MatrixMarket coordinate text format.

    The right-hand side lands next to the matrix with a .rhs.txt suffix
    replacing the matrix file extension.
    """
    scipy.io.mmwrite(str(path), sp.coo_matrix(a))
    base, _ = os.path.splitext(str(path))
    np.savetxt(f"{base}.rhs.txt", rhs)
