import numpy as np
import pytest

from oracles import central_diff, rel_err
from pffa.adjointcircuit import (
    adjoint_stamp_linear, pq_adjoint_currents, pq_hessian_block,
    pv_adjoint_currents, pv_hessian_block, pv_pq_switch_adjoint,
)
from pffa.assembler import Assembler
from pffa.cases import make_mixed_demo, make_pv_toy
from pffa.splitcircuit import StampSet, pq_load_jacobian, stamp_line


def random_full_states(n=100, seed=11):
    rng = np.random.default_rng(seed)
    mag = rng.uniform(0.5, 1.5, n)
    ang = rng.uniform(-np.pi, np.pi, n)
    return dict(
        p=rng.uniform(-2, 2, n), q=rng.uniform(-2, 2, n),
        v_r=mag * np.cos(ang), v_i=mag * np.sin(ang),
        q_g=rng.uniform(-1, 1, n),
        lam_r=rng.uniform(-1, 1, n), lam_i=rng.uniform(-1, 1, n),
        lam_v=rng.uniform(-1, 1, n),
    )


def test_adjoint_load_current_is_transposed_jacobian():
    s = random_full_states(50)
    a, b = pq_load_jacobian(s["p"], s["q"], s["v_r"], s["v_i"])
    cur_r, cur_i = pq_adjoint_currents(s["p"], s["q"], s["v_r"], s["v_i"],
                                       s["lam_r"], s["lam_i"])
    # J^T lam with J = [[a, b], [b, -a]]
    np.testing.assert_allclose(cur_r, a * s["lam_r"] + b * s["lam_i"],
                               rtol=1e-13)
    np.testing.assert_allclose(cur_i, b * s["lam_r"] - a * s["lam_i"],
                               rtol=1e-13)


def test_adjoint_currents_vanish_at_zero_lambda():
    s = random_full_states(30, seed=12)
    zero = np.zeros_like(s["lam_r"])
    cur_r, cur_i = pq_adjoint_currents(s["p"], s["q"], s["v_r"], s["v_i"],
                                       zero, zero)
    assert np.abs(cur_r).max() == 0.0
    assert np.abs(cur_i).max() == 0.0
    for pinned in (False, True):
        g_r, g_i, g_q = pv_adjoint_currents(
            s["p"], s["q_g"], s["v_r"], s["v_i"], zero, zero, zero,
            pinned=pinned)
        assert np.abs(g_r).max() == np.abs(g_i).max() == np.abs(g_q).max() == 0.0


def test_load_hessian_block_matches_finite_differences():
    s = random_full_states(100, seed=13)
    h_rr, h_ri, h_ir, h_ii = pq_hessian_block(
        s["p"], s["q"], s["v_r"], s["v_i"], s["lam_r"], s["lam_i"])
    for k in range(len(s["p"])):
        args = (s["p"][k], s["q"][k])
        lam = (s["lam_r"][k], s["lam_i"][k])
        fd_r = central_diff(
            lambda t: pq_adjoint_currents(*args, t, s["v_i"][k], *lam),
            s["v_r"][k])
        fd_i = central_diff(
            lambda t: pq_adjoint_currents(*args, s["v_r"][k], t, *lam),
            s["v_i"][k])
        exact = np.array([[h_rr[k], h_ri[k]], [h_ir[k], h_ii[k]]])
        fd = np.array([[fd_r[0], fd_i[0]], [fd_r[1], fd_i[1]]])
        assert rel_err(fd, exact) < 1e-6
        # symmetric and trace-free, like the first-order block
        assert exact[0, 1] == pytest.approx(exact[1, 0])
        assert exact[0, 0] == pytest.approx(-exact[1, 1])


def test_load_hessian_vanishes_at_zero_lambda():
    s = random_full_states(30, seed=14)
    zero = np.zeros_like(s["lam_r"])
    blocks = pq_hessian_block(s["p"], s["q"], s["v_r"], s["v_i"], zero, zero)
    for blk in blocks:
        assert np.abs(blk).max() == 0.0


@pytest.mark.parametrize("pinned", [False, True])
def test_pv_hessian_block_matches_finite_differences(pinned):
    s = random_full_states(100, seed=15)
    for k in range(len(s["p"])):
        p_set, q_g = s["p"][k], s["q_g"][k]
        v_r, v_i = s["v_r"][k], s["v_i"][k]
        lam = (s["lam_r"][k], s["lam_i"][k], s["lam_v"][k])
        block = np.array(pv_hessian_block(p_set, q_g, v_r, v_i, *lam,
                                          pinned=pinned))
        fd_vr = central_diff(
            lambda t: pv_adjoint_currents(p_set, q_g, t, v_i, *lam,
                                          pinned=pinned), v_r)
        fd_vi = central_diff(
            lambda t: pv_adjoint_currents(p_set, q_g, v_r, t, *lam,
                                          pinned=pinned), v_i)
        fd_qg = central_diff(
            lambda t: pv_adjoint_currents(p_set, t, v_r, v_i, *lam,
                                          pinned=pinned), q_g)
        fd = np.column_stack([fd_vr, fd_vi, fd_qg])
        assert rel_err(fd, block) < 1e-6
        np.testing.assert_allclose(block, block.T, atol=1e-13)
        assert block[2, 2] == 0.0


def test_adjoint_linear_is_exact_transpose():
    stamps = StampSet()
    stamp_line(stamps, (0, 1), (2, 3), (0, 1), (2, 3), r=0.02, x=0.1,
               b_charge=0.04)
    stamps.add_rhs(0, 5.0)  # sources must not propagate to the adjoint
    adj = adjoint_stamp_linear(stamps, dim_pf=4)
    rows, cols, vals = stamps.triplets()
    arows, acols, avals = adj.triplets()
    a = np.zeros((8, 8))
    a[rows, cols] = vals
    a[arows, acols] += avals
    np.testing.assert_allclose(a[4:, 4:], a[:4, :4].T, atol=1e-14)
    assert np.abs(adj.rhs_vector(8)).max() == 0.0


def test_adjoint_series_flips_b_coupling_sign():
    """For g + jb series elements the adjoint couples lam through +b.

    The power-flow side computes I_R = g dV_R - b dV_I; the transposed
    (conjugate) adjoint gives adjoint I_R = g lam_R + b lam_I.
    """
    g, b = 0.0, -10.0
    stamps = StampSet()
    stamp_line(stamps, (0, 1), (2, 3), (0, 1), (2, 3),
               r=g / (g * g + b * b), x=-b / (g * g + b * b))
    adj = adjoint_stamp_linear(stamps, dim_pf=4)
    arows, acols, avals = adj.triplets()
    a = np.zeros((8, 8))
    a[arows, acols] += avals
    lam = np.array([0.9, 0.2, 1.0, -0.1])  # lam_R/lam_I at both ends
    adjoint_flow = a[4:, 4:] @ lam
    # series part at the from end: g (lamRf - lamRt) + b (lamIf - lamIt)
    expect_r = g * (lam[0] - lam[2]) + b * (lam[1] - lam[3])
    expect_i = g * (lam[1] - lam[3]) - b * (lam[0] - lam[2])
    assert adjoint_flow[0] == pytest.approx(expect_r)
    assert adjoint_flow[1] == pytest.approx(expect_i)


def test_coupled_matrix_blocks_are_transposes():
    """Upper-left and lower-right blocks agree transposed once the
    state-coupling (Hessian) block and feasibility columns are masked."""
    for case in (make_mixed_demo(), make_pv_toy()):
        asm = Assembler(case, coupled=True)
        im = asm.index_map
        rng = np.random.default_rng(3)
        x = np.zeros(im.dim)
        x[im.vr] = rng.uniform(0.9, 1.1, im.n_bus)
        x[im.vi] = rng.uniform(-0.2, 0.2, im.n_bus)
        x[im.qg] = rng.uniform(-0.5, 0.5, im.n_gen)
        x[im.lam_r] = rng.uniform(-1, 1, im.n_bus)
        x[im.lam_i] = rng.uniform(-1, 1, im.n_bus)
        x[im.lam_v] = rng.uniform(-1, 1, im.n_gen)
        a, _ = asm.system(x)
        d = im.dim_pf
        dense = a.toarray()
        np.testing.assert_allclose(dense[d:, d:], dense[:d, :d].T, atol=1e-12)


def test_coupling_block_is_degenerate_identity():
    """Feasibility columns carry exactly -1.0 on KCL rows, nothing else."""
    case = make_pv_toy()
    asm = Assembler(case, coupled=True)
    im = asm.index_map
    x = np.ones(im.dim)
    x[im.vi] = 0.0
    a, _ = asm.system(x)
    dense = a.toarray()
    coupling = dense[: im.dim_pf, im.dim_pf:]
    expected = np.zeros_like(coupling)
    expected[im.vr, im.vr] = -1.0
    expected[im.vi, im.vi] = -1.0
    np.testing.assert_array_equal(coupling, expected)
    vals = coupling[coupling != 0]
    assert np.all(np.abs(vals) == 1.0)
    # constraint rows (machine + slack pinning) never get sources
    assert np.abs(coupling[im.qg, :]).max(initial=0.0) == 0.0
    assert np.abs(coupling[im.slack_ir, :]).max(initial=0.0) == 0.0


def test_switch_changes_exactly_six_stamp_positions():
    """Pinning one machine moves its constraint row and the transpose."""
    case = make_pv_toy()
    asm = Assembler(case, coupled=True)
    im = asm.index_map
    rng = np.random.default_rng(5)
    x = np.zeros(im.dim)
    x[im.vr] = rng.uniform(0.95, 1.05, im.n_bus)
    x[im.vi] = rng.uniform(-0.1, 0.1, im.n_bus)
    x[im.qg] = 0.2
    x[im.lam_r] = 0.3
    x[im.lam_i] = -0.2
    x[im.lam_v] = 0.4
    a_pv, _ = asm.system(x, np.array([0]))
    a_pinned, _ = asm.system(x, np.array([1]))
    diff = (a_pv - a_pinned).tocoo()
    changed = {(int(r), int(c)) for r, c, v in
               zip(diff.row, diff.col, diff.data) if v != 0.0}
    g_bus = asm.model.gen_bus[0]
    expected = {
        (im.qg[0], im.vr[g_bus]), (im.qg[0], im.vi[g_bus]),
        (im.qg[0], im.qg[0]),
        (im.lam_r[g_bus], im.lam_v[0]), (im.lam_i[g_bus], im.lam_v[0]),
        (im.lam_v[0], im.lam_v[0]),
    }
    # Hessian coupling entries of the magnitude constraint also drop
    hess_extra = {
        (im.lam_r[g_bus], im.vr[g_bus]), (im.lam_i[g_bus], im.vi[g_bus]),
    }
    assert expected <= changed
    assert changed <= expected | hess_extra


def test_pv_pq_switch_adjoint_stamps():
    stamps = StampSet()
    pv_pq_switch_adjoint(stamps, (0, 1, 2), 5, v_r=1.02, v_i=-0.1,
                         pinned=False)
    rows, cols, vals = stamps.triplets()
    assert sorted(zip(rows.tolist(), cols.tolist(), vals.tolist())) == [
        (0, 5, pytest.approx(2.04)), (1, 5, pytest.approx(-0.2))]
    pinned = StampSet()
    pv_pq_switch_adjoint(pinned, (0, 1, 2), 5, v_r=1.02, v_i=-0.1,
                         pinned=True)
    rows, cols, vals = pinned.triplets()
    assert (rows.tolist(), cols.tolist(), vals.tolist()) == ([2], [5], [1.0])
