import numpy as np
import pytest

from oracles import central_diff, complex_ybus, rel_err
from pffa.splitcircuit import (
    StampSet, branch_two_port, homotopy_branch, line_currents,
    linearize_pq_load, linearize_pv_generator, pq_load_currents,
    pq_load_hessian_terms, pq_load_jacobian, pq_load_q_cross_terms,
    pq_load_q_partials, pv_constraint_residual, split_admittance_block,
    stamp_line, stamp_slack,
)
from pffa.assembler import Assembler
from pffa.cases import make_mixed_demo


def random_states(n=100, seed=7):
    """Voltage states with magnitude in [0.5, 1.5] plus P/Q draws."""
    rng = np.random.default_rng(seed)
    mag = rng.uniform(0.5, 1.5, n)
    ang = rng.uniform(-np.pi, np.pi, n)
    p = rng.uniform(-2.0, 2.0, n)
    q = rng.uniform(-2.0, 2.0, n)
    return p, q, mag * np.cos(ang), mag * np.sin(ang)


def test_load_current_values():
    # unit voltage, pure active power: current in phase with voltage
    i_r, i_i = pq_load_currents(1.0, 0.0, 1.0, 0.0)
    assert (i_r, i_i) == (1.0, 0.0)
    # power balance: V * conj(I) reproduces the absorbed S at any state
    p, q, v_r, v_i = random_states(40)
    i_r, i_i = pq_load_currents(p, q, v_r, v_i)
    s = (v_r + 1j * v_i) * np.conj(i_r + 1j * i_i)
    np.testing.assert_allclose(s.real, p, rtol=1e-13)
    np.testing.assert_allclose(s.imag, q, rtol=1e-13)


def test_load_jacobian_reference_point():
    a, b = pq_load_jacobian(1.0, 0.0, 1.0, 0.0)
    assert a == pytest.approx(-1.0)
    assert b == pytest.approx(0.0)
    # block layout [[a, b], [b, -a]]: dI_I/dV_I = -a = +1 at this state


def test_load_jacobian_matches_finite_differences():
    p, q, v_r, v_i = random_states(100)
    a, b = pq_load_jacobian(p, q, v_r, v_i)
    for k in range(len(p)):
        fd_r = central_diff(
            lambda t: pq_load_currents(p[k], q[k], t, v_i[k]), v_r[k])
        fd_i = central_diff(
            lambda t: pq_load_currents(p[k], q[k], v_r[k], t), v_i[k])
        exact = np.array([[a[k], b[k]], [b[k], -a[k]]])
        fd = np.array([[fd_r[0], fd_i[0]], [fd_r[1], fd_i[1]]])
        assert rel_err(fd, exact) < 1e-6


def test_load_q_partials_match_finite_differences():
    p, q, v_r, v_i = random_states(100, seed=8)
    dq_r, dq_i = pq_load_q_partials(v_r, v_i)
    for k in range(len(p)):
        fd = central_diff(
            lambda t: pq_load_currents(p[k], t, v_r[k], v_i[k]), q[k])
        assert rel_err(fd, [dq_r[k], dq_i[k]]) < 1e-6


def test_load_hessian_terms_match_finite_differences():
    p, q, v_r, v_i = random_states(100, seed=9)
    t1, t2 = pq_load_hessian_terms(p, q, v_r, v_i)
    for k in range(len(p)):
        # d(a, b)/dV_R and /dV_I via differences of the analytic jacobian
        da = central_diff(
            lambda t: pq_load_jacobian(p[k], q[k], t, v_i[k]), v_r[k])
        db = central_diff(
            lambda t: pq_load_jacobian(p[k], q[k], v_r[k], t), v_i[k])
        # hess(I_R) = [[t1, t2], [t2, -t1]] against (da/dVR, da/dVI, db/dVI)
        assert rel_err(da[0], t1[k]) < 1e-6
        assert rel_err(db[0], t2[k]) < 1e-6
        assert rel_err(da[1], t2[k]) < 1e-6   # db/dV_R == da/dV_I
        assert rel_err(db[1], -t1[k]) < 1e-6


def test_load_q_cross_terms_match_finite_differences():
    _, q, v_r, v_i = random_states(100, seed=10)
    c_rr, c_ri, c_ir, c_ii = pq_load_q_cross_terms(v_r, v_i)
    for k in range(len(q)):
        fd_r = central_diff(
            lambda t: pq_load_q_partials(t, v_i[k]), v_r[k])
        fd_i = central_diff(
            lambda t: pq_load_q_partials(v_r[k], t), v_i[k])
        assert rel_err([fd_r[0], fd_i[0], fd_r[1], fd_i[1]],
                       [c_rr[k], c_ri[k], c_ir[k], c_ii[k]]) < 1e-6


def test_taylor_model_is_tangent():
    """The affine stamp reproduces value and slope at the expansion point."""
    p, q, v_r, v_i = 0.7, -0.3, 1.05, 0.21
    stamps = StampSet()
    linearize_pq_load(stamps, (0, 1), (0, 1), p, q, v_r, v_i)
    rows, cols, vals = stamps.triplets()
    j = np.zeros((2, 2))
    j[rows, cols] = vals
    rhs = stamps.rhs_vector(2)
    i0 = np.array(pq_load_currents(p, q, v_r, v_i))
    # affine model J v - rhs equals the true current at the expansion point
    np.testing.assert_allclose(j @ [v_r, v_i] - rhs, i0, rtol=1e-14)
    # and to first order nearby
    dv = np.array([1e-5, -2e-5])
    i1 = np.array(pq_load_currents(p, q, v_r + dv[0], v_i + dv[1]))
    np.testing.assert_allclose(j @ ([v_r, v_i] + dv) - rhs, i1, atol=1e-9)


def test_pv_generator_block_reference_point():
    """Q_G column magnitude is 1/|V| scaled voltage at the flat state."""
    stamps = StampSet()
    linearize_pv_generator(stamps, (0, 1, 2), (0, 1, 2),
                           p_set=0.5, q_g=0.1, v_r=1.0, v_i=0.0, v_set=1.0)
    rows, cols, vals = stamps.triplets()
    j = np.zeros((3, 3))
    j[rows, cols] = vals
    assert j[0, 2] == pytest.approx(0.0)          # dI_R/dQ_G at v=(1,0)
    assert abs(j[1, 2]) == pytest.approx(1.0)     # dI_I/dQ_G magnitude
    assert j[2, 0] == pytest.approx(2.0)          # magnitude constraint row
    assert j[2, 1] == pytest.approx(0.0)
    assert j[2, 2] == 0.0


def test_pv_generator_pinned_row():
    stamps = StampSet()
    linearize_pv_generator(stamps, (0, 1, 2), (0, 1, 2),
                           p_set=0.5, q_g=0.3, v_r=1.0, v_i=0.05, v_set=1.0,
                           pinned_q=0.25)
    rows, cols, vals = stamps.triplets()
    j = np.zeros((3, 3))
    j[rows, cols] = vals
    rhs = stamps.rhs_vector(3)
    assert j[2].tolist() == [0.0, 0.0, 1.0]
    assert rhs[2] == 0.25


def test_pv_constraint_residual():
    assert pv_constraint_residual(0.6, 0.8, 1.0) == pytest.approx(0.0)
    assert pv_constraint_residual(1.1, 0.0, 1.0) == pytest.approx(0.21)


def test_line_currents_and_split_block():
    # g=1, b=-10 between 1.0 and 0.95 p.u. voltages
    i_r, i_i = line_currents(1.0, -10.0, 1.0, 0.0, 0.95, -0.02)
    assert i_r == pytest.approx(1.0 * 0.05 - (-10.0) * 0.02)
    assert i_i == pytest.approx(1.0 * 0.02 + (-10.0) * 0.05)
    block = split_admittance_block(complex(1.0, -10.0))
    np.testing.assert_allclose(block, [[1.0, 10.0], [-10.0, 1.0]])


def test_stamp_line_matches_complex_two_port():
    stamps = StampSet()
    stamp_line(stamps, (0, 1), (2, 3), (0, 1), (2, 3),
               r=0.02, x=0.1, b_charge=0.04)
    rows, cols, vals = stamps.triplets()
    a = np.zeros((4, 4))
    a[rows, cols] = vals
    ys = 1.0 / complex(0.02, 0.1)
    yff, yft, ytf, ytt = branch_two_port(ys, 0.04, 1.0, 0.0)
    assert yff == ytt  # symmetric line
    assert yft == ytf
    np.testing.assert_allclose(a[0, 0], yff.real)
    np.testing.assert_allclose(a[0, 1], -yff.imag)
    np.testing.assert_allclose(a[1, 0], yff.imag)
    np.testing.assert_allclose(a[0, 2], yft.real)
    # KCL symmetry of the assembled line: current leaving f enters t
    v = np.array([1.0, 0.0, 0.9, -0.05])
    flows = a @ v
    ysh = 0.5j * 0.04
    i_f = (ys + ysh) * complex(1.0, 0.0) - ys * complex(0.9, -0.05)
    assert flows[0] == pytest.approx(i_f.real)
    assert flows[1] == pytest.approx(i_f.imag)


def test_transformer_two_port_against_reference_ybus(mixed5=None):
    """Split stamps reassemble to the complex Ybus of the same network."""
    case = make_mixed_demo()
    asm = Assembler(case, coupled=False)
    im = asm.index_map
    n = im.n_bus
    a = asm._lin_matrix.toarray()
    # read the complex Ybus back out of the split blocks
    y_split = a[:n, :n] + 1j * a[n:2 * n, :n]
    y_ref = complex_ybus(case)
    np.testing.assert_allclose(y_split, y_ref, atol=1e-12)
    # the split structure is internally consistent: [[G, -B], [B, G]]
    np.testing.assert_allclose(a[:n, :n], a[n:2 * n, n:2 * n], atol=1e-14)
    np.testing.assert_allclose(a[:n, n:2 * n], -a[n:2 * n, :n], atol=1e-14)


def test_homotopy_branch_arithmetic():
    ys, bc, tap, shift = homotopy_branch(0.01, 0.05, 0.02, 0.9, 0.3,
                                         mu=1.0, y_scale=100.0)
    assert ys == pytest.approx(101.0 / complex(0.01, 0.05))
    assert bc == 0.02          # charging untouched
    assert tap == pytest.approx(1.0)   # ratio fully relaxed at mu=1
    assert shift == 0.0                # shift fully relaxed at mu=1
    # mu=0 restores the branch exactly
    ys0, bc0, tap0, shift0 = homotopy_branch(0.01, 0.05, 0.02, 0.9, 0.3,
                                             mu=0.0, y_scale=100.0)
    assert ys0 == pytest.approx(1.0 / complex(0.01, 0.05))
    assert (bc0, tap0, shift0) == (0.02, 0.9, 0.3)
    # midpoint interpolates the ratio linearly
    _, _, tap_h, shift_h = homotopy_branch(0.01, 0.05, 0.02, 0.9, 0.3,
                                           mu=0.5, y_scale=100.0)
    assert tap_h == pytest.approx(0.95)
    assert shift_h == pytest.approx(0.15)


def test_stamp_determinism():
    """Same case, same state: identical triplets on every assembly."""
    case = make_mixed_demo()
    asm = Assembler(case, coupled=True)
    x = np.ones(asm.index_map.dim)
    x[asm.index_map.vi] = 0.1
    a1, rhs1 = asm.system(x)
    a2, rhs2 = asm.system(x)
    assert (a1 != a2).nnz == 0
    np.testing.assert_array_equal(rhs1, rhs2)


def test_slack_stamp():
    stamps = StampSet()
    stamp_slack(stamps, (0, 1), (0, 1), (2, 3), (2, 3),
                v_set=1.05, angle_set=0.1)
    rows, cols, vals = stamps.triplets()
    a = np.zeros((4, 4))
    a[rows, cols] = vals
    rhs = stamps.rhs_vector(4)
    np.testing.assert_allclose(a[0, 2], -1.0)
    np.testing.assert_allclose(a[1, 3], -1.0)
    np.testing.assert_allclose(a[2, 0], 1.0)
    np.testing.assert_allclose(a[3, 1], 1.0)
    assert rhs[2] == pytest.approx(1.05 * np.cos(0.1))
    assert rhs[3] == pytest.approx(1.05 * np.sin(0.1))
