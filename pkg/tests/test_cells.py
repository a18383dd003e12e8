import math

import numpy as np
import pytest

from arsg import cells, kernels
from arsg.errors import ConfigError, ShapeError
from arsg.tape import Tensor, grad_check, vsum, mul, add
from oracles import lstmp_step_oracle, params_to_lists, plain_peephole_lstm_step


def t(x):
    return Tensor(np.asarray(x, dtype=np.float64))


def zero_lstmp(in_dim, cell, proj):
    rng = np.random.default_rng(0)
    p = cells.LstmpParams.init(rng, in_dim, cell, proj)
    for tt in p.named().values():
        tt.data[...] = 0.0
    return p


def rand_lstmp(seed, in_dim, cell, proj):
    return cells.LstmpParams.init(np.random.default_rng(seed), in_dim, cell, proj)


def rand_hlstm(seed, in_dim, cell, proj, carry_from_cell=True):
    return cells.HlstmParams.init(np.random.default_rng(seed), in_dim, cell, proj,
                                  carry_from_cell=carry_from_cell)


class TestLstmpStep:
    def test_zero_weights_analytic(self):
        p = zero_lstmp(1, 1, 1)
        prev = cells.CellState(c=t([1.0]), r=t([0.0]), m=t([0.0]))
        out = cells.lstmp_step(p, t([0.0]), prev)
        # gates all sigmoid(0)=0.5, cell = 0.5*1 + 0.5*tanh(0) = 0.5
        assert abs(float(out.c.data[0]) - 0.5) < 1e-15
        assert abs(float(out.m.data[0]) - 0.5 * math.tanh(0.5)) < 1e-15
        assert float(out.r.data[0]) == 0.0

    def test_identity_projection_equals_plain_peephole_lstm(self):
        cell = 4
        p = rand_lstmp(1, 3, cell, cell)
        p.W_rm.data[...] = np.eye(cell)
        rng = np.random.default_rng(2)
        x = rng.uniform(-1, 1, 3)
        c_prev = rng.uniform(-1, 1, cell)
        h_prev = rng.uniform(-1, 1, cell)
        prev = cells.CellState(c=t(c_prev), r=t(h_prev), m=t(np.zeros(cell)))
        out = cells.lstmp_step(p, t(x), prev)
        ref_c, ref_h = plain_peephole_lstm_step(
            params_to_lists(p), x.tolist(), c_prev.tolist(), h_prev.tolist())
        assert np.abs(out.c.data - np.array(ref_c)).max() <= 1e-12
        assert np.abs(out.r.data - np.array(ref_h)).max() <= 1e-12

    def test_two_steps_match_scalar_oracle(self):
        p = rand_lstmp(3, 2, 3, 2)
        rng = np.random.default_rng(4)
        xs = rng.uniform(-1, 1, (2, 2))
        P = params_to_lists(p)
        st = cells.CellState.zeros(3, 2)
        ref_c, ref_r = [0.0] * 3, [0.0] * 2
        for x in xs:
            st = cells.lstmp_step(p, t(x), st)
            ref = lstmp_step_oracle(P, x.tolist(), ref_c, ref_r)
            ref_c, ref_r = ref["c"], ref["r"]
        assert np.abs(st.c.data - np.array(ref_c)).max() <= 1e-12
        assert np.abs(st.r.data - np.array(ref_r)).max() <= 1e-12

    def test_dimension_mismatch(self):
        p = rand_lstmp(5, 2, 3, 2)
        with pytest.raises(ShapeError):
            cells.lstmp_step(p, t([1.0, 2.0, 3.0]), cells.CellState.zeros(3, 2))


class TestHlstmOverLstm:
    def test_closed_carry_reduces_to_lstmp(self):
        p = rand_hlstm(6, 3, 4, 2)
        p.b_d.data[...] = -1e6
        rng = np.random.default_rng(7)
        x = t(rng.uniform(-1, 1, 3))
        prev = cells.CellState(c=t(rng.uniform(-1, 1, 4)), r=t(rng.uniform(-1, 1, 2)),
                               m=t(np.zeros(4)))
        below = t(rng.uniform(-1, 1, 4))
        hw = cells.hlstm_step_over_lstm(p, x, prev, below)
        plain = cells.lstmp_step(p.base, x, prev)
        assert np.abs(hw.c.data - plain.c.data).max() <= 1e-12
        assert np.abs(hw.r.data - plain.r.data).max() <= 1e-12

    def test_zero_weights_analytic(self):
        p = cells.HlstmParams.init(np.random.default_rng(0), 1, 1, 1)
        for tt in p.named().values():
            tt.data[...] = 0.0
        prev = cells.CellState(c=t([0.0]), r=t([0.0]), m=t([0.0]))
        out = cells.hlstm_step_over_lstm(p, t([0.0]), prev, t([2.0]))
        # d = 0.5 so cell = 0.5*0 + 0.5*tanh(0) + 0.5*2 = 1
        assert abs(float(out.c.data[0]) - 1.0) < 1e-15

    def test_matches_scalar_oracle(self):
        p = rand_hlstm(8, 2, 3, 2)
        rng = np.random.default_rng(9)
        x = rng.uniform(-1, 1, 2)
        c_prev = rng.uniform(-1, 1, 3)
        r_prev = rng.uniform(-1, 1, 2)
        below = rng.uniform(-1, 1, 3)
        prev = cells.CellState(c=t(c_prev), r=t(r_prev), m=t(np.zeros(3)))
        out = cells.hlstm_step_over_lstm(p, t(x), prev, t(below))
        ref = lstmp_step_oracle(params_to_lists(p), x.tolist(), c_prev.tolist(),
                                r_prev.tolist(), below_c=below.tolist())
        assert np.abs(out.c.data - np.array(ref["c"])).max() <= 1e-12
        assert np.abs(out.r.data - np.array(ref["r"])).max() <= 1e-12

    def test_missing_w_d2_rejected(self):
        p = rand_hlstm(10, 3, 3, 2, carry_from_cell=False)
        with pytest.raises(ConfigError):
            cells.hlstm_step_over_lstm(p, t(np.zeros(3)), cells.CellState.zeros(3, 2),
                                       t(np.zeros(3)))


class TestHlstmOverInput:
    def test_closed_carry_reduces_to_lstmp(self):
        p = rand_hlstm(11, 4, 4, 3, carry_from_cell=False)
        p.b_d.data[...] = -1e6
        rng = np.random.default_rng(12)
        x = t(rng.uniform(-1, 1, 4))
        prev = cells.CellState(c=t(rng.uniform(-1, 1, 4)), r=t(rng.uniform(-1, 1, 3)),
                               m=t(np.zeros(4)))
        hw = cells.hlstm_step_over_input(p, x, prev)
        plain = cells.lstmp_step(p.base, x, prev)
        assert np.abs(hw.c.data - plain.c.data).max() <= 1e-12

    def test_zero_weights_analytic(self):
        p = cells.HlstmParams.init(np.random.default_rng(0), 1, 1, 1, carry_from_cell=False)
        for tt in p.named().values():
            tt.data[...] = 0.0
        out = cells.hlstm_step_over_input(p, t([4.0]), cells.CellState.zeros(1, 1))
        # carry d=0.5 feeds the input: c = 0 + 0 + 0.5*4 = 2
        assert abs(float(out.c.data[0]) - 2.0) < 1e-15

    def test_matches_scalar_oracle(self):
        p = rand_hlstm(13, 3, 3, 2, carry_from_cell=False)
        rng = np.random.default_rng(14)
        x = rng.uniform(-1, 1, 3)
        c_prev = rng.uniform(-1, 1, 3)
        r_prev = rng.uniform(-1, 1, 2)
        prev = cells.CellState(c=t(c_prev), r=t(r_prev), m=t(np.zeros(3)))
        out = cells.hlstm_step_over_input(p, t(x), prev)
        ref = lstmp_step_oracle(params_to_lists(p), x.tolist(), c_prev.tolist(),
                                r_prev.tolist(), carry_x=True)
        assert np.abs(out.c.data - np.array(ref["c"])).max() <= 1e-12

    def test_input_dim_must_equal_cell_dim(self):
        p = rand_hlstm(15, 3, 4, 2)
        p.w_d2 = None
        with pytest.raises(ConfigError, match="in_dim == cell_dim"):
            cells.hlstm_step_over_input(p, t(np.zeros(3)), cells.CellState.zeros(4, 2))

    def test_w_d2_present_rejected(self):
        p = rand_hlstm(16, 4, 4, 2)
        with pytest.raises(ConfigError):
            cells.hlstm_step_over_input(p, t(np.zeros(4)), cells.CellState.zeros(4, 2))


class TestRunLayer:
    def test_single_frame_equals_one_step(self, each_backend):
        p = rand_lstmp(20, 3, 4, 2)
        x = t(np.random.default_rng(21).uniform(-1, 1, (1, 3)))
        r_seq, c_seq = cells.run_layer(p, x, "forward")
        step = cells.lstmp_step(p, Tensor(x.data[0]), cells.CellState.zeros(4, 2))
        assert np.abs(r_seq.data[0] - step.r.data).max() <= 1e-12
        assert np.abs(c_seq.data[0] - step.c.data).max() <= 1e-12

    def test_backward_is_time_reversed_forward(self, each_backend):
        p = rand_lstmp(22, 3, 4, 2)
        x = np.random.default_rng(23).uniform(-1, 1, (5, 3))
        r_fwd, c_fwd = cells.run_layer(p, t(x[::-1].copy()), "forward")
        r_bwd, c_bwd = cells.run_layer(p, t(x), "backward")
        assert np.abs(r_bwd.data - r_fwd.data[::-1]).max() <= 1e-12
        assert np.abs(c_bwd.data - c_fwd.data[::-1]).max() <= 1e-12

    @pytest.mark.parametrize("mode", ["plain", "over_lstm", "over_input"])
    def test_matches_step_composition(self, each_backend, mode):
        rng = np.random.default_rng(24)
        if mode == "plain":
            p = rand_lstmp(25, 3, 4, 2)
        elif mode == "over_lstm":
            p = rand_hlstm(25, 3, 4, 2)
        else:
            p = rand_hlstm(25, 4, 4, 2, carry_from_cell=False)
        L, in_dim = 3, p.in_dim
        x = rng.uniform(-1, 1, (L, in_dim))
        below = rng.uniform(-1, 1, (L, 4)) if mode == "over_lstm" else None
        r_seq, c_seq = cells.run_layer(
            p, t(x), "forward", t(below) if below is not None else None)
        st = cells.CellState.zeros(4, 2)
        for i in range(L):
            if mode == "plain":
                st = cells.lstmp_step(p, t(x[i]), st)
            elif mode == "over_lstm":
                st = cells.hlstm_step_over_lstm(p, t(x[i]), st, t(below[i]))
            else:
                st = cells.hlstm_step_over_input(p, t(x[i]), st)
            assert np.abs(r_seq.data[i] - st.r.data).max() <= 1e-12
            assert np.abs(c_seq.data[i] - st.c.data).max() <= 1e-12

    def test_below_c_length_mismatch(self):
        p = rand_hlstm(26, 3, 4, 2)
        with pytest.raises(ShapeError):
            cells.run_layer(p, t(np.zeros((4, 3))), "forward", t(np.zeros((3, 4))))

    def test_below_c_required_iff_cell_carry(self):
        p = rand_hlstm(27, 3, 4, 2)
        with pytest.raises(ConfigError):
            cells.run_layer(p, t(np.zeros((4, 3))), "forward")
        plain = rand_lstmp(28, 3, 4, 2)
        with pytest.raises(ConfigError):
            cells.run_layer(plain, t(np.zeros((4, 3))), "forward", t(np.zeros((4, 4))))

    def test_deterministic_across_runs(self, each_backend):
        p = rand_hlstm(29, 3, 4, 2)
        rng = np.random.default_rng(30)
        x = rng.uniform(-1, 1, (6, 3))
        below = rng.uniform(-1, 1, (6, 4))
        a1 = cells.run_layer(p, t(x), "forward", t(below))
        a2 = cells.run_layer(p, t(x), "forward", t(below))
        assert np.array_equal(a1[0].data, a2[0].data)
        assert np.array_equal(a1[1].data, a2[1].data)


def test_gate_ranges(each_backend):
    p = rand_hlstm(31, 4, 4, 3)
    rng = np.random.default_rng(32)
    x = np.ascontiguousarray(rng.uniform(-2, 2, (8, 4)))
    below = np.ascontiguousarray(rng.uniform(-2, 2, (8, 4)))
    base = p.base
    I, F, G, O, D, C, TC, R = kernels.layer_forward(
        x, below, 1,
        base.W_xi.data, base.W_xf.data, base.W_xc.data, base.W_xo.data,
        base.W_mi.data, base.W_mf.data, base.W_mc.data, base.W_mo.data,
        base.w_ci.data, base.w_cf.data, base.w_co.data,
        base.b_i.data, base.b_f.data, base.b_c.data, base.b_o.data,
        base.W_rm.data,
        p.W_xd.data, p.w_d1.data, p.w_d2.data, p.b_d.data)
    for gate in (I, F, O, D):
        assert (gate > 0).all() and (gate < 1).all()
    m = O * TC
    assert (np.abs(m) < np.abs(O)).all()


def test_carry_forced_closed_matches_lstmp_over_sequences(each_backend):
    # both highway variants collapse onto the plain cell when d == 0
    for carry_from_cell in (True, False):
        in_dim = 4
        p = rand_hlstm(33, in_dim, 4, 2, carry_from_cell=carry_from_cell)
        p.b_d.data[...] = -1e6
        rng = np.random.default_rng(34)
        x = t(rng.uniform(-1, 1, (5, in_dim)))
        below = t(rng.uniform(-1, 1, (5, 4))) if carry_from_cell else None
        r_h, c_h = cells.run_layer(p, x, "forward", below)
        r_p, c_p = cells.run_layer(p.base, x, "forward")
        assert np.abs(r_h.data - r_p.data).max() <= 1e-12
        assert np.abs(c_h.data - c_p.data).max() <= 1e-12


class TestBidirConcat:
    def test_simple(self):
        out = cells.bidir_concat(t([[1.0]]), t([[2.0]]))
        assert np.array_equal(out.data, [[1.0, 2.0]])

    def test_zero_backward_half(self):
        out = cells.bidir_concat(t([[1.0, 2.0]]), t([[0.0, 0.0]]))
        assert np.array_equal(out.data[:, 2:], [[0.0, 0.0]])

    def test_halves_recover_inputs(self):
        rng = np.random.default_rng(35)
        f, b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        out = cells.bidir_concat(t(f), t(b))
        assert out.data.shape == (4, 6)
        assert np.array_equal(out.data[:, :3], f)
        assert np.array_equal(out.data[:, 3:], b)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            cells.bidir_concat(t(np.zeros((3, 2))), t(np.zeros((4, 2))))


def _step_loss(step_fn):
    def f():
        out = step_fn()
        return add(vsum(out.r), add(vsum(out.c), vsum(out.m)))
    return f


def boost(p, seed, scale=0.7):
    """Re-draw all weights at a healthy scale so no gradient entry sits in
    the finite-difference noise floor."""
    rng = np.random.default_rng(seed)
    for tt in p.named().values():
        tt.data[...] = rng.uniform(-scale, scale, tt.data.shape)
    return p


class TestStepGradients:
    def test_lstmp_step(self):
        p = rand_lstmp(40, 3, 4, 2)
        rng = np.random.default_rng(41)
        x = t(rng.uniform(-1, 1, 3))
        prev = cells.CellState(c=t(rng.uniform(-1, 1, 4)), r=t(rng.uniform(-1, 1, 2)),
                               m=t(np.zeros(4)))
        params = list(p.named().values()) + [x, prev.c, prev.r]
        err = grad_check(_step_loss(lambda: cells.lstmp_step(p, x, prev)), params)
        assert err <= 1e-6

    def test_hlstm_over_lstm_step(self):
        p = rand_hlstm(42, 3, 4, 2)
        rng = np.random.default_rng(43)
        x = t(rng.uniform(-1, 1, 3))
        below = t(rng.uniform(-1, 1, 4))
        prev = cells.CellState(c=t(rng.uniform(-1, 1, 4)), r=t(rng.uniform(-1, 1, 2)),
                               m=t(np.zeros(4)))
        params = list(p.named().values()) + [x, below, prev.c, prev.r]
        err = grad_check(
            _step_loss(lambda: cells.hlstm_step_over_lstm(p, x, prev, below)), params)
        assert err <= 1e-6

    def test_hlstm_over_input_step(self):
        p = rand_hlstm(44, 4, 4, 2, carry_from_cell=False)
        rng = np.random.default_rng(45)
        x = t(rng.uniform(-1, 1, 4))
        prev = cells.CellState(c=t(rng.uniform(-1, 1, 4)), r=t(rng.uniform(-1, 1, 2)),
                               m=t(np.zeros(4)))
        params = list(p.named().values()) + [x, prev.c, prev.r]
        err = grad_check(
            _step_loss(lambda: cells.hlstm_step_over_input(p, x, prev)), params)
        assert err <= 1e-6

    @pytest.mark.parametrize("mode", ["plain", "over_lstm", "over_input"])
    def test_run_layer_both_directions(self, each_backend, mode):
        rng = np.random.default_rng(46)
        if mode == "plain":
            p = boost(rand_lstmp(47, 3, 4, 2), 48)
            below = None
        elif mode == "over_lstm":
            p = boost(rand_hlstm(47, 3, 4, 2), 48)
            below = t(rng.uniform(-1, 1, (4, 4)))
        else:
            p = boost(rand_hlstm(47, 4, 4, 2, carry_from_cell=False), 48)
            below = None
        x = t(rng.uniform(-1, 1, (4, p.in_dim)))
        wr = t(rng.uniform(-1, 1, (4, 2)))
        wc = t(rng.uniform(-1, 1, (4, 4)))
        for direction in ("forward", "backward"):
            def f():
                r_seq, c_seq = cells.run_layer(p, x, direction, below)
                return add(vsum(mul(r_seq, wr)), vsum(mul(c_seq, wc)))
            params = list(p.named().values()) + [x] + ([below] if below is not None else [])
            err = grad_check(f, params)
            assert err <= 1e-6, f"{mode}/{direction}: {err}"


def test_init_biases():
    p = cells.HlstmParams.init(np.random.default_rng(50), 4, 4, 2)
    assert np.array_equal(p.base.b_f.data, np.ones(4))
    assert np.array_equal(p.b_d.data, np.full(4, 2.0))
    assert np.array_equal(p.base.b_i.data, np.zeros(4))
    assert (np.abs(p.base.W_xi.data) <= 0.05).all()
