import numpy as np
import pytest

from arsg import cells, encoder
from arsg.data import MultichannelUtterance
from arsg.errors import ConfigError, DataError
from arsg.tape import Tensor, grad_check, mul, vsum


def utt(rng, n_channels=2, L=4, D=3, uid="u0"):
    return MultichannelUtterance(
        id=uid,
        channels=[rng.uniform(-1, 1, (L, D)) for _ in range(n_channels)],
        transcript="",
    )


class TestConcatChannels:
    def test_two_channels(self):
        u = MultichannelUtterance(
            id="u", channels=[np.array([[1.0, 2.0, 3.0]]), np.array([[4.0, 5.0, 6.0]])],
            transcript="")
        out = encoder.concat_channels(u)
        assert np.array_equal(out.data, [[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]])

    def test_single_channel_identity(self):
        rng = np.random.default_rng(0)
        u = utt(rng, n_channels=1)
        out = encoder.concat_channels(u)
        assert np.array_equal(out.data, u.channels[0])

    def test_slices_recover_channels(self):
        rng = np.random.default_rng(1)
        u = utt(rng, n_channels=3, L=2, D=5)
        out = encoder.concat_channels(u)
        assert out.data.shape == (2, 15)
        for i in range(3):
            assert np.array_equal(out.data[:, 5 * i : 5 * (i + 1)], u.channels[i])

    def test_unequal_lengths_name_utterance(self):
        u = MultichannelUtterance.__new__(MultichannelUtterance)
        u.id, u.transcript = "u42", ""
        u.channels = [np.zeros((3, 2)), np.zeros((4, 2))]
        with pytest.raises(DataError, match="u42"):
            encoder.concat_channels(u)


def build_encoder(seed, input_dim=6, num_layers=2, cell=4, proj=2, **kw):
    return encoder.Encoder.build(np.random.default_rng(seed), input_dim, num_layers,
                                 cell, proj, **kw)


class TestEncode:
    def test_one_layer_equals_direct_bidir_run(self, each_backend):
        enc = build_encoder(2, num_layers=1)
        rng = np.random.default_rng(3)
        u = utt(rng)
        h = enc.encode(u)
        x = encoder.concat_channels(u)
        layer = enc.layers[0]
        r_f, _ = cells.run_layer(layer.fwd, x, "forward")
        r_b, _ = cells.run_layer(layer.bwd, x, "backward")
        ref = cells.bidir_concat(r_f, r_b)
        assert np.array_equal(h.data, ref.data)

    def test_closed_carries_equal_plain_lstmp_stack(self, each_backend):
        enc = build_encoder(4, num_layers=3)
        for layer in enc.layers[1:]:
            layer.fwd.b_d.data[...] = -1e6
            layer.bwd.b_d.data[...] = -1e6
        rng = np.random.default_rng(5)
        u = utt(rng, L=5)
        h = enc.encode(u)

        x = encoder.concat_channels(u)
        for layer in enc.layers:
            fwd = layer.fwd.base if isinstance(layer.fwd, cells.HlstmParams) else layer.fwd
            bwd = layer.bwd.base if isinstance(layer.bwd, cells.HlstmParams) else layer.bwd
            r_f, _ = cells.run_layer(fwd, x, "forward")
            r_b, _ = cells.run_layer(bwd, x, "backward")
            x = cells.bidir_concat(r_f, r_b)
        assert np.abs(h.data - x.data).max() <= 1e-12

    def test_two_layer_matches_independent_driver(self, each_backend):
        enc = build_encoder(6, num_layers=2)
        rng = np.random.default_rng(7)
        u = utt(rng, L=3)
        h = enc.encode(u)

        x = encoder.concat_channels(u)
        l0, l1 = enc.layers
        r0f, c0f = cells.run_layer(l0.fwd, x, "forward")
        r0b, c0b = cells.run_layer(l0.bwd, x, "backward")
        mid = cells.bidir_concat(r0f, r0b)
        r1f, _ = cells.run_layer(l1.fwd, mid, "forward", c0f)
        r1b, _ = cells.run_layer(l1.bwd, mid, "backward", c0b)
        ref = cells.bidir_concat(r1f, r1b)
        assert np.array_equal(h.data, ref.data)

    def test_output_length_matches_input_frames(self, each_backend):
        enc = build_encoder(8, num_layers=3)
        rng = np.random.default_rng(9)
        for L in (1, 2, 9):
            h = enc.encode(utt(rng, L=L))
            assert h.data.shape == (L, enc.output_dim)

    def test_channel_permutation_equivariance(self, each_backend):
        # swapping channels and the matching first-layer input-weight column
        # blocks leaves the encoding unchanged
        D = 3
        enc = build_encoder(10, input_dim=2 * D, num_layers=2)
        rng = np.random.default_rng(11)
        u = utt(rng, n_channels=2, D=D)
        h1 = enc.encode(u).data.copy()

        perm = np.concatenate([np.arange(D, 2 * D), np.arange(0, D)])
        for layer_dir in (enc.layers[0].fwd, enc.layers[0].bwd):
            for name in ("W_xi", "W_xf", "W_xc", "W_xo"):
                t = getattr(layer_dir, name)
                t.data[...] = t.data[:, perm]
        u_sw = MultichannelUtterance(id="u0", channels=[u.channels[1], u.channels[0]],
                                     transcript="")
        h2 = enc.encode(u_sw).data
        assert np.abs(h1 - h2).max() <= 1e-12

    def test_dim_chain_checked_at_construction(self):
        rng = np.random.default_rng(12)
        l0 = encoder.BidirLayer(cells.LstmpParams.init(rng, 6, 4, 2),
                                cells.LstmpParams.init(rng, 6, 4, 2))
        l1 = encoder.BidirLayer(cells.HlstmParams.init(rng, 5, 4, 2),
                                cells.HlstmParams.init(rng, 5, 4, 2))
        with pytest.raises(ConfigError):
            encoder.Encoder([l0, l1])

    def test_readout_bounds_output(self, each_backend):
        enc = build_encoder(13, num_layers=1, readout_dim=3)
        rng = np.random.default_rng(14)
        h = enc.encode(utt(rng, L=4))
        assert h.data.shape == (4, 3)
        assert ((h.data > 0) & (h.data < 1)).all()

    def test_gradient_through_stack(self, each_backend):
        enc = build_encoder(15, num_layers=2)
        rng = np.random.default_rng(16)
        for t in enc.named().values():
            t.data[...] = rng.uniform(-0.5, 0.5, t.data.shape)
        u = utt(rng, L=3)
        wts = Tensor(rng.uniform(-1, 1, (3, enc.output_dim)))

        def f():
            return vsum(mul(enc.encode(u), wts))

        err = grad_check(f, list(enc.named().values()))
        assert err <= 1e-4
