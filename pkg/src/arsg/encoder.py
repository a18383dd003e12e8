"""Multichannel frame concatenation and the stacked bidirectional encoder.

Layer 1 is a plain bidirectional LSTMP over the concatenated channel
frames (carry-from-input is available as an opt-in, since it constrains
the input dimension to equal the cell dimension).  Layers 2..n are
bidirectional highway layers whose carry gates read the same-direction
cell sequence of the layer below.  No temporal subsampling anywhere: the
output has exactly one vector per input frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cells import HlstmParams, LstmpParams, bidir_concat, run_layer
from .data import MultichannelUtterance
from .errors import ConfigError, DataError
from .tape import Tensor, add_rowvec, linear_rows, sigmoid


def concat_channels(u: MultichannelUtterance) -> Tensor:
    """Frame-wise concatenation of all channels, channel order preserved."""
    shapes = {ch.shape for ch in u.channels}
    if len(shapes) != 1:
        raise DataError(f"utterance {u.id}: channel lengths differ: {sorted(shapes)}")
    return Tensor(np.concatenate(u.channels, axis=1))


@dataclass
class BidirLayer:
    fwd: LstmpParams | HlstmParams
    bwd: LstmpParams | HlstmParams


class Encoder:
    """Stack of bidirectional layers, with an optional sigmoid readout on top."""

    def __init__(self, layers: list[BidirLayer], readout: tuple[Tensor, Tensor] | None = None):
        if not layers:
            raise ConfigError("encoder needs at least one layer")
        cells = {l.fwd.cell_dim for l in layers} | {l.bwd.cell_dim for l in layers}
        if len(cells) != 1:
            raise ConfigError(f"all encoder layers must share one cell dimension, got {cells}")
        for i, layer in enumerate(layers[1:], start=2):
            expect = 2 * layers[0].fwd.proj_dim
            if layer.fwd.in_dim != expect or layer.bwd.in_dim != expect:
                raise ConfigError(
                    f"layer {i} input dim {layer.fwd.in_dim} does not chain from the "
                    f"bidirectional width {expect} below"
                )
        self.layers = layers
        self.readout = readout

    @property
    def output_dim(self) -> int:
        if self.readout is not None:
            return self.readout[0].data.shape[0]
        return 2 * self.layers[-1].fwd.proj_dim

    @classmethod
    def build(cls, rng: np.random.Generator, input_dim: int, num_layers: int,
              cell: int, proj: int, first_layer_carry: bool = False,
              readout_dim: int | None = None) -> "Encoder":
        if num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        layers = []
        for i in range(num_layers):
            in_dim = input_dim if i == 0 else 2 * proj
            if i == 0:
                if first_layer_carry:
                    mk = lambda: HlstmParams.init(rng, in_dim, cell, proj, carry_from_cell=False)
                else:
                    mk = lambda: LstmpParams.init(rng, in_dim, cell, proj)
            else:
                mk = lambda: HlstmParams.init(rng, in_dim, cell, proj, carry_from_cell=True)
            layers.append(BidirLayer(fwd=mk(), bwd=mk()))
        readout = None
        if readout_dim is not None:
            readout = (Tensor(rng.uniform(-0.05, 0.05, (readout_dim, 2 * proj))),
                       Tensor(np.zeros(readout_dim)))
        return cls(layers, readout)

    def named(self, prefix: str = "enc.") -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.fwd.named(f"{prefix}l{i}.fwd."))
            out.update(layer.bwd.named(f"{prefix}l{i}.bwd."))
        if self.readout is not None:
            out[prefix + "W_yr"], out[prefix + "b_y"] = self.readout
        return out

    def encode(self, u: MultichannelUtterance) -> Tensor:
        """Encoded sequence h, one row per input frame."""
        x = concat_channels(u)
        below_f = below_b = None
        for layer in self.layers:
            r_f, c_f = run_layer(layer.fwd, x, "forward", below_f)
            r_b, c_b = run_layer(layer.bwd, x, "backward", below_b)
            x = bidir_concat(r_f, r_b)
            # carry gates of the next layer read same-direction cells only
            below_f, below_b = c_f, c_b
        if self.readout is not None:
            W, b = self.readout
            x = sigmoid(add_rowvec(linear_rows(x, W), b))
        return x


def encode(stack: Encoder, u: MultichannelUtterance) -> Tensor:
    return stack.encode(u)
