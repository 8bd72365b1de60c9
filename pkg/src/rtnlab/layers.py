"""Dense layers and the LSTM cell used by every model variant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndtensor as nd
from .errors import ArgumentError, DimensionError

GATES = ("i", "f", "o", "g")


@dataclass
class DenseParams:
    weight: nd.Tensor  # (out, in)
    bias: nd.Tensor  # (out,)

    def __post_init__(self):
        self.weight = nd.as_tensor(self.weight)
        self.bias = nd.as_tensor(self.bias)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(f"dense weight {self.weight.shape} and bias {self.bias.shape} disagree")

    @property
    def in_size(self):
        return self.weight.shape[1]

    @property
    def out_size(self):
        return self.weight.shape[0]

    @classmethod
    def init(cls, in_size, out_size, rng):
        s = 1.0 / np.sqrt(in_size)
        return cls(rng.uniform(-s, s, size=(out_size, in_size)), np.zeros(out_size))


@dataclass
class LstmParams:
    """Weights of a forget-gate LSTM without peepholes.

    ``W[k]`` is (hidden, in), ``U[k]`` is (hidden, hidden) and ``b[k]`` is
    (hidden,) for each gate k in input, forget, output, candidate order.
    """

    W: dict
    U: dict
    b: dict

    def __post_init__(self):
        for d in (self.W, self.U, self.b):
            for k in GATES:
                d[k] = nd.as_tensor(d[k])
        h = self.b["i"].shape[0]
        n_in = self.W["i"].shape[1]
        for k in GATES:
            if (self.W[k].shape != (h, n_in) or self.U[k].shape != (h, h)
                    or self.b[k].shape != (h,)):
                raise DimensionError(f"LSTM gate {k!r} blocks disagree on hidden size {h}")

    @property
    def hidden(self):
        return self.b["i"].shape[0]

    @property
    def in_size(self):
        return self.W["i"].shape[1]

    @classmethod
    def init(cls, in_size, hidden, rng, forget_bias=1.0):
        sw = 1.0 / np.sqrt(in_size)
        su = 1.0 / np.sqrt(hidden)
        W = {k: rng.uniform(-sw, sw, size=(hidden, in_size)) for k in GATES}
        U = {k: rng.uniform(-su, su, size=(hidden, hidden)) for k in GATES}
        b = {k: np.full(hidden, forget_bias if k == "f" else 0.0) for k in GATES}
        return cls(W, U, b)

    @classmethod
    def zeros(cls, in_size, hidden):
        return cls({k: np.zeros((hidden, in_size)) for k in GATES},
                   {k: np.zeros((hidden, hidden)) for k in GATES},
                   {k: np.zeros(hidden) for k in GATES})

    def named(self):
        out = {}
        for k in GATES:
            out[f"W_{k}"] = self.W[k]
            out[f"U_{k}"] = self.U[k]
            out[f"b_{k}"] = self.b[k]
        return out


def dense_forward(x, p: DenseParams, activation: str = "identity") -> nd.Tensor:
    """activation(W x + b); x may be a vector or a (batch, in) matrix."""
    x = nd.as_tensor(x)
    if x.shape[-1] != p.in_size:
        raise DimensionError(f"dense input size {x.shape[-1]} != layer input size {p.in_size}")
    return nd.elementwise(nd.linear(x, p.weight, p.bias), activation)


def lstm_cell(x, h_prev, c_prev, p: LstmParams):
    """One LSTM step; returns (h, c).  Inputs may carry a leading batch axis."""
    x, h_prev, c_prev = nd.as_tensor(x), nd.as_tensor(h_prev), nd.as_tensor(c_prev)
    if x.shape[-1] != p.in_size:
        raise DimensionError(f"LSTM input size {x.shape[-1]} != {p.in_size}")
    if h_prev.shape[-1] != p.hidden or c_prev.shape != h_prev.shape:
        raise DimensionError(f"LSTM state shapes {h_prev.shape}/{c_prev.shape} != hidden {p.hidden}")

    def pre(k):
        return nd.linear(x, p.W[k], p.b[k]) + nd.linear(h_prev, p.U[k])

    i = nd.sigmoid(pre("i"))
    f = nd.sigmoid(pre("f"))
    o = nd.sigmoid(pre("o"))
    g = nd.tanh(pre("g"))
    c = f * c_prev + i * g
    h = o * nd.tanh(c)
    return h, c


def lstm_sequence(inputs, p: LstmParams, h0=None, c0=None):
    """Run the cell over ``inputs`` in order and return every hidden state."""
    if not inputs:
        raise ArgumentError("lstm_sequence needs at least one input")
    sizes = {nd.as_tensor(x).shape for x in inputs}
    if len(sizes) != 1:
        raise DimensionError(f"non-uniform input sizes {sorted(sizes)}")
    lead = next(iter(sizes))[:-1]
    h = nd.as_tensor(np.zeros(lead + (p.hidden,)) if h0 is None else h0)
    c = nd.as_tensor(np.zeros(lead + (p.hidden,)) if c0 is None else c0)
    hs = []
    for x in inputs:
        h, c = lstm_cell(x, h, c, p)
        hs.append(h)
    return hs
