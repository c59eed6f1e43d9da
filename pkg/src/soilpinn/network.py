"""Scalar field network: psi_hat(x, y, z, t).

A small fully connected tanh network maps a space-time point to a pressure
head. Inputs are affinely normalized from the domain box to [-1, 1]^4
inside the forward pass; the raw output is de-scaled by an affine map
(center/scale) calibrated to the measured heads, so the network itself
always works on O(1) quantities.

``forward_jet`` propagates first and pure second directional derivatives
through the layers alongside the values (a forward-mode jet per input
coordinate, all four directions in one vectorized pass). Written in the
autodiff ops, the propagation runs on plain arrays or on the tape; on the
tape, reverse accumulation then yields parameter gradients of losses that
contain those input derivatives.

Parameter file format (``save_net``/``load_net``): the ASCII magic line
``SOILPINN-NET-1``, one JSON header line (architecture, domain box, output
calibration, seed), then raw little-endian float64 payload: for each layer
in order, W row-major with shape (fan_in, fan_out), then b with shape
(fan_out,).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Jet, Var, narrow, row, tanh

__all__ = ["FieldNet", "init_net", "forward", "forward_jet", "eval_jet",
           "param_arrays", "with_params", "save_net", "load_net",
           "output_bound"]

_MAGIC = b"SOILPINN-NET-1\n"
N_INPUTS = 4


@dataclass
class FieldNet:
    """Parameters and calibration of the field network."""

    weights: list          # W_l, shape (fan_in, fan_out)
    biases: list           # b_l, shape (fan_out,)
    in_lo: np.ndarray      # (4,) domain box lower corner (x, y, z, t)
    in_hi: np.ndarray      # (4,) domain box upper corner
    out_center: float = 0.0
    out_scale: float = 1.0
    seed: int = 0

    @property
    def hidden_layers(self) -> int:
        return len(self.weights) - 1

    @property
    def hidden_width(self) -> int:
        return self.weights[0].shape[1]


def init_net(in_lo, in_hi, hidden_layers=5, hidden_width=10, seed=0,
             out_center=0.0, out_scale=1.0) -> FieldNet:
    """Glorot-uniform weights, zero biases, fully determined by ``seed``.

    Each W_l is drawn from U(-lim, lim) with lim = sqrt(6/(fan_in+fan_out)),
    so the sample variance is about 2/(fan_in+fan_out).
    """
    in_lo = np.asarray(in_lo, dtype=np.float64)
    in_hi = np.asarray(in_hi, dtype=np.float64)
    if in_lo.shape != (N_INPUTS,) or in_hi.shape != (N_INPUTS,):
        raise ValueError("domain box must have four coordinates")
    if not np.all(in_hi > in_lo):
        raise ValueError("domain box must have positive extent on every axis")
    if hidden_layers < 1 or hidden_width < 1:
        raise ValueError("need at least one hidden layer and one unit")
    if not out_scale > 0.0:
        raise ValueError("out_scale must be positive")

    rng = np.random.default_rng(seed)
    sizes = [N_INPUTS] + [hidden_width] * hidden_layers + [1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return FieldNet(weights, biases, in_lo, in_hi,
                    float(out_center), float(out_scale), int(seed))


def param_arrays(net: FieldNet) -> list:
    """Trainable tensors in serialization order: W0, b0, W1, b1, ..."""
    out = []
    for w, b in zip(net.weights, net.biases):
        out.append(w)
        out.append(b)
    return out


def set_param_arrays(net: FieldNet, arrays) -> None:
    """Inverse of ``param_arrays``; writes values back into the net."""
    if len(arrays) != 2 * len(net.weights):
        raise ValueError("parameter list length does not match the network")
    for i in range(len(net.weights)):
        net.weights[i] = np.asarray(arrays[2 * i], dtype=np.float64)
        net.biases[i] = np.asarray(arrays[2 * i + 1], dtype=np.float64)


def with_params(arrays):
    """Split a flat parameter list back into (weights, biases) lists."""
    return list(arrays[0::2]), list(arrays[1::2])


def _normalize(net, pts):
    pts = np.asarray(pts, dtype=np.float64)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    if pts.shape[1] != N_INPUTS:
        raise ValueError(f"points must be (N, 4), got {pts.shape}")
    span = net.in_hi - net.in_lo
    xn = 2.0 * (pts - net.in_lo) / span - 1.0
    chain = 2.0 / span  # d(normalized)/d(physical) per coordinate
    return xn, chain, single


def forward(net: FieldNet, pts, weights=None, biases=None):
    """Field values at ``pts`` ((N, 4) or a single (4,) point).

    Plain arrays by default; pass tape Vars via ``weights``/``biases`` to
    record the evaluation. Plain calls return shape (N,) (or a float for a
    single point); tape calls keep the (N, 1) column used internally.
    """
    ws = net.weights if weights is None else weights
    bs = net.biases if biases is None else biases
    xn, _, single = _normalize(net, pts)
    a = xn
    for w, b in zip(ws[:-1], bs[:-1]):
        a = tanh(a @ w + b)
    raw = a @ ws[-1] + bs[-1]
    out = net.out_center + net.out_scale * raw
    if type(out) is Var:
        return out
    return float(out[0, 0]) if single else out[:, 0]


def forward_jet(net: FieldNet, pts, weights=None, biases=None) -> Jet:
    """Values plus first and pure second input derivatives at ``pts``.

    The four first-derivative chains ride in one stacked array of shape
    (4, N, width) and the three spatial second-derivative chains in a
    (3, N, width) stack, so each layer costs a handful of array ops
    regardless of direction count. Per direction d the update through a
    tanh layer is

        z1 = d1_d @ W,  z2 = d2_d @ W
        d1_d <- s * z1
        d2_d <- s * z2 - 2 t s * z1**2        (s = 1 - t**2, t = tanh(z))

    Second derivatives are tracked for the three spatial coordinates only;
    time enters the governing equation through psi_t alone.
    """
    ws = net.weights if weights is None else weights
    bs = net.biases if biases is None else biases
    xn, chain, single = _normalize(net, pts)

    a = xn
    d1 = np.diag(chain)[:, None, :]  # (4, 1, 4) seed tangents
    d2 = None                        # zero until the first nonlinearity
    for w, b in zip(ws[:-1], bs[:-1]):
        z = a @ w + b
        t = tanh(z)
        s = 1.0 - t ** 2.0
        ts2 = -2.0 * (t * s)
        z1 = d1 @ w
        curv = ts2 * narrow(z1, 3) ** 2.0
        d2 = curv if d2 is None else s * (d2 @ w) + curv
        d1 = s * z1
        a = t

    w_out, b_out = ws[-1], bs[-1]
    raw = a @ w_out + b_out
    value = net.out_center + net.out_scale * raw
    d1 = net.out_scale * (d1 @ w_out)  # (4, N, 1)
    d2 = net.out_scale * (d2 @ w_out)  # (3, N, 1)
    firsts = tuple(row(d1, i) for i in range(N_INPUTS))
    seconds = tuple(row(d2, i) for i in range(3))

    if type(value) is Var:
        return Jet(value, firsts, seconds)
    if single:
        return Jet(float(value[0, 0]),
                   tuple(float(g[0, 0]) for g in firsts),
                   tuple(float(g[0, 0]) for g in seconds))
    return Jet(value[:, 0], tuple(g[:, 0] for g in firsts),
               tuple(g[:, 0] for g in seconds))


def eval_jet(net: FieldNet, point) -> Jet:
    """Jet at one (x, y, z, t) point, as plain floats."""
    return forward_jet(net, np.asarray(point, dtype=np.float64))


def output_bound(net: FieldNet) -> float:
    """A hard ceiling on |forward| over all inputs: hidden activations lie
    in (-1, 1), so |raw| <= sum|W_out| + |b_out|."""
    raw = float(np.sum(np.abs(net.weights[-1])) + np.sum(np.abs(net.biases[-1])))
    return abs(net.out_center) + net.out_scale * raw


def save_net(net: FieldNet, path) -> None:
    header = {
        "n_inputs": N_INPUTS,
        "hidden_layers": net.hidden_layers,
        "hidden_width": net.hidden_width,
        "in_lo": [float(v) for v in net.in_lo],
        "in_hi": [float(v) for v in net.in_hi],
        "out_center": net.out_center,
        "out_scale": net.out_scale,
        "seed": net.seed,
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_net(path) -> FieldNet:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a network parameter file")
        header = json.loads(fh.readline().decode())
        payload = fh.read()

    width = int(header["hidden_width"])
    layers = int(header["hidden_layers"])
    sizes = [int(header["n_inputs"])] + [width] * layers + [1]
    expected = sum(fi * fo + fo for fi, fo in zip(sizes[:-1], sizes[1:]))
    flat = np.frombuffer(payload, dtype="<f8")
    if flat.size != expected:
        raise ValueError(
            f"{path}: payload holds {flat.size} values, header implies {expected}")

    weights, biases, pos = [], [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[pos:pos + fan_in * fan_out]
                       .reshape(fan_in, fan_out).copy())
        pos += fan_in * fan_out
        biases.append(flat[pos:pos + fan_out].copy())
        pos += fan_out
    return FieldNet(weights, biases,
                    np.asarray(header["in_lo"], dtype=np.float64),
                    np.asarray(header["in_hi"], dtype=np.float64),
                    float(header["out_center"]), float(header["out_scale"]),
                    int(header["seed"]))
