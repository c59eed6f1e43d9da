"""Governing-equation residual and the training losses.

The flow model is the mixed form of the unsaturated flow equation,

    d(theta(psi))/dt = div( K(psi) * grad(psi + z) ),

with z the elevation coordinate (gravity drives water toward decreasing z).
For a scalar field psi(x, y, z, t) the residual is evaluated in the
expanded chain-rule form, term for term:

    r = dtheta/dpsi * psi_t
        - ( dK/dpsi * psi_x^2 + K * psi_xx
          + dK/dpsi * psi_y^2 + K * psi_yy
          + dK/dpsi * psi_z * (psi_z + 1) + K * psi_zz )

A field that satisfies the equation (hydrostatic psi = -z, any constant in
space and time) has r identically zero.

Losses: ``data_loss`` is the mean squared misfit against measured heads,
``rre_loss`` the mean squared residual over collocation points, and the
training objective is their (optionally weighted) sum; by default the two
terms are simply added. Means use the sorted pairwise reduction from
``autodiff``, so both loss values are invariant under permutation of their
point sets.

Everything here is written in the generic autodiff ops: called with plain
arrays it just computes numbers, called with tape Vars it records the
evaluation so the whole objective can be differentiated with respect to
the network parameters (including through K, dK/dpsi, dtheta/dpsi and the
second input derivatives).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .autodiff import Jet, Var, as_value, backward, pairwise_mean
from .constitutive import VanGenuchten, dk_dpsi, dtheta_dpsi, k

__all__ = ["FieldEvaluator", "NetField", "LossBreakdown", "residual",
           "data_loss", "rre_loss", "total_loss", "loss_and_grads"]


class FieldEvaluator(Protocol):
    """Anything that can report values and jets at a batch of points."""

    def values(self, pts): ...

    def jet(self, pts) -> Jet: ...


class NetField:
    """Adapts a ``FieldNet`` to the field interface; pass tape Vars as
    ``weights``/``biases`` to make the evaluations differentiable."""

    def __init__(self, net, weights=None, biases=None):
        from . import network
        self._net = net
        self._weights = weights
        self._biases = biases
        self._forward = network.forward
        self._forward_jet = network.forward_jet

    def values(self, pts):
        return self._forward(self._net, pts, self._weights, self._biases)

    def jet(self, pts) -> Jet:
        return self._forward_jet(self._net, pts, self._weights, self._biases)


def residual(jet: Jet, vg: VanGenuchten):
    """Pointwise equation residual from a field jet."""
    psi = jet.value
    px, py, pz, pt = jet.d1
    pxx, pyy, pzz = jet.d2
    cond = k(vg, psi)
    dcond = dk_dpsi(vg, psi)
    cap = dtheta_dpsi(vg, psi)
    flux = (dcond * px ** 2.0 + cond * pxx
            + dcond * py ** 2.0 + cond * pyy
            + dcond * (pz * (pz + 1.0)) + cond * pzz)
    return cap * pt - flux


def _mse(pred, target):
    target = np.asarray(target, dtype=np.float64)
    shape = np.shape(as_value(pred))
    if target.size != int(np.prod(shape)):
        raise ValueError(
            f"prediction/measurement size mismatch: {shape} vs {target.shape}")
    diff = pred - target.reshape(shape)
    return pairwise_mean(diff ** 2.0)


def data_loss(field: FieldEvaluator, pts, measured):
    """Mean squared misfit of the field against measured heads at ``pts``."""
    return _mse(field.values(pts), measured)


def rre_loss(field: FieldEvaluator, vg: VanGenuchten, pts):
    """Mean squared equation residual of the field over ``pts``."""
    r = residual(field.jet(pts), vg)
    return pairwise_mean(r ** 2.0)


@dataclass
class LossBreakdown:
    data_loss: object
    rre_loss: object
    total: object

    def floats(self) -> "LossBreakdown":
        return LossBreakdown(float(as_value(self.data_loss)),
                             float(as_value(self.rre_loss)),
                             float(as_value(self.total)))


def total_loss(field: FieldEvaluator, vg: VanGenuchten, sensor_pts, measured,
               coll_pts, weights=(1.0, 1.0)) -> LossBreakdown:
    """Training objective: weighted sum of the two losses (default 1, 1,
    i.e. a plain unweighted sum)."""
    ld = data_loss(field, sensor_pts, measured)
    lr = rre_loss(field, vg, coll_pts)
    w_d, w_r = weights
    if w_d == 1.0 and w_r == 1.0:
        total = ld + lr
    else:
        total = w_d * ld + w_r * lr
    return LossBreakdown(ld, lr, total)


def loss_and_grads(net, vg: VanGenuchten, sensor_pts, measured, coll_pts,
                   weights=(1.0, 1.0), chunk=1000):
    """Objective value and its gradient with respect to every parameter.

    Returns ``(LossBreakdown of floats, [gradient per parameter array])``
    in ``param_arrays`` order. The collocation batch is evaluated in fixed
    chunks of at most ``chunk`` points: each chunk's tape is backpropagated
    into shared parameter leaves (second derivatives in time dominate the
    tape, and a chunk-sized tape stays cache-resident, which roughly halves
    the cost of large batches). The loss values reported are recomputed
    from the concatenated pointwise values with the canonical pairwise
    reduction, so chunking never changes a logged number.
    """
    from .network import param_arrays
    arrays = param_arrays(net)
    leaves = [Var(a) for a in arrays]
    field = NetField(net, leaves[0::2], leaves[1::2])
    w_d, w_r = weights
    n_m = len(sensor_pts)
    n_f = len(coll_pts)

    diff = field.values(sensor_pts) - \
        np.asarray(measured, dtype=np.float64).reshape(n_m, 1)
    mean_sq = pairwise_mean(diff ** 2.0)
    backward(mean_sq * w_d)
    ld = float(as_value(mean_sq))

    r_parts = []
    for start in range(0, n_f, chunk):
        pts = coll_pts[start:start + chunk]
        r = residual(field.jet(pts), vg)
        rsq = r ** 2.0
        backward(pairwise_mean(rsq) * (w_r * len(pts) / n_f))
        r_parts.append(np.ravel(as_value(rsq)))
    lr = float(pairwise_mean(np.concatenate(r_parts))) if r_parts else 0.0

    if w_d == 1.0 and w_r == 1.0:
        total = ld + lr
    else:
        total = w_d * ld + w_r * lr
    grads = [leaf.grad if leaf.grad is not None else np.zeros_like(a)
             for leaf, a in zip(leaves, arrays)]
    return LossBreakdown(ld, lr, total), grads
