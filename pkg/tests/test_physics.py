"""Residual and loss tests.

The manufactured-field reference residuals were computed symbolically in
divergence form, d(theta)/dt - div(K grad(psi + z)), with sympy at 40-digit
precision and frozen below. The implementation evaluates the expanded
chain-rule form from exact analytic jets of the same field; the two must
agree to 1e-8 relative at every point.
"""

import numpy as np
import pytest

from soilpinn.autodiff import Jet, as_value
from soilpinn.constitutive import DEFAULT_SOIL
from soilpinn.network import init_net, param_arrays
from soilpinn.physics import (LossBreakdown, NetField, data_loss,
                              loss_and_grads, residual, rre_loss, total_loss)

LO = np.array([0.0, 0.0, 0.0, 0.0])
HI = np.array([0.4, 0.4, 0.2, 0.9])

# psi = -0.6 - 0.25 sin(pi x) cos(pi y) exp(-z) - 0.15 x t, always negative
# on the box; 20 points drawn uniformly (seed 77) over the box.
PTS = np.array([
    (0.31437292341699724, 0.2204687823201261, 0.04877763939068765, 0.30100788583013527),
    (0.12747607910711292, 0.15606160446606565, 0.1602601359284721, 0.08172147599251191),
    (0.14944975710578576, 0.3165291601056673, 0.1517342929136724, 0.5435775354422467),
    (0.052299133126723074, 0.1439378732603039, 0.17416097049948434, 0.880319805258637),
    (0.2828724582870061, 0.06434919239415615, 0.17570454841671845, 0.14570589474521772),
    (0.13575480538032664, 0.1412890265936913, 0.07763049594741588, 0.10437688717478757),
    (0.07420322369308084, 0.3019616223452777, 0.01517007515487625, 0.35346027414027054),
    (0.0011362772861726268, 0.18464851072033217, 0.0173699090130524, 0.030800044032437336),
    (0.3248301113666925, 0.08251362818625957, 0.16223950470113568, 0.24152737987322903),
    (0.3202066704104346, 0.17677995650232914, 0.13415867042867646, 0.8768438135152199),
    (0.08298815766442368, 0.2524460462519085, 0.016621145471322207, 0.4185545182247679),
    (0.06453158613119747, 0.30659419965566365, 0.021415735549161787, 0.40003436046664315),
    (0.02841340669144539, 0.18875879173789803, 0.17734175372163014, 0.6926439382345944),
    (0.18964550906425637, 0.3684467193469359, 0.0979959490816611, 0.23258183584661263),
    (0.05678785948008369, 0.32708541364421323, 0.030033400915681876, 0.5836347257269417),
    (0.34498508459796634, 0.10371675165110178, 0.15038616207946706, 0.10546030515392747),
    (0.014766833436550764, 0.2704203291726423, 0.08633858698280639, 0.8560621612233384),
    (0.37435952606924705, 0.30282397754927526, 0.15647465539251967, 0.615520292868244),
    (0.30312143584269835, 0.12198675831672588, 0.19150013532086102, 0.7068709038078861),
    (0.33416549189000455, 0.01210247109475362, 0.04846113078313237, 0.28493050578795726),
])

R_ORACLE = np.array([
    -0.010075867905837883,
    -0.008275689407458176,
    -0.0074449821996483406,
    -0.008637293855385069,
    -0.0093021302516797,
    -0.008909335435383445,
    -0.006289473462398682,
    -0.006526733002796711,
    -0.009428580232979945,
    -0.009106552509576659,
    -0.007634838921692823,
    -0.005929933672611559,
    -0.007108116103071625,
    -0.008214692114725908,
    -0.005410959387110584,
    -0.00979193793517683,
    -0.005990372264748235,
    -0.010966757124797053,
    -0.009001843869365037,
    -0.009106434511623513,
])


def manufactured_jet(pts):
    """Exact jet of the manufactured head field, by hand calculus."""
    x, y, z, t = pts[:, 0], pts[:, 1], pts[:, 2], pts[:, 3]
    pi = np.pi
    s = np.sin(pi * x) * np.cos(pi * y) * np.exp(-z)
    value = -0.6 - 0.25 * s - 0.15 * x * t
    px = -0.25 * pi * np.cos(pi * x) * np.cos(pi * y) * np.exp(-z) - 0.15 * t
    py = 0.25 * pi * np.sin(pi * x) * np.sin(pi * y) * np.exp(-z)
    pz = 0.25 * s
    pt = -0.15 * x
    pxx = 0.25 * pi * pi * s
    pyy = 0.25 * pi * pi * s
    pzz = -0.25 * s
    return Jet(value, (px, py, pz, pt), (pxx, pyy, pzz))


class ConstantField:
    """psi everywhere equal to a constant; exact zero jet."""

    def __init__(self, c):
        self.c = c

    def values(self, pts):
        return np.full(len(pts), self.c)

    def jet(self, pts):
        n = len(pts)
        zero = np.zeros(n)
        return Jet(np.full(n, self.c), (zero,) * 4, (zero.copy(),) * 3)


class HydrostaticField:
    """psi = -z: gravity equilibrium, an exact steady solution."""

    def values(self, pts):
        return -pts[:, 2]

    def jet(self, pts):
        n = len(pts)
        zero = np.zeros(n)
        return Jet(-pts[:, 2], (zero, zero, np.full(n, -1.0), zero),
                   (zero.copy(),) * 3)


class TestResidual:
    def test_hydrostatic_is_exact_zero(self):
        pts = np.random.default_rng(1).uniform(LO, HI, size=(50, 4))
        r = residual(HydrostaticField().jet(pts), DEFAULT_SOIL)
        assert np.max(np.abs(r)) < 1e-10

    def test_constants_are_exact_zeros(self):
        pts = np.random.default_rng(2).uniform(LO, HI, size=(50, 4))
        for c in (-1.0, -0.3, -2.5):
            r = residual(ConstantField(c).jet(pts), DEFAULT_SOIL)
            assert np.max(np.abs(r)) < 1e-10

    def test_manufactured_field_vs_symbolic_oracle(self):
        r = residual(manufactured_jet(PTS), DEFAULT_SOIL)
        rel = np.abs(r - R_ORACLE) / np.abs(R_ORACLE)
        assert np.max(rel) < 1e-8

    def test_net_jet_and_residual_run_on_tape(self):
        from soilpinn.autodiff import Var, backward, pairwise_mean
        net = init_net(LO, HI, 2, 6, seed=5, out_center=-0.7, out_scale=0.3)
        leaves = [Var(a) for a in param_arrays(net)]
        field = NetField(net, leaves[0::2], leaves[1::2])
        pts = PTS[:5]
        r = residual(field.jet(pts), DEFAULT_SOIL)
        backward(pairwise_mean(r ** 2.0))
        assert any(leaf.grad is not None and np.any(leaf.grad != 0.0)
                   for leaf in leaves)


class TestLosses:
    def setup_method(self):
        self.net = init_net(LO, HI, 3, 8, seed=9,
                            out_center=-0.7, out_scale=0.3)
        self.field = NetField(self.net)
        rng = np.random.default_rng(31)
        self.sensor_pts = rng.uniform(LO, HI, size=(40, 4))
        self.coll_pts = rng.uniform(LO, HI, size=(60, 4))
        self.measured = rng.uniform(-1.0, -0.2, size=40)

    def test_data_loss_zero_on_exact_match(self):
        exact = self.field.values(self.sensor_pts)
        assert data_loss(self.field, self.sensor_pts, exact) == 0.0

    def test_data_loss_matches_direct_mse(self):
        ld = data_loss(self.field, self.sensor_pts, self.measured)
        want = np.mean((self.field.values(self.sensor_pts)
                        - self.measured) ** 2)
        assert abs(ld - want) / want < 1e-14

    def test_losses_invariant_under_point_permutation(self):
        perm = np.random.default_rng(0).permutation(40)
        a = data_loss(self.field, self.sensor_pts, self.measured)
        b = data_loss(self.field, self.sensor_pts[perm], self.measured[perm])
        assert a == b
        perm_c = np.random.default_rng(1).permutation(60)
        ra = rre_loss(self.field, DEFAULT_SOIL, self.coll_pts)
        rb = rre_loss(self.field, DEFAULT_SOIL, self.coll_pts[perm_c])
        assert ra == rb

    def test_total_is_exact_sum_by_default(self):
        lb = total_loss(self.field, DEFAULT_SOIL, self.sensor_pts,
                        self.measured, self.coll_pts)
        assert lb.total == lb.data_loss + lb.rre_loss

    def test_weighted_total(self):
        lb = total_loss(self.field, DEFAULT_SOIL, self.sensor_pts,
                        self.measured, self.coll_pts, weights=(2.0, 0.5))
        assert lb.total == 2.0 * lb.data_loss + 0.5 * lb.rre_loss

    def test_size_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            data_loss(self.field, self.sensor_pts, self.measured[:-3])

    def test_breakdown_floats(self):
        lb = LossBreakdown(np.float64(1.0), np.float64(2.0), np.float64(3.0))
        f = lb.floats()
        assert isinstance(f.total, float) and f.total == 3.0


class TestLossAndGrads:
    def setup_method(self):
        self.net = init_net(LO, HI, 2, 6, seed=13,
                            out_center=-0.7, out_scale=0.3)
        rng = np.random.default_rng(41)
        self.sensor_pts = rng.uniform(LO, HI, size=(25, 4))
        self.coll_pts = rng.uniform(LO, HI, size=(37, 4))
        self.measured = rng.uniform(-1.0, -0.2, size=25)

    def test_values_match_total_loss_bits(self):
        lb, _ = loss_and_grads(self.net, DEFAULT_SOIL, self.sensor_pts,
                               self.measured, self.coll_pts)
        ref = total_loss(NetField(self.net), DEFAULT_SOIL, self.sensor_pts,
                         self.measured, self.coll_pts).floats()
        assert lb.data_loss == ref.data_loss
        assert lb.rre_loss == ref.rre_loss
        assert lb.total == ref.total

    def test_chunking_never_changes_logged_values(self):
        whole, g_whole = loss_and_grads(self.net, DEFAULT_SOIL,
                                        self.sensor_pts, self.measured,
                                        self.coll_pts, chunk=10_000)
        parts, g_parts = loss_and_grads(self.net, DEFAULT_SOIL,
                                        self.sensor_pts, self.measured,
                                        self.coll_pts, chunk=7)
        assert whole.data_loss == parts.data_loss
        assert whole.rre_loss == parts.rre_loss
        assert whole.total == parts.total
        for a, b in zip(g_whole, g_parts):
            denom = max(np.max(np.abs(a)), 1e-300)
            assert np.max(np.abs(a - b)) / denom < 1e-12

    def test_gradient_vs_central_fd(self):
        from soilpinn.network import set_param_arrays
        arrays = [a.copy() for a in param_arrays(self.net)]
        _, grads = loss_and_grads(self.net, DEFAULT_SOIL, self.sensor_pts,
                                  self.measured, self.coll_pts)

        def loss_at(arrs):
            set_param_arrays(self.net, [a.copy() for a in arrs])
            lb = total_loss(NetField(self.net), DEFAULT_SOIL,
                            self.sensor_pts, self.measured,
                            self.coll_pts).floats()
            return lb.total

        h = 1e-6
        rng = np.random.default_rng(3)
        checked = 0
        for i in range(len(arrays)):
            flat_idx = rng.integers(0, arrays[i].size, size=2)
            for j in set(int(v) for v in flat_idx):
                bump = [a.copy() for a in arrays]
                bump[i].ravel()[j] += h
                hi = loss_at(bump)
                bump[i].ravel()[j] -= 2 * h
                lo = loss_at(bump)
                fd = (hi - lo) / (2 * h)
                got = grads[i].ravel()[j]
                assert abs(got - fd) / max(abs(fd), 1e-8) < 1e-4
                checked += 1
        set_param_arrays(self.net, arrays)
        assert checked >= 8  # random index pairs may collide within a layer

    def test_weights_scale_gradients(self):
        _, g1 = loss_and_grads(self.net, DEFAULT_SOIL, self.sensor_pts,
                               self.measured, self.coll_pts,
                               weights=(1.0, 0.0))
        _, g2 = loss_and_grads(self.net, DEFAULT_SOIL, self.sensor_pts,
                               self.measured, self.coll_pts,
                               weights=(2.0, 0.0))
        for a, b in zip(g1, g2):
            np.testing.assert_allclose(2.0 * a, b, rtol=1e-12, atol=0)

    def test_empty_collocation_gives_zero_rre(self):
        lb, grads = loss_and_grads(self.net, DEFAULT_SOIL, self.sensor_pts,
                                   self.measured, self.coll_pts[:0])
        assert lb.rre_loss == 0.0
        assert lb.total == lb.data_loss
        assert all(g.shape == a.shape
                   for g, a in zip(grads, param_arrays(self.net)))


class TestNetFieldAdapter:
    def test_matches_module_functions(self):
        from soilpinn.network import forward, forward_jet
        net = init_net(LO, HI, 2, 5, seed=21, out_center=-0.5, out_scale=0.2)
        field = NetField(net)
        pts = PTS[:6]
        np.testing.assert_array_equal(field.values(pts), forward(net, pts))
        a, b = field.jet(pts), forward_jet(net, pts)
        np.testing.assert_array_equal(a.value, b.value)
        for u, v in zip(a.d1 + a.d2, b.d1 + b.d2):
            np.testing.assert_array_equal(u, v)
