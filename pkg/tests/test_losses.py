import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from seqdebias.config import LossWeights
from seqdebias.data import compute_propensities
from seqdebias.losses import bce, bpr_pairwise, ipw_bce, orthogonality, total_loss

LN2 = math.log(2.0)


def t(values):
    return torch.tensor(values, dtype=torch.float64)


class TestBce:
    def test_zero_score_positive(self):
        assert bce(t([0.0]), t([1.0])).item() == pytest.approx(LN2)

    def test_saturated_positive_is_finite(self):
        v = bce(t([40.0]), t([1.0])).item()
        assert 0 <= v < 1e-12

    def test_symmetric_batch(self):
        assert bce(t([0.0, 0.0]), t([1.0, 0.0])).item() == pytest.approx(2 * LN2)

    def test_nonnegative_and_finite(self):
        scores = t(np.linspace(-60, 60, 31))
        for y in (0.0, 1.0):
            v = bce(scores, torch.full_like(scores, y)).item()
            assert np.isfinite(v) and v >= 0


class TestIpwBce:
    def test_unit_propensities_equal_bce_bitwise(self):
        scores = t(np.linspace(-15, 15, 41))
        labels = (scores > 0).double()
        ones = torch.ones_like(scores)
        assert ipw_bce(scores, labels, ones, ones).item() == bce(scores, labels).item()

    def test_half_propensity_doubles_weight(self):
        v = ipw_bce(t([0.0]), t([1.0]), t([0.5]), t([1.0])).item()
        assert v == pytest.approx(2 * LN2)

    def test_hand_computed_table_weights(self):
        # counts [4,2,1]: most popular positive weight 1, rarest weight 2
        table = compute_propensities(np.array([4, 2, 1]), 0.5, 0.5, 1e-3)
        theta = torch.from_numpy(table.theta_plus)
        popular = ipw_bce(t([0.0]), t([1.0]), theta[0:1], t([1.0])).item()
        rare = ipw_bce(t([0.0]), t([1.0]), theta[2:3], t([1.0])).item()
        assert popular == pytest.approx(LN2)
        assert rare == pytest.approx(2 * LN2)


class TestOrthogonality:
    def test_orthogonal_vectors(self):
        a = t([[1.0, 0.0]])
        b = t([[0.0, 1.0]])
        assert orthogonality(a, b).item() == pytest.approx(0.0, abs=1e-12)

    def test_parallel_vectors(self):
        a = t([[3.0, 4.0]])
        assert orthogonality(a, a).item() == pytest.approx(1.0, abs=1e-12)

    def test_antiparallel_vectors(self):
        a = t([[3.0, 4.0]])
        assert orthogonality(a, -a).item() == pytest.approx(1.0, abs=1e-12)

    def test_zero_norm_guard(self):
        a = t([[0.0, 0.0]])
        b = t([[1.0, 1.0]])
        assert orthogonality(a, b).item() == 0.0

    @given(
        scale_a=st.floats(1e-3, 1e3),
        scale_b=st.floats(1e-3, 1e3),
        seed=st.integers(0, 100),
    )
    @settings(max_examples=30, deadline=None)
    def test_positive_rescaling_invariance(self, scale_a, scale_b, seed):
        rng = np.random.default_rng(seed)
        a = t(rng.normal(size=(4, 8)))
        b = t(rng.normal(size=(4, 8)))
        base = orthogonality(a, b).item()
        scaled = orthogonality(scale_a * a, scale_b * b).item()
        assert scaled == pytest.approx(base, rel=1e-9)


class TestBpr:
    def test_equal_scores(self):
        assert bpr_pairwise(t([1.0]), t([1.0])).item() == pytest.approx(LN2)

    def test_saturated_gap(self):
        assert bpr_pairwise(t([40.0]), t([0.0])).item() == pytest.approx(0.0, abs=1e-12)

    def test_antisymmetry_floor(self):
        # loss(a,b) + loss(b,a) >= 2 ln 2 with equality iff a == b
        grid = np.linspace(-4, 4, 17)
        for a in grid:
            for b in grid:
                total = (
                    bpr_pairwise(t([a]), t([b])) + bpr_pairwise(t([b]), t([a]))
                ).item()
                if a == b:
                    assert total == pytest.approx(2 * LN2)
                else:
                    assert total > 2 * LN2

    def test_ipw_weighting(self):
        v = bpr_pairwise(t([0.0]), t([0.0]), pos_theta_plus=t([0.5])).item()
        assert v == pytest.approx(2 * LN2)


class TestTotalLoss:
    def components(self):
        return dict(
            main=t(1.0), interest=t(0.3), conformity=t(0.2),
            item=t(0.4), ortho_user=t(0.1), ortho_item=t(0.05),
        )

    def test_zero_weights_reduce_to_main(self):
        v = total_loss(**self.components(), weights=LossWeights(0, 0, 0))
        assert v.item() == pytest.approx(1.0)

    def test_gamma_linearity(self):
        c = self.components()
        lo = total_loss(**c, weights=LossWeights(0, 0, 1.0)).item()
        hi = total_loss(**c, weights=LossWeights(0, 0, 2.0)).item()
        assert hi - 1.0 == pytest.approx(2 * (lo - 1.0))

    def test_var1_forces_alpha_zero(self):
        c = self.components()
        v = total_loss(**c, weights=LossWeights(5.0, 0, 0), variant="var1")
        assert v.item() == pytest.approx(1.0)

    @given(
        w1=st.floats(0, 3), w2=st.floats(0, 3), lam=st.floats(0, 1)
    )
    @settings(max_examples=30, deadline=None)
    def test_affine_in_each_weight(self, w1, w2, lam):
        c = self.components()
        for name in ("alpha", "beta", "gamma"):
            def at(w):
                kw = {"alpha": 0.7, "beta": 0.7, "gamma": 0.7}
                kw[name] = w
                return total_loss(**c, weights=LossWeights(**kw)).item()

            mid = at(lam * w1 + (1 - lam) * w2)
            assert mid == pytest.approx(lam * at(w1) + (1 - lam) * at(w2), abs=1e-9)


class TestGradients:
    def _check(self, fn, *tensors):
        for x in tensors:
            x.requires_grad_(True)
        out = fn(*tensors)
        out.backward()
        eps = 1e-6
        for x in tensors:
            flat = x.detach().reshape(-1)
            grad = x.grad.reshape(-1)
            for idx in range(flat.numel()):
                xp = flat.clone()
                xm = flat.clone()
                xp[idx] += eps
                xm[idx] -= eps
                fd = (
                    fn(*[v.detach() if v is not x else xp.reshape(x.shape) for v in tensors])
                    - fn(*[v.detach() if v is not x else xm.reshape(x.shape) for v in tensors])
                ).item() / (2 * eps)
                denom = max(abs(fd), abs(grad[idx].item()), 1e-4)
                assert abs(fd - grad[idx].item()) / denom <= 1e-4

    def test_bce_gradient(self):
        scores = t([0.5, -1.2, 2.0])
        labels = t([1.0, 0.0, 1.0])
        self._check(lambda s: bce(s, labels), scores)

    def test_ipw_bce_gradient(self):
        scores = t([0.5, -1.2, 2.0])
        labels = t([1.0, 0.0, 1.0])
        tp = t([0.5, 1.0, 0.7])
        tm = t([1.0, 0.8, 0.9])
        self._check(lambda s: ipw_bce(s, labels, tp, tm), scores)

    def test_orthogonality_gradient(self):
        rng = np.random.default_rng(3)
        a = t(rng.normal(size=(3, 5)))
        b = t(rng.normal(size=(3, 5)))
        self._check(orthogonality, a, b)

    def test_bpr_gradient(self):
        pos = t([0.4, -0.2])
        neg = t([0.1, 0.3])
        self._check(bpr_pairwise, pos, neg)
