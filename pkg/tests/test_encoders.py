import numpy as np
import pytest
import torch

from seqdebias.config import ConfigError, ModelConfig
from seqdebias.encoders import (
    ItemEmbeddings,
    PreferenceMerge,
    last_state,
    make_encoder,
)

BACKBONES = ["recurrent", "dilated_conv", "self_attention"]


def encoder_for(backbone, max_len=20, dropout=0.0):
    cfg = ModelConfig(backbone=backbone, max_len=max_len, dropout=dropout)
    return make_encoder(cfg).double().eval()


class TestItemEmbeddings:
    def test_padding_row_is_zero(self):
        emb = ItemEmbeddings(5, 8)
        out = emb(torch.full((3,), emb.pad_index))
        assert torch.all(out == 0)

    def test_shared_table_target_equals_sequence(self):
        emb = ItemEmbeddings(5, 8)
        item = torch.tensor([2])
        seq = torch.tensor([[2, 2]])
        assert torch.equal(emb(item)[0], emb(seq)[0, 0])
        assert torch.equal(emb(seq)[0, 0], emb(seq)[0, 1])

    def test_out_of_range_index(self):
        emb = ItemEmbeddings(5, 8)
        with pytest.raises(IndexError):
            emb(torch.tensor([7]))
        with pytest.raises(IndexError):
            emb(torch.tensor([-1]))


class TestCausality:
    @pytest.mark.parametrize("backbone", BACKBONES)
    def test_no_future_leak(self, backbone):
        torch.manual_seed(1)
        enc = encoder_for(backbone)
        rng = np.random.default_rng(1)
        for _ in range(10):
            length = int(rng.integers(2, 15))
            x = torch.randn(1, length, 50, dtype=torch.float64)
            p = int(rng.integers(0, length - 1))
            base = enc(x, torch.ones(1, length, dtype=torch.float64))
            y = x.clone()
            y[0, p + 1 :] += torch.randn(length - p - 1, 50, dtype=torch.float64)
            perturbed = enc(y, torch.ones(1, length, dtype=torch.float64))
            torch.testing.assert_close(base[0, : p + 1], perturbed[0, : p + 1])

    @pytest.mark.parametrize("backbone", BACKBONES)
    def test_length_one_is_function_of_single_item(self, backbone):
        torch.manual_seed(2)
        enc = encoder_for(backbone)
        x = torch.randn(1, 1, 50, dtype=torch.float64)
        out1 = enc(x, torch.ones(1, 1, dtype=torch.float64))
        out2 = enc(x.clone(), torch.ones(1, 1, dtype=torch.float64))
        torch.testing.assert_close(out1, out2)

    @pytest.mark.parametrize("backbone", BACKBONES)
    def test_trailing_padding_ignored(self, backbone):
        # appending pad positions must not change the last valid state
        torch.manual_seed(3)
        enc = encoder_for(backbone)
        x = torch.randn(1, 4, 50, dtype=torch.float64)
        lengths = torch.tensor([4])
        short = last_state(enc(x, torch.ones(1, 4, dtype=torch.float64)), lengths)
        padded = torch.cat([x, torch.zeros(1, 3, 50, dtype=torch.float64)], dim=1)
        mask = torch.cat(
            [torch.ones(1, 4, dtype=torch.float64), torch.zeros(1, 3, dtype=torch.float64)],
            dim=1,
        )
        long = last_state(enc(padded, mask), lengths)
        torch.testing.assert_close(short, long)


class TestShapesAndDeterminism:
    @pytest.mark.parametrize("backbone", BACKBONES)
    def test_output_dim(self, backbone):
        enc = encoder_for(backbone)
        out = enc(
            torch.randn(3, 6, 50, dtype=torch.float64),
            torch.ones(3, 6, dtype=torch.float64),
        )
        assert out.shape == (3, 6, 50)

    @pytest.mark.parametrize("backbone", BACKBONES)
    def test_seeded_construction_is_deterministic(self, backbone):
        torch.manual_seed(11)
        a = encoder_for(backbone)
        torch.manual_seed(11)
        b = encoder_for(backbone)
        x = torch.randn(2, 5, 50, dtype=torch.float64)
        m = torch.ones(2, 5, dtype=torch.float64)
        torch.testing.assert_close(a(x, m), b(x, m))

    def test_last_state_zero_length_error(self):
        with pytest.raises(ValueError):
            last_state(torch.zeros(1, 3, 50), torch.tensor([0]))

    def test_attention_rejects_overlong_sequence(self):
        enc = encoder_for("self_attention", max_len=4)
        with pytest.raises(ValueError, match="max_len"):
            enc(torch.randn(1, 6, 50).double(), torch.ones(1, 6).double())


class TestGradientFlow:
    @pytest.mark.parametrize("backbone", BACKBONES)
    def test_finite_difference_on_toy_sequence(self, backbone):
        torch.manual_seed(5)
        enc = encoder_for(backbone)
        x = torch.randn(1, 4, 50, dtype=torch.float64, requires_grad=True)
        mask = torch.ones(1, 4, dtype=torch.float64)

        def f(inp):
            return last_state(enc(inp, mask), torch.tensor([4])).sum()

        f(x).backward()
        grad = x.grad.clone()
        eps = 1e-6
        rng = np.random.default_rng(5)
        for _ in range(10):
            i = int(rng.integers(0, 4))
            j = int(rng.integers(0, 50))
            xp = x.detach().clone()
            xm = x.detach().clone()
            xp[0, i, j] += eps
            xm[0, i, j] -= eps
            fd = (f(xp) - f(xm)).item() / (2 * eps)
            # floor keeps FD roundoff noise from dominating near-zero grads
            denom = max(abs(fd), abs(grad[0, i, j].item()), 1e-4)
            assert abs(fd - grad[0, i, j].item()) / denom <= 1e-4


class TestPreferenceMerge:
    def test_identity(self):
        merge = PreferenceMerge("identity", 50)
        v = torch.randn(2, 50)
        assert torch.equal(merge(v), v)

    def test_mlp_with_zero_user_vector_is_deterministic(self):
        torch.manual_seed(0)
        merge = PreferenceMerge("mlp", 50, user_dim=10)
        dyn = torch.randn(2, 50)
        out1 = merge(dyn, torch.zeros(2, 10))
        out2 = merge(dyn, torch.zeros(2, 10))
        torch.testing.assert_close(out1, out2)
        assert out1.shape == (2, 50)

    def test_mlp_requires_user_vector(self):
        merge = PreferenceMerge("mlp", 50, user_dim=10)
        with pytest.raises(ConfigError):
            merge(torch.randn(2, 50), None)

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            PreferenceMerge("concat", 50)
