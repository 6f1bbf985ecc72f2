import numpy as np
import pytest

from survseq import autodiff as ad
from survseq.ablation import init_mlp, matched_width, mean_pool, mlp_decode, mlp_param_count
from survseq.autodiff import Tensor
from survseq.decoder import decoder_param_count, joint_head
from survseq.gradcheck import grad_check
from survseq.model import ModelConfig, init_params


def _inputs(B=3, S=4, H=5, seed=0):
    rng = np.random.default_rng(seed)
    valid = np.ones((B, S))
    valid[0, 2:] = 0
    return Tensor(rng.normal(size=(B, H))), Tensor(rng.normal(size=(B, S, H))), valid


def test_zero_parameters_give_uniform_pdf():
    h, H, valid = _inputs()
    p = {k: Tensor(np.zeros_like(v)) for k, v in init_mlp(np.random.default_rng(0), 2, 5, 7, 6, np.float64).items()}
    pdf = joint_head(mlp_decode(h, H, valid, p)).data
    np.testing.assert_allclose(pdf, 1 / 12)


@pytest.mark.parametrize("width", [1, 3, 40])
def test_output_shape_for_any_width(width):
    h, H, valid = _inputs()
    p = {k: Tensor(v) for k, v in init_mlp(np.random.default_rng(1), 2, 5, width, 9, np.float64).items()}
    a = mlp_decode(h, H, valid, p)
    assert a.shape == (3, 2, 9)
    np.testing.assert_allclose(joint_head(a).data.sum(axis=(1, 2)), 1.0, atol=1e-12)


def test_mean_pool_skips_padding():
    _, H, valid = _inputs()
    pooled = mean_pool(H, valid).data
    np.testing.assert_allclose(pooled[0], H.data[0, :2].mean(axis=0))
    np.testing.assert_allclose(pooled[1], H.data[1].mean(axis=0))


@pytest.mark.parametrize("K,H,T,L", [(2, 64, 125, 1), (2, 8, 5, 1), (1, 16, 40, 2), (3, 32, 248, 1)])
def test_matched_parameter_count(K, H, T, L):
    width = matched_width(K, H, T, L)
    rec = decoder_param_count(K, H, L)
    mlp = mlp_param_count(K, H, width, T)
    assert abs(mlp - rec) <= 0.2 * rec
    assert sum(v.size for v in init_mlp(np.random.default_rng(0), K, H, width, T, np.float32).values()) == mlp


def test_model_config_uses_matched_width():
    rec = init_params(ModelConfig(20, 2, 125, hidden_dim=64), seed=0)
    mlp = init_params(ModelConfig(20, 2, 125, hidden_dim=64, decoder_kind="mlp"), seed=0)
    assert abs(mlp.n_values - rec.n_values) <= 0.2 * rec.n_values
    assert not any(k.startswith("decoder.") for k in mlp)


def test_mlp_gradients():
    h, H, valid = _inputs(seed=2)
    p = {k: Tensor(v) for k, v in init_mlp(np.random.default_rng(3), 2, 5, 4, 6, np.float64).items()}
    p["mlp.b1"].data[:] = 0.3
    p["mlp.b2"].data[:] = 0.3
    w = np.random.default_rng(4).normal(size=(3, 2, 6))
    report = grad_check(lambda: ad.sum(joint_head(mlp_decode(h, H, valid, p)) * w), p)
    assert report.passed, report.summary()
