from json import dumps
from math import cos, sin
from struct import pack
import numpy as np
import pytest
import torch
from numpy.testing import assert_allclose, assert_array_equal
from torch.func import functional_call
from errors import ModelFormatError, ValidationError
from policy import (FixingPolicy, HeuristicPolicy, LearnedPolicy, PolicyConfig, attach_pe, embed_window, forward,
                    heuristic_policy, load_policy, positional_encoding, save_policy)
from training import wbce_loss


def small_config(use_attention=True, seed=0):
    return PolicyConfig(beta=8, window=4, stride=4, d_n=8, H=2, L=1, d_ff=16, mlp_dims=[8, 4, 2],
                        use_attention=use_attention, seed=seed)


class TestPolicyConfig:
    def test_alpha(self):
        assert PolicyConfig().alpha == 10
        assert PolicyConfig(beta=10, window=1, stride=1).alpha == 10

    @pytest.mark.parametrize("kwargs", [
        {"beta": 8, "window": 9, "stride": 1},
        {"beta": 10, "window": 4, "stride": 4},
        {"d_n": 10, "H": 4},
    ])
    def test_rejects_inconsistent_shapes(self, kwargs):
        with pytest.raises(ValidationError):
            PolicyConfig(**kwargs)

    def test_dict_round_trip(self):
        cfg = small_config(use_attention=False)
        assert PolicyConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


class TestEmbedding:
    def test_two_windows(self):
        cfg = PolicyConfig(beta=4, window=2, stride=2, d_n=4, H=2)
        assert_array_equal(embed_window([1.0, 2.0, 3.0, 4.0], cfg), [[1.0, 2.0], [3.0, 4.0]])

    def test_default_windows(self):
        trace = np.arange(100, dtype=np.float64)
        z = embed_window(trace, PolicyConfig())
        assert z.shape == (10, 10)
        assert_array_equal(z[-1], trace[90:100])

    def test_constant_trace(self):
        z = embed_window(np.full(100, 0.7), PolicyConfig())
        assert np.all(z == z[0])

    def test_wrong_length(self):
        with pytest.raises(ValidationError):
            embed_window(np.zeros(99), PolicyConfig())

    def test_positional_encoding(self):
        pe = positional_encoding(3, 4)
        assert pe.shape == (3, 4)
        assert pe[0, 0] == pytest.approx(sin(1.0))
        assert pe[0, 1] == pytest.approx(cos(1.0))
        assert pe[1, 2] == pytest.approx(sin(2.0 / 100.0))
        assert pe[2, 3] == pytest.approx(cos(3.0 / 100.0))

    def test_attach_pe(self):
        pe = positional_encoding(10, 10)
        out = attach_pe(np.zeros((10, 10)), pe)
        assert out.shape == (10, 20)
        assert_array_equal(out[:, :10], 0.0)
        assert_array_equal(out[:, 10:], pe)

    def test_network_embedding_matches_numpy(self):
        cfg = small_config()
        model = FixingPolicy(cfg)
        trace = np.linspace(0.0, 1.0, cfg.beta)
        expected = attach_pe(embed_window(trace, cfg), positional_encoding(cfg.alpha, cfg.window))
        got = model.embed(torch.tensor(trace[None, :], dtype=torch.float64))[0].numpy()
        assert_allclose(got, expected, atol=1e-6)


class TestForward:
    @pytest.mark.parametrize("use_attention", [True, False])
    def test_zero_network_gives_one_half(self, use_attention):
        model = FixingPolicy(small_config(use_attention))
        with torch.no_grad():
            for parameter in model.parameters():
                parameter.zero_()
        traces = np.random.default_rng(0).uniform(size=(5, 8))
        assert_array_equal(forward(traces, model), 0.5)

    def test_identical_traces_identical_output(self):
        model = FixingPolicy(small_config())
        traces = np.tile(np.random.default_rng(1).uniform(size=8), (6, 1))
        out = forward(traces, model)
        assert_allclose(out, out[0], rtol=1e-6)

    def test_batch_invariance_and_determinism(self):
        model = FixingPolicy(small_config(seed=3))
        traces = np.random.default_rng(2).uniform(size=(7, 8))
        batched = forward(traces, model)
        assert_array_equal(batched, forward(traces, model))
        single = np.array([forward(row[None, :], model)[0] for row in traces])
        assert_allclose(batched, single, rtol=1e-5)
        permutation = np.random.default_rng(3).permutation(7)
        assert_allclose(forward(traces[permutation], model), batched[permutation], rtol=1e-5)

    def test_outputs_are_probabilities(self):
        model = FixingPolicy(PolicyConfig(seed=4))
        out = forward(np.random.default_rng(4).uniform(size=(16, 100)), model)
        assert out.shape == (16,)
        assert np.all((out > 0) & (out < 1))

    @pytest.mark.parametrize("bias", [1e4, -1e4])
    def test_saturated_logits_stay_inside_unit_interval(self, bias):
        model = FixingPolicy(small_config())
        with torch.no_grad():
            model.head[-1].bias.fill_(bias)
        out = forward(np.random.default_rng(5).uniform(size=(4, 8)), model)
        assert np.all((out > 0) & (out < 1))

    def test_rejects_nan(self):
        traces = np.zeros((2, 8))
        traces[1, 3] = np.nan
        with pytest.raises(ValidationError):
            forward(traces, FixingPolicy(small_config()))

    def test_seeded_initialisation(self):
        first = FixingPolicy(small_config(seed=5)).state_dict()
        second = FixingPolicy(small_config(seed=5)).state_dict()
        assert all(torch.equal(first[name], second[name]) for name in first)


class TestGradient:
    @pytest.mark.parametrize("use_attention", [True, False])
    @pytest.mark.parametrize("draw", range(20))
    def test_input_gradient(self, use_attention, draw):
        model = FixingPolicy(small_config(use_attention, seed=draw)).double().train()
        generator = torch.Generator().manual_seed(draw)
        traces = torch.rand(4, 8, generator=generator, dtype=torch.float64, requires_grad=True)
        labels = torch.tensor([1.0, 0.0, 1.0, 0.0], dtype=torch.float64)
        weights = torch.rand(4, generator=generator, dtype=torch.float64) + 0.1
        assert torch.autograd.gradcheck(lambda x: wbce_loss(model(x), labels, weights), (traces,),
                                        eps=1e-6, atol=1e-5, rtol=1e-3)

    @pytest.mark.parametrize("use_attention", [True, False])
    def test_parameter_gradient(self, use_attention):
        model = FixingPolicy(small_config(use_attention, seed=11)).double().train()
        names = [name for name, _ in model.named_parameters()]
        parameters = tuple(p.detach().clone().requires_grad_() for _, p in model.named_parameters())
        generator = torch.Generator().manual_seed(11)
        traces = torch.rand(4, 8, generator=generator, dtype=torch.float64)
        labels = torch.tensor([1.0, 1.0, 0.0, 0.0], dtype=torch.float64)
        weights = torch.ones(4, dtype=torch.float64)

        def loss(*values):
            return wbce_loss(functional_call(model, dict(zip(names, values)), (traces,)), labels, weights)
        assert torch.autograd.gradcheck(loss, parameters, eps=1e-6, atol=1e-5, rtol=1e-3)


class TestModelFile:
    def test_round_trip(self, tmp_path):
        model = FixingPolicy(small_config(seed=6)).eval()
        path = tmp_path / "model.bin"
        save_policy(model, path)
        loaded = load_policy(path)
        assert not loaded.training
        assert loaded.cfg.to_dict() == model.cfg.to_dict()
        original = model.state_dict()
        assert all(torch.equal(original[name], tensor) for name, tensor in loaded.state_dict().items())
        traces = np.random.default_rng(6).uniform(size=(3, 8))
        assert_array_equal(forward(traces, loaded), forward(traces, model))

    def test_truncated(self, tmp_path):
        path = tmp_path / "model.bin"
        save_policy(FixingPolicy(small_config()).eval(), path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(ModelFormatError):
            load_policy(path)

    def test_unknown_version(self, tmp_path):
        header = dumps({"format_version": 99, "config": small_config().to_dict(), "tensors": []}).encode()
        path = tmp_path / "model.bin"
        path.write_bytes(pack("<Q", len(header)) + header)
        with pytest.raises(ModelFormatError):
            load_policy(path)


class TestHeuristic:
    def test_examples(self):
        assert heuristic_policy(np.full(10, 0.9)) == 1.0
        assert heuristic_policy(np.full(10, 0.1)) == 0.0
        assert heuristic_policy(np.tile([0.9, 0.3], 5)) == 0.5
        assert heuristic_policy(np.full(10, 0.5)) == 0.0

    def test_batch(self):
        windows = np.array([np.full(4, 0.9), np.tile([0.9, 0.3], 2)])
        assert_array_equal(HeuristicPolicy()(windows), [1.0, 0.5])

    def test_learned_wrapper(self):
        policy = LearnedPolicy(FixingPolicy(small_config(use_attention=False)))
        assert (policy.name, policy.beta) == ("learned-noatt", 8)
        assert policy(np.zeros((3, 8))).shape == (3,)
