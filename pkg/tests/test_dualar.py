import numpy as np
import pytest
import torch

from fishcore.dualar import (
    DualArConfig,
    KvCache,
    SamplerSpec,
    attention_probs,
    fast_forward,
    force_eos,
    generate,
    init_model,
    sample,
    slow_forward,
)
from fishcore.errors import CapacityError, ConfigError, DataError, DomainError


def small_config(**kw):
    base = dict(model_dim=16, slow_layers=2, fast_layers=2, heads=2, text_vocab=20, semantic_vocab=12,
                num_codebooks=3, codebook_vocab=9, max_seq=64)
    base.update(kw)
    return DualArConfig(**base)


@pytest.fixture
def model():
    return init_model(small_config(), seed=3)


class TestConfig:
    def test_heads_divide_dim(self):
        with pytest.raises(ConfigError):
            DualArConfig(model_dim=10, heads=3)

    def test_eos_in_vocab(self):
        with pytest.raises(ConfigError):
            DualArConfig(semantic_vocab=8, eos_id=8)

    def test_default_special_ids(self):
        cfg = DualArConfig(semantic_vocab=10)
        assert (cfg.bos_id, cfg.eos_id) == (8, 9)

    def test_json_round_trip(self):
        cfg = small_config(frames_per_second=12.5)
        assert DualArConfig.from_json(cfg.to_json()) == cfg


class TestSlow:
    def test_shapes(self):
        m = init_model(small_config(model_dim=8, semantic_vocab=11))
        out = slow_forward(m, [1, 2, 3, 4])
        assert out.hidden.shape == (4, 8)
        assert out.token_logits.shape == (4, 11)

    def test_zero_model_logits(self):
        m = init_model(small_config())
        with torch.no_grad():
            for name, p in m.named_parameters():
                p.fill_(1.0 if "norm" in name and name.endswith("weight") else 0.0)
            logits = slow_forward(m, [3, 1, 4]).token_logits
        assert torch.count_nonzero(logits) == 0
        assert sample(logits[-1], SamplerSpec()) == 0

    def test_token_range(self, model):
        with pytest.raises(DataError):
            slow_forward(model, [0, 20 + 12])
        with pytest.raises(DataError):
            slow_forward(model, [-1])

    def test_empty(self, model):
        with pytest.raises(DomainError):
            slow_forward(model, [])

    def test_cache_matches_full(self, model):
        seq = [1, 5, 7, 22, 23, 25, 30]
        with torch.no_grad():
            full = slow_forward(model, seq)
            cache = KvCache.new(model.config)
            parts = [slow_forward(model, seq[:3], cache)]
            for t in range(4, len(seq) + 1):
                parts.append(slow_forward(model, seq[:t], cache))
        inc = torch.cat([p.token_logits for p in parts])
        assert (inc - full.token_logits).abs().max() <= 1e-5
        assert cache.slow.cursor == len(seq)

    def test_cache_prefix_immutable(self, model):
        cache = KvCache.new(model.config)
        with torch.no_grad():
            slow_forward(model, [1, 2, 3], cache)
            before = [k[:, :3].clone() for k in cache.slow.keys]
            slow_forward(model, [1, 2, 3, 25, 26], cache)
        for b, k in zip(before, cache.slow.keys):
            assert torch.equal(b, k[:, :3])

    def test_cache_overflow(self):
        m = init_model(small_config(max_seq=4))
        cache = KvCache.new(m.config)
        with torch.no_grad(), pytest.raises(CapacityError):
            slow_forward(m, [1, 2, 3, 4, 5], cache)

    def test_causality(self, model):
        seq = [1, 2, 3, 4, 5, 6]
        with torch.no_grad():
            a = slow_forward(model, seq).token_logits
            b = slow_forward(model, seq[:4] + [19, 0]).token_logits
        assert torch.equal(a[:4], b[:4])
        assert not torch.equal(a[4], b[4])


class TestLayers:
    def test_layernorm_standardizes(self):
        x = torch.randn(5, 16, dtype=torch.float64) * 3 + 2
        ln = torch.nn.LayerNorm(16, eps=0.0, elementwise_affine=False).double()
        y = ln(x)
        assert y.mean(-1).abs().max() <= 1e-6
        assert (y.var(-1, unbiased=False) - 1).abs().max() <= 1e-6

    def test_attention_rows_sum_to_one(self):
        q = torch.randn(2, 4, 8)
        k = torch.randn(2, 9, 8)
        p = attention_probs(q, k, start=5)
        assert (p.sum(-1) - 1).abs().max() <= 1e-6
        # query at absolute position 5 sees keys 0..5 only
        assert torch.all(p[:, 0, 6:] == 0)


class TestFast:
    def test_shape(self, model):
        h = torch.randn(16)
        assert fast_forward(model, h, []).shape == (9,)

    def test_deterministic(self, model):
        h = torch.randn(16)
        with torch.no_grad():
            assert torch.equal(fast_forward(model, h, [1, 2]), fast_forward(model, h, [1, 2]))

    def test_prefix_too_long(self, model):
        with pytest.raises(DomainError):
            fast_forward(model, torch.zeros(16), [0, 0, 0])

    def test_prefix_range(self, model):
        with pytest.raises(DataError):
            fast_forward(model, torch.zeros(16), [9])

    def test_cache_matches_full(self, model):
        h = torch.randn(16)
        prefix = [4, 7]
        cache = KvCache.new(model.config)
        with torch.no_grad():
            for g in range(3):
                cached = fast_forward(model, h, prefix[:g], cache)
                full = fast_forward(model, h, prefix[:g])
                assert (cached - full).abs().max() <= 1e-5


class TestSampler:
    def test_greedy_tie(self):
        assert sample([0.1, 0.9, 0.9], SamplerSpec()) == 1

    @pytest.mark.parametrize("seed", range(5))
    def test_top1_is_greedy(self, seed):
        logits = np.random.default_rng(seed).normal(size=10)
        assert sample(logits, SamplerSpec("top_k", k=1, seed=seed)) == int(np.argmax(logits))

    def test_top_k_monte_carlo(self):
        spec = SamplerSpec("top_k", k=2, temperature=1.0)
        draws = np.array([sample([0.0, 0.0], SamplerSpec("top_k", 2, 1.0, seed=s)) for s in range(100_000)])
        assert abs((draws == 0).mean() - 0.5) <= 0.01
        assert sample([0.0, 0.0], spec) in (0, 1)

    def test_top_k_restricts_support(self):
        rng = np.random.default_rng(0)
        spec = SamplerSpec("top_k", k=2, temperature=5.0)
        picks = {sample([0.0, 3.0, 2.9, -1.0], spec, rng) for _ in range(300)}
        assert picks == {1, 2}

    def test_temperature_matches_softmax(self):
        rng = np.random.default_rng(1)
        spec = SamplerSpec("top_k", k=3, temperature=0.5)
        logits = np.array([0.0, 0.5, 1.0])
        draws = np.array([sample(logits, spec, rng) for _ in range(50_000)])
        p = np.exp(logits / 0.5)
        p /= p.sum()
        np.testing.assert_allclose(np.bincount(draws, minlength=3) / draws.size, p, atol=0.01)

    def test_all_neg_inf(self):
        with pytest.raises(DomainError):
            sample([-np.inf, -np.inf], SamplerSpec())

    def test_nan(self):
        with pytest.raises(DomainError):
            sample([0.0, np.nan], SamplerSpec())

    @pytest.mark.parametrize("kw", [dict(mode="beam"), dict(k=0), dict(mode="top_k", k=2, temperature=0.0)])
    def test_bad_spec(self, kw):
        with pytest.raises(ConfigError):
            SamplerSpec(**kw)


class TestGenerate:
    def test_deterministic(self, model):
        a = list(generate(model, [1, 2, 3], max_frames=12))
        b = list(generate(model, [1, 2, 3], max_frames=12))
        assert a == b

    def test_seeded_top_k_deterministic(self, model):
        spec = SamplerSpec("top_k", k=4, temperature=1.3, seed=11)
        assert list(generate(model, [4, 5], spec, 10)) == list(generate(model, [4, 5], spec, 10))

    def test_forced_eos(self, model):
        stream = generate(force_eos(model), [1, 2, 3], max_frames=10)
        assert list(stream) == []
        assert stream.truncated is False

    def test_frame_contract(self, model):
        stream = generate(model, [1, 2], max_frames=8)
        frames = list(stream)
        for f in frames:
            assert len(f.codes) == 3
            assert all(0 <= c < 9 for c in f.codes)
            assert 0 <= f.semantic < 12
        if len(frames) == 8:
            assert stream.truncated

    def test_cached_equals_uncached(self, model):
        spec = SamplerSpec()
        assert list(generate(model, [3, 1, 4, 1, 5], spec, 10)) == list(
            generate(model, [3, 1, 4, 1, 5], spec, 10, use_cache=False)
        )

    def test_streaming_order(self, model):
        events = []
        stream = generate(model, [1, 2, 3], max_frames=6, events=events)
        for i, _ in enumerate(stream):
            events.append(("consumed", i, 0))
        names = [(e[0], e[1]) for e in events]
        n = stream.count
        assert n >= 2
        assert names.index(("consumed", 0)) < names.index(("frame_start", n - 1))
        for i in range(n):
            assert names.index(("frame_done", i)) < names.index(("consumed", i))
        stamps = [e[2] for e in events if e[0] != "consumed"]
        assert stamps == sorted(stamps)

    def test_bad_text(self, model):
        with pytest.raises(DataError):
            generate(model, [25])
        with pytest.raises(DomainError):
            generate(model, [])
        with pytest.raises(DomainError):
            generate(model, [1], max_frames=0)

    def test_overflow_raises(self):
        m = init_model(small_config(max_seq=6), seed=1)
        with pytest.raises(CapacityError):
            list(generate(m, [1, 2, 3], max_frames=20))
