"""Model construction, residual-stream semantics, and parameter accounting."""

import numpy as np
import pytest

from l3prune import ModelConfig, count_params, forward_all, init, prune_layers
from l3prune.errors import L3PruneError
from l3prune.model import ConfigError, TokenBatch
from l3prune.prune import PruneSpec
from l3prune import numeric

from helpers import tiny_config, tiny_model


def _batch(*seqs):
    return TokenBatch.from_sequences([list(s) for s in seqs])


class TestConfig:
    def test_round_trip(self):
        cfg = tiny_config()
        assert ModelConfig.from_text(cfg.to_text()) == cfg

    def test_heads_must_divide(self):
        with pytest.raises(ConfigError):
            tiny_config(d_model=8, n_heads=3)

    def test_head_dim_must_be_even(self):
        with pytest.raises(ConfigError):
            tiny_config(d_model=12, n_heads=4)

    @pytest.mark.parametrize("field", ["vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_seq_len"])
    def test_positive_fields(self, field):
        with pytest.raises(ConfigError):
            tiny_config(**{field: 0})


class TestInit:
    def test_same_seed_bit_identical(self):
        m1, m2 = tiny_model(), tiny_model()
        for (n1, t1), (n2, t2) in zip(m1.named_tensors(), m2.named_tensors()):
            assert n1 == n2
            assert np.array_equal(t1.data, t2.data)

    def test_layer_count(self):
        assert len(tiny_model(n_layers=4).layers) == 4

    def test_different_seed_differs(self):
        m1 = tiny_model(seed=1)
        m2 = tiny_model(seed=2)
        assert not np.array_equal(m1.token_embedding.data, m2.token_embedding.data)


class TestForwardAll:
    def test_embedding_state_is_table_row(self):
        m = tiny_model()
        hs = forward_all(m, _batch([7]))
        np.testing.assert_array_equal(hs.per_layer[0].data[0, 0], m.token_embedding.data[7])

    def test_returns_all_states(self):
        m = tiny_model(n_layers=4)
        hs = forward_all(m, _batch([1, 2, 3]))
        assert hs.n_layers == 4
        assert len(hs.per_layer) == 5
        assert hs.per_layer[2].shape == (1, 3, 16)

    def test_causality(self):
        """Editing token j never changes states at positions before j."""
        m = tiny_model()
        base = forward_all(m, _batch([1, 2, 3, 4, 5]))
        edited = forward_all(m, _batch([1, 2, 3, 9, 5]))
        for layer in range(m.config.n_layers + 1):
            np.testing.assert_array_equal(
                base.per_layer[layer].data[:, :3], edited.per_layer[layer].data[:, :3]
            )
        # the edit does reach the edited position, so the check has power
        assert not np.array_equal(
            base.per_layer[1].data[:, 3], edited.per_layer[1].data[:, 3]
        )

    def test_prefix_equivalence(self):
        """The load-bearing pruning oracle: a k-layer prune of the same weights
        reproduces the full model's state k exactly, for every k."""
        m = tiny_model(n_layers=5)
        batch = _batch([3, 1, 4, 1, 5], [9, 2, 6])
        full = forward_all(m, batch)
        for k in range(1, 6):
            pruned, _ = prune_layers(m, PruneSpec.by_layers(k))
            cut = forward_all(pruned, batch)
            assert np.array_equal(cut.per_layer[k].data, full.per_layer[k].data)

    def test_residual_additivity(self):
        """Zeroing block weights turns that block into the identity, bitwise."""
        m = tiny_model()
        for _, t in m.layers[1].named_tensors():
            t.data = np.zeros_like(t.data)
        hs = forward_all(m, _batch([1, 2, 3]))
        assert np.array_equal(hs.per_layer[2].data, hs.per_layer[1].data)
        assert not np.array_equal(hs.per_layer[1].data, hs.per_layer[0].data)

    def test_out_of_range_token(self):
        with pytest.raises(L3PruneError, match="vocab"):
            forward_all(tiny_model(), _batch([64]))

    def test_empty_sequence(self):
        with pytest.raises(L3PruneError):
            _batch([])

    def test_too_long_sequence(self):
        m = tiny_model(max_seq_len=4)
        with pytest.raises(L3PruneError, match="max_seq_len"):
            forward_all(m, _batch([1, 2, 3, 4, 5]))

    def test_one_pass_cost(self):
        """forward_all runs each block once: 9 matmuls per layer, not per layer^2."""
        m = tiny_model(n_layers=6)
        numeric.reset_op_counts()
        forward_all(m, _batch([1, 2, 3, 4]))
        assert numeric.op_counts()["matmul"] == 9 * 6


class TestCountParams:
    def test_hand_sum(self):
        cfg = ModelConfig(
            vocab_size=100, d_model=16, n_layers=2, n_heads=2, d_ff=32,
            max_seq_len=8, seed=0,
        )
        m = init(cfg)
        by_name = sum(int(np.prod(t.data.shape)) for _, t in m.named_tensors())
        embed = 100 * 16
        per_block = 4 * 16 * 16 + 2 * 16 + 3 * 16 * 32
        final = 16
        assert count_params(m) == by_name == embed + 2 * per_block + final == 6800

    def test_block_pruning_halves_block_params(self):
        m = tiny_model(n_layers=4)
        half, _ = prune_layers(m, PruneSpec.by_percent(0.5))
        embed_and_norm = m.token_embedding.data.size + m.final_norm.data.size
        full_blocks = count_params(m) - embed_and_norm
        half_blocks = count_params(half) - embed_and_norm
        assert half_blocks * 2 == full_blocks

    def test_published_ratio_keeps_embedding_premium(self):
        # Table-style check on the published numbers: 25 of 32 layers keeps
        # 5.9B of 7.5B parameters, ~78%, above the bare layer ratio because
        # the embedding does not shrink.
        assert abs(5.9 / 7.5 - 0.78) < 0.01
        assert 5.9 / 7.5 > 25 / 32


class TestTokenBatch:
    def test_padding_and_lengths(self):
        b = _batch([1, 2], [3, 4, 5])
        assert b.ids.shape == (2, 3)
        assert b.ids[0, 2] == 0
        assert list(b.lengths) == [2, 3]
