"""Tests for module replacement: maps, masks, schedulers and hybrids."""

import numpy as np
import pytest

from theseus.core import tensor as T
from theseus.core.constants import SCHEDULER_BASE_RATES, SCHEDULER_SATURATION_STEPS
from theseus.core.errors import CompressionMapError, ParameterError
from theseus.core.model import encoder_forward, init_encoder
from theseus.core.replacement import (
    CompressionMap,
    ReplacementMask,
    ReplacementScheduler,
    assemble_successor,
    build_hybrid,
    enumerate_masks,
    equivalent_lr,
    hybrid_forward,
    lr_for_equivalent,
    mask_probability,
    replacement_rate,
    sample_mask,
    set_phase,
    truncate_predecessor,
)

GRID_B = tuple(SCHEDULER_BASE_RATES)
GRID_SATURATION = tuple(SCHEDULER_SATURATION_STEPS)


@pytest.fixture
def hybrid(generator, tiny_config):
    predecessor = generator.random_encoder(tiny_config, seed=4)
    return build_hybrid(predecessor, CompressionMap.uniform(tiny_config.n_layers, 2), seed=4)


class TestCompressionMap:
    """Layer grouping."""

    def test_uniform_groups(self):
        assert CompressionMap.uniform(4, 2).groups == [[0, 1], [2, 3]]

    def test_last_group_absorbs_remainder(self):
        assert CompressionMap.uniform(5, 2).groups == [[0, 1], [2, 3, 4]]

    def test_identity(self):
        assert CompressionMap.identity(3).groups == [[0], [1], [2]]

    def test_describe_and_parse(self):
        compression_map = CompressionMap([[0, 1, 2], [3]])
        assert compression_map.describe() == "0-2|3"
        assert CompressionMap.parse("0-2|3").groups == [[0, 1, 2], [3]]

    @pytest.mark.parametrize("groups", [[[0, 1], [1, 2, 3]], [[0], [2, 3]], [[1, 0], [2, 3]], [[0, 1], []], []])
    def test_validate_rejects_bad_partitions(self, groups):
        with pytest.raises(CompressionMapError):
            CompressionMap(groups).validate(4)

    def test_validate_rejects_incomplete_cover(self):
        with pytest.raises(CompressionMapError, match="cover"):
            CompressionMap([[0, 1]]).validate(4)

    def test_rejects_unknown_init(self):
        with pytest.raises(CompressionMapError):
            CompressionMap([[0]], init="random")

    def test_successor_depth(self):
        assert CompressionMap.uniform(6, 3, successor_layers_per_group=2).successor_depth == 4


class TestScheduler:
    """Replacing-rate schedules and the equivalent learning rate."""

    def test_constant(self):
        sched = ReplacementScheduler.constant(0.3)
        assert [replacement_rate(sched, t) for t in (0, 10, 10 ** 6)] == [0.3, 0.3, 0.3]

    def test_linear_saturates(self):
        sched = ReplacementScheduler.linear(k=0.01, b=0.3)
        assert replacement_rate(sched, 0) == 0.3
        assert replacement_rate(sched, 100) == 1.0
        assert ReplacementScheduler.linear(k=0.25, b=0.5).saturation_step() == 2
        assert ReplacementScheduler.linear(k=0.25, b=0.5).describe() == "linear(k=0.25, b=0.5, saturates at step 2)"
        assert ReplacementScheduler.constant(0.7).describe() == "constant(p=0.7)"

    def test_anti_linear_mirrors_linear(self):
        sched = ReplacementScheduler.anti_linear(k=0.01, b=0.3)
        assert replacement_rate(sched, 0) == pytest.approx(0.7)
        assert replacement_rate(sched, 500) == 0.0

    @pytest.mark.parametrize("b", GRID_B)
    @pytest.mark.parametrize("steps", GRID_SATURATION)
    def test_closed_form_on_grid(self, b, steps):
        linear = ReplacementScheduler.reaching_one_at(steps, b)
        anti = ReplacementScheduler.reaching_one_at(steps, b, kind="anti-linear")
        for t in range(0, 10 ** 6 + 1, 997):
            expected = min(1.0, linear.k * t + b)
            assert replacement_rate(linear, t) == expected
            assert replacement_rate(anti, t) == 1.0 - expected
        assert replacement_rate(linear, steps) == pytest.approx(1.0)
        saturated = linear.saturation_step()
        assert abs(saturated - steps) <= 1
        assert replacement_rate(linear, saturated) == 1.0
        assert replacement_rate(linear, saturated - 1) < 1.0

    @pytest.mark.slow
    def test_closed_form_every_step(self):
        sched = ReplacementScheduler.reaching_one_at(30000, 0.1)
        for t in range(10 ** 6):
            assert replacement_rate(sched, t) == min(1.0, sched.k * t + 0.1)

    def test_negative_step(self):
        with pytest.raises(ParameterError):
            replacement_rate(ReplacementScheduler.constant(0.5), -1)

    @pytest.mark.parametrize("kwargs", [
        {"kind": "constant", "p": 1.5},
        {"kind": "constant"},
        {"kind": "linear", "k": 0.0, "b": 0.3},
        {"kind": "linear", "k": 0.1, "b": -0.1},
        {"kind": "cosine", "p": 0.5},
    ])
    def test_invalid_schedulers(self, kwargs):
        with pytest.raises(ParameterError):
            ReplacementScheduler(**kwargs)

    @pytest.mark.parametrize("p", [0.0, 0.1, 0.37, 0.9, 1.0])
    def test_equivalent_lr_is_exact(self, p):
        assert equivalent_lr(1e-3, p) == p * 1e-3

    def test_lr_correction(self):
        assert lr_for_equivalent(1e-3, 0.5) == 2e-3
        assert lr_for_equivalent(1e-3, 1.0) == 1e-3
        with pytest.raises(ParameterError):
            lr_for_equivalent(1e-3, 0.0)

    def test_equivalent_lr_rejects_bad_rate(self):
        with pytest.raises(ParameterError):
            equivalent_lr(1e-3, 1.2)


class TestMasks:
    """Bernoulli module selection."""

    def test_extreme_rates(self, rng):
        assert sample_mask(5, 0.0, rng).tolist() == [0] * 5
        assert sample_mask(5, 1.0, rng).tolist() == [1] * 5

    def test_frequency_within_three_sigma(self):
        rng = np.random.default_rng(2020)
        n_batches, p = 10000, 0.5
        counts = np.zeros(4)
        for _ in range(n_batches):
            counts += sample_mask(4, p, rng).r
        bound = 3.0 * np.sqrt(p * (1.0 - p) / n_batches)
        assert np.all(np.abs(counts / n_batches - p) <= bound)

    def test_same_seed_same_masks(self):
        a = [sample_mask(3, 0.4, np.random.default_rng(1)).tolist() for _ in range(2)]
        assert a[0] == a[1]

    def test_rejects_non_binary(self):
        with pytest.raises(ParameterError):
            ReplacementMask([0, 2, 1])

    def test_enumeration_probabilities_sum_to_one(self):
        masks = list(enumerate_masks(3))
        assert len(masks) == 8
        assert masks[0].tolist() == [0, 0, 0] and masks[-1].tolist() == [1, 1, 1]
        assert sum(mask_probability(m, 0.6) for m in masks) == pytest.approx(1.0)

    def test_mask_probability(self):
        assert mask_probability([1, 0], 0.6) == pytest.approx(0.24)


class TestHybrid:
    """Hybrid construction, forward, phases and assembly."""

    def test_zero_mask_matches_predecessor(self, generator, tiny_config):
        predecessor = generator.random_encoder(tiny_config, seed=1)
        hybrid = build_hybrid(predecessor, CompressionMap.uniform(4, 2))
        for _ in range(100):
            tokens, mask = generator.random_tokens(3, 8, tiny_config.vocab_size)
            np.testing.assert_array_equal(
                hybrid_forward(hybrid, tokens, mask, ReplacementMask.zeros(2)).data,
                encoder_forward(predecessor, tokens, mask).data,
            )

    def test_identity_map_ones_matches_predecessor(self, generator, tiny_config):
        predecessor = generator.random_encoder(tiny_config, seed=2)
        hybrid = build_hybrid(predecessor, CompressionMap.identity(4))
        for _ in range(100):
            tokens, mask = generator.random_tokens(3, 8, tiny_config.vocab_size)
            np.testing.assert_array_equal(
                hybrid_forward(hybrid, tokens, mask, ReplacementMask.ones(4)).data,
                encoder_forward(predecessor, tokens, mask).data,
            )

    def test_assembled_matches_all_ones(self, hybrid, generator, tiny_config):
        for successor_layer in hybrid.pairs[0].scc:
            successor_layer["ffn.w1"].data += 0.05
        successor = assemble_successor(hybrid)
        assert successor.config.n_layers == 2
        for _ in range(100):
            tokens, mask = generator.random_tokens(3, 8, tiny_config.vocab_size)
            np.testing.assert_array_equal(
                encoder_forward(successor, tokens, mask).data,
                hybrid_forward(hybrid, tokens, mask, ReplacementMask.ones(2)).data,
            )

    def test_group_leading_init(self, generator, tiny_config):
        predecessor = generator.random_encoder(tiny_config, seed=5)
        hybrid = build_hybrid(predecessor, CompressionMap.uniform(4, 2))
        np.testing.assert_array_equal(hybrid.pairs[1].scc[0]["attn.wq"].data, predecessor.layers[2]["attn.wq"].data)

    def test_global_prefix_init(self, generator, tiny_config):
        predecessor = generator.random_encoder(tiny_config, seed=5)
        hybrid = build_hybrid(predecessor, CompressionMap.uniform(4, 2, init="global-prefix"))
        np.testing.assert_array_equal(hybrid.pairs[1].scc[0]["attn.wq"].data, predecessor.layers[1]["attn.wq"].data)

    def test_extra_successor_layers_are_fresh(self, tiny_encoder):
        hybrid = build_hybrid(tiny_encoder, CompressionMap([[0], [1, 2, 3]], successor_layers_per_group=2), seed=0)
        assert len(hybrid.pairs[0].scc) == 2
        np.testing.assert_array_equal(hybrid.pairs[1].scc[1]["ffn.w2"].data, tiny_encoder.layers[2]["ffn.w2"].data)
        assert not np.array_equal(hybrid.pairs[0].scc[1]["ffn.w2"].data, tiny_encoder.layers[1]["ffn.w2"].data)

    def test_build_leaves_predecessor_trainable(self, tiny_encoder):
        build_hybrid(tiny_encoder, CompressionMap.uniform(4, 2))
        assert not any(t.frozen for t in tiny_encoder.parameters())

    def test_replacement_phase_frozen_set(self, hybrid):
        assert all(t.frozen for t in hybrid.predecessor_parameters())
        assert all(t.frozen for t in hybrid.shared_parameters())
        assert not any(t.frozen for t in hybrid.successor_parameters())

    def test_phase_round_trip(self, hybrid):
        before = [t.frozen for t in hybrid.parameters()]
        set_phase(hybrid, "successor-finetune")
        assert not any(t.frozen for t in hybrid.shared_parameters())
        assert all(t.frozen for t in hybrid.predecessor_parameters())
        set_phase(hybrid, "replacement")
        assert [t.frozen for t in hybrid.parameters()] == before

    def test_unknown_phase(self, hybrid):
        with pytest.raises(ParameterError):
            set_phase(hybrid, "distill")

    def test_mask_length_checked(self, hybrid, tiny_batch):
        tokens, mask = tiny_batch
        with pytest.raises(ParameterError):
            hybrid_forward(hybrid, tokens, mask, [1, 0, 1])

    def test_only_selected_branch_gets_gradients(self, hybrid, tiny_batch):
        tokens, mask = tiny_batch
        for t in hybrid.trainable_parameters():
            t.grad = None
        with T.Tape() as tape:
            loss = T.cross_entropy(hybrid_forward(hybrid, tokens, mask, [1, 0]), [0, 1, 0, 1])
            tape.backward(loss)
        assert all(t.grad is not None for layer in hybrid.pairs[0].scc for t in layer.parameters())
        assert all(t.grad is None for layer in hybrid.pairs[1].scc for t in layer.parameters())
        assert all(t.grad is None for t in hybrid.predecessor_parameters())

    def test_copy_keeps_phase(self, hybrid):
        set_phase(hybrid, "successor-finetune")
        clone = hybrid.copy()
        assert clone.phase == "successor-finetune"
        clone.pairs[0].scc[0]["attn.wq"].data[0, 0] += 1.0
        assert clone.pairs[0].scc[0]["attn.wq"].data[0, 0] != hybrid.pairs[0].scc[0]["attn.wq"].data[0, 0]

    def test_truncate(self, tiny_encoder):
        truncated = truncate_predecessor(tiny_encoder, 2)
        assert truncated.config.n_layers == 2
        np.testing.assert_array_equal(truncated.layers[1]["attn.wv"].data, tiny_encoder.layers[1]["attn.wv"].data)
        with pytest.raises(ParameterError):
            truncate_predecessor(tiny_encoder, 5)


class TestExpectation:
    """Monte-Carlo training loss against exact enumeration over masks."""

    def test_sampled_mean_matches_enumeration(self, generator, tiny_config):
        config = tiny_config.with_layers(6)
        predecessor = generator.random_encoder(config, seed=8)
        hybrid = build_hybrid(predecessor, CompressionMap.uniform(6, 2))
        for pair in hybrid.pairs:
            for layer in pair.scc:
                for t in layer.parameters():
                    t.data += generator.rng.standard_normal(t.data.shape) * 0.2
        tokens, mask = generator.random_tokens(8, 8, config.vocab_size)
        labels = generator.rng.integers(0, 2, size=8)
        p = 0.6

        with T.no_grad():
            losses = {
                tuple(m.tolist()): T.cross_entropy(hybrid_forward(hybrid, tokens, mask, m), labels).item()
                for m in enumerate_masks(3)
            }
        exact = sum(mask_probability(list(bits), p) * loss for bits, loss in losses.items())

        rng = np.random.default_rng(31)
        samples = np.array([losses[tuple(sample_mask(3, p, rng).tolist())] for _ in range(20000)])
        standard_error = samples.std(ddof=1) / np.sqrt(samples.size)
        assert len(set(losses.values())) > 1
        assert abs(samples.mean() - exact) <= 3.0 * standard_error

    def test_forward_leaves_weights_untouched(self, tiny_config):
        model = init_encoder(tiny_config, seed=0)
        hybrid = build_hybrid(model, CompressionMap.uniform(4, 2))
        before = [t.data.copy() for t in hybrid.parameters()]
        tokens = np.full((2, 8), 4)
        with T.no_grad():
            for m in enumerate_masks(2):
                hybrid_forward(hybrid, tokens, None, m)
        for old, t in zip(before, hybrid.parameters()):
            np.testing.assert_array_equal(old, t.data)
