import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scampsim.model import (BnnModel, ModelError, argmax, load_weights,
                            random_model, reference_infer, save_weights)


def brute_force_infer(model, x):
    """Independent loop-nest oracle: plain Python, no shared code with the
    vectorized implementation."""
    bs, k = model.geometry.block_size, model.k
    nb = model.geometry.num_blocks
    conv = [[[0] * bs for _ in range(bs)] for _ in range(nb)]
    for b in range(nb):
        for r in range(bs):
            for c in range(bs):
                if r + k > bs or c + k > bs:
                    continue  # window leaves the block: output stays zero
                acc = 0
                for dy in range(k):
                    for dx in range(k):
                        acc += int(model.kernels[b, dy, dx]) * int(x[r + dy, c + dx])
                conv[b][r][c] = acc
    pooled = [[[0] * (bs // 2) for _ in range(bs // 2)] for _ in range(nb)]
    for b in range(nb):
        for r in range(0, bs, 2):
            for c in range(0, bs, 2):
                vals = [max(0, conv[b][r + i][c + j])
                        for i in range(2) for j in range(2)]
                pooled[b][r // 2][c // 2] = max(vals)
    scores = []
    for cl in range(model.num_classes):
        s = 0
        for b in range(nb):
            for i in range(bs // 2):
                for j in range(bs // 2):
                    s += int(model.fc_weights[cl, b, i, j]) * pooled[b][i][j]
        scores.append(s)
    return scores


class TestArgmax:
    def test_tie_breaks_to_lowest_index(self):
        assert argmax([5, 5, 3]) == 0

    def test_plain_max(self):
        assert argmax([1, 9, 2]) == 1

    def test_negatives(self):
        assert argmax([-4, -2, -7]) == 1

    def test_empty_rejected(self):
        with pytest.raises(ModelError):
            argmax([])


class TestReferenceInfer:
    def test_all_zero_input(self):
        m = random_model(seed=1)
        scores = reference_infer(m, np.zeros((64, 64), dtype=np.uint8))
        assert scores.sums == [0, 0, 0]
        assert scores.predicted == 0  # tie-break to index 0

    def test_all_ones_input_unit_kernels(self):
        m = random_model(seed=1)
        m = BnnModel(np.ones_like(m.kernels), m.fc_weights, m.class_names,
                     m.geometry)
        _, inter = reference_infer(m, np.ones((64, 64), dtype=np.uint8),
                                   return_intermediates=True)
        k2 = m.k * m.k
        interior = inter["conv"][:, : 64 - m.k + 1, : 64 - m.k + 1]
        assert np.all(interior == k2)
        assert np.all(inter["pooled"][:, : 30, : 30] == k2)

    def test_non_binary_input_rejected(self):
        m = random_model(seed=1)
        with pytest.raises(ModelError):
            reference_infer(m, np.full((64, 64), 2))

    @pytest.mark.parametrize("seed", [0, 7, 99])
    def test_matches_brute_force_loop_nest(self, seed):
        rng = np.random.default_rng(seed)
        m = random_model(seed=seed)
        x = rng.integers(0, 2, size=(64, 64))
        scores = reference_infer(m, x)
        assert scores.sums == brute_force_infer(m, x)

    def test_is_pure(self, rng):
        m = random_model(seed=4)
        x = rng.integers(0, 2, size=(64, 64))
        assert reference_infer(m, x).sums == reference_infer(m, x).sums

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_conv_range_bound(self, seed):
        rng = np.random.default_rng(seed)
        m = random_model(seed=seed)
        x = rng.integers(0, 2, size=(64, 64))
        _, inter = reference_infer(m, x, return_intermediates=True)
        k2 = m.k * m.k
        assert inter["conv"].min() >= -k2 and inter["conv"].max() <= k2
        assert inter["relu"].min() >= 0

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=15, deadline=None)
    def test_fc_sign_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        m = random_model(seed=seed)
        x = rng.integers(0, 2, size=(64, 64))
        flipped = BnnModel(m.kernels, -m.fc_weights, m.class_names, m.geometry)
        assert reference_infer(flipped, x).sums == \
            [-s for s in reference_infer(m, x).sums]

    def test_argmax_invariant_under_positive_scaling(self, rng):
        m = random_model(seed=5)
        x = rng.integers(0, 2, size=(64, 64))
        scores = reference_infer(m, x)
        assert argmax([4 * s for s in scores.sums]) == scores.predicted


class TestWeightsDocument:
    def test_round_trip_is_exact(self):
        m = random_model(seed=11)
        assert load_weights(save_weights(m)) == m

    def test_zero_weight_rejected(self):
        m = random_model(seed=2)
        doc = save_weights(m).replace("[[[ ", "").replace("1", "1")
        import json
        parsed = json.loads(doc)
        parsed["kernels"][0][0][0] = 0
        with pytest.raises(ModelError, match="kernels"):
            load_weights(json.dumps(parsed))

    def test_wrong_kernel_count_rejected(self):
        import json
        parsed = json.loads(save_weights(random_model(seed=2)))
        parsed["kernels"] = parsed["kernels"][:15]
        with pytest.raises(ModelError, match="kernels"):
            load_weights(json.dumps(parsed))

    def test_version_mismatch_rejected(self):
        import json
        parsed = json.loads(save_weights(random_model(seed=2)))
        parsed["version"] = 99
        with pytest.raises(ModelError, match="version"):
            load_weights(json.dumps(parsed))

    def test_missing_field_named(self):
        import json
        parsed = json.loads(save_weights(random_model(seed=2)))
        del parsed["fc"]
        with pytest.raises(ModelError, match="fc"):
            load_weights(json.dumps(parsed))

    def test_fc_weight_count_enforced(self):
        m = random_model(seed=3)
        per_class = m.fc_weights.shape[1] * m.fc_weights.shape[2] * m.fc_weights.shape[3]
        assert per_class == 16 * 32 * 32
