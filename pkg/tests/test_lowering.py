import numpy as np
import pytest

from scampsim.geometry import PlaneGeometry
from scampsim.lowering import (LoweringError, border_pattern,
                               fc_negative_pattern, lower_conv, lower_fc,
                               lower_maxpool, lower_model, lower_relu,
                               lower_replicate, make_input_state,
                               prepare_input)
from scampsim.model import BnnModel, random_model, reference_infer
from scampsim.planes import ArrayState
from scampsim.program import PpaProgram, disassemble, execute


def run_instructions(instructions, state):
    return execute(PpaProgram(instructions), state)


def replicated_state(x, geometry=None):
    state = make_input_state(x, geometry)
    rep, _ = lower_replicate(state.geometry, 4)
    run_instructions(rep, state)
    return state


class TestPrepareInput:
    def test_majority_downsample_256(self, rng):
        img = (rng.integers(0, 2, size=(256, 256)) * 255).astype(np.uint8)
        out = prepare_input(img)
        assert out.shape == (64, 64)
        # independent per-cell majority check on a sample of cells
        bits = img > 127
        for r in range(0, 64, 7):
            for c in range(0, 64, 9):
                cell = bits[4 * r:4 * r + 4, 4 * c:4 * c + 4]
                assert out[r, c] == (1 if cell.sum() > 8 else 0)

    def test_identity_on_block_sized_binary(self, rng):
        x = rng.integers(0, 2, size=(64, 64)).astype(np.uint8)
        assert np.array_equal(prepare_input(x * 255), x)

    def test_non_multiple_rejected(self):
        with pytest.raises(LoweringError):
            prepare_input(np.zeros((100, 100)))


class TestReplicate:
    def test_zero_input(self):
        state = replicated_state(np.zeros((64, 64), dtype=np.uint8))
        assert np.all(state.areg("B").values == 0)

    def test_single_pixel_tiles_sixteen_times(self):
        x = np.zeros((64, 64), dtype=np.uint8)
        x[3, 5] = 1
        state = replicated_state(x)
        vals = state.areg("B").values
        assert vals.sum() == 16
        for r in range(4):
            for c in range(4):
                assert vals[64 * r + 3, 64 * c + 5] == 1

    def test_every_block_equals_input(self, rng):
        x = rng.integers(0, 2, size=(64, 64))
        state = replicated_state(x)
        vals = state.areg("B").values
        g = state.geometry
        for b in range(g.num_blocks):
            rs, cs = g.block_slices(b)
            assert np.array_equal(vals[rs, cs], x)


class TestConv:
    def test_all_plus_kernels_all_ones_input(self):
        m = random_model(seed=0)
        m = BnnModel(np.ones_like(m.kernels), m.fc_weights, m.class_names,
                     m.geometry)
        state = replicated_state(np.ones((64, 64), dtype=np.uint8))
        run_instructions(lower_conv(m), state)
        acc = state.areg("C").values
        g = m.geometry
        for b in range(g.num_blocks):
            rs, cs = g.block_slices(b)
            block = acc[rs, cs]
            assert np.all(block[: 61, : 61] == 16)
            assert np.all(block[61:, :] == 0) and np.all(block[:, 61:] == 0)

    def test_negated_kernel_negates_block(self, rng):
        m = random_model(seed=1)
        kernels = m.kernels.copy()
        kernels[1] = -kernels[0]
        m = BnnModel(kernels, m.fc_weights, m.class_names, m.geometry)
        x = rng.integers(0, 2, size=(64, 64))
        state = replicated_state(x)
        run_instructions(lower_conv(m), state)
        acc = state.areg("C").values
        g = m.geometry
        b0 = acc[g.block_slices(0)]
        b1 = acc[g.block_slices(1)]
        assert np.array_equal(b1, -b0)

    @pytest.mark.parametrize("seed", [2, 17])
    def test_matches_oracle_conv_per_block(self, seed, rng):
        m = random_model(seed=seed)
        x = rng.integers(0, 2, size=(64, 64))
        state = replicated_state(x)
        run_instructions(lower_conv(m), state)
        acc = state.areg("C").values
        _, inter = reference_infer(m, x, return_intermediates=True)
        g = m.geometry
        for b in range(g.num_blocks):
            rs, cs = g.block_slices(b)
            assert np.array_equal(acc[rs, cs], inter["conv"][b])

    def test_instruction_count_formula(self):
        m = random_model(seed=3)
        _, plan = lower_model(m)
        k2 = m.k * m.k
        budget = plan.conv_budget
        assert budget["shifts"] == k2
        assert budget["accumulates"] == (budget["taps_with_positive"]
                                         + budget["taps_with_negative"])
        assert budget["border_zeroing"] == 1

    def test_mask_completeness_per_tap(self):
        # +1 mask OR -1 mask covers all blocks for every tap (weights never 0)
        m = random_model(seed=4)
        for dy in range(m.k):
            for dx in range(m.k):
                w = m.kernels[:, dy, dx]
                assert np.all((w == 1) | (w == -1))


class TestRelu:
    def _run(self, values):
        state = ArrayState(PlaneGeometry())
        state.areg("C").values[:] = values
        # REG_ZERO must hold zeros, as the program prelude guarantees
        run_instructions(lower_relu(state.geometry), state)
        return state.areg("C").values

    def test_all_negative_becomes_zero(self):
        assert np.all(self._run(np.full((256, 256), -3)) == 0)

    def test_positive_unchanged(self):
        assert np.all(self._run(np.full((256, 256), 7)) == 7)

    def test_mixed_matches_scalar_oracle(self, rng):
        vals = rng.integers(-20, 20, size=(256, 256))
        assert np.array_equal(self._run(vals), np.maximum(vals, 0))


class TestMaxpool:
    def _run(self, values):
        state = ArrayState(PlaneGeometry())
        state.areg("C").values[:] = values
        run_instructions(lower_maxpool(state.geometry), state)
        return state.areg("C").values

    def test_constant_plane_unchanged(self):
        assert np.all(self._run(np.full((256, 256), 5)) == 5)

    def test_single_cell_max_replicates(self):
        vals = np.zeros((256, 256), dtype=np.int64)
        vals[11, 11] = 9  # cell (10..11, 10..11)
        out = self._run(vals)
        assert np.all(out[10:12, 10:12] == 9)

    def test_every_cell_uniform_and_correct(self, rng):
        vals = rng.integers(0, 30, size=(256, 256))
        out = self._run(vals)
        cells = vals.reshape(128, 2, 128, 2)
        maxes = cells.max(axis=(1, 3))
        expect = np.kron(maxes, np.ones((2, 2), dtype=np.int64))
        assert np.array_equal(out, expect)


class TestFc:
    def test_all_plus_weights_count_pixels(self):
        m = random_model(seed=5)
        m = BnnModel(m.kernels, np.ones_like(m.fc_weights), m.class_names,
                     m.geometry)
        state = ArrayState(m.geometry)
        state.areg("C").values[:] = 1
        _, sums = run_instructions(lower_fc(m), state)
        assert sums == [256 * 256] * 3

    def test_sign_symmetry(self, rng):
        m = random_model(seed=6)
        flipped = BnnModel(m.kernels, -m.fc_weights, m.class_names, m.geometry)
        plane = rng.integers(0, 16, size=(256, 256))
        s1 = ArrayState(m.geometry)
        s1.areg("C").values[:] = plane
        s2 = ArrayState(m.geometry)
        s2.areg("C").values[:] = plane
        _, sums = run_instructions(lower_fc(m), s1)
        _, neg_sums = run_instructions(lower_fc(flipped), s2)
        assert neg_sums == [-s for s in sums]

    def test_fc_pattern_expands_2x2(self):
        m = random_model(seed=7)
        pat = fc_negative_pattern(m, 0)
        neg = (m.fc_weights[0] == -1)
        g = m.geometry
        for b in range(0, g.num_blocks, 5):
            rs, cs = g.block_slices(b)
            block = pat[rs, cs]
            for i in range(0, 32, 7):
                for j in range(0, 32, 9):
                    assert np.all(block[2 * i:2 * i + 2, 2 * j:2 * j + 2]
                                  == neg[b, i, j])


class TestLowerModel:
    def test_execution_matches_oracle_times_four(self, rng):
        m = random_model(seed=8)
        prog, _ = lower_model(m)
        for _ in range(5):
            x = rng.integers(0, 2, size=(64, 64))
            _, sums = execute(prog, make_input_state(x))
            ref = reference_infer(m, x)
            assert sums == [4 * s for s in ref.sums]

    def test_lowering_twice_gives_identical_listings(self):
        m = random_model(seed=9)
        p1, _ = lower_model(m)
        p2, _ = lower_model(m)
        assert disassemble(p1) == disassemble(p2)

    def test_single_class_model_has_one_gsum(self):
        m = random_model(seed=10, num_classes=1)
        prog, _ = lower_model(m)
        assert sum(1 for i in prog.instructions if i.opcode == "gsum") == 1
        assert prog.sum_labels == ["class0"]

    def test_register_budget_exhaustion_reported(self):
        m = random_model(seed=11)
        with pytest.raises(LoweringError, match="register budget"):
            lower_model(m, analog_names=("A", "B", "C"))

    def test_border_pattern_width(self):
        g = PlaneGeometry()
        pat = border_pattern(g, 4)
        block = pat[:64, :64]
        assert np.all(block[61:, :] == 1)
        assert np.all(block[:, 61:] == 1)
        assert np.all(block[:61, :61] == 0)

    def test_plan_serializes(self):
        import json
        _, plan = lower_model(random_model(seed=12))
        doc = json.loads(plan.to_json())
        assert "registers" in doc and "instruction_counts" in doc
