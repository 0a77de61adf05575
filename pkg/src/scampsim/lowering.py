"""Compile a BnnModel into a plane-instruction program.

The lowered program expects the binary input image in block (0,0) of analog
register A (see HostPrep / make_input_state); it replicates the image into
every block, convolves all kernels simultaneously via whole-plane shifts and
per-tap masked accumulates, zeroes the contaminated block borders, applies
ReLU and the replicating 2x2 max-pool, and finally emits one global sum per
class. Class sums from execution equal 4x the dense reference scores because
the pooled plane keeps each maximum replicated over its 2x2 cell.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import PlaneGeometry
from .model import BnnModel
from .planes import (DEFAULT_ANALOG_REGS, DEFAULT_DIGITAL_REGS, ArrayState,
                     NoiseModel)
from .program import Instruction, PpaProgram

# Register roles. A stages the input and doubles as the conv row register
# once the replicated image lives in B; E is kept all-zero after the
# initial clear so masked copies from it implement selective zeroing.
REG_INPUT = "A"
REG_REPLICATED = "B"
REG_ACC = "C"
REG_TAP = "D"
REG_ZERO = "E"
REG_FC = "F"

MASK_POS = "R1"
MASK_NEG = "R2"
MASK_BORDER = "R3"
MASK_COL_EVEN = "R4"
MASK_COL_ODD = "R5"
MASK_ROW_EVEN = "R6"
MASK_ROW_ODD = "R7"
MASK_RELU = "R8"
MASK_FC = "R9"

REQUIRED_ANALOG = (REG_INPUT, REG_REPLICATED, REG_ACC, REG_TAP, REG_ZERO, REG_FC)
REQUIRED_DIGITAL = (MASK_POS, MASK_NEG, MASK_BORDER, MASK_COL_EVEN, MASK_COL_ODD,
                    MASK_ROW_EVEN, MASK_ROW_ODD, MASK_RELU, MASK_FC)

POOL_REPLICATION = 4  # each pooled maximum appears in all 4 cells of its 2x2 block


class LoweringError(ValueError):
    pass


@dataclass
class HostPrep:
    """Documented host-side preparation preceding program execution.

    The captured image is thresholded, majority-downsampled to one block and
    written into block (0,0) of `input_reg`; replication to the remaining
    blocks happens in the instruction stream.
    """

    input_reg: str
    block_size: int
    threshold: int = 127

    def describe(self) -> str:
        return (f"threshold >{self.threshold}, majority-downsample to "
                f"{self.block_size}x{self.block_size}, load into block (0,0) "
                f"of {self.input_reg}")


@dataclass
class LoweringPlan:
    registers: dict[str, str]
    instruction_counts: dict[str, int]
    stage_ranges: dict[str, tuple[int, int]]
    conv_budget: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "registers": self.registers,
            "instruction_counts": self.instruction_counts,
            "stage_ranges": {k: list(v) for k, v in self.stage_ranges.items()},
            "conv_budget": self.conv_budget,
        }, indent=2) + "\n"


# -- host-side input preparation -----------------------------------------


def prepare_input(img: np.ndarray, block_size: int = 64,
                  threshold: int = 127) -> np.ndarray:
    """Threshold a grayscale image and majority-downsample to one block.

    The image must be square with side a multiple of block_size. Each s x s
    cell becomes 1 iff strictly more than half its thresholded pixels are 1;
    an already block-sized binary image passes through unchanged.
    """
    img = np.asarray(img)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise LoweringError(f"expected a square grayscale image, got {img.shape}")
    side = img.shape[0]
    if side % block_size != 0:
        raise LoweringError(
            f"image side {side} is not a multiple of block size {block_size}"
        )
    s = side // block_size
    bits = (img > threshold).astype(np.int64)
    cells = bits.reshape(block_size, s, block_size, s).sum(axis=(1, 3))
    return (2 * cells > s * s).astype(np.uint8)


def make_input_state(image64: np.ndarray, geometry: PlaneGeometry | None = None,
                     mode: str = "ideal",
                     noise: NoiseModel | None = None) -> ArrayState:
    """Fresh ArrayState with the binary input placed per HostPrep."""
    geometry = geometry or PlaneGeometry()
    image64 = np.asarray(image64)
    bs = geometry.block_size
    if image64.shape != (bs, bs):
        raise LoweringError(f"input must be {bs}x{bs}, got {image64.shape}")
    if not np.all(np.isin(np.unique(image64), (0, 1))):
        raise LoweringError("input image must be strictly binary")
    state = ArrayState(geometry, mode=mode, noise=noise)
    full = np.zeros(geometry.shape, dtype=np.int64)
    full[:bs, :bs] = image64
    state.areg(REG_INPUT).values[:] = full
    return state


# -- mask pattern construction -------------------------------------------


def block_select_pattern(geometry: PlaneGeometry, selected: np.ndarray) -> np.ndarray:
    """Full-plane bit pattern with 1s over every selected block."""
    grid, bs = geometry.block_grid, geometry.block_size
    sel = np.asarray(selected).reshape(grid, grid).astype(np.uint8)
    return np.kron(sel, np.ones((bs, bs), dtype=np.uint8))


def border_pattern(geometry: PlaneGeometry, k: int) -> np.ndarray:
    """1s on the (k-1)-wide contaminated frame of every block (bottom/right,
    matching top-left window anchoring)."""
    bs = geometry.block_size
    block = np.zeros((bs, bs), dtype=np.uint8)
    if k > 1:
        block[bs - (k - 1):, :] = 1
        block[:, bs - (k - 1):] = 1
    return np.tile(block, (geometry.block_grid, geometry.block_grid))


def parity_pattern(geometry: PlaneGeometry, axis: str, parity: int) -> np.ndarray:
    h, w = geometry.shape
    out = np.zeros((h, w), dtype=np.uint8)
    if axis == "col":
        out[:, parity::2] = 1
    else:
        out[parity::2, :] = 1
    return out


def fc_negative_pattern(model: BnnModel, class_index: int) -> np.ndarray:
    """1 where the class's FC weight is -1, expanded to 2x2 pooled cells."""
    geometry = model.geometry
    grid, bs = geometry.block_grid, geometry.block_size
    neg = (model.fc_weights[class_index] == -1).astype(np.uint8)  # (nb, ps, ps)
    out = np.zeros(geometry.shape, dtype=np.uint8)
    for b in range(geometry.num_blocks):
        rs, cs = geometry.block_slices(b)
        out[rs, cs] = np.kron(neg[b], np.ones((2, 2), dtype=np.uint8))
    return out


# -- stage lowering ------------------------------------------------------


def lower_replicate(geometry: PlaneGeometry, k: int) -> tuple[list[Instruction], HostPrep]:
    """Copy block (0,0) of the input register into every block.

    Doubling scheme: shift the partially replicated plane by whole blocks
    and add, log2(grid) times per axis. Requires grid to be a power of two.
    """
    grid, bs = geometry.block_grid, geometry.block_size
    if grid & (grid - 1):
        raise LoweringError("block grid must be a power of two for replication")
    ins = [
        # keep REG_ZERO all-zero for every later masked zeroing
        Instruction("sub", dst=REG_ZERO, a=REG_ZERO, b=REG_ZERO),
        Instruction("copy", dst=REG_REPLICATED, a=REG_INPUT),
    ]
    span = bs
    while span < grid * bs:
        ins.append(Instruction("shift", dst=REG_TAP, a=REG_REPLICATED,
                               direction="S", steps=span))
        ins.append(Instruction("add", dst=REG_REPLICATED, a=REG_REPLICATED, b=REG_TAP))
        span *= 2
    span = bs
    while span < grid * bs:
        ins.append(Instruction("shift", dst=REG_TAP, a=REG_REPLICATED,
                               direction="E", steps=span))
        ins.append(Instruction("add", dst=REG_REPLICATED, a=REG_REPLICATED, b=REG_TAP))
        span *= 2
    return ins, HostPrep(REG_INPUT, bs)


def lower_conv(model: BnnModel) -> list[Instruction]:
    """Shift-and-masked-accumulate convolution of all kernels at once.

    Taps iterate row-major (dy outer, dx inner). Each tap contributes exactly
    one shift: tap (dy, 0) advances the row register one step north; taps
    (dy, dx>0) advance a per-row working copy one step west. A tap emits an
    add under the union of blocks whose kernel weight at that tap is +1 and a
    sub under the -1 union; one of the two is omitted when empty.
    """
    geometry, k = model.geometry, model.k
    ins = [Instruction("sub", dst=REG_ACC, a=REG_ACC, b=REG_ACC)]
    for dy in range(k):
        if dy == 0:
            ins.append(Instruction("shift", dst=REG_INPUT, a=REG_REPLICATED,
                                   direction="N", steps=0))
        else:
            ins.append(Instruction("shift", dst=REG_INPUT, a=REG_INPUT,
                                   direction="N", steps=1))
        for dx in range(k):
            if dx == 0:
                src = REG_INPUT
            else:
                if dx == 1:
                    ins.append(Instruction("copy", dst=REG_TAP, a=REG_INPUT))
                    ins.append(Instruction("shift", dst=REG_TAP, a=REG_TAP,
                                           direction="W", steps=1))
                else:
                    ins.append(Instruction("shift", dst=REG_TAP, a=REG_TAP,
                                           direction="W", steps=1))
                src = REG_TAP
            weights = model.kernels[:, dy, dx]
            pos = (weights == 1)
            neg = (weights == -1)
            if pos.any():
                ins.append(Instruction("pattern", dst=MASK_POS,
                                       pattern=block_select_pattern(geometry, pos)))
                ins.append(Instruction("add", dst=REG_ACC, a=REG_ACC, b=src,
                                       mask=MASK_POS))
            if neg.any():
                ins.append(Instruction("pattern", dst=MASK_NEG,
                                       pattern=block_select_pattern(geometry, neg)))
                ins.append(Instruction("sub", dst=REG_ACC, a=REG_ACC, b=src,
                                       mask=MASK_NEG))
    # zero the contaminated frame in one masked copy from the zero register
    ins.append(Instruction("pattern", dst=MASK_BORDER,
                           pattern=border_pattern(geometry, k)))
    ins.append(Instruction("copy", dst=REG_ACC, a=REG_ZERO, mask=MASK_BORDER))
    return ins


def lower_relu(geometry: PlaneGeometry) -> list[Instruction]:
    """Zero every negative accumulator pixel: flag nonnegatives, invert,
    masked copy from the zero register."""
    return [
        Instruction("thresh", dst=MASK_RELU, a=REG_ACC, value=-1),
        Instruction("logic", dst=MASK_RELU, a=MASK_RELU, logic="not"),
        Instruction("copy", dst=REG_ACC, a=REG_ZERO, mask=MASK_RELU),
    ]


def lower_maxpool(geometry: PlaneGeometry) -> list[Instruction]:
    """Replicating 2x2 max-pool: horizontal pass with even/odd column masks,
    then the same vertically. Even positions take their 2x2-cell partner via
    a westward shift (content moves west, so dst reads its east neighbour);
    odd positions then take the settled even value. Blocks have even sides so
    no pass crosses a cell or block boundary."""
    ins = []
    passes = [
        ("W", MASK_COL_EVEN, parity_pattern(geometry, "col", 0)),
        ("E", MASK_COL_ODD, parity_pattern(geometry, "col", 1)),
        ("N", MASK_ROW_EVEN, parity_pattern(geometry, "row", 0)),
        ("S", MASK_ROW_ODD, parity_pattern(geometry, "row", 1)),
    ]
    for direction, mask_reg, pattern in passes:
        ins.append(Instruction("pattern", dst=mask_reg, pattern=pattern))
        ins.append(Instruction("shift", dst=REG_TAP, a=REG_ACC,
                               direction=direction, steps=1))
        ins.append(Instruction("max", dst=REG_ACC, a=REG_ACC, b=REG_TAP,
                               mask=mask_reg))
    return ins


def lower_fc(model: BnnModel) -> list[Instruction]:
    """Per class: copy the pooled plane, negate under the class's -1 weight
    mask, global-sum. The replicated pooled plane makes each sum exactly 4x
    the dense reference score."""
    ins = []
    for c, name in enumerate(model.class_names):
        ins.append(Instruction("copy", dst=REG_FC, a=REG_ACC))
        ins.append(Instruction("pattern", dst=MASK_FC,
                               pattern=fc_negative_pattern(model, c)))
        ins.append(Instruction("neg", dst=REG_FC, a=REG_FC, mask=MASK_FC))
        ins.append(Instruction("gsum", a=REG_FC, label=name))
    return ins


def lower_model(model: BnnModel,
                analog_names: tuple[str, ...] = DEFAULT_ANALOG_REGS,
                digital_names: tuple[str, ...] = DEFAULT_DIGITAL_REGS
                ) -> tuple[PpaProgram, LoweringPlan]:
    """Concatenate all stages; deterministic for equal models."""
    missing_a = [r for r in REQUIRED_ANALOG if r not in analog_names]
    missing_d = [r for r in REQUIRED_DIGITAL if r not in digital_names]
    if missing_a or missing_d:
        raise LoweringError(
            "register budget exhausted: need analog "
            f"{list(REQUIRED_ANALOG)} and digital {list(REQUIRED_DIGITAL)}; "
            f"missing analog {missing_a}, digital {missing_d}"
        )
    stages: list[tuple[str, list[Instruction]]] = []
    try:
        rep, _prep = lower_replicate(model.geometry, model.k)
        stages.append(("replicate", rep))
        stages.append(("conv", lower_conv(model)))
        stages.append(("relu", lower_relu(model.geometry)))
        stages.append(("maxpool", lower_maxpool(model.geometry)))
        stages.append(("fc", lower_fc(model)))
    except LoweringError as e:
        raise LoweringError(f"stage {stages[-1][0] if stages else 'replicate'}: {e}") \
            from None

    instructions: list[Instruction] = []
    stage_ranges: dict[str, tuple[int, int]] = {}
    for name, seq in stages:
        start = len(instructions)
        instructions.extend(seq)
        stage_ranges[name] = (start, len(instructions))

    counts: dict[str, int] = {}
    for i in instructions:
        counts[i.opcode] = counts.get(i.opcode, 0) + 1
    conv_seq = stages[1][1]
    conv_budget = {
        "shifts": sum(1 for i in conv_seq if i.opcode == "shift"),
        "accumulates": sum(1 for i in conv_seq
                           if i.opcode in ("add", "sub") and i.mask is not None),
        "border_zeroing": sum(1 for i in conv_seq
                              if i.opcode == "copy" and i.mask == MASK_BORDER),
        "taps_with_positive": int(sum((model.kernels[:, dy, dx] == 1).any()
                                      for dy in range(model.k)
                                      for dx in range(model.k))),
        "taps_with_negative": int(sum((model.kernels[:, dy, dx] == -1).any()
                                      for dy in range(model.k)
                                      for dx in range(model.k))),
    }
    plan = LoweringPlan(
        registers={
            "input": REG_INPUT, "replicated": REG_REPLICATED, "accumulator": REG_ACC,
            "tap_scratch": REG_TAP, "zero": REG_ZERO, "fc_scratch": REG_FC,
            "mask_positive": MASK_POS, "mask_negative": MASK_NEG,
            "mask_border": MASK_BORDER, "mask_col_even": MASK_COL_EVEN,
            "mask_col_odd": MASK_COL_ODD, "mask_row_even": MASK_ROW_EVEN,
            "mask_row_odd": MASK_ROW_ODD, "mask_relu": MASK_RELU,
            "mask_fc": MASK_FC,
        },
        instruction_counts=counts,
        stage_ranges=stage_ranges,
        conv_budget=conv_budget,
    )
    return PpaProgram(instructions), plan
