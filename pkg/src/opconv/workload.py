"""Convolution workloads seen as streams of row-vector MAC operations.

A direct-convolution layer is executed as sliding-window dot products: every
operation multiplies one row of an input window (length filter_w) with the
matching filter row and accumulates into one output element.  This module
owns layer shapes, the flat address-space layout of the three tensor
regions, operation enumeration, packing of operations into warps, and the
static block-pair reuse analysis.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

WORD_SIZE = 4

# The three tensor regions live in disjoint address ranges.
INPUT_BASE = 0x0000_0000
WEIGHT_BASE = 0x4000_0000
OUTPUT_BASE = 0x8000_0000
REGION_SPAN = 0x4000_0000


class ConfigError(ValueError):
    """Inconsistent layer dimensions or configuration values."""


class Pass(str, Enum):
    FORWARD = "forward"
    BACKWARD_INPUT = "backward_input"
    BACKWARD_WEIGHT = "backward_weight"


class Region(str, Enum):
    INPUT = "input"
    WEIGHT = "weight"
    OUTPUT = "output"


@dataclass(frozen=True)
class LayerSpec:
    """Shape of one direct-convolution layer.

    in_height/in_width are the unpadded activation dimensions; padding is
    materialized in the input region as stored zeros so that every operand
    vector is a contiguous in-region read.
    """

    name: str
    in_channels: int
    out_channels: int
    in_height: int
    in_width: int
    filter_h: int
    filter_w: int
    stride: int = 1
    padding: int = 0
    pass_kind: Pass = Pass.FORWARD
    word_size: int = WORD_SIZE

    def __post_init__(self):
        for f in ("in_channels", "out_channels", "in_height", "in_width",
                  "filter_h", "filter_w", "stride", "word_size"):
            if getattr(self, f) < 1:
                raise ConfigError(f"{self.name}: {f} must be positive")
        if self.padding < 0:
            raise ConfigError(f"{self.name}: padding must be >= 0")
        if self.filter_h > self.padded_h or self.filter_w > self.padded_w:
            raise ConfigError(f"{self.name}: filter larger than padded input")
        if (self.padded_h - self.filter_h) % self.stride != 0 or \
           (self.padded_w - self.filter_w) % self.stride != 0:
            raise ConfigError(f"{self.name}: window sweep does not divide stride")

    @property
    def padded_h(self):
        return self.in_height + 2 * self.padding

    @property
    def padded_w(self):
        return self.in_width + 2 * self.padding

    @property
    def out_h(self):
        return (self.padded_h - self.filter_h) // self.stride + 1

    @property
    def out_w(self):
        return (self.padded_w - self.filter_w) // self.stride + 1

    def op_count(self):
        return self.out_h * self.out_w * self.out_channels * self.in_channels * self.filter_h

    def mac_count(self):
        return self.op_count() * self.filter_w


@dataclass(frozen=True)
class TensorLayout:
    base_address: int
    region: Region
    row_stride: int      # bytes between consecutive rows
    channel_stride: int  # bytes between consecutive channels


@dataclass(frozen=True)
class LayerGeometry:
    """LayerSpec plus the concrete layouts of its three regions."""

    layer: LayerSpec
    input: TensorLayout
    weight: TensorLayout
    output: TensorLayout

    # weight rows for all filters of one output channel occupy
    # in_channels * channel_stride bytes
    @property
    def weight_filter_stride(self):
        return self.layer.in_channels * self.weight.channel_stride

    @property
    def output_channel_stride(self):
        return self.output.channel_stride

    def input_vec_addr(self, ic, prow, pcol):
        return (self.input.base_address + ic * self.input.channel_stride
                + prow * self.input.row_stride + pcol * self.layer.word_size)

    def weight_vec_addr(self, oc, ic, fr):
        return (self.weight.base_address + oc * self.weight_filter_stride
                + ic * self.weight.channel_stride + fr * self.weight.row_stride)

    def output_addr(self, oc, oy, ox):
        return (self.output.base_address + oc * self.output.channel_stride
                + oy * self.output.row_stride + ox * self.layer.word_size)

    def input_extent(self):
        return self.layer.in_channels * self.input.channel_stride

    def weight_extent(self):
        return self.layer.out_channels * self.weight_filter_stride

    def output_extent(self):
        return self.layer.out_channels * self.output.channel_stride


def make_layouts(layer, row_pitch=0, input_base=INPUT_BASE,
                 weight_base=WEIGHT_BASE, output_base=OUTPUT_BASE):
    """Build the three region layouts for a layer.

    row_pitch = 0 packs input rows back to back (row_stride = padded width in
    bytes).  A positive row_pitch rounds the input row stride up to a multiple
    of that pitch, mirroring pitched device allocations where every row starts
    a fixed power-of-two distance apart.
    """
    word = layer.word_size
    packed_row = layer.padded_w * word
    if row_pitch < 0:
        raise ConfigError("row_pitch must be >= 0")
    if row_pitch:
        row_stride = -(-packed_row // row_pitch) * row_pitch
    else:
        row_stride = packed_row
    inp = TensorLayout(input_base, Region.INPUT, row_stride,
                       layer.padded_h * row_stride)
    w_row = layer.filter_w * word
    wgt = TensorLayout(weight_base, Region.WEIGHT, w_row, layer.filter_h * w_row)
    out = TensorLayout(output_base, Region.OUTPUT, layer.out_w * word,
                       layer.out_h * layer.out_w * word)
    geom = LayerGeometry(layer, inp, wgt, out)
    if geom.input_extent() > weight_base - input_base or \
       geom.weight_extent() > output_base - weight_base or \
       geom.output_extent() > REGION_SPAN:
        raise ConfigError(f"{layer.name}: tensor regions would overlap")
    return geom


@dataclass(slots=True)
class VectorMacOp:
    """One row-vector dot product: input row slice x filter row -> one output add."""

    input_vec_addr: int
    weight_vec_addr: int
    length: int
    output_addr: int
    warp_id: int = -1
    lane_id: int = -1
    sm_hint: int = -1


def enumerate_ops(layer, geom):
    """Yield every VectorMacOp of a layer.

    Windows are walked row-major per output channel (sliding horizontally,
    then down); within one window the in_channels * filter_h row products are
    emitted in channel-then-row order, so all ops of one output element are
    consecutive.
    """
    if geom.layer != layer:
        raise ConfigError("geometry was built for a different layer")
    s = layer.stride
    word = layer.word_size
    for oc in range(layer.out_channels):
        for oy in range(layer.out_h):
            for ox in range(layer.out_w):
                out_addr = geom.output_addr(oc, oy, ox)
                for ic in range(layer.in_channels):
                    base = geom.input_vec_addr(ic, oy * s, ox * s)
                    waddr = geom.weight_vec_addr(oc, ic, 0)
                    for fr in range(layer.filter_h):
                        yield VectorMacOp(base + fr * geom.input.row_stride,
                                          waddr + fr * geom.weight.row_stride,
                                          layer.filter_w, out_addr)


@dataclass
class WarpProgram:
    """Up to warp_size lanes, one output element per lane.

    Ops issue one at a time in lane order, so a warp walks its windows
    left to right and then down, exactly the sliding-window traversal.
    """

    warp_id: int
    sm_id: int
    lanes: list = field(default_factory=list)

    @property
    def ops(self):
        flat = []
        for lane in self.lanes:
            flat.extend(lane)
        return flat

    def op_count(self):
        return sum(len(lane) for lane in self.lanes)


def map_to_warps(ops, warp_size, n_sms):
    """Pack an op stream into warps and deal warps round-robin over SMs.

    Consecutive output elements (runs of ops sharing output_addr) become
    consecutive lanes; every warp_size lanes start a new warp.
    """
    if warp_size < 1 or n_sms < 1:
        raise ConfigError("warp_size and n_sms must be positive")
    programs = []
    cur = None
    cur_out = None
    for op in ops:
        if cur is None or (op.output_addr != cur_out and len(cur.lanes) == warp_size):
            wid = len(programs)
            cur = WarpProgram(wid, wid % n_sms)
            programs.append(cur)
            cur_out = None
        if op.output_addr != cur_out:
            cur.lanes.append([])
            cur_out = op.output_addr
        op.warp_id = cur.warp_id
        op.lane_id = len(cur.lanes) - 1
        op.sm_hint = cur.sm_id
        cur.lanes[-1].append(op)
    return programs


def block_pair_of(op, block_size):
    """The (input block, weight block) pair holding this op's operands."""
    if block_size < 1 or block_size & (block_size - 1):
        raise ConfigError("block_size must be a power of two")
    mask = ~(block_size - 1)
    return (op.input_vec_addr & mask, op.weight_vec_addr & mask)


def reuse_histogram(ops, block_size, edges=(100, 800)):
    """Count ops per computing block pair and bucket the counts.

    Returns (pair_counts, buckets) where buckets splits pairs at the given
    edges, e.g. edges (100, 800) gives "1-100", "101-800" and ">800".
    """
    counts = Counter(block_pair_of(op, block_size) for op in ops)
    lo, hi = edges
    buckets = {f"1-{lo}": 0, f"{lo + 1}-{hi}": 0, f">{hi}": 0}
    for n in counts.values():
        if n <= lo:
            buckets[f"1-{lo}"] += 1
        elif n <= hi:
            buckets[f"{lo + 1}-{hi}"] += 1
        else:
            buckets[f">{hi}"] += 1
    return counts, buckets


def write_ops_csv(programs, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["warp_id", "lane_id", "input_addr", "weight_addr", "len", "output_addr"])
        for prog in programs:
            for lane in prog.lanes:
                for op in lane:
                    w.writerow([op.warp_id, op.lane_id, f"0x{op.input_vec_addr:x}",
                                f"0x{op.weight_vec_addr:x}", op.length,
                                f"0x{op.output_addr:x}"])


def shrink_layer(layer, factor):
    """Scale spatial dimensions down by ~factor, keeping the spec valid.

    Channels and filters are untouched; the shrunk height/width are bumped up
    until the filter fits and the window sweep divides the stride again.
    """
    if factor < 1:
        raise ConfigError("shrink factor must be >= 1")
    if factor == 1:
        return layer

    def fix(dim):
        d = -(-dim // factor)
        while (d + 2 * layer.padding < max(layer.filter_h, layer.filter_w)) or \
              (d + 2 * layer.padding - layer.filter_h) % layer.stride != 0 or \
              (d + 2 * layer.padding - layer.filter_w) % layer.stride != 0:
            d += 1
            if d > dim:
                raise ConfigError(f"{layer.name}: cannot shrink by {factor}")
        return d

    return LayerSpec(layer.name, layer.in_channels, layer.out_channels,
                     fix(layer.in_height), fix(layer.in_width),
                     layer.filter_h, layer.filter_w, layer.stride,
                     layer.padding, layer.pass_kind, layer.word_size)


def lenet5_layers(shrink=1):
    """The five LeNet5 compute layers; fully connected stages are encoded as
    convolutions whose window spans the whole input."""
    layers = [
        LayerSpec("C1", 1, 6, 32, 32, 5, 5),
        LayerSpec("C2", 6, 16, 14, 14, 5, 5),
        LayerSpec("C3", 16, 120, 5, 5, 5, 5),
        LayerSpec("F1", 120, 84, 1, 1, 1, 1),
        LayerSpec("F2", 84, 10, 1, 1, 1, 1),
    ]
    return [shrink_layer(l, shrink) for l in layers]


def alexnet_conv_layers(shrink=1):
    layers = [
        LayerSpec("conv1", 3, 96, 227, 227, 11, 11, stride=4),
        LayerSpec("conv2", 96, 256, 27, 27, 5, 5, padding=2),
        LayerSpec("conv3", 256, 384, 13, 13, 3, 3, padding=1),
        LayerSpec("conv4", 384, 384, 13, 13, 3, 3, padding=1),
    ]
    return [shrink_layer(l, shrink) for l in layers]


def backward_specs(layer):
    """Derive the two backward passes of a forward layer as direct convolutions.

    The input-gradient pass convolves the (stride-dilated) output gradient,
    padded by filter-1, with the rotated filter; rotation does not change the
    traffic shape, so the derived spec only carries the dimensions.  The
    weight-gradient pass pairs input rows with output-gradient values window
    by window and has the same loop structure as the forward layer, so it is
    modeled with forward dimensions over fresh tensor regions.
    """
    if layer.pass_kind != Pass.FORWARD:
        raise ConfigError("backward specs derive from a forward layer")
    if layer.filter_h != layer.filter_w:
        raise ConfigError(f"{layer.name}: backward derivation needs a square filter")
    s = layer.stride
    gh = (layer.out_h - 1) * s + 1
    gw = (layer.out_w - 1) * s + 1
    bw_in = LayerSpec(layer.name + "_bwd_in", layer.out_channels, layer.in_channels,
                      gh, gw, layer.filter_h, layer.filter_w, 1,
                      layer.filter_h - 1, Pass.BACKWARD_INPUT, layer.word_size)
    bw_w = LayerSpec(layer.name + "_bwd_w", layer.in_channels, layer.out_channels,
                     layer.in_height, layer.in_width, layer.filter_h,
                     layer.filter_w, s, layer.padding, Pass.BACKWARD_WEIGHT,
                     layer.word_size)
    return [bw_in, bw_w]
