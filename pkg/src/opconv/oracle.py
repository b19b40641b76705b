"""Arithmetic ground truth: deterministic operand images, a naive reference
convolution, and output comparison.

The simulator only reorders and relocates computations; it must never change
their values.  Every experiment can therefore be checked against the plain
loop-nest convolution computed here, element for element.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .workload import ConfigError, Pass


class MemoryImage:
    """Operand values addressed exactly like the simulated tensor regions.

    Integer mode draws uniformly from [-8, 8]; the magnitudes keep every
    partial sum far from 32-bit limits for desk-scale layers.  Float mode
    draws from [-1, 1).  Padding cells hold zero by construction.
    """

    def __init__(self, geom, seed=0, mode="int32"):
        if mode not in ("int32", "float32"):
            raise ConfigError(f"unknown arithmetic mode {mode!r}")
        self.geom = geom
        self.mode = mode
        self.seed = seed
        layer = geom.layer
        word = layer.word_size
        rng = random.Random((seed, layer.name, mode).__repr__())
        self.input_words = [0] * (geom.input_extent() // word)
        self.weight_words = [0] * (geom.weight_extent() // word)
        draw = (lambda: rng.randint(-8, 8)) if mode == "int32" else \
               (lambda: rng.uniform(-1.0, 1.0))
        p = layer.padding
        row_words = geom.input.row_stride // word
        ch_words = geom.input.channel_stride // word
        for ic in range(layer.in_channels):
            for r in range(layer.in_height):
                base = ic * ch_words + (r + p) * row_words + p
                for c in range(layer.in_width):
                    self.input_words[base + c] = draw()
        for i in range(len(self.weight_words)):
            self.weight_words[i] = draw()

    def input_vec(self, addr, length):
        idx = (addr - self.geom.input.base_address) // self.geom.layer.word_size
        if idx < 0 or idx + length > len(self.input_words):
            raise ConfigError(f"input read outside region: 0x{addr:x}")
        return self.input_words[idx:idx + length]

    def weight_vec(self, addr, length):
        idx = (addr - self.geom.weight.base_address) // self.geom.layer.word_size
        if idx < 0 or idx + length > len(self.weight_words):
            raise ConfigError(f"weight read outside region: 0x{addr:x}")
        return self.weight_words[idx:idx + length]

    def dot(self, input_addr, weight_addr, length):
        a = self.input_vec(input_addr, length)
        b = self.weight_vec(weight_addr, length)
        return sum(x * y for x, y in zip(a, b))


def reference_convolution(geom, image):
    """Naive loop-nest convolution over the image; returns {output_addr: value}.

    Accumulation walks channels then filter rows then columns, matching the
    enumeration order of the op stream.
    """
    layer = geom.layer
    out = {}
    s = layer.stride
    word = layer.word_size
    for oc in range(layer.out_channels):
        for oy in range(layer.out_h):
            for ox in range(layer.out_w):
                acc = 0
                for ic in range(layer.in_channels):
                    for fr in range(layer.filter_h):
                        iaddr = geom.input_vec_addr(ic, oy * s + fr, ox * s)
                        waddr = geom.weight_vec_addr(oc, ic, fr)
                        acc += image.dot(iaddr, waddr, layer.filter_w)
                out[geom.output_addr(oc, oy, ox)] = acc
    return out


@dataclass
class CompareResult:
    ok: bool
    checked: int
    mismatches: list

    def message(self):
        if self.ok:
            return f"all {self.checked} outputs match"
        head = "; ".join(self.mismatches[:5])
        return f"{len(self.mismatches)} of {self.checked} outputs differ: {head}"


def compare(actual, expected, mode="int32", rel_tol=1e-5):
    """Compare an output map against the reference.

    int32 mode requires bit-exact equality; float32 mode allows rel_tol
    relative error.  Missing or extra addresses are mismatches."""
    mismatches = []
    for addr in sorted(set(actual) | set(expected)):
        if addr not in actual:
            mismatches.append(f"0x{addr:x} missing from simulation")
            continue
        if addr not in expected:
            mismatches.append(f"0x{addr:x} not produced by reference")
            continue
        a, e = actual[addr], expected[addr]
        if mode == "int32":
            bad = a != e
        else:
            bad = abs(a - e) > rel_tol * max(abs(a), abs(e), 1e-30)
        if bad:
            mismatches.append(f"0x{addr:x}: got {a!r}, want {e!r}")
    return CompareResult(not mismatches, len(expected), mismatches)
