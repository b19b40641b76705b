"""Per-SM precompute tables: speculative result memoization for sliding windows.

When a window row product completes, the rows it will meet again after the
window slides down are known from pure address arithmetic; those future
(input vector, weight vector) pairs are inserted as pending predictions.
An assistant engine executes pending entries during stall cycles, but only
when both operand blocks are already resident, so it never generates memory
traffic.  A later instruction that decodes a completed pair consumes the
stored result instead of accessing the cache.

The same table stages computations assigned by other SMs (the forwarding
scheme); assigned work is definite, takes priority over speculation, and is
bounced back to its source instead of being dropped.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

SPECULATIVE = 0
ASSIGNED = 1


def predict(op, geom):
    """Future pairs this op's input row participates in as its window moves down.

    Every downward move of the window by one output row drops the row's
    position inside the window by `stride`, so the input vector meets the
    weight row `stride` entries above the current one; the walk stops at the
    top of the filter or at the last output row.  Returned pairs are genuine
    future ops of the layer.
    """
    layer = geom.layer
    s = layer.stride
    w_off = op.weight_vec_addr - geom.weight.base_address
    j = (w_off // geom.weight.row_stride) % layer.filter_h
    i_off = op.input_vec_addr - geom.input.base_address
    r = (i_off % geom.input.channel_stride) // geom.input.row_stride
    base_row = r - j
    if base_row % s:
        return []
    oy = base_row // s
    pairs = []
    k = 1
    while j - k * s >= 0 and oy + k <= layer.out_h - 1:
        pairs.append((op.input_vec_addr,
                      op.weight_vec_addr - k * s * geom.weight.row_stride))
        k += 1
    return pairs


@dataclass(slots=True)
class PrecomputeEntry:
    key: tuple           # (input_vec_addr, weight_vec_addr)
    blocks: tuple        # operand cache blocks of the pair
    length: int
    kind: int            # SPECULATIVE or ASSIGNED
    inserted_at: int
    seq: int
    complete: bool = False
    result: object = None
    res_mask: int = 0    # bit 0 / bit 1: operand block resident
    op: object = None    # forwarded VectorMacOp (assigned entries only)
    src_sm: int = -1     # requesting SM     (assigned entries only)
    completed_at: int = -1


class PrecomputeTable:
    """Fixed-capacity memo table, FIFO eviction by insertion order."""

    def __init__(self, capacity, block_size, resident_fn):
        self.capacity = capacity
        self.block_mask = ~(block_size - 1)
        self.resident_fn = resident_fn  # block -> bool, no cache side effects
        self.entries = {}               # key -> entry
        self.spec_order = {}            # seq -> entry, insertion ordered
        self.assigned_order = {}        # seq -> entry, insertion ordered
        self.by_block = {}              # block -> {seq: entry}
        self.eligible_heap = []         # seqs of speculative entries, lazy
        self.seq = 0
        # counters
        self.lookups = 0
        self.hits = 0
        self.pendings = 0
        self.inserts = 0
        self.duplicates = 0
        self.evictions = 0
        self.purged = 0
        self.accesses = 0

    def __len__(self):
        return len(self.entries)

    def _blocks_of(self, key):
        return (key[0] & self.block_mask, key[1] & self.block_mask)

    def _index(self, entry):
        for b in entry.blocks:
            self.by_block.setdefault(b, {})[entry.seq] = entry

    def _unindex(self, entry):
        for b in entry.blocks:
            bucket = self.by_block.get(b)
            if bucket is not None:
                bucket.pop(entry.seq, None)
                if not bucket:
                    del self.by_block[b]

    def _remove(self, entry):
        del self.entries[entry.key]
        self.spec_order.pop(entry.seq, None)
        self.assigned_order.pop(entry.seq, None)
        self._unindex(entry)
        entry.res_mask = -1  # invalidates any stale heap reference

    def _mask_of(self, blocks):
        m = 0
        if self.resident_fn(blocks[0]):
            m |= 1
        if self.resident_fn(blocks[1]):
            m |= 2
        return m

    def _push_eligible(self, entry):
        if entry.kind == SPECULATIVE and not entry.complete and entry.res_mask == 3:
            heapq.heappush(self.eligible_heap, entry.seq)

    def lookup(self, key):
        """Decode-time lookup for the SM's own instruction.

        hit      -> entry consumed, stored result returned
        pending  -> entry invalidated (the prediction lost the race)
        absent   -> no change
        Assigned entries belong to other SMs' instructions and are never
        matched here.
        """
        self.lookups += 1
        self.accesses += 1
        entry = self.entries.get(key)
        if entry is None or entry.kind != SPECULATIVE:
            return "absent", None
        if entry.complete:
            self.hits += 1
            self._remove(entry)
            return "hit", entry.result
        self.pendings += 1
        self._remove(entry)
        return "pending", None

    def insert_prediction(self, key, length, now):
        """Queue a predicted pair.  Returns accepted | duplicate | rejected."""
        self.accesses += 1
        if key in self.entries:
            self.duplicates += 1
            return "duplicate"
        if len(self.entries) >= self.capacity and not self._evict_oldest_spec():
            return "rejected"
        blocks = self._blocks_of(key)
        entry = PrecomputeEntry(key, blocks, length, SPECULATIVE, now, self.seq)
        self.seq += 1
        entry.res_mask = self._mask_of(blocks)
        self.entries[key] = entry
        self.spec_order[entry.seq] = entry
        self._index(entry)
        self._push_eligible(entry)
        self.inserts += 1
        return "accepted"

    def stage_assigned(self, key, op, src_sm, now):
        """Stage a computation forwarded from src_sm.

        Returns (status, payload): ("memo", result) when a completed
        speculative entry already holds the answer, ("staged", entry) when a
        pending work item was created, ("full", None) when the table is
        saturated with assigned work and the op must bounce."""
        self.accesses += 1
        existing = self.entries.get(key)
        if existing is not None and existing.kind == SPECULATIVE:
            if existing.complete:
                self.hits += 1
                self._remove(existing)
                return "memo", existing.result
            self._remove(existing)  # replaced by the definite request
        if len(self.entries) >= self.capacity and not self._evict_oldest_spec():
            return "full", None
        blocks = self._blocks_of(key)
        entry = PrecomputeEntry(key, blocks, op.length, ASSIGNED, now, self.seq,
                                op=op, src_sm=src_sm)
        self.seq += 1
        entry.res_mask = 3  # both operands were resident when forwarded here
        self.entries[key] = entry
        self.assigned_order[entry.seq] = entry
        self._index(entry)
        self.inserts += 1
        return "staged", entry

    def _evict_oldest_spec(self):
        if not self.spec_order:
            return False
        seq = next(iter(self.spec_order))
        self._remove(self.spec_order[seq])
        self.evictions += 1
        return True

    def next_assist(self):
        """Oldest runnable work item: assigned first, then eligible speculation."""
        if self.assigned_order:
            return next(iter(self.assigned_order.values()))
        while self.eligible_heap:
            seq = self.eligible_heap[0]
            entry = self.spec_order.get(seq)
            if entry is None or entry.complete or entry.res_mask != 3:
                heapq.heappop(self.eligible_heap)
                continue
            return entry
        return None

    def finish(self, entry, result, now):
        """Assistant completion."""
        self.accesses += 1
        entry.completed_at = now
        if entry.kind == ASSIGNED:
            self._remove(entry)
            return
        entry.complete = True
        entry.result = result

    def block_installed(self, block):
        bucket = self.by_block.get(block)
        if not bucket:
            return
        bit = 0
        for entry in list(bucket.values()):
            bit = 1 if entry.blocks[0] == block else 2
            if not entry.res_mask & bit:
                entry.res_mask |= bit
                self._push_eligible(entry)

    def block_evicted(self, block):
        """Returns assigned entries displaced by the eviction (to bounce)."""
        bucket = self.by_block.get(block)
        if not bucket:
            return []
        bounced = []
        for entry in list(bucket.values()):
            bit = 1 if entry.blocks[0] == block else 2
            entry.res_mask &= ~bit
            if entry.kind == ASSIGNED:
                bounced.append(entry)
                self._remove(entry)
        return bounced

    def purge(self, now, fraction):
        """Drop the oldest fraction of speculative entries, pending or complete.

        Keeps mispredictions from pinning the table between layer phases."""
        n = int(len(self.spec_order) * fraction)
        for seq in list(self.spec_order)[:n]:
            self._remove(self.spec_order[seq])
        self.purged += n
        if n:
            self.accesses += n
        return n

    def flush(self):
        """Layer boundary: drop everything speculative; assigned work must
        already be drained."""
        assert not self.assigned_order, "assigned work dropped at flush"
        self.entries.clear()
        self.spec_order.clear()
        self.by_block.clear()
        self.eligible_heap.clear()
