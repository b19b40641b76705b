"""Cluster partitioning and the per-cluster assign table."""

import random

import pytest

from opconv.inter import AssignTable, cluster_map
from opconv.workload import ConfigError


def test_cluster_map_contiguous():
    cm = cluster_map(56, 8)
    assert len(cm) == 56
    assert cm[:8] == [0, 0, 0, 0, 0, 0, 0, 1]
    assert cm[-1] == 7
    assert all(cm.count(c) == 7 for c in range(8))

    assert cluster_map(10, 3) == [0, 0, 0, 0, 1, 1, 1, 1, 2, 2]
    # more clusters than SMs degenerates to singletons
    assert cluster_map(4, 8) == [0, 1, 2, 3]


def test_cluster_map_limits():
    with pytest.raises(ConfigError):
        cluster_map(9, 1)      # nine members cannot fit a 3-bit owner id
    with pytest.raises(ConfigError):
        cluster_map(8, 0)
    cluster_map(8, 1)          # exactly eight is fine


def pair_of(i, j):
    return (i * 128, 0x4000_0000 + j * 128)


def test_register_lookup_and_ownership_moves():
    t = AssignTable(0, 8)
    p = pair_of(1, 2)
    assert t.lookup(p) is None
    t.register(p, 3)
    assert t.lookup(p) == 3
    t.register(p, 5)                 # most recent filler wins
    assert t.lookup(p) == 5
    assert len(t) == 1
    assert (t.lookups, t.lookup_hits, t.registrations) == (3, 2, 2)


def test_fifo_eviction_with_refresh():
    t = AssignTable(0, 2)
    t.register(pair_of(0, 0), 0)
    t.register(pair_of(1, 1), 1)
    t.register(pair_of(0, 0), 2)     # refresh moves it to the back
    t.register(pair_of(2, 2), 3)     # evicts pair 1, the oldest
    assert t.evictions == 1
    assert t.lookup(pair_of(1, 1)) is None
    assert t.lookup(pair_of(0, 0)) == 2
    assert t.lookup(pair_of(2, 2)) == 3


def test_on_evict_owner_scope():
    t = AssignTable(0, 8)
    shared_weight = 0x4000_0000
    t.register((0, shared_weight), 1)
    t.register((128, shared_weight), 2)
    # SM 1 losing the weight block only kills SM 1's entry
    assert t.on_evict(shared_weight, 1, scope="owner") == 1
    assert t.lookup((0, shared_weight)) is None
    assert t.lookup((128, shared_weight)) == 2
    assert t.invalidated == 1
    assert t.on_evict(512, 1, scope="owner") == 0   # unknown block


def test_on_evict_cluster_scope():
    t = AssignTable(0, 8)
    shared_weight = 0x4000_0000
    t.register((0, shared_weight), 1)
    t.register((128, shared_weight), 2)
    t.register((256, 0x4000_0080), 2)
    assert t.on_evict(shared_weight, 1, scope="cluster") == 2
    assert len(t) == 1
    assert t.lookup((256, 0x4000_0080)) == 2


def test_flush_empties_table():
    t = AssignTable(0, 4)
    t.register(pair_of(0, 0), 0)
    t.flush()
    assert len(t) == 0 and t.lookup(pair_of(0, 0)) is None


class ModelTable:
    """Insertion-ordered reference for the assign table semantics."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.d = {}  # pair -> owner

    def register(self, pair, sm):
        if pair in self.d:
            del self.d[pair]
        elif len(self.d) >= self.capacity:
            del self.d[next(iter(self.d))]
        self.d[pair] = sm

    def lookup(self, pair):
        return self.d.get(pair)

    def on_evict(self, block, sm, scope):
        doomed = [p for p, o in self.d.items()
                  if block in p and (scope == "cluster" or o == sm)]
        for p in doomed:
            del self.d[p]
        return len(doomed)


def test_randomized_equivalence_with_model():
    rng = random.Random(99)
    t = AssignTable(0, 16)
    m = ModelTable(16)
    blocks_a = [i * 128 for i in range(12)]
    blocks_b = [0x4000_0000 + i * 128 for i in range(6)]
    for _ in range(10_000):
        roll = rng.random()
        if roll < 0.45:
            pair = (rng.choice(blocks_a), rng.choice(blocks_b))
            sm = rng.randrange(7)
            t.register(pair, sm)
            m.register(pair, sm)
        elif roll < 0.8:
            pair = (rng.choice(blocks_a), rng.choice(blocks_b))
            assert t.lookup(pair) == m.lookup(pair)
        else:
            block = rng.choice(blocks_a + blocks_b)
            sm = rng.randrange(7)
            scope = rng.choice(["owner", "cluster"])
            assert t.on_evict(block, sm, scope) == m.on_evict(block, sm, scope)
        assert len(t) == len(m.d)
        assert len(t) <= t.capacity
    assert dict((p, e.owner) for p, e in t.entries.items()) == m.d
