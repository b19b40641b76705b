"""LRU caches, mesh interconnect and the timed miss path.

The LRU tests check against an independent stack-distance model: an access
hits a W-way LRU set exactly when fewer than W distinct blocks of that set
were touched since the previous access to the same block.
"""

import random

import pytest

from opconv.cachehier import (
    REQUEST_BYTES,
    CacheGeometry,
    LruCache,
    MemoryHierarchy,
    NocModel,
    mesh_placement,
)
from opconv.workload import ConfigError

L1_GEOM = CacheGeometry(16 * 1024, 32, 4)   # 128B blocks
L2_GEOM = CacheGeometry(64 * 1024, 64, 8)


def test_geometry_validation():
    assert L1_GEOM.block_size == 128
    assert L2_GEOM.block_size == 128
    with pytest.raises(ConfigError):
        CacheGeometry(0, 1, 1)
    with pytest.raises(ConfigError):
        CacheGeometry(100, 3, 2)   # 100 not divisible by 6
    with pytest.raises(ConfigError):
        CacheGeometry(96, 2, 4)    # 12-byte blocks


# ------------------------------------------------------------------- raw LRU

def test_lru_hand_replay():
    cache = LruCache(CacheGeometry(256, 1, 4))  # one 4-way set, 64B blocks
    a, b, c, d, e, f = (i * 64 for i in range(6))
    trace = [a, b, c, d, a, e, b, d, f]
    want = [(False, None), (False, None), (False, None), (False, None),
            (True, None),                    # A refreshed
            (False, b),                      # B is now the oldest
            (False, c),
            (True, None),
            (False, a)]                      # refreshed A aged past E, B, D
    assert [cache.access(x) for x in trace] == want
    assert (cache.hits, cache.misses) == (2, 7)


def test_contains_does_not_refresh():
    cache = LruCache(CacheGeometry(256, 1, 4))
    for blk in (0, 64, 128, 192):
        cache.install(blk)
    assert cache.contains(0)
    # the probe must not have promoted block 0
    assert cache.install(256) == 0


def test_touch_miss_leaves_state_alone():
    cache = LruCache(CacheGeometry(256, 1, 4))
    assert not cache.touch(64)
    assert not cache.contains(64)
    assert cache.misses == 1


def test_set_indexing_and_alignment():
    cache = LruCache(CacheGeometry(128, 2, 1))  # two direct-mapped 64B sets
    cache.install(0)
    cache.install(64)   # different set, no eviction
    assert cache.contains(0) and cache.contains(64)
    assert cache.install(128) == 0  # wraps onto set 0
    with pytest.raises(ConfigError):
        cache.touch(3)


def stack_distance_hits(geom, trace):
    """Reference hit/miss decisions from per-set reuse distances."""
    bits = geom.block_size.bit_length() - 1
    recency = [[] for _ in range(geom.sets)]  # least recent first, unbounded
    out = []
    for block in trace:
        lst = recency[(block >> bits) % geom.sets]
        if block in lst:
            out.append(len(lst) - lst.index(block) <= geom.ways)
            lst.remove(block)
        else:
            out.append(False)
        lst.append(block)
    return out


@pytest.mark.parametrize("geom,n_blocks", [(L1_GEOM, 600), (L2_GEOM, 2000)])
def test_lru_matches_stack_distance(geom, n_blocks):
    rng = random.Random(1234)
    trace = [rng.randrange(n_blocks) * geom.block_size for _ in range(10_000)]
    cache = LruCache(geom)
    got = [cache.access(b)[0] for b in trace]
    assert got == stack_distance_hits(geom, trace)
    assert cache.hits + cache.misses == len(trace)
    assert cache.hits == sum(got)


# ----------------------------------------------------------------------- NoC

def test_noc_latency_components():
    noc = NocModel(8, 8, 16, 1, 2)
    assert noc.coords(0) == (0, 0)
    assert noc.coords(19) == (3, 2)
    assert noc.hops(0, 19) == 5
    assert noc.flits(1) == 1 and noc.flits(16) == 1 and noc.flits(17) == 2
    # hops + pipeline + serialized flits
    assert noc.latency(0, 19, 16) == 8
    assert noc.latency(0, 19, 128) == 15
    assert noc.flit_hops(0, 19, 128) == 40
    assert noc.latency(5, 5, 128) == 10  # local turn still pays pipeline + flits
    with pytest.raises(ConfigError):
        noc.flits(0)
    with pytest.raises(ConfigError):
        NocModel(0, 8)


def test_noc_latency_properties():
    rng = random.Random(17)
    noc = NocModel(8, 8, 16, 1, 2)
    for _ in range(500):
        a, b = rng.randrange(64), rng.randrange(64)
        p = rng.randrange(1, 512)
        # symmetric in endpoints, monotone in payload
        assert noc.latency(a, b, p) == noc.latency(b, a, p)
        assert noc.latency(a, b, p + 16) >= noc.latency(a, b, p)
        assert noc.flit_hops(a, b, p) == noc.flit_hops(b, a, p)


def test_mesh_placement_layout():
    sm_nodes, mc_nodes = mesh_placement(56, 8)
    assert mc_nodes == [0, 16, 32, 48, 15, 31, 47, 63]
    assert len(sm_nodes) == 56
    assert sm_nodes[0] == 1 and sm_nodes[-1] == 62
    assert not set(sm_nodes) & set(mc_nodes)
    with pytest.raises(ConfigError):
        mesh_placement(60, 8)


# --------------------------------------------------------------- miss timing

def one_sm_hier():
    """Single SM one hop away from a single MC; request 1 flit, reply 8."""
    noc = NocModel(8, 8, 16, 1, 2)
    return MemoryHierarchy(1, L1_GEOM, L2_GEOM, 1, noc, (1, 30, 120),
                           sm_nodes=[1], mc_nodes=[0])


def test_miss_path_latency_frozen():
    hier = one_sm_hier()
    # request 1*1+2+1 = 4, L2 miss 30+120, reply 1*1+2+8 = 11
    ready = hier.fill(0, 0, now=0)
    assert ready == 165
    assert (hier.l2_misses, hier.dram_accesses, hier.l2_hits) == (1, 1, 0)
    assert hier.noc_flit_hops == 1 + 8

    # push block 0 out of its L1 set; the refill then hits in L2
    for i in range(1, 5):
        hier.fill(0, i * 32 * 128, now=0)
    assert not hier.l1[0].contains(0)
    hier.expire_fills(0, 1000)   # callers retire landed fills before reusing
    t = hier.fill(0, 0, now=1000)
    assert t - 1000 == 4 + 30 + 11
    assert hier.l2_hits == 1


def test_fills_coalesce_and_expire():
    hier = one_sm_hier()
    r1 = hier.fill(0, 0, now=0)
    assert hier.fill(0, 0, now=3) == r1       # joins the in-flight fill
    assert hier.l2_misses == 1                # charged only once
    hit, wait = hier.l1_lookup(0, 0)
    assert hit and wait == r1                 # installed, data not landed yet
    assert not hier.resident_for_compute(0, 0)
    hier.expire_fills(0, r1)
    assert hier.l1_lookup(0, 0) == (True, None)
    assert hier.resident_for_compute(0, 0)


def test_lookup_counts_and_block_of():
    hier = one_sm_hier()
    assert hier.block_of(0x1234) == 0x1200
    assert hier.l1_lookup(0, 0) == (False, None)
    hier.fill(0, 0, 0)
    hier.expire_fills(0, 1000)
    hier.l1_lookup(0, 0)
    assert (hier.l1_hits(), hier.l1_misses()) == (1, 1)


def test_home_mc_interleaves_block_index():
    noc = NocModel(8, 8, 16, 1, 2)
    hier = MemoryHierarchy(2, L1_GEOM, L2_GEOM, 4, noc, (1, 30, 120),
                           sm_nodes=[1, 2], mc_nodes=[0, 16, 32, 48])
    assert [hier.home_mc(i * 128) for i in range(6)] == [0, 1, 2, 3, 0, 1]


def test_holders_and_probes():
    noc = NocModel(8, 8, 16, 1, 2)
    hier = MemoryHierarchy(2, L1_GEOM, L2_GEOM, 1, noc, (1, 30, 120),
                           sm_nodes=[1, 2], mc_nodes=[0])
    hier.fill(0, 0, 0)
    assert hier.probe_sm(0, 0) and not hier.probe_sm(1, 0)
    assert hier.present_elsewhere(1, 0)
    assert not hier.present_elsewhere(0, 0)   # only our own copy exists
    hier.fill(1, 0, 0)
    assert hier.present_elsewhere(0, 0)
    assert hier.holders[0] == 2


def test_listeners_fire_on_install_and_evict():
    hier = one_sm_hier()
    installs, evicts = [], []
    hier.add_install_listener(lambda sm, blk: installs.append((sm, blk)))
    hier.add_evict_listener(lambda sm, blk: evicts.append((sm, blk)))
    for i in range(5):  # five blocks into one 4-way set
        hier.fill(0, i * 32 * 128, now=0)
    assert len(installs) == 5
    assert evicts == [(0, 0)]
    assert 0 not in hier.holders
    # probes agree with the directory as soon as the eviction fires
    assert not hier.probe_sm(0, 0)
    assert not hier.present_elsewhere(0, 0)


def test_warm_preloads_without_counters():
    hier = one_sm_hier()
    hier.warm(0, [0, 130, 256])   # 130 shares block 128
    assert hier.l1[0].contains(0) and hier.l1[0].contains(128) and hier.l1[0].contains(256)
    assert hier.l1_misses() == 0 and hier.l2_misses == 0 and hier.noc_flit_hops == 0
    assert hier.holders[128] == 1


def test_block_size_mismatch_rejected():
    noc = NocModel(8, 8, 16, 1, 2)
    with pytest.raises(ConfigError):
        MemoryHierarchy(1, L1_GEOM, CacheGeometry(64 * 1024, 64, 16), 1, noc,
                        (1, 30, 120), sm_nodes=[1], mc_nodes=[0])
