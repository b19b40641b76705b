"""Timed memory hierarchy: per-SM L1 caches, per-MC L2 slices, 2D mesh NoC.

There are no MSHRs: a warp blocks until its own miss is filled, and duplicate
in-flight misses to the same block coalesce onto the existing fill.  Cache
state is updated at access time (victim selected immediately); the fill
latency only delays the consuming warp.  Evictions are reported through
listener callbacks so the scheme tables can invalidate dependent entries in
the same cycle.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .workload import ConfigError


@dataclass(frozen=True)
class CacheGeometry:
    capacity_bytes: int
    sets: int
    ways: int

    def __post_init__(self):
        if self.sets < 1 or self.ways < 1 or self.capacity_bytes < 1:
            raise ConfigError("cache geometry fields must be positive")
        if self.capacity_bytes % (self.sets * self.ways):
            raise ConfigError("capacity must divide into sets*ways blocks")
        b = self.block_size
        if b & (b - 1):
            raise ConfigError("block size must be a power of two")

    @property
    def block_size(self):
        return self.capacity_bytes // (self.sets * self.ways)


class AccessKind(Enum):
    HIT = "hit"
    MISS = "miss"


@dataclass
class AccessOutcome:
    kind: AccessKind
    ready_cycle: int
    source: str          # "l1" | "l2" | "dram"
    evicted: int | None  # victim block address, if any


class LruCache:
    """Set-associative LRU cache over aligned block addresses."""

    def __init__(self, geometry):
        self.geometry = geometry
        self.block_bits = geometry.block_size.bit_length() - 1
        self.sets = [dict() for _ in range(geometry.sets)]  # block -> stamp
        self.stamp = 0
        self.hits = 0
        self.misses = 0

    def _set_of(self, block):
        if block & (self.geometry.block_size - 1):
            raise ConfigError(f"unaligned block address 0x{block:x}")
        return self.sets[(block >> self.block_bits) % self.geometry.sets]

    def contains(self, block):
        """Pure presence probe; never touches recency."""
        return block in self._set_of(block)

    def touch(self, block):
        """Recency-updating lookup. True on hit, False (no state change) on miss."""
        s = self._set_of(block)
        if block in s:
            self.stamp += 1
            s[block] = self.stamp
            self.hits += 1
            return True
        self.misses += 1
        return False

    def install(self, block):
        """Insert a block, evicting the LRU victim if the set is full.

        Returns the victim block address or None."""
        s = self._set_of(block)
        if block in s:
            return None
        victim = None
        if len(s) >= self.geometry.ways:
            victim = min(s, key=s.get)
            del s[victim]
        self.stamp += 1
        s[block] = self.stamp
        return victim

    def access(self, block):
        """Combined lookup: hit updates recency, miss installs (LRU victim out).

        Returns (hit, evicted)."""
        if self.touch(block):
            return True, None
        return False, self.install(block)


class NocModel:
    """2D mesh, X-Y routing, wormhole-style serialization.

    latency = hops * hop_cycles + pipeline_stages + ceil(payload / flit_bytes)
    """

    def __init__(self, mesh_w=8, mesh_h=8, flit_bytes=16, hop_cycles=1,
                 pipeline_stages=2):
        if mesh_w < 1 or mesh_h < 1 or flit_bytes < 1:
            raise ConfigError("mesh dimensions and flit size must be positive")
        self.mesh_w = mesh_w
        self.mesh_h = mesh_h
        self.flit_bytes = flit_bytes
        self.hop_cycles = hop_cycles
        self.pipeline_stages = pipeline_stages

    def coords(self, node):
        return node % self.mesh_w, node // self.mesh_w

    def hops(self, src, dst):
        sx, sy = self.coords(src)
        dx, dy = self.coords(dst)
        return abs(sx - dx) + abs(sy - dy)

    def flits(self, payload_bytes):
        if payload_bytes < 1:
            raise ConfigError("payload must be at least one byte")
        return -(-payload_bytes // self.flit_bytes)

    def latency(self, src, dst, payload_bytes):
        return (self.hops(src, dst) * self.hop_cycles + self.pipeline_stages
                + self.flits(payload_bytes))

    def flit_hops(self, src, dst, payload_bytes):
        return self.flits(payload_bytes) * self.hops(src, dst)


def mesh_placement(n_sms, n_mcs, mesh_w=8, mesh_h=8):
    """Fixed node map: MCs sit on the two opposite edge columns (left column
    even rows first, then right column odd rows), SMs fill the remaining
    nodes in row-major order.  Returns (sm_nodes, mc_nodes)."""
    total = mesh_w * mesh_h
    if n_sms + n_mcs > total:
        raise ConfigError("mesh too small for SMs plus MCs")
    mc_nodes = []
    for i in range(n_mcs):
        if i < (n_mcs + 1) // 2:
            x, y = 0, (2 * i) % mesh_h
        else:
            j = i - (n_mcs + 1) // 2
            x, y = mesh_w - 1, (2 * j + 1) % mesh_h
        node = y * mesh_w + x
        while node in mc_nodes:  # wrap collisions on small meshes
            node = (node + 1) % total
        mc_nodes.append(node)
    sm_nodes = [n for n in range(total) if n not in mc_nodes][:n_sms]
    return sm_nodes, mc_nodes


REQUEST_BYTES = 16  # one address flit


class MemoryHierarchy:
    """All cache and interconnect state for one simulation."""

    def __init__(self, n_sms, l1_geom, l2_geom, n_mcs, noc, latencies,
                 sm_nodes=None, mc_nodes=None):
        self.n_sms = n_sms
        self.l1_geom = l1_geom
        self.block_size = l1_geom.block_size
        if l2_geom.block_size != l1_geom.block_size:
            raise ConfigError("L1 and L2 block sizes must match")
        self.l1 = [LruCache(l1_geom) for _ in range(n_sms)]
        self.l2 = [LruCache(l2_geom) for _ in range(n_mcs)]
        self.n_mcs = n_mcs
        self.noc = noc
        self.lat_l1, self.lat_l2, self.lat_dram = latencies
        if sm_nodes is None or mc_nodes is None:
            sm_nodes, mc_nodes = mesh_placement(n_sms, n_mcs, noc.mesh_w, noc.mesh_h)
        self.sm_nodes = sm_nodes
        self.mc_nodes = mc_nodes
        # block -> count of SMs with an installed copy, for O(1) probing
        self.holders = {}
        self.in_flight = [dict() for _ in range(n_sms)]  # block -> ready cycle
        self.evict_listeners = []
        self.install_listeners = []
        # counters
        self.l2_hits = 0
        self.l2_misses = 0
        self.dram_accesses = 0
        self.noc_flit_hops = 0

    def block_of(self, addr):
        return addr & ~(self.block_size - 1)

    def add_evict_listener(self, fn):
        """fn(sm_id, block) is called immediately when sm_id evicts block."""
        self.evict_listeners.append(fn)

    def add_install_listener(self, fn):
        """fn(sm_id, block) is called when a block lands in sm_id's L1."""
        self.install_listeners.append(fn)

    def probe_sm(self, sm_id, block):
        """Presence query against another SM's L1; no recency update."""
        return self.l1[sm_id].contains(block)

    def present_elsewhere(self, sm_id, block):
        n = self.holders.get(block, 0)
        if self.l1[sm_id].contains(block):
            n -= 1
        return n > 0

    def resident_for_compute(self, sm_id, block):
        """Installed and not still in flight; what an assistant may read."""
        return self.l1[sm_id].contains(block) and block not in self.in_flight[sm_id]

    def _note_install(self, sm_id, block):
        self.holders[block] = self.holders.get(block, 0) + 1
        for fn in self.install_listeners:
            fn(sm_id, block)

    def _note_evict(self, sm_id, block):
        n = self.holders.get(block, 0) - 1
        if n > 0:
            self.holders[block] = n
        else:
            self.holders.pop(block, None)
        for fn in self.evict_listeners:
            fn(sm_id, block)

    def home_mc(self, block):
        # interleave at block-index granularity; the raw address is block
        # aligned so taking it modulo a power-of-two MC count would be constant
        return (block >> self.l1[0].block_bits) % self.n_mcs

    def l1_lookup(self, sm_id, block):
        """Recency-updating L1 lookup.

        Returns (hit, wait_until): a hit on a block whose fill is still in
        flight reports the fill's ready cycle so the requester coalesces."""
        hit = self.l1[sm_id].touch(block)
        if hit:
            return True, self.in_flight[sm_id].get(block)
        return False, None

    def fill(self, sm_id, block, now):
        """Start (or join) a fill of block into sm_id's L1.

        Installs the block immediately, charges L2/NoC/DRAM counters, and
        returns the cycle at which the data is usable."""
        pending = self.in_flight[sm_id].get(block)
        if pending is not None:
            return pending
        victim = self.l1[sm_id].install(block)
        self._note_install(sm_id, block)
        if victim is not None:
            self._note_evict(sm_id, victim)
        latency = self.miss_path_latency(sm_id, block)
        ready = now + latency
        self.in_flight[sm_id][block] = ready
        return ready

    def miss_path_latency(self, sm_id, block):
        """Round trip to the home L2 slice, and to DRAM beyond it on an L2 miss.

        Updates L2 state and the traffic counters."""
        src = self.sm_nodes[sm_id]
        mc = self.mc_nodes[self.home_mc(block)]
        lat = self.noc.latency(src, mc, REQUEST_BYTES)
        self.noc_flit_hops += self.noc.flit_hops(src, mc, REQUEST_BYTES)
        l2 = self.l2[self.home_mc(block)]
        hit, _ = l2.access(block)
        if hit:
            self.l2_hits += 1
            lat += self.lat_l2
        else:
            self.l2_misses += 1
            self.dram_accesses += 1
            lat += self.lat_l2 + self.lat_dram
        lat += self.noc.latency(mc, src, self.block_size)
        self.noc_flit_hops += self.noc.flit_hops(mc, src, self.block_size)
        return lat

    def expire_fills(self, sm_id, now):
        """Drop bookkeeping for fills that have landed."""
        inflight = self.in_flight[sm_id]
        if not inflight:
            return
        done = [b for b, r in inflight.items() if r <= now]
        for b in done:
            del inflight[b]

    def warm(self, sm_id, addrs):
        """Preload blocks into an L1 without touching any counter (tests, demos)."""
        for addr in addrs:
            block = self.block_of(addr)
            if not self.l1[sm_id].contains(block):
                victim = self.l1[sm_id].install(block)
                self._note_install(sm_id, block)
                if victim is not None:
                    self._note_evict(sm_id, victim)

    def l1_hits(self):
        return sum(c.hits for c in self.l1)

    def l1_misses(self):
        return sum(c.misses for c in self.l1)
