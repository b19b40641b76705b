"""Cycle-approximate many-core engine.

Each SM issues one vector-MAC instruction at a time (issue occupancy is
warp_size / simt_width cycles) from its warps under greedy-then-oldest
scheduling.  A warp blocks on its own L1 miss; once a fill is requested the
data is delivered to the warp at the ready cycle even if the block is
evicted again meanwhile, so execution never replays the access.

Scheme hooks sit on the decode path, in this order: a precompute lookup may
retire the instruction from a memoized result (1 cycle), an L1 miss may hand
the whole computation to the SM that owns the data (fire and forget,
1 cycle), otherwise the warp waits for its fills and then executes.  During
cycles with no ready warp an assistant engine executes staged table work,
one computation at a time, without generating memory traffic.

Simulated time advances event to event; cycles where every SM is waiting are
accounted in bulk, which keeps the loop cost proportional to activity.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from . import intra as intra_mod
from . import inter as inter_mod
from .cachehier import REQUEST_BYTES, CacheGeometry, MemoryHierarchy, NocModel
from .metrics import SimStats
from .workload import ConfigError

INF = float("inf")

# per-step SM states
BUSY, ASSIST, STALLED, IDLE = range(4)

_BLOCKED = -1


class SimulationError(RuntimeError):
    pass


class OutputBuffer:
    """Global accumulation buffer; adds are atomic in the modeled machine,
    so arrival order never changes an integer result."""

    def __init__(self):
        self.values = {}
        self.adds = {}

    def add(self, addr, value):
        self.values[addr] = self.values.get(addr, 0) + value
        self.adds[addr] = self.adds.get(addr, 0) + 1

    def total_adds(self):
        return sum(self.adds.values())


@dataclass(slots=True, eq=False)
class WarpContext:
    warp_id: int
    age: int                 # launch stamp; smaller is older
    ops: list
    pc: int = 0
    blocked_until: int = -1
    exec_pending: bool = False  # operands delivered, execute on next issue
    saw_miss: bool = False      # current op went through the miss path

    def done(self):
        return self.pc >= len(self.ops)


def gto_select(sm):
    """Greedy-then-oldest: stay on the last issued warp while it is ready,
    otherwise pick the ready warp with the smallest age stamp."""
    ready = sm.ready
    if not ready:
        return None
    last = sm.last_issued
    if last is not None and not last.done() and last.blocked_until < 0 \
            and last in ready:
        return last
    return min(ready, key=lambda w: w.age)


class SmCore:
    def __init__(self, sm_id, warps):
        self.sm_id = sm_id
        self.warps = warps
        self.ready = list(warps)
        self.blocked = []  # heap of (wake, age); warp looked up by age
        self.by_age = {w.age: w for w in warps}
        self.last_issued = None
        self.busy_until = 0
        self.unfinished = len(warps)
        self.assist_busy_until = None
        self.assist_entry = None
        self.table = None
        self.next_purge = None
        self.next_action = 0
        self.state = IDLE if not warps else STALLED

    def wake_due(self, now):
        while self.blocked and self.blocked[0][0] <= now:
            _, age = heapq.heappop(self.blocked)
            warp = self.by_age[age]
            warp.blocked_until = -1
            self.ready.append(warp)

    def block_warp(self, warp, until):
        warp.blocked_until = until
        self.ready.remove(warp)
        heapq.heappush(self.blocked, (until, warp.age))

    def retire_warp_op(self, warp):
        warp.pc += 1
        if warp.done():
            self.unfinished -= 1
            self.ready.remove(warp)

    def next_wake(self):
        return self.blocked[0][0] if self.blocked else INF


@dataclass
class SimParams:
    """Hardware and scheme knobs for one simulation run."""

    sm_count: int = 56
    warp_size: int = 32
    simt_width: int = 8
    l1: CacheGeometry = field(default_factory=lambda: CacheGeometry(16 * 1024, 32, 4))
    l2: CacheGeometry = field(default_factory=lambda: CacheGeometry(64 * 1024, 64, 8))
    mc_count: int = 8
    mesh_w: int = 8
    mesh_h: int = 8
    flit_bytes: int = 16
    hop_cycles: int = 1
    pipeline_stages: int = 2
    lat_l1: int = 1
    lat_l2: int = 30
    lat_dram: int = 120
    scheme: str = "baseline"   # baseline | intra | inter | both
    pc_entries: int = 256
    assist_latency: int = 4
    purge_period: int = 10000
    purge_fraction: float = 0.25
    at_entries: int = 512
    clusters: int = 8
    forward_latency: int = 8
    evict_scope: str = "owner"
    probe_availability: bool = True
    debug_invariants: bool = False
    max_idle_cycles: int = 1_000_000

    def __post_init__(self):
        if self.scheme not in ("baseline", "intra", "inter", "both"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.warp_size % self.simt_width:
            raise ConfigError("warp_size must be a multiple of simt_width")
        if self.evict_scope not in ("owner", "cluster"):
            raise ConfigError("evict_scope must be owner or cluster")
        if not 0.0 <= self.purge_fraction <= 1.0:
            raise ConfigError("purge_fraction must lie in [0, 1]")

    @property
    def issue_cost(self):
        return self.warp_size // self.simt_width


class Simulation:
    def __init__(self, params, programs, image, geom):
        self.params = params
        self.image = image
        self.geom = geom
        self.speculate = params.scheme in ("intra", "both")
        self.forwarding = params.scheme in ("inter", "both")
        p = params
        noc = NocModel(p.mesh_w, p.mesh_h, p.flit_bytes, p.hop_cycles,
                       p.pipeline_stages)
        self.hier = MemoryHierarchy(p.sm_count, p.l1, p.l2, p.mc_count, noc,
                                    (p.lat_l1, p.lat_l2, p.lat_dram))
        self.block_size = p.l1.block_size
        self.block_mask = ~(self.block_size - 1)

        per_sm = [[] for _ in range(p.sm_count)]
        total_ops = 0
        for prog in programs:
            if not 0 <= prog.sm_id < p.sm_count:
                raise ConfigError(f"warp {prog.warp_id} targets SM {prog.sm_id}")
            flat = prog.ops
            total_ops += len(flat)
            if flat:
                per_sm[prog.sm_id].append(WarpContext(prog.warp_id, prog.warp_id, flat))
        self.sms = [SmCore(i, per_sm[i]) for i in range(p.sm_count)]

        self.stats = SimStats(scheme=p.scheme, total_ops=total_ops,
                              stall_cycles_per_sm=[0] * p.sm_count)
        self.out = OutputBuffer()

        use_tables = self.speculate or self.forwarding
        if use_tables:
            for sm in self.sms:
                sm.table = intra_mod.PrecomputeTable(
                    p.pc_entries, self.block_size,
                    self._resident_fn(sm.sm_id))
                sm.next_purge = p.purge_period
        if self.forwarding:
            self.cluster_of = inter_mod.cluster_map(p.sm_count, p.clusters)
            self.assign_tables = [inter_mod.AssignTable(c, p.at_entries)
                                  for c in range(p.clusters)]
        else:
            self.cluster_of = None
            self.assign_tables = []
        # energy accounting: the per-SM memo array is powered only when
        # speculation is on; inter-only staging needs a handful of registers
        # that ride on the cluster table's budget
        self.stats.table_instances = (p.sm_count if self.speculate else 0) + \
                                     (p.clusters if self.forwarding else 0)

        if use_tables or self.forwarding:
            self.hier.add_evict_listener(self._on_evict)
            self.hier.add_install_listener(self._on_install)

        self.events = []     # (cycle, seq, kind, dest_sm, payload)
        self.event_seq = 0
        self.pending_assigned = 0
        self.pending_bounce_exec = 0
        self.retired = 0
        self.now = 0

    # ---- listeners -------------------------------------------------------

    def _resident_fn(self, sm_id):
        hier = self.hier
        return lambda block: hier.resident_for_compute(sm_id, block)

    def _on_install(self, sm_id, block):
        table = self.sms[sm_id].table
        if table is not None:
            table.block_installed(block)

    def _on_evict(self, sm_id, block):
        table = self.sms[sm_id].table
        if table is not None:
            for entry in table.block_evicted(block):
                self.pending_assigned -= 1
                self._bounce(entry.op, entry.src_sm, sm_id, self.now)
        if self.forwarding:
            at = self.assign_tables[self.cluster_of[sm_id]]
            at.on_evict(block, sm_id, self.params.evict_scope)

    # ---- events ----------------------------------------------------------

    def _schedule(self, cycle, kind, dest, payload):
        heapq.heappush(self.events, (cycle, self.event_seq, kind, dest, payload))
        self.event_seq += 1

    def _charge_message(self, src_sm, dst_sm):
        """Control message between two SMs: one request-sized NoC transfer."""
        hier = self.hier
        hier.noc_flit_hops += hier.noc.flit_hops(
            hier.sm_nodes[src_sm], hier.sm_nodes[dst_sm], REQUEST_BYTES)

    def _deliver_due(self, now):
        while self.events and self.events[0][0] <= now:
            _, _, kind, dest, payload = heapq.heappop(self.events)
            if kind == "forward":
                self._forward_arrival(dest, payload, now)
            elif kind == "bounce":
                self._bounce_arrival(dest, payload, now)
            elif kind == "bounce_fin":
                self._bounce_finish(dest, payload, now)
            self.sms[dest].next_action = now

    def _forward_arrival(self, owner, msg, now):
        op, src = msg
        self.pending_assigned -= 1
        key = (op.input_vec_addr, op.weight_vec_addr)
        table = self.sms[owner].table
        hier = self.hier
        hier.expire_fills(owner, now)
        ib = op.input_vec_addr & self.block_mask
        wb = op.weight_vec_addr & self.block_mask
        if not (hier.resident_for_compute(owner, ib)
                and hier.resident_for_compute(owner, wb)):
            self._bounce(op, src, owner, now)
            return
        status, payload = table.stage_assigned(key, op, src, now)
        if status == "memo":
            self.out.add(op.output_addr, payload)
            self.stats.assigned_done += 1
            self.stats.forward_memo_hits += 1
            self.retired += 1
            if self.speculate:
                self._insert_predictions(self.sms[owner], op, now)
        elif status == "staged":
            self.pending_assigned += 1
        else:  # full
            self._bounce(op, src, owner, now)

    def _bounce(self, op, src, owner, now):
        self.stats.bounces += 1
        self._charge_message(owner, src)
        self._schedule(now + self.params.forward_latency, "bounce", src, op)

    def _bounce_arrival(self, src, op, now):
        """Returned computation: the source fetches what is missing and
        executes out of band (its warp already moved on)."""
        ready = now + self.params.lat_l1
        for addr in (op.input_vec_addr, op.weight_vec_addr):
            block = addr & self.block_mask
            hit, wait = self.hier.l1_lookup(src, block)
            if hit:
                if wait is not None:
                    ready = max(ready, wait)
            else:
                ready = max(ready, self.hier.fill(src, block, now))
        self.pending_bounce_exec += 1
        self._schedule(ready, "bounce_fin", src, op)

    def _bounce_finish(self, src, op, now):
        self.pending_bounce_exec -= 1
        value = self.image.dot(op.input_vec_addr, op.weight_vec_addr, op.length)
        self.out.add(op.output_addr, value)
        self.stats.normal_done += 1
        self.retired += 1
        if self.forwarding:
            ib = op.input_vec_addr & self.block_mask
            wb = op.weight_vec_addr & self.block_mask
            if self.hier.l1[src].contains(ib) and self.hier.l1[src].contains(wb):
                pair = (ib, wb)
                self.assign_tables[self.cluster_of[src]].register(pair, src)

    # ---- decode / issue --------------------------------------------------

    def _insert_predictions(self, sm, op, now):
        for pair in intra_mod.predict(op, self.geom):
            if sm.table.insert_prediction(pair, op.length, now) == "accepted":
                self.stats.predictions_made += 1

    def _issue(self, sm, warp, now):
        """Issue the warp's current op.  Returns the issue cost in cycles, or
        _BLOCKED after moving the warp to the blocked heap."""
        op = warp.ops[warp.pc]
        stats = self.stats

        if warp.exec_pending:
            warp.exec_pending = False
            self._execute(sm, warp, op, now)
            return self.params.issue_cost

        if self.speculate:
            status, result = sm.table.lookup((op.input_vec_addr, op.weight_vec_addr))
            if status == "hit":
                self.out.add(op.output_addr, result)
                stats.predicted_used += 1
                stats.instructions_issued += 1
                self.retired += 1
                sm.retire_warp_op(warp)
                return 1
            if status == "pending":
                stats.predictions_invalidated += 1

        ib = op.input_vec_addr & self.block_mask
        wb = op.weight_vec_addr & self.block_mask
        hit_i, wait_i = self.hier.l1_lookup(sm.sm_id, ib)
        hit_w, wait_w = self.hier.l1_lookup(sm.sm_id, wb)
        missing = []
        if not hit_i:
            missing.append(ib)
        if not hit_w:
            missing.append(wb)

        if not missing and wait_i is None and wait_w is None:
            self._execute(sm, warp, op, now)
            return self.params.issue_cost

        if missing and self.params.probe_availability:
            for b in missing:
                stats.probe_misses += 1
                if self.hier.present_elsewhere(sm.sm_id, b):
                    stats.probe_found_elsewhere += 1

        if missing and self.forwarding:
            pair = (ib, wb)
            owner = self.assign_tables[self.cluster_of[sm.sm_id]].lookup(pair)
            if owner is not None and owner != sm.sm_id \
                    and self.cluster_of[owner] == self.cluster_of[sm.sm_id]:
                stats.forwards += 1
                stats.instructions_issued += 1
                stats.fills_avoided += len(missing)
                self.pending_assigned += 1
                self._charge_message(sm.sm_id, owner)
                self._schedule(now + self.params.forward_latency, "forward",
                               owner, (op, sm.sm_id))
                sm.retire_warp_op(warp)
                return 1

        ready = now + self.params.lat_l1
        for b in missing:
            ready = max(ready, self.hier.fill(sm.sm_id, b, now))
        for w in (wait_i, wait_w):
            if w is not None:
                ready = max(ready, w)
        warp.saw_miss = True
        warp.exec_pending = True
        sm.block_warp(warp, ready)
        return _BLOCKED

    def _execute(self, sm, warp, op, now):
        value = self.image.dot(op.input_vec_addr, op.weight_vec_addr, op.length)
        self.out.add(op.output_addr, value)
        self.stats.normal_done += 1
        self.stats.instructions_issued += 1
        self.retired += 1
        if self.forwarding and warp.saw_miss:
            ib = op.input_vec_addr & self.block_mask
            wb = op.weight_vec_addr & self.block_mask
            # registration requires the pair to still be fully resident
            if self.hier.l1[sm.sm_id].contains(ib) and \
                    self.hier.l1[sm.sm_id].contains(wb):
                self.assign_tables[self.cluster_of[sm.sm_id]].register((ib, wb),
                                                                       sm.sm_id)
        warp.saw_miss = False
        if self.speculate:
            self._insert_predictions(sm, op, now)
        sm.retire_warp_op(warp)

    # ---- assistant engine ------------------------------------------------

    def _assist_finish(self, sm, now):
        entry = sm.assist_entry
        sm.assist_entry = None
        sm.assist_busy_until = None
        if entry.res_mask == -1:  # removed (bounced or invalidated) mid-flight
            return
        value = self.image.dot(entry.key[0], entry.key[1], entry.length)
        sm.table.finish(entry, value, now)
        self.stats.assists_executed += 1
        if entry.kind == intra_mod.ASSIGNED:
            self.out.add(entry.op.output_addr, value)
            self.stats.assigned_done += 1
            self.pending_assigned -= 1
            self.retired += 1
            if self.speculate:
                self._insert_predictions(sm, entry.op, now)
        else:
            self.stats.predictions_completed += 1

    # ---- per-SM step -----------------------------------------------------

    def _step(self, sm, now):
        """Advance one SM at cycle `now`; sets sm.state and sm.next_action."""
        self.hier.expire_fills(sm.sm_id, now)
        if sm.assist_busy_until is not None and sm.assist_busy_until <= now:
            self._assist_finish(sm, now)
        if self.speculate and sm.next_purge is not None and now >= sm.next_purge:
            self.stats.predictions_purged += sm.table.purge(
                now, self.params.purge_fraction)
            while sm.next_purge <= now:
                sm.next_purge += self.params.purge_period
        sm.wake_due(now)

        if self.params.debug_invariants:
            self._check_invariants(sm)

        nxt = INF
        if sm.busy_until > now:
            sm.state = BUSY
            nxt = sm.busy_until
        else:
            warp = gto_select(sm)
            if warp is not None:
                cost = self._issue(sm, warp, now)
                if cost == _BLOCKED:
                    sm.busy_until = now + 1
                else:
                    sm.busy_until = now + cost
                    sm.last_issued = warp
                sm.state = BUSY
                nxt = sm.busy_until
            else:
                if sm.table is not None and sm.assist_busy_until is None:
                    entry = sm.table.next_assist()
                    if entry is not None:
                        sm.assist_entry = entry
                        sm.assist_busy_until = now + self.params.assist_latency
                if sm.assist_busy_until is not None:
                    sm.state = ASSIST
                    nxt = sm.assist_busy_until
                elif sm.unfinished > 0:
                    sm.state = STALLED
                    nxt = sm.next_wake()
                else:
                    sm.state = IDLE
                    nxt = sm.next_wake()
        if self.speculate and sm.next_purge is not None:
            nxt = min(nxt, sm.next_purge)
        sm.next_action = nxt
        return nxt

    def _check_invariants(self, sm):
        if sm.table is not None and len(sm.table) > sm.table.capacity:
            raise AssertionError(f"SM {sm.sm_id} precompute table over capacity")
        for at in self.assign_tables:
            if len(at) > at.capacity:
                raise AssertionError(f"cluster {at.cluster_id} assign table over capacity")

    # ---- main loop -------------------------------------------------------

    def _active(self):
        if self.events or self.pending_assigned or self.pending_bounce_exec:
            return True
        for sm in self.sms:
            if sm.unfinished or sm.assist_busy_until is not None \
                    or sm.busy_until > self.now:
                return True
        return False

    def run(self):
        stats = self.stats
        sms = self.sms
        now = 0
        last_progress_count = -1
        last_progress_cycle = 0
        while True:
            self.now = now
            self._deliver_due(now)
            for sm in sms:
                if sm.next_action <= now:
                    self._step(sm, now)
            next_t = self.events[0][0] if self.events else INF
            for sm in sms:
                if sm.next_action < next_t:
                    next_t = sm.next_action
            if not self._active():
                break
            if self.retired != last_progress_count:
                last_progress_count = self.retired
                last_progress_cycle = now
            elif now - last_progress_cycle > self.params.max_idle_cycles:
                raise SimulationError(
                    f"no progress since cycle {last_progress_cycle}: "
                    f"{self.retired}/{stats.total_ops} ops retired, "
                    f"{self.pending_assigned} assigned pending, "
                    f"{len(self.events)} events queued")
            if next_t is INF:
                raise SimulationError(
                    f"nothing runnable at cycle {now} with work outstanding "
                    f"({self.retired}/{stats.total_ops} ops retired)")
            if next_t <= now:
                next_t = now + 1
            gap = next_t - now
            for sm in sms:
                if sm.state == STALLED:
                    stats.stall_cycles_per_sm[sm.sm_id] += gap
                elif sm.state == ASSIST:
                    stats.assist_cycles += gap
            now = next_t

        stats.total_cycles = now
        self._collect(stats)
        if self.speculate or self.forwarding:
            for sm in sms:
                if sm.table is not None:
                    sm.table.flush()
            for at in self.assign_tables:
                at.flush()
        stats.check_conservation()
        return stats, self.out

    def _collect(self, stats):
        stats.l1_hits = self.hier.l1_hits()
        stats.l1_misses = self.hier.l1_misses()
        stats.l2_hits = self.hier.l2_hits
        stats.l2_misses = self.hier.l2_misses
        stats.dram_accesses = self.hier.dram_accesses
        stats.noc_flit_hops = self.hier.noc_flit_hops
        stats.precompute_accesses = sum(sm.table.accesses for sm in self.sms
                                        if sm.table is not None)
        stats.assign_accesses = sum(at.accesses for at in self.assign_tables)


def run_simulation(params, programs, image, geom):
    """Run one layer under one scheme; returns (SimStats, OutputBuffer)."""
    return Simulation(params, programs, image, geom).run()
