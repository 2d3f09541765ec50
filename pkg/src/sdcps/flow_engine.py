"""Flow transport and the subflow clone/recompose resilience protocol.

Flows carry sequence-numbered units along an admitted path. When the control
plane flags an intermediary, the engine picks a branch point with confirmed
custody of the at-risk units, duplicates them onto a detour, and recomposes
the stream through reorder buffers so the destination sees each sequence
number exactly once, in order.

Clone destination selection: if a detour can rejoin the original path at a
downstream intermediate node no more expensively than detouring straight to
the destination, the subflow rejoins there (minimizing redundant hops);
otherwise it runs all the way to the destination.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Optional

from .controller import SliceTable, TenantId, qos_schedule
from .errors import (
    NotIntermediate,
    StaleDecision,
    UnknownFlow,
    Unrecoverable,
)
from .events import EventLog
from .topology import HealthState, NodeId, Topology, link_id


class FlowState(str, Enum):
    ACTIVE = "active"
    RECOVERING = "recovering"
    DELIVERED = "delivered"
    FAILED = "failed"


class CloneCase(IntEnum):
    TO_DESTINATION = 1  # subflow runs to the original destination
    REJOIN = 2          # subflow rejoins the original path at an intermediate


@dataclass
class Unit:
    flow: int
    seq: int
    route: list[NodeId]
    position: int  # index into route of current (or arrival) node
    in_transit: bool = False
    remaining: int = 0
    injected_tick: int = 0

    def key(self) -> tuple[int, int]:
        return (self.flow, self.seq)


@dataclass
class ReorderBuffer:
    """Releases a flow's units strictly in sequence order, once each.

    `done` holds sequence numbers that will never be (or were already)
    released here: duplicates of them are absorbed silently.
    """

    at: NodeId
    flow: int
    onward: list[NodeId]  # remaining path after release; [] delivers
    held: dict[int, Unit] = field(default_factory=dict)
    done: set[int] = field(default_factory=set)
    next_expected: int = 0

    def absorb(self, unit: Unit) -> list[Unit]:
        """Take one arrival; return the units released by it, in order."""
        if unit.seq in self.done or unit.seq in self.held:
            return []
        self.held[unit.seq] = unit
        released = []
        while True:
            if self.next_expected in self.held:
                released.append(self.held.pop(self.next_expected))
                self.done.add(self.next_expected)
                self.next_expected += 1
            elif self.next_expected in self.done:
                self.next_expected += 1
            else:
                break
        return released


@dataclass
class Flow:
    id: int
    tenant: TenantId
    origin: NodeId
    destination: NodeId
    units: int
    path: list[NodeId]  # current canonical path, rewritten on recovery
    state: FlowState = FlowState.ACTIVE
    start_tick: int = 0
    high_water: dict[int, int] = field(default_factory=dict)  # seq -> furthest path index reached
    delivered_record: list[int] = field(default_factory=list)  # post-buffer, in release order
    destination_arrivals: list[int] = field(default_factory=list)  # pre-buffer, duplicates included
    clone_count: int = 0
    handled_bad: set[NodeId] = field(default_factory=set)

    def path_index(self, node: NodeId) -> Optional[int]:
        try:
            return self.path.index(node)
        except ValueError:
            return None


@dataclass
class CloneDecision:
    flow: int
    case_tag: CloneCase
    branch_point: NodeId
    clone_destination: NodeId
    detour: list[NodeId]  # branch_point .. clone_destination
    cloned_seqs: frozenset[int]
    decided_tick: int
    world_version: int


class FlowEngine:
    """Moves units each tick and runs the resilience protocol.

    All mutation happens inside tick(); distinct engines never share state.
    """

    def __init__(self, topology: Topology, slices: SliceTable, rng, log: EventLog):
        self._topology = topology
        self._slices = slices
        self._rng = rng
        self._log = log
        self.flows: dict[int, Flow] = {}
        self.units: list[Unit] = []
        self.buffers: dict[tuple[int, NodeId], ReorderBuffer] = {}
        self.decisions: list[CloneDecision] = []
        self._next_flow_id = 0
        self.now = 0
        self.world_version = 0
        # counters surfaced in metrics
        self.total_delivered = 0
        self.total_dropped = 0
        self.total_cloned = 0
        self.delivered_this_tick: dict[TenantId, int] = {}
        self.delivery_latencies: list[int] = []
        self.slice_violations = 0
        self.qos_log: list[tuple[int, tuple, TenantId, int, int, int]] = []

    def begin_tick(self, now: int) -> None:
        self.now = now
        self.delivered_this_tick = {}

    # -- flow lifecycle --------------------------------------------------------

    def open_flow(self, tenant: TenantId, origin: NodeId, dest: NodeId,
                  units: int, path: list[NodeId]) -> int:
        fid = self._next_flow_id
        self._next_flow_id += 1
        flow = Flow(fid, tenant, origin, dest, units, list(path), start_tick=self.now)
        self.flows[fid] = flow
        self.buffers[(fid, dest)] = ReorderBuffer(dest, fid, onward=[])
        self._log.emit(
            f"t={self.now} ev=open flow={fid} tenant={tenant} "
            f"path={_fmt_path(path)} units={units}"
        )
        for seq in range(units):
            self.units.append(Unit(fid, seq, flow.path, 0, injected_tick=self.now))
            flow.high_water[seq] = 0
        if units == 0:
            self._set_state(flow, FlowState.DELIVERED)
        elif origin == dest:
            # degenerate self-flow: units are already home
            buf = self._dest_buffer(flow)
            for u in sorted((u for u in self.units if u.flow == fid), key=Unit.key):
                flow.destination_arrivals.append(u.seq)
                for r in buf.absorb(u):
                    self._deliver(flow, r)
                self.units.remove(u)
        return fid

    def delivered(self, fid: int) -> list[int]:
        return list(self._flow(fid).delivered_record)

    def arrivals_at_destination(self, fid: int) -> list[int]:
        return list(self._flow(fid).destination_arrivals)

    def _flow(self, fid: int) -> Flow:
        if fid not in self.flows:
            raise UnknownFlow(f"flow {fid}")
        return self.flows[fid]

    def _set_state(self, flow: Flow, state: FlowState) -> None:
        if flow.state is state:
            return
        flow.state = state
        self._log.emit(f"t={self.now} ev=state flow={flow.id} state={state.value}")

    # -- resilience --------------------------------------------------------------

    def on_unhealthy(self, fid: int, bad: NodeId, suspects: set[NodeId]) -> CloneDecision:
        """Decide how to recover a flow around a flagged intermediary.

        `suspects` is the deciding controller's current set of
        suspected-failed nodes; detours avoid them all, plus `bad`.
        """
        flow = self._flow(fid)
        if flow.state is not FlowState.ACTIVE:
            raise StaleDecision(f"flow {fid} is {flow.state.value}")
        bad_idx = flow.path_index(bad)
        if bad_idx is None or bad_idx == 0 or bad_idx == len(flow.path) - 1:
            raise NotIntermediate(f"node {bad} is not an intermediate of flow {fid}")
        flow.handled_bad.add(bad)
        self._set_state(flow, FlowState.RECOVERING)

        avoid = (set(suspects) | {bad}) - {flow.origin, flow.destination}
        branch_idx = self._branch_index(flow, bad_idx, avoid)
        branch = flow.path[branch_idx]
        cloned = self.at_risk_seqs(fid, bad)

        sl = self._slices.get(flow.tenant)
        in_slice = lambda link: sl.covers(link.endpoints)
        avoid_detour = avoid - {branch}

        to_dest = self._topology.shortest_path(
            branch, flow.destination, link_filter=in_slice, exclude_nodes=avoid_detour
        )
        best_rejoin = None  # (latency, path index, detour)
        for idx in range(bad_idx + 1, len(flow.path) - 1):
            r = flow.path[idx]
            if r in avoid:
                continue
            found = self._topology.shortest_path(
                branch, r, link_filter=in_slice,
                exclude_nodes=avoid_detour - {r},
            )
            if found is None:
                continue
            cand = (found[0], idx, found[1])
            if best_rejoin is None or cand[:2] < best_rejoin[:2]:
                best_rejoin = cand

        if best_rejoin is not None and (to_dest is None or best_rejoin[0] <= to_dest[0]):
            case = CloneCase.REJOIN
            clone_dest = flow.path[best_rejoin[1]]
            detour = best_rejoin[2]
        elif to_dest is not None:
            case = CloneCase.TO_DESTINATION
            clone_dest = flow.destination
            detour = to_dest[1]
        else:
            self._set_state(flow, FlowState.FAILED)
            self._log.emit(f"t={self.now} ev=unrecoverable flow={fid} node={bad}")
            raise Unrecoverable(f"flow {fid}: no detour from {branch} avoiding {sorted(avoid)}")

        decision = CloneDecision(
            flow=fid,
            case_tag=case,
            branch_point=branch,
            clone_destination=clone_dest,
            detour=detour,
            cloned_seqs=cloned,
            decided_tick=self.now,
            world_version=self.world_version,
        )
        self.decisions.append(decision)
        self._log.emit(
            f"t={self.now} ev=decision flow={fid} case={int(case)} "
            f"branch={branch} dest={clone_dest} detour={_fmt_path(detour)} "
            f"seqs={_fmt_seqs(cloned)}"
        )
        return decision

    def _dest_buffer(self, flow: Flow) -> ReorderBuffer:
        return self.buffers[(flow.id, flow.destination)]

    def at_risk_seqs(self, fid: int, bad: NodeId) -> frozenset[int]:
        """Undelivered seqs the flagged node can still harm: everything not
        safely beyond it."""
        flow = self._flow(fid)
        bad_idx = flow.path_index(bad)
        if bad_idx is None:
            return frozenset()
        done = self._dest_buffer(flow).done
        return frozenset(
            s for s in range(flow.units)
            if s not in done and not self._safely_past(flow, s, bad_idx)
        )

    def _branch_index(self, flow: Flow, bad_idx: int, avoid: set[NodeId]) -> int:
        """Last path node before the failure with confirmed custody.

        Custody extends to the furthest index any unit has reached; if that
        node is itself suspect the branch walks back toward the origin.
        """
        progress = max(flow.high_water.values(), default=0)
        idx = min(bad_idx - 1, progress)
        while idx > 0 and flow.path[idx] in avoid:
            idx -= 1
        return idx

    def _safely_past(self, flow: Flow, seq: int, bad_idx: int) -> bool:
        """True when the unit can no longer be harmed by the flagged node.

        A unit is safe once its current node, or the node it is on the wire
        toward, lies strictly beyond the flagged index; anything at or
        heading into the flagged node is at risk.
        """
        for u in self.units:
            if u.flow == flow.id and u.seq == seq:
                idx = flow.path_index(u.route[u.position])
                if idx is None:
                    continue  # stranded on an old detour: treat as at risk
                if idx > bad_idx:
                    return True
        return False

    def clone_subflow(self, decision: CloneDecision) -> int:
        """Inject duplicates of the cloned seqs at the branch point and
        install the recompose buffer at the clone destination."""
        flow = self._flow(decision.flow)
        if decision.world_version != self.world_version or decision.decided_tick != self.now:
            raise StaleDecision(
                f"decision for flow {decision.flow} was made against an older world"
            )
        subflow_id = flow.clone_count
        flow.clone_count += 1

        dest_idx = flow.path_index(decision.clone_destination)
        if decision.case_tag is CloneCase.REJOIN:
            onward = flow.path[dest_idx:]
            key = (flow.id, decision.clone_destination)
            if key not in self.buffers:
                buf = ReorderBuffer(decision.clone_destination, flow.id, onward=onward)
                buf.done = set(self._dest_buffer(flow).done)
                for seq in range(flow.units):
                    if seq in buf.done:
                        continue
                    if self._beyond_buffer_point(flow, seq, dest_idx):
                        buf.done.add(seq)
                self.buffers[key] = buf

        branch_idx = flow.path_index(decision.branch_point)
        for seq in sorted(decision.cloned_seqs):
            dup = Unit(flow.id, seq, list(decision.detour), 0,
                       injected_tick=flow.start_tick)
            self.units.append(dup)
            self.total_cloned += 1
            self._log.emit(
                f"t={self.now} ev=clone flow={flow.id} seq={seq} "
                f"at={decision.branch_point} sub={subflow_id}"
            )

        # recovery is enacted; the canonical path now follows the detour
        prefix = flow.path[: branch_idx + 1]
        if decision.case_tag is CloneCase.REJOIN:
            rewritten = prefix[:-1] + decision.detour + flow.path[dest_idx + 1:]
        else:
            rewritten = prefix[:-1] + decision.detour
        flow.path = _simplify(rewritten)
        self._rebase_high_water(flow)
        if flow.state is FlowState.RECOVERING:
            self._set_state(flow, FlowState.ACTIVE)
        return subflow_id

    def _rebase_high_water(self, flow: Flow) -> None:
        """Re-express per-seq progress against the rewritten canonical path."""
        done = self._dest_buffer(flow).done
        positions: dict[int, int] = {}
        for u in self.units:
            if u.flow != flow.id:
                continue
            idx = flow.path_index(u.route[u.position])
            if idx is not None:
                positions[u.seq] = max(positions.get(u.seq, 0), idx)
        for seq in range(flow.units):
            if seq in done:
                flow.high_water[seq] = len(flow.path) - 1
            else:
                flow.high_water[seq] = positions.get(seq, 0)

    def _beyond_buffer_point(self, flow: Flow, seq: int, point_idx: int) -> bool:
        """Will this unit never pass through the buffer node again?"""
        for u in self.units:
            if u.flow == flow.id and u.seq == seq:
                here = u.route[u.position]
                idx = flow.path_index(here)
                if idx is None:
                    continue
                if u.in_transit and idx > point_idx:
                    return True
                if not u.in_transit and idx >= point_idx:
                    return True
        return False

    # -- per-tick movement ----------------------------------------------------------

    def tick_movement(self) -> None:
        self._arrivals()
        self._transmissions()

    def _arrivals(self) -> None:
        arrived: list[Unit] = []
        for u in sorted((u for u in self.units if u.in_transit), key=Unit.key):
            u.remaining -= 1
            if u.remaining <= 0:
                arrived.append(u)
        for u in arrived:
            u.in_transit = False
            self._arrive(u)

    def _arrive(self, unit: Unit) -> None:
        flow = self.flows[unit.flow]
        node = unit.route[unit.position]
        health = self._topology.nodes[node].health
        if health.state is HealthState.FAILED:
            self._drop(unit, node, "failed")
            return
        if health.state is HealthState.MALICIOUS:
            if self._rng.random() < health.drop_prob:
                self._drop(unit, node, "malicious")
                return
        self._log.emit(f"t={self.now} ev=arrive flow={unit.flow} seq={unit.seq} node={node}")
        idx = flow.path_index(node)
        if idx is not None:
            flow.high_water[unit.seq] = max(flow.high_water.get(unit.seq, 0), idx)
        buf = self.buffers.get((unit.flow, node))
        if buf is not None:
            if node == flow.destination:
                flow.destination_arrivals.append(unit.seq)
            released = buf.absorb(unit)
            self.units.remove(unit)
            for r in released:
                if node == flow.destination:
                    self._deliver(flow, r)
                else:
                    self._log.emit(
                        f"t={self.now} ev=release flow={flow.id} seq={r.seq} at={node}"
                    )
                    self.units.append(
                        Unit(flow.id, r.seq, list(buf.onward), 0,
                             injected_tick=r.injected_tick)
                    )
            return
        if unit.position == len(unit.route) - 1:
            # route exhausted off the canonical machinery; absorb quietly
            self.units.remove(unit)

    def _deliver(self, flow: Flow, unit: Unit) -> None:
        flow.delivered_record.append(unit.seq)
        self.total_delivered += 1
        self.delivered_this_tick[flow.tenant] = (
            self.delivered_this_tick.get(flow.tenant, 0) + 1
        )
        self.delivery_latencies.append(self.now - unit.injected_tick)
        self._log.emit(f"t={self.now} ev=deliver flow={flow.id} seq={unit.seq}")
        if len(flow.delivered_record) == flow.units and flow.state in (
            FlowState.ACTIVE, FlowState.RECOVERING,
        ):
            self._set_state(flow, FlowState.DELIVERED)

    def _drop(self, unit: Unit, node: NodeId, cause: str) -> None:
        self.total_dropped += 1
        self._log.emit(
            f"t={self.now} ev=drop flow={unit.flow} seq={unit.seq} node={node} cause={cause}"
        )
        self.units.remove(unit)

    def _transmissions(self) -> None:
        # queued units wanting to depart, grouped by directed link
        by_link: dict[tuple[NodeId, NodeId], list[Unit]] = {}
        for u in self.units:
            if u.in_transit or u.position >= len(u.route) - 1:
                continue
            here = u.route[u.position]
            if self._topology.nodes[here].health.state is HealthState.FAILED:
                continue  # custody lost; recovery clones these seqs
            nxt = u.route[u.position + 1]
            by_link.setdefault((here, nxt), []).append(u)

        for (here, nxt) in sorted(by_link):
            queue = sorted(by_link[(here, nxt)], key=Unit.key)
            lid = link_id(here, nxt)
            link = self._topology.links.get(lid)
            if link is None:
                continue
            pending: dict[TenantId, list[Unit]] = {}
            for u in queue:
                pending.setdefault(self.flows[u.flow].tenant, []).append(u)
            requests = []
            for tenant in sorted(pending):
                sl = self._slices.slices.get(tenant)
                if sl is None or not sl.covers(lid):
                    self.slice_violations += len(pending[tenant])
                    continue
                requests.append((tenant, sl.priority, sl.share, len(pending[tenant])))
            if not requests:
                continue
            grants = qos_schedule(link.capacity, requests)
            latency = self._topology.effective_latency(here, nxt)
            for tenant, _prio, share, n_pending in requests:
                granted = grants.get(tenant, 0)
                self.qos_log.append((self.now, lid, tenant, n_pending, share, granted))
                for u in pending[tenant][:granted]:
                    u.in_transit = True
                    u.position += 1
                    u.remaining = latency
                    self._log.emit(
                        f"t={self.now} ev=send flow={u.flow} seq={u.seq} "
                        f"link={here}-{nxt}"
                    )

    # -- introspection ---------------------------------------------------------------

    def active_flow_count(self) -> int:
        return sum(
            1 for f in self.flows.values()
            if f.state in (FlowState.ACTIVE, FlowState.RECOVERING)
        )

    def all_terminal(self) -> bool:
        return all(
            f.state in (FlowState.DELIVERED, FlowState.FAILED)
            for f in self.flows.values()
        )


def _simplify(path: list[NodeId]) -> list[NodeId]:
    """Cut loops so the canonical path visits each node at most once."""
    out: list[NodeId] = []
    at: dict[NodeId, int] = {}
    for node in path:
        if node in at:
            del out[at[node] + 1:]
            for n in list(at):
                if at[n] > at[node]:
                    del at[n]
        else:
            at[node] = len(out)
            out.append(node)
    return out


def _fmt_path(path) -> str:
    return ">".join(str(n) for n in path)


def _fmt_seqs(seqs) -> str:
    return ",".join(str(s) for s in sorted(seqs)) or "-"
