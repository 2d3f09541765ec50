"""The simulated world and its deterministic tick loop.

One world owns everything mutable (topology, controllers, flows, bus, RNG,
trace) so a deep copy is a faithful twin. Each tick runs fixed phases:

  1. boundary changes   scheduled faults, committed decisions
  2. bus delivery       reports and digests published last tick, in
                        (tick, publisher, sequence) order
  3. flow admissions    scenario flows starting this tick
  4. digest broadcast   every digest-period ticks
  5. clone decisions    recovery for flows crossing suspected-failed nodes
  6. movement           arrivals, QoS-scheduled transmissions, telemetry
  7. metrics            one record per tick

Phases 3 and 4 stay in this order so per-sender westbound sequence numbers
are processed monotonically.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Optional

from .bus import Bus
from .controller import (
    LOSS,
    Priority,
    SliceTable,
    SouthboundReport,
    Verdict,
)
from .errors import (
    NoPath,
    NoPathInSlice,
    SdcpsError,
    StaleReport,
    Unrecoverable,
)
from .events import EventLog
from .farm import DEFAULT_DIGEST_PERIOD, Domain, Farm
from .flow_engine import FlowEngine, FlowState
from .topology import Health, HealthState, Node, NodeId, Topology


@dataclass
class WorldOptions:
    window: int = 3
    digest_period: int = DEFAULT_DIGEST_PERIOD
    congestion_threshold: float = 2.0
    materialize_transfers: bool = False
    transfer_tenant: int = 0


@dataclass
class PendingFlow:
    tenant: int
    origin: NodeId
    dest: NodeId
    units: int
    start: int


@dataclass
class PendingFault:
    tick: int
    node: NodeId
    health: Health


@dataclass
class MetricsRecord:
    tick: int
    delivered_units: int
    dropped_units: int
    cloned_units: int
    active_flows: int
    per_tenant_throughput: dict[int, int]
    controller_messages: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "tick": self.tick,
                "delivered": self.delivered_units,
                "dropped": self.dropped_units,
                "cloned": self.cloned_units,
                "active_flows": self.active_flows,
                "throughput": {str(k): v for k, v in sorted(self.per_tenant_throughput.items())},
                "messages": self.controller_messages,
            },
            sort_keys=True,
            separators=(",", ":"),
        )


class World:
    def __init__(self, seed: int = 0, options: Optional[WorldOptions] = None):
        self.seed = seed
        self.options = options or WorldOptions()
        self.rng = random.Random(seed)
        self.topology = Topology()
        self.slices = SliceTable(self.topology)
        self.log = EventLog()
        self.bus = Bus()
        self.farm = Farm(
            self.topology,
            self.slices,
            window=self.options.window,
            congestion_threshold=self.options.congestion_threshold,
        )
        self.farm.attach_bus(self.bus)
        self.engine = FlowEngine(self.topology, self.slices, self.rng, self.log)
        self.now = 0
        self.mid_tick = False
        self.pending_flows: list[PendingFlow] = []
        self.pending_faults: list[PendingFault] = []
        self.pending_commits: list = []  # Decision objects, applied next boundary
        self.metrics: list[MetricsRecord] = []
        self.rejected_flows: list[tuple[PendingFlow, str]] = []
        self.health_log: list[str] = []
        self.south_reports = 0
        self._subs_south: dict[int, object] = {}
        self._subs_west: dict[int, object] = {}
        self._line_mark = 0
        # optional service-composition workload
        self.registry = None
        self.dag = None
        self.task_overrides: dict[str, NodeId] = {}
        self.composition_makespan = 0
        self.composition_report = None

    # -- construction ------------------------------------------------------------

    def add_node(self, node: Node) -> NodeId:
        return self.topology.add_node(node)

    def add_link(self, a: NodeId, b: NodeId, latency: int, capacity: int):
        return self.topology.add_link(a, b, latency, capacity)

    def register_domain(self, domain_id: int, nodes) -> int:
        cid = self.farm.register_controller(Domain(domain_id, frozenset(nodes)))
        self._subs_south[cid] = self.bus.subscribe(f"south/{domain_id}/reports")
        self._subs_west[cid] = self.bus.subscribe(f"west/to/{cid:06d}/*")
        return cid

    def allocate_slice(self, tenant: int, links, share: int, priority: Priority):
        return self.slices.allocate(tenant, links, share, priority)

    def schedule_flow(self, tenant, origin, dest, units, start) -> None:
        self.pending_flows.append(PendingFlow(tenant, origin, dest, units, start))

    def schedule_fault(self, tick: int, node: NodeId, health: Health) -> None:
        self.pending_faults.append(PendingFault(tick, node, health))

    def finish_setup(self) -> None:
        """Validate that domains cover every node before the first tick."""
        stray = self.farm.unassigned_nodes()
        if stray:
            raise SdcpsError(f"nodes {stray} belong to no domain")

    # -- routing helpers -----------------------------------------------------------

    def route(self, tenant: int, origin: NodeId, dest: NodeId) -> list[NodeId]:
        """Admission route; federated composition handles every domain shape."""
        try:
            return self.farm.cross_domain_path(origin, dest, tenant)
        except NoPath as exc:
            raise NoPathInSlice(str(exc)) from exc

    def open_flow(self, tenant, origin, dest, units) -> int:
        path = self.route(tenant, origin, dest)
        return self.engine.open_flow(tenant, origin, dest, units, path)

    def reseed(self, seed: int) -> None:
        self.seed = seed
        self.rng = random.Random(seed)
        self.engine._rng = self.rng

    # -- composition workload ------------------------------------------------------

    def set_composition(self, registry, dag) -> None:
        self.registry = registry
        self.dag = dag

    def run_composition(self):
        """Schedule and execute the configured task graph against current
        health, honoring any committed placement overrides."""
        if self.registry is None or self.dag is None:
            return None
        from .composition import Scheduler

        scheduler = Scheduler(self.topology, self.registry)
        schedule = scheduler.schedule(self.dag, overrides=self.task_overrides)
        report = scheduler.execute(schedule, self.dag)
        self.composition_makespan = report.makespan
        self.composition_report = report
        self.log.emit(f"t={self.now} ev=composition makespan={report.makespan}")
        if self.options.materialize_transfers:
            for a, b, size in self.dag.edges:
                if size <= 0:
                    continue
                src = report.assignments[a][0]
                dst = report.assignments[b][0]
                if src == dst:
                    continue
                start = max(self.now + 1, report.assignments[a][2])
                self.schedule_flow(
                    self.options.transfer_tenant, src, dst, size, start
                )
        return report

    # -- tick loop --------------------------------------------------------------------

    def apply_health(self, node: NodeId, health: Health) -> None:
        """Change node health now, bumping caches and the world version."""
        changed = self.topology.set_health(node, health)
        if changed:
            self.engine.world_version += 1
            self.farm.invalidate_caches()
            line = f"t={self.now} ev=fault node={node} health={health.label()}"
            self.log.emit(line)
            self.health_log.append(line)

    def tick(self) -> None:
        self.mid_tick = True
        self.now += 1
        t = self.now
        self.farm.now = t
        self.engine.begin_tick(t)
        self._line_mark = len(self.log.lines)

        # 1. boundary changes
        for fault in sorted(
            (f for f in self.pending_faults if f.tick <= t),
            key=lambda f: (f.tick, f.node),
        ):
            self.apply_health(fault.node, fault.health)
        self.pending_faults = [f for f in self.pending_faults if f.tick > t]
        if self.pending_commits:
            from .sandbox import apply_decision

            for decision in self.pending_commits:
                apply_decision(self, decision)
            self.pending_commits = []

        # 2. bus delivery, then controller ingestion in delivered order
        self.bus.deliver_up_to(t)
        for cid in sorted(self.farm.controllers):
            ctrl = self.farm.controllers[cid]
            for msg in self._subs_west[cid].drain():
                self.farm.deliver_digest(msg.payload)
            for msg in self._subs_south[cid].drain():
                try:
                    transitions = ctrl.ingest_report(msg.payload)
                except StaleReport:
                    continue  # replayed telemetry is dropped, not fatal
                for est in transitions:
                    line = (
                        f"t={t} ev=estimate ctrl={cid} node={est.node} "
                        f"verdict={est.verdict.value}"
                    )
                    self.log.emit(line)
                    self.health_log.append(line)
                    self.farm.invalidate_caches()

        # 3. scenario admissions (start tick 0 opens on the first tick)
        for pf in [p for p in self.pending_flows if p.start <= t]:
            try:
                self.open_flow(pf.tenant, pf.origin, pf.dest, pf.units)
            except SdcpsError as exc:
                # dynamic-health admission misses are recorded, not fatal
                self.rejected_flows.append((pf, str(exc)))
                self.log.emit(
                    f"t={t} ev=reject tenant={pf.tenant} "
                    f"origin={pf.origin} dest={pf.dest} cause={type(exc).__name__}"
                )
        self.pending_flows = [p for p in self.pending_flows if p.start > t]

        # 4. digest broadcast
        if self.options.digest_period > 0 and t % self.options.digest_period == 0:
            for cid in sorted(self.farm.controllers):
                self.farm.broadcast_health_digest(cid)

        # 5. clone decisions
        self._clone_decisions()

        # 6. movement and telemetry
        self.engine.tick_movement()
        self._telemetry(t)

        # mirror this tick's event lines onto the flow-events topic
        for line in self.log.lines[self._line_mark:]:
            self.bus.publish("events/flows", line, t, "kernel")

        # 7. metrics
        rec = MetricsRecord(
            tick=t,
            delivered_units=self.engine.total_delivered,
            dropped_units=self.engine.total_dropped,
            cloned_units=self.engine.total_cloned,
            active_flows=self.engine.active_flow_count(),
            per_tenant_throughput=dict(self.engine.delivered_this_tick),
            controller_messages=self.farm.message_count + self.south_reports,
        )
        self.metrics.append(rec)
        self.mid_tick = False

    def run(self, horizon: int, stop_when_quiescent: bool = False) -> None:
        for _ in range(horizon):
            self.tick()
            if (
                stop_when_quiescent
                and self.engine.all_terminal()
                and not self.pending_flows
                and not self.pending_faults
            ):
                break

    def _clone_decisions(self) -> None:
        for fid in sorted(self.engine.flows):
            flow = self.engine.flows[fid]
            if flow.state is not FlowState.ACTIVE:
                continue
            owner = self.farm.resolve(flow.origin)
            view = self.farm.controllers[owner].merged_view()
            suspects = {
                n for n, v in view.items() if v is Verdict.SUSPECT_FAILED
            }
            for node in flow.path[1:-1]:
                if node not in suspects or node in flow.handled_bad:
                    continue
                if not self.engine.at_risk_seqs(fid, node):
                    # every unit is already safely beyond it; nothing to clone
                    flow.handled_bad.add(node)
                    continue
                try:
                    decision = self.engine.on_unhealthy(fid, node, suspects)
                    self.engine.clone_subflow(decision)
                except Unrecoverable:
                    pass
                break

    def _telemetry(self, t: int) -> None:
        """Every live node probes each neighbor; reports ride the bus and
        reach the reporter's domain controller next tick."""
        for reporter in self.topology.node_ids():
            rnode = self.topology.nodes[reporter]
            if rnode.health.state is HealthState.FAILED:
                continue
            observations = []
            for neighbor in self.topology.neighbors(reporter):
                h = self.topology.nodes[neighbor].health
                if h.state is HealthState.FAILED:
                    observations.append((neighbor, LOSS))
                elif h.state is HealthState.MALICIOUS:
                    if self.rng.random() < h.drop_prob:
                        observations.append((neighbor, LOSS))
                    else:
                        observations.append(
                            (neighbor, self.topology.effective_latency(reporter, neighbor))
                        )
                else:
                    observations.append(
                        (neighbor, self.topology.effective_latency(reporter, neighbor))
                    )
            if not observations:
                continue
            report = SouthboundReport(reporter, t, tuple(observations))
            domain = self.farm.resolve(reporter)
            self.bus.publish(
                f"south/{domain}/reports", report, t, f"node/{reporter:06d}"
            )
            self.south_reports += 1

    # -- summary ------------------------------------------------------------------------

    def trace_hash(self) -> str:
        return self.log.trace_hash()

    def summary(self) -> dict:
        flows = []
        for fid in sorted(self.engine.flows):
            f = self.engine.flows[fid]
            flows.append(
                {
                    "id": f.id,
                    "tenant": f.tenant,
                    "origin": f.origin,
                    "dest": f.destination,
                    "units": f.units,
                    "state": f.state.value,
                    "delivered": f.delivered_record,
                    "clones": f.clone_count,
                }
            )
        return {
            "ticks": self.now,
            "seed": self.seed,
            "trace_hash": self.trace_hash(),
            "flows": flows,
            "rejected_flows": [
                {"tenant": p.tenant, "origin": p.origin, "dest": p.dest, "cause": c}
                for p, c in self.rejected_flows
            ],
            "clone_decisions": [
                {
                    "flow": d.flow,
                    "case": int(d.case_tag),
                    "branch": d.branch_point,
                    "clone_destination": d.clone_destination,
                    "detour": d.detour,
                    "cloned_seqs": sorted(d.cloned_seqs),
                    "tick": d.decided_tick,
                }
                for d in self.engine.decisions
            ],
            "health_events": list(self.health_log),
            "totals": {
                "delivered": self.engine.total_delivered,
                "dropped": self.engine.total_dropped,
                "cloned": self.engine.total_cloned,
                "messages": self.farm.message_count,
                "slice_violations": self.engine.slice_violations,
            },
        }
