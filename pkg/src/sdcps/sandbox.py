"""Modelling sandbox: spawn a one-to-one twin of the world, rehearse a
decision over a horizon, and commit it to the physical world only if the
rehearsal improved things.

A twin is a deep copy, so it runs the same code the physical world runs;
with the same seed its trace hash is identical tick for tick. Twin
mutations can never touch physical state.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .controller import Priority
from .errors import MidTickSpawn, StaleDelta, UnresolvableDecision
from .topology import Health, NodeId
from .world import World


class DecisionKind(str, Enum):
    REROUTE = "reroute"
    SET_SLICE = "set_slice"
    PLACE_TASK = "place_task"
    INJECT_REPAIR = "inject_repair"


@dataclass
class Decision:
    kind: DecisionKind
    flow: Optional[int] = None
    new_path: Optional[list[NodeId]] = None
    tenant: Optional[int] = None
    links: Optional[list] = None
    share: Optional[int] = None
    priority: Optional[Priority] = None
    task: Optional[str] = None
    node: Optional[NodeId] = None

    @classmethod
    def reroute(cls, flow: int, new_path: list[NodeId]) -> "Decision":
        return cls(DecisionKind.REROUTE, flow=flow, new_path=list(new_path))

    @classmethod
    def set_slice(cls, tenant: int, links, share: int, priority: Priority) -> "Decision":
        return cls(DecisionKind.SET_SLICE, tenant=tenant, links=list(links),
                   share=share, priority=priority)

    @classmethod
    def place_task(cls, task: str, node: NodeId) -> "Decision":
        return cls(DecisionKind.PLACE_TASK, task=task, node=node)

    @classmethod
    def inject_repair(cls, node: NodeId) -> "Decision":
        return cls(DecisionKind.INJECT_REPAIR, node=node)


@dataclass
class MetricsDelta:
    delivered_units: int
    mean_latency: float
    makespan: int
    violations: int
    snapshot_tick: int


@dataclass
class TwinWorld:
    world: World
    mapping: dict[NodeId, NodeId]
    twin_seed: int

    @property
    def tick(self) -> int:
        return self.world.now


def spawn_twin(world: World, twin_seed: Optional[int] = None) -> TwinWorld:
    """Deep-copy the world at a tick boundary into an isolated twin."""
    if world.mid_tick:
        raise MidTickSpawn("twins may only be spawned between ticks")
    twin = copy.deepcopy(world)
    if twin_seed is not None:
        twin.reseed(twin_seed)
    mapping = {n: n for n in world.topology.node_ids()}
    return TwinWorld(twin, mapping, twin_seed if twin_seed is not None else world.seed)


def apply_decision(world: World, decision: Decision) -> None:
    """Resolve and apply one decision against a world, now."""
    if decision.kind is DecisionKind.INJECT_REPAIR:
        if decision.node not in world.topology.nodes:
            raise UnresolvableDecision(f"node {decision.node} does not exist")
        world.apply_health(decision.node, Health.healthy())
    elif decision.kind is DecisionKind.REROUTE:
        flow = world.engine.flows.get(decision.flow)
        if flow is None:
            raise UnresolvableDecision(f"flow {decision.flow} does not exist")
        path = decision.new_path
        if not path or path[0] != flow.origin or path[-1] != flow.destination:
            raise UnresolvableDecision("reroute path must span origin to destination")
        sl = world.slices.slices.get(flow.tenant)
        for a, b in zip(path, path[1:]):
            if not world.topology.has_link(a, b):
                raise UnresolvableDecision(f"reroute uses missing link ({a},{b})")
            if sl is None or not sl.covers(world.topology.link(a, b).endpoints):
                raise UnresolvableDecision(f"reroute leaves the tenant slice at ({a},{b})")
        if path != flow.path:
            flow.path = list(path)
            for unit in world.engine.units:
                if unit.flow != flow.id or unit.in_transit:
                    continue
                here = unit.route[unit.position]
                if here in path:
                    unit.route = list(path)
                    unit.position = path.index(here)
            world.engine._rebase_high_water(flow)
            world.log.emit(
                f"t={world.now} ev=reroute flow={flow.id} "
                f"path={'>'.join(str(n) for n in path)}"
            )
    elif decision.kind is DecisionKind.SET_SLICE:
        try:
            world.slices.allocate(
                decision.tenant, decision.links, decision.share, decision.priority
            )
        except Exception as exc:
            raise UnresolvableDecision(str(exc)) from exc
    elif decision.kind is DecisionKind.PLACE_TASK:
        if decision.node not in world.topology.nodes:
            raise UnresolvableDecision(f"node {decision.node} does not exist")
        if world.dag is None or decision.task not in world.dag.task_ids():
            raise UnresolvableDecision(f"task {decision.task!r} is not in the workload")
        service = dict(world.dag.tasks)[decision.task]
        if decision.node not in world.registry.lookup(service).providers:
            raise UnresolvableDecision(
                f"node {decision.node} does not provide {service!r}"
            )
        world.task_overrides[decision.task] = decision.node
    else:
        raise UnresolvableDecision(f"unknown decision kind {decision.kind}")


def evaluate(twin: TwinWorld, decision: Decision, horizon: int) -> MetricsDelta:
    """Run baseline and decision branches from identical snapshots and
    return candidate minus baseline metrics over that horizon."""
    if horizon < 1:
        raise UnresolvableDecision("horizon must be >= 1")
    snapshot_tick = twin.world.now
    baseline = copy.deepcopy(twin.world)
    candidate = copy.deepcopy(twin.world)
    apply_decision(candidate, decision)  # UnresolvableDecision propagates
    baseline.run(horizon)
    candidate.run(horizon)
    if baseline.dag is not None:
        baseline.run_composition()
        candidate.run_composition()

    def mean_latency(w: World) -> float:
        lat = w.engine.delivery_latencies
        return sum(lat) / len(lat) if lat else 0.0

    return MetricsDelta(
        delivered_units=candidate.engine.total_delivered - baseline.engine.total_delivered,
        mean_latency=mean_latency(candidate) - mean_latency(baseline),
        makespan=candidate.composition_makespan - baseline.composition_makespan,
        violations=candidate.engine.slice_violations - baseline.engine.slice_violations,
        snapshot_tick=snapshot_tick,
    )


def default_policy(delta: MetricsDelta) -> bool:
    return delta.violations <= 0 and delta.delivered_units >= 0


def commit(world: World, decision: Decision, delta: MetricsDelta, policy=default_policy) -> bool:
    """Queue the decision for the next tick boundary iff the policy accepts
    the evaluated delta. Rejects stale deltas outright."""
    if delta.snapshot_tick != world.now:
        raise StaleDelta(
            f"delta evaluated at tick {delta.snapshot_tick}, world is at {world.now}"
        )
    if not policy(delta):
        return False
    world.pending_commits.append(decision)
    return True
