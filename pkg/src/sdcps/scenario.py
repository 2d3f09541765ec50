"""Scenario documents: JSON with fixed sections, validated exhaustively.

Validation collects every violation it can find instead of stopping at the
first, and rejects at parse time anything a module would reject at run time
(domain partition, slice capacity, DAG shape, slice connectivity of flows).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .composition import CompositionDag, ServiceRegistry
from .controller import Priority
from .errors import ScenarioSyntaxError, ScenarioValidationError, SdcpsError
from .topology import Health, Node, NodeKind, link_id
from .world import World, WorldOptions

_KINDS = {k.value for k in NodeKind}
_PRIORITIES = {"gold", "silver", "bronze"}


@dataclass
class Scenario:
    seed: int
    horizon: int
    nodes: list[dict]
    links: list[dict]
    domains: list[dict]
    tenants: list[dict] = field(default_factory=list)
    services: list[dict] = field(default_factory=list)
    dag: Optional[dict] = None
    flows: list[dict] = field(default_factory=list)
    faults: list[dict] = field(default_factory=list)
    options: dict = field(default_factory=dict)


def parse_health(spec) -> Health:
    if isinstance(spec, str):
        if spec == "healthy":
            return Health.healthy()
        if spec == "failed":
            return Health.failed()
        raise ValueError(f"unknown health {spec!r}")
    kind = spec.get("kind")
    if kind == "healthy":
        return Health.healthy()
    if kind == "failed":
        return Health.failed()
    if kind == "congested":
        return Health.congested(float(spec["slowdown"]))
    if kind == "malicious":
        return Health.malicious(float(spec["drop_prob"]))
    raise ValueError(f"unknown health {spec!r}")


def parse_scenario(text: str) -> Scenario:
    """Parse and fully validate a scenario document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioSyntaxError(exc.lineno, exc.msg) from exc
    if not isinstance(doc, dict):
        raise ScenarioSyntaxError(1, "scenario must be a JSON object")

    problems: list[str] = []
    scenario = Scenario(
        seed=int(doc.get("seed", 0)),
        horizon=int(doc.get("horizon", 1)),
        nodes=doc.get("nodes", []),
        links=doc.get("links", []),
        domains=doc.get("domains", []),
        tenants=doc.get("tenants", []),
        services=doc.get("services", []),
        dag=doc.get("dag"),
        flows=doc.get("flows", []),
        faults=doc.get("faults", []),
        options=doc.get("options", {}),
    )
    _validate(scenario, problems)
    if problems:
        raise ScenarioValidationError(problems)
    return scenario


def _validate(s: Scenario, problems: list[str]) -> None:
    if s.horizon < 1:
        problems.append("horizon must be >= 1")

    node_ids: set[int] = set()
    capacities: dict[int, int] = {}
    for n in s.nodes:
        nid = n.get("id")
        if not isinstance(nid, int) or nid < 0:
            problems.append(f"node id {nid!r} must be a non-negative integer")
            continue
        if nid in node_ids:
            problems.append(f"node {nid} declared twice")
            continue
        node_ids.add(nid)
        kind = n.get("kind", "switch")
        if kind not in _KINDS:
            problems.append(f"node {nid}: unknown kind {kind!r}")
        compute = n.get("compute", 0 if kind == "switch" else 1)
        capacities[nid] = compute
        if compute < 0:
            problems.append(f"node {nid}: compute must be >= 0")
        elif compute == 0 and kind != "switch":
            problems.append(f"node {nid}: compute 0 is only permitted for switches")

    link_caps: dict[tuple[int, int], int] = {}
    adjacency: dict[int, set[int]] = {n: set() for n in node_ids}
    for l in s.links:
        a, b = l.get("a"), l.get("b")
        if a == b:
            problems.append(f"link ({a},{b}) is a self-loop")
            continue
        missing = [x for x in (a, b) if x not in node_ids]
        if missing:
            problems.append(f"link ({a},{b}) references unknown nodes {missing}")
            continue
        lid = link_id(a, b)
        if lid in link_caps:
            problems.append(f"link {lid} declared twice")
            continue
        latency = l.get("latency", 1)
        capacity = l.get("capacity", 1)
        if latency < 1:
            problems.append(f"link {lid}: latency must be >= 1")
        if capacity < 1:
            problems.append(f"link {lid}: capacity must be >= 1")
        link_caps[lid] = capacity
        adjacency[a].add(b)
        adjacency[b].add(a)

    # domains must partition the node set with connected induced subgraphs
    owned: dict[int, int] = {}
    domain_ids: set[int] = set()
    for d in s.domains:
        did = d.get("id")
        members = d.get("nodes", [])
        if did in domain_ids:
            problems.append(f"domain {did} declared twice")
            continue
        domain_ids.add(did)
        for n in members:
            if n not in node_ids:
                problems.append(f"domain {did} contains unknown node {n}")
            elif n in owned:
                problems.append(
                    f"domains {owned[n]} and {did} overlap on node {n}"
                )
            else:
                owned[n] = did
        ok_members = [n for n in members if n in node_ids]
        if ok_members and not _connected(set(ok_members), adjacency):
            problems.append(f"domain {did} induces a disconnected subgraph")
    uncovered = sorted(node_ids - set(owned))
    if uncovered:
        problems.append(f"nodes {uncovered} belong to no domain")

    tenant_ids: set[int] = set()
    slice_links: dict[int, set[tuple[int, int]]] = {}
    claims: dict[tuple[int, int], int] = {}
    for t in s.tenants:
        tid = t.get("id")
        if tid in tenant_ids:
            problems.append(f"tenant {tid} declared twice")
            continue
        tenant_ids.add(tid)
        prio = t.get("priority", "bronze")
        if prio not in _PRIORITIES:
            problems.append(f"tenant {tid}: unknown priority {prio!r}")
        share = t.get("share", 1)
        if share < 0:
            problems.append(f"tenant {tid}: share must be >= 0")
        mine: set[tuple[int, int]] = set()
        for pair in t.get("links", []):
            lid = link_id(*pair)
            if lid not in link_caps:
                problems.append(f"tenant {tid}: slice link {lid} does not exist")
                continue
            mine.add(lid)
            claims[lid] = claims.get(lid, 0) + share
        slice_links[tid] = mine
    for lid, total in sorted(claims.items()):
        if lid in link_caps and total > link_caps[lid]:
            problems.append(
                f"link {lid} oversubscribed: shares {total} exceed capacity {link_caps[lid]}"
            )

    service_names: set[str] = set()
    service_costs: dict[str, int] = {}
    for svc in s.services:
        name = svc.get("name")
        if name in service_names:
            problems.append(f"service {name!r} declared twice")
            continue
        service_names.add(name)
        cost = svc.get("cost", 1)
        service_costs[name] = cost
        if cost <= 0:
            problems.append(f"service {name!r}: cost must be > 0")
        providers = svc.get("providers", [])
        usable = [
            p for p in providers if p in node_ids and capacities.get(p, 0) > 0
        ]
        for p in providers:
            if p not in node_ids:
                problems.append(f"service {name!r}: unknown provider {p}")
        if not usable:
            problems.append(f"service {name!r} has no providers with compute capacity")

    if s.dag is not None:
        task_ids: set[str] = set()
        for entry in s.dag.get("tasks", []):
            task, svc = entry[0], entry[1]
            if task in task_ids:
                problems.append(f"task {task!r} declared twice")
            task_ids.add(task)
            if svc not in service_names:
                problems.append(f"task {task!r} uses unknown service {svc!r}")
        edges = [tuple(e) for e in s.dag.get("edges", [])]
        for a, b, size in edges:
            if a not in task_ids or b not in task_ids:
                problems.append(f"dag edge ({a},{b}) references unknown tasks")
            if size < 0:
                problems.append(f"dag edge ({a},{b}): transfer size must be >= 0")
        if _has_cycle(task_ids, [(a, b) for a, b, _ in edges]):
            problems.append("dag contains a cycle")

    for i, f in enumerate(s.flows):
        tid = f.get("tenant")
        if tid not in tenant_ids:
            problems.append(f"flow {i}: unknown tenant {tid}")
            continue
        units = f.get("units", 0)
        if units < 0:
            problems.append(f"flow {i}: units must be >= 0")
        if f.get("start", 0) < 0:
            problems.append(f"flow {i}: start tick must be >= 0")
        endpoints = [f.get("origin"), f.get("dest")]
        if any(e not in node_ids for e in endpoints):
            problems.append(f"flow {i}: endpoints {endpoints} must be declared nodes")
            continue
        links = slice_links.get(tid, set())
        if not _slice_connected(endpoints[0], endpoints[1], links):
            problems.append(
                f"flow {i}: tenant {tid} slice does not connect "
                f"{endpoints[0]} to {endpoints[1]}"
            )

    for i, fault in enumerate(s.faults):
        if fault.get("node") not in node_ids:
            problems.append(f"fault {i}: unknown node {fault.get('node')}")
        if fault.get("tick", 0) < 0:
            problems.append(f"fault {i}: tick must be >= 0")
        try:
            parse_health(fault.get("health", "failed"))
        except (ValueError, KeyError, SdcpsError) as exc:
            problems.append(f"fault {i}: {exc}")

    opts = s.options
    if opts.get("w", 3) < 1:
        problems.append("options.w must be >= 1")
    if opts.get("digest_period", 5) < 1:
        problems.append("options.digest_period must be >= 1")
    if opts.get("congestion_threshold", 2.0) <= 0:
        problems.append("options.congestion_threshold must be > 0")


def _connected(members: set[int], adjacency: dict[int, set[int]]) -> bool:
    if len(members) <= 1:
        return True
    start = min(members)
    seen = {start}
    frontier = [start]
    while frontier:
        u = frontier.pop()
        for v in adjacency.get(u, ()):
            if v in members and v not in seen:
                seen.add(v)
                frontier.append(v)
    return seen == members


def _slice_connected(origin: int, dest: int, links: set[tuple[int, int]]) -> bool:
    if origin == dest:
        return True
    adj: dict[int, set[int]] = {}
    for a, b in links:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    seen = {origin}
    frontier = [origin]
    while frontier:
        u = frontier.pop()
        for v in adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                frontier.append(v)
    return dest in seen


def _has_cycle(tasks: set[str], edges: list[tuple[str, str]]) -> bool:
    indeg = {t: 0 for t in tasks}
    outs: dict[str, list[str]] = {t: [] for t in tasks}
    for a, b in edges:
        if a in indeg and b in indeg:
            indeg[b] += 1
            outs[a].append(b)
    ready = [t for t, d in indeg.items() if d == 0]
    seen = 0
    while ready:
        t = ready.pop()
        seen += 1
        for b in outs[t]:
            indeg[b] -= 1
            if indeg[b] == 0:
                ready.append(b)
    return seen != len(tasks)


def build_world(scenario: Scenario, seed: Optional[int] = None) -> World:
    """Materialize a validated scenario into a ready-to-run world."""
    opts = WorldOptions(
        window=scenario.options.get("w", 3),
        digest_period=scenario.options.get("digest_period", 5),
        congestion_threshold=scenario.options.get("congestion_threshold", 2.0),
        materialize_transfers=scenario.options.get("materialize_transfers", False),
        transfer_tenant=scenario.options.get("transfer_tenant", 0),
    )
    world = World(seed=seed if seed is not None else scenario.seed, options=opts)
    for n in scenario.nodes:
        kind = NodeKind(n.get("kind", "switch"))
        compute = n.get("compute", 0 if kind is NodeKind.SWITCH else 1)
        world.add_node(Node(n["id"], kind, compute_capacity=compute))
    for l in scenario.links:
        world.add_link(l["a"], l["b"], l.get("latency", 1), l.get("capacity", 1))
    for d in scenario.domains:
        world.register_domain(d["id"], d.get("nodes", []))
    for t in scenario.tenants:
        world.allocate_slice(
            t["id"],
            [tuple(p) for p in t.get("links", [])],
            t.get("share", 1),
            Priority.parse(t.get("priority", "bronze")),
        )
    if scenario.services:
        registry = ServiceRegistry(world.topology)
        for svc in scenario.services:
            registry.register_service(svc["name"], svc["cost"], svc["providers"])
        if scenario.dag is not None:
            dag = CompositionDag(
                [tuple(t) for t in scenario.dag.get("tasks", [])],
                [tuple(e) for e in scenario.dag.get("edges", [])],
            )
            world.set_composition(registry, dag)
        else:
            world.registry = registry
    for f in scenario.flows:
        world.schedule_flow(
            f["tenant"], f["origin"], f["dest"], f.get("units", 1), f.get("start", 0)
        )
    for fault in scenario.faults:
        world.schedule_fault(
            fault.get("tick", 0), fault["node"], parse_health(fault.get("health", "failed"))
        )
    world.finish_setup()
    return world


def run_scenario(scenario: Scenario, seed: Optional[int] = None):
    """Run a scenario to its horizon; returns (world, trace hash, summary)."""
    world = build_world(scenario, seed=seed)
    if world.dag is not None:
        world.run_composition()
    world.run(scenario.horizon)
    summary = world.summary()
    if world.composition_report is not None:
        summary["composition"] = {
            "makespan": world.composition_report.makespan,
            "assignments": {
                t: list(a) for t, a in sorted(world.composition_report.assignments.items())
            },
            "replaced": world.composition_report.replaced,
        }
    return world, world.trace_hash(), summary
