import pytest

from sdcps import Node, NodeKind, Priority, Topology, World


def make_node(i, kind=NodeKind.SWITCH, compute=None, domain=0):
    if compute is None:
        compute = 0 if kind is NodeKind.SWITCH else 1
    return Node(i, kind, domain=domain, compute_capacity=compute)


def build_topology(n_nodes, links):
    """links: iterable of (a, b) or (a, b, latency) or (a, b, latency, capacity)."""
    topo = Topology()
    for i in range(n_nodes):
        topo.add_node(make_node(i))
    for spec in links:
        a, b = spec[0], spec[1]
        latency = spec[2] if len(spec) > 2 else 1
        capacity = spec[3] if len(spec) > 3 else 1
        topo.add_link(a, b, latency, capacity)
    return topo


def build_world(n_nodes, links, seed=0, share=1, priority=Priority.GOLD,
                capacity=2, options=None):
    """Single-domain world with one tenant sliced over every link."""
    w = World(seed=seed, options=options)
    for i in range(n_nodes):
        kind = NodeKind.SMART_DEVICE
        w.add_node(Node(i, kind, compute_capacity=1))
    link_ids = []
    for spec in links:
        a, b = spec[0], spec[1]
        latency = spec[2] if len(spec) > 2 else 1
        cap = spec[3] if len(spec) > 3 else capacity
        link_ids.append(w.add_link(a, b, latency, cap))
    w.register_domain(0, range(n_nodes))
    w.allocate_slice(0, link_ids, share, priority)
    w.finish_setup()
    return w


@pytest.fixture
def diamond_world():
    # 0-1-3 and 0-2-3, equal latencies
    return build_world(4, [(0, 1), (1, 3), (0, 2), (2, 3)])


@pytest.fixture
def line_world():
    return build_world(3, [(0, 1), (1, 2)])


@pytest.fixture
def chord_world():
    # admitted path 0-1-2-3; the chord 0-2 is the standing detour
    return build_world(4, [(0, 1), (1, 2), (2, 3), (0, 2, 3)])
