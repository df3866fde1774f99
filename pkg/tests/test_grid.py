import pytest

from gridlight.grid import build_grid, movement


def test_3x3_counts():
    net = build_grid(3, 3, 500)
    assert net.n_tls == 9
    assert len(net.entry_edges) == 12
    assert len(net.exit_edges) == 12
    assert len(net.boundary_edges) == 24


def test_1x1_counts():
    net = build_grid(1, 1, 500)
    assert net.n_tls == 1
    assert len(net.entry_edges) == 4
    assert len(net.exit_edges) == 4


def test_2x3_counts():
    net = build_grid(2, 3, 400)
    assert net.n_tls == 6
    assert len(net.entry_edges) == 2 * (2 + 3)
    assert net.arm_length == 400


@pytest.mark.parametrize("rows,cols", [(0, 3), (3, 0), (0, 0)])
def test_rejects_zero_dimensions(rows, cols):
    with pytest.raises(ValueError):
        build_grid(rows, cols, 500)


def test_rejects_nonpositive_arm_length():
    with pytest.raises(ValueError):
        build_grid(2, 2, 0)


def test_edge_ordering_is_deterministic():
    a = build_grid(3, 2, 500)
    b = build_grid(3, 2, 500)
    assert [e.name for e in a.edges] == [e.name for e in b.edges]


def test_interior_node_has_four_inbound_arms():
    net = build_grid(3, 3, 500)
    assert set(net.inbound[(1, 1)].keys()) == {"N", "E", "S", "W"}
    assert set(net.outbound[(1, 1)].keys()) == {"N", "E", "S", "W"}


def test_movement_classification():
    assert movement("N", "S") == "through"
    assert movement("N", "E") == "left"
    assert movement("N", "W") == "right"
    assert movement("W", "E") == "through"
    assert movement("W", "N") == "left"
    assert movement("W", "S") == "right"
    with pytest.raises(ValueError):
        movement("N", "N")  # U-turn


def test_every_entry_reaches_every_exit():
    net = build_grid(2, 3, 500)
    for entry in net.entry_edges:
        for exit_ in net.exit_edges:
            e, x = net.edges[entry], net.edges[exit_]
            if e.to_node == x.from_node and e.to_dir == x.from_dir:
                with pytest.raises(ValueError):
                    net.route(entry, exit_)
                continue
            route = net.route(entry, exit_)
            assert route[0] == entry and route[-1] == exit_
            # consecutive edges form legal movements (raises on U-turn)
            for a, b in zip(route, route[1:]):
                net.edge_movement(a, b)


def test_routes_are_shortest():
    net = build_grid(3, 3, 500)
    for entry in net.entry_edges:
        for exit_ in net.exit_edges:
            e, x = net.edges[entry], net.edges[exit_]
            if e.to_node == x.from_node and e.to_dir == x.from_dir:
                continue
            route = net.route(entry, exit_)
            manhattan = abs(e.to_node[0] - x.from_node[0]) + abs(e.to_node[1] - x.from_node[1])
            assert len(route) == manhattan + 2


def test_ring_order_starts_north_of_origin():
    net = build_grid(2, 2, 500)
    names = [net.edges[i].name for i in net.entry_edges]
    assert names[0] == "entry-N-n0.0"
    assert names[1] == "entry-N-n0.1"
    assert names[2] == "entry-E-n0.1"


def test_describe_lists_every_edge():
    net = build_grid(2, 2, 300)
    text = net.describe()
    assert "grid 2x2" in text
    for e in net.edges:
        assert e.name in text
