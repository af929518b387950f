import random

import pytest
from hypothesis import given, settings

from checks import Violation, check_movement, run_checked
from conftest import K3, S4, TWO_TRIANGLES, gnp, graphs, random_connected
from docd import engine


@pytest.mark.parametrize("name", ["karate", "football"])
def test_fixtures(name, request):
    run_checked(request.getfixturevalue(name))


@pytest.mark.parametrize("g", [K3, S4, TWO_TRIANGLES])
def test_small(g):
    run_checked(g)


@pytest.mark.parametrize("g", random_connected(20, seed=21, max_n=40))
def test_random_connected(g):
    run_checked(g)


def test_random_sparse_disconnected():
    rng = random.Random(4)
    for _ in range(20):
        run_checked(gnp(rng.randint(1, 30), 0.07, rng))


@settings(max_examples=60, deadline=None)
@given(graphs(max_n=14))
def test_hypothesis_graphs(g):
    run_checked(g, engine.SimulationConfig(extra_sweeps=0))


def test_checker_catches_adjacent_movers(karate):
    sim = engine.Simulation(karate)
    sim.execute()
    rec = sim.passes[0]
    rec.movers = (1, 2)
    for v in (1, 2):
        sim.states[v].intent = sim.states[v].intent.__class__(
            sim.states[v].intent.kind.__class__.JOIN_KEEPING)
    sim.passes.append(rec)
    with pytest.raises(Violation):
        check_movement(sim)
