"""Fixed-speed random-waypoint movement of people and sensors on a world graph."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .world_graph import GraphError, WorldGraph, astar_path

log = logging.getLogger(__name__)

PERSON = "person"
SENSOR = "sensor"


@dataclass
class Agent:
    kind: str
    position: int
    speed: int
    path: deque = field(default_factory=deque)
    stranded: bool = False

    def __post_init__(self):
        if self.kind not in (PERSON, SENSOR):
            raise ValueError(f"unknown agent kind {self.kind!r}")
        if self.speed < 1:
            raise ValueError("speed must be >= 1")


def init_population(g: WorldGraph, n_people: int, n_sensors: int,
                    v_person: int, v_sensor: int, rng: np.random.Generator) -> list[Agent]:
    """People first, then sensors, each on a uniformly drawn node."""
    if n_people < 0 or n_sensors < 0:
        raise ValueError("agent counts must be non-negative")
    if v_person < 1 or v_sensor < 1:
        raise ValueError("speeds must be >= 1")
    if g.n_nodes == 0:
        raise GraphError("cannot place agents on an empty graph")
    total = n_people + n_sensors
    if total == 0:
        return []
    nodes = rng.integers(0, g.n_nodes, size=total)
    agents = [Agent(PERSON, int(v), v_person) for v in nodes[:n_people]]
    agents += [Agent(SENSOR, int(v), v_sensor) for v in nodes[n_people:]]
    return agents


def draw_destination(g: WorldGraph, position: int, rng: np.random.Generator) -> int | None:
    """Uniform pick among reachable nodes other than ``position``; None if isolated."""
    members = g.reachable(position)
    if len(members) < 2:
        return None
    i = int(rng.integers(0, len(members) - 1))
    # members is sorted; shift past the current node so it is never drawn
    if members[i] >= position:
        i += 1
    return int(members[i])


def step_agent(a: Agent, g: WorldGraph, rng: np.random.Generator) -> Agent:
    """Advance one tick.

    An agent with an empty path spends the tick picking a destination and
    queueing the route to it; otherwise it consumes up to ``speed`` nodes.
    """
    path = a.path
    if not path:
        if a.stranded:
            return a
        dest = draw_destination(g, a.position, rng)
        if dest is None:
            a.stranded = True
            log.warning("agent on isolated node %d will stay put", a.position)
            return a
        route = astar_path(g, a.position, dest)
        path.extend(route[1:])
        return a
    hops = min(a.speed, len(path))
    for _ in range(hops - 1):
        path.popleft()
    a.position = path.popleft()
    return a
