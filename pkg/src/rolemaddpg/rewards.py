"""Role-based reward components and their per-step composition.

Every agent gets a bounding term and a pairwise collision term. On top of
that pursuers get a catch bonus and a distance penalty, evaders a caught
penalty, and scouts a shared exploration term equal to minus the largest
Voronoi cell over all agent positions.
"""

from dataclasses import dataclass
from enum import Enum
import math

import numpy as np

from .env import Role
from .geometry import bounded_voronoi, max_cell_area


class TargetAssignment(str, Enum):
    ROUND_ROBIN = "round_robin"
    NEAREST_GREEDY = "nearest_greedy"
    AVERAGE_ALL_TARGETS = "average_all_targets"


@dataclass(frozen=True)
class RewardConfig:
    c1: float = 10.0
    c2: float = 10.0
    c3: float = 10.0
    catch_reward: float = 20.0
    caught_penalty: float = -10.0
    target_assignment: TargetAssignment = TargetAssignment.ROUND_ROBIN
    voronoi_shared: bool = True

    def __post_init__(self):
        object.__setattr__(self, "target_assignment", TargetAssignment(self.target_assignment))
        self.validate()

    def validate(self):
        if self.c1 <= 0 or self.c2 <= 0 or self.c3 <= 0:
            raise ValueError("c1, c2 and c3 must be > 0")
        if self.catch_reward <= 0:
            raise ValueError("catch_reward must be > 0")
        if self.caught_penalty >= 0:
            raise ValueError("caught_penalty must be < 0")
        if not self.voronoi_shared:
            raise ValueError("only the shared exploration reward is supported")


@dataclass
class RewardBreakdown:
    bounding: float = 0.0
    collision: float = 0.0
    catch: float = 0.0
    distance: float = 0.0
    exploration: float = 0.0
    total: float = 0.0

    def as_tuple(self):
        return (self.bounding, self.collision, self.catch, self.distance, self.exploration, self.total)


def bounding_reward(position, c1, c2, half_extent=3.0):
    """-min(exp(3|x| - 3h), c1) - min(exp(3|y| - 3h), c2); with h=3 the
    exponent is 3|x| - 9."""
    x, y = float(position[0]), float(position[1])
    edge = 3.0 * half_extent
    # clamp the exponent so far-away agents do not overflow before the cap applies
    bx = min(math.exp(min(3.0 * abs(x) - edge, 700.0)), c1)
    by = min(math.exp(min(3.0 * abs(y) - edge, 700.0)), c2)
    return -bx - by


def collision_reward(dist, r_i, r_j, c3):
    return -c3 if dist <= r_i + r_j else 0.0


def _collision_total(agent, info, cfg):
    # one penalty per colliding neighbour
    return -cfg.c3 * int(np.count_nonzero(info.collisions[agent]))


def _check_role(state, agent, role):
    if state.roles[agent] != role:
        raise ValueError(f"agent {agent} is a {Role(state.roles[agent]).label}, not a {role.label}")


def _assigned_evader(state, agent):
    pursuers = state.ids(Role.PURSUER)
    evaders = state.ids(Role.EVADER)
    k = int(np.searchsorted(pursuers, agent))
    return evaders[k % len(evaders)]


def distance_reward(agent, state, info, assignment):
    evaders = state.ids(Role.EVADER)
    if len(evaders) == 0:
        return 0.0
    d = info.distances[agent, evaders]
    if assignment == TargetAssignment.ROUND_ROBIN:
        return -float(info.distances[agent, _assigned_evader(state, agent)])
    if assignment == TargetAssignment.NEAREST_GREEDY:
        return -float(np.min(d))
    return -float(np.mean(d))


def _breakdown(**parts):
    b = RewardBreakdown(**parts)
    b.total = b.bounding + b.collision + b.catch + b.distance + b.exploration
    return b


def pursuer_breakdown(agent, state, info, cfg):
    _check_role(state, agent, Role.PURSUER)
    caught = bool(np.any(info.collisions[agent, state.ids(Role.EVADER)]))
    return _breakdown(
        bounding=bounding_reward(state.position[agent], cfg.c1, cfg.c2, state.config.half_extent),
        collision=_collision_total(agent, info, cfg),
        catch=cfg.catch_reward if caught else 0.0,
        distance=distance_reward(agent, state, info, cfg.target_assignment),
    )


def evader_breakdown(agent, state, info, cfg):
    _check_role(state, agent, Role.EVADER)
    caught = bool(np.any(info.collisions[agent, state.ids(Role.PURSUER)]))
    return _breakdown(
        bounding=bounding_reward(state.position[agent], cfg.c1, cfg.c2, state.config.half_extent),
        collision=_collision_total(agent, info, cfg),
        catch=cfg.caught_penalty if caught else 0.0,
    )


def exploration_reward(diagram):
    return -max_cell_area(diagram)


def scout_breakdown(agent, state, info, diagram, cfg):
    _check_role(state, agent, Role.SCOUT)
    if len(diagram) != state.n_agents:
        raise ValueError(f"diagram has {len(diagram)} seeds for {state.n_agents} agents")
    return _breakdown(
        bounding=bounding_reward(state.position[agent], cfg.c1, cfg.c2, state.config.half_extent),
        collision=_collision_total(agent, info, cfg),
        exploration=exploration_reward(diagram),
    )


def pursuer_reward(agent, state, info, cfg):
    return pursuer_breakdown(agent, state, info, cfg).total


def evader_reward(agent, state, info, cfg):
    return evader_breakdown(agent, state, info, cfg).total


def scout_reward(agent, state, info, diagram, cfg):
    return scout_breakdown(agent, state, info, diagram, cfg).total


def compute_all_rewards(state, info, cfg):
    """Per-agent breakdowns for one step, in agent-id order.

    The Voronoi diagram is only built when the world has scouts.
    """
    diagram = None
    if np.any(state.roles == Role.SCOUT):
        diagram = bounded_voronoi(state.position, state.config.half_extent)
    out = []
    for i, role in enumerate(state.roles):
        if role == Role.PURSUER:
            out.append(pursuer_breakdown(i, state, info, cfg))
        elif role == Role.EVADER:
            out.append(evader_breakdown(i, state, info, cfg))
        else:
            out.append(scout_breakdown(i, state, info, diagram, cfg))
    return out
