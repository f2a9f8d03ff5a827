"""Bounded 2D particle world for pursuers, scouts and evaders.

Agents are double integrators with velocity damping and a hard speed cap.
There is no wall at the arena edge: containment comes from the bounding
reward. Obstacles are static discs; an agent that penetrates one is pushed
back onto its surface and loses the inward component of its velocity.

Agent ids are laid out role by role: pursuers first, then scouts, then
evaders.
"""

from dataclasses import dataclass, field, replace
from enum import IntEnum
import math

import numpy as np

SPAWN_ATTEMPTS = 1000


class Role(IntEnum):
    PURSUER = 0
    SCOUT = 1
    EVADER = 2

    @property
    def label(self):
        return self.name.lower()

    @classmethod
    def from_label(cls, label):
        return cls[label.upper()]


class SpawnError(RuntimeError):
    """Rejection sampling ran out of attempts (the layout is too dense)."""


@dataclass(frozen=True)
class WorldConfig:
    half_extent: float = 3.0
    n_pursuers: int = 5
    n_scouts: int = 0
    n_evaders: int = 2
    pursuer_radius: float = 0.075
    scout_radius: float = 0.075
    evader_radius: float = 0.05
    pursuer_max_speed: float = 1.0
    evader_speed_factor: float = 1.3
    n_obstacles: int = 3
    obstacle_radius_range: tuple = (0.2, 0.4)
    dt: float = 0.1
    episode_length: int = 50
    damping: float = 0.75
    accel_gain: float = 5.0
    rng_seed: int = 0

    def __post_init__(self):
        # normalise lists coming from config files
        object.__setattr__(self, "obstacle_radius_range", tuple(float(r) for r in self.obstacle_radius_range))
        self.validate()

    def validate(self):
        for name in ("n_pursuers", "n_scouts", "n_evaders", "n_obstacles"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.n_pursuers < self.n_evaders:
            raise ValueError("n_pursuers must be >= n_evaders (at least one pursuer per evader)")
        if self.n_agents == 0:
            raise ValueError("world needs at least one agent")
        radii = (self.pursuer_radius, self.scout_radius, self.evader_radius)
        if min(radii) <= 0:
            raise ValueError("agent radii must be > 0")
        lo, hi = self.obstacle_radius_range if len(self.obstacle_radius_range) == 2 else (None, None)
        if lo is None or not 0 < lo <= hi:
            raise ValueError("obstacle_radius_range must be (lo, hi) with 0 < lo <= hi")
        if self.half_extent <= max(max(radii), hi):
            raise ValueError("half_extent must exceed every radius")
        if self.evader_speed_factor <= 0:
            raise ValueError("evader_speed_factor must be > 0")
        if self.pursuer_max_speed <= 0:
            raise ValueError("pursuer_max_speed must be > 0")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.episode_length < 1:
            raise ValueError("episode_length must be >= 1")
        if not 0 <= self.damping <= 1:
            raise ValueError("damping must lie in [0, 1]")

    @property
    def n_agents(self):
        return self.n_pursuers + self.n_scouts + self.n_evaders

    @property
    def evader_max_speed(self):
        return self.pursuer_max_speed * self.evader_speed_factor

    def roles(self):
        return [Role.PURSUER] * self.n_pursuers + [Role.SCOUT] * self.n_scouts + [Role.EVADER] * self.n_evaders

    def obs_dim(self, role):
        """Observation length for an agent of ``role``.

        4 own-state entries, 2 per obstacle, 2 per other agent, and 2 per
        evader other than the observer.
        """
        n_vel = self.n_evaders - (1 if role == Role.EVADER else 0)
        return 4 + 2 * self.n_obstacles + 2 * (self.n_agents - 1) + 2 * n_vel


@dataclass
class Obstacle:
    center: np.ndarray
    radius: float
    id: int = -1


@dataclass
class WorldState:
    config: WorldConfig
    roles: np.ndarray  # (n,) ints of Role
    position: np.ndarray  # (n, 2)
    velocity: np.ndarray  # (n, 2)
    radius: np.ndarray  # (n,)
    max_speed: np.ndarray  # (n,)
    obstacle_centers: np.ndarray  # (m, 2), ordered by obstacle id
    obstacle_radii: np.ndarray  # (m,)
    t: int = 0

    @property
    def n_agents(self):
        return len(self.roles)

    @property
    def obstacles(self):
        return [Obstacle(c.copy(), float(r), k) for k, (c, r) in enumerate(zip(self.obstacle_centers, self.obstacle_radii))]

    def ids(self, role):
        cache = self.__dict__.setdefault("_ids", {})
        if role not in cache:
            cache[role] = np.flatnonzero(self.roles == role)
        return cache[role]

    def copy(self):
        return replace(
            self,
            position=self.position.copy(),
            velocity=self.velocity.copy(),
            obstacle_centers=self.obstacle_centers.copy(),
            obstacle_radii=self.obstacle_radii.copy(),
        )


@dataclass
class StepInfo:
    distances: np.ndarray  # (n, n) pairwise centre distances
    collisions: np.ndarray  # (n, n) bool, symmetric, False on the diagonal


def make_state(config, positions, velocities=None, obstacles=(), t=0):
    """Build a WorldState directly, e.g. for synthetic test scenes."""
    roles = np.array(config.roles(), dtype=np.int64)
    n = len(roles)
    pos = np.array(positions, dtype=float).reshape(n, 2)
    vel = np.zeros((n, 2)) if velocities is None else np.array(velocities, dtype=float).reshape(n, 2)
    radius_by_role = {Role.PURSUER: config.pursuer_radius, Role.SCOUT: config.scout_radius, Role.EVADER: config.evader_radius}
    speed_by_role = {Role.PURSUER: config.pursuer_max_speed, Role.SCOUT: config.pursuer_max_speed, Role.EVADER: config.evader_max_speed}
    # observation order follows obstacle id, not the order obstacles were given in
    obstacles = sorted(
        (o if o.id >= 0 else replace(o, id=k) for k, o in enumerate(obstacles)),
        key=lambda o: o.id,
    )
    return WorldState(
        config=config,
        roles=roles,
        position=pos,
        velocity=vel,
        radius=np.array([radius_by_role[Role(r)] for r in roles]),
        max_speed=np.array([speed_by_role[Role(r)] for r in roles]),
        obstacle_centers=np.array([o.center for o in obstacles], dtype=float).reshape(-1, 2),
        obstacle_radii=np.array([o.radius for o in obstacles], dtype=float),
        t=t,
    )


def step_info(state):
    pos = state.position
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    coll = dist <= state.radius[:, None] + state.radius[None, :]
    np.fill_diagonal(coll, False)
    return StepInfo(distances=dist, collisions=coll)


def reset(config, seed=None):
    """Sample a fresh world: obstacles first, then agents, without overlaps."""
    seed = config.rng_seed if seed is None else seed
    rng = np.random.default_rng(seed)
    h = config.half_extent
    lo, hi = config.obstacle_radius_range

    obstacles = []
    for _ in range(config.n_obstacles):
        for _ in range(SPAWN_ATTEMPTS):
            r = rng.uniform(lo, hi)
            c = rng.uniform(-h + r, h - r, size=2)
            if all(np.hypot(*(c - o.center)) > r + o.radius for o in obstacles):
                obstacles.append(Obstacle(c, float(r), len(obstacles)))
                break
        else:
            raise SpawnError(f"could not place obstacle {len(obstacles)} in {SPAWN_ATTEMPTS} attempts")

    state = make_state(config, np.zeros((config.n_agents, 2)), obstacles=obstacles)
    placed = []
    for i in range(config.n_agents):
        r = state.radius[i]
        for _ in range(SPAWN_ATTEMPTS):
            p = rng.uniform(-h + r, h - r, size=2)
            ok = all(np.hypot(*(p - o.center)) > r + o.radius for o in obstacles)
            ok = ok and all(np.hypot(*(p - state.position[j])) > r + state.radius[j] for j in placed)
            if ok:
                state.position[i] = p
                placed.append(i)
                break
        else:
            raise SpawnError(f"could not place agent {i} in {SPAWN_ATTEMPTS} attempts")
    return state, observe_all(state)


def _resolve_obstacles(state):
    if len(state.obstacle_radii) == 0:
        return
    for i in range(state.n_agents):
        for c, r in zip(state.obstacle_centers, state.obstacle_radii):
            d = state.position[i] - c
            dist = math.hypot(d[0], d[1])
            reach = r + state.radius[i]
            if dist >= reach:
                continue
            if dist == 0.0:
                normal = np.array([1.0, 0.0])
            else:
                normal = d / dist
            state.position[i] = c + normal * reach
            vn = float(state.velocity[i] @ normal)
            if vn < 0.0:
                state.velocity[i] -= vn * normal


def step(state, joint_actions):
    """Advance the world by one tick, mutating ``state`` in place."""
    cfg = state.config
    a = np.asarray(joint_actions, dtype=float)
    if a.shape != (state.n_agents, 2):
        raise ValueError(f"expected actions of shape {(state.n_agents, 2)}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("actions must be finite")
    a = np.clip(a, -1.0, 1.0)
    vel = cfg.damping * state.velocity + cfg.accel_gain * a * cfg.dt
    speed = np.sqrt(np.sum(vel * vel, axis=1))
    over = speed > state.max_speed
    if np.any(over):
        vel[over] *= (state.max_speed[over] / speed[over])[:, None]
        # rescaling can land one ulp above the cap
        speed = np.sqrt(np.sum(vel * vel, axis=1))
        while np.any(speed > state.max_speed):
            bad = speed > state.max_speed
            vel[bad] = np.nextafter(vel[bad], 0.0)
            speed = np.sqrt(np.sum(vel * vel, axis=1))
    state.velocity = vel
    state.position = state.position + vel * cfg.dt
    _resolve_obstacles(state)
    state.t += 1
    return state, observe_all(state), step_info(state)


def observe(state, agent_id):
    """Observation of one agent: own velocity and position, then relative
    obstacle positions, relative positions of every other agent (by id), and
    the velocities of the other evaders."""
    i = int(agent_id)
    if not 0 <= i < state.n_agents:
        raise IndexError(f"agent id {i} out of range")
    me = state.position[i]
    others = np.arange(state.n_agents) != i
    evaders = others & (state.roles == Role.EVADER)
    return np.concatenate([
        state.velocity[i],
        me,
        (state.obstacle_centers - me).ravel(),
        (state.position[others] - me).ravel(),
        state.velocity[evaders].ravel(),
    ])


def observe_all(state):
    return [observe(state, i) for i in range(state.n_agents)]
