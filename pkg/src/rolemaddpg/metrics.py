"""Per-episode trajectory logs, pursuit/coverage metrics and CSV I/O."""

from dataclasses import dataclass, field
import csv
import math

import numpy as np

from .env import Role
from .geometry import coverage_fraction

TRAJECTORY_COLUMNS = ["episode", "step", "agent_id", "role", "x", "y", "vx", "vy",
                      "r_bound", "r_coll", "r_catch", "r_dist", "r_explore", "r_total"]
AGGREGATE_COLUMNS = ["episode", "min_d", "avg_d", "max_d", "coverage", "rew_pursuer", "rew_scout", "rew_evader"]

SENSOR_RANGE = 0.5
COVERAGE_RESOLUTION = 300

# column indices into EpisodeLog.rows
_STEP, _AGENT, _ROLE, _X, _Y, _VX, _VY = range(7)
_R_TOTAL = 12


def distance_stats(state):
    """(min, mean, max) pursuer-to-evader distance at this step."""
    return distance_stats_from_positions(state.position, state.roles)


def distance_stats_from_positions(positions, roles):
    roles = np.asarray(roles)
    p = positions[roles == Role.PURSUER]
    e = positions[roles == Role.EVADER]
    if len(e) == 0:
        raise ValueError("distance stats need at least one evader")
    if len(p) == 0:
        raise ValueError("distance stats need at least one pursuer")
    d = np.sqrt(np.sum((p[:, None, :] - e[None, :, :]) ** 2, axis=-1))
    return float(d.min()), float(d.mean()), float(d.max())


def truncated_mean(series, skip):
    """Mean of ``series[skip:]``."""
    s = np.asarray(series, dtype=float)
    if skip < 0 or len(s) <= skip:
        raise ValueError(f"series of length {len(s)} is too short to skip {skip}")
    return float(np.mean(s[skip:]))


def team_mask(roles, scouts_only=False):
    roles = np.asarray(roles)
    if scouts_only:
        return roles == Role.SCOUT
    return (roles == Role.PURSUER) | (roles == Role.SCOUT)


@dataclass
class EpisodeLog:
    episode: int
    n_agents: int
    half_extent: float
    rows: np.ndarray  # (steps * n_agents, 13): TRAJECTORY_COLUMNS without "episode"
    obstacles: list = field(default_factory=list)  # [(x, y, r), ...]
    min_d: float = math.nan
    avg_d: float = math.nan
    max_d: float = math.nan
    coverage: float = math.nan
    rew_pursuer: float = math.nan
    rew_scout: float = math.nan
    rew_evader: float = math.nan

    @property
    def n_steps(self):
        return len(self.rows) // self.n_agents if self.n_agents else 0

    @property
    def roles(self):
        return self.rows[: self.n_agents, _ROLE].astype(int)

    def positions(self):
        """(steps, n_agents, 2) array."""
        return self.rows[:, [_X, _Y]].reshape(self.n_steps, self.n_agents, 2)

    def rewards(self):
        return self.rows[:, _R_TOTAL].reshape(self.n_steps, self.n_agents)

    def aggregates(self):
        return (self.min_d, self.avg_d, self.max_d, self.coverage, self.rew_pursuer, self.rew_scout, self.rew_evader)


class EpisodeRecorder:
    """Collects one row per agent per step and computes the aggregates."""

    def __init__(self, episode, state, sensor_range=SENSOR_RANGE, scouts_only=False,
                 coverage_resolution=COVERAGE_RESOLUTION):
        self.episode = episode
        self.roles = state.roles.copy()
        self.half_extent = state.config.half_extent
        self.obstacles = [(float(c[0]), float(c[1]), float(r))
                          for c, r in zip(state.obstacle_centers, state.obstacle_radii)]
        self.sensor_range = sensor_range
        self.scouts_only = scouts_only
        self.coverage_resolution = coverage_resolution
        self._rows = []

    def record(self, step, state, breakdowns):
        n = len(self.roles)
        block = np.empty((n, 13))
        block[:, _STEP] = step
        block[:, _AGENT] = np.arange(n)
        block[:, _ROLE] = self.roles
        block[:, _X:_Y + 1] = state.position
        block[:, _VX:_VY + 1] = state.velocity
        block[:, 7:13] = [b.as_tuple() for b in breakdowns]
        self._rows.append(block)

    def finish(self):
        n = len(self.roles)
        rows = np.concatenate(self._rows) if self._rows else np.empty((0, 13))
        log = EpisodeLog(self.episode, n, self.half_extent, rows, self.obstacles)
        fill_aggregates(log, self.sensor_range, self.scouts_only, self.coverage_resolution)
        return log


def fill_aggregates(log, sensor_range=SENSOR_RANGE, scouts_only=False, coverage_resolution=COVERAGE_RESOLUTION):
    """Compute the episode aggregates from the raw rows."""
    if log.n_steps == 0:
        return log
    roles = log.roles
    pos = log.positions()
    if np.any(roles == Role.EVADER) and np.any(roles == Role.PURSUER):
        stats = np.array([distance_stats_from_positions(p, roles) for p in pos])
        log.min_d, log.avg_d, log.max_d = (float(v) for v in stats.mean(axis=0))
    mask = team_mask(roles, scouts_only)
    log.coverage = float(np.mean([coverage_fraction(p[mask], sensor_range, log.half_extent, coverage_resolution)
                                  for p in pos]))
    rew = log.rewards()
    for role, name in ((Role.PURSUER, "rew_pursuer"), (Role.SCOUT, "rew_scout"), (Role.EVADER, "rew_evader")):
        sel = roles == role
        setattr(log, name, float(rew[:, sel].mean()) if np.any(sel) else math.nan)
    return log


def coverage_series(logs, sensor_range=SENSOR_RANGE, scouts_only=False, coverage_resolution=COVERAGE_RESOLUTION):
    """Per-episode mean coverage fraction of the swarm (pursuers and scouts,
    or scouts only)."""
    out = []
    for log in logs:
        mask = team_mask(log.roles, scouts_only)
        out.append(float(np.mean([coverage_fraction(p[mask], sensor_range, log.half_extent, coverage_resolution)
                                  for p in log.positions()])) if log.n_steps else 0.0)
    return out


# --- CSV ------------------------------------------------------------------


def _fmt(v):
    return repr(float(v))


def trajectory_lines(log):
    for row in log.rows:
        yield [str(log.episode), str(int(row[_STEP])), str(int(row[_AGENT])), Role(int(row[_ROLE])).label] + [
            _fmt(v) for v in row[_X:]
        ]


def write_trajectory_csv(path, logs):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for log in logs:
            w.writerows(trajectory_lines(log))


def aggregate_line(log):
    return [str(log.episode)] + [_fmt(v) for v in log.aggregates()]


def write_aggregate_csv(path, logs, append=False):
    with open(path, "a" if append else "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        if not append:
            w.writerow(AGGREGATE_COLUMNS)
        w.writerows(aggregate_line(log) for log in logs)


class CsvFormatError(ValueError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


def read_trajectory_csv(path):
    """Parse a trajectory CSV into a list of row dicts, validating every row."""
    out = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != TRAJECTORY_COLUMNS:
            raise CsvFormatError(path, 1, f"expected header {','.join(TRAJECTORY_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(TRAJECTORY_COLUMNS):
                raise CsvFormatError(path, lineno, f"expected {len(TRAJECTORY_COLUMNS)} fields, got {len(row)}")
            try:
                rec = {"episode": int(row[0]), "step": int(row[1]), "agent_id": int(row[2]),
                       "role": Role.from_label(row[3])}
                for k, v in zip(TRAJECTORY_COLUMNS[4:], row[4:]):
                    rec[k] = float(v)
            except (ValueError, KeyError) as exc:
                raise CsvFormatError(path, lineno, f"bad value ({exc})") from None
            out.append(rec)
    return out


def read_aggregate_csv(path):
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != AGGREGATE_COLUMNS:
            raise CsvFormatError(path, 1, f"expected header {','.join(AGGREGATE_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(AGGREGATE_COLUMNS):
                raise CsvFormatError(path, lineno, f"expected {len(AGGREGATE_COLUMNS)} fields, got {len(row)}")
            try:
                rows.append({"episode": int(row[0]), **{k: float(v) for k, v in zip(AGGREGATE_COLUMNS[1:], row[1:])}})
            except ValueError as exc:
                raise CsvFormatError(path, lineno, f"bad value ({exc})") from None
    return rows


def format_distance_table(min_d, avg_d, max_d):
    """Three-column summary laid out like the distance-to-target tables."""
    header = "| mean of min dist | mean of ave dist | mean of max dist |"
    row = f"| {min_d:16.4f} | {avg_d:16.4f} | {max_d:16.4f} |"
    return header + "\n" + row
