"""Bounded Voronoi cells and sensor-coverage estimation on a square arena.

Cells are built by clipping the domain square against the perpendicular
bisector half-planes of every other seed. With at most a few dozen seeds
this is cheap and far more robust than a sweep-line construction.
"""

from dataclasses import dataclass, field
import math

import numpy as np

COINCIDENT_TOL = 1e-9
PERTURBATION = 1e-6
_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


@dataclass
class VoronoiDiagram:
    seeds: np.ndarray  # (N, 2), after coincident-seed perturbation
    cells: list  # list of (k, 2) CCW vertex arrays
    areas: np.ndarray  # (N,)
    half_extent: float = field(default=3.0)

    def __len__(self):
        return len(self.cells)


def polygon_area(vertices):
    """Signed shoelace area; positive for counter-clockwise vertex order."""
    v = np.asarray(vertices, dtype=float)
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clip_halfplane(poly, normal, offset):
    """Keep the part of convex ``poly`` where ``normal . p <= offset``."""
    if not poly:
        return poly
    out = []
    n = len(poly)
    for k in range(n):
        p = poly[k]
        q = poly[(k + 1) % n]
        dp = normal[0] * p[0] + normal[1] * p[1] - offset
        dq = normal[0] * q[0] + normal[1] * q[1] - offset
        if dp <= 0.0:
            out.append(p)
        if (dp < 0.0 < dq) or (dq < 0.0 < dp):
            t = dp / (dp - dq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def perturb_coincident(seeds):
    """Nudge seeds that coincide with an earlier seed.

    Seed ``i`` is moved by 1e-6 along the direction ``i * golden_angle`` so
    the result depends only on the seed index.
    """
    pts = np.array(seeds, dtype=float).reshape(-1, 2)
    for i in range(1, len(pts)):
        d = np.hypot(pts[:i, 0] - pts[i, 0], pts[:i, 1] - pts[i, 1])
        if np.any(d < COINCIDENT_TOL):
            ang = i * _GOLDEN_ANGLE
            pts[i, 0] += PERTURBATION * math.cos(ang)
            pts[i, 1] += PERTURBATION * math.sin(ang)
    return pts


def bounded_voronoi(seeds, half_extent=3.0):
    """Voronoi diagram of ``seeds`` clipped to the square [-h, h]^2.

    Seeds outside the square are allowed; their cells are still clipped to
    the domain and may be empty.
    """
    pts = np.asarray(seeds, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("bounded_voronoi needs at least one seed")
    if not np.all(np.isfinite(pts)):
        raise ValueError("seeds must be finite")
    pts = perturb_coincident(pts)
    h = float(half_extent)
    square = [(-h, -h), (h, -h), (h, h), (-h, h)]
    cells, areas = [], []
    for i in range(len(pts)):
        si = pts[i]
        poly = list(square)
        for j in range(len(pts)):
            if j == i:
                continue
            sj = pts[j]
            # |p - si| <= |p - sj|  <=>  (sj - si) . p <= (|sj|^2 - |si|^2) / 2
            normal = (sj[0] - si[0], sj[1] - si[1])
            offset = 0.5 * ((sj[0] ** 2 + sj[1] ** 2) - (si[0] ** 2 + si[1] ** 2))
            poly = clip_halfplane(poly, normal, offset)
            if not poly:
                break
        cell = np.array(poly, dtype=float).reshape(-1, 2)
        cells.append(cell)
        areas.append(max(polygon_area(cell), 0.0))
    return VoronoiDiagram(seeds=pts, cells=cells, areas=np.array(areas), half_extent=h)


def max_cell_area(diagram):
    return float(np.max(diagram.areas))


def coverage_fraction(positions, sensor_range, half_extent=3.0, grid_resolution=300):
    """Fraction of a uniform grid of cell centres within range of any position."""
    if sensor_range <= 0:
        raise ValueError("sensor_range must be positive")
    if grid_resolution < 100:
        raise ValueError("grid_resolution must be >= 100")
    pts = np.asarray(positions, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return 0.0
    h = float(half_extent)
    n = int(grid_resolution)
    cell = 2.0 * h / n
    centres = -h + cell * (np.arange(n) + 0.5)
    covered = np.zeros((n, n), dtype=bool)
    r2 = sensor_range * sensor_range
    for x, y in pts:
        # only centres inside the disc's bounding box can be covered
        ix0 = max(int(math.floor((x - sensor_range + h) / cell)) - 1, 0)
        ix1 = min(int(math.ceil((x + sensor_range + h) / cell)) + 1, n)
        iy0 = max(int(math.floor((y - sensor_range + h) / cell)) - 1, 0)
        iy1 = min(int(math.ceil((y + sensor_range + h) / cell)) + 1, n)
        if ix0 >= ix1 or iy0 >= iy1:
            continue
        dx = centres[ix0:ix1] - x
        dy = centres[iy0:iy1] - y
        covered[ix0:ix1, iy0:iy1] |= (dx[:, None] ** 2 + dy[None, :] ** 2) <= r2
    return float(covered.mean())
