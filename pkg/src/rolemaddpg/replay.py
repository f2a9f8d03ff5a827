"""Bird's-eye SVG rendering of logged trajectories."""

from collections import defaultdict

from .env import Role

ROLE_COLORS = {Role.PURSUER: "red", Role.EVADER: "green", Role.SCOUT: "blue"}
OBSTACLE_COLOR = "grey"


def _num(v):
    return f"{v:.3f}"


def render_svg(rows, half_extent=3.0, obstacles=(), size=600, margin=20):
    """SVG text for trajectory ``rows`` (dicts as read from a trajectory CSV).

    Each agent becomes one polyline in its role colour, or a dot if it never
    moves. Rows from several episodes are drawn as separate tracks.
    """
    h = float(half_extent)
    scale = (size - 2 * margin) / (2 * h)

    def px(x, y):
        return margin + (x + h) * scale, margin + (h - y) * scale

    tracks = defaultdict(list)
    roles = {}
    for r in sorted(rows, key=lambda r: (r["episode"], r["agent_id"], r["step"])):
        key = (r["episode"], r["agent_id"])
        tracks[key].append(px(r["x"], r["y"]))
        roles[key] = Role(r["role"])

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect class="arena" x="{margin}" y="{margin}" width="{_num(2 * h * scale)}" '
        f'height="{_num(2 * h * scale)}" fill="white" stroke="black" stroke-width="2"/>',
    ]
    for cx, cy, r in obstacles:
        x, y = px(cx, cy)
        out.append(f'<circle class="obstacle" cx="{_num(x)}" cy="{_num(y)}" r="{_num(r * scale)}" '
                   f'fill="{OBSTACLE_COLOR}" stroke="none"/>')
    for (ep, agent), pts in tracks.items():
        role = roles[(ep, agent)]
        color = ROLE_COLORS[role]
        attrs = f'data-episode="{ep}" data-agent="{agent}" data-role="{role.label}"'
        if len(set(pts)) == 1:
            x, y = pts[0]
            out.append(f'<circle class="marker" {attrs} cx="{_num(x)}" cy="{_num(y)}" r="4" fill="{color}"/>')
            continue
        coords = " ".join(f"{_num(x)},{_num(y)}" for x, y in pts)
        out.append(f'<polyline class="track" {attrs} points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        x, y = pts[-1]
        out.append(f'<circle class="marker" {attrs} cx="{_num(x)}" cy="{_num(y)}" r="3" fill="{color}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
