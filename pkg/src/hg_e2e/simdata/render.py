"""Sensor rendering and ground-truth labels for the current world state.

Range view channels (non-photometric stand-in for the camera image):
0 inverse depth (objects and ground, 0 for sky), 1 object class intensity,
2 ego-lane mask on the ground.

BEV channels: 0 vehicle occupancy, 1 object height / 2 m, 2 road,
3 route, 4 red light stop line, 5 green (1) / yellow (0.5) stop line,
6 stop-sign line, 7 ego footprint.
"""
from __future__ import annotations

import math

import numpy as np

from ..config import SensorConfig
from ..geometry import CameraModel, bev_cell_centers
from .scenario import LANE_HALF_WIDTH, ROAD_HALF_WIDTH, VEHICLE_HEIGHT
from .world import Pose, World, box_corners

CLASS_VEHICLE = 0.4
CLASS_STOP = 0.6
CLASS_LIGHT = {"green": 0.2, "yellow": 0.8, "red": 1.0}
POLE_OFFSET = 4.0  # light and sign poles stand this far right of the lane centre
POLE_SIZE = 0.5
MAX_RANGE = 60.0
LOOKAHEAD = 20.0  # traffic-flag horizon along the route
JUNCTION_RADIUS = 8.0
GOAL_LOOKAHEAD = 20.0


def _pole_position(world: World, s_line: float) -> np.ndarray:
    route = world.route
    p = route.point_at(s_line)
    psi = route.heading_at(s_line)
    return p + POLE_OFFSET * np.array([math.cos(psi), -math.sin(psi)])


def scene_objects(world: World) -> list[tuple[np.ndarray, float, float, str]]:
    """(corners in ego frame, height, class intensity, kind) for every visible object."""
    out = []
    ego = world.ego
    for a in world.agents:
        out.append((ego.to_ego(a.corners()), VEHICLE_HEIGHT, CLASS_VEHICLE, "vehicle"))
    for light, state in zip(world.scenario.lights, world.light_states()):
        c = _pole_box(world, light.s_line)
        out.append((ego.to_ego(c), 3.0, CLASS_LIGHT[state], state))
    for stop in world.scenario.stops:
        out.append((ego.to_ego(_pole_box(world, stop.s_line)), 2.0, CLASS_STOP, "stop"))
    return out


def _pole_box(world: World, s_line: float) -> np.ndarray:
    p = _pole_position(world, s_line)
    return box_corners(Pose(float(p[0]), float(p[1]), world.route.heading_at(s_line)), POLE_SIZE, POLE_SIZE)


def _ray_box(dirs: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """Distance along unit rays from the origin to a convex quad; inf where missed."""
    t_hit = np.full(len(dirs), np.inf)
    for k in range(4):
        a, b = corners[k], corners[(k + 1) % 4]
        e = b - a
        denom = dirs[:, 0] * (-e[1]) - dirs[:, 1] * (-e[0])
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (a[0] * (-e[1]) - a[1] * (-e[0])) / denom
            u = (dirs[:, 0] * a[1] - dirs[:, 1] * a[0]) / denom
        ok = (np.abs(denom) > 1e-12) & (t > 0) & (u >= 0) & (u <= 1)
        t_hit = np.where(ok & (t < t_hit), t, t_hit)
    return t_hit


def render_range_view(world: World, sensor: SensorConfig, objects=None) -> np.ndarray:
    h, w = sensor.image_height, sensor.image_width
    cam = CameraModel(sensor.fov_deg, w, h)
    f = cam.focal
    bearings = cam.column_bearings()
    dirs = np.stack([np.sin(bearings), np.cos(bearings)], axis=1)
    img = np.zeros((3, h, w))
    rows = np.arange(h) + 0.5
    cy = h / 2.0

    # ground below the horizon
    below = rows > cy
    z = f * sensor.camera_height / (rows[below] - cy)  # forward depth per row
    u = np.arange(w) + 0.5 - w / 2.0
    gx = z[:, None] * u[None, :] / f
    gy = np.broadcast_to(z[:, None], gx.shape)
    ground = world.ego.to_world(np.stack([gx, gy], axis=-1))
    dist = world.route.distance(ground, world.s - 10, world.s + MAX_RANGE)
    img[0, below] = np.broadcast_to(1.0 / np.maximum(z[:, None], 1.0), gx.shape)
    img[2, below] = (dist <= LANE_HALF_WIDTH).astype(float)

    objects = scene_objects(world) if objects is None else objects
    best = np.full(w, np.inf)
    best_h = np.zeros(w)
    best_c = np.zeros(w)
    for corners, height, cls, _ in objects:
        if np.all(corners[:, 1] <= 0):
            continue
        t = _ray_box(dirs, corners)
        closer = t < best
        best = np.where(closer, t, best)
        best_h = np.where(closer, height, best_h)
        best_c = np.where(closer, cls, best_c)
    for j in np.flatnonzero(np.isfinite(best) & (best < MAX_RANGE)):
        depth = best[j] * math.cos(bearings[j])
        top = cy + f * (sensor.camera_height - best_h[j]) / depth
        bottom = cy + f * sensor.camera_height / depth
        mask = (rows >= top) & (rows <= bottom)
        img[0, mask, j] = 1.0 / max(depth, 1.0)
        img[1, mask, j] = best_c[j]
        img[2, mask, j] = 0.0
    return img


def _raster_points(pts: np.ndarray, g: int, res: float) -> tuple[np.ndarray, np.ndarray]:
    j = np.floor(pts[..., 0] / res + g / 2.0).astype(int)
    i = np.floor(g - pts[..., 1] / res).astype(int)
    ok = (i >= 0) & (i < g) & (j >= 0) & (j < g)
    return i[ok], j[ok]


def _inside(corners: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    pos = np.ones(x.shape, bool)
    neg = np.ones(x.shape, bool)
    for k in range(4):
        a, b = corners[k], corners[(k + 1) % 4]
        cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0])
        pos &= cross >= 0
        neg &= cross <= 0
    return pos | neg


def _line_points(world: World, s_line: float, n: int = 15) -> np.ndarray:
    route = world.route
    p = route.point_at(s_line)
    psi = route.heading_at(s_line)
    right = np.array([math.cos(psi), -math.sin(psi)])
    offs = np.linspace(-LANE_HALF_WIDTH, LANE_HALF_WIDTH, n)
    return world.ego.to_ego(p[None, :] + offs[:, None] * right[None, :])


def render_bev(world: World, sensor: SensorConfig) -> np.ndarray:
    g, res = sensor.bev_extent, sensor.bev_resolution
    bev = np.zeros((sensor.bev_channels, g, g))
    x, y = bev_cell_centers(g, res)
    ego = world.ego
    for a in world.agents:
        c = ego.to_ego(a.corners())
        occ = _inside(c, x, y)
        ci, cj = _raster_points(ego.to_ego(np.array([a.pose.x, a.pose.y])), g, res)
        occ[ci, cj] = True
        bev[0][occ] = 1.0
        bev[1][occ] = VEHICLE_HEIGHT / 2.0
    world_cells = ego.to_world(np.stack([x, y], axis=-1))
    dist = world.route.distance(world_cells, world.s - g * res, world.s + 2 * g * res)
    bev[2] = (dist <= ROAD_HALF_WIDTH).astype(float)
    bev[3] = (dist <= max(0.75 * res, 1.0)).astype(float)
    for light, state in zip(world.scenario.lights, world.light_states()):
        i, j = _raster_points(_line_points(world, light.s_line), g, res)
        if state == "red":
            bev[4, i, j] = 1.0
        else:
            bev[5, i, j] = 1.0 if state == "green" else 0.5
    for stop in world.scenario.stops:
        i, j = _raster_points(_line_points(world, stop.s_line), g, res)
        bev[6, i, j] = 1.0
    ego_occ = _inside(ego.to_ego(world.ego_corners()), x, y)
    ei, ej = _raster_points(np.zeros(2), g, res)
    ego_occ[ei, ej] = True
    bev[7][ego_occ] = 1.0
    return bev


def density_cell(x: float, y: float, side: int, extent_m: float) -> tuple[int, int] | None:
    """Grid cell of ego-frame point (x, y) on the R x R density map covering the BEV area."""
    cs = extent_m / side
    i = math.floor(side - y / cs)
    j = math.floor(x / cs + side / 2.0)
    if 0 <= i < side and 0 <= j < side:
        return i, j
    return None


def density_gt(world: World, side: int, extent_m: float) -> np.ndarray:
    """R x R x 7: presence, offset x/y from the cell centre (in cell sizes, so within
    [-0.5, 0.5)), relative heading (rad), speed (m/s), box width, box length (m).
    The nearest vehicle wins a shared cell."""
    out = np.zeros((side, side, 7))
    cs = extent_m / side
    best = np.full((side, side), np.inf)
    ego = world.ego
    for a in world.agents:
        x, y = ego.to_ego(np.array([a.pose.x, a.pose.y]))
        cell = density_cell(x, y, side, extent_m)
        if cell is None:
            continue
        i, j = cell
        r = math.hypot(x, y)
        if r >= best[i, j]:
            continue
        best[i, j] = r
        cx = (j + 0.5 - side / 2.0) * cs
        cy = (side - i - 0.5) * cs
        rel = (a.pose.heading - ego.heading + math.pi) % (2 * math.pi) - math.pi
        out[i, j] = [1.0, (x - cx) / cs, (y - cy) / cs, rel, a.speed, a.width, a.length]
    return out


def upcoming(world: World, s_line: float) -> float:
    """Distance along the route from the ego to ``s_line`` (negative once passed)."""
    return s_line - world.s


def traffic_gt(world: World) -> np.ndarray:
    """[light_is_red, stop_sign_ahead, at_junction] as 0/1."""
    red = 0.0
    for light, state in zip(world.scenario.lights, world.light_states()):
        if 0.0 <= upcoming(world, light.s_line) <= LOOKAHEAD and state == "red":
            red = 1.0
    stop = float(any(0.0 <= upcoming(world, st.s_line) <= LOOKAHEAD for st in world.scenario.stops))
    junction = float(any(abs(world.s - sj) <= JUNCTION_RADIUS for sj in world.route.junctions))
    return np.array([red, stop, junction])


def goal_point(world: World) -> np.ndarray:
    """Route point GOAL_LOOKAHEAD metres ahead (clamped to the goal) in the ego frame."""
    s = min(world.s + GOAL_LOOKAHEAD, world.route.length)
    return world.ego.to_ego(world.route.point_at(s))


def gaze_target(world: World, sensor: SensorConfig, objects=None) -> tuple[float, float]:
    """Continuous (column, row) of the highest-priority salient point.

    Priority: the nearest hazard in view (vehicle within 30 m, red or yellow
    light, stop sign); otherwise the route vanishing point on the horizon.
    """
    cam = CameraModel(sensor.fov_deg, sensor.image_width, sensor.image_height)
    half = math.radians(sensor.fov_deg) / 2
    best, target = np.inf, None
    for corners, height, _, kind in (scene_objects(world) if objects is None else objects):
        if kind == "green":
            continue
        cx, cy = corners.mean(0)
        if cy <= 0.5 or abs(math.atan2(cx, cy)) > half:
            continue
        r = math.hypot(cx, cy)
        if r <= 30.0 and r < best:
            best = r
            target = cam.project(cx, cy, height / 2.0, sensor.camera_height)
    if target is None:
        s = min(world.s + 30.0, world.route.total)
        vx, vy = world.ego.to_ego(world.route.point_at(s))
        bearing = float(np.clip(math.atan2(vx, max(vy, 1e-6)), -half, half))
        col = sensor.image_width / 2.0 + cam.focal * math.tan(bearing) if abs(bearing) < math.pi / 2 else 0.0
        target = (col, sensor.image_height / 2.0)
    col = float(np.clip(target[0], 0.0, sensor.image_width))
    row = float(np.clip(target[1], 0.0, sensor.image_height))
    return col, row


def gaussian_map(h: int, w: int, col: float, row: float, sigma: float) -> np.ndarray:
    """Isotropic Gaussian sampled at pixel centres, peak-normalised to exactly 1."""
    u = np.arange(w) + 0.5
    v = np.arange(h) + 0.5
    g = np.exp(-((u[None, :] - col) ** 2 + (v[:, None] - row) ** 2) / (2 * sigma * sigma))
    return g / g.max()


def synthesize_gaze(world: World, sensor: SensorConfig, sigma_frac: float = 0.05, objects=None) -> np.ndarray:
    col, row = gaze_target(world, sensor, objects)
    return gaussian_map(sensor.image_height, sensor.image_width, col, row, sigma_frac * sensor.image_width)
