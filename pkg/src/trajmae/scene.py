"""Synthetic vector maps and interactive multi-agent driving scenes."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .tensor.rng import RngStream

LAYOUTS = ("straight", "curve", "four-way")
TYPE_TAGS = ("lane-center", "lane-boundary", "crosswalk")
DEFAULT_POINTS = 10

# Longitudinal IDM constants plus lateral spring/repulsion.
A_MAX = 1.5
B_COMF = 2.0
HEADWAY = 1.2
S_MIN = 2.0
CAR_LEN = 4.5
K_SPRING = 1.0
K_REPULSE = 1.5
REPULSE_RANGE = 4.0
CORRIDOR = 2.0
V_CAP = 12.5
D_MAX = 0.5
V_MAX = 15.0


def dynamics_params(v_max=V_MAX):
    return np.array(
        [A_MAX, B_COMF, HEADWAY, S_MIN, CAR_LEN, K_SPRING, K_REPULSE,
         REPULSE_RANGE, CORRIDOR, min(V_CAP, v_max), D_MAX, v_max]
    )


class MapError(ValueError):
    pass


@dataclass
class Polyline:
    points: np.ndarray
    type_tag: str

    def step(self):
        """Mean arc step between consecutive key points."""
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).mean())


@dataclass
class VectorMap:
    polylines: list

    @property
    def num_points(self):
        return self.polylines[0].points.shape[0] if self.polylines else 0

    def lane_centers(self):
        return [p for p in self.polylines if p.type_tag == "lane-center"]

    def to_dict(self):
        return {
            "polylines": [
                {"type_tag": p.type_tag, "points": p.points.tolist()} for p in self.polylines
            ]
        }

    @classmethod
    def from_dict(cls, d):
        return cls([Polyline(np.array(p["points"], dtype=np.float64), p["type_tag"]) for p in d["polylines"]])

    def transformed(self, rot, offset):
        return VectorMap(
            [Polyline((p.points - offset) @ rot.T, p.type_tag) for p in self.polylines]
        )


@dataclass
class Scene:
    """Agents x (history + future) positions in the ego frame.

    ``positions`` is (M, t_obs + t_fut, 2); invalid slots hold zeros.
    """

    positions: np.ndarray
    valid: np.ndarray
    ego_index: int
    map: VectorMap
    dt: float
    t_obs: int
    seed: int = 0
    layout: str = ""

    @property
    def num_agents(self):
        return self.positions.shape[0]

    @property
    def t_fut(self):
        return self.positions.shape[1] - self.t_obs

    @property
    def history(self):
        return self.positions[:, : self.t_obs]

    @property
    def history_valid(self):
        return self.valid[:, : self.t_obs]

    @property
    def future(self):
        return self.positions[:, self.t_obs :]

    @property
    def future_valid(self):
        return self.valid[:, self.t_obs :]

    def to_dict(self):
        return {
            "ego_index": int(self.ego_index),
            "dt": float(self.dt),
            "positions": self.positions.tolist(),
            "valid": self.valid.tolist(),
            "map": self.map.to_dict(),
            "t_obs": int(self.t_obs),
            "seed": int(self.seed),
            "layout": self.layout,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            positions=np.array(d["positions"], dtype=np.float64),
            valid=np.array(d["valid"], dtype=bool),
            ego_index=int(d["ego_index"]),
            map=VectorMap.from_dict(d["map"]),
            dt=float(d["dt"]),
            t_obs=int(d["t_obs"]),
            seed=int(d.get("seed", 0)),
            layout=d.get("layout", ""),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), separators=(",", ":"))

    def equals(self, other):
        return (
            np.array_equal(self.positions, other.positions)
            and np.array_equal(self.valid, other.valid)
            and self.ego_index == other.ego_index
            and self.dt == other.dt
            and self.t_obs == other.t_obs
            and json.dumps(self.map.to_dict()) == json.dumps(other.map.to_dict())
        )


# --------------------------------------------------------------------------- maps


def _line(start, end, n):
    t = np.linspace(0.0, 1.0, n)[:, None]
    return np.asarray(start, float) * (1.0 - t) + np.asarray(end, float) * t


def _arc(radius, center, angles):
    return np.stack([center[0] + radius * np.sin(angles), center[1] - radius * np.cos(angles)], axis=1)


def build_map(layout, seed, points=DEFAULT_POINTS):
    """Synthesize a vector map for one of the known layouts.

    Lane-center polylines are directed in the direction of travel.
    """
    if layout not in LAYOUTS:
        raise MapError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    if points < 2:
        raise MapError("polylines need at least 2 points")
    rng = RngStream(seed, f"map/{layout}")
    width = rng.uniform(3.2, 3.8)
    polys = []
    if layout == "straight":
        n_lanes = int(rng.integers(2, 4))
        half = rng.uniform(50.0, 70.0)
        for i in range(n_lanes):
            y = (i - (n_lanes - 1) / 2.0) * width
            polys.append(Polyline(_line((-half, y), (half, y), points), "lane-center"))
        for i in range(n_lanes + 1):
            y = (i - n_lanes / 2.0) * width
            polys.append(Polyline(_line((-half, y), (half, y), points), "lane-boundary"))
    elif layout == "curve":
        radius = rng.uniform(40.0, 80.0)
        length = rng.uniform(100.0, 130.0)
        sweep = length / radius
        ang = np.linspace(-sweep / 2.0, sweep / 2.0, points)
        center = (0.0, radius)
        for off in (-width / 2.0, width / 2.0):
            polys.append(Polyline(_arc(radius + off, center, ang), "lane-center"))
        for off in (-width, 0.0, width):
            polys.append(Polyline(_arc(radius + off, center, ang), "lane-boundary"))
    else:
        arm = rng.uniform(40.0, 60.0)
        h = width / 2.0
        polys.append(Polyline(_line((-arm, -h), (arm, -h), points), "lane-center"))
        polys.append(Polyline(_line((arm, h), (-arm, h), points), "lane-center"))
        polys.append(Polyline(_line((h, -arm), (h, arm), points), "lane-center"))
        polys.append(Polyline(_line((-h, arm), (-h, -arm), points), "lane-center"))
        for y in (-width, width):
            polys.append(Polyline(_line((-arm, y), (arm, y), points), "lane-boundary"))
        for x in (-width, width):
            polys.append(Polyline(_line((x, -arm), (x, arm), points), "lane-boundary"))
        cw = width + 2.0
        polys.append(Polyline(_line((-cw, -width), (-cw, width), points), "crosswalk"))
        polys.append(Polyline(_line((cw, -width), (cw, width), points), "crosswalk"))
        polys.append(Polyline(_line((-width, -cw), (width, -cw), points), "crosswalk"))
        polys.append(Polyline(_line((-width, cw), (width, cw), points), "crosswalk"))
    return VectorMap(polys)


# --------------------------------------------------------------------------- dynamics


def arc_lengths(points):
    seg = np.linalg.norm(np.diff(points, axis=-2), axis=-1)
    return np.concatenate([np.zeros(points.shape[:-2] + (1,)), np.cumsum(seg, axis=-1)], axis=-1)


def rollout_agents(lanes, lane_index, s0, v0, d0, v_des, n_steps, dt, v_max=V_MAX):
    """Integrate agents along lane-center paths.

    Args:
        lanes: list of (P, 2) lane-center point arrays (same P).
        lane_index, s0, v0, d0, v_des: per-agent lane, arc position, speed,
            lateral offset and desired speed.
        n_steps: number of recorded states including the initial one.

    Returns:
        (positions (n_steps, M, 2), speeds (n_steps, M)).
    """
    pts = np.ascontiguousarray(np.stack(lanes).astype(np.float64))
    cum = np.ascontiguousarray(arc_lengths(pts))
    return kernels.rollout(
        pts,
        cum,
        np.asarray(lane_index, dtype=np.int64),
        np.asarray(s0, dtype=np.float64),
        np.asarray(v0, dtype=np.float64),
        np.asarray(d0, dtype=np.float64),
        np.asarray(v_des, dtype=np.float64),
        int(n_steps),
        float(dt),
        dynamics_params(v_max),
    )


def _ego_heading(history, valid, t_last):
    for t in range(t_last, 0, -1):
        if valid[t] and valid[t - 1]:
            d = history[t] - history[t - 1]
            if math.hypot(d[0], d[1]) > 1e-9:
                return math.atan2(d[1], d[0])
    return 0.0


def normalize_scene(scene):
    """Express a scene in the ego frame at its last observed step.

    The ego sits at the origin with its last observed displacement along +x.
    """
    t_last = scene.t_obs - 1
    ego_traj = scene.positions[scene.ego_index]
    ego_valid = scene.valid[scene.ego_index]
    offset = ego_traj[t_last].copy()
    theta = _ego_heading(ego_traj, ego_valid, t_last)
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, s], [-s, c]])
    pos = (scene.positions - offset) @ rot.T
    pos[~scene.valid] = 0.0
    return Scene(
        positions=pos,
        valid=scene.valid.copy(),
        ego_index=scene.ego_index,
        map=scene.map.transformed(rot, offset),
        dt=scene.dt,
        t_obs=scene.t_obs,
        seed=scene.seed,
        layout=scene.layout,
    )


def _spawn(rng, lanes, cum, m):
    """Pick lane, arc position and lateral offset for each agent without overlaps."""
    lane_idx, s_pos, xy = [], [], []
    for _ in range(m):
        for _attempt in range(500):
            ln = int(rng.integers(len(lanes)))
            total = cum[ln][-1]
            s = float(rng.uniform(0.05 * total, 0.6 * total))
            p = _point_at(lanes[ln], cum[ln], s)
            ok = True
            for ol, os_, oxy in zip(lane_idx, s_pos, xy):
                if ol == ln and abs(os_ - s) < 10.0:
                    ok = False
                    break
                if math.hypot(p[0] - oxy[0], p[1] - oxy[1]) < 5.0:
                    ok = False
                    break
            if ok:
                break
        else:
            raise RuntimeError("could not place agents without overlap; map too small for M")
        lane_idx.append(ln)
        s_pos.append(s)
        xy.append(p)
    return lane_idx, s_pos


def _point_at(points, cum, s):
    seg = int(np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(points) - 2))
    t = (s - cum[seg]) / (cum[seg + 1] - cum[seg])
    return points[seg] + t * (points[seg + 1] - points[seg])


def simulate_scene(vmap, seed, agents=6, t_obs=10, t_fut=15, dt=0.1, v_max=V_MAX, late_prob=0.2, layout=""):
    """Roll out an interactive scene on ``vmap`` and normalize it to the ego frame."""
    if agents < 2:
        raise ValueError(f"need at least 2 agents, got {agents}")
    if t_obs < 4:
        raise ValueError(f"t_obs must be >= 4, got {t_obs}")
    if t_fut < 1:
        raise ValueError(f"t_fut must be >= 1, got {t_fut}")
    lanes = [p.points for p in vmap.lane_centers()]
    if not lanes:
        raise MapError("map has no lane-center polylines")
    rng = RngStream(seed, "scene")
    cum = [arc_lengths(p) for p in lanes]
    lane_idx, s0 = _spawn(rng, lanes, cum, agents)
    v_des = rng.uniform(4.0, 12.0, agents)
    v0 = v_des * rng.uniform(0.6, 1.0, agents)
    d0 = rng.uniform(-0.3, 0.3, agents)
    n_steps = t_obs + t_fut
    pos, _ = rollout_agents(lanes, lane_idx, s0, v0, d0, v_des, n_steps, dt, v_max)
    positions = np.ascontiguousarray(np.transpose(pos, (1, 0, 2)))
    valid = np.ones((agents, n_steps), dtype=bool)
    ego = int(rng.integers(agents))
    late = rng.random(agents) < late_prob
    entry = rng.integers(1, t_obs // 2 + 1, agents)
    for i in range(agents):
        if i != ego and late[i]:
            valid[i, : entry[i]] = False
    positions[~valid] = 0.0
    raw = Scene(positions, valid, ego, vmap, dt, t_obs, seed=int(seed), layout=layout)
    return normalize_scene(raw)


# --------------------------------------------------------------------------- datasets


@dataclass
class DataConfig:
    train: int = 2000
    val: int = 200
    test: int = 200
    seed: int = 0
    split_seeds: dict = field(default_factory=dict)
    agents: int = 6
    t_obs: int = 10
    t_fut: int = 15
    dt: float = 0.1
    points: int = DEFAULT_POINTS
    layouts: tuple = LAYOUTS
    late_prob: float = 0.2
    v_max: float = V_MAX

    def split_seed(self, split):
        if split in self.split_seeds:
            return int(self.split_seeds[split])
        return RngStream(self.seed, f"split/{split}").key & ((1 << 63) - 1)


@dataclass
class DatasetShard:
    scenes: list
    generator_seed: int
    split_tag: str

    def __len__(self):
        return len(self.scenes)


def scene_seeds(split_seed, split, count):
    rng = RngStream(split_seed, f"data/{split}")
    return [rng.seed_u64() for _ in range(count)]


def make_scene(scene_seed, cfg):
    rng = RngStream(scene_seed, "layout")
    layout = cfg.layouts[int(rng.integers(len(cfg.layouts)))]
    vmap = build_map(layout, scene_seed, cfg.points)
    return simulate_scene(
        vmap, scene_seed, cfg.agents, cfg.t_obs, cfg.t_fut, cfg.dt, cfg.v_max, cfg.late_prob, layout
    )


def generate_dataset(cfg):
    """Generate train/val/test shards. Returns ``{split: DatasetShard}``."""
    counts = {"train": cfg.train, "val": cfg.val, "test": cfg.test}
    for split, n in counts.items():
        if n <= 0:
            raise ValueError(f"split {split!r} must contain at least one scene, got {n}")
    shards = {}
    for split, n in counts.items():
        seed = cfg.split_seed(split)
        scenes = [make_scene(s, cfg) for s in scene_seeds(seed, split, n)]
        shards[split] = DatasetShard(scenes, seed, split)
    return shards


def dataset_stats(shards):
    out = {}
    for split, shard in shards.items():
        n_valid = []
        speeds = []
        layouts = {}
        for sc in shard.scenes:
            n_valid.append(int(sc.valid[:, sc.t_obs - 1].sum()))
            both = sc.valid[:, 1:] & sc.valid[:, :-1]
            step = np.linalg.norm(np.diff(sc.positions, axis=1), axis=-1) / sc.dt
            speeds.append(step[both])
            layouts[sc.layout] = layouts.get(sc.layout, 0) + 1
        sp = np.concatenate(speeds) if speeds else np.zeros(1)
        out[split] = {
            "scenes": len(shard.scenes),
            "generator_seed": int(shard.generator_seed),
            "agents_mean": float(np.mean(n_valid)),
            "agents_min": int(np.min(n_valid)),
            "agents_max": int(np.max(n_valid)),
            "speed_mean": float(sp.mean()),
            "speed_std": float(sp.std()),
            "speed_p05": float(np.percentile(sp, 5)),
            "speed_p50": float(np.percentile(sp, 50)),
            "speed_p95": float(np.percentile(sp, 95)),
            "speed_max": float(sp.max()),
            "layouts": {k: layouts[k] for k in sorted(layouts)},
        }
    return out


def write_shard(path, shard):
    with open(path, "w", encoding="utf-8") as fh:
        for sc in shard.scenes:
            fh.write(sc.to_json())
            fh.write("\n")


def read_shard(path, split_tag="", generator_seed=0):
    scenes = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                scenes.append(Scene.from_dict(json.loads(line)))
    return DatasetShard(scenes, generator_seed, split_tag)
