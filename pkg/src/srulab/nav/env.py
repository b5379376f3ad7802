"""Planar unicycle navigation POMDP over occupancy-grid mazes.

A batch of independent environments advances in lockstep. Observations are a
forward ray fan, a proprioceptive vector and the relative goal; the reward is
``alpha1 * task - alpha2 * reg - alpha3 * pen``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .maze import MazeSpec, cast_rays, grid_is_wall, ray_angles, stack_grids

GRAVITY = np.array([0.0, 0.0, -1.0])  # projected gravity on flat ground
PROP_DIM = 7  # v, omega, gravity (3), previous action (2)
GOAL_DIM = 3  # unit direction (2), log distance


def _from_dict(cls, d: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass
class RewardConfig:
    alpha1: float = 1.0
    alpha2: float = 0.1
    alpha3: float = 1.0
    sigma_tight: float = 0.5
    sigma_loose: float = 5.0
    w_tight: float = 0.5
    w_loose: float = 0.5
    T_r: int = 10  # rewarding window, steps
    delta_check: float = 0.002
    lam: float = 0.9  # action momentum
    beta1: float = 0.1
    beta2: float = 0.02
    eta1: float = 1.0
    eta2: float = 0.5
    theta_safe: float = 1.0  # heading-rate threshold, rad/s
    gamma: float = 0.99
    check_mode: str = "sample"  # "sample": Bernoulli(delta_check) gate; "expected": its mean

    def __post_init__(self):
        if self.check_mode not in ("sample", "expected"):
            raise ValueError(f"check_mode must be 'sample' or 'expected', got {self.check_mode!r}")
        for f in fields(self):
            if f.name != "check_mode" and getattr(self, f.name) < 0:
                raise ValueError(f"reward coefficient {f.name} must be nonnegative")
        if not 0.0 <= self.delta_check <= 1.0:
            raise ValueError("delta_check must lie in [0, 1]")
        if not 0.0 <= self.lam < 1.0:
            raise ValueError("lam must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "RewardConfig":
        return _from_dict(cls, d)


@dataclass
class NoiseSpec:
    enabled: bool = True
    v: float = 0.2
    omega: float = 0.1
    gravity: float = 0.1
    goal_pos: float = 0.5
    goal_rot: float = 0.1
    max_delay: int = 3  # control steps (600 ms at 5 Hz)

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return _from_dict(cls, d)


@dataclass
class EnvConfig:
    dt: float = 0.2
    T_max: int = 150
    v_min: float = -0.5
    v_max: float = 1.5
    omega_max: float = 1.5
    radius: float = 0.2  # collision half-extent of the robot, meters
    n_rays: int = 32
    fov_deg: float = 105.0
    max_range: float = 10.0
    n_scan: int = 32  # privileged 360 degree scan
    reward: RewardConfig = field(default_factory=RewardConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        d = dict(d)
        reward = RewardConfig.from_dict(d.pop("reward", {}))
        noise = NoiseSpec.from_dict(d.pop("noise", {}))
        return _from_dict(cls, {**d, "reward": reward, "noise": noise})

    def to_dict(self) -> dict:
        return asdict(self)


# -- goal and rewards ------------------------------------------------------------


def encode_goal(p, eps: float = 1e-9) -> np.ndarray:
    """Relative goal (..., 2) -> (..., 3): unit direction then ln(1 + |p|)."""
    p = np.asarray(p, dtype=np.float64)
    d = np.linalg.norm(p, axis=-1, keepdims=True)
    unit = np.where(d >= eps, p / np.where(d >= eps, d, 1.0), 0.0)
    return np.concatenate([unit, np.log1p(d)], axis=-1)


def _indicator(t, config: RewardConfig, T_max: int, rng_or_draw):
    """Gate of the task reward: 1 inside the final window, else the random-check outcome.

    In ``expected`` mode the outside-window gate is its expectation ``delta_check``
    and no draw is consumed.
    """
    window = np.asarray(t) > T_max - config.T_r
    if config.check_mode == "expected":
        return np.where(window, 1.0, config.delta_check)
    if isinstance(rng_or_draw, np.random.Generator):
        draw = rng_or_draw.random(np.shape(t))
    else:
        draw = np.asarray(rng_or_draw, dtype=np.float64)
    return (window | (draw < config.delta_check)).astype(np.float64)


def task_reward(t, p, config: RewardConfig, T_max: int, rng_or_draw) -> np.ndarray:
    """Sparse goal reward at step ``t`` (1-based) for relative goal ``p`` (..., 2).

    ``rng_or_draw`` is a Generator (one uniform per entry of ``t``) or the
    uniform draw itself, which keeps reward replay pure.
    """
    on = _indicator(t, config, T_max, rng_or_draw)
    d = np.linalg.norm(np.asarray(p, dtype=np.float64), axis=-1)
    val = config.w_tight / (1.0 + d / config.sigma_tight) + config.w_loose / (1.0 + d / config.sigma_loose)
    return on * val


def reg_reward(a, a_m, a_prev, a_prev2, config: RewardConfig):
    """Smoothness cost; returns ``(r_reg, a_m')``.

    ``a_m' = lam * a_m + (1 - lam) * a``; the acceleration proxy is the second
    difference of commanded velocities ``a - 2 a_prev + a_prev2``.
    """
    a = np.asarray(a, dtype=np.float64)
    a_m = config.lam * np.asarray(a_m, dtype=np.float64) + (1.0 - config.lam) * a
    jerk = a - 2.0 * np.asarray(a_prev, dtype=np.float64) + np.asarray(a_prev2, dtype=np.float64)
    r = config.beta1 * np.abs(a - a_m).sum(axis=-1) + config.beta2 * np.abs(jerk).sum(axis=-1)
    return r, a_m


def pen_reward(collision, theta, config: RewardConfig) -> np.ndarray:
    """``eta1 * 1(collision) + eta2 * max(0, |theta| - theta_safe)``; theta is the heading rate."""
    return config.eta1 * np.asarray(collision, dtype=np.float64) + config.eta2 * np.maximum(
        0.0, np.abs(theta) - config.theta_safe)


# -- observation noise ------------------------------------------------------------


def _rotate(p: np.ndarray, ang: np.ndarray) -> np.ndarray:
    c, s = np.cos(ang), np.sin(ang)
    return np.stack([c * p[..., 0] - s * p[..., 1], s * p[..., 0] + c * p[..., 1]], axis=-1)


@dataclass
class Observation:
    rays: np.ndarray  # (N, K)
    prop: np.ndarray  # (N, 7)
    goal_rel: np.ndarray  # (N, 2) relative goal in the body frame
    scan: np.ndarray | None = None  # (N, n_scan) privileged, noise-free

    @property
    def goal(self) -> np.ndarray:
        return encode_goal(self.goal_rel)

    def take(self, idx) -> "Observation":
        return Observation(self.rays[idx], self.prop[idx], self.goal_rel[idx],
                           None if self.scan is None else self.scan[idx])

    def copy(self) -> "Observation":
        return Observation(self.rays.copy(), self.prop.copy(), self.goal_rel.copy(),
                           None if self.scan is None else self.scan.copy())


def observation_noise(obs: Observation, rng: np.random.Generator, spec: NoiseSpec) -> Observation:
    """Uniform perturbation of velocities, gravity and goal (delay is handled by :class:`DelayLine`)."""
    if not spec.enabled:
        return obs
    N = obs.prop.shape[0]
    prop = obs.prop.copy()
    prop[:, 0] += rng.uniform(-spec.v, spec.v, N)
    prop[:, 1] += rng.uniform(-spec.omega, spec.omega, N)
    prop[:, 2:5] += rng.uniform(-spec.gravity, spec.gravity, (N, 3))
    goal = obs.goal_rel + rng.uniform(-spec.goal_pos, spec.goal_pos, (N, 2))
    goal = _rotate(goal, rng.uniform(-spec.goal_rot, spec.goal_rot, N))
    return Observation(obs.rays, prop, goal, obs.scan)


class DelayLine:
    """Per-environment observation lag of 0..max_delay steps, fixed for an episode."""

    def __init__(self, n: int, max_delay: int):
        self.max_delay = max_delay
        self.delay = np.zeros(n, dtype=np.int64)
        self.history: list[Observation] = []

    def reset(self, idx: np.ndarray, rng: np.random.Generator | None, obs: Observation) -> None:
        """Resample delays for environments ``idx`` and fill their history with ``obs``."""
        if rng is not None and self.max_delay > 0:
            self.delay[idx] = rng.integers(0, self.max_delay + 1, len(idx))
        else:
            self.delay[idx] = 0
        if not self.history:
            self.history = [obs.copy() for _ in range(self.max_delay + 1)]
            return
        for h in self.history:
            for name in ("rays", "prop", "goal_rel"):
                getattr(h, name)[idx] = getattr(obs, name)[idx]

    def __call__(self, obs: Observation) -> Observation:
        """Push the newest observation; return each environment's lagged one."""
        self.history = [obs.copy()] + self.history[:self.max_delay]
        out = obs.copy()
        for lag in range(1, self.max_delay + 1):
            sel = self.delay == lag
            if sel.any():
                for name in ("rays", "prop", "goal_rel"):
                    getattr(out, name)[sel] = getattr(self.history[lag], name)[sel]
        return out


# -- kinematics -------------------------------------------------------------------


def clamp_action(action, config: EnvConfig) -> np.ndarray:
    a = np.asarray(action, dtype=np.float64)
    return np.stack([np.clip(a[..., 0], config.v_min, config.v_max),
                     np.clip(a[..., 1], -config.omega_max, config.omega_max)], axis=-1)


def _wrap(theta):
    return (theta + np.pi) % (2 * np.pi) - np.pi


def footprint_hits(is_wall, xy: np.ndarray, radius: float) -> np.ndarray:
    """True where the square footprint of half-extent ``radius`` touches a wall."""
    hit = is_wall(xy)
    for ox in (-radius, radius):
        for oy in (-radius, radius):
            hit |= is_wall(xy + np.array([ox, oy]))
    return hit


def _unicycle(pose: np.ndarray, action, is_wall, config: EnvConfig):
    a = np.atleast_2d(clamp_action(action, config))
    v, w = a[:, 0], a[:, 1]
    x = pose[:, 0] + v * np.cos(pose[:, 2]) * config.dt
    y = pose[:, 1] + v * np.sin(pose[:, 2]) * config.dt
    theta = _wrap(pose[:, 2] + w * config.dt)
    moved = np.stack([x, y], axis=-1)
    collision = footprint_hits(is_wall, moved, config.radius) & (v != 0)
    xy = np.where(collision[:, None], pose[:, :2], moved)
    realized = np.stack([np.where(collision, 0.0, v), w], axis=-1)
    return np.column_stack([xy, theta]), realized, collision


def env_step(pose: np.ndarray, action, maze: MazeSpec, config: EnvConfig):
    """Unicycle update of poses (N, 3) under clamped ``(v, omega)`` actions.

    A translation that would touch a wall is cancelled (rotation still
    applies) and flagged. Returns ``(pose', realized_velocity (N, 2), collision)``.
    """
    pose = np.atleast_2d(np.asarray(pose, dtype=np.float64))
    return _unicycle(pose, action, maze.is_wall, config)


def relative_goal(pose: np.ndarray, goal) -> np.ndarray:
    d = np.asarray(goal, dtype=np.float64) - pose[:, :2]
    return _rotate(d, -pose[:, 2])


@dataclass
class EpisodeLog:
    """Per-environment outcome of one finished episode."""

    maze: str
    success: bool
    steps: int  # step of first arrival, or T_max on failure
    start_goal_distance: float
    path_length: float


class NavEnv:
    """``n`` independent environments, each cycling through mazes drawn from a pool."""

    def __init__(self, mazes: list[MazeSpec], n: int, config: EnvConfig, rng: np.random.Generator,
                 noise: bool = True, maze_order: str = "random", random_start: float = 0.0):
        if not mazes:
            raise ValueError("NavEnv needs at least one maze")
        self.mazes = mazes
        self.n = n
        self.config = config
        self.rng = rng
        self.noise = noise and config.noise.enabled
        self.maze_order = maze_order
        if not 0.0 <= random_start <= 1.0:
            raise ValueError(f"random_start must lie in [0, 1], got {random_start}")
        self.random_start = random_start  # chance of spawning on a uniformly drawn free cell
        self._free = [m.free_cells() for m in mazes]
        self._next_maze = 0
        self.maze_idx = np.zeros(n, dtype=np.int64)
        self.pose = np.zeros((n, 3))
        self.t = np.zeros(n, dtype=np.int64)
        self.a_prev = np.zeros((n, 2))
        self.a_prev2 = np.zeros((n, 2))
        self.a_m = np.zeros((n, 2))
        self.fresh = np.ones(n, dtype=bool)  # momentum/jerk state seeds from the first action
        self.velocity = np.zeros((n, 2))
        self.reached = np.zeros(n, dtype=bool)
        self.arrival = np.zeros(n, dtype=np.int64)
        self.path = np.zeros(n)
        self.delay = DelayLine(n, config.noise.max_delay if self.noise else 0)
        self.grids = stack_grids(mazes)
        self.cell_size = mazes[0].cell_size
        if any(m.cell_size != self.cell_size for m in mazes):
            raise ValueError("all mazes in one NavEnv must share a cell size")
        self.goals = np.array([m.goal for m in mazes], dtype=np.float64)
        self.tols = np.array([m.goal_tol for m in mazes])
        self.rel_angles = ray_angles(config.n_rays, np.deg2rad(config.fov_deg))
        self.scan_angles = np.linspace(0, 2 * np.pi, config.n_scan, endpoint=False)

    # reset -------------------------------------------------------------------
    def _pick_maze(self) -> int:
        if self.maze_order == "cycle":
            k = self._next_maze % len(self.mazes)
            self._next_maze += 1
            return k
        return int(self.rng.integers(len(self.mazes)))

    def _reset_envs(self, idx: np.ndarray) -> None:
        for e in idx:
            k = self._pick_maze()
            m = self.mazes[k]
            self.maze_idx[e] = k
            if self.random_start > 0 and self.rng.random() < self.random_start:
                cell = self._free[k][int(self.rng.integers(len(self._free[k])))]
                sx, sy = m.cell_center(*cell)
            else:
                sx, sy = m.starts[int(self.rng.integers(len(m.starts)))]
            self.pose[e] = (sx, sy, self.rng.uniform(-np.pi, np.pi))
        self.t[idx] = 0
        self.a_prev[idx] = self.a_prev2[idx] = self.a_m[idx] = 0.0
        self.fresh[idx] = True
        self.velocity[idx] = 0.0
        self.reached[idx] = False
        self.arrival[idx] = 0
        self.path[idx] = 0.0

    def reset(self) -> Observation:
        idx = np.arange(self.n)
        self._reset_envs(idx)
        clean = self._observe_clean()
        self.delay.reset(idx, self.rng if self.noise else None, clean)
        return self._actor_view(clean)

    # observation ---------------------------------------------------------------
    def _goal_of(self) -> np.ndarray:
        return self.goals[self.maze_idx]

    def _observe_clean(self) -> Observation:
        cfg, th = self.config, self.pose[:, 2:3]
        rays = cast_rays(self.grids, self.pose[:, :2], th + self.rel_angles, cfg.max_range, self.maze_idx,
                         self.cell_size)
        scan = cast_rays(self.grids, self.pose[:, :2], th + self.scan_angles, cfg.max_range, self.maze_idx,
                         self.cell_size)
        prop = np.column_stack([self.velocity, np.tile(GRAVITY, (self.n, 1)), self.a_prev])
        return Observation(rays, prop, relative_goal(self.pose, self._goal_of()), scan)

    def _actor_view(self, clean: Observation) -> Observation:
        if not self.noise:
            return clean
        lagged = self.delay(clean)
        noisy = observation_noise(lagged, self.rng, self.config.noise)
        noisy.scan = clean.scan  # the privileged critic sees clean data
        return noisy

    def goal_distance(self) -> np.ndarray:
        return np.linalg.norm(relative_goal(self.pose, self._goal_of()), axis=-1)

    # step --------------------------------------------------------------------
    def step(self, action: np.ndarray):
        """Advance all environments; finished ones are reset in place.

        Returns ``(obs, reward, done, info)``; ``info["episodes"]`` lists
        :class:`EpisodeLog` records of episodes that ended on this step.
        """
        cfg, rc = self.config, self.config.reward
        a = clamp_action(action, cfg)
        ids = self.maze_idx
        new_pose, realized, collision = _unicycle(
            self.pose, a, lambda xy: grid_is_wall(self.grids, ids, xy, self.cell_size), cfg)
        self.path += np.linalg.norm(new_pose[:, :2] - self.pose[:, :2], axis=-1)
        self.pose = new_pose
        self.velocity = realized
        self.t += 1
        # momentum filter and jerk start from the first action of an episode
        for name in ("a_m", "a_prev", "a_prev2"):
            getattr(self, name)[self.fresh] = a[self.fresh]
        self.fresh[:] = False
        p = relative_goal(self.pose, self._goal_of())
        r_task = task_reward(self.t, p, rc, cfg.T_max, self.rng.random(self.n))
        r_reg, self.a_m = reg_reward(a, self.a_m, self.a_prev, self.a_prev2, rc)
        r_pen = pen_reward(collision, realized[:, 1], rc)
        reward = rc.alpha1 * r_task - rc.alpha2 * r_reg - rc.alpha3 * r_pen
        self.a_prev2, self.a_prev = self.a_prev, a
        tol = self.tols[self.maze_idx]
        arrived = (np.linalg.norm(p, axis=-1) < tol) & ~self.reached
        self.arrival[arrived] = self.t[arrived]
        self.reached |= arrived
        reached = self.reached.copy()
        done = self.t >= cfg.T_max
        episodes = []
        idx = np.flatnonzero(done)
        for e in idx:
            m = self.mazes[self.maze_idx[e]]
            steps = int(self.arrival[e]) if self.reached[e] else int(self.t[e])
            episodes.append(EpisodeLog(m.name, bool(self.reached[e]), steps,
                                       float(np.linalg.norm(np.subtract(m.goal, m.starts[0]))),
                                       float(self.path[e])))
        if len(idx):
            self._reset_envs(idx)
        clean = self._observe_clean()
        if len(idx):
            self.delay.reset(idx, self.rng if self.noise else None, clean)
        info = {"collision": collision, "episodes": episodes, "reached": reached}
        return self._actor_view(clean), reward, done, info
