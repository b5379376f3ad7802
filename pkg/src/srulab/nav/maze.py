"""Occupancy-grid mazes: ASCII parsing, procedural generators and DDA ray casting.

Grid convention: ``occupancy[i, j]`` is row ``i`` (world y) and column ``j``
(world x). Cell ``(i, j)`` covers ``[j*c, (j+1)*c) x [i*c, (i+1)*c)`` for cell
size ``c``. Headings are measured from +x towards +y.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..tensor import ContractError

WALL, FREE, START, GOAL = "#", ".", "S", "G"


@dataclass
class MazeSpec:
    occupancy: np.ndarray  # (H, W) bool, True = wall
    cell_size: float = 1.0
    starts: list = field(default_factory=list)  # [(x, y)] world coordinates
    goal: tuple = (0.0, 0.0)
    goal_tol: float = 0.5
    name: str = ""

    def __post_init__(self):
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        self.validate()

    @property
    def shape(self) -> tuple:
        return self.occupancy.shape

    def validate(self) -> None:
        occ = self.occupancy
        if occ.ndim != 2 or min(occ.shape) < 3:
            raise ValueError(f"maze grid must be 2-D and at least 3x3, got {occ.shape}")
        if not (occ[0].all() and occ[-1].all() and occ[:, 0].all() and occ[:, -1].all()):
            raise ValueError(f"maze {self.name!r}: border must be fully occupied")
        if not self.starts:
            raise ValueError(f"maze {self.name!r}: no start position")
        for p in [*self.starts, self.goal]:
            if self.is_wall(np.asarray(p, dtype=np.float64)[None]).any():
                raise ValueError(f"maze {self.name!r}: position {tuple(p)} lies inside a wall")

    def cell_of(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ij = np.floor(np.asarray(xy) / self.cell_size).astype(np.int64)
        return ij[..., 1], ij[..., 0]

    def is_wall(self, xy: np.ndarray) -> np.ndarray:
        """True where points lie in an occupied cell or outside the grid."""
        i, j = self.cell_of(xy)
        H, W = self.occupancy.shape
        inside = (i >= 0) & (i < H) & (j >= 0) & (j < W)
        out = np.ones(i.shape, dtype=bool)
        out[inside] = self.occupancy[i[inside], j[inside]]
        return out

    def free_cells(self) -> np.ndarray:
        return np.argwhere(~self.occupancy)

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return ((j + 0.5) * self.cell_size, (i + 0.5) * self.cell_size)


def parse_maze(text: str, cell_size: float = 1.0, goal_tol: float = 0.5, name: str = "") -> MazeSpec:
    """ASCII grid: ``#`` wall, ``.`` free, ``S`` start (one or more), ``G`` goal (exactly one)."""
    rows = [ln.rstrip("\r") for ln in text.strip("\n").splitlines() if ln.strip()]
    if not rows:
        raise ValueError(f"maze {name!r}: empty grid")
    width = len(rows[0])
    occ = np.zeros((len(rows), width), dtype=bool)
    starts, goals = [], []
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"maze {name!r}: row {i} has length {len(row)}, expected {width}")
        for j, ch in enumerate(row):
            if ch == WALL:
                occ[i, j] = True
            elif ch == START:
                starts.append(((j + 0.5) * cell_size, (i + 0.5) * cell_size))
            elif ch == GOAL:
                goals.append(((j + 0.5) * cell_size, (i + 0.5) * cell_size))
            elif ch != FREE:
                raise ValueError(f"maze {name!r}: unknown character {ch!r} at row {i}, column {j}")
    if len(goals) != 1:
        raise ValueError(f"maze {name!r}: expected exactly one goal 'G', found {len(goals)}")
    return MazeSpec(occ, cell_size, starts, goals[0], goal_tol, name)


def format_maze(maze: MazeSpec) -> str:
    grid = np.where(maze.occupancy, WALL, FREE).astype("<U1")
    for x, y in maze.starts:
        i, j = maze.cell_of(np.array([x, y]))
        grid[i, j] = START
    i, j = maze.cell_of(np.asarray(maze.goal))
    grid[i, j] = GOAL
    return "\n".join("".join(r) for r in grid) + "\n"


def load_maze(path: str | Path, **kw) -> MazeSpec:
    path = Path(path)
    return parse_maze(path.read_text(), name=path.stem, **kw)


def load_maze_dir(path: str | Path, **kw) -> list[MazeSpec]:
    files = sorted(Path(path).glob("*.txt"))
    if not files:
        raise FileNotFoundError(f"no *.txt maze files in {path}")
    return [load_maze(f, **kw) for f in files]


def save_maze(maze: MazeSpec, path: str | Path) -> None:
    Path(path).write_text(format_maze(maze))


# -- generators ----------------------------------------------------------------


def _bordered(size: int) -> np.ndarray:
    occ = np.zeros((size, size), dtype=bool)
    occ[0] = occ[-1] = occ[:, 0] = occ[:, -1] = True
    return occ


def _orient(occ: np.ndarray, cells: list, k: int, flip: bool):
    """Rotate the grid by ``k`` quarter turns (and optionally mirror), carrying marked cells along."""
    H, W = occ.shape
    marks = np.zeros(occ.shape, dtype=np.int64)
    for n, (i, j) in enumerate(cells):
        marks[i, j] = n + 1
    occ, marks = np.rot90(occ, k), np.rot90(marks, k)
    if flip:
        occ, marks = occ[:, ::-1], marks[:, ::-1]
    out = [tuple(int(v) for v in np.argwhere(marks == n + 1)[0]) for n in range(len(cells))]
    return np.ascontiguousarray(occ), out


def dead_end_maze(rng: np.random.Generator, size: int = 15, name: str = "dead-end") -> MazeSpec:
    """A U-shaped pocket opens towards the start with the goal right behind its closed end.

    Heading straight for the goal leads into the pocket; the way around is
    through one of the side passages, whose width and offset are randomized.
    """
    occ = _bordered(size)
    mid = size // 2
    half = int(rng.integers(2, 4))  # pocket half-width
    depth = int(rng.integers(3, 6))
    back = int(rng.integers(4, 6))  # row of the pocket's closed end
    lo, hi = mid - half, mid + half
    occ[back, lo:hi + 1] = True  # closed end
    occ[back:back + depth + 1, lo] = True  # side walls
    occ[back:back + depth + 1, hi] = True
    # a barrier on either side of the pocket leaves only a gap near one border
    gap_left = bool(rng.integers(2))
    occ[back, 1:lo] = True
    occ[back, hi + 1:size - 1] = True
    gap_col = 1 if gap_left else size - 2
    occ[back, gap_col] = False
    if rng.integers(2):
        occ[back, 2 if gap_left else size - 3] = False
    goal = (int(rng.integers(1, back - 1)), int(rng.integers(lo, hi + 1)))
    start = (size - 2 - int(rng.integers(0, 2)), mid + int(rng.integers(-1, 2)))
    occ, (goal, start) = _orient(occ, [goal, start], int(rng.integers(4)), bool(rng.integers(2)))
    return MazeSpec(occ, 1.0, [(start[1] + 0.5, start[0] + 0.5)], (goal[1] + 0.5, goal[0] + 0.5), 0.5, name)


def corridor_maze(rng: np.random.Generator, size: int = 15, name: str = "corridor") -> MazeSpec:
    """A serpentine corridor with blind side branches; the goal sits at the far end."""
    occ = np.ones((size, size), dtype=bool)
    lanes = list(range(1, size - 1, 4))  # corridor rows, joined alternately at the two sides
    for n, r in enumerate(lanes):
        occ[r, 1:size - 1] = False
        if n + 1 < len(lanes):
            col = size - 2 if n % 2 == 0 else 1
            occ[r:lanes[n + 1] + 1, col] = False
    # blind branches hanging off each lane (never connecting to the next lane)
    for r in lanes[:-1]:
        for _ in range(int(rng.integers(1, 3))):
            col = int(rng.integers(3, size - 3))
            occ[r + 1:r + 3, col] = False
    start = (lanes[0], 1)
    end_lane = lanes[-1]
    goal = (end_lane, 1 if len(lanes) % 2 == 0 else size - 2)
    occ, (start, goal) = _orient(occ, [start, goal], int(rng.integers(4)), bool(rng.integers(2)))
    return MazeSpec(occ, 1.0, [(start[1] + 0.5, start[0] + 0.5)], (goal[1] + 0.5, goal[0] + 0.5), 0.5, name)


def open_room(size: int = 15, start=(7.5, 7.5), goal=(8.5, 7.5), name: str = "open") -> MazeSpec:
    return MazeSpec(_bordered(size), 1.0, [start], goal, 0.5, name)


def open_field(rng: np.random.Generator, size: int = 15, n_pillars: int = 6, min_dist: float = 3.0,
               name: str = "open") -> MazeSpec:
    """Bordered room with scattered single-cell pillars and a random start/goal pair."""
    occ = _bordered(size)
    for _ in range(n_pillars):
        i, j = rng.integers(2, size - 2, size=2)
        occ[i, j] = True
    free = np.argwhere(~occ)
    while True:
        a, b = free[rng.choice(len(free), size=2, replace=False)]
        start = ((a[1] + 0.5), (a[0] + 0.5))
        goal = ((b[1] + 0.5), (b[0] + 0.5))
        if np.hypot(start[0] - goal[0], start[1] - goal[1]) >= min_dist:
            return MazeSpec(occ, 1.0, [start], goal, 0.5, name)


GENERATORS = {"dead-end": dead_end_maze, "corridor": corridor_maze, "open": open_field}


def generate_suite(rng: np.random.Generator, n: int, kinds=("dead-end",), size: int = 15) -> list[MazeSpec]:
    out = []
    for k in range(n):
        kind = kinds[k % len(kinds)]
        out.append(GENERATORS[kind](rng, size, name=f"{kind}-{k:03d}"))
    return out


def shortest_path_length(maze: MazeSpec, start, goal=None) -> float:
    """4-connected BFS path length in meters between cell centers (inf if unreachable)."""
    from collections import deque

    goal = maze.goal if goal is None else goal
    s = tuple(int(v) for v in maze.cell_of(np.asarray(start)))
    g = tuple(int(v) for v in maze.cell_of(np.asarray(goal)))
    H, W = maze.shape
    dist = {s: 0}
    queue = deque([s])
    while queue:
        i, j = queue.popleft()
        if (i, j) == g:
            return dist[g] * maze.cell_size
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            n = (i + di, j + dj)
            if 0 <= n[0] < H and 0 <= n[1] < W and not maze.occupancy[n] and n not in dist:
                dist[n] = dist[(i, j)] + 1
                queue.append(n)
    return float("inf")


# -- ray casting ----------------------------------------------------------------


def ray_angles(k: int, fov: float) -> np.ndarray:
    """K ray offsets spread evenly over ``fov`` (radians), left to right symmetric about 0."""
    if k == 1:
        return np.zeros(1)
    return np.linspace(fov / 2, -fov / 2, k)


def stack_grids(mazes: list[MazeSpec]) -> np.ndarray:
    """(M, H, W) occupancy stack, smaller grids padded with walls."""
    H = max(m.shape[0] for m in mazes)
    W = max(m.shape[1] for m in mazes)
    out = np.ones((len(mazes), H, W), dtype=bool)
    for k, m in enumerate(mazes):
        out[k, :m.shape[0], :m.shape[1]] = m.occupancy
    return out


def grid_is_wall(occ: np.ndarray, ids: np.ndarray, xy: np.ndarray, cell_size: float) -> np.ndarray:
    """Per-row wall test against an (M, H, W) grid stack; outside the grid counts as wall."""
    ij = np.floor(np.asarray(xy) / cell_size).astype(np.int64)
    i, j = ij[..., 1], ij[..., 0]
    _, H, W = occ.shape
    inside = (i >= 0) & (i < H) & (j >= 0) & (j < W)
    out = np.ones(i.shape, dtype=bool)
    out[inside] = occ[np.asarray(ids)[inside], i[inside], j[inside]]
    return out


def cast_rays(maze: MazeSpec | np.ndarray, origin: np.ndarray, angles: np.ndarray, max_range: float,
              ids: np.ndarray | None = None, cell_size: float | None = None) -> np.ndarray:
    """Grid DDA: distance from ``origin`` (N, 2) along world ``angles`` (N, K) to the first wall.

    ``maze`` is a MazeSpec, or an (M, H, W) grid stack with per-row grid
    ``ids``. Returns (N, K) ranges clipped to ``max_range``.
    """
    if isinstance(maze, MazeSpec):
        occ, c = maze.occupancy[None], maze.cell_size
    else:
        occ, c = maze, cell_size
    origin = np.asarray(origin, dtype=np.float64)
    angles = np.asarray(angles, dtype=np.float64)
    ids = np.zeros(angles.shape, dtype=np.int64) if ids is None else np.broadcast_to(
        np.asarray(ids)[:, None], angles.shape)
    _, H, W = occ.shape
    px = np.broadcast_to(origin[:, :1] / c, angles.shape)
    py = np.broadcast_to(origin[:, 1:] / c, angles.shape)
    dx, dy = np.cos(angles), np.sin(angles)
    ix, iy = np.floor(px).astype(np.int64), np.floor(py).astype(np.int64)
    step_x = np.where(dx > 0, 1, -1)
    step_y = np.where(dy > 0, 1, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        delta_x = np.where(dx != 0, np.abs(1.0 / dx), np.inf)
        delta_y = np.where(dy != 0, np.abs(1.0 / dy), np.inf)
        next_x = np.where(dx != 0, np.where(dx > 0, ix + 1 - px, px - ix) * delta_x, np.inf)
        next_y = np.where(dy != 0, np.where(dy > 0, iy + 1 - py, py - iy) * delta_y, np.inf)
    limit = max_range / c
    dist = np.full(angles.shape, limit)
    # work on the flat list of still-active rays
    live = np.arange(angles.size)
    ix, iy, ids = ix.ravel(), iy.ravel(), ids.ravel()
    step_x, step_y = step_x.ravel(), step_y.ravel()
    delta_x, delta_y = delta_x.ravel(), delta_y.ravel()
    next_x, next_y = next_x.ravel(), next_y.ravel()
    flat = dist.reshape(-1)
    for _ in range(int(2 * np.ceil(limit)) + 4):
        if live.size == 0:
            break
        use_x = next_x < next_y
        t = np.where(use_x, next_x, next_y)
        ix = ix + np.where(use_x, step_x, 0)
        iy = iy + np.where(use_x, 0, step_y)
        next_x = np.where(use_x, next_x + delta_x, next_x)
        next_y = np.where(use_x, next_y, next_y + delta_y)
        inside = (ix >= 0) & (ix < W) & (iy >= 0) & (iy < H)
        hit = ~inside
        hit[inside] = occ[ids[inside], iy[inside], ix[inside]]
        beyond = t >= limit
        done = hit & ~beyond
        flat[live[done]] = t[done]
        keep = ~(hit | beyond)
        live, ix, iy, ids = live[keep], ix[keep], iy[keep], ids[keep]
        step_x, step_y, delta_x, delta_y = step_x[keep], step_y[keep], delta_x[keep], delta_y[keep]
        next_x, next_y = next_x[keep], next_y[keep]
    return dist * c


def raycast(pose, maze: MazeSpec, fov: float = np.deg2rad(105.0), k: int = 32,
            max_range: float = 10.0) -> np.ndarray:
    """Forward fan of ``k`` ranges for pose(s) ``(x, y, theta)``; (k,) or (N, k)."""
    pose = np.asarray(pose, dtype=np.float64)
    single = pose.ndim == 1
    pose = np.atleast_2d(pose)
    if maze.is_wall(pose[:, :2]).any():
        raise ContractError(f"raycast from inside a wall: {pose[maze.is_wall(pose[:, :2])][0].tolist()}")
    angles = pose[:, 2:3] + ray_angles(k, fov)[None, :]
    out = cast_rays(maze, pose[:, :2], angles, max_range)
    return out[0] if single else out
