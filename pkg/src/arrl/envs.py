"""Benchmark MDP constructors and the `name:key=value,...` env-spec grammar."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from arrl.mdp import IDENTITY, AffineMap, TabularMDP, normalize_rewards

UP, RIGHT, DOWN, LEFT = range(4)
ACTION_NAMES = ("up", "right", "down", "left")
_MOVES = {UP: (-1, 0), RIGHT: (0, 1), DOWN: (1, 0), LEFT: (0, -1)}

CLIFF_RAW_BOUNDS = (-100.0, 0.0)


@dataclass(frozen=True)
class GridSpec:
    rows: int = 4
    cols: int = 12
    start: tuple[int, int] = (3, 0)
    goal: tuple[int, int] = (3, 11)
    cliff: tuple[tuple[int, int], ...] = tuple((3, c) for c in range(1, 11))

    def state(self, row: int, col: int) -> int:
        return row * self.cols + col

    def cell(self, state: int) -> tuple[int, int]:
        return divmod(state, self.cols)

    @property
    def absorbing(self) -> int:
        return self.rows * self.cols

    @property
    def num_states(self) -> int:
        return self.rows * self.cols + 1


CLIFF = GridSpec()


def build_cliff_walking(H: int = 100, grid: GridSpec = CLIFF) -> tuple[TabularMDP, AffineMap]:
    """Cliff Walking with an absorbing goal, rewards mapped from [-100, 0] to [0, 1].

    Falling into the cliff costs -100 and teleports to the start; every other
    move costs -1, including the move onto the goal.  The goal cell then leads
    to an extra absorbing state that pays 0 per step, so every episode lasts
    exactly H steps.
    """
    if H < 1:
        raise ValueError("H must be >= 1")
    S, A = grid.num_states, 4
    P = np.zeros((S, A, S))
    raw = np.zeros((S, A))
    cliff = set(grid.cliff)
    for s in range(grid.rows * grid.cols):
        r, c = grid.cell(s)
        for a, (dr, dc) in _MOVES.items():
            if (r, c) == grid.goal:
                P[s, a, grid.absorbing] = 1.0
                continue
            nr = min(max(r + dr, 0), grid.rows - 1)
            nc = min(max(c + dc, 0), grid.cols - 1)
            if (nr, nc) in cliff:
                P[s, a, grid.state(*grid.start)] = 1.0
                raw[s, a] = -100.0
            elif (nr, nc) == grid.goal:
                P[s, a, grid.absorbing] = 1.0
                raw[s, a] = -1.0
            else:
                P[s, a, grid.state(nr, nc)] = 1.0
                raw[s, a] = -1.0
    P[grid.absorbing, :, grid.absorbing] = 1.0
    R, params = normalize_rewards(raw, *CLIFF_RAW_BOUNDS)
    mdp = TabularMDP(np.broadcast_to(P, (H, S, A, S)), np.broadcast_to(R, (H, S, A)),
                     s1=grid.state(*grid.start))
    return mdp, params


def build_fixed_adversary_cliff(H: int = 100, grid: GridSpec = CLIFF) -> np.ndarray:
    """The fixed test-time adversary: always step down."""
    return np.full((H, grid.num_states), DOWN, dtype=np.int64)


def build_random_mdp(S: int, A: int, H: int, concentration: float = 1.0, seed: int = 0) -> TabularMDP:
    """Transition rows ~ symmetric Dirichlet(concentration), mean rewards ~ U[0, 1]."""
    if min(S, A, H) < 1 or concentration <= 0:
        raise ValueError("need S, A, H >= 1 and concentration > 0")
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.full(S, float(concentration)), size=(H, S, A))
    R = rng.random((H, S, A))
    return TabularMDP(P, R, s1=0)


CHAIN_LEFT, CHAIN_RIGHT = 0, 1


def build_chain_mdp(n: int, H: int, slip: float = 0.0) -> TabularMDP:
    """States 0..n-1 on a line, start at 0.

    `right` advances with probability 1 - slip (else stays) and pays 1 only when
    taken at the last state; `left` resets to state 0 and pays 0.01 when taken
    at state 0.
    """
    if n < 2 or not 0.0 <= slip <= 0.5:
        raise ValueError("need n >= 2 and slip in [0, 0.5]")
    P = np.zeros((n, 2, n))
    R = np.zeros((n, 2))
    for s in range(n):
        P[s, CHAIN_LEFT, 0] = 1.0
        nxt = min(s + 1, n - 1)
        P[s, CHAIN_RIGHT, nxt] += 1.0 - slip
        P[s, CHAIN_RIGHT, s] += slip
    R[n - 1, CHAIN_RIGHT] = 1.0
    R[0, CHAIN_LEFT] = 0.01
    return TabularMDP(np.broadcast_to(P, (H, n, 2, n)), np.broadcast_to(R, (H, n, 2)), s1=0)


def parse_env_spec(spec: str) -> tuple[str, dict[str, str]]:
    name, _, rest = spec.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        key, eq, value = item.partition("=")
        if not eq:
            raise ValueError(f"malformed env parameter {item!r} in {spec!r}; expected key=value")
        params[key.strip()] = value.strip()
    return name.strip(), params


def make_env(spec: str, H: int) -> tuple[TabularMDP, AffineMap, np.ndarray | None]:
    """Build (mdp, raw-reward map, default fixed adversary or None) from an env spec.

    Grammar: `cliff`, `chain:n=..,slip=..`, `random:S=..,A=..,seed=..[,c=..]`,
    or `file:path=...json`.
    """
    name, params = parse_env_spec(spec)
    try:
        if name == "cliff":
            _reject_unknown(params, set(), spec)
            mdp, amap = build_cliff_walking(H)
            return mdp, amap, build_fixed_adversary_cliff(H)
        if name == "chain":
            _reject_unknown(params, {"n", "slip"}, spec)
            mdp = build_chain_mdp(int(params.get("n", 4)), H, float(params.get("slip", 0.0)))
            return mdp, IDENTITY, None
        if name == "random":
            _reject_unknown(params, {"S", "A", "seed", "c"}, spec)
            mdp = build_random_mdp(int(params.get("S", 3)), int(params.get("A", 2)), H,
                                   float(params.get("c", 1.0)), int(params.get("seed", 0)))
            return mdp, IDENTITY, None
        if name == "file":
            _reject_unknown(params, {"path"}, spec)
            return TabularMDP.load(params["path"]), IDENTITY, None
    except (KeyError, TypeError) as exc:
        raise ValueError(f"bad env spec {spec!r}: {exc}") from exc
    raise ValueError(f"unknown env {name!r}; choose cliff, chain:..., random:... or file:path=...")


def _reject_unknown(params: dict, allowed: set, spec: str) -> None:
    extra = set(params) - allowed
    if extra:
        raise ValueError(f"unknown parameter(s) {sorted(extra)} in env spec {spec!r}")
