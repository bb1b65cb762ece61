"""Finite-horizon tabular MDPs, execution under probabilistic action perturbation,
and exact evaluation of (agent, adversary) policy pairs.

Indexing is zero-based throughout: steps h = 0..H-1, value tables carry an
extra terminal row at index H that is identically zero.  Human-facing messages
report steps one-based to match the usual h = 1..H convention.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, NamedTuple

import numpy as np

from arrl._kernels import variance

PROB_TOL = 1e-9

RewardNoise = Literal["deterministic", "bernoulli"]


def make_rng(seed: int, role: str) -> np.random.Generator:
    """Independent stream for `role`, derived from a single experiment seed.

    The stream id is the CRC32 of the role name, so the same (seed, role)
    always yields the same generator and distinct roles never share draws.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(role.encode())]))


@dataclass(frozen=True)
class TabularMDP:
    P: np.ndarray  # (H, S, A, S) transition probabilities
    R: np.ndarray  # (H, S, A) mean rewards in [0, 1]
    s1: int = 0
    reward_noise: RewardNoise = "deterministic"

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        R = np.array(self.R, dtype=float)
        if P.ndim != 4 or R.ndim != 3 or P.shape[:3] != R.shape or P.shape[1] != P.shape[3]:
            raise ValueError(f"inconsistent shapes P{P.shape} R{R.shape}; want P (H,S,A,S), R (H,S,A)")
        if self.reward_noise not in ("deterministic", "bernoulli"):
            raise ValueError(f"unknown reward_noise {self.reward_noise!r}")
        P.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "s1", int(self.s1))

    @property
    def H(self) -> int:
        return self.P.shape[0]

    @property
    def S(self) -> int:
        return self.P.shape[1]

    @property
    def A(self) -> int:
        return self.P.shape[2]

    @cached_property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.P, axis=-1)
        c[..., -1] = 1.0  # absorb rounding so inverse-CDF sampling never falls off the end
        c.setflags(write=False)
        return c

    def to_dict(self) -> dict:
        return {
            "S": self.S, "A": self.A, "H": self.H,
            "P": self.P.tolist(), "R": self.R.tolist(),
            "s1": self.s1, "reward_noise": self.reward_noise,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TabularMDP":
        mdp = cls(P=np.asarray(d["P"], dtype=float), R=np.asarray(d["R"], dtype=float),
                  s1=d.get("s1", 0), reward_noise=d.get("reward_noise", "deterministic"))
        dims = (mdp.S, mdp.A, mdp.H)
        declared = (d.get("S", mdp.S), d.get("A", mdp.A), d.get("H", mdp.H))
        if dims != tuple(declared):
            raise ValueError(f"declared (S,A,H)={tuple(declared)} but arrays have {dims}")
        return mdp

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> "TabularMDP":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def validate_mdp(mdp: TabularMDP) -> list[str]:
    """Return a list of invariant violations; an empty list means the MDP is valid."""
    problems = []
    H, S, A = mdp.H, mdp.S, mdp.A
    if min(H, S, A) < 1:
        problems.append(f"empty dimension (S,A,H)=({S},{A},{H})")
    if not 0 <= mdp.s1 < S:
        problems.append(f"initial state {mdp.s1} out of range [0,{S})")
    for h, s, a in zip(*np.nonzero((mdp.P < 0).any(axis=-1))):
        problems.append(f"row ({h + 1},{s},{a}) has negative entries")
    sums = mdp.P.sum(axis=-1)
    for h, s, a in zip(*np.nonzero(np.abs(sums - 1.0) > PROB_TOL)):
        problems.append(f"row ({h + 1},{s},{a}) sums to {sums[h, s, a]:.12g}")
    for h, s, a in zip(*np.nonzero((mdp.R < 0) | (mdp.R > 1) | ~np.isfinite(mdp.R))):
        problems.append(f"reward ({h + 1},{s},{a}) out of [0,1]")
    return problems


class AffineMap(NamedTuple):
    """raw = scale * normalized + offset"""
    scale: float
    offset: float

    def to_raw(self, x):
        return self.scale * np.asarray(x) + self.offset

    def to_normalized(self, raw):
        return (np.asarray(raw) - self.offset) / self.scale

    def return_to_raw(self, episode_return, horizon: int):
        # a return sums H per-step rewards, so the offset accumulates H times
        return self.scale * np.asarray(episode_return) + horizon * self.offset


IDENTITY = AffineMap(1.0, 0.0)


def normalize_rewards(raw_rewards, r_min: float, r_max: float) -> tuple[np.ndarray, AffineMap]:
    if not r_max > r_min:
        raise ValueError("constant rewards; choose r_max > r_min")
    raw = np.asarray(raw_rewards, dtype=float)
    if raw.size and (raw.min() < r_min or raw.max() > r_max):
        raise ValueError(f"raw rewards span [{raw.min()}, {raw.max()}], outside [{r_min}, {r_max}]")
    params = AffineMap(float(r_max - r_min), float(r_min))
    return (raw - r_min) / (r_max - r_min), params


def sample_step(mdp: TabularMDP, h: int, s: int, a: int, rng: np.random.Generator) -> tuple[float, int]:
    """Draw (realized reward, next state) for taking `a` in `s` at step `h`.

    Always consumes exactly two uniforms (next state, then reward noise) so the
    stream stays aligned with the batched learner kernels.
    """
    u = rng.random(2)
    s_next = int(np.searchsorted(mdp.cdf[h, s, a], u[0], side="right"))
    mean = mdp.R[h, s, a]
    if mdp.reward_noise == "bernoulli":
        return float(u[1] < mean), s_next
    return float(mean), s_next


def check_policy(policy, mdp: TabularMDP) -> np.ndarray:
    """Coerce a deterministic policy to an (H, S) int array and range-check it."""
    pi = np.asarray(policy, dtype=np.int64)
    if pi.shape != (mdp.H, mdp.S):
        raise ValueError(f"policy shape {pi.shape} does not match (H,S)=({mdp.H},{mdp.S})")
    if pi.size and (pi.min() < 0 or pi.max() >= mdp.A):
        raise ValueError(f"policy actions outside [0,{mdp.A})")
    return pi


@dataclass(frozen=True)
class ExecutionModel:
    """Executed policy (1 - rho) * agent + rho * adversary."""
    agent_policy: np.ndarray
    adversary_policy: np.ndarray
    rho: float

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho={self.rho} outside [0, 1]")


def sample_executed_action(exec_model: ExecutionModel, h: int, s: int,
                           rng: np.random.Generator) -> tuple[int, bool]:
    adversarial = bool(rng.random() < exec_model.rho)
    table = exec_model.adversary_policy if adversarial else exec_model.agent_policy
    return int(table[h][s]), adversarial


class Step(NamedTuple):
    h: int
    state: int
    action: int
    reward: float
    next_state: int


@dataclass
class Trajectory:
    steps: list[Step] = field(default_factory=list)

    @property
    def episode_return(self) -> float:
        return float(sum(st.reward for st in self.steps))

    def __len__(self):
        return len(self.steps)


@dataclass(frozen=True)
class ExactEvaluation:
    C: np.ndarray  # (H+1, S) value of the mixed execution, C[H] = 0
    D: np.ndarray  # (H, S, A) value after forcing the first action


def evaluate_policy_pair_exact(mdp: TabularMDP, agent, adversary, rho: float) -> ExactEvaluation:
    """Expected return when `agent` is executed but `adversary` acts w.p. rho at every step."""
    agent = check_policy(agent, mdp)
    adversary = check_policy(adversary, mdp)
    H, S = mdp.H, mdp.S
    C = np.zeros((H + 1, S))
    D = np.zeros((H, S, mdp.A))
    idx = np.arange(S)
    for h in range(H - 1, -1, -1):
        D[h] = mdp.R[h] + mdp.P[h] @ C[h + 1]
        C[h] = (1 - rho) * D[h][idx, agent[h]] + rho * D[h][idx, adversary[h]]
    return ExactEvaluation(C, D)


def apply_D_operator(dist, q_row) -> float:
    """E_{a ~ dist} q(a)."""
    dist = np.asarray(dist, dtype=float)
    q_row = np.asarray(q_row, dtype=float)
    if dist.shape != q_row.shape:
        raise ValueError(f"length mismatch {dist.shape} vs {q_row.shape}")
    return float(dist @ q_row)


def apply_V_operator(p_row, v) -> float:
    """Variance of v(s') for s' ~ p_row, clamped at zero."""
    p_row = np.ascontiguousarray(p_row, dtype=float)
    v = np.ascontiguousarray(v, dtype=float)
    if p_row.shape != v.shape:
        raise ValueError(f"length mismatch {p_row.shape} vs {v.shape}")
    return float(variance(p_row, v))
