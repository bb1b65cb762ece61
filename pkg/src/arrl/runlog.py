"""Configuration and logging types shared by the ARRLC and AR-UCBH learners."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from arrl.mdp import Step, Trajectory


@dataclass(frozen=True)
class LearnerConfig:
    K: int
    rho: float = 0.2
    delta: float = 0.05

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho={self.rho} outside [0, 1]")
        if not 0.0 < self.delta <= 1.0:
            raise ValueError(f"delta={self.delta} outside (0, 1]")

    def iota(self, S: int, A: int, H: int) -> float:
        """log(2 S A H K / delta), natural log."""
        return math.log(2 * S * A * H * self.K / self.delta)


@dataclass(frozen=True)
class Certificate:
    lower: float
    upper: float
    episode: int

    @property
    def epsilon(self) -> float:
        return self.upper - self.lower


@dataclass
class PolicySchedule:
    """Piecewise-constant per-episode policies: policies[i] is in force from episodes[i] on."""
    episodes: np.ndarray  # (m,) increasing 0-based episode indices, first is 0
    policies: np.ndarray  # (m, H, S)
    K: int

    def __len__(self):
        return self.K

    def index_at(self, k) -> np.ndarray:
        return np.searchsorted(self.episodes, k, side="right") - 1

    def __getitem__(self, k: int) -> np.ndarray:
        if not 0 <= k < self.K:
            raise IndexError(k)
        return self.policies[self.index_at(k)]

    @classmethod
    def from_policies(cls, policies) -> "PolicySchedule":
        pols = np.asarray(policies, dtype=np.int64)
        keep = [0] + [i for i in range(1, len(pols)) if not np.array_equal(pols[i], pols[i - 1])]
        return cls(np.asarray(keep, dtype=np.int64), pols[keep], len(pols))

    @classmethod
    def concat(cls, parts: list["PolicySchedule"]) -> "PolicySchedule":
        eps, pols = [], []
        for part in parts:
            for e, p in zip(part.episodes, part.policies):
                if eps and eps[-1] == e:
                    pols[-1] = p
                elif pols and np.array_equal(pols[-1], p):
                    continue
                else:
                    eps.append(int(e))
                    pols.append(p)
        # chunk schedules carry global episode indices; the last one ends the run
        K = parts[-1].K if parts else 0
        return cls(np.asarray(eps, dtype=np.int64), np.asarray(pols, dtype=np.int64), K)


@dataclass
class RunLog:
    """Everything a learner run emits.

    cert_lo/cert_hi[k] certify policies[k]: the policy played in episode k for
    ARRLC, the policy output after episode k for AR-UCBH.
    """
    algorithm: str
    rho: float
    iota: float
    cert_lo: np.ndarray
    cert_hi: np.ndarray
    delta_trace: np.ndarray
    policies: PolicySchedule
    pi_out: np.ndarray
    trajectories: list[Trajectory] | None = None
    monotonicity_violations: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.cert_lo)

    @property
    def epsilon(self) -> np.ndarray:
        return self.cert_hi - self.cert_lo

    @property
    def certificates(self) -> list[Certificate]:
        return [Certificate(float(lo), float(hi), k) for k, (lo, hi) in enumerate(zip(self.cert_lo, self.cert_hi))]

    def first_episode_below(self, eps: float) -> int | None:
        hits = np.flatnonzero(self.epsilon <= eps)
        return int(hits[0]) if hits.size else None


def chunk_size(H: int, S: int, K: int) -> int:
    # the schedule buffer holds up to one (H, S) policy per episode of a chunk
    return int(max(1, min(K, 20_000, 4_000_000 // (H * S))))


def trajectories_from_array(traj: np.ndarray, h_count: int) -> list[Trajectory]:
    out = []
    for ep in traj:
        out.append(Trajectory([Step(h, int(row[0]), int(row[1]), float(row[2]), int(row[3]))
                               for h, row in zip(range(h_count), ep)]))
    return out
