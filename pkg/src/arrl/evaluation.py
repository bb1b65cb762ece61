"""Perturbed-execution evaluation, regret against the exact oracle, and the
certificate sandwich audit."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator, Literal, Sequence

import numpy as np

from arrl.mdp import IDENTITY, AffineMap, TabularMDP, check_policy
from arrl.planner import evaluate_robust_policy, solve_robust_optimal
from arrl.runlog import Certificate, PolicySchedule, RunLog

PerturbKind = Literal["none", "uniform_random", "fixed_policy"]


@dataclass(frozen=True)
class PerturbationSpec:
    kind: PerturbKind = "none"
    p: float = 0.0
    adversary: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("none", "uniform_random", "fixed_policy"):
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p={self.p} outside [0, 1]")
        if self.kind == "fixed_policy" and self.adversary is None:
            raise ValueError("fixed_policy perturbation needs an adversary policy")


@dataclass(frozen=True)
class EvaluationReport:
    mean_return_raw: float
    mean_return_normalized: float
    std_error: float  # normalized scale
    n_trajectories: int
    per_trajectory_returns: np.ndarray  # normalized scale
    std_error_raw: float


def rollout_perturbed(mdp: TabularMDP, policy, spec: PerturbationSpec, n_trajectories: int = 100,
                      rng: np.random.Generator | None = None, amap: AffineMap = IDENTITY) -> EvaluationReport:
    """Monte Carlo return of `policy` when each action is replaced w.p. spec.p.

    Trajectories run in lockstep.  Perturbation draws and environment noise come
    from separate child streams of `rng`, so the same perturbations replay even
    when the environment stream changes.
    """
    if n_trajectories < 1:
        raise ValueError("n_trajectories must be >= 1")
    pi = check_policy(policy, mdp)
    adv = check_policy(spec.adversary, mdp) if spec.kind == "fixed_policy" else None
    rng = np.random.default_rng() if rng is None else rng
    perturb_rng, env_rng = rng.spawn(2)
    n = n_trajectories
    s = np.full(n, mdp.s1)
    G = np.zeros(n)
    for h in range(mdp.H):
        a = pi[h, s]
        if spec.kind != "none":
            flip = perturb_rng.random(n) < spec.p
            if spec.kind == "fixed_policy":
                alt = adv[h, s]
            else:
                alt = perturb_rng.integers(0, mdp.A, size=n)
            a = np.where(flip, alt, a)
        u = env_rng.random((n, 2))
        cdf = mdp.cdf[h, s, a]
        s_next = np.minimum((cdf <= u[:, :1]).sum(axis=1), mdp.S - 1)
        mean = mdp.R[h, s, a]
        G += (u[:, 1] < mean) if mdp.reward_noise == "bernoulli" else mean
        s = s_next
    # deviations from the first return keep the spread exactly 0 when all returns agree
    se = float((G - G[0]).std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    mean = float(G.mean())
    return EvaluationReport(float(amap.return_to_raw(mean, mdp.H)), mean, se, n, G, se * amap.scale)


@dataclass(frozen=True)
class RegretRecord:
    episode: int
    v_star: float
    v_pi_bar_k: float
    increment: float
    cumulative: float


@dataclass
class RegretCurve:
    v_star: float
    v_pi: np.ndarray       # (K,) robust value of each episode's policy at s1
    increments: np.ndarray
    cumulative: np.ndarray

    def __len__(self):
        return len(self.v_pi)

    def __getitem__(self, k: int) -> RegretRecord:
        return RegretRecord(k, self.v_star, float(self.v_pi[k]), float(self.increments[k]),
                            float(self.cumulative[k]))

    def records(self) -> Iterator[RegretRecord]:
        return (self[k] for k in range(len(self)))


class PolicyValueCache:
    """Robust values at s1 of policies, keyed by their bytes."""

    def __init__(self, mdp: TabularMDP, rho: float):
        self.mdp, self.rho = mdp, rho
        self.v_star = float(solve_robust_optimal(mdp, rho).V_star[0, mdp.s1])
        self._cache: dict[bytes, float] = {}

    def __call__(self, pi: np.ndarray) -> float:
        key = np.ascontiguousarray(pi, dtype=np.int64).tobytes()
        if key not in self._cache:
            self._cache[key] = float(evaluate_robust_policy(self.mdp, pi, self.rho).V_pi[0, self.mdp.s1])
        return self._cache[key]

    def values(self, schedule: PolicySchedule, k0: int, k1: int, thin: int = 1) -> np.ndarray:
        """Per-episode values for episodes k0..k1-1, evaluated every `thin` episodes and carried forward."""
        ks = np.arange(k0, k1)
        # episode k uses the policy in force at the last multiple of thin (not before k0)
        idx = schedule.index_at(np.maximum((ks // thin) * thin, k0))
        uniq = np.unique(idx)
        uvals = np.array([self(schedule.policies[i]) for i in uniq])
        return uvals[np.searchsorted(uniq, idx)]


def default_thinning(mdp: TabularMDP) -> int:
    return 1 if mdp.S * mdp.A * mdp.H <= 10**4 else 10


def _as_schedule(policies) -> PolicySchedule:
    if isinstance(policies, PolicySchedule):
        return policies
    return PolicySchedule.from_policies(policies)


def compute_regret_curve(mdp: TabularMDP, rho: float, per_episode_policies, thin: int | None = None,
                         cache: PolicyValueCache | None = None) -> RegretCurve:
    """Regret(K) = sum_k V*_1(s1) - V^{pi_k}_1(s1), with exact robust values."""
    sched = _as_schedule(per_episode_policies)
    cache = cache or PolicyValueCache(mdp, rho)
    thin = default_thinning(mdp) if thin is None else thin
    v_pi = cache.values(sched, 0, sched.K, thin)
    inc = cache.v_star - v_pi
    return RegretCurve(cache.v_star, v_pi, inc, np.cumsum(inc))


def _cert_arrays(certificates) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(certificates, RunLog):
        return certificates.cert_lo, certificates.cert_hi
    if isinstance(certificates, tuple) and len(certificates) == 2 and not isinstance(certificates[0], Certificate):
        return np.asarray(certificates[0], float), np.asarray(certificates[1], float)
    lo = np.array([c.lower for c in certificates])
    hi = np.array([c.upper for c in certificates])
    return lo, hi


def sandwich_audit(mdp: TabularMDP, rho: float, certificates, per_episode_policies,
                   cache: PolicyValueCache | None = None, tol: float = 1e-9) -> tuple[int, float]:
    """Count episodes whose certificate fails to bracket [V^{pi_k}, V*] at s1.

    An episode violates when cert_lo > V^{pi_k} + tol or cert_hi < V* - tol.
    """
    lo, hi = _cert_arrays(certificates)
    sched = _as_schedule(per_episode_policies)
    cache = cache or PolicyValueCache(mdp, rho)
    v_pi = cache.values(sched, 0, len(lo))
    bad = (lo > v_pi + tol) | (hi < cache.v_star - tol)
    count = int(bad.sum())
    return count, count / len(lo)


# --- CSV ------------------------------------------------------------------------

EPISODE_COLUMNS = ["episode", "cert_lo", "cert_hi", "epsilon", "delta",
                   "true_value_pi_bar", "regret_increment", "cum_regret", "seed"]
EVAL_COLUMNS = ["policy_name", "perturb_kind", "p", "n", "mean_raw", "mean_norm", "stderr"]


class EpisodeCsvWriter:
    """Streams per-episode rows; regret columns are filled when an oracle cache is given."""

    def __init__(self, fh, seed: int, cache: PolicyValueCache | None = None, thin: int = 1):
        self.fh = fh
        self.writer = csv.writer(fh)
        self.writer.writerow(EPISODE_COLUMNS)
        self.seed, self.cache, self.thin = seed, cache, thin
        self.cumulative = 0.0
        self.k = 0

    def write(self, log: RunLog) -> None:
        n = log.K
        if self.cache is not None:
            v_pi = self.cache.values(log.policies, self.k, self.k + n, self.thin)
            inc = self.cache.v_star - v_pi
            cum = self.cumulative + np.cumsum(inc)
            self.cumulative = float(cum[-1])
        for i in range(n):
            row = [self.k + i + 1, repr(float(log.cert_lo[i])), repr(float(log.cert_hi[i])),
                   repr(float(log.cert_hi[i] - log.cert_lo[i])), repr(float(log.delta_trace[i]))]
            if self.cache is not None:
                row += [repr(float(v_pi[i])), repr(float(inc[i])), repr(float(cum[i]))]
            else:
                row += ["", "", ""]
            self.writer.writerow(row + [self.seed])
        self.k += n
        self.fh.flush()


def write_evaluation_csv(fh, rows: Sequence[tuple[str, PerturbationSpec, EvaluationReport]]) -> None:
    writer = csv.writer(fh)
    writer.writerow(EVAL_COLUMNS)
    for name, spec, rep in rows:
        writer.writerow([name, spec.kind, spec.p, rep.n_trajectories, repr(rep.mean_return_raw),
                         repr(rep.mean_return_normalized), repr(rep.std_error)])
