"""ARRLC: model-based action-robust RL with policy certificates.

Each episode plays pi_bar, except that with probability rho the planned
adversary pi_under acts instead.  After the episode the learner emits the
certificate [V_under_1(s1), V_bar_1(s1)] for the policy it just played, then
re-plans optimistic and pessimistic robust values from the empirical model
with a variance-aware bonus.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from arrl import _kernels
from arrl.mdp import TabularMDP, Trajectory, Step, sample_step
from arrl.runlog import (Certificate, LearnerConfig, PolicySchedule, RunLog, chunk_size,
                         trajectories_from_array)


class ARRLC:
    """Learner state plus the per-step operations of one ARRLC run."""

    def __init__(self, S: int, A: int, H: int, config: LearnerConfig):
        self.S, self.A, self.H = S, A, H
        self.config = config
        self.rho = config.rho
        self.iota = config.iota(S, A, H)

        cap = (H - np.arange(H + 1, dtype=float))  # H - h + 1 in 1-based steps, 0 at h = H+1
        self.N = np.zeros((H, S, A))
        self.N_next = np.zeros((H, S, A, S))
        self.r_hat = np.zeros((H, S, A))
        self.Q_bar = np.broadcast_to(cap[:H, None, None], (H, S, A)).copy()
        self.Q_under = np.zeros((H, S, A))
        self.V_bar = np.broadcast_to(cap[:, None], (H + 1, S)).copy()
        self.V_under = np.zeros((H + 1, S))
        self.pi_bar = self.Q_bar.argmax(axis=2)
        self.pi_under = self.Q_under.argmin(axis=2)
        self.Delta = float(H)
        # defined from the start so there is always an output policy
        self.pi_out = self.pi_bar.copy()
        self.k = 0

    # --- step-level operations ----------------------------------------------

    def act(self, h: int, s: int, rng: np.random.Generator) -> tuple[int, bool]:
        adversarial = bool(rng.random() < self.rho)
        a = self.pi_under[h, s] if adversarial else self.pi_bar[h, s]
        return int(a), adversarial

    def observe(self, h: int, s: int, a: int, r: float, s_next: int) -> None:
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"reward not normalized: {r}")
        self.N[h, s, a] += 1
        self.N_next[h, s, a, s_next] += 1
        self.r_hat[h, s, a] += (r - self.r_hat[h, s, a]) / self.N[h, s, a]

    @property
    def P_hat(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            P = self.N_next / self.N[..., None]
        return np.nan_to_num(P)

    def certificate_update(self, s1: int) -> Certificate:
        cert = Certificate(float(self.V_under[0, s1]), float(self.V_bar[0, s1]), self.k)
        if cert.epsilon < self.Delta:
            self.Delta = cert.epsilon
            self.pi_out = self.pi_bar.copy()
        self.k += 1
        return cert

    def plan(self) -> None:
        _kernels.arrlc_plan(self.N, self.N_next, self.r_hat, self.Q_bar, self.Q_under,
                            self.V_bar, self.V_under, self.pi_bar, self.pi_under, self.rho, self.iota)

    def run_episode(self, mdp: TabularMDP, act_rng, env_rng) -> tuple[Trajectory, Certificate]:
        """One episode through the step-level API (slow path, mirrors the batched kernel)."""
        traj = Trajectory()
        s = mdp.s1
        for h in range(mdp.H):
            a, _ = self.act(h, s, act_rng)
            r, s_next = sample_step(mdp, h, s, a, env_rng)
            self.observe(h, s, a, r, s_next)
            traj.steps.append(Step(h, s, a, r, s_next))
            s = s_next
        cert = self.certificate_update(mdp.s1)
        self.plan()
        return traj, cert

    # --- batched path ----------------------------------------------------------

    def run_episodes(self, mdp: TabularMDP, n: int, act_rng, env_rng, record: bool = False) -> RunLog:
        """Advance the learner by n episodes in compiled code; returns the chunk's log."""
        H, S = self.H, self.S
        k0 = self.k
        u_act = act_rng.random((n, H))
        u_env = env_rng.random((n, H, 2))
        cert_lo = np.empty(n)
        cert_hi = np.empty(n)
        delta_trace = np.empty(n)
        sched_ep = np.empty(n, dtype=np.int64)
        sched_pi = np.empty((n, H, S), dtype=np.int64)
        traj = np.zeros((n, H, 5)) if record else np.zeros((0, 0, 0))
        delta_box = np.array([self.Delta])
        last_pi = self.pi_bar.copy()
        start = self.pi_bar.copy()
        m = _kernels.arrlc_episodes(
            mdp.cdf, mdp.R, mdp.reward_noise == "bernoulli", mdp.s1, self.rho, self.iota, u_act, u_env,
            self.N, self.N_next, self.r_hat, self.Q_bar, self.Q_under, self.V_bar, self.V_under,
            self.pi_bar, self.pi_under, self.pi_out, delta_box, last_pi,
            cert_lo, cert_hi, delta_trace, sched_ep, sched_pi, traj)
        self.Delta = float(delta_box[0])
        self.k += n
        schedule = PolicySchedule(np.concatenate([[k0], sched_ep[:m] + k0]),
                                  np.concatenate([start[None], sched_pi[:m]]), k0 + n)
        return RunLog("arrlc", self.rho, self.iota, cert_lo, cert_hi, delta_trace, schedule,
                      self.pi_out.copy(), trajectories_from_array(traj, H) if record else None)


def arrlc_run(mdp: TabularMDP, config: LearnerConfig, rng: np.random.Generator,
              record_trajectories: bool | None = None,
              on_chunk: Callable[[RunLog], None] | None = None) -> RunLog:
    """Run ARRLC for config.K episodes.

    Trajectories are kept when K * H <= 10**6 unless `record_trajectories` says
    otherwise.  `on_chunk` sees each chunk's log as soon as it is computed.
    """
    if record_trajectories is None:
        record_trajectories = config.K * mdp.H <= 10**6
    act_rng, env_rng = rng.spawn(2)
    learner = ARRLC(mdp.S, mdp.A, mdp.H, config)
    parts = []
    step = chunk_size(mdp.H, mdp.S, config.K)
    while learner.k < config.K:
        part = learner.run_episodes(mdp, min(step, config.K - learner.k), act_rng, env_rng,
                                    record=record_trajectories)
        if on_chunk is not None:
            on_chunk(part)
        parts.append(part)
    return merge_logs(parts, learner.pi_out)


def merge_logs(parts: list[RunLog], pi_out: np.ndarray, violations: int = 0) -> RunLog:
    first = parts[0]
    trajectories = None
    if all(p.trajectories is not None for p in parts):
        trajectories = [t for p in parts for t in p.trajectories]
    return RunLog(
        first.algorithm, first.rho, first.iota,
        np.concatenate([p.cert_lo for p in parts]),
        np.concatenate([p.cert_hi for p in parts]),
        np.concatenate([p.delta_trace for p in parts]),
        PolicySchedule.concat([p.policies for p in parts]),
        pi_out.copy(), trajectories, violations,
    )


def compute_bonus_theta(learner: ARRLC, h: int, s: int, a: int, iota: float | None = None) -> float:
    """The ARRLC exploration bonus for a visited (h, s, a)."""
    n = learner.N[h, s, a]
    if n < 1:
        raise ValueError(f"bonus undefined for unvisited pair (h={h}, s={s}, a={a})")
    p_row = learner.N_next[h, s, a] / n
    return float(_kernels.bonus_theta(n, learner.r_hat[h, s, a], p_row, learner.V_bar[h + 1],
                                      learner.V_under[h + 1], learner.H,
                                      learner.iota if iota is None else iota))
