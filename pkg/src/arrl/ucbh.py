"""AR-UCBH: model-free action-robust Q-learning with Hoeffding bonuses.

Only the visited (h, s, a) is updated each step.  Optimistic and pessimistic
state values move monotonically (V_bar never rises, V_under never falls), and
the agent's output action at (h, s) is frozen whenever the new candidate does
not attain the current lower value.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from arrl import _kernels
from arrl.arrlc import merge_logs
from arrl.mdp import Step, TabularMDP, Trajectory, sample_step
from arrl.runlog import LearnerConfig, PolicySchedule, RunLog, chunk_size, trajectories_from_array


def learning_rate(t: int, H: int) -> float:
    """alpha_t = (H + 1) / (H + t)."""
    if t < 1:
        raise ValueError("learning rate is defined for t >= 1")
    return (H + 1) / (H + t)


def hoeffding_bonus(t: int, H: int, iota: float) -> float:
    return float(np.sqrt(H**3 * iota / t))


def alpha_weights(t: int, H: int) -> np.ndarray:
    """Weights alpha_t^0..alpha_t^t that unroll t learning-rate updates.

    alpha_t^0 = prod_j (1 - alpha_j) and alpha_t^i = alpha_i prod_{j>i} (1 - alpha_j),
    built by the recursion w_t = (1 - alpha_t) w_{t-1} with a new entry alpha_t.
    """
    w = np.array([1.0])
    for j in range(1, t + 1):
        a = learning_rate(j, H)
        w = np.append(w * (1 - a), a)
    return w


class ARUCBH:
    def __init__(self, S: int, A: int, H: int, config: LearnerConfig, clamp: bool = True):
        self.S, self.A, self.H = S, A, H
        self.config = config
        self.rho = config.rho
        self.iota = config.iota(S, A, H)
        self.clamp = clamp

        cap = (H - np.arange(H + 1, dtype=float))
        self.N = np.zeros((H, S, A))
        self.Q_bar = np.broadcast_to(cap[:H, None, None], (H, S, A)).copy()
        self.Q_under = np.zeros((H, S, A))
        self.V_bar = np.broadcast_to(cap[:, None], (H + 1, S)).copy()
        self.V_under = np.zeros((H + 1, S))
        self.pi_bar = np.zeros((H, S), dtype=np.int64)
        self.pi_under = np.zeros((H, S), dtype=np.int64)
        self.Delta = float(H)
        self.violations = 0
        self.freezes = 0
        self.k = 0
        self._prev = {}

    def act(self, h: int, s: int, rng: np.random.Generator) -> tuple[int, bool]:
        adversarial = bool(rng.random() < self.rho)
        row = self.Q_under[h, s] if adversarial else self.Q_bar[h, s]
        return int(row.argmin() if adversarial else row.argmax()), adversarial

    def step_update(self, h: int, s: int, a: int, r: float, s_next: int) -> None:
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"reward not normalized: {r}")
        prev, bad = _kernels.ucbh_step(h, s, a, r, s_next, self.N, self.Q_bar, self.Q_under,
                                       self.V_bar, self.V_under, self.pi_bar, self.pi_under,
                                       self.rho, self.iota, self.clamp)
        self.violations += bad
        self._prev[h, s] = prev

    def policy_freeze(self, h: int, s: int) -> bool:
        """Apply the freeze rule at (h, s) after step_update; True if the action reverted."""
        fired = _kernels.ucbh_freeze(h, s, self._prev.pop((h, s)), self.Q_under, self.V_under,
                                     self.pi_bar, self.pi_under, self.rho)
        self.freezes += int(fired)
        return bool(fired)

    def certificate(self, s1: int) -> tuple[float, float]:
        return float(self.V_under[0, s1]), float(self.V_bar[0, s1])

    def run_episode(self, mdp: TabularMDP, act_rng, env_rng) -> tuple[Trajectory, tuple[float, float]]:
        traj = Trajectory()
        s = mdp.s1
        for h in range(mdp.H):
            a, _ = self.act(h, s, act_rng)
            r, s_next = sample_step(mdp, h, s, a, env_rng)
            self.step_update(h, s, a, r, s_next)
            self.policy_freeze(h, s)
            traj.steps.append(Step(h, s, a, r, s_next))
            s = s_next
        self.k += 1
        return traj, self.certificate(mdp.s1)

    def run_episodes(self, mdp: TabularMDP, n: int, act_rng, env_rng, record: bool = False) -> RunLog:
        H, S = self.H, self.S
        k0 = self.k
        u_act = act_rng.random((n, H))
        u_env = env_rng.random((n, H, 2))
        cert_lo = np.empty(n)
        cert_hi = np.empty(n)
        sched_ep = np.empty(n, dtype=np.int64)
        sched_pi = np.empty((n, H, S), dtype=np.int64)
        traj = np.zeros((n, H, 5)) if record else np.zeros((0, 0, 0))
        counters = np.zeros(2, dtype=np.int64)
        last_pi = self.pi_bar.copy()
        start = self.pi_bar.copy()
        m = _kernels.ucbh_episodes(
            mdp.cdf, mdp.R, mdp.reward_noise == "bernoulli", mdp.s1, self.rho, self.iota, self.clamp,
            u_act, u_env, self.N, self.Q_bar, self.Q_under, self.V_bar, self.V_under,
            self.pi_bar, self.pi_under, last_pi, cert_lo, cert_hi, sched_ep, sched_pi, traj, counters)
        self.violations += int(counters[0])
        self.freezes += int(counters[1])
        self.k += n
        schedule = PolicySchedule(np.concatenate([[k0], sched_ep[:m] + k0]),
                                  np.concatenate([start[None], sched_pi[:m]]), k0 + n)
        # AR-UCBH keeps no best-so-far width; log the running minimum for CSV parity
        delta_trace = np.minimum.accumulate(np.concatenate([[self.Delta], cert_hi - cert_lo]))[1:]
        self.Delta = float(delta_trace[-1])
        return RunLog("ar_ucbh", self.rho, self.iota, cert_lo, cert_hi, delta_trace, schedule,
                      self.pi_bar.copy(), trajectories_from_array(traj, H) if record else None,
                      int(counters[0]))


def ucbh_run(mdp: TabularMDP, config: LearnerConfig, rng: np.random.Generator,
             record_trajectories: bool | None = None, clamp: bool = True,
             on_chunk: Callable[[RunLog], None] | None = None) -> RunLog:
    """Run AR-UCBH for config.K episodes; the output policy is the final pi_bar."""
    if record_trajectories is None:
        record_trajectories = config.K * mdp.H <= 10**6
    act_rng, env_rng = rng.spawn(2)
    learner = ARUCBH(mdp.S, mdp.A, mdp.H, config, clamp=clamp)
    parts = []
    step = chunk_size(mdp.H, mdp.S, config.K)
    while learner.k < config.K:
        part = learner.run_episodes(mdp, min(step, config.K - learner.k), act_rng, env_rng,
                                    record=record_trajectories)
        if on_chunk is not None:
            on_chunk(part)
        parts.append(part)
    log = merge_logs(parts, learner.pi_bar, learner.violations)
    log.extra["freezes"] = learner.freezes
    return log
