"""Exact action-robust planning: backward induction on the robust Bellman
(optimality) equations, plus exhaustive-enumeration oracles used to check it.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from arrl.mdp import TabularMDP, check_policy, evaluate_policy_pair_exact

ENUMERATION_LIMIT = 10**7
_CHUNK = 1 << 14


class InstanceTooLarge(ValueError):
    """Raised when exhaustive enumeration would exceed ENUMERATION_LIMIT policies."""


@dataclass(frozen=True)
class RobustSolution:
    V_star: np.ndarray   # (H+1, S)
    Q_star: np.ndarray   # (H, S, A)
    pi_star: np.ndarray  # (H, S) agent
    pi_minus: np.ndarray  # (H, S) worst-case adversary against pi_star
    rho: float

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "V_star": self.V_star.tolist(),
            "Q_star": self.Q_star.tolist(),
            "pi_star": self.pi_star.tolist(),
            "pi_minus": self.pi_minus.tolist(),
        }

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)


@dataclass(frozen=True)
class RobustPolicyValue:
    V_pi: np.ndarray  # (H+1, S)
    Q_pi: np.ndarray  # (H, S, A)
    best_response_adversary: np.ndarray  # (H, S)


def solve_robust_optimal(mdp: TabularMDP, rho: float) -> RobustSolution:
    """V*_h(s) = (1-rho) max_a Q*_h(s,a) + rho min_b Q*_h(s,b), by backward induction.

    Ties go to the lowest action index (np.argmax / np.argmin semantics).
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho={rho} outside [0, 1]")
    H, S, A = mdp.H, mdp.S, mdp.A
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A))
    pi_star = np.zeros((H, S), dtype=np.int64)
    pi_minus = np.zeros((H, S), dtype=np.int64)
    for h in range(H - 1, -1, -1):
        Q[h] = mdp.R[h] + mdp.P[h] @ V[h + 1]
        pi_star[h] = Q[h].argmax(axis=1)
        pi_minus[h] = Q[h].argmin(axis=1)
        V[h] = (1 - rho) * Q[h].max(axis=1) + rho * Q[h].min(axis=1)
    return RobustSolution(V, Q, pi_star, pi_minus, float(rho))


def evaluate_robust_policy(mdp: TabularMDP, pi, rho: float) -> RobustPolicyValue:
    """Worst-case value of `pi` over its rho-execution uncertainty set."""
    pi = check_policy(pi, mdp)
    H, S, A = mdp.H, mdp.S, mdp.A
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A))
    adversary = np.zeros((H, S), dtype=np.int64)
    idx = np.arange(S)
    for h in range(H - 1, -1, -1):
        Q[h] = mdp.R[h] + mdp.P[h] @ V[h + 1]
        adversary[h] = Q[h].argmin(axis=1)
        V[h] = (1 - rho) * Q[h][idx, pi[h]] + rho * Q[h].min(axis=1)
    return RobustPolicyValue(V, Q, adversary)


def bellman_residuals(mdp: TabularMDP, sol: RobustSolution) -> dict[str, float]:
    """Max absolute violation of each fixed-point identity a RobustSolution must satisfy."""
    Q = sol.Q_star
    V = sol.V_star
    rho = sol.rho
    q_res = np.abs(Q - (mdp.R + np.einsum("hsat,ht->hsa", mdp.P, V[1:]))).max()
    v_res = np.abs(V[:-1] - ((1 - rho) * Q.max(axis=2) + rho * Q.min(axis=2))).max()
    star = np.take_along_axis(Q, sol.pi_star[..., None], axis=2)[..., 0]
    minus = np.take_along_axis(Q, sol.pi_minus[..., None], axis=2)[..., 0]
    return {
        "terminal": float(np.abs(V[-1]).max()),
        "q": float(q_res),
        "v": float(v_res),
        "argmax": float(np.abs(star - Q.max(axis=2)).max()),
        "argmin": float(np.abs(minus - Q.min(axis=2)).max()),
    }


# --- enumeration oracles -----------------------------------------------------

def _policy_count(mdp: TabularMDP) -> int:
    count = mdp.A ** (mdp.S * mdp.H)
    if count > ENUMERATION_LIMIT:
        raise InstanceTooLarge(
            f"A^(S*H) = {mdp.A}^{mdp.S * mdp.H} deterministic policies exceeds the "
            f"enumeration guard {ENUMERATION_LIMIT:g}")
    return count


def _decode_policies(start: int, stop: int, mdp: TabularMDP) -> np.ndarray:
    """Policies number start..stop-1 as an (n, H, S) array, base-A digits in (h, s) order."""
    idx = np.arange(start, stop, dtype=np.int64)
    digits = np.empty((idx.size, mdp.H * mdp.S), dtype=np.int64)
    for j in range(mdp.H * mdp.S - 1, -1, -1):
        digits[:, j] = idx % mdp.A
        idx //= mdp.A
    return digits.reshape(-1, mdp.H, mdp.S)


def _worst_case_values(mdp: TabularMDP, agents: np.ndarray, rho: float) -> np.ndarray:
    """Batched robust evaluation: value at s1 of each agent against its best-response adversary."""
    V = np.zeros((agents.shape[0], mdp.S))
    for h in range(mdp.H - 1, -1, -1):
        Q = mdp.R[h][None] + np.einsum("sat,nt->nsa", mdp.P[h], V)
        own = np.take_along_axis(Q, agents[:, h, :, None], axis=2)[..., 0]
        V = (1 - rho) * own + rho * Q.min(axis=2)
    return V[:, mdp.s1]


def _best_response_values(mdp: TabularMDP, adversaries: np.ndarray, rho: float) -> np.ndarray:
    """Batched: value at s1 of the agent's best response to each fixed adversary."""
    V = np.zeros((adversaries.shape[0], mdp.S))
    for h in range(mdp.H - 1, -1, -1):
        Q = mdp.R[h][None] + np.einsum("sat,nt->nsa", mdp.P[h], V)
        adv = np.take_along_axis(Q, adversaries[:, h, :, None], axis=2)[..., 0]
        V = (1 - rho) * Q.max(axis=2) + rho * adv
    return V[:, mdp.s1]


def _pair_values(mdp: TabularMDP, agent: np.ndarray, adversaries: np.ndarray, rho: float) -> np.ndarray:
    """Batched evaluate_policy_pair_exact at s1 for one agent against many adversaries."""
    C = np.zeros((adversaries.shape[0], mdp.S))
    idx = np.arange(mdp.S)
    for h in range(mdp.H - 1, -1, -1):
        D = mdp.R[h][None] + np.einsum("sat,nt->nsa", mdp.P[h], C)
        own = D[:, idx, agent[h]]
        adv = np.take_along_axis(D, adversaries[:, h, :, None], axis=2)[..., 0]
        C = (1 - rho) * own + rho * adv
    return C[:, mdp.s1]


def brute_force_minimax(mdp: TabularMDP, rho: float, full_enumeration: bool = False) -> tuple[float, np.ndarray]:
    """max over deterministic agents of min over deterministic adversaries of the s1 value.

    The inner minimum uses the robust Bellman equation by default.  With
    `full_enumeration` both sides are enumerated explicitly (tiny instances only:
    the cost is the square of the policy count).
    """
    count = _policy_count(mdp)
    if full_enumeration and count * count > ENUMERATION_LIMIT:
        raise InstanceTooLarge(f"full double enumeration needs {count}^2 pairs")
    best_value, best_policy = -np.inf, None
    for start in range(0, count, _CHUNK):
        agents = _decode_policies(start, min(count, start + _CHUNK), mdp)
        if full_enumeration:
            adversaries = _decode_policies(0, count, mdp)
            values = np.array([_pair_values(mdp, ag, adversaries, rho).min() for ag in agents])
        else:
            values = _worst_case_values(mdp, agents, rho)
        i = int(values.argmax())
        if values[i] > best_value:
            best_value, best_policy = float(values[i]), agents[i].copy()
    return best_value, best_policy


def verify_perfect_duality(mdp: TabularMDP, rho: float) -> tuple[float, float, float]:
    """(max-min value, min-max value, |gap|) at (step 1, s1), both by enumeration."""
    max_min, _ = brute_force_minimax(mdp, rho)
    count = _policy_count(mdp)
    min_max = np.inf
    for start in range(0, count, _CHUNK):
        adversaries = _decode_policies(start, min(count, start + _CHUNK), mdp)
        min_max = min(min_max, float(_best_response_values(mdp, adversaries, rho).min()))
    return max_min, min_max, abs(max_min - min_max)


def min_over_adversaries(mdp: TabularMDP, pi, rho: float) -> float:
    """Worst case of `pi` at s1 by enumerating every deterministic adversary."""
    pi = check_policy(pi, mdp)
    count = _policy_count(mdp)
    worst = np.inf
    for start in range(0, count, _CHUNK):
        adversaries = _decode_policies(start, min(count, start + _CHUNK), mdp)
        worst = min(worst, float(_pair_values(mdp, pi, adversaries, rho).min()))
    return worst

