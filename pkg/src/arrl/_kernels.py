"""Compiled inner loops shared by the learners.

Every kernel consumes pre-drawn uniforms instead of owning a generator, so a
numpy Generator upstream fully determines a run and the step-by-step Python
paths can replay exactly the same draws.
"""
import numpy as np
from numba import njit

# 0-based step h has H - h steps to go, the value cap H - h + 1 in 1-based terms.


@njit(cache=True)
def variance(p, v):
    m = 0.0
    for i in range(p.shape[0]):
        m += p[i] * v[i]
    var = 0.0
    for i in range(p.shape[0]):
        d = v[i] - m
        var += p[i] * d * d
    return max(var, 0.0)


@njit(cache=True)
def bonus_theta(n, r_hat, p_row, v_bar_next, v_under_next, H, iota):
    # variance of the midpoint values, centered for accuracy, plus the width term
    m = 0.0
    gap = 0.0
    for i in range(p_row.shape[0]):
        m += p_row[i] * 0.5 * (v_bar_next[i] + v_under_next[i])
        gap += p_row[i] * (v_bar_next[i] - v_under_next[i])
    var = 0.0
    for i in range(p_row.shape[0]):
        d = 0.5 * (v_bar_next[i] + v_under_next[i]) - m
        var += p_row[i] * d * d
    return (np.sqrt(2.0 * var * iota / n)
            + np.sqrt(2.0 * r_hat * iota / n)
            + gap / H
            + (24.0 * H * H + 7.0 * H + 7.0) * iota / (3.0 * n))


@njit(cache=True)
def next_state(cdf_row, u):
    for t in range(cdf_row.shape[0]):
        if u < cdf_row[t]:
            return t
    return cdf_row.shape[0] - 1


@njit(cache=True)
def _mix(agent_value, adversary_value, rho):
    # (1 - rho) * agent + rho * adversary, written so equal inputs return exactly that value
    return agent_value + rho * (adversary_value - agent_value)


@njit(cache=True)
def _argmax(x):
    best = 0
    for i in range(1, x.shape[0]):
        if x[i] > x[best]:
            best = i
    return best


@njit(cache=True)
def _argmin(x):
    best = 0
    for i in range(1, x.shape[0]):
        if x[i] < x[best]:
            best = i
    return best


@njit(cache=True)
def arrlc_plan(N, N_next, r_hat, Q_bar, Q_under, V_bar, V_under, pi_bar, pi_under, rho, iota):
    H, S, A = N.shape
    p_row = np.empty(S)
    for h in range(H - 1, -1, -1):
        cap = H - h
        for s in range(S):
            for a in range(A):
                n = N[h, s, a]
                if n == 0:
                    continue
                pb = 0.0
                pu = 0.0
                for t in range(S):
                    p_row[t] = N_next[h, s, a, t] / n
                    pb += p_row[t] * V_bar[h + 1, t]
                    pu += p_row[t] * V_under[h + 1, t]
                theta = bonus_theta(n, r_hat[h, s, a], p_row, V_bar[h + 1], V_under[h + 1], H, iota)
                Q_bar[h, s, a] = min(cap, r_hat[h, s, a] + pb + theta)
                Q_under[h, s, a] = max(0.0, r_hat[h, s, a] + pu - theta)
            ab = _argmax(Q_bar[h, s])
            au = _argmin(Q_under[h, s])
            pi_bar[h, s] = ab
            pi_under[h, s] = au
            V_bar[h, s] = _mix(Q_bar[h, s, ab], Q_bar[h, s, au], rho)
            V_under[h, s] = _mix(Q_under[h, s, ab], Q_under[h, s, au], rho)


@njit(cache=True)
def arrlc_episodes(cdf, R, bernoulli, s1, rho, iota, u_act, u_env,
                   N, N_next, r_hat, Q_bar, Q_under, V_bar, V_under, pi_bar, pi_under,
                   pi_out, delta_box, last_pi,
                   cert_lo, cert_hi, delta_trace, sched_ep, sched_pi, traj):
    """Run len(u_act) ARRLC episodes in place.

    Returns the number of policy change points written to sched_*. `traj` has
    shape (n, H, 5) for (state, action, reward, next_state, adversarial) or
    (0, 0, 0) to skip recording.
    """
    n_ep, H = u_act.shape
    S = N.shape[1]
    record = traj.shape[0] > 0
    n_changes = 0
    for k in range(n_ep):
        changed = False
        for h in range(H):
            for s in range(S):
                if pi_bar[h, s] != last_pi[h, s]:
                    changed = True
        if changed:
            last_pi[:, :] = pi_bar
            sched_ep[n_changes] = k
            sched_pi[n_changes] = pi_bar
            n_changes += 1

        s = s1
        for h in range(H):
            adversarial = u_act[k, h] < rho
            a = pi_under[h, s] if adversarial else pi_bar[h, s]
            s_next = next_state(cdf[h, s, a], u_env[k, h, 0])
            if bernoulli:
                r = 1.0 if u_env[k, h, 1] < R[h, s, a] else 0.0
            else:
                r = R[h, s, a]
            N[h, s, a] += 1
            N_next[h, s, a, s_next] += 1
            r_hat[h, s, a] += (r - r_hat[h, s, a]) / N[h, s, a]
            if record:
                traj[k, h, 0] = s
                traj[k, h, 1] = a
                traj[k, h, 2] = r
                traj[k, h, 3] = s_next
                traj[k, h, 4] = 1.0 if adversarial else 0.0
            s = s_next

        lo = V_under[0, s1]
        hi = V_bar[0, s1]
        if hi - lo < delta_box[0]:
            delta_box[0] = hi - lo
            pi_out[:, :] = pi_bar
        cert_lo[k] = lo
        cert_hi[k] = hi
        delta_trace[k] = delta_box[0]

        arrlc_plan(N, N_next, r_hat, Q_bar, Q_under, V_bar, V_under, pi_bar, pi_under, rho, iota)
    return n_changes


@njit(cache=True)
def ucbh_step(h, s, a, r, s_next, N, Q_bar, Q_under, V_bar, V_under, pi_bar, pi_under, rho, iota, clamp):
    """One AR-UCBH value update at (h, s, a).

    Sets the candidate policies at (h, s) and returns (previous agent action,
    number of monotonicity violations) so the caller can apply the freeze rule.
    """
    H = N.shape[0]
    N[h, s, a] += 1
    t = N[h, s, a]
    alpha = (H + 1.0) / (H + t)
    b = np.sqrt(H * H * H * iota / t)
    qb = (1.0 - alpha) * Q_bar[h, s, a] + alpha * (r + V_bar[h + 1, s_next] + b)
    qu = (1.0 - alpha) * Q_under[h, s, a] + alpha * (r + V_under[h + 1, s_next] - b)
    if clamp:
        qb = min(H - h, qb)
        qu = max(0.0, qu)
    Q_bar[h, s, a] = qb
    Q_under[h, s, a] = qu

    prev = pi_bar[h, s]
    nb = _argmax(Q_bar[h, s])
    nu = _argmin(Q_under[h, s])
    pi_bar[h, s] = nb
    pi_under[h, s] = nu
    old_bar = V_bar[h, s]
    old_under = V_under[h, s]
    V_bar[h, s] = min(old_bar, _mix(Q_bar[h, s, nb], Q_bar[h, s, nu], rho))
    V_under[h, s] = max(old_under, _mix(Q_under[h, s, nb], Q_under[h, s, nu], rho))
    violations = 0
    if V_bar[h, s] > old_bar:
        violations += 1
    if V_under[h, s] < old_under:
        violations += 1
    return prev, violations


@njit(cache=True)
def ucbh_freeze(h, s, prev, Q_under, V_under, pi_bar, pi_under, rho):
    """Revert pi_bar at (h, s) to `prev` when the candidate's lower value falls short of V_under."""
    cand = _mix(Q_under[h, s, pi_bar[h, s]], Q_under[h, s, pi_under[h, s]], rho)
    if V_under[h, s] > cand:
        pi_bar[h, s] = prev
        return True
    return False


@njit(cache=True)
def ucbh_episodes(cdf, R, bernoulli, s1, rho, iota, clamp, u_act, u_env,
                  N, Q_bar, Q_under, V_bar, V_under, pi_bar, pi_under, last_pi,
                  cert_lo, cert_hi, sched_ep, sched_pi, traj, counters):
    """Run len(u_act) AR-UCBH episodes in place.

    counters[0] accumulates monotonicity violations, counters[1] freeze events.
    """
    n_ep, H = u_act.shape
    S = N.shape[1]
    record = traj.shape[0] > 0
    n_changes = 0
    for k in range(n_ep):
        s = s1
        for h in range(H):
            ab = _argmax(Q_bar[h, s])
            au = _argmin(Q_under[h, s])
            adversarial = u_act[k, h] < rho
            a = au if adversarial else ab
            s_next = next_state(cdf[h, s, a], u_env[k, h, 0])
            if bernoulli:
                r = 1.0 if u_env[k, h, 1] < R[h, s, a] else 0.0
            else:
                r = R[h, s, a]
            prev, bad = ucbh_step(h, s, a, r, s_next, N, Q_bar, Q_under, V_bar, V_under,
                                  pi_bar, pi_under, rho, iota, clamp)
            counters[0] += bad
            if ucbh_freeze(h, s, prev, Q_under, V_under, pi_bar, pi_under, rho):
                counters[1] += 1
            if record:
                traj[k, h, 0] = s
                traj[k, h, 1] = a
                traj[k, h, 2] = r
                traj[k, h, 3] = s_next
                traj[k, h, 4] = 1.0 if adversarial else 0.0
            s = s_next

        cert_lo[k] = V_under[0, s1]
        cert_hi[k] = V_bar[0, s1]
        changed = False
        for h in range(H):
            for s in range(S):
                if pi_bar[h, s] != last_pi[h, s]:
                    changed = True
        if changed:
            last_pi[:, :] = pi_bar
            sched_ep[n_changes] = k
            sched_pi[n_changes] = pi_bar
            n_changes += 1
    return n_changes
