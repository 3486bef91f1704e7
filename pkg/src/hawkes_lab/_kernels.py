# Compiled inner loops. Everything here works on plain arrays:
#   times (N,) float, comps (N,) int (0-based), phi (N, d) with
#   phi[k, i] = link value of event k as seen by receiver i,
#   a (d, d) with a[i, j] = effect of source j on receiver i,
#   bmat (d, d) decay matrix, bvec (d,) per-receiver decays.
import math

import numpy as np
from numba import njit

LINK_NONE = 0
LINK_EXP = 1
LINK_POWER = 2


@njit(cache=True)
def _decay_pairs(R, Rp, G, P, bmat, dt, with_grad):
    d = R.shape[0]
    for i in range(d):
        for j in range(d):
            e = math.exp(-bmat[i, j] * dt)
            if with_grad:
                Rp[i, j] = e * (Rp[i, j] + dt * R[i, j])
                G[i, j] *= e
                P[i, j] *= e
            R[i, j] *= e


@njit(cache=True)
def linear_loglik(times, comps, phi, dphi_g, dphi_psi, m, a, bmat,
                  eval_times, eval_comps, T, with_grad):
    """Sum of log-intensities at eval points minus the compensator on [0, T].

    The intensity is driven by the history (times, comps, phi); only history
    events strictly before an eval point contribute to it.  Returns the value
    and gradients wrt m, a, b (full matrix), gamma (full matrix), psi.
    """
    d = m.shape[0]
    n = times.shape[0]
    R = np.zeros((d, d))
    Rp = np.zeros((d, d))
    G = np.zeros((d, d))
    P = np.zeros((d, d))
    gm = np.zeros(d)
    ga = np.zeros((d, d))
    gb = np.zeros((d, d))
    gg = np.zeros((d, d))
    gpsi = 0.0
    ll = 0.0
    t_state = 0.0
    k = 0
    for e in range(eval_times.shape[0]):
        s = eval_times[e]
        while k < n and times[k] < s:
            _decay_pairs(R, Rp, G, P, bmat, times[k] - t_state, with_grad)
            t_state = times[k]
            j = comps[k]
            for i in range(d):
                R[i, j] += phi[k, i]
                if with_grad:
                    G[i, j] += dphi_g[k, i]
                    P[i, j] += dphi_psi[k, i]
            k += 1
        _decay_pairs(R, Rp, G, P, bmat, s - t_state, with_grad)
        t_state = s
        i = eval_comps[e]
        lam = m[i]
        for j in range(d):
            lam += a[i, j] * R[i, j]
        if not lam > 0.0:
            return -np.inf, gm, ga, gb, gg, gpsi
        ll += math.log(lam)
        if with_grad:
            inv = 1.0 / lam
            gm[i] += inv
            for j in range(d):
                ga[i, j] += R[i, j] * inv
                gb[i, j] -= a[i, j] * Rp[i, j] * inv
                gg[i, j] += a[i, j] * G[i, j] * inv
                gpsi += a[i, j] * P[i, j] * inv
    for i in range(d):
        ll -= m[i] * T
        gm[i] -= T
    for k in range(n):
        if times[k] >= T:
            break
        tau = T - times[k]
        j = comps[k]
        for i in range(d):
            bij = bmat[i, j]
            ex = math.exp(-bij * tau)
            w = (1.0 - ex) / bij
            ll -= a[i, j] * phi[k, i] * w
            if with_grad:
                ga[i, j] -= phi[k, i] * w
                gb[i, j] -= a[i, j] * phi[k, i] * (tau * ex - w) / bij
                gg[i, j] -= a[i, j] * dphi_g[k, i] * w
                gpsi -= a[i, j] * dphi_psi[k, i] * w
    return ll, gm, ga, gb, gg, gpsi


@njit(cache=True)
def linear_score_rows(times, comps, phi, dphi_g, dphi_psi, m, a, bmat,
                      eval_times, eval_comps):
    # per eval point: d(log lambda)/d(full parameter vector)
    # layout of a row: m (d), a (d*d), b (d*d), gamma (d*d), psi (1)
    d = m.shape[0]
    n = times.shape[0]
    nfull = d + 3 * d * d + 1
    out = np.zeros((eval_times.shape[0], nfull))
    R = np.zeros((d, d))
    Rp = np.zeros((d, d))
    G = np.zeros((d, d))
    P = np.zeros((d, d))
    t_state = 0.0
    k = 0
    for e in range(eval_times.shape[0]):
        s = eval_times[e]
        while k < n and times[k] < s:
            _decay_pairs(R, Rp, G, P, bmat, times[k] - t_state, True)
            t_state = times[k]
            j = comps[k]
            for i in range(d):
                R[i, j] += phi[k, i]
                G[i, j] += dphi_g[k, i]
                P[i, j] += dphi_psi[k, i]
            k += 1
        _decay_pairs(R, Rp, G, P, bmat, s - t_state, True)
        t_state = s
        i = eval_comps[e]
        lam = m[i]
        for j in range(d):
            lam += a[i, j] * R[i, j]
        inv = 1.0 / lam
        out[e, i] = inv
        for j in range(d):
            out[e, d + i * d + j] = R[i, j] * inv
            out[e, d + d * d + i * d + j] = -a[i, j] * Rp[i, j] * inv
            out[e, d + 2 * d * d + i * d + j] = a[i, j] * G[i, j] * inv
            out[e, nfull - 1] += a[i, j] * P[i, j] * inv
    return out


@njit(cache=True)
def segment_integral(m, s, b, dt):
    """Integral over [0, dt] of max(m + s*exp(-b u), 0), with m > 0."""
    if dt <= 0.0:
        return 0.0
    if m + s >= 0.0:
        return m * dt + s * (1.0 - math.exp(-b * dt)) / b
    u = math.log(-s / m) / b
    if u >= dt:
        return 0.0
    return m * (dt - u) + s * (math.exp(-b * u) - math.exp(-b * dt)) / b


@njit(cache=True)
def restart_time(lam_plus, m, b, t_k, t_next):
    if lam_plus >= 0.0:
        return t_k
    t = t_k + math.log((m - lam_plus) / m) / b
    return min(t, t_next)


@njit(cache=True)
def nonlinear_loglik(times, comps, phi, m, a, bvec, eval_times, eval_comps, T):
    d = m.shape[0]
    n = times.shape[0]
    s = np.zeros(d)
    ll = 0.0
    t_state = 0.0
    k = 0
    for e in range(eval_times.shape[0]):
        te = eval_times[e]
        while k < n and times[k] < te:
            dt = times[k] - t_state
            j = comps[k]
            for i in range(d):
                s[i] = s[i] * math.exp(-bvec[i] * dt) + a[i, j] * phi[k, i]
            t_state = times[k]
            k += 1
        i = eval_comps[e]
        lam = m[i] + s[i] * math.exp(-bvec[i] * (te - t_state))
        if not lam > 0.0:
            return -np.inf
        ll += math.log(lam)
    comp = nonlinear_compensator(times, comps, phi, m, a, bvec, T)
    for i in range(d):
        ll -= comp[i]
    return ll


@njit(cache=True)
def nonlinear_loglik_grad(times, comps, phi, dphi_g, dphi_psi, m, a, bvec,
                          eval_times, eval_comps, T):
    """Truncated log-likelihood and its gradient, laid out as in linear_loglik.

    The b gradient of receiver i is split over the sources j in gb[i, j];
    summing a row gives the derivative wrt bvec[i].
    """
    d = m.shape[0]
    n = times.shape[0]
    bmat = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            bmat[i, j] = bvec[i]
    R = np.zeros((d, d))
    Rp = np.zeros((d, d))
    G = np.zeros((d, d))
    P = np.zeros((d, d))
    gm = np.zeros(d)
    ga = np.zeros((d, d))
    gb = np.zeros((d, d))
    gg = np.zeros((d, d))
    gpsi = 0.0
    ll = 0.0
    t_state = 0.0
    k = 0
    for e in range(eval_times.shape[0]):
        s = eval_times[e]
        while k < n and times[k] < s:
            _decay_pairs(R, Rp, G, P, bmat, times[k] - t_state, True)
            t_state = times[k]
            j = comps[k]
            for i in range(d):
                R[i, j] += phi[k, i]
                G[i, j] += dphi_g[k, i]
                P[i, j] += dphi_psi[k, i]
            k += 1
        _decay_pairs(R, Rp, G, P, bmat, s - t_state, True)
        t_state = s
        i = eval_comps[e]
        lam = m[i]
        for j in range(d):
            lam += a[i, j] * R[i, j]
        if not lam > 0.0:
            return -np.inf, gm, ga, gb, gg, gpsi
        ll += math.log(lam)
        inv = 1.0 / lam
        gm[i] += inv
        for j in range(d):
            ga[i, j] += R[i, j] * inv
            gb[i, j] -= a[i, j] * Rp[i, j] * inv
            gg[i, j] += a[i, j] * G[i, j] * inv
            gpsi += a[i, j] * P[i, j] * inv

    # compensator: on each inter-event segment the excitation is S0*exp(-b u)
    R[:, :] = 0.0
    Rp[:, :] = 0.0
    G[:, :] = 0.0
    P[:, :] = 0.0
    prev = 0.0
    for k in range(n + 1):
        if k < n and times[k] < T:
            end = times[k]
        else:
            end = T
        dt = end - prev
        if dt > 0.0:
            for i in range(d):
                b = bvec[i]
                s0 = 0.0
                for j in range(d):
                    s0 += a[i, j] * R[i, j]
                u0 = 0.0
                if m[i] + s0 < 0.0:
                    u0 = math.log(-s0 / m[i]) / b
                    if u0 >= dt:
                        continue
                e0 = math.exp(-b * u0)
                e1 = math.exp(-b * dt)
                i1 = (e0 - e1) / b
                i2 = (u0 / b + 1.0 / (b * b)) * e0 - (dt / b + 1.0 / (b * b)) * e1
                ll -= m[i] * (dt - u0) + s0 * i1
                gm[i] -= dt - u0
                for j in range(d):
                    ga[i, j] -= R[i, j] * i1
                    gb[i, j] += a[i, j] * (Rp[i, j] * i1 + R[i, j] * i2)
                    gg[i, j] -= a[i, j] * G[i, j] * i1
                    gpsi -= a[i, j] * P[i, j] * i1
        if end >= T or k == n:
            break
        _decay_pairs(R, Rp, G, P, bmat, dt, True)
        j = comps[k]
        for i in range(d):
            R[i, j] += phi[k, i]
            G[i, j] += dphi_g[k, i]
            P[i, j] += dphi_psi[k, i]
        prev = times[k]
    return ll, gm, ga, gb, gg, gpsi


@njit(cache=True)
def nonlinear_compensator(times, comps, phi, m, a, bvec, T):
    d = m.shape[0]
    n = times.shape[0]
    s = np.zeros(d)
    out = np.zeros(d)
    prev = 0.0
    for k in range(n + 1):
        if k < n and times[k] < T:
            end = times[k]
        else:
            end = T
        for i in range(d):
            out[i] += segment_integral(m[i], s[i], bvec[i], end - prev)
        if end >= T or k == n:
            break
        j = comps[k]
        dt = times[k] - prev
        for i in range(d):
            s[i] = s[i] * math.exp(-bvec[i] * dt) + a[i, j] * phi[k, i]
        prev = times[k]
    return out


@njit(cache=True)
def compensator_at_events(times, comps, phi, m, a, bmat, T, truncated):
    """Per-component compensator at every event time and at T.

    ``truncated`` selects the nonlinear (max(., 0)) integrand, which needs
    bmat rows to be constant (per-receiver decays).
    """
    d = m.shape[0]
    n = times.shape[0]
    S = np.zeros((d, d))
    lam_at = np.zeros((n, d))
    acc = np.zeros(d)
    prev = 0.0
    for k in range(n + 1):
        if k < n and times[k] <= T:
            end = times[k]
        else:
            end = T
        dt = end - prev
        for i in range(d):
            if truncated:
                tot = 0.0
                for j in range(d):
                    tot += S[i, j]
                acc[i] += segment_integral(m[i], tot, bmat[i, 0], dt)
            else:
                acc[i] += m[i] * dt
                for j in range(d):
                    acc[i] += S[i, j] * (1.0 - math.exp(-bmat[i, j] * dt)) / bmat[i, j]
        if k == n or times[k] > T:
            break
        for i in range(d):
            lam_at[k, i] = acc[i]
            for j in range(d):
                S[i, j] *= math.exp(-bmat[i, j] * dt)
        j = comps[k]
        for i in range(d):
            S[i, j] += a[i, j] * phi[k, i]
        prev = end
    return lam_at, acc


@njit(cache=True)
def compensator_at_query(times, comps, phi, m, a, bmat, query, truncated):
    """Per-component compensator at sorted query times, driven by the events."""
    d = m.shape[0]
    n = times.shape[0]
    S = np.zeros((d, d))
    acc = np.zeros(d)
    out = np.zeros((query.shape[0], d))
    prev = 0.0
    k = 0
    for q in range(query.shape[0]):
        tq = query[q]
        while True:
            take_event = k < n and times[k] < tq
            end = times[k] if take_event else tq
            dt = end - prev
            for i in range(d):
                if truncated:
                    tot = 0.0
                    for j in range(d):
                        tot += S[i, j]
                    acc[i] += segment_integral(m[i], tot, bmat[i, 0], dt)
                else:
                    acc[i] += m[i] * dt
                    for j in range(d):
                        acc[i] += S[i, j] * (1.0 - math.exp(-bmat[i, j] * dt)) / bmat[i, j]
                for j in range(d):
                    S[i, j] *= math.exp(-bmat[i, j] * dt)
            prev = end
            if not take_event:
                break
            j = comps[k]
            for i in range(d):
                S[i, j] += a[i, j] * phi[k, i]
            k += 1
        for i in range(d):
            out[q, i] = acc[i]
    return out


@njit(cache=True)
def intensity_star_at(times, comps, phi, m, a, bmat, query):
    """Left-limit lambda* at sorted query times."""
    d = m.shape[0]
    n = times.shape[0]
    S = np.zeros((d, d))
    out = np.zeros((query.shape[0], d))
    t_state = 0.0
    k = 0
    for q in range(query.shape[0]):
        tq = query[q]
        while k < n and times[k] < tq:
            dt = times[k] - t_state
            for i in range(d):
                for j in range(d):
                    S[i, j] *= math.exp(-bmat[i, j] * dt)
            j = comps[k]
            for i in range(d):
                S[i, j] += a[i, j] * phi[k, i]
            t_state = times[k]
            k += 1
        dt = tq - t_state
        for i in range(d):
            v = m[i]
            for j in range(d):
                v += S[i, j] * math.exp(-bmat[i, j] * dt)
            out[q, i] = v
    return out


@njit(cache=True)
def left_right_limits(times, comps, phi, m, a, bmat):
    d = m.shape[0]
    n = times.shape[0]
    S = np.zeros((d, d))
    left = np.zeros((n, d))
    right = np.zeros((n, d))
    prev = 0.0
    for k in range(n):
        dt = times[k] - prev
        j = comps[k]
        for i in range(d):
            v = m[i]
            for jj in range(d):
                S[i, jj] *= math.exp(-bmat[i, jj] * dt)
                v += S[i, jj]
            left[k, i] = v
            jump = a[i, j] * phi[k, i]
            S[i, j] += jump
            right[k, i] = v + jump
        prev = times[k]
    return left, right


@njit(cache=True)
def _link_value(kind, gamma, c, kappa):
    if kind == LINK_EXP:
        return c * math.exp(gamma * kappa)
    if kind == LINK_POWER:
        return c * kappa ** gamma
    return c


@njit(cache=True)
def _grow(arr, n):
    out = np.empty(max(2 * arr.shape[0], n + 16), dtype=arr.dtype)
    out[:arr.shape[0]] = arr
    return out


@njit(cache=True)
def simulate_thinning(rng, m, a, bmat, kind, gamma, cmat, psi, marked,
                      horizon, max_events):
    """Thinning for (non)linear marked exponential Hawkes processes.

    The dominating rate sum_i max(lambda*_i, m_i) is valid between events
    because every lambda*_i relaxes monotonically towards m_i; it is
    recomputed at every candidate.  Returns (times, comps, marks, status)
    with status 1 when max_events was hit.
    """
    d = m.shape[0]
    cap = 1024
    times = np.empty(cap)
    comps = np.empty(cap, dtype=np.int64)
    marks = np.empty(cap)
    S = np.zeros((d, d))
    lam = np.zeros(d)
    t = 0.0
    n = 0
    while True:
        bound = 0.0
        for i in range(d):
            v = m[i]
            for j in range(d):
                v += S[i, j]
            bound += max(v, m[i])
        t_c = t + rng.standard_exponential() / bound
        if t_c > horizon:
            break
        dt = t_c - t
        total = 0.0
        for i in range(d):
            v = m[i]
            for j in range(d):
                S[i, j] *= math.exp(-bmat[i, j] * dt)
                v += S[i, j]
            lam[i] = max(v, 0.0)
            total += lam[i]
        t = t_c
        u = rng.random() * bound
        if u >= total:
            continue
        src = d - 1
        acc = 0.0
        for i in range(d):
            acc += lam[i]
            if u < acc:
                src = i
                break
        kappa = 0.0
        if marked:
            kappa = rng.exponential(1.0 / psi)
        for i in range(d):
            S[i, src] += a[i, src] * _link_value(kind, gamma[i, src], cmat[i, src], kappa)
        if n >= times.shape[0]:
            times = _grow(times, n)
            comps = _grow(comps, n)
            marks = _grow(marks, n)
        times[n] = t
        comps[n] = src
        marks[n] = kappa
        n += 1
        if n >= max_events:
            return times[:n], comps[:n], marks[:n], 1
    return times[:n], comps[:n], marks[:n], 0


@njit(cache=True)
def simulate_frozen(rng, h_times, h_comps, h_phi, m, a, bmat, horizon,
                    marked, psi):
    """Thinning for the deterministic intensity driven by a fixed history.

    The bound is refreshed on every original inter-event interval and after
    every candidate.
    """
    d = m.shape[0]
    nh = h_times.shape[0]
    cap = 1024
    times = np.empty(cap)
    comps = np.empty(cap, dtype=np.int64)
    marks = np.empty(cap)
    S = np.zeros((d, d))
    lam = np.zeros(d)
    t = 0.0
    k = 0
    n = 0
    while t < horizon:
        t_next = horizon
        if k < nh and h_times[k] < horizon:
            t_next = h_times[k]
        bound = 0.0
        for i in range(d):
            v = m[i]
            for j in range(d):
                v += S[i, j]
            bound += max(v, m[i])
        t_c = t + rng.standard_exponential() / bound
        if t_c > t_next:
            dt = t_next - t
            for i in range(d):
                for j in range(d):
                    S[i, j] *= math.exp(-bmat[i, j] * dt)
            t = t_next
            if k < nh and t_next < horizon:
                j = h_comps[k]
                for i in range(d):
                    S[i, j] += a[i, j] * h_phi[k, i]
                k += 1
                continue
            break
        dt = t_c - t
        total = 0.0
        for i in range(d):
            v = m[i]
            for j in range(d):
                S[i, j] *= math.exp(-bmat[i, j] * dt)
                v += S[i, j]
            lam[i] = max(v, 0.0)
            total += lam[i]
        t = t_c
        u = rng.random() * bound
        if u >= total:
            continue
        src = d - 1
        acc = 0.0
        for i in range(d):
            acc += lam[i]
            if u < acc:
                src = i
                break
        if n >= times.shape[0]:
            times = _grow(times, n)
            comps = _grow(comps, n)
            marks = _grow(marks, n)
        times[n] = t
        comps[n] = src
        marks[n] = rng.exponential(1.0 / psi) if marked else 0.0
        n += 1
    return times[:n], comps[:n], marks[:n]
