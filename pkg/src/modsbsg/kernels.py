"""Hot numeric kernels.

Every kernel exists twice: a loop form compiled with numba and a vectorized
numpy form used when numba is disabled (see ``_accel``). The public names at
the bottom of the module are bound to one of the two at import time.
The plant integrator is inherently sequential, so its fallback is the same
loop run by the interpreter.
"""
import math

import numpy as np

from ._accel import HAS_NUMBA, njit

CONTINUOUS, DURATION, BINARY = 0, 1, 2


# --------------------------------------------------------------------------
# inverse-distance interpolation over visited support cells


def _idw_loop(coords, values, query, gamma):
    n, m = coords.shape
    num = 0.0
    den = 0.0
    for i in range(n):
        d2 = 0.0
        for j in range(m):
            diff = coords[i, j] - query[j]
            d2 += diff * diff
        w = 1.0 / (d2 + gamma)
        num += w * values[i]
        den += w
    return num / den


def _idw_vec(coords, values, query, gamma):
    diff = coords - query
    w = 1.0 / (np.einsum("ij,ij->i", diff, diff) + gamma)
    return float(w @ values / w.sum())


def idw_weights(coords, query, gamma):
    """Normalized weights ``w_q / sum(w)`` with ``w_q = 1 / (d_q^2 + gamma)``."""
    diff = np.asarray(coords, dtype=float) - np.asarray(query, dtype=float)
    w = 1.0 / (np.einsum("ij,ij->i", diff, diff) + gamma)
    return w / w.sum()


# --------------------------------------------------------------------------
# bivariate polynomial value and partial derivatives


def _pw(x, k):
    if k < 0:
        return 0.0
    if k == 0:
        return 1.0
    return x ** k


def _poly_loop(beta, e1, e2, x1, x2):
    v = 0.0
    d1 = 0.0
    d2 = 0.0
    d11 = 0.0
    d22 = 0.0
    d12 = 0.0
    for k in range(beta.shape[0]):
        b = beta[k]
        i = e1[k]
        j = e2[k]
        p1 = _pw(x1, i)
        p2 = _pw(x2, j)
        v += b * p1 * p2
        if i > 0:
            q1 = i * _pw(x1, i - 1)
            d1 += b * q1 * p2
            if i > 1:
                d11 += b * i * (i - 1) * _pw(x1, i - 2) * p2
            if j > 0:
                d12 += b * q1 * j * _pw(x2, j - 1)
        if j > 0:
            d2 += b * p1 * j * _pw(x2, j - 1)
            if j > 1:
                d22 += b * p1 * j * (j - 1) * _pw(x2, j - 2)
    return v, d1, d2, d11, d22, d12


def _powv(x, k):
    out = np.zeros(k.shape[0])
    ok = k >= 0
    out[ok] = np.power(x, k[ok].astype(float))
    return out


def _poly_vec(beta, e1, e2, x1, x2):
    p1 = _powv(x1, e1)
    p2 = _powv(x2, e2)
    q1 = e1 * _powv(x1, e1 - 1)
    q2 = e2 * _powv(x2, e2 - 1)
    r1 = e1 * (e1 - 1) * _powv(x1, e1 - 2)
    r2 = e2 * (e2 - 1) * _powv(x2, e2 - 2)
    return (
        float(beta @ (p1 * p2)),
        float(beta @ (q1 * p2)),
        float(beta @ (p1 * q2)),
        float(beta @ (r1 * p2)),
        float(beta @ (p1 * r2)),
        float(beta @ (q1 * q2)),
    )


# --------------------------------------------------------------------------
# least squares through the SVD of the monomial design matrix


def _ols_loop(x1, x2, Y, e1, e2):
    """Returns ``(beta (ncoef, ntargets), condition number, rank)``."""
    n = x1.shape[0]
    k = e1.shape[0]
    X = np.empty((n, k))
    for r in range(n):
        for c in range(k):
            X[r, c] = _pw(x1[r], e1[c]) * _pw(x2[r], e2[c])
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    tol = s[0] * max(n, k) * 2.220446049250313e-16
    rank = 0
    for v in s:
        if v > tol:
            rank += 1
    cond = s[0] / s[k - 1] if s[k - 1] > 0.0 else np.inf
    UtY = U.T @ Y
    beta = np.zeros((k, Y.shape[1]))
    for j in range(rank):
        for t in range(Y.shape[1]):
            c = UtY[j, t] / s[j]
            for i in range(k):
                beta[i, t] += Vt[j, i] * c
    return beta, cond, rank


def _ols_vec(x1, x2, Y, e1, e2):
    X = x1[:, None] ** e1 * x2[:, None] ** e2
    beta, _, rank, s = np.linalg.lstsq(X, Y, rcond=None)
    cond = s[0] / s[-1] if s[-1] > 0 else np.inf
    return beta, cond, rank


# --------------------------------------------------------------------------
# repeated projected gradient ascent on a fitted surrogate (multi-step follower)


def _ascent_loop(beta, e1, e2, x_other, a0, own, alpha, n_steps, threshold, max_steps):
    # own == 1: action is the first regressor, else the second.
    # threshold < 0 selects a fixed count of n_steps; otherwise repeat while
    # |grad| >= threshold, at least once and at most max_steps times.
    a = a0
    steps = 0
    g = 0.0
    limit = n_steps if threshold < 0.0 else max_steps
    while True:
        if own == 1:
            r = _poly_loop(beta, e1, e2, a, x_other)
            g = r[1]
        else:
            r = _poly_loop(beta, e1, e2, x_other, a)
            g = r[2]
        a = a + alpha * g
        if a < 0.0:
            a = 0.0
        elif a > 1.0:
            a = 1.0
        steps += 1
        if steps >= limit:
            break
        if threshold >= 0.0:
            if own == 1:
                gn = _poly_loop(beta, e1, e2, a, x_other)[1]
            else:
                gn = _poly_loop(beta, e1, e2, x_other, a)[2]
            if abs(gn) < threshold:
                g = gn
                break
    return a, steps, g


def _ascent_vec(beta, e1, e2, x_other, a0, own, alpha, n_steps, threshold, max_steps):
    # Only the own-action derivative is needed: collapse the polynomial to a
    # univariate one in the action, then iterate on that.
    if own == 1:
        ea, coef = e1, beta * _powv(x_other, e2)
    else:
        ea, coef = e2, beta * _powv(x_other, e1)
    deg = int(ea.max()) if ea.size else 0
    c = np.zeros(deg + 1)
    np.add.at(c, ea, coef)
    dpoly = np.polynomial.polynomial.polyder(c) if deg > 0 else np.zeros(1)
    grad = lambda x: float(np.polynomial.polynomial.polyval(x, dpoly))
    a = a0
    steps = 0
    g = 0.0
    limit = n_steps if threshold < 0.0 else max_steps
    while True:
        g = grad(a)
        a = min(max(a + alpha * g, 0.0), 1.0)
        steps += 1
        if steps >= limit:
            break
        if threshold >= 0.0:
            gn = grad(a)
            if abs(gn) < threshold:
                g = gn
                break
    return a, steps, g


# --------------------------------------------------------------------------
# per-player evaluation (fill-level term, power term)


def _utilities_loop(frac, prior_ptr, prior_idx, next_ptr, next_idx,
                    mu_p, mu_s, sig_p, sig_s, rho, theta_f, w_v, w_p, power, out):
    n = out.shape[0]
    for i in range(n):
        vp = 0.0
        for k in range(prior_ptr[i], prior_ptr[i + 1]):
            vp += frac[prior_idx[k]]
        vp /= prior_ptr[i + 1] - prior_ptr[i]
        vs = 0.0
        for k in range(next_ptr[i], next_ptr[i + 1]):
            vs += frac[next_idx[k]]
        vs /= next_ptr[i + 1] - next_ptr[i]
        zp = (vp - mu_p[i]) / sig_p[i]
        zs = (vs - mu_s[i]) / sig_s[i]
        r = rho[i]
        q = (zp * zp - 2.0 * r * zp * zs + zs * zs) / (2.0 * (1.0 - r * r))
        dens = math.exp(-q) / (2.0 * math.pi * sig_p[i] * sig_s[i] * math.sqrt(1.0 - r * r))
        ev = dens if dens <= theta_f[i] else theta_f[i]
        ep = 1.0 / (1.0 + power[i])
        out[i] = w_v[i] * ev + w_p[i] * ep
    return out


def _segment_mean(frac, ptr, idx):
    # works on a single state or a batch of states along the last axis
    sums = np.add.reduceat(frac[..., idx], ptr[:-1], axis=-1)
    return sums / np.diff(ptr)


def _utilities_vec(frac, prior_ptr, prior_idx, next_ptr, next_idx,
                   mu_p, mu_s, sig_p, sig_s, rho, theta_f, w_v, w_p, power, out):
    vp = _segment_mean(frac, prior_ptr, prior_idx)
    vs = _segment_mean(frac, next_ptr, next_idx)
    zp = (vp - mu_p) / sig_p
    zs = (vs - mu_s) / sig_s
    q = (zp * zp - 2.0 * rho * zp * zs + zs * zs) / (2.0 * (1.0 - rho * rho))
    dens = np.exp(-q) / (2.0 * np.pi * sig_p * sig_s * np.sqrt(1.0 - rho * rho))
    ev = np.where(dens <= theta_f, dens, theta_f)
    out[:] = w_v * ev + w_p / (1.0 + power)
    return out


# --------------------------------------------------------------------------
# plant integration over one decision cycle


def _actuator_power(kind, par, a, cycle_dt):
    if kind == CONTINUOUS:
        if a <= 0.0 or a < par[0]:
            return 0.0
        u = (a - par[0]) / (1.0 - par[0])
        return par[3] + par[4] * u + par[5] * u * u
    if kind == DURATION:
        d = a * par[0]
        if d > cycle_dt:
            d = cycle_dt
        return par[2] * d / cycle_dt
    if a >= 0.5:
        return par[1]
    return 0.0


def actuator_power_batch(kind, par, actions, cycle_dt):
    """Vectorized ``_actuator_power`` over a batch of joint actions ``(N, n_players)``."""
    A = np.asarray(actions, dtype=float)
    out = np.zeros_like(A)
    for i in range(A.shape[1]):
        a, p = A[:, i], par[i]
        if kind[i] == CONTINUOUS:
            u = (a - p[0]) / (1.0 - p[0])
            on = (a > 0.0) & (a >= p[0])
            out[:, i] = np.where(on, p[3] + p[4] * u + p[5] * u * u, 0.0)
        elif kind[i] == DURATION:
            out[:, i] = p[2] * np.minimum(a * p[0], cycle_dt) / cycle_dt
        else:
            out[:, i] = np.where(a >= 0.5, p[1], 0.0)
    return out


def _actuator_volume(kind, par, a, t0, dt):
    if kind == CONTINUOUS:
        if a <= 0.0 or a < par[0]:
            return 0.0
        u = (a - par[0]) / (1.0 - par[0])
        return par[1] * u ** par[2] * dt
    if kind == DURATION:
        d = a * par[0]
        on = min(d, t0 + dt) - t0
        if on <= 0.0:
            return 0.0
        return par[1] * on
    if a >= 0.5:
        return par[0] * dt
    return 0.0


def _plant_cycle(fills, caps, overflow_acc, kind, par, src_ptr, src_idx, snk_ptr, snk_idx,
                 actions, supply_res, supply_level, demand_res, demand_rate,
                 cycle_dt, dt_sim, moved_out, power_out):
    """Advance one cycle in place; returns (injected, delivered, overflow, deficit)."""
    n_act = actions.shape[0]
    injected = 0.0
    delivered = 0.0
    spilled = 0.0
    deficit = 0.0
    for i in range(n_act):
        moved_out[i] = 0.0
        power_out[i] = _actuator_power(kind[i], par[i], actions[i], cycle_dt)
    n_sub = int(round(cycle_dt / dt_sim))
    for s in range(n_sub):
        t0 = s * dt_sim
        for i in range(n_act):
            vol = _actuator_volume(kind[i], par[i], actions[i], t0, dt_sim)
            if vol <= 0.0:
                continue
            ns = src_ptr[i + 1] - src_ptr[i]
            share = vol / ns
            taken = 0.0
            for k in range(src_ptr[i], src_ptr[i + 1]):
                r = src_idx[k]
                t = share if share < fills[r] else fills[r]
                fills[r] -= t
                taken += t
            if taken <= 0.0:
                continue
            moved_out[i] += taken
            nk = snk_ptr[i + 1] - snk_ptr[i]
            part = taken / nk
            for k in range(snk_ptr[i], snk_ptr[i + 1]):
                r = snk_idx[k]
                room = caps[r] - fills[r]
                put = part if part < room else room
                if put < 0.0:
                    put = 0.0
                new = fills[r] + put
                spill = part - put
                if new > caps[r]:
                    spill += new - caps[r]
                    new = caps[r]
                fills[r] = new
                if spill > 0.0:
                    overflow_acc[r] += spill
                    spilled += spill
        if demand_res >= 0:
            want = demand_rate * dt_sim
            got = want if want < fills[demand_res] else fills[demand_res]
            fills[demand_res] -= got
            delivered += got
            deficit += want - got
        if supply_res >= 0:
            if fills[supply_res] < supply_level:
                injected += supply_level - fills[supply_res]
                fills[supply_res] = supply_level
    return injected, delivered, spilled, deficit


if HAS_NUMBA:
    _pw = njit(cache=True)(_pw)
    _poly_loop = njit(cache=True)(_poly_loop)
    _actuator_power = njit(cache=True)(_actuator_power)
    _actuator_volume = njit(cache=True)(_actuator_volume)
    idw_interpolate = njit(cache=True)(_idw_loop)
    poly_eval = _poly_loop
    ols_fit = njit(cache=True)(_ols_loop)
    poly_ascent = njit(cache=True)(_ascent_loop)
    player_utilities = njit(cache=True)(_utilities_loop)
    plant_cycle = njit(cache=True)(_plant_cycle)
else:
    idw_interpolate = _idw_vec
    poly_eval = _poly_vec
    ols_fit = _ols_vec
    poly_ascent = _ascent_vec
    player_utilities = _utilities_vec
    plant_cycle = _plant_cycle

