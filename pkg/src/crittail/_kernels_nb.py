"""Numba-compiled sampling kernels (default backend when available).

Same level-order algorithms and random-stream consumption as
``_kernels_np`` — the per-level variates are drawn as whole arrays from
the passed Generator in the identical fixed order — but the per-lane
arithmetic runs in fused nopython loops and lane compaction happens
in place.  For a given (seed, chunk, config) the two backends therefore
agree except for last-ulp differences in exp/log/pow, which libm and
numpy's vectorised routines round differently.

See ``_kernels_np`` for the draw-order contract and the parameter
conventions; signatures here match it one for one.
"""

from __future__ import annotations

import numba as nb
import numpy as np

_JIT = dict(cache=True, nogil=True)


@nb.njit(inline="always")
def _noise_mag_scalar(u, mode, inv_a, log_xlow, log_sb, logv, logt, const):
    if mode == 2:
        return const
    q = np.log(u)
    if mode == 0 or q >= log_sb:
        return np.exp(log_xlow - q * inv_a)
    # binary search: first index with logv[i] > q (searchsorted side="right")
    lo = 0
    hi = logv.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        if logv[mid] <= q:
            lo = mid + 1
        else:
            hi = mid
    i = lo - 1
    if i < 0:
        return np.exp(logt[0] + (logv[0] - q) * inv_a)
    return np.exp(
        logt[i] + (logt[i + 1] - logt[i]) * (q - logv[i]) / (logv[i + 1] - logv[i])
    )


@nb.njit(**_JIT)
def sample_chunk(
    g,
    m,
    kind,
    ckind,
    cp0,
    cp1,
    cp2,
    flip,
    clip_neg,
    q_left,
    rside,
    lside,
    eps,
    max_depth,
):
    if kind == 0:
        vals = np.zeros(m)
    else:
        vals = np.full(m, -np.inf)
    idx = np.arange(m)
    prod = np.ones(m)
    flagged = 0
    depth_sum = 0
    depth_max = 0
    level = 0
    while idx.shape[0] > 0:
        ma = idx.shape[0]
        if level > 0:
            if ckind == 0:
                zs = g.standard_normal(ma)
            else:
                zs = g.random(ma)
            if flip > 0.0:
                fu = g.random(ma)
            else:
                fu = zs  # unused
            if q_left > 0.0:
                su = g.random(ma)
            else:
                su = zs  # unused
            uu = g.random(ma)
            for j in range(ma):
                if ckind == 0:
                    a = np.exp(cp0 + cp1 * zs[j])
                elif ckind == 1:
                    a = cp0 if zs[j] < cp2 else cp1
                else:
                    a = cp0
                if flip > 0.0 and fu[j] < flip:
                    a = -a
                if clip_neg and a < 0.0:
                    a = 0.0
                prod[j] = prod[j] * a
                if q_left > 0.0 and su[j] < q_left:
                    b = -_noise_mag_scalar(
                        uu[j], lside[0], lside[1], lside[2], lside[3],
                        lside[4], lside[5], lside[6],
                    )
                else:
                    b = _noise_mag_scalar(
                        uu[j], rside[0], rside[1], rside[2], rside[3],
                        rside[4], rside[5], rside[6],
                    )
                k = idx[j]
                if kind == 0:
                    vals[k] = vals[k] + prod[j] * b
                else:
                    c = prod[j] * b
                    if c > vals[k]:
                        vals[k] = c
        else:
            if q_left > 0.0:
                su = g.random(ma)
            else:
                su = np.empty(0)
            uu = g.random(ma)
            for j in range(ma):
                if q_left > 0.0 and su[j] < q_left:
                    b = -_noise_mag_scalar(
                        uu[j], lside[0], lside[1], lside[2], lside[3],
                        lside[4], lside[5], lside[6],
                    )
                else:
                    b = _noise_mag_scalar(
                        uu[j], rside[0], rside[1], rside[2], rside[3],
                        rside[4], rside[5], rside[6],
                    )
                k = idx[j]
                if kind == 0:
                    vals[k] = vals[k] + b
                else:
                    if b > vals[k]:
                        vals[k] = b
        level += 1
        depth_max = level
        if level >= max_depth:
            n_alive = 0
            for j in range(ma):
                k = idx[j]
                if kind == 0:
                    if abs(prod[j]) > eps * max(1.0, abs(vals[k])):
                        n_alive += 1
                else:
                    if prod[j] > eps * max(1.0, vals[k]):
                        n_alive += 1
            flagged += n_alive
            depth_sum += level * ma
            break
        # compact the active set in place
        w = 0
        for j in range(ma):
            k = idx[j]
            if kind == 0:
                alive = abs(prod[j]) > eps * max(1.0, abs(vals[k]))
            else:
                alive = prod[j] > eps * max(1.0, vals[k])
            if alive:
                idx[w] = k
                prod[w] = prod[j]
                w += 1
        depth_sum += level * (ma - w)
        idx = idx[:w]
        prod = prod[:w]
    return vals, flagged, depth_max, depth_sum


@nb.njit(**_JIT)
def ladder_chunk(g, m, ckind, cp0, cp1, cp2, flip, q_left, rside, lside, max_iter):
    n_out = np.ones(m, dtype=np.int64)
    pi_out = np.zeros(m)
    r_out = np.zeros(m)
    a1 = np.zeros(m)
    b1 = np.zeros(m)
    log_pi = np.zeros(m)
    pi_plus = np.ones(m)
    ssum = np.zeros(m)
    idx = np.empty(m, dtype=np.int64)
    # level 1: full width
    if ckind == 0:
        zs = g.standard_normal(m)
    else:
        zs = g.random(m)
    fu = g.random(m)
    if q_left > 0.0:
        su = g.random(m)
    else:
        su = zs
    uu = g.random(m)
    w = 0
    for j in range(m):
        if ckind == 0:
            la = cp0 + cp1 * zs[j]
            a = np.exp(la)
        else:
            a = cp0 if zs[j] < cp2 else cp1
            la = np.log(a)
        if fu[j] < flip:
            a = -a
        if q_left > 0.0 and su[j] < q_left:
            b = -_noise_mag_scalar(
                uu[j], lside[0], lside[1], lside[2], lside[3],
                lside[4], lside[5], lside[6],
            )
        else:
            b = _noise_mag_scalar(
                uu[j], rside[0], rside[1], rside[2], rside[3],
                rside[4], rside[5], rside[6],
            )
        r_out[j] = b
        if a >= 0.0:
            pi_out[j] = a
        else:
            idx[w] = j
            a1[w] = a
            b1[w] = b
            log_pi[w] = la
            pi_plus[w] = 1.0
            ssum[w] = 0.0
            w += 1
    n_act = w
    level = 1
    while n_act > 0:
        level += 1
        if level > max_iter:
            raise RuntimeError("ladder epoch not reached within max_iter")
        if ckind == 0:
            zs = g.standard_normal(n_act)
        else:
            zs = g.random(n_act)
        fu = g.random(n_act)
        if q_left > 0.0:
            su = g.random(n_act)
        else:
            su = zs
        uu = g.random(n_act)
        w = 0
        for j in range(n_act):
            if ckind == 0:
                la = cp0 + cp1 * zs[j]
                a = np.exp(la)
            else:
                a = cp0 if zs[j] < cp2 else cp1
                la = np.log(a)
            if fu[j] < flip:
                a = -a
            if q_left > 0.0 and su[j] < q_left:
                b = -_noise_mag_scalar(
                    uu[j], lside[0], lside[1], lside[2], lside[3],
                    lside[4], lside[5], lside[6],
                )
            else:
                b = _noise_mag_scalar(
                    uu[j], rside[0], rside[1], rside[2], rside[3],
                    rside[4], rside[5], rside[6],
                )
            ssum[j] = ssum[j] + pi_plus[j] * b
            log_pi[j] = log_pi[j] + la
            if a <= 0.0:
                k = idx[j]
                n_out[k] = level
                pi_out[k] = np.exp(log_pi[j])
                r_out[k] = b1[j] + a1[j] * ssum[j]
            else:
                idx[w] = idx[j]
                a1[w] = a1[j]
                b1[w] = b1[j]
                log_pi[w] = log_pi[j]
                pi_plus[w] = pi_plus[j] * a
                ssum[w] = ssum[j]
                w += 1
        n_act = w
    return n_out, pi_out, r_out


@nb.njit(**_JIT)
def renewal_chunk(g, m, skind, sp0, sp1, az, acw, x_min, inv_h, n_cells, stop, max_iter):
    counts = np.zeros(n_cells + 1, dtype=np.int64)
    exits = np.zeros(m)
    s = np.zeros(m)
    idx = np.arange(m)
    c0 = int(np.ceil((0.0 - x_min) * inv_h))
    if c0 < 0:
        c0 = 0
    if c0 <= n_cells:
        counts[c0] += m
    n_act = m
    stuck = 0
    for _ in range(max_iter):
        if n_act == 0:
            break
        if skind == 0:
            zs = g.standard_normal(n_act)
        elif skind == 1:
            zs = g.standard_exponential(n_act)
        else:
            zs = g.random(n_act)
        w = 0
        for j in range(n_act):
            if skind == 0:
                z = sp0 + sp1 * zs[j]
            elif skind == 1:
                z = zs[j] / sp0
            else:
                # searchsorted side="right" over cumulative weights
                lo = 0
                hi = acw.shape[0]
                u = zs[j]
                while lo < hi:
                    mid = (lo + hi) // 2
                    if acw[mid] <= u:
                        lo = mid + 1
                    else:
                        hi = mid
                if lo >= az.shape[0]:
                    lo = az.shape[0] - 1
                z = az[lo]
            sj = s[j] + z
            if sj > stop:
                exits[idx[j]] = sj
            else:
                c = int(np.ceil((sj - x_min) * inv_h))
                if c < 0:
                    c = 0
                if c <= n_cells:
                    counts[c] += 1
                idx[w] = idx[j]
                s[w] = sj
                w += 1
        n_act = w
    if n_act > 0:
        stuck = n_act
    return counts, exits, stuck
