"""Pure-numpy sampling kernels (fallback backend).

All kernels advance a chunk of paths level-by-level ("level order"): at
each level the per-path random variates are drawn as whole arrays for
the currently active lanes, in a fixed order, so the stream consumption
is a deterministic function of (seed, chunk index, kernel config) and
independent of how chunks are distributed over workers.

Draw order per level of the recursion kernels (sizes = active lanes):

1. coefficient magnitude  — ``standard_normal`` (lognormal family) or
   ``random`` (two-point); constant coefficients consume nothing;
2. coefficient sign       — ``random``, only when ``flip > 0``;
3. noise sign             — ``random``, only when ``q_left > 0``;
4. noise magnitude        — ``random``, always consumed (even for the
   degenerate point-mass noise, to keep the pattern uniform).

Level 0 of the backward recursion draws only the noise (the leading
coefficient product is 1); every later level draws all enabled groups.
The numba backend consumes streams in exactly the same order; its
outputs agree with this module to the last-ulp tolerance of the
transcendental functions involved (see the backend notes in README).

Coefficient parameter conventions: ``ckind`` 0 = lognormal with
``(cp0, cp1) = (mu, sigma)``; 1 = two-point with ``(cp0, cp1, cp2) =
(a1, a2, p)`` (linear magnitudes); 2 = constant with ``cp0 = a``.
Noise sides are described by ``mode`` 0 (pure power: closed-form
quantile), 1 (catalog tail: log-log interpolation table with power
bridge above ``s_b`` and power extrapolation below the deepest node),
2 (degenerate point mass in ``const``).
"""

from __future__ import annotations

import numpy as np


def _noise_mag(u, mode, inv_a, log_xlow, log_sb, logv, logt, const):
    """Map uniforms to noise magnitudes via the side's quantile."""
    if mode == 2:
        return np.full(u.shape, const)
    q = np.log(u)
    if mode == 0:
        return np.exp(log_xlow - q * inv_a)
    out = np.empty_like(q)
    bridge = q >= log_sb
    out[bridge] = log_xlow - q[bridge] * inv_a
    tq = q[~bridge]
    if tq.size:
        i = np.searchsorted(logv, tq, side="right") - 1
        deep = i < 0
        i = np.clip(i, 0, len(logv) - 2)
        lo_v, hi_v = logv[i], logv[i + 1]
        lo_t, hi_t = logt[i], logt[i + 1]
        interp = lo_t + (hi_t - lo_t) * (tq - lo_v) / (hi_v - lo_v)
        extrap = logt[0] + (logv[0] - tq) * inv_a
        out[~bridge] = np.where(deep, extrap, interp)
    return np.exp(out)


def _draw_coeff(g, ma, ckind, cp0, cp1, cp2):
    """Coefficient magnitudes for one level (draw group 1)."""
    if ckind == 0:
        return np.exp(cp0 + cp1 * g.standard_normal(ma))
    if ckind == 1:
        return np.where(g.random(ma) < cp2, cp0, cp1)
    return np.full(ma, cp0)


def _draw_coeff_logged(g, ma, ckind, cp0, cp1, cp2):
    """Coefficient magnitudes plus their logs (same draws as above)."""
    if ckind == 0:
        la = cp0 + cp1 * g.standard_normal(ma)
        return np.exp(la), la
    a = _draw_coeff(g, ma, ckind, cp0, cp1, cp2)
    return a, np.log(a)


def _draw_noise(g, ma, q_left, rside, lside):
    """Noise values for one level (draw groups 3 and 4)."""
    if q_left > 0.0:
        neg = g.random(ma) < q_left
    else:
        neg = None
    u = g.random(ma)
    b = _noise_mag(u, *rside)
    if neg is not None:
        b_left = _noise_mag(u, *lside)
        b = np.where(neg, -b_left, b)
    return b


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
    """One chunk of backward-recursion samples.

    kind 0 = affine (sum of products), 1 = extremal (max of products).
    Lanes retire when the running product is below ``eps`` times the
    larger of 1 and the accumulated scale; lanes still live at
    ``max_depth`` are flagged.  Returns (values, flagged, depth_max,
    depth_sum).
    """
    vals = np.zeros(m) if kind == 0 else np.full(m, -np.inf)
    idx = np.arange(m)
    prod = np.ones(m)
    flagged = 0
    depth_sum = 0
    depth_max = 0
    level = 0
    while idx.size:
        ma = idx.size
        if level > 0:
            a = _draw_coeff(g, ma, ckind, cp0, cp1, cp2)
            if flip > 0.0:
                a = np.where(g.random(ma) < flip, -a, a)
            if clip_neg:
                a = np.maximum(a, 0.0)
            prod = prod * a
        b = _draw_noise(g, ma, q_left, rside, lside)
        contrib = prod * b
        if kind == 0:
            vals[idx] = vals[idx] + contrib
            scale = np.maximum(1.0, np.abs(vals[idx]))
            alive = np.abs(prod) > eps * scale
        else:
            vals[idx] = np.maximum(vals[idx], contrib)
            scale = np.maximum(1.0, vals[idx])
            alive = prod > eps * scale
        level += 1
        depth_max = level
        if level >= max_depth:
            flagged += int(alive.sum())
            depth_sum += level * ma
            break
        n_dead = ma - int(alive.sum())
        depth_sum += level * n_dead
        idx = idx[alive]
        prod = prod[alive]
    return vals, flagged, depth_max, depth_sum


def ladder_chunk(g, m, ckind, cp0, cp1, cp2, flip, q_left, rside, lside, max_iter):
    """One chunk of sign-ladder draws for a sign-flipped coefficient.

    The ladder epoch is the first n with A_1 ... A_n >= 0: immediately
    (n = 1) when the first coefficient is nonnegative, otherwise the
    first later n whose coefficient is <= 0.  The stopped value
    R* = B_1 + A_1 * (B_2 + A_2^+ B_3 + ...) is assembled from the same
    draws that decide the epoch, so the triple (N, product at N, R*) is
    exact — the inner series terminates at the epoch by construction.

    Draw order per level matches the recursion kernels (all four groups
    from level 1 on; there is no level 0 here).
    """
    n_out = np.ones(m, dtype=np.int64)
    pi_out = np.zeros(m)
    r_out = np.zeros(m)
    # level 1: full width
    a, la = _draw_coeff_logged(g, m, ckind, cp0, cp1, cp2)
    neg1 = g.random(m) < flip
    a = np.where(neg1, -a, a)
    b = _draw_noise(g, m, q_left, rside, lside)
    r_out[:] = b
    done = a >= 0.0
    pi_out[done] = a[done]
    idx = np.nonzero(~done)[0]
    a1 = a[idx]
    b1 = b[idx]
    log_pi = la[idx]
    pi_plus = np.ones(idx.size)
    ssum = np.zeros(idx.size)
    level = 1
    while idx.size:
        level += 1
        if level > max_iter:
            raise RuntimeError("ladder epoch not reached within max_iter")
        ma = idx.size
        a, la = _draw_coeff_logged(g, ma, ckind, cp0, cp1, cp2)
        a = np.where(g.random(ma) < flip, -a, a)
        b = _draw_noise(g, ma, q_left, rside, lside)
        ssum = ssum + pi_plus * b
        log_pi = log_pi + la
        closing = a <= 0.0
        fin = idx[closing]
        n_out[fin] = level
        pi_out[fin] = np.exp(log_pi[closing])
        r_out[fin] = b1[closing] + a1[closing] * ssum[closing]
        keep = ~closing
        idx = idx[keep]
        a1 = a1[keep]
        b1 = b1[keep]
        log_pi = log_pi[keep]
        ssum = ssum[keep]
        pi_plus = pi_plus[keep] * a[keep]
    return n_out, pi_out, r_out


def renewal_chunk(g, m, skind, sp0, sp1, az, acw, x_min, inv_h, n_cells, stop, max_iter):
    """Occupancy counts and first-exit values for one chunk of walks.

    Each walk starts at 0 and runs until it first exceeds ``stop``.
    Every position s visited on the way (including the start) is binned
    to the grid node ``ceil((s - x_min) / h)`` clamped below at node 0,
    so cumulative cell counts give node-exact values of
    H(x) = E #{n >= 0 : S_n <= x}.  Positions above the last node fall
    outside the grid and are not recorded.

    skind 0 = Gaussian (sp0, sp1) = (mean, sd); 1 = exponential with
    sp0 = rate; 2 = atoms ``az`` with cumulative weights ``acw``.
    Returns (counts, exits, n_stuck).
    """
    counts = np.zeros(n_cells + 1, dtype=np.int64)
    exits = np.zeros(m)
    s = np.zeros(m)
    idx = np.arange(m)
    # the start S_0 = 0 is a visit
    c0 = int(np.ceil((0.0 - x_min) * inv_h))
    if 0 <= c0 <= n_cells:
        counts[max(c0, 0)] += m
    elif c0 < 0:
        counts[0] += m
    stuck = 0
    for _ in range(max_iter):
        if not idx.size:
            break
        ma = idx.size
        if skind == 0:
            z = sp0 + sp1 * g.standard_normal(ma)
        elif skind == 1:
            z = g.standard_exponential(ma) / sp0
        else:
            j = np.searchsorted(acw, g.random(ma), side="right")
            z = az[np.minimum(j, len(az) - 1)]
        s = s + z
        out = s > stop
        exits[idx[out]] = s[out]
        idx = idx[~out]
        s = s[~out]
        if idx.size:
            cells = np.ceil((s - x_min) * inv_h).astype(np.int64)
            cells = np.maximum(cells, 0)
            cells = cells[cells <= n_cells]
            counts += np.bincount(cells, minlength=n_cells + 1)
    else:
        stuck = int(idx.size)
    return counts, exits, stuck
