"""Tail estimation and verification of the de Haan-normalised asymptotics.

Estimates P(R > x) from sample batches with binomial confidence
intervals, then compares against the limit theory for the critical
regime: first-order ratios rho x^alpha P(R>x) / Ltilde(x) (doubled
normalization for sign-flipped coefficients, where Ltilde is built from
the two-sided tail t^alpha P(|B| > t)), second-order residuals with a
slope diagnostic, the smoothed-functional sandwich, and the
three-regime comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import models, simulate
from .renewal import SmoothStepFn

Z95 = 1.959963984540054

LOW_COUNT = 20  # exceedance count below which levels are flagged


def wilson_interval(k: int, n: int, z: float = Z95):
    """Two-sided Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("need n > 0")
    if not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n")
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    # center -+ half hits the boundary exactly at k = 0 / k = n; snap it
    # so cancellation dust cannot leak into the endpoints
    lo = 0.0 if k == 0 else max(center - half, 0.0)
    hi = 1.0 if k == n else min(center + half, 1.0)
    return lo, hi


@dataclass(frozen=True)
class TailEstimate:
    """One exceedance level: k of n samples above x, with a 95% interval."""

    x: float
    n: int
    k: int
    ci_lo: float
    ci_hi: float

    @property
    def p_hat(self) -> float:
        return self.k / self.n

    @property
    def low_confidence(self) -> bool:
        return self.k < LOW_COUNT


def empirical_tail(batch: simulate.SampleBatch, x_grid=None, side: str = "right"):
    """Binomial tail estimates from a batch's exceedance counts.

    Refuses batches whose depth-cap flag fraction exceeds the bias
    threshold.  Zero-exceedance levels get the rule-of-three upper
    bound 3/n instead of the Wilson interval.
    """
    batch.require_unbiased()
    counts = batch.counts_hi if side == "right" else batch.counts_lo
    if x_grid is None:
        idx = range(len(batch.x_grid))
    else:
        idx = []
        for v in np.atleast_1d(x_grid):
            j = int(np.argmin(np.abs(batch.x_grid - v)))
            if not math.isclose(batch.x_grid[j], v, rel_tol=1e-9, abs_tol=1e-12):
                raise ValueError(f"{v} is not a level of this batch")
            idx.append(j)
    out = []
    for j in idx:
        k, n = int(counts[j]), batch.n
        if k == 0:
            lo, hi = 0.0, 3.0 / n
        else:
            lo, hi = wilson_interval(k, n)
        out.append(TailEstimate(float(batch.x_grid[j]), n, k, lo, hi))
    return out


@dataclass
class AsymptoticReport:
    """Per-level comparison rows against one asymptotic limit."""

    kind: str
    normalization: str
    rows: list = field(default_factory=list)
    band: object = None
    passed: object = None
    summary: dict = field(default_factory=dict)

    def to_columns(self):
        """(x, p_hat, ci_lo, ci_hi, ratio, residual) per row for export."""
        cols = []
        for r in self.rows:
            cols.append(
                (
                    r["x"],
                    r["p_hat"],
                    r["ci_lo"],
                    r["ci_hi"],
                    r.get("ratio"),
                    r.get("residual"),
                )
            )
        return cols


def _limit_scale(model: models.PerpetuityModel):
    """(normalization constant, its label, de Haan transform used)."""
    if model.rho is None:
        raise ValueError("model is not critical; no de Haan normalization exists")
    if model.signed:
        return 2.0 * model.rho, "2rho", model.noise.de_haan_abs
    return model.rho, "rho", model.noise.de_haan


def first_order_ratio(
    model: models.PerpetuityModel, estimates, band=(0.75, 1.25)
) -> AsymptoticReport:
    """Ratios norm * x^alpha * p_hat / Ltilde(x) against 1.

    ``norm`` is rho for nonnegative coefficients (affine and extremal
    limits share it) and 2 rho for sign-flipped ones, with Ltilde then
    taken from the two-sided tail of B.  Convergence is O(L/Ltilde)
    per level, reported so the band width can be judged.
    """
    if model.regime != "critical-heavy":
        raise ValueError(
            f"first-order de Haan limit needs the critical-heavy regime, "
            f"got {model.regime}"
        )
    norm, label, de_haan = _limit_scale(model)
    a = model.alpha
    rep = AsymptoticReport("first-order", label, band=tuple(band))
    ok = True
    used = 0
    for est in estimates:
        lt = de_haan(est.x)
        xa = est.x**a
        scale = norm * xa / lt
        row = {
            "x": est.x,
            "n": est.n,
            "k": est.k,
            "p_hat": est.p_hat,
            "ci_lo": est.ci_lo,
            "ci_hi": est.ci_hi,
            "ltilde": lt,
            "ratio": scale * est.p_hat,
            "ratio_ci": (scale * est.ci_lo, scale * est.ci_hi),
            "rate_caveat": model.noise.L(est.x) / lt if not model.signed
            else model.noise.L_abs(est.x) / lt,
            "low_confidence": est.low_confidence,
        }
        rep.rows.append(row)
        if not est.low_confidence:
            used += 1
            ok = ok and bool(band[0] <= row["ratio"] <= band[1])
    rep.passed = ok if used else None
    rep.summary = {"levels_used": used, "band": list(band)}
    return rep


def _slope_with_nested_se(xs, d, p, n, alpha):
    """OLS slope of d against log x with SE from the nested-binomial law.

    The exceedance events are nested across levels, so
    Cov(p_hat_j, p_hat_k) = p_max(1 - p_min)/n with p_max the smaller
    (higher-level) probability; the d-covariance scales by x^alpha on
    both sides.  The slope is the deterministic OLS functional a'd and
    its standard error sqrt(a' Sigma a).
    """
    lx = np.log(xs)
    lc = lx - lx.mean()
    a = lc / np.dot(lc, lc)
    m = len(xs)
    sig = np.empty((m, m))
    for j in range(m):
        for k in range(m):
            pj, pk = p[j], p[k]
            hi, lo = (pk, pj) if xs[k] >= xs[j] else (pj, pk)
            sig[j, k] = (xs[j] ** alpha) * (xs[k] ** alpha) * hi * (1 - lo) / n
    slope = float(np.dot(a, d))
    se = float(math.sqrt(max(np.dot(a, sig @ a), 0.0)))
    return slope, se


def coupled_constant(
    model: models.PerpetuityModel, r_samples, seed: int, n=None
) -> dict:
    """Monte Carlo estimate of E min{AR, B}_+^alpha / (alpha rho).

    Couples stationary draws R (from a batch's raw samples) with fresh
    independent (A, B) pairs, as required by the fixed-point equation's
    independence structure.  Returns the estimate with its standard
    error and a half-sample split for stability checks.
    """
    if model.rho is None:
        raise ValueError("coupled constant needs a critical model")
    r = np.asarray(r_samples)
    if n is not None:
        r = r[: int(n)]
    m = len(r)
    if m == 0:
        raise ValueError("no R samples supplied")
    g = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    a_draw = model.coeff.sample(g, m)
    pk = simulate.model_pack(model)
    from ._kernels_np import _draw_noise

    b_draw = _draw_noise(g, m, pk["q_left"], pk["rside"], pk["lside"])
    w = np.clip(np.minimum(a_draw * r, b_draw), 0.0, None) ** model.alpha
    scale = model.alpha * model.rho
    value = float(w.mean()) / scale
    se = float(w.std(ddof=1) / math.sqrt(m)) / scale
    h = m // 2
    return {
        "value": value,
        "se": se,
        "n": m,
        "halves": (float(w[:h].mean()) / scale, float(w[h:].mean()) / scale),
    }


def second_order_residual(
    model: models.PerpetuityModel, estimates, coupled=None
) -> AsymptoticReport:
    """Residuals d(x) = x^alpha p_hat - Ltilde(x)/rho with slope test.

    When L is constant the refinement says d(x) is bounded, so its
    slope against log x must be statistically indistinguishable from 0;
    levels with fewer than 20 exceedances are excluded from the
    regression.  Refuses coefficients without the strong non-lattice
    property (the refinement's smoothness hypothesis) and sign-flipped
    models (no refinement rate is available for them).
    """
    if not model.coeff.strongly_nonlattice:
        raise ValueError(
            "second-order refinement needs a strongly non-lattice coefficient; "
            f"{model.coeff.family} fails that audit"
        )
    if model.signed:
        raise ValueError("second-order refinement applies to nonnegative A only")
    if model.regime != "critical-heavy":
        raise ValueError(f"needs the critical-heavy regime, got {model.regime}")
    a, rho = model.alpha, model.rho
    rep = AsymptoticReport("second-order", "rho")
    for est in estimates:
        lt = model.noise.de_haan(est.x)
        xa = est.x**a
        d = xa * est.p_hat - lt / rho
        rep.rows.append(
            {
                "x": est.x,
                "n": est.n,
                "k": est.k,
                "p_hat": est.p_hat,
                "ci_lo": est.ci_lo,
                "ci_hi": est.ci_hi,
                "ltilde": lt,
                "residual": d,
                "residual_over_L": d / model.noise.L(est.x),
                "low_confidence": est.low_confidence,
            }
        )
    good = [r for r in rep.rows if not r["low_confidence"]]
    if len(good) >= 3:
        xs = np.array([r["x"] for r in good])
        dv = np.array([r["residual"] for r in good])
        pv = np.array([r["p_hat"] for r in good])
        slope, se = _slope_with_nested_se(xs, dv, pv, good[0]["n"], a)
        z = slope / se if se > 0 else math.inf
        rep.summary = {"slope": slope, "slope_se": se, "slope_z": z}
        rep.passed = abs(z) <= 2.0
    else:
        rep.summary = {"slope": None, "note": "fewer than 3 usable levels"}
        rep.passed = None
    if coupled is not None:
        rep.summary["coupled_constant"] = coupled
    return rep


def _smoothstep(r, a, eta):
    t = np.clip((r - a) / eta, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def holder_functional_estimate(
    model: models.PerpetuityModel,
    batch: simulate.SampleBatch,
    xi: float = 2.0,
    eta: float = 0.1,
    x_levels=None,
) -> dict:
    """Smoothed tail functionals sandwiching the indicator at level xi.

    For the C^1 flank pair g2 <= 1{r >= xi} <= g1, estimates
    x^alpha E g_i(R/x) / Ltilde(x) from raw samples and checks the
    pathwise sandwich against x^alpha P(R > xi x)/Ltilde(x).  Limits
    are (alpha/rho) int g_i r^{-alpha-1} dr, within 2 alpha eta / rho
    of the indicator's xi^{-alpha}/rho.
    """
    if batch.raw is None:
        raise ValueError("needs a batch with raw samples (keep_raw=True)")
    if xi - eta <= 1.0:
        raise ValueError("need xi - eta > 1 so supports stay in [1, infinity)")
    if model.rho is None:
        raise ValueError("needs a critical model")
    batch.require_unbiased()
    a, rho = model.alpha, model.rho
    g1 = SmoothStepFn(xi, eta, upper=True)
    g2 = SmoothStepFn(xi, eta, upper=False)
    t1 = g1.tail_integral(a) / rho
    t2 = g2.tail_integral(a) / rho
    target = xi ** (-a) / rho
    gap_bound = 2.0 * a * eta / rho
    raw = batch.raw
    levels = batch.x_grid if x_levels is None else np.atleast_1d(x_levels)
    rows = []
    ordered = True
    for x in levels:
        lt = model.noise.de_haan(float(x))
        scale = float(x) ** a / (lt * batch.n)
        e_up = float(_smoothstep(raw / x, xi - eta, eta).sum()) * scale
        e_lo = float(_smoothstep(raw / x, xi, eta).sum()) * scale
        ind = float((raw > xi * x).sum()) * scale
        ordered = ordered and (e_lo <= ind + 1e-12 <= e_up + 2e-12)
        rows.append(
            {
                "x": float(x),
                "upper": e_up,
                "indicator": ind,
                "lower": e_lo,
                "k": int((raw > xi * x).sum()),
            }
        )
    return {
        "xi": xi,
        "eta": eta,
        "upper_limit": t1,
        "lower_limit": t2,
        "indicator_limit": target,
        "gap_bound": gap_bound,
        "rows": rows,
        "sandwich_ordered": ordered,
    }


def abs_tail_level(noise, prob: float) -> float:
    """The level t with P(|B| > t) = prob, by bisection on log t."""
    if not 0.0 < prob < 1.0:
        raise ValueError("prob must lie in (0, 1)")
    a = noise.alpha

    def sf(lt):
        return noise.L_abs(math.exp(lt)) * math.exp(-a * lt)

    lo = math.log(noise.x_b)
    if sf(lo) <= prob:
        raise ValueError("prob is not below the tail onset probability")
    hi = lo + 1.0
    while sf(hi) > prob:
        hi += 1.0
        if hi > 600.0 / a:
            raise ValueError("tail level search ran away")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if sf(mid) > prob:
            lo = mid
        else:
            hi = mid
    return math.exp(0.5 * (lo + hi))


def ladder_checks(
    model: models.PerpetuityModel,
    ladder: simulate.LadderBatch,
    t_prob: float = 1e-3,
) -> dict:
    """Verify the sign-ladder reduction's moment and tail identities.

    The stopped product satisfies E Pi_N^alpha = 1 and
    E Pi_N^alpha log Pi_N = 2 rho; the stopped partial sum R* inherits
    the noise tail, P(R* > t) ~ P(|B| > t).  Reports each estimate with
    its standard error / z-score and the tail ratio at the level where
    P(|B| > t) = t_prob.
    """
    if not model.signed:
        raise ValueError("the sign-ladder reduction needs a sign-flipped coefficient")
    if model.rho is None:
        raise ValueError("needs a critical model")
    a = model.alpha
    m1, se1 = ladder.alpha_moment(a)
    m2, se2 = ladder.alpha_log_moment(a)
    t = abs_tail_level(model.noise, t_prob)
    k_hi, _ = ladder.value_exceed(t)
    p_hat = k_hi / ladder.n
    ratio = p_hat / t_prob
    ratio_se = math.sqrt(max(p_hat * (1 - p_hat), 0.0) / ladder.n) / t_prob
    return {
        "alpha_moment": m1,
        "alpha_moment_se": se1,
        "alpha_moment_z": (m1 - 1.0) / se1 if se1 > 0 else math.inf,
        "log_moment": m2,
        "log_moment_se": se2,
        "log_moment_target": 2.0 * model.rho,
        "log_moment_z": (m2 - 2.0 * model.rho) / se2 if se2 > 0 else math.inf,
        "t": t,
        "t_prob": t_prob,
        "tail_k": k_hi,
        "tail_ratio": ratio,
        "tail_ratio_se": ratio_se,
        "mean_epoch": float(ladder.epochs.mean()),
    }


def regime_compare(entries) -> dict:
    """Plateau diagnostics demonstrating the three tail regimes.

    ``entries`` is an iterable of (model, batch) pairs.  Per regime the
    stabilizing statistic differs: subcritical uses P(R>x)/P(B>x) with
    the analytic noise tail, critical-light uses x^alpha p_hat, and
    critical-heavy x^alpha p_hat / Ltilde(x).  Variation of the
    statistic over the top decade of usable levels is reported against
    the 25% stabilization diagnostic.
    """
    out = {}
    for model, batch in entries:
        ests = empirical_tail(batch)
        a = model.alpha
        rows = []
        for est in ests:
            if est.low_confidence:
                continue
            if model.regime == "subcritical":
                stat = est.p_hat / model.noise.survival(est.x)
                name = "p_hat/S_B"
            elif model.regime == "critical-light":
                stat = est.x**a * est.p_hat
                name = "x^a*p_hat"
            else:
                stat = est.x**a * est.p_hat / model.noise.de_haan(est.x)
                name = "x^a*p_hat/Ltilde"
            rows.append({"x": est.x, "k": est.k, "stat": stat})
        if not rows:
            out[model.regime] = {"stat": None, "rows": [], "passed": None}
            continue
        x_top = max(r["x"] for r in rows)
        top = [r["stat"] for r in rows if r["x"] >= x_top / 10.0]
        var = (max(top) - min(top)) / (sum(top) / len(top))
        out[model.regime] = {
            "stat": name,
            "rows": rows,
            "top_decade_variation": var,
            "passed": var < 0.25,
            "model_id": model.model_id,
        }
    return out
