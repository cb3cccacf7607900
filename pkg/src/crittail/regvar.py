"""Slowly varying functions and heavy-tailed noise laws.

This module owns the regular-variation calculus used everywhere else.  A
survival function of the form

    P(B > t) = t^(-alpha) * L(t),        t >= x_b,

is described by a catalog of slowly varying ``L`` together with the tail
index ``alpha``.  Throughout the package ``L`` is defined *globally* by
``L(t) := t^alpha * P(B > t)``, so below the essential infimum of ``B``
(where the survival is 1) it equals ``t^alpha``.  The running integral

    Ltilde(x) = integral_0^x L(t)/t dt

is the de Haan transform of ``L``; it is again slowly varying, dominates
``L``, and diverges exactly when ``E B_+^alpha = infinity`` — the regime
this package exists to probe.

Two de Haan flavours live here and differ only below the cutoff:

* :func:`de_haan` integrates the *catalog* function with a linear ramp
  below ``x0`` (so the sub-threshold mass is exactly ``L(x0)``); it is the
  pure slowly-varying-calculus object.
* :meth:`HeavyTailLaw.de_haan` integrates the *law's* global ``L`` and is
  the normaliser that the tail theorems actually use.  It satisfies the
  exact truncated-moment identity

      E B_+^alpha 1{B <= x} = alpha * Ltilde(x) - L(x)

  with no asymptotic slack, which the test-suite exploits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

__all__ = [
    "SlowlyVaryingSpec",
    "HeavyTailLaw",
    "LawError",
    "eval_L",
    "de_haan",
    "truncated_moment",
    "tail_quantile_sample",
    "sv_selfcheck",
]

SV_FAMILIES = ("constant", "log", "recip-log", "iterlog", "osc-haan")

#: natural threshold below which each family is continued as a constant
_DEFAULT_X0 = {
    "constant": 1.0,
    "log": math.e,
    "recip-log": math.e,
    "iterlog": math.e**math.e,
    "osc-haan": 1.0,
}

_QUAD_OPTS = dict(epsabs=1e-10, epsrel=1e-9, limit=200)


class LawError(ValueError):
    """Raised when a slowly varying spec or noise law is inconsistent."""


def _fam_value(family: str, c: float, u: float) -> float:
    """Catalog L at t = e^u, family formula only (no threshold logic)."""
    if family == "constant":
        return c
    if family == "log":
        return u
    if family == "recip-log":
        return 1.0 / u
    if family == "iterlog":
        return math.log(u)
    if family == "osc-haan":
        w = u ** (1.0 / 3.0)
        return math.exp(w * math.cos(w))
    raise LawError(f"unknown slowly varying family {family!r}")


def _fam_log_slope(family: str, u: float) -> float:
    """d log L / d log t at t = e^u (0 for the constant family)."""
    if family == "constant":
        return 0.0
    if family == "log":
        return 1.0 / u
    if family == "recip-log":
        return -1.0 / u
    if family == "iterlog":
        return 1.0 / (u * math.log(u))
    if family == "osc-haan":
        w = u ** (1.0 / 3.0)
        return (math.cos(w) - w * math.sin(w)) / (3.0 * w * w)
    raise LawError(f"unknown slowly varying family {family!r}")


@dataclass(frozen=True)
class SlowlyVaryingSpec:
    """A member of the slowly varying catalog.

    Parameters
    ----------
    family : str
        One of ``constant``, ``log``, ``recip-log``, ``iterlog``,
        ``osc-haan``.
    c : float
        Level of the constant family (ignored by the others).
    x0 : float
        Threshold below which ``L`` is continued as the constant
        ``L(x0)``.  Defaults to the natural point where the family
        formula equals 1 (``e`` for log/recip-log, ``e^e`` for iterlog,
        1 otherwise).
    """

    family: str
    c: float = 1.0
    x0: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.family not in SV_FAMILIES:
            raise LawError(f"unknown slowly varying family {self.family!r}")
        if self.family == "constant" and self.c <= 0:
            raise LawError("constant family needs c > 0")
        if self.x0 is None:
            object.__setattr__(self, "x0", _DEFAULT_X0[self.family])
        if self.x0 < _DEFAULT_X0[self.family] - 1e-12:
            raise LawError(
                f"x0 = {self.x0} below the domain of family {self.family!r}"
            )

    # -- pointwise evaluation -------------------------------------------------

    def at_log(self, u: float) -> float:
        """L(e^u), with the constant continuation below x0."""
        u0 = math.log(self.x0)
        if u <= u0:
            return _fam_value(self.family, self.c, u0)
        return _fam_value(self.family, self.c, u)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise LawError("L is defined on (0, inf)")
        out = np.array([self.at_log(u) for u in np.log(x).ravel()])
        return float(out[0]) if x.ndim == 0 else out.reshape(x.shape)

    def log_slope(self, u: float) -> float:
        """d log L / d log t at t = e^u (0 below the threshold)."""
        if u <= math.log(self.x0):
            return 0.0
        return _fam_log_slope(self.family, u)

    # -- integrals ------------------------------------------------------------

    def integral_log(self, u_lo: float, u_hi: float) -> float:
        """integral of L(e^u) du over [u_lo, u_hi], both >= log x0.

        Closed forms where the antiderivative is elementary, adaptive
        quadrature (substitution u = log t) otherwise.
        """
        if u_hi < u_lo:
            return -self.integral_log(u_hi, u_lo)
        u0 = math.log(self.x0)
        if u_lo < u0 - 1e-12:
            raise LawError("integral_log is for the family region only")
        fam = self.family
        if fam == "constant":
            return self.c * (u_hi - u_lo)
        if fam == "log":
            return 0.5 * (u_hi * u_hi - u_lo * u_lo)
        if fam == "recip-log":
            return math.log(u_hi / u_lo)
        if fam == "iterlog":
            F = lambda u: u * math.log(u) - u
            return F(u_hi) - F(u_lo)
        val, _ = integrate.quad(
            lambda u: _fam_value(fam, self.c, u), u_lo, u_hi, **_QUAD_OPTS
        )
        return val


def eval_L(spec: SlowlyVaryingSpec, x):
    """Evaluate the catalog function, constant continuation below x0."""
    return spec(x)


def de_haan(spec: SlowlyVaryingSpec, x) -> float:
    """Catalog-level de Haan transform Ltilde(x) = int_0^x L(t)/t dt.

    Below ``x0`` the integrand is continued linearly (``L(t) =
    L(x0)*t/x0``) so the sub-threshold region contributes exactly
    ``L(x0)``; with the default thresholds the catalog members therefore
    satisfy e.g. Ltilde(e^5) = 6 for the unit constant family.
    """
    x = float(x)
    if x <= 0:
        raise LawError("de_haan needs x > 0")
    base = spec.at_log(math.log(spec.x0))  # = L(x0)
    if x <= spec.x0:
        return base * x / spec.x0
    return base + spec.integral_log(math.log(spec.x0), math.log(x))


# ---------------------------------------------------------------------------
# one-sided magnitude law: survival = 1 below x_low, power bridge on
# [x_low, x_b], catalog tail beyond x_b
# ---------------------------------------------------------------------------


class _MagnitudeTail:
    """Positive random variable with survival t^(-alpha) L(t) beyond x_b.

    The survival is continued below ``x_b`` by a pure power bridge of
    index ``alpha`` (linear in log-log), reaching 1 at ``x_low =
    x_b * s_b^(1/alpha)`` where ``s_b`` is the survival at ``x_b``.  The
    global slowly varying function is then ``t^alpha`` below ``x_low``
    and constant on the bridge, and the quantile function is strictly
    monotone — exactly what inverse-transform sampling wants.
    """

    def __init__(self, alpha: float, sv: SlowlyVaryingSpec, x_b: float):
        if alpha <= 0:
            raise LawError("tail index alpha must be positive")
        if x_b < sv.x0 - 1e-12:
            raise LawError("x_b must lie at or above the catalog threshold x0")
        self.alpha = alpha
        self.sv = sv
        self.x_b = float(x_b)
        self.log_xb = math.log(self.x_b)
        s_b = sv.at_log(self.log_xb) * math.exp(-alpha * self.log_xb)
        if s_b > 1.0 + 1e-12:
            raise LawError(
                f"survival at x_b would exceed 1 (s_b = {s_b:.3g}); raise x_b"
            )
        self.s_b = min(s_b, 1.0)
        # x_low^alpha = L(x_b): the bridge level of the global L
        self.x_low = self.x_b * self.s_b ** (1.0 / alpha)
        self.log_xlow = math.log(self.x_low)
        self._check_monotone()
        self._table = None

    def _check_monotone(self):
        """Survival must be nonincreasing: alpha >= d log L/d log t on the tail."""
        us = np.linspace(self.log_xb, self.log_xb + 80.0, 4001)
        slopes = np.array([self.sv.log_slope(u) for u in us])
        # slope == alpha means locally flat survival, still nonincreasing
        bad = slopes > self.alpha + 1e-12
        if np.any(bad):
            u_bad = us[bad][0]
            raise LawError(
                "survival not monotone: d log L/d log t = "
                f"{slopes[bad][0]:.3g} >= alpha at log t = {u_bad:.3g}; "
                "raise x_b or alpha"
            )

    # L(t) = t^alpha * survival(t), global
    def L(self, x: float) -> float:
        u = math.log(x)
        if u <= self.log_xlow:
            return math.exp(self.alpha * u)
        if u <= self.log_xb:
            return math.exp(self.alpha * self.log_xlow)
        return self.sv.at_log(u)

    def survival(self, t: float) -> float:
        if t <= self.x_low:
            return 1.0
        u = math.log(t)
        if u <= self.log_xb:
            return math.exp(-self.alpha * (u - self.log_xlow))
        return self.sv.at_log(u) * math.exp(-self.alpha * u)

    def de_haan(self, x: float) -> float:
        """int_0^x L(t)/t dt for the global (law-consistent) L."""
        a = self.alpha
        u = math.log(x)
        lead = math.exp(a * self.log_xlow)  # = L(x_b) = bridge level
        if u <= self.log_xlow:
            return math.exp(a * u) / a
        if u <= self.log_xb:
            return lead * (1.0 / a + (u - self.log_xlow))
        return (
            lead * (1.0 / a + (self.log_xb - self.log_xlow))
            + self.sv.integral_log(self.log_xb, u)
        )

    def quantile(self, v: float) -> float:
        """Survival-level quantile: the t with survival(t) = v, v in (0,1]."""
        if not 0.0 < v <= 1.0:
            raise LawError("survival level must lie in (0, 1]")
        if v >= self.s_b:
            return self.x_low * v ** (-1.0 / self.alpha)
        return math.exp(self._invert_log(math.log(v)))

    def _invert_log(self, logv: float) -> float:
        """Bisection for log t with log survival = logv < log s_b."""
        a = self.alpha
        f = lambda u: math.log(self.sv.at_log(u)) - a * u - logv
        lo = self.log_xb
        hi = self.log_xb + max((math.log(self.s_b) - logv) / a, 1.0) + 4.0 / a
        while f(hi) > 0:
            hi += 8.0 / a
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if f(mid) > 0:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-14 * max(1.0, abs(hi)):
                break
        return 0.5 * (lo + hi)

    def moment_integral(self, beta: float, x: float) -> float:
        """integral_0^x t^(beta-1) survival(t) dt, by pieces."""
        a = self.alpha
        u = math.log(x)
        # below x_low: survival = 1
        top = min(u, self.log_xlow)
        total = math.exp(beta * top) / beta
        if u <= self.log_xlow:
            return total
        # bridge: survival = exp(-a (u - log_xlow))
        top = min(u, self.log_xb)
        lead = math.exp(a * self.log_xlow)

        def power_piece(b, lo, hi):
            if abs(b) < 1e-14:
                return hi - lo
            return (math.exp(b * hi) - math.exp(b * lo)) / b

        total += lead * power_piece(beta - a, self.log_xlow, top)
        if u <= self.log_xb:
            return total
        # catalog tail: survival = L(e^w) e^{-a w}
        if beta == a:
            total += self.sv.integral_log(self.log_xb, u)
        else:
            val, _ = integrate.quad(
                lambda w: math.exp((beta - a) * w) * self.sv.at_log(w),
                self.log_xb,
                u,
                **_QUAD_OPTS,
            )
            total += val
        return total

    def moment_to_infinity(self, beta: float) -> float:
        """E M^beta for beta < alpha (infinite otherwise)."""
        if beta >= self.alpha:
            return math.inf
        total = self.moment_integral(beta, self.x_b)
        tail, _ = integrate.quad(
            lambda w: math.exp((beta - self.alpha) * w) * self.sv.at_log(w),
            self.log_xb,
            np.inf,
            **_QUAD_OPTS,
        )
        return beta * (total + tail)

    def quantile_table(self, n_nodes: int = 8193, depth: float = 50.0):
        """(log v ascending, log t) interpolation table for v < s_b."""
        if self._table is None:
            lo, hi = self.log_xb, self.log_xb + depth / self.alpha
            logt = np.linspace(lo, hi, n_nodes)
            logv = np.array(
                [math.log(self.sv.at_log(u)) - self.alpha * u for u in logt]
            )
            if np.any(np.diff(logv) >= 0):
                raise LawError("survival table not strictly decreasing")
            self._table = (logv[::-1].copy(), logt[::-1].copy())
        return self._table


@dataclass
class HeavyTailLaw:
    """Noise law with a regularly varying right tail of index ``-alpha``.

    ``P(B > t) = p_right * t^(-alpha) L(t)`` for ``t >= x_b``.  When
    ``q_left > 0`` the negative part is a mirrored copy: the sign is
    drawn first (``+`` with probability ``p_right``) and the magnitude
    from the one-sided law.  ``left_eta > 0`` makes the mirrored left
    tail *lighter*, with index ``-alpha*(1+eta)``; ``left_eta = 0``
    keeps the symmetric index.

    Parameters
    ----------
    alpha : float
        Right-tail index.
    sv : SlowlyVaryingSpec
        Slowly varying part of the right tail.
    x_b : float
        Point from which the catalog formula holds exactly.
    p_right : float
        Probability of a positive draw; ``q_left = 1 - p_right``.
    left_eta : float or None
        ``None`` for a nonnegative law (requires ``p_right = 1``);
        otherwise the lightening exponent of the mirrored left tail.
    """

    alpha: float
    sv: SlowlyVaryingSpec
    x_b: float = None  # type: ignore[assignment]
    p_right: float = 1.0
    left_eta: float = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.x_b is None:
            self.x_b = self.sv.x0
        if not 0.0 < self.p_right <= 1.0:
            raise LawError("p_right must lie in (0, 1]")
        self.q_left = 1.0 - self.p_right
        if self.left_eta is None and self.q_left > 1e-15:
            raise LawError("q_left > 0 needs a mirrored left tail (left_eta)")
        if self.left_eta is not None and self.left_eta < 0:
            raise LawError("left_eta must be >= 0")
        self._right = _MagnitudeTail(self.alpha, self.sv, self.x_b)
        if self.q_left > 0:
            a_left = self.alpha * (1.0 + self.left_eta)
            self._left = _MagnitudeTail(a_left, self.sv, self.x_b)
        else:
            self._left = None

    # -- global L and de Haan -------------------------------------------------

    def L(self, x: float) -> float:
        """x^alpha * P(B > x) for x > 0 (includes the p_right weight)."""
        return self.p_right * self._right.L(x)

    def de_haan(self, x: float) -> float:
        """Law-consistent Ltilde(x) = int_0^x t^alpha P(B>t) dt/t."""
        return self.p_right * self._right.de_haan(x)

    def L_abs(self, x: float) -> float:
        """x^alpha * P(|B| > x)."""
        out = self.p_right * self._right.L(x)
        if self._left is not None:
            out += (
                self.q_left
                * self._left.survival(x)
                * math.exp(self.alpha * math.log(x))
            )
        return out

    def de_haan_abs(self, x: float) -> float:
        """int_0^x t^alpha P(|B| > t) dt/t; equals de_haan/p_right at eta=0."""
        out = self.p_right * self._right.de_haan(x)
        if self._left is not None:
            le = self._left
            if self.left_eta == 0.0:
                out += self.q_left * le.de_haan(x)
            else:
                val, _ = integrate.quad(
                    lambda u: math.exp(self.alpha * u) * le.survival(math.exp(u)),
                    -30.0 / self.alpha + le.log_xlow,
                    math.log(x),
                    **_QUAD_OPTS,
                )
                out += self.q_left * val
        return out

    # -- distribution interface ----------------------------------------------

    def survival(self, t: float) -> float:
        """P(B > t) on the whole line."""
        if t >= 0:
            s = self._right.survival(t) if t > 0 else 1.0
            return self.p_right * s
        if self._left is None:
            return 1.0
        return 1.0 - self.q_left * self._left.survival(-t)

    def quantile(self, u: float) -> float:
        """Generalised inverse CDF; the sign region is decided by u itself."""
        if not 0.0 < u < 1.0:
            raise LawError("u must lie in (0, 1)")
        if u < self.q_left:
            return -self._left.quantile(u / self.q_left)
        return self._right.quantile((1.0 - u) / self.p_right)

    def moment_pos(self, beta: float) -> float:
        """E B_+^beta (finite iff beta < alpha)."""
        return self.p_right * self._right.moment_to_infinity(beta)

    def moment_neg(self, beta: float) -> float:
        """E B_-^beta (finite iff beta < alpha*(1+eta))."""
        if self._left is None:
            return 0.0
        return self.q_left * self._left.moment_to_infinity(beta)

    def sampling_pack(self) -> dict:
        """Arrays and scalars consumed by the sampling kernels."""
        pack = {
            "q_left": self.q_left,
            "right": _side_pack(self._right),
            "left": _side_pack(self._left) if self._left is not None else None,
        }
        return pack


def _side_pack(mag: _MagnitudeTail) -> dict:
    if mag.sv.family == "constant":
        return {
            "mode": 0,
            "alpha": mag.alpha,
            "x_low": mag.x_low,
            "s_b": 0.0,
            "logv": np.empty(0),
            "logt": np.empty(0),
        }
    logv, logt = mag.quantile_table()
    return {
        "mode": 1,
        "alpha": mag.alpha,
        "x_low": mag.x_low,
        "s_b": mag.s_b,
        "logv": logv,
        "logt": logt,
    }


def truncated_moment(law: HeavyTailLaw, beta: float, x: float) -> float:
    """E B_+^beta 1{B <= x}, by exact integration of the survival.

    Uses E M^beta 1{M <= x} = beta int_0^x t^(beta-1) S(t) dt
    - x^beta S(x) on the positive magnitude; negative draws contribute
    nothing to the positive part.
    """
    if x <= 0:
        return 0.0
    mag = law._right
    val = beta * mag.moment_integral(beta, x) - x**beta * mag.survival(x)
    return law.p_right * val


def catalog_law(spec: SlowlyVaryingSpec, alpha: float, **kw) -> HeavyTailLaw:
    """Canonical pairing of a catalog member with a tail index.

    Starts the exact-tail cutoff at the family threshold ``x0`` and
    raises it in quarter-e-fold steps until the law validates (the
    oscillating family, for instance, is not monotone near its
    threshold at small alpha).  Deterministic: the same (family, alpha)
    always yields the same cutoff.
    """
    last = None
    for trial in range(64):
        x_b = spec.x0 * math.exp(0.25 * trial)
        try:
            return HeavyTailLaw(alpha, spec, x_b=x_b, **kw)
        except LawError as err:
            last = err
    raise LawError(
        f"no valid cutoff for {spec.family} at alpha={alpha}: {last}"
    )


def tail_quantile_sample(law: HeavyTailLaw, u) -> float:
    """Map uniforms in (0,1) through the generalised inverse CDF."""
    if np.ndim(u) == 0:
        return law.quantile(float(u))
    return np.array([law.quantile(float(v)) for v in np.ravel(u)]).reshape(
        np.shape(u)
    )


def sv_selfcheck(spec: SlowlyVaryingSpec, x_grid=None) -> dict:
    """Empirical slow-variation diagnostics for a catalog member.

    Returns the worst Potter-bound constant over the grid for delta in
    {0.1, 0.5}, de Haan increment errors |(Ltilde(lam*x) - Ltilde(x))/L(x)
    - log lam|, and the divergence ratios Ltilde/L along the grid.
    """
    if x_grid is None:
        x_grid = np.exp(np.linspace(math.log(spec.x0), 40.0, 161))
    x_grid = np.asarray(x_grid, dtype=float)
    Ls = spec(x_grid)
    logx = np.log(x_grid)
    potter = {}
    for delta in (0.1, 0.5):
        ratio = Ls[None, :] / Ls[:, None]  # L(y)/L(x)
        spread = np.exp(-delta * np.abs(logx[None, :] - logx[:, None]))
        potter[delta] = float(np.max(ratio * spread))
    increments = {}
    for lam in (2.0, 10.0):
        errs = []
        for x in x_grid[len(x_grid) // 2 :: 20]:
            inc = (de_haan(spec, lam * x) - de_haan(spec, x)) / spec(x)
            errs.append(abs(inc - math.log(lam)))
        increments[lam] = float(max(errs))
    ratios = np.array([de_haan(spec, x) for x in x_grid]) / Ls
    return {
        "potter": potter,
        "de_haan_increment_err": increments,
        "ltilde_over_L": ratios,
        "ltilde_over_L_increasing": bool(ratios[-1] > ratios[len(ratios) // 2]),
    }
