"""Renewal-function numerics for positive-drift walks.

``H(x) = sum_{n>=0} P(S_n <= x)`` for an i.i.d. walk with ``E Z > 0``
(the n = 0 term puts an atom at 0, so ``H(x) >= 1`` for ``x >= 0``).
Three constructions are provided:

* ``monte-carlo`` — occupancy counting of simulated walks, valid for
  any step law; walks run until they first exceed ``x_max`` plus a
  safety margin sized from the walk's downward decay rate.
* ``convolution`` — the forward recursion ``H = 1_{x>=0} + F * H`` on
  the grid, for nonnegative steps only (exponential steps use a
  midpoint-in-cell scheme, on-grid atoms an exact recursion).
* ``ladder`` — samples the pre-ladder occupation measure V and the
  first ladder heights, builds the height renewal function H^> by
  discrete convolution and returns H = V * H^>.

All grids are uniform with step ``h``; a visited position ``s`` is
attributed to the smallest node >= s, so cumulative cell counts are
node-exact.  The checks below each compare a grid quantity against its
analytic target and return a plain dict report.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import _backend, models, regvar
from .simulate import CHUNK, _chunk_sizes, chunk_stream

GRID_H = 1.0 / 256.0

_EMPTY = np.empty(0)


def _step_pack(step):
    """(skind, sp0, sp1, atoms, cumweights) in the kernel convention."""
    if isinstance(step, models.GaussianStep):
        return 0, step.mean, step.sd, _EMPTY, np.ones(1)
    if isinstance(step, models.ExpStep):
        return 1, step.rate, 0.0, _EMPTY, np.ones(1)
    if isinstance(step, models.AtomStep):
        az = np.asarray(step.z, dtype=np.float64)
        acw = np.cumsum(np.asarray(step.w, dtype=np.float64))
        return 2, 0.0, 0.0, az, acw
    raise TypeError(f"no kernel packing for step law {type(step).__name__}")


@dataclass
class RenewalGrid:
    """A renewal function tabulated on a uniform grid.

    ``H[k]`` approximates H(x[k]); positions are attributed upward to
    the nearest node, so node values are exact for lattice walks whose
    span is a grid multiple.
    """

    x: np.ndarray
    H: np.ndarray
    h: float
    step: object
    method: str
    paths: int = 0
    seed: object = None
    backend: str = ""
    meta: dict = field(default_factory=dict)

    def node(self, v: float) -> int:
        """Index of the grid node at v (must lie on the grid)."""
        k = (v - self.x[0]) / self.h
        r = round(k)
        if abs(k - r) > 1e-6:
            raise ValueError(f"{v} is not a grid node (step {self.h})")
        if not 0 <= r < len(self.x):
            raise ValueError(f"{v} is outside the grid domain")
        return int(r)

    def at(self, v: float) -> float:
        """H(v), exact at nodes, linearly interpolated between them."""
        if v < self.x[0] or v > self.x[-1]:
            raise ValueError(f"{v} is outside the grid domain")
        k = (v - self.x[0]) / self.h
        lo = min(int(math.floor(k)), len(self.x) - 2)
        w = k - lo
        if w <= 1e-9:
            return float(self.H[lo])
        if w >= 1 - 1e-9:
            return float(self.H[lo + 1])
        return float((1.0 - w) * self.H[lo] + w * self.H[lo + 1])

    def increment(self, v: float, t: float) -> float:
        """H(v + t) - H(v)."""
        return self.at(v + t) - self.at(v)

    def unit_increment_bound(self) -> float:
        """sup over grid nodes of H(x+1) - H(x)."""
        k1 = int(round(1.0 / self.h))
        return float(np.max(self.H[k1:] - self.H[:-k1]))

    def manifest(self) -> dict:
        return {
            "method": self.method,
            "h": self.h,
            "x_min": float(self.x[0]),
            "x_max": float(self.x[-1]),
            "paths": self.paths,
            "seed": None if self.seed is None else str(self.seed),
            "backend": self.backend,
            "step": repr(self.step),
            "ez": self.step.ez,
            "ez2": self.step.ez2,
            "meta": {k: v for k, v in self.meta.items()},
        }

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,H\n")
            for xv, hv in zip(self.x, self.H):
                fh.write(f"{float(xv)!r},{float(hv)!r}\n")


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def build_renewal(
    step,
    method=None,
    h: float = GRID_H,
    x_min: float = -20.0,
    x_max: float = 60.0,
    paths: int = 10**6,
    seed: int = 0,
    workers: int = 1,
    backend=None,
    margin=None,
    max_iter: int = 100_000,
) -> RenewalGrid:
    """Build the renewal function of a positive-drift walk.

    ``method`` defaults to convolution for nonnegative steps and
    monte-carlo otherwise.  ``margin`` (monte-carlo only) is the extra
    distance walks run beyond ``x_max`` so that visits below ``x_max``
    after an excursion above it are not missed; by default it is sized
    so the expected number of missed visits is ~e^-20.
    """
    if step.ez <= 0:
        raise ValueError("renewal walk needs E Z > 0")
    if x_min > 0 or x_max <= 0:
        raise ValueError("grid must satisfy x_min <= 0 < x_max")
    n_cells = round((x_max - x_min) / h)
    if abs(n_cells * h - (x_max - x_min)) > 1e-9 or round(-x_min / h) * h + x_min > 1e-9:
        raise ValueError("x_min and x_max must be multiples of the grid step")
    if method is None:
        method = "convolution" if step.is_nonneg else "monte-carlo"
    if method == "convolution":
        return _build_convolution(step, h, x_min, x_max)
    if method == "monte-carlo":
        return _build_mc(
            step, h, x_min, x_max, paths, seed, workers, backend, margin, max_iter
        )
    if method == "ladder":
        return _build_ladder(
            step, h, x_min, x_max, paths, seed, workers, backend, max_iter
        )
    raise ValueError(f"unknown method {method!r}")


def _run_walk_chunks(step, paths, seed, workers, backend, x_min, inv_h, n_cells,
                     stop, max_iter):
    """Chunked kernel driver; returns (counts, exit values, stuck)."""
    name, kern = _backend.kernels(backend)
    skind, sp0, sp1, az, acw = _step_pack(step)
    sizes = _chunk_sizes(paths, CHUNK)

    def one_chunk(i):
        g = chunk_stream(seed, i)
        return kern.renewal_chunk(
            g, sizes[i], skind, sp0, sp1, az, acw, x_min, inv_h, n_cells,
            stop, max_iter,
        )

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one_chunk, range(len(sizes))))
    else:
        parts = [one_chunk(i) for i in range(len(sizes))]
    counts = np.zeros(n_cells + 1, dtype=np.int64)
    stuck = 0
    exits = []
    for c, e, s in parts:
        counts += c
        stuck += int(s)
        exits.append(e)
    allex = np.concatenate(exits) if exits else np.empty(0)
    return name, counts, allex, stuck


def _build_mc(step, h, x_min, x_max, paths, seed, workers, backend, margin, max_iter):
    if margin is None:
        rate = step.decay_rate()
        margin = 0.0 if rate is None else (math.log(max(paths, 2)) + 20.0) / rate
    stop = x_max + margin
    n_cells = round((x_max - x_min) / h)
    name, counts, _, stuck = _run_walk_chunks(
        step, paths, seed, workers, backend, x_min, 1.0 / h, n_cells, stop, max_iter
    )
    if stuck:
        raise RuntimeError(f"{stuck} walks did not exit within {max_iter} steps")
    x = x_min + h * np.arange(n_cells + 1)
    H = np.cumsum(counts) / paths
    meta = {"margin": margin, "stop": stop}
    return RenewalGrid(x, H, h, step, "monte-carlo", paths, seed, name, meta)


def _build_convolution(step, h, x_min, x_max):
    if not step.is_nonneg:
        raise ValueError(
            "convolution method requires Z >= 0 almost surely; "
            "use monte-carlo or ladder for signed steps"
        )
    k_pos = round(x_max / h)
    if isinstance(step, models.ExpStep):
        Hpos = _conv_exponential(step.rate, h, k_pos)
    elif isinstance(step, models.AtomStep):
        Hpos = _conv_atoms(step, h, k_pos)
    else:  # pragma: no cover - no other nonnegative laws exist
        raise TypeError(f"no convolution scheme for {type(step).__name__}")
    zero = round(-x_min / h)
    x = x_min + h * np.arange(zero + k_pos + 1)
    H = np.concatenate([np.zeros(zero), Hpos])
    return RenewalGrid(x, H, h, step, "convolution")


def _conv_exponential(rate, h, k_max):
    """Midpoint-in-cell scheme for H = 1 + F*H with Z ~ Exp(rate).

    Cell j carries mass f_j = F(jh) - F((j-1)h); the unknown H(x_k - z)
    over the cell is replaced by the average of its endpoint values,
    which is exact for linear H, giving O(h^2) global error.  The j = 1
    term involves H[k] itself; the recursion solves for it.
    """
    edges = np.exp(-rate * h * np.arange(k_max + 1))
    f = edges[:-1] - edges[1:]  # f[j-1] = mass of cell j
    H = np.empty(k_max + 1)
    H[0] = 1.0
    havg = np.empty(k_max)  # havg[i] = (H[i] + H[i+1]) / 2
    denom = 1.0 - 0.5 * f[0]
    for k in range(1, k_max + 1):
        acc = 0.5 * f[0] * H[k - 1]
        if k >= 2:
            acc += float(np.dot(f[1:k], havg[k - 2 :: -1]))
        H[k] = (1.0 + acc) / denom
        havg[k - 1] = 0.5 * (H[k - 1] + H[k])
    return H


def _conv_atoms(step, h, k_max):
    """Exact recursion for on-grid positive atoms: H[k] = 1 + sum w_i H[k-j_i]."""
    offs = []
    for z in step.z:
        j = round(z / h)
        if j < 1 or abs(j * h - z) > 1e-9:
            raise ValueError(
                f"atom {z} is not a positive multiple of the grid step {h}"
            )
        offs.append(j)
    H = np.zeros(k_max + 1)
    w = step.w
    for k in range(k_max + 1):
        acc = 1.0
        for j, wi in zip(offs, w):
            if k - j >= 0:
                acc += wi * H[k - j]
        H[k] = acc
    return H


def _build_ladder(step, h, x_min, x_max, paths, seed, workers, backend, max_iter):
    """H = V * H^>: pre-ladder occupancy convolved with the height renewal."""
    inv_h = 1.0 / h
    c0 = round(-x_min / h)  # node index of 0
    name, counts_v, heights, stuck = _run_walk_chunks(
        step, paths, seed, workers, backend, x_min, inv_h, c0, 0.0, max_iter
    )
    if stuck:
        raise RuntimeError(f"{stuck} walks did not cross 0 within {max_iter} steps")
    v = counts_v / paths  # occupancy mass per node, support on [x_min, 0]
    k_total = round((x_max - x_min) / h)
    # ladder heights are strictly positive; bin upward like every visit
    j = np.ceil(heights * inv_h).astype(np.int64)
    j = j[(j >= 1) & (j <= k_total)]
    w = np.bincount(j, minlength=k_total + 1) / paths
    j_hi = int(np.nonzero(w)[0][-1]) if np.any(w) else 0
    # height renewal function H^>[k] = 1 + sum_j w_j H^>[k-j]
    Hgt = np.empty(k_total + 1)
    Hgt[0] = 1.0
    for k in range(1, k_total + 1):
        jm = min(k, j_hi)
        lo = k - jm - 1
        seg = Hgt[k - 1 : lo : -1] if lo >= 0 else Hgt[k - 1 :: -1]
        Hgt[k] = 1.0 + float(np.dot(w[1 : jm + 1], seg))
    H = np.convolve(v, Hgt)[: k_total + 1]
    x = x_min + h * np.arange(k_total + 1)
    meta = {
        "pre_ladder_mass": float(v.sum()),  # estimates E N
        "mean_height": float(heights.mean()),
        "height_overflow": int((np.ceil(heights * inv_h) > k_total).sum()),
    }
    return RenewalGrid(x, H, h, step, "ladder", paths, seed, name, meta)


# ---------------------------------------------------------------------------
# Stieltjes integration on a grid
# ---------------------------------------------------------------------------


def stieltjes_integral(grid: RenewalGrid, fn, lo=None, hi=None, include_base=False):
    """Integrate fn against the renewal measure: sum fn(z_mid) dH.

    Covers the half-open cell range (lo, hi] using midpoint evaluation
    of ``fn`` (vectorized over z).  ``include_base`` adds
    fn(x_min) * H(x_min), accounting for the measure at or below the
    grid's lower edge when integrating over the whole line.
    """
    k0 = 0 if lo is None else grid.node(lo)
    k1 = len(grid.x) - 1 if hi is None else grid.node(hi)
    zmid = 0.5 * (grid.x[k0 : k1] + grid.x[k0 + 1 : k1 + 1])
    dH = grid.H[k0 + 1 : k1 + 1] - grid.H[k0 : k1]
    total = float(np.dot(np.asarray(fn(zmid), dtype=float), dH))
    if include_base:
        total += float(fn(np.array([grid.x[0]]))[0]) * float(grid.H[k0])
    return total


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------


def blackwell_check(grid: RenewalGrid, t: float = 1.0, x_probe: float = 30.0) -> dict:
    """Measure H(x+t) - H(x) against the flat-increment target t/EZ."""
    if x_probe + t > grid.x[-1]:
        raise ValueError("x_probe + t exceeds the grid")
    inc = grid.increment(x_probe, t)
    target = t / grid.step.ez
    return {
        "x": x_probe,
        "t": t,
        "increment": inc,
        "target": target,
        "deviation": inc - target,
    }


def stone_check(grid: RenewalGrid, window=None) -> dict:
    """Fit the residual H(x) - x/EZ against the refined constant.

    The refined expansion H(x) = x/EZ + EZ^2/(2 EZ^2) + o(e^-rx) holds
    for strongly non-lattice laws with a light right tail; lattice laws
    are refused (their residual oscillates with the span).
    """
    step = grid.step
    if not step.strongly_nonlattice:
        raise ValueError(
            "Stone refinement needs a strongly non-lattice step law; "
            f"{type(step).__name__} is not (residual oscillates on the span)"
        )
    lo_dom = max(0.0, float(grid.x[0]))
    hi_dom = float(grid.x[-1])
    if window is None:
        lo_snap = grid.x[grid.node(lo_dom) :][0]
        raw_lo = hi_dom - (hi_dom - lo_snap) / 3.0
        window = (grid.x[round((raw_lo - grid.x[0]) / grid.h)], hi_dom)
    k0, k1 = grid.node(window[0]), grid.node(window[1])
    xs = grid.x[k0 : k1 + 1]
    resid = grid.H[k0 : k1 + 1] - xs / step.ez
    target = step.ez2 / (2.0 * step.ez**2)
    return {
        "window": (float(xs[0]), float(xs[-1])),
        "target": target,
        "fit": float(resid.mean()),
        "resid_min": float(resid.min()),
        "resid_max": float(resid.max()),
        "spread": float(resid.max() - resid.min()),
        "edge_residuals": (float(resid[0]), float(resid[-1])),
    }


def boundary_checks(
    grid: RenewalGrid,
    alpha=None,
    coeff=None,
    probes=(4.0, 6.0, 8.0),
    deltas=(1e-3, 1e-2, 1e-1),
    beta_tilde: float = 1.0,
) -> dict:
    """Left-tail decay and increment-smoothness diagnostics.

    Left tail: e^{rate x} H(-x) against 1/(rate |m|), where ``rate`` is
    the walk's downward decay rate and ``m`` the conjugate (un-tilted)
    mean E log|A| supplied through ``coeff``.  For lattice steps the
    plain target is wrong by the lattice correction
    rate*d / (1 - e^{-rate d}) along span-d probes; both are reported
    and the caveat flagged.

    Increments: sup over the grid of (H(x+delta) - H(x)) / max(delta^b,
    delta), the empirical constant of the Hoelder increment bound.
    """
    step = grid.step
    rate = alpha if alpha is not None else step.decay_rate()
    report = {"left": None, "holder": []}
    if rate is not None and grid.x[0] < 0:
        conj_mean = coeff.log_abs_mean() if coeff is not None else None
        ratios = []
        for p in probes:
            if -p < grid.x[0]:
                continue
            ratios.append({"x": p, "ratio": math.exp(rate * p) * grid.at(-p)})
        left = {"rate": rate, "probes": ratios, "target": None}
        if conj_mean is not None:
            left["target"] = 1.0 / (rate * abs(conj_mean))
            span = step.lattice_span
            left["lattice_caveat"] = not step.strongly_nonlattice
            if span:
                corr = rate * span / (1.0 - math.exp(-rate * span))
                left["lattice_target"] = left["target"] * corr
        report["left"] = left
    for d in deltas:
        denom = max(d**beta_tilde, d)
        lo = max(0.0, float(grid.x[0]))
        xs = np.arange(lo, float(grid.x[-1]) - d, max(d, grid.h))
        sup = max(grid.increment(float(v), d) for v in xs)
        report["holder"].append({"delta": d, "constant": sup / denom})
    report["beta_tilde"] = beta_tilde
    return report


def lth_integral_check(grid: RenewalGrid, sv, alpha: float, x_probes) -> dict:
    """Slowly-varying key-renewal check: integral vs de Haan growth.

    Computes J(x) = integral over (0, x] of L(e^{x-z}) dH(z) by
    midpoint Stieltjes integration, where L is the global regularly
    varying profile of the canonical law built on ``sv`` (exact catalog
    tail beyond the cutoff, power bridge to 1 below it).  Reports the
    first-order ratio J(x) EZ / Ltilde(e^x) and the second-order
    residual (J(x) - Ltilde(e^x)/EZ) / L(e^x) at each probe.
    """
    law = sv if isinstance(sv, regvar.HeavyTailLaw) else regvar.catalog_law(sv, alpha)
    ez = grid.step.ez
    rows = []
    for x in np.atleast_1d(np.asarray(x_probes, dtype=float)):
        if x <= 0 or x > grid.x[-1]:
            raise ValueError(f"probe {x} outside (0, x_max]")

        def Lshift(z, x=x):
            return np.array([law.L(math.exp(x - zi)) for zi in z])

        J = stieltjes_integral(grid, Lshift, lo=0.0, hi=float(x))
        lt = law.de_haan(math.exp(x))
        Lx = law.L(math.exp(x))
        rows.append(
            {
                "x": float(x),
                "integral": J,
                "ltilde": lt,
                "ratio": J * ez / lt,
                "residual_over_L": (J - lt / ez) / Lx,
            }
        )
    res = [r["residual_over_L"] for r in rows]
    return {
        "law": f"{law.sv.family}(alpha={alpha})",
        "ez": ez,
        "rows": rows,
        "residual_spread": max(res) - min(res) if res else 0.0,
    }


def lth_functional_check(grid: RenewalGrid, g, noise, alpha: float, x_probe: float) -> dict:
    """Smoothed tail functional against its de Haan limit.

    Computes I(x) = integral of e^{alpha(x-z)} E g(e^{z-x} B) dH(z)
    over the whole grid and compares with the limit
    (alpha int g(r) r^{-alpha-1} dr) * Ltilde(e^x) / EZ.  The inner
    expectation uses E g(sB) = int g'(r) P(B > r/s) dr over the support
    of g'.
    """
    lo, hi = g.support()
    nodes, weights = np.polynomial.legendre.leggauss(24)
    r = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
    wr = 0.5 * (hi - lo) * weights
    gp = np.array([g.dg(v) for v in r])

    def inner(z):
        out = np.empty(len(z))
        for i, zi in enumerate(z):
            s = math.exp(zi - x_probe)
            sb = np.array([noise.survival(v / s) for v in r])
            out[i] = float(np.dot(wr * gp, sb))
        return np.exp(alpha * (x_probe - z)) * out

    integral = stieltjes_integral(grid, inner, include_base=True)
    const = g.tail_integral(alpha)
    lt = noise.de_haan(math.exp(x_probe))
    target = const * lt / grid.step.ez
    return {
        "x": x_probe,
        "integral": integral,
        "tail_constant": const,
        "ltilde": lt,
        "target": target,
        "ratio": integral / target if target != 0 else math.inf,
    }


# ---------------------------------------------------------------------------
# test functions for the smoothed functional
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RampFn:
    """Piecewise-linear ramp: 0 below lo, linear on [lo, hi], 1 beyond."""

    lo: float = 1.0
    hi: float = 2.0

    def __post_init__(self):
        if not 1.0 <= self.lo < self.hi:
            raise ValueError("ramp needs 1 <= lo < hi")

    def __call__(self, r: float) -> float:
        if r <= self.lo:
            return 0.0
        if r >= self.hi:
            return 1.0
        return (r - self.lo) / (self.hi - self.lo)

    def dg(self, r: float) -> float:
        return 1.0 / (self.hi - self.lo) if self.lo < r < self.hi else 0.0

    def support(self):
        return (self.lo, self.hi)

    def tail_integral(self, alpha: float) -> float:
        """alpha int g(r) r^{-alpha-1} dr = int g'(r) r^{-alpha} dr, closed."""
        w = self.hi - self.lo
        if abs(alpha - 1.0) < 1e-12:
            return math.log(self.hi / self.lo) / w
        return (self.lo ** (1 - alpha) - self.hi ** (1 - alpha)) / ((alpha - 1) * w)


@dataclass(frozen=True)
class SmoothStepFn:
    """C^1 smoothstep flank of an indicator 1{r >= xi}.

    ``upper=True`` rises on [xi - eta, xi] (dominates the indicator),
    ``upper=False`` rises on [xi, xi + eta] (is dominated by it); the
    pair sandwiches the indicator for the two-sided tail bounds.
    """

    xi: float
    eta: float
    upper: bool = True

    def __post_init__(self):
        a = self.xi - self.eta if self.upper else self.xi
        if self.eta <= 0 or a < 1.0:
            raise ValueError("need eta > 0 and support within [1, infinity)")

    def _edges(self):
        a = self.xi - self.eta if self.upper else self.xi
        return a, a + self.eta

    def __call__(self, r: float) -> float:
        a, b = self._edges()
        if r <= a:
            return 0.0
        if r >= b:
            return 1.0
        t = (r - a) / self.eta
        return t * t * (3.0 - 2.0 * t)

    def dg(self, r: float) -> float:
        a, b = self._edges()
        if not a < r < b:
            return 0.0
        t = (r - a) / self.eta
        return 6.0 * t * (1.0 - t) / self.eta

    def support(self):
        return self._edges()

    def tail_integral(self, alpha: float) -> float:
        a, b = self._edges()
        val, _ = integrate.quad(
            lambda r: self.dg(r) * r ** (-alpha), a, b, epsabs=1e-12, epsrel=1e-10
        )
        return float(val)
