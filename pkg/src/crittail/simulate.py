"""Chunked Monte Carlo drivers for the perpetuity recursions.

Sampling is organised in fixed-size chunks of ``CHUNK`` draws.  Chunk
``i`` of a run seeded with ``seed`` always uses the Philox stream keyed
by ``SeedSequence(entropy=seed, spawn_key=(i,))``, and chunk results are
reduced in index order, so a run is a pure function of ``(model, n,
x_grid, seed)`` — the worker count only changes wall time, never a
single bit of the output.  (Backends may differ in the last ulp of
transcendental functions; reproducibility is per backend.)
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _backend, models

CHUNK = 1 << 16

DEFAULT_TRUNC = (1e-12, 100_000)


class TruncationBias(RuntimeError):
    """Raised when depth-capped lanes are numerous enough to bias tails."""


def chunk_stream(seed: int, chunk: int) -> np.random.Generator:
    """Counter-based stream for one chunk: Philox keyed by (seed, chunk)."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(chunk,))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# kernel-argument packing
# ---------------------------------------------------------------------------


def _coeff_pack(coeff):
    """(ckind, cp0, cp1, cp2, flip) in the kernel convention."""
    if isinstance(coeff, models.LogNormalCoeff):
        return 0, coeff.mu, coeff.sigma, 0.0, coeff.flip
    if isinstance(coeff, models.TwoPointCoeff):
        return 1, coeff.a1, coeff.a2, coeff.p, coeff.flip
    if isinstance(coeff, models.ConstantCoeff):
        return 2, coeff.a, 0.0, 0.0, 0.0
    raise TypeError(f"no kernel packing for coefficient {type(coeff).__name__}")


_EMPTY = np.empty(0)


def _side_tuple(side):
    """Convert one side of a law's sampling pack to the kernel tuple.

    The tuple layout is (mode, 1/alpha, log x_low, log s_b, logv, logt,
    const); unused slots are zero-filled so both backends see uniform
    types.
    """
    if side is None:
        return (0, 1.0, 0.0, 0.0, _EMPTY, _EMPTY, 0.0)
    if side["mode"] == 2:
        return (2, 1.0, 0.0, 0.0, _EMPTY, _EMPTY, float(side["x_low"]))
    inv_a = 1.0 / side["alpha"]
    log_xlow = math.log(side["x_low"])
    if side["mode"] == 0:
        return (0, inv_a, log_xlow, 0.0, _EMPTY, _EMPTY, 0.0)
    return (
        1,
        inv_a,
        log_xlow,
        math.log(side["s_b"]),
        np.ascontiguousarray(side["logv"], dtype=np.float64),
        np.ascontiguousarray(side["logt"], dtype=np.float64),
        0.0,
    )


def model_pack(model_or_pair) -> dict:
    """All kernel arguments for a model (or a raw (coeff, noise) pair)."""
    if isinstance(model_or_pair, models.PerpetuityModel):
        kind = 0 if model_or_pair.kind == "affine" else 1
        coeff, noise = model_or_pair.coeff, model_or_pair.noise
    else:
        coeff, noise = model_or_pair
        kind = 0
    ckind, cp0, cp1, cp2, flip = _coeff_pack(coeff)
    law = noise.sampling_pack()
    return {
        "kind": kind,
        "ckind": ckind,
        "cp0": float(cp0),
        "cp1": float(cp1),
        "cp2": float(cp2),
        "flip": float(flip),
        "q_left": float(law["q_left"]),
        "rside": _side_tuple(law["right"]),
        "lside": _side_tuple(law["left"]),
    }


def _chunk_sizes(n: int, chunk: int):
    return [min(chunk, n - i * chunk) for i in range((n + chunk - 1) // chunk)]


# ---------------------------------------------------------------------------
# batch container
# ---------------------------------------------------------------------------


@dataclass
class SampleBatch:
    """Reduced output of a sampling run.

    ``counts_hi[j]`` counts draws with R > x_grid[j], ``counts_lo[j]``
    draws with R < -x_grid[j]; ``moment_sums[b]`` accumulates
    sum |R|^moment_betas[b].  ``flagged`` counts lanes still live at the
    depth cap — when their fraction exceeds 1e-6 the batch refuses to
    pose as unbiased (see :attr:`biased`).
    """

    model_id: str
    kind: str
    alpha: float
    n: int
    x_grid: np.ndarray
    counts_hi: np.ndarray
    counts_lo: np.ndarray
    moment_betas: tuple
    moment_sums: np.ndarray
    flagged: int
    depth_max: int
    depth_sum: int
    seed: object
    backend: str
    eps: float = DEFAULT_TRUNC[0]
    max_depth: int = DEFAULT_TRUNC[1]
    chunk: int = CHUNK
    raw: object = field(default=None, repr=False)

    BIAS_TOL = 1e-6

    @property
    def biased(self) -> bool:
        return self.n > 0 and self.flagged > self.BIAS_TOL * self.n

    def require_unbiased(self):
        if self.biased:
            raise TruncationBias(
                f"{self.flagged} of {self.n} lanes hit the depth cap "
                f"({self.max_depth}); tail counts may be biased low"
            )

    @property
    def mean_depth(self) -> float:
        return self.depth_sum / self.n if self.n else float("nan")

    def p_hat(self, side: str = "right") -> np.ndarray:
        counts = self.counts_hi if side == "right" else self.counts_lo
        return counts / max(self.n, 1)

    def moment(self, beta: float) -> float:
        """Empirical E|R|^beta for one of the accumulated exponents."""
        for b, s in zip(self.moment_betas, self.moment_sums):
            if abs(b - beta) <= 1e-12:
                return s / max(self.n, 1)
        raise KeyError(f"moment exponent {beta} was not accumulated")

    def merge(self, other: "SampleBatch") -> "SampleBatch":
        """Combine two runs of the same model over the same grid."""
        if self.model_id != other.model_id or self.kind != other.kind:
            raise ValueError("cannot merge batches of different models")
        if not np.array_equal(self.x_grid, other.x_grid):
            raise ValueError("cannot merge batches with different grids")
        if self.moment_betas != other.moment_betas:
            raise ValueError("cannot merge batches with different moments")
        raw = None
        if self.raw is not None and other.raw is not None:
            raw = np.concatenate([self.raw, other.raw])
        return SampleBatch(
            self.model_id,
            self.kind,
            self.alpha,
            self.n + other.n,
            self.x_grid,
            self.counts_hi + other.counts_hi,
            self.counts_lo + other.counts_lo,
            self.moment_betas,
            self.moment_sums + other.moment_sums,
            self.flagged + other.flagged,
            max(self.depth_max, other.depth_max),
            self.depth_sum + other.depth_sum,
            f"{self.seed}+{other.seed}",
            self.backend if self.backend == other.backend else "mixed",
            self.eps,
            max(self.max_depth, other.max_depth),
            self.chunk,
            raw,
        )

    def manifest(self) -> dict:
        """JSON-ready summary (everything except raw draws)."""
        return {
            "model_id": self.model_id,
            "kind": self.kind,
            "alpha": self.alpha,
            "n": self.n,
            "seed": str(self.seed),
            "chunk": self.chunk,
            "backend": self.backend,
            "trunc": {"eps": self.eps, "max_depth": self.max_depth},
            "x_grid": [float(v) for v in self.x_grid],
            "exceed_hi": [int(v) for v in self.counts_hi],
            "exceed_lo": [int(v) for v in self.counts_lo],
            "moment_betas": list(self.moment_betas),
            "moment_sums": [float(v) for v in self.moment_sums],
            "flagged": int(self.flagged),
            "depth_max": int(self.depth_max),
            "mean_depth": self.mean_depth if self.n else None,
        }

    def write_csv(self, path):
        """Columnar exceedance table: x, n, exceed_count, exceed_neg_count."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,n,exceed_count,exceed_neg_count\n")
            for x, hi, lo in zip(self.x_grid, self.counts_hi, self.counts_lo):
                fh.write(f"{float(x)!r},{self.n},{int(hi)},{int(lo)}\n")


# ---------------------------------------------------------------------------
# batch drivers
# ---------------------------------------------------------------------------


def run_batch(
    model: models.PerpetuityModel,
    n: int,
    x_grid,
    seed: int,
    workers: int = 1,
    trunc=DEFAULT_TRUNC,
    moment_betas=None,
    keep_raw: bool = False,
    backend=None,
) -> SampleBatch:
    """Draw ``n`` samples of the model's recursion and reduce them.

    Exceedance counts are taken strictly (R > x, R < -x).  The absolute
    moments accumulated default to the single exponent ``alpha/2``
    (always finite in the catalog regimes).
    """
    name, kern = _backend.kernels(backend)
    x = np.asarray(x_grid, dtype=np.float64)
    if x.ndim != 1 or (x.size > 1 and np.any(np.diff(x) <= 0)):
        raise ValueError("x_grid must be a strictly increasing 1-d array")
    betas = tuple(moment_betas) if moment_betas is not None else (0.5 * model.alpha,)
    pk = model_pack(model)
    eps, max_depth = float(trunc[0]), int(trunc[1])
    sizes = _chunk_sizes(n, CHUNK)

    def one_chunk(i):
        g = chunk_stream(seed, i)
        vals, fl, dmax, dsum = kern.sample_chunk(
            g,
            sizes[i],
            pk["kind"],
            pk["ckind"],
            pk["cp0"],
            pk["cp1"],
            pk["cp2"],
            pk["flip"],
            False,
            pk["q_left"],
            pk["rside"],
            pk["lside"],
            eps,
            max_depth,
        )
        svals = np.sort(vals)
        hi = sizes[i] - np.searchsorted(svals, x, side="right")
        lo = np.searchsorted(svals, -x, side="left")
        mom = np.array([np.abs(vals) ** b for b in betas]).sum(axis=1)
        return vals if keep_raw else None, hi, lo, mom, fl, dmax, dsum

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one_chunk, range(len(sizes))))
    else:
        parts = [one_chunk(i) for i in range(len(sizes))]

    counts_hi = np.zeros(x.size, dtype=np.int64)
    counts_lo = np.zeros(x.size, dtype=np.int64)
    moment_sums = np.zeros(len(betas))
    flagged = 0
    depth_max = 0
    depth_sum = 0
    raws = []
    for vals, hi, lo, mom, fl, dmax, dsum in parts:
        counts_hi += hi
        counts_lo += lo
        moment_sums += mom
        flagged += int(fl)
        depth_max = max(depth_max, int(dmax))
        depth_sum += int(dsum)
        if vals is not None:
            raws.append(vals)
    raw = np.concatenate(raws) if raws else (np.empty(0) if keep_raw else None)
    return SampleBatch(
        model.model_id,
        model.kind,
        model.alpha,
        n,
        x,
        counts_hi,
        counts_lo,
        betas,
        moment_sums,
        flagged,
        depth_max,
        depth_sum,
        seed,
        name,
        eps,
        max_depth,
        CHUNK,
        raw,
    )


@dataclass
class LadderBatch:
    """Raw sign-ladder draws: epoch N, product magnitude, stopped value."""

    coeff_id: str
    n: int
    seed: int
    backend: str
    epochs: np.ndarray
    products: np.ndarray
    values: np.ndarray

    def alpha_moment(self, alpha: float):
        """(estimate, standard error) of E Pi_N^alpha."""
        w = self.products**alpha
        return float(w.mean()), float(w.std(ddof=1) / math.sqrt(self.n))

    def alpha_log_moment(self, alpha: float):
        """(estimate, standard error) of E Pi_N^alpha log Pi_N."""
        w = self.products**alpha * np.log(self.products)
        return float(w.mean()), float(w.std(ddof=1) / math.sqrt(self.n))

    def epoch_pmf(self, k_max: int = 12) -> np.ndarray:
        """P(N = k) for k = 1 .. k_max (last bin pools the remainder)."""
        counts = np.bincount(np.minimum(self.epochs, k_max), minlength=k_max + 1)
        return counts[1:] / self.n

    def value_exceed(self, t: float):
        """(count above t, count below -t) for the stopped value."""
        return int((self.values > t).sum()), int((self.values < -t).sum())


def run_ladder_batch(
    coeff,
    noise,
    n: int,
    seed: int,
    workers: int = 1,
    backend=None,
    max_iter: int = 10_000,
) -> LadderBatch:
    """Sample the sign-ladder triple (N, Pi_N, R*) in chunk order."""
    if getattr(coeff, "flip", 0.0) <= 0.0:
        raise ValueError("the sign ladder requires a sign-flipped coefficient")
    name, kern = _backend.kernels(backend)
    ckind, cp0, cp1, cp2, flip = _coeff_pack(coeff)
    law = noise.sampling_pack()
    q_left = float(law["q_left"])
    rside = _side_tuple(law["right"])
    lside = _side_tuple(law["left"])
    sizes = _chunk_sizes(n, CHUNK)

    def one_chunk(i):
        g = chunk_stream(seed, i)
        return kern.ladder_chunk(
            g, sizes[i], ckind, cp0, cp1, cp2, flip, q_left, rside, lside, max_iter
        )

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one_chunk, range(len(sizes))))
    else:
        parts = [one_chunk(i) for i in range(len(sizes))]
    epochs = np.concatenate([p[0] for p in parts]) if parts else np.empty(0, np.int64)
    prods = np.concatenate([p[1] for p in parts]) if parts else np.empty(0)
    vals = np.concatenate([p[2] for p in parts]) if parts else np.empty(0)
    cid = f"{coeff.family}:{_coeff_pack(coeff)!r}"
    return LadderBatch(cid, n, seed, name, epochs, prods, vals)


# ---------------------------------------------------------------------------
# single-draw operations
# ---------------------------------------------------------------------------


def _single(pk, stream, clip_neg, trunc, backend=None) -> float:
    _, kern = _backend.kernels(backend)
    vals, _, _, _ = kern.sample_chunk(
        stream,
        1,
        pk["kind"],
        pk["ckind"],
        pk["cp0"],
        pk["cp1"],
        pk["cp2"],
        pk["flip"],
        clip_neg,
        pk["q_left"],
        pk["rside"],
        pk["lside"],
        float(trunc[0]),
        int(trunc[1]),
    )
    return float(vals[0])


def sample_affine(model, stream, trunc=DEFAULT_TRUNC) -> float:
    """One backward-iterated draw of the affine perpetuity."""
    if model.kind != "affine":
        raise ValueError("model kind is not affine")
    return _single(model_pack(model), stream, False, trunc)


def sample_extremal(model, stream, trunc=DEFAULT_TRUNC) -> float:
    """One backward-iterated draw of the extremal recursion."""
    if model.kind != "extremal":
        raise ValueError("model kind is not extremal")
    return _single(model_pack(model), stream, False, trunc)


def sample_positive_part_S(coeff, noise, stream, trunc=DEFAULT_TRUNC) -> float:
    """One draw of S = B_1 + A_1^+ B_2 + A_1^+ A_2^+ B_3 + ...

    The series terminates almost surely at the first nonpositive
    coefficient, so the sign-flip probability must be positive (or the
    coefficient identically zero, in which case S = B_1).
    """
    flip = getattr(coeff, "flip", 0.0)
    zero = isinstance(coeff, models.ConstantCoeff) and coeff.a == 0.0
    if flip <= 0.0 and not zero:
        raise ValueError(
            "the positive-part series needs P(A <= 0) > 0; "
            "use a sign-flipped coefficient"
        )
    return _single(model_pack((coeff, noise)), stream, True, trunc)


def sample_signed_ladder(coeff, noise, stream, max_iter: int = 10_000):
    """One sign-ladder draw: the triple (N, Pi_N, R*)."""
    if getattr(coeff, "flip", 0.0) <= 0.0:
        raise ValueError("the sign ladder requires a sign-flipped coefficient")
    _, kern = _backend.kernels(None)
    ckind, cp0, cp1, cp2, flip = _coeff_pack(coeff)
    law = noise.sampling_pack()
    nn, pp, rr = kern.ladder_chunk(
        stream,
        1,
        ckind,
        cp0,
        cp1,
        cp2,
        flip,
        float(law["q_left"]),
        _side_tuple(law["right"]),
        _side_tuple(law["left"]),
        max_iter,
    )
    return int(nn[0]), float(pp[0]), float(rr[0])
