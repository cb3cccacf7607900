"""Config-driven experiment runner with deterministic artifacts.

Subcommands: calibrate, simulate, renewal, check, report.  A run is
described by a JSON config (model / run / grid / trunc / checks keys)
whose content hash identifies it; flags override config values and
``CRITTAIL_WORKERS`` overrides the worker count.  Result files
(batch.csv, report.csv, summary.txt, manifest.json) are byte-identical
for a given (config, seed) regardless of worker count; wall-clock
details go to runinfo.txt, which is a log rather than a result.

Exit codes: 0 all checks passed (or none requested), 1 a check ran and
failed, 2 config or hypothesis-audit error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from . import analysis, models, renewal, simulate
from .models import CalibrationError
from .regvar import LawError

CHECK_TAGS = ("first-order", "second-order", "holder", "signed-ladder")

REPORT_HEADER = "x,n,k,p_hat,ci_lo,ci_hi,ratio,residual"


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config top level must be an object")
    return cfg


def apply_overrides(cfg: dict, args) -> dict:
    """Flags beat the config file; CRITTAIL_WORKERS beats the file too."""
    run = cfg.setdefault("run", {})
    env_workers = os.environ.get("CRITTAIL_WORKERS")
    if env_workers is not None:
        run["workers"] = int(env_workers)
    for key in ("seed", "samples", "workers"):
        v = getattr(args, key, None)
        if v is not None:
            run[key] = v
    if getattr(args, "out", None) is not None:
        run["out"] = args.out
    if getattr(args, "check", None) is not None:
        tags = [t for t in args.check.split(",") if t]
        cfg["checks"] = tags
    return cfg


def canonical_config(cfg: dict) -> str:
    """Canonical JSON of the number-determining part of the config.

    Output directory and worker count do not influence any emitted
    number, so they are excluded; this is what makes re-runs with a
    different --out/--workers byte-identical, manifest included.
    """
    trimmed = json.loads(json.dumps(cfg))
    run = trimmed.get("run", {})
    run.pop("out", None)
    run.pop("workers", None)
    return json.dumps(trimmed, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_config(cfg).encode()).hexdigest()


def build_model(cfg: dict) -> models.PerpetuityModel:
    try:
        sec = cfg["model"]
        coeff = models.coeff_from_config(sec["coeff"])
        noise = models.noise_from_config(sec["noise"])
        kind = sec.get("kind", "affine")
        target = sec.get("target_alpha")
    except KeyError as e:
        raise ConfigError(f"model section is missing key {e}") from None
    return models.PerpetuityModel.build(kind, coeff, noise, target_alpha=target)


def build_grid(cfg: dict) -> np.ndarray:
    try:
        g = cfg["grid"]
        lo, hi, count = float(g["lo"]), float(g["hi"]), int(g["count"])
    except KeyError as e:
        raise ConfigError(f"grid section is missing key {e}") from None
    if not (0 < lo <= hi) or count < 1:
        raise ConfigError("grid needs 0 < lo <= hi and count >= 1")
    return np.exp(np.linspace(math.log(lo), math.log(hi), count))


def _run_params(cfg: dict):
    run = cfg.get("run", {})
    n = int(run.get("samples", 0))
    seed = int(run.get("seed", 0))
    workers = int(run.get("workers", 1))
    out = run.get("out", ".")
    backend = run.get("backend")
    if n < 0 or workers < 1:
        raise ConfigError("need samples >= 0 and workers >= 1")
    tr = cfg.get("trunc", {})
    trunc = (float(tr.get("eps", 1e-12)), int(tr.get("max_depth", 100_000)))
    return n, seed, workers, out, backend, trunc


# ---------------------------------------------------------------------------
# artifact emission
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def write_report_csv(path: str, rows) -> None:
    """Fixed-order columnar check output (header always present)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(REPORT_HEADER + "\n")
        for r in rows:
            fh.write(
                ",".join(
                    _fmt(r.get(c))
                    for c in (
                        "x",
                        "n",
                        "k",
                        "p_hat",
                        "ci_lo",
                        "ci_hi",
                        "ratio",
                        "residual",
                    )
                )
                + "\n"
            )


def write_summary(path: str, items: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k in sorted(items):
            fh.write(f"{k}={_fmt(items[k])}\n")


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def write_manifest(out: str, manifest: dict, files) -> None:
    manifest["files"] = {
        name: _sha256_file(os.path.join(out, name)) for name in sorted(files)
    }
    with open(
        os.path.join(out, "manifest.json"), "w", encoding="utf-8", newline="\n"
    ) as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_runinfo(out: str, t0: float, workers: int, backend: str) -> None:
    """Wall-clock log, deliberately outside the deterministic artifact set."""
    with open(
        os.path.join(out, "runinfo.txt"), "w", encoding="utf-8", newline="\n"
    ) as fh:
        fh.write(f"backend={backend}\n")
        fh.write(f"elapsed_seconds={time.time() - t0:.3f}\n")
        fh.write(f"finished_unix={time.time():.0f}\n")
        fh.write(f"workers={workers}\n")


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------


def run_checks(model, batch, tags, params):
    """Run the requested check tags; returns (manifest dict, rows, all_ok).

    Rows carry the per-level report columns, with ``ratio`` filled by
    the first-order check and ``residual`` by the second-order one.
    """
    for t in tags:
        if t not in CHECK_TAGS:
            raise ConfigError(f"unknown check tag {t!r} (known: {', '.join(CHECK_TAGS)})")
    ests = analysis.empirical_tail(batch) if batch.n > 0 else []
    rows = [
        {
            "x": e.x,
            "n": e.n,
            "k": e.k,
            "p_hat": e.p_hat,
            "ci_lo": e.ci_lo,
            "ci_hi": e.ci_hi,
        }
        for e in ests
    ]
    if tags and not ests:
        raise ConfigError("checks requested but the run has no samples")
    results = {}
    ok = True
    for tag in tags:
        opts = params.get(tag, {})
        if tag == "first-order":
            band = tuple(opts.get("band", (0.75, 1.25)))
            rep = analysis.first_order_ratio(model, ests, band=band)
            for row, rrow in zip(rows, rep.rows):
                row["ratio"] = rrow["ratio"]
            results[tag] = {
                "passed": rep.passed,
                "band": list(band),
                "normalization": rep.normalization,
                "levels_used": rep.summary["levels_used"],
            }
            ok = ok and bool(rep.passed)
        elif tag == "second-order":
            coupled = None
            if batch.raw is not None and opts.get("coupled", True):
                coupled = analysis.coupled_constant(
                    model, batch.raw, seed=batch.seed + 1,
                    n=opts.get("coupled_n"),
                )
            rep = analysis.second_order_residual(model, ests, coupled=coupled)
            for row, rrow in zip(rows, rep.rows):
                row["residual"] = rrow["residual"]
            entry = {
                "passed": rep.passed,
                "slope": rep.summary.get("slope"),
                "slope_se": rep.summary.get("slope_se"),
            }
            if coupled is not None:
                entry["coupled_constant"] = coupled["value"]
                entry["coupled_se"] = coupled["se"]
            results[tag] = entry
            ok = ok and bool(rep.passed)
        elif tag == "holder":
            if batch.raw is None:
                raise ConfigError("holder check needs raw samples (run `check`)")
            h = analysis.holder_functional_estimate(
                model,
                batch,
                xi=float(opts.get("xi", 2.0)),
                eta=float(opts.get("eta", 0.1)),
            )
            usable = [r for r in h["rows"] if r["k"] >= analysis.LOW_COUNT]
            close = True
            for r in usable[-3:]:
                close = close and (
                    abs(r["upper"] - h["upper_limit"]) <= 0.25 * h["upper_limit"]
                    and abs(r["lower"] - h["lower_limit"]) <= 0.25 * h["lower_limit"]
                )
            passed = h["sandwich_ordered"] and bool(usable) and close
            results[tag] = {
                "passed": passed,
                "sandwich_ordered": h["sandwich_ordered"],
                "indicator_limit": h["indicator_limit"],
                "gap_bound": h["gap_bound"],
            }
            ok = ok and passed
        elif tag == "signed-ladder":
            draws = int(opts.get("draws", min(batch.n, 10**6)))
            lb = simulate.run_ladder_batch(
                model.coeff,
                model.noise,
                draws,
                seed=batch.seed + 2,
                backend=batch.backend,
            )
            ck = analysis.ladder_checks(
                model, lb, t_prob=float(opts.get("t_prob", 1e-3))
            )
            passed = (
                abs(ck["alpha_moment_z"]) <= 3.0
                and abs(ck["log_moment_z"]) <= 3.0
                and abs(ck["tail_ratio"] - 1.0) <= 0.2
            )
            results[tag] = {
                "passed": passed,
                "alpha_moment": ck["alpha_moment"],
                "log_moment": ck["log_moment"],
                "log_moment_target": ck["log_moment_target"],
                "tail_ratio": ck["tail_ratio"],
            }
            ok = ok and passed
    return results, rows, ok


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _model_summary(model) -> dict:
    return {
        "model_id": model.model_id,
        "alpha": model.alpha,
        "rho": model.rho,
        "regime": model.regime,
        "signed": model.signed,
    }


def cmd_calibrate(cfg, args) -> int:
    model = build_model(cfg)
    audit = models.assumption_audit(model)
    print(f"model_id={model.model_id}")
    print(f"alpha={_fmt(model.alpha)}")
    print(f"rho={_fmt(model.rho)}")
    print(f"regime={model.regime}")
    print(f"strongly_nonlattice={_fmt(audit['strongly_nonlattice'])}")
    for eta, v in sorted(audit["mixed_moments"].items()):
        print(f"mixed_moment[{eta:g}]={_fmt(v)}")
    return 0


def _sample(cfg, keep_raw: bool):
    model = build_model(cfg)
    grid = build_grid(cfg)
    n, seed, workers, out, backend, trunc = _run_params(cfg)
    batch = simulate.run_batch(
        model,
        n,
        grid,
        seed=seed,
        workers=workers,
        trunc=trunc,
        keep_raw=keep_raw,
        backend=backend,
    )
    return model, batch, out, workers


def cmd_simulate(cfg, args) -> int:
    t0 = time.time()
    model, batch, out, workers = _sample(cfg, keep_raw=False)
    os.makedirs(out, exist_ok=True)
    batch.write_csv(os.path.join(out, "batch.csv"))
    summary = _model_summary(model)
    summary.update(
        {
            "config_sha256": config_hash(cfg),
            "n": batch.n,
            "seed": batch.seed,
            "backend": batch.backend,
            "flagged": batch.flagged,
            "mean_depth": batch.mean_depth,
        }
    )
    write_summary(os.path.join(out, "summary.txt"), summary)
    manifest = {
        "config_sha256": config_hash(cfg),
        "model_id": model.model_id,
        "seed": batch.seed,
        "n": batch.n,
        "backend": batch.backend,
        "batch": batch.manifest(),
        "checks": {},
    }
    write_manifest(out, manifest, ["batch.csv", "summary.txt"])
    write_runinfo(out, t0, workers, batch.backend)
    return 0


def cmd_check(cfg, args) -> int:
    t0 = time.time()
    tags = list(cfg.get("checks", []))
    params = cfg.get("checks_params", {})
    need_raw = bool({"second-order", "holder"} & set(tags))
    model, batch, out, workers = _sample(cfg, keep_raw=need_raw)
    results, rows, ok = run_checks(model, batch, tags, params)
    os.makedirs(out, exist_ok=True)
    batch.write_csv(os.path.join(out, "batch.csv"))
    write_report_csv(os.path.join(out, "report.csv"), rows)
    summary = _model_summary(model)
    summary.update(
        {
            "config_sha256": config_hash(cfg),
            "n": batch.n,
            "seed": batch.seed,
            "backend": batch.backend,
            "flagged": batch.flagged,
        }
    )
    for tag, res in results.items():
        for k, v in res.items():
            summary[f"check.{tag}.{k}"] = v
    write_summary(os.path.join(out, "summary.txt"), summary)
    manifest = {
        "config_sha256": config_hash(cfg),
        "model_id": model.model_id,
        "seed": batch.seed,
        "n": batch.n,
        "backend": batch.backend,
        "batch": batch.manifest(),
        "checks": results,
    }
    write_manifest(out, manifest, ["batch.csv", "report.csv", "summary.txt"])
    write_runinfo(out, t0, workers, batch.backend)
    return 0 if ok else 1


def cmd_renewal(cfg, args) -> int:
    t0 = time.time()
    model = build_model(cfg)
    if model.rho is None:
        raise ConfigError("renewal analysis needs a critical model")
    step = models.make_tilted(model.coeff, model.alpha)
    rn = cfg.get("renewal", {})
    n, seed, workers, out, backend, _ = _run_params(cfg)
    grid = renewal.build_renewal(
        step,
        method=rn.get("method"),
        h=float(rn.get("h", renewal.GRID_H)),
        x_min=float(rn.get("x_min", -20.0)),
        x_max=float(rn.get("x_max", 60.0)),
        paths=int(rn.get("paths", n or 10**6)),
        seed=seed,
        workers=workers,
        backend=backend,
    )
    os.makedirs(out, exist_ok=True)
    grid.write_csv(os.path.join(out, "renewal.csv"))
    summary = _model_summary(model)
    summary.update(
        {
            "config_sha256": config_hash(cfg),
            "seed": seed,
            "renewal.method": grid.method,
            "renewal.h": grid.h,
            "renewal.ez": step.ez,
        }
    )
    bw = renewal.blackwell_check(grid, x_probe=float(rn.get("probe", 30.0)))
    summary["renewal.blackwell.increment"] = bw["increment"]
    summary["renewal.blackwell.target"] = bw["target"]
    if step.strongly_nonlattice:
        st = renewal.stone_check(grid)
        summary["renewal.stone.fit"] = st["fit"]
        summary["renewal.stone.target"] = st["target"]
    write_summary(os.path.join(out, "summary.txt"), summary)
    manifest = {
        "config_sha256": config_hash(cfg),
        "model_id": model.model_id,
        "seed": seed,
        "renewal": grid.manifest(),
        "checks": {},
    }
    write_manifest(out, manifest, ["renewal.csv", "summary.txt"])
    write_runinfo(out, t0, workers, grid.backend or "none")
    return 0


def _read_batch_csv(path: str):
    xs, counts_hi, counts_lo, n = [], [], [], 0
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "x,n,exceed_count,exceed_neg_count":
            raise ConfigError(f"{path} does not look like a batch file")
        for line in fh:
            x, nn, hi, lo = line.strip().split(",")
            xs.append(float(x))
            n = int(nn)
            counts_hi.append(int(hi))
            counts_lo.append(int(lo))
    return np.array(xs), np.array(counts_hi), np.array(counts_lo), n


def cmd_report(cfg, args) -> int:
    """Re-derive report artifacts from an existing batch.csv (no sampling)."""
    t0 = time.time()
    tags = list(cfg.get("checks", []))
    unsupported = set(tags) - {"first-order", "second-order"}
    if unsupported:
        raise ConfigError(
            f"report cannot re-run {sorted(unsupported)} from stored counts; "
            "use the check subcommand"
        )
    model = build_model(cfg)
    n_run, seed, workers, out, backend, trunc = _run_params(cfg)
    xs, hi, lo, n = _read_batch_csv(os.path.join(out, "batch.csv"))
    with open(os.path.join(out, "manifest.json"), "r", encoding="utf-8") as fh:
        prev = json.load(fh)
    batch = simulate.SampleBatch(
        model_id=model.model_id,
        kind=model.kind,
        alpha=model.alpha,
        n=n,
        x_grid=xs,
        counts_hi=hi,
        counts_lo=lo,
        moment_betas=(),
        moment_sums=np.empty(0),
        flagged=int(prev["batch"]["flagged"]),
        depth_max=int(prev["batch"]["depth_max"]),
        depth_sum=int(round((prev["batch"]["mean_depth"] or 0.0) * n)),
        seed=int(prev["seed"]),
        backend=str(prev["backend"]),
        eps=trunc[0],
        max_depth=trunc[1],
    )
    params = cfg.get("checks_params", {})
    results, rows, ok = run_checks(model, batch, tags, params)
    write_report_csv(os.path.join(out, "report.csv"), rows)
    summary = _model_summary(model)
    summary.update(
        {
            "config_sha256": config_hash(cfg),
            "n": batch.n,
            "seed": batch.seed,
            "backend": batch.backend,
            "flagged": batch.flagged,
        }
    )
    for tag, res in results.items():
        for k, v in res.items():
            summary[f"check.{tag}.{k}"] = v
    write_summary(os.path.join(out, "summary.txt"), summary)
    manifest = {
        "config_sha256": config_hash(cfg),
        "model_id": model.model_id,
        "seed": batch.seed,
        "n": batch.n,
        "backend": batch.backend,
        "batch": prev["batch"],
        "checks": results,
    }
    write_manifest(out, manifest, ["batch.csv", "report.csv", "summary.txt"])
    write_runinfo(out, t0, workers, batch.backend)
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="crittail",
        description="critical-case perpetuity tail experiments",
    )
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, doc in (
        ("calibrate", cmd_calibrate, "solve the tail index and audit hypotheses"),
        ("simulate", cmd_simulate, "sample the recursion and store counts"),
        ("renewal", cmd_renewal, "build the tilted renewal function"),
        ("check", cmd_check, "full pipeline: sample, estimate, verify"),
        ("report", cmd_report, "recompute report files from stored counts"),
    ):
        q = sub.add_parser(name, help=doc)
        q.add_argument("--config", required=True, help="JSON experiment config")
        q.add_argument("--seed", type=int, help="override run.seed")
        q.add_argument("--samples", type=int, help="override run.samples")
        q.add_argument("--workers", type=int, help="override run.workers")
        q.add_argument("--out", help="override run.out directory")
        q.add_argument("--check", help="comma-separated check tags")
        q.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = apply_overrides(cfg, args)
        return args.func(cfg, args)
    except (
        ConfigError,
        CalibrationError,
        LawError,
        simulate.TruncationBias,
        ValueError,
        OSError,
        KeyError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
