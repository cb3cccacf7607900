"""Acceptance suite: one test per deliverable property, at its stated
tolerance, printing one PASS/FAIL verdict line each (run with -s to see
them live).

The properties are asymptotic theorems, so each check pairs a fixed
desk-scale experiment with an analytically derived oracle: exact
calibration constants, closed-form renewal functions, de Haan
increments, and Monte Carlo runs large enough that the limit statement
sits inside statistical resolution.  Each verdict line also reports
wall time against the property's runtime budget; fixture build time is
charged to every criterion that consumes the fixture.
"""

import contextlib
import hashlib
import json
import math
import time

import numpy as np
import pytest

from crittail import analysis, cli, models, regvar, renewal, simulate

LOG2 = math.log(2.0)


@contextlib.contextmanager
def criterion(name, budget=None, cost=0.0):
    t0 = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"FAIL {name}")
        raise
    elapsed = time.monotonic() - t0 + cost
    if budget is None:
        print(f"PASS {name} [{elapsed:.1f}s]")
    else:
        assert elapsed <= budget, f"{name}: {elapsed:.1f}s over the {budget:.0f}s budget"
        print(f"PASS {name} [{elapsed:.1f}s <= {budget:.0f}s]")


def test_calibration_exactness():
    """solve_alpha and rho hit the hand-derived constants of two laws.

    TwoPoint(2, 1/2, p=1/3): E A = 1 exactly, rho = (log 2)/3.
    LogNormal(-1/2, 1): E A = e^(mu + sigma^2/2) = 1, rho = mu + sigma^2.
    """
    with criterion("calibration-exactness", budget=1.0):
        two_point = models.TwoPointCoeff(2.0, 0.5, 1.0 / 3.0)
        lognormal = models.LogNormalCoeff(-0.5, 1.0)
        assert abs(models.solve_alpha(two_point) - 1.0) <= 1e-10
        assert abs(models.solve_alpha(lognormal) - 1.0) <= 1e-10
        assert abs(models.rho(two_point, 1.0) - LOG2 / 3.0) <= 1e-12
        assert abs(models.rho(lognormal, 1.0) - 0.5) <= 1e-12


def test_slow_variation_identities():
    """Truncated moment identity and the de Haan increment limit.

    For every catalog law, E B_+^alpha 1{B <= x} = alpha Ltilde(x) - L(x)
    (integration by parts of the exact survival).  For the Log family,
    (Ltilde(2x) - Ltilde(x)) / L(x) -> log 2.
    """
    with criterion("slow-variation-identities", budget=10.0):
        for family in regvar.SV_FAMILIES:
            law = regvar.catalog_law(regvar.SlowlyVaryingSpec(family), 1.0)
            for x in (math.e**2, math.e**5, math.e**8):
                lhs = regvar.truncated_moment(law, 1.0, x)
                rhs = law.de_haan(x) - law.L(x)
                assert abs(lhs - rhs) <= 1e-8 * abs(rhs), (family, x)

        # For L = log the increment is log 2 + log^2(2)/(2 log x)
        # exactly, which at x = e^20 sits 1.73% above the limit -- no
        # implementation can land within 1% there.  So at e^20 we pin
        # the closed form to near machine accuracy, and verify the 1%
        # band at e^40, where the exact deviation has fallen to 0.87%.
        spec = regvar.SlowlyVaryingSpec("log")

        def increment(u):
            x = math.exp(u)
            return (regvar.de_haan(spec, 2.0 * x) - regvar.de_haan(spec, x)) / regvar.eval_L(spec, x)

        exact_20 = LOG2 + LOG2**2 / 40.0
        assert abs(increment(20.0) - exact_20) <= 1e-12 * exact_20
        assert abs(increment(40.0) - LOG2) <= 0.01 * LOG2


def test_renewal_closed_forms(mc_renewal_grid, timings):
    """Renewal function against three closed forms.

    Exp(1) steps: H(x) = 1 + x.  Unit atom: H(x) = floor(x) + 1 at
    nodes.  Tilted LogNormal(-1/2, 1) walk (N(1/2, 1) steps), Blackwell
    increment at x = 30: H(31) - H(30) -> 1 / E Z = 2.
    """
    with criterion("renewal-closed-forms", budget=120.0, cost=timings.get("mc_renewal_grid", 0.0)):
        exp_grid = renewal.build_renewal(
            models.ExpStep(1.0), method="convolution", x_min=0.0, x_max=44.0
        )
        mask = exp_grid.x <= 40.0 + 1e-12
        sup = np.max(np.abs(exp_grid.H[mask] - (1.0 + exp_grid.x[mask])))
        assert sup <= 1e-3

        unit = renewal.build_renewal(
            models.AtomStep((1.0,), (1.0,)), method="convolution", x_min=0.0, x_max=44.0
        )
        assert np.array_equal(unit.H, np.floor(unit.x) + 1.0)

        bw = renewal.blackwell_check(mc_renewal_grid, t=1.0, x_probe=30.0)
        assert bw["target"] == 2.0
        assert abs(bw["increment"] - 2.0) <= 1e-2


def test_stationary_excess_constant(mc_renewal_grid, timings):
    """Stone constant: H(x) - 2x on [25, 40] fits E Z^2 / (2 (E Z)^2).

    For N(1/2, 1) steps that is 1.25 / 0.5 = 2.5.
    """
    with criterion("stationary-excess-constant", budget=120.0, cost=timings.get("mc_renewal_grid", 0.0)):
        st = renewal.stone_check(mc_renewal_grid, window=(25.0, 40.0))
        assert st["target"] == 2.5
        assert abs(st["fit"] - 2.5) <= 0.02 * 2.5


def test_renewal_tail_composition():
    """Tail integral against the de Haan function along the renewal grid.

    With Exp(1) steps (H = 1 + x exactly) and L = log, the smoothed
    integral over the walk matches Ltilde(e^x): ratio at x = 40 within
    2% of 1, and the second-order residual divided by L(e^x) stays
    within a 3x multiplicative spread over x in [20, 40].
    """
    with criterion("renewal-tail-composition", budget=60.0):
        exp_grid = renewal.build_renewal(
            models.ExpStep(1.0), method="convolution", x_min=0.0, x_max=44.0
        )
        chk = renewal.lth_integral_check(
            exp_grid,
            regvar.SlowlyVaryingSpec("log"),
            1.0,
            x_probes=(20.0, 24.0, 28.0, 32.0, 36.0, 40.0),
        )
        ratio_40 = next(r["ratio"] for r in chk["rows"] if r["x"] == 40.0)
        assert abs(ratio_40 - 1.0) <= 0.02
        residuals = [r["residual_over_L"] for r in chk["rows"]]
        assert max(residuals) < 0.0 or min(residuals) > 0.0  # one sign: ratio is meaningful
        magnitudes = [abs(v) for v in residuals]
        assert max(magnitudes) / min(magnitudes) < 3.0


def test_first_order_tail_both_recursions(tp_model, tp_batch, ext_model, ext_batch, timings):
    """First-order tail for the affine and extremal recursions.

    Incommensurable two-point (affine) and lognormal (extremal)
    coefficients at alpha = 1 with Pareto(1) noise: rho x P(R > x) /
    Ltilde(x) in [0.75, 1.25] at every level with >= 20 exceedances,
    x in [e^6, e^9], n = 10^7 draws each.
    """
    cost = timings.get("tp_batch", 0.0) + timings.get("ext_batch", 0.0)
    with criterion("first-order-tail-affine+extremal", budget=1200.0, cost=cost):
        for key, model, batch in (
            ("tp_batch", tp_model, tp_batch),
            ("ext_batch", ext_model, ext_batch),
        ):
            rep = analysis.first_order_ratio(model, analysis.empirical_tail(batch))
            assert rep.band == (0.75, 1.25)
            assert rep.passed is True
            assert rep.summary["levels_used"] == 13  # every level clears 20 exceedances
            assert timings.get(key, 0.0) <= 590.0  # per-recursion budget


def test_second_order_boundedness(ln_model, ln_batch, timings):
    """Second-order residual of the affine tail stays bounded.

    With a Pareto(1) noise (L constant = 1) the residual
    x P(R > x) - Ltilde(x)/rho should show no trend in log x: slope
    within 2 combined standard errors of 0.  The coupled estimate of
    E min{AR, B}_+^alpha / (alpha rho) must be finite and stable
    between the two halves of the sample.
    """
    with criterion("second-order-boundedness", budget=900.0, cost=timings.get("ln_batch", 0.0)):
        coupled = analysis.coupled_constant(ln_model, ln_batch.raw, seed=ln_batch.seed + 1)
        rep = analysis.second_order_residual(
            ln_model, analysis.empirical_tail(ln_batch), coupled=coupled
        )
        assert rep.passed is True
        assert abs(rep.summary["slope_z"]) <= 2.0
        assert math.isfinite(coupled["value"]) and coupled["value"] > 0.0
        # halves differ by ~2 se_full in distribution; 6 is the 3-sigma band
        half_gap = abs(coupled["halves"][0] - coupled["halves"][1])
        assert half_gap <= 6.0 * coupled["se"]


def test_signed_coefficient_reduction(signed_model, signed_batch, signed_ladder, timings):
    """Signed coefficients via the ladder construction of |Pi_n|.

    At the ladder epoch N: E Pi_N^alpha = 1 and E Pi_N^alpha log Pi_N =
    2 rho, each within 3 SE at 10^6 draws; the sampled ladder value
    R_N^* has P(R_N^* > t) within 20% of P(|B| > t) at the 1e-3 level;
    and the full signed model's tail ratio against Ltilde(x)/(2 rho)
    holds the +-25% band.
    """
    cost = timings.get("signed_batch", 0.0) + timings.get("signed_ladder", 0.0)
    with criterion("signed-coefficient-reduction", budget=900.0, cost=cost):
        lc = analysis.ladder_checks(signed_model, signed_ladder)
        assert abs(lc["alpha_moment_z"]) <= 3.0
        assert abs(lc["log_moment_z"]) <= 3.0
        assert lc["log_moment_target"] == 2.0 * signed_model.rho
        assert abs(lc["tail_ratio"] - 1.0) <= 0.20

        rep = analysis.first_order_ratio(signed_model, analysis.empirical_tail(signed_batch))
        assert rep.normalization == "2rho"
        assert rep.band == (0.75, 1.25)
        assert rep.passed is True


def test_regime_trichotomy(tp_model, tp_batch, sub_model, sub_batch, light_model, light_batch, timings):
    """The three tail regimes each stabilize their own statistic.

    Subcritical: P(R>x)/P(B>x); critical-light: x^alpha P(R>x);
    critical-heavy: x^alpha P(R>x)/Ltilde(x).  Top-decade variation of
    each plateau stays under 25%.
    """
    cost = sum(timings.get(k, 0.0) for k in ("tp_batch", "sub_batch", "light_batch"))
    with criterion("regime-trichotomy", budget=600.0, cost=cost):
        out = analysis.regime_compare(
            [(sub_model, sub_batch), (light_model, light_batch), (tp_model, tp_batch)]
        )
        expected = {
            "subcritical": "p_hat/S_B",
            "critical-light": "x^a*p_hat",
            "critical-heavy": "x^a*p_hat/Ltilde",
        }
        assert set(out) == set(expected)
        for regime, stat in expected.items():
            res = out[regime]
            assert res["stat"] == stat
            assert res["passed"] is True
            assert res["top_decade_variation"] < 0.25


def test_worker_determinism(tmp_path):
    """Re-running an experiment must reproduce every artifact byte,
    regardless of the worker count (runinfo.txt is the wall-clock log
    and is the one file exempt)."""
    with criterion("worker-determinism"):
        cfg = {
            "model": {
                "kind": "affine",
                "coeff": {
                    "family": "two-point",
                    "calibrate": {"alpha": 1.0, "a1": 2.0, "a2": math.exp(-1)},
                },
                "noise": {"family": "constant", "alpha": 1.0, "x_b": 1.0},
            },
            "grid": {"lo": math.exp(6.0), "hi": math.exp(8.0), "count": 5},
            "run": {"samples": 200000, "seed": 17},
            "checks": ["first-order"],
        }
        outs = [tmp_path / name for name in ("w1", "w4", "w4-again")]
        for out, workers in zip(outs, (1, 4, 4)):
            run_cfg = json.loads(json.dumps(cfg))
            run_cfg["run"].update({"out": str(out), "workers": workers})
            path = tmp_path / f"{out.name}.json"
            path.write_text(json.dumps(run_cfg))
            assert cli.main(["check", "--config", str(path)]) == 0
        for name in ("batch.csv", "report.csv", "summary.txt", "manifest.json"):
            blobs = [(out / name).read_bytes() for out in outs]
            assert blobs[0] == blobs[1] == blobs[2], name
