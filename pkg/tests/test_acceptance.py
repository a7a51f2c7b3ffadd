"""End-to-end acceptance checks.

One test per shipping criterion; each prints a single live
"ACCEPTANCE n: PASS|FAIL" line so a full run reads as a checklist.
Statistical comparisons use three standard errors; deterministic
comparisons use the stated absolute tolerances.
"""

import json
import time

import numpy as np
import pytest
from scipy import stats

import classdp as cd
from classdp.cli import main
from classdp.rng import derive_seed
from conftest import equal_cov_pair, random_ensemble, random_gaussian


def _report(capsys, n, ok, detail=""):
    with capsys.disabled():
        status = "PASS" if ok else "FAIL"
        suffix = f"  ({detail})" if detail else ""
        print(f"\nACCEPTANCE {n}: {status}{suffix}")
    assert ok, detail


def test_criterion_1_monte_carlo_matches_closed_form(capsys):
    """20 equal-covariance pairs, eps in {0, .5, 1, 2}: MC tail within 3 binomial SE."""
    t0 = time.perf_counter()
    eps = np.array([0.0, 0.5, 1.0, 2.0])
    n = 100_000
    worst = 0.0
    ok = True
    for i in range(20):
        rng = np.random.default_rng(1000 + i)
        dim = int(rng.integers(1, 6))
        first, second = equal_cov_pair(rng, dim, offset_scale=float(rng.uniform(0.3, 1.5)))
        r = float(np.linalg.norm(cd.pair_geometry(first, second).mean_offset))
        deltas, _ = cd.delta_monte_carlo(first, second, eps, n=n, seed=derive_seed(31, i))
        for e, d in zip(eps, deltas):
            exact = cd.delta_exact_equal_cov(r, float(e))
            se = np.sqrt(exact * (1.0 - exact) / n)
            gap = abs(d - exact)
            if se > 0.0:
                worst = max(worst, gap / se)
            ok = ok and gap <= 3.0 * se
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 30.0
    _report(capsys, 1, ok, f"worst gap {worst:.2f} SE, {elapsed:.1f}s")


def test_criterion_2_whitened_loss_equals_log_density_ratio(capsys):
    """50 random pairs up to dim 5: whitened loss equals the scipy ratio to 1e-9."""
    worst = 0.0
    for i in range(50):
        rng = np.random.default_rng(2000 + i)
        dim = int(rng.integers(1, 6))
        first = random_gaussian(rng, "a", dim)
        second = random_gaussian(rng, "b", dim)
        geo = cd.pair_geometry(first, second)
        xi = rng.standard_normal((10, dim))
        qs = first.mean + xi @ (cd.matrix_sqrt_sym(first.covariance) @ geo.eigvecs).T
        oracle = stats.multivariate_normal(first.mean, first.covariance).logpdf(qs) - stats.multivariate_normal(
            second.mean, second.covariance
        ).logpdf(qs)
        oracle = np.atleast_1d(oracle)
        worst = max(worst, float(np.max(np.abs(cd.whitened_loss(geo, xi) - oracle))))
        worst = max(worst, float(np.max(np.abs(cd.privacy_loss(qs, first, second) - oracle))))
    _report(capsys, 2, worst <= 1e-9, f"max |difference| {worst:.2e}")


def test_criterion_3_chernoff_upper_bounds_monte_carlo(capsys):
    """20 unequal-covariance pairs: optimized bound sits above MC - 3 SE; collapse exact."""
    eps = np.linspace(0.0, 2.0, 9)
    n = 30_000
    ok = True
    worst = 0.0
    for i in range(20):
        rng = np.random.default_rng(3000 + i)
        dim = int(rng.integers(1, 5))
        first = random_gaussian(rng, "a", dim)
        second = random_gaussian(rng, "b", dim)
        geo = cd.pair_geometry(first, second)
        deltas, errs = cd.delta_monte_carlo(first, second, eps, n=n, seed=derive_seed(32, i))
        for j, e in enumerate(eps):
            bound = cd.chernoff_delta_bound(geo, float(e))
            slack = bound - (deltas[j] - 3.0 * max(errs[j], 1.0 / n))
            worst = min(worst, slack) if j or i else slack
            ok = ok and slack >= 0.0
    # degenerate geometry: identical classes at s = 2, eps = 1 give exactly e^-1
    same = cd.ClassGaussian(label="x", mean=np.zeros(2), covariance=np.eye(2))
    other = cd.ClassGaussian(label="y", mean=np.zeros(2), covariance=np.eye(2))
    collapse = cd.chernoff_delta_bound(cd.pair_geometry(same, other), 1.0, s=2.0)
    ok = ok and abs(collapse - 0.36787944117144233) <= 1e-12
    _report(capsys, 3, ok, f"min slack {worst:.2e}, collapse off by {abs(collapse - np.exp(-1)):.1e}")


def test_criterion_4_descent_and_extraction_invariants(capsys):
    """100 random ensembles: monotone envelope, bounded iterations, budgeted PSD noise."""
    ok = True
    for i in range(100):
        rng = np.random.default_rng(4000 + i)
        n_classes = int(rng.integers(2, 5))
        dim = int(rng.integers(1, 5))
        rho = float(rng.uniform(0.3, 3.0))
        ens = random_ensemble(rng, n_classes, dim)
        spec, trace, _ = cd.design_noise(ens, cd.AccuracyBudget(rho))
        costs = [s.cost for s in trace.steps] + [trace.final_cost]
        ok = ok and all(b < a for a, b in zip(costs, costs[1:]))
        ok = ok and len(trace.steps) <= 10_000
        ok = ok and trace.final_cost <= trace.initial_cost
        for label in spec.labels:
            cov = spec.covariance_for(label)
            ok = ok and abs(float(np.trace(cov)) - rho) <= 1e-9 * rho
            ok = ok and float(np.linalg.eigvalsh(cov).min()) >= -1e-9 * rho
        if not ok:
            break
    _report(capsys, 4, ok, f"instance {i}" if not ok else "100 instances")


def test_criterion_5_designed_noise_dominates_white(capsys):
    """Four collinear classes, rho in {0.5, 1, 2}: optimized <= white <= no-noise + 3 SE."""
    t0 = time.perf_counter()
    root = 20240801
    eps = np.linspace(0.1, 1.0, 20)
    n = 100_000
    ens = cd.gen_synthetic_scenario(4, 2, seed=0)
    none_curve = cd.epsilon_delta_curve(ens, None, eps, n=n, seed=derive_seed(root, 0))
    ok = True
    margins = []
    for i, rho in enumerate((0.5, 1.0, 2.0)):
        white = cd.white_noise_spec(ens.labels, 2, rho)
        spec, _, _ = cd.design_noise(ens, cd.AccuracyBudget(rho))
        white_curve = cd.epsilon_delta_curve(ens, white, eps, n=n, seed=derive_seed(root, 1, i))
        opt_curve = cd.epsilon_delta_curve(ens, spec, eps, n=n, seed=derive_seed(root, 2, i))
        se_ow = np.sqrt(white_curve.std_errors**2 + opt_curve.std_errors**2)
        se_wn = np.sqrt(white_curve.std_errors**2 + none_curve.std_errors**2)
        ok = ok and bool(np.all(opt_curve.deltas <= white_curve.deltas + 3.0 * se_ow))
        ok = ok and bool(np.all(white_curve.deltas <= none_curve.deltas + 3.0 * se_wn))
        margins.append(float(np.min(white_curve.deltas + 3.0 * se_ow - opt_curve.deltas)))
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 300.0
    _report(capsys, 5, ok, f"min margin {min(margins):+.4f}, {elapsed:.1f}s")


def test_criterion_6_forecast_statistics_match_closed_forms(capsys):
    """Gaussian conditioning vs brute-force Schur at 1e-10; AR(1) autocovariance at 1e-8."""
    ok = True
    worst = 0.0
    for i in range(10):
        rng = np.random.default_rng(5000 + i)
        g = rng.standard_normal((8, 8))
        cov = g @ g.T + 0.5 * np.eye(8)
        mu = rng.standard_normal(8)
        obs = rng.standard_normal(5)
        dist = cd.conditional_forecast(cov, mu, obs)
        oo, ou, uu = cov[:5, :5], cov[:5, 5:], cov[5:, 5:]
        mean_ref = mu[5:] + ou.T @ np.linalg.solve(oo, obs - mu[:5])
        cov_ref = uu - ou.T @ np.linalg.solve(oo, ou)
        worst = max(worst, float(np.max(np.abs(dist.mean - mean_ref))))
        worst = max(worst, float(np.max(np.abs(dist.covariance - cov_ref))))
    ok = ok and worst <= 1e-10
    acv_worst = 0.0
    for phi, sig in ((0.8, 1.3), (-0.6, 0.7), (0.95, 2.0)):
        model = cd.ArmaModel(ar=(-phi,), ma=(sig,))
        acv = cd.autocovariance(model, 6)
        ref = np.array([sig * sig * phi**tau / (1.0 - phi * phi) for tau in range(7)])
        acv_worst = max(acv_worst, float(np.max(np.abs(acv - ref) / np.abs(ref))))
    ok = ok and acv_worst <= 1e-8
    _report(capsys, 6, ok, f"conditioning {worst:.1e}, autocovariance rel {acv_worst:.1e}")


def _pipeline_inputs():
    period, history, horizon = 8, 16, 4
    histories = {}
    for j, label in enumerate(("ha", "hb")):
        rng = np.random.default_rng(60 + j)
        t = np.arange(320)
        histories[label] = np.exp(
            0.4 * np.sin(2 * np.pi * t / period) + 0.05 * rng.standard_normal(320) + 1.0
        )
    models = {
        "ha": cd.ArmaModel(ar=(-0.5,), ma=(1.0,)),
        "hb": cd.ArmaModel(ar=(-0.3,), ma=(1.0, 0.2)),
    }
    graph = cd.NeighborhoodGraph.complete(["ha", "hb"])
    return histories, models, graph, period, history, horizon


def test_criterion_7_pipeline_consistency(capsys):
    """Zero noise reproduces the plain forecast exactly; the reported curve is reproducible."""
    histories, models, graph, period, history, horizon = _pipeline_inputs()
    eps = np.linspace(0.2, 1.0, 5)
    ok = True
    zero = cd.dp_forecast_pipeline(
        histories, models, graph, rho=0.0, seed=77, horizon=horizon, history=history,
        period=period, noise=cd.zero_noise_spec(["ha", "hb"], horizon), epsilons=eps, mc_samples=5000,
    )
    for label in ("ha", "hb"):
        seasonal = cd.to_log_residual(histories[label], period)
        dist = cd.forecast_distribution(models[label], seasonal.residuals, history, horizon)
        direct = cd.from_log_residual(dist.mean, seasonal.phase_means(seasonal.length, horizon))
        art = zero.forecasts[label]
        ok = ok and np.array_equal(art.released_log, art.mean_log)
        ok = ok and np.array_equal(art.mean, direct) and np.array_equal(art.released, direct)

    noisy = cd.dp_forecast_pipeline(
        histories, models, graph, rho=0.3, seed=77, horizon=horizon, history=history,
        period=period, epsilons=eps, mc_samples=5000,
    )
    same_seed = cd.epsilon_delta_curve(
        noisy.ensemble, noisy.noise, eps, n=5000, seed=derive_seed(77, 1)
    )
    ok = ok and np.array_equal(noisy.curve.deltas, same_seed.deltas)
    fresh = cd.epsilon_delta_curve(noisy.ensemble, noisy.noise, eps, n=5000, seed=123456)
    se = np.sqrt(noisy.curve.std_errors**2 + fresh.std_errors**2)
    ok = ok and bool(np.all(np.abs(noisy.curve.deltas - fresh.deltas) <= 3.0 * np.maximum(se, 1.0 / 5000)))
    _report(capsys, 7, ok)


def test_criterion_8_cli_outputs_are_reproducible(capsys, tmp_path):
    """Same seed, same flags: every CSV, JSON, and SVG byte-identical across reruns."""
    config = tmp_path / "config.json"
    config.write_text(
        json.dumps(
            {
                "classes": 3,
                "dim": 2,
                "rhos": [0.5, 1.0],
                "epsilons": list(np.linspace(0.2, 1.0, 5)),
                "mc_samples": 2000,
                "seed": 9,
            }
        )
    )
    histories, _, _, period, history, horizon = _pipeline_inputs()
    inputs = []
    for label, series in histories.items():
        p = tmp_path / f"{label}.csv"
        p.write_text("".join(f"{float(v)!r}\n" for v in series))
        inputs.append(str(p))

    ok = True
    runs = {}
    for tag in ("one", "two"):
        out = tmp_path / f"curve_{tag}"
        ok = ok and main(["--config", str(config), "--out", str(out), "curve"]) == 0
        runs[tag] = out
    curve_names = [p.name for p in runs["one"].iterdir() if p.suffix in (".csv", ".json", ".svg")]
    mismatch = []
    for name in sorted(curve_names):
        if name == "manifest.json":
            continue
        if (runs["one"] / name).read_bytes() != (runs["two"] / name).read_bytes():
            mismatch.append(name)

    priv_args = [
        "privatize", "--inputs", *inputs, "--rho", "0.3", "--ar", "1", "--ma", "1",
        "--period", str(period), "--history", str(history), "--horizon", str(horizon), "--mc", "2000",
    ]
    for tag in ("one", "two"):
        out = tmp_path / f"priv_{tag}"
        ok = ok and main(["--seed", "5", "--out", str(out), *priv_args]) == 0
    for name in ("forecast_ha.csv", "forecast_hb.csv", "curve.csv", "trace.csv", "noise_spec.json", "forecasts.svg"):
        if (tmp_path / "priv_one" / name).read_bytes() != (tmp_path / "priv_two" / name).read_bytes():
            mismatch.append(name)
    ok = ok and not mismatch
    _report(capsys, 8, ok, f"mismatched: {mismatch}" if mismatch else "all byte-identical")
