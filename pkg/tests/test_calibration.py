"""Calibrator tests: objective assembly, fit metrics, the genetic global stage on
analytic objectives, local refinement, model variants, and a small end-to-end fit."""
import datetime as dt

import numpy as np
import pytest
from numpy.testing import assert_allclose

from roughvol.calibration import (
    CalibrationConfig,
    FrozenPricer,
    ParamBounds,
    calibrate,
    fit_metrics,
    format_pct,
    global_search,
    local_refine,
    objective,
)
from roughvol.fbm import build_joint_covariance, draw_normal_bundle, transform_normals
from roughvol.market import OptionQuote, OptionStructure, compute_weights
from roughvol.model import PARAM_NAMES, MarketEnv, ModelParams, volatility_paths
from roughvol.pricing import chain_estimates
from roughvol.synth import generate_chain

THETA = ModelParams(sigma0=0.08, rho=-0.3, H=0.2, xi=1.0, alpha=1.0)


def small_structure():
    quotes = [
        OptionQuote(strike=k, maturity=t, bid=c - 0.05, ask=c + 0.05, close=c)
        for k, t, c in [(90.0, 0.25, 11.0), (100.0, 0.25, 3.2), (110.0, 0.25, 0.4),
                        (100.0, 0.5, 4.5), (110.0, 0.5, 1.1)]
    ]
    return OptionStructure(quotes=quotes, env=MarketEnv(spot=100.0, rate=0.0),
                           trade_date=dt.date(2026, 1, 2),
                           weights=compute_weights(quotes))


def fast_config(**kwargs):
    base = dict(path_count=2000, steps_per_year=12, seed=5, ga_population=20,
                ga_generations=2)
    base.update(kwargs)
    return CalibrationConfig(**base)


# ---------------------------------------------------------------------------
# bounds and config


def test_default_bounds_box():
    b = ParamBounds.default()
    assert_allclose(b.lower, [0.01, -1.0, 0.05, 0.01, 0.0])
    assert_allclose(b.upper, [0.20, -0.05, 0.25, 3.00, 1.0])
    assert np.all(b.free)


def test_bounds_fixing_and_clip():
    b = ParamBounds.default().with_fixed(alpha=1.0, H=0.1)
    assert list(b.free) == [True, True, False, True, False]
    clipped = b.clip(np.array([0.5, -2.0, 0.9, 1.0, 0.2]))
    assert_allclose(clipped, [0.20, -1.0, 0.1, 1.0, 1.0])


def test_bounds_validation():
    with pytest.raises(ValueError):
        ParamBounds(lower=np.zeros(4), upper=np.ones(4))
    with pytest.raises(ValueError):
        ParamBounds(lower=np.ones(5), upper=np.zeros(5))


@pytest.mark.parametrize("kwargs", [
    dict(ga_population=0), dict(ga_generations=-1), dict(obj_tol=0.0),
    dict(path_count=0), dict(model_variant="heston"),
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        fast_config(**kwargs)


@pytest.mark.parametrize("variant,index,value", [
    ("RFSV", 4, 0.0), ("rBergomi", 4, 1.0), ("fixed_H", 2, 0.5),
])
def test_variant_bound_collapse(variant, index, value):
    b = fast_config(model_variant=variant).effective_bounds()
    assert b.lower[index] == b.upper[index] == value
    assert fast_config().effective_bounds().free.all()


# ---------------------------------------------------------------------------
# metrics and objective assembly


def test_fit_metrics_arithmetic():
    quotes = [OptionQuote(strike=100.0, maturity=0.5, bid=9.9, ask=10.1, close=10.0),
              OptionQuote(strike=110.0, maturity=0.5, bid=9.9, ask=10.1, close=10.0)]
    s = OptionStructure(quotes=quotes, env=MarketEnv(spot=100.0),
                        trade_date=dt.date(2026, 1, 2), weights=[1.0, 1.0])
    m = fit_metrics(np.array([11.0, 13.0]), s)  # absolute errors 1 and 3
    assert m.aare == pytest.approx(0.2)
    assert m.mare == pytest.approx(0.3)
    assert m.arfv == pytest.approx(0.02)
    assert m.mrfv == pytest.approx(0.03)


def test_fit_metrics_size_mismatch():
    with pytest.raises(ValueError):
        fit_metrics(np.array([1.0]), small_structure())


def test_format_pct():
    assert format_pct(0.0646) == "6.46%"
    assert format_pct(0.2) == "20.00%"
    assert format_pct(0.0) == "0.00%"


def test_frozen_pricer_matches_manual_assembly():
    s = small_structure()
    config = fast_config()
    pricer = FrozenPricer(s, config)
    z, zt = draw_normal_bundle(pricer.grid.n, config.path_count, config.seed)
    cov = build_joint_covariance(pricer.grid, THETA.H)
    bundle = transform_normals(z, zt, cov)
    vols = volatility_paths(bundle, THETA, pricer.grid)
    manual = [e.price for e in chain_estimates(bundle, vols, s.env, s.options)]
    assert_allclose(pricer.prices(THETA), manual, rtol=0.0, atol=0.0)


def test_objective_is_weighted_squared_error():
    s = small_structure()
    pricer = FrozenPricer(s, fast_config())
    prices = pricer.prices(THETA)
    expected = float(np.sum(s.weights * (prices - s.closes) ** 2))
    assert pricer.objective(THETA) == pytest.approx(expected, rel=1e-12)


def test_objective_scales_with_weights():
    s = small_structure()
    scaled = OptionStructure(quotes=s.quotes, env=s.env, trade_date=s.trade_date,
                             weights=4.0 * s.weights)
    config = fast_config()
    theta = THETA.as_array()
    assert objective(theta, scaled, config) == pytest.approx(
        4.0 * objective(theta, s, config), rel=1e-12)


def test_objective_is_frozen_deterministic():
    s = small_structure()
    config = fast_config()
    theta = THETA.as_array()
    assert objective(theta, s, config) == objective(theta, s, config)


def test_pricer_threads_do_not_change_prices():
    s = small_structure()
    p1 = FrozenPricer(s, fast_config(threads=1)).prices(THETA)
    p4 = FrozenPricer(s, fast_config(threads=4)).prices(THETA)
    assert np.array_equal(p1, p4)


# ---------------------------------------------------------------------------
# global stage on analytic objectives


def quadratic_objective(target):
    width = ParamBounds.default().width

    def fn(theta):
        z = (np.asarray(theta) - target) / width
        return float(z @ z)

    return fn


def test_global_search_finds_quadratic_minimum():
    target = np.array([0.10, -0.50, 0.15, 1.50, 0.50])
    config = fast_config(ga_population=150, ga_generations=5, seed=2)
    best = global_search(None, config, objective_fn=quadratic_objective(target))
    z = np.abs(best.as_array() - target) / ParamBounds.default().width
    assert np.all(z < 0.15)


def test_global_search_deterministic_and_seed_sensitive():
    target = np.array([0.10, -0.50, 0.15, 1.50, 0.50])
    fn = quadratic_objective(target)
    a = global_search(None, fast_config(seed=3), objective_fn=fn)
    b = global_search(None, fast_config(seed=3), objective_fn=fn)
    c = global_search(None, fast_config(seed=4), objective_fn=fn)
    assert a == b
    assert a != c


def test_global_search_tiny_population():
    config = fast_config(ga_population=1, ga_generations=0, seed=0)
    best = global_search(None, config, objective_fn=lambda t: 0.0)
    bounds = ParamBounds.default()
    arr = best.as_array()
    assert np.all(arr >= bounds.lower) and np.all(arr <= bounds.upper)


def test_global_search_respects_variant_collapse():
    config = fast_config(model_variant="rBergomi", ga_population=30,
                         ga_generations=1, seed=1)
    best = global_search(None, config, objective_fn=lambda t: float(np.sum(t**2)))
    assert best.alpha == 1.0


# ---------------------------------------------------------------------------
# local stage


def linear_residuals(target):
    def fn(theta):
        return 10.0 * (np.asarray(theta) - target)

    return fn


def test_local_refine_converges_to_interior_minimum():
    target = np.array([0.10, -0.50, 0.15, 1.50, 0.50])
    start = ModelParams(sigma0=0.05, rho=-0.9, H=0.08, xi=2.5, alpha=0.9)
    result = local_refine(start, None, fast_config(),
                          residual_fn=linear_residuals(target))
    assert_allclose(result.theta.as_array(), target, atol=1e-6)
    assert result.objective < 1e-9
    assert result.metrics is None


def test_local_refine_from_bound_start():
    target = np.array([0.10, -0.50, 0.15, 1.50, 0.50])
    start = ModelParams(sigma0=0.20, rho=-0.05, H=0.25, xi=3.0, alpha=1.0)  # corner
    result = local_refine(start, None, fast_config(),
                          residual_fn=linear_residuals(target))
    assert_allclose(result.theta.as_array(), target, atol=1e-6)


def test_local_refine_minimum_on_bound():
    # unconstrained optimum has alpha = 1.4; the box clips it at 1.0
    target = np.array([0.10, -0.50, 0.15, 1.50, 1.4])
    start = ModelParams(sigma0=0.10, rho=-0.50, H=0.15, xi=1.50, alpha=0.1)
    result = local_refine(start, None, fast_config(),
                          residual_fn=linear_residuals(target))
    assert result.theta.alpha == pytest.approx(1.0, abs=1e-9)


def test_local_refine_never_worsens_objective():
    target = np.array([0.10, -0.50, 0.15, 1.50, 0.50])
    start = ModelParams(sigma0=0.10, rho=-0.50, H=0.15, xi=1.50, alpha=0.50)
    result = local_refine(start, None, fast_config(),
                          residual_fn=linear_residuals(target))
    assert result.objective == pytest.approx(0.0, abs=1e-15)
    assert_allclose(result.theta.as_array(), target, atol=1e-9)


def test_local_refine_keeps_variant_fixed_values():
    target = np.array([0.10, -0.50, 0.15, 1.50, 0.50])
    start = ModelParams(sigma0=0.12, rho=-0.40, H=0.20, xi=1.0, alpha=0.7)
    result = local_refine(start, None, fast_config(model_variant="RFSV"),
                          residual_fn=linear_residuals(target))
    assert result.theta.alpha == 0.0  # pinned exactly, despite the pull toward 0.5
    assert abs(result.theta.sigma0 - 0.10) < 1e-6


def test_local_refine_all_parameters_fixed():
    bounds = ParamBounds(lower=THETA.as_array(), upper=THETA.as_array())
    result = local_refine(THETA, None, fast_config(bounds=bounds),
                          residual_fn=lambda t: np.array([1.0]))
    assert result.theta == THETA
    assert result.iterations["local"]["message"] == "all parameters fixed"


def test_local_refine_rejects_non_finite_start():
    with pytest.raises(ValueError, match="not finite"):
        local_refine(THETA, None, fast_config(),
                     residual_fn=lambda t: np.array([np.nan]))


# ---------------------------------------------------------------------------
# end to end on a synthetic chain


@pytest.fixture(scope="module")
def synth_chain():
    return generate_chain(THETA, MarketEnv(spot=100.0, rate=0.0),
                          strikes=[95.0, 100.0, 105.0], maturity_days=[30, 91],
                          steps_per_year=24, path_count=4000, seed=11,
                          rel_spread=0.02)


def test_calibrate_end_to_end(synth_chain):
    config = fast_config(model_variant="rBergomi", ga_population=16,
                         ga_generations=1, path_count=1500, steps_per_year=12, seed=7)
    result = calibrate(synth_chain, config)
    arr = result.theta.as_array()
    bounds = config.effective_bounds()
    assert np.all(arr >= bounds.lower) and np.all(arr <= bounds.upper)
    assert result.theta.alpha == 1.0
    assert result.metrics is not None
    assert result.metrics.aare >= 0.0
    history = result.iterations["ga_best_per_generation"]
    assert len(history) == config.ga_generations + 1
    assert result.objective <= history[-1] + 1e-12  # local stage only improves
    assert result.iterations["local"]["nfev"] >= 1


def test_calibrate_is_deterministic(synth_chain):
    config = fast_config(ga_population=8, ga_generations=1, path_count=1000,
                         steps_per_year=12, seed=13)
    a = calibrate(synth_chain, config)
    b = calibrate(synth_chain, config)
    assert a.theta == b.theta
    assert a.objective == b.objective
