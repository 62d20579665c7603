"""Weighted least-squares calibration: genetic global stage + trust-region refinement.

The objective G(Theta) = sum_i w_i (C_i^Theta - C_i^mkt)^2 is a Monte-Carlo quantity;
evaluated naively it is noisy and finite-difference Jacobians are meaningless. The
calibrator therefore freezes the standard-normal draws once per run (common random
numbers): every parameter evaluation rebuilds the joint covariance for its own Hurst
index, refactorizes, and pushes the same frozen draws through it, making Theta -> G a
deterministic, smooth function of the parameters.

The global stage is a small genetic algorithm over the bounded box (tournament
selection of size 3, per-gene blend crossover, Gaussian mutation with sigma = 5% of the
bound width, elitism of 2). The local stage is bound-constrained least squares on the
residual vector sqrt(w_i) (C_i^Theta - C_i^mkt) with one-sided finite differences of
step 1e-4 x bound width. Model variants fix parameters by collapsing their bounds
(lower = upper); collapsed components are removed from the optimizer's vector and
reinstated exactly on output.
"""
from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares

from .fbm import TimeGrid, build_joint_covariance, draw_normal_bundle, transform_normals
from .market import OptionStructure
from .model import PARAM_NAMES, ModelParams, volatility_paths
from .pricing import chain_estimates

__all__ = [
    "ParamBounds",
    "CalibrationConfig",
    "CalibrationResult",
    "FitMetrics",
    "FrozenPricer",
    "format_pct",
    "fit_metrics",
    "objective",
    "global_search",
    "local_refine",
    "calibrate",
]

MODEL_VARIANTS = ("alphaRFSV", "RFSV", "rBergomi", "fixed_H")

#: sub-stream tag for the genetic algorithm's RNG (path blocks use tag 0).
_STREAM_GA = 1


@dataclass(frozen=True)
class ParamBounds:
    """Componentwise box for (sigma0, rho, H, xi, alpha); collapsed bounds fix a value."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != (5,) or upper.shape != (5,):
            raise ValueError("bounds must cover the 5 model parameters")
        if np.any(lower > upper):
            raise ValueError("lower bounds must not exceed upper bounds")

    @classmethod
    def default(cls) -> "ParamBounds":
        return cls(lower=np.array([0.01, -1.0, 0.05, 0.01, 0.0]),
                   upper=np.array([0.20, -0.05, 0.25, 3.00, 1.0]))

    def with_fixed(self, **fixed: float) -> "ParamBounds":
        """Collapse named parameters to exact values (lower = upper)."""
        lower, upper = self.lower.copy(), self.upper.copy()
        for name, value in fixed.items():
            i = PARAM_NAMES.index(name)
            lower[i] = upper[i] = float(value)
        return ParamBounds(lower=lower, upper=upper)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def free(self) -> np.ndarray:
        return self.width > 0.0

    def clip(self, theta: np.ndarray) -> np.ndarray:
        return np.clip(theta, self.lower, self.upper)


@dataclass(frozen=True)
class CalibrationConfig:
    bounds: ParamBounds = field(default_factory=ParamBounds.default)
    ga_population: int = 150
    ga_generations: int = 5
    obj_tol: float = 1e-6
    step_tol: float = 1e-7
    path_count: int = 20_000
    steps_per_year: int = 1008
    seed: int = 0
    weight_rule: str = "inv_spread_sq"
    model_variant: str = "alphaRFSV"
    fd_rel_step: float = 1e-4
    threads: int = 1

    def __post_init__(self):
        if self.ga_population < 1 or self.ga_generations < 0:
            raise ValueError("GA needs population >= 1 and generations >= 0")
        if self.obj_tol <= 0.0 or self.step_tol <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.path_count < 1 or self.steps_per_year < 1:
            raise ValueError("path_count and steps_per_year must be positive")
        if self.model_variant not in MODEL_VARIANTS:
            raise ValueError(f"unknown model variant {self.model_variant!r}")

    def effective_bounds(self) -> ParamBounds:
        """Variant-specific bound collapse: one code path for all four model variants."""
        if self.model_variant == "RFSV":
            return self.bounds.with_fixed(alpha=0.0)
        if self.model_variant == "rBergomi":
            return self.bounds.with_fixed(alpha=1.0)
        if self.model_variant == "fixed_H":
            return self.bounds.with_fixed(H=0.5)
        return self.bounds


@dataclass(frozen=True)
class FitMetrics:
    """Price-error summaries: relative to each market price (AARE/MARE) and to spot
    (ARFV/MRFV)."""

    aare: float
    mare: float
    arfv: float
    mrfv: float


def format_pct(x: float) -> str:
    """Render a fraction the way report tables do: 0.0646 -> '6.46%'."""
    return f"{100.0 * x:.2f}%"


def fit_metrics(model_prices, structure: OptionStructure) -> FitMetrics:
    model_prices = np.asarray(model_prices, dtype=float)
    if model_prices.size == 0 or structure.n == 0:
        raise ValueError("cannot compute metrics on an empty chain")
    if model_prices.size != structure.n:
        raise ValueError("one model price per quote required")
    abs_err = np.abs(model_prices - structure.closes)
    rel = abs_err / structure.closes
    rfv = abs_err / structure.env.spot
    return FitMetrics(aare=float(rel.mean()), mare=float(rel.max()),
                      arfv=float(rfv.mean()), mrfv=float(rfv.max()))


@dataclass(eq=False)
class CalibrationResult:
    theta: ModelParams
    objective: float
    metrics: FitMetrics | None
    iterations: dict
    seed: int

    def to_dict(self) -> dict:
        out = {
            "theta": {name: getattr(self.theta, name) for name in PARAM_NAMES},
            "objective": self.objective,
            "seed": self.seed,
            "iterations": self.iterations,
        }
        if self.metrics is not None:
            out["metrics"] = {"aare": self.metrics.aare, "mare": self.metrics.mare,
                              "arfv": self.metrics.arfv, "mrfv": self.metrics.mrfv}
        return out


class FrozenPricer:
    """Deterministic Theta -> model-price map over frozen normal draws.

    Construction draws the normals once (per config seed) on the union grid of the
    chain's maturities; each call rebuilds the covariance for the requested Hurst
    index and transforms the same draws. Thread count affects wall time only.
    """

    def __init__(self, structure: OptionStructure, config: CalibrationConfig):
        self.structure = structure
        self.config = config
        self.grid = TimeGrid.with_maturities(sorted(set(structure.maturities)),
                                             config.steps_per_year)
        self._z, self._z_tilde = draw_normal_bundle(
            self.grid.n, config.path_count, config.seed, threads=config.threads)
        self._sqrt_w = np.sqrt(structure.weights)
        self._closes = structure.closes
        self._options = structure.options
        self._cov_cache: tuple[float, object] | None = None

    def _covariance(self, H: float):
        cache = self._cov_cache  # snapshot: parallel evaluations may swap the cache
        if cache is not None and cache[0] == H:
            return cache[1]
        cov = build_joint_covariance(self.grid, H)
        self._cov_cache = (H, cov)
        return cov

    def prices(self, theta) -> np.ndarray:
        params = theta if isinstance(theta, ModelParams) else ModelParams.from_array(theta)
        cov = self._covariance(params.H)
        bundle = transform_normals(self._z, self._z_tilde, cov)
        vols = volatility_paths(bundle, params, self.grid)
        estimates = chain_estimates(bundle, vols, self.structure.env, self._options,
                                    estimator="conditional_mixed")
        return np.array([e.price for e in estimates])

    def residuals(self, theta) -> np.ndarray:
        return self._sqrt_w * (self.prices(theta) - self._closes)

    def objective(self, theta) -> float:
        r = self.residuals(theta)
        return float(r @ r)


def objective(theta, structure: OptionStructure, config: CalibrationConfig) -> float:
    """G(Theta) under frozen noise: identical (theta, structure, config) give identical
    values. One-shot convenience; inside a calibration the pricer is built once."""
    return FrozenPricer(structure, config).objective(np.asarray(theta, dtype=float))


def _evaluate_all(objective_fn, thetas, threads: int) -> np.ndarray:
    if threads <= 1 or len(thetas) == 1:
        return np.array([objective_fn(t) for t in thetas])
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return np.array(list(pool.map(objective_fn, thetas)))


def _ga_minimize(config: CalibrationConfig, objective_fn):
    """Genetic minimization core; returns (best theta array, best value per generation)."""
    bounds = config.effective_bounds()
    lower, width = bounds.lower, bounds.width
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), _STREAM_GA]))
    pop_size = config.ga_population
    n_elite = min(2, pop_size)

    pop = lower + rng.uniform(size=(pop_size, 5)) * width
    values = _evaluate_all(objective_fn, list(pop), config.threads)
    best_idx = int(np.argmin(values))
    best_theta, best_value = pop[best_idx].copy(), float(values[best_idx])
    history = [best_value]

    for _ in range(config.ga_generations):
        order = np.argsort(values, kind="stable")
        new_pop = [pop[i].copy() for i in order[:n_elite]]
        while len(new_pop) < pop_size:
            # tournament selection, size 3
            parents = []
            for _ in range(2):
                contenders = rng.integers(0, pop_size, size=3)
                parents.append(pop[contenders[np.argmin(values[contenders])]])
            # per-gene blend crossover, then Gaussian mutation at 5% of bound width
            mix = rng.uniform(size=5)
            child = mix * parents[0] + (1.0 - mix) * parents[1]
            child += rng.standard_normal(5) * 0.05 * width
            new_pop.append(bounds.clip(child))
        pop = np.array(new_pop)
        values = _evaluate_all(objective_fn, list(pop), config.threads)
        gen_best = int(np.argmin(values))
        if values[gen_best] < best_value:
            best_theta, best_value = pop[gen_best].copy(), float(values[gen_best])
        history.append(float(values[gen_best]))
    return best_theta, history


def global_search(structure: OptionStructure | None, config: CalibrationConfig,
                  objective_fn=None) -> ModelParams:
    """Genetic minimization over the bounded box; returns the best individual seen.

    Deterministic given the config seed. ``objective_fn`` defaults to the frozen
    Monte-Carlo objective; tests inject analytic objectives through it.
    """
    if objective_fn is None:
        objective_fn = FrozenPricer(structure, config).objective
    best_theta, _ = _ga_minimize(config, objective_fn)
    return ModelParams.from_array(best_theta)


def _fd_jacobian(residual_fn, x, r0, steps, lower, upper):
    """One-sided finite differences, step flipped at the upper bound."""
    jac = np.empty((r0.size, x.size))
    for k in range(x.size):
        h = steps[k]
        if x[k] + h > upper[k]:
            h = -h
        xk = x.copy()
        xk[k] += h
        jac[:, k] = (residual_fn(xk) - r0) / h
    return jac


def local_refine(start: ModelParams, structure: OptionStructure | None,
                 config: CalibrationConfig, residual_fn=None,
                 pricer: FrozenPricer | None = None) -> CalibrationResult:
    """Bound-constrained least squares from ``start`` under frozen noise.

    Stops when the objective improvement falls below obj_tol or the step norm below
    step_tol; the final objective never exceeds the starting one. Fixed (collapsed)
    parameters are excluded from the optimization vector and reported unchanged.
    """
    bounds = config.effective_bounds()
    if residual_fn is None:
        if pricer is None:
            pricer = FrozenPricer(structure, config)
        residual_fn = pricer.residuals

    theta0 = bounds.clip(start.as_array())
    free = bounds.free
    fixed_template = theta0.copy()

    def assemble(x: np.ndarray) -> np.ndarray:
        theta = fixed_template.copy()
        theta[free] = x
        return theta

    def res(x: np.ndarray) -> np.ndarray:
        return np.asarray(residual_fn(assemble(x)), dtype=float)

    start_res = np.asarray(residual_fn(theta0), dtype=float)
    start_obj = float(start_res @ start_res)
    if not np.isfinite(start_obj):
        raise ValueError(f"objective is not finite at the starting point: {start_obj}")

    if not np.any(free):
        # fully pinned variant: nothing to optimize
        result_theta = ModelParams.from_array(theta0)
        diagnostics = {"nfev": 1, "iterations": 0, "message": "all parameters fixed"}
        metrics = fit_metrics(pricer.prices(result_theta), structure) if pricer else None
        return CalibrationResult(theta=result_theta, objective=start_obj,
                                 metrics=metrics, iterations={"local": diagnostics},
                                 seed=config.seed)

    lb, ub = bounds.lower[free], bounds.upper[free]
    steps = config.fd_rel_step * bounds.width[free]
    # trf iterates strictly inside the box; nudge an on-bound start into the interior
    x0 = np.clip(theta0[free], lb + 1e-12 * (ub - lb), ub - 1e-12 * (ub - lb))

    def jac(x: np.ndarray) -> np.ndarray:
        return _fd_jacobian(res, x, res(x), steps, lb, ub)

    ls = least_squares(res, x0, jac=jac, bounds=(lb, ub), method="trf",
                       ftol=config.obj_tol, xtol=config.step_tol, gtol=None)
    theta_arr = assemble(ls.x)
    final_res = np.asarray(residual_fn(theta_arr), dtype=float)
    final_obj = float(final_res @ final_res)
    if final_obj > start_obj:  # keep the descent contract even if trf's last trial lost
        theta_arr, final_obj = theta0, start_obj
    result_theta = ModelParams.from_array(theta_arr)
    diagnostics = {"nfev": int(ls.nfev), "njev": int(ls.njev or 0),
                   "status": int(ls.status), "message": str(ls.message),
                   "start_objective": start_obj}
    metrics = fit_metrics(pricer.prices(result_theta), structure) if pricer else None
    return CalibrationResult(theta=result_theta, objective=final_obj, metrics=metrics,
                             iterations={"local": diagnostics}, seed=config.seed)


def calibrate(structure: OptionStructure, config: CalibrationConfig) -> CalibrationResult:
    """Global genetic search followed by local refinement, one frozen path bundle."""
    pricer = FrozenPricer(structure, config)
    best_theta, history = _ga_minimize(config, pricer.objective)
    start = ModelParams.from_array(best_theta)
    result = local_refine(start, structure, config, pricer=pricer)
    result.iterations["ga_best_per_generation"] = history
    result.iterations["ga_start"] = {name: getattr(start, name) for name in PARAM_NAMES}
    return result
