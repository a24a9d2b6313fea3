"""Inference pipeline, comparison methods and the two synthetic experiments.

The fit runs five steps on detrended data:

1. short-lag variogram fit of the tapered small-scale model;
2. candidate dictionary, LASSO path with K-fold CV, selection so that the
   basis functions explain the variance left by the small-scale model;
3. EM for ``B`` and the small-scale weight;
4. re-selection on the same path with the updated small-scale variance;
5. EM for ``B`` with the small-scale weight held fixed.
"""
from __future__ import annotations

import dataclasses
import logging
import os
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np
import scipy.linalg as sla
from scipy.spatial.distance import cdist

from . import __version__
from . import io as tio
from .dictionary import BasisSpec, Dictionary, build_dictionary, evaluate_design
from .em import EMConfig, nugget_ratio_reweight, run_em
from .kernels import nonstationary_matern_matrix
from .kriging import FittedModel, TrendModel, ols_detrend, predict_variance
from .lasso import cross_validate, lasso_path, one_se_rule, select_by_variance_target
from .simulate import (RNG_NAME, Component, Grid, SpectralConfig, random_param_field,
                       sample_locations, simulate_nonstationary, simulate_spectral)
from .sparse_linalg import assemble_sparse_cov, cholesky
from .variogram import SmallScaleModel, empirical_variogram, fit_small_scale

log = logging.getLogger(__name__)

EXPERIMENTS = ("nested", "nonstat-matern")
NESTED_COMPONENTS = (Component("spherical", 0.5, 0.05), Component("exponential", 0.5, 0.1))
METHODS = ("tapering", "low-rank", "combination", "conditional-expectation")


class ConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    """Failure inside a pipeline step; ``step`` names it."""

    def __init__(self, step, cause):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass
class RunConfig:
    input: str | None = None
    experiment: str | None = None
    seed: int = 0
    trend_degree: int = 0
    taper_family: str = "spherical"
    taper_range: float = 0.025
    base_family: str = "exponential"
    base_scale: float = 0.1
    base_smoothness: float | None = None
    variogram_bins: int = 10
    max_lag: float | None = None
    basis_families: tuple = ("cubic", "spherical")
    basis_ranges: tuple = (0.5, 0.2)
    basis_angles: tuple = (0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4)
    basis_ratio: float = 2.0
    basis_spacing: tuple = (0.33, 0.44)
    n_lambdas: int = 100
    lambda_min_ratio: float = 1e-3
    cv_folds: int = 5
    remaining_variance: str = "total"
    em_tolerance: float = 1e-3
    em_patience: int = 20
    em_max_iter: int = 2000
    lowrank_max_iter: int = 500
    grid_nx: int = 200
    grid_ny: int = 200
    bounds: tuple = (0.0, 1.0, 0.0, 1.0)
    filter_nugget: bool = False
    n_samples: int = 5000
    n_waves: int = 10000
    param_nodes: int = 51
    param_scale: float = 0.5
    ce_max_points: int = 5000
    figures: bool = True
    out: str = "out"
    threads: int | None = None

    # not part of the reproducibility record
    _RUNTIME = ("out", "threads")

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.input is not None and self.experiment is not None:
            raise ConfigError("give either input or experiment, not both")
        if self.experiment is not None and self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; "
                              f"choose from {', '.join(EXPERIMENTS)}")
        if not self.taper_range > 0:
            raise ConfigError("taper_range must be > 0")
        if self.remaining_variance not in ("total", "structured"):
            raise ConfigError("remaining_variance must be 'total' or 'structured'")
        if self.grid_nx < 1 or self.grid_ny < 1:
            raise ConfigError("grid sizes must be >= 1")
        if self.trend_degree < 0:
            raise ConfigError("trend_degree must be >= 0")
        b = self.bounds
        if len(b) != 4 or b[1] <= b[0] or b[3] <= b[2]:
            raise ConfigError("bounds must be x0, x1, y0, y1 with x0 < x1 and y0 < y1")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be >= 2")
        if self.em_patience < 1 or not self.em_tolerance > 0:
            raise ConfigError("em_patience must be >= 1 and em_tolerance > 0")
        if not isinstance(self.basis_spacing, (int, float)) and \
                len(self.basis_spacing) not in (1, len(self.basis_ranges)):
            raise ConfigError("basis_spacing needs one value or one per range")
        try:
            self.basis_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def domain(self):
        x0, x1, y0, y1 = self.bounds
        return ((x0, x1), (y0, y1))

    @property
    def grid(self):
        return Grid(self.grid_nx, self.grid_ny, self.domain)

    def basis_spec(self):
        sp = self.basis_spacing
        if not isinstance(sp, (int, float)) and len(sp) == 1:
            sp = sp[0]
        return BasisSpec(tuple(self.basis_families), tuple(self.basis_ranges),
                         tuple(self.basis_angles), self.basis_ratio, sp, self.domain)

    def record(self):
        """Resolved settings sufficient to reproduce outputs."""
        d = dataclasses.asdict(self)
        for k in self._RUNTIME:
            d.pop(k)
        return d


_FIELD_TYPES = {f.name: f for f in fields(RunConfig)}


def _parse_value(name, text):
    t = text.strip()
    kind = _FIELD_TYPES[name].type
    try:
        if "tuple" in kind:
            items = [s.strip() for s in t.split(",") if s.strip()]
            if name == "basis_families":
                return tuple(items)
            return tuple(float(s) for s in items)
        if t.lower() in ("none", "null", ""):
            return None
        if "bool" in kind:
            if t.lower() in ("true", "yes", "1", "on"):
                return True
            if t.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"not a boolean: {t}")
        if kind.startswith("int"):
            return int(t)
        if kind.startswith("float"):
            return float(t)
        return t
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def parse_config_text(text, base=None):
    """Flat ``key = value`` lines with ``#`` comments; lists are comma-separated."""
    values = {} if base is None else dict(base)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES or key.startswith("_"):
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, val)
    return values


def load_config(path=None, **overrides):
    """Read a flat config file or a run manifest (``.json``) and apply overrides."""
    values = {}
    if path is not None:
        if str(path).endswith(".json"):
            try:
                rec = tio.read_json(path)["config"]
            except (KeyError, TypeError):
                raise ConfigError(f"{path}: not a run manifest") from None
            for k, v in rec.items():
                if k not in _FIELD_TYPES:
                    raise ConfigError(f"{path}: unknown key {k!r}")
                values[k] = tuple(v) if isinstance(v, list) else v
        else:
            with open(path, encoding="utf-8") as fh:
                values = parse_config_text(fh.read())
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# ------------------------------------------------------------------ fit


@dataclass
class FitResult:
    model: FittedModel
    trend: TrendModel
    residuals: np.ndarray
    variogram: object
    small_initial: SmallScaleModel
    small_updated: SmallScaleModel
    candidates: Dictionary | None = None
    candidate_columns: np.ndarray | None = None  # candidate indices kept (nonempty)
    design: object = None
    path: object = None
    first: tuple | None = None  # (k, lambda, active)
    second: tuple | None = None
    em_first: object = None
    em_final: object = None
    targets: tuple = (np.nan, np.nan)
    timings: dict = field(default_factory=dict)

    def summary(self):
        s = {
            "n": int(len(self.residuals)),
            "trend_coef": self.trend.coef,
            "residual_variance": float(np.var(self.residuals)),
            "small_scale_initial": dataclasses.asdict(self.small_initial),
            "small_scale_updated": dataclasses.asdict(self.small_updated),
            "filter_nugget": self.model.filter_nugget,
        }
        if self.candidates is not None:
            s.update({
                "dictionary_size": len(self.candidates),
                "dictionary_nonempty": int(len(self.candidate_columns)),
                "dictionary_grids": [list(g) for g in self.candidates.grids],
                "remaining_variance_targets": list(self.targets),
                "first_pass": {"n_selected": int(len(self.first[2])), "lambda": self.first[1],
                               "path_index": self.first[0]},
                "second_pass": {"n_selected": int(len(self.second[2])), "lambda": self.second[1],
                                "path_index": self.second[0]},
                "selected_candidates": self.candidate_columns[self.second[2]],
                "em_first": _em_summary(self.em_first),
                "em_final": _em_summary(self.em_final),
                "sigma2_before_em": self.small_initial.total_variance,
                "sigma2_after_em": self.em_first.sigma2,
            })
        return s


def _em_summary(st):
    return {"iterations": st.iterations, "converged": st.converged, "sigma2": st.sigma2,
            "p": int(len(st.mu))}


def _small_variance(model, mode):
    return model.total_variance if mode == "total" else model.sill


class _Timer:
    def __init__(self, store, key):
        self.store, self.key = store, key

    def __enter__(self):
        self.t = time.perf_counter()

    def __exit__(self, *exc):
        self.store[self.key] = self.store.get(self.key, 0.0) + time.perf_counter() - self.t


def _step(n):
    class _Wrap:
        def __enter__(self):
            return self

        def __exit__(self, et, ev, tb):
            if ev is not None and not isinstance(ev, (PipelineError, KeyboardInterrupt)):
                raise PipelineError(n, ev) from ev
    return _Wrap()


def _em_shape(small, filter_nugget):
    """Unit-weight small-scale shape and its weight for EM.

    With nugget filtering the nugget-to-sill ratio is frozen and EM
    rescales the structured sill; otherwise it rescales sill and nugget.
    """
    if filter_nugget and small.nugget > 0 and small.sill > 0:
        return small.rescaled(1.0 / small.sill), small.sill
    s = small.total_variance
    return small.rescaled(1.0 / s), s


def _factor(points, model):
    return cholesky(assemble_sparse_cov(points, model.kernel, model.nugget))


def fit_model(points, values, cfg):
    """Run the five inference steps; returns a FitResult."""
    points = np.asarray(points, float)
    values = np.asarray(values, float)
    timings = {}
    with _step(1), _Timer(timings, "variogram"):
        trend, resid = ols_detrend(points, values, TrendModel(cfg.trend_degree))
        max_lag = cfg.max_lag or 2.0 * cfg.taper_range
        v = empirical_variogram(points, resid, max_lag, cfg.variogram_bins)
        template = SmallScaleModel(cfg.base_family, cfg.base_scale, 1.0, cfg.taper_family,
                                   cfg.taper_range, 0.0, cfg.base_smoothness)
        small = fit_small_scale(v, template, seed=cfg.seed)
        if not small.total_variance > 0:
            raise ValueError("fitted small-scale variance is zero")
    log.info("step 1: sill %.4g scale %.4g nugget %.4g", small.sill, small.scale, small.nugget)

    if len(cfg.basis_families) == 0 or len(cfg.basis_ranges) == 0 or len(cfg.basis_angles) == 0:
        model = FittedModel(points, resid, trend, small, filter_nugget=cfg.filter_nugget)
        return FitResult(model, trend, resid, v, small, small, timings=timings)

    with _step(2), _Timer(timings, "selection"):
        cand = build_dictionary(cfg.basis_spec())
        P_all = evaluate_design(cand, points)
        cols = np.flatnonzero(P_all.getnnz(axis=0))
        P = P_all[:, cols]
        path = lasso_path(P, resid, n_lambdas=cfg.n_lambdas, min_ratio=cfg.lambda_min_ratio)
        cross_validate(P, resid, path, folds=cfg.cv_folds, seed=cfg.seed)
        t1 = max(path.y_variance - _small_variance(small, cfg.remaining_variance), 0.0)
        first = select_by_variance_target(path, t1)
    log.info("step 2: %d candidates (%d nonempty), %d selected",
             len(cand), len(cols), len(first[2]))

    with _step(3), _Timer(timings, "em_first"):
        shape, w0 = _em_shape(small, cfg.filter_nugget)
        fA = _factor(points, shape)
        em_cfg = EMConfig(cfg.em_tolerance, cfg.em_patience, cfg.em_max_iter)
        em1 = run_em(resid, fA, P[:, first[2]], w0, None, em_cfg)
        if cfg.filter_nugget and small.nugget > 0 and small.sill > 0:
            w, eps = nugget_ratio_reweight(small.sill, em1.sigma2, small.nugget)
            small2 = replace(small, sill=w, nugget=eps)
        else:
            small2 = small.rescaled(em1.sigma2 / w0)
    log.info("step 3: sigma2 %.4g -> %.4g in %d iterations", w0, em1.sigma2, em1.iterations)

    with _step(4):
        t2 = max(path.y_variance - _small_variance(small2, cfg.remaining_variance), 0.0)
        second = select_by_variance_target(path, t2)
    log.info("step 4: %d selected", len(second[2]))

    with _step(5), _Timer(timings, "em_final"):
        w2 = small2.total_variance
        fA2 = _factor(points, small2.rescaled(1.0 / w2))
        em2 = run_em(resid, fA2, P[:, second[2]], w2, None,
                     replace(em_cfg, fix_sigma=True))
        model = FittedModel(points, resid, trend, small2, cand.subset(cols[second[2]]),
                            em2.B, em2.mu, em2.C, cfg.filter_nugget)
    return FitResult(model, trend, resid, v, small, small2, cand, cols, P, path, first, second,
                     em1, em2, (t1, t2), timings)


def fit_low_rank(fit, cfg):
    """Basis functions chosen by the one-SE rule plus an unstructured nugget."""
    path = fit.path
    k, lam, act = one_se_rule(path)
    points = fit.model.points
    unit = SmallScaleModel(fit.small_initial.base_family, fit.small_initial.scale, 0.0,
                           cfg.taper_family, cfg.taper_range, 1.0, cfg.base_smoothness)
    fA = _factor(points, unit)
    s0 = float(max(path.cv_mean[k], 1e-12 * path.y_variance))
    em = run_em(fit.residuals, fA, fit.design[:, act], s0, None,
                EMConfig(cfg.em_tolerance, cfg.em_patience, cfg.lowrank_max_iter,
                         track_loglik=False))
    small = replace(unit, nugget=em.sigma2)
    model = FittedModel(points, fit.residuals, fit.trend, small,
                        fit.candidates.subset(fit.candidate_columns[act]), em.B, em.mu, em.C,
                        filter_nugget=True)
    return model, {"n_selected": int(len(act)), "lambda": lam, "nugget": em.sigma2,
                   "em": _em_summary(em)}


def fit_tapering(fit, cfg):
    return FittedModel(fit.model.points, fit.residuals, fit.trend, fit.small_initial,
                       filter_nugget=cfg.filter_nugget)


def conditional_expectation(points, values, cov, targets, block=2000):
    """Simple kriging with the true covariance and known zero mean (dense)."""
    K = cov(points, points)
    c = sla.cho_factor(K, lower=True)
    w = sla.cho_solve(c, values)
    out = np.empty(len(targets))
    for i0 in range(0, len(targets), block):
        out[i0:i0 + block] = cov(targets[i0:i0 + block], points) @ w
    return out


def _nested_cov(X, Y):
    d = cdist(X, Y)
    return sum(c.kernel(d) for c in NESTED_COMPONENTS)


def compute_mspe(pred, truth):
    """Mean over cells of ``(pred - truth)^2``."""
    p = np.asarray(pred, float)
    t = np.asarray(truth, float)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    return float(np.mean((p - t) ** 2))


# -------------------------------------------------------------- outputs


def _write_prediction(out, name, grid, res):
    nx, ny = grid.nx, grid.ny
    tio.write_grid_binary(os.path.join(out, f"{name}.bin"), nx, ny, res.mean, res.variance)
    tio.write_pgm(os.path.join(out, f"{name}_mean.pgm"), res.mean.reshape(grid.shape))
    if res.variance is not None:
        tio.write_pgm(os.path.join(out, f"{name}_variance.pgm"),
                      res.variance.reshape(grid.shape))


def save_model(out, model):
    d = model.dictionary
    p = model.p
    np.savez(os.path.join(out, "model.npz"), points=model.points, residuals=model.residuals,
             trend_coef=model.trend.coef, B=model.B, mu=model.mu, C=model.C,
             basis_range=d.range if p else np.zeros(0), basis_angle=d.angle if p else np.zeros(0),
             basis_ratio=d.ratio if p else np.zeros(0),
             basis_knots=d.knots if p else np.zeros((0, 2)))
    tio.write_json(os.path.join(out, "model.json"), {
        "version": __version__,
        "trend_degree": model.trend.degree,
        "small_scale": dataclasses.asdict(model.small),
        "filter_nugget": model.filter_nugget,
        "basis_family": list(d.family) if p else [],
    })


def load_model(directory):
    meta = tio.read_json(os.path.join(directory, "model.json"))
    z = np.load(os.path.join(directory, "model.npz"))
    fam = meta["basis_family"]
    d = None
    if fam:
        d = Dictionary(np.array(fam, dtype=object), z["basis_range"], z["basis_angle"],
                       z["basis_ratio"], z["basis_knots"])
    trend = TrendModel(meta["trend_degree"], z["trend_coef"])
    return FittedModel(z["points"], z["residuals"], trend, SmallScaleModel(**meta["small_scale"]),
                       d, z["B"], z["mu"], z["C"], meta["filter_nugget"])


def _write_fit_artifacts(out, fit):
    fit.variogram.to_csv(os.path.join(out, "variogram.csv"))
    if fit.candidates is not None:
        fit.candidates.to_csv(os.path.join(out, "dictionary.csv"))
        fit.path.to_csv(os.path.join(out, "lasso_path.csv"))
        fit.em_first.to_csv(os.path.join(out, "em_first.csv"))
        fit.em_final.to_csv(os.path.join(out, "em_final.csv"))
    save_model(out, fit.model)


def _figures(out, fit, maps=None, field=None):
    from . import report
    fig_dir = os.path.join(out, "figures")
    os.makedirs(fig_dir, exist_ok=True)
    report.plot_variogram(os.path.join(fig_dir, "variogram.png"), fit.variogram,
                          fit.small_initial, fit.small_updated)
    if fit.path is not None:
        report.plot_selection(os.path.join(fig_dir, "selection.png"), fit.path,
                              fit.targets, fit.first[0], fit.second[0])
        report.plot_em(os.path.join(fig_dir, "em.png"), fit.em_first, fit.em_final)
    if maps:
        report.plot_maps(os.path.join(fig_dir, "maps.png"), maps)
    if field is not None:
        report.plot_param_field(os.path.join(fig_dir, "parameters.png"), field)


def run_pipeline(cfg, points=None, values=None):
    """Fit from ``cfg.input`` (or given arrays) and predict on the configured grid.

    Writes the model, logs, grids and figures into ``cfg.out`` and returns
    the manifest dictionary.
    """
    if points is None:
        if cfg.input is None:
            raise ConfigError("fit needs an input CSV")
        points, values = tio.read_points_csv(cfg.input)
    os.makedirs(cfg.out, exist_ok=True)
    t0 = time.perf_counter()
    fit = fit_model(points, values, cfg)
    _write_fit_artifacts(cfg.out, fit)
    grid = cfg.grid
    with _step("prediction"), _Timer(fit.timings, "prediction"):
        res = predict_variance(fit.model, grid.coords())
    tio.write_grid_csv(os.path.join(cfg.out, "prediction.csv"), res.coords, res.mean, res.variance)
    _write_prediction(cfg.out, "prediction", grid, res)
    if cfg.figures:
        _figures(cfg.out, fit, {"prediction mean": res.mean.reshape(grid.shape),
                                "prediction variance": res.variance.reshape(grid.shape)})
    manifest = {"version": __version__, "rng": RNG_NAME, "config": cfg.record(),
                "fit": fit.summary(), "n_clamped_variances": res.n_clamped}
    tio.write_json(os.path.join(cfg.out, "manifest.json"), manifest)
    fit.timings["total"] = time.perf_counter() - t0
    tio.write_json(os.path.join(cfg.out, "timings.json"), fit.timings)
    return manifest


def streams(seed):
    """Seeds of the independent random streams of an experiment."""
    return {"truth": [int(seed), 1], "sampling": [int(seed), 2], "parameters": [int(seed), 3]}


def simulate_experiment(cfg):
    """Reference field on the grid and the sampled observations."""
    grid = cfg.grid
    s = streams(cfg.seed)
    info = {"streams": s, "n_waves": cfg.n_waves}
    field = None
    if cfg.experiment == "nested":
        truth = simulate_spectral(grid, NESTED_COMPONENTS, cfg.n_waves, s["truth"])
        info["model"] = [dataclasses.asdict(c) for c in NESTED_COMPONENTS]
    elif cfg.experiment == "nonstat-matern":
        field = random_param_field(s["parameters"], n_nodes=cfg.param_nodes,
                                   scale=cfg.param_scale, bounds=cfg.domain)
        r = simulate_nonstationary(grid, field, SpectralConfig(cfg.n_waves, s["truth"]))
        truth = r.values
        info.update({"instrumental_scale": r.instrumental[0],
                     "instrumental_smoothness": r.instrumental[1],
                     "rejected_waves": r.n_rejected, "param_nodes": cfg.param_nodes,
                     "param_scale": cfg.param_scale})
    else:
        raise ConfigError("simulation needs experiment = nested or nonstat-matern")
    pts, vals = sample_locations(grid, truth, cfg.n_samples, s["sampling"])
    return grid, truth, pts, vals, field, info


def _ce_cov(cfg, field):
    if cfg.experiment == "nested":
        return _nested_cov
    return lambda X, Y: nonstationary_matern_matrix(field, X, Y)


def run_experiment(cfg):
    """Simulate, fit all four methods, score against the reference grid."""
    if cfg.experiment is None:
        raise ConfigError("experiment name missing")
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    timings = {}
    t0 = time.perf_counter()
    with _Timer(timings, "simulation"):
        grid, truth, pts, vals, field, sim_info = simulate_experiment(cfg)
    tio.write_grid_binary(os.path.join(out, "truth.bin"), grid.nx, grid.ny, truth)
    tio.write_pgm(os.path.join(out, "truth.pgm"), truth.reshape(grid.shape))
    tio.write_points_csv(os.path.join(out, "samples.csv"), pts, vals)

    fit = fit_model(pts, vals, cfg)
    timings.update(fit.timings)
    _write_fit_artifacts(out, fit)
    targets = grid.coords()
    preds, rows = {}, []

    with _Timer(timings, "tapering"):
        res = predict_variance(fit_tapering(fit, cfg), targets)
    preds["tapering"] = res
    rows.append(("tapering", f"range {cfg.taper_range:g}", 0))
    lr_info = None
    if fit.path is not None:
        with _Timer(timings, "low_rank"):
            lr_model, lr_info = fit_low_rank(fit, cfg)
            preds["low-rank"] = predict_variance(lr_model, targets)
        rows.append(("low-rank", f"nugget {lr_info['nugget']:.4g}", lr_info["n_selected"]))
        with _Timer(timings, "prediction"):
            preds["combination"] = predict_variance(fit.model, targets)
        rows.append(("combination", f"range {cfg.taper_range:g}", fit.model.p))
    ce_info = None
    if cfg.ce_max_points > 0:
        with _Timer(timings, "conditional_expectation"):
            n = len(pts)
            idx = np.arange(n)
            if n > cfg.ce_max_points:
                rng = np.random.default_rng(streams(cfg.seed)["sampling"] + [1])
                idx = np.sort(rng.choice(n, cfg.ce_max_points, replace=False))
            mean = conditional_expectation(pts[idx], vals[idx], _ce_cov(cfg, field), targets)
        from .kriging import PredictionResult
        preds["conditional-expectation"] = PredictionResult(targets, mean)
        rows.append(("conditional-expectation", "true covariance", 0))
        ce_info = {"n_points": int(len(idx))}

    table = []
    for name, ss, nb in rows:
        mspe = compute_mspe(preds[name].mean, truth)
        table.append({"method": name, "small_scale": ss, "n_basis": nb, "mspe": mspe})
        _write_prediction(out, "prediction_" + name, grid, preds[name])
    with open(os.path.join(out, "comparison.csv"), "w", encoding="utf-8") as fh:
        fh.write("method,small_scale,n_basis,mspe\n")
        for r in table:
            fh.write(f"{r['method']},{r['small_scale']},{r['n_basis']},{r['mspe']!r}\n")
    if "combination" in preds:
        c = preds["combination"]
        tio.write_grid_csv(os.path.join(out, "prediction.csv"), c.coords, c.mean, c.variance)
    if cfg.figures:
        maps = {"reference": truth.reshape(grid.shape)}
        maps.update({k: v.mean.reshape(grid.shape) for k, v in preds.items()})
        _figures(out, fit, maps, field)
    manifest = {"version": __version__, "rng": RNG_NAME, "config": cfg.record(),
                "simulation": sim_info, "fit": fit.summary(), "low_rank": lr_info,
                "conditional_expectation": ce_info, "comparison": table}
    tio.write_json(os.path.join(out, "manifest.json"), manifest)
    timings["total"] = time.perf_counter() - t0
    tio.write_json(os.path.join(out, "timings.json"), timings)
    return manifest
