"""Synthetic panels from an AR(1) bottom layer and the experiment harness.

Bottom series follow b_t = alpha_i b_{t-1} + sigma_i eps_t with configurable
error distributions; aggregates are formed exactly through the summing
matrix. The harness replays the five study designs (non-Gaussian types,
normal-case efficiency, contamination proportion, cross-correlation, and
hierarchy size) at desk scale: every replication draws its own RNG stream
from the master seed, fits a per-series AR(1) base forecaster, reconciles
with the configured method grid, and reports grouped RMSE changes against
the base forecasts.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .covariance import CovarianceDesign, ResidualPanel, realize_design
from .errors import RomeHtsError, ValidationError
from .evaluate import EvalWindow, pct_change, rmse
from .hierarchy import Hierarchy, HierarchySpec, build_hierarchy, fanout_hierarchy
from .loss import LossSpec, pooled_sigma
from .reconcile import (
    BaseForecastSet,
    ReconcileResult,
    ReconcilerConfig,
    reconcile_bottom_up,
    reconcile_rome,
)

ERROR_KINDS = ("gaussian", "mixture", "student_t", "cauchy")
BURN_IN = 200

LOSSES = ("ls", "lad", "huber")
COV_DESIGNS = ("ols", "wlsv", "wlss", "sample", "shrink")

EXPERIMENT_DESIGNS = (
    "nongaussian",
    "efficiency",
    "proportion",
    "correlation",
    "complexity",
)


@dataclass(frozen=True)
class ErrorSpec:
    """Error distribution for one bottom series."""

    kind: str = "gaussian"
    mixture_weight: float = 0.1
    mixture_sd: float = 3.0
    t_dof: float = 3.0
    cauchy_loc: float = 0.0
    cauchy_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ERROR_KINDS:
            raise ValidationError(f"unknown error kind {self.kind!r}")
        for name in ("mixture_weight", "mixture_sd", "t_dof", "cauchy_scale"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.mixture_weight >= 1.0:
            raise ValidationError("mixture_weight must lie in (0, 1)")


@dataclass(frozen=True)
class ScenarioSpec:
    """A fully specified data-generating configuration."""

    hierarchy: HierarchySpec
    alpha: np.ndarray
    sigma: np.ndarray
    errors: tuple[ErrorSpec, ...]
    corr_rho: float = 0.0
    corr_structure: str = "power"  # 'power': rho^|i-j|; 'equi': rho off-diagonal
    T_total: int = 192
    T_train: int = 180
    H: int = 12

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "sigma", sigma)
        n_b = len(self.hierarchy.bottom_order)
        if alpha.shape != (n_b,) or sigma.shape != (n_b,):
            raise ValidationError("alpha and sigma must have one entry per bottom series")
        if np.any(np.abs(alpha) >= 1.0):
            raise ValidationError("AR coefficients must satisfy |alpha| < 1")
        if np.any(sigma < 0.0):
            raise ValidationError("sigma must be nonnegative")
        if len(self.errors) != n_b:
            raise ValidationError("errors must list one spec per bottom series")
        if not (0.0 <= self.corr_rho < 1.0):
            raise ValidationError("corr_rho must lie in [0, 1)")
        if self.corr_structure not in ("power", "equi"):
            raise ValidationError("corr_structure must be 'power' or 'equi'")
        if self.T_train + self.H != self.T_total:
            raise ValidationError("T_train + H must equal T_total")


@dataclass(frozen=True)
class SimPanel:
    """Observations for every series (rows follow the hierarchy ordering)."""

    y: np.ndarray
    T_train: int
    H: int

    @property
    def train(self) -> np.ndarray:
        return self.y[:, : self.T_train]

    @property
    def test(self) -> np.ndarray:
        return self.y[:, self.T_train :]


def _gaussian_correlation(spec: ScenarioSpec, indices: np.ndarray) -> np.ndarray:
    if spec.corr_structure == "power":
        dist = np.abs(indices[:, None] - indices[None, :])
        return spec.corr_rho**dist
    c = np.full((indices.size, indices.size), spec.corr_rho)
    np.fill_diagonal(c, 1.0)
    return c


def generate_panel(spec: ScenarioSpec, rng: np.random.Generator) -> SimPanel:
    """Simulate bottom series from zero state with a burn-in, then aggregate."""
    hier = build_hierarchy(spec.hierarchy)
    n_b = hier.n_b
    steps = BURN_IN + spec.T_total
    eps = np.empty((n_b, steps))

    gauss = np.array(
        [i for i, e in enumerate(spec.errors) if e.kind == "gaussian"], dtype=np.int64
    )
    if gauss.size:
        if spec.corr_rho > 0.0 and gauss.size > 1:
            chol = np.linalg.cholesky(_gaussian_correlation(spec, gauss))
            eps[gauss] = chol @ rng.standard_normal((gauss.size, steps))
        else:
            eps[gauss] = rng.standard_normal((gauss.size, steps))
    for i, err in enumerate(spec.errors):
        if err.kind == "gaussian":
            continue
        if err.kind == "mixture":
            wide = rng.random(steps) < err.mixture_weight
            eps[i] = rng.standard_normal(steps) * np.where(wide, err.mixture_sd, 1.0)
        elif err.kind == "student_t":
            eps[i] = rng.standard_t(err.t_dof, steps)
        else:  # cauchy
            eps[i] = err.cauchy_loc + err.cauchy_scale * rng.standard_cauchy(steps)

    b = np.zeros((n_b, steps))
    prev = np.zeros(n_b)
    for t in range(steps):
        prev = spec.alpha * prev + spec.sigma * eps[:, t]
        b[:, t] = prev

    y = hier.S @ b[:, BURN_IN:]
    return SimPanel(y=y, T_train=spec.T_train, H=spec.H)


def fit_base_forecaster(train: np.ndarray, H: int) -> tuple[np.ndarray, np.ndarray]:
    """AR(1) with intercept by conditional least squares, one series.

    Returns H-step forecasts (iterating the fitted recursion) and the
    one-step in-sample residuals. Near-unit-root fits are clamped to
    |alpha| = 0.999 with a warning.
    """
    train = np.asarray(train, dtype=np.float64)
    if train.ndim != 1 or train.size < 20:
        raise ValidationError("base forecaster needs a 1-D series of at least 20 points")
    x = train[:-1]
    z = train[1:]
    xm = x.mean()
    zm = z.mean()
    denom = float(np.sum((x - xm) ** 2))
    if denom <= 1e-300:
        alpha = 0.0
    else:
        alpha = float(np.sum((x - xm) * (z - zm)) / denom)
    if abs(alpha) >= 0.999:
        warnings.warn(
            f"near-unit-root AR(1) fit (alpha={alpha:.4f}); clamping to 0.999",
            stacklevel=2,
        )
        alpha = 0.999 if alpha > 0 else -0.999
    intercept = zm - alpha * xm
    residuals = z - intercept - alpha * x

    forecasts = np.empty(H)
    level = train[-1]
    for step in range(H):
        level = intercept + alpha * level
        forecasts[step] = level
    return forecasts, residuals


def fit_base_forecasts(panel: SimPanel) -> BaseForecastSet:
    """Independent AR(1) base forecasts and residuals for every series."""
    n = panel.y.shape[0]
    yhat = np.empty((n, panel.H))
    resid = np.empty((n, panel.T_train - 1))
    for i in range(n):
        yhat[i], resid[i] = fit_base_forecaster(panel.train[i], panel.H)
    return BaseForecastSet(yhat=yhat, residuals=ResidualPanel(resid))


# ---------------------------------------------------------------------------
# experiment designs


@dataclass(frozen=True)
class Method:
    """One reconciliation column of a report: bottom-up or a loss/cov pair."""

    name: str  # 'bu' or 'rome'
    loss: str = ""
    cov: str = ""

    @property
    def label(self) -> str:
        return "bu" if self.name == "bu" else f"{self.loss}-{self.cov}"


def parse_method(token: str) -> Method:
    token = token.strip().lower()
    if token == "bu":
        return Method(name="bu")
    if "-" not in token:
        raise ValidationError(
            f"method {token!r} is neither 'bu' nor a '<loss>-<cov>' pair"
        )
    loss, cov = token.split("-", 1)
    if loss not in LOSSES:
        raise ValidationError(f"unknown loss {loss!r} in method {token!r}")
    if cov not in COV_DESIGNS:
        raise ValidationError(f"unknown covariance design {cov!r} in method {token!r}")
    return Method(name="rome", loss=loss, cov=cov)


def default_methods(design: str) -> tuple[Method, ...]:
    covs = COV_DESIGNS if design != "complexity" else ("ols", "wlsv", "wlss", "shrink")
    grid = [Method("rome", loss, cov) for loss in LOSSES for cov in covs]
    return tuple(grid + [Method("bu")])


_NONGAUSSIAN_DISTS = ("mixture", "student_t", "cauchy")


def _design_defaults(design: str) -> dict:
    return {
        "nongaussian": {"dist": "mixture"},
        "efficiency": {"nb": 6, "sigma": 1.0, "alpha": None},
        "proportion": {"proportion": 0.3},
        "correlation": {"rho": 0.4},
        "complexity": {"nb": 20},
    }[design]


def _validate_params(design: str, params: dict):
    if design == "nongaussian":
        if params["dist"] not in _NONGAUSSIAN_DISTS:
            raise ValidationError(
                f"nongaussian dist must be one of {_NONGAUSSIAN_DISTS}"
            )
    elif design == "efficiency":
        nb = params["nb"]
        if nb != 6 and not (10 <= nb <= 50 and nb % 5 == 0):
            raise ValidationError(
                "efficiency nb must be 6 or a multiple of 5 in [10, 50]"
            )
        if not (0.5 <= params["sigma"] <= 3.0):
            raise ValidationError("efficiency sigma must lie in [0.5, 3]")
    elif design == "proportion":
        if not (0.1 <= params["proportion"] <= 0.9):
            raise ValidationError("proportion must lie in [0.1, 0.9]")
    elif design == "correlation":
        if not (0.0 <= params["rho"] <= 0.9):
            raise ValidationError("correlation rho must lie in [0, 0.9]")
    elif design == "complexity":
        nb = params["nb"]
        if not (20 <= nb <= 120 and nb % 10 == 0):
            raise ValidationError("complexity nb must be a multiple of 10 in [20, 120]")


def _figure2_hierarchy() -> HierarchySpec:
    # 9 bottom series aggregated by threes into 3 middle series and a top
    return fanout_hierarchy(9, 3)


def _realize_scenario(design: str, params: dict, rng: np.random.Generator) -> ScenarioSpec:
    """Concrete scenario for one replication (draws per-rep randomness)."""
    if design == "nongaussian":
        spec = _figure2_hierarchy()
        errors = tuple(
            ErrorSpec(kind=params["dist"]) if i < 3 else ErrorSpec()
            for i in range(9)
        )
        return ScenarioSpec(
            hierarchy=spec,
            alpha=np.full(9, 0.8),
            sigma=np.full(9, 0.5),
            errors=errors,
            corr_rho=0.4,
            corr_structure="power",
        )
    if design == "efficiency":
        nb = params["nb"]
        fanout = 3 if nb == 6 else 5
        alpha = params.get("alpha")
        if alpha is None:
            alpha = 0.6 if nb == 6 else 0.8
        return ScenarioSpec(
            hierarchy=fanout_hierarchy(nb, fanout),
            alpha=np.full(nb, alpha),
            sigma=np.full(nb, float(params["sigma"])),
            errors=tuple(ErrorSpec() for _ in range(nb)),
            corr_rho=0.4,
            corr_structure="power",
        )
    if design == "proportion":
        nb = 30
        n_irr = int(round(params["proportion"] * nb))
        kinds = rng.choice(_NONGAUSSIAN_DISTS, size=n_irr)
        errors = tuple(
            ErrorSpec(kind=kinds[i]) if i < n_irr else ErrorSpec() for i in range(nb)
        )
        return ScenarioSpec(
            hierarchy=fanout_hierarchy(nb, 6),
            alpha=rng.uniform(0.6, 0.8, size=nb),
            sigma=np.full(nb, 0.5),
            errors=errors,
            corr_rho=0.0,
        )
    if design == "correlation":
        return ScenarioSpec(
            hierarchy=_figure2_hierarchy(),
            alpha=np.full(9, 0.8),
            sigma=np.full(9, 0.5),
            errors=tuple(ErrorSpec() for _ in range(9)),
            corr_rho=float(params["rho"]),
            corr_structure="equi",
        )
    if design == "complexity":
        nb = params["nb"]
        n_irr = int(round(0.4 * nb))
        chosen = rng.choice(nb, size=n_irr, replace=False)
        kinds = rng.choice(_NONGAUSSIAN_DISTS, size=n_irr)
        kind_of = dict(zip(chosen.tolist(), kinds.tolist()))
        errors = tuple(
            ErrorSpec(kind=kind_of[i]) if i in kind_of else ErrorSpec()
            for i in range(nb)
        )
        return ScenarioSpec(
            hierarchy=fanout_hierarchy(nb, 10),
            alpha=rng.uniform(0.6, 0.8, size=nb),
            sigma=np.full(nb, 0.5),
            errors=errors,
            corr_rho=0.0,
        )
    raise ValidationError(f"unknown experiment design {design!r}")


def _groups(design: str, hier: Hierarchy) -> dict[str, np.ndarray]:
    everything = np.arange(hier.n)
    bottom = np.arange(hier.m_star, hier.n)
    aggregated = np.arange(0, hier.m_star)
    if design == "nongaussian":
        return {
            "changeable": bottom[:3],
            "stable": bottom[3:],
            "all": everything,
        }
    if design == "efficiency":
        return {"all": everything}
    return {"bottom": bottom, "aggregated": aggregated, "all": everything}


def _window_lengths(H: int) -> tuple[int, ...]:
    lengths = [1]
    if H >= 6:
        lengths.append(6)
    if H > 1:
        lengths.append(H)
    return tuple(dict.fromkeys(lengths))


def _window_name(length: int) -> str:
    return "h=1" if length == 1 else f"1-{length}"


@dataclass
class ReportRow:
    method: str
    loss: str
    cov: str
    group: str
    window: str
    pct_change_mean: float
    rmse_mean: float
    reps_used: int


@dataclass
class ExperimentReport:
    design: str
    params: dict
    seed: int
    reps_requested: int
    rows: list[ReportRow]
    failures: list[tuple[int, str]] = field(default_factory=list)


@dataclass
class RunDiagnostics:
    """Convergence facts for one method on one replication."""

    rep: int
    method: str
    iterations: int
    converged: bool
    max_ascent: float


def _max_ascent(result: ReconcileResult) -> float:
    worst = 0.0
    for trace in result.objective_trace:
        if trace.size > 1:
            worst = max(worst, float(np.max(np.diff(trace))))
    return worst


def run_method(
    method: Method,
    base: BaseForecastSet,
    hier: Hierarchy,
    covs: dict,
    sigma_hat: float,
    cfg: ReconcilerConfig,
    backend: str | None = None,
) -> ReconcileResult:
    """Reconcile one method column, realizing its covariance lazily."""
    if method.name == "bu":
        return reconcile_bottom_up(base, hier)
    if method.cov not in covs:
        covs[method.cov] = realize_design(
            CovarianceDesign(kind=method.cov), base.residuals, hier
        )
    loss = LossSpec(kind=method.loss, sigma_hat=sigma_hat)
    return reconcile_rome(base, hier, covs[method.cov], loss, cfg, backend=backend)


def _replicate(
    design: str,
    params: dict,
    methods: tuple[Method, ...],
    rep: int,
    seed: int,
    cfg: ReconcilerConfig,
    backend: str | None,
):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))
    scen = _realize_scenario(design, params, rng)
    hier = build_hierarchy(scen.hierarchy)
    panel = generate_panel(scen, rng)
    base = fit_base_forecasts(panel)
    actuals = panel.test
    sigma_hat = pooled_sigma(base.residuals.residuals)
    groups = _groups(design, hier)
    windows = _window_lengths(scen.H)

    base_rmse = {}
    for gname, gidx in groups.items():
        for length in windows:
            base_rmse[(gname, length)] = rmse(
                base.yhat, actuals, EvalWindow(gidx, length)
            )

    cells: dict[tuple, tuple[float, float]] = {}
    diags: list[RunDiagnostics] = []
    covs: dict = {}
    for method in methods:
        result = run_method(method, base, hier, covs, sigma_hat, cfg, backend)
        diags.append(
            RunDiagnostics(
                rep=rep,
                method=method.label,
                iterations=int(np.max(result.iterations)),
                converged=bool(np.all(result.converged)),
                max_ascent=_max_ascent(result),
            )
        )
        for gname, gidx in groups.items():
            for length in windows:
                r = rmse(result.ytilde, actuals, EvalWindow(gidx, length))
                cells[(method.label, gname, length)] = (
                    r,
                    pct_change(r, base_rmse[(gname, length)]),
                )
    return cells, base_rmse, diags


def run_experiment(
    design: str,
    *,
    reps: int,
    seed: int,
    overrides: dict | None = None,
    methods: tuple[Method, ...] | None = None,
    cfg: ReconcilerConfig | None = None,
    backend: str | None = None,
    threads: int | None = None,
    pct_of_means: bool = False,
    collect_diagnostics: bool = False,
):
    """Run one design point and aggregate grouped RMSE changes over reps.

    The primary percentage column averages per-replication changes;
    ``pct_of_means`` swaps in the change of replication-averaged RMSEs
    instead. Replications that fail with a package or linear-algebra error
    are recorded with their index and excluded from the averages.

    Returns the report, plus the per-run diagnostics list when
    ``collect_diagnostics`` is set.
    """
    if design not in EXPERIMENT_DESIGNS:
        raise ValidationError(
            f"unknown design {design!r}; use one of {EXPERIMENT_DESIGNS}"
        )
    if reps < 1:
        raise ValidationError("reps must be at least 1")
    params = _design_defaults(design)
    unknown = set(overrides or ()) - set(params)
    if unknown:
        raise ValidationError(f"unknown overrides for {design}: {sorted(unknown)}")
    params.update(overrides or {})
    _validate_params(design, params)
    methods = methods or default_methods(design)
    cfg = cfg or ReconcilerConfig()

    if threads is None:
        threads = int(os.environ.get("ROME_THREADS", "1") or 1)
    threads = max(1, threads)

    def job(rep: int):
        try:
            return rep, _replicate(design, params, methods, rep, seed, cfg, backend), None
        except (RomeHtsError, np.linalg.LinAlgError) as exc:
            return rep, None, f"{type(exc).__name__}: {exc}"

    results = []
    if threads == 1:
        for rep in range(reps):
            results.append(job(rep))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, range(reps)))
    results.sort(key=lambda item: item[0])

    failures = [(rep, msg) for rep, _, msg in results if msg is not None]
    ok = [(rep, payload) for rep, payload, msg in results if msg is None]

    rows: list[ReportRow] = []
    all_diags: list[RunDiagnostics] = []
    if ok:
        sample_cells, sample_base, _ = ok[0][1]
        cell_keys = sorted(sample_cells, key=lambda key: (key[0], key[1], key[2]))
        base_keys = sorted(sample_base)
        accum = {key: ([], []) for key in cell_keys}
        base_accum = {key: [] for key in base_keys}
        for _, payload in ok:
            cells, base_rmse, diags = payload
            all_diags.extend(diags)
            for key in cell_keys:
                r, pct = cells[key]
                accum[key][0].append(r)
                accum[key][1].append(pct)
            for key in base_keys:
                base_accum[key].append(base_rmse[key])
        for gname, length in base_keys:
            rows.append(
                ReportRow(
                    method="base",
                    loss="",
                    cov="",
                    group=gname,
                    window=_window_name(length),
                    pct_change_mean=0.0,
                    rmse_mean=float(np.mean(base_accum[(gname, length)])),
                    reps_used=len(ok),
                )
            )
        for label, gname, length in cell_keys:
            rs, pcts = accum[(label, gname, length)]
            mean_rmse = float(np.mean(rs))
            if pct_of_means:
                pct = pct_change(mean_rmse, float(np.mean(base_accum[(gname, length)])))
            else:
                pct = float(np.mean(pcts))
            loss, cov = ("", "")
            method_name = label
            if label != "bu":
                loss, cov = label.split("-", 1)
                method_name = "rome"
            rows.append(
                ReportRow(
                    method=method_name,
                    loss=loss,
                    cov=cov,
                    group=gname,
                    window=_window_name(length),
                    pct_change_mean=pct,
                    rmse_mean=mean_rmse,
                    reps_used=len(ok),
                )
            )

    rows.sort(key=lambda r: (r.method, r.loss, r.cov, r.group, r.window))
    report = ExperimentReport(
        design=design,
        params=params,
        seed=seed,
        reps_requested=reps,
        rows=rows,
        failures=failures,
    )
    if collect_diagnostics:
        return report, all_diags
    return report
