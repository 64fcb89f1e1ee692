"""Least-squares fitting of the between-within and fixed-effects models with
Newey-West HAC covariance."""

from __future__ import annotations

import json
import math
import warnings
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import pandas as pd
from scipy import stats

from spillover.errors import ConfigError, RankDeficientError
from spillover.metrics import MetricsTables, Thresholds
from spillover.panel import CONTROLS, WITHIN_TYPE, DesignMatrix, assemble_design, entity_means, label
from spillover.spatial import SpatialWeights

ESTIMATORS = ("rewb", "fe")
AGGREGATIONS = ("hourly", "daily", "monthly", "annual")
COND_WARN = 1e10


@dataclass(frozen=True)
class ModelSpec:
    """Declarative model definition.

    ``hac_lags=None`` selects floor(4 * (mean entity length / 100) ** (2/9)).
    The boolean switches drop whole blocks of the design (neighboring
    penetration, cross-technology penetration, interconnector terms).
    """

    technology: str = "wind"
    estimator: str = "rewb"
    aggregation: str = "monthly"
    weights: str = "ic_weighted"
    hac_lags: int | None = None
    neighbors: bool = True
    cross_technology: bool = True
    interconnector: bool = True
    controls: tuple[str, ...] = CONTROLS
    thresholds: Thresholds = Thresholds()

    def __post_init__(self):
        if self.technology not in ("wind", "solar"):
            raise ConfigError(f"technology must be wind or solar, got {self.technology!r}")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        if self.hac_lags is not None and self.hac_lags < 0:
            raise ConfigError("hac_lags must be >= 0")
        unknown = set(self.controls) - set(CONTROLS)
        if unknown:
            raise ConfigError(f"unknown control(s) {sorted(unknown)}")
        object.__setattr__(self, "controls", tuple(c for c in CONTROLS if c in self.controls))

    def replace(self, **changes) -> ModelSpec:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["controls"] = list(self.controls)
        return out

    @classmethod
    def from_dict(cls, doc: Mapping) -> ModelSpec:
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown model option(s) {sorted(unknown)}")
        kw = dict(doc)
        if "thresholds" in kw and isinstance(kw["thresholds"], Mapping):
            try:
                kw["thresholds"] = Thresholds(**kw["thresholds"])
            except TypeError as exc:
                raise ConfigError(f"thresholds: {exc}") from exc
        if "controls" in kw:
            kw["controls"] = tuple(kw["controls"] or ())
        return cls(**kw)


# --------------------------------------------------------------------------- #
# Building blocks
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class OlsFit:
    params: np.ndarray
    residuals: np.ndarray
    xtx_inv: np.ndarray
    condition_number: float


def ols(X, y, names: Iterable[str] | None = None, cond_warn: float = COND_WARN) -> OlsFit:
    """Least squares through the thin SVD of ``X``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    names = list(names) if names is not None else [f"x{j}" for j in range(k)]
    if n <= k:
        raise RankDeficientError(f"{n} observations for {k} columns", names)
    u, s, vt = np.linalg.svd(X, full_matrices=False)
    tol = s[0] * max(n, k) * np.finfo(float).eps
    if s[-1] <= tol:
        null = np.abs(vt[s <= tol]).sum(axis=0)
        raise RankDeficientError(
            "design is rank deficient", [names[j] for j in np.flatnonzero(null > 1e-8)]
        )
    cond = float(s[0] / s[-1])
    if cond > cond_warn:
        warnings.warn(f"ill-conditioned design (condition number {cond:.3g})", stacklevel=2)
    params = vt.T @ ((u.T @ y) / s)
    resid = y - X @ params
    xtx_inv = (vt.T / s**2) @ vt
    return OlsFit(params, resid, (xtx_inv + xtx_inv.T) / 2, cond)


def _entity_codes(entities) -> np.ndarray:
    codes, _ = pd.factorize(np.asarray(entities))
    if len(codes) > 1:
        changes = np.flatnonzero(np.diff(codes) != 0) + 1
        starts = codes[np.r_[0, changes]]
        if len(np.unique(starts)) != len(starts):
            raise ValueError("rows must be grouped by entity")
    return codes


def entity_lengths(entities) -> np.ndarray:
    return np.bincount(_entity_codes(entities))


def default_hac_lags(entities) -> int:
    t_bar = float(entity_lengths(entities).mean())
    return int(math.floor(4 * (t_bar / 100) ** (2 / 9)))


def newey_west(X, residuals, entities, lags: int, xtx_inv: np.ndarray | None = None) -> np.ndarray:
    """Bartlett-kernel HAC sandwich with autocovariances inside entities only.

    Rows must be grouped by entity and time-ordered inside each entity;
    lags are counted in rows.
    """
    X = np.asarray(X, dtype=float)
    e = np.asarray(residuals, dtype=float)
    codes = _entity_codes(entities)
    shortest = int(np.bincount(codes).min())
    if lags >= shortest:
        raise ConfigError(f"HAC lag count {lags} must be below the shortest entity length {shortest}")
    u = X * e[:, None]
    S = u.T @ u
    for lag in range(1, lags + 1):
        same = codes[lag:] == codes[:-lag]
        G = u[lag:][same].T @ u[:-lag][same]
        S += (1.0 - lag / (lags + 1.0)) * (G + G.T)
    bread = xtx_inv if xtx_inv is not None else np.linalg.inv(X.T @ X)
    V = bread @ S @ bread
    return (V + V.T) / 2


def classical_covariance(X, residuals) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    e = np.asarray(residuals, dtype=float)
    n, k = X.shape
    sigma2 = float(e @ e) / (n - k)
    return sigma2 * np.linalg.inv(X.T @ X)


def durbin_watson(residuals, entities) -> float:
    """Panel Durbin-Watson: within-entity squared first differences over SSR."""
    e = np.asarray(residuals, dtype=float)
    codes = _entity_codes(entities)
    same = codes[1:] == codes[:-1]
    d = np.diff(e)[same]
    return float(d @ d / (e @ e))


def r_squared(residuals, y) -> float:
    y = np.asarray(y, dtype=float)
    e = np.asarray(residuals, dtype=float)
    dev = y - y.mean()
    return float(1.0 - (e @ e) / (dev @ dev))


def adjusted_r2(residuals, y, n_params: int) -> float:
    """1 - (1 - R^2)(n - 1)/(n - p - 1); ``n_params`` excludes the intercept."""
    n = len(np.asarray(y))
    if n <= n_params + 1:
        raise ValueError("adjusted R^2 needs n > p + 1")
    return 1.0 - (1.0 - r_squared(residuals, y)) * (n - 1) / (n - n_params - 1)


def stars(p_value: float) -> str:
    if p_value < 0.01:
        return "***"
    if p_value < 0.05:
        return "**"
    if p_value < 0.10:
        return "*"
    return ""


# --------------------------------------------------------------------------- #
# Result
# --------------------------------------------------------------------------- #


@dataclass
class ModelResult:
    spec: ModelSpec
    estimator: str
    params: pd.Series
    hac_covariance: pd.DataFrame
    residuals: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    design: DesignMatrix = field(repr=False)
    hac_lags: int = 0
    r2: float = float("nan")
    adjusted_r2: float = float("nan")
    durbin_watson: float = float("nan")
    condition_number: float = float("nan")

    @property
    def coefficients(self) -> dict[str, float]:
        return {k: float(v) for k, v in self.params.items()}

    @property
    def n_obs(self) -> int:
        return int(len(self.residuals))

    @property
    def n_entities(self) -> int:
        return int(len(np.unique(self.design.zones)))

    @property
    def std_errors(self) -> pd.Series:
        return pd.Series(np.sqrt(np.clip(np.diag(self.hac_covariance.to_numpy()), 0, None)), index=self.params.index)

    @property
    def pvalues(self) -> pd.Series:
        z = self.params / self.std_errors
        return pd.Series(2 * stats.norm.sf(np.abs(z.to_numpy())), index=self.params.index)

    @property
    def stars(self) -> pd.Series:
        return self.pvalues.map(stars)

    def conf_int(self, z: float = 1.96) -> pd.DataFrame:
        se = self.std_errors
        return pd.DataFrame({"low": self.params - z * se, "high": self.params + z * se})

    def kind(self, column: str) -> str:
        return self.design.kinds[column]

    def to_dict(self) -> dict:
        se, pv, st = self.std_errors, self.pvalues, self.stars
        coefs = {
            name: {
                "estimate": float(self.params[name]),
                "std_error": float(se[name]),
                "p_value": float(pv[name]),
                "stars": st[name],
                "kind": self.design.kinds[name],
                "level": self.design.levels.get(name),
            }
            for name in self.params.index
        }
        return {
            "estimator": self.estimator,
            "spec": self.spec.to_dict(),
            "n_obs": self.n_obs,
            "n_entities": self.n_entities,
            "r2": self.r2,
            "adjusted_r2": self.adjusted_r2,
            "hac_lags": self.hac_lags,
            "durbin_watson": self.durbin_watson,
            "condition_number": self.condition_number,
            "coefficients": coefs,
            "covariance": {
                "columns": list(self.params.index),
                "matrix": self.hac_covariance.to_numpy().tolist(),
            },
            "centers": dict(self.design.centers),
            "dropped_columns": list(self.design.dropped),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_text(self) -> str:
        """Regression table: within effects, zone averages, cross-level interactions."""
        se, st = self.std_errors, self.stars
        title = f"{self.spec.technology.capitalize()} value factor"
        sections = [
            ("WITHIN EFFECTS", lambda c: self.design.kinds[c] == "within" or self.design.levels.get(c) == "lower"),
            ("BETWEEN EFFECTS", lambda c: self.design.kinds[c] in ("between", "time_invariant")),
            ("CROSS-LEVEL INTERACTIONS", lambda c: self.design.levels.get(c) == "cross"),
        ]
        width = max([len(label(c)) for c in self.params.index] + [len("Adjusted R2")]) + 2
        lines = [f"{'':<{width}}{title}"]
        for heading, keep in sections:
            cols = [c for c in self.params.index if keep(c)]
            if not cols:
                continue
            lines.append(heading)
            for c in cols:
                lines.append(f"{label(c):<{width}}{self.params[c]:.3f}{st[c]} ({se[c]:.3f})")
        lines.append(f"{'Intercept':<{width}}{'Yes' if 'intercept' in self.params.index else 'No (entity effects)'}")
        lines.append(f"{'Adjusted R2':<{width}}{self.adjusted_r2:.3f}")
        lines.append(f"{'Observations':<{width}}{self.n_obs}")
        lines.append(f"Estimator: {self.estimator}; Newey-West HAC standard errors in parentheses (lags={self.hac_lags}).")
        lines.append("*** p<0.01, ** p<0.05, * p<0.1")
        return "\n".join(lines) + "\n"


def fit_design(design: DesignMatrix, y, estimator: str = "rewb", hac_lags: int | None = None, spec: ModelSpec | None = None) -> ModelResult:
    """Fit an assembled design.

    ``rewb`` regresses y on the full design.  ``fe`` keeps only within-type
    columns (within and interaction kinds) and regresses the entity-demeaned
    y on them, entity-demeaning the columns again.
    """
    y = np.asarray(y, dtype=float)
    if estimator == "fe":
        design = design.subset(WITHIN_TYPE)
        X = design.X - np.column_stack([entity_means(design.X[:, j], design.zones) for j in range(design.X.shape[1])])
        y_fit = y - entity_means(y, design.zones)
        design = DesignMatrix(
            columns=design.columns, kinds=design.kinds, X=X, zones=design.zones, periods=design.periods,
            centers=design.centers, levels=design.levels, dropped=design.dropped,
        )
    elif estimator == "rewb":
        y_fit = y
    else:
        raise ConfigError(f"unknown estimator {estimator!r}")
    res = ols(design.X, y_fit, design.columns)
    lags = default_hac_lags(design.zones) if hac_lags is None else int(hac_lags)
    V = newey_west(design.X, res.residuals, design.zones, lags, res.xtx_inv)
    n_slopes = len(design.columns) - (1 if "intercept" in design.columns else 0)
    cols = list(design.columns)
    spec = spec or ModelSpec(estimator=estimator)
    return ModelResult(
        spec=spec,
        estimator=estimator,
        params=pd.Series(res.params, index=cols),
        hac_covariance=pd.DataFrame(V, index=cols, columns=cols),
        residuals=res.residuals,
        y=y_fit,
        design=design,
        hac_lags=lags,
        r2=r_squared(res.residuals, y_fit),
        adjusted_r2=adjusted_r2(res.residuals, y_fit, n_slopes),
        durbin_watson=durbin_watson(res.residuals, design.zones),
        condition_number=res.condition_number,
    )


def fit(
    spec: ModelSpec,
    tables: MetricsTables,
    weights: Mapping[str, SpatialWeights] | None = None,
    exclude_zones: Iterable[str] = (),
) -> ModelResult:
    design, y = assemble_design(spec, tables, weights, exclude_zones)
    return fit_design(design, y, spec.estimator, spec.hac_lags, spec)
