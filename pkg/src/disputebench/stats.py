"""Regression battery: OLS with robust errors, IRLS logistic fits and simple-effect contrasts."""

from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import special
from scipy import stats as sps

from disputebench.corpus import TRAITS
from disputebench.metrics import ALL_DVS, MISSING, STRATEGY_DVS, SpeakerRecord, records_frame

CONST = "CONST"
POSITION = "POSITION"
SELF_COLUMNS = tuple(f"SELF_{t.value}" for t in TRAITS)
PARTNER_COLUMNS = tuple(f"PARTNER_{t.value}" for t in TRAITS)
TRAIT_COLUMNS = SELF_COLUMNS + PARTNER_COLUMNS

CODINGS = ("effect", "dummy")
ROBUST_KINDS = ("HC1", "none")
BINARY_DVS = frozenset({"accept", "notWalkAway"})
DEPENDENT_VARIABLES = frozenset(ALL_DVS + STRATEGY_DVS)

MAX_ITERATIONS = 100
SCORE_TOLERANCE = 1e-8
SEPARATION_BOUND = 30.0
BOUNDARY_PROBABILITY = 1e-6

RESULT_COLUMNS = ["dv", "iv", "beta", "se", "stat", "p", "n", "model", "coding", "robust", "standardized"]


class RegressionError(Exception):
    """Base class for model-fitting failures."""


class DesignError(RegressionError, ValueError):
    pass


class RankDeficiencyError(RegressionError):
    pass


class SeparationError(RegressionError):
    pass


class OneClassError(RegressionError, ValueError):
    pass


class DegenerateContrastError(RegressionError, ValueError):
    pass


def interaction_column(trait_column: str) -> str:
    return f"{trait_column}_X_{POSITION}"


def dv_model(dv: str) -> str:
    return "Logit" if dv in BINARY_DVS else "OLS"


@dataclass(frozen=True)
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    columns: tuple[str, ...]
    row_ids: tuple[str, ...]
    dv: str
    coding: str = "effect"
    standardized: bool = True
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if len(set(self.columns)) != len(self.columns):
            raise DesignError("design columns must be unique")
        if self.X.shape != (len(self.y), len(self.columns)):
            raise DesignError("design shape does not match its columns and response")
        if np.isnan(self.X).any() or np.isnan(self.y).any():
            raise DesignError("design contains missing cells")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def build_design(
    records: Sequence[SpeakerRecord],
    dv: str,
    coding: str = "effect",
    standardize: bool = True,
    interactions: bool = False,
) -> DesignMatrix:
    """Listwise-complete design for ``dv`` with trait, partner-trait and position predictors."""
    if not records:
        raise DesignError("no records to build a design from")
    if coding not in CODINGS:
        raise DesignError(f"unknown coding {coding!r}")
    frame = records_frame(records)
    if dv not in DEPENDENT_VARIABLES or dv not in frame.columns:
        raise DesignError(f"unknown dependent variable {dv!r}")

    complete = frame.dropna(subset=[dv, *TRAIT_COLUMNS, "position"])
    if complete.empty:
        raise DesignError(f"no complete rows for {dv}")

    data = {CONST: np.ones(len(complete))}
    warnings = []
    for name in TRAIT_COLUMNS:
        values = complete[name].to_numpy(dtype=float)
        sd = values.std(ddof=1) if len(values) > 1 else 0.0
        if sd == 0:
            warnings.append(f"{dv}: {name} has zero variance; column dropped")
            continue
        data[name] = (values - values.mean()) / sd if standardize else values

    position = complete["position"].to_numpy(dtype=float)
    if coding == "dummy":
        position = (position > 0).astype(float)
    if np.ptp(position) == 0:
        warnings.append(f"{dv}: {POSITION} has zero variance; column dropped")
    else:
        data[POSITION] = position
        if interactions:
            for name in SELF_COLUMNS:
                if name in data:
                    data[interaction_column(name)] = data[name] * position

    columns = tuple(data)
    return DesignMatrix(
        X=np.column_stack([data[c] for c in columns]),
        y=complete[dv].to_numpy(dtype=float),
        columns=columns,
        row_ids=tuple(f"{d}:{r}" for d, r in zip(complete["dialogue_id"], complete["role"], strict=True)),
        dv=dv,
        coding=coding,
        standardized=standardize,
        warnings=tuple(warnings),
    )


@dataclass(frozen=True)
class Coefficient:
    name: str
    estimate: float
    se: float
    stat: float
    p: float


@dataclass(frozen=True)
class RegressionResult:
    dv: str
    model: str
    coding: str
    robust: str
    standardized: bool
    n: int
    columns: tuple[str, ...]
    params: np.ndarray
    cov: np.ndarray
    fitted: np.ndarray | None = None
    iterations: int = 0
    warnings: tuple[str, ...] = ()

    @property
    def df_resid(self) -> int:
        return self.n - len(self.columns)

    def _p_value(self, stat: np.ndarray) -> np.ndarray:
        if self.model == "OLS":
            return 2 * sps.t.sf(np.abs(stat), self.df_resid)
        return 2 * sps.norm.sf(np.abs(stat))

    @property
    def coefficients(self) -> tuple[Coefficient, ...]:
        se = np.sqrt(np.clip(np.diag(self.cov), 0.0, None))
        with np.errstate(divide="ignore", invalid="ignore"):
            stat = self.params / se
        p = self._p_value(stat)
        return tuple(
            Coefficient(name, float(b), float(s), float(t), float(pv))
            for name, b, s, t, pv in zip(self.columns, self.params, se, stat, p, strict=True)
        )

    def coefficient(self, name: str) -> Coefficient:
        for coef in self.coefficients:
            if coef.name == name:
                return coef
        raise KeyError(name)


def _check_rank(design: DesignMatrix) -> None:
    if design.n <= design.p:
        raise DesignError(f"{design.dv}: {design.n} rows for {design.p} predictors")
    if np.linalg.matrix_rank(design.X) < design.p:
        raise RankDeficiencyError(f"{design.dv}: design matrix is rank deficient")


def ols_fit(design: DesignMatrix, robust: str = "HC1") -> RegressionResult:
    if robust not in ROBUST_KINDS:
        raise DesignError(f"unknown robust flavor {robust!r}")
    _check_rank(design)
    X, y = design.X, design.y
    n, p = X.shape
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    bread = np.linalg.inv(X.T @ X)
    if robust == "HC1":
        meat = (X * resid[:, None] ** 2).T @ X
        cov = bread @ meat @ bread * n / (n - p)
    else:
        cov = bread * (resid @ resid) / (n - p)
    return RegressionResult(
        dv=design.dv,
        model="OLS",
        coding=design.coding,
        robust=robust,
        standardized=design.standardized,
        n=n,
        columns=design.columns,
        params=beta,
        cov=cov,
        fitted=X @ beta,
        warnings=design.warnings,
    )


def logit_fit(design: DesignMatrix) -> RegressionResult:
    """Bernoulli maximum likelihood by IRLS with a Wald test on the observed information."""
    X, y = design.X, design.y
    if not np.isin(y, (0.0, 1.0)).all():
        raise DesignError(f"{design.dv}: logistic response must be 0/1")
    if y.min() == y.max():
        raise OneClassError(f"{design.dv}: only one outcome class present")
    _check_rank(design)

    beta = np.zeros(design.p)
    warnings = list(design.warnings)
    iterations = 0
    converged = False
    for iterations in range(1, MAX_ITERATIONS + 1):
        mu = special.expit(X @ beta)
        score = X.T @ (y - mu)
        if np.max(np.abs(score)) < SCORE_TOLERANCE:
            converged = True
            break
        info = (X * (mu * (1 - mu))[:, None]).T @ X
        try:
            beta = beta + np.linalg.solve(info, score)
        except np.linalg.LinAlgError as e:
            raise SeparationError(f"{design.dv}: information matrix became singular") from e
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            raise SeparationError(f"{design.dv}: coefficients diverge (|beta| > {SEPARATION_BOUND:g})")

    mu = special.expit(X @ beta)
    if np.min(np.minimum(mu, 1 - mu)) < BOUNDARY_PROBABILITY:
        raise SeparationError(f"{design.dv}: fitted probabilities reach 0 or 1")
    if not converged:
        warnings.append(f"{design.dv}: IRLS stopped after {MAX_ITERATIONS} iterations")
    info = (X * (mu * (1 - mu))[:, None]).T @ X
    return RegressionResult(
        dv=design.dv,
        model="Logit",
        coding=design.coding,
        robust="none",
        standardized=design.standardized,
        n=design.n,
        columns=design.columns,
        params=beta,
        cov=np.linalg.inv(info),
        fitted=mu,
        iterations=iterations,
        warnings=tuple(warnings),
    )


@dataclass(frozen=True)
class ContrastEstimate:
    name: str
    estimate: float
    se: float
    stat: float
    p: float


@dataclass(frozen=True)
class Contrast:
    """A named linear combination of a model's coefficients."""

    name: str
    weights: np.ndarray

    def evaluate(self, result: RegressionResult) -> ContrastEstimate:
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(result.columns),):
            raise DesignError(f"contrast {self.name} has {w.size} weights for {len(result.columns)} coefficients")
        if not w.any():
            raise DegenerateContrastError(f"contrast {self.name} has all-zero weights")
        estimate = float(w @ result.params)
        se = float(np.sqrt(max(w @ result.cov @ w, 0.0)))
        if se == 0:
            raise DegenerateContrastError(f"contrast {self.name} has zero variance")
        stat = estimate / se
        return ContrastEstimate(self.name, estimate, se, stat, float(result._p_value(np.array(stat))))

    @classmethod
    def of(cls, name: str, columns: Sequence[str], weights: dict[str, float]) -> "Contrast":
        missing = set(weights) - set(columns)
        if missing:
            raise DesignError(f"contrast {name} refers to absent columns {sorted(missing)}")
        return cls(name, np.array([weights.get(c, 0.0) for c in columns]))


def simple_effects(result: RegressionResult, trait: str) -> tuple[ContrastEstimate, ContrastEstimate]:
    """Trait effect for the Buyer (POSITION=0) and the Seller (POSITION=1) in a dummy-coded interaction model."""
    column = trait if trait.startswith("SELF_") else f"SELF_{trait}"
    interaction = interaction_column(column)
    if column not in result.columns or interaction not in result.columns:
        raise DesignError(f"{result.dv}: model lacks {column} and {interaction}")
    if result.coding != "dummy":
        raise DesignError("simple effects need dummy-coded position")
    buyer = Contrast.of("Buyer@POS=0", result.columns, {column: 1.0})
    seller = Contrast.of("Seller@POS=1", result.columns, {column: 1.0, interaction: 1.0})
    return buyer.evaluate(result), seller.evaluate(result)


@dataclass
class BatteryResult:
    results: list[RegressionResult] = field(default_factory=list)
    errors: dict[str, str] = field(default_factory=dict)

    @property
    def warnings(self) -> list[str]:
        return [w for r in self.results for w in r.warnings]


def regression_battery(
    records: Sequence[SpeakerRecord],
    dvs: Sequence[str] = ALL_DVS,
    coding: str = "effect",
    robust: str = "HC1",
    standardize: bool = True,
    interactions: bool = False,
) -> BatteryResult:
    """Fit every DV with its model kind; per-DV failures are collected and the battery continues."""
    battery = BatteryResult()
    for dv in dvs:
        try:
            design = build_design(records, dv, coding, standardize, interactions)
            if dv_model(dv) == "Logit":
                battery.results.append(logit_fit(design))
            else:
                battery.results.append(ols_fit(design, robust))
        except (RegressionError, np.linalg.LinAlgError) as e:
            battery.errors[dv] = str(e)
    return battery


def results_frame(results: Sequence[RegressionResult]) -> pd.DataFrame:
    rows = []
    for result in results:
        for coef in result.coefficients:
            rows.append(
                {
                    "dv": result.dv,
                    "iv": coef.name,
                    "beta": coef.estimate,
                    "se": coef.se,
                    "stat": coef.stat,
                    "p": coef.p,
                    "n": result.n,
                    "model": result.model,
                    "coding": result.coding,
                    "robust": result.robust,
                    "standardized": result.standardized,
                }
            )
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def simple_effects_frame(results: Sequence[RegressionResult]) -> pd.DataFrame:
    rows = []
    for result in results:
        for column in SELF_COLUMNS:
            if interaction_column(column) not in result.columns:
                continue
            for effect in simple_effects(result, column):
                rows.append(
                    {
                        "dv": result.dv,
                        "iv": column,
                        "position": effect.name,
                        "beta": effect.estimate,
                        "se": effect.se,
                        "stat": effect.stat,
                        "p": effect.p,
                        "n": result.n,
                        "model": result.model,
                    }
                )
    return pd.DataFrame(rows, columns=["dv", "iv", "position", "beta", "se", "stat", "p", "n", "model"])


def write_results_table(results: Sequence[RegressionResult] | pd.DataFrame, path: str | Path) -> None:
    frame = results if isinstance(results, pd.DataFrame) else results_frame(results)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, na_rep=MISSING)
