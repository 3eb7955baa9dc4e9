import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np
from sklearn.dummy import DummyRegressor
from sklearn.ensemble import GradientBoostingRegressor, RandomForestRegressor
from sklearn.linear_model import Ridge, SGDRegressor
from sklearn.metrics import mean_squared_error, r2_score
from sklearn.model_selection import train_test_split
from sklearn.pipeline import Pipeline, make_pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.tree import DecisionTreeRegressor

from .attack_data import TimingDataset
from .constants import RANKING_CSV_HEADER, FeatureSet, RegressorKind
from .exceptions import NotFittedError
from .validation import ArchValidator

logger = logging.getLogger(__name__)

# Estimates within this distance above an integer still round to it
CEILING_TOLERANCE = 1e-3

DEFAULT_HYPERPARAMS: dict[RegressorKind, dict[str, Any]] = {
    "ridge": {"alpha": 1e-2},
    "linear-svr": {"epsilon": 0.5, "alpha": 1e-4, "max_iter": 500},
    "decision-tree": {"max_depth": 3, "min_samples_leaf": 2},
    "random-forest": {"n_estimators": 100, "bootstrap": True},
    "boosted-trees": {"n_estimators": 200, "learning_rate": 0.1, "max_depth": 3, "min_samples_leaf": 3},
}


@dataclass(frozen=True)
class RegressorScore:
    """Holdout metrics; r2 is None when the holdout depths have no variance."""
    mse: float
    r2: float | None


@dataclass(frozen=True)
class Regressor:
    """
    A depth-from-time regressor.

    Attributes:
        kind: Model family
        feature_set: "time-only" or "time+params"
        seed: Seed the fit was run with
        hyperparams: Resolved hyperparameters
        estimator: Fitted scikit-learn estimator, None until fit
        loss_curve: Per-round training loss for boosted trees
    """
    kind: RegressorKind
    feature_set: FeatureSet = "time-only"
    seed: int = 0
    hyperparams: dict[str, Any] = field(default_factory=dict)
    estimator: Any = field(default=None, compare=False, repr=False)
    loss_curve: tuple[float, ...] = ()

    @property
    def is_fitted(self) -> bool:
        return self.estimator is not None

    def predict_features(self, features: np.ndarray) -> np.ndarray:
        if not self.is_fitted:
            raise NotFittedError(f"{self.kind} regressor is not fitted")
        return self.estimator.predict(np.asarray(features, dtype=np.float64))


def design_matrix(ds: TimingDataset, features: FeatureSet) -> np.ndarray:
    """Feature matrix of a timing dataset: time alone, or time and parameter count."""
    ArchValidator.validate_choice("feature set", features, FeatureSet)
    if features == "time-only":
        return ds.times[:, None]
    return np.column_stack([ds.times, ds.params])


def _build_estimator(kind: RegressorKind, params: dict[str, Any], seed: int):
    match kind:
        case "ridge":
            return make_pipeline(StandardScaler(), Ridge(**params))
        case "linear-svr":
            return make_pipeline(
                StandardScaler(),
                SGDRegressor(loss="epsilon_insensitive", tol=None, random_state=seed, **params),
            )
        case "decision-tree":
            return DecisionTreeRegressor(random_state=seed, **params)
        case "random-forest":
            return RandomForestRegressor(random_state=seed, **params)
        case "boosted-trees":
            return GradientBoostingRegressor(loss="squared_error", random_state=seed, **params)
    raise ValueError(f"Invalid regressor kind: {kind}")


def fit(
    kind: RegressorKind,
    ds: TimingDataset,
    features: FeatureSet = "time-only",
    hyperparams: dict[str, Any] | None = None,
    seed: int = 0,
) -> Regressor:
    """
    Fit a regressor mapping inference time to depth.

    Args:
        kind: "ridge", "linear-svr", "decision-tree", "random-forest" or "boosted-trees"
        ds: Non-empty timing dataset
        features: "time-only" or "time+params"
        hyperparams: Overrides for DEFAULT_HYPERPARAMS[kind]
        seed: Seed for every stochastic part of the fit

    Returns:
        Fitted Regressor. A constant depth column is fitted by a constant
        model regardless of kind.

    Example:
        >>> reg = fit("random-forest", dataset, seed=3)
        >>> infer_depth(reg, 0.0123)
        9
    """
    ArchValidator.validate_choice("regressor kind", kind, RegressorKind)
    if len(ds) == 0:
        raise ValueError("Cannot fit a regressor on an empty timing dataset")

    X, y = design_matrix(ds, features), ds.depths
    params = {**DEFAULT_HYPERPARAMS[kind], **(hyperparams or {})}

    if np.ptp(y) == 0:
        logger.info("All %d depths equal %g; fitting a constant %s model", len(y), y[0], kind)
        estimator = DummyRegressor(strategy="constant", constant=float(y[0])).fit(X, y)
        return Regressor(kind, features, seed, params, estimator)

    try:
        estimator = _build_estimator(kind, params, seed)
    except TypeError as e:
        raise ValueError(f"Invalid hyperparameters for {kind}: {e}") from None
    estimator.fit(X, y)

    loss_curve = tuple(float(v) for v in estimator.train_score_) if kind == "boosted-trees" else ()
    logger.debug("Fitted %s on %d samples (%s)", kind, len(y), features)
    return Regressor(kind, features, seed, params, estimator, loss_curve)


def predict(reg: Regressor, time: float, params: int | None = None) -> float:
    """
    Real-valued depth estimate for one observed mean time.

    Raises:
        NotFittedError: If reg has not been fitted
        ValueError: If reg uses time+params and params is missing
    """
    if reg.feature_set == "time+params":
        if params is None:
            raise ValueError("This regressor needs the parameter count as a second feature")
        row = [time, params]
    else:
        row = [time]
    return float(reg.predict_features(np.array([row], dtype=np.float64))[0])


def infer_depth(reg: Regressor, mean_time: float, params: int | None = None) -> int:
    """Round the estimate up to the nearest larger integer, never below 1."""
    estimate = predict(reg, mean_time, params)
    return max(1, math.ceil(estimate - CEILING_TOLERANCE))


def score(reg: Regressor, holdout: TimingDataset) -> RegressorScore:
    """MSE and R^2 on a holdout; R^2 uses the holdout's own mean."""
    if len(holdout) == 0:
        raise ValueError("Cannot score on an empty holdout")

    y = holdout.depths
    predictions = reg.predict_features(design_matrix(holdout, reg.feature_set))
    mse = float(mean_squared_error(y, predictions))
    if np.ptp(y) == 0:
        logger.warning("Holdout depths have zero variance; R^2 is undefined")
        return RegressorScore(mse=mse, r2=None)
    return RegressorScore(mse=mse, r2=float(r2_score(y, predictions)))


@dataclass(frozen=True)
class RankingRow:
    rank: int
    kind: RegressorKind
    feature_set: FeatureSet
    mse: float
    r2: float | None
    n_seeds: int


def compare_regressors(
    ds: TimingDataset,
    kinds: Iterable[RegressorKind] = tuple(DEFAULT_HYPERPARAMS),
    feature_sets: Iterable[FeatureSet] = ("time-only", "time+params"),
    seeds: Iterable[int] = range(10),
    test_fraction: float = 0.3,
) -> list[RankingRow]:
    """
    Rank regressor kinds by mean holdout score over seeded splits.

    Each seed draws its own train/holdout split and fit seed. Rows are sorted
    by R^2 descending, with ties broken by kind name.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("At least one seed is required")
    if len(ds) < 4:
        raise ValueError(f"Need at least 4 samples to compare regressors, got {len(ds)}")

    results = []
    for features in feature_sets:
        for kind in kinds:
            scores = []
            for seed in seeds:
                train_idx, test_idx = train_test_split(
                    np.arange(len(ds)), test_size=test_fraction, random_state=seed
                )
                reg = fit(kind, ds.take(train_idx), features, seed=seed)
                scores.append(score(reg, ds.take(test_idx)))

            r2s = [s.r2 for s in scores if s.r2 is not None]
            results.append((
                kind, features,
                float(np.mean([s.mse for s in scores])),
                float(np.mean(r2s)) if r2s else None,
            ))

    results.sort(key=lambda r: (-round(r[3], 9) if r[3] is not None else math.inf, r[0], r[1]))
    return [
        RankingRow(rank, kind, features, mse, r2, len(seeds))
        for rank, (kind, features, mse, r2) in enumerate(results, start=1)
    ]


def write_ranking_csv(rows: Iterable[RankingRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RANKING_CSV_HEADER)
        for row in rows:
            writer.writerow([
                row.rank, row.kind, row.feature_set, repr(row.mse),
                "" if row.r2 is None else repr(row.r2), row.n_seeds,
            ])
    return path


def _tree_nodes(tree) -> dict[str, list]:
    return {
        "feature": [int(v) for v in tree.feature],
        "threshold": [float(v) for v in tree.threshold],
        "left": [int(v) for v in tree.children_left],
        "right": [int(v) for v in tree.children_right],
        "value": [float(v) for v in tree.value[:, 0, 0]],
    }


def export_regressor(reg: Regressor) -> dict[str, Any]:
    """
    JSON-ready dump of a fitted regressor.

    Linear models export their standardisation and coefficients; tree models
    export node arrays {feature, threshold, left, right, value}, with -1
    children marking leaves.
    """
    estimator = reg.estimator
    if estimator is None:
        raise NotFittedError(f"{reg.kind} regressor is not fitted")

    if isinstance(estimator, DummyRegressor):
        model: dict[str, Any] = {"constant": float(np.ravel(estimator.constant_)[0])}
    elif isinstance(estimator, Pipeline):
        scaler, linear = estimator[0], estimator[-1]
        model = {
            "mean": [float(v) for v in scaler.mean_],
            "scale": [float(v) for v in scaler.scale_],
            "coef": [float(v) for v in np.ravel(linear.coef_)],
            "intercept": float(np.ravel(linear.intercept_)[0]),
        }
    elif isinstance(estimator, DecisionTreeRegressor):
        model = {"tree": _tree_nodes(estimator.tree_)}
    elif isinstance(estimator, RandomForestRegressor):
        model = {"trees": [_tree_nodes(tree.tree_) for tree in estimator.estimators_]}
    else:
        init = estimator.init_.predict(np.zeros((1, estimator.n_features_in_)))
        model = {
            "init": float(np.ravel(init)[0]),
            "learning_rate": float(estimator.learning_rate),
            "trees": [_tree_nodes(stage[0].tree_) for stage in estimator.estimators_],
        }

    return {
        "kind": reg.kind,
        "feature_set": reg.feature_set,
        "seed": reg.seed,
        "hyperparams": reg.hyperparams,
        "model": model,
    }


def write_regressor(reg: Regressor, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(export_regressor(reg), indent=2, sort_keys=True) + "\n")
    return path
