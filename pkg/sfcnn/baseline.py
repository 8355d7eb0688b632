"""
Reference forecasters of total sales over the next `horizon` days.
"""
import logging
import typing as ty
from dataclasses import dataclass

import numpy as np
from pydantic import Field

from sfcnn.base import BaseModel
from sfcnn.errors import ConfigError, InsufficientHistoryError, SingularSystemError
from sfcnn.ingest import LogTable, Sample, sales_history

logger = logging.getLogger(__name__)

RIDGE = 1e-8
MAX_CONDITION = 1e12
WEEK = 7

AvailableBaselinesUnion = ty.NewType(
    "AvailableBaselinesUnion",
    ty.Union["NaiveLastWindow", "MovingAverage", "ArLeastSquares"],
)


def _history(history: ty.Sequence[float]) -> np.ndarray:
    return np.asarray(history, dtype=np.float64).ravel()


def naive_forecast(history: ty.Sequence[float], horizon: int) -> float:
    """Sum of the last `horizon` observed days."""
    history = _history(history)
    if horizon < 1 or len(history) < horizon:
        raise InsufficientHistoryError(f"Need {horizon} days of history, got {len(history)}")
    return float(history[-horizon:].sum())


def moving_average_forecast(history: ty.Sequence[float], horizon: int, weeks: int) -> float:
    """Mean daily sales over the last `weeks` weeks, times `horizon`."""
    history = _history(history)
    if weeks < 1:
        raise ConfigError(f"Moving average needs weeks >= 1, got {weeks=}")
    if len(history) < WEEK * weeks:
        raise InsufficientHistoryError(f"Need {WEEK * weeks} days of history, got {len(history)}")
    return float(history[-WEEK * weeks :].mean() * horizon)


def window_totals(history: ty.Sequence[float], horizon: int) -> np.ndarray:
    """Non-overlapping `horizon`-day totals, the last one ending on the last day."""
    history = _history(history)
    count = len(history) // horizon
    if count == 0:
        return np.zeros(0)
    return history[len(history) - count * horizon :].reshape(count, horizon).sum(axis=1)


@dataclass
class ArFit:
    """Least-squares fit of total_t ~ c + sum_i phi_i * total_{t-i} on scaled totals."""

    coefficients: np.ndarray  # [c, phi_1, ..., phi_p], in scaled units
    scale: float
    design: np.ndarray  # scaled regressor rows
    residuals: np.ndarray  # scaled

    @property
    def order(self) -> int:
        return len(self.coefficients) - 1


def _lagged(z: np.ndarray, order: int, t: int) -> np.ndarray:
    """Regressor row [1, z_{t-1}, ..., z_{t-p}]."""
    return np.concatenate([[1.0], z[t - order : t][::-1]])


def ar_ls_fit(totals: ty.Sequence[float], order: int) -> ArFit:
    totals = _history(totals)
    if order < 1:
        raise ConfigError(f"AR order must be >= 1, got {order=}")
    if len(totals) < order + 2:
        raise InsufficientHistoryError(
            f"AR({order}) needs {order + 2} window totals, got {len(totals)}"
        )
    scale = max(1.0, float(np.mean(np.abs(totals))))
    z = totals / scale
    design = np.stack([_lagged(z, order, t) for t in range(order, len(z))])
    target = z[order:]

    normal = design.T @ design + RIDGE * np.eye(order + 1)
    condition = np.linalg.cond(normal)
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise SingularSystemError(f"AR({order}) normal equations are singular (cond={condition:.3e})")
    coefficients = np.linalg.solve(normal, design.T @ target)
    return ArFit(
        coefficients=coefficients,
        scale=scale,
        design=design,
        residuals=target - design @ coefficients,
    )


def ar_ls_fit_predict(totals: ty.Sequence[float], order: int, horizon: int = None) -> float:
    """
    One-step-ahead AR(order) prediction of the next window total, clamped at 0.

    `horizon` is only used by callers to build `totals`; it does not change the fit.
    """
    totals = _history(totals)
    fit = ar_ls_fit(totals, order)
    z = totals / fit.scale
    prediction = float(_lagged(z, order, len(z)) @ fit.coefficients) * fit.scale
    return max(0.0, prediction)


class BaseBaseline(BaseModel):
    @classmethod
    def from_dict(cls, data: dict) -> AvailableBaselinesUnion:
        kind = data.get("kind")
        if kind == "naive_last_window":
            return NaiveLastWindow(**data)
        elif kind == "moving_average":
            return MovingAverage(**data)
        elif kind == "ar_ls":
            return ArLeastSquares(**data)
        else:
            raise ConfigError(f"Unsupported baseline kind: {kind}")

    @classmethod
    def from_flag(cls, flag: str) -> AvailableBaselinesUnion:
        """`naive`, `ma[:weeks]` or `ar[:order]`."""
        name, _, value = flag.strip().partition(":")
        try:
            if name == "naive":
                return NaiveLastWindow()
            if name == "ma":
                return MovingAverage(weeks=int(value)) if value else MovingAverage()
            if name == "ar":
                return ArLeastSquares(order=int(value)) if value else ArLeastSquares()
        except ValueError:
            raise ConfigError(f"Malformed baseline flag: {flag!r}") from None
        raise ConfigError(f"Unsupported baseline: {flag!r} (expected naive, ma[:w] or ar[:p])")

    @property
    def name(self) -> str:
        raise NotImplementedError()

    def forecast(self, history: ty.Sequence[float], horizon: int) -> float:
        raise NotImplementedError()

    def forecast_samples(
        self, table: LogTable, samples: ty.Sequence[Sample], horizon: int
    ) -> np.ndarray:
        """
        Forecasts from each sample's raw sales up to its end point. Samples the
         baseline can not handle fall back to the naive forecast.
        """
        predictions = np.empty(len(samples))
        fallbacks = 0
        for n, sample in enumerate(samples):
            history = sales_history(table, sample.item_id, sample.region_id, sample.end_point)
            try:
                predictions[n] = self.forecast(history, horizon)
            except (InsufficientHistoryError, SingularSystemError):
                predictions[n] = naive_forecast(history, horizon)
                fallbacks += 1
        if fallbacks:
            logger.warning(f"{self.name}: {fallbacks} of {len(samples)} samples fell back to naive")
        return predictions


class NaiveLastWindow(BaseBaseline):
    """Total of the last `horizon` days."""

    kind: ty.Literal["naive_last_window"] = "naive_last_window"

    @property
    def name(self) -> str:
        return "naive_last_window"

    def forecast(self, history: ty.Sequence[float], horizon: int) -> float:
        return naive_forecast(history, horizon)


class MovingAverage(BaseBaseline):
    """Mean daily sales over the last weeks, scaled to the horizon."""

    kind: ty.Literal["moving_average"] = "moving_average"

    weeks: int = Field(default=4, ge=1, description="Averaging window in weeks.")

    @property
    def name(self) -> str:
        return f"moving_average_{self.weeks}"

    def forecast(self, history: ty.Sequence[float], horizon: int) -> float:
        return moving_average_forecast(history, horizon, self.weeks)


class ArLeastSquares(BaseBaseline):
    kind: ty.Literal["ar_ls"] = "ar_ls"

    order: int = Field(default=2, ge=1, description="Number of lagged window totals.")

    @property
    def name(self) -> str:
        return f"ar_ls_{self.order}"

    def forecast(self, history: ty.Sequence[float], horizon: int) -> float:
        return ar_ls_fit_predict(window_totals(history, horizon), self.order, horizon)
