"""Online estimators for arc traversal-time cost parameters.

Three estimator families are provided, all working on the linear
observation model ``y = x^T theta + e``:

* least squares over a moving window (LSMW),
* recursive least squares with constant or adaptive forgetting (RLS),
* a scalar Kalman filter on a random-walk state (KF).

The step functions operate on explicit state objects. The forecaster
classes wrap them into a common one-step-ahead interface that is shared by
the offline series runner and by the per-arc cost banks.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
import logging
import math
from typing import Iterable, Protocol, Sequence

import numpy as np

from .const import (
    ALPHA3_SCALE_FRACTION,
    DEFAULT_ALPHA1,
    DEFAULT_ALPHA2,
    DEFAULT_HISTORY,
    DEFAULT_KF_CALIBRATION,
    DEFAULT_KF_Q_RATIO,
    DEFAULT_LAMBDA,
    DEFAULT_P0,
    DEFAULT_WINDOW,
    KF_R_FLOOR,
    METHOD_KF,
    METHOD_LSMW,
    METHOD_ORDER,
    METHOD_RLS,
    METHOD_RLS_ADAPTIVE,
    METHOD_TEMPLATES,
)
from .exceptions import (
    ConfigError,
    NumericBreakdownError,
    SeriesTooShortError,
    SingularWindowError,
    UsageError,
)

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class Sample:
    """One (regressor, observation) pair."""

    regressor: np.ndarray
    observation: float

    @classmethod
    def scalar(cls, observation: float) -> Sample:
        """Sample for the constant regressor used by traversal-time tracking."""
        return cls(np.ones(1), float(observation))


def _regressor(sample: Sample, dim: int) -> tuple[np.ndarray, float]:
    x = np.asarray(sample.regressor, dtype=float).ravel()
    if x.size != dim:
        raise UsageError(
            f"regressor has dimension {x.size}, estimator expects {dim}"
        )
    y = float(sample.observation)
    if not (np.all(np.isfinite(x)) and math.isfinite(y)):
        raise UsageError(f"sample is not finite: x={x.tolist()}, y={y}")
    return x, y


# ---------------------------------------------------------------------------
# Least squares over a moving window
# ---------------------------------------------------------------------------


@dataclass
class LsmwState:
    """Moving window of the last ``window`` samples.

    ``estimates`` and ``residuals`` keep the latest ``history`` solutions,
    all of them when ``history`` is None.
    """

    window: int
    dim: int = 1
    history: int | None = DEFAULT_HISTORY
    buffer: deque = field(init=False)
    estimates: deque = field(init=False)
    residuals: deque = field(init=False)

    def __post_init__(self) -> None:
        if int(self.window) != self.window or self.window < 1:
            raise ConfigError(f"window must be an integer >= 1, got {self.window}")
        if self.dim < 1:
            raise ConfigError(f"dimension must be >= 1, got {self.dim}")
        if self.history is not None and self.history < 1:
            raise ConfigError(f"history must be >= 1 or None, got {self.history}")
        self.window = int(self.window)
        self.buffer = deque(maxlen=self.window)
        self.estimates = deque(maxlen=self.history)
        self.residuals = deque(maxlen=self.history)

    @property
    def is_full(self) -> bool:
        return len(self.buffer) == self.window


def lsmw_step(state: LsmwState, sample: Sample) -> np.ndarray | None:
    """Append a sample and re-solve the window.

    Returns None while the window is not yet full, otherwise the least
    squares solution of the normal equations over the window. The window's
    residuals are stored alongside the estimate.
    """
    x, y = _regressor(sample, state.dim)
    state.buffer.append((x, y))
    if not state.is_full:
        return None

    regressors = np.vstack([row for row, _ in state.buffer])
    observations = np.array([obs for _, obs in state.buffer])
    normal = regressors.T @ regressors
    if np.linalg.matrix_rank(normal) < state.dim:
        raise SingularWindowError(
            f"window of {state.window} samples spans rank "
            f"{np.linalg.matrix_rank(normal)} < {state.dim}"
        )
    theta = np.linalg.solve(normal, regressors.T @ observations)
    state.estimates.append(theta)
    state.residuals.append(observations - regressors @ theta)
    return theta


# ---------------------------------------------------------------------------
# Recursive least squares
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdaptiveLambda:
    """Parameters of the residual-driven forgetting factor.

    ``alpha3`` None means: one percent of the running observation scale.
    """

    alpha1: float = DEFAULT_ALPHA1
    alpha2: float = DEFAULT_ALPHA2
    alpha3: float | None = None

    def __post_init__(self) -> None:
        _check_alphas(self.alpha1, self.alpha2, self.alpha3)


def _check_alphas(alpha1: float, alpha2: float, alpha3: float | None) -> None:
    if not 0.0 < alpha1 < 1.0:
        raise ConfigError(f"alpha1 must lie in (0, 1), got {alpha1}")
    if not alpha2 > 0.0:
        raise ConfigError(f"alpha2 must be > 0, got {alpha2}")
    if alpha3 is not None and not alpha3 >= 0.0:
        raise ConfigError(f"alpha3 must be >= 0, got {alpha3}")


def adaptive_lambda(
    prev_residual: float, alpha1: float, alpha2: float, alpha3: float
) -> float:
    """Forgetting factor from the magnitude of the previous residual.

    Small residuals give a factor close to 1 (long memory), large ones push
    it towards ``1 - alpha1`` (short memory). The result lies strictly
    inside (1 - alpha1, 1) for every finite residual.
    """
    _check_alphas(alpha1, alpha2, alpha3)
    bend = math.atan(alpha2 * (abs(prev_residual) - alpha3)) / math.pi + 0.5
    lam = 1.0 - alpha1 * bend
    # rounding can land on either bound for extreme residuals
    return min(max(lam, math.nextafter(1.0 - alpha1, 1.0)), math.nextafter(1.0, 0.0))


@dataclass
class RlsState:
    """Recursive least squares state.

    ``covariance`` is the P matrix. With ``adaptive`` set the forgetting
    factor is recomputed every step, otherwise ``lam`` is used.
    """

    theta: np.ndarray
    covariance: np.ndarray
    lam: float = DEFAULT_LAMBDA
    adaptive: AdaptiveLambda | None = None
    last_gain: np.ndarray | None = None
    last_residual: float = 0.0
    last_lambda: float | None = None
    scale_sum: float = 0.0
    scale_count: int = 0

    def __post_init__(self) -> None:
        self.theta = np.asarray(self.theta, dtype=float).ravel().copy()
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float)).copy()
        dim = self.theta.size
        if self.covariance.shape != (dim, dim):
            raise UsageError(
                f"covariance shape {self.covariance.shape} does not match "
                f"parameter dimension {dim}"
            )
        if self.adaptive is None and not 0.0 < self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in (0, 1], got {self.lam}")

    @property
    def dim(self) -> int:
        return self.theta.size

    def current_lambda(self, observation: float) -> float:
        """Forgetting factor for the update with ``observation``."""
        if self.adaptive is None:
            return self.lam
        alpha3 = self.adaptive.alpha3
        if alpha3 is None:
            if self.scale_count:
                scale = self.scale_sum / self.scale_count
            else:
                scale = abs(observation)
            alpha3 = ALPHA3_SCALE_FRACTION * scale
        return adaptive_lambda(
            self.last_residual, self.adaptive.alpha1, self.adaptive.alpha2, alpha3
        )


def rls_step(state: RlsState, sample: Sample) -> np.ndarray:
    """One recursive least squares update, returns the new estimate."""
    x, y = _regressor(sample, state.dim)
    lam = state.current_lambda(y)

    px = state.covariance @ x
    denom = lam + float(x @ px)
    if not math.isfinite(denom) or denom <= 0.0:
        raise NumericBreakdownError(f"RLS denominator is {denom} (lambda={lam})")

    residual = y - float(x @ state.theta)
    covariance = (state.covariance - np.outer(px, px) / denom) / lam
    covariance = 0.5 * (covariance + covariance.T)
    gain = px / denom
    theta = state.theta + gain * residual
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(covariance))):
        raise NumericBreakdownError("RLS update produced non-finite values")

    state.theta = theta
    state.covariance = covariance
    state.last_gain = gain
    state.last_residual = residual
    state.last_lambda = lam
    state.scale_sum += abs(y)
    state.scale_count += 1
    _LOGGER.debug(
        "RLS step: y=%.6f residual=%.6f lambda=%.4f theta=%s",
        y, residual, lam, theta.tolist()
    )
    return theta


# ---------------------------------------------------------------------------
# Kalman filter
# ---------------------------------------------------------------------------


@dataclass
class KfState:
    """Scalar Kalman filter state with x(k+1) = a x(k) + b u + w, y = c x + v.

    ``predicted`` is the phase flag: a correction is only valid right after
    a prediction.
    """

    x_hat: float
    variance: float
    q: float
    r: float
    a: float = 1.0
    b: float = 0.0
    c: float = 1.0
    last_gain: float = 0.0
    predicted: bool = False

    def __post_init__(self) -> None:
        if not self.q >= 0.0:
            raise ConfigError(f"process noise variance q must be >= 0, got {self.q}")
        if not self.r > 0.0:
            raise ConfigError(f"measurement noise variance r must be > 0, got {self.r}")
        if not self.variance >= 0.0:
            raise ConfigError(f"initial variance must be >= 0, got {self.variance}")


def kf_predict(state: KfState, control: float = 0.0) -> tuple[float, float]:
    """Time update. Returns the a-priori (estimate, variance)."""
    state.x_hat = state.a * state.x_hat + state.b * control
    state.variance = state.a * state.a * state.variance + state.q
    state.predicted = True
    return state.x_hat, state.variance


def kf_correct(state: KfState, observation: float) -> tuple[float, float]:
    """Measurement update. Returns the a-posteriori (estimate, variance)."""
    if not state.predicted:
        raise UsageError("kf_correct called without a preceding kf_predict")
    y = float(observation)
    if not math.isfinite(y):
        raise UsageError(f"observation is not finite: {y}")
    innovation_var = state.c * state.c * state.variance + state.r
    if not math.isfinite(innovation_var) or innovation_var <= 0.0:
        raise NumericBreakdownError(f"KF innovation variance is {innovation_var}")

    gain = state.variance * state.c / innovation_var
    state.x_hat = state.x_hat + gain * (y - state.c * state.x_hat)
    state.variance = (1.0 - gain * state.c) * state.variance
    state.last_gain = gain
    state.predicted = False
    return state.x_hat, state.variance


# ---------------------------------------------------------------------------
# Error statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorStats:
    """Summary statistics of one-step-ahead residuals."""

    count: int
    mean: float
    std: float
    rmse: float
    max_abs: float
    mean_abs: float


def error_stats(residuals: Iterable[float]) -> ErrorStats:
    """Build ErrorStats from residuals (population standard deviation)."""
    values = np.asarray(list(residuals), dtype=float)
    if values.size == 0:
        raise UsageError("no residuals to summarise")
    return ErrorStats(
        count=int(values.size),
        mean=float(np.mean(values)),
        std=float(np.std(values)),
        rmse=float(np.sqrt(np.mean(values * values))),
        max_abs=float(np.max(np.abs(values))),
        mean_abs=float(np.mean(np.abs(values))),
    )


# ---------------------------------------------------------------------------
# One-step-ahead forecasters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MethodConfig:
    """Estimator choice plus its parameters.

    Parameters that do not apply to ``kind`` are ignored.
    """

    kind: str
    window: int = DEFAULT_WINDOW
    lam: float = DEFAULT_LAMBDA
    p0: float = DEFAULT_P0
    theta0: float | None = None
    alpha1: float = DEFAULT_ALPHA1
    alpha2: float = DEFAULT_ALPHA2
    alpha3: float | None = None
    q: float | None = None
    r: float | None = None
    calibration: int = DEFAULT_KF_CALIBRATION
    q_ratio: float = DEFAULT_KF_Q_RATIO

    def __post_init__(self) -> None:
        if self.kind not in METHOD_ORDER:
            raise ConfigError(
                f"unknown method {self.kind!r}, expected one of {', '.join(METHOD_ORDER)}"
            )
        if self.kind == METHOD_LSMW and (int(self.window) != self.window or self.window < 1):
            raise ConfigError(f"window must be an integer >= 1, got {self.window}")
        if self.kind == METHOD_RLS and not 0.0 < self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in (0, 1], got {self.lam}")
        if self.kind in (METHOD_RLS, METHOD_RLS_ADAPTIVE) and not self.p0 > 0.0:
            raise ConfigError(f"p0 must be > 0, got {self.p0}")
        if self.kind == METHOD_RLS_ADAPTIVE:
            _check_alphas(self.alpha1, self.alpha2, self.alpha3)
        if self.kind == METHOD_KF:
            if self.calibration < 3:
                raise ConfigError(
                    f"KF calibration needs at least 3 observations, got {self.calibration}"
                )
            if self.r is not None and not self.r > 0.0:
                raise ConfigError(f"r must be > 0, got {self.r}")
            if self.q is not None and not self.q >= 0.0:
                raise ConfigError(f"q must be >= 0, got {self.q}")
            if not self.q_ratio >= 0.0:
                raise ConfigError(f"q_ratio must be >= 0, got {self.q_ratio}")

    @property
    def name(self) -> str:
        return METHOD_TEMPLATES[self.kind]["name"]


class Forecaster(Protocol):
    """One-step-ahead forecaster of a scalar series."""

    def forecast(self) -> float | None:
        """Forecast of the next observation, None while warming up."""

    def observe(self, observation: float) -> None:
        """Incorporate a new observation."""


class LsmwForecaster:
    """Window mean of the last ``window`` observations."""

    def __init__(self, config: MethodConfig) -> None:
        self.state = LsmwState(window=config.window)

    def forecast(self) -> float | None:
        if not self.state.estimates:
            return None
        return float(self.state.estimates[-1][0])

    def observe(self, observation: float) -> None:
        lsmw_step(self.state, Sample.scalar(observation))


class RlsForecaster:
    """RLS on the constant regressor.

    Without a configured ``theta0`` the first observation initialises the
    estimate.
    """

    def __init__(self, config: MethodConfig) -> None:
        self._config = config
        self.state: RlsState | None = None
        if config.theta0 is not None:
            self.state = self._new_state(config.theta0)
        self.lambdas: deque[float] = deque(maxlen=DEFAULT_HISTORY)

    def _new_state(self, theta0: float) -> RlsState:
        adaptive = None
        if self._config.kind == METHOD_RLS_ADAPTIVE:
            adaptive = AdaptiveLambda(
                self._config.alpha1, self._config.alpha2, self._config.alpha3
            )
        return RlsState(
            theta=np.array([float(theta0)]),
            covariance=np.array([[self._config.p0]]),
            lam=self._config.lam,
            adaptive=adaptive,
        )

    def forecast(self) -> float | None:
        if self.state is None:
            return None
        return float(self.state.theta[0])

    def observe(self, observation: float) -> None:
        if self.state is None:
            self.state = self._new_state(observation)
        rls_step(self.state, Sample.scalar(observation))
        self.lambdas.append(self.state.last_lambda)


class KalmanForecaster:
    """Random-walk Kalman filter with optional noise calibration.

    Unconfigured noise variances are calibrated from the first differences
    of the leading observations (``calibration`` of them): R is half their
    sample variance and Q = q_ratio * R. Until R is known the forecast is
    the running mean of the observations.
    """

    def __init__(self, config: MethodConfig) -> None:
        self._config = config
        self.state: KfState | None = None
        self._calibration: list[float] = []
        self._merged = 0
        self._mean = 0.0
        self._floor_logged = False
        self._frozen: tuple[float, float] | None = None

    def forecast(self) -> float | None:
        if self.state is not None:
            return self.state.c * (self.state.a * self.state.x_hat)
        if self._merged:
            return self._mean
        return None

    def _noise(self) -> tuple[float, float] | None:
        if self._frozen is not None:
            return self._frozen
        config = self._config
        r = config.r
        if r is None:
            if len(self._calibration) < 3:
                return None
            r = float(np.var(np.diff(self._calibration), ddof=1)) / 2.0
            reference = self.state.x_hat if self.state is not None else self._mean
            floor = KF_R_FLOOR * max(1.0, reference * reference)
            if r < floor:
                if not self._floor_logged:
                    _LOGGER.warning(
                        "Calibrated measurement variance %.3e is below the floor, "
                        "using %.3e",
                        r, floor
                    )
                    self._floor_logged = True
                r = floor
        q = config.q if config.q is not None else config.q_ratio * r
        if config.r is not None or len(self._calibration) >= config.calibration:
            self._frozen = (q, r)
        return q, r

    def observe(self, observation: float) -> None:
        y = float(observation)
        if not math.isfinite(y):
            raise UsageError(f"observation is not finite: {y}")
        if len(self._calibration) < self._config.calibration:
            self._calibration.append(y)
        noise = self._noise()

        if noise is None:
            self._merged += 1
            self._mean += (y - self._mean) / self._merged
            return

        q, r = noise
        if self.state is None:
            if self._merged:
                self.state = KfState(
                    x_hat=self._mean,
                    variance=r / self._merged,
                    q=q,
                    r=r,
                )
            else:
                # noise configured: the first observation initialises the filter
                self.state = KfState(x_hat=y, variance=r, q=q, r=r)
                return
        else:
            self.state.q = q
            self.state.r = r

        kf_predict(self.state)
        kf_correct(self.state, y)


def make_forecaster(config: MethodConfig) -> Forecaster:
    """Return a fresh forecaster for ``config.kind``."""
    if config.kind == METHOD_LSMW:
        return LsmwForecaster(config)
    if config.kind in (METHOD_RLS, METHOD_RLS_ADAPTIVE):
        return RlsForecaster(config)
    return KalmanForecaster(config)


def forecast_series(
    config: MethodConfig, values: Sequence[float]
) -> list[float | None]:
    """One-step-ahead forecasts of ``values``.

    Element t is the forecast of ``values[t]`` made from ``values[:t]``.
    """
    forecaster = make_forecaster(config)
    forecasts: list[float | None] = []
    for value in values:
        forecasts.append(forecaster.forecast())
        forecaster.observe(value)
    return forecasts


def residuals_of(
    values: Sequence[float], forecasts: Sequence[float | None]
) -> list[float]:
    """Observed minus forecast for every row that has a forecast."""
    return [
        float(value) - forecast
        for value, forecast in zip(values, forecasts)
        if forecast is not None
    ]


def min_series_length(config: MethodConfig) -> int:
    """Shortest series that yields at least one one-step-ahead forecast."""
    if config.kind == METHOD_LSMW:
        return config.window + 1
    return 2


def run_estimator(
    config: MethodConfig, series: Sequence
) -> tuple[list[float | None], ErrorStats]:
    """Feed a traversal series in time order and summarise the residuals.

    ``series`` holds TraversalObservation items (anything with
    ``start_time`` and ``duration``). Returns the forecast per observation
    (None during warm-up) and the residual statistics.
    """
    required = min_series_length(config)
    if len(series) < required:
        raise SeriesTooShortError(len(series), required, config.kind)
    if config.kind == METHOD_KF and config.r is None and len(series) < config.calibration:
        _LOGGER.warning(
            "Series of %d observations is shorter than the KF calibration window (%d)",
            len(series), config.calibration
        )

    ordered = sorted(series, key=lambda obs: obs.start_time)
    values = [float(obs.duration) for obs in ordered]
    forecasts = forecast_series(config, values)
    stats = error_stats(residuals_of(values, forecasts))
    _LOGGER.debug(
        "%s: %d residuals, rmse=%.6f", config.kind, stats.count, stats.rmse
    )
    return forecasts, stats
