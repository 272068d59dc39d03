"""tsforge: a from-scratch time-series forecasting toolkit.

Event-log ingestion, stationarity diagnostics, invertible transforms, and
three forecasting families (seasonal ARIMA, recurrent networks, kernel
regression) with expanding-window cross-validation.
"""

from .arima import ArimaSpec, FittedArima, ForecastResult, auto_arima
from .arima import fit as arima_fit
from .arima import forecast as arima_forecast
from .diagnostics import AdfResult, CorrelogramResult, acf, adf_test, pacf, suggest_orders
from .errors import ConfigError, DiagnosticError, InputFormatError, ModelError, ToolkitError
from .kernels import EmbeddingSpec, KernelSpec, KrrModel, SvrModel, embed, gram
from .kernels import krr_fit, krr_predict, svr_fit, svr_predict, forecast_recursive
from .deep import Activation, Initializer, RnnModel
from .deep import bptt_gradients, forward, predict_series
from .deep import train as train_rnn
from .series import EventLog, SplitSpec, TimeSeries, aggregate_events, train_test_split
from .series import read_event_csv, read_series_csv, write_series_csv
from .transforms import (
    Decomposition,
    TransformState,
    arcsin_transform,
    decompose,
    difference,
    ewma,
    exp_restore,
    log_transform,
    moving_average,
    sin_restore,
    undifference,
)
from .validation import CvSpec, Fold, MapeScore, expanding_splits, grid_search
from .validation import grouped_mape, mae, mape, mse, rmse

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
