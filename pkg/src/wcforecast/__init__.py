"""Hybrid World Cup forecasting: Poisson ratings, bookmaker consensus, goal forest, tournament simulation."""

__version__ = "0.1.0"

from .errors import ConvergenceError, DataError, ForecastError, InvariantError  # noqa: E402

__all__ = ["ConvergenceError", "DataError", "ForecastError", "InvariantError", "__version__"]
