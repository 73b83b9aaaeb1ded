"""Scenario-based stochastic MPC for an energy hub with GP demand forecasts."""

__version__ = "0.1.0"
