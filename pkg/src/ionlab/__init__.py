"""Deterministic simulation and analysis toolkit for trapped-ion qubit
readout statistics, dephasing under pulse sequences, platform vibration
spectra, and photon-collection efficiency budgets."""

__version__ = "0.1.0"

SCHEMA_VERSION = 1
