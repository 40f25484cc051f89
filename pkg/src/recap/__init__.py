"""Cloud-aware provenance capture, replay and comparison for simulated workflows."""

__version__ = "0.1.0"
