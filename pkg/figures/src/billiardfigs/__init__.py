"""Figure rendering for billiardtherm CSV outputs."""

__version__ = "0.1.0"
