"""Single-cell Wi-Fi 7 multi-link simulator for AR traffic capacity studies."""

__version__ = "0.1.0"
