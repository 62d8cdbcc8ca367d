"""Open long-range ASEP with reservoirs, its Cole-Hopf field and SHE comparisons."""

__version__ = "0.1.0"
