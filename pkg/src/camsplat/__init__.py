"""Joint camera-placement optimization with Gaussian camera splats."""

__version__ = "0.1.0"
