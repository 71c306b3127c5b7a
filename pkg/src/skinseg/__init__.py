"""Skin segmentation networks (U-Net, U-Net Large, Dense Residual U-Net) in plain numpy."""

__version__ = "0.1.0"
