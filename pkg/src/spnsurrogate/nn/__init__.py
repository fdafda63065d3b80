"""Numpy reverse-mode autodiff, the 1D residual regressor, and its training loop."""
