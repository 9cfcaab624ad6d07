"""Structured sparse convolution (SSC): layouts, cost model, kernels,
training core and analysis tools."""

__version__ = "0.1.0"
