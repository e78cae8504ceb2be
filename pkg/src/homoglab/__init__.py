"""homoglab: quantitative stochastic homogenization experiments on periodic lattices."""

__version__ = "0.1.0"
