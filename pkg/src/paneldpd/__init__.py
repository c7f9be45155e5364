"""Robust estimation for frailty-correlated bivariate panel count data."""
