"""Bayesian censored spatial regression with SPDE-GMRF fields and horseshoe+ shrinkage."""

__version__ = "0.1.0"
