"""Reduction of multiscale stochastic reaction networks."""
