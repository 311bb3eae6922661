"""Offline equilibrium learning in tabular Markov games via Bellman-consistent version spaces."""
