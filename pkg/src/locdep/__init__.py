"""Exponential-family local dependence random graph models.

Specification, MCMC simulation, Monte-Carlo maximum likelihood, exact
enumeration for small subgraphs, and Wald inference.
"""

__version__ = "0.1.0"
