"""Phenotype-distribution estimation for reaction-diffusion competition models.

Aggregate density data are fitted either by weights over a mesh of
``(D, rho)`` phenotypes (a random differential equation model solved through a
data-driven basis) or by pointwise fits of ``M`` competing Fisher-KPP
subpopulations.
"""

__version__ = "0.1.0"
