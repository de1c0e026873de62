"""
shearflow - finite element solver and adjoint optimizer for the optimal
control of shear-thickening Stokes flows with a nonsmooth yield term.
"""

__version__ = "1.0.0"
