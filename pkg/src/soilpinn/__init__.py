"""Physics-constrained reconstruction of 3D unsaturated soil moisture.

Given sparse in-situ pressure-head measurements, the package trains a small
neural field psi_hat(x, y, z, t) whose loss couples the data misfit with
the residual of the unsaturated flow equation, and ships the supporting
pieces: a hand-rolled autodiff engine, van Genuchten constitutive
relations, a mass-conservative finite difference solver that generates the
benchmark ground truth, first-order optimizers, and a CLI that runs the
generate / train / report pipeline.

Working units are meters and hours throughout.
"""

__version__ = "0.1.0"
