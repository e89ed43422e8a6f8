"""
Robust Nonlinear Quadratic Gaussian control toolkit.
State-dependent Riccati synthesis (SDRE, H2-Hinf, RNQG), value-function
approximation and a seeded simulation harness for the flywheel pendulum.
"""

__version__ = "1.0.0"
