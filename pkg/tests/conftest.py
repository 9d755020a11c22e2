import numpy as np
import pytest


def disk_quadrature(n_r=64, n_theta=256):
    """Gauss-Legendre in r (mapped to [0, 1], Jacobian r) times trapezoid in theta.

    Returns flattened (r, theta, weight) arrays; sum(w * f) integrates f over
    the unit disk with measure r dr dtheta.
    """
    x, w = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * (x + 1.0)
    wr = 0.5 * w * r
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    wt = np.full(n_theta, 2.0 * np.pi / n_theta)
    R, T = np.meshgrid(r, theta, indexing="ij")
    W = np.outer(wr, wt)
    return R.ravel(), T.ravel(), W.ravel()


@pytest.fixture(scope="session")
def quad():
    return disk_quadrature()


def polar_grid(n_r=40, n_theta=40):
    r = (np.arange(n_r) + 0.5) / n_r
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    R, T = np.meshgrid(r, theta, indexing="ij")
    return R.ravel(), T.ravel()
