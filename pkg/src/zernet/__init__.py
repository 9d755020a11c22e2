"""Zernike-polynomial convolutional networks for scalar-field regression on triangle meshes."""

__version__ = "0.1.0"
