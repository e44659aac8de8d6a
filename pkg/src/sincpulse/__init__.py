"""Unsupervised discovery of periodic pulse-like signals in video tensors.

The package trains a small temporal network so that the frequency content of
its output concentrates inside a plausible pulse band, without ever seeing a
label.  Spectra, losses and their exact gradients live in :mod:`spectral` and
:mod:`losses`; the tiny reverse-mode engine driving the model is
:mod:`diffcore`.
"""

__version__ = "0.1.0"
