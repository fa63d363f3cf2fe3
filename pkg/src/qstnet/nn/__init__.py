"""Tape-based autodiff, the Adam optimiser and the two tomography networks.

Submodules are imported explicitly (``from qstnet.nn import autodiff``);
nothing heavy is pulled in here so that :mod:`qstnet.recon` can depend on
the autodiff layer without importing the training loop.
"""
