"""Bead-spring connector driven by a finite-mode stochastic Stokes fluid.

Modules
-------
spectral_fluid   Fourier modes, OU amplitudes, velocity fields
potentials       radial spring potentials and their certificates
dynamics         splitting integrator, trajectories, ensembles
control          Stokes matrix, path planning, minimal-norm control
diagnostics      Lyapunov drift, escape, Hoermander rank, convergence
config, io, cli  configuration, output and the ``beadspring`` command
"""

__version__ = "0.1.0"
