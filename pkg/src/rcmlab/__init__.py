"""Random conductance models with long-range jumps on finite lattices.

Subpackages and modules:

- :mod:`rcmlab.environment` -- conductance fields, generation, moments, exponents
- :mod:`rcmlab.walk` -- variable speed random walk sampling
- :mod:`rcmlab.kernel` -- heat kernels and caloric functions
- :mod:`rcmlab.corrector` -- corrector and homogenized diffusion matrix
- :mod:`rcmlab.diagnostics` -- audits of functional inequalities
- :mod:`rcmlab.llt` -- local limit theorem error curves
"""

__version__ = "0.1.0"
