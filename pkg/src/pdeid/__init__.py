"""pdeid: sparse PDE identification from noisy scattered data.

Fits one rational neural network per measured system response and jointly
learns a sparse coefficient vector over a library of candidate PDE terms,
recovering a human-readable governing equation.
"""

__version__ = "0.1.0"
