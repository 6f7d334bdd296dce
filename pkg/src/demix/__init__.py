"""demix: a self-contained testbed for classification under multiple unknown
dataset biases.

The package bundles a from-scratch reverse-mode autodiff engine on numpy
(:mod:`demix.tensor`), a procedural multi-bias digit dataset
(:mod:`demix.data`), a two-encoder mixture-of-experts debiasing model
(:mod:`demix.model`), its training objectives with float64 reference oracles
(:mod:`demix.losses`, :mod:`demix.oracle`), a two-phase trainer
(:mod:`demix.train`), evaluation and layer-depth probing utilities
(:mod:`demix.evaluate`), and a command-line front end (:mod:`demix.cli`).
"""

__version__ = "0.1.0"
