"""Adversarial training against a mixture of l1, l2 and l-inf threats, at desk scale.

Modules: ``geometry`` (norms, projections, ascent steps), ``models`` (toy
models with manual gradients), ``attacks`` (PGD and mixture objectives),
``training`` (MAX/AVG/MSD/SAT/ADT strategies, SGD, cyclic LR, SWA),
``analysis`` (smoothness, stability, landscapes, stepsize bounds) and the
harness (``config``, ``data``, ``export``, ``runner``, ``cli``).
"""
__version__ = "0.1.0"
