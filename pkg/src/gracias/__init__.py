"""Randomised filter-bank subspace defense against adversarial images.

Modules: ``tensor`` (convolution, Jacobi eigensolver, thin SVD), ``defense``
(the transform and baselines), ``grassmann`` (subspace distances and the
proximity bound), ``model`` (small hand-differentiated classifiers),
``attacks`` (FGSM, PGD, BPDA, EOT) and ``harness`` (data, experiments, CLI).
"""

from .defense import DefenseConfig, bitdepth_reduce, chain, gracias_defend
from .rng import Xoshiro256, splitmix64, sub_seed

__all__ = ["DefenseConfig", "Xoshiro256", "bitdepth_reduce", "chain", "gracias_defend", "splitmix64", "sub_seed"]
__version__ = "0.1.0"
