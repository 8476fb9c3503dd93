"""Visuo-tactile transformer representation learning at desk scale.

Library layout:
  tensor/rng/optim/gradcheck  autodiff core with a finite-difference oracle
  encoder                     the visuo-tactile attention encoder
  baselines                   concatenation and product-of-experts fusion
  latent                      sequential latent dynamics model
  policy                      soft actor-critic over the latent state
  env                         deterministic 2-D pushing simulator
  heatmap                     attention analysis and overlay export
  config/checkpoint/dataset   experiment plumbing
  training/cli/figures        commands, loops, report figures
"""

__version__ = "0.1.0"

from .tensor import Tensor, tensor, backward  # noqa: F401
from .rng import SeededRng  # noqa: F401
