"""Probabilistically masked language modeling at desk scale.

Train small transformers whose masking ratio is drawn from a prior, generate
text autoregressively in any token order, and verify numerically that the
uniform-prior masked objective recombines into an order-averaged
autoregressive objective.
"""

from .masking import MaskPattern, MaskWeight, MaskingPrior
from .model import Transformer, TransformerConfig
from .objectives import LossValue, verify_equivalence
from .tensor import Tensor

__all__ = [
    "MaskPattern",
    "MaskWeight",
    "MaskingPrior",
    "Transformer",
    "TransformerConfig",
    "LossValue",
    "Tensor",
    "verify_equivalence",
]

__version__ = "0.1.0"
