"""Label-frugal active learning for skeleton action recognition.

Exemplar displays are designed by an entropy-regularized fixed-point solver,
optionally in the latent space of an orthonormal-weight invertible network,
and labeled by an oracle round after round.
"""

from .display import DisplayDesigner, DisplayProblem, solve
from .gcn import GraphConvClassifier
from .invertible import LayerStack, OrthonormalNetClassifier, certify
from .learner import ActiveLearner
from .skeleton import SkeletonGraphEncoder, load_dataset, synth_pool
from .strategies import STRATEGIES, macro_accuracy

__version__ = "0.1.0"

__all__ = [
    "ActiveLearner", "DisplayDesigner", "DisplayProblem", "GraphConvClassifier", "LayerStack",
    "OrthonormalNetClassifier", "STRATEGIES", "SkeletonGraphEncoder", "certify",
    "load_dataset", "macro_accuracy", "solve", "synth_pool",
]
