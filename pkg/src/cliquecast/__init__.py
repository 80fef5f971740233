"""Scene-consistent multimodal joint trajectory prediction for agent cliques.

Public surface: the composite CliqueModel (encoder + discrete joint latent +
policy decoder), scene/window data handling, the trainer, evaluation
metrics, the contingency planner, and the CLI/HTTP service.
"""

from .model import CliqueModel, ModelConfig

__all__ = ["CliqueModel", "ModelConfig"]
__version__ = "0.1.0"
