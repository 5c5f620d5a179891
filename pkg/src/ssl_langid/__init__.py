"""Self-supervised Conformer encoders for spoken language identification at desk scale."""

from .audio import FrontendConfig, Waveform, log_mel
from .checkpoint import Checkpoint, average_checkpoints
from .encoder import ConformerEncoder, EncoderConfig, count_params, set_frozen, truncate
from .head import HeadConfig, LangIDModel, XVectorHead
from .pretrain import PretrainConfig, pretrain
from .train import TrainConfig, evaluate, finetune, layer_sweep

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "ConformerEncoder", "EncoderConfig", "FrontendConfig", "HeadConfig", "LangIDModel",
    "PretrainConfig", "TrainConfig", "Waveform", "XVectorHead", "average_checkpoints", "count_params",
    "evaluate", "finetune", "layer_sweep", "log_mel", "pretrain", "set_frozen", "truncate",
]
