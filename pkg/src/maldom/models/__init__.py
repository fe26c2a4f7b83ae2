from .arch import build
from .checkpoint import Checkpoint, finetune, pretrain
from .config import ARCHS, CHAR_ARCHS, ConfigMismatch, ModelConfig, TrainConfig
from .optim import AdamState, AdamW, adamw_step
from .train import (
    BpeEncoder,
    ByteEncoder,
    LabelOutOfRange,
    evaluate,
    fit_classifier,
    predict,
    pretrain_mlm,
)
