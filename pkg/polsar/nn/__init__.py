from .checkpoint import Checkpoint
from .modules import ForwardOutput, ModelConfig, SKDNet
from .optim import Adam, StepDecay, adam_step
from .tensor import Tensor, name_scope, no_grad

__all__ = [
    'Adam', 'Checkpoint', 'ForwardOutput', 'ModelConfig', 'SKDNet',
    'StepDecay', 'Tensor', 'adam_step', 'name_scope', 'no_grad',
]
