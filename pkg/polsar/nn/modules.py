"""
Network building blocks and the SKDNet classifier.

SKDNet = early CNN (three conv-BN-ReLU layers) -> patch embedding with a
cls token and learned positional embeddings -> pre-norm single-head
transformer blocks -> final layer norm -> one classifier head shared by
the cls token and every patch token.

Inputs are normalized patches of shape (B, s, s, C) with C = 9 (one band)
or 18 (two bands concatenated).
"""

import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from ..exceptions import ConfigurationError
from ..seeding import make_rng
from . import functional as F
from .tensor import Tensor, as_tensor, name_scope

logger = logging.getLogger(__name__)

INIT_STD = 0.02


def truncated_normal(rng, shape, std=INIT_STD, dtype=np.float32):
    """Normal draws resampled until they fall within two standard deviations."""
    values = rng.standard_normal(shape)
    outside = np.abs(values) > 2.0
    while np.any(outside):
        values[outside] = rng.standard_normal(int(outside.sum()))
        outside = np.abs(values) > 2.0
    return (values * std).astype(dtype)


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """
    Base class for layers.

    Parameters, buffers and sub-modules assigned as attributes are
    registered in assignment order, which fixes the order of
    :meth:`named_parameters` and of checkpoint tensor tables.
    """

    def __init__(self):
        object.__setattr__(self, '_parameters', OrderedDict())
        object.__setattr__(self, '_buffers', OrderedDict())
        object.__setattr__(self, '_modules', OrderedDict())
        object.__setattr__(self, 'training', True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix=''):
        for name, parameter in self._parameters.items():
            yield prefix + name, parameter
        for name, module in self._modules.items():
            yield from module.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [parameter for _, parameter in self.named_parameters()]

    def named_buffers(self, prefix=''):
        for name, buffer in self._buffers.items():
            yield prefix + name, buffer
        for name, module in self._modules.items():
            yield from module.named_buffers(f"{prefix}{name}.")

    def train(self, mode=True):
        object.__setattr__(self, 'training', mode)
        for module in self._modules.values():
            module.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for parameter in self.parameters():
            parameter.zero_grad()

    def state_dict(self):
        """Copies of every parameter and buffer, keyed by dotted name."""
        state = OrderedDict()
        for name, parameter in self.named_parameters():
            state[name] = parameter.data.copy()
        for name, buffer in self.named_buffers():
            state[name] = buffer.copy()
        return state

    def load_state_dict(self, state):
        """
        Overwrite parameters and buffers in place.

        Raises:
            ConfigurationError: If names or shapes do not match
        """
        expected = self.state_dict()
        missing = sorted(set(expected) - set(state))
        unexpected = sorted(set(state) - set(expected))
        if missing or unexpected:
            raise ConfigurationError(f"state mismatch: missing {missing}, unexpected {unexpected}")
        for name, parameter in self.named_parameters():
            parameter.data = self._checked(name, state[name], parameter.data)
        for name, buffer in self.named_buffers():
            buffer[...] = self._checked(name, state[name], buffer)

    @staticmethod
    def _checked(name, value, current):
        value = np.asarray(value)
        if value.shape != current.shape:
            raise ConfigurationError(f"{name}: expected shape {current.shape}, got {value.shape}")
        return value.astype(current.dtype, copy=True)

    def num_parameters(self):
        return int(sum(parameter.data.size for parameter in self.parameters()))

    def __call__(self, *args, **kwargs):
        with name_scope(type(self).__name__):
            return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


# ============================================================================
# Layers
# ============================================================================

class Linear(Module):
    def __init__(self, in_features, out_features, rng, bias=True, dtype=np.float32):
        super().__init__()
        self.weight = Parameter(truncated_normal(rng, (in_features, out_features), dtype=dtype))
        if bias:
            self.bias = Parameter(np.zeros(out_features, dtype=dtype))
        else:
            object.__setattr__(self, 'bias', None)

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, width, dtype=np.float32, eps=1e-5):
        super().__init__()
        self.weight = Parameter(np.ones(width, dtype=dtype))
        self.bias = Parameter(np.zeros(width, dtype=dtype))
        object.__setattr__(self, 'eps', eps)

    def forward(self, x):
        return F.layer_norm(x, self.weight, self.bias, eps=self.eps)


class BatchNorm(Module):
    """Batch normalization over (B, H, W) with running statistics."""

    def __init__(self, channels, dtype=np.float32, momentum=0.1, eps=1e-5):
        super().__init__()
        self.weight = Parameter(np.ones(channels, dtype=dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))
        self.register_buffer('running_mean', np.zeros(channels, dtype=dtype))
        self.register_buffer('running_var', np.ones(channels, dtype=dtype))
        object.__setattr__(self, 'momentum', momentum)
        object.__setattr__(self, 'eps', eps)

    def forward(self, x):
        return F.batch_norm(
            x, self.weight, self.bias,
            running_mean=self.running_mean,
            running_var=self.running_var,
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )


class ConvBlock(Module):
    """3x3 'same' convolution, batch norm, ReLU."""

    def __init__(self, in_channels, out_channels, rng, dtype=np.float32):
        super().__init__()
        self.weight = Parameter(truncated_normal(rng, (3, 3, in_channels, out_channels), dtype=dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype))
        self.norm = BatchNorm(out_channels, dtype=dtype)

    def forward(self, x):
        return F.relu(self.norm(F.conv2d(x, self.weight, self.bias)))


class EarlyCNN(Module):
    """Three conv blocks; spatial size is preserved."""

    def __init__(self, in_channels, channels, rng, dtype=np.float32):
        super().__init__()
        widths = (in_channels,) + tuple(channels)
        for index in range(len(channels)):
            setattr(self, f"conv{index + 1}", ConvBlock(widths[index], widths[index + 1], rng, dtype))
        object.__setattr__(self, 'depth', len(channels))

    def forward(self, x):
        for index in range(self.depth):
            block = getattr(self, f"conv{index + 1}")
            with name_scope(f"conv{index + 1}"):
                x = block(x)
        return x


class PatchEmbedding(Module):
    """
    Split an (B, s, s, C) feature map into (s/p)^2 non-overlapping p x p
    patches, project each to ``dim``, prepend the cls token and add
    positional embeddings. Output is (B, N + 1, dim).
    """

    def __init__(self, window, patch, in_channels, dim, rng, dtype=np.float32):
        super().__init__()
        if window % patch:
            raise ConfigurationError(f"window size {window} must be divisible by patch size {patch}")
        object.__setattr__(self, 'window', window)
        object.__setattr__(self, 'patch', patch)
        object.__setattr__(self, 'grid', window // patch)
        self.projection = Linear(patch * patch * in_channels, dim, rng, dtype=dtype)
        self.cls_token = Parameter(truncated_normal(rng, (1, 1, dim), dtype=dtype))
        self.position = Parameter(truncated_normal(rng, (1, self.num_patches + 1, dim), dtype=dtype))

    @property
    def num_patches(self):
        return self.grid * self.grid

    def patches(self, x):
        batch, height, width, channels = x.shape
        if height != self.window or width != self.window:
            raise ConfigurationError(f"expected {self.window}x{self.window} input, got {height}x{width}")
        p, g = self.patch, self.grid
        x = F.reshape(x, (batch, g, p, g, p, channels))
        x = F.transpose(x, (0, 1, 3, 2, 4, 5))
        return F.reshape(x, (batch, g * g, p * p * channels))

    def forward(self, x):
        tokens = self.projection(self.patches(x))
        batch, _, dim = tokens.shape
        cls = F.broadcast_to(self.cls_token, (batch, 1, dim))
        return F.add(F.concat([cls, tokens], axis=1), self.position)


class SelfAttention(Module):
    """Single-head scaled dot-product attention with an output projection."""

    def __init__(self, dim, rng, dtype=np.float32):
        super().__init__()
        self.query = Parameter(truncated_normal(rng, (dim, dim), dtype=dtype))
        self.key = Parameter(truncated_normal(rng, (dim, dim), dtype=dtype))
        self.value = Parameter(truncated_normal(rng, (dim, dim), dtype=dtype))
        self.proj = Linear(dim, dim, rng, dtype=dtype)
        object.__setattr__(self, 'scale', 1.0 / np.sqrt(dim))

    def attend(self, x):
        """
        Returns:
            (softmax(QK^T / sqrt(d)) V, attention weights (B, T, T))
        """
        q = F.matmul(x, self.query)
        k = F.matmul(x, self.key)
        v = F.matmul(x, self.value)
        scores = F.mul(F.matmul(q, F.transpose(k, (0, 2, 1))), self.scale)
        weights = F.softmax(scores, axis=-1)
        return F.matmul(weights, v), weights

    def forward(self, x):
        out, _ = self.attend(x)
        return self.proj(out)


class MLP(Module):
    def __init__(self, dim, hidden, rng, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype=dtype)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-norm block: ``x + attn(ln(x))`` then ``x + mlp(ln(x))``."""

    def __init__(self, dim, mlp_ratio, rng, dtype=np.float32):
        super().__init__()
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.attention = SelfAttention(dim, rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.mlp = MLP(dim, dim * mlp_ratio, rng, dtype=dtype)

    def forward(self, x):
        x = F.add(x, self.attention(self.norm1(x)))
        return F.add(x, self.mlp(self.norm2(x)))


# ============================================================================
# Full model
# ============================================================================

@dataclass(frozen=True)
class ModelConfig:
    """
    Architecture of an SKDNet.

    Attributes:
        in_channels: 9 for a single band, 18 for concatenated bands
        num_classes: Number of classes M
        window: Sample size s
        patch: Patch size p (s must be divisible by p)
        dim: Token width d
        depth: Number of transformer blocks
        mlp_ratio: Hidden width of the MLP as a multiple of d
        conv_channels: Output widths of the three conv layers
        use_sdsr: Whether forward passes go through sample rectification
        looks: Wishart looks used to generate replacement pixels
    """

    in_channels: int
    num_classes: int
    window: int = 12
    patch: int = 3
    dim: int = 64
    depth: int = 2
    mlp_ratio: int = 2
    conv_channels: tuple = field(default=(16, 32, 32))
    use_sdsr: bool = True
    looks: int = 4

    def __post_init__(self):
        object.__setattr__(self, 'conv_channels', tuple(int(c) for c in self.conv_channels))
        if self.in_channels < 1 or self.in_channels % 9:
            raise ConfigurationError(f"in_channels must be a multiple of 9, got {self.in_channels}")
        if self.num_classes < 1:
            raise ConfigurationError(f"num_classes must be positive, got {self.num_classes}")
        if self.patch < 1 or self.window % self.patch:
            raise ConfigurationError(
                f"window size {self.window} must be divisible by patch size {self.patch}"
            )
        if len(self.conv_channels) != 3:
            raise ConfigurationError(f"expected three conv widths, got {self.conv_channels}")

    @property
    def num_patches(self):
        return (self.window // self.patch) ** 2

    @property
    def bands(self):
        return self.in_channels // 9

    def to_dict(self):
        values = asdict(self)
        values['conv_channels'] = list(self.conv_channels)
        return values


@dataclass(frozen=True)
class ForwardOutput:
    """
    Classifier outputs of one forward pass.

    Attributes:
        cls_logits: Tensor (B, M) from the cls token
        patch_logits: Tensor (B, N, M) from every patch token
    """

    cls_logits: Tensor
    patch_logits: Tensor

    @property
    def num_patches(self):
        return self.patch_logits.shape[1]

    def __len__(self):
        return self.cls_logits.shape[0]

    def __getitem__(self, index):
        """Detached output of one batch member, with a batch axis of 1."""
        return ForwardOutput(
            Tensor(self.cls_logits.data[index:index + 1]),
            Tensor(self.patch_logits.data[index:index + 1]),
        )

    def probabilities(self):
        """Softmax of the cls logits as a Tensor (B, M)."""
        return F.softmax(self.cls_logits, axis=-1)


class SKDNet(Module):
    """
    CNN + ViT classifier over PolSAR feature patches.

    Args:
        config: ModelConfig
        seed: Root seed; initialization draws from the ``(seed, 'init')`` substream
        dtype: Parameter dtype (float32 for training, float64 for gradient checks)
    """

    def __init__(self, config, seed=0, dtype=np.float32):
        super().__init__()
        object.__setattr__(self, 'config', config)
        object.__setattr__(self, 'dtype', np.dtype(dtype))
        rng = make_rng(seed, 'init')
        self.cnn = EarlyCNN(config.in_channels, config.conv_channels, rng, dtype)
        self.embedding = PatchEmbedding(
            config.window, config.patch, config.conv_channels[-1], config.dim, rng, dtype
        )
        for index in range(config.depth):
            setattr(self, f"block{index + 1}", TransformerBlock(config.dim, config.mlp_ratio, rng, dtype))
        self.norm = LayerNorm(config.dim, dtype=dtype)
        self.head = Linear(config.dim, config.num_classes, rng, dtype=dtype)
        logger.debug("built SKDNet with %d parameters", self.num_parameters())

    @property
    def blocks(self):
        return [getattr(self, f"block{index + 1}") for index in range(self.config.depth)]

    def encode(self, x):
        """Token features (B, N + 1, d) after the final layer norm."""
        x = as_tensor(x)
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype))
        if x.ndim != 4 or x.shape[-1] != self.config.in_channels:
            raise ConfigurationError(
                f"expected input (B, {self.config.window}, {self.config.window}, "
                f"{self.config.in_channels}), got {x.shape}"
            )
        tokens = self.embedding(self.cnn(x))
        for index, block in enumerate(self.blocks):
            with name_scope(f"block{index + 1}"):
                tokens = block(tokens)
        return self.norm(tokens)

    def forward(self, x):
        logits = self.head(self.encode(x))
        return ForwardOutput(cls_logits=logits[:, 0], patch_logits=logits[:, 1:])
