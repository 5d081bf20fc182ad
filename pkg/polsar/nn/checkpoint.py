"""
Checkpoint container.

Layout (little endian)::

    4 bytes   magic "SKD1"
    u32       format version
    u32       header length, then that many bytes of UTF-8 JSON
              (sorted keys: model config, normalizer channel count, metadata)
    u32       tensor count
    per tensor:
        u16   name length, then the UTF-8 name
        u8    rank, then rank x u32 dimensions
        f32[] data, row-major

The normalizer's mean and std are stored as the tensors
``normalizer.mean`` and ``normalizer.std``. Nothing time-dependent is
written, so identical runs produce identical files.
"""

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import FeatureNormalizer
from ..exceptions import FormatError
from .modules import ModelConfig, SKDNet

MAGIC = b'SKD1'
VERSION = 1
NORMALIZER_KEYS = ('normalizer.mean', 'normalizer.std')


@dataclass
class Checkpoint:
    """
    A trained model's configuration, weights and input normalization.

    Attributes:
        model_config: ModelConfig the state belongs to
        state: Ordered mapping of tensor name to array (parameters and buffers)
        normalizer: FeatureNormalizer fitted on the training split
        metadata: JSON-ready dict (role, band, run configuration echo, ...)
    """

    model_config: ModelConfig
    state: OrderedDict
    normalizer: FeatureNormalizer
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model, normalizer, metadata=None):
        return cls(model.config, model.state_dict(), normalizer, dict(metadata or {}))

    def build_model(self):
        """Instantiate an SKDNet in eval mode carrying this checkpoint's weights."""
        model = SKDNet(self.model_config)
        model.load_state_dict(self.state)
        return model.eval()

    def to_bytes(self):
        header = json.dumps(
            {
                'model_config': self.model_config.to_dict(),
                'normalizer_channels': self.normalizer.channels,
                'metadata': self.metadata,
            },
            sort_keys=True,
        ).encode('utf-8')
        tensors = list(self.state.items()) + [
            (NORMALIZER_KEYS[0], self.normalizer.mean),
            (NORMALIZER_KEYS[1], self.normalizer.std),
        ]
        chunks = [MAGIC, struct.pack('<II', VERSION, len(header)), header, struct.pack('<I', len(tensors))]
        for name, array in tensors:
            array = np.asarray(array)
            encoded = name.encode('utf-8')
            chunks.append(struct.pack('<H', len(encoded)))
            chunks.append(encoded)
            chunks.append(struct.pack(f'<B{array.ndim}I', array.ndim, *array.shape))
            chunks.append(array.astype('<f4').tobytes(order='C'))
        return b''.join(chunks)

    @classmethod
    def from_bytes(cls, data, path=None):
        """
        Parse checkpoint bytes.

        Raises:
            FormatError: On bad magic, unknown version or truncated content
        """
        reader = _Reader(data, path)
        magic = reader.take(4)
        if magic != MAGIC:
            raise FormatError("bad checkpoint magic", path=path, offset=0, expected=MAGIC, actual=magic)
        version, header_length = reader.unpack('<II')
        if version != VERSION:
            raise FormatError("unsupported checkpoint version", path=path, offset=4,
                              expected=VERSION, actual=version)
        try:
            header = json.loads(reader.take(header_length).decode('utf-8'))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"checkpoint header is not valid JSON: {exc}", path=path, offset=12) from exc

        (count,) = reader.unpack('<I')
        state = OrderedDict()
        for _ in range(count):
            (name_length,) = reader.unpack('<H')
            name = reader.take(name_length).decode('utf-8')
            (rank,) = reader.unpack('<B')
            shape = reader.unpack(f'<{rank}I') if rank else ()
            size = int(np.prod(shape)) if rank else 1
            values = np.frombuffer(reader.take(4 * size), dtype='<f4').astype(np.float32)
            state[name] = values.reshape(shape)
        if reader.offset != len(data):
            raise FormatError("trailing bytes after checkpoint tensors", path=path, offset=reader.offset,
                              expected=reader.offset, actual=len(data))

        missing = [key for key in NORMALIZER_KEYS if key not in state]
        if missing:
            raise FormatError(f"checkpoint lacks {missing}", path=path)
        normalizer = FeatureNormalizer(state.pop(NORMALIZER_KEYS[0]), state.pop(NORMALIZER_KEYS[1]))
        return cls(ModelConfig(**header['model_config']), state, normalizer, header.get('metadata', {}))

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            data = path.read_bytes()
        except FileNotFoundError as exc:
            raise FormatError("checkpoint not found", path=path) from exc
        return cls.from_bytes(data, path)


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, size):
        end = self.offset + size
        if end > len(self.data):
            raise FormatError("checkpoint truncated", path=self.path, offset=self.offset,
                              expected=end, actual=len(self.data))
        chunk = bytes(self.data[self.offset:end])
        self.offset = end
        return chunk

    def unpack(self, fmt):
        layout = struct.Struct(fmt)
        return layout.unpack(self.take(layout.size))
