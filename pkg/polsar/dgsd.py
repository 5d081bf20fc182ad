"""
Dual-frequency gate-selected distillation.

Two single-band teachers are trained independently with hard-label cross
entropy. A dual-band student then learns from the concatenated bands:
for every sample the gate picks the teacher whose softmax maximum is
larger (band 1 on ties) and the student minimizes

    alpha * KL(teacher || student) + (1 - alpha) * CE(student, label)

Cross entropy keeps the 1/M factor ``-(1/M) sum_i y(i) ln out(i)``. KL
has no temperature. Teachers stay frozen: they run in eval mode without
gradients and are never handed to the optimizer. Their outputs are
recomputed every epoch, with rectification seeded by (sample id, epoch).
"""

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import FEATURES_PER_BAND, concat_bands
from .exceptions import ConfigurationError, ValidationError
from .nn import functional as F
from .nn.checkpoint import Checkpoint
from .nn.modules import SKDNet
from .nn.tensor import Tensor
from .training import Trainer, fit_normalizer, predict_samples, prepare_split

logger = logging.getLogger(__name__)

BAND1 = 'band1'
BAND2 = 'band2'


@dataclass(frozen=True)
class GateDecision:
    """
    Attributes:
        chosen: 'band1' or 'band2'
        max1, max2: Largest softmax probability of each teacher
    """

    chosen: str
    max1: float
    max2: float


# ============================================================================
# Losses and the gate
# ============================================================================

def _result(value, tensor_input):
    return value if tensor_input else float(value.data)


def ce_loss(out, y):
    """
    Hard-label loss ``-(1/M) sum_i y(i) ln out(i)``, probabilities clamped
    to [1e-12, 1]. Batched inputs are averaged.

    Args:
        out: Softmax probabilities (..., M), Tensor or array
        y: One-hot labels (..., M)

    Returns:
        Tensor when ``out`` is a Tensor, else float
    """
    is_tensor = isinstance(out, Tensor)
    return _result(F.cross_entropy(out if is_tensor else Tensor(np.asarray(out, np.float64)), y), is_tensor)


def kl_loss(out_t, out_s):
    """
    ``sum_i out_t(i) ln(out_t(i) / out_s(i))`` with ``0 ln 0 = 0``.

    Args:
        out_t: Teacher probabilities (..., M), treated as constants
        out_s: Student probabilities (..., M), Tensor or array

    Returns:
        Tensor when ``out_s`` is a Tensor, else float
    """
    is_tensor = isinstance(out_s, Tensor)
    teacher = out_t.data if isinstance(out_t, Tensor) else out_t
    student = out_s if is_tensor else Tensor(np.asarray(out_s, np.float64))
    return _result(F.kl_divergence(teacher, student), is_tensor)


def combined_loss(out_s, out_t, y, alpha):
    """``alpha * kl_loss(out_t, out_s) + (1 - alpha) * ce_loss(out_s, y)``."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must be in [0, 1], got {alpha}")
    is_tensor = isinstance(out_s, Tensor)
    student = out_s if is_tensor else Tensor(np.asarray(out_s, np.float64))
    loss = F.add(F.mul(kl_loss(out_t, student), alpha), F.mul(ce_loss(student, y), 1.0 - alpha))
    return _result(loss, is_tensor)


def select_teacher(out1, out2):
    """Pick band 1 iff ``max(out1) >= max(out2)``."""
    max1 = float(np.max(out1))
    max2 = float(np.max(out2))
    return GateDecision(BAND1 if max1 >= max2 else BAND2, max1, max2)


def select_teachers(probs1, probs2):
    """Batched gate: boolean array, True where band 1 teaches."""
    return np.max(probs1, axis=-1) >= np.max(probs2, axis=-1)


def gated_targets(probs1, probs2):
    use_band1 = select_teachers(probs1, probs2)
    return np.where(use_band1[:, np.newaxis], probs1, probs2), use_band1


# ============================================================================
# Training runs
# ============================================================================

@dataclass
class TrainingResult:
    """
    Attributes:
        checkpoint: Checkpoint of the trained model
        history: Per-epoch EpochRecords
        gate_counts: (M, 2) int array of band-1 / band-2 picks per class in
            the final epoch (students with teachers only)
    """

    checkpoint: Checkpoint
    history: list
    gate_counts: np.ndarray = field(default=None)

    @property
    def final_oa(self):
        return self.history[-1].oa if self.history else float('nan')


def _one_hot(labels, num_classes, dtype):
    return F.one_hot(labels, num_classes, dtype=dtype)


def _metadata(role, band, config, num_classes, extra=None):
    values = asdict(config)
    values['teacher_checkpoints'] = [str(path) for path in config.teacher_checkpoints]
    metadata = {'role': role, 'band': band, 'num_classes': num_classes, 'distill': values}
    metadata.update(extra or {})
    return metadata


def train_teacher(raster, config, model_config, *, band, metrics_path=None, metadata=None):
    """
    Train a single-band network with cross entropy only.

    Args:
        raster: Labeled single-band PolsarRaster (9 channels)
        config: DistillConfig (alpha and teacher checkpoints are ignored)
        model_config: ModelConfig with ``in_channels == 9``
        band: 1 or 2; names the random substreams and the metadata
        metrics_path: Optional metrics CSV destination
        metadata: Extra JSON-ready metadata stored in the checkpoint

    Returns:
        TrainingResult

    Raises:
        NumericalError: If training diverges
    """
    if raster.channels != model_config.in_channels:
        raise ConfigurationError(
            f"model expects {model_config.in_channels} channels, raster has {raster.channels}"
        )
    train, heldout = prepare_split(raster, config)
    normalizer = fit_normalizer(train)
    tag = f"teacher{band}"
    model = SKDNet(model_config, seed=config.seed)
    num_classes = model_config.num_classes

    def loss_fn(probabilities, batch, targets, epoch):
        return ce_loss(probabilities, _one_hot(batch.labels, num_classes, probabilities.dtype))

    history = Trainer(model, normalizer, config, tag=tag, loss_fn=loss_fn).fit(train, heldout, metrics_path)
    checkpoint = Checkpoint.from_model(
        model, normalizer, _metadata('teacher', band, config, num_classes, metadata)
    )
    return TrainingResult(checkpoint, history)


def _teacher_models(teachers, model_config):
    models = []
    for band, teacher in enumerate(teachers, start=1):
        if isinstance(teacher, (str, Path)):
            teacher = Checkpoint.load(teacher)
        if teacher.model_config.in_channels != FEATURES_PER_BAND:
            raise ConfigurationError(f"band-{band} teacher must take 9 channels")
        if teacher.model_config.num_classes != model_config.num_classes:
            raise ConfigurationError(
                f"band-{band} teacher has {teacher.model_config.num_classes} classes, "
                f"student has {model_config.num_classes}"
            )
        if teacher.model_config.window != model_config.window:
            raise ConfigurationError(f"band-{band} teacher window differs from the student window")
        models.append((teacher.build_model(), teacher.normalizer))
    return models


def teacher_probabilities(teachers, batch, epoch, seed):
    """
    Both teachers' softmax outputs for a dual-band batch.

    Returns:
        (probs1, probs2), float64 arrays (B, M)
    """
    outputs = []
    for band, (model, normalizer) in enumerate(teachers):
        start = band * FEATURES_PER_BAND
        keys = [('teacher', band + 1, epoch, int(sample_id)) for sample_id in batch.ids]
        outputs.append(predict_samples(
            model, normalizer, batch.patches[..., start:start + FEATURES_PER_BAND], keys, seed=seed,
        ))
    return tuple(outputs)


def train_student(band1, band2, teachers, config, model_config, *, metrics_path=None,
                  gate_path=None, metadata=None):
    """
    Train the dual-band student.

    Args:
        band1, band2: Labeled single-band rasters sharing one label map
        teachers: (band-1, band-2) Checkpoints or checkpoint paths; may be
            empty when ``config.alpha == 0`` (plain concatenation training)
        config: DistillConfig
        model_config: ModelConfig with ``in_channels == 18``
        metrics_path: Optional metrics CSV destination
        gate_path: Optional gate-histogram CSV destination
        metadata: Extra JSON-ready metadata stored in the checkpoint

    Returns:
        TrainingResult with ``gate_counts`` when teachers were used

    Raises:
        ValidationError: If the bands are misaligned
        ConfigurationError: If alpha > 0 without two teachers
    """
    raster = concat_bands(band1, band2)
    if raster.channels != model_config.in_channels:
        raise ConfigurationError(
            f"model expects {model_config.in_channels} channels, dual-band raster has {raster.channels}"
        )
    alpha = config.alpha
    use_teachers = alpha > 0.0
    if use_teachers and len(teachers or ()) != 2:
        raise ConfigurationError("alpha > 0 requires a band-1 and a band-2 teacher")
    teacher_models = _teacher_models(teachers, model_config) if use_teachers else []
    frozen = [model.state_dict() for model, _ in teacher_models]

    train, heldout = prepare_split(raster, config)
    normalizer = fit_normalizer(train)
    model = SKDNet(model_config, seed=config.seed)
    num_classes = model_config.num_classes
    gate_counts = np.zeros((num_classes, 2), dtype=np.int64)
    last_epoch = config.epochs - 1

    def targets_fn(batch, epoch):
        if not use_teachers:
            return None
        probs1, probs2 = teacher_probabilities(teacher_models, batch, epoch, config.seed)
        return gated_targets(probs1, probs2)

    def loss_fn(probabilities, batch, targets, epoch):
        y = _one_hot(batch.labels, num_classes, probabilities.dtype)
        if targets is None:
            return ce_loss(probabilities, y)
        chosen, use_band1 = targets
        if epoch == last_epoch:
            np.add.at(gate_counts, (batch.labels, np.where(use_band1, 0, 1)), 1)
        return combined_loss(probabilities, chosen, y, alpha)

    trainer = Trainer(model, normalizer, config, tag='student', loss_fn=loss_fn, targets_fn=targets_fn)
    history = trainer.fit(train, heldout, metrics_path)

    for (teacher, _), before in zip(teacher_models, frozen):
        after = teacher.state_dict()
        if any(not np.array_equal(before[name], after[name]) for name in before):
            raise ValidationError("teacher parameters changed during student training")

    checkpoint = Checkpoint.from_model(model, normalizer, _metadata('student', 'dual', config, num_classes, metadata))
    result = TrainingResult(checkpoint, history, gate_counts if use_teachers else None)
    if gate_path is not None and use_teachers:
        write_gate_histogram(gate_path, gate_counts)
    return result


def gate_fractions(gate_counts):
    """Per-class (band1_fraction, band2_fraction); classes never seen get (0, 0)."""
    counts = np.asarray(gate_counts, dtype=np.float64)
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


def write_gate_histogram(path, gate_counts):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(['class', 'band1_fraction', 'band2_fraction'])
        for label, (first, second) in enumerate(gate_fractions(gate_counts)):
            writer.writerow([label, f"{first:.6f}", f"{second:.6f}"])
    return path
