"""
Training loop shared by teacher and student runs.

Batches are drawn in a seeded order per epoch and assembled on worker
threads (together with any per-batch targets such as teacher outputs);
``ThreadPoolExecutor.map`` hands them back in submission order, so the
optimizer sees the same sequence whatever the thread count.
"""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import FeatureNormalizer, extract_samples, split_samples, stack_samples
from .exceptions import NumericalError, ValidationError
from .nn.functional import softmax_array
from .nn.optim import Adam, StepDecay
from .nn.tensor import no_grad
from .sdsr import sdsr_forward
from .seeding import make_rng

logger = logging.getLogger(__name__)

PREDICT_BATCH = 256


@dataclass(frozen=True)
class SampleSet:
    """
    Raw (un-normalized) training windows.

    Attributes:
        patches: Float32 array (n, s, s, C)
        labels: Int64 array (n,)
        ids: Int64 array (n,); stable sample ids used to seed per-sample streams
    """

    patches: np.ndarray
    labels: np.ndarray
    ids: np.ndarray

    def __len__(self):
        return self.labels.shape[0]

    @classmethod
    def from_samples(cls, samples, ids):
        patches, labels = stack_samples(samples)
        return cls(patches, labels, np.asarray(ids, dtype=np.int64))

    def take(self, indices):
        indices = np.asarray(indices, dtype=np.intp)
        return SampleSet(self.patches[indices], self.labels[indices], self.ids[indices])


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    oa: float


def sample_id(sample, width):
    """Row-major index of the window's top-left pixel; unique within a raster."""
    return sample.origin[0] * width + sample.origin[1]


def prepare_split(raster, config):
    """
    Cut labeled windows and split them into train / held-out sets.

    The split depends only on the label raster, window, stride and seed,
    so rasters sharing a label map (the two bands of a scene and their
    concatenation) get the same split.

    Returns:
        (train SampleSet, held-out SampleSet); the held-out set is capped
        at ``config.eval_limit`` windows (0 keeps all)
    """
    samples = extract_samples(raster, config.window, config.stride, training=True)
    if not samples:
        raise ValidationError("raster has no labeled windows")
    train_samples, heldout_samples = split_samples(samples, config.train_ratio, make_rng(config.seed, 'split'))
    if config.eval_limit and len(heldout_samples) > config.eval_limit:
        chosen = np.sort(make_rng(config.seed, 'heldout').permutation(len(heldout_samples))[:config.eval_limit])
        heldout_samples = [heldout_samples[index] for index in chosen]
    train = SampleSet.from_samples(train_samples, [sample_id(s, raster.width) for s in train_samples])
    heldout = None
    if heldout_samples:
        heldout = SampleSet.from_samples(heldout_samples, [sample_id(s, raster.width) for s in heldout_samples])
    logger.info(
        "%d labeled windows: %d train, %d held-out",
        len(samples), len(train), 0 if heldout is None else len(heldout),
    )
    return train, heldout


def predict_samples(model, normalizer, patches, keys, *, seed=0, use_sdsr=None, batch_size=PREDICT_BATCH):
    """
    Class probabilities for raw patches, in eval mode without gradients.

    Args:
        model: SKDNet
        normalizer: FeatureNormalizer of the model's checkpoint
        patches: Float32 array (n, s, s, C)
        keys: n tuples naming each sample's rectification substream,
            e.g. ``('predict', row, col)``
        seed: Root seed for those substreams
        use_sdsr: Override of ``model.config.use_sdsr``
        batch_size: Samples per forward pass

    Returns:
        Float64 array (n, M)
    """
    use_sdsr = model.config.use_sdsr if use_sdsr is None else use_sdsr
    patches = np.asarray(patches, dtype=np.float32)
    if len(keys) != patches.shape[0]:
        raise ValidationError(f"expected {patches.shape[0]} sample keys, got {len(keys)}")
    was_training = model.training
    model.eval()
    chunks = []
    try:
        with no_grad():
            for start in range(0, patches.shape[0], batch_size):
                chunk = patches[start:start + batch_size]
                if use_sdsr:
                    rngs = [make_rng(seed, *key) for key in keys[start:start + batch_size]]
                    output, _ = sdsr_forward(model, chunk, normalizer, rngs, training=False)
                else:
                    output = model(normalizer.apply(chunk, model.dtype))
                chunks.append(softmax_array(output.cls_logits.data))
    finally:
        model.train(was_training)
    if not chunks:
        return np.zeros((0, model.config.num_classes))
    return np.concatenate(chunks)


def overall_accuracy(model, normalizer, samples, *, seed, tag):
    if samples is None or not len(samples):
        return float('nan')
    keys = [(tag, 'eval', int(sample_id)) for sample_id in samples.ids]
    probabilities = predict_samples(model, normalizer, samples.patches, keys, seed=seed)
    return float(np.mean(np.argmax(probabilities, axis=1) == samples.labels))


class Trainer:
    """
    Mini-batch Adam training of one model.

    Args:
        model: SKDNet to train
        normalizer: FeatureNormalizer applied to every raw batch
        config: DistillConfig
        tag: Name separating this run's random substreams (e.g. 'teacher1')
        loss_fn: ``loss_fn(probabilities Tensor, batch SampleSet, targets, epoch) -> Tensor``
        targets_fn: Optional ``targets_fn(batch, epoch)`` evaluated on the
            worker threads while batches are assembled
    """

    def __init__(self, model, normalizer, config, *, tag, loss_fn, targets_fn=None):
        self.model = model
        self.normalizer = normalizer
        self.config = config
        self.tag = tag
        self.loss_fn = loss_fn
        self.targets_fn = targets_fn
        self.optimizer = Adam(
            model.parameters(),
            StepDecay(config.learning_rate, config.lr_decay, config.lr_decay_every),
        )

    def batch_indices(self, count, epoch):
        order = make_rng(self.config.seed, self.tag, 'order', epoch).permutation(count)
        size = self.config.batch_size
        return [order[start:start + size] for start in range(0, count, size)]

    def _assemble(self, train, indices, epoch):
        batch = train.take(indices)
        targets = self.targets_fn(batch, epoch) if self.targets_fn else None
        return batch, targets

    def step(self, batch, targets, epoch):
        self.model.train()
        if self.model.config.use_sdsr:
            rngs = [make_rng(self.config.seed, self.tag, 'sdsr', epoch, int(i)) for i in batch.ids]
            output, _ = sdsr_forward(self.model, batch.patches, self.normalizer, rngs, training=True)
        else:
            output = self.model(self.normalizer.apply(batch.patches, self.model.dtype))
        loss = self.loss_fn(output.probabilities(), batch, targets, epoch)
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericalError(f"loss is {value}")
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step(epoch)
        return value

    def run_epoch(self, train, epoch):
        losses = []
        chunks = self.batch_indices(len(train), epoch)
        with ThreadPoolExecutor(max_workers=max(1, self.config.threads)) as pool:
            assembled = pool.map(lambda indices: self._assemble(train, indices, epoch), chunks)
            for step, (batch, targets) in enumerate(assembled):
                try:
                    losses.append(self.step(batch, targets, epoch))
                except NumericalError as exc:
                    raise NumericalError(
                        f"{self.tag} training diverged at epoch {epoch + 1}, step {step + 1}: {exc}"
                    ) from exc
        return float(np.mean(losses))

    def fit(self, train, heldout=None, metrics_path=None):
        """
        Train for ``config.epochs`` epochs.

        Writes the metrics CSV (epoch, loss, oa) when ``metrics_path`` is
        given; ``oa`` is the held-out overall accuracy after the epoch.

        Returns:
            List of EpochRecord

        Raises:
            NumericalError: If any op produces a non-finite value
        """
        history = []
        for epoch in range(self.config.epochs):
            lr = self.optimizer.schedule.lr_at(epoch)
            loss = self.run_epoch(train, epoch)
            oa = overall_accuracy(self.model, self.normalizer, heldout, seed=self.config.seed, tag=self.tag)
            history.append(EpochRecord(epoch + 1, lr, loss, oa))
            logger.info("%s epoch %d/%d lr=%.3g loss=%.5f oa=%.4f",
                        self.tag, epoch + 1, self.config.epochs, lr, loss, oa)
        self.model.eval()
        if metrics_path is not None:
            write_metrics_csv(metrics_path, history)
        return history


def write_metrics_csv(path, history):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(['epoch', 'loss', 'oa'])
        for record in history:
            writer.writerow([record.epoch, f"{record.loss:.6f}", f"{record.oa:.6f}"])
    return path


def fit_normalizer(train):
    return FeatureNormalizer.fit(train.patches)
