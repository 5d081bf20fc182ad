"""
Configuration value objects.

Frozen dataclasses describing a synthetic scene (SceneSpec), a complete
command run (RunConfig) and a training run (DistillConfig). They are
normally built by the serializers in :mod:`polsar.serializers`, which
validate JSON input before construction.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .core import UNLABELED, vectorize_many
from .exceptions import ConfigurationError, ValidationError

REGION_SHAPES = ('rect', 'ellipse')


@dataclass(frozen=True)
class Region:
    """
    A labeled rectangle, or the ellipse inscribed in that rectangle.

    Attributes:
        shape: 'rect' or 'ellipse'
        label: Class index painted into the region
        top, left: Bounding-box corner in pixels
        height, width: Bounding-box size in pixels
    """

    shape: str
    label: int
    top: int
    left: int
    height: int
    width: int

    def mask(self, image_height, image_width):
        rows, cols = np.mgrid[0:image_height, 0:image_width]
        inside_box = (
            (rows >= self.top) & (rows < self.top + self.height)
            & (cols >= self.left) & (cols < self.left + self.width)
        )
        if self.shape == 'rect':
            return inside_box
        center_row = self.top + (self.height - 1) / 2.0
        center_col = self.left + (self.width - 1) / 2.0
        radius_row = self.height / 2.0
        radius_col = self.width / 2.0
        ellipse = ((rows - center_row) / radius_row) ** 2 + ((cols - center_col) / radius_col) ** 2 <= 1.0
        return inside_box & ellipse

    def in_bounds(self, image_height, image_width):
        return (
            self.height > 0 and self.width > 0
            and self.top >= 0 and self.left >= 0
            and self.top + self.height <= image_height
            and self.left + self.width <= image_width
        )


@dataclass(frozen=True, eq=False)
class SceneSpec:
    """
    Recipe for a synthetic dual-frequency scene.

    Attributes:
        height, width: Scene size in pixels
        num_classes: Number of classes M
        regions: Regions painted in order (later regions overwrite earlier)
        centers: Complex array (2, M, 3, 3); centers[b, m] is the Wishart
            center of class m in band b
        looks: Number of looks L used for every pixel draw
        impurity: Fraction rho of each region's pixels drawn from another class
        seed: Root seed
        class_names: M display names
        palette: M RGB triples (injective, never black)
    """

    height: int
    width: int
    num_classes: int
    regions: tuple
    centers: np.ndarray
    looks: int = 4
    impurity: float = 0.0
    seed: int = 0
    class_names: tuple = ()
    palette: tuple = ()

    def __post_init__(self):
        centers = np.array(self.centers, dtype=np.complex128)
        centers.setflags(write=False)
        object.__setattr__(self, 'centers', centers)
        object.__setattr__(self, 'regions', tuple(self.regions))
        if not self.class_names:
            object.__setattr__(self, 'class_names', tuple(f"class{m}" for m in range(self.num_classes)))
        if not self.palette:
            object.__setattr__(self, 'palette', default_palette(self.num_classes))
        object.__setattr__(self, 'class_names', tuple(self.class_names))
        object.__setattr__(self, 'palette', tuple(tuple(int(c) for c in color) for color in self.palette))

    def label_map(self):
        """Paint the regions into a (H, W) uint8 label raster (255 where unpainted)."""
        labels = np.full((self.height, self.width), UNLABELED, dtype=np.uint8)
        for region in self.regions:
            labels[region.mask(self.height, self.width)] = region.label
        return labels

    def validate(self):
        """
        Check the scene invariants.

        Raises:
            ValidationError: If a region leaves the image, a class is never
                painted, a center is not positive definite, rho is outside
                [0, 0.5), or the palette is not injective
        """
        if self.height < 1 or self.width < 1:
            raise ValidationError(f"scene size must be positive, got {self.height}x{self.width}")
        if self.num_classes < 1 or self.num_classes >= UNLABELED:
            raise ValidationError(f"num_classes must be in 1..254, got {self.num_classes}")
        if not 0.0 <= self.impurity < 0.5:
            raise ValidationError(f"impurity must be in [0, 0.5), got {self.impurity}")
        if self.looks < 3:
            raise ValidationError(f"looks must be >= 3 for full-rank draws, got {self.looks}")
        if self.centers.shape != (2, self.num_classes, 3, 3):
            raise ValidationError(
                f"centers must have shape (2, {self.num_classes}, 3, 3), got {self.centers.shape}"
            )
        for index, region in enumerate(self.regions):
            if region.shape not in REGION_SHAPES:
                raise ValidationError(f"region {index}: unknown shape {region.shape!r}")
            if not 0 <= region.label < self.num_classes:
                raise ValidationError(f"region {index}: label {region.label} outside 0..{self.num_classes - 1}")
            if not region.in_bounds(self.height, self.width):
                raise ValidationError(f"region {index} does not fit inside {self.height}x{self.width}")
        present = set(np.unique(self.label_map()).tolist()) - {UNLABELED}
        missing = sorted(set(range(self.num_classes)) - present)
        if missing:
            raise ValidationError(f"classes {missing} are not painted by any region")
        for band in range(2):
            for label in range(self.num_classes):
                center = self.centers[band, label]
                if not np.allclose(center, center.conj().T, rtol=0, atol=1e-12 * np.abs(center).max()):
                    raise ValidationError(f"center for band {band + 1}, class {label} is not Hermitian")
                if np.linalg.eigvalsh(center)[0] <= 0:
                    raise ValidationError(f"center for band {band + 1}, class {label} is not positive definite")
        if len(self.class_names) != self.num_classes:
            raise ValidationError(f"expected {self.num_classes} class names, got {len(self.class_names)}")
        check_palette(self.palette, self.num_classes)
        return self

    def to_dict(self):
        """JSON-ready representation; centers are stored as Feature9 vectors."""
        return {
            'height': self.height,
            'width': self.width,
            'num_classes': self.num_classes,
            'looks': self.looks,
            'impurity': self.impurity,
            'seed': self.seed,
            'class_names': list(self.class_names),
            'palette': [list(color) for color in self.palette],
            'regions': [asdict(region) for region in self.regions],
            'centers': vectorize_many(self.centers).tolist(),
        }


_PALETTE = (
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 212),
    (0, 128, 128), (220, 190, 255), (170, 110, 40), (255, 250, 200), (128, 0, 0),
    (170, 255, 195), (128, 128, 0), (255, 215, 180), (0, 0, 128), (128, 128, 128),
)


def default_palette(num_classes):
    if num_classes <= len(_PALETTE):
        return _PALETTE[:num_classes]
    # beyond the fixed table, spread colors over the RGB cube
    colors = list(_PALETTE)
    value = 1
    while len(colors) < num_classes:
        color = ((value * 97) % 256, (value * 57) % 256, (value * 31) % 256 or 1)
        if color not in colors and color != (0, 0, 0):
            colors.append(color)
        value += 1
    return tuple(colors)


def check_palette(palette, num_classes):
    """Raise ValidationError unless the palette covers M classes injectively and avoids black."""
    if len(palette) < num_classes:
        raise ValidationError(f"palette has {len(palette)} colors but {num_classes} classes are declared")
    colors = [tuple(color) for color in palette[:num_classes]]
    if any(len(color) != 3 or not all(0 <= c <= 255 for c in color) for color in colors):
        raise ValidationError("palette entries must be RGB triples in 0..255")
    if len(set(colors)) != len(colors):
        raise ValidationError("palette colors must be distinct")
    if (0, 0, 0) in colors:
        raise ValidationError("black is reserved for unlabeled pixels")


@dataclass(frozen=True)
class DistillConfig:
    """
    Settings of one training run (teacher or student).

    Attributes:
        alpha: Balance between KL and CE in the student loss, in [0, 1]
        teacher_checkpoints: (band1 path, band2 path); empty for teachers
        epochs: Training epochs
        batch_size: Samples per optimizer step
        seed: Root seed of the run
        learning_rate: Base Adam step size
        lr_decay: Multiplicative decay factor
        lr_decay_every: Epochs between decays
        window, stride: Sliding-window sampling
        looks: Wishart looks for SDSR pixel generation
        use_sdsr: Enable sample rectification
        train_ratio: Fraction of labeled windows used for training
        eval_limit: Cap on held-out windows scored per epoch (0 = all)
        threads: Worker threads for batch assembly
    """

    alpha: float = 0.7
    teacher_checkpoints: tuple = ()
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    learning_rate: float = 1e-3
    lr_decay: float = 0.9
    lr_decay_every: int = 50
    window: int = 12
    stride: int = 1
    looks: int = 4
    use_sdsr: bool = True
    train_ratio: float = 0.1
    eval_limit: int = 1000
    threads: int = 1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be positive")


@dataclass(frozen=True)
class RunConfig:
    """
    Everything one command needs, after defaults, file and flags are merged.

    See ``SKDNET`` in the project settings for the defaults.
    """

    out_dir: str
    scene: str = None
    window: int = 12
    stride: int = 1
    patch: int = 3
    dim: int = 64
    depth: int = 2
    mlp_ratio: int = 2
    conv_channels: tuple = (16, 32, 32)
    alpha: float = 0.7
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    lr_decay: float = 0.9
    lr_decay_every: int = 50
    looks: int = 4
    seed: int = 0
    threads: int = 1
    train_ratio: float = 0.1
    eval_limit: int = 1000
    use_sdsr: bool = True
    teacher_band1: str = None
    teacher_band2: str = None
    datasets: tuple = ()
    alphas: tuple = field(default=tuple(round(0.1 * step, 1) for step in range(11)))
    repeats: int = 1

    def __post_init__(self):
        if self.window % self.patch:
            raise ConfigurationError(
                f"window size {self.window} must be divisible by patch size {self.patch}"
            )
        object.__setattr__(self, 'conv_channels', tuple(self.conv_channels))
        object.__setattr__(self, 'datasets', tuple(self.datasets))
        object.__setattr__(self, 'alphas', tuple(self.alphas))

    def replace(self, **changes):
        values = asdict(self)
        values.update(changes)
        return RunConfig(**values)

    def model_config(self, in_channels, num_classes):
        from .nn.modules import ModelConfig

        return ModelConfig(
            in_channels=in_channels,
            num_classes=num_classes,
            window=self.window,
            patch=self.patch,
            dim=self.dim,
            depth=self.depth,
            mlp_ratio=self.mlp_ratio,
            conv_channels=self.conv_channels,
            use_sdsr=self.use_sdsr,
            looks=self.looks,
        )

    def distill_config(self, alpha=None, seed=None):
        teachers = ()
        if self.teacher_band1 and self.teacher_band2:
            teachers = (self.teacher_band1, self.teacher_band2)
        return DistillConfig(
            alpha=self.alpha if alpha is None else alpha,
            teacher_checkpoints=teachers,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed if seed is None else seed,
            learning_rate=self.learning_rate,
            lr_decay=self.lr_decay,
            lr_decay_every=self.lr_decay_every,
            window=self.window,
            stride=self.stride,
            looks=self.looks,
            use_sdsr=self.use_sdsr,
            train_ratio=self.train_ratio,
            eval_limit=self.eval_limit,
            threads=self.threads,
        )

    def echo(self):
        """Deterministic JSON-ready view (no timestamps) stored in checkpoints."""
        values = asdict(self)
        values['conv_channels'] = list(self.conv_channels)
        values['datasets'] = list(self.datasets)
        values['alphas'] = list(self.alphas)
        return values
