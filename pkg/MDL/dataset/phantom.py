"""Synthetic anisotropic phantoms: a tubular wall with a tumor blob.

The label is 1 when the blob reaches past the outer edge of the wall. The
clearance between the two classes shrinks and noise and intensity bias grow
with ``difficulty``.
"""
import logging
from dataclasses import asdict, dataclass
from typing import List, Tuple

import numpy as np
from skimage.filters import gaussian
from tqdm import tqdm

from .volume import Volume

logger = logging.getLogger(__name__)

MIN_ANISOTROPY = 5.0


@dataclass(frozen=True)
class PhantomConfig:
    """Generator settings.

    :param n: Number of volumes.
    :param class_balance: Fraction of label-1 volumes.
    :param difficulty: 0 (separable, clean) to 1 (overlapping, noisy).
    :param seed: Generator seed.
    :param size: In-plane extent S.
    :param depth_min: Smallest D.
    :param depth_max: Largest D.
    """

    n: int = 60
    class_balance: float = 0.7
    difficulty: float = 0.3
    seed: int = 0
    size: int = 64
    depth_min: int = 8
    depth_max: int = 16

    def __post_init__(self):
        """Validate."""
        if not 0 <= self.difficulty <= 1:
            raise ValueError(f"difficulty must be in [0, 1], got {self.difficulty}.")
        if not 0 <= self.class_balance <= 1:
            raise ValueError(f"class_balance must be in [0, 1], got {self.class_balance}.")
        if self.n < 1 or self.size < 16:
            raise ValueError(f"Need n >= 1 and size >= 16, got {self.n} / {self.size}.")
        if not 3 <= self.depth_min <= self.depth_max:
            raise ValueError(f"Bad depth range [{self.depth_min}, {self.depth_max}].")

    def to_dict(self) -> dict:
        """Plain dictionary."""
        return asdict(self)


@dataclass(frozen=True)
class PhantomGeometry:
    """Shape parameters of one phantom, in pixels and slices.

    ``penetration`` is the signed distance the blob reaches past the outer wall
    edge on its widest slice; the label is ``penetration > 0``.
    """

    label: int
    depth: int
    spacing: float
    thickness: float
    center: Tuple[float, float]
    inner_radius: float
    outer_radius: float
    angle: float
    blob_radius: float
    blob_distance: float
    blob_slice: int
    blob_depth_radius: float
    penetration: float
    noise: float
    bias: float


def exact_count_labels(n: int, class_balance: float, rng: np.random.Generator) -> np.ndarray:
    """``round(n * class_balance)`` ones and zeros otherwise, in random order."""
    n1 = int(round(n * class_balance))
    return rng.permutation(np.array([1] * n1 + [0] * (n - n1)))


def sample_geometry(
    label: int, config: PhantomConfig, rng: np.random.Generator
) -> PhantomGeometry:
    """Draw the shape of one phantom with the requested label.

    :param label: Target label.
    :type label: int
    :param config: Generator settings.
    :type config: PhantomConfig
    :param rng: Generator.
    :type rng: np.random.Generator
    :rtype: PhantomGeometry
    """
    s = config.size
    depth = int(rng.integers(config.depth_min, config.depth_max + 1))
    spacing = float(rng.uniform(0.38, 0.5))
    thickness = float(rng.uniform(MIN_ANISOTROPY * spacing, 5.0))
    center = tuple(s / 2 + rng.uniform(-0.04, 0.04, 2) * s)
    inner = float(rng.uniform(0.16, 0.2) * s)
    outer = inner + float(rng.uniform(0.07, 0.09) * s)

    clearance = 0.06 * s * (1.0 - config.difficulty)
    spread = 0.06 * s
    offset = clearance + rng.uniform(0.0, spread)
    penetration = float(offset if label == 1 else -offset)
    if label == 1 and penetration <= 0:
        penetration = 1e-3
    blob_radius = float(rng.uniform(0.07, 0.1) * s)
    blob_distance = outer + penetration - blob_radius

    blob_slice = int(rng.integers(1, depth - 1))
    return PhantomGeometry(
        label=int(label),
        depth=depth,
        spacing=spacing,
        thickness=thickness,
        center=(float(center[0]), float(center[1])),
        inner_radius=inner,
        outer_radius=outer,
        angle=float(rng.uniform(0, 2 * np.pi)),
        blob_radius=blob_radius,
        blob_distance=blob_distance,
        blob_slice=blob_slice,
        blob_depth_radius=float(rng.uniform(1.5, 3.0)),
        penetration=penetration,
        noise=0.02 + 0.2 * config.difficulty,
        bias=0.05 + 0.4 * config.difficulty,
    )


def blob_section_radius(geometry: PhantomGeometry) -> np.ndarray:
    """In-plane blob radius on every slice (0 where the blob is absent)."""
    z = np.arange(geometry.depth) - geometry.blob_slice
    frac = 1.0 - (z / geometry.blob_depth_radius) ** 2
    return geometry.blob_radius * np.sqrt(np.clip(frac, 0.0, None))


def render(
    geometry: PhantomGeometry, size: int, rng: np.random.Generator, name: str = ""
) -> Volume:
    """Voxelize a geometry and add bias field and noise.

    :param geometry: Shape parameters.
    :type geometry: PhantomGeometry
    :param size: In-plane extent S.
    :type size: int
    :param rng: Generator for noise and bias direction.
    :type rng: np.random.Generator
    :param name: Volume name.
    :type name: str
    :rtype: Volume
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    cy, cx = geometry.center
    r = np.hypot(yy - cy, xx - cx)
    plane = np.where(r < geometry.inner_radius, 0.3, 0.0)
    plane = np.where((r >= geometry.inner_radius) & (r < geometry.outer_radius), 1.0, plane)

    by = cy + geometry.blob_distance * np.sin(geometry.angle)
    bx = cx + geometry.blob_distance * np.cos(geometry.angle)
    rb = np.hypot(yy - by, xx - bx)
    sections = blob_section_radius(geometry)

    voxels = np.empty((geometry.depth, size, size))
    for d in range(geometry.depth):
        voxels[d] = np.where(rb < sections[d], 0.6, plane)
    voxels = gaussian(voxels, sigma=(0, 0.7, 0.7), preserve_range=True)

    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    zz = np.linspace(-1, 1, geometry.depth)[:, None, None]
    field = (
        direction[0] * zz
        + direction[1] * (yy / size - 0.5)[None] * 2
        + direction[2] * (xx / size - 0.5)[None] * 2
    )
    voxels = voxels * (1.0 + geometry.bias * field) + rng.normal(
        0.0, geometry.noise, voxels.shape
    )

    order = np.argsort(-sections, kind="stable")
    representative = tuple(sorted(int(i) for i in order[:3] if sections[i] > 0))
    return Volume(
        voxels,
        (geometry.spacing, geometry.spacing),
        geometry.thickness,
        geometry.label,
        representative,
        name=name,
    )


def phantom_geometries(config: PhantomConfig) -> List[PhantomGeometry]:
    """Geometries of the dataset :func:`generate_phantom_dataset` renders for ``config``."""
    rng = np.random.default_rng(config.seed)
    labels = exact_count_labels(config.n, config.class_balance, rng)
    return [sample_geometry(int(y), config, rng) for y in labels]


def generate_phantom_dataset(
    n: int = 60,
    class_balance: float = 0.7,
    difficulty: float = 0.3,
    seed: int = 0,
    size: int = 64,
    verbose: bool = False,
) -> List[Volume]:
    """Generate a labeled phantom dataset; identical arguments give identical data.

    :param n: Number of volumes.
    :type n: int
    :param class_balance: Fraction of label-1 volumes.
    :type class_balance: float
    :param difficulty: Value in [0, 1].
    :type difficulty: float
    :param seed: Seed.
    :type seed: int
    :param size: In-plane extent S.
    :type size: int
    :param verbose: Show a progress bar.
    :type verbose: bool
    :rtype: List[Volume]
    """
    config = PhantomConfig(n, class_balance, difficulty, seed, size)
    return generate_from_config(config, verbose)


def generate_from_config(config: PhantomConfig, verbose: bool = False) -> List[Volume]:
    """Generate the dataset described by a :class:`PhantomConfig`."""
    geometries = phantom_geometries(config)
    noise_rng = np.random.default_rng([config.seed, 1])
    volumes = [
        render(g, config.size, noise_rng, name=f"phantom_{i:04d}")
        for i, g in enumerate(tqdm(geometries, disable=not verbose, desc="phantoms"))
    ]
    logger.info(
        "Generated %d phantoms (%d label 1), difficulty %.2f",
        len(volumes),
        sum(v.label for v in volumes),
        config.difficulty,
    )
    return volumes
