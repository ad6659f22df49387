"""Augmentation, oversampling, cross-validation folds and test-time augmentation."""
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Sequence

import numpy as np
from skimage.filters import gaussian
from skimage.transform import AffineTransform, resize, warp
from sklearn.model_selection import StratifiedKFold

from .volume import Volume

logger = logging.getLogger(__name__)

AUGMENTATION_OPS = (
    "shift",
    "scale",
    "rotate",
    "crop",
    "hflip",
    "brightness",
    "contrast",
    "gaussian_blur",
)


@dataclass(frozen=True)
class OpRange:
    """Probability and magnitude range of one augmentation op."""

    p: float
    low: float = 0.0
    high: float = 0.0

    def __post_init__(self):
        """Validate."""
        if not 0 <= self.p <= 1 or self.low > self.high:
            raise ValueError(f"Bad op range p={self.p}, [{self.low}, {self.high}].")


@dataclass(frozen=True)
class AugmentationPolicy:
    """Enabled in-plane augmentations and their ranges.

    Magnitudes: shift as a fraction of the in-plane extent, scale as a factor,
    rotate in degrees, crop as the kept fraction, brightness as an additive
    offset, contrast as a factor around the mean, gaussian_blur as sigma in pixels.

    :param ops: Op name -> range.
    :param seed: Policy seed, combined with the per-draw seed.
    """

    ops: Dict[str, OpRange] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        """Validate."""
        unknown = sorted(set(self.ops) - set(AUGMENTATION_OPS))
        if unknown:
            raise ValueError(f"Unknown augmentation ops {unknown}; valid: {AUGMENTATION_OPS}.")

    @classmethod
    def default(cls, seed: int = 0) -> "AugmentationPolicy":
        """Moderate settings for all eight ops."""
        return cls(
            {
                "shift": OpRange(0.5, -0.0625, 0.0625),
                "scale": OpRange(0.5, 0.9, 1.1),
                "rotate": OpRange(0.5, -15.0, 15.0),
                "crop": OpRange(0.3, 0.85, 1.0),
                "hflip": OpRange(0.5),
                "brightness": OpRange(0.5, -0.1, 0.1),
                "contrast": OpRange(0.5, 0.9, 1.1),
                "gaussian_blur": OpRange(0.2, 0.3, 1.0),
            },
            seed,
        )

    @classmethod
    def rigid(cls, seed: int = 0) -> "AugmentationPolicy":
        """Flip, rotation about the center and intensity ops; content stays in frame."""
        return cls(
            {
                "rotate": OpRange(0.5, -15.0, 15.0),
                "hflip": OpRange(0.5),
                "brightness": OpRange(0.5, -0.1, 0.1),
                "contrast": OpRange(0.5, 0.9, 1.1),
            },
            seed,
        )

    @classmethod
    def empty(cls, seed: int = 0) -> "AugmentationPolicy":
        """No op enabled."""
        return cls({}, seed)

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationPolicy":
        """Inverse of :meth:`to_dict`."""
        return cls({k: OpRange(**v) for k, v in d.get("ops", {}).items()}, d.get("seed", 0))

    def to_dict(self) -> dict:
        """JSON-friendly form."""
        return {"ops": {k: asdict(v) for k, v in self.ops.items()}, "seed": self.seed}


def _affine(voxels: np.ndarray, scale: float, angle: float, shift: np.ndarray) -> np.ndarray:
    h, w = voxels.shape[1:]
    center = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    tform = (
        AffineTransform(translation=-center)
        + AffineTransform(scale=(scale, scale), rotation=np.deg2rad(angle))
        + AffineTransform(translation=center + shift)
    )
    return np.stack(
        [warp(s, tform.inverse, order=1, mode="constant", cval=0.0, preserve_range=True)
         for s in voxels]
    )


def _crop(voxels: np.ndarray, frac: float, rng: np.random.Generator) -> np.ndarray:
    d, h, w = voxels.shape
    ch, cw = max(1, int(round(h * frac))), max(1, int(round(w * frac)))
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    patch = voxels[:, y0 : y0 + ch, x0 : x0 + cw]
    return resize(patch, (d, h, w), order=1, mode="edge", anti_aliasing=False, preserve_range=True)


def augment(volume: Volume, policy: AugmentationPolicy, draw_seed: int) -> Volume:
    """Apply one random draw of the policy, identically to every slice.

    Shape, label and representative slices are preserved; the result depends
    only on ``(policy.seed, draw_seed)``.

    :param volume: Input volume.
    :type volume: Volume
    :param policy: Augmentation policy.
    :type policy: AugmentationPolicy
    :param draw_seed: Per-draw seed.
    :type draw_seed: int
    :rtype: Volume
    """
    rng = np.random.default_rng([policy.seed, draw_seed])
    x = volume.voxels.copy()

    def draw(op: str):
        rule = policy.ops.get(op)
        if rule is None or rng.random() >= rule.p:
            return None
        return rng.uniform(rule.low, rule.high)

    size = np.array(x.shape[1:][::-1], dtype=float)
    shift = draw("shift")
    scale = draw("scale")
    angle = draw("rotate")
    if shift is not None or scale is not None or angle is not None:
        offset = np.zeros(2) if shift is None else shift * size
        x = _affine(x, 1.0 if scale is None else scale, 0.0 if angle is None else angle, offset)
    frac = draw("crop")
    if frac is not None:
        x = _crop(x, frac, rng)
    if draw("hflip") is not None:
        x = x[:, :, ::-1].copy()
    offset = draw("brightness")
    if offset is not None:
        x = x + offset
    factor = draw("contrast")
    if factor is not None:
        mean = x.mean()
        x = (x - mean) * factor + mean
    sigma = draw("gaussian_blur")
    if sigma is not None:
        x = gaussian(x, sigma=(0, sigma, sigma), preserve_range=True)
    return volume.with_voxels(x)


def oversample_indices(labels: Sequence[int], epoch_len: int, seed: int) -> np.ndarray:
    """Draw indices with replacement, each class with total probability 1/2.

    :param labels: Label per sample.
    :type labels: Sequence[int]
    :param epoch_len: Number of draws.
    :type epoch_len: int
    :param seed: Seed.
    :type seed: int
    :rtype: np.ndarray
    """
    labels = np.asarray(labels)
    classes, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if len(classes) < 2:
        raise ValueError(f"Oversampling needs both classes, got only {classes.tolist()}.")
    weights = 1.0 / counts[inverse]
    rng = np.random.default_rng(seed)
    return rng.choice(len(labels), size=epoch_len, replace=True, p=weights / weights.sum())


@dataclass
class FoldAssignment:
    """Partition of sample indices into k stratified folds."""

    folds: List[np.ndarray]

    @property
    def k(self) -> int:
        """Number of folds."""
        return len(self.folds)

    @property
    def n(self) -> int:
        """Number of samples."""
        return int(sum(len(f) for f in self.folds))

    def test_indices(self, fold: int) -> np.ndarray:
        """Hold-out indices of a fold."""
        return self.folds[fold]

    def train_indices(self, fold: int) -> np.ndarray:
        """All indices outside the fold, sorted."""
        return np.sort(np.concatenate([f for i, f in enumerate(self.folds) if i != fold]))

    def fold_of(self) -> np.ndarray:
        """Fold number of every sample."""
        out = np.empty(self.n, dtype=int)
        for i, f in enumerate(self.folds):
            out[f] = i
        return out

    def to_lists(self) -> List[List[int]]:
        """Plain nested lists for JSON."""
        return [f.tolist() for f in self.folds]


def stratified_kfold(labels: Sequence[int], k: int, seed: int) -> FoldAssignment:
    """Label-stratified k-fold partition, deterministic in ``seed``.

    :param labels: Label per sample.
    :type labels: Sequence[int]
    :param k: Number of folds, at most the smallest class count.
    :type k: int
    :param seed: Shuffle seed.
    :type seed: int
    :rtype: FoldAssignment
    """
    labels = np.asarray(labels)
    _, counts = np.unique(labels, return_counts=True)
    if k < 2 or k > counts.min():
        raise ValueError(
            f"k={k} must be in [2, smallest class count {counts.min()}]."
        )
    splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    folds = [np.sort(test) for _, test in splitter.split(np.zeros(len(labels)), labels)]
    return FoldAssignment(folds)


def tta_predict(
    predict_proba: Callable[[List[Volume]], np.ndarray],
    volume: Volume,
    n_aug: int = 10,
    policy: AugmentationPolicy = None,
    seed: int = 0,
) -> np.ndarray:
    """Mean probability over the identity and ``n_aug`` augmented copies.

    :param predict_proba: Maps a list of volumes to one probability row per volume.
    :type predict_proba: Callable[[List[Volume]], np.ndarray]
    :param volume: Preprocessed volume.
    :type volume: Volume
    :param n_aug: Number of augmented copies.
    :type n_aug: int
    :param policy: Augmentation policy; empty when None.
    :type policy: AugmentationPolicy
    :param seed: Seed of the copies.
    :type seed: int
    :rtype: np.ndarray
    """
    policy = policy or AugmentationPolicy.empty()
    copies = [volume]
    if policy.ops:
        copies += [augment(volume, policy, seed * 1000 + i) for i in range(n_aug)]
    return np.asarray(predict_proba(copies)).mean(axis=0)
