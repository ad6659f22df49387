"""Volume type and its ``.vox`` / ``.meta`` file pair."""
import json
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

META_FIELDS = ("dims", "spacing_mm", "thickness_mm", "label", "representative_slices")
MANIFEST = "manifest.txt"
FOLDS = "folds.json"


@dataclass
class Volume:
    """Anisotropic scan with a stage label.

    :param voxels: [D, H, W] intensities (slice, y, x).
    :param pixel_spacing: In-plane (sx, sy) spacing in mm.
    :param slice_thickness: Slice thickness in mm.
    :param label: 0 (T2) or 1 (T3).
    :param representative_slices: One to three slice indices.
    :param name: Identifier used for file names.
    """

    voxels: np.ndarray
    pixel_spacing: Tuple[float, float]
    slice_thickness: float
    label: int
    representative_slices: Tuple[int, ...]
    name: str = field(default="")

    def __post_init__(self):
        """Validate."""
        self.voxels = np.asarray(self.voxels, dtype=np.float64)
        self.representative_slices = tuple(int(i) for i in self.representative_slices)
        self.pixel_spacing = tuple(float(s) for s in self.pixel_spacing)
        self.slice_thickness = float(self.slice_thickness)
        self.label = int(self.label)
        if self.voxels.ndim != 3:
            raise ValueError(f"Voxels must be [D, H, W], got {self.voxels.shape}.")
        if self.label not in (0, 1):
            raise ValueError(f"Label must be 0 or 1, got {self.label}.")
        if not 1 <= len(self.representative_slices) <= 3:
            raise ValueError(
                f"Need 1 to 3 representative slices, got {self.representative_slices}."
            )
        depth = self.voxels.shape[0]
        if any(not 0 <= i < depth for i in self.representative_slices):
            raise ValueError(
                f"Representative slices {self.representative_slices} out of range for D={depth}."
            )

    @property
    def depth(self) -> int:
        """Number of slices D."""
        return self.voxels.shape[0]

    def with_voxels(self, voxels: np.ndarray) -> "Volume":
        """Copy with new voxels; label and metadata are kept."""
        return replace(self, voxels=voxels)

    def meta(self) -> Dict:
        """Sidecar content."""
        d, h, w = self.voxels.shape
        return {
            "dims": [d, h, w],
            "spacing_mm": list(self.pixel_spacing),
            "thickness_mm": self.slice_thickness,
            "label": int(self.label),
            "representative_slices": list(self.representative_slices),
        }


def _pair(path: str) -> Tuple[str, str]:
    stem, ext = os.path.splitext(path)
    if ext not in (".vox", ".meta"):
        stem = path
    return stem + ".vox", stem + ".meta"


def save_volume(volume: Volume, path: str) -> str:
    """Write ``<path>.vox`` (little-endian float64, x fastest) and ``<path>.meta`` (JSON).

    :param volume: Volume.
    :type volume: Volume
    :param path: Path with or without extension.
    :type path: str
    :rtype: str
    """
    vox, meta = _pair(path)
    with open(vox, "wb") as f:
        f.write(np.ascontiguousarray(volume.voxels, dtype="<f8").tobytes())
    with open(meta, "w") as f:
        json.dump(volume.meta(), f, indent=1)
    return vox


def load_volume(path: str) -> Volume:
    """Read a file pair written by :func:`save_volume`.

    :param path: Path with or without extension.
    :type path: str
    :rtype: Volume
    """
    vox, meta_path = _pair(path)
    if not os.path.exists(meta_path):
        raise ValueError(f"Missing sidecar {meta_path}.")
    with open(meta_path) as f:
        meta = json.load(f)
    missing = [k for k in META_FIELDS if k not in meta]
    if missing:
        raise ValueError(f"Sidecar {meta_path} lacks fields {missing}.")
    dims = tuple(int(x) for x in meta["dims"])
    if len(dims) != 3:
        raise ValueError(f"dims must have 3 entries, got {dims}.")
    with open(vox, "rb") as f:
        raw = f.read()
    expected = 8 * int(np.prod(dims))
    if len(raw) != expected:
        raise ValueError(f"{vox} holds {len(raw)} bytes, dims {dims} need {expected}.")
    voxels = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
    return Volume(
        voxels,
        tuple(meta["spacing_mm"]),
        float(meta["thickness_mm"]),
        int(meta["label"]),
        tuple(meta["representative_slices"]),
        name=os.path.basename(vox)[:-4],
    )


def save_dataset(
    volumes: Sequence[Volume], out_dir: str, folds: Sequence[Sequence[int]] = None
) -> List[str]:
    """Write every volume, ``manifest.txt`` and optionally ``folds.json``.

    :param volumes: Volumes with unique names.
    :type volumes: Sequence[Volume]
    :param out_dir: Output directory.
    :type out_dir: str
    :param folds: Lists of indices into ``volumes``.
    :type folds: Sequence[Sequence[int]]
    :rtype: List[str]
    """
    os.makedirs(out_dir, exist_ok=True)
    names = [v.name or f"vol_{i:04d}" for i, v in enumerate(volumes)]
    if len(set(names)) != len(names):
        raise ValueError("Volume names must be unique.")
    for name, volume in zip(names, volumes):
        save_volume(volume, os.path.join(out_dir, name))
    with open(os.path.join(out_dir, MANIFEST), "w") as f:
        f.write("\n".join(names) + "\n")
    if folds is not None:
        with open(os.path.join(out_dir, FOLDS), "w") as f:
            json.dump([[names[i] for i in fold] for fold in folds], f, indent=1)
    logger.info("Wrote %d volumes to %s", len(names), out_dir)
    return names


def load_dataset(in_dir: str) -> List[Volume]:
    """Read the volumes listed in ``manifest.txt``, in manifest order.

    :param in_dir: Dataset directory.
    :type in_dir: str
    :rtype: List[Volume]
    """
    with open(os.path.join(in_dir, MANIFEST)) as f:
        names = [line.strip() for line in f if line.strip()]
    return [load_volume(os.path.join(in_dir, name)) for name in names]


def load_folds(in_dir: str, volumes: Sequence[Volume]) -> List[List[int]]:
    """Read ``folds.json`` as index lists into ``volumes``."""
    with open(os.path.join(in_dir, FOLDS)) as f:
        folds = json.load(f)
    index = {v.name: i for i, v in enumerate(volumes)}
    return [[index[name] for name in fold] for fold in folds]
