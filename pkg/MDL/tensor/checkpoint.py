"""Deterministic parameter archive.

An archive is a zip file holding ``manifest.json`` and one ``records/<name>.f8``
entry per parameter or buffer, stored uncompressed as little-endian float64.
"""
import json
import logging
import zipfile
from typing import Dict, Tuple

import numpy as np

from .module import Module

logger = logging.getLogger(__name__)

_DATE = (1980, 1, 1, 0, 0, 0)
FORMAT_VERSION = 1


def _entry(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_DATE)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def save_checkpoint(model: Module, path: str, variant_name: str) -> str:
    """Write every parameter and buffer of ``model`` to ``path``.

    :param model: Model to save.
    :type model: Module
    :param path: Output archive path.
    :type path: str
    :param variant_name: Encoder variant recorded in the manifest.
    :type variant_name: str
    :rtype: str
    """
    state = model.state_dict()
    param_names = {n for n, _ in model.named_parameters()}
    records = [
        {"name": n, "shape": list(a.shape), "kind": "param" if n in param_names else "buffer"}
        for n, a in state.items()
    ]
    manifest = {
        "format": FORMAT_VERSION,
        "variant": variant_name,
        "param_count": model.num_parameters(),
        "records": records,
    }
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr(_entry("manifest.json"), json.dumps(manifest, indent=1, sort_keys=True))
        for name, array in state.items():
            raw = np.ascontiguousarray(array, dtype="<f8").tobytes()
            zf.writestr(_entry(f"records/{name}.f8"), raw)
    logger.info("Saved %s (%d parameters) to %s", variant_name, manifest["param_count"], path)
    return path


def read_checkpoint(path: str) -> Tuple[dict, Dict[str, np.ndarray]]:
    """Return ``(manifest, state)`` without touching any model.

    :param path: Archive path.
    :type path: str
    :rtype: Tuple[dict, Dict[str, np.ndarray]]
    """
    with zipfile.ZipFile(path, "r") as zf:
        manifest = json.loads(zf.read("manifest.json"))
        state = {}
        for rec in manifest["records"]:
            raw = zf.read(f"records/{rec['name']}.f8")
            shape = tuple(rec["shape"])
            array = np.frombuffer(raw, dtype="<f8")
            if array.size != int(np.prod(shape)):
                raise ValueError(
                    f"Record {rec['name']} holds {array.size} values, manifest says {shape}."
                )
            state[rec["name"]] = array.reshape(shape).astype(np.float64)
    return manifest, state


def load_checkpoint(model: Module, path: str) -> dict:
    """Load an archive into ``model``; the variant and parameter count must agree.

    :param model: Target model, built with the same variant.
    :type model: Module
    :param path: Archive path.
    :type path: str
    :rtype: dict
    """
    manifest, state = read_checkpoint(path)
    expected = model.num_parameters()
    if manifest["param_count"] != expected:
        raise ValueError(
            f"Checkpoint '{manifest['variant']}' has {manifest['param_count']} parameters, "
            f"model has {expected}."
        )
    model.load_state_dict(state)
    return manifest
