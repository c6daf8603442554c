"""Checkpoint directories.

Layout::

    <dir>/manifest.json           kind, cuecan config, widths, parameter names
    <dir>/tensors/<name>.cuet     one CUET0001 container per parameter
"""

import json
from pathlib import Path
from typing import Union

import numpy as np

from src.core.errors import CheckpointMismatchError, ShapeError
from src.core.tensor_io import load_tensor, save_tensor
from src.modules.cuecan import config as cuecan_config
from src.modules.cuecan.module import CueCanConfig
from src.modules.network import config as network_config
from src.modules.network.module import CueClassifier, MissingSignSegmenter

MANIFEST_FILE = "manifest.json"
TENSOR_DIR = "tensors"

Model = Union[CueClassifier, MissingSignSegmenter]


def save_checkpoint(model: Model, path: Path, dtype: str = "f64", extra: dict = None) -> None:
    """Write every named parameter plus the architecture manifest."""
    tensor_dir = path / TENSOR_DIR
    tensor_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for name, param in model.named_parameters():
        save_tensor(tensor_dir / f"{name}.cuet", param.data, dtype)
        names.append(name)
    manifest = {**model.manifest(), "dtype": dtype, "parameters": names}
    if extra:
        manifest["extra"] = extra
    (path / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(path: Path) -> dict:
    manifest_path = path / MANIFEST_FILE
    if not manifest_path.exists():
        raise FileNotFoundError(f"No checkpoint manifest at {manifest_path}")
    return json.loads(manifest_path.read_text(encoding="utf-8"))


def _check_architecture(manifest: dict, model: Model, path: Path) -> None:
    expected = model.manifest()
    for key in ("cuecan", "pooled_rows", "widths"):
        if manifest.get(key) != expected[key]:
            raise CheckpointMismatchError(
                f"Checkpoint {path} has {key}={manifest.get(key)!r}, model has {expected[key]!r}"
            )


def _copy_into(params, path: Path) -> None:
    for name, param in params:
        tensor_path = path / TENSOR_DIR / f"{name}.cuet"
        if not tensor_path.exists():
            raise CheckpointMismatchError(f"Checkpoint {path} has no tensor '{name}'")
        values = load_tensor(tensor_path)
        if values.shape != param.shape:
            raise ShapeError(f"Tensor '{name}' is {values.shape} on disk, {param.shape} in the model")
        param.data = np.ascontiguousarray(values)
        param.apply_mask()


def load_checkpoint(path: Path, model: Model) -> Model:
    """Restore all parameters of ``model`` in place.

    Raises:
        CheckpointMismatchError: If the kind, CueCAn config or widths differ
    """
    manifest = read_manifest(path)
    if manifest.get("kind") != model.kind:
        raise CheckpointMismatchError(f"Checkpoint {path} holds a {manifest.get('kind')}, not a {model.kind}")
    _check_architecture(manifest, model, path)
    _copy_into(model.named_parameters(), path)
    return model


def load_encoder_from(path: Path, model: Model) -> Model:
    """Copy only the encoder (CueCAn units included) from any checkpoint kind."""
    manifest = read_manifest(path)
    _check_architecture(manifest, model, path)
    _copy_into(model.encoder_parameters(), path)
    return model


def model_from_checkpoint(path: Path) -> Model:
    """Build the architecture a checkpoint describes and load it."""
    manifest = read_manifest(path)
    cuecan = CueCanConfig.parse(manifest["cuecan"], manifest.get("pooled_rows", cuecan_config.POOLED_ROWS))
    rng = np.random.default_rng(0)
    widths = manifest["widths"]
    if manifest.get("kind") == network_config.SEGMENTER_KIND:
        model = MissingSignSegmenter(rng, cuecan, widths)
    else:
        model = CueClassifier(rng, cuecan, widths)
    return load_checkpoint(path, model)
