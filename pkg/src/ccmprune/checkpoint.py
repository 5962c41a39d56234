"""Model checkpoints: one ``.ckt`` tensor file per parameter plus ``manifest.json``.

Manifest keys: ``spec``, ``config``, ``epoch``, ``history`` (per-epoch
records), ``tensors`` (parameter name -> file name) and, for pruned models,
``provenance``.
"""

import json
from pathlib import Path

from .exceptions import ArtifactError, ConfigError, StructuralError
from .nn import NetworkParams, NetworkSpec
from .tensor import read_tensor, write_tensor
from .training import EpochRecord, write_history_csv

__all__ = ["save_checkpoint", "load_checkpoint", "MANIFEST"]

MANIFEST = "manifest.json"


def save_checkpoint(directory, spec, params, config=None, history=(), provenance=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = {}
    for name, arr in params.named_arrays():
        fname = f"{name}.ckt"
        write_tensor(directory / fname, arr.shape, arr)
        tensors[name] = fname
    history = list(history)
    manifest = {
        "spec": spec.to_dict(),
        "config": None if config is None else config.to_dict(),
        "epoch": len(history),
        "history": [rec.to_dict() for rec in history],
        "tensors": tensors,
    }
    if provenance is not None:
        manifest["provenance"] = provenance
    with open(directory / MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    if history:
        write_history_csv(directory / "history.csv", history)
    return directory


def load_checkpoint(directory):
    """Returns ``(spec, params, manifest)``; manifest history is parsed to :class:`EpochRecord`."""
    directory = Path(directory)
    try:
        with open(directory / MANIFEST) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise ArtifactError(f"{directory}: no {MANIFEST}") from None
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{directory / MANIFEST}: {exc}") from None
    try:
        spec = NetworkSpec.from_dict(manifest["spec"])
        named = {}
        for name, fname in manifest["tensors"].items():
            path = directory / fname
            if not path.is_file():
                raise ArtifactError(f"{path}: missing parameter file")
            named[name] = read_tensor(path)[1]
        params = NetworkParams.from_named(named).check(spec)
        manifest["history"] = [EpochRecord.from_dict(d) for d in manifest.get("history", [])]
    except (KeyError, TypeError, ValueError, StructuralError, ConfigError) as exc:
        raise ArtifactError(f"{directory}: malformed checkpoint ({exc!r})") from None
    return spec, params, manifest
