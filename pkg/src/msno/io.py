"""On-disk datasets and predictor checkpoints.

Both are directories holding ``manifest.json`` plus one raw little-endian
float64 file per array (row-major, y-outer / x-inner for nodal fields).
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import ChecksumError, ConfigurationError, MissingFileError, SchemaVersionError
from .grid import DomainKind
from .msbasis import BasisSet
from .predictor.ffno import FfnoConfig
from .predictor.training import PredictorCheckpoint, TypeModel

DATASET_SCHEMA = 1
CHECKPOINT_SCHEMA = 1
_LE_F64 = np.dtype("<f8")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _atomic_write(path: Path, data: bytes):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_array(directory: Path, name: str, array) -> dict:
    arr = np.ascontiguousarray(np.asarray(array, dtype=_LE_F64))
    data = arr.tobytes(order="C")
    _atomic_write(directory / name, data)
    return {"shape": list(arr.shape), "sha256": _sha256(data)}


def _read_array(directory: Path, name: str, meta: dict) -> np.ndarray:
    path = directory / name
    if not path.exists():
        raise MissingFileError(f"missing array file {path}")
    data = path.read_bytes()
    if _sha256(data) != meta["sha256"]:
        raise ChecksumError(f"checksum mismatch for {path}")
    return np.frombuffer(data, dtype=_LE_F64).reshape(meta["shape"]).astype(np.float64)


def _write_manifest(directory: Path, manifest: dict):
    _atomic_write(directory / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True).encode("utf-8"))


def _read_manifest(directory: Path, schema: int) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise MissingFileError(f"missing manifest {path}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("schema_version") != schema:
        raise SchemaVersionError(
            f"unsupported schema_version {manifest.get('schema_version')!r} in {path} (expected {schema})"
        )
    return manifest


@dataclass
class Dataset:
    manifest: dict
    samples: list = field(default_factory=list)  # list of {field_name: ndarray}

    @property
    def seeds(self) -> list:
        return self.manifest["seeds"]

    def __len__(self):
        return len(self.samples)

    def subset(self, start: int, stop: int) -> "Dataset":
        manifest = {**self.manifest, "seeds": self.seeds[start:stop], "n_samples": len(self.samples[start:stop])}
        return Dataset(manifest, self.samples[start:stop])

    def split(self, n_train: int):
        """Train/test split by index ranges: ``[0, n_train)`` and ``[n_train, n)``."""
        return self.subset(0, n_train), self.subset(n_train, len(self))


def sample_name(index: int) -> str:
    return f"{index:05d}"


def write_dataset(path, samples, seeds, grid, params: dict | None = None) -> Dataset:
    """Write ``samples`` (list of ``{field: array}``) with one file per field."""
    if len(samples) != len(seeds):
        raise ConfigurationError("one seed per sample is required")
    if len(set(seeds)) != len(seeds):
        raise ConfigurationError("sample seeds must be unique")
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for i, sample in enumerate(samples):
        for name, arr in sorted(sample.items()):
            fname = f"{sample_name(i)}_{name}.f64le"
            files[fname] = _write_array(directory, fname, arr)
    manifest = {
        "schema_version": DATASET_SCHEMA,
        "grid": {"n_coarse": grid.n_coarse, "n_fine": grid.n_fine},
        "n_samples": len(samples),
        "seeds": [int(s) for s in seeds],
        "params": params or {},
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "fields": sorted({name for s in samples for name in s}),
        "files": files,
    }
    _write_manifest(directory, manifest)
    return Dataset(manifest, [dict(s) for s in samples])


def read_dataset(path) -> Dataset:
    directory = Path(path)
    manifest = _read_manifest(directory, DATASET_SCHEMA)
    samples = [dict() for _ in range(manifest["n_samples"])]
    for fname, meta in sorted(manifest["files"].items()):
        stem = fname[: -len(".f64le")]
        index, name = stem.split("_", 1)
        samples[int(index)][name] = _read_array(directory, fname, meta)
    return Dataset(manifest, samples)


def write_checkpoint(path, checkpoint: PredictorCheckpoint):
    checkpoint.check_complete()
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    models = {}
    for kind, tm in checkpoint.models.items():
        tensors = {}
        for name, arr in sorted(tm.state.items()):
            fname = f"{kind.value}.{name}.f64le"
            meta = _write_array(directory, fname, arr)
            # spectral weights keep a trailing (real, imag) axis: interleaved complex
            meta["complex"] = "kernel.weights" in name
            meta["file"] = fname
            tensors[name] = meta
        mask = None
        if tm.mask is not None:
            mask = {"file": f"{kind.value}.output_mask.f64le", **_write_array(directory, f"{kind.value}.output_mask.f64le", tm.mask)}
        models[kind.value] = {
            "config": tm.config.to_dict(),
            "log_mean": tm.log_mean,
            "log_std": tm.log_std,
            "patch_shape": list(tm.patch_shape),
            "dtype": tm.dtype,
            "loss_curve": list(tm.loss_curve),
            "tensors": tensors,
            "mask": mask,
        }
    manifest = {"schema_version": CHECKPOINT_SCHEMA, "training": checkpoint.manifest, "models": models}
    _write_manifest(directory, manifest)


def read_checkpoint(path) -> PredictorCheckpoint:
    directory = Path(path)
    manifest = _read_manifest(directory, CHECKPOINT_SCHEMA)
    models = {}
    for kind in DomainKind:
        entry = manifest["models"].get(kind.value)
        if entry is None:
            raise ConfigurationError(f"checkpoint {directory} has no model for domain type {kind.value!r}")
        state = {name: _read_array(directory, meta["file"], meta) for name, meta in entry["tensors"].items()}
        mask = None if entry["mask"] is None else _read_array(directory, entry["mask"]["file"], entry["mask"])
        models[kind] = TypeModel(
            config=FfnoConfig.from_dict(entry["config"]),
            state=state,
            log_mean=float(entry["log_mean"]),
            log_std=float(entry["log_std"]),
            patch_shape=tuple(entry["patch_shape"]),
            mask=mask,
            dtype=entry["dtype"],
            loss_curve=list(entry["loss_curve"]),
        )
    ckpt = PredictorCheckpoint(models, manifest["training"])
    ckpt.check_complete()
    return ckpt


def resolve_loss_kind(checkpoint: PredictorCheckpoint, requested: str | None) -> str:
    """The manifest's loss kind wins over a conflicting request."""
    recorded = checkpoint.manifest.get("loss")
    if requested is not None and recorded is not None and requested.lower() != recorded:
        warnings.warn(
            f"requested loss {requested!r} differs from checkpoint loss {recorded!r}; using {recorded!r}",
            UserWarning,
            stacklevel=2,
        )
    return recorded if recorded is not None else requested


def write_bases(path, bases_per_field, seeds, grid, params: dict | None = None) -> Dataset:
    """Store per-domain basis sets as dataset fields ``psi<domain>`` of shape ``(N_bf, rows, cols)``."""
    samples = [{f"psi{b.domain_index:03d}": b.vectors for b in bases} for bases in bases_per_field]
    return write_dataset(path, samples, seeds, grid, {"kind": "bases", **(params or {})})


def read_bases(path):
    """Inverse of :func:`write_bases`: ``(dataset, list of BasisSet lists)``."""
    ds = read_dataset(path)
    if ds.manifest["params"].get("kind") != "bases":
        raise ConfigurationError(f"{path} does not hold basis sets")
    out = []
    for sample in ds.samples:
        names = sorted(n for n in sample if n.startswith("psi"))
        out.append([BasisSet(int(n[3:]), sample[n]) for n in names])
    return ds, out


def write_oracle_checkpoint(path, grid, n_basis: int, n_extra: int = 4):
    """A checkpoint stub that makes the predictor defer to the exact eigensolve."""
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    training = {"oracle": True, "n_coarse": grid.n_coarse, "n_fine": grid.n_fine, "n_basis": int(n_basis), "n_extra": int(n_extra)}
    _write_manifest(directory, {"schema_version": CHECKPOINT_SCHEMA, "training": training, "models": {}})


def read_checkpoint_manifest(path) -> dict:
    return _read_manifest(Path(path), CHECKPOINT_SCHEMA)


def is_oracle_checkpoint(path) -> bool:
    return bool(read_checkpoint_manifest(path)["training"].get("oracle", False))
