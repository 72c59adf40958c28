"""Training and inference for per-domain-type basis predictors."""

from __future__ import annotations

import copy
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .._validation import ConfigurationError, DivergenceError, ShapeError
from ..field import STREAM_TRAIN, stream_rng
from ..grid import (
    DomainKind,
    GridPair,
    canonical_patch_shape,
    canonicalize,
    decanonicalize,
    enumerate_local_domains,
    partition_of_unity,
)
from ..msbasis import BasisSet
from . import losses
from .ffno import FFNO, FfnoConfig

logger = logging.getLogger(__name__)

KIND_IDS = {DomainKind.FULL: 0, DomainKind.HALF: 1, DomainKind.CORNER: 2}

DESK_CONFIGS = {
    DomainKind.FULL: FfnoConfig(n_layers=4, hidden=32, modes=(12, 12)),
    DomainKind.HALF: FfnoConfig(n_layers=4, hidden=32, modes=(8, 8)),
    DomainKind.CORNER: FfnoConfig(n_layers=4, hidden=32, modes=(6, 6)),
}
FULL_SCALE_CONFIGS = {
    DomainKind.FULL: FfnoConfig(n_layers=5, hidden=128, modes=(18, 18)),
    DomainKind.HALF: FfnoConfig(n_layers=5, hidden=128, modes=(14, 10)),
    DomainKind.CORNER: FfnoConfig(n_layers=5, hidden=128, modes=(10, 10)),
}

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


def strict_determinism() -> bool:
    return os.environ.get("MSNO_STRICT_DETERMINISM", "0") == "1"


def configure_threads():
    threads = os.environ.get("MSNO_THREADS")
    if strict_determinism():
        torch.set_num_threads(1)
    elif threads:
        torch.set_num_threads(max(1, int(threads)))


@dataclass
class TrainOptions:
    loss: str = "sal"
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0
    lam: float = 1.0
    n_vectors: int = 10
    dtype: str = "float32"

    def __post_init__(self):
        self.loss = self.loss.lower()
        if self.loss not in losses.LOSS_KINDS:
            raise ConfigurationError(f"unknown loss {self.loss!r}; choose from {losses.LOSS_KINDS}")
        if self.dtype not in _DTYPES:
            raise ConfigurationError(f"dtype must be one of {sorted(_DTYPES)}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be positive")


@dataclass
class TypeModel:
    """Trained weights and input statistics for one domain type."""

    config: FfnoConfig
    state: dict  # name -> float64 ndarray; spectral weights carry a trailing (real, imag) axis
    log_mean: float
    log_std: float
    patch_shape: tuple[int, int]
    mask: np.ndarray
    dtype: str = "float32"
    loss_curve: list = field(default_factory=list)

    def build(self) -> FFNO:
        model = FFNO(self.config, output_mask=self.mask)
        model.load_state_dict({k: torch.as_tensor(v) for k, v in self.state.items()}, strict=False)
        return model.to(_DTYPES[self.dtype]).eval()


@dataclass
class PredictorCheckpoint:
    models: dict  # DomainKind -> TypeModel
    manifest: dict

    def check_complete(self):
        missing = [k.value for k in DomainKind if k not in self.models]
        if missing:
            raise ConfigurationError(f"checkpoint is missing domain-type models: {missing}")
        for kind, m in self.models.items():
            if not (np.isfinite(m.log_mean) and np.isfinite(m.log_std) and m.log_std > 0):
                raise ConfigurationError(f"non-finite normalization statistics for {kind.value}")


def canonical_mask(grid: GridPair, kind: DomainKind) -> np.ndarray:
    """Nodes where some basis function of a ``kind`` domain can be nonzero (canonical pose)."""
    mask = None
    for d in enumerate_local_domains(grid):
        if d.kind is not kind:
            continue
        m = (partition_of_unity(grid, d).values > 0) & ~d.extract(grid.boundary_mask)
        m = canonicalize(m, d)[0]
        mask = m if mask is None else mask & m
    return mask.astype(np.float64)


def coordinate_channels(shape) -> np.ndarray:
    rows, cols = shape
    Y, X = np.meshgrid(np.linspace(0.0, 1.0, rows), np.linspace(0.0, 1.0, cols), indexing="ij")
    return np.stack([X, Y])


def features(log_kappa_patches: np.ndarray, mean: float, std: float) -> np.ndarray:
    """Stack normalized log-kappa with x/y coordinate channels: ``(B, 3, rows, cols)``."""
    lk = (np.asarray(log_kappa_patches) - mean) / std
    coords = coordinate_channels(lk.shape[-2:])
    return np.concatenate([lk[:, None], np.broadcast_to(coords, (lk.shape[0], 2, *lk.shape[-2:]))], axis=1)


def collect_patches(grid: GridPair, kappas, bases_per_field, kinds=tuple(DomainKind)):
    """Canonicalized ``(log_kappa, targets)`` arrays per domain kind."""
    kinds = [DomainKind(k) for k in kinds]
    domains = enumerate_local_domains(grid)
    out = {k: ([], []) for k in kinds}
    for kappa, bases in zip(kappas, bases_per_field):
        kappa = np.asarray(getattr(kappa, "values", kappa))
        log_kappa = np.log(kappa)
        for d, b in zip(domains, bases):
            if d.kind not in out:
                continue
            out[d.kind][0].append(canonicalize(d.extract(log_kappa), d)[0])
            out[d.kind][1].append(canonicalize(b.vectors, d)[0])
    return {k: (np.array(x), np.array(y)) for k, (x, y) in out.items() if x}


def _loss_fn(opts: TrainOptions):
    def fn(pred, target_flat, Q_target, rng):
        B, nb = pred.shape[:2]
        P = pred.reshape(B, nb, -1).transpose(1, 2)
        if opts.loss == "rbfl2":
            return losses.rbfl2(target_flat, P)
        value = losses.sal(Q_target, P)
        if opts.loss == "sal-pr":
            c = torch.as_tensor(rng.standard_normal((B, nb, opts.n_vectors)), dtype=P.dtype)
            value = value + opts.lam * losses.projection_penalty(Q_target, P, target_flat @ c)
        return value

    return fn


def train_type_model(
    log_kappa: np.ndarray,
    targets: np.ndarray,
    config: FfnoConfig,
    opts: TrainOptions,
    mask: np.ndarray | None = None,
    kind: DomainKind = DomainKind.FULL,
) -> TypeModel:
    """Fit one F-FNO on canonical patches with AdamW and per-step cosine decay."""
    if len(log_kappa) == 0:
        raise ConfigurationError(f"no training patches for {kind.value} domains")
    if targets.shape[1] != config.n_basis:
        raise ShapeError(f"targets carry {targets.shape[1]} basis functions, config expects {config.n_basis}")
    shape = log_kappa.shape[-2:]
    config.check_patch(shape)
    configure_threads()
    dtype = _DTYPES[opts.dtype]
    kind_id = KIND_IDS[kind]
    rng = stream_rng(opts.seed, STREAM_TRAIN, kind_id)
    torch.manual_seed(int(rng.integers(2**62)))

    mean, std = float(log_kappa.mean()), float(log_kappa.std())
    std = std if std > 0 else 1.0
    X = torch.as_tensor(features(log_kappa, mean, std), dtype=dtype)
    n, nb = targets.shape[:2]
    T_flat64 = targets.reshape(n, nb, -1).transpose(0, 2, 1)
    Q_target = torch.as_tensor(np.linalg.qr(T_flat64)[0], dtype=dtype)
    T_flat = torch.as_tensor(np.ascontiguousarray(T_flat64), dtype=dtype)

    model = FFNO(config, output_mask=mask).to(dtype)
    optim = torch.optim.AdamW(
        model.parameters(), lr=opts.learning_rate, betas=tuple(opts.betas), weight_decay=opts.weight_decay
    )
    steps_per_epoch = -(-n // opts.batch_size)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(optim, T_max=opts.epochs * steps_per_epoch)
    loss_fn = _loss_fn(opts)
    curve = []
    last_good = copy.deepcopy(model.state_dict())
    model.train()
    for epoch in range(opts.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, opts.batch_size):
            idx = torch.as_tensor(perm[start : start + opts.batch_size])
            per_sample = loss_fn(model(X[idx]), T_flat[idx], Q_target[idx], rng)
            loss = per_sample.mean()
            if not torch.isfinite(loss):
                err = DivergenceError(f"{kind.value} training diverged at epoch {epoch}")
                err.last_good = _to_type_model(last_good, config, mean, std, shape, mask, opts, curve)
                raise err
            optim.zero_grad()
            loss.backward()
            optim.step()
            sched.step()
            total += float(per_sample.detach().sum())
        curve.append(total / n)
        last_good = copy.deepcopy(model.state_dict())
        logger.debug("%s epoch %d loss %.6g", kind.value, epoch, curve[-1])
    return _to_type_model(model.state_dict(), config, mean, std, shape, mask, opts, curve)


def _to_type_model(state, config, mean, std, shape, mask, opts, curve):
    arrays = {
        k: v.detach().cpu().to(torch.float64).numpy().copy() for k, v in state.items() if k != "output_mask"
    }
    return TypeModel(
        config=config,
        state=arrays,
        log_mean=mean,
        log_std=std,
        patch_shape=tuple(int(s) for s in shape),
        mask=None if mask is None else np.asarray(mask, dtype=np.float64),
        dtype=opts.dtype,
        loss_curve=list(curve),
    )


def train(
    grid: GridPair,
    kappas,
    bases_per_field,
    opts: TrainOptions = TrainOptions(),
    configs: dict | None = None,
    kinds=tuple(DomainKind),
) -> PredictorCheckpoint:
    """Train one predictor per domain kind on canonicalized patches."""
    configs = {**DESK_CONFIGS, **{DomainKind(k): v for k, v in (configs or {}).items()}}
    data = collect_patches(grid, kappas, bases_per_field, kinds)
    models = {}
    for kind in (DomainKind(k) for k in kinds):
        if kind not in data:
            raise ConfigurationError(f"no training patches for {kind.value} domains")
        log_kappa, targets = data[kind]
        nb = targets.shape[1]
        cfg = configs[kind]
        if cfg.n_basis != nb:
            cfg = FfnoConfig(cfg.n_layers, cfg.hidden, cfg.modes, nb, cfg.in_channels)
        fitted = cfg.fitted_to(log_kappa.shape[-2:])
        if fitted != cfg:
            logger.warning("%s patch %s too small for modes %s; using %s", kind.value, log_kappa.shape[-2:], cfg.modes, fitted.modes)
            cfg = fitted
        models[kind] = train_type_model(log_kappa, targets, cfg, opts, canonical_mask(grid, kind), kind)
    manifest = {
        "n_coarse": grid.n_coarse,
        "n_fine": grid.n_fine,
        "seed": opts.seed,
        "epochs": opts.epochs,
        "batch_size": opts.batch_size,
        "learning_rate": opts.learning_rate,
        "weight_decay": opts.weight_decay,
        "betas": list(opts.betas),
        "loss": opts.loss,
        "lam": opts.lam,
        "n_vectors": opts.n_vectors,
        "dtype": opts.dtype,
        "n_train_fields": len(kappas),
    }
    return PredictorCheckpoint(models, manifest)


def predict_basis(checkpoint: PredictorCheckpoint, kappa, grid: GridPair, fallback=None) -> list[BasisSet]:
    """Predicted basis sets for every local domain, in domain order.

    Domains whose kind has no model are delegated to ``fallback(domain)``,
    which must return a :class:`BasisSet`; without one the checkpoint must be
    complete.
    """
    if fallback is None:
        checkpoint.check_complete()
    kappa = np.asarray(getattr(kappa, "values", kappa), dtype=np.float64)
    log_kappa = np.log(kappa)
    domains = enumerate_local_domains(grid)
    out: list[BasisSet | None] = [None] * len(domains)
    for kind, tm in checkpoint.models.items():
        expected = canonical_patch_shape(grid, kind)
        if tuple(tm.patch_shape) != expected:
            raise ShapeError(
                f"{kind.value} model was trained on patch shape {tuple(tm.patch_shape)} "
                f"but this grid produces {expected}"
            )
        members = [d for d in domains if d.kind is kind]
        if not members:
            continue
        patches = np.array([canonicalize(d.extract(log_kappa), d)[0] for d in members])
        model = tm.build()
        with torch.no_grad():
            x = torch.as_tensor(features(patches, tm.log_mean, tm.log_std), dtype=_DTYPES[tm.dtype])
            pred = model(x).to(torch.float64).numpy()
        for d, p in zip(members, pred):
            vectors = np.ascontiguousarray(decanonicalize(p, d.orientation))
            vectors[:, d.extract(grid.boundary_mask)] = 0.0
            out[d.index] = BasisSet(d.index, vectors)
    for d in domains:
        if out[d.index] is None:
            if fallback is None:
                raise ConfigurationError(f"no model for {d.kind.value} domain {d.index}")
            out[d.index] = fallback(d)
    return out
