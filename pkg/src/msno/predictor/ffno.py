"""Factorized Fourier neural operator on 2-D node patches (channels-last internally)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .._validation import ConfigurationError, DivergenceError, ShapeError


@dataclass(frozen=True)
class FfnoConfig:
    n_layers: int = 4
    hidden: int = 32
    modes: tuple[int, int] = (12, 12)  # (rows / y, cols / x)
    n_basis: int = 8
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(int(m) for m in self.modes))
        if self.n_layers < 1 or self.hidden < 1 or self.n_basis < 1:
            raise ConfigurationError(f"invalid F-FNO config {self}")
        if len(self.modes) != 2 or min(self.modes) < 1:
            raise ConfigurationError(f"modes must be two positive integers, got {self.modes}")

    def check_patch(self, shape):
        rows, cols = shape
        if self.modes[0] > rows // 2 + 1 or self.modes[1] > cols // 2 + 1:
            raise ConfigurationError(
                f"modes {self.modes} exceed the rfft length of a {rows}x{cols} patch"
            )

    def fitted_to(self, shape) -> "FfnoConfig":
        """Same config with modes clipped to what a ``rows x cols`` patch can hold."""
        modes = tuple(min(m, n // 2 + 1) for m, n in zip(self.modes, shape))
        return self if modes == self.modes else replace(self, modes=modes)

    def to_dict(self):
        d = asdict(self)
        d["modes"] = list(self.modes)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{**d, "modes": tuple(d["modes"])})


def spectral_parameter_count(config: FfnoConfig) -> int:
    """Complex spectral weights: ``L * H^2 * (M_y + M_x)``."""
    return config.n_layers * config.hidden**2 * sum(config.modes)


def truncated_dft(n: int, m: int):
    """Real DFT matrices for the lowest ``m`` modes of a length-``n`` signal.

    Returns ``(cos, sin, inv_cos, inv_sin)`` with ``X_re = cos @ x``,
    ``X_im = -sin @ x`` and the matching ``irfft`` (imaginary parts of the DC
    and Nyquist modes drop out, as in ``numpy.fft.irfft``).
    """
    k = np.arange(m)[:, None]
    t = np.arange(n)[None, :]
    angle = 2.0 * np.pi * k * t / n
    weight = np.full(m, 2.0)
    weight[0] = 1.0
    if n % 2 == 0 and m - 1 == n // 2:
        weight[-1] = 1.0
    cos, sin = np.cos(angle), np.sin(angle)
    inv_cos = (weight[:, None] * cos / n).T
    inv_sin = (weight[:, None] * sin / n).T
    return tuple(torch.as_tensor(a, dtype=torch.float64) for a in (cos, sin, inv_cos, inv_sin))


class FactorizedSpectralConv(nn.Module):
    """``K(z) = sum_d irfft_d(R_d . rfft_d(z))`` keeping the lowest ``M_d`` modes per axis.

    The truncated transforms are applied as small dense matrices, which is
    exact and cheaper than a full FFT when ``M_d`` is well below the length.
    """

    def __init__(self, hidden: int, modes: tuple[int, int]):
        super().__init__()
        self.hidden = hidden
        self.modes = modes
        scale = 1.0 / (hidden * hidden)
        self.weights = nn.ParameterList(
            [nn.Parameter(scale * torch.rand(hidden, hidden, m, 2, dtype=torch.float64)) for m in modes]
        )
        self._dft = {}

    def _matrices(self, n, m, like):
        key = (n, m, like.dtype)
        if key not in self._dft:
            self._dft[key] = tuple(a.to(like.dtype) for a in truncated_dft(n, m))
        return self._dft[key]

    def forward(self, z):
        # z: (B, rows, cols, H)
        out = None
        for axis, (m, w) in enumerate(zip(self.modes, self.weights), start=1):
            n = z.shape[axis]
            cos, sin, icos, isin = self._matrices(n, m, z)
            wr, wi = w[..., 0].to(z.dtype), w[..., 1].to(z.dtype)
            if axis == 1:
                re = torch.einsum("mn,bnch->bmch", cos, z)
                im = -torch.einsum("mn,bnch->bmch", sin, z)
                o_re = torch.einsum("bmch,hgm->bmcg", re, wr) - torch.einsum("bmch,hgm->bmcg", im, wi)
                o_im = torch.einsum("bmch,hgm->bmcg", re, wi) + torch.einsum("bmch,hgm->bmcg", im, wr)
                y = torch.einsum("nm,bmch->bnch", icos, o_re) - torch.einsum("nm,bmch->bnch", isin, o_im)
            else:
                re = torch.einsum("mn,brnh->brmh", cos, z)
                im = -torch.einsum("mn,brnh->brmh", sin, z)
                o_re = torch.einsum("brmh,hgm->brmg", re, wr) - torch.einsum("brmh,hgm->brmg", im, wi)
                o_im = torch.einsum("brmh,hgm->brmg", re, wi) + torch.einsum("brmh,hgm->brmg", im, wr)
                y = torch.einsum("nm,brmh->brnh", icos, o_re) - torch.einsum("nm,brmh->brnh", isin, o_im)
            out = y if out is None else out + y
        return out


class FfnoLayer(nn.Module):
    def __init__(self, hidden: int, modes):
        super().__init__()
        self.kernel = FactorizedSpectralConv(hidden, modes)
        self.w1 = nn.Linear(hidden, hidden, dtype=torch.float64)
        self.w2 = nn.Linear(hidden, hidden, dtype=torch.float64)

    def forward(self, z):
        return z + F.gelu(self.w2(F.gelu(self.w1(self.kernel(z)))))


class FFNO(nn.Module):
    """Lift, ``L`` residual factorized Fourier layers, pointwise projection.

    Input ``(B, C_in, rows, cols)``; output ``(B, N_bf, rows, cols)``. An
    optional fixed ``output_mask`` zeroes nodes where every target vanishes.
    """

    def __init__(self, config: FfnoConfig, output_mask=None):
        super().__init__()
        self.config = config
        self.lift = nn.Linear(config.in_channels, config.hidden, dtype=torch.float64)
        self.layers = nn.ModuleList(FfnoLayer(config.hidden, config.modes) for _ in range(config.n_layers))
        self.project = nn.Linear(config.hidden, config.n_basis, dtype=torch.float64)
        mask = None if output_mask is None else torch.as_tensor(np.asarray(output_mask), dtype=torch.float64)
        self.register_buffer("output_mask", mask)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(f"expected input (B, {self.config.in_channels}, rows, cols), got {tuple(x.shape)}")
        if self.output_mask is not None and tuple(x.shape[-2:]) != tuple(self.output_mask.shape):
            raise ShapeError(
                f"input patch {tuple(x.shape[-2:])} does not match model patch {tuple(self.output_mask.shape)}"
            )
        z = self.lift(x.permute(0, 2, 3, 1))
        for i, layer in enumerate(self.layers):
            z = layer(z)
            if not torch.isfinite(z).all():
                raise DivergenceError(f"non-finite activations after F-FNO layer {i}")
        out = self.project(z).permute(0, 3, 1, 2)
        if self.output_mask is not None:
            out = out * self.output_mask
        return out

    def spectral_complex_count(self) -> int:
        return sum(w.numel() // 2 for layer in self.layers for w in layer.kernel.weights)
