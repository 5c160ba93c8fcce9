"""Periodic grids, Fourier coefficients and the norms built on them.

Convention
----------
For a real field ``v`` sampled on ``n**d`` points of the cube ``[0, ell]^d``
the stored coefficients are

    v_j = (1 / n**d) * sum_x v(x) exp(-2*pi*i j.x / ell),

i.e. the forward transform carries the ``1/N`` factor and the inverse
transform is a plain sum, ``v(x) = sum_j v_j exp(2*pi*i j.x / ell)``.
With this choice a constant field maps to its value in mode 0,
``cos(2*pi*x/ell)`` has ``v_{+1} = v_{-1} = 1/2``, and Parseval reads

    sum_j |v_j|^2 * ell**d = integral |v|^2 dx.

All norms below are coefficient norms (no ``ell**d`` factor), so that the
field with ``v_0 = 1`` has unit norm in every space.

Coefficient arrays are kept in numpy FFT order along each axis: integer
mode ``j`` lives at index ``j mod n`` and the retained range is
``[-n/2, n/2)``.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import GridError, OverflowGuardError

__all__ = [
    "GridSpec",
    "SpectralField",
    "transform",
    "inverse_transform",
    "sobolev_norm",
    "gevrey_norm",
    "project_cutoff",
    "cutoff_mask",
    "save_field",
    "load_field",
    "format_field",
    "parse_field",
]

EXP_GUARD = 700.0


def _is_pow2(n):
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on ``[0, ell]^d``."""

    d: int = 1
    n_per_axis: int = 64
    ell: float = 2 * np.pi

    def __post_init__(self):
        if self.d not in (1, 2):
            raise GridError(f"dimension must be 1 or 2, got {self.d}")
        n = self.n_per_axis
        if int(n) != n or not _is_pow2(int(n)) or n < 8:
            raise GridError(f"n_per_axis must be a power of two >= 8, got {n}")
        if not (np.isfinite(self.ell) and self.ell > 0):
            raise GridError(f"ell must be positive, got {self.ell}")
        object.__setattr__(self, "n_per_axis", int(n))
        object.__setattr__(self, "ell", float(self.ell))

    @property
    def shape(self):
        return (self.n_per_axis,) * self.d

    @property
    def size(self):
        return self.n_per_axis**self.d

    @property
    def wavenumber_scale(self):
        return 2 * np.pi / self.ell

    @cached_property
    def modes(self):
        """Integer mode indices per axis, broadcastable to ``shape``."""
        n = self.n_per_axis
        j = np.fft.fftfreq(n, 1.0 / n).astype(np.int64)
        if self.d == 1:
            return (j,)
        return (j[:, None], j[None, :])

    @cached_property
    def mode_norm2(self):
        """``|j|^2`` for every stored mode."""
        out = np.zeros(self.shape)
        for j in self.modes:
            out = out + j.astype(float) ** 2
        return out

    @cached_property
    def eigenvalues(self):
        """Spectrum of ``I - Laplacian``: ``1 + (2 pi / ell)^2 |j|^2``."""
        lam = 1.0 + self.wavenumber_scale**2 * self.mode_norm2
        lam.setflags(write=False)
        return lam

    @property
    def lambda_max(self):
        return float(self.eigenvalues.max())

    def points(self):
        """Physical grid coordinates, one array per axis (``ij`` indexing)."""
        x = np.arange(self.n_per_axis) * (self.ell / self.n_per_axis)
        if self.d == 1:
            return (x,)
        return tuple(np.meshgrid(x, x, indexing="ij"))


def _freeze(a):
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients of a real periodic field (see module docstring)."""

    grid: GridSpec
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs)
        if c.shape != self.grid.shape:
            raise GridError(f"coefficient shape {c.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "coeffs", _freeze(c))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    @classmethod
    def from_modes(cls, grid, modes):
        """Build a field from ``{mode: value}``; conjugate partners are filled in."""
        c = np.zeros(grid.shape, dtype=complex)
        n = grid.n_per_axis
        for j, value in modes.items():
            j = (j,) if np.isscalar(j) else tuple(j)
            idx = tuple(k % n for k in j)
            neg = tuple((-k) % n for k in j)
            c[idx] = value
            c[neg] = np.conj(value)
        return cls(grid, c)

    def to_physical(self):
        return inverse_transform(self)

    def hermitian_defect(self):
        """Max of ``|c(-j) - conj(c(j))|`` over stored modes."""
        c = self.coeffs
        flipped = c
        for axis in range(c.ndim):
            flipped = np.roll(np.flip(flipped, axis=axis), 1, axis=axis)
        return float(np.max(np.abs(flipped - np.conj(c))))

    def _check(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        if other.grid != self.grid:
            raise GridError("fields live on different grids")
        return other

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return SpectralField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs)


def transform(values, grid):
    """Physical samples -> normalized Fourier coefficients."""
    v = np.asarray(values)
    if v.shape != grid.shape:
        if v.ndim == grid.d and all(_is_pow2(s) for s in v.shape):
            raise GridError(f"array of shape {v.shape} does not match grid {grid.shape}")
        raise GridError(f"array of shape {v.shape} is not a power-of-two grid of shape {grid.shape}")
    if np.iscomplexobj(v):
        if np.any(np.abs(v.imag) > 0):
            raise GridError("physical values must be real")
        v = v.real
    if not np.all(np.isfinite(v)):
        raise GridError("physical values must be finite")
    return SpectralField(grid, np.fft.fftn(v) / grid.size)


def inverse_transform(v):
    """Normalized Fourier coefficients -> real physical samples."""
    return np.fft.ifftn(v.coeffs * v.grid.size).real


def _weighted_sum(v, weight):
    terms = np.abs(v.coeffs) ** 2 * weight
    # fixed order: flatten then pairwise sum
    return float(np.sum(terms.ravel()))


def sobolev_norm(v, p=0):
    """``(sum_j |v_j|^2 lambda_j^p)^(1/2)``; the L^2 coefficient norm for ``p=0``."""
    if p < 0:
        raise ValueError("p must be nonnegative")
    if not np.all(np.isfinite(v.coeffs)):
        raise GridError("field has non-finite coefficients")
    lam = v.grid.eigenvalues
    return np.sqrt(_weighted_sum(v, lam**p))


def gevrey_weight(grid, sigma, p):
    """Per-mode weight ``lambda^p exp(2 sigma sqrt(lambda))``."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    lam = grid.eigenvalues
    expo = sigma * np.sqrt(lam)
    if np.any(expo > EXP_GUARD):
        k = np.unravel_index(int(np.argmax(expo)), expo.shape)
        mode = tuple(int(m[idx]) for m, idx in zip(_mode_axes(grid), k))
        raise OverflowGuardError(
            f"gevrey weight overflows at mode {mode}: sigma*sqrt(lambda) = {expo[k]:.1f} > {EXP_GUARD}"
        )
    return lam**p * np.exp(2 * expo)


def _mode_axes(grid):
    n = grid.n_per_axis
    j = np.fft.fftfreq(n, 1.0 / n).astype(np.int64)
    return (j,) * grid.d


def gevrey_norm(v, sigma, p=0):
    """Gevrey norm with weight ``lambda^p exp(2 sigma sqrt(lambda))``.

    Reduces to :func:`sobolev_norm` at ``sigma = 0``.
    """
    if sigma == 0:
        return sobolev_norm(v, p)
    if not np.all(np.isfinite(v.coeffs)):
        raise GridError("field has non-finite coefficients")
    return np.sqrt(_weighted_sum(v, gevrey_weight(v.grid, sigma, p)))


def cutoff_mask(grid, C_eps):
    """Boolean mask of retained modes ``lambda_j <= C_eps``."""
    return grid.eigenvalues <= C_eps


def project_cutoff(v, C_eps):
    """Zero every mode whose eigenvalue exceeds ``C_eps``."""
    if C_eps < 1:
        raise ValueError(f"cut-off level must be >= 1, got {C_eps}")
    return SpectralField(v.grid, np.where(cutoff_mask(v.grid, C_eps), v.coeffs, 0.0))


# -- serialization ----------------------------------------------------------
#
# Text layout (one token group per line):
#
#   backward_rd-field 1
#   d <int>
#   ell <float>
#   n_per_axis <int>
#   <re> <im>        # n_per_axis**d lines
#
# Coefficient lines run over modes in row-major order, each axis ascending
# from -n/2 to n/2-1. Floats use 17 significant digits so a reload is exact.

_MAGIC = "backward_rd-field 1"


def _fmt(x):
    return format(float(x), ".17g")


def format_field(v):
    g = v.grid
    lines = [_MAGIC, f"d {g.d}", f"ell {_fmt(g.ell)}", f"n_per_axis {g.n_per_axis}"]
    c = np.fft.fftshift(v.coeffs)
    for z in c.ravel(order="C"):
        lines.append(f"{_fmt(z.real)} {_fmt(z.imag)}")
    return "\n".join(lines) + "\n"


def parse_field(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != _MAGIC:
        raise GridError("not a field file (bad header)")
    header = {}
    for ln in lines[1:4]:
        key, value = ln.split()
        header[key] = value
    grid = GridSpec(d=int(header["d"]), n_per_axis=int(header["n_per_axis"]), ell=float(header["ell"]))
    body = lines[4:]
    if len(body) != grid.size:
        raise GridError(f"expected {grid.size} coefficient lines, found {len(body)}")
    data = np.array([[float(t) for t in ln.split()] for ln in body])
    c = (data[:, 0] + 1j * data[:, 1]).reshape(grid.shape)
    return SpectralField(grid, np.fft.ifftshift(c))


def save_field(v, path):
    with open(path, "w") as fh:
        fh.write(format_field(v))


def load_field(path):
    with open(path) as fh:
        return parse_field(fh.read())
