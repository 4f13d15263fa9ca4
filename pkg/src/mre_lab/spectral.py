"""Fourier representation of periodic fields on the unit torus, and the exact
spectral operators the relaxation equations need.

Conventions, fixed here once for the whole package:

* Domain T^d = [0, 1)^d with d in {2, 3}; real-space samples live on the
  uniform grid x = i/n, row-major axis order (axis 0 is x1).
* A real field f is stored as complex coefficients ``coeffs`` in FFT layout,
  with f(x) = sum_k coeffs[k] * exp(2*pi*i k.x).  Forward normalization makes
  coeffs[0] = mean(f).
* Retained integer wavenumbers per axis are [-n/2 + 1, n/2]; the Nyquist mode
  is labelled +n/2.  Use :attr:`Grid.wavenumbers` / :attr:`Grid.k_mesh`, never
  rebuild index arrays elsewhere.
* Derivatives multiply by 2*pi*i*k and are zeroed on the Nyquist mode (an odd
  symbol has no Hermitian-consistent value there; dealiasing removes that mode
  from every product anyway).
* (-Delta)^s acts as (2*pi*|k|)^(2s) on k != 0; negative and positive powers
  annihilate the mean mode, s = 0 is the identity.
* Products follow the 2/3 rule: both factors and the result are truncated to
  the ball max_i |k_i| <= dealias_fraction * n/2, which makes the product
  exact (to round-off) whenever the true product fits inside the ball.

Fields are immutable values; every operator is a pure function returning a
new field, so concurrent evaluation on distinct fields is safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Grid:
    """Torus discretization: dimension, points per axis, dealias cutoff."""

    d: int
    n: int
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.d}")
        if self.n < 8 or (self.n & (self.n - 1)) != 0:
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")
        if not 0.0 < self.dealias_fraction <= 1.0:
            raise ValueError("dealias_fraction must lie in (0, 1]")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Integer wavenumbers per axis in FFT storage order, Nyquist at +n/2."""
        k = np.fft.fftfreq(self.n, d=1.0 / self.n)
        k[self.n // 2] = self.n // 2
        k.flags.writeable = False
        return k

    @cached_property
    def k_mesh(self) -> tuple[np.ndarray, ...]:
        mesh = np.meshgrid(*([self.wavenumbers] * self.d), indexing="ij")
        for m in mesh:
            m.flags.writeable = False
        return tuple(mesh)

    @cached_property
    def k_abs2(self) -> np.ndarray:
        k2 = sum(m**2 for m in self.k_mesh)
        k2.flags.writeable = False
        return k2

    @cached_property
    def deriv_mesh(self) -> tuple[np.ndarray, ...]:
        """Wavenumber meshes used for derivatives: Nyquist row zeroed."""
        k = self.wavenumbers.copy()
        k[self.n // 2] = 0.0
        mesh = np.meshgrid(*([k] * self.d), indexing="ij")
        for m in mesh:
            m.flags.writeable = False
        return tuple(mesh)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        cut = self.dealias_fraction * self.n / 2.0 + 1e-9
        mask = np.ones(self.shape, dtype=bool)
        for m in self.k_mesh:
            mask &= np.abs(m) <= cut
        mask.flags.writeable = False
        return mask

    @cached_property
    def sample_points(self) -> tuple[np.ndarray, ...]:
        x = np.arange(self.n) / self.n
        mesh = np.meshgrid(*([x] * self.d), indexing="ij")
        for m in mesh:
            m.flags.writeable = False
        return tuple(mesh)


def hermitian_symmetrize(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    """Project coefficients onto the Hermitian-symmetric (real-field) part."""
    idx = (grid.n - np.arange(grid.n)) % grid.n
    reflected = np.conj(coeffs[np.ix_(*([idx] * grid.d))])
    return 0.5 * (coeffs + reflected)


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SpectralScalar:
    """Real periodic scalar field stored as complex Fourier coefficients."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != self.grid.shape:
            raise ValueError(
                f"coefficient shape {self.coeffs.shape} does not match grid {self.grid.shape}"
            )
        c = np.ascontiguousarray(self.coeffs, dtype=np.complex128)
        object.__setattr__(self, "coeffs", _freeze(c))

    def samples(self) -> np.ndarray:
        """Real-space samples on the n^d grid (row-major, x = i/n)."""
        return np.fft.ifftn(self.coeffs, norm="forward").real

    @property
    def mean(self) -> float:
        return float(self.coeffs[(0,) * self.grid.d].real)


@dataclass(frozen=True)
class SpectralVector:
    """d-component vector field; components share one grid.

    The ``divergence_free`` / ``zero_mean`` flags are certificates set by the
    operations that guarantee them (Leray projection, the velocity map).
    """

    components: tuple[SpectralScalar, ...]
    divergence_free: bool = False
    zero_mean: bool = False

    def __post_init__(self):
        grids = {c.grid for c in self.components}
        if len(grids) != 1:
            raise ValueError("vector components must share a single grid")
        g = self.components[0].grid
        if len(self.components) != g.d:
            raise ValueError(f"expected {g.d} components, got {len(self.components)}")
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def grid(self) -> Grid:
        return self.components[0].grid

    def samples(self) -> list[np.ndarray]:
        return [c.samples() for c in self.components]

    def coeffs_stack(self) -> np.ndarray:
        return np.stack([c.coeffs for c in self.components])

    def div_residual(self) -> float:
        """max_k |2 pi i k . v_k| relative to max_k |v_k|."""
        g = self.grid
        div = sum(
            TWO_PI * 1j * g.deriv_mesh[a] * self.components[a].coeffs for a in range(g.d)
        )
        vmax = max(np.abs(c.coeffs).max() for c in self.components)
        if vmax == 0.0:
            return 0.0
        return float(np.abs(div).max() / vmax)

    def mean_vector(self) -> np.ndarray:
        return np.array([c.mean for c in self.components])


def transform(grid: Grid, samples: np.ndarray) -> SpectralScalar:
    """Forward transform of real-space samples; coeffs[0] = mean(samples)."""
    if samples.shape != grid.shape:
        raise ValueError(f"sample shape {samples.shape} does not match grid {grid.shape}")
    c = np.fft.fftn(np.asarray(samples, dtype=np.float64), norm="forward")
    return SpectralScalar(grid, hermitian_symmetrize(grid, c))


def scalar_from_coeffs(grid: Grid, coeffs: np.ndarray) -> SpectralScalar:
    return SpectralScalar(grid, hermitian_symmetrize(grid, coeffs))


def vector_from_samples(grid: Grid, components: list[np.ndarray], **flags) -> SpectralVector:
    return SpectralVector(tuple(transform(grid, s) for s in components), **flags)


def vector_from_coeffs(grid: Grid, coeffs: np.ndarray, **flags) -> SpectralVector:
    return SpectralVector(
        tuple(scalar_from_coeffs(grid, coeffs[a]) for a in range(grid.d)), **flags
    )


def derivative(f: SpectralScalar, axis: int) -> SpectralScalar:
    """Spectral partial derivative along one axis."""
    g = f.grid
    return SpectralScalar(g, TWO_PI * 1j * g.deriv_mesh[axis] * f.coeffs)


def gradient(f: SpectralScalar) -> SpectralVector:
    return SpectralVector(tuple(derivative(f, a) for a in range(f.grid.d)))


def divergence(v: SpectralVector) -> SpectralScalar:
    g = v.grid
    c = sum(TWO_PI * 1j * g.deriv_mesh[a] * v.components[a].coeffs for a in range(g.d))
    return SpectralScalar(g, c)


def curl(v: SpectralVector):
    """Curl: scalar d1 v2 - d2 v1 in 2-d, the usual vector in 3-d."""
    g = v.grid
    ik = [TWO_PI * 1j * m for m in g.deriv_mesh]
    c = [comp.coeffs for comp in v.components]
    if g.d == 2:
        return SpectralScalar(g, ik[0] * c[1] - ik[1] * c[0])
    return SpectralVector(
        (
            SpectralScalar(g, ik[1] * c[2] - ik[2] * c[1]),
            SpectralScalar(g, ik[2] * c[0] - ik[0] * c[2]),
            SpectralScalar(g, ik[0] * c[1] - ik[1] * c[0]),
        )
    )


def fractional_laplacian(f: SpectralScalar, s: float) -> SpectralScalar:
    """(-Delta)^s: multiply by (2 pi |k|)^(2s); mean survives only at s = 0."""
    g = f.grid
    if s == 0.0:
        return f
    k2 = g.k_abs2
    symbol = np.zeros(g.shape)
    nz = k2 > 0
    symbol[nz] = (TWO_PI**2 * k2[nz]) ** s
    return SpectralScalar(g, symbol * f.coeffs)


def fractional_laplacian_vector(v: SpectralVector, s: float) -> SpectralVector:
    return SpectralVector(
        tuple(fractional_laplacian(c, s) for c in v.components),
        divergence_free=v.divergence_free,
        zero_mean=v.zero_mean or s != 0.0,
    )


def leray_project(v: SpectralVector) -> SpectralVector:
    """L^2-orthogonal projection onto divergence-free fields; mean untouched."""
    g = v.grid
    k2 = np.where(g.k_abs2 > 0, g.k_abs2, 1.0)
    stack = v.coeffs_stack()
    kdotv = sum(g.k_mesh[a] * stack[a] for a in range(g.d))
    out = [stack[a] - g.k_mesh[a] * kdotv / k2 for a in range(g.d)]
    return SpectralVector(
        tuple(SpectralScalar(g, c) for c in out),
        divergence_free=True,
        zero_mean=v.zero_mean,
    )


def dealias_truncate(f: SpectralScalar) -> SpectralScalar:
    return SpectralScalar(f.grid, f.coeffs * f.grid.dealias_mask)


def dealias_truncate_vector(v: SpectralVector) -> SpectralVector:
    return SpectralVector(
        tuple(dealias_truncate(c) for c in v.components),
        divergence_free=v.divergence_free,
        zero_mean=v.zero_mean,
    )


def dealiased_product(f: SpectralScalar, g: SpectralScalar) -> SpectralScalar:
    """Pointwise product with 2/3-rule truncation before and after."""
    if f.grid != g.grid:
        raise ValueError("dealiased_product requires both fields on the same grid")
    gr = f.grid
    mask = gr.dealias_mask
    fs = np.fft.ifftn(f.coeffs * mask, norm="forward").real
    gs = np.fft.ifftn(g.coeffs * mask, norm="forward").real
    prod = np.fft.fftn(fs * gs, norm="forward") * mask
    return SpectralScalar(gr, hermitian_symmetrize(gr, prod))


def tensor_divergence(B: SpectralVector) -> SpectralVector:
    """div(B (x) B), componentwise sum_j d_j (B_i B_j) with dealiased products."""
    g = B.grid
    out = []
    for i in range(g.d):
        acc = np.zeros(g.shape, dtype=np.complex128)
        for j in range(g.d):
            acc = acc + derivative(dealiased_product(B.components[i], B.components[j]), j).coeffs
        out.append(SpectralScalar(g, acc))
    return SpectralVector(tuple(out))


def l2_inner(f: SpectralScalar, g: SpectralScalar) -> float:
    """Torus integral of f*g via Parseval (unit volume)."""
    return float(np.sum(f.coeffs * np.conj(g.coeffs)).real)


def l2_inner_vector(v: SpectralVector, w: SpectralVector) -> float:
    return sum(l2_inner(a, b) for a, b in zip(v.components, w.components))


def eval_at_points(f: SpectralScalar, points: np.ndarray) -> np.ndarray:
    """Evaluate the trigonometric polynomial at arbitrary points in R^d.

    Exact for band-limited fields; periodicity of the exponentials makes
    wrapping of the coordinates unnecessary.  points has shape (N, d).
    """
    g = f.grid
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    phases = [np.exp(TWO_PI * 1j * np.outer(pts[:, a], g.wavenumbers)) for a in range(g.d)]
    if g.d == 2:
        vals = np.einsum("pa,ab,pb->p", phases[0], f.coeffs, phases[1])
    else:
        vals = np.einsum("pa,abc,pb,pc->p", phases[0], f.coeffs, phases[1], phases[2])
    return vals.real


def eval_vector_at_points(v: SpectralVector, points: np.ndarray) -> np.ndarray:
    """Shape (N, d) evaluation of each component at the given points."""
    return np.stack([eval_at_points(c, points) for c in v.components], axis=-1)
