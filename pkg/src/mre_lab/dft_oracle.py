"""Brute-force direct-DFT reference implementations of the spectral operators.

Everything here is written against explicit exponential matrices and direct
convolution sums, independent of any FFT algorithm, so the fast operators in
:mod:`mre_lab.spectral` can be checked against them on small grids (n = 8 is
the standard desk size; cost is O(n^{2d})).
"""

from __future__ import annotations

import numpy as np

from .spectral import (
    TWO_PI,
    Grid,
    SpectralScalar,
    SpectralVector,
)


def _dft_matrix(n: int, sign: float) -> np.ndarray:
    i = np.arange(n)
    return np.exp(sign * TWO_PI * 1j * np.outer(i, i) / n)


def dft_forward(grid: Grid, samples: np.ndarray) -> np.ndarray:
    """Direct forward DFT with the package normalization (coeff 0 = mean)."""
    e = _dft_matrix(grid.n, -1.0)
    out = np.asarray(samples, dtype=np.complex128)
    for axis in range(grid.d):
        out = np.tensordot(e, out, axes=([1], [axis]))
        out = np.moveaxis(out, 0, axis)
    return out / grid.n**grid.d


def dft_inverse(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    e = _dft_matrix(grid.n, +1.0)
    out = np.asarray(coeffs, dtype=np.complex128)
    for axis in range(grid.d):
        out = np.tensordot(e, out, axes=([1], [axis]))
        out = np.moveaxis(out, 0, axis)
    return out.real


def _mode_list(grid: Grid) -> np.ndarray:
    """All retained integer wavenumber vectors, FFT storage order flattened."""
    mesh = np.stack([m.ravel() for m in grid.k_mesh], axis=-1)
    return mesh.astype(int)


def oracle_derivative(grid: Grid, samples: np.ndarray, axis: int) -> np.ndarray:
    c = dft_forward(grid, samples)
    k = grid.wavenumbers.copy()
    k[grid.n // 2] = 0.0
    shape = [1] * grid.d
    shape[axis] = grid.n
    return dft_inverse(grid, TWO_PI * 1j * k.reshape(shape) * c)


def oracle_fractional_laplacian(grid: Grid, samples: np.ndarray, s: float) -> np.ndarray:
    c = dft_forward(grid, samples)
    k2 = grid.k_abs2
    symbol = np.zeros(grid.shape)
    nz = k2 > 0
    symbol[nz] = (TWO_PI**2 * k2[nz]) ** s
    if s == 0.0:
        symbol[~nz] = 1.0
    return dft_inverse(grid, symbol * c)


def oracle_leray(grid: Grid, samples: list[np.ndarray]) -> list[np.ndarray]:
    cs = [dft_forward(grid, s) for s in samples]
    k2 = np.where(grid.k_abs2 > 0, grid.k_abs2, 1.0)
    kdotv = sum(grid.k_mesh[a] * cs[a] for a in range(grid.d))
    return [dft_inverse(grid, cs[a] - grid.k_mesh[a] * kdotv / k2) for a in range(grid.d)]


def oracle_product(grid: Grid, f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Exact convolution of the dealias-truncated factors, restricted to the ball.

    The modes are treated as genuine integers (no wrap-around), which is the
    exact product of the two trigonometric polynomials.
    """
    fc = (dft_forward(grid, f) * grid.dealias_mask).ravel()
    gc = (dft_forward(grid, g) * grid.dealias_mask).ravel()
    modes = _mode_list(grid)
    lookup = {tuple(m): i for i, m in enumerate(modes)}
    out = np.zeros(len(modes), dtype=np.complex128)
    nz_f = np.nonzero(fc)[0]
    nz_g = np.nonzero(gc)[0]
    for i in nz_f:
        for j in nz_g:
            k = tuple(modes[i] + modes[j])
            idx = lookup.get(k)
            if idx is not None:
                out[idx] += fc[i] * gc[j]
    out = out.reshape(grid.shape) * grid.dealias_mask
    return dft_inverse(grid, out)


def oracle_tensor_divergence(grid: Grid, samples: list[np.ndarray]) -> list[np.ndarray]:
    out = []
    for i in range(grid.d):
        acc = np.zeros(grid.shape)
        for j in range(grid.d):
            acc = acc + oracle_derivative(grid, oracle_product(grid, samples[i], samples[j]), j)
        out.append(acc)
    return out


def compare(fast: np.ndarray, reference: np.ndarray) -> float:
    return float(np.abs(np.asarray(fast) - np.asarray(reference)).max())


def run_oracle_suite(op: str = "all", n: int = 8, d: int = 2, seed: int = 7) -> dict[str, float]:
    """Compare every requested fast operator against its oracle; returns max errors."""
    from . import spectral as sp

    grid = Grid(d, n)
    rng = np.random.default_rng(seed)
    f_samp = rng.standard_normal(grid.shape)
    g_samp = rng.standard_normal(grid.shape)
    v_samp = [rng.standard_normal(grid.shape) for _ in range(d)]

    errors: dict[str, float] = {}

    def want(name: str) -> bool:
        return op in ("all", name)

    if want("transform"):
        f = sp.transform(grid, f_samp)
        errors["transform_forward"] = compare(f.coeffs, dft_forward(grid, f_samp))
        errors["transform_roundtrip"] = compare(f.samples(), f_samp)
    if want("derivative"):
        fb = sp.dealias_truncate(sp.transform(grid, f_samp))
        for axis in range(d):
            errors[f"derivative_axis{axis}"] = compare(
                sp.derivative(fb, axis).samples(),
                oracle_derivative(grid, fb.samples(), axis),
            )
    if want("fractional_laplacian"):
        fb = sp.dealias_truncate(sp.transform(grid, f_samp))
        for s in (-1.0, 0.5, 1.0):
            errors[f"fractional_laplacian_s{s}"] = compare(
                sp.fractional_laplacian(fb, s).samples(),
                oracle_fractional_laplacian(grid, fb.samples(), s),
            )
    if want("leray"):
        v = sp.vector_from_samples(grid, v_samp)
        fast = sp.leray_project(v)
        ref = oracle_leray(grid, v_samp)
        errors["leray"] = max(
            compare(fast.components[a].samples(), ref[a]) for a in range(d)
        )
    if want("product"):
        f = sp.transform(grid, f_samp)
        g = sp.transform(grid, g_samp)
        errors["product"] = compare(
            sp.dealiased_product(f, g).samples(), oracle_product(grid, f_samp, g_samp)
        )
    if want("tensor_divergence"):
        v = sp.leray_project(sp.vector_from_samples(grid, v_samp))
        vs = [c.samples() for c in v.components]
        fast = sp.tensor_divergence(sp.dealias_truncate_vector(v))
        ref = oracle_tensor_divergence(grid, [sp.dealias_truncate(c).samples() for c in v.components])
        errors["tensor_divergence"] = max(
            compare(fast.components[a].samples(), ref[a]) for a in range(d)
        )
    if not errors:
        raise ValueError(f"unknown oracle op {op!r}")
    return errors
