"""Periodic graph surfaces: discrete derivatives, area element, normals, curvatures.

A film profile is a b-periodic height function sampled on a uniform grid of
``n`` points per axis over (0, b)^m, m in {1, 2}.  All derivatives are taken
with one first-derivative operator ``D`` (spectral or centered differences);
higher derivatives are compositions of ``D``.  ``D`` is antisymmetric for both
backends, which is what makes the discrete integration-by-parts identities used
throughout the package exact.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

BACKENDS = ("spectral", "fd")


def _is_power_of_two(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


class Differ:
    """First-derivative operator on the periodic grid, plus its Fourier symbol."""

    def __init__(self, n: int, m: int, b: float, backend: str = "spectral"):
        if backend not in BACKENDS:
            raise InvalidInputError(f"unknown derivative backend {backend!r}")
        self.n, self.m, self.b, self.backend = n, m, float(b), backend
        self.dx = self.b / n
        # integer mode numbers and physical wavenumbers along one axis
        self.modes = np.fft.fftfreq(n, d=1.0 / n)
        k = 2.0 * np.pi * self.modes / self.b
        if backend == "spectral":
            sym = 1j * k
            sym[n // 2] = 0.0
        else:
            sym = 1j * np.sin(k * self.dx) / self.dx
            sym[n // 2] = 0.0
        self.k = k
        self.symbol_1d = sym

    # -- symbols -----------------------------------------------------------
    def symbol(self, axis: int) -> np.ndarray:
        """Symbol of d/dx_axis broadcast over the full fftn grid."""
        shape = [1] * self.m
        shape[axis] = self.n
        return self.symbol_1d.reshape(shape)

    @functools.cached_property
    def symbol_sq(self) -> np.ndarray:
        """|symbol|^2 summed over axes, i.e. the symbol of -div grad."""
        out = np.zeros((self.n,) * self.m)
        for ax in range(self.m):
            out = out + np.abs(self.symbol(ax)) ** 2
        return out

    @functools.cached_property
    def wavenumber_sq(self) -> np.ndarray:
        """Exact |k|^2 of the continuous Laplacian on every fftn mode."""
        out = np.zeros((self.n,) * self.m)
        for ax in range(self.m):
            shape = [1] * self.m
            shape[ax] = self.n
            out = out + self.k.reshape(shape) ** 2
        return out

    @functools.cached_property
    def kernel_mask(self) -> np.ndarray:
        """Modes annihilated by D: constants and Nyquist combinations."""
        return self.symbol_sq == 0.0

    # -- operators -----------------------------------------------------------
    def d(self, f: np.ndarray, axis: int) -> np.ndarray:
        if self.backend == "fd":
            return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * self.dx)
        fh = np.fft.rfft(f, axis=axis)
        sym = self.symbol_1d[: self.n // 2 + 1].copy()
        shape = [1] * f.ndim
        shape[axis] = sym.size
        return np.fft.irfft(fh * sym.reshape(shape), n=self.n, axis=axis)

    def grad(self, f: np.ndarray) -> np.ndarray:
        return np.stack([self.d(f, ax) for ax in range(self.m)])

    def div(self, vec: np.ndarray) -> np.ndarray:
        out = self.d(vec[0], 0)
        for ax in range(1, self.m):
            out = out + self.d(vec[ax], ax)
        return out

    def hessian(self, f: np.ndarray) -> np.ndarray:
        g = self.grad(f)
        return np.stack([self.grad(g[i]) for i in range(self.m)])

    def project(self, f: np.ndarray) -> np.ndarray:
        """Remove the components of ``f`` lying in the kernel of D."""
        fh = np.fft.fftn(f)
        fh[self.kernel_mask] = 0.0
        return np.real(np.fft.ifftn(fh))

    def fourier_multiply(self, f: np.ndarray, mult: np.ndarray) -> np.ndarray:
        return np.real(np.fft.ifftn(np.fft.fftn(f) * mult))


@functools.lru_cache(maxsize=64)
def get_differ(n: int, m: int, b: float, backend: str = "spectral") -> Differ:
    return Differ(n, m, b, backend)


@dataclass(frozen=True)
class Profile:
    """Samples of a positive b-periodic height function on a uniform grid.

    ``values`` has shape (n,) for m=1 and (n, n) for m=2, with axis i the
    x_{i+1} direction.  Node j sits at x = j*b/n.
    """

    values: np.ndarray
    b: float
    backend: str = "spectral"
    m: int = field(init=False)
    n: int = field(init=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim not in (1, 2):
            raise InvalidInputError("profile values must be a 1-D or 2-D array")
        if v.ndim == 2 and v.shape[0] != v.shape[1]:
            raise InvalidInputError("m=2 profiles must be sampled on a square grid")
        if not _is_power_of_two(v.shape[0]):
            raise InvalidInputError(f"grid size must be a power of two, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("profile contains non-finite values")
        if np.any(v <= 0.0):
            raise InvalidInputError("profile values must be strictly positive")
        if not (np.isfinite(self.b) and self.b > 0):
            raise InvalidInputError("period b must be positive")
        if self.backend not in BACKENDS:
            raise InvalidInputError(f"unknown derivative backend {self.backend!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "m", v.ndim)
        object.__setattr__(self, "n", v.shape[0])

    @property
    def differ(self) -> Differ:
        return get_differ(self.n, self.m, self.b, self.backend)

    @property
    def spacing(self) -> float:
        return self.b / self.n

    @property
    def cell(self) -> float:
        """Volume of one grid cell, (b/n)^m."""
        return self.spacing**self.m

    def nodes(self) -> np.ndarray | tuple[np.ndarray, ...]:
        x = np.arange(self.n) * self.spacing
        if self.m == 1:
            return x
        return tuple(np.meshgrid(x, x, indexing="ij"))

    def with_values(self, values: np.ndarray) -> "Profile":
        return Profile(values, self.b, self.backend)

    def shifted(self, shift: int | tuple[int, ...]) -> "Profile":
        axes = tuple(range(self.m))
        return self.with_values(np.roll(self.values, shift, axis=axes if self.m > 1 else 0))

    @classmethod
    def from_function(cls, func, n: int, b: float, m: int = 1, backend: str = "spectral"):
        x = np.arange(n) * (b / n)
        if m == 1:
            return cls(func(x), b, backend)
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        return cls(func(X1, X2), b, backend)

    @classmethod
    def flat(cls, d: float, n: int, b: float, m: int = 1, backend: str = "spectral"):
        return cls(np.full((n,) * m, float(d)), b, backend)


@dataclass(frozen=True)
class SurfaceMetrics:
    gradient: np.ndarray  # (m, *grid)
    area_element: np.ndarray
    normal: np.ndarray  # (m+1, *grid), outward (upward) unit normal
    mean_curvature: np.ndarray
    shape_norm_sq: np.ndarray
    principal_curvatures: np.ndarray  # (m, *grid)
    hessian: np.ndarray  # (m, m, *grid)


def _check_field(profile: Profile, f, name="field") -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != profile.values.shape:
        raise InvalidInputError(f"{name} has shape {f.shape}, expected {profile.values.shape}")
    return f


def mean_curvature(profile: Profile, grad: np.ndarray | None = None) -> np.ndarray:
    """H = -div(Dh / J), the conservative form; its grid mean is zero exactly."""
    D = profile.differ
    g = D.grad(profile.values) if grad is None else grad
    J = np.sqrt(1.0 + np.sum(g**2, axis=0))
    return -D.div(g / J)


def metrics(profile: Profile) -> SurfaceMetrics:
    D = profile.differ
    g = D.grad(profile.values)
    J = np.sqrt(1.0 + np.sum(g**2, axis=0))
    normal = np.concatenate([-g / J, (1.0 / J)[None]], axis=0)
    H = -D.div(g / J)
    hess = np.stack([D.grad(g[i]) for i in range(profile.m)])
    if profile.m == 1:
        kappa = H[None].copy()
        B2 = H**2
    else:
        # generalized eigenproblem det(II - k I) = 0, I = Id + Dh (x) Dh, II = -D^2 h / J
        I11 = 1.0 + g[0] ** 2
        I22 = 1.0 + g[1] ** 2
        I12 = g[0] * g[1]
        L11, L22, L12 = -hess[0, 0] / J, -hess[1, 1] / J, -0.5 * (hess[0, 1] + hess[1, 0]) / J
        detI = I11 * I22 - I12**2
        tr = (I11 * L22 + I22 * L11 - 2.0 * I12 * L12) / detI
        gauss = (L11 * L22 - L12**2) / detI
        disc = np.sqrt(np.maximum(tr**2 - 4.0 * gauss, 0.0))
        kappa = np.stack([0.5 * (tr + disc), 0.5 * (tr - disc)])
        B2 = np.sum(kappa**2, axis=0)
    return SurfaceMetrics(
        gradient=g,
        area_element=J,
        normal=normal,
        mean_curvature=H,
        shape_norm_sq=B2,
        principal_curvatures=kappa,
        hessian=hess,
    )


def surface_integral(profile: Profile, field) -> float:
    """Integral over the graph of a per-node field: cell * sum(f * J)."""
    f = _check_field(profile, field)
    g = profile.differ.grad(profile.values)
    J = np.sqrt(1.0 + np.sum(g**2, axis=0))
    return float(np.sum(f * J) * profile.cell)


def volume(profile: Profile) -> float:
    return float(np.mean(profile.values) * profile.b**profile.m)


# -- discrete norms ---------------------------------------------------------


def lp_norm(profile_or_cell, f: np.ndarray, p: float = 2.0) -> float:
    """Grid L^p norm; ``f`` may carry leading component axes (summed pointwise)."""
    cell = profile_or_cell.cell if isinstance(profile_or_cell, Profile) else float(profile_or_cell)
    f = np.asarray(f, dtype=float)
    if np.isinf(p):
        return float(np.max(np.abs(f))) if f.size else 0.0
    return float((np.sum(np.abs(f) ** p) * cell) ** (1.0 / p))


def max_slope(profile: Profile) -> float:
    g = profile.differ.grad(profile.values)
    return float(np.max(np.sqrt(np.sum(g**2, axis=0))))


def w2p_norm(profile: Profile, f: np.ndarray, p: float = 2.0) -> float:
    """Discrete W^{2,p} norm (||f||_p^p + ||Df||_p^p + ||D^2 f||_p^p)^(1/p)."""
    D = profile.differ
    g = D.grad(f)
    hess = np.stack([D.grad(g[i]) for i in range(profile.m)])
    pointwise = [np.abs(f), np.sqrt(np.sum(g**2, axis=0)), np.sqrt(np.sum(hess**2, axis=(0, 1)))]
    return float(sum(lp_norm(profile, q, p) ** p for q in pointwise) ** (1.0 / p))


# -- CSV serialization ------------------------------------------------------


def write_profile_csv(profile: Profile, path) -> None:
    """Two header lines (keys, then m,b,n values), then one row of node values per x1 index."""
    with open(path, "w") as fh:
        fh.write("m,b,n\n")
        fh.write(f"{profile.m},{profile.b!r},{profile.n}\n")
        rows = profile.values.reshape(profile.n, -1)
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_profile_csv(path, backend: str = "spectral") -> Profile:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if len(lines) < 3 or lines[0].replace(" ", "") != "m,b,n":
        raise InvalidInputError(f"{path}: missing 'm,b,n' profile header")
    m_s, b_s, n_s = lines[1].split(",")
    m, b, n = int(m_s), float(b_s), int(n_s)
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:]])
    if m == 1:
        data = data.reshape(-1)
    if data.shape != (n,) * m:
        raise InvalidInputError(f"{path}: expected {(n,) * m} values, found {data.shape}")
    return Profile(data, b, backend)
