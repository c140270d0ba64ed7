"""Positively one-homogeneous surface energy densities psi and their derivatives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidInputError
from .geometry import Profile

FAMILIES = ("isotropic", "elliptic", "cubic")


@dataclass(frozen=True)
class Anisotropy:
    """psi: R^dim -> [0, inf), one of three analytic families.

    * ``isotropic``: psi(xi) = |xi|
    * ``elliptic``: psi(xi) = sqrt(xi^T M xi), M symmetric positive definite
    * ``cubic``: psi(xi) = |xi| (1 + gamma sum_i xi_i^4 / |xi|^4); loses convexity
      once gamma is large enough (gamma > 1/3 already breaks it at the poles)

    All three are smooth away from the origin, so none of their Wulff shapes has
    a flat facet with vertical normal. Faceted experiments need a density with a
    kink in the vertical direction, which is outside these families.
    """

    family: str
    dim: int
    matrix: tuple | None = None
    gamma: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidInputError(f"unknown anisotropy family {self.family!r}; choose from {FAMILIES}")
        if self.dim not in (2, 3):
            raise InvalidInputError("anisotropy acts on 2-vectors (m=1) or 3-vectors (m=2)")
        if self.family == "elliptic":
            M = np.asarray(self.matrix, dtype=float)
            if M.shape != (self.dim, self.dim) or not np.allclose(M, M.T):
                raise InvalidInputError("elliptic anisotropy needs a symmetric dim x dim matrix")
            if np.linalg.eigvalsh(M).min() <= 0:
                raise InvalidInputError("elliptic anisotropy matrix must be positive definite")
        if self.family == "cubic" and self.gamma < 0:
            raise InvalidInputError("cubic anisotropy requires gamma >= 0")

    # -- constructors --------------------------------------------------------
    @classmethod
    def isotropic(cls, dim: int = 2) -> "Anisotropy":
        return cls("isotropic", dim)

    @classmethod
    def elliptic(cls, M) -> "Anisotropy":
        M = np.asarray(M, dtype=float)
        return cls("elliptic", M.shape[0], matrix=tuple(map(tuple, M)))

    @classmethod
    def cubic(cls, gamma: float, dim: int = 2) -> "Anisotropy":
        return cls("cubic", dim, gamma=float(gamma))

    @classmethod
    def from_spec(cls, family: str, params, dim: int) -> "Anisotropy":
        """Build from a config-style (family, parameter list) pair."""
        params = list(params)
        if family == "isotropic":
            if params:
                raise InvalidInputError("isotropic anisotropy takes no parameters")
            return cls.isotropic(dim)
        if family == "elliptic":
            if len(params) == dim:
                return cls.elliptic(np.diag(params))
            if len(params) == dim * dim:
                return cls.elliptic(np.reshape(params, (dim, dim)))
            raise InvalidInputError(f"elliptic anisotropy needs {dim} diagonal or {dim * dim} matrix entries")
        if family == "cubic":
            if len(params) != 1:
                raise InvalidInputError("cubic anisotropy takes exactly one parameter (gamma)")
            return cls.cubic(params[0], dim)
        raise InvalidInputError(f"unknown anisotropy family {family!r}; choose from {FAMILIES}")

    # -- evaluation ------------------------------------------------------------
    @property
    def M(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=float)

    def bound_constant(self) -> float:
        """c with |xi|/c <= psi(xi) <= c|xi|."""
        if self.family == "isotropic":
            return 1.0
        if self.family == "elliptic":
            w = np.linalg.eigvalsh(self.M)
            return float(max(np.sqrt(w.max()), 1.0 / np.sqrt(w.min())))
        return 1.0 + self.gamma

    def eval(self, xi):
        """Return (psi, D psi, D^2 psi) at directions ``xi`` of shape (..., dim)."""
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.dim:
            raise InvalidInputError(f"expected {self.dim}-vectors, got trailing size {xi.shape[-1]}")
        r = np.linalg.norm(xi, axis=-1)
        if np.any(r == 0.0):
            raise DomainError("psi is not differentiable at xi = 0")
        eye = np.eye(self.dim)
        rr = r[..., None]
        if self.family == "isotropic":
            e = xi / rr
            val = r
            grad = e
            hess = (eye - e[..., :, None] * e[..., None, :]) / rr[..., None]
        elif self.family == "elliptic":
            M = self.M
            Mx = xi @ M
            val = np.sqrt(np.sum(xi * Mx, axis=-1))
            vv = val[..., None]
            grad = Mx / vv
            hess = (M - Mx[..., :, None] * Mx[..., None, :] / vv[..., None] ** 2) / vv[..., None]
        else:
            g = self.gamma
            S = np.sum(xi**4, axis=-1)[..., None]
            xi3 = xi**3
            val = r + g * S[..., 0] / r**3
            grad = xi / rr + g * (4.0 * xi3 / rr**3 - 3.0 * S * xi / rr**5)
            outer = xi[..., :, None] * xi[..., None, :]
            r_ = rr[..., None]
            S_ = S[..., None]
            hess = (eye - outer / r_**2) / r_ + g * (
                12.0 * (xi**2)[..., :, None] * eye / r_**3
                - 12.0 * (xi3[..., :, None] * xi[..., None, :] + xi[..., :, None] * xi3[..., None, :]) / r_**5
                - 3.0 * S_ * eye / r_**5
                + 15.0 * S_ * outer / r_**7
            )
        return val, grad, hess

    def __call__(self, xi):
        return self.eval(xi)[0]

    def psi11(self) -> float:
        """d^2 psi / d xi_1^2 at the vertical direction (0,...,0,1)."""
        e = np.zeros(self.dim)
        e[-1] = 1.0
        return float(self.eval(e)[2][0, 0])


def eval(psi: Anisotropy, xi):
    return psi.eval(xi)


def _sphere_samples(dim: int, samples: int) -> np.ndarray:
    if dim == 2:
        t = 2.0 * np.pi * np.arange(samples) / samples
        return np.stack([np.cos(t), np.sin(t)], axis=-1)
    # Fibonacci sphere
    i = np.arange(samples) + 0.5
    z = 1.0 - 2.0 * i / samples
    rad = np.sqrt(1.0 - z**2)
    phi = np.pi * (1.0 + 5**0.5) * i
    return np.stack([rad * np.cos(phi), rad * np.sin(phi), z], axis=-1)


def convexity_margin(psi: Anisotropy, samples: int = 4096) -> float:
    """min over sampled unit xi and unit w perpendicular to xi of D^2 psi(xi)[w, w]."""
    if samples < 1:
        raise InvalidInputError("samples must be >= 1")
    xi = _sphere_samples(psi.dim, samples)
    hess = psi.eval(xi)[2]
    if psi.dim == 2:
        w = np.stack([-xi[:, 1], xi[:, 0]], axis=-1)
        return float(np.min(np.einsum("ni,nij,nj->n", w, hess, w)))
    # orthonormal tangent frame, then the smaller eigenvalue of the projected 2x2 block
    helper = np.where(np.abs(xi[:, 2:3]) < 0.9, np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]))
    t1 = np.cross(xi, helper)
    t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
    t2 = np.cross(xi, t1)
    a = np.einsum("ni,nij,nj->n", t1, hess, t1)
    c = np.einsum("ni,nij,nj->n", t2, hess, t2)
    bb = np.einsum("ni,nij,nj->n", t1, hess, t2)
    lam_min = 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + bb**2)
    return float(np.min(lam_min))


def angle_density(psi: Anisotropy, theta):
    """g(theta) = psi(cos theta, sin theta) and its second derivative g''."""
    if psi.dim != 2:
        raise InvalidInputError("angle_density needs a two-dimensional anisotropy")
    theta = np.asarray(theta, dtype=float)
    e = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    t = np.stack([-np.sin(theta), np.cos(theta)], axis=-1)
    val, grad, hess = psi.eval(e)
    # g'' = D^2 psi[t, t] + D psi . (-e) = D^2 psi[t, t] - g   (Euler relation)
    g2 = np.einsum("...i,...ij,...j->...", t, hess, t) - np.sum(grad * e, axis=-1)
    return val, g2


def _lifted_normal_direction(profile: Profile, grad: np.ndarray) -> np.ndarray:
    """(-Dh, 1) at every node, components last."""
    ones = np.ones((1,) + profile.values.shape)
    return np.moveaxis(np.concatenate([-grad, ones], axis=0), 0, -1)


def surface_density_terms(profile: Profile, psi: Anisotropy, grad: np.ndarray | None = None):
    """psi(-Dh,1), its gradient and hessian at every node (components last)."""
    if psi.dim != profile.m + 1:
        raise InvalidInputError(f"anisotropy of dimension {psi.dim} does not match m={profile.m}")
    g = profile.differ.grad(profile.values) if grad is None else grad
    return psi.eval(_lifted_normal_direction(profile, g))


def anisotropic_curvature(profile: Profile, psi: Anisotropy) -> np.ndarray:
    """H^psi as the flat divergence of the horizontal part of D psi(-Dh, 1).

    For every periodic test function phi the discrete identity
    cell * sum(H^psi phi) = cell * sum(D psi(-Dh,1) . (-D phi, 0)) holds exactly.
    """
    _, grad, _ = surface_density_terms(profile, psi)
    horiz = np.moveaxis(grad[..., : profile.m], -1, 0)
    return profile.differ.div(horiz)
