"""Regularized free energy of a film profile, its gradient and optimality residuals.

F(h) = int_Omega W(E(u_h)) + int_Gamma psi(nu) + (eps/p) int_Gamma |H|^p

is evaluated on the grid as

    elastic + cell * sum psi(-Dh, 1) + (eps/p) * cell * sum |H|^p J,

and ``energy_gradient`` is the exact gradient of that discrete expression with
respect to the nodal heights, divided by the cell volume (an L^2(Q) gradient).
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass

import numpy as np

from .anisotropy import Anisotropy, surface_density_terms
from .elasticity import ElasticField, LameParams, solve_equilibrium
from .errors import CompatibilityError, InvalidInputError, StateError
from .geometry import Profile, max_slope, metrics, volume
from .surface_pde import MetricOperator

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FlowParams:
    epsilon: float
    p: float = 2.0
    tau: float | None = None
    Lambda0: float | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidInputError("epsilon must be positive")
        if not self.p >= 2:
            raise InvalidInputError("curvature exponent p must be >= 2")
        if self.tau is not None and not self.tau > 0:
            raise InvalidInputError("tau must be positive")
        if self.Lambda0 is not None and not self.Lambda0 > 0:
            raise InvalidInputError("Lambda0 must be positive")

    @classmethod
    def default_for(cls, m: int, epsilon: float, **kw) -> "FlowParams":
        """p = 2 for curves (m=1), p = 3 for surfaces (m=2), unless given."""
        kw.setdefault("p", 2.0 if m == 1 else 3.0)
        return cls(epsilon=epsilon, **kw)

    def resolved_tau(self, b: float) -> float:
        return self.tau if self.tau is not None else b**2 / 1024.0

    def resolved_Lambda0(self, h0: Profile) -> float:
        if self.Lambda0 is not None:
            return self.Lambda0
        return 2.0 * (1.0 + max_slope(h0))


@dataclass(frozen=True)
class EnergyBreakdown:
    elastic: float
    surface: float
    curvature: float

    @property
    def total(self) -> float:
        return self.elastic + self.surface + self.curvature


# -- elastic contributions ----------------------------------------------------


@dataclass
class ElasticEval:
    energy: float
    gradient: np.ndarray  # L^2 density of d(energy)/dh
    trace: np.ndarray  # W(E(u)) on the surface
    field: ElasticField | None = None


class FilmElasticity:
    """Re-solves the plane-strain equilibrium whenever the profile changes."""

    def __init__(self, params: LameParams, ny: int = 16):
        self.params = params
        self.ny = ny
        self._key = None
        self._last: ElasticEval | None = None
        self.solves = 0

    def evaluate(self, profile: Profile) -> ElasticEval:
        key = (profile.b, profile.values.tobytes())
        if key != self._key:
            fld = solve_equilibrium(profile, self.params, self.ny)
            self.solves += 1
            self._last = ElasticEval(fld.elastic_energy, fld.shape_gradient / profile.cell, fld.trace_W, fld)
            self._key = key
        return self._last


class SurfacePotential:
    """Plug-in replacement for the elastic term, e.g. for m=2 runs.

    ``func(profile)`` returns (energy, l2_gradient); the gradient doubles as the
    surface trace entering the criticality residual.
    """

    def __init__(self, func, name: str = "custom"):
        self.func = func
        self.name = name

    def evaluate(self, profile: Profile) -> ElasticEval:
        energy, grad = self.func(profile)
        grad = np.broadcast_to(np.asarray(grad, dtype=float), profile.values.shape).copy()
        return ElasticEval(float(energy), grad, grad)


def uniform_potential(density: float) -> SurfacePotential:
    """Energy density * volume; a constant chemical potential."""
    return SurfacePotential(
        lambda prof: (density * volume(prof), np.full(prof.values.shape, density)), name="uniform"
    )


POTENTIALS = {"none": None, "uniform": uniform_potential}


def _elastic(profile: Profile, elastic) -> ElasticEval | None:
    if elastic is None:
        return None
    if isinstance(elastic, ElasticField):
        if not elastic.solved:
            raise StateError("elastic field has not been solved")
        if not elastic.matches(profile):
            raise StateError("stale elastic field: it was solved on a different profile")
        return ElasticEval(
            elastic.elastic_energy, elastic.shape_gradient / profile.cell, elastic.trace_W, elastic
        )
    if isinstance(elastic, ElasticEval):
        return elastic
    return elastic.evaluate(profile)


def _signed_power(H: np.ndarray, q: float) -> np.ndarray:
    """|H|^(q-1) H with the value 0 at H = 0."""
    return np.sign(H) * np.abs(H) ** (q - 1.0)


# -- energy and gradient --------------------------------------------------------


def free_energy(profile: Profile, params: FlowParams, psi: Anisotropy, elastic=None) -> EnergyBreakdown:
    D = profile.differ
    g = D.grad(profile.values)
    J = np.sqrt(1.0 + np.sum(g**2, axis=0))
    H = -D.div(g / J)
    val, _, _ = surface_density_terms(profile, psi, g)
    surface = float(np.sum(val) * profile.cell)
    curvature = float(params.epsilon / params.p * np.sum(np.abs(H) ** params.p * J) * profile.cell)
    el = _elastic(profile, elastic)
    return EnergyBreakdown(el.energy if el else 0.0, surface, curvature)


def energy_gradient(profile: Profile, params: FlowParams, psi: Anisotropy, elastic=None, parts: bool = False):
    """L^2(Q) gradient of h -> F(h, u_h) on the grid.

    With ``parts=True`` a dict of the term groups is returned: ``elastic``,
    ``surface`` (= H^psi), ``curvature_area`` ((eps/p)|H|^p times the area
    variation) and ``curvature_shape`` (eps |H|^(p-2) H times the variation of H).
    """
    D = profile.differ
    eps, p = params.epsilon, params.p
    g = D.grad(profile.values)
    J = np.sqrt(1.0 + np.sum(g**2, axis=0))
    H = -D.div(g / J)
    _, dpsi, _ = surface_density_terms(profile, psi, g)
    surface = D.div(np.moveaxis(dpsi[..., : profile.m], -1, 0))
    curv_area = -D.div(eps / p * np.abs(H) ** p * g / J)
    c = eps * _signed_power(H, p) * J
    dc = D.grad(c)
    q = dc / J - g * np.sum(g * dc, axis=0) / J**3
    curv_shape = -D.div(q)
    el = _elastic(profile, elastic)
    elastic_part = el.gradient if el else np.zeros_like(H)
    if parts:
        return {
            "elastic": elastic_part,
            "surface": surface,
            "curvature_area": curv_area,
            "curvature_shape": curv_shape,
        }
    return elastic_part + surface + curv_area + curv_shape


def euler_lagrange_form(profile: Profile, phi, params: FlowParams, psi: Anisotropy, elastic=None) -> float:
    """First variation of F in the graph direction ``phi``, term by term.

    Elastic trace term, D psi(-Dh,1).(-D phi, 0), the area term of the curvature
    energy and the five second-order terms multiplying eps |H|^(p-2) H.
    """
    D = profile.differ
    eps, p = params.epsilon, params.p
    phi = np.asarray(phi, dtype=float)
    h = profile.values
    g = D.grad(h)
    J = np.sqrt(1.0 + np.sum(g**2, axis=0))
    H = -D.div(g / J)
    w = _signed_power(H, p)
    hess_h = np.stack([D.grad(g[i]) for i in range(profile.m)])
    dphi = D.grad(phi)
    hess_phi = np.stack([D.grad(dphi[i]) for i in range(profile.m)])
    _, dpsi, _ = surface_density_terms(profile, psi, g)
    lap_phi = np.trace(hess_phi)
    lap_h = np.trace(hess_h)
    g_dphi = np.sum(g * dphi, axis=0)
    bracket = (
        lap_phi
        - np.einsum("ij...,i...,j...->...", hess_phi, g, g) / J**2
        - lap_h * g_dphi / J**2
        - 2.0 * np.einsum("ij...,i...,j...->...", hess_h, g, dphi) / J**2
        + 3.0 * np.einsum("ij...,i...,j...->...", hess_h, g, g) * g_dphi / J**4
    )
    el = _elastic(profile, elastic)
    total = np.sum(np.moveaxis(dpsi[..., : profile.m], -1, 0) * (-dphi), axis=0)
    total = total + eps / p * np.abs(H) ** p * g_dphi / J - eps * w * bracket
    if el is not None:
        total = total + el.trace * phi
    return float(np.sum(total) * profile.cell)


# -- test bank and residuals ----------------------------------------------------------

BANK_MAX_MODE = 16


@functools.lru_cache(maxsize=16)
def _fourier_bank(n: int, m: int, b: float, kmax: int = BANK_MAX_MODE):
    """H^1-normalized cos/sin modes up to wavenumber kmax per axis (below Nyquist)."""
    K = min(kmax, n // 2 - 1)
    x = np.arange(n) * b / n
    grids = np.meshgrid(*([x] * m), indexing="ij")
    waves = []
    if m == 1:
        wavevecs = [(k,) for k in range(1, K + 1)]
    else:
        wavevecs = [(k1, k2) for k1 in range(0, K + 1) for k2 in range(-K, K + 1) if k1 > 0 or k2 > 0]
    for kv in wavevecs:
        arg = sum(2.0 * np.pi * ki * xi / b for ki, xi in zip(kv, grids))
        ksq = sum((2.0 * np.pi * ki / b) ** 2 for ki in kv)
        norm = np.sqrt((1.0 + ksq) * b**m / 2.0)
        waves.append(np.cos(arg) / norm)
        waves.append(np.sin(arg) / norm)
    bank = np.array(waves).reshape(len(waves), -1)
    bank.setflags(write=False)
    return bank


def fourier_bank(profile: Profile, kmax: int = BANK_MAX_MODE) -> np.ndarray:
    """Test functions as an array of shape (count, *grid)."""
    bank = _fourier_bank(profile.n, profile.m, profile.b, kmax)
    return bank.reshape((-1,) + profile.values.shape)


def _mode_amplitudes(profile: Profile, density: np.ndarray, kmax: int = BANK_MAX_MODE) -> np.ndarray:
    """|cell * sum(density * exp(-i k.x))| / ||cos(k.x)||_{H^1} for bank wave vectors k.

    This is the sup of the pairing over every phase shift cos(k.x + theta) of a
    bank mode, so it does not change when the grid is translated.
    """
    D = profile.differ
    K = min(kmax, profile.n // 2 - 1)
    F = np.abs(np.fft.fftn(density)) * profile.cell
    modes = np.abs(D.modes)
    mask = np.ones(F.shape, dtype=bool)
    for ax in range(profile.m):
        shape = [1] * profile.m
        shape[ax] = profile.n
        mask &= (modes <= K).reshape(shape)
    mask &= D.wavenumber_sq > 0
    norms = np.sqrt((1.0 + D.wavenumber_sq[mask]) * profile.b**profile.m / 2.0)
    return F[mask] / norms


def bank_residual(profile: Profile, density: np.ndarray) -> float:
    """sup over the phase-shifted test bank of |cell * sum(density * phi)|."""
    return float(np.max(_mode_amplitudes(profile, np.asarray(density, dtype=float))))


def dual_h1_norm(profile: Profile, density: np.ndarray) -> float:
    """Norm of phi -> cell*sum(density*phi) over mean-zero phi with ||phi||_{H^1} <= 1.

    Kernel modes of D (constants, Nyquist) are excluded.  Dominates ``bank_residual``.
    """
    D = profile.differ
    fh = np.fft.fftn(density) / density.size
    mask = ~D.kernel_mask
    return float(np.sqrt(profile.b**profile.m * np.sum(np.abs(fh[mask]) ** 2 / (1.0 + D.wavenumber_sq[mask]))))


def chemical_potential_parts(profile: Profile, params: FlowParams, psi: Anisotropy, elastic=None):
    """Pointwise pieces of the intrinsic first variation (normal-speed form)."""
    mt = metrics(profile)
    H, J, B2 = mt.mean_curvature, mt.area_element, mt.shape_norm_sq
    p = params.p
    w = _signed_power(H, p)
    _, dpsi, _ = surface_density_terms(profile, psi, mt.gradient)
    Hpsi = profile.differ.div(np.moveaxis(dpsi[..., : profile.m], -1, 0))
    el = _elastic(profile, elastic)
    W = el.trace if el is not None else np.zeros_like(H)
    return dict(H=H, J=J, B2=B2, w=w, Hpsi=Hpsi, W=W)


def criticality_residual(profile: Profile, params: FlowParams, psi: Anisotropy, elastic=None) -> float:
    """sup over the bank of |critical-pair form|, test functions made surface-mean free.

    The bank modes keep their H^1 normalization before the mean shift.

    eps int D_Gamma w . D_Gamma phi + eps int ((1/p)|H|^p H - w |B|^2) phi
    + int (H^psi + W) phi, all over the graph, with w = |H|^(p-2) H.
    """
    c = chemical_potential_parts(profile, params, psi, elastic)
    eps, p = params.epsilon, params.p
    op = MetricOperator(profile)
    flux = op.flux(c["w"])  # A Dw, so that sum A Dw . Dphi * cell = int D_Gamma w . D_Gamma phi
    local = eps * (np.abs(c["H"]) ** p * c["H"] / p - c["w"] * c["B2"]) + c["Hpsi"] + c["W"]
    # int flux . D phi = -int div(flux) phi  (D antisymmetric)
    density = -eps * profile.differ.div(flux) + local * c["J"]
    # pairing with phi - (surface mean of phi) equals pairing with the J-corrected density
    density = density - np.sum(density) / np.sum(c["J"]) * c["J"]
    return bank_residual(profile, density)


def weak_residual(h_prev: Profile, h: Profile, params: FlowParams, psi: Anisotropy, elastic=None, op=None) -> float:
    """sup over the bank of the incremental Euler-Lagrange form (gradient minus v_h / tau)."""
    v0, v1 = volume(h_prev), volume(h)
    if abs(v1 - v0) > 1e-10 * abs(v0):
        raise CompatibilityError(f"volume mismatch: {v1!r} vs {v0!r}")
    tau = params.resolved_tau(h.b)
    op = MetricOperator(h_prev, rtol=1e-12) if op is None else op
    delta = h.values - h_prev.values
    delta = delta - np.mean(delta)  # volumes agree; drop rounding
    v = op.solve(delta / op.J)
    G = energy_gradient(h, params, psi, elastic) - v / tau
    return bank_residual(h, G)


def curvature_hessian_sq(profile: Profile, params: FlowParams) -> float:
    """int |D^2(|H|^(p-2) H)|^2 dx."""
    D = profile.differ
    H = metrics(profile).mean_curvature
    w = _signed_power(H, params.p)
    hess = D.hessian(w)
    return float(np.sum(hess**2) * profile.cell)
