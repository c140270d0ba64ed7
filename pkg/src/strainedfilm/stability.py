"""Stability of the flat strained film.

Closed-form pieces (Poisson modulus, the Grinfeld functions J and K, the
threshold thickness) plus a finite-element second variation at the flat state
and scripted evolution experiments around it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .anisotropy import Anisotropy
from .elasticity import LameParams, solve_equilibrium, v_phi_solve
from .energy import FilmElasticity, FlowParams
from .errors import DomainError, InvalidInputError
from .geometry import Profile, lp_norm, w2p_norm

NORMALIZATIONS = ("none", "l2", "h1")


def poisson_modulus(params: LameParams) -> float:
    return params.lam / (2.0 * (params.lam + params.mu))


def _check_nu(nu_p: float) -> None:
    if not 0.0 <= nu_p < 0.5:
        raise DomainError(f"Poisson modulus must lie in [0, 1/2), got {nu_p}")


def _J_array(y: np.ndarray, nu_p: float) -> np.ndarray:
    a = 3.0 - 4.0 * nu_p
    c = 4.0 * (1.0 - nu_p) ** 2
    out = np.empty_like(y)
    small = y <= 1.0
    ys = y[small]
    sh, ch = np.sinh(ys), np.cosh(ys)
    out[small] = (ys + a * sh * ch) / (c + ys**2 + a * sh**2)
    # divide numerator and denominator by e^{2y}/4 to avoid overflow
    yl = y[~small]
    q = np.exp(-2.0 * yl)
    num = 4.0 * yl * q + a * (1.0 - q * q)
    den = 4.0 * (c + yl**2) * q + a * (1.0 - q) ** 2
    out[~small] = num / den
    return out


def grinfeld_J(y, nu_p: float):
    """J(y) = (y + (3-4nu) sinh y cosh y) / (4(1-nu)^2 + y^2 + (3-4nu) sinh^2 y)."""
    _check_nu(nu_p)
    arr = np.asarray(y, dtype=float)
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise DomainError("J is defined for finite y >= 0")
    out = _J_array(np.atleast_1d(arr).ravel(), nu_p).reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


def _K_scalar(y: float, nu_p: float, chunk: int = 4096) -> float:
    if y == 0.0:
        return 0.0
    best = float(_J_array(np.array([y]), nu_p)[0])
    start = 2
    # J <= 1, so the n-th term is at most 1/n and cannot win once 1/n <= best
    while start <= 1.0 / best:
        stop = min(int(math.floor(1.0 / best)), start + chunk - 1)
        n = np.arange(start, stop + 1, dtype=float)
        vals = _J_array(n * y, nu_p) / n
        best = max(best, float(vals.max()))
        start = stop + 1
    return best


def grinfeld_K(y, nu_p: float):
    """K(y) = max over n >= 1 of J(n y)/n, with a certified cutoff."""
    _check_nu(nu_p)
    arr = np.asarray(y, dtype=float)
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise DomainError("K is defined for finite y >= 0")
    vals = np.array([_K_scalar(float(v), nu_p) for v in np.atleast_1d(arr).ravel()])
    vals = vals.reshape(arr.shape)
    return float(vals) if vals.ndim == 0 else vals


def threshold_rhs(b: float, params: LameParams, psi11: float) -> float:
    """(pi/4) (2mu+lam) psi11 / (e0^2 mu (mu+lam) b), the level K must reach."""
    if not psi11 > 0:
        raise DomainError("the flat-state threshold needs d^2 psi/d xi_1^2 at (0,1) to be positive")
    if not b > 0:
        raise InvalidInputError("period b must be positive")
    mu, lam, e0 = params.mu, params.lam, params.e0
    if e0 == 0.0:
        return math.inf
    return math.pi / 4.0 * (2 * mu + lam) * psi11 / (e0**2 * mu * (mu + lam) * b)


def infinite_branch_bound(params: LameParams, psi11: float) -> float:
    """Largest period b for which every thickness is stable."""
    mu, lam, e0 = params.mu, params.lam, params.e0
    if e0 == 0.0:
        return math.inf
    return math.pi / 4.0 * (2 * mu + lam) * psi11 / (e0**2 * mu * (mu + lam))


def d_loc(b: float, params: LameParams, psi11: float) -> float:
    """Critical thickness: +inf when b is at or below the infinite-branch bound, else K(2 pi d/b) = rhs."""
    rhs = threshold_rhs(b, params, psi11)
    if b <= infinite_branch_bound(params, psi11) or rhs >= 1.0:
        return math.inf
    nu = poisson_modulus(params)
    hi = 1.0
    while _K_scalar(hi, nu) < rhs:
        hi *= 2.0
    y = brentq(lambda s: _K_scalar(s, nu) - rhs, 0.0, hi, xtol=1e-15 * hi, rtol=4 * np.finfo(float).eps, maxiter=500)
    return b * y / (2.0 * math.pi)


# -- finite-element second variation at the flat state -------------------------------


@lru_cache(maxsize=32)
def _flat_field(d: float, b: float, params: LameParams, nx: int, ny: int):
    prof = Profile.flat(d, nx, b, 1)
    return prof, solve_equilibrium(prof, params, ny=ny)


def _psi11(psi) -> float:
    if isinstance(psi, Anisotropy):
        if psi.dim != 2:
            raise InvalidInputError("the flat second variation is implemented for m=1 (two-dimensional psi)")
        return psi.psi11()
    return float(psi)


def second_variation_flat(
    d,
    mode_k: int,
    b: float,
    params: LameParams,
    psi,
    nx: int = 256,
    ny: int = 64,
    normalization: str = "none",
) -> float:
    """Second variation of surface plus elastic energy at h = d along phi = cos(2 pi k x / b).

    ``normalization``: ``"none"`` uses phi itself, ``"l2"`` divides by ||phi||_2^2 and
    ``"h1"`` by ||phi||_2^2 + ||phi'||_2^2.  ``psi`` is an Anisotropy or the value psi11.
    """
    if isinstance(d, Profile):
        if d.m != 1 or np.ptp(d.values) != 0.0:
            raise InvalidInputError("second_variation_flat needs a flat m=1 profile")
        nx, b, d = d.n, d.b, float(d.values[0])
    d = float(d)
    if not d > 0:
        raise InvalidInputError("thickness d must be positive")
    if int(mode_k) != mode_k or mode_k < 1:
        raise InvalidInputError("mode_k must be an integer >= 1")
    if normalization not in NORMALIZATIONS:
        raise InvalidInputError(f"normalization must be one of {NORMALIZATIONS}")
    if 2 * mode_k >= nx:
        raise InvalidInputError(f"mode {mode_k} is not resolved on {nx} columns")
    p11 = _psi11(psi)
    prof, fld = _flat_field(d, float(b), params, int(nx), int(ny))
    x = prof.nodes()
    phi = np.cos(2.0 * np.pi * mode_k * x / b)
    dphi = prof.differ.d(phi, 0)
    local = p11 * float(np.sum(dphi**2) * prof.cell)
    nonlocal_ = v_phi_solve(prof, fld, phi).nonlocal_term if params.e0 != 0.0 else 0.0
    value = local + nonlocal_
    if normalization == "l2":
        value /= float(np.sum(phi**2) * prof.cell)
    elif normalization == "h1":
        value /= float(np.sum(phi**2 + dphi**2) * prof.cell)
    return value


def numeric_threshold(
    b: float,
    params: LameParams,
    psi,
    modes=(1, 2, 3, 4),
    nx: int = 256,
    ny: int = 64,
    d_start: float | None = None,
    d_max: float | None = None,
) -> float:
    """Smallest d at which min over ``modes`` of the flat second variation turns negative.

    Returns +inf when no sign change is found below ``d_max``.
    """
    def worst(d):
        return min(second_variation_flat(d, k, b, params, psi, nx, ny, "h1") for k in modes)

    d_lo = 1e-3 * b if d_start is None else d_start
    d_max = 50.0 * b if d_max is None else d_max
    if worst(d_lo) <= 0:
        raise InvalidInputError("film is already unstable at the starting thickness; lower d_start")
    d_hi = d_lo * 1.5
    while worst(d_hi) > 0:
        d_lo, d_hi = d_hi, d_hi * 1.5
        if d_hi > d_max:
            return math.inf
    return brentq(worst, d_lo, d_hi, xtol=1e-9 * d_hi, rtol=1e-12)


@dataclass
class StabilityReport:
    nu_p: float
    rhs_value: float
    d_loc: float
    per_mode_second_variation: list = field(default_factory=list)  # (k, d, value)
    numeric_threshold: float | None = None

    @property
    def relative_gap(self) -> float | None:
        if self.numeric_threshold is None or not math.isfinite(self.d_loc):
            return None
        return abs(self.numeric_threshold - self.d_loc) / self.d_loc

    def to_dict(self) -> dict:
        def num(v):
            return None if v is None else (v if math.isfinite(v) else "inf")

        return {
            "nu_p": self.nu_p,
            "rhs": num(self.rhs_value),
            "d_loc": num(self.d_loc),
            "numeric_threshold": num(self.numeric_threshold),
            "relative_gap": self.relative_gap,
        }


def stability_report(
    b: float,
    params: LameParams,
    psi,
    numeric: bool = False,
    modes=(1, 2, 3, 4),
    d_values=None,
    nx: int = 256,
    ny: int = 64,
) -> StabilityReport:
    p11 = _psi11(psi)
    rep = StabilityReport(
        nu_p=poisson_modulus(params),
        rhs_value=threshold_rhs(b, params, p11),
        d_loc=d_loc(b, params, p11),
    )
    if numeric:
        rep.numeric_threshold = numeric_threshold(b, params, p11, modes, nx, ny)
        if d_values is None:
            ref = rep.d_loc if math.isfinite(rep.d_loc) else b
            d_values = ref * np.array([0.25, 0.5, 0.9, 1.0, 1.1, 2.0, 4.0])
    for d in d_values if d_values is not None else ():
        for k in modes:
            rep.per_mode_second_variation.append((int(k), float(d), second_variation_flat(d, k, b, params, p11, nx, ny)))
    return rep


# -- evolution experiments around the flat state ------------------------------------


@dataclass(frozen=True)
class Perturbation:
    """Sum of amp * cos(2 pi k x / b + phase) over (k, amp, phase) triples, k >= 1."""

    modes: tuple = ()

    def __post_init__(self):
        for mode in self.modes:
            if len(mode) != 3 or int(mode[0]) != mode[0] or mode[0] < 1:
                raise InvalidInputError("perturbation modes are (k >= 1, amplitude, phase) triples")

    def evaluate(self, x: np.ndarray, b: float) -> np.ndarray:
        out = np.zeros_like(x, dtype=float)
        for k, amp, phase in self.modes:
            out += amp * np.cos(2.0 * np.pi * k * x / b + phase)
        return out

    @property
    def amplitude(self) -> float:
        return float(sum(abs(a) for _, a, _ in self.modes))


@dataclass
class LiapunovResult:
    classification: str  # decay | growth | inconclusive
    times: np.ndarray
    l2_norms: np.ndarray
    w2p_norms: np.ndarray
    ratio: float
    trace: object


def classify(initial: float, final: float, decay: float = 0.5, growth: float = 2.0) -> str:
    if initial == 0.0:
        return "inconclusive"
    r = final / initial
    if r <= decay:
        return "decay"
    if r >= growth:
        return "growth"
    return "inconclusive"


def liapunov_experiment(
    d: float,
    perturbation: Perturbation,
    params: LameParams,
    psi: Anisotropy,
    flow: FlowParams,
    *,
    b: float,
    t_end: float,
    n: int = 128,
    ny: int = 16,
    delta: float | None = None,
    **step_options,
) -> LiapunovResult:
    """Evolve d + perturbation and classify by the L^2 distance to the flat state."""
    from .stepper import evolve

    if delta is not None and perturbation.amplitude > delta:
        raise InvalidInputError(f"perturbation amplitude {perturbation.amplitude} exceeds delta = {delta}")
    h0 = Profile.from_function(lambda x: d + perturbation.evaluate(x, b), n, b, 1)
    elastic = FilmElasticity(params, ny=ny)
    trace = evolve(h0, flow, psi, elastic, t_end=t_end, **step_options)
    l2, w2p = [], []
    for vals in trace.profiles:
        dev = vals - d
        l2.append(lp_norm(h0, dev, 2.0))
        w2p.append(w2p_norm(h0, dev, flow.p))
    l2 = np.array(l2)
    ratio = l2[-1] / l2[0] if l2[0] > 0 else math.nan
    return LiapunovResult(
        classification=classify(l2[0], l2[-1]),
        times=np.array(trace.times),
        l2_norms=l2,
        w2p_norms=np.array(w2p),
        ratio=ratio,
        trace=trace,
    )
