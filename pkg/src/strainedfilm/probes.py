"""Randomized checks of periodic interpolation inequalities.

Each probe samples mean-zero trigonometric polynomials on the periodic cube of
side ``b`` and reports the largest observed ratio lhs / rhs, where rhs omits the
unknown constant.  Derivatives are exact Fourier multipliers and integrals use
the trapezoidal rule on the grid.
"""

from __future__ import annotations

import itertools
import json
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError, InvalidInputError, NumericError
from .surface_pde import hminus1_norm

PROBE_IDS = ("A", "C", "D", "H1", "elliptic")
REPORT_VERSION = 1
DEFAULT_CAP = 10.0
HOMOGENEITY_SCALE = 3.7

DEFAULT_PARAMS = {
    "A": {"j": 1, "m": 2, "p": 2.0},
    "C": {"m": 1, "p": 2.0, "q": 4.0},
    "D": {"s": 0, "j": 1, "m": 2, "p": 2.0, "q": 4.0},
    "H1": {"order": 1},
    "elliptic": {"p": 2.0, "slope_bound": 1.0},
}
DEFAULT_DIM = {"A": 1, "C": 1, "D": 1, "H1": 1, "elliptic": 2}


@dataclass
class ProbeReport:
    id: str
    trials: int
    worst_ratio: float
    params: dict
    witness: dict
    cap: float = DEFAULT_CAP
    homogeneity_defect: float = 0.0
    ratios: list = field(default_factory=list)

    @property
    def within_cap(self) -> bool:
        return bool(np.isfinite(self.worst_ratio) and self.worst_ratio <= self.cap)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["version"] = REPORT_VERSION
        out["within_cap"] = self.within_cap
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


# -- spectral helpers -------------------------------------------------------------


def _wavenumbers(n: int, dim: int, b: float):
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=b / n)
    return np.meshgrid(*([k] * dim), indexing="ij")


def _integer_modes(n: int, dim: int):
    k = np.rint(np.fft.fftfreq(n, d=1.0 / n)).astype(int)
    return np.meshgrid(*([k] * dim), indexing="ij")


def _partial(fhat, kk, alpha) -> np.ndarray:
    mult = np.ones_like(kk[0], dtype=complex)
    for ax, a in enumerate(alpha):
        mult = mult * (1j * kk[ax]) ** a
    return np.real(np.fft.ifftn(fhat * mult))


def derivative_magnitude(f: np.ndarray, order: int, b: float) -> np.ndarray:
    """Pointwise Frobenius norm of the tensor of all order-th partial derivatives."""
    dim, n = f.ndim, f.shape[0]
    if order == 0:
        return np.abs(f)
    kk = _wavenumbers(n, dim, b)
    fhat = np.fft.fftn(f)
    total = np.zeros(f.shape)
    for alpha in itertools.product(range(order + 1), repeat=dim):
        if sum(alpha) != order:
            continue
        weight = math.factorial(order) / math.prod(math.factorial(a) for a in alpha)
        total += weight * _partial(fhat, kk, alpha) ** 2
    return np.sqrt(total)


def grid_norm(g: np.ndarray, p: float, b: float) -> float:
    if np.isinf(p):
        return float(np.max(np.abs(g)))
    cell = (b / g.shape[0]) ** g.ndim
    return float((np.sum(np.abs(g) ** p) * cell) ** (1.0 / p))


# -- random functions ---------------------------------------------------------------


def random_coefficients(rng: np.random.Generator, n: int, dim: int, decay: float, degree: int | None = None):
    """Fourier coefficients (full fftn layout) of a real mean-zero trig polynomial."""
    degree = n // 4 - 1 if degree is None else degree
    if not 1 <= degree < n // 2:
        raise InvalidInputError(f"degree must be in [1, {n // 2 - 1}]")
    km = _integer_modes(n, dim)
    norm2 = sum(k.astype(float) ** 2 for k in km)
    active = np.all([np.abs(k) <= degree for k in km], axis=0) & (norm2 > 0)
    coeff = np.zeros((n,) * dim, dtype=complex)
    count = int(active.sum())
    z = rng.standard_normal(count) + 1j * rng.standard_normal(count)
    coeff[active] = z * (1.0 + norm2[active]) ** (-decay / 2.0)
    return coeff


def function_from_coefficients(coeff: np.ndarray) -> np.ndarray:
    f = np.real(np.fft.ifftn(coeff)) * coeff.size
    return f - f.mean()


def pure_mode(n: int, dim: int, b: float, k: int = 1) -> np.ndarray:
    x = np.arange(n) * b / n
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    return np.sin(2.0 * np.pi * k * grids[0] / b)


# -- the inequalities -------------------------------------------------------------------


def _validate(pid: str, prm: dict, dim: int) -> dict:
    prm = {**DEFAULT_PARAMS[pid], **prm}
    unknown = set(prm) - set(DEFAULT_PARAMS[pid])
    if unknown:
        raise InvalidInputError(f"unknown parameters {sorted(unknown)} for probe {pid}")
    if pid == "A":
        j, m, p = int(prm["j"]), int(prm["m"]), float(prm["p"])
        if not (0 <= j <= m and m >= 1 and p >= 1):
            raise DomainError("probe A needs 0 <= j <= m, m >= 1, p >= 1")
    elif pid == "C":
        m, p, q = int(prm["m"]), float(prm["p"]), float(prm["q"])
        if m < 1 or not 1 <= p <= q:
            raise DomainError("probe C needs m >= 1 and 1 <= p <= q")
        if m * p == dim and np.isinf(q):
            raise DomainError("probe C needs q < inf when m p = n")
        if m * p < dim and q > dim * p / (dim - m * p):
            raise DomainError("probe C needs q <= n p / (n - m p) when m p < n")
        prm["theta"] = dim / (m * p) - (0.0 if np.isinf(q) else dim / (m * q))
    elif pid == "D":
        s, j, m = int(prm["s"]), int(prm["j"]), int(prm["m"])
        p, q = float(prm["p"]), float(prm["q"])
        if not (0 <= s <= j <= m and m > s and 1 <= p <= q):
            raise DomainError("probe D needs 0 <= s <= j <= m, m > s and 1 <= p <= q")
        if np.isinf(q) and (m - j) * p <= dim:
            raise DomainError("probe D allows q = inf only when (m - j) p > n")
        theta = (dim / p - (0.0 if np.isinf(q) else dim / q) + j - s) / (m - s)
        if not 0.0 <= theta <= 1.0:
            raise DomainError(f"probe D exponent theta = {theta} lies outside [0, 1]")
        prm["theta"] = theta
    elif pid == "H1":
        if int(prm["order"]) not in (1, 2):
            raise DomainError("probe H1 has order 1 or 2")
    else:
        if dim != 2:
            raise DomainError("the elliptic-operator probe lives on the two-dimensional torus")
        if float(prm["p"]) < 2 or not float(prm["slope_bound"]) > 0:
            raise DomainError("probe elliptic needs p >= 2 and a positive slope bound")
    return prm


def _curvature_operator(g: np.ndarray, b: float):
    """Coefficients of the mean-curvature linearization at g: L u = a : D^2 u + c . Du."""
    n, dim = g.shape[0], g.ndim
    kk = _wavenumbers(n, dim, b)
    ghat = np.fft.fftn(g)
    dg = [_partial(ghat, kk, tuple(int(i == ax) for i in range(dim))) for ax in range(dim)]
    J2 = 1.0 + sum(d**2 for d in dg)
    J = np.sqrt(J2)
    a = [[((1.0 if i == j else 0.0) - dg[i] * dg[j] / J2) / J for j in range(dim)] for i in range(dim)]
    c = []
    for j in range(dim):
        total = np.zeros_like(g)
        for i in range(dim):
            ahat = np.fft.fftn(a[i][j])
            total += _partial(ahat, kk, tuple(int(t == i) for t in range(dim)))
        c.append(total)
    return a, c


def _ratio(pid: str, prm: dict, f: np.ndarray, b: float, aux=None) -> float:
    if pid == "A":
        j, m, p = int(prm["j"]), int(prm["m"]), float(prm["p"])
        lhs = grid_norm(derivative_magnitude(f, j, b), p, b)
        rhs = grid_norm(derivative_magnitude(f, m, b), p, b) ** (j / m) * grid_norm(f, p, b) ** ((m - j) / m)
    elif pid == "C":
        m, p, q, th = int(prm["m"]), float(prm["p"]), float(prm["q"]), prm["theta"]
        lhs = grid_norm(f, q, b)
        if th == 0.0:
            rhs = grid_norm(f, p, b)
        else:
            rhs = grid_norm(derivative_magnitude(f, m, b), p, b) ** th * grid_norm(f, p, b) ** (1 - th)
    elif pid == "D":
        s, j, m = int(prm["s"]), int(prm["j"]), int(prm["m"])
        p, q, th = float(prm["p"]), float(prm["q"]), prm["theta"]
        lhs = grid_norm(derivative_magnitude(f, j, b), q, b)
        rhs = grid_norm(derivative_magnitude(f, m, b), p, b) ** th * grid_norm(derivative_magnitude(f, s, b), p, b) ** (
            1 - th
        )
    elif pid == "H1":
        r = int(prm["order"])
        lhs = grid_norm(f, 2.0, b)
        rhs = grid_norm(derivative_magnitude(f, r, b), 2.0, b) ** (1.0 / (r + 1)) * hminus1_norm(f, b) ** (r / (r + 1.0))
    else:
        a, c = aux
        n, dim = f.shape[0], f.ndim
        kk = _wavenumbers(n, dim, b)
        fhat = np.fft.fftn(f)
        Lu = np.zeros_like(f)
        for i in range(dim):
            Lu += c[i] * _partial(fhat, kk, tuple(int(t == i) for t in range(dim)))
            for j in range(dim):
                alpha = tuple(int(t == i) + int(t == j) for t in range(dim))
                Lu += a[i][j] * _partial(fhat, kk, alpha)
        p = float(prm["p"])
        lhs = grid_norm(derivative_magnitude(f, 2, b), p, b)
        rhs = grid_norm(Lu, p, b)
    return lhs / rhs


def _run_trial(args):
    pid, prm, n, dim, b, decay, witness, child, trial = args
    rng = np.random.default_rng(child)
    if witness == "pure":
        coeff = None
        f = pure_mode(n, dim, b, k=min(trial + 1, n // 4 - 1))
    else:
        coeff = random_coefficients(rng, n, dim, decay)
        f = function_from_coefficients(coeff)
    aux = None
    if pid == "elliptic":
        g = function_from_coefficients(random_coefficients(rng, n, dim, decay, degree=max(1, n // 8)))
        slope = max(np.max(derivative_magnitude(g, 1, b)), 1e-300)
        g *= float(prm["slope_bound"]) / slope
        aux = _curvature_operator(g, b)
    r = _ratio(pid, prm, f, b, aux)
    r_scaled = _ratio(pid, prm, HOMOGENEITY_SCALE * f, b, aux)
    defect = abs(r_scaled - r) / r
    if defect > 1e-12:
        raise NumericError(f"probe {pid} ratio is not scale invariant (defect {defect:.2e})", residual=defect)
    return r, defect, coeff


def probe_interpolation(
    pid: str,
    params: dict | None = None,
    trials: int = 200,
    seed: int = 0,
    n: int = 64,
    decay: float = 2.0,
    dim: int | None = None,
    b: float = 2.0 * np.pi,
    witness: str = "random",
    cap: float = DEFAULT_CAP,
    workers: int = 1,
) -> ProbeReport:
    """Worst ratio lhs/rhs over ``trials`` random (or pure-mode) witnesses."""
    if pid not in PROBE_IDS:
        raise InvalidInputError(f"unknown probe id {pid!r}; valid ids: {', '.join(PROBE_IDS)}")
    if witness not in ("random", "pure"):
        raise InvalidInputError("witness must be 'random' or 'pure'")
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    if n < 8 or n & (n - 1):
        raise InvalidInputError("n must be a power of two >= 8")
    dim = DEFAULT_DIM[pid] if dim is None else int(dim)
    if dim not in (1, 2):
        raise InvalidInputError("dim must be 1 or 2")
    prm = _validate(pid, dict(params or {}), dim)
    children = np.random.SeedSequence(seed).spawn(trials)
    jobs = [(pid, prm, n, dim, b, decay, witness, children[t], t) for t in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, mp_context=multiprocessing.get_context("spawn")) as pool:
            results = list(pool.map(_run_trial, jobs))
    else:
        results = [_run_trial(job) for job in jobs]
    ratios = [r for r, _, _ in results]
    worst = int(np.argmax(ratios))
    coeff = results[worst][2]
    wit = {"seed": seed, "trial": worst, "family": witness, "decay": decay, "n": n, "dim": dim, "b": b}
    if coeff is not None:
        idx = np.argwhere(coeff != 0)
        wit["coefficients"] = [[*map(int, ix), float(coeff[tuple(ix)].real), float(coeff[tuple(ix)].imag)] for ix in idx]
    else:
        wit["mode"] = min(worst + 1, n // 4 - 1)
    return ProbeReport(
        id=pid,
        trials=trials,
        worst_ratio=float(ratios[worst]),
        params={k: (v if not isinstance(v, float) or np.isfinite(v) else "inf") for k, v in prm.items()},
        witness=wit,
        cap=cap,
        homogeneity_defect=float(max(d for _, d, _ in results)),
        ratios=[float(r) for r in ratios],
    )


def witness_function(report: ProbeReport) -> np.ndarray:
    """Rebuild the worst witness on its original grid."""
    w = report.witness
    if w["family"] == "pure":
        return pure_mode(w["n"], w["dim"], w["b"], w["mode"])
    coeff = np.zeros((w["n"],) * w["dim"], dtype=complex)
    for row in w["coefficients"]:
        coeff[tuple(row[:-2])] = row[-2] + 1j * row[-1]
    return function_from_coefficients(coeff)
