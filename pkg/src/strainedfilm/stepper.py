"""Minimizing movements: incremental minimization and the evolution driver.

Each step minimizes

    F(h, u_h) + (1/(2 tau)) int_{Gamma_prev} |D_Gamma v_h|^2

over grid profiles with the volume of the previous profile and slope bounded by
Lambda0.  Descent directions are projected onto the complement of the kernel of
the grid derivative (so the mean, hence the volume, never changes) and
preconditioned with the Fourier symbol of the flat linearization.  A limited
memory quasi-Newton update accelerates the descent; every iterate is accepted
only through an Armijo backtracking search that also rejects infeasible points.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .anisotropy import Anisotropy
from .energy import (
    EnergyBreakdown,
    FlowParams,
    _elastic,
    dual_h1_norm,
    energy_gradient,
    curvature_hessian_sq,
    free_energy,
)
from .errors import InvalidInputError, OptimizerStall
from .geometry import Profile, max_slope, volume
from .surface_pde import MetricOperator, hminus1_norm

log = logging.getLogger(__name__)

TRACE_COLUMNS = (
    "step",
    "t",
    "E_total",
    "E_elastic",
    "E_surface",
    "E_curv",
    "penalty",
    "volume",
    "max_slope",
    "min_h",
    "hminus1_velocity",
    "curvature_hessian_sq",
)
TRACE_FORMAT_VERSION = 1


@dataclass
class StepResult:
    profile_next: Profile
    energy: EnergyBreakdown
    penalty_value: float  # (1/(2 tau)) int |D_Gamma v|^2
    optimality_residual: float
    iterations: int
    slope_max: float
    constraint_active: bool
    pinched: bool = False
    converged: bool = True
    elastic_solves: int = 0


class _Objective:
    """Incremental functional on raw node arrays, with a cache of the last evaluation."""

    def __init__(self, h_prev, params, psi, elastic, tau, refresh_every=1):
        self.h_prev = h_prev
        self.params = params
        self.psi = psi
        self.elastic = elastic
        self.tau = tau
        self.op = MetricOperator(h_prev, rtol=1e-12)
        self.refresh_every = max(1, int(refresh_every))
        self._frozen = None  # (values, ElasticEval) used when refresh_every > 1
        self._since_refresh = 0
        self.solves = 0

    def _elastic_eval(self, prof: Profile, exact: bool):
        if self.elastic is None:
            return None
        if self.refresh_every == 1 or exact or self._frozen is None:
            ev = _elastic(prof, self.elastic)
            self.solves += 1
            if self.refresh_every > 1 and (self._frozen is None or exact):
                self._frozen = (prof.values.copy(), ev)
            return ev
        # first-order model around the last refreshed profile
        ref_vals, ref = self._frozen
        d = prof.values - ref_vals
        from .energy import ElasticEval

        return ElasticEval(ref.energy + float(np.sum(ref.gradient * d) * prof.cell), ref.gradient, ref.trace)

    @property
    def lazy(self) -> bool:
        return self.refresh_every > 1 and self.elastic is not None

    def note_accepted(self) -> bool:
        """Count an accepted iterate; True when the frozen elastic model is due for a refresh."""
        if not self.lazy:
            return False
        self._since_refresh += 1
        if self._since_refresh >= self.refresh_every:
            self._since_refresh = 0
            return True
        return False

    def evaluate(self, values: np.ndarray, exact: bool = False):
        prof = self.h_prev.with_values(values)
        el = self._elastic_eval(prof, exact)
        energy = free_energy(prof, self.params, self.psi, el)
        delta = values - self.h_prev.values
        delta = delta - np.mean(delta)  # volume is fixed; remove rounding drift
        v = self.op.solve(delta / self.op.J)
        pen = -0.5 * float(np.sum(v * delta) * prof.cell)
        grad = energy_gradient(prof, self.params, self.psi, el) - v / self.tau
        grad = prof.differ.project(grad)
        return energy.total + pen / self.tau, grad, energy, pen / self.tau, prof


def _preconditioner(h_prev: Profile, params: FlowParams, psi: Anisotropy, tau: float) -> np.ndarray:
    """Inverse Fourier symbol of the flat linearized incremental Hessian (zero on the kernel)."""
    D = h_prev.differ
    ksq = D.symbol_sq
    e = np.zeros(psi.dim)
    e[-1] = 1.0
    hess = psi.eval(e)[2]
    a = max(float(np.mean(np.diag(hess)[: h_prev.m])), 0.0)
    from .geometry import mean_curvature

    H = mean_curvature(h_prev)
    curv = params.epsilon * (params.p - 1.0) * max(float(np.mean(np.abs(H) ** (params.p - 2.0))), 1e-3)
    with np.errstate(divide="ignore"):
        sym = a * ksq + curv * ksq**2 + 1.0 / (tau * ksq)
        inv = np.where(D.kernel_mask, 0.0, 1.0 / sym)
    return inv


def incremental_step(
    h_prev: Profile,
    params: FlowParams,
    psi: Anisotropy,
    elastic=None,
    *,
    Lambda0: float | None = None,
    gtol: float | None = None,
    rtol: float = 1e-6,
    max_iter: int = 500,
    quasi_newton: bool = True,
    memory: int = 8,
    elastic_refresh: int = 1,
    scale: float | None = None,
) -> StepResult:
    """One minimizing-movements step from ``h_prev``.

    Stops once the H^1-dual norm of the projected incremental gradient is below
    ``max(min(gtol, rtol * initial), 1e-13 * scale)``; ``gtol`` defaults to
    ``1e-7 * scale`` with ``scale = |F(h_prev)|``.
    """
    tau = params.resolved_tau(h_prev.b)
    Lambda0 = params.resolved_Lambda0(h_prev) if Lambda0 is None else Lambda0
    if max_slope(h_prev) >= Lambda0:
        raise InvalidInputError(f"previous profile violates the slope bound Lambda0 = {Lambda0}")
    obj = _Objective(h_prev, params, psi, elastic, tau, elastic_refresh)
    D = h_prev.differ
    inv_sym = _preconditioner(h_prev, params, psi, tau)
    cell = h_prev.cell

    x = h_prev.values.copy()
    mean0 = float(np.mean(x))
    f, g, energy, pen, prof = obj.evaluate(x, exact=True)
    if scale is None:
        scale = max(abs(f), 1e-300)
    gtol = 1e-7 * scale if gtol is None else gtol
    r0 = dual_h1_norm(prof, g)
    target = max(min(gtol, rtol * r0), 1e-13 * scale)
    r = r0
    S, Y = [], []
    it = 0
    slope_hit = pinch_hit = False
    converged = r <= target

    while not converged and it < max_iter:
        # two-loop recursion with the Fourier preconditioner as initial inverse Hessian
        q = g.copy()
        alphas = []
        if quasi_newton:
            for s, y in reversed(list(zip(S, Y))):
                rho = 1.0 / float(np.sum(y * s))
                a_ = rho * float(np.sum(s * q))
                alphas.append((rho, a_))
                q -= a_ * y
        dirn = D.fourier_multiply(q, inv_sym)
        if quasi_newton and S:
            gamma = float(np.sum(S[-1] * Y[-1]) / np.sum(Y[-1] * D.fourier_multiply(Y[-1], inv_sym)))
            dirn *= gamma
            for (s, y), (rho, a_) in zip(zip(S, Y), reversed(alphas)):
                beta = rho * float(np.sum(y * dirn))
                dirn += (a_ - beta) * s
        dirn = -D.project(dirn)
        slope = float(np.sum(g * dirn) * cell)
        if slope >= 0:
            if S:
                S.clear()
                Y.clear()
                continue
            break
        alpha = 1.0
        accepted = False
        slope_hit = pinch_hit = False
        for _ in range(60):
            xn = x + alpha * dirn
            xn += mean0 - np.mean(xn)
            if np.min(xn) <= 0.0:
                pinch_hit = True
                alpha *= 0.5
                continue
            cand = h_prev.with_values(xn)
            if max_slope(cand) > Lambda0:
                slope_hit = True
                alpha *= 0.5
                continue
            fn, gn, en, pn, prn = obj.evaluate(xn)
            rn = dual_h1_norm(prn, gn)
            armijo = fn <= f + 1e-4 * alpha * slope
            # near the optimum f only changes at rounding level; accept if the residual improves
            roundoff = fn <= f + 64 * np.finfo(float).eps * max(abs(f), scale) and rn < r
            if armijo or roundoff:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if S:
                S.clear()
                Y.clear()
                continue
            break
        s = xn - x
        y = gn - g
        sy = float(np.sum(s * y))
        if quasi_newton and sy > 1e-16 * float(np.sqrt(np.sum(s * s) * np.sum(y * y))):
            S.append(s)
            Y.append(y)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
        x, f, g, energy, pen, prof, r = xn, fn, gn, en, pn, prn, rn
        it += 1
        converged = r <= target
        if obj.note_accepted() or (converged and obj.lazy):
            # re-linearize the elastic energy here; the objective changed, so drop the memory
            f, g, energy, pen, prof = obj.evaluate(x, exact=True)
            r = dual_h1_norm(prof, g)
            converged = r <= target
            S.clear()
            Y.clear()

    slope_now = max_slope(prof)
    active = bool(slope_now >= (1.0 - 1e-3) * Lambda0 or (slope_hit and not converged))
    result = StepResult(
        profile_next=prof,
        energy=energy,
        penalty_value=pen,
        optimality_residual=r,
        iterations=it,
        slope_max=slope_now,
        constraint_active=active,
        pinched=bool(pinch_hit and not converged),
        converged=bool(converged),
        elastic_solves=obj.solves,
    )
    if not converged and not (active or result.pinched):
        if r <= 100 * target:
            log.warning("step stopped at residual %.3e (target %.3e) after %d iterations", r, target, it)
            return result
        raise OptimizerStall(
            f"incremental minimization stalled at residual {r:.3e} (target {target:.3e}) after {it} iterations",
            best=result,
            residual=r,
        )
    return result


# -- evolution ----------------------------------------------------------------------


@dataclass
class EvolutionTrace:
    h0: Profile
    tau: float
    Lambda0: float
    times: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    profiles: list = field(default_factory=list)  # node arrays, one per time
    rows: list = field(default_factory=list)
    dissipation: float = 0.0
    penalty_sum: float = 0.0
    reason: str = "t_end"
    T0: float | None = None

    @property
    def initial_energy(self) -> float:
        return self.rows[0]["E_total"]

    @property
    def dissipation_constant(self) -> float:
        """C with sum ||dh/dt||^2_{H^-1} tau <= C F(h0): 2 sqrt(1 + Lambda0^2)."""
        return 2.0 * math.sqrt(1.0 + self.Lambda0**2)

    @property
    def final(self) -> Profile:
        return self.h0.with_values(self.profiles[-1])

    def energies(self) -> np.ndarray:
        return np.array([r["E_total"] for r in self.rows])

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def at(self, t: float) -> np.ndarray:
        """Piecewise-linear-in-time interpolant h_n(., t)."""
        t = float(t)
        if t <= 0:
            return self.profiles[0].copy()
        i = min(int(math.floor(t / self.tau)), len(self.profiles) - 2)
        if i < 0:
            return self.profiles[0].copy()
        lam = min(max((t - i * self.tau) / self.tau, 0.0), 1.0)
        return self.profiles[i] + lam * (self.profiles[i + 1] - self.profiles[i])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# strainedfilm trace v{TRACE_FORMAT_VERSION}\n")
            w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
            w.writeheader()
            for row in self.rows:
                w.writerow({k: (repr(float(v)) if k not in ("step",) else int(v)) for k, v in row.items()})

    def write_profiles(self, path, stride: int = 1) -> None:
        """One row per saved snapshot: step, t, then the flattened node values."""
        with open(path, "w") as fh:
            fh.write(f"# strainedfilm profiles v{TRACE_FORMAT_VERSION} m={self.h0.m} b={self.h0.b!r} n={self.h0.n}\n")
            for i, (t, vals) in enumerate(zip(self.times, self.profiles)):
                if i % stride and i != len(self.profiles) - 1:
                    continue
                fh.write(f"{i},{t!r}," + ",".join(repr(float(v)) for v in np.ravel(vals)) + "\n")


def _row(step, t, prof, energy, penalty, velocity, params):
    return {
        "step": step,
        "t": t,
        "E_total": energy.total,
        "E_elastic": energy.elastic,
        "E_surface": energy.surface,
        "E_curv": energy.curvature,
        "penalty": penalty,
        "volume": volume(prof),
        "max_slope": max_slope(prof),
        "min_h": float(np.min(prof.values)),
        "hminus1_velocity": velocity,
        "curvature_hessian_sq": curvature_hessian_sq(prof, params),
    }


def evolve(
    h0: Profile,
    params: FlowParams,
    psi: Anisotropy,
    elastic=None,
    t_end: float = 1.0,
    callbacks=(),
    **step_options,
) -> EvolutionTrace:
    """Iterate ``incremental_step`` up to ``t_end`` or until a terminal event.

    Terminal events: the slope bound becomes active (reported as T0) or the film
    pinches off.  Callbacks are called as ``cb(trace, step_result)``; a truthy
    return value stops the run.
    """
    tau = params.resolved_tau(h0.b)
    Lambda0 = params.resolved_Lambda0(h0)
    if max_slope(h0) >= Lambda0:
        raise InvalidInputError(
            f"Lambda0 = {Lambda0} must exceed the initial max slope {max_slope(h0)}"
        )
    trace = EvolutionTrace(h0=h0, tau=tau, Lambda0=Lambda0)
    e0 = free_energy(h0, params, psi, _elastic(h0, elastic))
    scale = max(abs(e0.total), 1e-300)
    trace.times.append(0.0)
    trace.profiles.append(h0.values.copy())
    trace.rows.append(_row(0, 0.0, h0, e0, 0.0, 0.0, params))
    nsteps = int(round(t_end / tau))
    current = h0
    for i in range(1, nsteps + 1):
        res = incremental_step(current, params, psi, elastic, Lambda0=Lambda0, scale=scale, **step_options)
        nxt = res.profile_next
        vel = (nxt.values - current.values) / tau
        vel = vel - np.mean(vel)
        vnorm = hminus1_norm(vel, h0.b)
        trace.dissipation += vnorm**2 * tau
        trace.penalty_sum += res.penalty_value
        t = i * tau
        trace.steps.append(res)
        trace.times.append(t)
        trace.profiles.append(nxt.values.copy())
        trace.rows.append(_row(i, t, nxt, res.energy, res.penalty_value, vnorm, params))
        current = nxt
        if res.constraint_active:
            trace.reason = "slope_constraint"
            trace.T0 = t
            log.warning("slope bound Lambda0=%g active at t=%g; stopping", Lambda0, t)
            break
        if res.pinched:
            trace.reason = "pinch_off"
            log.warning("film pinch-off at t=%g; stopping", t)
            break
        if any(cb(trace, res) for cb in callbacks):
            trace.reason = "callback"
            break
    return trace
