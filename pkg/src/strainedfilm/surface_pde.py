"""Elliptic problems on graph surfaces and the flat torus.

The Laplace-Beltrami problem on the graph of a base profile is solved in
parameter coordinates: for every test function phi

    -sum A Dv . Dphi * cell = sum rhs * phi * J * cell,   A = J (I - Dh (x) Dh / J^2),

i.e. div(A Dv) = rhs * J with the grid operator D of the base profile.  The
discrete problem is well posed on the complement of the kernel of D (constants,
plus Nyquist modes), which is where every right-hand side is projected.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .errors import CompatibilityError, InvalidInputError, NumericError
from .geometry import Profile, volume


class MetricOperator:
    """Weak Laplace-Beltrami operator of one base profile with its solver state."""

    def __init__(self, base: Profile, rtol: float = 1e-10):
        self.base = base
        self.rtol = rtol
        D = base.differ
        g = D.grad(base.values)
        J = np.sqrt(1.0 + np.sum(g**2, axis=0))
        self.J = J
        self.grad_base = g
        m = base.m
        # A[i, j] = J delta_ij - g_i g_j / J
        self.A = np.empty((m, m) + base.values.shape)
        for i in range(m):
            for j in range(m):
                self.A[i, j] = (J if i == j else 0.0) - g[i] * g[j] / J
        sym = D.symbol_sq.copy()
        self._precond = np.where(D.kernel_mask, 0.0, 1.0 / np.where(sym == 0, 1.0, sym))
        self.last_iterations = 0

    def clone(self) -> "MetricOperator":
        return MetricOperator(self.base, self.rtol)

    def flux(self, v: np.ndarray) -> np.ndarray:
        dv = self.base.differ.grad(v)
        return np.einsum("ij...,j...->i...", self.A, dv)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """-div(A Dv), the symmetric positive semidefinite grid operator."""
        return -self.base.differ.div(self.flux(v))

    def dirichlet_form(self, v: np.ndarray, w: np.ndarray | None = None) -> float:
        """Integral over the surface of D_Gamma v . D_Gamma w."""
        D = self.base.differ
        w = v if w is None else w
        return float(np.sum(self.flux(v) * D.grad(w)) * self.base.cell)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve Laplace-Beltrami v = rhs (rhs a surface density) with zero surface mean."""
        base = self.base
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != base.values.shape:
            raise InvalidInputError(f"rhs has shape {rhs.shape}, expected {base.values.shape}")
        f = rhs * self.J
        scale = np.sqrt(np.mean(f**2))
        if scale == 0.0:
            return np.zeros_like(rhs)
        if abs(np.mean(f)) > 1e-10 * scale:
            raise CompatibilityError(
                f"right-hand side has surface mean {np.mean(f):.3e} (rms {scale:.3e}); it must vanish"
            )
        D = base.differ
        target = -D.project(f)
        shape = base.values.shape
        N = target.size

        op = LinearOperator((N, N), matvec=lambda x: self.apply(x.reshape(shape)).ravel(), dtype=float)
        pre = LinearOperator(
            (N, N), matvec=lambda x: D.fourier_multiply(x.reshape(shape), self._precond).ravel(), dtype=float
        )
        iters = [0]

        def count(_):
            iters[0] += 1

        maxiter = 10 * N
        sol, info = cg(op, target.ravel(), rtol=self.rtol, atol=0.0, maxiter=maxiter, M=pre, callback=count)
        self.last_iterations = iters[0]
        v = sol.reshape(shape)
        res = np.linalg.norm(self.apply(v) - target) / np.linalg.norm(target)
        if info != 0 and res > 10 * self.rtol:
            raise NumericError(f"Laplace-Beltrami CG did not converge (relative residual {res:.3e})", residual=res)
        v = D.project(v)
        return v - np.sum(v * self.J) / np.sum(self.J)


def laplace_beltrami_solve(base: Profile, rhs, rtol: float = 1e-10) -> np.ndarray:
    return MetricOperator(base, rtol).solve(rhs)


def hminus1_norm(f, b: float) -> float:
    """||f||_{H^{-1}} = ||Dw||_{L^2} with Delta w = f, w periodic with zero mean."""
    f = np.asarray(f, dtype=float)
    m = f.ndim
    scale = np.sqrt(np.mean(f**2))
    if scale == 0.0:
        return 0.0
    if abs(np.mean(f)) > 1e-10 * scale:
        raise CompatibilityError("H^-1 norm needs a zero-mean function")
    n = f.shape[0]
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=b / n)
    ksq = np.zeros(f.shape)
    for ax in range(m):
        shape = [1] * m
        shape[ax] = n
        ksq = ksq + k.reshape(shape) ** 2
    fh = np.fft.fftn(f) / f.size
    mask = ksq > 0
    return float(np.sqrt(b**m * np.sum(np.abs(fh[mask]) ** 2 / ksq[mask])))


def mm_penalty(base: Profile, h: Profile, h_prev: Profile, op: MetricOperator | None = None) -> float:
    """(1/2) int |D_Gamma v_h|^2 over the base surface (no 1/tau factor)."""
    for name, p in (("h", h), ("h_prev", h_prev)):
        if p.values.shape != base.values.shape:
            raise InvalidInputError(f"{name} grid does not match the base grid")
    v0, v1 = volume(h_prev), volume(h)
    if abs(v1 - v0) > 1e-10 * abs(v0):
        raise CompatibilityError(f"volume mismatch: {v1!r} vs {v0!r}")
    op = MetricOperator(base) if op is None else op
    delta = h.values - h_prev.values
    v = op.solve(delta / op.J)
    return 0.5 * op.dirichlet_form(v)


def penalty_and_potential(op: MetricOperator, delta: np.ndarray):
    """Penalty (1/2) int |D_Gamma v|^2 and v for a volume-free increment ``delta``.

    Uses the identity (1/2) int |D_Gamma v|^2 = -(1/2) sum v * delta * cell.
    """
    v = op.solve(delta / op.J)
    return -0.5 * float(np.sum(v * delta) * op.base.cell), v
