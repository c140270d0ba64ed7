"""Plane-strain elasticity of a film on a rigid substrate (m=1 profiles).

The film occupies {(x, y): 0 < y < h(x)}, periodic in x with period b.  The
displacement equals (e0 x, 0) on y = 0 and the top boundary is traction free.
We write u = w0 + u_p with w0 = (e0 x, 0) and solve for the periodic part u_p,
which vanishes on the substrate, with bilinear quadrilaterals on the mapped mesh
(x, s) -> (x, s h(x)), s in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import InvalidInputError, NumericError, StateError
from .geometry import Profile

_GP = np.array([-1.0, 1.0]) / np.sqrt(3.0)
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])


@dataclass(frozen=True)
class LameParams:
    mu: float
    lam: float
    e0: float

    def __post_init__(self):
        if not self.mu > 0 or not self.mu + self.lam > 0:
            raise InvalidInputError("Lame coefficients must satisfy mu > 0 and mu + lambda > 0")

    @property
    def voigt(self) -> np.ndarray:
        mu, lam = self.mu, self.lam
        return np.array([[2 * mu + lam, lam, 0.0], [lam, 2 * mu + lam, 0.0], [0.0, 0.0, mu]])

    def flat_vertical_strain(self) -> float:
        """c in u = (e0 x, c y), the traction-free flat-film solution."""
        return -self.lam * self.e0 / (2 * self.mu + self.lam)

    def flat_density(self) -> float:
        """W(E(u)) of the flat film."""
        c = self.flat_vertical_strain()
        return self.mu * (self.e0**2 + c**2) + 0.5 * self.lam * (self.e0 + c) ** 2

    def density(self, E11, E22, E12):
        tr = E11 + E22
        return self.mu * (E11**2 + E22**2 + 2 * E12**2) + 0.5 * self.lam * tr**2


def _shape_derivs(xi, eta):
    """d N_a / d(xi, eta) for the four bilinear shape functions."""
    dxi = 0.25 * _XI * (1 + eta * _ETA)
    deta = 0.25 * _ETA * (1 + xi * _XI)
    return np.stack([dxi, deta], axis=-1)  # (4, 2)


def _shape_values(xi, eta):
    return 0.25 * (1 + xi * _XI) * (1 + eta * _ETA)


_GAUSS = [(a, c) for c in _GP for a in _GP]
_DN_GAUSS = np.stack([_shape_derivs(a, c) for a, c in _GAUSS])  # (4 gp, 4 nodes, 2)


@dataclass
class StripMesh:
    """Tensor-product mesh of the film: nx columns (periodic) by ny layers."""

    b: float
    heights: np.ndarray
    ny: int

    def __post_init__(self):
        self.nx = self.heights.size
        self.dx = self.b / self.nx
        self.s = np.linspace(0.0, 1.0, self.ny + 1)
        i = np.arange(self.nx)
        j = np.arange(self.ny)
        I, Jr = np.meshgrid(i, j, indexing="ij")
        I, Jr = I.ravel(), Jr.ravel()
        # local node order: (i,j), (i+1,j), (i+1,j+1), (i,j+1)
        self.col = np.stack([I, (I + 1) % self.nx, (I + 1) % self.nx, I], axis=1)
        self.row = np.stack([Jr, Jr, Jr + 1, Jr + 1], axis=1)
        xcoord = np.stack([I, I + 1, I + 1, I], axis=1) * self.dx
        ycoord = self.s[self.row] * self.heights[self.col]
        self.X = np.stack([xcoord, ycoord], axis=-1)  # (nel, 4, 2)
        # free dof index of each local node (-1 on the substrate)
        node = (self.row - 1) * self.nx + self.col
        self.node = np.where(self.row == 0, -1, node)
        self.nfree_nodes = self.nx * self.ny

    @property
    def ndof(self) -> int:
        return 2 * self.nfree_nodes

    def element_dofs(self) -> np.ndarray:
        d = np.empty(self.node.shape + (2,), dtype=int)
        d[..., 0] = np.where(self.node < 0, -1, 2 * self.node)
        d[..., 1] = np.where(self.node < 0, -1, 2 * self.node + 1)
        return d.reshape(self.node.shape[0], 8)

    def node_coordinates(self) -> np.ndarray:
        """(nx, ny+1, 2) coordinates of all mesh nodes."""
        x = np.arange(self.nx) * self.dx
        y = self.heights[:, None] * self.s[None, :]
        return np.stack([np.broadcast_to(x[:, None], y.shape), y], axis=-1)


def _geometry_at(X, dN):
    """Jacobian inverse, determinant and physical shape gradients at one set of points.

    X: (nel, 4, 2); dN: (np, 4, 2).  Returns gradN (nel, np, 4, 2) and detG (nel, np).
    """
    G = np.einsum("eai,pac->epic", X, dN)
    det = G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]
    inv = np.empty_like(G)
    inv[..., 0, 0] = G[..., 1, 1] / det
    inv[..., 1, 1] = G[..., 0, 0] / det
    inv[..., 0, 1] = -G[..., 0, 1] / det
    inv[..., 1, 0] = -G[..., 1, 0] / det
    gradN = np.einsum("epck,pac->epak", inv, dN)
    return gradN, det


def _bmatrix(gradN):
    """Voigt strain-displacement matrices (..., 3, 8)."""
    B = np.zeros(gradN.shape[:-2] + (3, 8))
    B[..., 0, 0::2] = gradN[..., 0]
    B[..., 1, 1::2] = gradN[..., 1]
    B[..., 2, 0::2] = gradN[..., 1]
    B[..., 2, 1::2] = gradN[..., 0]
    return B


@dataclass
class ElasticField:
    """Solved equilibrium on one profile.

    ``displacement`` is the total displacement u at the (nx, ny+1) mesh nodes;
    ``periodic_part`` is u - (e0 x, 0) as a free-dof vector.
    """

    profile: Profile
    params: LameParams
    mesh: StripMesh
    periodic_part: np.ndarray
    displacement: np.ndarray
    elastic_energy: float
    trace_W: np.ndarray
    shape_gradient: np.ndarray
    residual: float
    _stiffness: sp.csc_matrix = field(repr=False, default=None)
    _factor: object = field(repr=False, default=None)

    @property
    def solved(self) -> bool:
        return self._factor is not None

    def matches(self, profile: Profile) -> bool:
        return profile.b == self.profile.b and np.array_equal(profile.values, self.profile.values)

    def solve_linear(self, rhs: np.ndarray) -> np.ndarray:
        if not self.solved:
            raise StateError("elastic field has not been solved")
        return self._factor.solve(rhs)

    def write_csv(self, path) -> None:
        """Columns x, y, u1, u2 at every mesh node."""
        xy = self.mesh.node_coordinates().reshape(-1, 2)
        u = self.displacement.reshape(-1, 2)
        with open(path, "w") as fh:
            fh.write("x,y,u1,u2\n")
            for (x, y), (u1, u2) in zip(xy, u):
                fh.write(f"{x!r},{y!r},{u1!r},{u2!r}\n")


def _assemble(mesh: StripMesh, params: LameParams):
    gradN, det = _geometry_at(mesh.X, _DN_GAUSS)
    B = _bmatrix(gradN)  # (nel, 4gp, 3, 8)
    C = params.voigt
    CB = np.matmul(C, B) * det[..., None, None]
    Ke = np.matmul(np.swapaxes(B, -1, -2), CB).sum(axis=1)
    E0 = np.array([params.e0, 0.0, 0.0])
    fe = -np.einsum("epti,t->ei", CB, E0)
    dofs = mesh.element_dofs()
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    vals = Ke.ravel()
    keep = (rows >= 0) & (cols >= 0)
    K = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(mesh.ndof, mesh.ndof)).tocsc()
    f = np.zeros(mesh.ndof)
    fd = dofs.ravel()
    fv = fe.ravel()
    np.add.at(f, fd[fd >= 0], fv[fd >= 0])
    return K, f, gradN, det, B


def _element_values(mesh: StripMesh, vec: np.ndarray) -> np.ndarray:
    """Gather a free-dof vector into (nel, 8) element arrays (zeros on the substrate)."""
    dofs = mesh.element_dofs()
    padded = np.concatenate([vec, [0.0]])
    return padded[np.where(dofs < 0, vec.size, dofs)]


def _strain_parts(gradN, ue, e0):
    """Gradient of the periodic part and total strain at the given points."""
    ux, uy = ue[:, 0::2], ue[:, 1::2]
    Dp = np.empty(gradN.shape[:2] + (2, 2))
    Dp[..., 0, :] = np.einsum("ea,epak->epk", ux, gradN)
    Dp[..., 1, :] = np.einsum("ea,epak->epk", uy, gradN)
    Du = Dp.copy()
    Du[..., 0, 0] += e0
    E = 0.5 * (Du + np.swapaxes(Du, -1, -2))
    return Dp, Du, E


def _stress(E, params: LameParams):
    tr = E[..., 0, 0] + E[..., 1, 1]
    return 2 * params.mu * E + params.lam * tr[..., None, None] * np.eye(2)


def _top_edge_gradients(mesh: StripMesh, ue_top, e0, xis):
    """Displacement gradients on the top edge of the top-layer elements at local xi values."""
    top = np.arange(mesh.nx) * mesh.ny + (mesh.ny - 1)
    dN = np.stack([_shape_derivs(x, 1.0) for x in xis])
    gradN, _ = _geometry_at(mesh.X[top], dN)
    return _strain_parts(gradN, ue_top, e0)


def solve_equilibrium(profile: Profile, params: LameParams, ny: int = 16) -> ElasticField:
    if profile.m != 1:
        raise InvalidInputError("the elasticity solver handles m=1 films only")
    if ny < 4:
        raise InvalidInputError("ny must be at least 4")
    mesh = StripMesh(profile.b, profile.values.copy(), ny)
    K, f, gradN, det, B = _assemble(mesh, params)
    try:
        lu = splu(K)
    except RuntimeError as exc:  # singular factor
        raise NumericError(f"singular elasticity system: {exc}") from exc
    up = lu.solve(f)
    fnorm = np.linalg.norm(f)
    residual = float(np.linalg.norm(K @ up - f) / fnorm) if fnorm > 0 else float(np.linalg.norm(K @ up))
    if residual > 1e-10:
        raise NumericError(f"elasticity solve residual {residual:.3e} above 1e-10", residual=residual)

    ue = _element_values(mesh, up)
    Dp, Du, E = _strain_parts(gradN, ue, params.e0)
    W = params.density(E[..., 0, 0], E[..., 1, 1], E[..., 0, 1])
    energy = float(np.sum(W * det))

    # shape derivative: d/dy_a of sum_gp W detG at fixed nodal values, y_a = s_a h_i
    sigma = _stress(E, params)
    sig_gradN = np.einsum("eprk,epak->epar", sigma, gradN)
    eshelby_y = W[..., None] * gradN[..., 1] - np.einsum("epr,epar->epa", Dp[..., :, 1], sig_gradN)
    dEdy = np.einsum("epa,ep->ea", eshelby_y, det)
    shape_grad = np.zeros(mesh.nx)
    np.add.at(shape_grad, mesh.col.ravel(), (dEdy * mesh.s[mesh.row]).ravel())

    top = np.arange(mesh.nx) * mesh.ny + (mesh.ny - 1)
    ue_top = ue[top]
    _, _, E_top = _top_edge_gradients(mesh, ue_top, params.e0, [-1.0, 1.0])
    W_top = params.density(E_top[..., 0, 0], E_top[..., 1, 1], E_top[..., 0, 1])  # (nx, 2)
    # node i is the left end of element i and the right end of element i-1
    trace = 0.5 * (W_top[:, 0] + np.roll(W_top[:, 1], 1))

    disp = np.zeros((mesh.nx, ny + 1, 2))
    disp[:, 1:, :] = up.reshape(ny, mesh.nx, 2).transpose(1, 0, 2)
    disp[..., 0] += params.e0 * (np.arange(mesh.nx) * mesh.dx)[:, None]
    return ElasticField(
        profile=profile,
        params=params,
        mesh=mesh,
        periodic_part=up,
        displacement=disp,
        elastic_energy=energy,
        trace_W=trace,
        shape_gradient=shape_grad,
        residual=residual,
        _stiffness=K,
        _factor=lu,
    )


def boundary_energy_trace(field: ElasticField) -> np.ndarray:
    """W(E(u)) on the free surface at the profile nodes."""
    if field is None or not field.solved:
        raise StateError("elastic field has not been solved")
    return field.trace_W.copy()


@dataclass
class SurfaceSourceResponse:
    """Solution v_phi of the surface-loaded problem and its elastic work."""

    periodic_part: np.ndarray
    displacement: np.ndarray
    work: float  # int C E(v) : E(v) = 2 int W(E(v))

    @property
    def nonlocal_term(self) -> float:
        """-2 int W(E(v_phi))."""
        return -self.work


def v_phi_solve(profile: Profile, field: ElasticField, phi) -> SurfaceSourceResponse:
    """Solve int C E(v) : E(w) = int_Gamma div_Gamma(phi C E(u)) . w for v vanishing on the substrate.

    The right side is used in its integrated-by-parts form
    -int_Gamma phi C E(u) : D_Gamma w (the traction C E(u) nu vanishes on the free surface).
    """
    if not field.solved:
        raise StateError("elastic field has not been solved")
    if not field.matches(profile):
        raise InvalidInputError("elastic field was solved on a different profile/mesh")
    phi = np.asarray(phi, dtype=float)
    mesh = field.mesh
    if phi.shape != (mesh.nx,):
        raise InvalidInputError(f"phi must have one value per surface node ({mesh.nx})")
    top = np.arange(mesh.nx) * mesh.ny + (mesh.ny - 1)
    ue = _element_values(mesh, field.periodic_part)[top]
    _, _, E_top = _top_edge_gradients(mesh, ue, field.params.e0, _GP)
    sigma = _stress(E_top, field.params)  # (nx, 2, 2, 2)
    hL = mesh.heights
    hR = np.roll(mesh.heights, -1)
    t = np.stack([np.full(mesh.nx, mesh.dx), hR - hL], axis=-1)
    t /= np.linalg.norm(t, axis=-1, keepdims=True)
    phiL, phiR = phi, np.roll(phi, -1)
    phig = np.stack([phiL * (1 - g) / 2 + phiR * (1 + g) / 2 for g in _GP], axis=1)  # (nx, 2)
    traction = np.einsum("egrk,ek->egr", sigma, t)
    coef = 0.5 * np.einsum("eg,egr->er", phig, traction)  # multiplies (w_R - w_L)
    rhs = np.zeros(mesh.ndof)
    top_row = mesh.ny  # free-node row index ny-1 in the dof numbering
    left = (top_row - 1) * mesh.nx + np.arange(mesh.nx)
    right = (top_row - 1) * mesh.nx + (np.arange(mesh.nx) + 1) % mesh.nx
    for r in range(2):
        np.add.at(rhs, 2 * right + r, -coef[:, r])
        np.add.at(rhs, 2 * left + r, coef[:, r])
    v = field.solve_linear(rhs)
    work = float(v @ (field._stiffness @ v))
    disp = np.zeros((mesh.nx, mesh.ny + 1, 2))
    disp[:, 1:, :] = v.reshape(mesh.ny, mesh.nx, 2).transpose(1, 0, 2)
    return SurfaceSourceResponse(periodic_part=v, displacement=disp, work=work)
