"""Jacobi-preconditioned conjugate gradients and the penalty contact solve."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from ..errors import ConfigError, SolverError
from .fem import HUB, SENSOR, Mesh, TireGeometry, assemble_stiffness, build_mesh, symmetry_dofs


def pcg(A, b, tol=1e-8, maxiter=None, x0=None):
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Returns ``(x, residual_history)`` where the history holds relative residual
    norms ``|b - A x| / |b|``. Raises ``SolverError`` (with that history) if the
    tolerance is not met within ``maxiter`` iterations.
    """
    b = np.asarray(b, dtype=np.float64)
    n = len(b)
    maxiter = 20 * n if maxiter is None else maxiter
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n), [0.0]
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("matrix has a non-positive diagonal entry")
    minv = 1.0 / diag
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - A @ x
    z = minv * r
    p = z.copy()
    rz = r @ z
    history = [np.linalg.norm(r) / bnorm]
    for _ in range(maxiter):
        if history[-1] < tol:
            return x, history
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise SolverError("matrix is not positive definite along a search direction", history)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        history.append(np.linalg.norm(r) / bnorm)
        z = minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if history[-1] < tol:
        return x, history
    raise SolverError(f"CG did not reach {tol:g} in {maxiter} iterations "
                      f"(last residual {history[-1]:.3g})", history)


@dataclass
class FemModel:
    """Tire annulus, its materials, the rigid ground and the penalty setting.

    The ground is the horizontal line ``y = ground_y`` (default: touching the
    bottom of the unloaded tire). The hub load acts in ``-y``.
    """

    geometry: TireGeometry = field(default_factory=TireGeometry)
    n_r: int = 8
    n_c: int = 256
    materials: tuple = (HUB, SENSOR)
    penalty_scale: float = 1e3
    ground_y: float | None = None
    tol: float = 1e-12  # relative CG residual; K is badly conditioned (stiff skin, soft hub, penalty)
    max_active_iter: int = 50

    def __post_init__(self):
        if self.penalty_scale <= 0:
            raise ConfigError("penalty_scale must be positive")
        if self.ground_y is None:
            self.ground_y = -self.geometry.r_out

    @cached_property
    def mesh(self) -> Mesh:
        return build_mesh(self.geometry, self.n_r, self.n_c)

    @cached_property
    def K(self):
        return assemble_stiffness(self.mesh, self.materials)

    @property
    def penalty(self):
        return float(self.penalty_scale * self.K.diagonal().max())

    @cached_property
    def free_dofs(self):
        fixed = symmetry_dofs(self.mesh)
        return np.setdiff1d(np.arange(2 * self.mesh.n_nodes), fixed)

    def gaps(self):
        """Signed vertical gap ``d_i = ground_y - y_i`` of each contact node (<= 0 above ground)."""
        return self.ground_y - self.mesh.nodes[self.mesh.contact_nodes, 1]

    def hub_load(self, force_N):
        """Nodal load vector: ``force_N / width`` spread evenly over the hub nodes, pointing down."""
        f = np.zeros(2 * self.mesh.n_nodes)
        hub = self.mesh.hub_nodes
        f[2 * hub + 1] = -force_N / self.geometry.width / len(hub)
        return f


@dataclass
class ContactResult:
    force_N: float
    displacement: np.ndarray  # (n_nodes, 2)
    hub_drop: float
    offset: float
    active: np.ndarray  # bool per contact node
    penalty: float
    energy: dict
    active_iterations: int
    residuals: list

    def summary(self):
        return {"force_N": self.force_N, "hub_drop_mm": self.hub_drop, "offset_mm": self.offset,
                "n_active": int(self.active.sum()), "penalty": self.penalty, **self.energy,
                "active_iterations": self.active_iterations}


def _offset(model: FemModel, u):
    mesh = model.mesh
    hub_mean = u[mesh.hub_nodes].mean(axis=0)
    outer = mesh.contact_nodes
    normal = mesh.nodes[outer] / np.linalg.norm(mesh.nodes[outer], axis=1, keepdims=True)
    inward = -np.einsum("ij,ij->i", u[outer] - hub_mean, normal)
    return max(0.0, float(inward.max()))


def _solve_linear(model, k, active, f_ext, x0):
    """One constrained linear solve with penalty springs on the ``active`` contact nodes."""
    mesh = model.mesh
    ydofs = 2 * mesh.contact_nodes[active] + 1
    n = 2 * mesh.n_nodes
    spring = np.zeros(n)
    spring[ydofs] = k
    rhs = f_ext.copy()
    rhs[ydofs] += k * model.gaps()[active]
    A = model.K + sp.diags(spring)
    free = model.free_dofs
    Aff = A[free][:, free].tocsr()
    xf, hist = pcg(Aff, rhs[free], tol=model.tol, x0=None if x0 is None else x0[free])
    u = np.zeros(n)
    u[free] = xf
    return u, hist


def solve_contact(model: FemModel, force_N, active=None) -> ContactResult:
    """Frictionless penalty contact with the rigid ground under a hub load.

    Active-set iteration: a contact node carries a spring while it penetrates
    the ground. Passing a boolean ``active`` array freezes the set, which
    makes the problem linear in ``force_N``.
    """
    if force_N < 0:
        raise ValueError("force must be non-negative")
    mesh = model.mesh
    n_nodes = mesh.n_nodes
    d = model.gaps()
    fixed_set = active is not None
    act = (np.asarray(active, bool).copy() if fixed_set else d >= -1e-12)
    if force_N == 0:
        return ContactResult(0.0, np.zeros((n_nodes, 2)), 0.0, 0.0, np.zeros_like(act), model.penalty,
                             {"strain_energy": 0.0, "penalty_energy": 0.0, "external_work": 0.0,
                              "energy_balance_rel": 0.0}, 0, [0.0])
    f_ext = model.hub_load(force_N)
    k = model.penalty
    history = []
    for attempt in range(6):
        try:
            u, x0 = None, None
            for it in range(1, model.max_active_iter + 1):
                u, hist = _solve_linear(model, k, act, f_ext, x0)
                history.extend(hist)
                x0 = u
                if fixed_set:
                    break
                new = d - u[2 * mesh.contact_nodes + 1] > 0
                if np.array_equal(new, act):
                    break
                act = new
            else:
                raise SolverError("active set did not settle", history)
            break
        except SolverError as exc:
            history.extend(exc.residuals)
            if attempt == 5 or "active set" in str(exc):
                raise SolverError(str(exc), history) from None
            k *= 0.5  # ill-conditioned: soften the penalty and retry
    U = u.reshape(-1, 2)
    hub_drop = float(-U[mesh.hub_nodes, 1].mean())
    pen = np.where(act, d - U[mesh.contact_nodes, 1], 0.0)
    strain = 0.5 * float(u @ (model.K @ u))
    pen_e = 0.5 * k * float(pen @ pen)
    work = 0.5 * force_N / model.geometry.width * hub_drop
    energy = {"strain_energy": strain, "penalty_energy": pen_e, "external_work": work,
              "energy_balance_rel": abs(work - strain - pen_e) / work}
    return ContactResult(float(force_N), U, hub_drop, _offset(model, U), act, k, energy, it, history)
