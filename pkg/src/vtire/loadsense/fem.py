"""Plane-strain finite elements for the two-layer tire annulus.

Elements are 4-node quadrilaterals enriched with Wilson-Taylor incompatible
modes (QM6): two internal bubble modes per displacement component that let a
coarse quad bend without shear locking. The internal modes are evaluated with
the centre Jacobian (Taylor's correction, so the patch test is exact) and
condensed out element by element, leaving an ordinary 8x8 stiffness.

Units: mm, N, MPa. Everything is per unit out-of-plane thickness (1 mm).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import AssemblyError, ConfigError

GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)
# counterclockwise reference corners
XI = np.array([-1.0, 1.0, 1.0, -1.0])
ETA = np.array([-1.0, -1.0, 1.0, 1.0])


@dataclass(frozen=True)
class Material:
    E: float  # MPa
    nu: float

    def __post_init__(self):
        if not self.E > 0:
            raise ConfigError(f"Young's modulus must be positive, got {self.E}")
        if not 0 < self.nu < 0.5:
            raise ConfigError(f"Poisson ratio must lie in (0, 0.5), got {self.nu}")

    def plane_strain(self):
        E, v = self.E, self.nu
        c = E / ((1 + v) * (1 - 2 * v))
        return c * np.array([[1 - v, v, 0.0], [v, 1 - v, 0.0], [0.0, 0.0, (1 - 2 * v) / 2]])


HUB = Material(0.1973, 0.48)
SENSOR = Material(24.06, 0.49)
# (hub, sensor layer) pairs; "swapped" is the other reading of which layer gets which modulus
MATERIAL_PRESETS = {"paper": (HUB, SENSOR), "swapped": (SENSOR, HUB)}


@dataclass(frozen=True)
class TireGeometry:
    r_in: float = 30.0
    r_layer: float = 80.0
    r_out: float = 85.0
    width: float = 50.0  # effective tire width (mm) converting N to N per mm

    def __post_init__(self):
        if not 0 < self.r_in < self.r_layer < self.r_out:
            raise ConfigError("need 0 < r_in < r_layer < r_out")
        if self.width <= 0:
            raise ConfigError("width must be positive")


@dataclass
class Mesh:
    nodes: np.ndarray  # (n_nodes, 2)
    elements: np.ndarray  # (n_elem, 4) node ids, counterclockwise
    material_id: np.ndarray  # (n_elem,) index into the materials tuple
    n_r: int
    n_c: int
    radii: np.ndarray  # node ring radii, length n_r + 1
    tags: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return len(self.nodes)

    def ring(self, i):
        return np.arange(i * self.n_c, (i + 1) * self.n_c)

    @property
    def hub_nodes(self):
        return self.tags["hub_boundary"]

    @property
    def contact_nodes(self):
        return self.tags["contact_candidates"]

    def theta(self):
        return -np.pi / 2 + 2 * np.pi * np.arange(self.n_c) / self.n_c


def build_mesh(geometry: TireGeometry = TireGeometry(), n_r=8, n_c=256, n_sensor=None):
    """Structured annular grid: node ``(i, j)`` sits at ring ``i`` (inner to outer)
    and angle ``-pi/2 + 2*pi*j/n_c`` (j = 0 is the bottom, nearest the ground).

    The outermost ``n_sensor`` element rings (default ``max(1, n_r // 4)``) form
    the sensor layer, so the layer boundary always lies on element edges.
    """
    if n_r < 2 or n_c < 16:
        raise ConfigError("need n_r >= 2 and n_c >= 16")
    if n_c % 4:
        raise ConfigError("n_c must be divisible by 4 so the symmetry lines carry nodes")
    n_s = max(1, n_r // 4) if n_sensor is None else int(n_sensor)
    if not 1 <= n_s < n_r:
        raise ConfigError("the sensor layer needs at least one element ring and the hub one")
    g = geometry
    radii = np.concatenate([np.linspace(g.r_in, g.r_layer, n_r - n_s + 1),
                            np.linspace(g.r_layer, g.r_out, n_s + 1)[1:]])
    th = -np.pi / 2 + 2 * np.pi * np.arange(n_c) / n_c
    R, T = np.meshgrid(radii, th, indexing="ij")
    nodes = np.stack([R * np.cos(T), R * np.sin(T)], axis=-1).reshape(-1, 2)
    i, j = np.meshgrid(np.arange(n_r), np.arange(n_c), indexing="ij")
    i, j = i.ravel(), j.ravel()
    jn = (j + 1) % n_c
    elements = np.stack([i * n_c + j, (i + 1) * n_c + j, (i + 1) * n_c + jn, i * n_c + jn], axis=1)
    material_id = (i >= n_r - n_s).astype(int)  # 0 hub, 1 sensor layer
    mesh = Mesh(nodes, elements, material_id, n_r, n_c, radii)
    mesh.tags["hub_boundary"] = mesh.ring(0)
    mesh.tags["contact_candidates"] = mesh.ring(n_r)
    return mesh


def single_layer_mesh(r_in, r_out, n_r, n_c):
    """Annulus of one material (``material_id`` all zero), e.g. a thin ring."""
    mesh = build_mesh(TireGeometry(r_in, 0.5 * (r_in + r_out), r_out), n_r, n_c, n_sensor=1)
    radii = np.linspace(r_in, r_out, n_r + 1)
    th = mesh.theta()
    R, T = np.meshgrid(radii, th, indexing="ij")
    mesh.nodes = np.stack([R * np.cos(T), R * np.sin(T)], axis=-1).reshape(-1, 2)
    mesh.radii = radii
    mesh.material_id = np.zeros(len(mesh.elements), dtype=int)
    return mesh


def _shape_derivs(xi, eta):
    """dN/dxi and dN/deta for the 4 corners, shape (2, 4)."""
    return 0.25 * np.array([XI * (1 + ETA * eta), ETA * (1 + XI * xi)])


def element_stiffness(xy, D, return_parts=False):
    """Condensed 8x8 QM6 stiffness for corner coordinates ``xy`` (4, 2).

    DOF order is ``(u0, v0, u1, v1, ...)``. Raises ``AssemblyError`` on a
    non-positive Jacobian at any Gauss point.
    """
    xy = np.asarray(xy, dtype=np.float64)
    J0 = _shape_derivs(0.0, 0.0) @ xy
    det0 = np.linalg.det(J0)
    if det0 <= 0:
        raise AssemblyError("non-positive Jacobian at element centre")
    J0inv = np.linalg.inv(J0)
    Kuu = np.zeros((8, 8))
    Kua = np.zeros((8, 4))
    Kaa = np.zeros((4, 4))
    for xi in GAUSS:
        for eta in GAUSS:
            dN = _shape_derivs(xi, eta)
            J = dN @ xy
            detJ = np.linalg.det(J)
            if detJ <= 0:
                raise AssemblyError("non-positive Jacobian at a Gauss point")
            dNxy = np.linalg.solve(J, dN)  # (2, 4): d/dx, d/dy
            B = np.zeros((3, 8))
            B[0, 0::2] = dNxy[0]
            B[1, 1::2] = dNxy[1]
            B[2, 0::2] = dNxy[1]
            B[2, 1::2] = dNxy[0]
            # incompatible modes P1 = 1 - xi^2, P2 = 1 - eta^2 with the centre Jacobian
            dP = np.array([[-2 * xi, 0.0], [0.0, -2 * eta]])
            dPxy = (det0 / detJ) * (J0inv @ dP)
            G = np.zeros((3, 4))
            G[0, 0:2] = dPxy[0]
            G[1, 2:4] = dPxy[1]
            G[2, 0:2] = dPxy[1]
            G[2, 2:4] = dPxy[0]
            w = detJ
            Kuu += B.T @ D @ B * w
            Kua += B.T @ D @ G * w
            Kaa += G.T @ D @ G * w
    K = Kuu - Kua @ np.linalg.solve(Kaa, Kua.T)
    K = 0.5 * (K + K.T)
    if return_parts:
        return K, Kua, Kaa
    return K


def element_strains(xy, u_e, D):
    """Strains ``(4 Gauss points, 3)`` including recovered incompatible modes."""
    K, Kua, Kaa = element_stiffness(xy, D, return_parts=True)
    alpha = -np.linalg.solve(Kaa, Kua.T @ u_e)
    J0 = _shape_derivs(0.0, 0.0) @ xy
    det0, J0inv = np.linalg.det(J0), np.linalg.inv(J0)
    out = []
    for xi in GAUSS:
        for eta in GAUSS:
            dN = _shape_derivs(xi, eta)
            J = dN @ xy
            dNxy = np.linalg.solve(J, dN)
            ux = u_e[0::2]
            uy = u_e[1::2]
            dPxy = (det0 / np.linalg.det(J)) * (J0inv @ np.array([[-2 * xi, 0.0], [0.0, -2 * eta]]))
            gx = dNxy @ ux + dPxy @ alpha[0:2]  # (d/dx, d/dy) of u_x
            gy = dNxy @ uy + dPxy @ alpha[2:4]
            out.append([gx[0], gy[1], gx[1] + gy[0]])
    return np.array(out), alpha


def assemble_stiffness(mesh: Mesh, materials=(HUB, SENSOR)):
    """Global sparse stiffness (CSR), symmetric, 2 DOF per node."""
    Ds = [m.plane_strain() for m in materials]
    n_dof = 2 * mesh.n_nodes
    rows, cols, vals = [], [], []
    for e, conn in enumerate(mesh.elements):
        try:
            Ke = element_stiffness(mesh.nodes[conn], Ds[mesh.material_id[e]])
        except AssemblyError as exc:
            raise AssemblyError(f"element {e}: {exc}", element=e) from None
        dofs = np.empty(8, dtype=int)
        dofs[0::2] = 2 * conn
        dofs[1::2] = 2 * conn + 1
        rows.append(np.repeat(dofs, 8))
        cols.append(np.tile(dofs, 8))
        vals.append(Ke.ravel())
    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_dof, n_dof))
    K.sum_duplicates()
    return K


def jacobians_positive(mesh: Mesh):
    for conn in mesh.elements:
        xy = mesh.nodes[conn]
        for xi in GAUSS:
            for eta in GAUSS:
                if np.linalg.det(_shape_derivs(xi, eta) @ xy) <= 0:
                    return False
    return True


def symmetry_dofs(mesh: Mesh):
    """x-DOFs of every node on the vertical symmetry line (angles -pi/2 and pi/2)."""
    nodes = np.concatenate([np.arange(mesh.n_r + 1) * mesh.n_c,
                            np.arange(mesh.n_r + 1) * mesh.n_c + mesh.n_c // 2])
    return np.sort(2 * nodes)
