"""Reference problems with closed-form answers, used to verify the element and solver."""
from __future__ import annotations

import numpy as np

from .fem import (Material, assemble_stiffness, element_stiffness, element_strains,
                  single_layer_mesh)
from .solver import FemModel, pcg, solve_contact

THIN_RING_COEFF = 0.1488  # diameter change of a ring under diametral point loads, in F R^3 / (E I)


def linear_field(xy, a):
    """Displacement ``u = (a0 + a1 x + a2 y, a3 + a4 x + a5 y)`` at points ``xy``."""
    x, y = xy[:, 0], xy[:, 1]
    return np.stack([a[0] + a[1] * x + a[2] * y, a[3] + a[4] * x + a[5] * y], axis=1)


def patch_test(mesh, material: Material, a):
    """Impose a linear field on the boundary nodes and solve for the interior.

    Returns the maximum nodal error against the exact field and the maximum
    stress error at the Gauss points, both absolute.
    """
    K = assemble_stiffness(mesh, (material,) * (mesh.material_id.max() + 1)).tocsr()
    exact = linear_field(mesh.nodes, a).ravel()
    boundary = np.concatenate([mesh.ring(0), mesh.ring(mesh.n_r)])
    bdofs = np.sort(np.concatenate([2 * boundary, 2 * boundary + 1]))
    free = np.setdiff1d(np.arange(len(exact)), bdofs)
    u = exact.copy()
    if len(free):
        rhs = -K[free][:, bdofs] @ exact[bdofs]
        u[free], _ = pcg(K[free][:, free].tocsr(), rhs, tol=1e-14)
    D = material.plane_strain()
    eps_exact = np.array([a[1], a[5], a[2] + a[4]])
    stress_err = 0.0
    for conn in mesh.elements:
        dofs = np.stack([2 * conn, 2 * conn + 1], axis=1).ravel()
        eps, _ = element_strains(mesh.nodes[conn], u[dofs], D)
        stress_err = max(stress_err, float(np.abs((eps - eps_exact) @ D.T).max()))
    return float(np.abs(u - exact).max()), stress_err


def unit_square_patch(material: Material, a):
    """Single unit-square element with every node prescribed: stress error of the recovered field."""
    xy = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    u = linear_field(xy, a).ravel()
    D = material.plane_strain()
    eps, alpha = element_strains(xy, u, D)
    K = element_stiffness(xy, D)
    exact = D @ np.array([a[1], a[5], a[2] + a[4]])
    return float(np.abs(eps @ D.T - exact).max()), float(np.abs(alpha).max()), K @ u


def thin_ring_pinch(R=100.0, t=2.0, material=Material(1.0, 0.3), force=1e-3, n_r=2, n_c=256):
    """Ring of mean radius ``R`` squeezed by opposing point loads along a diameter.

    The load (per unit thickness) is spread over the radial node lines at the
    top and bottom. Symmetry fixes ``u_x`` on the vertical diameter and
    ``u_y`` on the horizontal one. Returns ``(fem_shortening, analytic)`` where the
    analytic value uses the plane-strain modulus ``E / (1 - nu^2)`` and
    ``I = t^3 / 12``.
    """
    mesh = single_layer_mesh(R - t / 2, R + t / 2, n_r, n_c)
    K = assemble_stiffness(mesh, (material,)).tocsr()
    col = np.arange(n_r + 1) * n_c
    bottom, top = col, col + n_c // 2
    side = np.concatenate([col + n_c // 4, col + 3 * n_c // 4])
    fixed = np.concatenate([2 * bottom, 2 * top, 2 * side + 1])
    f = np.zeros(2 * mesh.n_nodes)
    f[2 * bottom + 1] = force / len(bottom)
    f[2 * top + 1] = -force / len(top)
    free = np.setdiff1d(np.arange(len(f)), fixed)
    u = np.zeros(len(f))
    u[free], _ = pcg(K[free][:, free].tocsr(), f[free], tol=1e-12)
    shortening = float(u[2 * bottom + 1].mean() - u[2 * top + 1].mean())
    E_eff = material.E / (1 - material.nu ** 2)
    analytic = THIN_RING_COEFF * force * R ** 3 / (E_eff * t ** 3 / 12)
    return shortening, analytic


def energy_audit(model: FemModel, force_N, n_steps=20):
    """Compare stored energy at ``force_N`` with the work done along the load path.

    ``path_work`` integrates hub load against hub drop over ``n_steps``
    increments (trapezoid rule). ``clapeyron_work`` is the one-shot
    ``F * hub_drop / 2``, exact only while the contact set does not change.
    """
    forces = np.linspace(0.0, force_N, n_steps + 1)
    results = [solve_contact(model, F) for F in forces]
    drops = np.array([r.hub_drop for r in results])
    path_work = float(np.trapezoid(forces / model.geometry.width, drops))
    final = results[-1]
    stored = final.energy["strain_energy"] + final.energy["penalty_energy"]
    clap = final.energy["external_work"]
    return {"force_N": float(force_N), "stored_energy": stored, "path_work": path_work,
            "path_balance_rel": abs(path_work - stored) / stored,
            "clapeyron_work": clap, "clapeyron_balance_rel": abs(clap - stored) / stored,
            "n_steps": n_steps}
