"""The spinor / three-form / torsion correspondence over a fixed flat metric.

A unit pair (U, u) with |U|^2 + u^2 = 1 encodes the unit spinor
U.psibar + u psibar over a base structure; threeform_from_pair gives the
induced three-form directly in terms of the base form, torsion_from_pair
gives the full torsion in terms of the base torsion, and
torsion_from_form_gradient recovers the torsion independently from the
defining relation  d_a phi_bcd = 2 T_a^e (star phi)_ebcd  by contraction.
The two torsion routes are deliberately independent of each other and are
cross-checked in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import algebra as al
from . import grid as gr

# (star phi)_{ebcd}(star phi)_{fbcd} = 24 delta_ef fixes the contraction
# constant of the oracle: T_a^f = (1/48) (d_a phi_bcd)(star phi)^{fbcd}.
# On sorted triples the full bcd-sum is 3! times the sorted sum.
_ORACLE_SCALE = 6.0 / (2.0 * al.STAR_CONTRACTION)

PAIR_TOL = 1e-10


def check_pair(U, u, tol: float = PAIR_TOL) -> None:
    """Validate the unit-sphere constraint |U|^2 + u^2 = 1 pointwise."""
    U = np.asarray(U, dtype=float)
    u = np.asarray(u, dtype=float)
    dev = np.max(np.abs(np.sum(U * U, axis=-1) + u * u - 1.0))
    if dev > tol:
        raise ValueError(f"unit pair constraint violated by {dev:.3e}")


def pair_to_spinor(U, u) -> np.ndarray:
    """Spinor components of U.psibar + u psibar (base spinor (1,0,...,0))."""
    U = np.asarray(U, dtype=float)
    u = np.asarray(u, dtype=float)
    psi = np.empty(np.broadcast_shapes(U.shape[:-1], u.shape) + (8,))
    psi[..., 0] = u
    psi[..., 1:] = -U  # gamma(X) psibar = -X under the fixed Clifford sign
    return psi


def spinor_to_pair(psi) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of pair_to_spinor; valid for any unit spinor field."""
    psi = np.asarray(psi, dtype=float)
    return -psi[..., 1:].copy(), psi[..., 0].copy()


def compose_pair(U, u, psi_base) -> np.ndarray:
    """Spinor U . psi_base + u psi_base for a pointwise base spinor field."""
    return al.clifford_mul(U, psi_base) + np.asarray(u)[..., None] * psi_base


def threeform_from_pair(U, u, base_form=None, validate: bool = True):
    """Three-form of the structure induced by a unit pair over a base form.

    (u^2 - |U|^2) phibar + 2u star(phibar ^ U) + 2 (U int phibar) ^ U,
    with phibar the base three-form (sorted comps; defaults to phi0).
    """
    U = np.asarray(U, dtype=float)
    u = np.asarray(u, dtype=float)
    if validate:
        check_pair(U, u)
    phibar = al.tables().phi0.astype(float) if base_form is None else np.asarray(base_form)
    u2 = u * u - np.sum(U * U, axis=-1)
    out = u2[..., None] * phibar
    out = out + 2.0 * u[..., None] * al.star_of_wedge(phibar, U)
    out = out + 2.0 * al.wedge(al.interior3(U, phibar), U, 2, 1)
    return out


# ---------------------------------------------------------------------------
# stable-form analysis (Hitchin construction of the metric from a 3-form)


@dataclass
class StableFormReport:
    """Pointwise linear-algebra data of a 3-form: the 7-form-valued bilinear
    form b, the volume density eps, the normalized metric g, and positivity
    flags.  Arrays broadcast over the leading (grid) axes; where a point is
    not stable, eps and g hold NaN.
    """

    b: np.ndarray            # (..., 7, 7)
    eps: np.ndarray          # (...)
    g: np.ndarray            # (..., 7, 7)
    is_stable: np.ndarray    # (...) bool
    is_positive: np.ndarray  # (...) bool

    @property
    def all_positive(self) -> bool:
        return bool(np.all(self.is_positive))

    def metric_deviation(self) -> float:
        """max |g - identity| over all points; inf if any point is unstable."""
        if not bool(np.all(self.is_stable)):
            return float("inf")
        return float(np.max(np.abs(self.g - np.eye(7))))


DEGENERACY_TOL = 1e-14
SYLVESTER_TOL = 1e-12


def stable_form_analysis(phi, degeneracy_tol: float = DEGENERACY_TOL) -> StableFormReport:
    """Metric data of a 3-form via 6 b(X,Y) = (X int phi)^(Y int phi)^phi.

    The 7-form values are identified with densities against e1^...^e7;
    eps = det(b)^(1/9) (real ninth root), g = b / eps.  Positivity is decided
    by Sylvester's criterion on g.
    """
    phi = np.asarray(phi, dtype=float)
    ia = np.einsum("apt,...t->...ap", al.INTERIOR3.astype(float), phi)  # (...,7,21)
    w22 = al.wedge_table(2, 2).astype(float)                            # (35,21,21)
    half = np.einsum("spq,...ap->...asq", w22, ia)                      # (...,7,35,21)
    quad = np.einsum("...asq,...bq->...abs", half, ia)                  # (...,7,7,35)
    pair43 = al.wedge_table(4, 3)[0].astype(float)                      # (35,35)
    vol_of_quad = np.einsum("st,...t->...s", pair43, phi)               # (...,35)
    b = np.einsum("...abs,...s->...ab", quad, vol_of_quad) / 6.0

    det = np.linalg.det(b)
    is_stable = np.abs(det) > degeneracy_tol
    eps = np.where(is_stable, np.sign(det) * np.abs(det) ** (1.0 / 9.0), np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        g = b / eps[..., None, None]

    is_positive = is_stable & (eps > 0)
    with np.errstate(invalid="ignore"):
        for k in range(1, 8):
            minors = g[..., 0, 0] if k == 1 else np.linalg.det(g[..., :k, :k])
            is_positive = is_positive & (np.nan_to_num(minors, nan=-1.0) > SYLVESTER_TOL)
    return StableFormReport(b=b, eps=eps, g=g, is_stable=is_stable, is_positive=is_positive)


# ---------------------------------------------------------------------------
# torsion


def torsion_from_pair(U, u, grad_U, grad_u, base_torsion=None, base_form_dense=None):
    """Full torsion of the structure induced by a unit pair over a base.

    T_ab = u dU_ab - du_a U_b + (dU)_a^m U^n phibar_mnb
         + (u^2 - |U|^2) Tbar_ab + 2 Tbar_am U^m U_b - 2u U^m Tbar_a^n phibar_mnb

    grad_U[..., a, b] = d_a U_b and grad_u[..., a] = d_a u are supplied by the
    caller (finite differences on grids, exact derivatives in tests).
    base_form_dense is the dense (..., 7,7,7) base three-form; None means the
    constant reference form.  base_torsion None means a torsion-free base.
    """
    U = np.asarray(U, dtype=float)
    u = np.asarray(u, dtype=float)
    grad_U = np.asarray(grad_U, dtype=float)
    grad_u = np.asarray(grad_u, dtype=float)

    if base_form_dense is None:
        phid = al.tables().phi0_dense.astype(float)
        contract = lambda A, B: np.einsum("...am,...n,mnb->...ab", A, B, phid)
        contract2 = lambda A, B: np.einsum("...m,...an,mnb->...ab", A, B, phid)
    else:
        phid = np.asarray(base_form_dense, dtype=float)
        contract = lambda A, B: np.einsum("...am,...n,...mnb->...ab", A, B, phid)
        contract2 = lambda A, B: np.einsum("...m,...an,...mnb->...ab", A, B, phid)

    T = u[..., None, None] * grad_U
    T = T - grad_u[..., :, None] * U[..., None, :]
    T = T + contract(grad_U, U)
    if base_torsion is not None:
        Tbar = np.asarray(base_torsion, dtype=float)
        coef = (u * u - np.sum(U * U, axis=-1))[..., None, None]
        T = T + coef * Tbar
        T = T + 2.0 * np.einsum("...am,...m,...b->...ab", Tbar, U, U)
        T = T - 2.0 * u[..., None, None] * contract2(U, Tbar)
    return T


def torsion_from_pair_on_grid(grid: gr.GridShape, U, u, base_torsion=None,
                              base_form_dense=None, order: int = 2):
    """torsion_from_pair with grid finite-difference gradients of (U, u)."""
    U = np.asarray(U)
    if U.shape != grid.sizes + (7,):
        raise ValueError(f"field shape {U.shape} does not match grid {grid.sizes}")
    if base_torsion is not None and np.asarray(base_torsion).shape != grid.sizes + (7, 7):
        raise ValueError("background torsion lives on a different grid")
    grad_U = gr.grad_vec(grid, U, order)
    grad_u = gr.grad_scalar(grid, u, order)
    return torsion_from_pair(U, u, grad_U, grad_u, base_torsion, base_form_dense)


def _star_expanded(phi_comps):
    """(star phi)_{f, T} for sorted triples T: shape (..., 7, 35)."""
    star = al.hodge_star_3(phi_comps)
    return np.einsum("ftq,...q->...ft", al.INTERIOR4.astype(float), star)


def torsion_from_form_gradient(grid: gr.GridShape, phi_field, order: int = 2,
                               flatness_tol: float = 1e-6):
    """Invert d_a phi_bcd = 2 T_a^e (star phi)_ebcd by contraction.

    Valid only for fields of three-forms compatible with the flat metric;
    refuses otherwise.  The gradient is the periodic finite difference, so the
    result carries the stencil's truncation error.
    """
    phi_field = np.asarray(phi_field, dtype=float)
    report = stable_form_analysis(phi_field)
    dev = report.metric_deviation()
    if dev > flatness_tol:
        raise ValueError(f"three-form field is not flat-compatible (metric deviation {dev:.3e})")
    star_exp = _star_expanded(phi_field)  # (..., 7, 35)
    T = np.empty(phi_field.shape[:-1] + (7, 7))
    for a in range(7):
        dphi = gr.partial(grid, phi_field, a, order)  # (..., 35)
        T[..., a, :] = _ORACLE_SCALE * np.einsum("...t,...ft->...f", dphi, star_exp)
    return T
