"""Time integration of the isometric flow in its two equivalent forms.

The vector-field form evolves the chart field U (with u recomputed from the
sphere constraint each stage); the spinor form evolves the unit spinor field
directly and renormalizes after each full step.  Both use classical RK4 under
a parabolic step-size bound.

A Background fixes the base structure: either the constant reference form
(zero torsion) or a "twisted" structure induced by a fixed unit pair field
(W, w), whose torsion is cached and cross-checked at construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import algebra as al
from . import grid as gr
from . import structures as st

CLAMP_RADIUS = 0.99
ENERGY_RISE_TOL = 1e-10


class ChartExit(RuntimeError):
    """|U| crossed the clamp radius: the chart u = sqrt(1-|U|^2) is leaving
    its domain of validity.  Reported, never silently clamped."""


class NumericalAbort(RuntimeError):
    """Non-finite values appeared in the state."""


@dataclass(frozen=True)
class Background:
    """Base G2-structure of a run: form field, cached torsion, cross product."""

    grid: gr.GridShape
    kind: str                                  # "constant" | "twisted"
    phibar: np.ndarray | None = None           # (..., 35) or None for phi0
    phibar_dense: np.ndarray | None = None     # (..., 7,7,7) or None
    torsion: np.ndarray | None = None          # (..., 7, 7) or None for zero
    pair: tuple[np.ndarray, np.ndarray] | None = None

    @staticmethod
    def constant(grid: gr.GridShape) -> "Background":
        return Background(grid=grid, kind="constant")

    @staticmethod
    def twisted(grid: gr.GridShape, W, w, order: int = 2) -> "Background":
        """Background induced by the unit pair field (W, w) over the constant
        base; its torsion is computed once and cached.

        The pair may take values on the whole unit sphere (w of any sign);
        only flow states are confined to the w > 0 chart.
        """
        st.check_pair(W, w)
        phibar = st.threeform_from_pair(W, w)
        Tbar = st.torsion_from_pair_on_grid(grid, W, w, order=order)
        return Background(grid=grid, kind="twisted", phibar=phibar,
                          phibar_dense=al.dense3(phibar), torsion=Tbar,
                          pair=(np.asarray(W, float), np.asarray(w, float)))

    def cross(self, X, Y):
        return al.cross(X, Y, self.phibar_dense)

    def base_spinor(self) -> np.ndarray:
        """Pointwise base spinor field (constant reference spinor if untwisted)."""
        if self.kind == "constant":
            psi = np.zeros(self.grid.sizes + (8,))
            psi[..., 0] = 1.0
            return psi
        return st.pair_to_spinor(*self.pair)


def chart_u(U, clamp: float = CLAMP_RADIUS):
    """u = sqrt(1 - |U|^2); raises ChartExit when |U| crosses the clamp."""
    U = np.asarray(U, dtype=float)
    n2 = np.sum(U * U, axis=-1)
    mx = float(np.max(n2)) if n2.size else 0.0
    if not np.isfinite(mx):
        raise NumericalAbort("non-finite state")
    if mx > clamp * clamp:
        raise ChartExit(f"max |U| = {np.sqrt(mx):.6f} exceeds clamp radius {clamp}")
    return np.sqrt(1.0 - n2)


@dataclass
class RhsData:
    """One right-hand-side evaluation with its reusable diagnostics."""

    rhs: np.ndarray
    torsion: np.ndarray
    div_torsion: np.ndarray
    energy: float
    div_l2: float


def vector_rhs_full(grid: gr.GridShape, U, bg: Background, order: int = 2,
                    clamp: float = CLAMP_RADIUS) -> RhsData:
    """dU/dt = -div(T) x U + u div(T) together with energy diagnostics."""
    u = chart_u(U, clamp)
    T = st.torsion_from_pair_on_grid(grid, U, u, bg.torsion, bg.phibar_dense, order)
    divT = gr.div_tensor2(grid, T, order)
    rhs = -bg.cross(divT, U) + u[..., None] * divT
    energy = 0.5 * gr.inner_l2(grid, T, T)
    return RhsData(rhs=rhs, torsion=T, div_torsion=divT, energy=energy,
                   div_l2=gr.norm_l2(grid, divT))


def rhs_vector_flow(grid: gr.GridShape, U, bg: Background, order: int = 2) -> np.ndarray:
    return vector_rhs_full(grid, U, bg, order).rhs


def spinor_rhs_full(grid: gr.GridShape, psi, order: int = 2,
                    unit_tol: float = 1e-8) -> RhsData:
    """dpsi/dt = div(T) . psi; the torsion comes from the global chart of psi.

    Tangency (rhs, psi) = 0 holds pointwise because Clifford multiplication
    by a vector is skew.
    """
    psi = np.asarray(psi, dtype=float)
    nrm2 = np.sum(psi * psi, axis=-1)
    if float(np.max(np.abs(nrm2 - 1.0))) > unit_tol:
        raise ValueError("spinor flow state is not a unit field")
    U, u = st.spinor_to_pair(psi)
    T = st.torsion_from_pair_on_grid(grid, U, u, None, None, order)
    divT = gr.div_tensor2(grid, T, order)
    rhs = al.clifford_mul(divT, psi)
    energy = 0.5 * gr.inner_l2(grid, T, T)
    return RhsData(rhs=rhs, torsion=T, div_torsion=divT, energy=energy,
                   div_l2=gr.norm_l2(grid, divT))


def rhs_spinor_flow(grid: gr.GridShape, psi, bg: Background | None = None,
                    order: int = 2) -> np.ndarray:
    # the background only fixes initial data; the torsion of a unit spinor
    # field is intrinsic to it
    return spinor_rhs_full(grid, psi, order).rhs


def max_stable_dt(grid: gr.GridShape, safety: float = 0.5) -> float:
    """Parabolic bound safety * min(h)^2 / (2*7) over the active axes.

    Inert axes carry no derivatives and impose no constraint.
    """
    active = grid.active_axes
    if not active:
        return float("inf")
    hmin = min(grid.spacings[a] for a in active)
    return safety * hmin * hmin / 14.0


@dataclass
class FlowControls:
    dt: float | None = None          # None: use the stability bound
    dt_safety: float = 0.5
    t_end: float = 1.0
    clamp: float = CLAMP_RADIUS
    order: int = 2
    metric_every: int = 0            # 0: never evaluate the induced metric
    max_steps: int = 10_000_000
    halt_on_energy_rise: bool = True


@dataclass
class FlowState:
    t: float
    U: np.ndarray
    step: int
    energy: float
    max_U: float
    div_l2: float
    metric_dev: float | None = None


@dataclass
class FlowResult:
    status: str                      # completed | stationary | chart_exit | instability | numerical_abort
    state: FlowState
    series: list[dict] = field(default_factory=list)
    message: str = ""


def _metric_deviation(U, u, bg: Background) -> float:
    phi = st.threeform_from_pair(U, u, bg.phibar, validate=False)
    return st.stable_form_analysis(phi).metric_deviation()


def _row(t, dt, data: RhsData, U, metric_dev):
    return {
        "t": t, "energy": data.energy, "max_U": float(np.max(np.abs(U))),
        "div_T_L2": data.div_l2, "metric_dev": metric_dev, "dt": dt,
    }


def rk4_step(grid: gr.GridShape, U, bg: Background, dt: float, order: int = 2,
             clamp: float = CLAMP_RADIUS, k1: np.ndarray | None = None) -> np.ndarray:
    """One classical RK4 step of the vector flow; u is recomputed from the
    sphere constraint inside every stage evaluation."""
    if k1 is None:
        k1 = vector_rhs_full(grid, U, bg, order, clamp).rhs
    k2 = vector_rhs_full(grid, U + 0.5 * dt * k1, bg, order, clamp).rhs
    k3 = vector_rhs_full(grid, U + 0.5 * dt * k2, bg, order, clamp).rhs
    k4 = vector_rhs_full(grid, U + dt * k3, bg, order, clamp).rhs
    return U + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _resolve_dt(grid: gr.GridShape, controls: FlowControls) -> float:
    bound = max_stable_dt(grid, controls.dt_safety)
    if controls.dt is None:
        if not np.isfinite(bound):
            raise ValueError("dt must be given explicitly on a fully inert grid")
        return bound
    if controls.dt <= 0.0:
        raise ValueError("dt must be positive")
    if controls.dt > bound * (1.0 + 1e-12):
        raise ValueError(f"dt = {controls.dt:.3e} violates the parabolic bound {bound:.3e}")
    return float(controls.dt)


STATIONARY_TOL = 1e-14


def evolve(grid: gr.GridShape, U0, bg: Background, controls: FlowControls) -> FlowResult:
    """Integrate the vector flow to t_end, collecting one diagnostics row per
    accepted step.  Halts early (with an explicit status, never silently) on
    chart exit, non-finite values, or two consecutive energy increases."""
    dt = _resolve_dt(grid, controls)
    U = np.array(U0, dtype=float)
    t, step = 0.0, 0
    series: list[dict] = []
    n_steps = int(np.floor(controls.t_end / dt + 1e-9))
    status, message = "completed", ""
    rise_count = 0
    prev_energy = None
    last_good = U

    def metric_now(step):
        if controls.metric_every and step % controls.metric_every == 0:
            return _metric_deviation(U, chart_u(U, controls.clamp), bg)
        return None

    try:
        data = vector_rhs_full(grid, U, bg, controls.order, controls.clamp)
    except (ChartExit, NumericalAbort) as exc:
        state = FlowState(t, U, 0, float("nan"), float(np.max(np.abs(U))), float("nan"))
        return FlowResult("chart_exit" if isinstance(exc, ChartExit) else "numerical_abort",
                          state, [], str(exc))

    stationary = float(np.max(np.abs(data.rhs))) <= STATIONARY_TOL

    while True:
        series.append(_row(t, dt, data, U, metric_now(step)))
        if prev_energy is not None and controls.halt_on_energy_rise:
            if data.energy > prev_energy + ENERGY_RISE_TOL * max(1.0, abs(prev_energy)):
                rise_count += 1
                if rise_count >= 2:
                    status, message = "instability", "energy increased on two consecutive steps"
                    break
            else:
                rise_count = 0
        prev_energy = data.energy
        if step >= n_steps or step >= controls.max_steps:
            break
        last_good = U
        try:
            U = rk4_step(grid, U, bg, dt, controls.order, controls.clamp, k1=data.rhs)
            if not np.all(np.isfinite(U)):
                raise NumericalAbort("non-finite state after step")
            t = (step + 1) * dt
            step += 1
            data = vector_rhs_full(grid, U, bg, controls.order, controls.clamp)
        except ChartExit as exc:
            U, status, message = last_good, "chart_exit", str(exc)
            break
        except NumericalAbort as exc:
            U, status, message = last_good, "numerical_abort", str(exc)
            break

    if status == "completed" and stationary:
        status = "stationary"
    final = series[-1]
    state = FlowState(t=final["t"], U=U, step=step, energy=final["energy"],
                      max_U=final["max_U"], div_l2=final["div_T_L2"],
                      metric_dev=final["metric_dev"])
    return FlowResult(status, state, series, message)


def evolve_spinor(grid: gr.GridShape, psi0, controls: FlowControls) -> FlowResult:
    """Integrate the spinor flow; |psi| is renormalized to 1 after each step.

    Diagnostics mirror the vector flow through the global chart, so the two
    integrations of identical data can be compared row by row.
    """
    dt = _resolve_dt(grid, controls)
    psi = np.array(psi0, dtype=float)
    t, step = 0.0, 0
    series: list[dict] = []
    n_steps = int(np.floor(controls.t_end / dt + 1e-9))
    status, message = "completed", ""

    def rhs(p, tol):
        return spinor_rhs_full(grid, p, controls.order, unit_tol=tol)

    data = rhs(psi, 1e-8)
    while True:
        Uc, _ = st.spinor_to_pair(psi)
        series.append(_row(t, dt, data, Uc, None))
        if step >= n_steps or step >= controls.max_steps:
            break
        # stages run on the un-renormalized extension of the flow; |psi| is
        # brought back to 1 only after the full step
        k1 = data.rhs
        k2 = rhs(psi + 0.5 * dt * k1, 1e-5).rhs
        k3 = rhs(psi + 0.5 * dt * k2, 1e-5).rhs
        k4 = rhs(psi + dt * k3, 1e-5).rhs
        psi = _renorm(psi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        if not np.all(np.isfinite(psi)):
            status, message = "numerical_abort", "non-finite spinor state"
            break
        t = (step + 1) * dt
        step += 1
        data = rhs(psi, 1e-8)

    Uc, _ = st.spinor_to_pair(psi)
    final = series[-1]
    state = FlowState(t=final["t"], U=Uc, step=step, energy=final["energy"],
                      max_U=final["max_U"], div_l2=final["div_T_L2"])
    return FlowResult(status, state, series, message)


def _renorm(psi):
    return psi / np.linalg.norm(psi, axis=-1, keepdims=True)
