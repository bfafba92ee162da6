"""Rf-minimum location and path tracing in the moving frame.

A radial minimum at fixed z is found by Gauss-Newton descent on |E0|^2 in
the (x, y) plane: the gradient is exact (2 k H E) and the Gauss-Newton
Hessian (2 k H H) is exact at the null, giving quadratic convergence. A
path xi(z) = (x0(z), y0(z), z) is traced by predictor-corrector
continuation; the moving frame per sample is the unit tangent plus the
radial curvature eigenvectors, sign-continuous along the path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import UM, j_to_mev
from .model import Drive, IonSpecies, PseudoModel


class MinimumError(RuntimeError):
    """No rf minimum found, or refinement failed to converge."""


class ContinuationError(RuntimeError):
    """Path continuation lost; carries the last good z."""

    def __init__(self, message, last_good_z=None):
        super().__init__(message)
        self.last_good_z = last_good_z


class BifurcationError(ContinuationError):
    """Two minima merged or split within the merge radius while tracing."""


def _default_g_tol(model, phi_scale_j):
    # spec'd default: 1e-9 x (pseudo-potential scale per micrometer)
    return 1e-9 * phi_scale_j / UM


def _refine_radial_batch(model: PseudoModel, x_um, y_um, z_um, g_tol,
                         max_iter=60, step_clip_um=20.0):
    """Gauss-Newton refinement of radial minima for many z at once.

    Returns (x, y, phi, grad, converged). Positions in um, phi in J.
    """
    x = np.array(x_um, dtype=float, copy=True)
    y = np.array(y_um, dtype=float, copy=True)
    z = np.asarray(z_um, dtype=float)
    n = len(x)
    done = np.zeros(n, dtype=bool)
    phi = np.zeros(n)
    grad = np.zeros((n, 3))
    for _ in range(max_iter):
        pts = np.column_stack([x, y, z])
        phi, grad, e, h = model.value_grad(pts)
        gn = 2.0 * model.kq * np.einsum("nij,nkj->nik", h, h)[:, :2, :2]
        g2 = grad[:, :2]
        done = np.linalg.norm(g2, axis=1) <= g_tol
        if np.all(done):
            break
        det = gn[:, 0, 0] * gn[:, 1, 1] - gn[:, 0, 1] * gn[:, 1, 0]
        det = np.where(np.abs(det) < 1e-300, np.nan, det)
        sx = -(gn[:, 1, 1] * g2[:, 0] - gn[:, 0, 1] * g2[:, 1]) / det
        sy = -(-gn[:, 1, 0] * g2[:, 0] + gn[:, 0, 0] * g2[:, 1]) / det
        sx = np.clip(np.nan_to_num(sx * 1e6), -step_clip_um, step_clip_um)
        sy = np.clip(np.nan_to_num(sy * 1e6), -step_clip_um, step_clip_um)
        x = np.where(done, x, x + sx)
        y = np.where(done, y, np.maximum(y + sy, 1.0))
    return x, y, phi, grad, done


def _refine_radial(model, x_um, y_um, z_um, g_tol, max_iter=60):
    x, y, phi, grad, ok = _refine_radial_batch(
        model, [x_um], [y_um], [z_um], g_tol, max_iter)
    if not ok[0]:
        raise MinimumError(
            f"radial refinement did not converge at z = {z_um:.3f} um "
            f"(|grad| = {np.linalg.norm(grad[0][:2]):.3g} J/m, tol {g_tol:.3g})"
        )
    return float(x[0]), float(y[0]), float(phi[0])


@dataclass
class RadialMinimum:
    x0: float            # um
    y0: float            # um
    phi_pp: float        # J
    classification: str  # inner | outer


@dataclass
class CrossSectionMinima:
    z: float
    minima: list

    @property
    def inner(self):
        return [m for m in self.minima if m.classification == "inner"]

    @property
    def outer(self):
        return [m for m in self.minima if m.classification == "outer"]


def find_minima(layout, drive, species, z_um, window=None, grid_step=2.0,
                g_tol=None, dedupe_um=0.1) -> CrossSectionMinima:
    """All distinct radial rf minima at one axial position.

    The window ((xmin, xmax), (ymin, ymax)) defaults to the full rail span
    at heights 20..250 um. Grid-scan for candidate cells, Gauss-Newton
    refine, deduplicate within dedupe_um, validate that the radial Hessian
    of the pseudo-potential is positive definite. Minima with |x| below the
    rail pitch are classified inner, the rest outer.
    """
    model = PseudoModel(layout, drive, species)
    p = layout.params
    if window is None:
        span = 2.0 * p.lam + p.d
        window = ((-span, span), (20.0, 250.0))
    (x0w, x1w), (y0w, y1w) = window
    if y0w <= 0.0:
        raise ValueError("search window must satisfy y > 0")
    xs = np.arange(x0w, x1w + grid_step, grid_step)
    ys = np.arange(y0w, y1w + grid_step, grid_step)
    xg, yg = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([xg.ravel(), yg.ravel(), np.full(xg.size, z_um)])
    phi = model.value(pts).reshape(xg.shape)
    if g_tol is None:
        g_tol = _default_g_tol(model, float(np.max(phi)))
    cand = []
    interior = (slice(1, -1), slice(1, -1))
    is_min = np.ones_like(phi[interior], dtype=bool)
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)):
        shifted = phi[1 + dx:phi.shape[0] - 1 + dx, 1 + dy:phi.shape[1] - 1 + dy]
        is_min &= phi[interior] <= shifted
    ii, jj = np.nonzero(is_min)
    for i, j in zip(ii + 1, jj + 1):
        cand.append((xs[i], ys[j]))
    found = []
    for cx, cy in cand:
        try:
            rx, ry, rphi = _refine_radial(model, cx, cy, z_um, g_tol)
        except MinimumError:
            continue
        if not (x0w - grid_step <= rx <= x1w + grid_step
                and y0w <= ry <= y1w + grid_step):
            continue
        if any(np.hypot(rx - m[0], ry - m[1]) < dedupe_um for m in found):
            continue
        # validate curvature: radial block of the full pseudo Hessian
        h_pp = model.hessian([[rx, ry, z_um]])[0]
        evals = np.linalg.eigvalsh(h_pp[:2, :2])
        if evals[0] <= 0.0:
            continue
        found.append((rx, ry, rphi))
    if not found:
        raise MinimumError(f"no rf minimum found in window at z = {z_um} um")
    found.sort(key=lambda m: m[0])
    minima = [RadialMinimum(x0=m[0], y0=m[1], phi_pp=m[2],
                            classification="inner" if abs(m[0]) < p.lam else "outer")
              for m in found]
    return CrossSectionMinima(z=z_um, minima=minima)


@dataclass
class RfMinimumPath:
    """Ordered samples of one rf-minimum path with the moving frame."""

    z: np.ndarray                  # (N,) um
    x0: np.ndarray                 # (N,) um
    y0: np.ndarray                 # (N,) um
    phi_pp: np.ndarray             # (N,) J
    tangent: np.ndarray            # (N, 3) unit
    u: np.ndarray                  # (N, 3) unit radial axis
    v: np.ndarray                  # (N, 3) unit radial axis
    omega_u: np.ndarray            # (N,) rad/s
    omega_v: np.ndarray            # (N,) rad/s
    w2: np.ndarray                 # (N,) (rad/s)^2 total confinement
    dphi_dt: np.ndarray            # (N,) J/m tangential gradient
    frame_degenerate: np.ndarray   # (N,) bool
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.z)

    def position_at(self, z_um):
        """Interpolated (x0, y0) at axial position(s) z."""
        z = np.asarray(z_um, dtype=float)
        lo, hi = (self.z[0], self.z[-1]) if self.z[0] <= self.z[-1] else (self.z[-1], self.z[0])
        if np.any(z < lo - 1e-9) or np.any(z > hi + 1e-9):
            raise ValueError("requested z outside the traced path range")
        zs = self.z if self.z[0] <= self.z[-1] else self.z[::-1]
        xs = self.x0 if self.z[0] <= self.z[-1] else self.x0[::-1]
        ys = self.y0 if self.z[0] <= self.z[-1] else self.y0[::-1]
        return np.interp(z, zs, xs), np.interp(z, zs, ys)

    def tangent_at(self, z_um):
        zs = self.z if self.z[0] <= self.z[-1] else self.z[::-1]
        ts = self.tangent if self.z[0] <= self.z[-1] else self.tangent[::-1]
        t = np.column_stack([np.interp(z_um, zs, ts[:, i]) for i in range(3)])
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        return t[0] if np.isscalar(z_um) else t


def _tangents(z_um, x0, y0):
    # d xi / dz with xi = (x0(z), y0(z), z); central differences inside
    dz = np.gradient(z_um * UM)
    dx = np.gradient(x0 * UM) / np.gradient(z_um * UM)
    dy = np.gradient(y0 * UM) / np.gradient(z_um * UM)
    t = np.column_stack([dx, dy, np.ones_like(dx)])
    sign = np.sign(dz)
    t *= sign[:, None]
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    return t


def _frame_from_hessians(h_pp, tangent, mass, degeneracy_rel=1e-6):
    """Radial eigen-axes of the pseudo Hessian in the plane normal to t."""
    n = len(tangent)
    u = np.zeros((n, 3))
    v = np.zeros((n, 3))
    wu = np.zeros(n)
    wv = np.zeros(n)
    degen = np.zeros(n, dtype=bool)
    # basis of the normal plane; tangent is never near x-hat for traced paths
    xhat = np.array([1.0, 0.0, 0.0])
    for i in range(n):
        t = tangent[i]
        n1 = np.cross(t, xhat)
        n1 /= np.linalg.norm(n1)
        n2 = np.cross(t, n1)
        basis = np.column_stack([n1, n2])
        block = basis.T @ h_pp[i] @ basis
        evals, evecs = np.linalg.eigh(block)
        axes = basis @ evecs
        lam_lo, lam_hi = evals
        if abs(lam_hi - lam_lo) < degeneracy_rel * max(abs(lam_hi), 1e-300):
            degen[i] = True
        # omega_u is the stiffer mode by convention
        wu[i] = np.sqrt(max(lam_hi, 0.0) / mass)
        wv[i] = np.sqrt(max(lam_lo, 0.0) / mass)
        u[i] = axes[:, 1]
        v[i] = axes[:, 0]
        if i > 0:
            if np.dot(u[i], u[i - 1]) < 0.0:
                u[i] = -u[i]
            if np.dot(v[i], v[i - 1]) < 0.0:
                v[i] = -v[i]
    return u, v, wu, wv, degen


def trace_path(layout, drive, species, z_start, z_end, dz, seed,
               g_tol=None, with_frame=True, continuity_um=None,
               bifurcation_probe_um=2.0) -> RfMinimumPath:
    """Trace the rf-minimum path from z_start to z_end in steps of dz.

    seed is an (x, y) guess converging to the path minimum at z_start.
    Continuation seeds each slice from the previous minimum (with linear
    prediction); a jump larger than the continuity bound aborts with
    ContinuationError, and near-degenerate radial curvature triggers a
    two-sided probe that raises BifurcationError if the branch splits.
    """
    model = PseudoModel(layout, drive, species)
    if dz <= 0.0:
        raise ValueError("dz must be positive")
    n_steps = int(round(abs(z_end - z_start) / dz))
    zs = z_start + np.sign(z_end - z_start) * dz * np.arange(n_steps + 1)
    if n_steps == 0:
        zs = np.array([z_start])
    if continuity_um is None:
        continuity_um = max(10.0 * dz, 2.0)
    if g_tol is None:
        probe = model.value([[seed[0], max(seed[1], 2.0) * 0.5, z_start]])
        g_tol = _default_g_tol(model, max(float(probe[0]), 1e-25))

    x0 = np.empty(len(zs))
    y0 = np.empty(len(zs))
    phi = np.empty(len(zs))
    x, y = float(seed[0]), float(seed[1])
    for i, z in enumerate(zs):
        if i >= 2:
            xp = 2.0 * x0[i - 1] - x0[i - 2]
            yp = 2.0 * y0[i - 1] - y0[i - 2]
        else:
            xp, yp = x, y
        try:
            rx, ry, rphi = _refine_radial(model, xp, yp, z, g_tol)
        except MinimumError as exc:
            raise ContinuationError(
                f"continuation lost at z = {z:.3f} um: {exc}",
                last_good_z=None if i == 0 else float(zs[i - 1])) from exc
        if i > 0:
            jump = np.hypot(rx - x0[i - 1], ry - y0[i - 1])
            if jump > continuity_um:
                raise ContinuationError(
                    f"path jumped {jump:.2f} um between z = {zs[i-1]:.3f} and "
                    f"{z:.3f} um (bound {continuity_um:.2f} um)",
                    last_good_z=float(zs[i - 1]))
        # soft radial mode -> probe for branch splitting
        pts = np.array([[rx, ry, z]])
        _, _, _, h = model.value_grad(pts)
        gn = (h[0] @ h[0].T)[:2, :2]
        lam = np.linalg.eigvalsh(gn)
        if lam[0] < 1e-3 * lam[1]:
            soft = np.linalg.eigh(gn)[1][:, 0]
            branches = []
            for sgn in (+1.0, -1.0):
                try:
                    bx, by, _ = _refine_radial(
                        model, rx + sgn * bifurcation_probe_um * soft[0],
                        ry + sgn * bifurcation_probe_um * soft[1], z, g_tol)
                    branches.append((bx, by))
                except MinimumError:
                    pass
            if len(branches) == 2:
                sep = np.hypot(branches[0][0] - branches[1][0],
                               branches[0][1] - branches[1][1])
                if sep > 2.0 * bifurcation_probe_um:
                    raise BifurcationError(
                        f"path bifurcates at z = {z:.3f} um "
                        f"(branches {sep:.2f} um apart)",
                        last_good_z=None if i == 0 else float(zs[i - 1]))
        x0[i], y0[i], phi[i] = rx, ry, rphi
        x, y = rx, ry

    tangent = _tangents(zs, x0, y0)
    pts = np.column_stack([x0, y0, zs])
    _, grad, _, _ = model.value_grad(pts)
    dphi_dt = np.einsum("ni,ni->n", tangent, grad)
    w2 = model.confinement(pts)
    if with_frame:
        h_pp = model.hessian(pts)
        u, v, wu, wv, degen = _frame_from_hessians(
            h_pp, tangent, species.mass)
    else:
        u = np.zeros((len(zs), 3))
        v = np.zeros((len(zs), 3))
        wu = np.zeros(len(zs))
        wv = np.zeros(len(zs))
        degen = np.zeros(len(zs), dtype=bool)
    return RfMinimumPath(z=zs, x0=x0, y0=y0, phi_pp=phi, tangent=tangent,
                         u=u, v=v, omega_u=wu, omega_v=wv, w2=w2,
                         dphi_dt=dphi_dt, frame_degenerate=degen,
                         meta={"g_tol": g_tol, "dz": dz,
                               "seed": (float(seed[0]), float(seed[1]))})


def path_metrics(path: RfMinimumPath) -> dict:
    """Barrier and confinement metrics of a traced path.

    The barrier is referenced to the path start (which is the path minimum
    for the trap center); the global-minimum reference is reported too.
    Integrals are trapezoidal over the samples.
    """
    z_m = path.z * UM
    barrier_start = float(np.max(path.phi_pp) - path.phi_pp[0])
    barrier_global = float(np.max(path.phi_pp) - np.min(path.phi_pp))
    return {
        "barrier_mev": j_to_mev(barrier_start),
        "barrier_from_global_min_mev": j_to_mev(barrier_global),
        "z_at_barrier_um": float(path.z[np.argmax(path.phi_pp)]),
        "max_omega_u": float(np.max(path.omega_u)),
        "max_omega_v": float(np.max(path.omega_v)),
        "max_w2": float(np.max(path.w2)),
        "w2_integral": float(np.trapezoid(path.w2, z_m)),
        "tangential_gradient_integral_j": float(
            np.trapezoid(np.abs(path.dphi_dt), z_m)),
    }


def export_path(path: RfMinimumPath, dest, header_extra=None):
    """Columnar text export (z, x0, y0, phi_pp_meV, wu, wv, w2, dphidt)."""
    from .reportio import write_columns
    cols = {
        "z_um": path.z,
        "x0_um": path.x0,
        "y0_um": path.y0,
        "phi_pp_mev": [j_to_mev(p) for p in path.phi_pp],
        "omega_u_rad_s": path.omega_u,
        "omega_v_rad_s": path.omega_v,
        "w2_rad2_s2": path.w2,
        "dphi_dt_j_m": path.dphi_dt,
    }
    write_columns(dest, cols, extra=header_extra)
    return dest
