"""Physical trap quantities for a given drive and ion species.

The rf pseudo-potential is phi_pp = (q^2 / 4 m Omega_rf^2) |E0|^2 with E0
the rf field amplitude. Its gradient needs the basis potential Hessian,
its Hessian additionally the third-derivative tensor; the trace of the
pseudo-potential Hessian reduces exactly to the squared Frobenius norm of
the basis Hessian (harmonicity), which is what "total confinement" uses.

Energies are joules internally; report in meV via constants.j_to_mev.
Points at module interfaces are micrometers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import ATOMIC_MASS, CA40_MASS_U, ELEMENTARY_CHARGE
from .geometry import TrapLayout
from .kernel import PolygonSet


class ModeError(ValueError):
    """Raised for unstable or ill-posed mode analyses."""


@dataclass(frozen=True)
class IonSpecies:
    mass: float            # kg
    charge: float          # C
    label: str = "ion"

    def validate(self):
        if not self.mass > 0.0:
            raise ValueError("ion mass must be positive")
        if self.charge == 0.0:
            raise ValueError("ion charge must be nonzero")
        return self


CA40 = IonSpecies(mass=CA40_MASS_U * ATOMIC_MASS, charge=ELEMENTARY_CHARGE,
                  label="40Ca+")


@dataclass(frozen=True)
class Drive:
    """Rf drive: amplitude, angular frequency, and optional pickup.

    rf_pickup maps electrode names (dc electrodes carrying stray rf) to
    voltage amplitudes. Pickup is summed in phase with the main drive;
    the relative phase is not constrained by measurement, in-phase is the
    worst case for residual field at the nulls.
    """

    v_rf: float                       # V amplitude
    omega_rf: float                   # rad/s
    rf_pickup: dict = field(default_factory=dict)

    def validate(self):
        if not self.omega_rf > 0.0:
            raise ValueError("omega_rf must be positive")
        if self.v_rf < 0.0:
            raise ValueError("v_rf must be >= 0")
        if any(v < 0.0 for v in self.rf_pickup.values()):
            raise ValueError("pickup amplitudes must be >= 0")
        return self


@dataclass
class FieldSample:
    """Everything about one point of the rf pseudo-potential."""

    point: np.ndarray            # (3,) um
    phi_pp: float                # J
    e0: np.ndarray               # (3,) V/m rf field amplitude
    grad_pp: np.ndarray          # (3,) J/m
    h_pp: np.ndarray             # (3, 3) J/m^2
    secular: np.ndarray          # (3,) rad/s, descending
    total_confinement: float     # (rad/s)^2 = tr(h_pp)/m


class PseudoModel:
    """Cached evaluator of the rf pseudo-potential for one configuration.

    Stateless after construction; all methods are pure and take/return
    points in micrometers with SI values.
    """

    def __init__(self, layout: TrapLayout, drive: Drive, species: IonSpecies):
        drive.validate()
        species.validate()
        self.layout = layout
        self.drive = drive
        self.species = species
        polys = [e.vertices for e in layout.rf_electrodes]
        weights = [drive.v_rf] * len(polys)
        for name, amp in drive.rf_pickup.items():
            e = layout.electrode(name)
            if e.kind == "rf":
                raise ValueError(f"pickup entry {name!r} is an rf electrode")
            polys.append(e.vertices)
            weights.append(amp)
        self.stack = PolygonSet(polys, weights)
        self.kq = species.charge**2 / (4.0 * species.mass * drive.omega_rf**2)

    # -- scalar pieces ------------------------------------------------------

    def value(self, points_um):
        e = self.stack.field(points_um)
        return self.kq * np.einsum("ij,ij->i", e, e)

    def field_parts(self, points_um):
        """(E0, basis Hessian H) for points; the shared hot-path evaluation."""
        return self.stack.field_and_hessian(points_um)

    def value_grad(self, points_um):
        """phi_pp (N,), grad (N, 3) J/m, plus (E0, H) for reuse."""
        e, h = self.field_parts(points_um)
        phi = self.kq * np.einsum("ij,ij->i", e, e)
        grad = -2.0 * self.kq * np.einsum("ijk,ik->ij", h, e)
        return phi, grad, e, h

    def confinement(self, points_um):
        """Total confinement omega^2 = tr(H_pp)/m, exact (no third derivs)."""
        _, h = self.field_parts(points_um)
        fro2 = np.einsum("ijk,ijk->i", h, h)
        return 2.0 * self.kq * fro2 / self.species.mass

    def hessian(self, points_um):
        """Full pseudo-potential Hessian including the field-curvature term."""
        e, h = self.field_parts(points_um)
        t = self.stack.third(points_um)
        h2 = np.einsum("inl,ink->ilk", h, h)
        te = np.einsum("inkl,in->ikl", t, e)
        return 2.0 * self.kq * (h2 - te)

    def sample(self, point_um) -> FieldSample:
        pts = np.atleast_2d(np.asarray(point_um, dtype=float))
        phi, grad, e, h = self.value_grad(pts)
        h_pp = self.hessian(pts)[0]
        evals = np.linalg.eigvalsh(h_pp / self.species.mass)
        scale = np.max(np.abs(evals)) if np.any(evals) else 0.0
        clipped = np.where(evals > -1e-6 * scale, np.maximum(evals, 0.0), 0.0)
        secular = np.sqrt(clipped)[::-1]
        fro2 = float(np.einsum("jk,jk->", h[0], h[0]))
        w2 = 2.0 * self.kq * fro2 / self.species.mass
        return FieldSample(point=pts[0], phi_pp=float(phi[0]), e0=e[0],
                           grad_pp=grad[0], h_pp=h_pp, secular=secular,
                           total_confinement=w2)


def pseudo_potential(layout, drive, species, point_um) -> FieldSample:
    """Pseudo-potential sample at one point (see FieldSample)."""
    return PseudoModel(layout, drive, species).sample(point_um)


class DcStack:
    """Weighted dc electrode evaluator: energy, gradient, Hessian for an ion."""

    def __init__(self, layout: TrapLayout, voltages: dict, species: IonSpecies):
        species.validate()
        if not voltages:
            raise ValueError("empty voltage map")
        polys, weights = [], []
        for name, volt in voltages.items():
            e = layout.electrode(name)
            if e.kind == "rf":
                raise ValueError(f"dc voltage map names rf electrode {name!r}")
            polys.append(e.vertices)
            weights.append(volt)
        self.stack = PolygonSet(polys, weights)
        self.q = species.charge

    def energy_grad_hessian(self, points_um):
        phi = self.stack.potential(points_um)
        e, h = self.stack.field_and_hessian(points_um)
        return self.q * phi, -self.q * e, self.q * h


def dc_potential(layout, voltages, species, point_um):
    """(energy J, gradient J/m, hessian J/m^2) of the dc set at one point."""
    pts = np.atleast_2d(np.asarray(point_um, dtype=float))
    if not voltages:
        return 0.0, np.zeros(3), np.zeros((3, 3))
    u, g, h = DcStack(layout, voltages, species).energy_grad_hessian(pts)
    return float(u[0]), g[0], h[0]


_AXES = np.eye(3)
_AXIS_NAMES = ("x", "y", "z")


@dataclass
class ModeReport:
    frequencies: np.ndarray      # (3,) rad/s descending
    vectors: np.ndarray          # (3, 3) columns matching frequencies
    labels: tuple                # dominant axis per mode
    confinement_total: float     # sum omega_i^2 with dc
    confinement_rf: float        # tr(H_pp)/m at the same point
    grad_norm: float             # |grad total potential| at the point, J/m


def total_modes(layout, drive, voltages, species, point_um,
                offset_tol_um=1.0) -> ModeReport:
    """Eigenmodes of the total (rf pseudo + dc) potential at a minimum.

    The point must be near a stationary point: the Newton displacement
    implied by the residual gradient must be below offset_tol_um. Raises
    ModeError for saddle points (significantly negative eigenvalue).
    """
    model = PseudoModel(layout, drive, species)
    pts = np.atleast_2d(np.asarray(point_um, dtype=float))
    phi, grad, e0, h = model.value_grad(pts)
    h_pp = model.hessian(pts)[0]
    u_dc, g_dc, h_dc = dc_potential(layout, voltages, species, point_um)
    h_tot = h_pp + h_dc
    g_tot = grad[0] + g_dc
    offset = np.linalg.lstsq(h_tot, g_tot, rcond=None)[0]
    if np.linalg.norm(offset) > offset_tol_um * 1e-6:
        raise ModeError(
            "point is not a stationary point of the total potential "
            f"(implied offset {np.linalg.norm(offset) * 1e6:.3g} um)"
        )
    evals, evecs = np.linalg.eigh(h_tot / species.mass)
    eps = 1e-6 * np.max(np.abs(evals))
    if np.any(evals < -eps):
        bad = int(np.argmin(evals))
        axis = _AXIS_NAMES[int(np.argmax(np.abs(evecs[:, bad])))]
        raise ModeError(
            f"unstable/saddle: negative curvature along mode {axis} "
            f"(eigenvalue {evals[bad]:.3g} s^-2)"
        )
    evals = np.maximum(evals, 0.0)
    order = np.argsort(evals)[::-1]
    freqs = np.sqrt(evals[order])
    vecs = evecs[:, order]
    labels = tuple(_AXIS_NAMES[int(np.argmax(np.abs(vecs[:, i])))]
                   for i in range(3))
    fro2 = float(np.einsum("jk,jk->", h[0], h[0]))
    w2_rf = 2.0 * model.kq * fro2 / species.mass
    return ModeReport(frequencies=freqs, vectors=vecs, labels=labels,
                      confinement_total=float(np.sum(evals)),
                      confinement_rf=w2_rf,
                      grad_norm=float(np.linalg.norm(g_tot)))
