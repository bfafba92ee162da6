"""Electrostatic basis functions of unit-potential planar polygons.

Gapless plane approximation: the chip plane y = 0 is a grounded conductor
except for polygonal patches held at fixed potential. The potential of a
patch at unit voltage, evaluated at a point above the plane, is the
half-space Poisson-kernel integral over the patch,

    phi(p) = Omega(p) / (2 pi),

where Omega is the solid angle the polygon subtends at p. Omega is computed
by fan-triangulating the polygon and summing signed triangle solid angles
(Van Oosterom & Strackee arctangent formula). The gradient of Omega is a
closed-form sum over boundary edges (the finite-segment Biot-Savart
integral), and the Hessian is its analytic derivative. Third derivatives
are obtained by central finite differences of the analytic Hessian.

Interfaces accept coordinates in micrometers; everything internal is SI.
"""

from __future__ import annotations

import numpy as np

from .constants import UM

TWO_PI = 2.0 * np.pi

# finite-difference step for third derivatives (10 nm)
FD_STEP_M = 1.0e-8


class KernelDomainError(ValueError):
    """Evaluation point outside the kernel domain (requires y > 0)."""


def _check_points_um(points_um):
    pts = np.atleast_2d(np.asarray(points_um, dtype=float))
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
    if np.any(pts[:, 1] <= 0.0):
        bad = pts[pts[:, 1] <= 0.0][0]
        raise KernelDomainError(
            f"point ({bad[0]:.6g}, {bad[1]:.6g}, {bad[2]:.6g}) um has y <= 0; "
            "the gapless-plane kernel is only defined above the chip plane"
        )
    return pts


class PolygonSet:
    """Stacked polygon basis for fast batched evaluation.

    Holds one or more weighted polygons (weight = applied voltage, so a
    weight of 1 gives the dimensionless basis). All evaluation methods are
    pure and thread-safe; results are sums over the stored polygons.

    Parameters
    ----------
    polygons : sequence of (V, 2) arrays
        Vertex lists (x, z) in micrometers, counter-clockwise (positive
        signed area in the (x, z) plane).
    weights : sequence of float, optional
        Per-polygon voltages. Defaults to 1 for every polygon.
    """

    def __init__(self, polygons, weights=None):
        if weights is None:
            weights = np.ones(len(polygons))
        weights = np.asarray(weights, dtype=float)
        if len(weights) != len(polygons):
            raise ValueError("one weight per polygon required")

        verts = []
        tri_idx = []
        tri_w = []
        edge_i0 = []
        edge_i1 = []
        edge_w = []
        offset = 0
        for poly, w in zip(polygons, weights):
            v = np.asarray(poly, dtype=float)
            if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
                raise ValueError("polygon needs >= 3 (x, z) vertices")
            n = len(v)
            v3 = np.zeros((n, 3))
            v3[:, 0] = v[:, 0] * UM
            v3[:, 2] = v[:, 1] * UM
            verts.append(v3)
            for k in range(1, n - 1):
                tri_idx.append((offset, offset + k, offset + k + 1))
                tri_w.append(w)
            for k in range(n):
                edge_i0.append(offset + k)
                edge_i1.append(offset + (k + 1) % n)
                edge_w.append(w)
            offset += n
        self._verts = np.concatenate(verts, axis=0)
        self._tri = np.asarray(tri_idx, dtype=np.intp)
        self._tri_w = np.asarray(tri_w)
        self._e0 = np.asarray(edge_i0, dtype=np.intp)
        self._e1 = np.asarray(edge_i1, dtype=np.intp)
        self._edge_w = np.asarray(edge_w)
        # edge vectors are constant; dC_i/dp_j = -eps_{ijk} L_k is linear in L
        self._L = self._verts[self._e1] - self._verts[self._e0]
        self.n_polygons = len(polygons)

    # -- chunk size keeping (points x vertices) work arrays ~tens of MB
    def _chunks(self, n_points):
        per_point = max(len(self._verts), len(self._e0))
        chunk = max(1, int(3.0e6 / max(per_point, 1)))
        for start in range(0, n_points, chunk):
            yield start, min(start + chunk, n_points)

    def potential(self, points_um):
        """Summed potential (volts per unit weight) at points (N, 3) um."""
        pts = _check_points_um(points_um) * UM
        out = np.empty(len(pts))
        for lo, hi in self._chunks(len(pts)):
            out[lo:hi] = self._potential_m(pts[lo:hi])
        return out

    def field(self, points_um):
        """Electric field E = -grad(potential), V/m, at points (N, 3) um."""
        pts = _check_points_um(points_um) * UM
        out = np.empty((len(pts), 3))
        for lo, hi in self._chunks(len(pts)):
            out[lo:hi] = -self._grad_m(pts[lo:hi])
        return out

    def phi_hessian(self, points_um):
        """Hessian of the potential, d2(phi)/dxi dxj, V/m^2, shape (N, 3, 3)."""
        pts = _check_points_um(points_um) * UM
        out = np.empty((len(pts), 3, 3))
        for lo, hi in self._chunks(len(pts)):
            out[lo:hi] = self._hess_m(pts[lo:hi])
        return out

    def field_and_hessian(self, points_um):
        """(E, H) in one pass; the hot path for pseudo-potential work."""
        pts = _check_points_um(points_um) * UM
        E = np.empty((len(pts), 3))
        H = np.empty((len(pts), 3, 3))
        for lo, hi in self._chunks(len(pts)):
            g, h = self._grad_hess_m(pts[lo:hi])
            E[lo:hi] = -g
            H[lo:hi] = h
        return E, H

    def third(self, points_um, step_m=FD_STEP_M):
        """Third-derivative tensor d3(phi)/dxi dxj dxk, V/m^3, (N, 3, 3, 3).

        Central finite differences of the analytic Hessian; symmetrized.
        """
        pts = _check_points_um(points_um) * UM
        n = len(pts)
        T = np.empty((n, 3, 3, 3))
        for k in range(3):
            e = np.zeros(3)
            e[k] = step_m
            hp = self._hess_m(pts + e)
            hm = self._hess_m(pts - e)
            T[:, :, :, k] = (hp - hm) / (2.0 * step_m)
        # enforce full index symmetry (exact for the true tensor)
        T = (T + T.transpose(0, 1, 3, 2) + T.transpose(0, 2, 1, 3)
             + T.transpose(0, 2, 3, 1) + T.transpose(0, 3, 1, 2)
             + T.transpose(0, 3, 2, 1)) / 6.0
        return T

    # ---- internal SI implementations -------------------------------------

    def _vertex_geometry(self, pts_m):
        R = self._verts[None, :, :] - pts_m[:, None, :]   # (P, Nv, 3)
        r = np.sqrt(np.einsum("pvi,pvi->pv", R, R))       # (P, Nv)
        return R, r

    def _potential_m(self, pts_m):
        R, r = self._vertex_geometry(pts_m)
        i0, i1, i2 = self._tri[:, 0], self._tri[:, 1], self._tri[:, 2]
        R1, R2, R3 = R[:, i0], R[:, i1], R[:, i2]
        r1, r2, r3 = r[:, i0], r[:, i1], r[:, i2]
        num = np.einsum("pti,pti->pt", R1, np.cross(R2, R3))
        den = (r1 * r2 * r3
               + np.einsum("pti,pti->pt", R1, R2) * r3
               + np.einsum("pti,pti->pt", R1, R3) * r2
               + np.einsum("pti,pti->pt", R2, R3) * r1)
        omega = 2.0 * np.arctan2(num, den)
        return (omega @ self._tri_w) / TWO_PI

    def _edge_core(self, pts_m):
        R, r = self._vertex_geometry(pts_m)
        R1, R2 = R[:, self._e0], R[:, self._e1]
        r1, r2 = r[:, self._e0], r[:, self._e1]
        C = np.cross(R1, R2)
        s = r1 + r2
        t = r1 * r2
        u = np.einsum("pei,pei->pe", R1, R2)
        D = t * (t + u)
        return R1, R2, r1, r2, C, s, t, u, D

    def _grad_m(self, pts_m):
        _, _, _, _, C, s, _, _, D = self._edge_core(pts_m)
        coef = self._edge_w[None, :] * s / D
        return np.einsum("pe,pei->pi", coef, C) / TWO_PI

    def _grad_hess_m(self, pts_m):
        R1, R2, r1, r2, C, s, t, u, D = self._edge_core(pts_m)
        w = self._edge_w[None, :]
        sD = s / D
        grad = np.einsum("pe,pei->pi", w * sD, C) / TWO_PI

        # dS_i/dp_j for S = C s / D:
        #   dC_i/dp_j = -eps_{ijk} L_k   (linear in L, so summed via U below)
        #   ds_j = -(R1_j/r1 + R2_j/r2)
        #   dt_j = -(R1_j r2/r1 + R2_j r1/r2)
        #   du_j = -(R1_j + R2_j)
        #   dD_j = (2t + u) dt_j + t du_j
        ds = -(R1 / r1[..., None] + R2 / r2[..., None])
        dt = -(R1 * (r2 / r1)[..., None] + R2 * (r1 / r2)[..., None])
        du = -(R1 + R2)
        dD = (2.0 * t + u)[..., None] * dt + t[..., None] * du
        G = ds / D[..., None] - (s / D**2)[..., None] * dD
        H = np.einsum("pei,pej->pij", w[..., None] * C, G)
        # summed first term: -eps_{ijk} U_k with U = sum_e w_e (s/D)_e L_e
        U = np.einsum("pe,ek->pk", w * sD, self._L)
        H[:, 0, 1] -= U[:, 2]
        H[:, 0, 2] += U[:, 1]
        H[:, 1, 0] += U[:, 2]
        H[:, 1, 2] -= U[:, 0]
        H[:, 2, 0] -= U[:, 1]
        H[:, 2, 1] += U[:, 0]
        H /= TWO_PI
        # the true Hessian is symmetric; symmetrize to kill roundoff skew
        return grad, 0.5 * (H + H.transpose(0, 2, 1))

    def _hess_m(self, pts_m):
        return self._grad_hess_m(pts_m)[1]


def basis_potential(electrode, points_um):
    """Dimensionless potential of one electrode at unit voltage, in [0, 1]."""
    return PolygonSet([electrode.vertices]).potential(points_um)


def basis_field(electrode, points_um):
    """Field of one electrode, V/m per volt, shape (N, 3)."""
    return PolygonSet([electrode.vertices]).field(points_um)


def basis_hessian(electrode, points_um):
    """Potential Hessian of one electrode, V/m^2 per volt, (N, 3, 3)."""
    return PolygonSet([electrode.vertices]).phi_hessian(points_um)
