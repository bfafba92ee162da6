"""Parametric trap layout construction, validation, and file round-trip.

The rf ensemble is five electrodes: a center rail, a mid rail on each side,
and a wide outer rail on each side. Rail centerlines sit at multiples of
lam = (a + c)/2 + b. Between interaction zones every rail swaps its width
(c on the center-phase rails, a on the mid rails) across a transition zone
of length delta, so all inter-rail gaps keep their nominal width b under
linear transitions. One boundary polyline (the center-rail half-width
profile) generates every rail edge by affine transforms; the two boundaries
of each gap channel are 180-degree rotation images of each other about the
channel's transition-zone center.

dc electrodes tile the four gap channels: a 20 um compensation rail hugging
the channel's inner edge (C1..C4), the remaining width cut into 40 um long
cells. Cells inside transition zones are independent (5 per zone per
channel); all others are tied into three meander groups per channel. One
large rectangle outside each outer rail (DCOR/DCOL) completes the set.
Coordinates are micrometers in the chip plane (x, z).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import BSpline
from shapely.geometry import Polygon as ShpPolygon
from shapely.strtree import STRtree

COMP_RAIL_WIDTH = 20.0   # um, compensation rail along each channel
DC_CELL_LENGTH = 40.0    # um, segmented dc electrode length along z
DCO_WIDTH = 300.0        # um, outer compensation electrodes DCOR/DCOL
MIN_RF_WIDTH = 20.0      # um, fabrication floor for any rf rail width
MEANDER_BASES = {("1", "R"): ("1R", "2R", "3R"), ("1", "L"): ("1L", "2L", "3L"),
                 ("2", "R"): ("4R", "5R", "6R"), ("2", "L"): ("4L", "5L", "6L")}


class LayoutError(ValueError):
    """Invalid layout parameters or electrode geometry."""


@dataclass(frozen=True)
class LayoutParams:
    """Named layout parameters, all lengths in micrometers.

    a, b, c, d are the mid-rail width, inter-rail gap, center-rail width
    and outer-rail width in the central cross-section; gamma is the
    center-to-transition distance, delta the transition length. extent_z
    is the half-length of the modeled layout (rails continue straight to
    +-extent_z; the value is a documented termination assumption).
    """

    a: float = 135.6
    b: float = 61.5
    c: float = 50.8
    d: float = 174.0
    gamma: float = 500.0
    delta: float = 200.0
    extent_z: float | None = None
    n_periods: int = 1

    def __post_init__(self):
        if self.extent_z is None:
            object.__setattr__(self, "extent_z", self.gamma + self.delta + 1600.0)

    @property
    def lam(self):
        """Rail centerline pitch (a + c)/2 + b."""
        return 0.5 * (self.a + self.c) + self.b

    @property
    def period_z(self):
        """Axial length of one interaction zone plus one transition."""
        return 2.0 * self.gamma + self.delta

    def last_transition_end(self):
        return self.gamma + self.delta + (self.n_periods - 1) * self.period_z

    def validate(self):
        for name in ("a", "b", "c", "d", "gamma", "delta", "extent_z"):
            if not getattr(self, name) > 0.0:
                raise LayoutError(f"layout parameter {name} must be positive")
        if self.delta < 40.0:
            raise LayoutError("delta must be >= 40 um (room for at least one dc electrode)")
        if self.n_periods < 1:
            raise LayoutError("n_periods must be >= 1")
        if self.extent_z < self.last_transition_end() + 500.0:
            raise LayoutError(
                "extent_z must leave >= 500 um of straight rail beyond the last "
                f"transition zone (need >= {self.last_transition_end() + 500.0:.1f} um)"
            )
        if min(self.a, self.c) <= MIN_RF_WIDTH:
            raise LayoutError(f"rail widths a, c must exceed {MIN_RF_WIDTH} um")
        return self


@dataclass(frozen=True)
class SplineBoundary:
    """Cubic B-spline boundary of a transition zone.

    control_points is the full (z, x) control list including the clamped
    endpoints (gamma, c/2) and (gamma + delta, a/2). The default design form
    has exactly two internal control points. samples sets the number of
    polyline vertices used when the curve is polygonized.
    """

    control_points: tuple = ()
    degree: int = 3
    samples: int = 64

    @classmethod
    def from_internal(cls, internal_points, params: LayoutParams, samples: int = 64):
        """Assemble the full control list from internal (z, x) points."""
        pts = [(params.gamma, params.c / 2.0)]
        pts += [tuple(map(float, p)) for p in internal_points]
        pts += [(params.gamma + params.delta, params.a / 2.0)]
        return cls(control_points=tuple(pts), samples=samples)

    @property
    def internal_points(self):
        return self.control_points[1:-1]

    def validate(self, params: LayoutParams):
        if self.degree != 3:
            raise LayoutError("boundary spline degree is fixed at 3 (cubic)")
        if len(self.control_points) < self.degree + 1:
            raise LayoutError("cubic spline needs >= 4 control points (>= 1 internal)")
        if self.samples < 8:
            raise LayoutError("samples must be >= 8")
        z0, x0 = self.control_points[0]
        z1, x1 = self.control_points[-1]
        if not (z0 == params.gamma and x0 == params.c / 2.0
                and z1 == params.gamma + params.delta and x1 == params.a / 2.0):
            raise LayoutError(
                "spline endpoints must be clamped at (gamma, c/2) and (gamma+delta, a/2); "
                f"got ({z0}, {x0}) and ({z1}, {x1})"
            )
        return self

    def polyline(self, samples=None):
        """Sample the clamped curve, (S, 2) array of (z, x), endpoints exact."""
        n = len(self.control_points)
        k = self.degree
        inner = np.linspace(0.0, 1.0, n - k + 1)[1:-1]
        knots = np.concatenate([np.zeros(k + 1), inner, np.ones(k + 1)])
        spl = BSpline(knots, np.asarray(self.control_points, dtype=float), k)
        t = np.linspace(0.0, 1.0, self.samples if samples is None else samples)
        pts = spl(t)
        pts[0] = self.control_points[0]
        pts[-1] = self.control_points[-1]
        return pts


@dataclass(frozen=True)
class PolygonElectrode:
    """A named planar polygon at y = 0 held at unit potential."""

    name: str
    vertices: np.ndarray          # (N, 2) of (x, z) in um, counter-clockwise
    kind: str = "dc"              # rf | dc | ground

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        object.__setattr__(self, "vertices", v)

    def signed_area(self):
        x, z = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * np.sum(x * np.roll(z, -1) - np.roll(x, -1) * z)

    def shapely(self):
        return ShpPolygon(self.vertices)

    def validate(self):
        if self.kind not in ("rf", "dc", "ground"):
            raise LayoutError(f"electrode {self.name}: unknown kind {self.kind!r}")
        if len(self.vertices) < 3:
            raise LayoutError(f"electrode {self.name}: needs >= 3 vertices")
        if self.signed_area() <= 0.0:
            raise LayoutError(f"electrode {self.name}: vertices must be counter-clockwise")
        if not self.shapely().is_valid:
            raise LayoutError(f"electrode {self.name}: polygon is self-intersecting")
        return self


@dataclass(frozen=True)
class TrapLayout:
    """Full electrode set generated from layout parameters."""

    electrodes: tuple
    params: LayoutParams
    transition: object = "linear"        # "linear" or a SplineBoundary

    def __post_init__(self):
        object.__setattr__(self, "_by_name", {e.name: e for e in self.electrodes})

    def electrode(self, name):
        try:
            return self._by_name[name]
        except KeyError:
            raise LayoutError(f"no electrode named {name!r} in layout") from None

    @property
    def rf_electrodes(self):
        return tuple(e for e in self.electrodes if e.kind == "rf")

    @property
    def dc_electrodes(self):
        return tuple(e for e in self.electrodes if e.kind == "dc")

    @property
    def names(self):
        return tuple(e.name for e in self.electrodes)

    def validate(self, check_overlap=True):
        if not self.electrodes:
            raise LayoutError("layout has no electrodes")
        seen = set()
        for e in self.electrodes:
            e.validate()
            if e.name in seen:
                raise LayoutError(f"duplicate electrode name {e.name!r}")
            seen.add(e.name)
        if check_overlap:
            self._check_no_overlap()
        return self

    def _check_no_overlap(self):
        # interiors must be pairwise disjoint; shared boundaries are fine
        polys = [e.shapely() for e in self.electrodes]
        tree = STRtree(polys)
        # tolerance: overlap area below ~(1 nm x 1 um) is polygonization noise
        area_tol = 1e-5
        for i, p in enumerate(polys):
            for j in tree.query(p):
                if j <= i:
                    continue
                inter = p.intersection(polys[j])
                if inter.area > area_tol:
                    raise LayoutError(
                        f"electrodes {self.electrodes[i].name!r} and "
                        f"{self.electrodes[j].name!r} overlap (area {inter.area:.3g} um^2)"
                    )


# ---------------------------------------------------------------------------
# weave profile and polygon assembly


def _transition_polyline(params, transition):
    """Boundary polyline (z, x) ascending z across one rising transition."""
    if transition == "linear":
        return np.array([[params.gamma, params.c / 2.0],
                         [params.gamma + params.delta, params.a / 2.0]])
    if isinstance(transition, SplineBoundary):
        transition.validate(params)
        pts = transition.polyline()
        if np.any(np.diff(pts[:, 0]) <= 0.0):
            raise LayoutError("spline boundary folds back in z (polyline not monotone)")
        return pts
    raise LayoutError(f"unknown transition kind {transition!r}")


def weave_profile(params: LayoutParams, transition="linear", phase=0):
    """Half-width polyline of one rail family over z in [-extent, extent].

    Returns an (N, 2) array of (z, half_width) ascending in z. phase 0 is
    the center-rail family (width c in the central zone, rising through the
    first transition); phase 1 is the mid-rail family (width a, falling).
    A falling ramp is the 180-degree rotation image of the rising ramp
    about the transition-zone center, which makes the two boundaries of
    every gap channel rotation images of each other.
    """
    ramp = _transition_polyline(params, transition)
    g, dlt, per = params.gamma, params.delta, params.period_z
    direction = +1 if phase == 0 else -1
    half = [(0.0, params.c / 2.0 if direction > 0 else params.a / 2.0)]
    for j in range(params.n_periods):
        z0 = g + j * per
        if direction > 0:
            seg = ramp.copy()
        else:
            # falling ramp: z-reflection of the rising one about the zone
            # center; together with the rail-centerline offsets this makes
            # paired channel boundaries 180-degree rotation images
            seg = np.column_stack([(2.0 * g + dlt) - ramp[::-1, 0],
                                   ramp[::-1, 1]])
        seg = seg + np.array([z0 - g, 0.0])
        half.extend([tuple(p) for p in seg])
        direction = -direction
    zl, xl = half[-1]
    if params.extent_z > zl:
        half.append((params.extent_z, xl))
    right = np.asarray(half, dtype=float)
    left = np.column_stack([-right[::-1, 0], right[::-1, 1]])
    return np.vstack([left[:-1], right])


def _edge_polygon(name, kind, inner, outer):
    """CCW polygon between two ascending-z boundary polylines (z, x)."""
    pts = []
    pts.append((inner[0, 1], inner[0, 0]))
    pts.extend((x, z) for z, x in outer)
    pts.extend((x, z) for z, x in inner[::-1])
    # drop consecutive duplicates
    v = np.array(pts)
    keep = np.ones(len(v), dtype=bool)
    keep[1:] = np.any(np.abs(np.diff(v, axis=0)) > 1e-12, axis=1)
    if np.all(np.abs(v[0] - v[-1]) < 1e-12):
        keep[-1] = False
    return PolygonElectrode(name=name, vertices=v[keep], kind=kind)


def _mirror_x(e: PolygonElectrode, name):
    v = e.vertices.copy()
    v[:, 0] *= -1.0
    return PolygonElectrode(name=name, vertices=v[::-1], kind=e.kind)


def _const_polyline(z_nodes, x):
    return np.column_stack([z_nodes, np.full(len(z_nodes), x)])


def _rf_ensemble(params, even, mid):
    lam = params.lam
    rails = []
    rails.append(_edge_polygon(
        "rf_center", "rf",
        np.column_stack([even[:, 0], -even[:, 1]]),
        np.column_stack([even[:, 0], even[:, 1]]),
    ))
    mid_in = np.column_stack([mid[:, 0], lam - mid[:, 1]])
    mid_out = np.column_stack([mid[:, 0], lam + mid[:, 1]])
    r_mid = _edge_polygon("rf_mid_R", "rf", mid_in, mid_out)
    rails.append(r_mid)
    rails.append(_mirror_x(r_mid, "rf_mid_L"))
    d_in = np.column_stack([even[:, 0], 2.0 * lam - even[:, 1]])
    x_out = 2.0 * lam - params.c / 2.0 + params.d
    d_out = _const_polyline(even[:, 0], x_out)
    r_d = _edge_polygon("rf_outer_R", "rf", d_in, d_out)
    rails.append(r_d)
    rails.append(_mirror_x(r_d, "rf_outer_L"))
    return rails


def _min_rail_widths(params, even, mid):
    return {
        "rf_center": 2.0 * np.min(even[:, 1]),
        "rf_mid": 2.0 * np.min(mid[:, 1]),
        "rf_outer": np.min((2.0 * params.lam - params.c / 2.0 + params.d)
                           - (2.0 * params.lam - even[:, 1])),
    }


def channel_edges(params: LayoutParams, transition="linear"):
    """Boundary interpolators of the gap channels on the +x side.

    Returns {"1": (inner, outer), "2": (inner, outer)} where each entry is
    an ascending-z polyline (z, x). Channel 1 lies between the center and
    mid rails, channel 2 between the mid and outer rails.
    """
    even = weave_profile(params, transition, phase=0)
    mid = weave_profile(params, transition, phase=1)
    lam = params.lam
    zs = np.unique(np.concatenate([even[:, 0], mid[:, 0]]))
    w_e = np.interp(zs, even[:, 0], even[:, 1])
    w_m = np.interp(zs, mid[:, 0], mid[:, 1])
    ch1 = (np.column_stack([zs, w_e]), np.column_stack([zs, lam - w_m]))
    ch2 = (np.column_stack([zs, lam + w_m]), np.column_stack([zs, 2.0 * lam - w_e]))
    return {"1": ch1, "2": ch2}


def _cell_grid(extent):
    """Cell edges at 20 + 40 k covering [-extent, extent]."""
    k0 = int(np.floor((-extent - DC_CELL_LENGTH / 2.0) / DC_CELL_LENGTH))
    k1 = int(np.ceil((extent - DC_CELL_LENGTH / 2.0) / DC_CELL_LENGTH))
    edges = DC_CELL_LENGTH / 2.0 + DC_CELL_LENGTH * np.arange(k0, k1 + 1)
    edges = np.clip(edges, -extent, extent)
    edges = np.unique(edges)
    return edges


def _strip_polyline(polyline, z0, z1):
    """Restrict an ascending-z polyline to [z0, z1], interpolating the cut."""
    z, x = polyline[:, 0], polyline[:, 1]
    inside = (z > z0) & (z < z1)
    zs = np.concatenate([[z0], z[inside], [z1]])
    xs = np.concatenate([[np.interp(z0, z, x)], x[inside], [np.interp(z1, z, x)]])
    return np.column_stack([zs, xs])


def _transition_windows(params):
    wins = []
    for j in range(params.n_periods):
        z0 = params.gamma + j * params.period_z
        wins.append((z0, z0 + params.delta))
        wins.append((-z0 - params.delta, -z0))
    return wins


def _dc_electrodes(params, transition):
    chans = channel_edges(params, transition)
    wins = _transition_windows(params)
    ext = params.extent_z
    edges = _cell_grid(ext)
    out = []
    for ch, (inner, outer) in chans.items():
        gap = outer[:, 1] - inner[:, 1]
        if np.min(gap) < COMP_RAIL_WIDTH + 5.0:
            raise LayoutError(
                f"channel {ch} narrows to {np.min(gap):.1f} um; too tight for the "
                f"{COMP_RAIL_WIDTH:.0f} um compensation rail plus dc cells"
            )
        comp_out = np.column_stack([inner[:, 0], inner[:, 1] + COMP_RAIL_WIDTH])
        comp_name = {"1": "C1", "2": "C3"}[ch]
        comp = _edge_polygon(comp_name, "dc", inner, comp_out)
        out.append(comp)
        out.append(_mirror_x(comp, {"1": "C2", "2": "C4"}[ch]))
        bases = MEANDER_BASES[(ch, "R")]
        bases_l = MEANDER_BASES[(ch, "L")]
        tz_counters = {}
        for k in range(len(edges) - 1):
            z0, z1 = edges[k], edges[k + 1]
            if z1 - z0 < 2.0:   # degenerate sliver at a truncated extent
                continue
            zc = 0.5 * (z0 + z1)
            cell_in = _strip_polyline(np.column_stack(
                [inner[:, 0], inner[:, 1] + COMP_RAIL_WIDTH]), z0, z1)
            cell_out = _strip_polyline(outer, z0, z1)
            win = next((w for w in wins if w[0] <= zc <= w[1]), None)
            if win is not None:
                key = (ch, win)
                slot = tz_counters.get(key, 0) + 1
                tz_counters[key] = slot
                sgn = "p" if zc > 0 else "m"
                name_r = f"T{ch}R{sgn}{slot}"
                name_l = f"T{ch}L{sgn}{slot}"
            else:
                idx = int(round((zc - 0.0) / DC_CELL_LENGTH))
                name_r = f"{bases[idx % 3]}.{idx}"
                name_l = f"{bases_l[idx % 3]}.{idx}"
            cell = _edge_polygon(name_r, "dc", cell_in, cell_out)
            out.append(cell)
            out.append(_mirror_x(cell, name_l))
    x_out = 2.0 * params.lam - params.c / 2.0 + params.d
    dcor = PolygonElectrode("DCOR", np.array([
        [x_out, -ext], [x_out + DCO_WIDTH, -ext],
        [x_out + DCO_WIDTH, ext], [x_out, ext]]), "dc")
    out.append(dcor)
    out.append(_mirror_x(dcor, "DCOL"))
    return out


def build_layout(params: LayoutParams, transition="linear", include_dc=True,
                 check_overlap=None) -> TrapLayout:
    """Construct the trap layout for the given parameters.

    transition is "linear" or a SplineBoundary. With include_dc=False only
    the five rf electrodes are built (the fast path for rf-only shape
    optimization). Overlap checking defaults to on for dc-bearing layouts.
    """
    params.validate()
    even = weave_profile(params, transition, phase=0)
    mid = weave_profile(params, transition, phase=1)
    widths = _min_rail_widths(params, even, mid)
    for rail, wmin in widths.items():
        if wmin <= MIN_RF_WIDTH:
            raise LayoutError(
                f"{rail} narrows to {wmin:.2f} um; rf rails must stay wider "
                f"than {MIN_RF_WIDTH:.0f} um"
            )
    electrodes = _rf_ensemble(params, even, mid)
    if include_dc:
        electrodes = electrodes + _dc_electrodes(params, transition)
    layout = TrapLayout(electrodes=tuple(electrodes), params=params,
                        transition=transition)
    if check_overlap is None:
        check_overlap = include_dc
    layout.validate(check_overlap=check_overlap)
    return layout


def min_channel_width(params: LayoutParams, transition="linear", window=None):
    """Minimum gap-channel width b(z), optionally restricted to a z window."""
    chans = channel_edges(params, transition)
    worst = np.inf
    for inner, outer in chans.values():
        z = inner[:, 0]
        gap = outer[:, 1] - inner[:, 1]
        if window is not None:
            m = (z > window[0]) & (z < window[1])
            if not np.any(m):
                continue
            gap = gap[m]
        worst = min(worst, float(np.min(gap)))
    return worst


# ---------------------------------------------------------------------------
# file round-trip


def layout_to_dict(layout: TrapLayout):
    p = layout.params
    if isinstance(layout.transition, SplineBoundary):
        tr = {"kind": "spline",
              "control_points": [list(pt) for pt in layout.transition.control_points],
              "degree": layout.transition.degree,
              "samples": layout.transition.samples}
    else:
        tr = {"kind": "linear"}
    return {
        "params": {"a": p.a, "b": p.b, "c": p.c, "d": p.d, "gamma": p.gamma,
                   "delta": p.delta, "extent_z": p.extent_z,
                   "n_periods": p.n_periods},
        "transition": tr,
        "electrodes": [
            {"name": e.name, "kind": e.kind,
             "vertices": [[float(x), float(z)] for x, z in e.vertices]}
            for e in layout.electrodes
        ],
    }


def layout_from_dict(data, strict=False):
    try:
        pd = dict(data["params"])
        tr = data["transition"]
        elecs = data["electrodes"]
    except (KeyError, TypeError) as exc:
        raise LayoutError(f"polygon-json missing required key: {exc}") from exc
    params = LayoutParams(**pd)
    params.validate()
    if tr.get("kind") == "linear":
        transition = "linear"
    elif tr.get("kind") == "spline":
        transition = SplineBoundary(
            control_points=tuple(tuple(p) for p in tr["control_points"]),
            degree=tr.get("degree", 3), samples=tr.get("samples", 64))
        transition.validate(params)
    else:
        raise LayoutError(f"unknown transition kind {tr.get('kind')!r}")
    electrodes = []
    for entry in elecs:
        try:
            name, kind = entry["name"], entry["kind"]
            verts = np.asarray(entry["vertices"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise LayoutError(f"malformed electrode entry: {exc}") from exc
        e = PolygonElectrode(name=name, vertices=verts, kind=kind)
        if e.signed_area() < 0.0:
            if strict:
                raise LayoutError(
                    f"electrode {name!r}: clockwise vertex order (strict mode)")
            warnings.warn(f"electrode {name!r}: reorienting clockwise vertices",
                          stacklevel=2)
            e = PolygonElectrode(name=name, vertices=verts[::-1], kind=kind)
        electrodes.append(e)
    layout = TrapLayout(electrodes=tuple(electrodes), params=params,
                        transition=transition)
    layout.validate(check_overlap=True)
    return layout


def export_layout(layout: TrapLayout, path, format="polygon-json"):
    """Write the layout to polygon-json (lossless) or svg (1 unit = 1 um)."""
    if not layout.electrodes:
        raise LayoutError("refusing to export a layout with no electrodes")
    path = str(path)
    if format == "polygon-json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(layout_to_dict(layout), fh, indent=1)
            fh.write("\n")
    elif format == "svg":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(_layout_svg(layout))
    else:
        raise LayoutError(f"unknown export format {format!r}")
    return path


def import_layout(path, strict=False) -> TrapLayout:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return layout_from_dict(data, strict=strict)


_SVG_FILL = {"rf": "#c0392b", "dc": "#b0bec5", "ground": "#e8e8e8"}


def _layout_svg(layout: TrapLayout):
    allv = np.vstack([e.vertices for e in layout.electrodes])
    x0, z0 = allv.min(axis=0) - 50.0
    x1, z1 = allv.max(axis=0) + 50.0
    w, h = x1 - x0, z1 - z0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{x0:.1f} {-z1:.1f} '
        f'{w:.1f} {h:.1f}" width="{w:.0f}" height="{h:.0f}">',
        f'<rect x="{x0:.1f}" y="{-z1:.1f}" width="{w:.1f}" height="{h:.1f}" '
        'fill="white"/>',
    ]
    for e in layout.electrodes:
        pts = " ".join(f"{x:.4f},{-z:.4f}" for x, z in e.vertices)
        parts.append(f'<polygon points="{pts}" fill="{_SVG_FILL[e.kind]}" '
                     f'stroke="#333" stroke-width="0.5"><title>{e.name}</title>'
                     "</polygon>")
    # scale legend: 500 um bar (1 svg user unit = 1 um)
    bx, by = x0 + 20.0, -z0 - 20.0
    parts.append(f'<line x1="{bx:.1f}" y1="{by:.1f}" x2="{bx + 500.0:.1f}" '
                 f'y2="{by:.1f}" stroke="black" stroke-width="4"/>')
    parts.append(f'<text x="{bx:.1f}" y="{by - 10.0:.1f}" font-size="40">'
                 "500 um</text>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
