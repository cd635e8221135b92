"""Restriction and gluing over open subintervals.

A representative restricted to V must not read its kernel outside V, so
evaluation multiplies the kernel argument by a diagonal cutoff: a locally
finite sum of bumps in x, each paired with a radius small enough that the
bump's y-support stays inside V, normalized so the sum is identically 1 on
a neighborhood of the diagonal.  Whenever the kernel support fits inside
that neighborhood the multiplied kernel IS the original one; restriction
is exact there, which is what makes it compatible with every verdict
already measured on the larger domain.

Gluing goes the other way: partition-of-unity weights recombine local
sections into one representative on the union, each part reading only a
cutoff kernel of its own chart.  A second gluing mode handles parts that
never read the evaluation point directly; it rebases x through the
kernel's first moment and hands each part a windowed kernel slice taken
at x but evaluated at a fixed anchor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import locality as loc
from .interval import Interval
from .numerics import EpsGrid, batch_integrate
from .smoothfn import PlateauDeriv, Plateau, Quot, SmoothFn, X, affine
from .smoothfn import add as fn_add
from .symexpr import (GlueNode, GlueTerm, Representative, RestrictNode,
                      StarGlueNode, StarTerm, _kernel_moment, tag_of)
from .testobjects import _smoothed_window_deriv

_MAX_DEPTH = 60


def _as_interval(V) -> Interval:
    if isinstance(V, Interval):
        return V
    lo, hi = V
    return Interval(float(lo), float(hi))


@dataclass(frozen=True)
class _CutoffPiece:
    lo: float
    hi: float
    radius: float
    bump: SmoothFn


def _piece(lo: float, hi: float, radius: float, V: Interval) -> _CutoffPiece:
    if not (V.lo < lo - radius and hi + radius < V.hi):
        raise ValueError(
            f"piece ({lo}, {hi}) fattened by {radius} escapes {V}")
    w = 0.5 * (hi - lo)
    m = 0.5 * (hi + lo)
    return _CutoffPiece(lo, hi, radius, Plateau(affine(1.0 / w, -m / w)))


_PLATEAU_D = {}


def _profile(k: int):
    if k not in _PLATEAU_D:
        _PLATEAU_D[k] = PlateauDeriv(X, k)
    return _PLATEAU_D[k]


class DiagonalCutoff:
    """The two-variable cutoff rho(x)(y) of an open interval V.

    Pieces are one central interval plus dyadic collars of the boundary;
    each radius is half the gap between the piece's closure and the
    boundary of V, so every bump rho(x) has support certified inside V.
    The collar ladder grows lazily as evaluation points approach the
    boundary, and any single x meets at most three pieces.
    """

    def __init__(self, V: Interval):
        self.V = V
        h = 0.5 * V.length
        self._h = h
        self._pieces = [_piece(V.lo + h / 4.0, V.hi - h / 4.0, h / 8.0, V)]
        self._depth = 0
        self._weights = {}
        self._chi_diffs = {}

    def __eq__(self, other):
        return isinstance(other, DiagonalCutoff) and other.V == self.V

    def __hash__(self):
        return hash(("diagonal-cutoff", self.V))

    def __repr__(self):
        return f"DiagonalCutoff({self.V})"

    @property
    def interval(self) -> Interval:
        return self.V

    def wrap(self, family):
        return RestrictedFamily(family, self)

    def _ensure(self, depth: int):
        h, V = self._h, self.V
        while self._depth < depth:
            k = self._depth + 1
            band_lo, band_hi = h * 2.0 ** (-k - 2), h * 2.0 ** (-k)
            r = h * 2.0 ** (-k - 3)
            self._pieces.append(_piece(V.lo + band_lo, V.lo + band_hi, r, V))
            self._pieces.append(_piece(V.hi - band_hi, V.hi - band_lo, r, V))
            self._depth = k

    def _depth_for(self, d_min: float) -> int:
        if d_min >= self._h:
            return 1
        return min(_MAX_DEPTH, max(1, math.ceil(math.log2(self._h / d_min))))

    def _depth_for_points(self, x) -> int:
        d = np.minimum(x - self.V.lo, self.V.hi - x)
        d = d[d > 0.0]
        if d.size == 0:
            return 1
        return self._depth_for(float(d.min()))

    def cover(self, depth: int = 1):
        """Materialized pieces to the given collar depth: (interval, radius)."""
        self._ensure(depth)
        return [(Interval(p.lo, p.hi), p.radius)
                for p in self._pieces[:1 + 2 * depth]]

    def _weights_at(self, depth: int):
        if depth not in self._weights:
            self._ensure(depth)
            subset = self._pieces[:1 + 2 * depth]
            total = subset[0].bump
            for p in subset[1:]:
                total = fn_add(total, p.bump)
            self._weights[depth] = tuple(
                (p, Quot(p.bump, total)) for p in subset)
        return self._weights[depth]

    def _chi_d(self, depth: int, i: int, s: int):
        key = (depth, i, s)
        if key not in self._chi_diffs:
            self._chi_diffs[key] = self._weights_at(depth)[i][1].diff(s)
        return self._chi_diffs[key]

    def weights(self, x):
        """(piece, weight value array) for the pieces active anywhere in x."""
        x = np.asarray(x, dtype=float)
        depth = self._depth_for_points(x)
        out = []
        for p, chi in self._weights_at(depth):
            vals = chi(x)
            if np.any(vals != 0.0):
                out.append((p, vals))
        return out

    def one_zone_radius(self, x):
        """Radius of the certified rho(x) == 1 ball around each x.

        Zero outside V.  Inside, it is half the smallest radius among the
        pieces containing x, which is bounded below by a fixed multiple of
        the boundary distance.
        """
        x = np.asarray(x, dtype=float)
        d = np.minimum(x - self.V.lo, self.V.hi - x)
        out = np.zeros(x.shape)
        inside = d > 0.0
        if not np.any(inside):
            return out
        depth = self._depth_for(float(d[inside].min()))
        self._ensure(depth)
        r = np.full(x.shape, np.inf)
        for p in self._pieces[:1 + 2 * depth]:
            m = (x > p.lo) & (x < p.hi)
            r[m] = np.minimum(r[m], p.radius)
        hit = inside & np.isfinite(r)
        out[hit] = 0.5 * r[hit]
        return out

    def rho_dxdy(self, i: int, q: int, x, y):
        """Exact d_x^i d_y^q of rho(x)(y), broadcast over x and y."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        depth = self._depth_for_points(x)
        out = np.zeros(np.broadcast(x, y).shape)
        for idx, (p, _) in enumerate(self._weights_at(depth)):
            u = (y - x) / p.radius
            for s in range(i + 1):
                prof = _profile(i - s + q)(u)
                if not np.any(prof):
                    continue
                out = out + (math.comb(i, s) * (-1.0) ** (i - s)
                             / p.radius ** (i - s + q)) * \
                    self._chi_d(depth, idx, s)(x) * prof
        return out

    def rho(self, x, y):
        return self.rho_dxdy(0, 0, x, y)

    def describe(self) -> dict:
        return {"kind": "diagonal-cutoff", "interval": [self.V.lo, self.V.hi]}


def make_diagonal_cutoff(V) -> DiagonalCutoff:
    """Diagonal cutoff of the open interval V, pieces certified inside V."""
    return DiagonalCutoff(_as_interval(V))


class RestrictedFamily:
    """A kernel family multiplied by a diagonal cutoff.

    For eps within the one-zone radius at x the cutoff is invisible and
    every pairing delegates to the parent unchanged; outside the zone the
    Leibniz expansion against the exact cutoff derivatives applies, with
    smooth and step pairings integrated at value level.
    """

    def __init__(self, parent, cutoff: DiagonalCutoff):
        self.parent = parent
        self.cutoff = cutoff
        self.label = f"restricted({getattr(parent, 'label', '?')})"

    @property
    def is_zero(self):
        return getattr(self.parent, "is_zero", False)

    @property
    def domain(self) -> Interval:
        return self.cutoff.interval

    def order_at(self, eps: float) -> int:
        return self.parent.order_at(eps)

    def support_bounds(self, eps: float, x):
        return self.parent.support_bounds(eps, x)

    def _zone(self, eps: float, x):
        return eps <= self.cutoff.one_zone_radius(x)

    def kernel(self, eps: float, x, y):
        return self.kernel_dxdy(eps, 0, 0, x, y)

    def kernel_dxdy(self, eps: float, j: int, k: int, x, y):
        eps = float(eps)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        bshape = np.broadcast(x, y).shape
        xb = np.broadcast_to(x, bshape)
        yb = np.broadcast_to(y, bshape)
        zone = np.broadcast_to(self._zone(eps, x), bshape)
        out = np.zeros(bshape)
        if np.any(zone):
            out[zone] = self.parent.kernel_dxdy(eps, j, k, xb[zone], yb[zone])
        rest = ~zone
        if np.any(rest):
            xr, yr = xb[rest], yb[rest]
            acc = np.zeros(xr.shape)
            for i in range(j + 1):
                for q in range(k + 1):
                    acc = acc + math.comb(j, i) * math.comb(k, q) * \
                        self.cutoff.rho_dxdy(i, q, xr, yr) * \
                        self.parent.kernel_dxdy(eps, j - i, k - q, xr, yr)
            out[rest] = acc
        return out

    def smooth_pairing(self, eps: float, j: int, x, fn: SmoothFn):
        eps = float(eps)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        zone = self._zone(eps, x)
        out = np.zeros(x.shape)
        if np.any(zone):
            out[zone] = self.parent.smooth_pairing(eps, j, x[zone], fn)
        rest = ~zone
        if np.any(rest):
            xr = x[rest]
            lo, hi = self.parent.support_bounds(eps, xr)
            V = self.cutoff.interval
            lo, hi = np.maximum(lo, V.lo), np.minimum(hi, V.hi)

            def f(y):
                return fn(y) * self.kernel_dxdy(eps, j, 0, xr[:, None], y)

            out[rest] = batch_integrate(f, lo, hi)
        return out

    def step_pairing(self, eps: float, j: int, x, a: float):
        eps = float(eps)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        zone = self._zone(eps, x)
        out = np.zeros(x.shape)
        if np.any(zone):
            out[zone] = self.parent.step_pairing(eps, j, x[zone], a)
        rest = ~zone
        if np.any(rest):
            xr = x[rest]
            lo, hi = self.parent.support_bounds(eps, xr)
            V = self.cutoff.interval
            lo = np.maximum(np.maximum(lo, V.lo), a)
            hi = np.minimum(hi, V.hi)

            def f(y):
                return self.kernel_dxdy(eps, j, 0, xr[:, None], y)

            out[rest] = batch_integrate(f, lo, hi)
        return out

    def window_deriv(self, chi, k: int, a: float, eps: float):
        """d^k/dy^k of int chi(x) K(x, y) dx at y = a.

        Delegates wholesale when the whole x-support sits in the one-zone
        (the factor 2 absorbs radius dips between samples); otherwise the
        raw quadrature runs, which only ever happens at shallow eps where
        nothing is amplified.
        """
        xs = np.linspace(a - eps, a + eps, 9)
        if eps <= 0.5 * float(self.cutoff.one_zone_radius(xs).min()):
            return _smoothed_window_deriv(self.parent, chi, k, a, eps)

        def f(xp):
            return chi(xp) * self.kernel_dxdy(eps, 0, k, xp, a)

        return float(batch_integrate(f, np.array([a - eps]),
                                     np.array([a + eps]))[0])

    def describe(self) -> dict:
        V = self.cutoff.interval
        return {"kind": "restricted", "interval": [V.lo, V.hi],
                "parent": self.parent.describe()}


def restrict(R: Representative, V) -> Representative:
    """Restriction of a representative to an open subinterval.

    Evaluation multiplies the kernel argument by the diagonal cutoff of V
    extended by zero, so for eps below the one-zone radius at x the
    restricted and unrestricted evaluations agree exactly.  The locality
    type is preserved.
    """
    V = _as_interval(V)
    if not loc.admissibility(R.locality, "sheaf"):
        raise ValueError(
            f"locality {R.locality} is not sheaf-admissible; cannot restrict")
    if not V.subset_of(R.domain):
        raise ValueError(f"{V} is not a subinterval of the domain {R.domain}")
    return Representative(RestrictNode(R.expr, make_diagonal_cutoff(V)), V,
                          R.locality)


def restrict_testobject(phi, V) -> RestrictedFamily:
    """The cutoff-multiplied family on V; a genuine test object there."""
    V = _as_interval(V)
    dom = getattr(phi, "domain", None)
    if dom is not None and not V.subset_of(dom):
        raise ValueError(f"{V} is not a subinterval of the domain {dom}")
    return RestrictedFamily(phi, make_diagonal_cutoff(V))


def equivalent_on(phi, psi, W, grid: EpsGrid = None, tol: float = 1e-12,
                  samples: int = 5, tail: int = 3) -> bool:
    """Finite proxy for agreement of two kernel families over W.

    For each probed x some surrounding patch must reach kernel-level
    agreement below tol (absolute, on kernel values) at every eps in the
    tail of the grid, with the sup taken over the patch and over y across
    the fattened supports.  Refutations are sound; certification is only
    as strong as the probe set, which is the usual trade.
    """
    W = _as_interval(W)
    grid = grid if grid is not None else EpsGrid()
    lo, hi = W.lo, W.hi
    for f in (phi, psi):
        dom = getattr(f, "domain", None)
        if dom is not None:
            lo, hi = max(lo, dom.lo), min(hi, dom.hi)
    if lo >= hi:
        raise ValueError("probe window is disjoint from the family domains")
    eps_values = [float(e) for e in grid.values]
    for x0 in np.linspace(lo, hi, samples + 2)[1:-1]:
        agreed = False
        for radius in (0.04 * (hi - lo), 0.01 * (hi - lo), 0.0025 * (hi - lo)):
            xs = x0 + np.linspace(-radius, radius, 5)
            xs = xs[(xs > lo) & (xs < hi)]
            sups = []
            for eps in eps_values:
                worst = 0.0
                for xp in xs:
                    ys = xp + eps * np.linspace(-1.25, 1.25, 101)
                    gap = phi.kernel(eps, xp, ys) - psi.kernel(eps, xp, ys)
                    worst = max(worst, float(np.max(np.abs(gap))))
                sups.append(worst)
            if all(s < tol for s in sups[-tail:]):
                agreed = True
                break
        if not agreed:
            return False
    return True


def _chart_bump(c: Interval, ext_lo: float = 0.0,
                ext_hi: float = 0.0) -> SmoothFn:
    # extensions push the shoulder outside the working region so the bump
    # is exactly 1 there; the support inside the region never grows
    w = 0.5 * (c.length + ext_lo + ext_hi)
    m = 0.5 * (c.lo - ext_lo + c.hi + ext_hi)
    return Plateau(affine(1.0 / w, -m / w))


class PartitionOfUnity:
    """Plateau-bump weights over a finite connected cover, summing to 1.

    Each weight is its chart's bump divided by the total, so the sum
    telescopes to 1 wherever any bump is positive and every support stays
    inside its chart.
    """

    def __init__(self, cover):
        charts = [_as_interval(V) for V in cover]
        if not charts:
            raise ValueError("empty cover")
        order = sorted(range(len(charts)), key=lambda i: charts[i].lo)
        reach = charts[order[0]].hi
        for i in order[1:]:
            if charts[i].lo >= reach:
                raise ValueError(
                    "cover has a gap: the union is not an open interval")
            reach = max(reach, charts[i].hi)
        self.cover = tuple(charts)
        self.union = Interval(min(c.lo for c in charts),
                              max(c.hi for c in charts))
        # charts touching the union boundary get their bump extended past
        # it, otherwise the lone covering shoulder underflows to 0.0 near
        # the edge and the quotient convention would report 0 there
        bumps = [_chart_bump(c,
                             ext_lo=c.length if c.lo == self.union.lo else 0.0,
                             ext_hi=c.length if c.hi == self.union.hi else 0.0)
                 for c in charts]
        total = bumps[0]
        for b in bumps[1:]:
            total = fn_add(total, b)
        self.weights = tuple(Quot(b, total) for b in bumps)
        xs = np.linspace(self.union.lo, self.union.hi, 257)[1:-1]
        resid = np.abs(sum(w(xs) for w in self.weights) - 1.0)
        if float(resid.max()) > 1e-12:
            raise ValueError("weights do not sum to 1 on the union")

    def __len__(self):
        return len(self.cover)

    def describe(self) -> dict:
        return {"kind": "partition-of-unity",
                "cover": [[c.lo, c.hi] for c in self.cover]}


def partition_of_unity(cover) -> PartitionOfUnity:
    return PartitionOfUnity(cover)


def moment_map(family, eps: float, x):
    """First moment int y k_eps(x, y) dy of the kernel at each x.

    Tracks x to within the support radius; with a symmetric profile and no
    modulation the odd integrand makes it equal x exactly.
    """
    return _kernel_moment(family, float(eps), x, 0)


def _check_parts(charts, parts, pou):
    if len(charts) != len(parts) or not parts:
        raise ValueError("cover and parts must pair up, one part per chart")
    if pou is not None and tuple(pou.cover) != tuple(charts):
        raise ValueError("partition of unity does not match the cover")
    for part, chart in zip(parts, charts):
        if not loc.admissibility(part.locality, "sheaf"):
            raise ValueError(
                f"part on {chart} has locality {part.locality}, which is "
                "not sheaf-admissible")
        if not chart.subset_of(part.domain):
            raise ValueError(
                f"part domain {part.domain} does not cover the chart {chart}")


def glue(cover, parts, pou: PartitionOfUnity = None) -> Representative:
    """Weighted sum of cutoff-restricted parts, one representative on the
    union of the cover.

    Restricting the result back to a chart reproduces that part up to a
    negligible net wherever the parts agree on overlaps; disagreement on
    an overlap is not an error here, it surfaces in the verdicts.
    """
    charts = [_as_interval(V) for V in cover]
    parts = list(parts)
    pou = pou if pou is not None else PartitionOfUnity(charts)
    _check_parts(charts, parts, pou)
    terms = tuple(
        GlueTerm(pou.weights[i], parts[i].expr,
                 make_diagonal_cutoff(charts[i]), charts[i])
        for i in range(len(parts)))
    expr = GlueNode(terms)
    return Representative(expr, pou.union, tag_of(expr))


def _star_window(chart: Interval) -> SmoothFn:
    # plateau equal to 1 on chart plus a quarter-width margin each side
    w = 1.25 * chart.length
    return Plateau(affine(1.0 / w, -chart.mid / w))


def glue_star_x(cover, parts, pou: PartitionOfUnity = None,
                anchors=None) -> Representative:
    """Glue parts that never read the evaluation point directly.

    The partition weights compose with the kernel's first moment, which
    recovers x to within the support radius, and each part receives the
    windowed kernel slice of x evaluated at a fixed anchor in its chart.
    Anchors default to the chart midpoints.
    """
    charts = [_as_interval(V) for V in cover]
    parts = list(parts)
    pou = pou if pou is not None else PartitionOfUnity(charts)
    _check_parts(charts, parts, pou)
    for part, chart in zip(parts, charts):
        if part.locality.x:
            raise ValueError(
                f"part on {chart} reads x directly (locality "
                f"{part.locality}); star gluing needs x-star parts")
    if anchors is None:
        anchors = [c.mid for c in charts]
    anchors = [float(a) for a in anchors]
    if len(anchors) != len(charts):
        raise ValueError("one anchor per chart")
    for a, chart in zip(anchors, charts):
        if not chart.lo < a < chart.hi:
            raise ValueError(f"anchor {a} is outside its chart {chart}")
    terms = tuple(
        StarTerm(pou.weights[i], _star_window(charts[i]), parts[i].expr,
                 anchors[i], charts[i])
        for i in range(len(parts)))
    expr = StarGlueNode(terms, 0)
    return Representative(expr, pou.union, tag_of(expr))
