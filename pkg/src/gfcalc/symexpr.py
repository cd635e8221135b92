"""Expression trees over kernel pairings: the representable generalized
functions on an open interval.

A representative is a polynomial in distribution pairings, smooth functions
of x, and eps itself, tagged with the locality type its evaluation actually
uses.  Both derivative operators act on the same tree shape and differ only
on pairing leaves.  Pullback along a diffeomorphism wraps the tree and
reroutes every pairing through the pushed-forward kernel; the rerouting is
done with derivatives taken in source coordinates, so no kernel derivative
is ever approximated numerically.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import locality as loc
from .distributions import DiracDelta, Distribution, HeavisideJump, SmoothDensity
from .interval import Interval
from .locality import Phi, make
from .numerics import batch_integrate
from .smoothfn import (Const as FnConst, SmoothFn, X as FnX, as_smooth,
                       fn_from_json, fn_to_json, Quot, substitute)
from .smoothfn import add as fn_add, mul as fn_mul
from .testobjects import CombinedFamily, KernelShiftDirection, family_from_json

GATEAUX_STEP = 1e-3
NUMERIC_X_STEP = 1e-3


# --- distributions as finite linear combinations -------------------------------

def _prim_derivative(p: Distribution):
    """Distributional derivative of one primitive, as (coeff, prim) terms."""
    if isinstance(p, DiracDelta):
        return [(1.0, DiracDelta(p.point, p.order + 1))]
    if isinstance(p, HeavisideJump):
        return [(1.0, DiracDelta(p.point, 0))]
    if isinstance(p, SmoothDensity):
        return [(1.0, SmoothDensity(p.fn.diff(), p.name and p.name + "'"))]
    raise TypeError(f"no derivative rule for {type(p).__name__}")


def _prim_locations(p: Distribution):
    if isinstance(p, (DiracDelta, HeavisideJump)):
        return [p.point]
    return []


class DistSum:
    """Finite linear combination of delta derivatives, jumps, densities.

    Terms are merged and sorted on construction, so two combinations built
    in different orders compare equal.
    """

    __slots__ = ("terms",)

    def __init__(self, terms):
        acc = {}
        for c, p in terms:
            if not isinstance(p, Distribution):
                raise TypeError(f"not a distribution primitive: {p!r}")
            acc[p] = acc.get(p, 0.0) + float(c)
        kept = [(c, p) for p, c in acc.items() if c != 0.0]
        kept.sort(key=lambda t: t[1].label())
        self.terms = tuple(kept)

    def derivative(self) -> "DistSum":
        out = []
        for c, p in self.terms:
            out.extend((c * c2, p2) for c2, p2 in _prim_derivative(p))
        return DistSum(out)

    def locations(self):
        return [a for _, p in self.terms for a in _prim_locations(p)]

    def pair_kernel(self, family, eps: float, j: int, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for c, p in self.terms:
            out = out + c * p.pair_kernel(family, eps, j, x)
        return out

    def pair_testfn(self, chi: SmoothFn, lo: float, hi: float) -> float:
        return sum(c * p.pair_testfn(chi, lo, hi) for c, p in self.terms)

    def label(self) -> str:
        if not self.terms:
            return "0"
        bits = []
        for c, p in self.terms:
            bits.append(p.label() if c == 1.0 else f"{c:g}*{p.label()}")
        return " + ".join(bits)

    def __eq__(self, other):
        return isinstance(other, DistSum) and self.terms == other.terms

    def __hash__(self):
        return hash(self.terms)

    def __repr__(self):
        return self.label()


def as_dist(u) -> DistSum:
    """Coerce a primitive, a smooth function, or a number to a DistSum."""
    if isinstance(u, DistSum):
        return u
    if isinstance(u, Distribution):
        return DistSum([(1.0, u)])
    if isinstance(u, SmoothFn) or isinstance(u, (int, float)):
        return DistSum([(1.0, SmoothDensity(as_smooth(u)))])
    raise TypeError(f"cannot interpret {u!r} as a distribution")


def delta(point: float = 0.0, order: int = 0) -> DistSum:
    return DistSum([(1.0, DiracDelta(point, order))])


def step(point: float = 0.0) -> DistSum:
    return DistSum([(1.0, HeavisideJump(point))])


def density(fn, name: str = "") -> DistSum:
    return DistSum([(1.0, SmoothDensity(as_smooth(fn), name))])


# --- diffeomorphisms ------------------------------------------------------------

@dataclass(frozen=True)
class Diffeo:
    """A smooth change of variables with user-supplied inverse and derivative.

    The inverse may be an approximation (for maps with no elementary
    inverse); construction checks it undoes the forward map to 1e-9 on a
    sample grid, which keeps downstream pullback errors well under the
    tolerances any consumer asserts.
    """

    forward: SmoothFn
    inverse: SmoothFn
    forward_derivative: SmoothFn
    source: Interval
    target: Interval

    def __post_init__(self):
        grid = self.source.inner_grid(33, margin=1e-6)
        roundtrip = np.max(np.abs(self.inverse(self.forward(grid)) - grid))
        if roundtrip > 1e-9:
            raise ValueError(f"inverse fails to undo forward: {roundtrip:.3e}")
        d = self.forward_derivative(grid)
        if np.any(d == 0.0) or (np.min(d) < 0.0 < np.max(d)):
            raise ValueError("forward derivative must be nonvanishing")
        img = self.forward(grid)
        if np.min(img) < self.target.lo - 1e-12 or \
                np.max(img) > self.target.hi + 1e-12:
            raise ValueError("forward map leaves the target interval")

    @property
    def orientation(self) -> float:
        return 1.0 if float(self.forward_derivative(self.source.mid)) > 0 else -1.0

    def inverse_derivative(self) -> SmoothFn:
        # (mu^-1)'(y) = 1 / mu'(mu^-1(y))
        return Quot(FnConst(1.0), substitute(self.forward_derivative, self.inverse))

    def describe(self) -> dict:
        return {
            "forward": fn_to_json(self.forward),
            "inverse": fn_to_json(self.inverse),
            "derivative": fn_to_json(self.forward_derivative),
            "source": [self.source.lo, self.source.hi],
            "target": [self.target.lo, self.target.hi],
        }

    @staticmethod
    def from_json(d: dict) -> "Diffeo":
        return Diffeo(fn_from_json(d["forward"]), fn_from_json(d["inverse"]),
                      fn_from_json(d["derivative"]),
                      Interval(*d["source"]), Interval(*d["target"]))


def identity_diffeo(domain: Interval) -> Diffeo:
    return Diffeo(FnX, FnX, FnConst(1.0), domain, domain)


def compose_diffeos(outer: Diffeo, inner: Diffeo) -> Diffeo:
    """The map x -> outer(inner(x))."""
    if inner.target != outer.source:
        raise ValueError("composition needs inner.target == outer.source")
    return Diffeo(
        forward=substitute(outer.forward, inner.forward),
        inverse=substitute(inner.inverse, outer.inverse),
        forward_derivative=fn_mul(substitute(outer.forward_derivative,
                                             inner.forward),
                                  inner.forward_derivative),
        source=inner.source,
        target=outer.target,
    )


# --- the pushed-forward kernel family -------------------------------------------

def _advance_terms(terms, invd):
    """One d/dx step on sum c(x) * g^(i)(inv(x)); i=None marks a constant."""
    acc = {}
    for c, i in terms:
        dc = c.diff()
        if not (isinstance(dc, FnConst) and dc.value == 0.0):
            acc[i] = fn_add(acc[i], dc) if i in acc else dc
        if i is not None:
            bump = fn_mul(c, invd)
            acc[i + 1] = fn_add(acc[i + 1], bump) if i + 1 in acc else bump
    return [(c, i) for i, c in acc.items()]


class PushedFamily:
    """A kernel family transported along a diffeomorphism, target coordinates.

    Every pairing reduces to pairings of the parent family: x-derivatives
    are expanded through the inverse map symbolically, so each parent call
    carries only value-level integrands and exact kernel derivatives.
    """

    def __init__(self, parent, mu: Diffeo):
        self.parent = parent
        self.mu = mu
        self._inv = mu.inverse
        self._invd = mu.inverse_derivative()
        self.label = f"pushed({getattr(parent, 'label', '?')})"

    @property
    def is_zero(self):
        return getattr(self.parent, "is_zero", False)

    @property
    def domain(self) -> Interval:
        return self.mu.target

    def order_at(self, eps: float) -> int:
        return self.parent.order_at(eps)

    def support_bounds(self, eps: float, x):
        xi = self._inv(np.asarray(x, dtype=float))
        a = self.mu.forward(xi - eps)
        b = self.mu.forward(xi + eps)
        return np.minimum(a, b), np.maximum(a, b)

    def _x_terms(self, j):
        terms = [(FnConst(1.0), 0)]
        for _ in range(j):
            terms = _advance_terms(terms, self._invd)
        return terms

    def kernel(self, eps: float, x, y):
        return self.kernel_dxdy(eps, 0, 0, x, y)

    def kernel_dxdy(self, eps: float, j: int, k: int, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        w = fn_mul(FnConst(self.mu.orientation), self._invd)
        yterms = [(w, 0)]
        for _ in range(k):
            yterms = _advance_terms(yterms, self._invd)
        xterms = self._x_terms(j)
        xi, eta = self._inv(x), self._inv(y)
        out = np.zeros(np.broadcast(x, y).shape)
        for cx, jx in xterms:
            for cy, ky in yterms:
                out = out + cx(x) * cy(y) * \
                    self.parent.kernel_dxdy(eps, jx, ky, xi, eta)
        return out

    def smooth_pairing(self, eps: float, j: int, x, fn: SmoothFn):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        pulled = substitute(fn, self.mu.forward)
        xi = self._inv(x)
        out = np.zeros(x.shape)
        for c, i in self._x_terms(j):
            out = out + c(x) * self.parent.smooth_pairing(eps, i, xi, pulled)
        return out

    def step_pairing(self, eps: float, j: int, x, a: float):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        b = float(self._inv(a))
        if self.mu.orientation > 0:
            terms = [(FnConst(1.0), 0)]
        else:
            # {y' > a} pulls back to {y < b}: complement of the step
            terms = [(FnConst(1.0), None), (FnConst(-1.0), 0)]
        for _ in range(j):
            terms = _advance_terms(terms, self._invd)
        xi = self._inv(x)
        out = np.zeros(x.shape)
        for c, i in terms:
            if i is None:
                out = out + c(x)
            else:
                out = out + c(x) * self.parent.step_pairing(eps, i, xi, b)
        return out

    def describe(self) -> dict:
        return {"kind": "pushed", "map": self.mu.describe(),
                "parent": self.parent.describe()}


class _AnchoredFamily:
    """Kernel slices frozen at stored source points, times a fixed window.

    Element i of every pairing reads the parent kernel of sources[i]
    (after src_order many x-derivatives), multiplied by the window; the
    nominal evaluation point carries no information.  Nothing depends on
    that point, so pairings of positive j vanish identically.
    """

    def __init__(self, parent, window: SmoothFn, sources, src_order: int = 0):
        self.parent = parent
        self.window = window
        self.sources = np.atleast_1d(np.asarray(sources, dtype=float))
        self.src_order = int(src_order)
        self.label = f"anchored({getattr(parent, 'label', '?')})"

    @property
    def is_zero(self):
        return getattr(self.parent, "is_zero", False)

    @property
    def domain(self) -> Interval:
        return self.parent.domain

    def order_at(self, eps: float) -> int:
        return self.parent.order_at(eps)

    def _src(self, x):
        # sources line up with the leading axis; trailing axes broadcast
        s = self.sources
        return s.reshape(s.shape + (1,) * (np.asarray(x).ndim - 1))

    def support_bounds(self, eps: float, x):
        x = np.asarray(x, dtype=float)
        s = np.broadcast_to(self._src(x), x.shape)
        return self.parent.support_bounds(eps, s)

    def kernel(self, eps: float, x, y):
        return self.kernel_dxdy(eps, 0, 0, x, y)

    def kernel_dxdy(self, eps: float, j: int, k: int, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if j > 0:
            return np.zeros(np.broadcast(x, y).shape)
        s = self._src(x)
        out = np.zeros(np.broadcast(x, y).shape)
        for m in range(k + 1):
            out = out + math.comb(k, m) * self.window.diff(m)(y) * \
                self.parent.kernel_dxdy(eps, self.src_order, k - m, s, y)
        return out

    def smooth_pairing(self, eps: float, j: int, x, fn: SmoothFn):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if j > 0:
            return np.zeros(x.shape)
        s = np.broadcast_to(self._src(x), x.shape)
        return self.parent.smooth_pairing(eps, self.src_order, s,
                                          fn_mul(fn, self.window))

    def step_pairing(self, eps: float, j: int, x, a: float):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if j > 0:
            return np.zeros(x.shape)
        s = np.broadcast_to(self._src(x), x.shape).copy()
        lo, hi = self.parent.support_bounds(eps, s)
        out = np.empty(x.shape)
        # window == 1 across the support: convexity of the plateau's
        # one-zone makes the endpoint test sufficient
        plain = (self.window(lo) == 1.0) & (self.window(hi) == 1.0)
        if np.any(plain):
            out[plain] = self.parent.step_pairing(eps, self.src_order,
                                                  s[plain], a)
        rest = ~plain
        if np.any(rest):
            sr = s[rest]

            def f(y):
                return self.window(y) * \
                    self.parent.kernel_dxdy(eps, self.src_order, 0,
                                            sr[:, None], y)

            out[rest] = batch_integrate(f, np.maximum(lo[rest], a), hi[rest])
        return out

    def describe(self) -> dict:
        return {"kind": "anchored", "window": fn_to_json(self.window),
                "src_order": self.src_order,
                "parent": self.parent.describe()}


def _kernel_moment(fam, eps: float, x, j: int = 0):
    """int y * d_x^j k_eps(x, y) dy, one value per element of x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lo, hi = fam.support_bounds(eps, x)

    def f(y):
        return y * fam.kernel_dxdy(eps, j, 0, x[:, None], y)

    return batch_integrate(f, lo, hi)


# --- expression nodes ------------------------------------------------------------

@dataclass(frozen=True)
class Pairing:
    """<u, d^j/dx^j of the ambient kernel at x>."""
    dist: DistSum
    j: int = 0


@dataclass(frozen=True)
class FrozenPairing:
    """Same pairing, but against a fixed stored family; ambient one ignored."""
    dist: DistSum
    theta: object
    j: int = 0


@dataclass(frozen=True)
class SmoothLeaf:
    fn: SmoothFn


@dataclass(frozen=True)
class XLeaf:
    pass


@dataclass(frozen=True)
class EpsLeaf:
    pass


@dataclass(frozen=True)
class ConstLeaf:
    value: float


@dataclass(frozen=True)
class AddNode:
    a: object
    b: object


@dataclass(frozen=True)
class MulNode:
    a: object
    b: object


@dataclass(frozen=True)
class NegNode:
    a: object


@dataclass(frozen=True)
class PullbackNode:
    child: object
    mu: Diffeo


@dataclass(frozen=True)
class GeomDerivNode:
    """Geometric derivative left unexpanded; evaluated by its definition."""
    child: object


@dataclass(frozen=True)
class RestrictNode:
    """Child evaluated with the kernel multiplied by a diagonal cutoff."""
    child: object
    cutoff: object  # duck-typed: .interval, .wrap(family)


@dataclass(frozen=True)
class GlueTerm:
    weight: SmoothFn   # partition weight in x, supported in chart
    child: object
    cutoff: object
    chart: Interval
    # derivation history: one entry per derivative taken of the enclosing
    # node, 1 when this term carries the weight's derivative and 0 when it
    # carries the child's; terms with equal paths are comparable across
    # charts and their weights sum to exactly 1 (all-zero path) or 0
    wpath: tuple = ()


@dataclass(frozen=True)
class GlueNode:
    """Sum of weight(x) * part(cutoff kernel) over the charts of a cover.

    Evaluation uses the telescoping form base + sum w * (value - base), so
    charts whose parts agree bitwise glue with no floating residue even
    where several weights are active.
    """
    terms: tuple


@dataclass(frozen=True)
class StarTerm:
    weight: SmoothFn   # partition weight, composed with the kernel moment
    window: SmoothFn   # multiplies the kernel slice, == 1 near the chart
    child: object
    anchor: float
    chart: Interval


@dataclass(frozen=True)
class StarGlueNode:
    """Gluing for parts that never read x directly: the weights read the
    kernel's first moment and each part sees a windowed kernel slice taken
    at x but evaluated at a fixed anchor.  x_order counts componentwise
    derivatives, applied by chain rule at evaluation time (orders 0..2)."""
    terms: tuple
    x_order: int = 0


@dataclass(frozen=True)
class XDerivNode:
    """Numeric x-derivative; only reached through unexpanded geometric nodes."""
    child: object
    order: int = 1


# --- locality tags ----------------------------------------------------------------

def _leaf_tag(e):
    if isinstance(e, Pairing):
        if e.j == 0:
            return make(Phi.VALUE_COMPONENT, False, False)
        return make(Phi.GERM_COMPONENT, True, False)
    if isinstance(e, FrozenPairing):
        return make(Phi.STAR, True, True)
    if isinstance(e, (SmoothLeaf, XLeaf)):
        return make(Phi.STAR, True, False)
    if isinstance(e, EpsLeaf):
        return make(Phi.STAR, False, True)
    if isinstance(e, ConstLeaf):
        return make(Phi.STAR, False, False)
    raise TypeError(f"not a leaf: {e!r}")


def tag_of(e):
    """Locality of an expression: the meet over its leaves."""
    if isinstance(e, (AddNode, MulNode)):
        return loc.combine(tag_of(e.a), tag_of(e.b))
    if isinstance(e, NegNode):
        return tag_of(e.a)
    if isinstance(e, (PullbackNode, GeomDerivNode, XDerivNode, RestrictNode)):
        return tag_of(e.child)
    if isinstance(e, GlueNode):
        # each term multiplies its part by a smooth weight in x
        t = make(Phi.STAR, False, False)
        for term in e.terms:
            t = loc.combine(t, loc.combine(make(Phi.STAR, True, False),
                                           tag_of(term.child)))
        return t
    if isinstance(e, StarGlueNode):
        # the weights read x only through the kernel's moment at x
        t = make(Phi.VALUE_COMPONENT, False, False)
        for term in e.terms:
            t = loc.combine(t, tag_of(term.child))
        if e.x_order:
            t = loc.combine(t, make(Phi.GERM_COMPONENT, True, False))
        return t
    return _leaf_tag(e)


# --- representatives ---------------------------------------------------------------

@dataclass(frozen=True)
class Representative:
    expr: object
    domain: Interval
    locality: object

    def __add__(self, other):
        return add(self, _coerce(other, self.domain))

    def __radd__(self, other):
        return add(_coerce(other, self.domain), self)

    def __sub__(self, other):
        return add(self, neg(_coerce(other, self.domain)))

    def __rsub__(self, other):
        return add(_coerce(other, self.domain), neg(self))

    def __mul__(self, other):
        return mul(self, _coerce(other, self.domain))

    def __rmul__(self, other):
        return mul(_coerce(other, self.domain), self)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        return (f"Representative({_expr_repr(self.expr)} on {self.domain}, "
                f"{loc.type_to_string(self.locality)})")


def _rep(expr, domain: Interval) -> Representative:
    return Representative(expr, domain, tag_of(expr))


def _coerce(v, domain: Interval) -> Representative:
    if isinstance(v, Representative):
        return v
    if isinstance(v, (int, float)):
        return _rep(ConstLeaf(float(v)), domain)
    if isinstance(v, SmoothFn):
        return _rep(SmoothLeaf(v), domain)
    raise TypeError(f"cannot treat {v!r} as a representative")


def _expr_repr(e) -> str:
    if isinstance(e, Pairing):
        core = f"<{e.dist.label()}, phi>"
        return core if e.j == 0 else f"d^{e.j}{core}"
    if isinstance(e, FrozenPairing):
        core = f"<{e.dist.label()}, theta>"
        return core if e.j == 0 else f"d^{e.j}{core}"
    if isinstance(e, SmoothLeaf):
        return repr(e.fn)
    if isinstance(e, XLeaf):
        return "x"
    if isinstance(e, EpsLeaf):
        return "eps"
    if isinstance(e, ConstLeaf):
        return f"{e.value:g}"
    if isinstance(e, AddNode):
        return f"({_expr_repr(e.a)} + {_expr_repr(e.b)})"
    if isinstance(e, MulNode):
        return f"({_expr_repr(e.a)} * {_expr_repr(e.b)})"
    if isinstance(e, NegNode):
        return f"-{_expr_repr(e.a)}"
    if isinstance(e, PullbackNode):
        return f"pullback({_expr_repr(e.child)})"
    if isinstance(e, GeomDerivNode):
        return f"dhat[{_expr_repr(e.child)}]"
    if isinstance(e, XDerivNode):
        return f"d^{e.order}_num[{_expr_repr(e.child)}]"
    if isinstance(e, RestrictNode):
        V = e.cutoff.interval
        return f"restrict[{V.lo:g},{V.hi:g}]({_expr_repr(e.child)})"
    if isinstance(e, GlueNode):
        inner = " | ".join(f"[{t.chart.lo:g},{t.chart.hi:g}]: "
                           f"{_expr_repr(t.child)}" for t in e.terms)
        return f"glue({inner})"
    if isinstance(e, StarGlueNode):
        inner = " | ".join(f"[{t.chart.lo:g},{t.chart.hi:g}]: "
                           f"{_expr_repr(t.child)}" for t in e.terms)
        head = f"d^{e.x_order}_x glue*" if e.x_order else "glue*"
        return f"{head}({inner})"
    return repr(e)


# --- embeddings and arithmetic -----------------------------------------------------

def _check_locations(u: DistSum, domain: Interval):
    for a in u.locations():
        if not domain.contains(a):
            raise ValueError(f"distribution located at {a:g}, outside {domain}")


def embed_iota(u, domain: Interval) -> Representative:
    """Pair u against the ambient kernel argument."""
    u = as_dist(u)
    _check_locations(u, domain)
    return _rep(Pairing(u, 0), domain)


def embed_sigma(f, domain: Interval) -> Representative:
    """The constant-in-phi, constant-in-eps representative x -> f(x)."""
    return _rep(SmoothLeaf(as_smooth(f)), domain)


def embed_iota_theta(u, theta, domain: Interval) -> Representative:
    """Pair u against the fixed family theta, whatever argument is supplied."""
    u = as_dist(u)
    _check_locations(u, domain)
    return _rep(FrozenPairing(u, theta, 0), domain)


def x_rep(domain: Interval) -> Representative:
    return _rep(XLeaf(), domain)


def eps_rep(domain: Interval) -> Representative:
    return _rep(EpsLeaf(), domain)


def const_rep(c: float, domain: Interval) -> Representative:
    return _rep(ConstLeaf(float(c)), domain)


def _same_domain(R: Representative, S: Representative):
    if R.domain != S.domain:
        raise ValueError(f"domain mismatch: {R.domain} vs {S.domain}")


def add(R: Representative, S: Representative) -> Representative:
    _same_domain(R, S)
    return _rep(AddNode(R.expr, S.expr), R.domain)


def mul(R: Representative, S: Representative) -> Representative:
    _same_domain(R, S)
    return _rep(MulNode(R.expr, S.expr), R.domain)


def neg(R: Representative) -> Representative:
    return _rep(NegNode(R.expr), R.domain)


# --- evaluation --------------------------------------------------------------------

def _glue_combine(e, xs, ncomp, comps_for_term):
    """Chart-weighted sums for glue nodes, in exactly-telescoping form.

    The naive sum chi_1*v_1 + chi_2*v_2 leaves a residue of order ulp*|v|
    even when the v_i agree bitwise, and delta-type parts grow like a
    power of 1/eps, so that residue would pollute negligibility checks.
    Instead each point takes a base chart (largest undifferentiated
    weight) and the output is assembled as base + sum w*(value - base),
    with the weight-class sums (1 for the weights, 0 for any derivative
    of them) substituted exactly.  Agreeing charts then glue with zero
    residue; disagreeing charts see their true differences.
    """
    npts = xs.size
    charts = []
    for t in e.terms:
        if t.chart not in charts:
            charts.append(t.chart)
    nch = len(charts)
    rows = []
    for t in e.terms:
        m = (xs > t.chart.lo) & (xs < t.chart.hi)
        if not np.any(m):
            continue
        w = np.zeros(npts)
        w[m] = t.weight(xs[m])
        comps = []
        for c in comps_for_term(t, m):
            cf = np.zeros(npts)
            cf[m] = np.broadcast_to(np.asarray(c, dtype=float), xs[m].shape)
            comps.append(cf)
        rows.append((t, charts.index(t.chart), w, m, comps))
    out = [np.zeros(npts) for _ in range(ncomp)]
    if not rows:
        return out
    w0 = np.full((nch, npts), -np.inf)
    for t, ci, w, m, comps in rows:
        if sum(t.wpath) == 0:
            w0[ci][m] = w[m]
    base = np.argmax(w0, axis=0)
    alive = np.take_along_axis(w0, base[None, :], 0)[0] > -np.inf
    pick = (base, np.arange(npts))
    stages = {}
    for t, ci, w, m, comps in rows:
        slot = stages.setdefault(t.wpath, [np.zeros((nch, npts))
                                           for _ in range(ncomp)])
        for c in range(ncomp):
            slot[c][ci] = comps[c]
    zero_path = (0,) * (len(rows[0][0].wpath))
    if zero_path in stages:
        for c in range(ncomp):
            out[c] = np.where(alive, stages[zero_path][c][pick], 0.0)
    for t, ci, w, m, comps in rows:
        slot = stages[t.wpath]
        for c in range(ncomp):
            b = np.where(alive, slot[c][pick], 0.0)
            out[c] = out[c] + w * (comps[c] - b)
    return out


def _ev(e, fam, eps: float, x, _memo=None):
    # repeated pairing leaves (squares, Leibniz expansions) are paired once
    # per walk; the memo never crosses a change of family or of x
    memo = {} if _memo is None else _memo
    if isinstance(e, Pairing):
        key = (e.dist, e.j)
        if key not in memo:
            memo[key] = e.dist.pair_kernel(fam, eps, e.j, x)
        return memo[key]
    if isinstance(e, FrozenPairing):
        key = (e.dist, e.theta, e.j)
        if key not in memo:
            memo[key] = e.dist.pair_kernel(e.theta, eps, e.j, x)
        return memo[key]
    if isinstance(e, SmoothLeaf):
        return e.fn(x)
    if isinstance(e, XLeaf):
        return np.asarray(x, dtype=float) + 0.0
    if isinstance(e, EpsLeaf):
        return np.full(np.shape(x), eps)
    if isinstance(e, ConstLeaf):
        return np.full(np.shape(x), e.value)
    if isinstance(e, AddNode):
        return _ev(e.a, fam, eps, x, memo) + _ev(e.b, fam, eps, x, memo)
    if isinstance(e, MulNode):
        return _ev(e.a, fam, eps, x, memo) * _ev(e.b, fam, eps, x, memo)
    if isinstance(e, NegNode):
        return -_ev(e.a, fam, eps, x, memo)
    if isinstance(e, PullbackNode):
        pushed = PushedFamily(fam, e.mu)
        return _ev(e.child, pushed, eps, e.mu.forward(x))
    if isinstance(e, GeomDerivNode):
        _, dval = _ev_with_gateaux(e.child, fam, KernelShiftDirection(fam),
                                   eps, x)
        comp = _ev(_dtilde(e.child), fam, eps, x)
        return comp - dval
    if isinstance(e, XDerivNode):
        h = NUMERIC_X_STEP
        x = np.asarray(x, dtype=float)
        inner = e.child if e.order == 1 else XDerivNode(e.child, e.order - 1)
        return (_ev(inner, fam, eps, x + h) - _ev(inner, fam, eps, x - h)) \
            / (2.0 * h)
    if isinstance(e, RestrictNode):
        return _ev(e.child, e.cutoff.wrap(fam), eps, x)
    if isinstance(e, GlueNode):
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out, = _glue_combine(
            e, xs, 1,
            lambda t, m: [_ev(t.child, t.cutoff.wrap(fam), eps, xs[m])])
        return out.reshape(np.shape(x))
    if isinstance(e, StarGlueNode):
        return _star_eval(e, fam, eps, x)
    raise TypeError(f"cannot evaluate {e!r}")


def _star_eval(e, fam, eps: float, x):
    """Star gluing with the chain rule over the moment map, orders 0..2."""
    if e.x_order > 2:
        raise NotImplementedError(
            "componentwise derivatives of star gluings are implemented "
            "up to order 2")
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    npts = xs.size
    nst = e.x_order + 1
    M = _kernel_moment(fam, eps, xs, 0)
    M1 = _kernel_moment(fam, eps, xs, 1) if e.x_order >= 1 else None
    M2 = _kernel_moment(fam, eps, xs, 2) if e.x_order >= 2 else None
    rows = []
    for t in e.terms:
        m = (M > t.chart.lo) & (M < t.chart.hi)
        if not np.any(m):
            continue
        sub = xs[m]
        anch = np.full(sub.shape, t.anchor)
        parts = []
        for r in range(nst):
            p = np.zeros(npts)
            val = _ev(t.child, _AnchoredFamily(fam, t.window, sub, r),
                      eps, anch)
            p[m] = np.broadcast_to(np.asarray(val, dtype=float), sub.shape)
            parts.append(p)
        w = t.weight
        coef = [np.zeros(npts) for _ in range(nst)]
        if e.x_order == 0:
            coef[0][m] = w(M[m])
        elif e.x_order == 1:
            coef[0][m] = w.diff()(M[m]) * M1[m]
            coef[1][m] = w(M[m])
        else:
            coef[0][m] = w.diff(2)(M[m]) * M1[m] ** 2 \
                + w.diff()(M[m]) * M2[m]
            coef[1][m] = 2.0 * w.diff()(M[m]) * M1[m]
            coef[2][m] = w(M[m])
        rows.append((coef, parts, m))
    out = np.zeros(npts)
    if rows:
        # same telescoping trick as _glue_combine: coefficient classes sum
        # to 1 for the plain weights (top stage) and 0 for every class
        # carrying a weight derivative, so output = base + corrections
        wtop = np.full((len(rows), npts), -np.inf)
        for i, (coef, parts, m) in enumerate(rows):
            wtop[i][m] = coef[nst - 1][m]
        basei = np.argmax(wtop, axis=0)
        alive = np.take_along_axis(wtop, basei[None, :], 0)[0] > -np.inf
        pick = (basei, np.arange(npts))
        bparts = []
        for r in range(nst):
            stack = np.stack([parts[r] for coef, parts, m in rows])
            bparts.append(np.where(alive, stack[pick], 0.0))
        out = np.where(alive, bparts[nst - 1], 0.0)
        for coef, parts, m in rows:
            for r in range(nst):
                out = out + coef[r] * (parts[r] - bparts[r])
    return out.reshape(np.shape(x))


def _ev_with_gateaux(e, fam, direction, eps: float, x):
    """(value, directional derivative in the kernel slot) at once.

    Pairings are linear in the kernel, so the derivative propagates by the
    product rule; only opaque numeric nodes fall back to central
    differences along the direction (step GATEAUX_STEP).
    """
    if isinstance(e, Pairing):
        return (e.dist.pair_kernel(fam, eps, e.j, x),
                e.dist.pair_kernel(direction, eps, e.j, x))
    if isinstance(e, FrozenPairing):
        return _ev(e, fam, eps, x), 0.0
    if isinstance(e, (SmoothLeaf, XLeaf, EpsLeaf, ConstLeaf)):
        return _ev(e, fam, eps, x), 0.0
    if isinstance(e, AddNode):
        va, da = _ev_with_gateaux(e.a, fam, direction, eps, x)
        vb, db = _ev_with_gateaux(e.b, fam, direction, eps, x)
        return va + vb, da + db
    if isinstance(e, MulNode):
        va, da = _ev_with_gateaux(e.a, fam, direction, eps, x)
        vb, db = _ev_with_gateaux(e.b, fam, direction, eps, x)
        return va * vb, da * vb + va * db
    if isinstance(e, NegNode):
        v, d = _ev_with_gateaux(e.a, fam, direction, eps, x)
        return -v, -d
    if isinstance(e, PullbackNode):
        return _ev_with_gateaux(e.child, PushedFamily(fam, e.mu),
                                PushedFamily(direction, e.mu), eps,
                                e.mu.forward(x))
    if isinstance(e, RestrictNode):
        return _ev_with_gateaux(e.child, e.cutoff.wrap(fam),
                                e.cutoff.wrap(direction), eps, x)
    if isinstance(e, GlueNode):
        xs = np.atleast_1d(np.asarray(x, dtype=float))

        def comps(t, m):
            return list(_ev_with_gateaux(t.child, t.cutoff.wrap(fam),
                                         t.cutoff.wrap(direction), eps,
                                         xs[m]))

        v, d = _glue_combine(e, xs, 2, comps)
        return v.reshape(np.shape(x)), d.reshape(np.shape(x))
    if isinstance(e, StarGlueNode) and e.x_order == 0:
        # the moment is linear in the kernel, so the weight's contribution
        # to the derivative is chi'(M) times the direction's moment; the
        # sums telescope as in _star_eval (weights to 1, chi' terms to 0)
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        npts = xs.size
        M = _kernel_moment(fam, eps, xs, 0)
        Mdir = _kernel_moment(direction, eps, xs, 0)
        rows = []
        for t in e.terms:
            m = (M > t.chart.lo) & (M < t.chart.hi)
            if not np.any(m):
                continue
            sub = xs[m]
            anch = np.full(sub.shape, t.anchor)
            pv, pd = _ev_with_gateaux(
                t.child, _AnchoredFamily(fam, t.window, sub),
                _AnchoredFamily(direction, t.window, sub), eps, anch)
            w0 = np.zeros(npts)
            w1 = np.zeros(npts)
            fv = np.zeros(npts)
            fd = np.zeros(npts)
            w0[m] = t.weight(M[m])
            w1[m] = t.weight.diff()(M[m]) * Mdir[m]
            fv[m] = np.broadcast_to(np.asarray(pv, dtype=float), sub.shape)
            fd[m] = np.broadcast_to(np.asarray(pd, dtype=float), sub.shape)
            rows.append((m, w0, w1, fv, fd))
        v = np.zeros(npts)
        d = np.zeros(npts)
        if rows:
            wtop = np.full((len(rows), npts), -np.inf)
            for i, (m, w0, w1, fv, fd) in enumerate(rows):
                wtop[i][m] = w0[m]
            basei = np.argmax(wtop, axis=0)
            alive = np.take_along_axis(wtop, basei[None, :], 0)[0] > -np.inf
            pick = (basei, np.arange(npts))
            bv = np.where(alive, np.stack([r[3] for r in rows])[pick], 0.0)
            bd = np.where(alive, np.stack([r[4] for r in rows])[pick], 0.0)
            v = np.where(alive, bv, 0.0)
            d = np.where(alive, bd, 0.0)
            for m, w0, w1, fv, fd in rows:
                v = v + w0 * (fv - bv)
                d = d + w1 * (fv - bv) + w0 * (fd - bd)
        return v.reshape(np.shape(x)), d.reshape(np.shape(x))
    # opaque numeric node: central differences along the direction
    s = GATEAUX_STEP
    plus = CombinedFamily(base=fam, direction=direction, scale=s,
                          label="gateaux+")
    minus = CombinedFamily(base=fam, direction=direction, scale=-s,
                           label="gateaux-")
    v = _ev(e, fam, eps, x)
    d = (_ev(e, plus, eps, x) - _ev(e, minus, eps, x)) / (2.0 * s)
    return v, d


def _ev_multijet(e, fam, dirs, eps: float, x, _memo=None):
    """Value, first derivatives along each direction, and all second
    derivatives h[(i, j)] for i <= j, in one tree walk.

    Pairings are linear in the kernel slot (their own second derivative
    vanishes), so each leaf costs len(dirs) + 1 kernel pairings and
    products assemble the cross terms.  Opaque numeric nodes fall back to
    central differences in the needed direction combinations.
    """
    n = len(dirs)
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    memo = {} if _memo is None else _memo
    if isinstance(e, Pairing):
        key = (e.dist, e.j)
        if key not in memo:
            memo[key] = (e.dist.pair_kernel(fam, eps, e.j, x),
                         [e.dist.pair_kernel(d, eps, e.j, x) for d in dirs])
        v, gs = memo[key]
        return v, list(gs), {p: 0.0 for p in pairs}
    if isinstance(e, (FrozenPairing, SmoothLeaf, XLeaf, EpsLeaf, ConstLeaf)):
        return _ev(e, fam, eps, x), [0.0] * n, {p: 0.0 for p in pairs}
    if isinstance(e, AddNode):
        va, ag, ah = _ev_multijet(e.a, fam, dirs, eps, x, memo)
        vb, bg, bh = _ev_multijet(e.b, fam, dirs, eps, x, memo)
        return (va + vb, [ag[i] + bg[i] for i in range(n)],
                {p: ah[p] + bh[p] for p in pairs})
    if isinstance(e, MulNode):
        va, ag, ah = _ev_multijet(e.a, fam, dirs, eps, x, memo)
        vb, bg, bh = _ev_multijet(e.b, fam, dirs, eps, x, memo)
        h = {(i, j): (ah[(i, j)] * vb + ag[i] * bg[j] + ag[j] * bg[i]
                      + va * bh[(i, j)]) for i, j in pairs}
        return (va * vb, [ag[i] * vb + va * bg[i] for i in range(n)], h)
    if isinstance(e, NegNode):
        v, gs, h = _ev_multijet(e.a, fam, dirs, eps, x, memo)
        return -v, [-g for g in gs], {p: -h[p] for p in pairs}
    if isinstance(e, PullbackNode):
        return _ev_multijet(e.child, PushedFamily(fam, e.mu),
                            tuple(PushedFamily(d, e.mu) for d in dirs),
                            eps, e.mu.forward(x))
    if isinstance(e, RestrictNode):
        return _ev_multijet(e.child, e.cutoff.wrap(fam),
                            tuple(e.cutoff.wrap(d) for d in dirs), eps, x)
    if isinstance(e, GlueNode):
        xs = np.atleast_1d(np.asarray(x, dtype=float))

        def comps(t, m):
            pv, pg, ph = _ev_multijet(
                t.child, t.cutoff.wrap(fam),
                tuple(t.cutoff.wrap(d) for d in dirs), eps, xs[m])
            return [pv] + list(pg) + [ph[p] for p in pairs]

        flat = _glue_combine(e, xs, 1 + n + len(pairs), comps)
        return (flat[0], flat[1:1 + n],
                {p: flat[1 + n + i] for i, p in enumerate(pairs)})
    if isinstance(e, StarGlueNode) and e.x_order == 0:
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        npts = xs.size
        M = _kernel_moment(fam, eps, xs, 0)
        Md = [_kernel_moment(d, eps, xs, 0) for d in dirs]
        rows = []
        for t in e.terms:
            m = (M > t.chart.lo) & (M < t.chart.hi)
            if not np.any(m):
                continue
            sub = xs[m]
            anch = np.full(sub.shape, t.anchor)
            pv, pg, ph = _ev_multijet(
                t.child, _AnchoredFamily(fam, t.window, sub),
                tuple(_AnchoredFamily(d, t.window, sub) for d in dirs),
                eps, anch)

            def scat(val):
                f = np.zeros(npts)
                f[m] = np.broadcast_to(np.asarray(val, dtype=float),
                                       sub.shape)
                return f

            w0 = np.zeros(npts)
            w1 = np.zeros(npts)
            w2 = np.zeros(npts)
            w0[m] = t.weight(M[m])
            w1[m] = t.weight.diff()(M[m])
            w2[m] = t.weight.diff(2)(M[m])
            rows.append((m, w0, w1, w2, scat(pv), [scat(g) for g in pg],
                         {p: scat(ph[p]) for p in pairs}))
        v = np.zeros(npts)
        gs = [np.zeros(npts) for _ in range(n)]
        h = {p: np.zeros(npts) for p in pairs}
        if rows:
            # telescoped as in _star_eval: plain weights sum to 1, each
            # derivative class of the weights to 0
            wtop = np.full((len(rows), npts), -np.inf)
            for i, row in enumerate(rows):
                wtop[i][row[0]] = row[1][row[0]]
            basei = np.argmax(wtop, axis=0)
            alive = np.take_along_axis(wtop, basei[None, :], 0)[0] > -np.inf
            pick = (basei, np.arange(npts))

            def based(vals):
                return np.where(alive, np.stack(vals)[pick], 0.0)

            bv = based([r[4] for r in rows])
            bg = [based([r[5][i] for r in rows]) for i in range(n)]
            bh = {p: based([r[6][p] for r in rows]) for p in pairs}
            v = bv.copy()
            gs = [bg[i].copy() for i in range(n)]
            h = {p: bh[p].copy() for p in pairs}
            for m, w0, w1, w2, pv, pg, ph in rows:
                dv = pv - bv
                v = v + w0 * dv
                for i in range(n):
                    gs[i] = gs[i] + w1 * Md[i] * dv + w0 * (pg[i] - bg[i])
                for i, j in pairs:
                    h[(i, j)] = h[(i, j)] + w2 * Md[i] * Md[j] * dv \
                        + w1 * (Md[i] * (pg[j] - bg[j])
                                + Md[j] * (pg[i] - bg[i])) \
                        + w0 * (ph[(i, j)] - bh[(i, j)])
        return v, gs, h
    s = GATEAUX_STEP

    def at(*scales):
        f = fam
        for d, sc in zip(dirs, scales):
            if sc:
                f = CombinedFamily(base=f, direction=d, scale=sc,
                                   label="jet")
        return _ev(e, f, eps, x)

    zero = (0.0,) * n

    def bump(i, sc, base=zero):
        out = list(base)
        out[i] = out[i] + sc
        return tuple(out)

    v = at(*zero)
    gs = [(at(*bump(i, s)) - at(*bump(i, -s))) / (2.0 * s) for i in range(n)]
    h = {}
    for i, j in pairs:
        if i == j:
            h[(i, j)] = (at(*bump(i, s)) - 2.0 * v + at(*bump(i, -s))) \
                / (s * s)
        else:
            h[(i, j)] = (at(*bump(j, s, bump(i, s)))
                         - at(*bump(j, -s, bump(i, s)))
                         - at(*bump(j, s, bump(i, -s)))
                         + at(*bump(j, -s, bump(i, -s)))) / (4.0 * s * s)
    return v, gs, h


def _expr_singular_points(e):
    if isinstance(e, (Pairing, FrozenPairing)):
        return set(e.dist.locations())
    if isinstance(e, (SmoothLeaf, XLeaf, EpsLeaf, ConstLeaf)):
        return set()
    if isinstance(e, (AddNode, MulNode)):
        return _expr_singular_points(e.a) | _expr_singular_points(e.b)
    if isinstance(e, NegNode):
        return _expr_singular_points(e.a)
    if isinstance(e, (GeomDerivNode, XDerivNode)):
        return _expr_singular_points(e.child)
    if isinstance(e, PullbackNode):
        return {float(e.mu.inverse(p)) for p in _expr_singular_points(e.child)}
    if isinstance(e, RestrictNode):
        V = e.cutoff.interval
        return {p for p in _expr_singular_points(e.child) if V.lo < p < V.hi}
    if isinstance(e, (GlueNode, StarGlueNode)):
        out = set()
        for t in e.terms:
            out |= {p for p in _expr_singular_points(t.child)
                    if t.chart.lo < p < t.chart.hi}
        return out
    raise TypeError(f"cannot inspect {e!r}")


def singular_points(R: Representative):
    """Sorted locations where R's nets concentrate (delta points, jumps).

    Smooth parts contribute nothing; quadrature against R only needs extra
    resolution in eps-neighborhoods of these points.
    """
    return sorted(_expr_singular_points(R.expr))


def evaluate(R: Representative, phi, eps: float, x):
    """R(phi)_eps(x); x may be a scalar or an array."""
    eps = float(eps)
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps:g}")
    scalar = np.isscalar(x) or np.ndim(x) == 0
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xa <= R.domain.lo) or np.any(xa >= R.domain.hi):
        raise ValueError(f"evaluation point outside {R.domain}")
    out = np.asarray(_ev(R.expr, phi, eps, xa), dtype=float)
    out = np.broadcast_to(out, xa.shape)
    return float(out[0]) if scalar else out + 0.0


def evaluate_gateaux(R: Representative, phi, directions, eps: float, x):
    """Derivative of phi -> R(phi)_eps(x) along up to two kernel directions.

    Zero directions gives the plain value.  The result is exact whenever
    the expression is polynomial in its pairing leaves; difference
    quotients are used only inside opaque numeric nodes.
    """
    eps = float(eps)
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps:g}")
    scalar = np.isscalar(x) or np.ndim(x) == 0
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xa <= R.domain.lo) or np.any(xa >= R.domain.hi):
        raise ValueError(f"evaluation point outside {R.domain}")
    directions = tuple(directions)
    if len(directions) == 0:
        out = _ev(R.expr, phi, eps, xa)
    elif len(directions) == 1:
        out = _ev_with_gateaux(R.expr, phi, directions[0], eps, xa)[1]
    elif len(directions) == 2:
        out = _ev_multijet(R.expr, phi, directions, eps, xa)[2][(0, 1)]
    else:
        raise ValueError("at most two directions are supported")
    out = np.broadcast_to(np.asarray(out, dtype=float), xa.shape)
    if not np.all(np.isfinite(out)):
        raise ArithmeticError(
            "directional difference quotient produced non-finite values")
    return float(out[0]) if scalar else out + 0.0


# --- derivatives -------------------------------------------------------------------

def _dtilde(e):
    if isinstance(e, Pairing):
        return Pairing(e.dist, e.j + 1)
    if isinstance(e, FrozenPairing):
        return FrozenPairing(e.dist, e.theta, e.j + 1)
    if isinstance(e, SmoothLeaf):
        return SmoothLeaf(e.fn.diff())
    if isinstance(e, XLeaf):
        return ConstLeaf(1.0)
    if isinstance(e, (EpsLeaf, ConstLeaf)):
        return ConstLeaf(0.0)
    if isinstance(e, AddNode):
        return AddNode(_dtilde(e.a), _dtilde(e.b))
    if isinstance(e, MulNode):
        return AddNode(MulNode(_dtilde(e.a), e.b), MulNode(e.a, _dtilde(e.b)))
    if isinstance(e, NegNode):
        return NegNode(_dtilde(e.a))
    if isinstance(e, PullbackNode):
        # d/dx [S(mu(x))] = mu'(x) * (dS)(mu(x))
        return MulNode(SmoothLeaf(e.mu.forward_derivative),
                       PullbackNode(_dtilde(e.child), e.mu))
    if isinstance(e, GeomDerivNode):
        return XDerivNode(e, 1)
    if isinstance(e, XDerivNode):
        return XDerivNode(e.child, e.order + 1)
    if isinstance(e, RestrictNode):
        # the cutoff family's j-pairings already carry the product rule
        # against the cutoff, so the derivative passes through the node
        return RestrictNode(_dtilde(e.child), e.cutoff)
    if isinstance(e, GlueNode):
        terms = []
        for t in e.terms:
            terms.append(GlueTerm(t.weight.diff(), t.child, t.cutoff,
                                  t.chart, t.wpath + (1,)))
            terms.append(GlueTerm(t.weight, _dtilde(t.child), t.cutoff,
                                  t.chart, t.wpath + (0,)))
        return GlueNode(tuple(terms))
    if isinstance(e, StarGlueNode):
        return StarGlueNode(e.terms, e.x_order + 1)
    raise TypeError(f"no componentwise derivative for {e!r}")


def _dhat(e):
    if isinstance(e, Pairing):
        return Pairing(e.dist.derivative(), e.j)
    if isinstance(e, FrozenPairing):
        return FrozenPairing(e.dist, e.theta, e.j + 1)
    if isinstance(e, SmoothLeaf):
        return SmoothLeaf(e.fn.diff())
    if isinstance(e, XLeaf):
        return ConstLeaf(1.0)
    if isinstance(e, (EpsLeaf, ConstLeaf)):
        return ConstLeaf(0.0)
    if isinstance(e, AddNode):
        return AddNode(_dhat(e.a), _dhat(e.b))
    if isinstance(e, MulNode):
        return AddNode(MulNode(_dhat(e.a), e.b), MulNode(e.a, _dhat(e.b)))
    if isinstance(e, NegNode):
        return NegNode(_dhat(e.a))
    if isinstance(e, RestrictNode):
        # restriction commutes with the derivation: the distribution slot
        # is differentiated, the cutoff kernel is whatever it is
        return RestrictNode(_dhat(e.child), e.cutoff)
    if isinstance(e, GlueNode):
        terms = []
        for t in e.terms:
            terms.append(GlueTerm(t.weight.diff(), t.child, t.cutoff,
                                  t.chart, t.wpath + (1,)))
            terms.append(GlueTerm(t.weight, _dhat(t.child), t.cutoff,
                                  t.chart, t.wpath + (0,)))
        return GlueNode(tuple(terms))
    # pullbacks, star gluings, and numeric nodes stay unexpanded;
    # evaluation applies the defining formula directly
    return GeomDerivNode(e)


def diff_componentwise(R: Representative) -> Representative:
    """Derivative applied to the output net; pairings gain an x-derivative."""
    return _rep(_dtilde(R.expr), R.domain)


def diff_geometric(R: Representative) -> Representative:
    """The derivation extending the distributional derivative through pairings."""
    return _rep(_dhat(R.expr), R.domain)


def pullback(R: Representative, mu: Diffeo) -> Representative:
    """Precompose with mu: evaluation reroutes through the pushed kernel."""
    if R.domain != mu.target:
        raise ValueError(f"representative lives on {R.domain}, "
                         f"map lands in {mu.target}")
    return Representative(PullbackNode(R.expr, mu), mu.source,
                          tag_of(R.expr))


# --- serialization -----------------------------------------------------------------

SCHEMA_VERSION = 1


def _dist_to_json(u: DistSum):
    out = []
    for c, p in u.terms:
        if isinstance(p, DiracDelta):
            d = {"kind": "delta", "location": p.point, "order": p.order}
        elif isinstance(p, HeavisideJump):
            d = {"kind": "step", "location": p.point}
        elif isinstance(p, SmoothDensity):
            d = {"kind": "smooth", "fn": fn_to_json(p.fn), "name": p.name}
        else:
            raise TypeError(f"cannot serialize {type(p).__name__}")
        d["coeff"] = c
        out.append(d)
    return out


def _dist_from_json(items) -> DistSum:
    terms = []
    for d in items:
        kind = d["kind"]
        if kind == "delta":
            p = DiracDelta(d["location"], d.get("order", 0))
        elif kind == "step":
            p = HeavisideJump(d["location"])
        elif kind == "smooth":
            p = SmoothDensity(fn_from_json(d["fn"]), d.get("name", ""))
        else:
            raise ValueError(f"unknown distribution kind {kind!r}")
        terms.append((d.get("coeff", 1.0), p))
    return DistSum(terms)


def _expr_to_json(e):
    if isinstance(e, Pairing):
        return {"node": "pairing", "dist": _dist_to_json(e.dist), "j": e.j}
    if isinstance(e, FrozenPairing):
        return {"node": "frozen", "dist": _dist_to_json(e.dist),
                "theta": e.theta.describe(), "j": e.j}
    if isinstance(e, SmoothLeaf):
        return {"node": "smooth", "fn": fn_to_json(e.fn)}
    if isinstance(e, XLeaf):
        return {"node": "x"}
    if isinstance(e, EpsLeaf):
        return {"node": "eps"}
    if isinstance(e, ConstLeaf):
        return {"node": "const", "value": e.value}
    if isinstance(e, AddNode):
        return {"node": "add", "args": [_expr_to_json(e.a), _expr_to_json(e.b)]}
    if isinstance(e, MulNode):
        return {"node": "mul", "args": [_expr_to_json(e.a), _expr_to_json(e.b)]}
    if isinstance(e, NegNode):
        return {"node": "neg", "arg": _expr_to_json(e.a)}
    if isinstance(e, PullbackNode):
        return {"node": "pullback", "map": e.mu.describe(),
                "child": _expr_to_json(e.child)}
    if isinstance(e, GeomDerivNode):
        return {"node": "dhat_numeric", "child": _expr_to_json(e.child)}
    if isinstance(e, XDerivNode):
        return {"node": "dx_numeric", "child": _expr_to_json(e.child),
                "order": e.order}
    if isinstance(e, RestrictNode):
        V = e.cutoff.interval
        return {"node": "restrict", "interval": [V.lo, V.hi],
                "child": _expr_to_json(e.child)}
    if isinstance(e, GlueNode):
        return {"node": "glue", "terms": [
            {"weight": fn_to_json(t.weight),
             "chart": [t.chart.lo, t.chart.hi],
             "wpath": list(t.wpath),
             "child": _expr_to_json(t.child)} for t in e.terms]}
    if isinstance(e, StarGlueNode):
        return {"node": "glue_star", "x_order": e.x_order, "terms": [
            {"weight": fn_to_json(t.weight), "window": fn_to_json(t.window),
             "anchor": t.anchor, "chart": [t.chart.lo, t.chart.hi],
             "child": _expr_to_json(t.child)} for t in e.terms]}
    raise TypeError(f"cannot serialize {e!r}")


def _expr_from_json(d):
    node = d["node"]
    if node == "pairing":
        return Pairing(_dist_from_json(d["dist"]), d.get("j", 0))
    if node == "frozen":
        return FrozenPairing(_dist_from_json(d["dist"]),
                             family_from_json(d["theta"]), d.get("j", 0))
    if node == "smooth":
        return SmoothLeaf(fn_from_json(d["fn"]))
    if node == "x":
        return XLeaf()
    if node == "eps":
        return EpsLeaf()
    if node == "const":
        return ConstLeaf(d["value"])
    if node == "add":
        return AddNode(*(_expr_from_json(a) for a in d["args"]))
    if node == "mul":
        return MulNode(*(_expr_from_json(a) for a in d["args"]))
    if node == "neg":
        return NegNode(_expr_from_json(d["arg"]))
    if node == "pullback":
        return PullbackNode(_expr_from_json(d["child"]),
                            Diffeo.from_json(d["map"]))
    if node == "dhat_numeric":
        return GeomDerivNode(_expr_from_json(d["child"]))
    if node == "dx_numeric":
        return XDerivNode(_expr_from_json(d["child"]), d.get("order", 1))
    if node == "restrict":
        from .sheafops import make_diagonal_cutoff  # avoids an import cycle
        return RestrictNode(_expr_from_json(d["child"]),
                            make_diagonal_cutoff(Interval(*d["interval"])))
    if node == "glue":
        from .sheafops import make_diagonal_cutoff
        terms = tuple(
            GlueTerm(fn_from_json(t["weight"]), _expr_from_json(t["child"]),
                     make_diagonal_cutoff(Interval(*t["chart"])),
                     Interval(*t["chart"])) for t in d["terms"])
        return GlueNode(terms)
    if node == "glue_star":
        terms = tuple(
            StarTerm(fn_from_json(t["weight"]), fn_from_json(t["window"]),
                     _expr_from_json(t["child"]), float(t["anchor"]),
                     Interval(*t["chart"])) for t in d["terms"])
        return StarGlueNode(terms, int(d.get("x_order", 0)))
    raise ValueError(f"unknown node {node!r}")


def rep_to_json(R: Representative) -> str:
    return json.dumps({
        "schema": SCHEMA_VERSION,
        "domain": [R.domain.lo, R.domain.hi],
        "locality": loc.type_to_string(R.locality),
        "expr": _expr_to_json(R.expr),
    }, sort_keys=True)


def rep_from_json(text_or_dict) -> Representative:
    d = text_or_dict if isinstance(text_or_dict, dict) else json.loads(text_or_dict)
    if d.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema {d.get('schema')!r}")
    expr = _expr_from_json(d["expr"])
    R = _rep(expr, Interval(*d["domain"]))
    stored = d.get("locality")
    if stored is not None and loc.parse_type(stored) != R.locality:
        raise ValueError("stored locality tag disagrees with the expression")
    return R
