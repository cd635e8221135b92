"""Closed family of smooth one-variable functions with exact derivatives.

Every node evaluates vectorized on numpy arrays and differentiates to a node
of the same family.  The public grammar is small on purpose: constants, the
identity, sums, products, integer powers, sin, cos, exp and the standard
bump.  A few internal node kinds (bump derivatives, shoulder profiles,
quotients) keep the family closed under differentiation without widening the
user-facing surface.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as npoly


class SmoothFn:
    """Base node. Subclasses implement __call__ (vectorized) and _d()."""

    def __call__(self, t):
        raise NotImplementedError

    def _d(self):
        raise NotImplementedError

    def diff(self, order: int = 1) -> "SmoothFn":
        f = self
        for _ in range(order):
            f = f._d()
        return f

    # Operator sugar mirrors the usual expression-tree conventions.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n):
        return powi(self, n)

    def __eq__(self, other):
        return type(self) is type(other) and self._key() == other._key()

    def __hash__(self):
        return hash((type(self).__name__, self._key()))

    def _key(self):
        return ()


def _wrap(v):
    if isinstance(v, SmoothFn):
        return v
    return Const(float(v))


class Const(SmoothFn):
    def __init__(self, value):
        self.value = float(value)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.full_like(t, self.value)

    def _d(self):
        return Const(0.0)

    def _key(self):
        return (self.value,)

    def __repr__(self):
        return repr(self.value)


class Var(SmoothFn):
    """The identity function t -> t."""

    def __call__(self, t):
        return np.asarray(t, dtype=float) + 0.0

    def _d(self):
        return Const(1.0)

    def __repr__(self):
        return "x"


class Add(SmoothFn):
    def __init__(self, a, b):
        self.a, self.b = a, b

    def __call__(self, t):
        return self.a(t) + self.b(t)

    def _d(self):
        return add(self.a._d(), self.b._d())

    def _key(self):
        return (self.a, self.b)

    def __repr__(self):
        return f"add({self.a!r}, {self.b!r})"


class Mul(SmoothFn):
    def __init__(self, a, b):
        self.a, self.b = a, b

    def __call__(self, t):
        return self.a(t) * self.b(t)

    def _d(self):
        return add(mul(self.a._d(), self.b), mul(self.a, self.b._d()))

    def _key(self):
        return (self.a, self.b)

    def __repr__(self):
        return f"mul({self.a!r}, {self.b!r})"


class Neg(SmoothFn):
    def __init__(self, a):
        self.a = a

    def __call__(self, t):
        return -self.a(t)

    def _d(self):
        return neg(self.a._d())

    def _key(self):
        return (self.a,)

    def __repr__(self):
        return f"neg({self.a!r})"


class Pow(SmoothFn):
    """Integer power of a subexpression, exponent >= 1."""

    def __init__(self, base, n):
        if int(n) != n or n < 1:
            raise ValueError("integer exponent >= 1 required")
        self.base, self.n = base, int(n)

    def __call__(self, t):
        return self.base(t) ** self.n

    def _d(self):
        if self.n == 1:
            return self.base._d()
        return mul(mul(Const(self.n), Pow(self.base, self.n - 1)), self.base._d())

    def _key(self):
        return (self.base, self.n)

    def __repr__(self):
        return f"pow({self.base!r}, {self.n})"


class Sin(SmoothFn):
    def __init__(self, a):
        self.a = a

    def __call__(self, t):
        return np.sin(self.a(t))

    def _d(self):
        return mul(Cos(self.a), self.a._d())

    def _key(self):
        return (self.a,)

    def __repr__(self):
        return f"sin({self.a!r})"


class Cos(SmoothFn):
    def __init__(self, a):
        self.a = a

    def __call__(self, t):
        return np.cos(self.a(t))

    def _d(self):
        return neg(mul(Sin(self.a), self.a._d()))

    def _key(self):
        return (self.a,)

    def __repr__(self):
        return f"cos({self.a!r})"


class Exp(SmoothFn):
    def __init__(self, a):
        self.a = a

    def __call__(self, t):
        return np.exp(self.a(t))

    def _d(self):
        return mul(self, self.a._d())

    def _key(self):
        return (self.a,)

    def __repr__(self):
        return f"exp({self.a!r})"


# ---------------------------------------------------------------------------
# The standard bump exp(-1/(1-t^2)) on (-1,1) and its derivative closure.
#
# B^(k)(t) = B(t) * P_k(t) / (1-t^2)^(2k) with P_0 = 1 and
# P_{k+1} = (P_k' * w + 4k t P_k) * w - 2 t P_k,  w = 1 - t^2.
# The recurrence follows from B' = B * (-2t)/w^2.


@lru_cache(maxsize=None)
def _bump_poly(k: int):
    if k == 0:
        return np.array([1.0])
    p = _bump_poly(k - 1)
    w = np.array([1.0, 0.0, -1.0])  # 1 - t^2 in ascending coefficients
    t = np.array([0.0, 1.0])
    j = k - 1
    inner = npoly.polyadd(npoly.polymul(npoly.polyder(p), w),
                          4.0 * j * npoly.polymul(t, p))
    return npoly.polysub(npoly.polymul(inner, w), 2.0 * npoly.polymul(t, p))


def bump_deriv_values(k: int, t):
    """k-th derivative of the standard bump, vectorized, zero off (-1,1)."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape)
    inside = np.abs(t) < 1.0
    if np.any(inside):
        ti = t[inside]
        w = 1.0 - ti * ti
        # Work in log space for the w^(-2k) factor; the exponential always
        # wins near the edge so no overflow can occur for moderate k.
        with np.errstate(over="ignore", under="ignore", divide="ignore"):
            gain = np.exp(-1.0 / w - (2.0 * k) * np.log(w))
        out[inside] = gain * npoly.polyval(ti, _bump_poly(k))
    return out


class BumpDeriv(SmoothFn):
    """k-th derivative of the standard bump composed with a subexpression."""

    def __init__(self, a, k=0):
        self.a, self.k = a, int(k)

    def __call__(self, t):
        return bump_deriv_values(self.k, self.a(t))

    def _d(self):
        return mul(BumpDeriv(self.a, self.k + 1), self.a._d())

    def _key(self):
        return (self.a, self.k)

    def __repr__(self):
        if self.k == 0:
            return f"bump({self.a!r})"
        return f"bump_d{self.k}({self.a!r})"


def Bump(a):
    return BumpDeriv(a, 0)


# ---------------------------------------------------------------------------
# Shoulder profile: beta(s) = exp(-1/(s(1-s))) on (0,1), its derivatives, and
# the normalized step S(r) = int_0^r beta / int_0^1 beta.  Used by the plateau
# cutoff below; the same rational-recurrence trick applies with v = s - s^2:
# beta^(j) = beta * Q_j(s) / v^(2j),
# Q_{j+1} = (Q_j' * v - 2j(1-2s) Q_j) * v + (1-2s) Q_j.


@lru_cache(maxsize=None)
def _shoulder_poly(j: int):
    if j == 0:
        return np.array([1.0])
    q = _shoulder_poly(j - 1)
    v = np.array([0.0, 1.0, -1.0])       # s - s^2
    one_minus_2s = np.array([1.0, -2.0])
    i = j - 1
    inner = npoly.polysub(npoly.polymul(npoly.polyder(q), v),
                          2.0 * i * npoly.polymul(one_minus_2s, q))
    return npoly.polyadd(npoly.polymul(inner, v), npoly.polymul(one_minus_2s, q))


def shoulder_deriv_values(j: int, s):
    """j-th derivative of beta, vectorized, zero off (0,1)."""
    s = np.asarray(s, dtype=float)
    out = np.zeros(s.shape)
    inside = (s > 0.0) & (s < 1.0)
    if np.any(inside):
        si = s[inside]
        v = si - si * si
        with np.errstate(over="ignore", under="ignore", divide="ignore"):
            gain = np.exp(-1.0 / v - (2.0 * j) * np.log(v))
        out[inside] = gain * npoly.polyval(si, _shoulder_poly(j))
    return out


@lru_cache(maxsize=1)
def _shoulder_mass() -> float:
    # int_0^1 beta by Gauss-Legendre; the integrand is C-infinity with flat
    # ends, 200 nodes are ample for full double precision here.
    nodes, weights = np.polynomial.legendre.leggauss(200)
    s = 0.5 * (nodes + 1.0)
    return float(0.5 * np.sum(weights * shoulder_deriv_values(0, s)))


@lru_cache(maxsize=1)
def _step_table():
    # Dense cumulative table for S(r); smooth evaluation never needs more
    # than ~1e-13 pointwise accuracy, the derivative chain is exact anyway.
    n = 4096
    r = np.linspace(0.0, 1.0, n + 1)
    vals = shoulder_deriv_values(0, r)
    # Composite Simpson cumulative sums on a uniform grid.
    cum = np.zeros(n + 1)
    h = 1.0 / n
    mid = shoulder_deriv_values(0, (r[:-1] + r[1:]) / 2.0)
    cum[1:] = np.cumsum(h / 6.0 * (vals[:-1] + 4.0 * mid + vals[1:]))
    return r, cum / cum[-1]


def step_values(r):
    """Normalized smooth step: 0 at r<=0, 1 at r>=1, strictly rising between."""
    r = np.asarray(r, dtype=float)
    grid, cum = _step_table()
    out = np.interp(np.clip(r, 0.0, 1.0), grid, cum)
    return out


class PlateauDeriv(SmoothFn):
    """k-th derivative of the plateau profile f: f=1 on |t|<=1/2, 0 on |t|>=1.

    On the shoulders f(t) = 1 - S(2|t| - 1).  Derivatives are exact via the
    shoulder recurrence; only the order-zero value uses the dense table.
    """

    def __init__(self, a, k=0):
        self.a, self.k = a, int(k)

    def __call__(self, t):
        u = self.a(t)
        u = np.asarray(u, dtype=float)
        r = 2.0 * np.abs(u) - 1.0
        if self.k == 0:
            out = np.ones(u.shape)
            out[np.abs(u) >= 1.0] = 0.0
            sh = (r > 0.0) & (r < 1.0)
            if np.any(sh):
                out[sh] = 1.0 - step_values(r[sh])
            return out
        out = np.zeros(u.shape)
        sh = (r > 0.0) & (r < 1.0)
        if np.any(sh):
            sgn = np.sign(u[sh]) ** self.k
            out[sh] = -(2.0 ** self.k) * sgn * \
                shoulder_deriv_values(self.k - 1, r[sh]) / _shoulder_mass()
        return out

    def _d(self):
        # Chain rule is only valid for affine arguments (sign(u) constant on
        # each shoulder); that is the only use this package makes of it.
        return mul(PlateauDeriv(self.a, self.k + 1), self.a._d())

    def _key(self):
        return (self.a, self.k)

    def __repr__(self):
        if self.k == 0:
            return f"plateau({self.a!r})"
        return f"plateau_d{self.k}({self.a!r})"


def Plateau(a):
    return PlateauDeriv(a, 0)


class Quot(SmoothFn):
    """Internal quotient node (partition-of-unity weights). Denominator must
    be positive wherever the numerator is nonzero; outside that set the value
    is zero by convention."""

    def __init__(self, a, b):
        self.a, self.b = a, b

    def __call__(self, t):
        num = self.a(t)
        den = self.b(t)
        out = np.zeros(np.broadcast(num, den).shape)
        ok = den != 0.0
        out[ok] = np.asarray(num)[ok] / np.asarray(den)[ok]
        return out

    def _d(self):
        return Quot(add(mul(self.a._d(), self.b), neg(mul(self.a, self.b._d()))),
                    Pow(self.b, 2))

    def _key(self):
        return (self.a, self.b)

    def __repr__(self):
        return f"quot({self.a!r}, {self.b!r})"


# Smart constructors fold constants so derivative trees stay shallow.

def add(a, b):
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if isinstance(a, Const) and a.value == 0.0:
        return b
    if isinstance(b, Const) and b.value == 0.0:
        return a
    return Add(a, b)


def mul(a, b):
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if isinstance(a, Const):
        if a.value == 0.0:
            return Const(0.0)
        if a.value == 1.0:
            return b
    if isinstance(b, Const):
        if b.value == 0.0:
            return Const(0.0)
        if b.value == 1.0:
            return a
    return Mul(a, b)


def neg(a):
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.a
    return Neg(a)


def powi(base, n):
    n = int(n)
    if n == 0:
        return Const(1.0)
    if isinstance(base, Const):
        return Const(base.value ** n)
    return Pow(base, n)


def affine(scale, shift):
    """The map t -> scale*t + shift as a SmoothFn."""
    return add(mul(Const(scale), X), Const(shift))


X = Var()


def as_smooth(v) -> SmoothFn:
    """Coerce numbers to Const, pass SmoothFn through."""
    return _wrap(v)


def poly_degree(fn: SmoothFn):
    """Degree of fn as a polynomial in t, or None if it is not one.

    Cancellations can make the true degree lower than the reported one;
    it is only ever an upper bound, which is what callers need.
    """
    if isinstance(fn, Const):
        return 0
    if isinstance(fn, Var):
        return 1
    if isinstance(fn, Neg):
        return poly_degree(fn.a)
    if isinstance(fn, Add):
        da, db = poly_degree(fn.a), poly_degree(fn.b)
        return None if da is None or db is None else max(da, db)
    if isinstance(fn, Mul):
        da, db = poly_degree(fn.a), poly_degree(fn.b)
        return None if da is None or db is None else da + db
    if isinstance(fn, Pow):
        d = poly_degree(fn.base)
        return None if d is None else d * fn.n
    return None


def substitute(fn: SmoothFn, g: SmoothFn) -> SmoothFn:
    """The composition fn(g(t)): every Var leaf of fn is replaced by g."""
    if isinstance(fn, Const):
        return fn
    if isinstance(fn, Var):
        return g
    if isinstance(fn, Add):
        return add(substitute(fn.a, g), substitute(fn.b, g))
    if isinstance(fn, Mul):
        return mul(substitute(fn.a, g), substitute(fn.b, g))
    if isinstance(fn, Neg):
        return neg(substitute(fn.a, g))
    if isinstance(fn, Pow):
        return powi(substitute(fn.base, g), fn.n)
    if isinstance(fn, (Sin, Cos, Exp)):
        return type(fn)(substitute(fn.a, g))
    if isinstance(fn, BumpDeriv):
        return BumpDeriv(substitute(fn.a, g), fn.k)
    if isinstance(fn, PlateauDeriv):
        return PlateauDeriv(substitute(fn.a, g), fn.k)
    if isinstance(fn, Quot):
        return Quot(substitute(fn.a, g), substitute(fn.b, g))
    raise TypeError(f"cannot substitute into {type(fn).__name__}")


def fn_to_json(fn: SmoothFn) -> dict:
    """Plain-dict form of the expression tree (inverse of fn_from_json)."""
    if isinstance(fn, Const):
        return {"op": "const", "value": fn.value}
    if isinstance(fn, Var):
        return {"op": "x"}
    if isinstance(fn, Add):
        return {"op": "add", "args": [fn_to_json(fn.a), fn_to_json(fn.b)]}
    if isinstance(fn, Mul):
        return {"op": "mul", "args": [fn_to_json(fn.a), fn_to_json(fn.b)]}
    if isinstance(fn, Neg):
        return {"op": "neg", "arg": fn_to_json(fn.a)}
    if isinstance(fn, Pow):
        return {"op": "pow", "arg": fn_to_json(fn.base), "n": fn.n}
    if isinstance(fn, (Sin, Cos, Exp)):
        return {"op": type(fn).__name__.lower(), "arg": fn_to_json(fn.a)}
    if isinstance(fn, BumpDeriv):
        return {"op": "bump", "arg": fn_to_json(fn.a), "k": fn.k}
    if isinstance(fn, PlateauDeriv):
        return {"op": "plateau", "arg": fn_to_json(fn.a), "k": fn.k}
    if isinstance(fn, Quot):
        return {"op": "quot", "args": [fn_to_json(fn.a), fn_to_json(fn.b)]}
    raise TypeError(f"cannot serialize {type(fn).__name__}")


def fn_from_json(d: dict) -> SmoothFn:
    op = d["op"]
    if op == "const":
        return Const(d["value"])
    if op == "x":
        return X
    if op == "add":
        return Add(*(fn_from_json(a) for a in d["args"]))
    if op == "mul":
        return Mul(*(fn_from_json(a) for a in d["args"]))
    if op == "neg":
        return Neg(fn_from_json(d["arg"]))
    if op == "pow":
        return Pow(fn_from_json(d["arg"]), d["n"])
    if op in ("sin", "cos", "exp"):
        cls = {"sin": Sin, "cos": Cos, "exp": Exp}[op]
        return cls(fn_from_json(d["arg"]))
    if op == "bump":
        return BumpDeriv(fn_from_json(d["arg"]), d.get("k", 0))
    if op == "plateau":
        return PlateauDeriv(fn_from_json(d["arg"]), d.get("k", 0))
    if op == "quot":
        return Quot(*(fn_from_json(a) for a in d["args"]))
    raise ValueError(f"unknown op {op!r}")
