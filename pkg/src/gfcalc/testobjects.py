"""Scheduled moment-cancelling kernels and the battery that vets them.

A family here is the concrete smoothing data the rest of the package feeds
on: for each eps it produces a kernel y -> k_eps(x, y) supported in
[x - eps, x + eps], integrating to one, with the first m(eps) moments of the
rescaled profile cancelled.  The profile is psi_m(y) = q_m(y) * B(y) with B
the standard bump and q_m the unique polynomial of degree <= m making
int y^k psi_m = [k == 0] for k = 0..m.  Families may carry a bounded smooth
x-modulation; its y-factor is odd, so unit mass survives exactly by parity.

Verification is probe-based and reports evidence, not exceptions: a fixed
battery of distributions, window functions, seminorms and smooth functions
is run over the epsilon grid and each defining condition gets a verdict row.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.linalg import solve as _lin_solve

from .distributions import DiracDelta, Distribution, HeavisideJump, SmoothDensity
from .interval import Interval
from .numerics import (EpsGrid, VALUE_FLOOR, batch_integrate, ceil_log2_inv,
                       fit_loglog)
from .smoothfn import (Const, Exp, Plateau, Sin, SmoothFn, X, affine,
                       bump_deriv_values, poly_degree)

MAX_MOMENT_ORDER = 24

_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(240)


def _leg_unit(k: int) -> np.ndarray:
    c = np.zeros(k + 1)
    c[k] = 1.0
    return c


@dataclass(frozen=True)
class MomentMollifier:
    """Profile psi_m = q_m * B with moments 0..m prescribed, support (-1, 1).

    coeffs are the monomial coefficients of q_m (ascending, length m + 1);
    evaluation goes through the Legendre form, which stays well conditioned
    up to the order cap.
    """

    m: int
    coeffs: tuple
    leg_coeffs: tuple = field(repr=False)

    support_radius = 1.0

    def deriv_values(self, r: int, t) -> np.ndarray:
        """r-th derivative of psi_m, vectorized, zero off (-1, 1)."""
        t = np.asarray(t, dtype=float)
        total = np.zeros(t.shape)
        for i in range(min(r, self.m) + 1):
            qi = npleg.legval(t, _leg_deriv_coeffs(self.m, i))
            total += math.comb(r, i) * qi * bump_deriv_values(r - i, t)
        return total

    def __call__(self, t):
        return self.deriv_values(0, t)

    def moment(self, k: int) -> float:
        vals = self(_GAUSS_NODES) * _GAUSS_NODES ** k
        return float(np.sum(_GAUSS_WEIGHTS * vals))

    def moment_defect(self) -> float:
        """Worst deviation of moments 0..m from their targets."""
        worst = abs(self.moment(0) - 1.0)
        for k in range(1, self.m + 1):
            worst = max(worst, abs(self.moment(k)))
        return worst


@lru_cache(maxsize=None)
def make_mollifier(m: int) -> MomentMollifier:
    """Solve the order-m moment system.  0 <= m <= 24; beyond that the
    Gram system is too ill-conditioned to certify and is rejected."""
    if not isinstance(m, (int, np.integer)) or isinstance(m, bool):
        raise TypeError("moment order must be an integer")
    if not 0 <= m <= MAX_MOMENT_ORDER:
        raise ValueError(f"moment order {m} outside [0, {MAX_MOMENT_ORDER}]")
    bw = _GAUSS_WEIGHTS * bump_deriv_values(0, _GAUSS_NODES)
    basis = np.stack([npleg.legval(_GAUSS_NODES, _leg_unit(k))
                      for k in range(m + 1)])
    gram = (basis * bw) @ basis.T
    rhs = np.array([npleg.legval(0.0, _leg_unit(k)) for k in range(m + 1)])
    a = _lin_solve(gram, rhs, assume_a="pos")
    a[1::2] = 0.0  # exact solution is even; drop solver noise
    mono = npleg.leg2poly(a)
    mono = np.pad(mono, (0, m + 1 - len(mono)))
    return MomentMollifier(int(m), tuple(float(c) for c in mono),
                           tuple(float(c) for c in a))


@lru_cache(maxsize=None)
def _leg_deriv_coeffs(m: int, i: int):
    a = np.array(make_mollifier(m).leg_coeffs)
    return npleg.legder(a, i) if i else a


# ---------------------------------------------------------------------------
# Schedules: how the moment order follows eps.


@dataclass(frozen=True)
class StaircaseSchedule:
    """m(eps) = min(cap, ceil(log2(1/eps))), nondecreasing as eps drops."""

    cap: int = MAX_MOMENT_ORDER

    def __post_init__(self):
        if not 0 <= self.cap <= MAX_MOMENT_ORDER:
            raise ValueError(f"cap {self.cap} outside [0, {MAX_MOMENT_ORDER}]")

    def order_at(self, eps: float) -> int:
        return max(0, min(self.cap, ceil_log2_inv(eps)))

    def describe(self) -> dict:
        return {"kind": "staircase", "cap": self.cap}


@dataclass(frozen=True)
class FixedSchedule:
    """Constant moment order, mainly useful as a deliberately bad family."""

    order: int = 0

    def __post_init__(self):
        if not 0 <= self.order <= MAX_MOMENT_ORDER:
            raise ValueError(f"order {self.order} outside [0, {MAX_MOMENT_ORDER}]")

    def order_at(self, eps: float) -> int:
        return self.order

    def describe(self) -> dict:
        return {"kind": "fixed", "order": self.order}


def schedule_from_json(d: dict):
    kind = d.get("kind")
    if kind == "staircase":
        return StaircaseSchedule(int(d["cap"]))
    if kind == "fixed":
        return FixedSchedule(int(d["order"]))
    raise ValueError(f"unknown schedule kind {kind!r}")


# ---------------------------------------------------------------------------
# Families.


@dataclass(frozen=True)
class Modulation:
    """Bounded smooth x-dependence: the kernel picks up a factor
    1 + eps * g(x) * h(y - x) with g = amp*sin(freq*x + phase), h = sin.
    h odd keeps the integral exactly 1."""

    seed: int
    amplitude: float
    frequency: float
    phase: float

    @classmethod
    def from_seed(cls, seed: int) -> "Modulation":
        rng = np.random.default_rng(seed)
        amp = float(0.1 + 0.3 * rng.random())
        freq = float(0.5 + 2.0 * rng.random())
        phase = float(2.0 * math.pi * rng.random())
        return cls(int(seed), amp, freq, phase)

    def g_fn(self) -> SmoothFn:
        return Const(self.amplitude) * Sin(affine(self.frequency, self.phase))

    def describe(self) -> dict:
        return {"seed": self.seed, "amplitude": self.amplitude,
                "frequency": self.frequency, "phase": self.phase}


_H_FN = Sin(X)


@lru_cache(maxsize=None)
def _nth_deriv(fn: SmoothFn, order: int) -> SmoothFn:
    return fn if order == 0 else _nth_deriv(fn, order - 1).diff()


@dataclass(frozen=True)
class TestObjectFamily:
    """One scheduled kernel family k_eps(x, y) on an open interval."""

    __test__ = False  # domain object, not a pytest case

    schedule: object = field(default_factory=StaircaseSchedule)
    domain: Interval = Interval(-2.0, 2.0)
    modulation: Optional[Modulation] = None
    label: str = "base"

    is_zero = False

    @property
    def translation_invariant(self) -> bool:
        return self.modulation is None

    def order_at(self, eps: float) -> int:
        return self.schedule.order_at(eps)

    def mollifier_at(self, eps: float) -> MomentMollifier:
        return make_mollifier(self.order_at(eps))

    def support_bounds(self, eps: float, x):
        x = np.asarray(x, dtype=float)
        return x - eps, x + eps

    def kernel(self, eps: float, x, y):
        return self.kernel_dxdy(eps, 0, 0, x, y)

    def kernel_dxdy(self, eps: float, j: int, k: int, x, y):
        """Exact mixed derivative d_x^j d_y^k of the kernel, vectorized.

        x and y must broadcast against each other; the result has the
        broadcast shape.  All derivative orders are available; the profile
        and modulation factors differentiate in closed form.
        """
        eps = float(eps)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        psi = self.mollifier_at(eps)
        u = (y - x) / eps
        if self.modulation is None:
            scale = (-1.0) ** j / eps ** (1 + j + k)
            return scale * psi.deriv_values(j + k, u)

        t = y - x
        g = self.modulation.g_fn()
        out = np.zeros(np.broadcast(x, y).shape)
        for j1 in range(j + 1):
            for k1 in range(k + 1):
                core = ((-1.0) ** j1 / eps ** (1 + j1 + k1)) * \
                    psi.deriv_values(j1 + k1, u)
                j2, k2 = j - j1, k - k1
                if j2 == 0 and k2 == 0:
                    mod = 1.0 + eps * g(x) * _H_FN(t)
                else:
                    mod = np.zeros(np.broadcast(x, y).shape)
                    for a in range(j2 + 1):
                        sgn = (-1.0) ** (j2 - a)
                        mod = mod + (math.comb(j2, a) * sgn *
                                     _nth_deriv(g, a)(x) *
                                     _nth_deriv(_H_FN, k2 + j2 - a)(t))
                    mod = eps * mod
                out = out + math.comb(j, j1) * math.comb(k, k1) * core * mod
        return out

    def smooth_pairing(self, eps: float, j: int, x, fn: SmoothFn):
        """d^j/dx^j of int fn(y) k_eps(x, y) dy at the points x.

        Computed after substituting y = x + t, so the x-derivatives land on
        fn and the modulation instead of the eps^-j-amplified profile; every
        integrand stays value-level and the quadrature keeps full precision.

        Polynomial fn gets the unmodulated part in closed form: the Taylor
        sum is finite and the profile's moments below the schedule order
        vanish by construction, so the reproduction identity holds exactly
        instead of up to quadrature roundoff.  The scale matters downstream:
        a 1e-15 residue here, multiplied by an eps^-p factor, would read as
        a growing net.
        """
        eps = float(eps)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        psi = self.mollifier_at(eps)
        mod = self.modulation
        g = mod.g_fn() if mod is not None else None
        xc = x[:, None]
        deg = poly_degree(fn)

        if deg is not None:
            out = np.broadcast_to(
                np.asarray(_nth_deriv(fn, j)(x), dtype=float), x.shape).copy()
            for q in range(psi.m + 1, deg - j + 1):
                out += (psi.moment(q) * eps ** q / math.factorial(q)) * \
                    _nth_deriv(fn, j + q)(x)
            if mod is None:
                return out

            def fh(t):
                w = psi.deriv_values(0, t / eps) / eps
                total = g(xc) * _nth_deriv(fn, j)(xc + t)
                for i in range(1, j + 1):
                    total = total + (math.comb(j, i) * _nth_deriv(g, i)(xc) *
                                     _nth_deriv(fn, j - i)(xc + t))
                return total * _H_FN(t) * w

            return out + eps * batch_integrate(fh, np.full(x.shape, -eps),
                                               np.full(x.shape, eps))

        def f(t):
            w = psi.deriv_values(0, t / eps) / eps
            total = _nth_deriv(fn, j)(xc + t)
            if mod is not None:
                total = total * (1.0 + eps * g(xc) * _H_FN(t))
                extra = np.zeros(t.shape)
                for i in range(1, j + 1):
                    extra += (math.comb(j, i) * _nth_deriv(g, i)(xc) *
                              _nth_deriv(fn, j - i)(xc + t))
                total = total + eps * extra * _H_FN(t)
            return total * w

        return batch_integrate(f, np.full(x.shape, -eps),
                               np.full(x.shape, eps))

    def _tail_weight_deriv(self, eps: float, p: int, x, a: float):
        """d^p/dx^p of int_{max(a-x,-eps)}^{eps} w(t) h(t) dt, w the scaled
        profile.  p >= 1 hits only the moving limit, giving closed forms."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        psi = self.mollifier_at(eps)
        if p == 0:
            # full-window and empty-window rows are exactly zero: h is odd
            out = np.zeros(x.shape)
            mid = np.abs(x - a) < eps
            if not np.any(mid):
                return out
            xm = x[mid]

            def f(t):
                return psi.deriv_values(0, t / eps) / eps * _H_FN(t)

            out[mid] = batch_integrate(f, a - xm, np.full(xm.shape, eps))
            return out
        s = a - x
        out = np.zeros(x.shape)
        for q in range(p):
            out += (math.comb(p - 1, q) * eps ** (-1 - q) *
                    psi.deriv_values(q, s / eps) *
                    _nth_deriv(_H_FN, p - 1 - q)(s))
        return (-1.0) ** (p - 1) * out

    def step_pairing(self, eps: float, j: int, x, a: float):
        """d^j/dx^j of int_a^inf k_eps(x, y) dy at the points x.

        For j >= 1 the moving lower limit turns the integral into kernel
        values at y = a (exact closed forms); only the j = 0 case and the
        modulation tail integrate anything, and those integrands are
        value-level.
        """
        eps = float(eps)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if j == 0:
            # away from the jump the mass is all or nothing, exactly: the
            # modulation term integrates to zero by parity (h odd, psi even)
            out = np.where(x - a >= eps, 1.0, 0.0)
            mid = np.abs(x - a) < eps
            if not np.any(mid):
                return out
            psi = self.mollifier_at(eps)
            mod = self.modulation
            g = mod.g_fn() if mod is not None else None
            xm = x[mid]
            xc = xm[:, None]

            def f(t):
                w = psi.deriv_values(0, t / eps) / eps
                if mod is None:
                    return w
                return w * (1.0 + eps * g(xc) * _H_FN(t))

            out[mid] = batch_integrate(f, a - xm, np.full(xm.shape, eps))
            return out
        out = self.kernel_dxdy(eps, j - 1, 0, x, a)
        if self.modulation is not None:
            g = self.modulation.g_fn()
            for i in range(j):
                out = out + (eps * math.comb(j - 1, i) *
                             _nth_deriv(g, i + 1)(x) *
                             self._tail_weight_deriv(eps, j - 1 - i, x, a))
        return out

    def describe(self) -> dict:
        return {
            "kind": "test-object",
            "label": self.label,
            "schedule": self.schedule.describe(),
            "domain": [self.domain.lo, self.domain.hi],
            "modulation": self.modulation.describe() if self.modulation else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.describe(), sort_keys=True)


@dataclass(frozen=True)
class ZeroTestObjectFamily:
    """Difference of two families, optionally damped by eps**damping.

    The unit-integral parts cancel, so every kernel integrates to zero;
    this is the directional data the Gateaux layer perturbs along.
    """

    minuend: TestObjectFamily
    subtrahend: TestObjectFamily
    damping: int = 0
    label: str = "zero"

    is_zero = True

    def __post_init__(self):
        if self.damping < 0:
            raise ValueError("damping power must be >= 0")
        if self.minuend.domain != self.subtrahend.domain:
            raise ValueError("families live on different domains")

    @property
    def domain(self) -> Interval:
        return self.minuend.domain

    def order_at(self, eps: float) -> int:
        return min(self.minuend.order_at(eps), self.subtrahend.order_at(eps))

    def support_bounds(self, eps: float, x):
        lo1, hi1 = self.minuend.support_bounds(eps, x)
        lo2, hi2 = self.subtrahend.support_bounds(eps, x)
        return np.minimum(lo1, lo2), np.maximum(hi1, hi2)

    def kernel(self, eps: float, x, y):
        return self.kernel_dxdy(eps, 0, 0, x, y)

    def kernel_dxdy(self, eps: float, j: int, k: int, x, y):
        diff = self.minuend.kernel_dxdy(eps, j, k, x, y) - \
            self.subtrahend.kernel_dxdy(eps, j, k, x, y)
        return float(eps) ** self.damping * diff

    def smooth_pairing(self, eps: float, j: int, x, fn: SmoothFn):
        diff = self.minuend.smooth_pairing(eps, j, x, fn) - \
            self.subtrahend.smooth_pairing(eps, j, x, fn)
        return float(eps) ** self.damping * diff

    def step_pairing(self, eps: float, j: int, x, a: float):
        diff = self.minuend.step_pairing(eps, j, x, a) - \
            self.subtrahend.step_pairing(eps, j, x, a)
        return float(eps) ** self.damping * diff

    def describe(self) -> dict:
        return {
            "kind": "zero-test-object",
            "label": self.label,
            "damping": self.damping,
            "minuend": self.minuend.describe(),
            "subtrahend": self.subtrahend.describe(),
        }

    def to_json(self) -> str:
        return json.dumps(self.describe(), sort_keys=True)


@dataclass(frozen=True)
class CombinedFamily:
    """base + scale * zero: still a test object (affine structure)."""

    base: TestObjectFamily
    direction: ZeroTestObjectFamily
    scale: float = 1.0
    label: str = "combined"

    is_zero = False

    def __post_init__(self):
        if self.base.domain != self.direction.domain:
            raise ValueError("families live on different domains")

    @property
    def domain(self) -> Interval:
        return self.base.domain

    @property
    def schedule(self):
        return self.base.schedule

    def order_at(self, eps: float) -> int:
        return min(self.base.order_at(eps), self.direction.order_at(eps))

    def support_bounds(self, eps: float, x):
        lo1, hi1 = self.base.support_bounds(eps, x)
        lo2, hi2 = self.direction.support_bounds(eps, x)
        return np.minimum(lo1, lo2), np.maximum(hi1, hi2)

    def kernel(self, eps: float, x, y):
        return self.kernel_dxdy(eps, 0, 0, x, y)

    def kernel_dxdy(self, eps: float, j: int, k: int, x, y):
        return self.base.kernel_dxdy(eps, j, k, x, y) + \
            self.scale * self.direction.kernel_dxdy(eps, j, k, x, y)

    def smooth_pairing(self, eps: float, j: int, x, fn: SmoothFn):
        return self.base.smooth_pairing(eps, j, x, fn) + \
            self.scale * self.direction.smooth_pairing(eps, j, x, fn)

    def step_pairing(self, eps: float, j: int, x, a: float):
        return self.base.step_pairing(eps, j, x, a) + \
            self.scale * self.direction.step_pairing(eps, j, x, a)

    def describe(self) -> dict:
        return {
            "kind": "combined",
            "label": self.label,
            "scale": self.scale,
            "base": self.base.describe(),
            "direction": self.direction.describe(),
        }

    def to_json(self) -> str:
        return json.dumps(self.describe(), sort_keys=True)


class KernelShiftDirection:
    """(d/dx + d/dy) applied to a family's kernel, as a direction.

    Translation-invariant kernels are annihilated, so this measures exactly
    the modulation's failure to commute with translation.  Total mass is
    zero (d/dx of the constant unit mass), making it a valid direction for
    directional derivatives in the kernel slot.
    """

    is_zero = True

    def __init__(self, parent):
        self.parent = parent
        self.label = f"shift({getattr(parent, 'label', '?')})"

    @property
    def domain(self) -> Interval:
        return self.parent.domain

    def order_at(self, eps: float) -> int:
        return self.parent.order_at(eps)

    def support_bounds(self, eps: float, x):
        return self.parent.support_bounds(eps, x)

    def kernel(self, eps: float, x, y):
        return self.kernel_dxdy(eps, 0, 0, x, y)

    def kernel_dxdy(self, eps: float, j: int, k: int, x, y):
        return self.parent.kernel_dxdy(eps, j + 1, k, x, y) + \
            self.parent.kernel_dxdy(eps, j, k + 1, x, y)

    def smooth_pairing(self, eps: float, j: int, x, fn: SmoothFn):
        # int f (d_x K + d_y K) dy; the d_y part integrates by parts onto f
        return self.parent.smooth_pairing(eps, j + 1, x, fn) - \
            self.parent.smooth_pairing(eps, j, x, fn.diff())

    def step_pairing(self, eps: float, j: int, x, a: float):
        # int_a^inf d_y K dy = -K(x, a); the support kills the upper end
        return self.parent.step_pairing(eps, j + 1, x, a) - \
            self.parent.kernel_dxdy(eps, j, 0, x, a)

    def describe(self) -> dict:
        return {"kind": "kernel-shift", "parent": self.parent.describe()}

    def to_json(self) -> str:
        return json.dumps(self.describe(), sort_keys=True)


def family_from_json(text_or_dict) -> object:
    d = text_or_dict if isinstance(text_or_dict, dict) else json.loads(text_or_dict)
    kind = d.get("kind")
    if kind == "test-object":
        mod = d.get("modulation")
        return TestObjectFamily(
            schedule=schedule_from_json(d["schedule"]),
            domain=Interval(*d["domain"]),
            modulation=Modulation(**mod) if mod else None,
            label=d.get("label", "base"),
        )
    if kind == "zero-test-object":
        return ZeroTestObjectFamily(
            minuend=family_from_json(d["minuend"]),
            subtrahend=family_from_json(d["subtrahend"]),
            damping=int(d.get("damping", 0)),
            label=d.get("label", "zero"),
        )
    if kind == "combined":
        return CombinedFamily(
            base=family_from_json(d["base"]),
            direction=family_from_json(d["direction"]),
            scale=float(d.get("scale", 1.0)),
            label=d.get("label", "combined"),
        )
    if kind == "restricted":
        from .sheafops import RestrictedFamily, make_diagonal_cutoff
        return RestrictedFamily(family_from_json(d["parent"]),
                                make_diagonal_cutoff(Interval(*d["interval"])))
    raise ValueError(f"unknown family kind {kind!r}")


def base_family(schedule=None, domain: Interval = None) -> TestObjectFamily:
    """The default family: staircase schedule, no modulation."""
    return TestObjectFamily(
        schedule=schedule if schedule is not None else StaircaseSchedule(),
        domain=domain if domain is not None else Interval(-2.0, 2.0),
        modulation=None,
        label="base",
    )


def make_uniform_set(family: TestObjectFamily, count: int, seed: int = 0):
    """family plus count-1 modulated variants sharing schedule and domain.

    The modulation amplitudes are bounded by a common constant, so the
    defining bounds hold with shared constants across the whole set.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    out = [family]
    rng = np.random.default_rng(seed)
    for i in range(count - 1):
        child = int(rng.integers(0, 2 ** 31 - 1))
        out.append(replace(family,
                           modulation=Modulation.from_seed(child),
                           label=f"{family.label}+mod{i + 1}"))
    return out


def _schedules_of(family):
    if isinstance(family, TestObjectFamily):
        return [family.schedule]
    if isinstance(family, ZeroTestObjectFamily):
        return _schedules_of(family.minuend) + _schedules_of(family.subtrahend)
    if isinstance(family, CombinedFamily):
        return _schedules_of(family.base) + _schedules_of(family.direction)
    raise TypeError(f"not a kernel family: {family!r}")


def is_uniform_set(families) -> tuple:
    """(verdict, reasons): shared schedule, domain and modulation bound."""
    reasons = []
    if not families:
        return False, ["empty set"]
    sched_set = {json.dumps(s.describe(), sort_keys=True)
                 for f in families for s in _schedules_of(f)}
    if len(sched_set) > 1:
        reasons.append(f"mixed moment schedules: {sorted(sched_set)}")
    domains = {(f.domain.lo, f.domain.hi) for f in families}
    if len(domains) > 1:
        reasons.append(f"mixed domains: {sorted(domains)}")
    for f in families:
        mod = getattr(f, "modulation", None)
        if mod is not None and abs(mod.amplitude) > 0.5:
            reasons.append(f"modulation amplitude {mod.amplitude} exceeds 0.5")
    return (len(reasons) == 0), reasons


# ---------------------------------------------------------------------------
# Verification battery.
#
# The defining conditions quantify over all probe distributions, window
# functions and seminorms; no finite check can exhaust them.  The fixed
# battery below (delta derivatives to order 2, a jump, three smooth
# densities, sup-seminorms of order <= 3 on two compacts) is sound but
# incomplete, and every report says so.


def _battery_frame(family):
    """Center and scale placing the probe battery inside the family's domain.

    The stock battery lives on (-2, 2); smaller domains (restricted
    families) get the same battery mapped by t -> c + s*t so every probe
    point, window, and grid stays inside.
    """
    dom = getattr(family, "domain", None)
    if dom is None or (dom.lo <= -2.0 and dom.hi >= 2.0):
        return 0.0, 1.0
    return dom.mid, 0.25 * dom.length


def _battery_distributions(c=0.0, s=1.0):
    return [
        DiracDelta(c, 0),
        DiracDelta(c, 1),
        DiracDelta(c, 2),
        HeavisideJump(c),
        SmoothDensity(Sin(X), "sin"),
        SmoothDensity(X ** 3, "cubic"),
        SmoothDensity(Exp(Sin(X)), "exp_sin"),
    ]


def _battery_windows(c=0.0, s=1.0):
    # The offset window puts the probes' singular point on its shoulder, so
    # derivative pairings are nontrivial there; the centered window checks
    # plain mass.
    c2 = c + 0.6 * s
    return [
        (f"plateau[c={c:g},r={s:g}]", Plateau(affine(1.0 / s, -c / s)),
         Interval(c - s, c + s)),
        (f"plateau[c={c2:g},r={s:g}]", Plateau(affine(1.0 / s, -c2 / s)),
         Interval(c2 - s, c2 + s)),
    ]


def _smooth_probe_list():
    return [("sin", Sin(X)), ("cubic", X ** 3), ("exp_sin", Exp(Sin(X)))]


@dataclass
class ConditionReport:
    name: str
    passed: bool
    rows: list
    per_eps: list = field(default_factory=list)  # (eps, aggregate value)
    notes: str = ""

    def to_json_dict(self):
        return {"name": self.name, "passed": self.passed, "rows": self.rows,
                "notes": self.notes}


@dataclass
class VerificationReport:
    family: dict
    zero_type: bool
    grid: list
    conditions: dict
    battery: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions.values())

    def to_json_dict(self):
        return {
            "family": self.family,
            "zero_type": self.zero_type,
            "passed": self.passed,
            "grid": self.grid,
            "conditions": {k: c.to_json_dict() for k, c in self.conditions.items()},
            "battery": self.battery,
        }

    def to_json(self) -> str:
        def plain(o):
            if isinstance(o, np.generic):
                return o.item()
            raise TypeError(f"not JSON serializable: {o!r}")

        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2,
                          default=plain)

    def csv_rows(self):
        """(eps, condition, measured value) rows, grid-major."""
        out = []
        for name, cond in self.conditions.items():
            for eps, value in cond.per_eps:
                out.append((eps, name, value))
        out.sort(key=lambda r: (-r[0], r[1]))
        return out


def _unit_mass(family) -> float:
    return 0.0 if getattr(family, "is_zero", False) else 1.0


def _smoothed_window_deriv(family, chi, k, a, eps):
    """d^k/dy^k of int chi(x) K(x, y) dx at y = a.

    The derivative is pushed through the x -> y - t substitution before any
    quadrature, so the integrand stays value-level in the profile.  The raw
    form (chi against the k-th kernel derivative) cancels eps^-k-amplified
    oscillations numerically and loses most digits; this form loses none.
    """
    special = getattr(family, "window_deriv", None)
    if special is not None:
        return special(chi, k, a, eps)
    if isinstance(family, ZeroTestObjectFamily):
        return eps ** family.damping * (
            _smoothed_window_deriv(family.minuend, chi, k, a, eps)
            - _smoothed_window_deriv(family.subtrahend, chi, k, a, eps))
    if isinstance(family, CombinedFamily):
        return (_smoothed_window_deriv(family.base, chi, k, a, eps)
                + family.scale *
                _smoothed_window_deriv(family.direction, chi, k, a, eps))
    psi = family.mollifier_at(eps)
    mod = family.modulation

    def f(t):
        w = psi.deriv_values(0, t / eps) / eps
        total = _nth_deriv(chi, k)(a - t)
        if mod is not None:
            g = mod.g_fn()
            acc = np.zeros(t.shape)
            for j in range(k + 1):
                acc += (math.comb(k, j) * _nth_deriv(chi, j)(a - t) *
                        _nth_deriv(g, k - j)(a - t))
            total = total + eps * acc * _H_FN(t)
        return total * w

    return float(batch_integrate(f, np.array([-eps]), np.array([eps]))[0])


def _window_pairing(family, probe, chi, supp, eps):
    """<smoothed probe, chi> with the spike handled on its own support."""
    if isinstance(probe, DiracDelta):
        sign = -1.0 if probe.order % 2 else 1.0
        return sign * _smoothed_window_deriv(family, chi, probe.order,
                                             probe.point, eps)
    if isinstance(probe, HeavisideJump):
        a = probe.point
        total = 0.0
        lo, hi = max(supp.lo, a - eps), min(supp.hi, a + eps)
        if hi > lo:
            def f(xp):
                vals = probe.pair_kernel(family, eps, 0, xp.ravel())
                return chi(xp) * vals.reshape(xp.shape)

            total += float(batch_integrate(f, np.array([lo]), np.array([hi]))[0])
        lo2 = max(supp.lo, a + eps)
        if supp.hi > lo2:
            # right of the transition strip the smoothed step equals the
            # family's unit mass exactly (odd modulation integrates out)
            mass = _unit_mass(family)
            if mass != 0.0:
                total += mass * float(batch_integrate(
                    lambda xp: chi(xp), np.array([lo2]), np.array([supp.hi]))[0])
        return total

    def f(xp):
        vals = probe.pair_kernel(family, eps, 0, xp.ravel())
        return chi(xp) * vals.reshape(xp.shape)

    return float(batch_integrate(f, np.array([supp.lo]), np.array([supp.hi]))[0])


def _check_windows(family, probes, eps_values, zero, c=0.0, s=1.0):
    rows = []
    per_eps = {float(e): 0.0 for e in eps_values}
    ok = True
    for probe in probes:
        for wname, chi, supp in _battery_windows(c, s):
            target = 0.0 if zero else probe.pair_testfn(chi, supp.lo, supp.hi)
            errs = []
            for eps in eps_values:
                got = _window_pairing(family, probe, chi, supp, float(eps))
                err = abs(got - target)
                errs.append(err)
                per_eps[float(eps)] = max(per_eps[float(eps)], err)
            scale = max(1.0, abs(target))
            converged = errs[-1] <= 1e-6 * scale
            ok = ok and converged
            rows.append({"probe": probe.label(), "window": wname,
                         "target": target, "final_error": errs[-1],
                         "passed": bool(converged)})
    name = "(i') pairings vanish" if zero else "(i) pairings converge"
    return ConditionReport(name, ok, rows, sorted(per_eps.items(), reverse=True))


def _seminorm_values(family, probe, alpha, eps_values, xgrid):
    out = np.empty(len(eps_values))
    for i, eps in enumerate(eps_values):
        vals = probe.pair_kernel(family, float(eps), alpha, xgrid)
        out[i] = np.max(np.abs(vals))
    return out


def _check_growth(family, probes, eps_values, c=0.0, s=1.0):
    xgrid = c + s * np.linspace(-1.0, 1.0, 65)
    inner = np.abs(xgrid - c) <= s * (0.5 + 1e-12)
    rows = []
    per_eps = {float(e): 0.0 for e in eps_values}
    ok = True
    for probe in probes:
        for alpha in range(4):
            sup_outer = np.empty(len(eps_values))
            sup_inner = np.empty(len(eps_values))
            for i, eps in enumerate(eps_values):
                vals = np.abs(probe.pair_kernel(family, float(eps), alpha, xgrid))
                sup_outer[i] = vals.max()
                sup_inner[i] = vals[inner].max()
                per_eps[float(eps)] = max(per_eps[float(eps)], float(vals.max()))
            names = (f"[{c - s:g},{c + s:g}]", f"[{c - 0.5 * s:g},{c + 0.5 * s:g}]")
            for kname, sups in ((names[0], sup_outer), (names[1], sup_inner)):
                fit = fit_loglog(eps_values, sups)
                # a flat net (bounded seminorms) is the best possible case;
                # its r2 is meaningless noise, so the fit-quality gate only
                # applies when the values actually move.  A tail stuck at
                # the numerical floor likewise cannot be diverging.
                logs = np.log(np.maximum(sups, VALUE_FLOOR))
                flat = float(logs.max() - logs.min()) < 0.5
                bounded = fit.slope > -12.0 and \
                    (flat or fit.floor_hit or not np.isfinite(fit.slope)
                     or fit.r2 >= 0.9)
                ok = ok and bounded
                rows.append({"probe": probe.label(), "compact": kname,
                             "alpha": alpha, "slope": fit.slope, "r2": fit.r2,
                             "floor_hit": fit.floor_hit, "passed": bool(bounded)})
    return ConditionReport("(ii) moderate growth", ok, rows,
                           sorted(per_eps.items(), reverse=True))


def _check_smooth(family, eps_values, zero, c=0.0, s=1.0):
    xgrid = c + s * np.linspace(-1.0, 1.0, 65)
    rows = []
    per_eps = {float(e): 0.0 for e in eps_values}
    ok = True
    max_order = 6
    for pname, fn in _smooth_probe_list():
        probe = SmoothDensity(fn, pname)
        target = 0.0 if zero else fn(xgrid)
        errs = np.empty(len(eps_values))
        for i, eps in enumerate(eps_values):
            vals = probe.pair_kernel(family, float(eps), 0, xgrid)
            errs[i] = np.max(np.abs(vals - target))
            per_eps[float(eps)] = max(per_eps[float(eps)], float(errs[i]))
        fit = fit_loglog(eps_values, errs)
        first_fail = None
        for order in range(1, max_order + 1):
            if np.isfinite(fit.slope) and fit.slope < order - 0.3:
                first_fail = order
                break
        ok = ok and first_fail is None
        rows.append({"probe": pname, "slope": fit.slope, "r2": fit.r2,
                     "floor_hit": fit.floor_hit,
                     "first_failing_order": first_fail,
                     "passed": first_fail is None})
    name = "(iii') smooth pairings decay" if zero else "(iii) smooth reproduction"
    return ConditionReport(
        name, ok, rows, sorted(per_eps.items(), reverse=True),
        notes=f"super-polynomial decay probed up to order {max_order}")


def _check_support(family, eps_values, c=0.0, s=1.0):
    rows = []
    per_eps = []
    ok = True
    for eps in eps_values:
        eps = float(eps)
        worst = 0.0
        for x0 in (c + 0.3 * s, c - 0.7 * s):
            ygrid = x0 + np.linspace(-1.5 * eps, 1.5 * eps, 1201)
            vals = np.abs(family.kernel(eps, x0, ygrid))
            peak = vals.max()
            nz = vals > (1e-16 * peak if peak > 0 else 0.0)
            radius = float(np.max(np.abs(ygrid[nz] - x0))) if np.any(nz) else 0.0
            worst = max(worst, radius)
        inside = worst <= eps * (1.0 + 1e-9)
        ok = ok and inside
        rows.append({"eps": eps, "radius": worst, "bound": eps,
                     "passed": bool(inside)})
        per_eps.append((eps, worst))
    return ConditionReport("(iv) support radius", ok, rows, per_eps)


def verify_test_object(family, grid: EpsGrid = None) -> VerificationReport:
    """Run the probe battery; verdicts carry evidence, never exceptions."""
    grid = grid if grid is not None else EpsGrid()
    eps_values = np.asarray(grid.values, dtype=float)
    zero = bool(getattr(family, "is_zero", False))
    c, s = _battery_frame(family)
    probes = _battery_distributions(c, s)
    conditions = {
        "approximation": _check_windows(family, probes, eps_values, zero, c, s),
        "growth": _check_growth(family, probes, eps_values, c, s),
        "smooth": _check_smooth(family, eps_values, zero, c, s),
        "support": _check_support(family, eps_values, c, s),
    }
    battery = {
        "distributions": [p.label() for p in probes],
        "windows": [w[0] for w in _battery_windows(c, s)],
        "smooth_probes": [n for n, _ in _smooth_probe_list()],
        "seminorms": {"alphas": [0, 1, 2, 3],
                      "compacts": [[c - s, c + s], [c - 0.5 * s, c + 0.5 * s]],
                      "grid_points": 65},
        "frame": [c, s],
        "note": ("finite probe battery; sound but incomplete for the "
                 "universally quantified conditions"),
    }
    return VerificationReport(
        family=family.describe(),
        zero_type=zero,
        grid=[float(e) for e in eps_values],
        conditions=conditions,
        battery=battery,
    )
