"""Distributional inputs: Dirac combs of low order, jumps, smooth densities.

Each kind knows how to pair itself against a smoothing kernel family (giving
the net x -> <u, phi_eps(x)> and its x-derivatives) and against an ordinary
smooth test function.  Both pairings are what the embedding and verification
layers consume; nothing here depends on them.
"""

from __future__ import annotations

import numpy as np

from .numerics import batch_integrate
from .smoothfn import SmoothFn, as_smooth


class Distribution:
    def pair_kernel(self, family, eps: float, j: int, x):
        """d^j/dx^j of <u, phi_eps(x)> at the points x (vectorized)."""
        raise NotImplementedError

    def pair_testfn(self, chi: SmoothFn, lo: float, hi: float) -> float:
        """<u, chi> for chi smooth and supported in [lo, hi]."""
        raise NotImplementedError

    def label(self) -> str:
        raise NotImplementedError

    def __repr__(self):
        return self.label()

    def __eq__(self, other):
        return type(self) is type(other) and self._key() == other._key()

    def __hash__(self):
        return hash((type(self).__name__, self._key()))


class DiracDelta(Distribution):
    """delta_a^(order); order 0 is the plain point mass at a."""

    def __init__(self, point: float = 0.0, order: int = 0):
        if order < 0:
            raise ValueError("derivative order must be >= 0")
        self.point = float(point)
        self.order = int(order)

    def pair_kernel(self, family, eps, j, x):
        # <delta_a^(k), phi> = (-1)^k (d/dy)^k phi(y) at y=a.
        sign = -1.0 if self.order % 2 else 1.0
        x = np.asarray(x, dtype=float)
        return sign * family.kernel_dxdy(eps, j, self.order, x, self.point)

    def pair_testfn(self, chi, lo, hi):
        sign = -1.0 if self.order % 2 else 1.0
        return sign * float(chi.diff(self.order)(self.point))

    def label(self):
        if self.order == 0:
            return f"delta({self.point:g})"
        return f"delta^({self.order})({self.point:g})"

    def _key(self):
        return (self.point, self.order)


class HeavisideJump(Distribution):
    """Unit step with jump at the given point."""

    def __init__(self, point: float = 0.0):
        self.point = float(point)

    def pair_kernel(self, family, eps, j, x):
        x = np.asarray(x, dtype=float)
        return family.step_pairing(eps, j, x, self.point)

    def pair_testfn(self, chi, lo, hi):
        a = max(lo, self.point)
        if a >= hi:
            return 0.0
        return batch_integrate(lambda y: chi(y), np.array([a]),
                               np.array([hi]))[0]

    def label(self):
        return f"heaviside({self.point:g})"

    def _key(self):
        return (self.point,)


class SmoothDensity(Distribution):
    """A smooth function viewed as a distribution by integration."""

    def __init__(self, fn, name: str = ""):
        self.fn = as_smooth(fn)
        self.name = name

    def pair_kernel(self, family, eps, j, x):
        x = np.asarray(x, dtype=float)
        return family.smooth_pairing(eps, j, x, self.fn)

    def pair_testfn(self, chi, lo, hi):
        return batch_integrate(lambda y: self.fn(y) * chi(y),
                               np.array([lo]), np.array([hi]))[0]

    def label(self):
        return self.name or f"density({self.fn!r})"

    def _key(self):
        return (self.fn,)
