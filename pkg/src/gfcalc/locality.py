"""Locality types for functionals R(phi)_eps(x) and their implication order.

A locality type records which compression of the argument triple
(kernel net phi, point x, scale eps) a functional factors through: the
phi-slot keeps the whole net, one net component, a germ at x, a germ of one
component, the net of values at x, a single test function phi_eps(x), or
nothing; the x- and eps-slots are either kept or dropped.  Type a is
"stronger or equal" than type b when every functional local of type a is
automatically local of type b, equivalently when a's data can be computed
from b's data.

Dropping the x-slot of a germ type is a no-op (a germ knows its base point),
so those triples canonicalize to the x-present form, leaving 24 types out of
the raw 7*2*2.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from itertools import product


class Phi(Enum):
    FULL_NET = "phi"                 # the whole kernel net
    COMPONENT = "phi_eps"            # one net component
    GERM = "germ(phi)"               # germ at x of the net
    GERM_COMPONENT = "germ(phi_eps)" # germ at x of one component
    VALUE = "phi(x)"                 # net of test functions at x
    VALUE_COMPONENT = "phi_eps(x)"   # a single test function
    STAR = ""                        # nothing kept


_GERMS = (Phi.GERM, Phi.GERM_COMPONENT)


@dataclass(frozen=True)
class LocalityType:
    """Canonical triple (phi-slot, x kept?, eps kept?)."""

    phi: Phi
    x: bool
    eps: bool

    def __post_init__(self):
        if self.phi in _GERMS and not self.x:
            raise ValueError("germ components determine x; use make() to canonicalize")

    def __str__(self):
        return type_to_string(self)

    __repr__ = __str__


def make(phi: Phi, x: bool, eps: bool) -> LocalityType:
    """Build a type, canonicalizing germ-without-x to germ-with-x."""
    if phi in _GERMS:
        x = True
    return LocalityType(phi, bool(x), bool(eps))


def is_valid(phi: Phi, x: bool, eps: bool) -> bool:
    """True iff the raw triple is one of the 24 canonical types."""
    return not (phi in _GERMS and not x)


ALL_TYPES = tuple(
    LocalityType(p, x, e)
    for p in Phi
    for x in (True, False)
    for e in (True, False)
    if is_valid(p, x, e)
)

# Shorthands used throughout the package.
BOTTOM = make(Phi.FULL_NET, True, True)            # every functional has it
TOP = make(Phi.STAR, False, False)                 # constants
IOTA_TYPE = make(Phi.VALUE_COMPONENT, False, False)
SIGMA_TYPE = make(Phi.STAR, True, False)
IOTA_THETA_TYPE = make(Phi.STAR, True, True)
SHEAF_TYPE = make(Phi.GERM_COMPONENT, True, True)


def _t(phi, x, e):
    return make(phi, x, e)


def _per_phi(phis, x1, e1, x2, e2):
    return [(_t(p, x1, e1), _t(p, x2, e2)) for p in phis]


_ALL_PHI = (Phi.FULL_NET, Phi.COMPONENT, Phi.GERM, Phi.GERM_COMPONENT,
            Phi.VALUE, Phi.VALUE_COMPONENT)
_NO_GERM = (Phi.FULL_NET, Phi.COMPONENT, Phi.VALUE, Phi.VALUE_COMPONENT)

# Covering arrows of the order, source stronger than target.  Within a box
# (fixed x/eps slots) an arrow exists when the source datum is computable
# from the target's; note the net/component and value/germ recoveries need
# the eps- resp. x-slot of the *target*, which is why the eps-absent and
# x-absent boxes are sparser.
_COVER_ARROWS = tuple(
    # x and eps both kept
    [(_t(Phi.COMPONENT, 1, 1), _t(Phi.FULL_NET, 1, 1)),
     (_t(Phi.GERM_COMPONENT, 1, 1), _t(Phi.GERM, 1, 1)),
     (_t(Phi.VALUE_COMPONENT, 1, 1), _t(Phi.VALUE, 1, 1)),
     (_t(Phi.VALUE, 1, 1), _t(Phi.GERM, 1, 1)),
     (_t(Phi.GERM, 1, 1), _t(Phi.FULL_NET, 1, 1)),
     (_t(Phi.VALUE_COMPONENT, 1, 1), _t(Phi.GERM_COMPONENT, 1, 1)),
     (_t(Phi.GERM_COMPONENT, 1, 1), _t(Phi.COMPONENT, 1, 1)),
     # x kept, eps dropped: component recoveries unavailable
     (_t(Phi.VALUE, 1, 0), _t(Phi.GERM, 1, 0)),
     (_t(Phi.GERM, 1, 0), _t(Phi.FULL_NET, 1, 0)),
     (_t(Phi.VALUE_COMPONENT, 1, 0), _t(Phi.GERM_COMPONENT, 1, 0)),
     (_t(Phi.GERM_COMPONENT, 1, 0), _t(Phi.COMPONENT, 1, 0)),
     # eps kept, x dropped: germ/value recoveries unavailable
     (_t(Phi.COMPONENT, 0, 1), _t(Phi.FULL_NET, 0, 1)),
     (_t(Phi.VALUE_COMPONENT, 0, 1), _t(Phi.VALUE, 0, 1)),
     # pure-slot types
     (_t(Phi.STAR, 1, 0), _t(Phi.STAR, 1, 1)),
     (_t(Phi.STAR, 0, 1), _t(Phi.STAR, 1, 1)),
     (_t(Phi.STAR, 0, 0), _t(Phi.STAR, 0, 1)),
     (_t(Phi.STAR, 0, 0), _t(Phi.STAR, 1, 0)),
     # dropping the phi-slot entirely (covers only; weaker targets follow
     # through the in-box chains)
     (_t(Phi.STAR, 1, 1), _t(Phi.VALUE_COMPONENT, 1, 1)),
     (_t(Phi.STAR, 1, 0), _t(Phi.VALUE_COMPONENT, 1, 0)),
     (_t(Phi.STAR, 1, 0), _t(Phi.VALUE, 1, 0)),
     (_t(Phi.STAR, 0, 1), _t(Phi.VALUE_COMPONENT, 0, 1)),
     (_t(Phi.STAR, 0, 1), _t(Phi.COMPONENT, 0, 1))]
    + [(_t(Phi.STAR, 0, 0), _t(p, 0, 0)) for p in _NO_GERM]
    # same phi-slot, one slot added on the weaker side
    + _per_phi(_ALL_PHI, 1, 0, 1, 1)
    + _per_phi(_NO_GERM, 0, 1, 1, 1)
    + _per_phi(_NO_GERM, 0, 0, 0, 1)
    + _per_phi(_NO_GERM, 0, 0, 1, 0)
)

# The redundant instances of the drop-the-phi-slot shorthand (already implied
# by a cover into the box plus in-box chains).  Together with the covers this
# is the literal expansion of the figure's arrow bundles.
_SHORTHAND_EXTRAS = tuple(
    [(_t(Phi.STAR, 1, 1), _t(p, 1, 1))
     for p in (Phi.FULL_NET, Phi.COMPONENT, Phi.GERM, Phi.GERM_COMPONENT, Phi.VALUE)]
    + [(_t(Phi.STAR, 1, 0), _t(p, 1, 0))
       for p in (Phi.FULL_NET, Phi.COMPONENT, Phi.GERM, Phi.GERM_COMPONENT)]
    + [(_t(Phi.STAR, 0, 1), _t(p, 0, 1)) for p in (Phi.FULL_NET, Phi.VALUE)]
)


def covering_arrows():
    """The diagram's arrow set with bundle shorthands expanded minimally."""
    return _COVER_ARROWS


def literal_arrows():
    """The arrow set with bundle shorthands expanded literally (redundant)."""
    return _COVER_ARROWS + _SHORTHAND_EXTRAS


def _transitive_closure(arrows):
    reach = {t: {t} for t in ALL_TYPES}
    adj = {t: set() for t in ALL_TYPES}
    for a, b in arrows:
        adj[a].add(b)
    changed = True
    while changed:
        changed = False
        for a in ALL_TYPES:
            new = set()
            for b in adj[a]:
                new |= reach[b]
            if not new <= reach[a]:
                reach[a] |= new
                changed = True
    return reach


_WEAKER_EQ = _transitive_closure(_COVER_ARROWS)


def stronger_eq(a: LocalityType, b: LocalityType) -> bool:
    """True iff a-locality implies b-locality."""
    return b in _WEAKER_EQ[a]


def strictly_stronger(a: LocalityType, b: LocalityType) -> bool:
    return a != b and stronger_eq(a, b)


def covering_relation():
    """Pairs (a, b) with a > b and nothing strictly between."""
    pairs = []
    for a in ALL_TYPES:
        for b in _WEAKER_EQ[a]:
            if b == a:
                continue
            between = any(z != a and z != b and z in _WEAKER_EQ[a] and b in _WEAKER_EQ[z]
                          for z in ALL_TYPES)
            if not between:
                pairs.append((a, b))
    return pairs


def _build_glb_table():
    table = {}
    for a, b in product(ALL_TYPES, ALL_TYPES):
        lower = [z for z in ALL_TYPES
                 if z in _WEAKER_EQ[a] and z in _WEAKER_EQ[b]]
        best = [z for z in lower if all(w in _WEAKER_EQ[z] for w in lower)]
        if len(best) != 1:
            raise AssertionError(f"glb not unique for {a}, {b}: {best}")
        table[(a, b)] = best[0]
    return table


_GLB = _build_glb_table()


def combine(a: LocalityType, b: LocalityType) -> LocalityType:
    """Greatest lower bound; the locality tag of sums and products."""
    return _GLB[(a, b)]


_COMPONENTWISE_PHI = {
    Phi.VALUE: Phi.GERM,
    Phi.VALUE_COMPONENT: Phi.GERM_COMPONENT,
}


def derivative_transform(l: LocalityType, kind: str) -> LocalityType:
    """Locality after differentiation in x.

    The geometric derivative preserves the type.  The componentwise one
    turns value-slots into germ-slots (a point derivative needs values
    nearby) and leaves everything else alone.
    """
    if kind == "geometric":
        return l
    if kind == "componentwise":
        phi = _COMPONENTWISE_PHI.get(l.phi, l.phi)
        return make(phi, l.x, l.eps)
    raise ValueError(f"unknown derivative kind {kind!r}")


def admissibility(l: LocalityType, what: str) -> bool:
    """Whether a construction is available at locality l.

    iota/sigma/iota_theta embed into every type at or below their natural
    one; the sheaf machinery needs at least germ-component locality.
    """
    if what == "iota":
        return stronger_eq(IOTA_TYPE, l)
    if what == "sigma":
        return stronger_eq(SIGMA_TYPE, l)
    if what == "iota_theta":
        return stronger_eq(IOTA_THETA_TYPE, l)
    if what == "sheaf":
        return stronger_eq(l, SHEAF_TYPE)
    raise ValueError(f"unknown admissibility predicate {what!r}")


def sheaf_admissible_types():
    return tuple(t for t in ALL_TYPES if admissibility(t, "sheaf"))


# --- serialization ----------------------------------------------------------

def type_to_string(l: LocalityType) -> str:
    parts = []
    if l.phi is not Phi.STAR:
        parts.append(l.phi.value)
    if l.x:
        parts.append("x")
    if l.eps:
        parts.append("eps")
    if not parts:
        return "star"
    return "(" + ", ".join(parts) + ")"


_PHI_BY_TOKEN = {p.value: p for p in Phi if p is not Phi.STAR}


def parse_type(s: str) -> LocalityType:
    s = s.strip()
    if s in ("star", "*"):
        return TOP
    if not (s.startswith("(") and s.endswith(")")):
        raise ValueError(f"cannot parse locality type {s!r}")
    tokens = [t.strip() for t in s[1:-1].split(",") if t.strip()]
    phi = Phi.STAR
    x = False
    eps = False
    for tok in tokens:
        if tok == "x":
            x = True
        elif tok == "eps":
            eps = True
        elif tok in _PHI_BY_TOKEN:
            phi = _PHI_BY_TOKEN[tok]
        else:
            raise ValueError(f"unknown component {tok!r}")
    if not is_valid(phi, x, eps):
        raise ValueError(f"non-canonical type {s!r} (germ slots determine x)")
    return make(phi, x, eps)
