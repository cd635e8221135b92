"""Lattice of locality types, checked against an independent oracle.

The oracle models each type by the data it exposes and decides a >= b by
asking whether a's data is computable from b's.  It shares no code with the
table-driven implementation.
"""

from itertools import product

import pytest

from gfcalc import locality as loc
from gfcalc.locality import Phi, make


# --- oracle -----------------------------------------------------------------

def _knows_x(t):
    # Germ slots carry their base point.
    return t.x or t.phi in (Phi.GERM, Phi.GERM_COMPONENT)


def _knows_eps(t):
    return t.eps


def _phi_computable(target_phi, b):
    """Can the target phi-datum be computed from all of b's data?"""
    p = b.phi
    has_x = _knows_x(b)
    has_e = _knows_eps(b)
    if target_phi is Phi.STAR:
        return True
    if target_phi is Phi.FULL_NET:
        return p is Phi.FULL_NET
    if target_phi is Phi.COMPONENT:
        return p is Phi.COMPONENT or (p is Phi.FULL_NET and has_e)
    if target_phi is Phi.GERM:
        return p is Phi.GERM or (p is Phi.FULL_NET and has_x)
    if target_phi is Phi.VALUE:
        # a germ of the net determines the value net at its base point
        return p in (Phi.VALUE, Phi.GERM) or (p is Phi.FULL_NET and has_x)
    if target_phi is Phi.GERM_COMPONENT:
        return (p is Phi.GERM_COMPONENT
                or (p is Phi.GERM and has_e)
                or (p is Phi.COMPONENT and has_x)
                or (p is Phi.FULL_NET and has_x and has_e))
    if target_phi is Phi.VALUE_COMPONENT:
        return (p in (Phi.VALUE_COMPONENT, Phi.GERM_COMPONENT)
                or (p in (Phi.VALUE, Phi.GERM) and has_e)
                or (p is Phi.COMPONENT and has_x)
                or (p is Phi.FULL_NET and has_x and has_e))
    raise AssertionError(target_phi)


def oracle_stronger_eq(a, b):
    if a.x and not _knows_x(b):
        return False
    if a.eps and not _knows_eps(b):
        return False
    return _phi_computable(a.phi, b)


ALL = loc.ALL_TYPES


def test_exactly_24_canonical_types():
    raw = [(p, x, e) for p in Phi for x in (True, False) for e in (True, False)]
    assert len(raw) == 28
    assert sum(loc.is_valid(*t) for t in raw) == 24
    assert len(ALL) == 24
    assert len(set(ALL)) == 24


def test_germ_without_x_is_invalid_but_canonicalizes():
    assert not loc.is_valid(Phi.GERM, False, True)
    assert make(Phi.GERM, False, True) == make(Phi.GERM, True, True)
    assert make(Phi.GERM_COMPONENT, False, False).x


def test_order_matches_oracle_everywhere():
    for a, b in product(ALL, ALL):
        assert loc.stronger_eq(a, b) == oracle_stronger_eq(a, b), (a, b)


def test_order_equals_closure_of_literal_arrow_set():
    arrows = loc.literal_arrows()
    reach = {t: {t} for t in ALL}
    changed = True
    while changed:
        changed = False
        for x, y in arrows:
            for t in ALL:
                if x in reach[t] and y not in reach[t]:
                    reach[t].add(y)
                    changed = True
    for a, b in product(ALL, ALL):
        assert (b in reach[a]) == loc.stronger_eq(a, b), (a, b)


def test_partial_order_axioms():
    for a in ALL:
        assert loc.stronger_eq(a, a)
    for a, b in product(ALL, ALL):
        if loc.stronger_eq(a, b) and loc.stronger_eq(b, a):
            assert a == b
    for a, b, c in product(ALL, ALL, ALL):
        if loc.stronger_eq(a, b) and loc.stronger_eq(b, c):
            assert loc.stronger_eq(a, c)


def test_covering_relation_equals_diagram_arrows():
    computed = set(loc.covering_relation())
    assert computed == set(loc.covering_arrows())
    # the literal bundle expansion adds only transitively redundant arrows
    extras = set(loc.literal_arrows()) - set(loc.covering_arrows())
    assert len(set(loc.literal_arrows())) == 55
    assert len(computed) == 44
    for a, b in extras:
        assert loc.strictly_stronger(a, b)
        assert any(z not in (a, b) and loc.stronger_eq(a, z) and loc.stronger_eq(z, b)
                   for z in ALL)


def test_top_and_bottom():
    for t in ALL:
        assert loc.stronger_eq(loc.TOP, t)
        assert loc.stronger_eq(t, loc.BOTTOM)


def test_stronger_examples():
    assert loc.stronger_eq(make(Phi.COMPONENT, 1, 1), make(Phi.FULL_NET, 1, 1))
    # A value-component type implies the germ-component type that keeps eps:
    # the germ determines the value at its base point.
    assert loc.stronger_eq(make(Phi.VALUE_COMPONENT, 1, 0),
                           make(Phi.GERM_COMPONENT, 1, 1))
    # but not the other way around
    assert not loc.stronger_eq(make(Phi.GERM_COMPONENT, 1, 1),
                               make(Phi.VALUE_COMPONENT, 1, 0))
    # eps-dropped boxes lack the component recoveries
    assert not loc.stronger_eq(make(Phi.VALUE_COMPONENT, 1, 0), make(Phi.VALUE, 1, 0))
    assert not loc.stronger_eq(make(Phi.COMPONENT, 1, 0), make(Phi.FULL_NET, 1, 0))


def test_combine_is_the_glb():
    for a, b in product(ALL, ALL):
        c = loc.combine(a, b)
        assert loc.stronger_eq(a, c) and loc.stronger_eq(b, c)
    for a, b, w in product(ALL, ALL, ALL):
        if loc.stronger_eq(a, w) and loc.stronger_eq(b, w):
            assert loc.stronger_eq(loc.combine(a, b), w)


def test_combine_algebra():
    for a, b in product(ALL, ALL):
        assert loc.combine(a, b) == loc.combine(b, a)
    for a in ALL:
        assert loc.combine(a, a) == a
    for a, b, c in product(ALL, ALL, ALL):
        assert loc.combine(loc.combine(a, b), c) == loc.combine(a, loc.combine(b, c))


def test_combine_examples():
    assert loc.combine(make(Phi.VALUE_COMPONENT, 0, 0), make(Phi.STAR, 1, 0)) \
        == make(Phi.VALUE_COMPONENT, 1, 0)
    assert loc.combine(make(Phi.COMPONENT, 0, 1), make(Phi.VALUE, 1, 0)) \
        == make(Phi.FULL_NET, 1, 1)
    # when the recovery needs eps, the meet picks it up
    assert loc.combine(make(Phi.GERM_COMPONENT, 1, 0), make(Phi.VALUE, 0, 0)) \
        == make(Phi.GERM, 1, 1)


def test_derivative_transform():
    for t in ALL:
        assert loc.derivative_transform(t, "geometric") == t
    assert loc.derivative_transform(make(Phi.VALUE_COMPONENT, 1, 0), "componentwise") \
        == make(Phi.GERM_COMPONENT, 1, 0)
    assert loc.derivative_transform(make(Phi.VALUE, 0, 0), "componentwise") \
        == make(Phi.GERM, 1, 0)
    assert loc.derivative_transform(loc.TOP, "componentwise") == loc.TOP
    # monotone in the order
    for a, b in product(ALL, ALL):
        if loc.stronger_eq(a, b):
            assert loc.stronger_eq(loc.derivative_transform(a, "componentwise"),
                                   loc.derivative_transform(b, "componentwise"))


def test_admissibility():
    assert loc.admissibility(make(Phi.STAR, 1, 1), "sheaf")
    assert not loc.admissibility(loc.BOTTOM, "sheaf")
    assert loc.admissibility(make(Phi.STAR, 1, 0), "sigma")
    assert loc.admissibility(loc.BOTTOM, "iota")
    assert loc.admissibility(loc.BOTTOM, "iota_theta")
    assert not loc.admissibility(loc.TOP, "iota")


def test_sheaf_admissible_set_is_the_listed_ten():
    expected = {
        make(Phi.GERM_COMPONENT, 1, 1),
        make(Phi.VALUE_COMPONENT, 1, 1),
        make(Phi.GERM_COMPONENT, 1, 0),
        make(Phi.VALUE_COMPONENT, 1, 0),
        make(Phi.VALUE_COMPONENT, 0, 1),
        make(Phi.VALUE_COMPONENT, 0, 0),
        make(Phi.STAR, 1, 1),
        make(Phi.STAR, 1, 0),
        make(Phi.STAR, 0, 1),
        make(Phi.STAR, 0, 0),
    }
    assert set(loc.sheaf_admissible_types()) == expected


def test_serialization_roundtrip():
    for t in ALL:
        assert loc.parse_type(loc.type_to_string(t)) == t
    assert loc.type_to_string(loc.TOP) == "star"
    assert loc.type_to_string(make(Phi.VALUE_COMPONENT, 1, 1)) == "(phi_eps(x), x, eps)"
    assert loc.parse_type("(x,eps)") == make(Phi.STAR, 1, 1)
    with pytest.raises(ValueError):
        loc.parse_type("(germ(phi), eps)")
    with pytest.raises(ValueError):
        loc.parse_type("bogus")
