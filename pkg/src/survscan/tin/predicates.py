"""Robust 2D orientation and in-circle predicates.

Each predicate first evaluates the determinant in floating point and
accepts the sign when it clears Shewchuk's forward error bound. Otherwise
it recomputes exactly: every double is an integer over a power of two, so
scaling all inputs by the largest denominator turns the determinant into
Python integer arithmetic with no rounding at all.
"""

from __future__ import annotations

_EPS = 2.0 ** -53
CCW_ERRBOUND = (3.0 + 16.0 * _EPS) * _EPS
ICC_ERRBOUND = (10.0 + 96.0 * _EPS) * _EPS


def _as_ints(*vals):
    ratios = [float(v).as_integer_ratio() for v in vals]
    scale = max(d for _, d in ratios)
    return [n * (scale // d) for n, d in ratios]


def _sign(v) -> int:
    return (v > 0) - (v < 0)


def orient2d_exact(ax, ay, bx, by, cx, cy) -> int:
    ax, ay, bx, by, cx, cy = _as_ints(ax, ay, bx, by, cx, cy)
    return _sign((ax - cx) * (by - cy) - (ay - cy) * (bx - cx))


def orient2d(ax, ay, bx, by, cx, cy) -> int:
    """+1 if a, b, c turn counter-clockwise, -1 if clockwise, 0 if collinear."""
    detleft = (ax - cx) * (by - cy)
    detright = (ay - cy) * (bx - cx)
    det = detleft - detright
    if detleft > 0.0:
        if detright <= 0.0:
            return 1
        detsum = detleft + detright
    elif detleft < 0.0:
        if detright >= 0.0:
            return -1
        detsum = -detleft - detright
    else:
        if detright == 0.0:
            return orient2d_exact(ax, ay, bx, by, cx, cy)
        return -1 if detright > 0.0 else 1
    bound = CCW_ERRBOUND * detsum
    if det > bound:
        return 1
    if -det > bound:
        return -1
    return orient2d_exact(ax, ay, bx, by, cx, cy)


def incircle_exact(ax, ay, bx, by, cx, cy, dx, dy) -> int:
    ax, ay, bx, by, cx, cy, dx, dy = _as_ints(ax, ay, bx, by, cx, cy, dx, dy)
    adx, ady = ax - dx, ay - dy
    bdx, bdy = bx - dx, by - dy
    cdx, cdy = cx - dx, cy - dy
    alift = adx * adx + ady * ady
    blift = bdx * bdx + bdy * bdy
    clift = cdx * cdx + cdy * cdy
    det = (alift * (bdx * cdy - cdx * bdy)
           + blift * (cdx * ady - adx * cdy)
           + clift * (adx * bdy - bdx * ady))
    return _sign(det)


def incircle(ax, ay, bx, by, cx, cy, dx, dy) -> int:
    """+1 if d is inside the circle through ccw a, b, c; -1 outside; 0 on it."""
    adx, ady = ax - dx, ay - dy
    bdx, bdy = bx - dx, by - dy
    cdx, cdy = cx - dx, cy - dy
    bdxcdy = bdx * cdy
    cdxbdy = cdx * bdy
    alift = adx * adx + ady * ady
    cdxady = cdx * ady
    adxcdy = adx * cdy
    blift = bdx * bdx + bdy * bdy
    adxbdy = adx * bdy
    bdxady = bdx * ady
    clift = cdx * cdx + cdy * cdy
    det = (alift * (bdxcdy - cdxbdy)
           + blift * (cdxady - adxcdy)
           + clift * (adxbdy - bdxady))
    permanent = ((abs(bdxcdy) + abs(cdxbdy)) * alift
                 + (abs(cdxady) + abs(adxcdy)) * blift
                 + (abs(adxbdy) + abs(bdxady)) * clift)
    bound = ICC_ERRBOUND * permanent
    if det > bound:
        return 1
    if -det > bound:
        return -1
    return incircle_exact(ax, ay, bx, by, cx, cy, dx, dy)


def incircle_perturbed(xs, ys, a: int, b: int, c: int, d: int) -> int:
    """In-circle sign for vertex indices with cocircular ties broken.

    Ties are resolved as if each vertex were lowered on the lifting
    paraboloid by an infinitesimal that shrinks steeply with its index.
    The lowest-index vertex of a cocircular quadruple therefore dominates:
    it counts as inside the circle of the other three, and a cocircular
    quadrilateral is split along the diagonal through its lowest-index
    vertex. The result is never 0 for a non-degenerate triangle a, b, c.
    """
    s = incircle(xs[a], ys[a], xs[b], ys[b], xs[c], ys[c], xs[d], ys[d])
    if s:
        return s
    # Cofactors of the lifted column in the 4x4 lifting determinant.
    cof = {
        a: orient2d(xs[b], ys[b], xs[c], ys[c], xs[d], ys[d]),
        b: -orient2d(xs[a], ys[a], xs[c], ys[c], xs[d], ys[d]),
        c: orient2d(xs[a], ys[a], xs[b], ys[b], xs[d], ys[d]),
        d: -orient2d(xs[a], ys[a], xs[b], ys[b], xs[c], ys[c]),
    }
    for v in sorted(cof):
        if cof[v]:
            return -cof[v]
    return 0
