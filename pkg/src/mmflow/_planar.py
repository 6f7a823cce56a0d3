"""Planar cell geometry and integration of exp(-u) for max-affine u in 2D.

Cells are convex polygons obtained by clipping a square box with the
halfplanes ``x.(y_i - y_j) >= v_i - v_j``. Every polygon edge carries a
label: the index of the neighbouring piece, or -1 for the box boundary.
"""

from __future__ import annotations

import math

import numpy as np

BOX = -1
MAX_RANGE = 6.0      # max spread of the exponent over one triangle
_TERMS = 40          # series length; |z - mean| <= 4 leaves < 1e-20 relative
_INV_FACT = np.array([1.0 / math.factorial(m) for m in range(_TERMS + 4)])
NEGLIGIBLE = 1e-18   # relative to the certified lower bound on Z


def box(R):
    pts = [np.array(p, float) for p in ((-R, -R), (R, -R), (R, R), (-R, R))]
    return pts, [BOX] * 4


def clip(poly, labels, a, c, label):
    """Intersect a convex polygon with {x : a.x >= c}."""
    out_p, out_l = [], []
    n = len(poly)
    if n == 0:
        return out_p, out_l
    d = [float(a @ p) - c for p in poly]
    for k in range(n):
        P, Q = poly[k], poly[(k + 1) % n]
        dP, dQ = d[k], d[(k + 1) % n]
        if dP >= 0:
            out_p.append(P)
            out_l.append(labels[k])
            if dQ < 0:
                out_p.append(P + (dP / (dP - dQ)) * (Q - P))
                out_l.append(label)
        elif dQ >= 0:
            out_p.append(P + (dP / (dP - dQ)) * (Q - P))
            out_l.append(labels[k])
    if len(out_p) < 3:
        return [], []
    return out_p, out_l


def area(poly):
    if len(poly) < 3:
        return 0.0
    p = np.asarray(poly)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def vertex_radius(sites, offsets):
    """Bound on |x| over all points where two or three pieces tie."""
    k = len(sites)
    r = 0.0
    if k < 2:
        return r
    i, j = np.triu_indices(k, 1)
    dy = np.linalg.norm(sites[i] - sites[j], axis=1)
    r = float(np.max(np.abs(offsets[i] - offsets[j]) / dy))
    if k >= 3:
        a, b, c = np.array(list(_triples(k))).T
        A = np.stack([sites[a] - sites[b], sites[a] - sites[c]], axis=1)
        rhs = np.stack([offsets[a] - offsets[b], offsets[a] - offsets[c]], 1)
        det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
        ok = np.abs(det) > 1e-14
        if np.any(ok):
            x = np.linalg.solve(A[ok], rhs[ok][..., None])[..., 0]
            r = max(r, float(np.max(np.linalg.norm(x, axis=1))))
    return r


def _triples(k):
    for a in range(k):
        for b in range(a + 1, k):
            for c in range(b + 1, k):
                yield a, b, c


def clip_cells(sites, offsets, candidates, R):
    """Polygon and edge labels of each candidate's cell inside [-R, R]^2."""
    polys, labs = {}, {}
    for i in candidates:
        poly, lab = box(R)
        for j in candidates:
            if j == i:
                continue
            poly, lab = clip(poly, lab, sites[i] - sites[j],
                             offsets[i] - offsets[j], j)
            if not poly:
                break
        polys[i], labs[i] = poly, lab
    return polys, labs


def active_pieces(sites, offsets):
    """Boolean mask of pieces whose cell has positive area."""
    k = len(sites)
    if k == 1:
        return np.ones(1, bool), {}, {}, 1.0
    R = 2.0 * vertex_radius(sites, offsets) + 1.0
    cand = list(range(k))
    polys, labs = clip_cells(sites, offsets, cand, R)
    min_area = 1e-13 * R * R
    mask = np.array([area(polys[i]) > min_area for i in cand])
    if not mask.all():
        keep = [i for i in cand if mask[i]]
        polys, labs = clip_cells(sites, offsets, keep, R)
    else:
        keep = cand
    return mask, {i: polys[i] for i in keep}, {i: labs[i] for i in keep}, R


def hull_margin(points):
    """Distance from the origin to the boundary of conv(points), negative
    or zero when the origin is not interior."""
    from scipy.spatial import ConvexHull, QhullError

    if len(points) < points.shape[1] + 1:
        return 0.0
    try:
        hull = ConvexHull(points)
    except (QhullError, ValueError):
        return 0.0
    # equations: n.x + b <= 0 inside, |n| = 1
    return float(np.min(-hull.equations[:, -1]))


def _log_expm1_over(z):
    """log((e^z - 1)/z), stable for all real z."""
    z = np.asarray(z, float)
    out = np.zeros_like(z)
    small = np.abs(z) < 1e-8
    pos = (z > 0) & ~small
    neg = (z < 0) & ~small
    out[small] = 0.5 * z[small]
    zp = z[pos]
    out[pos] = zp + np.log(-np.expm1(-zp)) - np.log(zp)
    zn = z[neg]
    out[neg] = np.log(-np.expm1(zn)) - np.log(-zn)
    return out


def _subdivide(tris, g):
    m01 = 0.5 * (tris[:, 0] + tris[:, 1])
    m12 = 0.5 * (tris[:, 1] + tris[:, 2])
    m20 = 0.5 * (tris[:, 2] + tris[:, 0])
    h01 = 0.5 * (g[:, 0] + g[:, 1])
    h12 = 0.5 * (g[:, 1] + g[:, 2])
    h20 = 0.5 * (g[:, 2] + g[:, 0])
    p0, p1, p2 = tris[:, 0], tris[:, 1], tris[:, 2]
    t = np.concatenate([
        np.stack([p0, m01, m20], 1), np.stack([m01, p1, m12], 1),
        np.stack([m20, m12, p2], 1), np.stack([m01, m12, m20], 1)])
    gg = np.concatenate([
        np.stack([g[:, 0], h01, h20], 1), np.stack([h01, g[:, 1], h12], 1),
        np.stack([h20, h12, g[:, 2]], 1), np.stack([h01, h12, h20], 1)])
    return t, gg


def _exact(tris, g):
    """Integrals of exp(g) and x*exp(g) over each triangle, g linear with
    vertex values ``g``.

    Over the unit simplex these are the divided differences exp[g0,g1,g2]
    and exp[g0,g1,g2,gk]. With c the mean vertex value they are summed as
    e^c * sum_m h_m(g - c) / (m + n)!, h_m the complete homogeneous
    symmetric polynomials.
    """
    p0 = tris[:, 0]
    e1 = tris[:, 1] - p0
    e2 = tris[:, 2] - p0
    two_a = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    c = g.mean(1)
    z = g - c[:, None]
    # H[m] = h_m(z0, z1, z2) by adding one variable at a time
    H = np.zeros((_TERMS, len(g)))
    H[0] = 1.0
    for k in range(3):
        for m in range(1, _TERMS):
            H[m] = H[m] + z[:, k] * H[m - 1]
    scale = two_a * np.exp(c)
    mass = scale * (_INV_FACT[2:_TERMS + 2] @ H)
    mom = np.zeros((len(g), 2))
    for k in range(3):
        # h_m(z0, z1, z2, zk) = sum_j zk^j h_{m-j}(z0, z1, z2)
        H4 = H.copy()
        for m in range(1, _TERMS):
            H4[m] = H4[m] + z[:, k] * H4[m - 1]
        dk = scale * (_INV_FACT[3:_TERMS + 3] @ H4)
        mom += dk[:, None] * tris[:, k]
    return mass, mom


def integrate_cells(sites, offsets, polys, shift, z_low_rel):
    """Per-cell integrals of exp(-u + shift) and x*exp(-u + shift).

    Each cell is fanned into triangles, triangles are split until the
    exponent varies by at most MAX_RANGE, and each triangle is integrated
    in closed form (see ``_exact``). Triangles whose contribution is provably below
    NEGLIGIBLE * z_low_rel are dropped and their bound added to the error.
    """
    keys = list(polys)
    tri_list, owner = [], []
    for i in keys:
        poly = polys[i]
        for k in range(1, len(poly) - 1):
            tri_list.append((poly[0], poly[k], poly[k + 1]))
            owner.append(i)
    masses = {i: 0.0 for i in keys}
    moments = {i: np.zeros(2) for i in keys}
    if not tri_list:
        return masses, moments, 0.0
    tris = np.array(tri_list, float)
    owner = np.array(owner)
    g = -(np.einsum("tkd,td->tk", tris, sites[owner]) - offsets[owner, None])
    g = g + shift
    err = 0.0
    done_t, done_g, done_o = [], [], []
    while len(tris):
        e1 = tris[:, 1] - tris[:, 0]
        e2 = tris[:, 2] - tris[:, 0]
        area_t = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        gmax = g.max(1)
        with np.errstate(under="ignore"):
            bound = area_t * np.exp(gmax)
        tiny = bound <= NEGLIGIBLE * z_low_rel
        err += float(bound[tiny].sum())
        spread = gmax - g.min(1)
        fine = ~tiny & (spread <= MAX_RANGE)
        done_t.append(tris[fine])
        done_g.append(g[fine])
        done_o.append(owner[fine])
        split = ~tiny & ~fine
        if not np.any(split):
            break
        tris, g = _subdivide(tris[split], g[split])
        owner = np.tile(owner[split], 4)
    tris = np.concatenate(done_t)
    g = np.concatenate(done_g)
    owner = np.concatenate(done_o)
    if len(tris) == 0:
        return masses, moments, err
    fine_m, fine_mom = _exact(tris, g)
    for i in keys:
        sel = owner == i
        masses[i] = float(fine_m[sel].sum())
        moments[i] = fine_mom[sel].sum(0)
    return masses, moments, err


def edge_weights(sites, offsets, polys, labs, shift):
    """log of (integral of exp(-u + shift) along the shared edge) / |y_i - y_j|
    for every pair of adjacent cells i < j."""
    out = {}
    for i, poly in polys.items():
        n = len(poly)
        for k in range(n):
            j = labs[i][k]
            if j == BOX or j < i or j not in polys:
                continue
            P, Q = poly[k], poly[(k + 1) % n]
            length = float(np.linalg.norm(Q - P))
            if length == 0.0:
                continue
            gP = -(float(P @ sites[i]) - offsets[i]) + shift
            gQ = -(float(Q @ sites[i]) - offsets[i]) + shift
            lw = (math.log(length) + gP
                  + float(_log_expm1_over(np.array([gQ - gP]))[0])
                  - math.log(float(np.linalg.norm(sites[i] - sites[j]))))
            key = (i, j)
            out[key] = np.logaddexp(out[key], lw) if key in out else lw
    return out
