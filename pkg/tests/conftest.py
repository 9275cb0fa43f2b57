import numpy as np


def away_from_cut_loci(manifold, emb, min_dist=0.5, min_gap=1e-2):
    """True when all point pairs are separated and off the cut locus.

    The geodesic distance is not differentiable at cut-locus ties, so
    finite-difference oracles only apply when the best lift wins by a
    margin.
    """
    from modsparse.geometry import lift_distances
    n = len(emb)
    for j in range(n):
        for k in range(j + 1, n):
            lifts = lift_distances(manifold, emb.points[j], emb.points[k])
            if lifts[0] < min_dist:
                return False
            if lifts.size > 1 and lifts[1] - lifts[0] < min_gap:
                return False
    return True


def central_diff(f, x, h=1e-5):
    """Central finite differences of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def rel_err(a, b, floor=1e-10):
    """Norm-relative difference between two arrays (or scalars)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(float(np.linalg.norm(a.ravel())),
                float(np.linalg.norm(b.ravel())), floor)
    return float(np.linalg.norm((a - b).ravel())) / denom
