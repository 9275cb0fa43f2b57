"""Supported embedding spaces: uniform sampling, geodesic distance, gradients.

Six spaces are supported. The circle and sphere are round (radius ``scale``),
the 2-torus, Klein bottle and 6-torus are flat quotients of a cube of side
``scale``, and Euclidean space is plain R^k. Points are stored in a fixed
coordinate chart per space:

* circle       -- angle theta, shape (1,)
* sphere       -- ambient 3-vector of norm ``scale``, shape (3,)
* torus2/klein -- fundamental-domain coordinates in [0, scale)^2
* torus6       -- fundamental-domain coordinates in [0, scale)^6
* euclidean    -- free vector, shape (ambient_dim,)
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

CIRCLE = "circle"
SPHERE = "sphere"
TORUS2 = "torus2"
KLEIN_BOTTLE = "klein_bottle"
TORUS6 = "torus6"
EUCLIDEAN = "euclidean"

KINDS = (CIRCLE, SPHERE, TORUS2, KLEIN_BOTTLE, TORUS6, EUCLIDEAN)

# Flat quotients where distance is computed over a finite set of lifts.
_WRAPPED = (TORUS2, KLEIN_BOTTLE, TORUS6)

DEFAULT_RADIUS = 5.0
DEFAULT_PERIOD = 10.0
DEFAULT_BOX_SIDE = 10.0


@dataclass(frozen=True)
class ManifoldSpec:
    """One of the supported spaces with its scale constant fixed."""

    kind: str
    scale: float = DEFAULT_PERIOD
    ambient_dim: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if not self.scale > 0:
            raise ValueError("manifold scale must be positive")
        if self.kind == EUCLIDEAN:
            if self.ambient_dim is None or self.ambient_dim < 1:
                raise ValueError("euclidean manifold needs ambient_dim >= 1")
        elif self.ambient_dim is not None:
            object.__setattr__(self, "ambient_dim", None)

    @classmethod
    def circle(cls, radius: float = DEFAULT_RADIUS) -> "ManifoldSpec":
        return cls(CIRCLE, radius)

    @classmethod
    def sphere(cls, radius: float = DEFAULT_RADIUS) -> "ManifoldSpec":
        return cls(SPHERE, radius)

    @classmethod
    def torus2(cls, period: float = DEFAULT_PERIOD) -> "ManifoldSpec":
        return cls(TORUS2, period)

    @classmethod
    def klein_bottle(cls, period: float = DEFAULT_PERIOD) -> "ManifoldSpec":
        return cls(KLEIN_BOTTLE, period)

    @classmethod
    def torus6(cls, period: float = DEFAULT_PERIOD) -> "ManifoldSpec":
        return cls(TORUS6, period)

    @classmethod
    def euclidean(cls, ambient_dim: int) -> "ManifoldSpec":
        return cls(EUCLIDEAN, DEFAULT_BOX_SIDE, ambient_dim)

    @property
    def coord_dim(self) -> int:
        """Dimension of the stored coordinate chart (3 for the sphere)."""
        return {CIRCLE: 1, SPHERE: 3, TORUS2: 2, KLEIN_BOTTLE: 2, TORUS6: 6,
                EUCLIDEAN: self.ambient_dim or 0}[self.kind]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scale": self.scale,
                "ambient_dim": self.ambient_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "ManifoldSpec":
        return cls(d["kind"], d["scale"], d.get("ambient_dim"))


@dataclass
class Embedding:
    """An ordered list of points on a manifold, one per hidden neuron."""

    manifold: ManifoldSpec
    points: np.ndarray  # (n, coord_dim), float64
    trainable: bool = False

    def __post_init__(self):
        pts = np.ascontiguousarray(np.atleast_2d(self.points), dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != self.manifold.coord_dim:
            raise ValueError(
                f"points must have shape (n, {self.manifold.coord_dim}), "
                f"got {pts.shape}")
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]


def _require_same_manifold(a: ManifoldSpec, b: ManifoldSpec) -> None:
    if a != b:
        raise ValueError(f"manifold mismatch: {a} vs {b}")


def _as_point(manifold: ManifoldSpec, p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if p.shape[0] != manifold.coord_dim:
        raise ValueError(
            f"point of dim {p.shape[0]} on manifold of dim {manifold.coord_dim}")
    if not np.all(np.isfinite(p)):
        raise ValueError("non-finite point coordinates")
    return p


def validate_point(manifold: ManifoldSpec, p, rel_tol: float = 1e-9) -> None:
    """Raise ValueError unless p satisfies the chart invariants."""
    p = _as_point(manifold, p)
    if manifold.kind == SPHERE:
        r = float(np.linalg.norm(p))
        if abs(r - manifold.scale) > rel_tol * manifold.scale:
            raise ValueError(f"sphere point has norm {r}, expected {manifold.scale}")
    elif manifold.kind in _WRAPPED:
        if np.any(p < 0) or np.any(p >= manifold.scale):
            raise ValueError("torus/klein point outside fundamental domain")


# ---------------------------------------------------------------------------
# Sampling

def sample_uniform(manifold: ManifoldSpec, n: int, seed,
                   box_side: float = DEFAULT_BOX_SIDE) -> Embedding:
    """Draw n i.i.d. points uniform w.r.t. the volume measure of the space.

    Sphere sampling is area-uniform (uniform z and longitude). Euclidean
    space is unbounded, so points are drawn from the box [0, box_side]^k.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    kind, scale = manifold.kind, manifold.scale
    if kind == CIRCLE:
        pts = rng.uniform(0.0, 2.0 * np.pi, size=(n, 1))
    elif kind == SPHERE:
        z = rng.uniform(-1.0, 1.0, size=n)
        phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
        s = np.sqrt(1.0 - z * z)
        pts = scale * np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)
    elif kind in _WRAPPED:
        pts = rng.uniform(0.0, scale, size=(n, manifold.coord_dim))
    elif kind == EUCLIDEAN:
        if not box_side > 0:
            raise ValueError("euclidean sampling box side must be positive")
        pts = rng.uniform(0.0, box_side, size=(n, manifold.coord_dim))
    else:  # pragma: no cover
        raise ValueError(kind)
    return Embedding(manifold, pts)


# ---------------------------------------------------------------------------
# Canonicalization / retraction

def retract(manifold: ManifoldSpec, raw) -> np.ndarray:
    """Map an arbitrary chart vector back onto the manifold.

    Circle: angle mod 2*pi. Sphere: rescale to the radius. Tori: reduce each
    coordinate mod the period. Klein bottle: reduce x counting seam
    crossings; an odd number of crossings reflects y -> period - y before y
    is reduced. Euclidean: identity.
    """
    p = _as_point(manifold, raw)
    kind, scale = manifold.kind, manifold.scale
    if kind == CIRCLE:
        return np.mod(p, 2.0 * np.pi)
    if kind == SPHERE:
        r = float(np.linalg.norm(p))
        if r < 1e-12:
            raise ValueError("cannot retract a near-zero vector to the sphere")
        return p * (scale / r)
    if kind in (TORUS2, TORUS6):
        return np.mod(p, scale)
    if kind == KLEIN_BOTTLE:
        crossings = np.floor(p[0] / scale)
        x = p[0] - crossings * scale
        y = scale - p[1] if int(crossings) % 2 != 0 else p[1]
        return np.array([x, np.mod(y, scale)])
    return p.copy()  # euclidean


def canonicalize_points(manifold: ManifoldSpec, pts: np.ndarray) -> np.ndarray:
    """Vectorized retract over an (n, coord_dim) array."""
    pts = np.asarray(pts, dtype=np.float64)
    kind, scale = manifold.kind, manifold.scale
    if kind == CIRCLE:
        return np.mod(pts, 2.0 * np.pi)
    if kind == SPHERE:
        norms = np.linalg.norm(pts, axis=1, keepdims=True)
        if np.any(norms < 1e-12):
            raise ValueError("cannot retract a near-zero vector to the sphere")
        return pts * (scale / norms)
    if kind in (TORUS2, TORUS6):
        return np.mod(pts, scale)
    if kind == KLEIN_BOTTLE:
        crossings = np.floor(pts[:, 0] / scale)
        x = pts[:, 0] - crossings * scale
        odd = np.mod(crossings, 2.0) != 0.0
        y = np.mod(np.where(odd, scale - pts[:, 1], pts[:, 1]), scale)
        return np.stack([x, y], axis=1)
    return pts.copy()  # euclidean


def _klein_sq_candidates(px, py, qx, qy, s: float) -> np.ndarray:
    """Squared distances to the nine lifts g^a t^b(q), a,b in {-1,0,1}.

    t is the vertical translation (x, y) -> (x, y + s); g is the glide
    (x, y) -> (x + s, s - y). These nine lifts realize the quotient
    distance for canonicalized points because the fundamental domain has
    side s. Stacked in lexicographic (a, b) order along the last axis so a
    first-wins argmin gives a deterministic cut-locus tie-break. The offset
    arithmetic is arranged so that swapping p and q reproduces the same
    candidate values bitwise (x offsets negate exactly; glide y offsets use
    the commutative sum py + qy), keeping d(p, q) == d(q, p) exact.
    """
    dx0 = px - qx
    dy0 = py - qy
    sy = py + qy
    cands = []
    for a in (-1.0, 0.0, 1.0):
        for b in (-1.0, 0.0, 1.0):
            if a == 0.0:
                dx, dy = dx0, dy0 - s * b
            else:
                dx, dy = dx0 - s * a, sy - s * (1.0 - b)
            cands.append(dx * dx + dy * dy)
    return np.stack(cands, axis=-1)


def _klein_offsets(p: np.ndarray, q: np.ndarray, s: float) -> np.ndarray:
    """(9, 2) offset vectors p - lift(q) in the same (a, b) order."""
    out = np.empty((9, 2))
    i = 0
    for a in (-1.0, 0.0, 1.0):
        for b in (-1.0, 0.0, 1.0):
            if a == 0.0:
                out[i] = (p[0] - q[0], (p[1] - q[1]) - s * b)
            else:
                out[i] = (p[0] - q[0] - s * a, (p[1] + q[1]) - s * (1.0 - b))
            i += 1
    return out


def _torus_shift_combos(dim: int) -> np.ndarray:
    """Lattice shift multipliers {-1,0,1}^dim in lexicographic order."""
    grids = np.meshgrid(*([np.array([-1.0, 0.0, 1.0])] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)  # (3^dim, dim)


def _wrap_abs(delta, period: float) -> np.ndarray:
    """Per-coordinate wrapped magnitude min(|delta|, period - |delta|).

    Computed from |delta| alone so the value is bitwise identical under
    argument swap (|delta| negates exactly).
    """
    a = np.abs(delta)
    return np.minimum(a, period - a)


def _wrap_signed(delta, period: float) -> np.ndarray:
    """Per-coordinate wrapped difference in [-period/2, period/2].

    Among tied lifts (|delta| exactly period/2) the positive representative
    is chosen, matching the lexicographic shift-index tie-break.
    """
    a = np.abs(delta)
    far = a > period / 2.0
    wrapped = np.where(far, -(np.sign(delta) * (period - a)), delta)
    return np.where(a == period / 2.0, period / 2.0, wrapped)


def geodesic_distance(manifold: ManifoldSpec, p, q) -> float:
    """Length of the shortest path between p and q.

    Inputs are canonicalized first, so lifts outside the fundamental domain
    (e.g. a Klein-bottle point written as (s, y)) are accepted.
    """
    p = retract(manifold, _as_point(manifold, p))
    q = retract(manifold, _as_point(manifold, q))
    kind, scale = manifold.kind, manifold.scale
    if kind == CIRCLE:
        return scale * float(_wrap_abs(p[0] - q[0], 2.0 * np.pi))
    if kind == SPHERE:
        # atan2(|pxq|, p.q) is exact at coincident points and accurate near
        # the antipode, unlike arccos of a clipped cosine.
        pn, qn = p / np.linalg.norm(p), q / np.linalg.norm(q)
        sine = np.linalg.norm(np.cross(pn, qn))
        return scale * float(np.arctan2(sine, np.dot(pn, qn)))
    if kind in (TORUS2, TORUS6):
        return float(np.linalg.norm(_wrap_abs(p - q, scale)))
    if kind == KLEIN_BOTTLE:
        sq = _klein_sq_candidates(p[0], p[1], q[0], q[1], scale)
        return float(np.sqrt(np.min(sq)))
    return float(np.linalg.norm(p - q))  # euclidean


def lift_distances(manifold: ManifoldSpec, p, q) -> np.ndarray:
    """Sorted distances to all enumerated lifts of q (best first).

    The gap between the first two entries measures how far (p, q) is from
    the cut locus; Euclidean space has a single entry.
    """
    p = retract(manifold, _as_point(manifold, p))
    q = retract(manifold, _as_point(manifold, q))
    kind, scale = manifold.kind, manifold.scale
    if kind == CIRCLE:
        dtheta = float(_wrap_abs(p[0] - q[0], 2.0 * np.pi))
        return np.sort(scale * np.array([dtheta, 2.0 * np.pi - dtheta]))
    if kind == SPHERE:
        d = geodesic_distance(manifold, p, q)
        return np.sort(np.array([d, 2.0 * np.pi * scale - d]))
    if kind in (TORUS2, TORUS6):
        shifts = _torus_shift_combos(manifold.coord_dim) * scale
        return np.sort(np.linalg.norm((p - q)[None, :] - shifts, axis=1))
    if kind == KLEIN_BOTTLE:
        sq = _klein_sq_candidates(p[0], p[1], q[0], q[1], scale)
        return np.sort(np.sqrt(sq))
    return np.array([float(np.linalg.norm(p - q))])


def distance_gradient(manifold: ManifoldSpec, p, q, return_flag: bool = False):
    """Gradient of d(., q) at p in p's chart, along the minimizing lift.

    Returns the zero vector when p == q (a valid subgradient) and for
    antipodal sphere points, where the direction is degenerate; pass
    return_flag=True to also get a degeneracy indicator. Sphere gradients
    are ambient 3-vectors projected onto the tangent plane at p.
    """
    p = retract(manifold, _as_point(manifold, p))
    q = retract(manifold, _as_point(manifold, q))
    kind, scale = manifold.kind, manifold.scale
    grad = np.zeros_like(p)
    degenerate = False
    if kind == CIRCLE:
        dw = float(_wrap_signed(p[0] - q[0], 2.0 * np.pi))
        if dw != 0.0:
            grad[0] = scale * np.sign(dw)
        else:
            degenerate = True
    elif kind == SPHERE:
        np_norm, nq_norm = np.linalg.norm(p), np.linalg.norm(q)
        u = float(np.clip(np.dot(p, q) / (np_norm * nq_norm), -1.0, 1.0))
        if u >= 1.0 - 1e-14 or u <= -1.0 + 1e-14:
            degenerate = True  # coincident or antipodal
        else:
            du = q / (np_norm * nq_norm) - u * p / np_norm**2
            grad = -scale / np.sqrt(1.0 - u * u) * du
    elif kind in (TORUS2, TORUS6):
        delta = _wrap_signed(p - q, scale)
        norm = np.linalg.norm(delta)
        if norm > 0.0:
            grad = delta / norm
        else:
            degenerate = True
    elif kind == KLEIN_BOTTLE:
        offsets = _klein_offsets(p, q, scale)
        norms = np.linalg.norm(offsets, axis=1)
        best = int(np.argmin(norms))  # first minimum: lex smallest (a, b)
        if norms[best] > 0.0:
            grad = offsets[best] / norms[best]
        else:
            degenerate = True
    else:  # euclidean
        delta = p - q
        norm = np.linalg.norm(delta)
        if norm > 0.0:
            grad = delta / norm
        else:
            degenerate = True
    if return_flag:
        return grad, degenerate
    return grad


# ---------------------------------------------------------------------------
# Pairwise distances (vectorized per manifold)

def pairwise_distances(rows: Embedding, cols: Embedding) -> np.ndarray:
    """Matrix D with D[j, k] = d(rows.points[j], cols.points[k])."""
    _require_same_manifold(rows.manifold, cols.manifold)
    m = rows.manifold
    P = canonicalize_points(m, rows.points)
    Q = P if cols.points is rows.points else canonicalize_points(m, cols.points)
    kind, scale = m.kind, m.scale
    if kind == CIRCLE:
        return scale * _wrap_abs(P[:, 0, None] - Q[None, :, 0], 2.0 * np.pi)
    if kind == SPHERE:
        Pn = P / np.linalg.norm(P, axis=1, keepdims=True)
        Qn = Q / np.linalg.norm(Q, axis=1, keepdims=True)
        u = np.einsum("ik,jk->ij", Pn, Qn)
        sine = np.linalg.norm(np.cross(Pn[:, None, :], Qn[None, :, :]), axis=2)
        return scale * np.arctan2(sine, u)
    if kind in (TORUS2, TORUS6):
        delta = _wrap_abs(P[:, None, :] - Q[None, :, :], scale)
        return np.linalg.norm(delta, axis=2)
    if kind == KLEIN_BOTTLE:
        sq = _klein_sq_candidates(P[:, None, 0], P[:, None, 1],
                                  Q[None, :, 0], Q[None, :, 1], scale)
        return np.sqrt(np.min(sq, axis=-1))
    # euclidean
    delta = P[:, None, :] - Q[None, :, :]
    return np.linalg.norm(delta, axis=2)


# ---------------------------------------------------------------------------
# Serialization

def save_embedding(embedding: Embedding, path) -> None:
    """Write an embedding as JSON; floats keep full 17-digit precision."""
    payload = {
        "manifold": embedding.manifold.to_dict(),
        "points": [[float(x) for x in row] for row in embedding.points],
        "trainable": embedding.trainable,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_embedding(path) -> Embedding:
    with open(path) as fh:
        payload = json.load(fh)
    return Embedding(
        ManifoldSpec.from_dict(payload["manifold"]),
        np.array(payload["points"], dtype=np.float64),
        bool(payload.get("trainable", False)),
    )
