"""Distance-weighted L_ell penalties on the hidden update matrix.

The coefficient matrix holds c[j, k] = f(d(row_j, col_k)); the penalty is
sum_jk c[j, k] * |w[j, k]|^ell. A shuffled control permutes the coefficient
entries once, destroying the geometry while keeping their distribution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import geometry, inhibitors
from .geometry import Embedding
from .inhibitors import InhibitorSpec

MODULI = "moduli"
SHUFFLED = "shuffled"
UNIFORM = "uniform"

SOURCES = (MODULI, SHUFFLED, UNIFORM)


@dataclass(frozen=True)
class CoefficientMatrix:
    """Immutable grid of regularizing coefficients plus the exponent ell."""

    values: np.ndarray  # (n_out, n_in), float64
    source: str
    ell: float = 1.0

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValueError("coefficient matrix must be 2-D")
        if not np.all(np.isfinite(vals)):
            raise ValueError("coefficient matrix has non-finite entries")
        if self.source not in SOURCES:
            raise ValueError(f"unknown coefficient source {self.source!r}")
        if not self.ell >= 1.0:
            raise ValueError("exponent ell must be >= 1")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> tuple:
        return self.values.shape


def build_coefficients(rows: Embedding, cols: Embedding,
                       inhibitor: InhibitorSpec, ell: float = 1.0
                       ) -> CoefficientMatrix:
    """Coefficients c[j, k] = f(d(row_j, col_k)) for the given inhibitor."""
    dists = geometry.pairwise_distances(rows, cols)
    return CoefficientMatrix(inhibitors.evaluate(inhibitor, dists), MODULI, ell)


def uniform_coefficients(n_out: int, n_in: int, c: float = 1.0,
                         ell: float = 1.0) -> CoefficientMatrix:
    """All-equal coefficients: the plain L1 (or L_ell) penalty."""
    return CoefficientMatrix(np.full((n_out, n_in), float(c)), UNIFORM, ell)


def _check_shapes(C: CoefficientMatrix, W: np.ndarray) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.shape != C.values.shape:
        raise ValueError(f"weight shape {W.shape} vs coefficients {C.values.shape}")
    return W


def penalty(C: CoefficientMatrix, W) -> float:
    """sum_jk C[j, k] * |W[j, k]|^ell."""
    W = _check_shapes(C, W)
    return float(np.sum(C.values * np.abs(W)**C.ell))


def penalty_weight_grad(C: CoefficientMatrix, W) -> np.ndarray:
    """Entrywise ell * C * |w|^(ell-1) * sign(w); subgradient 0 at w = 0."""
    W = _check_shapes(C, W)
    # sign(0) == 0 makes the ell == 1 case (|0|^0 == 1) come out to 0.
    return C.ell * C.values * np.abs(W)**(C.ell - 1.0) * np.sign(W)


def penalty_embedding_grad(rows: Embedding, cols: Embedding,
                           inhibitor: InhibitorSpec, W, ell: float = 1.0):
    """Gradient of the penalty with respect to the embedded points.

    Returns (row_grads, col_grads). When rows is cols (the usual square
    hidden-matrix case) each point's role as row and as column both
    contribute; the combined gradient comes back in row_grads and
    col_grads is None.

    Each term is f'(d(p_j, q_k)) * grad_p d(p_j, q_k) * |w_jk|^ell, in the
    same chart as distance_gradient.
    """
    same = rows is cols
    geometry._require_same_manifold(rows.manifold, cols.manifold)
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (len(rows), len(cols)):
        raise ValueError(f"weight shape {W.shape} vs ({len(rows)}, {len(cols)})")
    m = rows.manifold
    dists = geometry.pairwise_distances(rows, cols)
    slopes = inhibitors.derivative(inhibitor, dists) * np.abs(W)**ell
    row_grads = np.zeros_like(rows.points)
    col_grads = None if same else np.zeros_like(cols.points)
    for j in range(len(rows)):
        for k in range(len(cols)):
            if slopes[j, k] == 0.0:
                continue
            g = geometry.distance_gradient(m, rows.points[j], cols.points[k])
            row_grads[j] += slopes[j, k] * g
            g_col = geometry.distance_gradient(m, cols.points[k], rows.points[j])
            if same:
                row_grads[k] += slopes[j, k] * g_col
            else:
                col_grads[k] += slopes[j, k] * g_col
    return row_grads, col_grads


def shuffle(C: CoefficientMatrix, seed) -> CoefficientMatrix:
    """Seeded uniformly-random permutation of all entries (diagonal included)."""
    if C.source != MODULI:
        raise ValueError("only moduli coefficient matrices can be shuffled")
    rng = np.random.default_rng(seed)
    flat = rng.permutation(C.values.ravel())
    return CoefficientMatrix(flat.reshape(C.values.shape), SHUFFLED, C.ell)


# ---------------------------------------------------------------------------
# Export: flat little-endian float64 binary plus a JSON sidecar

def save_coefficients(C: CoefficientMatrix, path_prefix) -> tuple:
    """Write <prefix>.bin (row-major float64 LE) and <prefix>.json."""
    bin_path = f"{path_prefix}.bin"
    meta_path = f"{path_prefix}.json"
    with open(bin_path, "wb") as fh:
        fh.write(np.ascontiguousarray(C.values, dtype="<f8").tobytes())
    with open(meta_path, "w") as fh:
        json.dump({"rows": C.shape[0], "cols": C.shape[1],
                   "source": C.source, "ell": C.ell}, fh)
    return bin_path, meta_path


def load_coefficients(path_prefix) -> CoefficientMatrix:
    with open(f"{path_prefix}.json") as fh:
        meta = json.load(fh)
    raw = np.fromfile(f"{path_prefix}.bin", dtype="<f8")
    values = raw.reshape(meta["rows"], meta["cols"]).astype(np.float64)
    return CoefficientMatrix(values, meta["source"], meta["ell"])
