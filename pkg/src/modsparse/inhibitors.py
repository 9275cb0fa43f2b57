"""Inhibitor functions mapping geodesic distance to a regularizing coefficient.

Five profiles are provided. The difference-of-Gaussians and sinusoid are
bounded in [0, 2c]; the diffusion profile c*d^n grows monotonically; the
Ricker (Mexican-hat) wavelet has a negative lobe and is kept signed unless
clamp_nonnegative is set; the constant profile recovers a plain L1 penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DOG = "dog"
RICKER = "ricker"
DIFFUSION = "diffusion"
SINUSOID = "sinusoid"
CONSTANT = "constant"

KINDS = (DOG, RICKER, DIFFUSION, SINUSOID, CONSTANT)


@dataclass(frozen=True)
class InhibitorSpec:
    """Profile kind plus its scale parameters.

    Only the parameters relevant to ``kind`` are read: (c, sigma1, sigma2)
    for the difference of Gaussians, sigma for Ricker, (c, n_exp) for
    diffusion, (c, mu) for the sinusoid and c alone for the constant.
    """

    kind: str
    c: float = 1.0
    sigma1: float = 1.0
    sigma2: float = 5.0
    sigma: float = 1.0
    n_exp: float = 2.0
    mu: float = 2.0
    clamp_nonnegative: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown inhibitor kind {self.kind!r}")
        for name in ("c", "sigma1", "sigma2", "sigma", "n_exp", "mu"):
            if not getattr(self, name) > 0:
                raise ValueError(f"inhibitor parameter {name} must be positive")
        if self.kind == DOG and not self.sigma2 > self.sigma1:
            raise ValueError("difference of Gaussians needs sigma2 > sigma1")

    @classmethod
    def dog(cls, c: float = 10.0, sigma1: float = 1.0, sigma2: float = 5.0,
            **kw) -> "InhibitorSpec":
        return cls(DOG, c=c, sigma1=sigma1, sigma2=sigma2, **kw)

    @classmethod
    def ricker(cls, sigma: float = 1.0, **kw) -> "InhibitorSpec":
        return cls(RICKER, sigma=sigma, **kw)

    @classmethod
    def diffusion(cls, c: float = 1.0, n_exp: float = 2.0, **kw) -> "InhibitorSpec":
        return cls(DIFFUSION, c=c, n_exp=n_exp, **kw)

    @classmethod
    def sinusoid(cls, c: float = 10.0, mu: float = 2.0, **kw) -> "InhibitorSpec":
        return cls(SINUSOID, c=c, mu=mu, **kw)

    @classmethod
    def constant(cls, c: float = 1.0, **kw) -> "InhibitorSpec":
        return cls(CONSTANT, c=c, **kw)

    def to_dict(self) -> dict:
        """Only the parameters the kind actually reads."""
        relevant = {DOG: ("c", "sigma1", "sigma2", "clamp_nonnegative"),
                    RICKER: ("sigma", "clamp_nonnegative"),
                    DIFFUSION: ("c", "n_exp"),
                    SINUSOID: ("c", "mu"),
                    CONSTANT: ("c",)}[self.kind]
        out = {"kind": self.kind}
        out.update({name: getattr(self, name) for name in relevant})
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "InhibitorSpec":
        return cls(**d)


def _check_distance(d) -> np.ndarray:
    arr = np.asarray(d, dtype=np.float64)
    if np.any(arr < 0):
        raise ValueError("distances must be non-negative")
    return arr


def _ricker_amplitude(sigma: float) -> float:
    return 2.0 / math.sqrt(3.0 * sigma * math.sqrt(math.pi))


def evaluate(spec: InhibitorSpec, d):
    """Coefficient value f(d); accepts scalars or arrays of distances."""
    x = _check_distance(d)
    if spec.kind == DOG:
        out = spec.c - spec.c * (np.exp(-x**2 / spec.sigma2)
                                 - np.exp(-x**2 / spec.sigma1))
    elif spec.kind == RICKER:
        s2 = spec.sigma**2
        out = _ricker_amplitude(spec.sigma) * (1.0 - x**2 / s2) * np.exp(-x**2 / (2.0 * s2))
    elif spec.kind == DIFFUSION:
        out = spec.c * x**spec.n_exp
    elif spec.kind == SINUSOID:
        out = spec.c + spec.c * np.cos(spec.mu * x)
    else:  # constant
        out = np.full_like(x, spec.c)
    if spec.clamp_nonnegative:
        out = np.maximum(out, 0.0)
    if np.ndim(d) == 0:
        return float(out)
    return out


def derivative(spec: InhibitorSpec, d, return_flag: bool = False):
    """Analytic df/dd; accepts scalars or arrays.

    The diffusion profile with n_exp < 1 has an infinite slope at d = 0;
    there the subgradient 0 is returned and the degeneracy flag raised.
    """
    x = _check_distance(d)
    degenerate = False
    if spec.kind == DOG:
        out = 2.0 * spec.c * x * (np.exp(-x**2 / spec.sigma2) / spec.sigma2
                                  - np.exp(-x**2 / spec.sigma1) / spec.sigma1)
    elif spec.kind == RICKER:
        s2 = spec.sigma**2
        out = -_ricker_amplitude(spec.sigma) * (x / s2) * (3.0 - x**2 / s2) \
            * np.exp(-x**2 / (2.0 * s2))
    elif spec.kind == DIFFUSION:
        n = spec.n_exp
        with np.errstate(divide="ignore"):
            out = spec.c * n * x**(n - 1.0)  # 0**0 == 1 covers n == 1
        if n < 1.0:
            at_zero = (x == 0.0)
            if np.any(at_zero):
                degenerate = True
                out = np.where(at_zero, 0.0, out)
    elif spec.kind == SINUSOID:
        out = -spec.c * spec.mu * np.sin(spec.mu * x)
    else:  # constant
        out = np.zeros_like(x)
    if spec.clamp_nonnegative:
        raw = evaluate(InhibitorSpec(**{**spec.to_dict(), "clamp_nonnegative": False}), x)
        out = np.where(np.asarray(raw) > 0.0, out, 0.0)
    if np.ndim(d) == 0:
        out = float(out)
    if return_flag:
        return out, degenerate
    return out


def is_monotone(spec: InhibitorSpec) -> bool:
    """True for profiles that never decrease with distance.

    Trainable embeddings must reject these: the penalty would be minimized
    by collapsing every neuron onto a single point, reducing the whole
    scheme to a flat L1 penalty with coefficient f(0).
    """
    return spec.kind in (DIFFUSION, CONSTANT)
