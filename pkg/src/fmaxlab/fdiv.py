"""f-divergences on finite supports.

Each divergence is a convex generator ``f`` with ``f(1) = 0`` together with its
convex conjugate ``f*``, the conjugate's effective domain, and the pointwise
maximiser ``T*(u) = f'(u)`` of the variational bound, written as a function of
the density ratio ``u = p/q``.

Conventions
-----------
``D_f(P || Q) = sum_x q(x) f(p(x) / q(x))`` with natural logarithms.

* ``ReverseKL``: ``f(u) = -log u`` so ``D_f(P || Q) = KL(Q || P)``.
* ``ForwardKL``: ``f(u) = u log u`` so ``D_f(P || Q) = KL(P || Q)``.
* ``JensenShannon``: ``f(u) = (u log u - (u + 1) log((u + 1) / 2)) / 2`` so
  ``D_f(P || Q) = KL(P || M) / 2 + KL(Q || M) / 2`` with ``M = (P + Q) / 2``.
  Its maximum is ``log 2`` (no factor-2 rescaling).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .errors import AbsoluteContinuityViolation, DomainViolation

LOG2 = float(np.log(2.0))
RATIO_CLAMP = (1e-12, 1e12)
JS_CONSTANT = LOG2
"""Maximum of the Jensen-Shannon divergence under the convention used here."""


class DivergenceName(str, Enum):
    REVERSE_KL = "ReverseKL"
    FORWARD_KL = "ForwardKL"
    JENSEN_SHANNON = "JensenShannon"


def _softplus(x):
    return np.logaddexp(0.0, x)


def _xlogx(u):
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(u > 0, u * np.log(np.where(u > 0, u, 1.0)), 0.0)


@dataclass(frozen=True)
class FDivergence:
    """Generator/conjugate pair with domain metadata.

    ``conjugate_domain`` is the open interval ``(lo, hi)`` on which ``f*`` is
    finite. ``f_at_zero`` and ``recession`` are ``f(0+)`` and
    ``lim_{u -> inf} f(u) / u``; they decide what happens on support
    mismatches.
    """

    name: DivergenceName
    generator: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    conjugate_unchecked: Callable[[np.ndarray], np.ndarray]
    conjugate_domain: tuple[float, float]
    optimal_t: Callable[[np.ndarray], np.ndarray]
    t_from_logit: Callable[[np.ndarray], np.ndarray]
    output_activation: Callable[[np.ndarray], np.ndarray]
    f_at_zero: float
    recession: float

    def in_domain(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        lo, hi = self.conjugate_domain
        return (t > lo) & (t < hi) & np.isfinite(t)

    def conjugate(self, t):
        """``f*(t)``; raises :class:`DomainViolation` outside the domain."""
        t = np.asarray(t, dtype=float)
        if not np.all(self.in_domain(t)):
            bad = t[~self.in_domain(t)].ravel()[0]
            raise DomainViolation(
                f"{self.name.value}: t={bad!r} outside conjugate domain {self.conjugate_domain}"
            )
        return self.conjugate_unchecked(t)

    def __str__(self) -> str:
        return self.name.value


def _rkl_conj(t):
    return -1.0 - np.log(-t)


def _js_generator(u):
    u = np.asarray(u, dtype=float)
    return 0.5 * (_xlogx(u) - (u + 1.0) * np.log((u + 1.0) / 2.0))


def _js_conj(t):
    return -0.5 * np.log(2.0 - np.exp(2.0 * t))


REVERSE_KL = FDivergence(
    name=DivergenceName.REVERSE_KL,
    generator=lambda u: -np.log(u),
    derivative=lambda u: -1.0 / np.asarray(u, dtype=float),
    conjugate_unchecked=_rkl_conj,
    conjugate_domain=(-np.inf, 0.0),
    optimal_t=lambda u: -1.0 / np.asarray(u, dtype=float),
    t_from_logit=lambda ell: -np.exp(-np.asarray(ell, dtype=float)),
    output_activation=lambda x: -np.exp(np.asarray(x, dtype=float)),
    f_at_zero=np.inf,
    recession=0.0,
)

FORWARD_KL = FDivergence(
    name=DivergenceName.FORWARD_KL,
    generator=_xlogx,
    derivative=lambda u: 1.0 + np.log(u),
    conjugate_unchecked=lambda t: np.exp(np.asarray(t, dtype=float) - 1.0),
    conjugate_domain=(-np.inf, np.inf),
    optimal_t=lambda u: 1.0 + np.log(u),
    t_from_logit=lambda ell: 1.0 + np.asarray(ell, dtype=float),
    output_activation=lambda x: np.asarray(x, dtype=float),
    f_at_zero=0.0,
    recession=np.inf,
)

JENSEN_SHANNON = FDivergence(
    name=DivergenceName.JENSEN_SHANNON,
    generator=_js_generator,
    derivative=lambda u: 0.5 * np.log(2.0 * u / (u + 1.0)),
    conjugate_unchecked=_js_conj,
    conjugate_domain=(-np.inf, 0.5 * LOG2),
    optimal_t=lambda u: 0.5 * np.log(2.0 * u / (np.asarray(u, dtype=float) + 1.0)),
    # 0.5 * log(2 * sigmoid(ell)), stable for large |ell|
    t_from_logit=lambda ell: 0.5 * (LOG2 - _softplus(-np.asarray(ell, dtype=float))),
    output_activation=lambda x: 0.5 * (LOG2 - _softplus(-np.asarray(x, dtype=float))),
    f_at_zero=0.5 * LOG2,
    recession=0.5 * LOG2,
)

DIVERGENCES = {d.name.value: d for d in (REVERSE_KL, FORWARD_KL, JENSEN_SHANNON)}


def get_divergence(name: str | DivergenceName | FDivergence) -> FDivergence:
    if isinstance(name, FDivergence):
        return name
    key = name.value if isinstance(name, DivergenceName) else str(name)
    aliases = {"rkl": "ReverseKL", "fkl": "ForwardKL", "js": "JensenShannon"}
    key = aliases.get(key.lower(), key)
    try:
        return DIVERGENCES[key]
    except KeyError:
        raise ValueError(f"unknown divergence {name!r}; choose from {sorted(DIVERGENCES)}") from None


@dataclass(frozen=True)
class FiniteDistribution:
    mass: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=float).ravel()
        if m.size == 0:
            raise ValueError("empty distribution")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValueError("mass must be finite and nonnegative")
        if abs(m.sum() - 1.0) > 1e-12:
            raise ValueError(f"mass sums to {m.sum()!r}, not 1")
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)

    @property
    def support_size(self) -> int:
        return self.mass.size

    @classmethod
    def from_weights(cls, w) -> "FiniteDistribution":
        w = np.asarray(w, dtype=float).ravel()
        return cls(w / w.sum())


def _mass(x, tol: float = 1e-9) -> np.ndarray:
    if isinstance(x, FiniteDistribution):
        return x.mass
    if hasattr(x, "joint"):
        x = x.joint
    m = np.asarray(x, dtype=float).ravel()
    if np.any(m < 0) or abs(m.sum() - 1.0) > tol:
        raise ValueError(f"not a probability vector (sum={m.sum()!r})")
    return m


def _pair(p, q):
    p, q = _mass(p), _mass(q)
    if p.shape != q.shape:
        raise ValueError(f"support sizes differ: {p.size} vs {q.size}")
    return p, q


def eval_divergence(f, p, q, clamp: bool = False) -> float:
    """Exact ``D_f(p || q)`` on a shared finite support.

    Support mismatches are resolved with the limits ``f(0+)`` and
    ``lim f(u)/u``. When a mismatch makes the divergence infinite,
    :class:`AbsoluteContinuityViolation` is raised unless ``clamp`` is set, in
    which case density ratios are clamped to ``[1e-12, 1e12]`` and a finite
    value is returned.
    """
    f = get_divergence(f)
    p, q = _pair(p, q)
    both = (p > 0) & (q > 0)
    p_only = (p > 0) & (q == 0)
    q_only = (q > 0) & (p == 0)
    lo, hi = RATIO_CLAMP

    total = 0.0
    if np.any(both):
        u = p[both] / q[both]
        if clamp:
            u = np.clip(u, lo, hi)
        total += float(np.sum(q[both] * f.generator(u)))
    if np.any(q_only):
        if np.isfinite(f.f_at_zero):
            total += float(q[q_only].sum() * f.f_at_zero)
        elif clamp:
            total += float(np.sum(q[q_only] * f.generator(np.full(q_only.sum(), lo))))
        else:
            idx = int(np.flatnonzero(q_only)[0])
            raise AbsoluteContinuityViolation(
                f"{f}: p({idx}) = 0 < q({idx}); divergence is +inf"
            )
    if np.any(p_only):
        if np.isfinite(f.recession):
            total += float(p[p_only].sum() * f.recession)
        elif clamp:
            total += float(p[p_only].sum() * f.generator(hi) / hi)
        else:
            idx = int(np.flatnonzero(p_only)[0])
            raise AbsoluteContinuityViolation(
                f"{f}: q({idx}) = 0 < p({idx}); divergence is +inf"
            )
    return total


def conjugate_value(f, t):
    return get_divergence(f).conjugate(t)


def variational_bound(f, p, q, t_values) -> float:
    """``E_p[T] - E_q[f*(T)]`` for a tabulated critic ``T``."""
    f = get_divergence(f)
    p, q = _pair(p, q)
    t = np.asarray(t_values, dtype=float).ravel()
    if t.shape != p.shape:
        raise ValueError(f"need one t per support point ({p.size}), got {t.size}")
    return float(np.dot(p, t) - np.dot(q, f.conjugate(t)))


def optimal_critic(f, p, q) -> np.ndarray:
    """Pointwise maximiser ``T*(x) = f'(p(x)/q(x))`` of the variational bound.

    Requires ``p`` and ``q`` to be strictly positive.
    """
    f = get_divergence(f)
    p, q = _pair(p, q)
    if np.any(p <= 0) or np.any(q <= 0):
        raise AbsoluteContinuityViolation("optimal critic needs full support on both sides")
    return f.optimal_t(p / q)


def forward_kl_degeneracy_check(p, q) -> float:
    """Policy objective of forward-KL f-MAX under its optimal critic.

    With ``T* = 1 + log(p/q)`` and ``f*(t) = exp(t - 1)`` the objective
    ``E_q[f*(T*)] = sum_x p(x)`` is identically one, whatever ``q`` is.
    """
    p, q = _pair(p, q)
    if np.any((p > 0) & (q == 0)):
        raise AbsoluteContinuityViolation("forward KL: p has mass where q is zero")
    keep = q > 0
    with np.errstate(divide="ignore"):
        t_star = FORWARD_KL.optimal_t(p[keep] / q[keep])
    return float(np.dot(q[keep], FORWARD_KL.conjugate_unchecked(t_star)))


def kl(p, q) -> float:
    """``KL(p || q)`` by direct summation."""
    return eval_divergence(FORWARD_KL, p, q)


def js(p, q) -> float:
    return eval_divergence(JENSEN_SHANNON, p, q)
