"""Polynomial bulk/boundary nonlinearities and their Lipschitz truncations.

The truncation at level eps keeps f on [-M, M] with M = truncation_scale / eps
and continues it linearly with slope f'(+-M) outside, so the truncated
primitive is quadratic there. Both stay C1.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence, Union

import numpy as np
from numpy.polynomial import Polynomial

from ..core.exceptions import ParameterError
from ..core.models import PotentialSpec

log = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

DOUBLE_WELL = (0.0, -1.0, 0.0, 1.0)  # f(r) = r^3 - r
LINEAR = (0.0, 1.0)  # g(r) = r
BUILTIN_FLOOR = 0.25  # F(r) = r^4/4 - r^2/2 >= -1/4, G(r) = r^2/2 >= 0


class Nonlinearity:
    """One polynomial nonlinearity f with primitive F, F(0) = 0."""

    def __init__(self, coefficients: Sequence[float], truncation_scale: float = 1.0):
        coefficients = [float(c) for c in coefficients]
        if not coefficients or coefficients[0] != 0.0:
            raise ParameterError(f"nonlinearity must vanish at 0, got coefficients {coefficients}")
        self.f = Polynomial(coefficients).trim()
        self.df = self.f.deriv()
        self.d2f = self.df.deriv()
        self.F = self.f.integ()
        self.truncation_scale = truncation_scale
        self.floor = self._primitive_floor()

    def _primitive_floor(self) -> float:
        """max(0, -min F), the floor making F >= -floor."""
        degree = self.F.degree()
        lead = self.F.coef[-1]
        if degree % 2 == 1 or lead < 0:
            raise ParameterError("primitive is unbounded below; f must have odd degree and positive leading coefficient")
        critical = [r.real for r in self.f.roots() if abs(r.imag) < 1e-12]
        lowest = min([0.0] + [float(self.F(r)) for r in critical])
        return -lowest

    def level(self, eps: float) -> float:
        """Truncation radius M(eps)."""
        if eps <= 0:
            raise ParameterError(f"truncation level eps must be positive, got {eps}")
        return self.truncation_scale / eps

    def value(self, r: ArrayLike) -> ArrayLike:
        return self.f(r)

    def primitive(self, r: ArrayLike) -> ArrayLike:
        return self.F(r)

    def truncated(self, r: ArrayLike, eps: float) -> ArrayLike:
        m = self.level(eps)
        r = np.asarray(r, dtype=float)
        inner = self.f(np.clip(r, -m, m))
        excess = r - np.clip(r, -m, m)
        slope = np.where(r > 0, self.df(m), self.df(-m))
        out = inner + slope * excess
        return out if out.ndim else float(out)

    def truncated_primitive(self, r: ArrayLike, eps: float) -> ArrayLike:
        m = self.level(eps)
        r = np.asarray(r, dtype=float)
        edge = np.clip(r, -m, m)
        excess = r - edge
        out = self.F(edge) + self.f(edge) * excess + 0.5 * self.df(edge) * excess**2
        return out if out.ndim else float(out)

    def lipschitz(self, eps: float) -> float:
        """max |f'| over [-M(eps), M(eps)], the global Lipschitz constant of the truncation."""
        m = self.level(eps)
        candidates = [-m, m]
        if self.d2f.degree() > 0 or self.d2f.coef.any():
            candidates += [r.real for r in self.d2f.roots() if abs(r.imag) < 1e-12 and abs(r.real) <= m]
        return float(max(abs(self.df(c)) for c in candidates))


@dataclass(frozen=True)
class Potentials:
    """Bulk pair (f, F) and boundary pair (g, G) with the shared floor."""
    bulk: Nonlinearity
    boundary: Nonlinearity

    @property
    def floor(self) -> float:
        return max(self.bulk.floor, self.boundary.floor)


def _coefficients(kind: str, custom: object) -> Sequence[float]:
    if kind == "double_well":
        return DOUBLE_WELL
    if kind == "linear":
        return LINEAR
    return tuple(custom)  # type: ignore[call-overload]


@lru_cache(maxsize=8)
def build_potentials(spec: PotentialSpec) -> Potentials:
    bulk = Nonlinearity(_coefficients(spec.kind, spec.coefficients), spec.truncation_scale)
    boundary = Nonlinearity(_coefficients(spec.boundary_kind, spec.boundary_coefficients), spec.truncation_scale)
    log.debug(f"Built potentials {spec.kind}/{spec.boundary_kind} with floor {max(bulk.floor, boundary.floor)}")
    return Potentials(bulk, boundary)

# --- Named evaluations ---

def f(pot: Potentials, r: ArrayLike) -> ArrayLike:
    return pot.bulk.value(r)


def F(pot: Potentials, r: ArrayLike) -> ArrayLike:
    return pot.bulk.primitive(r)


def g(pot: Potentials, r: ArrayLike) -> ArrayLike:
    return pot.boundary.value(r)


def G(pot: Potentials, r: ArrayLike) -> ArrayLike:
    return pot.boundary.primitive(r)


def f_eps(pot: Potentials, r: ArrayLike, eps: float) -> ArrayLike:
    return pot.bulk.truncated(r, eps)


def g_eps(pot: Potentials, r: ArrayLike, eps: float) -> ArrayLike:
    return pot.boundary.truncated(r, eps)


def bulk_force(pot: Potentials, r: np.ndarray, eps: float) -> np.ndarray:
    """f_eps when eps > 0, the untruncated f when the regularization is switched off."""
    return pot.bulk.truncated(r, eps) if eps > 0 else pot.bulk.value(r)


def boundary_force(pot: Potentials, r: np.ndarray, eps: float) -> np.ndarray:
    return pot.boundary.truncated(r, eps) if eps > 0 else pot.boundary.value(r)


def bulk_energy_density(pot: Potentials, r: np.ndarray, eps: float) -> np.ndarray:
    return pot.bulk.truncated_primitive(r, eps) if eps > 0 else pot.bulk.primitive(r)


def boundary_energy_density(pot: Potentials, r: np.ndarray, eps: float) -> np.ndarray:
    return pot.boundary.truncated_primitive(r, eps) if eps > 0 else pot.boundary.primitive(r)


def truncation_gap(pot: Potentials, eps: float, radius: float = 2.0, samples: int = 2001) -> float:
    """sup over |r| <= radius of |f_eps(r) - f(r)|."""
    r = np.linspace(-radius, radius, samples)
    gap = np.abs(pot.bulk.truncated(r, eps) - pot.bulk.value(r))
    return float(np.max(gap))
