"""Scalar coefficient expressions for affine parameter dependence.

Every affine term of a system operator carries one of these expressions.
They form a small closed grammar so that systems can be written to and
read from JSON without pickling Python callables.
"""

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np


class ThetaExpr:
    """Base class for coefficient expressions."""

    def __call__(self, mu):
        return self.evaluate(np.atleast_1d(np.asarray(mu, dtype=float)))

    def evaluate(self, mu):
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError

    def is_one(self):
        return False


@dataclass(frozen=True)
class One(ThetaExpr):
    def evaluate(self, mu):
        return 1.0

    def to_dict(self):
        return {'type': 'one'}

    def is_one(self):
        return True


@dataclass(frozen=True)
class Coordinate(ThetaExpr):
    index: int

    def evaluate(self, mu):
        if self.index >= len(mu):
            raise IndexError(f'coordinate {self.index} requested from a {len(mu)}-dimensional parameter')
        return float(mu[self.index])

    def to_dict(self):
        return {'type': 'coordinate', 'index': self.index}


@dataclass(frozen=True)
class Scale(ThetaExpr):
    factor: float
    inner: ThetaExpr

    def evaluate(self, mu):
        return self.factor * self.inner.evaluate(mu)

    def to_dict(self):
        return {'type': 'scale', 'factor': self.factor, 'inner': self.inner.to_dict()}


@dataclass(frozen=True)
class Power(ThetaExpr):
    inner: ThetaExpr
    exponent: int

    def __post_init__(self):
        if int(self.exponent) != self.exponent or self.exponent < 1:
            raise ValueError('exponent must be a positive integer')

    def evaluate(self, mu):
        return self.inner.evaluate(mu) ** self.exponent

    def to_dict(self):
        return {'type': 'power', 'exponent': self.exponent, 'inner': self.inner.to_dict()}


@dataclass(frozen=True)
class Product(ThetaExpr):
    factors: Tuple[ThetaExpr, ...]

    def evaluate(self, mu):
        value = 1.0
        for f in self.factors:
            value *= f.evaluate(mu)
        return value

    def to_dict(self):
        return {'type': 'product', 'factors': [f.to_dict() for f in self.factors]}


@dataclass(frozen=True)
class Sum(ThetaExpr):
    terms: Tuple[ThetaExpr, ...]

    def evaluate(self, mu):
        return float(sum(t.evaluate(mu) for t in self.terms))

    def to_dict(self):
        return {'type': 'sum', 'terms': [t.to_dict() for t in self.terms]}


@dataclass(frozen=True)
class AffineShift(ThetaExpr):
    """``shift + inner``, e.g. ``1 + mu``."""

    shift: float
    inner: ThetaExpr

    def evaluate(self, mu):
        return self.shift + self.inner.evaluate(mu)

    def to_dict(self):
        return {'type': 'affine_shift', 'shift': self.shift, 'inner': self.inner.to_dict()}


@dataclass(frozen=True)
class Callback(ThetaExpr):
    """Opaque in-process coefficient. Cannot be serialized."""

    func: Callable
    name: str = 'callback'

    def evaluate(self, mu):
        return float(self.func(mu))

    def to_dict(self):
        raise TypeError(f'callback coefficient {self.name!r} cannot be serialized')


def theta_from_dict(data):
    kind = data['type']
    if kind == 'one':
        return One()
    if kind == 'coordinate':
        return Coordinate(int(data['index']))
    if kind == 'scale':
        return Scale(float(data['factor']), theta_from_dict(data['inner']))
    if kind == 'power':
        return Power(theta_from_dict(data['inner']), int(data['exponent']))
    if kind == 'product':
        return Product(tuple(theta_from_dict(f) for f in data['factors']))
    if kind == 'sum':
        return Sum(tuple(theta_from_dict(t) for t in data['terms']))
    if kind == 'affine_shift':
        return AffineShift(float(data['shift']), theta_from_dict(data['inner']))
    raise ValueError(f'unknown coefficient expression type {kind!r}')
