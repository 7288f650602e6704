"""
Weighting schemes over the (countable) index set of a measure family.

A scheme is a finite list of explicit (index, weight) entries plus an optional
geometric tail carrying the remaining mass. Every computation works on the
finite effective support obtained by truncating the tail.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
import numpy as np
from .shared import ValidationError, ScenarioError


logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-10


@dataclass(frozen=True)
class GeometricTail:
    """Weights T*(1-r)*r**(i-first_index) for i >= first_index, T the mass left over by the explicit entries."""
    ratio: float
    first_index: int

    def __post_init__(self):
        if not 0.0 < self.ratio < 1.0:
            raise ValidationError("geometric tail ratio must lie in (0, 1)")
        if int(self.first_index) != self.first_index:
            raise ValidationError("tail start must be an integer index")


@dataclass(frozen=True)
class SupportView:
    entries: tuple
    discarded_mass: float
    renormalization: float

    @property
    def indices(self):
        return [i for i, _ in self.entries]

    @property
    def weights(self):
        return np.array([w for _, w in self.entries])

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass(frozen=True)
class WeightScheme:
    entries: tuple = ()
    tail: GeometricTail = None
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        entries = tuple((int(i), float(w)) for i, w in self.entries)
        object.__setattr__(self, "entries", entries)
        indices = [i for i, _ in entries]
        if len(set(indices)) != len(indices):
            raise ValidationError("weight indices must be distinct")
        if any(not 0.0 < w <= 1.0 for _, w in entries):
            raise ValidationError("explicit weights must lie in (0, 1]")
        if not self.epsilon > 0:
            raise ValidationError("truncation epsilon must be positive")
        total = sum(w for _, w in entries)
        if total > 1.0 + 1e-12:
            raise ValidationError("weights sum to {:.12g} > 1".format(total))
        if self.tail is None:
            if abs(total - 1.0) > 1e-12:
                raise ValidationError("weights sum to {:.12g}, not 1, and there is no tail".format(total))
        elif indices and self.tail.first_index <= max(indices):
            raise ValidationError("tail must start after the last explicit index")

    @classmethod
    def from_weights(cls, weights, epsilon=DEFAULT_EPSILON):
        return cls(tuple((i + 1, w) for i, w in enumerate(weights)), None, epsilon)

    @classmethod
    def uniform(cls, count):
        return cls.from_weights([1.0 / count] * count)

    @classmethod
    def point_mass(cls, index=1):
        return cls(((index, 1.0),))

    @classmethod
    def geometric(cls, ratio, first_index=1, epsilon=DEFAULT_EPSILON):
        return cls((), GeometricTail(ratio, first_index), epsilon)

    @property
    def tail_mass(self):
        return max(0.0, 1.0 - sum(w for _, w in self.entries))

    def tail_length(self, epsilon=None):
        """Smallest n with T * r**n <= epsilon."""
        epsilon = self.epsilon if epsilon is None else epsilon
        if self.tail is None or self.tail_mass <= epsilon:
            return 0
        n = int(np.ceil(np.log(epsilon / self.tail_mass) / np.log(self.tail.ratio)))
        # guard the logarithm against rounding at exact powers
        while n > 0 and self.tail_mass * self.tail.ratio ** (n - 1) <= epsilon:
            n -= 1
        while self.tail_mass * self.tail.ratio ** n > epsilon:
            n += 1
        return n

    @cached_property
    def support(self):
        return effective_support(self)

    def with_epsilon(self, epsilon):
        return WeightScheme(self.entries, self.tail, epsilon)

    def to_json(self):
        tail = None if self.tail is None else {"ratio": self.tail.ratio, "from": self.tail.first_index}
        return {"entries": [[i, w] for i, w in self.entries], "tail": tail, "epsilon": self.epsilon}

    @classmethod
    def from_json(cls, data, where="weights"):
        if not isinstance(data, dict):
            raise ScenarioError("weight scheme must be an object", where)
        try:
            entries = tuple((int(i), float(w)) for i, w in data.get("entries", []))
            tail = data.get("tail")
            if tail is not None:
                tail = GeometricTail(float(tail["ratio"]), int(tail["from"]))
            return cls(entries, tail, float(data.get("epsilon", DEFAULT_EPSILON)))
        except (KeyError, TypeError, ValueError) as x:
            raise ScenarioError(str(x), where)


def effective_support(mu):
    entries = list(mu.entries)
    discarded = 0.0
    if mu.tail is not None:
        T = mu.tail_mass
        r = mu.tail.ratio
        n = mu.tail_length()
        entries.extend((mu.tail.first_index + j, T * (1.0 - r) * r ** j) for j in range(n))
        discarded = T * r ** n
    total = sum(w for _, w in entries)
    factor = 1.0 / total
    if discarded > 0:
        logger.debug("truncated tail after %d terms, discarded mass %.3g", len(entries), discarded)
    entries = tuple((i, w * factor) for i, w in entries if w > 0)
    return SupportView(entries, discarded, factor)
