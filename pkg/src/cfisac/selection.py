"""Inclusion vectors describing which APs receive the sensing echo."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable


@dataclass(frozen=True)
class ApSelection:
    """Boolean inclusion over the AP indices; immutable and hashable."""

    included: tuple[bool, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "included", tuple(bool(b) for b in self.included))

    @classmethod
    def from_indices(cls, num_aps: int, indices: Iterable[int]) -> "ApSelection":
        chosen = set(indices)
        if not all(0 <= i < num_aps for i in chosen):
            raise ValueError(f"AP index out of range [0, {num_aps})")
        return cls(tuple(i in chosen for i in range(num_aps)))

    @classmethod
    def empty(cls, num_aps: int) -> "ApSelection":
        return cls((False,) * num_aps)

    @classmethod
    def full(cls, num_aps: int) -> "ApSelection":
        return cls((True,) * num_aps)

    @property
    def cardinality(self) -> int:
        return sum(self.included)

    @property
    def indices(self) -> tuple[int, ...]:
        """Selected AP indices in ascending order."""
        return tuple(i for i, on in enumerate(self.included) if on)

    @property
    def bitmask(self) -> int:
        """Bit i set when AP i is selected."""
        return sum(1 << i for i in self.indices)
