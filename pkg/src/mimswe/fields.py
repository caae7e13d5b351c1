"""Coefficient vectors tagged with their discrete space."""

from dataclasses import dataclass

import numpy as np

SPACES = ("W", "U", "Q")


@dataclass
class Field:
    """Coefficient vector in one of the discrete spaces.

    DOF meanings: W holds point values, U holds edge flux integrals
    (x-normal block first), Q holds subcell integrals.
    """

    space: str
    data: np.ndarray

    def __post_init__(self):
        if self.space not in SPACES:
            raise ValueError(f"unknown space {self.space!r}, expected one of {SPACES}")
        self.data = np.asarray(self.data, dtype=float)

    def copy(self) -> "Field":
        return Field(self.space, self.data.copy())


def require_space(field: Field, space: str, what: str) -> np.ndarray:
    if not isinstance(field, Field) or field.space != space:
        got = field.space if isinstance(field, Field) else type(field).__name__
        raise TypeError(f"{what} must be a Field in space {space}, got {got}")
    return field.data
