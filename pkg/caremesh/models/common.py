"""
Value types shared by descriptions, registry, scheduler and binding.

Time is integer minutes since the scenario epoch; there is no wall clock.
"""
import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Tuple


class Priority(IntEnum):
    ROUTINE = 0
    ELEVATED = 1
    EMERGENCY = 2


class ProviderType(str, Enum):
    PROFESSIONAL = "professional"
    INFORMAL = "informal"
    DEVICE = "device"


ALL_PROVIDER_TYPES = frozenset(ProviderType)


@dataclass(frozen=True, order=True)
class Interval:
    """Half-open interval [start, end) in scenario minutes."""
    start: int
    end: int

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError(f"interval start {self.start} must be < end {self.end}")

    @property
    def length(self) -> int:
        return self.end - self.start

    def overlaps(self, other: "Interval") -> bool:
        return self.start < other.end and other.start < self.end

    def contains(self, other: "Interval") -> bool:
        return self.start <= other.start and other.end <= self.end

    def as_list(self) -> list:
        return [self.start, self.end]


@dataclass(frozen=True)
class Point:
    x: int = 0
    y: int = 0

    def distance_to(self, other: "Point") -> float:
        return math.dist((self.x, self.y), (other.x, other.y))

    def as_tuple(self) -> Tuple[int, int]:
        return (self.x, self.y)
