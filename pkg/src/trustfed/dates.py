"""Calendar dates for the simulator.

Regulatory deadlines in this domain are expressed in whole months, so the
date type carries month arithmetic with day clamping (Jan 31 + 1 month is
the last day of February).
"""

from __future__ import annotations

import calendar
import datetime
from dataclasses import dataclass


@dataclass(frozen=True, order=True)
class SimDate:
    """A Gregorian calendar date with total ordering and month arithmetic."""

    year: int
    month: int
    day: int

    def __post_init__(self) -> None:
        # Raises ValueError for anything that is not a real calendar date.
        datetime.date(self.year, self.month, self.day)

    @classmethod
    def parse(cls, text: str) -> "SimDate":
        """Parse an ISO-8601 date string (YYYY-MM-DD)."""
        d = datetime.date.fromisoformat(text.strip())
        return cls(d.year, d.month, d.day)

    @classmethod
    def from_date(cls, d: datetime.date) -> "SimDate":
        return cls(d.year, d.month, d.day)

    def isoformat(self) -> str:
        return f"{self.year:04d}-{self.month:02d}-{self.day:02d}"

    def __str__(self) -> str:
        return self.isoformat()

    def to_date(self) -> datetime.date:
        return datetime.date(self.year, self.month, self.day)

    def add_months(self, months: int) -> "SimDate":
        """Shift by whole calendar months, clamping the day to month length."""
        index = self.year * 12 + (self.month - 1) + months
        year, month0 = divmod(index, 12)
        month = month0 + 1
        day = min(self.day, calendar.monthrange(year, month)[1])
        return SimDate(year, month, day)

    def add_days(self, days: int) -> "SimDate":
        return SimDate.from_date(self.to_date() + datetime.timedelta(days=days))

    def days_until(self, other: "SimDate") -> int:
        return (other.to_date() - self.to_date()).days
