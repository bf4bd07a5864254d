"""Domain types, device anonymization and sighting-stream cleaning."""

from __future__ import annotations

import datetime as dt
import enum
import hashlib
import logging
import re
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from .exceptions import ClosedDay, InvalidMac

logger = logging.getLogger(__name__)

#: Sensor labels of the default deployment: Entrance Hall, Gallery Daru,
#: Venus de Milo, Salle des Caryatides, Sphinx, Great Gallery, Victory of
#: Samothrace, Salle des Verres.
DEFAULT_NODES = ("E", "D", "V", "C", "P", "B", "S", "G")

DIGEST_HEX_LENGTH = 64

_MAC_RE = re.compile(r"^[0-9A-Fa-f]{2}([:-])(?:[0-9A-Fa-f]{2}\1){4}[0-9A-Fa-f]{2}$")
_BARE_MAC_RE = re.compile(r"^[0-9A-Fa-f]{12}$")


class DayGroup(str, enum.Enum):
    """Opening-hours regime of a museum day."""

    EARLY_CLOSE = "EarlyClose"
    LATE_CLOSE = "LateClose"

    @property
    def closing(self) -> dt.time:
        return dt.time(18, 0) if self is DayGroup.EARLY_CLOSE else dt.time(21, 45)

    @classmethod
    def parse(cls, value) -> "DayGroup":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        aliases = {"earlyclose": cls.EARLY_CLOSE, "early": cls.EARLY_CLOSE,
                   "lateclose": cls.LATE_CLOSE, "late": cls.LATE_CLOSE}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown day group {value!r}") from None


# Monday=0 ... Sunday=6; Tuesday (1) is absent on purpose.
_WEEKDAY_GROUPS = {
    0: DayGroup.EARLY_CLOSE,
    2: DayGroup.LATE_CLOSE,
    3: DayGroup.EARLY_CLOSE,
    4: DayGroup.LATE_CLOSE,
    5: DayGroup.EARLY_CLOSE,
    6: DayGroup.EARLY_CLOSE,
}


@dataclass(frozen=True, slots=True)
class SightingEvent:
    """One detection of an anonymized device by one sensor."""

    device: str
    node: str
    timestamp: int
    rssi: Optional[int] = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")
        if not self.node:
            raise ValueError("node label must be non-empty")

    def sort_key(self):
        return (self.device, self.timestamp, self.node,
                -1 if self.rssi is None else 0, self.rssi or 0)


@dataclass(frozen=True)
class StreamReport:
    """Bookkeeping produced while cleaning a sighting stream."""

    n_input: int
    n_output: int
    n_duplicates: int
    n_unknown_node: int
    n_out_of_order: int


def normalize_mac(mac: str) -> str:
    """Return ``mac`` as uppercase colon-separated octets.

    Accepts colon- or hyphen-separated octets and the bare 12-digit form.
    """
    if not isinstance(mac, str):
        raise InvalidMac(f"MAC address must be a string, got {type(mac).__name__}")
    text = mac.strip()
    if _MAC_RE.match(text):
        digits = re.sub(r"[:-]", "", text)
    elif _BARE_MAC_RE.match(text):
        digits = text
    else:
        raise InvalidMac(f"malformed MAC address: {mac!r}")
    digits = digits.upper()
    return ":".join(digits[i:i + 2] for i in range(0, 12, 2))


def anonymize_device(mac: str, salt: bytes) -> str:
    """Hash a MAC address into a salted SHA-256 device identifier."""
    if isinstance(salt, str):
        salt = salt.encode("utf-8")
    if not salt:
        raise ValueError("salt must be non-empty")
    canonical = normalize_mac(mac)
    return hashlib.sha256(salt + canonical.encode("ascii")).hexdigest()


def day_group(date: dt.date) -> DayGroup:
    """Map a calendar date to its opening-hours group.

    Raises ClosedDay for Tuesdays.
    """
    if isinstance(date, dt.datetime):
        date = date.date()
    try:
        return _WEEKDAY_GROUPS[date.weekday()]
    except KeyError:
        raise ClosedDay(f"{date.isoformat()} is a Tuesday; the museum is closed") from None


def validate_stream(events: Iterable[SightingEvent], deployment: Iterable[str],
                    return_report: bool = False):
    """Clean a sighting stream.

    Events at nodes outside ``deployment`` are dropped, exact duplicates are
    removed and the result is sorted by (device, timestamp).  With
    ``return_report=True`` a ``(events, StreamReport)`` pair is returned.
    """
    deployment = frozenset(deployment)
    events = list(events)
    keys = [ev.sort_key() for ev in events]
    n_out_of_order = sum(1 for a, b in zip(keys, keys[1:]) if b < a)

    known = [ev for ev in events if ev.node in deployment]
    n_unknown = len(events) - len(known)
    if n_unknown:
        logger.warning("dropped %d sightings at unknown nodes", n_unknown)

    unique = sorted(set(known), key=SightingEvent.sort_key)
    n_dup = len(known) - len(unique)
    if n_dup:
        logger.info("removed %d duplicate sightings", n_dup)
    if n_out_of_order:
        logger.info("%d sightings arrived out of order", n_out_of_order)

    if return_report:
        report = StreamReport(len(events), len(unique), n_dup, n_unknown, n_out_of_order)
        return unique, report
    return unique


def local_datetimes(timestamps, tz: str = "UTC") -> pd.DatetimeIndex:
    """Convert epoch seconds to tz-aware local datetimes."""
    ts = np.asarray(timestamps, dtype=np.int64)
    return pd.to_datetime(ts, unit="s", utc=True).tz_convert(tz)


def local_day_index(timestamps, tz: str = "UTC") -> np.ndarray:
    """Local calendar day of each timestamp as days since 1970-01-01."""
    local = local_datetimes(timestamps, tz)
    naive = local.tz_localize(None).normalize()
    return (naive.asi8 // (86_400 * 10**9)).astype(np.int64)


def local_hour(timestamps, tz: str = "UTC") -> np.ndarray:
    return np.asarray(local_datetimes(timestamps, tz).hour, dtype=np.int64)


def day_groups_of(day_index: Sequence[int]) -> list:
    """Day group per local day index; ``None`` for Tuesdays."""
    epoch = dt.date(1970, 1, 1)
    out = []
    for d in day_index:
        date = epoch + dt.timedelta(days=int(d))
        out.append(_WEEKDAY_GROUPS.get(date.weekday()))
    return out
