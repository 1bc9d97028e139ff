"""Event and user parsing, playcount filters, synthetic data generation.

The filters reproduce the corpus-pruning sequence used for the listening
histories: drop users without a country, then rarely-played tracks, then
countries with too little activity, and rebuild dense indices over what
survives. Thresholds are configurable because the desk-scale synthetic
datasets need far smaller cutoffs than the full corpus defaults.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

GENDERS = ("m", "f")


@dataclass(frozen=True, slots=True)
class ListeningEvent:
    user_id: int
    artist_id: int
    album_id: int
    track_id: int
    timestamp: int


@dataclass(frozen=True, slots=True)
class UserRecord:
    user_id: int
    country: str | None = None
    age: int | None = None
    gender: str | None = None
    playcount: int = 0


@dataclass(frozen=True, slots=True)
class FilterConfig:
    """Thresholds for the three pruning stages.

    Defaults match the full-corpus values: tracks need 1,000 plays,
    countries need 80,000 events and 25 users.
    """

    min_track_playcount: int = 1000
    min_country_les: int = 80000
    min_country_users: int = 25

    def __post_init__(self) -> None:
        for name in ("min_track_playcount", "min_country_les", "min_country_users"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass(frozen=True)
class Dataset:
    """Filtered events plus the dense reindexings downstream stages use.

    ``track_index`` and ``country_index`` map original track ids and
    country codes to contiguous [0, n) positions, sorted by original key
    so the mapping is reproducible.
    """

    events: tuple[ListeningEvent, ...]
    users: dict[int, UserRecord]
    track_index: dict[int, int]
    country_index: dict[str, int]
    filter_counts: dict[str, int] = field(default_factory=dict)

    @property
    def n_tracks(self) -> int:
        return len(self.track_index)

    @property
    def n_countries(self) -> int:
        return len(self.country_index)

    @property
    def n_users(self) -> int:
        return len(self.users)


def parse_events(path) -> tuple[list[ListeningEvent], int]:
    """Read tab-separated listening events; returns (events, skipped rows).

    A well-formed row has five integer fields: user, artist, album, track,
    timestamp, all nonnegative. Anything else is counted and skipped.
    """
    events: list[ListeningEvent] = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                skipped += 1
                continue
            try:
                vals = [int(p) for p in parts]
            except ValueError:
                skipped += 1
                continue
            if any(v < 0 for v in vals):
                skipped += 1
                continue
            events.append(ListeningEvent(*vals))
    if skipped:
        log.info("parse_events: skipped %d malformed rows in %s", skipped, path)
    return events, skipped


def _parse_age(raw: str) -> int | None:
    if not raw:
        return None
    try:
        age = int(raw)
    except ValueError:
        return None
    return age if 0 <= age <= 150 else None


def _parse_country(raw: str) -> str | None:
    code = raw.strip().upper()
    return code if len(code) == 2 and code.isalpha() else None


def parse_users(path) -> tuple[dict[int, UserRecord], int]:
    """Read tab-separated user metadata; returns (users by id, skipped rows).

    Fields: user_id, country, age, gender, playcount. Country, age and
    gender may be empty; out-of-range ages and unrecognized genders are
    treated as absent rather than invalidating the row. Rows without a
    parseable user_id or playcount are skipped. A repeated user_id keeps
    the last row seen.
    """
    users: dict[int, UserRecord] = {}
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                skipped += 1
                continue
            try:
                uid = int(parts[0])
                playcount = int(parts[4]) if parts[4] else 0
            except ValueError:
                skipped += 1
                continue
            if uid < 0 or playcount < 0:
                skipped += 1
                continue
            gender = parts[3].strip().lower()
            users[uid] = UserRecord(
                user_id=uid,
                country=_parse_country(parts[1]),
                age=_parse_age(parts[2]),
                gender=gender if gender in GENDERS else None,
                playcount=playcount,
            )
    if skipped:
        log.info("parse_users: skipped %d malformed rows in %s", skipped, path)
    return users, skipped


def apply_filters(
    events: list[ListeningEvent],
    users: dict[int, UserRecord],
    cfg: FilterConfig,
) -> Dataset:
    """Prune events and users in three fixed stages, then reindex.

    Stage (a) removes users without a country (and events of unknown
    users), (b) removes tracks whose global playcount among the remaining
    events is below ``cfg.min_track_playcount``, and (c) removes countries
    that fall below either the event or the user threshold. A user counts
    toward their country while they still have at least one event. The
    surviving track and country sets get dense indices sorted by original
    key.

    Raises ValueError when nothing survives, with per-stage counts in the
    message.
    """
    known = {uid: u for uid, u in users.items() if u.country is not None}
    ev_a = [e for e in events if e.user_id in known]

    track_counts = Counter(e.track_id for e in ev_a)
    good_tracks = {t for t, c in track_counts.items() if c >= cfg.min_track_playcount}
    ev_b = [e for e in ev_a if e.track_id in good_tracks]

    country_les = Counter(known[e.user_id].country for e in ev_b)
    users_active = {e.user_id for e in ev_b}
    country_users = Counter(known[uid].country for uid in users_active)
    good_countries = {
        c
        for c in country_les
        if country_les[c] >= cfg.min_country_les and country_users[c] >= cfg.min_country_users
    }
    ev_c = [e for e in ev_b if known[e.user_id].country in good_countries]

    counts = {
        "input_events": len(events),
        "after_country_known": len(ev_a),
        "after_track_filter": len(ev_b),
        "after_country_filter": len(ev_c),
    }
    if not ev_c:
        raise ValueError(f"all events filtered out; stage counts: {counts}")

    surviving_users = {e.user_id for e in ev_c}
    final_users = {uid: known[uid] for uid in surviving_users}
    final_tracks = sorted({e.track_id for e in ev_c})
    final_countries = sorted(good_countries)
    log.info(
        "filters kept %d/%d events, %d users, %d tracks, %d countries",
        len(ev_c), len(events), len(final_users), len(final_tracks), len(final_countries),
    )
    return Dataset(
        events=tuple(ev_c),
        users=final_users,
        track_index={t: i for i, t in enumerate(final_tracks)},
        country_index={c: i for i, c in enumerate(final_countries)},
        filter_counts=counts,
    )


def _country_codes(n: int) -> list[str]:
    """AA, AB, ... AZ, BA, ... — enough distinct 2-letter codes for n."""
    if n > 26 * 26:
        raise ValueError(f"cannot name {n} countries with 2-letter codes")
    return [chr(65 + i // 26) + chr(65 + i % 26) for i in range(n)]


def generate_synthetic(
    n_countries: int,
    users_per_country: int,
    n_tracks: int,
    archetype_count: int,
    skew: float,
    seed: int,
    events_per_user: int = 120,
    global_hits: int = 0,
) -> tuple[list[ListeningEvent], dict[int, UserRecord], dict[str, int]]:
    """Build a dataset with planted country archetypes.

    Countries are split into ``archetype_count`` contiguous groups and each
    group gets a disjoint signature block of tracks. Every user draws a
    ``skew`` fraction of their events from their own block (with a 1/rank
    popularity profile inside it, so rankings have a meaningful head) and
    the rest uniformly from all non-hit tracks. ``global_hits`` reserves
    that many tracks at the top of the id range and gives every user a few
    plays of each, which makes them maximally common and therefore easy to
    recognize as undiscriminative.

    Returns (events, users, archetype label by country code). Output is a
    pure function of the arguments; the same seed reproduces it exactly.
    """
    if not 0.0 < skew <= 1.0:
        raise ValueError(f"skew must be in (0, 1], got {skew}")
    if archetype_count < 1 or archetype_count > n_countries:
        raise ValueError(
            f"archetype_count must be in [1, n_countries], got {archetype_count} vs {n_countries}"
        )
    if global_hits < 0 or global_hits >= n_tracks:
        raise ValueError(f"global_hits must be in [0, n_tracks), got {global_hits}")
    n_normal = n_tracks - global_hits
    block = n_normal // archetype_count
    if block < 1:
        raise ValueError(f"{n_normal} non-hit tracks cannot cover {archetype_count} archetypes")
    if users_per_country < 1 or events_per_user < 1:
        raise ValueError("need at least one user per country and one event per user")

    rng = np.random.default_rng(seed)
    codes = _country_codes(n_countries)
    # contiguous partition; the first (n_countries mod archetype_count)
    # archetypes get one extra country
    base, extra = divmod(n_countries, archetype_count)
    labels: dict[str, int] = {}
    pos = 0
    for a in range(archetype_count):
        size = base + (1 if a < extra else 0)
        for c in range(pos, pos + size):
            labels[codes[c]] = a
        pos += size

    # 1/rank weights within a signature block
    block_w = 1.0 / np.arange(1, block + 1)
    block_w /= block_w.sum()

    events: list[ListeningEvent] = []
    users: dict[int, UserRecord] = {}
    ts = 1_500_000_000
    uid = 0
    for ci, code in enumerate(codes):
        a = labels[code]
        block_start = a * block
        for _ in range(users_per_country):
            n_ev = int(round(events_per_user * rng.uniform(0.75, 1.25)))
            n_ev = max(1, n_ev)
            n_own = int(round(skew * n_ev))
            own = block_start + rng.choice(block, size=n_own, p=block_w)
            rest = rng.integers(0, n_normal, size=n_ev - n_own)
            tracks = np.concatenate([own, rest])
            rng.shuffle(tracks)
            if global_hits:
                hits = np.repeat(np.arange(n_normal, n_tracks), 3)
                tracks = np.concatenate([tracks, hits])
            for t in tracks:
                t = int(t)
                events.append(ListeningEvent(uid, t // 10, t // 3, t, ts))
                ts += 1
            age_mean = 18.0 + 4.0 * a
            age = int(np.clip(round(rng.normal(age_mean, 3.0)), 12, 90))
            p_male = 0.25 + 0.5 * (a / max(1, archetype_count - 1))
            gender = "m" if rng.random() < p_male else "f"
            # leave some demographics absent, as in real metadata
            if rng.random() < 0.1:
                age = None
            if rng.random() < 0.1:
                gender = None
            users[uid] = UserRecord(
                user_id=uid,
                country=code,
                age=age,
                gender=gender,
                playcount=len(tracks),
            )
            uid += 1
    return events, users, labels
