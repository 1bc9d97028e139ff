"""Artifact formats, stage manifests, and deterministic seed derivation.

Every pipeline stage exchanges data through plain files so runs can be
inspected, resumed, and diffed:

* matrices: a line-oriented text format, header ``dims R C`` followed by
  R rows of space-separated decimals (shortest round-trip form, so the
  parsed values are bit-identical to what was written);
* label maps and event/user tables: tab-separated text;
* model weights: one binary container per model, magic bytes ``GRECB1``
  followed by a JSON header (array names, shapes, metadata) and the
  arrays as little-endian 64-bit floats in header order;
* manifests: a JSON file per stage recording the stage name, its
  parameters, the SHA-256 of every input file, and the produced
  outputs. A stage whose manifest still matches is skipped on resume.

Stage seeds derive from one root seed: the first eight bytes of
SHA-256("<stage>:<root_seed>") read as a little-endian integer. The rule
keeps stages statistically independent while everything flows from a
single configured number.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path

import numpy as np

from .ingest import Dataset, ListeningEvent, UserRecord, parse_events, parse_users

WEIGHTS_MAGIC = b"GRECB1"

MANIFEST_NAME = "manifest.json"


def stage_seed(root_seed: int, stage_name: str) -> int:
    digest = hashlib.sha256(f"{stage_name}:{root_seed}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


# ---------------------------------------------------------------------------
# matrices and label maps


def write_matrix(path, array: np.ndarray) -> None:
    array = np.atleast_2d(np.asarray(array, dtype=np.float64))
    lines = [f"dims {array.shape[0]} {array.shape[1]}"]
    for row in array:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "dims":
            raise ValueError(f"{path}: expected 'dims R C' header, got {header}")
        rows, cols = int(header[1]), int(header[2])
        out = np.empty((rows, cols), dtype=np.float64)
        for i in range(rows):
            parts = fh.readline().split()
            if len(parts) != cols:
                raise ValueError(f"{path}: row {i} has {len(parts)} values, expected {cols}")
            out[i] = [float(p) for p in parts]
    return out


def write_labels(path, labels: Mapping[str, int]) -> None:
    lines = [f"{code}\t{label}" for code, label in sorted(labels.items())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_labels(path) -> dict[str, int]:
    out: dict[str, int] = {}
    for line in Path(path).read_text().splitlines():
        if not line:
            continue
        code, label = line.split("\t")
        out[code] = int(label)
    return out


def write_index(path, keys: Iterable) -> None:
    """Dense index as one original key per line, position = dense id."""
    Path(path).write_text("\n".join(str(k) for k in keys) + "\n")


def read_index(path, key_type=str) -> list:
    return [key_type(line) for line in Path(path).read_text().splitlines() if line]


# ---------------------------------------------------------------------------
# event and user tables


def write_events_tsv(path, events: Sequence[ListeningEvent]) -> None:
    with open(path, "w") as fh:
        for e in events:
            fh.write(f"{e.user_id}\t{e.artist_id}\t{e.album_id}\t{e.track_id}\t{e.timestamp}\n")


def write_users_tsv(path, users: Mapping[int, UserRecord]) -> None:
    with open(path, "w") as fh:
        for uid in sorted(users):
            u = users[uid]
            age = "" if u.age is None else str(u.age)
            fh.write(f"{u.user_id}\t{u.country or ''}\t{age}\t{u.gender or ''}\t{u.playcount}\n")


def save_dataset(out_dir, dataset: Dataset) -> list[str]:
    """Persist a filtered dataset so later stages can reload it as-is."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_events_tsv(out / "events.tsv", dataset.events)
    write_users_tsv(out / "users.tsv", dataset.users)
    write_index(out / "track_index.txt", dataset.track_index)
    write_index(out / "country_index.txt", dataset.country_index)
    (out / "filter_counts.json").write_text(json.dumps(dataset.filter_counts, sort_keys=True) + "\n")
    return ["events.tsv", "users.tsv", "track_index.txt", "country_index.txt", "filter_counts.json"]


def load_dataset(in_dir) -> Dataset:
    """Rebuild a persisted dataset without re-running the filters."""
    src = Path(in_dir)
    events, skipped_e = parse_events(src / "events.tsv")
    users, skipped_u = parse_users(src / "users.tsv")
    if skipped_e or skipped_u:
        raise ValueError(f"{in_dir}: persisted dataset has malformed rows")
    tracks = read_index(src / "track_index.txt", int)
    countries = read_index(src / "country_index.txt", str)
    counts = json.loads((src / "filter_counts.json").read_text())
    return Dataset(
        events=tuple(events),
        users=users,
        track_index={t: i for i, t in enumerate(tracks)},
        country_index={c: i for i, c in enumerate(countries)},
        filter_counts=counts,
    )


# ---------------------------------------------------------------------------
# binary weight container


def write_weights(path, arrays: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    names = list(arrays)
    header = json.dumps(
        {"arrays": [{"name": n, "shape": list(arrays[n].shape)} for n in names], "meta": dict(meta or {})},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def read_weights(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(WEIGHTS_MAGIC))
        if magic != WEIGHTS_MAGIC:
            raise ValueError(f"{path}: not a weight container (bad magic {magic!r})")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode())
        arrays: dict[str, np.ndarray] = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            n_items = int(np.prod(shape)) if shape else 1
            buf = fh.read(n_items * 8)
            if len(buf) != n_items * 8:
                raise ValueError(f"{path}: truncated payload for {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return arrays, header.get("meta", {})


# ---------------------------------------------------------------------------
# manifests


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(stage_dir, stage: str, params: Mapping, inputs: Sequence, outputs: Sequence[str]) -> None:
    manifest = {
        "stage": stage,
        "params": dict(params),
        "inputs": {str(p): file_sha256(p) for p in inputs},
        "outputs": sorted(outputs),
    }
    path = Path(stage_dir) / MANIFEST_NAME
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def manifest_matches(stage_dir, stage: str, params: Mapping, inputs: Sequence) -> bool:
    """True when the stage already ran with these params and inputs and
    all of its recorded outputs are still present."""
    path = Path(stage_dir) / MANIFEST_NAME
    if not path.is_file():
        return False
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError:
        return False
    if manifest.get("stage") != stage or manifest.get("params") != dict(params):
        return False
    recorded = manifest.get("inputs", {})
    if set(recorded) != {str(p) for p in inputs}:
        return False
    for p in inputs:
        if not Path(p).is_file() or file_sha256(p) != recorded[str(p)]:
            return False
    return all((Path(stage_dir) / name).is_file() for name in manifest.get("outputs", []))


# ---------------------------------------------------------------------------
# flat key = value configuration


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_config(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text())


def format_config(values: Mapping[str, object]) -> str:
    return "\n".join(f"{k} = {values[k]}" for k in values) + "\n"
