"""File formats: score files, trial lists, JSON reports, key=value configs,
checkpoints, binary feature files, and newline-delimited run logs.

Every writer here is deterministic: identical inputs produce byte-identical
files (no timestamps, fixed key order, repr-based float formatting).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .metrics import GROUPS, TrialRecord

SCORE_HEADER = "enroll_id,test_id,group_enroll,group_test,label,score"
TRIAL_HEADER = "enroll_id,test_id,group_enroll,group_test,label"
LABELS = ("mated", "nonmated")

CKPT_MAGIC = b"ASVFCKPT1\n"
FEAT_MAGIC = b"ASVFEAT1"


class ScoreFileError(ValueError):
    """Malformed score or trial file; carries the offending line number."""

    def __init__(self, line_no, message):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class ConfigError(ValueError):
    """Bad key=value configuration input."""


def _parse_trial_line(line, line_no, with_score):
    parts = line.split(",")
    want = 6 if with_score else 5
    if len(parts) != want:
        raise ScoreFileError(line_no, f"expected {want} columns, got {len(parts)}")
    enroll_id, test_id, g_enroll, g_test, label = [p.strip() for p in parts[:5]]
    if g_enroll not in GROUPS or g_test not in GROUPS:
        raise ScoreFileError(line_no, f"group labels must be one of {GROUPS}")
    if label not in LABELS:
        raise ScoreFileError(line_no, f"unknown label {label!r}")
    score = 0.0
    if with_score:
        try:
            score = float(parts[5])
        except ValueError:
            raise ScoreFileError(line_no, f"bad score field {parts[5]!r}") from None
        if not np.isfinite(score):
            raise ScoreFileError(line_no, "score must be finite")
    return TrialRecord(enroll_id=enroll_id, test_id=test_id, score=score,
                       mated=(label == "mated"), group_enroll=g_enroll,
                       group_test=g_test)


def _read_trial_like(path, with_score):
    header = SCORE_HEADER if with_score else TRIAL_HEADER
    records = []
    saw_header = False
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if not saw_header:
                if line != header:
                    raise ScoreFileError(line_no, f"header must be {header!r}")
                saw_header = True
                continue
            records.append(_parse_trial_line(line, line_no, with_score))
    if not saw_header:
        raise ScoreFileError(0, "empty file (missing header)")
    return records


def read_score_file(path):
    """Parse a UTF-8 comma-delimited score file into TrialRecords."""
    return _read_trial_like(path, with_score=True)


def read_trial_list(path):
    """Parse a trial list (score column absent, scores set to 0.0)."""
    return _read_trial_like(path, with_score=False)


def _trial_fields(t):
    label = "mated" if t.mated else "nonmated"
    return f"{t.enroll_id},{t.test_id},{t.group_enroll},{t.group_test},{label}"


def write_score_file(path, trials, comment=None):
    with open(path, "w", encoding="utf-8") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        fh.write(SCORE_HEADER + "\n")
        for t in trials:
            fh.write(f"{_trial_fields(t)},{t.score!r}\n")


def write_trial_list(path, trials, comment=None):
    with open(path, "w", encoding="utf-8") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        fh.write(TRIAL_HEADER + "\n")
        for t in trials:
            fh.write(_trial_fields(t) + "\n")


# ---------------------------------------------------------------------------
# JSON report and run log


def dumps_record(record):
    """Compact one-line JSON with insertion-ordered keys."""
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def write_report(path, report_dict):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(report_dict, indent=2, allow_nan=False))
        fh.write("\n")


def write_runlog(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps_record(rec) + "\n")


def read_runlog(path):
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# key = value config files


def parse_kv_text(text):
    """Parse `key = value` lines; '#' starts a comment, blanks ignored."""
    out = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {line_no}: empty key")
        if key in out:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_kv_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv_text(fh.read())


# ---------------------------------------------------------------------------
# checkpoints: magic line, one JSON header line (entry names, shapes, meta),
# then the raw little-endian float64 blobs concatenated in header order


def save_checkpoint(path, named_arrays, meta=None):
    entries = [{"name": name, "shape": list(np.asarray(a).shape)}
               for name, a in named_arrays.items()]
    header = {"version": 1, "meta": meta or {}, "entries": entries}
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for name, a in named_arrays.items():
            arr = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (name -> float64 array, meta dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise ConfigError(f"not a checkpoint file: {path}")
        header = json.loads(fh.readline().decode("utf-8"))
        arrays = {}
        for entry in header["entries"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ConfigError(f"truncated checkpoint entry {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        return arrays, header.get("meta", {})


# ---------------------------------------------------------------------------
# binary feature files: magic, uint32 F, uint32 T, then F*T float64 row-major


def write_feature_file(path, features):
    arr = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
    if arr.ndim != 2:
        raise ConfigError(f"features must be [F,T], got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC)
        fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        fh.write(arr.astype("<f8").tobytes())


def read_feature_file(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(FEAT_MAGIC))
        if magic != FEAT_MAGIC:
            raise ConfigError(f"not a feature file: {path}")
        f, t = struct.unpack("<II", fh.read(8))
        buf = fh.read(8 * f * t)
        if len(buf) != 8 * f * t:
            raise ConfigError(f"truncated feature file: {path}")
        return np.frombuffer(buf, dtype="<f8").reshape(f, t).copy()


MANIFEST_HEADER = "utt_id,speaker_id,group,path"


def write_manifest(path, rows):
    """rows: iterable of (utt_id, speaker_id, group, relative_path)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(MANIFEST_HEADER + "\n")
        for utt_id, speaker_id, group, rel in rows:
            fh.write(f"{utt_id},{speaker_id},{group},{rel}\n")


def read_manifest(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line == MANIFEST_HEADER:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ScoreFileError(line_no, "manifest rows need 4 columns")
            rows.append(tuple(parts))
    return rows
