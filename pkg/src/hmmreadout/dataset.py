"""Labeled shot collections and their on-disk form.

A Dataset is column-oriented: one (n_shots, n_segments, 2) IQ array plus
per-shot label and id vectors.  All shots in one dataset share a segment
count and segment duration; ragged collections stay as plain lists of
ObservationSequence at the library level.

On disk a dataset is a CSV of per-segment rows (shot_id, prepared_label,
segment_index, i, q) plus a JSON sidecar at ``<csv path>.json`` holding
everything that is not per-segment: segment duration, optional
acquisition settings, provenance, and the simulation seed if any.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import InputError, SchemaError
from .hmm import ObservationSequence
from .util import atomic_write_text, dump_json, load_json

__all__ = ["Dataset", "ShotRecord", "sidecar_path"]

_CSV_HEADER = ["shot_id", "prepared_label", "segment_index", "i", "q"]


def sidecar_path(csv_path: str | Path) -> Path:
    return Path(str(csv_path) + ".json")


@dataclass(frozen=True)
class ShotRecord:
    """One shot viewed on its own."""

    shot_id: int
    prepared_label: int
    obs: ObservationSequence


@dataclass(frozen=True)
class Dataset:
    iq: np.ndarray
    labels: np.ndarray
    shot_ids: np.ndarray
    dt_seconds: float
    provenance: dict = field(default_factory=dict)
    seed: int | None = None
    if_freq_hz: float | None = None
    sample_rate_hz: float | None = None

    def __post_init__(self):
        iq = np.asarray(self.iq, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int64)
        shot_ids = np.asarray(self.shot_ids, dtype=np.int64)
        if iq.ndim != 3 or iq.shape[2] != 2 or iq.shape[0] < 1 or iq.shape[1] < 1:
            raise InputError("iq must have shape (n_shots, n_segments, 2)")
        if not np.all(np.isfinite(iq)):
            raise InputError("iq must be finite")
        if labels.shape != (iq.shape[0],) or shot_ids.shape != (iq.shape[0],):
            raise InputError("labels and shot_ids must have one entry per shot")
        if np.any(labels < 0):
            raise InputError("labels must be non-negative")
        if not self.dt_seconds > 0.0:
            raise InputError("dt_seconds must be positive")
        for arr in (iq, labels, shot_ids):
            arr.setflags(write=False)
        object.__setattr__(self, "iq", iq)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "shot_ids", shot_ids)

    def __len__(self) -> int:
        return self.iq.shape[0]

    @property
    def n_segments(self) -> int:
        return self.iq.shape[1]

    def record(self, index: int) -> ShotRecord:
        return ShotRecord(
            shot_id=int(self.shot_ids[index]),
            prepared_label=int(self.labels[index]),
            obs=ObservationSequence(points=self.iq[index], dt_seconds=self.dt_seconds),
        )

    def records(self) -> Iterator[ShotRecord]:
        for index in range(len(self)):
            yield self.record(index)

    def subset(self, indices) -> "Dataset":
        """New dataset holding the given shots (duplicates allowed)."""
        indices = np.asarray(indices, dtype=np.int64)
        if indices.ndim != 1 or indices.size < 1:
            raise InputError("indices must be a non-empty vector")
        return Dataset(
            iq=self.iq[indices],
            labels=self.labels[indices],
            shot_ids=self.shot_ids[indices],
            dt_seconds=self.dt_seconds,
            provenance=self.provenance,
            seed=self.seed,
            if_freq_hz=self.if_freq_hz,
            sample_rate_hz=self.sample_rate_hz,
        )

    def truncated(self, n_segments: int) -> "Dataset":
        """Keep only the first n_segments of every shot."""
        if not 1 <= n_segments <= self.n_segments:
            raise InputError("n_segments out of range")
        return Dataset(
            iq=self.iq[:, :n_segments],
            labels=self.labels,
            shot_ids=self.shot_ids,
            dt_seconds=self.dt_seconds,
            provenance=self.provenance,
            seed=self.seed,
            if_freq_hz=self.if_freq_hz,
            sample_rate_hz=self.sample_rate_hz,
        )

    # -- on-disk form -------------------------------------------------

    def to_csv(self, path: str | Path) -> None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_CSV_HEADER)
        seg_idx = range(self.n_segments)
        for s in range(len(self)):
            sid = int(self.shot_ids[s])
            lab = int(self.labels[s])
            shot = self.iq[s]
            writer.writerows(
                (sid, lab, t, repr(float(shot[t, 0])), repr(float(shot[t, 1])))
                for t in seg_idx
            )
        atomic_write_text(path, buf.getvalue())
        meta = {
            "dt_seconds": self.dt_seconds,
            "if_freq_hz": self.if_freq_hz,
            "sample_rate_hz": self.sample_rate_hz,
            "provenance": self.provenance,
            "seed": self.seed,
        }
        dump_json(meta, sidecar_path(path))

    @classmethod
    def from_csv(cls, path: str | Path) -> "Dataset":
        side = sidecar_path(path)
        if not side.exists():
            raise SchemaError(f"missing dataset sidecar {side}")
        meta = load_json(side)
        for key in ("dt_seconds",):
            if key not in meta:
                raise SchemaError(f"dataset sidecar missing {key!r}")
        try:
            f = open(path, newline="")
        except OSError as exc:
            raise SchemaError(f"cannot read dataset: {exc}") from exc
        with f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != _CSV_HEADER:
                raise SchemaError(f"bad dataset header {header!r}")
            shot_ids: list[int] = []
            labels: list[int] = []
            shots: list[list[tuple[float, float]]] = []
            current_id: int | None = None
            for row in reader:
                if len(row) != 5:
                    raise SchemaError(f"bad dataset row {row!r}")
                try:
                    sid, lab, seg = int(row[0]), int(row[1]), int(row[2])
                    i_val, q_val = float(row[3]), float(row[4])
                except ValueError as exc:
                    raise SchemaError(f"bad dataset row {row!r}") from exc
                if sid != current_id:
                    if seg != 0:
                        raise SchemaError(
                            f"shot {sid} does not start at segment 0"
                        )
                    current_id = sid
                    shot_ids.append(sid)
                    labels.append(lab)
                    shots.append([])
                else:
                    if lab != labels[-1]:
                        raise SchemaError(f"shot {sid} has conflicting labels")
                    if seg != len(shots[-1]):
                        raise SchemaError(
                            f"shot {sid} segments out of order at index {seg}"
                        )
                shots[-1].append((i_val, q_val))
        if not shots:
            raise SchemaError("dataset holds no shots")
        lengths = {len(s) for s in shots}
        if len(lengths) != 1:
            raise SchemaError(f"shots have mixed segment counts {sorted(lengths)}")
        return cls(
            iq=np.asarray(shots, dtype=float),
            labels=np.asarray(labels, dtype=np.int64),
            shot_ids=np.asarray(shot_ids, dtype=np.int64),
            dt_seconds=float(meta["dt_seconds"]),
            provenance=meta.get("provenance") or {},
            seed=meta.get("seed"),
            if_freq_hz=meta.get("if_freq_hz"),
            sample_rate_hz=meta.get("sample_rate_hz"),
        )
