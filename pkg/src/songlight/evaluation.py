"""Chorus-overlap scoring of highlights against section annotations.

A highlight is scored against the annotated section it overlaps most (ties
break to the earlier section start, then annotation order): recall is the
overlapped fraction of the section, precision the overlapped fraction of the
highlight, and F their harmonic mean.  No overlap with any section scores
zero on all three.  Corpus numbers are unweighted means over songs,
zero-overlap songs included.

Arithmetic here is plain Python floats so that a literal re-implementation of
the formulas produces bit-identical numbers.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .extraction import Highlight


class AnnotationError(ValueError):
    """Raised for malformed section annotations."""


@dataclass
class ChorusAnnotation:
    """Labeled sections of one song; sections are half-open [start, end)."""

    clip_id: str
    duration_sec: float
    sections: list[tuple[float, float, str]]

    def __post_init__(self):
        if self.duration_sec <= 0:
            raise AnnotationError(f"{self.clip_id}: duration must be positive")
        cleaned = []
        for sec in self.sections:
            start, end, label = sec
            start, end = float(start), float(end)
            if not (0.0 <= start < end <= self.duration_sec + 1e-9):
                raise AnnotationError(
                    f"{self.clip_id}: section [{start}, {end}) outside [0, {self.duration_sec}]")
            cleaned.append((start, end, str(label)))
        if not cleaned:
            raise AnnotationError(f"{self.clip_id}: needs at least one section")
        self.sections = cleaned


@dataclass
class SongScore:
    clip_id: str
    recall: float
    precision: float
    f_measure: float
    matched_section: int | None  # index into the annotation's section list


@dataclass
class EvalReport:
    method: str
    per_song: list[SongScore] = field(default_factory=list)

    @property
    def mean_recall(self) -> float:
        return sum(s.recall for s in self.per_song) / len(self.per_song)

    @property
    def mean_precision(self) -> float:
        return sum(s.precision for s in self.per_song) / len(self.per_song)

    @property
    def mean_f(self) -> float:
        return sum(s.f_measure for s in self.per_song) / len(self.per_song)


def interval_overlap(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Length of the intersection of two half-open intervals."""
    a_start, a_end = a
    b_start, b_end = b
    if a_end < a_start or b_end < b_start:
        raise ValueError("intervals must satisfy start <= end")
    lo = a_start if a_start > b_start else b_start
    hi = a_end if a_end < b_end else b_end
    gap = hi - lo
    return gap if gap > 0.0 else 0.0


def _score_interval(start: float, end: float, ann: ChorusAnnotation,
                    clip_id: str) -> SongScore:
    best_idx = None
    best_overlap = 0.0
    best_start = None
    for i, (sec_start, sec_end, _) in enumerate(ann.sections):
        ov = interval_overlap((start, end), (sec_start, sec_end))
        if ov > best_overlap or (ov == best_overlap and ov > 0.0
                                 and best_start is not None and sec_start < best_start):
            best_idx = i
            best_overlap = ov
            best_start = sec_start
    if best_idx is None:
        return SongScore(clip_id, 0.0, 0.0, 0.0, None)
    sec_start, sec_end, _ = ann.sections[best_idx]
    recall = best_overlap / (sec_end - sec_start)
    precision = best_overlap / (end - start)
    f = 2.0 * recall * precision / (recall + precision)
    return SongScore(clip_id, recall, precision, f, best_idx)


def score_highlight(highlight: Highlight, ann: ChorusAnnotation) -> SongScore:
    """Recall/precision/F of one highlight against one song's sections."""
    return _score_interval(highlight.start_sec, highlight.end_sec, ann, ann.clip_id)


def upper_bound(ann: ChorusAnnotation, target_sec: float = 30.0,
                grid_sec: float = 0.1) -> tuple[float, float, float]:
    """Best achievable (R, P, F) for a fixed-length highlight on this song.

    Brute force over start positions on a ``grid_sec`` lattice, augmented
    with every section start and every (section end - target) so that exact
    alignment is always among the candidates.  Ties keep the earliest start.
    """
    if target_sec <= 0 or grid_sec <= 0:
        raise ValueError("target and grid must be positive")
    duration = ann.duration_sec
    if duration <= target_sec:
        s = _score_interval(0.0, duration, ann, ann.clip_id)
        return s.recall, s.precision, s.f_measure
    limit = duration - target_sec
    candidates = set()
    k = 0
    while True:
        start = k * grid_sec
        if start > limit:
            break
        candidates.add(start)
        k += 1
    candidates.add(limit)
    for sec_start, sec_end, _ in ann.sections:
        candidates.add(min(max(sec_start, 0.0), limit))
        candidates.add(min(max(sec_end - target_sec, 0.0), limit))
    best = (0.0, 0.0, 0.0)
    best_start = None
    for start in sorted(candidates):
        s = _score_interval(start, start + target_sec, ann, ann.clip_id)
        if s.f_measure > best[2]:
            best = (s.recall, s.precision, s.f_measure)
            best_start = start
    return best


def evaluate_corpus(highlights_by_method: dict[str, list[Highlight]],
                    annotations: dict[str, ChorusAnnotation],
                    clip_ids_by_method: dict[str, list[str]]) -> list[EvalReport]:
    """Score every (method, song) pair; songs missing annotations are an error."""
    reports = []
    for method, highlights in highlights_by_method.items():
        clip_ids = clip_ids_by_method[method]
        if len(clip_ids) != len(highlights):
            raise AnnotationError(
                f"method {method!r}: {len(highlights)} highlights but "
                f"{len(clip_ids)} clip ids")
        report = EvalReport(method=method)
        for clip_id, hl in zip(clip_ids, highlights):
            ann = annotations.get(clip_id)
            if ann is None:
                raise AnnotationError(f"no annotation for clip {clip_id!r}")
            report.per_song.append(score_highlight(hl, ann))
        if not report.per_song:
            raise AnnotationError(f"method {method!r} has no scored songs")
        reports.append(report)
    return reports


def read_annotations(path) -> dict[str, ChorusAnnotation]:
    """Read JSON-lines annotations: clip_id, duration_sec, sections."""
    annotations = {}
    with Path(path).open() as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                ann = ChorusAnnotation(clip_id=row["clip_id"],
                                       duration_sec=float(row["duration_sec"]),
                                       sections=[tuple(s) for s in row["sections"]])
            except (KeyError, TypeError, ValueError) as exc:
                raise AnnotationError(f"{path}:{line_no}: bad annotation: {exc}") from exc
            if ann.clip_id in annotations:
                raise AnnotationError(f"{path}: duplicate clip_id {ann.clip_id!r}")
            annotations[ann.clip_id] = ann
    if not annotations:
        raise AnnotationError(f"{path}: no annotations found")
    return annotations


def write_report_csv(path, reports: list[EvalReport]) -> None:
    """Per-song rows plus one ``mean`` summary row per method."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "clip_id", "R", "P", "F"])
        for report in reports:
            for s in report.per_song:
                writer.writerow([report.method, s.clip_id, repr(s.recall),
                                 repr(s.precision), repr(s.f_measure)])
            writer.writerow([report.method, "mean", repr(report.mean_recall),
                             repr(report.mean_precision), repr(report.mean_f)])
