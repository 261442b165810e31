# ============================================================================
# SEQUENCE BUILDER MODULE
# ============================================================================
# Turns patient records into model inputs: eligibility filtering, merging of
# back-to-back hospitalizations, history modes (cutoff, truncation,
# aggregation), the visit token grammar and the nine parallel index streams
# Also collates sequences into batches and summarizes sequence statistics

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np
import xarray as xr

from .cohort import ClinicalEvent, Encounter
from .vocabulary import (
    AGE_MAX, AGE_MIN, CLS, CONCEPT_GROUPS, MAX_VISITS, MAX_WEEKS, MEASURED_GROUPS, PAD_ID,
    REG, SEX_IDS, TYPE_IDS, VE, VS, att_token,
)

MERGE_GAP_DAYS = 1.0
DAYS_PER_YEAR = 365.25
STREAMS = ("concept", "type", "age", "sex", "bmi", "time", "visit", "segment", "position")

# Concept axis points: groups kept, in the incremental order DX, VIT, LAB, MED, PRO
CONCEPT_SETS = {
    "DX": ("DX",),
    "DX+VIT": ("DX", "VIT"),
    "DX+VIT+LAB": ("DX", "VIT", "LAB"),
    "DX+VIT+LAB+MED": ("DX", "VIT", "LAB", "MED"),
    "ALL": CONCEPT_GROUPS,
}


# ============================================================================
# ELIGIBILITY AND MERGING
# ============================================================================
def eligible_encounters(rec):
    # Hospitalizations with a diagnosis that did not end in death
    return [enc for enc in rec.encounters if not enc.in_hospital_death and enc.has_diagnosis()]


def merge_encounters(rec):
    """
    Merges consecutive encounters less than 24 hours apart.

    Chains merge transitively; the result has no remaining gap < 24 h.
    """
    merged = []
    for enc in rec.encounters:
        if merged and enc.admit - merged[-1].discharge < MERGE_GAP_DAYS:
            last = merged[-1]
            merged[-1] = Encounter(
                admit=min(last.admit, enc.admit),
                discharge=max(last.discharge, enc.discharge),
                events=last.events + enc.events,
                in_hospital_death=last.in_hospital_death or enc.in_hospital_death,
            )
        else:
            merged.append(Encounter(enc.admit, enc.discharge, list(enc.events), enc.in_hospital_death))
    return replace(rec, encounters=merged)


def prepare_record(rec):
    return merge_encounters(replace(rec, encounters=eligible_encounters(rec)))


# ============================================================================
# HISTORY MODES
# ============================================================================
@dataclass(frozen=True)
class HistoryMode:
    """Cutoff, Truncate(years) or Aggregate(window_days)."""

    mode: str = "Cutoff"
    years: float = None
    window_days: float = None

    def __post_init__(self):
        if self.mode == "Cutoff":
            if self.years is not None or self.window_days is not None:
                raise ValueError("Cutoff takes no parameter")
        elif self.mode == "Truncate":
            if self.years is None or self.years < 0 or self.window_days is not None:
                raise ValueError(f"Truncate needs years >= 0 only, got {self.years}")
        elif self.mode == "Aggregate":
            if self.window_days is None or self.window_days <= 0 or self.years is not None:
                raise ValueError(f"Aggregate needs window_days > 0 only, got {self.window_days}")
        else:
            raise ValueError(f"Unknown history mode '{self.mode}'")

    @classmethod
    def parse(cls, name):
        # Cutoff, Truncate0, Truncate1y, Truncate3y, Agg1d, Agg2d
        if name == "Cutoff":
            return cls()
        match = re.fullmatch(r"Truncate(\d+)y?", name)
        if match:
            return cls("Truncate", years=float(match.group(1)))
        match = re.fullmatch(r"Agg(\d+)d", name)
        if match:
            return cls("Aggregate", window_days=float(match.group(1)))
        raise ValueError(f"Unknown history mode '{name}'")

    @property
    def label(self):
        if self.mode == "Truncate":
            return "Truncate0" if self.years == 0 else f"Truncate{int(self.years)}y"
        if self.mode == "Aggregate":
            return f"Agg{int(self.window_days)}d"
        return "Cutoff"


def truncate_history(encounters, years):
    # Events older than `years` before index discharge are dropped; the latest visit stays whole
    if not encounters:
        return []
    horizon = encounters[-1].discharge - years * DAYS_PER_YEAR
    kept = []
    for enc in encounters[:-1]:
        events = [ev for ev in enc.events if ev.timestamp >= horizon]
        if events and years > 0:
            kept.append(Encounter(max(enc.admit, horizon), enc.discharge, events))
    kept.append(encounters[-1])
    return kept


def aggregate_measurements(encounter, window_days):
    """
    Replaces repeated measurements of one concept within w-day windows
    (aligned to admission) by their mean, placed at the first occurrence.
    """
    groups = {}
    order = []
    for ev in encounter.events:
        if ev.group not in MEASURED_GROUPS:
            order.append(ev)
            continue
        key = (ev.group, ev.code, math.floor((ev.timestamp - encounter.admit) / window_days))
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(ev)
    events = []
    for item in order:
        if isinstance(item, ClinicalEvent):
            events.append(item)
            continue
        bucket = groups[item]
        first = bucket[0]
        mean_value = float(np.mean([ev.value for ev in bucket]))
        events.append(ClinicalEvent(first.group, first.code, first.timestamp, mean_value))
    return Encounter(encounter.admit, encounter.discharge, events, encounter.in_hospital_death)


def apply_history(encounters, hist):
    if hist.mode == "Truncate":
        return truncate_history(encounters, hist.years)
    if hist.mode == "Aggregate":
        return [aggregate_measurements(enc, hist.window_days) for enc in encounters]
    return encounters


# ============================================================================
# TOKENIZED SEQUENCE
# ============================================================================
@dataclass
class TokenizedSequence:
    concept_ids: np.ndarray
    type_ids: np.ndarray
    age_ids: np.ndarray
    sex_ids: np.ndarray
    bmi_ids: np.ndarray
    time_week_ids: np.ndarray
    visit_ids: np.ndarray
    segment_ids: np.ndarray
    position_ids: np.ndarray
    mask: np.ndarray
    label: int = None
    patient_id: str = None
    n_visits: int = 0
    span_days: float = 0.0
    tokens: list = field(default=None, repr=False)

    @property
    def length(self):
        return int(self.mask.sum())

    def stream(self, name):
        return getattr(self, STREAM_FIELDS[name])

    def to_dict(self):
        data = {name: self.stream(name).tolist() for name in STREAMS}
        data.update(mask=self.mask.astype(int).tolist(), label=self.label, patient_id=self.patient_id)
        return data


STREAM_FIELDS = {
    "concept": "concept_ids", "type": "type_ids", "age": "age_ids", "sex": "sex_ids",
    "bmi": "bmi_ids", "time": "time_week_ids", "visit": "visit_ids",
    "segment": "segment_ids", "position": "position_ids",
}


def _raw_tokens(encounters, vocab):
    # (token, type, timestamp, visit index) in grammar order
    out = [(CLS, "CLS", None, 0)]
    for v, enc in enumerate(encounters):
        if v > 0:
            out.append((att_token(enc.admit - encounters[v - 1].discharge), "ATT", enc.admit, v))
        out.append((VS, "VS", enc.admit, v))
        for ev in enc.events:
            out.append((vocab.event_token(ev), ev.group, ev.timestamp, v))
        out.append((VE, "VE", enc.discharge, v))
        out.append((REG, "REG", enc.discharge, v))
    return out


def history_tokens(rec, vocab, hist=None):
    """Full grammar token list of a record under a history mode, before clipping."""
    hist = hist or HistoryMode()
    encounters = apply_history(prepare_record(rec).encounters, hist)
    if not encounters:
        raise ValueError(f"empty trajectory for patient {rec.id}")
    return _raw_tokens(encounters, vocab), encounters


def token_count(rec, vocab, hist=None):
    return len(history_tokens(rec, vocab, hist)[0])


def tokenize(rec, vocab, C, hist=None, task=None, concepts=None):
    """
    Builds the padded index streams of one record.

    Args:
        rec: PatientRecord
        vocab: Vocabulary fitted on the training split
        C: context length; [CLS] plus the rightmost C - 1 tokens are kept,
            less a leading [REG] cut off from its [VE]
        hist: HistoryMode (Cutoff by default)
        task: label key, or None for unlabeled pre-training data
        concepts: concept groups to keep; excluded groups are removed after
            clipping and the sequence is right-padded without back-fill
    """
    if C < 2:
        raise ValueError(f"Context length must be at least 2, got {C}")
    raw, encounters = history_tokens(rec, vocab, hist)
    kept = raw
    if len(raw) > C:
        tail = raw[1:][-(C - 1):]
        # a [REG] whose [VE] fell outside the window is dropped
        if tail[0][1] == "REG":
            tail = tail[1:]
        kept = [raw[0]] + tail
    if concepts is not None:
        allowed = set(concepts)
        kept = [t for t in kept if t[1] not in CONCEPT_GROUPS or t[1] in allowed]

    index_time = encounters[-1].discharge
    stamps = [t[2] for t in kept[1:] if t[2] is not None]
    t0 = min(stamps) if stamps else index_time
    first_visit = kept[1][3] if len(kept) > 1 else 0
    cls_stamp = t0

    L = len(kept)
    streams = {name: np.zeros(C, dtype=np.int64) for name in STREAMS}
    visit_numbers = {}
    sex_id = SEX_IDS.get(rec.sex, 0)
    bmi_id = vocab.bmi_id(rec.bmi)
    for pos, (token, kind, stamp, visit) in enumerate(kept):
        stamp = cls_stamp if stamp is None else stamp
        visit = first_visit if kind == "CLS" else visit
        number = visit_numbers.setdefault(visit, len(visit_numbers) + 1)
        age = rec.age_at_index - (index_time - stamp) / DAYS_PER_YEAR
        streams["concept"][pos] = vocab.id(token)
        streams["type"][pos] = TYPE_IDS[kind]
        streams["age"][pos] = int(np.clip(math.floor(age), AGE_MIN, AGE_MAX)) - AGE_MIN + 1
        streams["sex"][pos] = sex_id
        streams["bmi"][pos] = bmi_id
        streams["time"][pos] = min(int((stamp - t0) // 7), MAX_WEEKS) + 1
        streams["visit"][pos] = min(number, MAX_VISITS)
        streams["segment"][pos] = (min(number, MAX_VISITS) - 1) % 2
    streams["position"] = np.arange(C, dtype=np.int64)
    mask = np.zeros(C, dtype=bool)
    mask[:L] = True
    streams["concept"][~mask] = PAD_ID

    return TokenizedSequence(
        concept_ids=streams["concept"], type_ids=streams["type"], age_ids=streams["age"],
        sex_ids=streams["sex"], bmi_ids=streams["bmi"], time_week_ids=streams["time"],
        visit_ids=streams["visit"], segment_ids=streams["segment"],
        position_ids=streams["position"], mask=mask,
        label=None if task is None else int(rec.labels[task]),
        patient_id=rec.id,
        n_visits=len(visit_numbers),
        span_days=float(max(stamps) - t0) if stamps else 0.0,
        tokens=[t[0] for t in kept],
    )


def tokenize_cohort(cohort, vocab, C, hist=None, task=None, concepts=None):
    return [tokenize(rec, vocab, C, hist, task, concepts) for rec in cohort]


# ============================================================================
# BATCHING
# ============================================================================
def collate(seqs):
    """
    Stacks sequences into a batch trimmed to the longest real length.

    Returns a dict of [B, L] integer streams plus ``mask`` and ``label``.
    """
    if not seqs:
        raise ValueError("collate needs at least one sequence")
    width = max(max(s.length for s in seqs), 1)
    batch = {name: np.stack([s.stream(name)[:width] for s in seqs]) for name in STREAMS}
    batch["mask"] = np.stack([s.mask[:width] for s in seqs])
    batch["label"] = np.array([-1 if s.label is None else s.label for s in seqs], dtype=np.int64)
    return batch


def iterate_batches(seqs, batch_size, rng=None):
    # Shuffled when an rng is given, in order otherwise
    order = np.arange(len(seqs)) if rng is None else rng.permutation(len(seqs))
    for start in range(0, len(seqs), batch_size):
        yield collate([seqs[i] for i in order[start:start + batch_size]])


# ============================================================================
# STATISTICS
# ============================================================================
def sequence_statistics(seqs):
    """
    Quartiles of token count, visit count and first-to-last event span (days).

    Returns an xarray Dataset with a ``quantile`` dimension (0.25, 0.5, 0.75).
    """
    if not seqs:
        raise ValueError("sequence_statistics needs at least one sequence")
    q = [0.25, 0.5, 0.75]
    values = {
        "tokens": [s.length for s in seqs],
        "visits": [s.n_visits for s in seqs],
        "span_days": [s.span_days for s in seqs],
    }
    return xr.Dataset(
        {name: ("quantile", np.quantile(np.asarray(v, dtype=np.float64), q)) for name, v in values.items()},
        coords={"quantile": q},
        attrs={"n_sequences": len(seqs)},
    )
