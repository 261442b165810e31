# ============================================================================
# VOCABULARY MODULE
# ============================================================================
# Special tokens, artificial time tokens, measurement binning and the
# token <-> id vocabulary shared by the sequence models and the tree baseline
# Also fixes the sizes of the auxiliary embedding streams

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

VOCAB_FORMAT_VERSION = 1

# ============================================================================
# SPECIAL TOKENS
# ============================================================================
PAD, CLS, MASK, UNK = "[PAD]", "[CLS]", "[MASK]", "[UNK]"
VS, VE, REG = "[VS]", "[VE]", "[REG]"
WEEK_TOKENS = [f"[W{k}]" for k in range(4)]
MONTH_TOKENS = [f"[M{k}]" for k in range(1, 12)]
LONG_TERM = "[LT]"
ATT_TOKENS = WEEK_TOKENS + MONTH_TOKENS + [LONG_TERM]
SPECIAL_TOKENS = [PAD, CLS, MASK, UNK, VS, VE, REG] + ATT_TOKENS

PAD_ID = 0
CLS_ID = SPECIAL_TOKENS.index(CLS)
MASK_ID = SPECIAL_TOKENS.index(MASK)
UNK_ID = SPECIAL_TOKENS.index(UNK)
N_SPECIALS = len(SPECIAL_TOKENS)

CONCEPT_GROUPS = ("DX", "VIT", "LAB", "MED", "PRO")
MEASURED_GROUPS = ("VIT", "LAB", "MED")

# ============================================================================
# EMBEDDING STREAMS
# ============================================================================
TOKEN_TYPES = ("PAD", "CLS", "VS", "VE", "REG", "ATT") + CONCEPT_GROUPS
TYPE_IDS = {name: idx for idx, name in enumerate(TOKEN_TYPES)}
FIRST_CONCEPT_TYPE = TYPE_IDS["DX"]

AGE_MIN, AGE_MAX = 18, 110
MAX_WEEKS = 520
MAX_VISITS = 64
BMI_BINS = 10
SEX_IDS = {"F": 1, "M": 2}

# Row counts of the auxiliary tables; index 0 is PAD in every stream but segment
STREAM_TABLE_SIZES = {
    "type": len(TOKEN_TYPES),
    "age": AGE_MAX - AGE_MIN + 2,
    "sex": len(SEX_IDS) + 1,
    "bmi": BMI_BINS + 1,
    "time": MAX_WEEKS + 2,
    "visit": MAX_VISITS + 1,
    "segment": 2,
}


# ============================================================================
# TIME TOKENS
# ============================================================================
def att_token(gap_days):
    """
    Artificial time token for the gap between two consecutive visits.

    [W0]..[W3] below four weeks, [M1]..[M11] below 360 days, [LT] beyond.
    """
    if gap_days < 0:
        raise ValueError(f"Negative gap between visits: {gap_days} days")
    if gap_days < 28:
        return WEEK_TOKENS[int(gap_days // 7)]
    if gap_days < 360:
        return f"[M{max(1, int(gap_days // 30))}]"
    return LONG_TERM


# ============================================================================
# BINNING
# ============================================================================
@dataclass
class BinEdges:
    """Interior edges of a b-bin discretization; empty edges mean one degenerate bin."""

    b: int
    lo: float
    hi: float
    edges: list
    method: str = "uniform"

    def bin(self, values):
        v = np.asarray(values, dtype=np.float64)
        if not self.edges:
            return np.zeros(v.shape, dtype=np.int64)
        idx = np.searchsorted(np.asarray(self.edges), v, side="right")
        return np.clip(idx, 0, self.b - 1).astype(np.int64)

    def bin_one(self, value):
        return int(self.bin([value])[0])

    def to_dict(self):
        return {"b": self.b, "lo": self.lo, "hi": self.hi, "edges": list(self.edges), "method": self.method}

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def fit_bins(values, b, method="uniform"):
    """
    Fits b bins to training values.

    ``uniform`` splits [p1, p99] into b equal-width bins, clamping outliers into
    the outer bins; ``quantile`` places edges at the k/b percentiles.
    """
    if b < 1:
        raise ValueError(f"Number of bins must be positive, got {b}")
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise ValueError("fit_bins needs at least one finite value")
    lo, hi = (float(x) for x in np.percentile(v, [1, 99]))
    if hi <= lo:
        return BinEdges(b=b, lo=lo, hi=hi, edges=[], method=method)
    if method == "uniform":
        edges = [lo + (hi - lo) * k / b for k in range(1, b)]
    elif method == "quantile":
        edges = sorted(set(float(x) for x in np.percentile(v, [100.0 * k / b for k in range(1, b)])))
    else:
        raise ValueError(f"Unknown binning method '{method}'")
    return BinEdges(b=b, lo=lo, hi=hi, edges=edges, method=method)


# ============================================================================
# CONCEPT NAMES
# ============================================================================
def standardize_procedure(code):
    # A digit in the third position is replaced by a shared placeholder
    if len(code) >= 3 and code[2].isdigit():
        return code[:2] + "#" + code[3:]
    return code


def concept_name(event, icd_level):
    """Vocabulary name of an event before binning."""
    if event.group == "DX":
        return event.code[:icd_level]
    if event.group == "PRO":
        return standardize_procedure(event.code)
    return event.code


def measurement_token(name, bin_index):
    return f"{name}_{bin_index}"


# ============================================================================
# VOCABULARY
# ============================================================================
@dataclass
class Vocabulary:
    """
    Bidirectional token <-> id map.

    Ids: specials first (PAD = 0), then DX, VIT, LAB, MED and PRO ranges,
    lexicographic within each group.
    """

    b: int
    i: int
    tokens: list
    groups: list
    bin_edges: dict = field(default_factory=dict)
    bmi_edges: BinEdges = None
    bmi_median: float = float("nan")
    binning: str = "uniform"

    def __post_init__(self):
        if len(self.tokens) != len(self.groups):
            raise ValueError("tokens and groups must have equal length")
        self.token_to_id = {tok: idx for idx, tok in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        if self.tokens[:N_SPECIALS] != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens")
        self.group_ranges = {}
        for idx, group in enumerate(self.groups):
            lo, hi = self.group_ranges.get(group, (idx, idx))
            self.group_ranges[group] = (min(lo, idx), max(hi, idx + 1))

    def __len__(self):
        return len(self.tokens)

    def id(self, token):
        return self.token_to_id.get(token, UNK_ID)

    def token(self, idx):
        return self.tokens[idx]

    def event_token(self, event, value=None):
        # Token string of an event; value overrides the raw measurement (aggregation)
        name = concept_name(event, self.i)
        if event.group not in MEASURED_GROUPS:
            return name
        edges = self.bin_edges.get(name)
        if edges is None:
            return UNK
        measured = event.value if value is None else value
        return measurement_token(name, edges.bin_one(measured))

    def bmi_id(self, bmi):
        # 1..BMI_BINS; missing values take the training median
        value = self.bmi_median if bmi is None or not math.isfinite(bmi) else bmi
        if self.bmi_edges is None or not math.isfinite(value):
            return 1
        return self.bmi_edges.bin_one(value) + 1

    # ------------------------------------------------------------------
    # Serialization
    # ------------------------------------------------------------------
    def to_dict(self):
        return {
            "format_version": VOCAB_FORMAT_VERSION,
            "b": self.b,
            "i": self.i,
            "binning": self.binning,
            "tokens": [
                {"token": tok, "id": idx, "group": grp}
                for idx, (tok, grp) in enumerate(zip(self.tokens, self.groups))
            ],
            "bin_edges": {name: edges.to_dict() for name, edges in sorted(self.bin_edges.items())},
            "bmi_edges": self.bmi_edges.to_dict() if self.bmi_edges else None,
            "bmi_median": self.bmi_median,
        }

    @classmethod
    def from_dict(cls, data):
        version = data.get("format_version")
        if version != VOCAB_FORMAT_VERSION:
            raise ValueError(f"Unsupported vocabulary format version {version}")
        entries = sorted(data["tokens"], key=lambda e: e["id"])
        if [e["id"] for e in entries] != list(range(len(entries))):
            raise ValueError("vocabulary ids must be contiguous from 0")
        return cls(
            b=data["b"],
            i=data["i"],
            tokens=[e["token"] for e in entries],
            groups=[e["group"] for e in entries],
            bin_edges={n: BinEdges.from_dict(e) for n, e in data["bin_edges"].items()},
            bmi_edges=BinEdges.from_dict(data["bmi_edges"]) if data["bmi_edges"] else None,
            bmi_median=data["bmi_median"],
            binning=data.get("binning", "uniform"),
        )

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Vocabulary file not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))


def build_vocab(cohort, b, i, binning="uniform"):
    """
    Builds the vocabulary of a (training) cohort.

    Args:
        cohort: list of PatientRecord
        b: bins per measured concept
        i: ICD level (characters kept of DX codes)
        binning: ``uniform`` or ``quantile``
    """
    if not cohort:
        raise ValueError("build_vocab needs a non-empty cohort")
    names = {group: set() for group in CONCEPT_GROUPS}
    values = {}
    for rec in cohort:
        for enc in rec.encounters:
            for ev in enc.events:
                name = concept_name(ev, i)
                names[ev.group].add(name)
                if ev.group in MEASURED_GROUPS:
                    values.setdefault(name, []).append(ev.value)

    tokens = list(SPECIAL_TOKENS)
    groups = ["SPECIAL"] * N_SPECIALS
    for group in CONCEPT_GROUPS:
        if group in MEASURED_GROUPS:
            group_tokens = sorted(measurement_token(n, k) for n in names[group] for k in range(b))
        else:
            group_tokens = sorted(names[group])
        tokens.extend(group_tokens)
        groups.extend([group] * len(group_tokens))

    bin_edges = {name: fit_bins(vals, b, binning) for name, vals in sorted(values.items())}
    bmis = [rec.bmi for rec in cohort if rec.bmi is not None and math.isfinite(rec.bmi)]
    bmi_edges = fit_bins(bmis, BMI_BINS) if bmis else None
    bmi_median = float(np.median(bmis)) if bmis else float("nan")
    return Vocabulary(
        b=b, i=i, tokens=tokens, groups=groups, bin_edges=bin_edges,
        bmi_edges=bmi_edges, bmi_median=bmi_median, binning=binning,
    )
