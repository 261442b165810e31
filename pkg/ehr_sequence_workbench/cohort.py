# ============================================================================
# COHORT SYNTHESIS MODULE
# ============================================================================
# Generates synthetic patient cohorts calibrated to published summary
# statistics (visits, tokens, prevalences) with a plantable outcome signal:
# additive risk codes plus an order-dependent bonus that a frequency-bag
# model cannot see. Cohorts are written as JSON-Lines

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .metrics import auroc

CONCEPT_GROUPS = ("DX", "VIT", "LAB", "MED", "PRO")
TASKS = ("T1", "T2", "T3")
TASK_TRAJECTORY = {"T1": "initial", "T2": "initial", "T3": "latest"}
DEFAULT_PREVALENCES = {"T1": 0.397, "T2": 0.248, "T3": 0.467}

# Calibration targets per trajectory: median visits and tokens
TRAJECTORIES = {
    "initial": dict(target_median_visits=2, target_median_tokens=153),
    "latest": dict(target_median_visits=4, target_median_tokens=369),
}

MAX_ENCOUNTERS = 61
AGE_RANGE = (18, 110)
EPOCH_START_DAY = 18000.0
CALIBRATION_STREAM, PATIENT_STREAM, BAYES_STREAM = 1, 2, 3
CALIBRATION_DRAWS = 20000

# Share of clinical events per concept group within an encounter
GROUP_SHARES = {"DX": 0.15, "VIT": 0.35, "LAB": 0.25, "MED": 0.15, "PRO": 0.10}

# ============================================================================
# CONCEPT INVENTORY
# ============================================================================
# name -> (mean, sd, lower clip, upper clip)
VITAL_SIGNS = {
    "body_temperature": (37.0, 0.6, 34.0, 41.5),
    "diastolic_bp": (72.0, 12.0, 30.0, 140.0),
    "systolic_bp": (128.0, 20.0, 60.0, 230.0),
    "pulse_rate": (82.0, 16.0, 30.0, 180.0),
    "respiratory_rate": (19.0, 4.0, 6.0, 45.0),
    "oxygen_saturation": (94.0, 3.5, 70.0, 100.0),
}

LABORATORIES = {
    "albumin": (34.0, 5.0, 10.0, 55.0),
    "bilirubin": (14.0, 8.0, 2.0, 200.0),
    "blood_urea_nitrogen": (9.0, 5.0, 1.0, 60.0),
    "c_reactive_protein": (30.0, 40.0, 0.5, 400.0),
    "creatinine": (110.0, 50.0, 30.0, 900.0),
    "ferritin": (200.0, 180.0, 5.0, 2000.0),
    "fasting_glucose": (6.5, 1.8, 2.5, 25.0),
    "plasma_glucose": (7.5, 2.5, 2.5, 35.0),
    "hemoglobin": (125.0, 18.0, 50.0, 190.0),
    "glycated_hemoglobin": (48.0, 12.0, 20.0, 130.0),
    "nt_probnp": (3500.0, 3000.0, 50.0, 35000.0),
    "potassium": (4.2, 0.5, 2.0, 7.5),
    "sodium": (139.0, 4.0, 115.0, 160.0),
    "alanine_transaminase": (30.0, 20.0, 3.0, 500.0),
    "aspartate_transaminase": (32.0, 22.0, 5.0, 600.0),
    "troponin_i": (40.0, 60.0, 1.0, 5000.0),
    "troponin_t": (35.0, 50.0, 1.0, 5000.0),
    "uric_acid": (400.0, 100.0, 100.0, 900.0),
}

MEDICATION_CLASSES = ("A02B", "A08A", "B01A", "B03A", "C01A", "C03C", "C07A", "C09A", "H03A", "R03A")
MEDICATION_ROUTES = ("oral", "iv", "sc", "inhal")
PROCEDURE_PREFIXES = ("F", "G", "J", "N", "TF", "V", "XF", "ZF", "AF", "AG", "AP", "DF", "DG", "DP")


# ============================================================================
# DOMAIN TYPES
# ============================================================================
@dataclass
class ClinicalEvent:
    group: str
    code: str
    timestamp: float
    value: float = None

    def __post_init__(self):
        if self.group not in CONCEPT_GROUPS:
            raise ValueError(f"Unknown concept group '{self.group}'")
        measured = self.group in ("VIT", "LAB", "MED")
        if measured and self.value is None:
            raise ValueError(f"{self.group} event '{self.code}' needs a value")
        if not measured and self.value is not None:
            raise ValueError(f"{self.group} event '{self.code}' carries no value")


@dataclass
class Encounter:
    admit: float
    discharge: float
    events: list = field(default_factory=list)
    in_hospital_death: bool = False

    def __post_init__(self):
        if self.admit > self.discharge:
            raise ValueError(f"Encounter admit {self.admit} after discharge {self.discharge}")
        self.events = sorted(self.events, key=lambda ev: ev.timestamp)

    def has_diagnosis(self):
        return any(ev.group == "DX" for ev in self.events)


@dataclass
class PatientRecord:
    id: str
    age_at_index: int
    sex: str
    bmi: float
    encounters: list
    labels: dict
    trajectory: str = "initial"

    def __post_init__(self):
        if not AGE_RANGE[0] <= self.age_at_index <= AGE_RANGE[1]:
            raise ValueError(f"Patient {self.id}: age_at_index {self.age_at_index} outside {AGE_RANGE}")
        for before, after in zip(self.encounters, self.encounters[1:]):
            if after.admit < before.admit:
                raise ValueError(
                    f"Patient {self.id}: encounters out of chronological order "
                    f"(admit {after.admit} follows {before.admit})"
                )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        encounters = [
            Encounter(
                admit=enc["admit"], discharge=enc["discharge"],
                events=[ClinicalEvent(**ev) for ev in enc["events"]],
                in_hospital_death=enc.get("in_hospital_death", False),
            )
            for enc in data["encounters"]
        ]
        return cls(
            id=data["id"], age_at_index=data["age_at_index"], sex=data["sex"],
            bmi=data["bmi"], encounters=encounters, labels=dict(data["labels"]),
            trajectory=data.get("trajectory", "initial"),
        )


@dataclass
class SignalSpec:
    """
    Planted outcome signal.

    Each risk code is carried with probability ``carrier_rate`` and adds its
    weight to the risk score. With probability ``order_rate`` a patient carries
    both codes of ``order_pair``; the bonus applies only when the first code
    occurs before the second.
    """

    risk_codes: list = field(default_factory=lambda: [("E119", 0.8), ("N184", 0.6), ("J449", 0.5)])
    order_pair: tuple = ("I214", "I509", 2.5)
    noise_sigma: float = 0.5
    carrier_rate: float = 0.25
    order_rate: float = 0.5

    def __post_init__(self):
        self.risk_codes = [(str(code), float(weight)) for code, weight in self.risk_codes]
        self.order_pair = (str(self.order_pair[0]), str(self.order_pair[1]), float(self.order_pair[2]))
        if not all(math.isfinite(w) for _, w in self.risk_codes) or not math.isfinite(self.order_pair[2]):
            raise ValueError("Signal weights must be finite")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        for rate in (self.carrier_rate, self.order_rate):
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"Signal rates must lie in [0, 1], got {rate}")

    @property
    def reserved_categories(self):
        # 3-character DX categories the background generator never emits
        codes = [c for c, _ in self.risk_codes] + list(self.order_pair[:2])
        return sorted({c[:3] for c in codes})

    @classmethod
    def zero(cls):
        return cls(risk_codes=[], order_pair=("I214", "I509", 0.0), noise_sigma=0.0)

    def to_dict(self):
        return {
            "risk_codes": [list(rc) for rc in self.risk_codes],
            "order_pair": list(self.order_pair),
            "noise_sigma": self.noise_sigma,
            "carrier_rate": self.carrier_rate,
            "order_rate": self.order_rate,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass
class SynthConfig:
    n_patients: int
    seed: int
    target_median_tokens: int = 153
    target_median_visits: int = 2
    prevalence_targets: dict = field(default_factory=lambda: dict(DEFAULT_PREVALENCES))
    signal_spec: SignalSpec = field(default_factory=SignalSpec)
    trajectory: str = "initial"
    code_list_sizes: dict = field(default_factory=lambda: {"DX": 1500, "PRO": 800, "MED": 120})
    zipf_exponent: float = 1.1
    gap_median_days: float = 90.0
    gap_sigma: float = 1.4
    in_hospital_death_rate: float = 0.25
    bmi_missing_rate: float = 0.3
    catalog_seed: int = 2024

    def __post_init__(self):
        if isinstance(self.signal_spec, dict):
            self.signal_spec = SignalSpec.from_dict(self.signal_spec)
        if self.n_patients < 1:
            raise ValueError(f"n_patients must be at least 1, got {self.n_patients}")
        if self.target_median_visits < 1 or self.target_median_tokens < 1:
            raise ValueError("Calibration targets must be positive")
        for task in TASKS:
            p = self.prevalence_targets.get(task)
            if p is None or not 0.0 < p < 1.0:
                raise ValueError(f"Prevalence target for {task} must lie in (0, 1), got {p}")
        if self.trajectory not in TRAJECTORIES:
            raise ValueError(f"Unknown trajectory '{self.trajectory}'")

    @classmethod
    def for_trajectory(cls, trajectory, n_patients, seed, **overrides):
        if trajectory not in TRAJECTORIES:
            raise ValueError(f"Unknown trajectory '{trajectory}', expected one of {sorted(TRAJECTORIES)}")
        fields = dict(TRAJECTORIES[trajectory], trajectory=trajectory)
        fields.update(overrides)
        return cls(n_patients=n_patients, seed=seed, **fields)

    def to_dict(self):
        data = asdict(self)
        data["signal_spec"] = self.signal_spec.to_dict()
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


# ============================================================================
# CODE CATALOG
# ============================================================================
@dataclass
class CodeCatalog:
    dx: list
    pro: list
    med: list

    def zipf_weights(self, n, exponent):
        w = 1.0 / np.arange(1, n + 1) ** exponent
        return w / w.sum()


def build_catalog(cfg):
    """Synthetic code lists; reserved DX categories never appear in the background."""
    rng = np.random.default_rng(cfg.catalog_seed)
    reserved = set(cfg.signal_spec.reserved_categories)
    letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"

    dx = []
    seen = set()
    while len(dx) < cfg.code_list_sizes["DX"]:
        category = f"{letters[rng.integers(26)]}{rng.integers(100):02d}"
        if category in reserved:
            continue
        # 1-6 subcodes per category so the 3-character level collapses codes
        for sub in rng.choice(10, size=int(rng.integers(1, 7)), replace=False):
            code = f"{category}{sub}"
            if code not in seen and len(dx) < cfg.code_list_sizes["DX"]:
                seen.add(code)
                dx.append(code)

    pro = []
    seen = set()
    alphanumerics = letters + "0123456789"
    while len(pro) < cfg.code_list_sizes["PRO"]:
        prefix = PROCEDURE_PREFIXES[rng.integers(len(PROCEDURE_PREFIXES))]
        tail = "".join(alphanumerics[rng.integers(len(alphanumerics))] for _ in range(5 - len(prefix)))
        code = prefix + tail
        if code not in seen:
            seen.add(code)
            pro.append(code)

    med = []
    seen = set()
    while len(med) < cfg.code_list_sizes["MED"]:
        atc = MEDICATION_CLASSES[rng.integers(len(MEDICATION_CLASSES))] + letters[rng.integers(8)]
        code = f"{atc}_{MEDICATION_ROUTES[rng.integers(len(MEDICATION_ROUTES))]}"
        if code not in seen:
            seen.add(code)
            med.append(code)
    return CodeCatalog(dx=dx, pro=pro, med=med)


# ============================================================================
# RISK MODEL
# ============================================================================
def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def sample_risk_components(spec, n, rng):
    """
    Vectorized draw of the planting process.

    Returns (carriers [n, K] bool, order_active [n] bool, a_first [n] bool, score [n]).
    """
    weights = np.array([w for _, w in spec.risk_codes], dtype=np.float64)
    carriers = rng.random((n, len(weights))) < spec.carrier_rate
    order_active = rng.random(n) < spec.order_rate
    a_first = rng.random(n) < 0.5
    score = carriers.astype(np.float64) @ weights + spec.order_pair[2] * (order_active & a_first)
    return carriers, order_active, a_first, score


def calibrate_base(cfg, task):
    """Intercept whose expected prevalence under the planting process equals the target."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, CALIBRATION_STREAM]))
    _, _, _, score = sample_risk_components(cfg.signal_spec, CALIBRATION_DRAWS, rng)
    logits = score + cfg.signal_spec.noise_sigma * rng.standard_normal(CALIBRATION_DRAWS)
    target = cfg.prevalence_targets[task]
    lo, hi = -30.0, 30.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if _sigmoid(mid + logits).mean() < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def bayes_rate(cfg, n_mc=100_000, task=None):
    """
    Monte-Carlo AUROC of the true risk score for one task.

    The observable part of the risk score is the best any model can rank by;
    the noise term is unobservable.
    """
    if n_mc < 10_000:
        raise ValueError(f"bayes_rate needs n_mc >= 10000, got {n_mc}")
    task = task or next(t for t in TASKS if TASK_TRAJECTORY[t] == cfg.trajectory)
    base = calibrate_base(cfg, task)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, BAYES_STREAM]))
    _, _, _, score = sample_risk_components(cfg.signal_spec, n_mc, rng)
    noise = cfg.signal_spec.noise_sigma * rng.standard_normal(n_mc)
    labels = (rng.random(n_mc) < _sigmoid(base + score + noise)).astype(int)
    if labels.min() == labels.max():
        return 0.5
    return auroc(labels, score)


# ============================================================================
# PATIENT GENERATION
# ============================================================================
def _negative_binomial(rng, mean, r=2.0):
    if mean <= 0:
        return 0
    return int(rng.negative_binomial(r, r / (r + mean)))


def _measurement(rng, spec):
    mean, sd, lo, hi = spec
    return float(np.clip(rng.normal(mean, sd), lo, hi))


def _encounter_times(rng, cfg, n_enc):
    # Built backwards from the index admission
    index_admit = EPOCH_START_DAY + float(rng.uniform(0.0, 3650.0))
    stays = 1.0 + rng.poisson(4.0, size=n_enc).astype(np.float64)
    gaps = rng.lognormal(math.log(cfg.gap_median_days), cfg.gap_sigma, size=max(n_enc - 1, 0))
    admits = [index_admit]
    for k in range(n_enc - 2, -1, -1):
        discharge = admits[0] - gaps[k]
        admits.insert(0, discharge - stays[k])
    return [(a, a + s) for a, s in zip(admits, stays)]


def _background_events(rng, cfg, catalog, admit, discharge, weights):
    per_visit = max(cfg.target_median_tokens / cfg.target_median_visits - 4.0, 5.0)
    events = []

    def stamp():
        return float(rng.uniform(admit, discharge))

    n_dx = 1 + _negative_binomial(rng, GROUP_SHARES["DX"] * per_visit - 1.0)
    for idx in rng.choice(len(catalog.dx), size=n_dx, p=weights["DX"]):
        events.append(ClinicalEvent("DX", catalog.dx[idx], stamp()))
    for idx in rng.choice(len(catalog.pro), size=_negative_binomial(rng, GROUP_SHARES["PRO"] * per_visit), p=weights["PRO"]):
        events.append(ClinicalEvent("PRO", catalog.pro[idx], stamp()))
    for idx in rng.choice(len(catalog.med), size=_negative_binomial(rng, GROUP_SHARES["MED"] * per_visit), p=weights["MED"]):
        events.append(ClinicalEvent("MED", catalog.med[idx], stamp(), float(np.round(rng.lognormal(3.0, 0.8), 2))))
    vit_names, lab_names = list(VITAL_SIGNS), list(LABORATORIES)
    for _ in range(_negative_binomial(rng, GROUP_SHARES["VIT"] * per_visit)):
        name = vit_names[rng.integers(len(vit_names))]
        events.append(ClinicalEvent("VIT", name, stamp(), _measurement(rng, VITAL_SIGNS[name])))
    for _ in range(_negative_binomial(rng, GROUP_SHARES["LAB"] * per_visit)):
        name = lab_names[rng.integers(len(lab_names))]
        events.append(ClinicalEvent("LAB", name, stamp(), _measurement(rng, LABORATORIES[name])))
    return events


def _plant(rng, encounters, code, before=None, after=None):
    # DX event in a random encounter, optionally strictly before/after a time
    if before is not None:
        enc = encounters[before[0]]
        t = float(rng.uniform(enc.admit, before[1]))
    elif after is not None:
        enc = encounters[after[0]]
        t = float(rng.uniform(after[1], enc.discharge))
        t = max(t, np.nextafter(after[1], np.inf))
    else:
        enc = encounters[int(rng.integers(len(encounters)))]
        t = float(rng.uniform(enc.admit, enc.discharge))
    enc.events.append(ClinicalEvent("DX", code, t))
    return t


def _plant_order_pair(rng, encounters, first, second):
    if len(encounters) == 1:
        enc = encounters[0]
        mid = 0.5 * (enc.admit + enc.discharge)
        _plant(rng, encounters, first, before=(0, mid))
        _plant(rng, encounters, second, after=(0, mid))
        return
    i, j = sorted(rng.choice(len(encounters), size=2, replace=False))
    _plant(rng, encounters, first, before=(int(i), encounters[i].discharge))
    _plant(rng, encounters, second, before=(int(j), encounters[j].discharge))


def generate_patient(k, rng, cfg, catalog, weights, bases):
    spec = cfg.signal_spec
    n_enc = min(1 + int(rng.poisson(cfg.target_median_visits - 1)), MAX_ENCOUNTERS)
    encounters = [
        Encounter(admit, discharge, _background_events(rng, cfg, catalog, admit, discharge, weights))
        for admit, discharge in _encounter_times(rng, cfg, n_enc)
    ]

    carriers, order_active, a_first, score = sample_risk_components(spec, 1, rng)
    for (code, _), carried in zip(spec.risk_codes, carriers[0]):
        if carried:
            _plant(rng, encounters, code)
    if order_active[0]:
        first, second = spec.order_pair[:2] if a_first[0] else spec.order_pair[1::-1]
        _plant_order_pair(rng, encounters, first, second)

    noise = spec.noise_sigma * rng.standard_normal()
    labels = {
        task: int(rng.random() < _sigmoid(bases[task] + score[0] + noise))
        for task in TASKS
    }

    if cfg.trajectory == "latest" and labels["T3"] and rng.random() < cfg.in_hospital_death_rate:
        # Fatal admission after the index stay; excluded from the input sequence
        last = encounters[-1]
        admit = last.discharge + float(rng.lognormal(math.log(cfg.gap_median_days), cfg.gap_sigma))
        discharge = admit + 1.0 + float(rng.poisson(3.0))
        fatal = Encounter(admit, discharge, _background_events(rng, cfg, catalog, admit, discharge, weights),
                          in_hospital_death=True)
        encounters.append(fatal)

    for enc in encounters:
        enc.events.sort(key=lambda ev: ev.timestamp)

    bmi = None
    if rng.random() >= cfg.bmi_missing_rate:
        bmi = float(np.round(np.clip(rng.normal(28.0, 5.5), 15.0, 60.0), 1))
    return PatientRecord(
        id=f"{cfg.trajectory[0].upper()}{k:06d}",
        age_at_index=int(np.clip(round(rng.normal(76.0, 11.0)), *AGE_RANGE)),
        sex="F" if rng.random() < 0.45 else "M",
        bmi=bmi,
        encounters=encounters,
        labels=labels,
        trajectory=cfg.trajectory,
    )


def generate_cohort(cfg):
    """
    Generates ``cfg.n_patients`` records.

    Each patient draws from its own SeedSequence child of ``cfg.seed`` so the
    cohort is a pure function of the config.
    """
    if cfg.n_patients < 1:
        raise ValueError(f"n_patients must be at least 1, got {cfg.n_patients}")
    catalog = build_catalog(cfg)
    weights = {
        "DX": catalog.zipf_weights(len(catalog.dx), cfg.zipf_exponent),
        "PRO": catalog.zipf_weights(len(catalog.pro), cfg.zipf_exponent),
        "MED": catalog.zipf_weights(len(catalog.med), cfg.zipf_exponent),
    }
    bases = {task: calibrate_base(cfg, task) for task in TASKS}
    children = np.random.SeedSequence([cfg.seed, PATIENT_STREAM]).spawn(cfg.n_patients)
    return [
        generate_patient(k, np.random.default_rng(child), cfg, catalog, weights, bases)
        for k, child in enumerate(children)
    ]


def risk_flags(rec, spec):
    """Observed (carrier flags, order bonus active) of a record, read back from its events."""
    first_seen = {}
    for enc in rec.encounters:
        for ev in enc.events:
            if ev.group == "DX":
                first_seen.setdefault(ev.code, ev.timestamp)
    carriers = [code in first_seen for code, _ in spec.risk_codes]
    a, b, _ = spec.order_pair
    ordered = a in first_seen and b in first_seen and first_seen[a] < first_seen[b]
    return carriers, ordered


# ============================================================================
# SERIALIZATION
# ============================================================================
def record_to_json(rec):
    return json.dumps(rec.to_dict(), sort_keys=True)


def write_cohort(path, cohort):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in cohort:
            fh.write(record_to_json(rec) + "\n")
    return path


def read_cohort(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Cohort file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return [PatientRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def cohort_hash(cohort):
    digest = hashlib.sha256()
    for rec in cohort:
        digest.update(record_to_json(rec).encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()
