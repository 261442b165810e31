# ============================================================================
# GRADIENT-BOOSTED TREES MODULE
# ============================================================================
# Frequency-bag baseline: per-patient concept counts fed to a second-order
# boosted ensemble of exact-greedy regression trees under logistic loss

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .sequence_builder import TokenizedSequence, history_tokens
from .vocabulary import N_SPECIALS

GBDT_FORMAT_VERSION = 1


@dataclass
class GbdtConfig:
    n_trees: int = 100
    max_depth: int = 6
    learning_rate: float = 0.3
    lambda_l2: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0

    def __post_init__(self):
        if self.n_trees < 0 or self.max_depth < 1 or self.learning_rate <= 0:
            raise ValueError("n_trees, max_depth and learning_rate must be positive")
        if self.lambda_l2 < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise ValueError("regularization terms must be non-negative")

    def to_dict(self):
        return asdict(self)


# ============================================================================
# FEATURES
# ============================================================================
@dataclass
class FrequencyVector:
    counts: dict = field(default_factory=dict)
    label: int = None


def featurize(item, vocab, C=None):
    """
    Concept-token counts of a TokenizedSequence or PatientRecord.

    Special and time tokens are excluded. Records are tokenized under Cutoff
    with context C (unbounded when None); an empty trajectory gives a zero vector.
    """
    if isinstance(item, TokenizedSequence):
        ids = item.concept_ids[item.mask]
        label = item.label
    else:
        try:
            raw, _ = history_tokens(item, vocab)
        except ValueError:
            return FrequencyVector(counts={}, label=None)
        if C is not None and len(raw) > C:
            raw = [raw[0]] + raw[1:][-(C - 1):]
        ids = [vocab.id(token) for token, *_ in raw]
        label = None
    counts = {}
    for idx in ids:
        idx = int(idx)
        if idx >= N_SPECIALS:
            counts[idx] = counts.get(idx, 0) + 1
    return FrequencyVector(counts=counts, label=label)


def to_matrix(vectors, n_features):
    X = np.zeros((len(vectors), n_features))
    for row, vec in enumerate(vectors):
        for idx, count in vec.counts.items():
            X[row, idx] = count
    return X


# ============================================================================
# TREES
# ============================================================================
def _best_split(X, g, h, cfg):
    # Vectorized exact search over all (feature, threshold) pairs of one node
    n = X.shape[0]
    if n < 2:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    G, H = g.sum(), h.sum()
    GL = np.cumsum(g[order], axis=0)[:-1]
    HL = np.cumsum(h[order], axis=0)[:-1]
    GR, HR = G - GL, H - HL
    lam = cfg.lambda_l2
    valid = (xs[1:] > xs[:-1]) & (HL >= cfg.min_child_weight) & (HR >= cfg.min_child_weight)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = 0.5 * (GL ** 2 / (HL + lam) + GR ** 2 / (HR + lam) - G ** 2 / (H + lam)) - cfg.gamma
    gain = np.where(valid, gain, -np.inf)
    pos, feature = np.unravel_index(int(np.argmax(gain)), gain.shape)
    if not np.isfinite(gain[pos, feature]) or gain[pos, feature] <= 0:
        return None
    threshold = 0.5 * (xs[pos, feature] + xs[pos + 1, feature])
    return int(feature), float(threshold), float(gain[pos, feature])


def build_tree(X, g, h, cfg):
    """
    Grows one regression tree on gradients g and hessians h.

    Nodes are dicts: {"feature", "threshold", "left", "right"} or {"leaf"};
    samples with x < threshold go left.
    """
    nodes = []

    def grow(idx, depth):
        node_id = len(nodes)
        nodes.append(None)
        G, H = g[idx].sum(), h[idx].sum()
        split = _best_split(X[idx], g[idx], h[idx], cfg) if depth < cfg.max_depth else None
        if split is None:
            nodes[node_id] = {"leaf": float(-G / (H + cfg.lambda_l2))}
            return node_id
        feature, threshold, gain = split
        goes_left = X[idx, feature] < threshold
        left = grow(idx[goes_left], depth + 1)
        right = grow(idx[~goes_left], depth + 1)
        nodes[node_id] = {"feature": feature, "threshold": threshold, "gain": gain, "left": left, "right": right}
        return node_id

    grow(np.arange(X.shape[0]), 0)
    return nodes


def tree_predict(nodes, X):
    out = np.empty(X.shape[0])
    for row in range(X.shape[0]):
        node = nodes[0]
        while "leaf" not in node:
            node = nodes[node["left"] if X[row, node["feature"]] < node["threshold"] else node["right"]]
        out[row] = node["leaf"]
    return out


# ============================================================================
# ENSEMBLE
# ============================================================================
@dataclass
class GbdtModel:
    learning_rate: float
    n_features: int
    trees: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def margin(self, X):
        X = np.asarray(X, dtype=np.float64)
        total = np.zeros(X.shape[0])
        for nodes in self.trees:
            total += tree_predict(nodes, X)
        return self.learning_rate * total

    def to_dict(self):
        return {
            "format_version": GBDT_FORMAT_VERSION,
            "learning_rate": self.learning_rate,
            "n_features": self.n_features,
            "config": self.config,
            "trees": self.trees,
        }

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True))
        return path

    @classmethod
    def from_dict(cls, data):
        if data.get("format_version") != GBDT_FORMAT_VERSION:
            raise ValueError(f"Unsupported tree ensemble format {data.get('format_version')}")
        return cls(learning_rate=data["learning_rate"], n_features=data["n_features"],
                   trees=data["trees"], config=data.get("config", {}))

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Tree ensemble not found: {path}")
        return cls.from_dict(json.loads(path.read_text()))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit(X, y, cfg=None):
    """Boosts cfg.n_trees trees on logistic loss from a zero base margin."""
    cfg = cfg or GbdtConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"fit needs X [n, F] and y [n], got {X.shape} and {y.shape}")
    if y.size == 0 or y.min() == y.max():
        raise ValueError("fit needs both classes")
    model = GbdtModel(learning_rate=cfg.learning_rate, n_features=X.shape[1], config=cfg.to_dict())
    margin = np.zeros(X.shape[0])
    for _ in range(cfg.n_trees):
        p = _sigmoid(margin)
        nodes = build_tree(X, p - y, p * (1.0 - p), cfg)
        model.trees.append(nodes)
        margin += cfg.learning_rate * tree_predict(nodes, X)
    return model


def predict_proba(model, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    return _sigmoid(model.margin(X))
