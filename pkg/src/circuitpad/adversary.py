"""The adversary: observation model, features, triplet counting, classifiers.

A passive observer between the client and its guard sees, per circuit, only
the time and direction of each cell: no commands, no padding flags.  From
that view we extract the two classification features (duration of circuit
activity and the direction sequence), count request-triplet patterns on
preemptively padded circuits, and run three attacks: a Bayes-optimal rule on
the triplet count, a CART decision tree, and a 1-nearest-neighbour matcher.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.neighbors import KNeighborsClassifier
from sklearn.tree import DecisionTreeClassifier

from .cells import CircuitTrace
from .traffic import ConnectionType

# Direction signature of one rendezvous-handshake request.
_TRIPLET_SIG = (-1, 1, 1)
# Two-hop circuit construction as the adversary sees it.
_SETUP_SIG = (-1, 1, -1, 1)
# Stream open (outgoing) plus its reply.
_COMPLETION_SIG = (-1, 1)

#: Sentinel distinguishing "no preemptive-padding structure" from a count of 0.
NO_MATCH = None


@dataclass(frozen=True)
class AdversaryView:
    """What the wire shows for one circuit: timed, signed cell events."""

    circuit_id: str
    events: tuple[tuple[float, int], ...]  # (time, direction in {-1, +1})

    def directions(self) -> tuple[int, ...]:
        return tuple(d for _, d in self.events)

    @property
    def duration(self) -> float:
        if len(self.events) < 2:
            return 0.0
        return self.events[-1][0] - self.events[0][0]

    def to_json(self) -> str:
        return json.dumps(
            {"circuit_id": self.circuit_id, "events": [[t, d] for t, d in self.events]},
            separators=(",", ":"),
        )


@dataclass(frozen=True)
class FeatureVector:
    """Duration plus a fixed-length direction array (0 = right padding)."""

    duration: float
    cell_seq: tuple[int, ...]
    label: str = ""

    def __post_init__(self) -> None:
        if any(v not in (-1, 0, 1) for v in self.cell_seq):
            raise ValueError("cell_seq entries must be in {-1, 0, +1}")

    def as_array(self) -> np.ndarray:
        return np.array([self.duration, *self.cell_seq], dtype=np.float64)


def to_adversary_view(trace: CircuitTrace) -> AdversaryView:
    """Strip commands and padding flags; keep order, times and directions."""
    return AdversaryView(
        circuit_id=trace.circuit_id,
        events=tuple((c.time, int(c.direction)) for c in trace.cells),
    )


def extract_features(view: AdversaryView, max_len: int = 120) -> FeatureVector:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    dirs = view.directions()[:max_len]
    seq = dirs + (0,) * (max_len - len(dirs))
    return FeatureVector(duration=view.duration, cell_seq=seq)


class TraceFeaturizer(BaseEstimator, TransformerMixin):
    """Adversary views -> feature matrix [duration, s1..s<max_len>]."""

    def __init__(self, max_len: int = 120):
        self.max_len = max_len

    def fit(self, X, y=None) -> "TraceFeaturizer":
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        return self

    def transform(self, X) -> np.ndarray:
        return np.array(
            [extract_features(v, self.max_len).as_array() for v in X],
            dtype=np.float64,
        )


def _parse_exit_rend_role(directions: tuple[int, ...]) -> tuple[int, float] | None:
    """Try to read a view as setup + k request patterns + stream open.

    Returns (k, idle_gap) on success, where idle_gap is the time between the
    end of circuit construction and the next cell; a freshly built circuit
    that is used immediately has no idle window, a preemptive one does.
    """
    n = len(directions)
    if n < 6 or directions[:4] != _SETUP_SIG:
        return None
    pos = 4
    k = 0
    while pos + 3 <= n and directions[pos : pos + 3] == _TRIPLET_SIG:
        # A stream open followed by two incoming cells also reads -++; only
        # count it as a request if another pattern or completion follows.
        if pos + 3 >= n or directions[pos + 3] != -1:
            break
        k += 1
        pos += 3
    if pos + 2 > n or directions[pos : pos + 2] != _COMPLETION_SIG:
        return None
    return k, pos


def count_triplets(views: list[AdversaryView]) -> int | None:
    """Count request-triplet patterns on a session's exit/rend-role circuit.

    Greedily matches the rendezvous-handshake signature after the two-hop
    construction prefix and before the stream completion.  Returns NO_MATCH
    when no circuit shows the preemptive structure (in particular, a circuit
    used immediately after construction with no request patterns and no idle
    window is not preemptively padded).
    """
    best_k = None
    for view in views:
        parsed = _parse_exit_rend_role(view.directions())
        if parsed is None:
            continue
        k, _pos = parsed
        if k == 0:
            # Idle gap between construction and first use marks a circuit
            # that existed before the connection did.
            gap = view.events[4][0] - view.events[3][0]
            if gap <= 0.0:
                continue
        best_k = k if best_k is None else max(best_k, k)
    if best_k is None:
        return NO_MATCH
    return best_k


def session_views(circuits) -> list[AdversaryView]:
    return [to_adversary_view(c) for c in circuits]


def bayes_predict(n: int | None, phi: float, c: float) -> ConnectionType:
    """Bayes-optimal label from the observed triplet count.

    With dummy triplet counts geometric with parameter p = 1/(1+phi), an
    observation of zero triplets is always clearnet; for positive counts the
    clearnet posterior dominates exactly when c >= 1 - c*(1-p), independent
    of the count itself.
    """
    if phi < 0:
        raise ValueError("phi must be >= 0")
    if not 0.0 <= c <= 1.0:
        raise ValueError("c must be in [0, 1]")
    if n is NO_MATCH or n == 0:
        return ConnectionType.CLEARNET
    p = 1.0 / (1.0 + phi)
    if c >= 1.0 - c * (1.0 - p):
        return ConnectionType.CLEARNET
    return ConnectionType.ONION


class BayesTripletClassifier(BaseEstimator, ClassifierMixin):
    """Estimator wrapper over the Bayes-on-N rule for triplet-count arrays."""

    def __init__(self, phi: float = 1.0, c: float = 0.5):
        self.phi = phi
        self.c = c

    def fit(self, X=None, y=None) -> "BayesTripletClassifier":
        bayes_predict(0, self.phi, self.c)  # validates parameters
        self.classes_ = np.array(
            [ConnectionType.CLEARNET.value, ConnectionType.ONION.value]
        )
        return self

    def predict(self, X) -> np.ndarray:
        out = []
        for n in X:
            n_val = None if n is None or (isinstance(n, float) and np.isnan(n)) else int(n)
            out.append(bayes_predict(n_val, self.phi, self.c).value)
        return np.array(out)


class ConstantClassifier(BaseEstimator, ClassifierMixin):
    """Degenerate model returned for single-class training sets."""

    def __init__(self, label):
        self.label = label
        self.single_class_warning = True

    def fit(self, X=None, y=None) -> "ConstantClassifier":
        return self

    def predict(self, X) -> np.ndarray:
        return np.full(len(X), self.label)


def train_classifier(
    kind: str,
    X: np.ndarray,
    y: np.ndarray,
    max_depth: int = 20,
    min_leaf: int = 5,
    seed: int = 0,
):
    """Fit a learned attack model on a feature matrix.

    ``tree`` is CART with Gini impurity; ``knn`` is 1-nearest-neighbour with
    Euclidean distance over (duration, cell sequence).  A single-class
    training set yields a constant model carrying a warning flag.
    """
    if len(X) == 0:
        raise ValueError("training set must be non-empty")
    labels = np.unique(y)
    if len(labels) < 2:
        warnings.warn("single-class training set; returning constant model")
        return ConstantClassifier(labels[0]).fit(X, y)
    if kind == "tree":
        model = DecisionTreeClassifier(
            criterion="gini",
            max_depth=max_depth,
            min_samples_leaf=min_leaf,
            random_state=seed,
        )
    elif kind == "knn":
        model = KNeighborsClassifier(n_neighbors=1, metric="euclidean")
    else:
        raise ValueError(f"unknown classifier kind {kind!r}")
    return model.fit(X, y)


@dataclass(frozen=True)
class ClassifierReport:
    """Confusion-matrix metrics plus leakage over the guessing baseline."""

    accuracy: float
    tpr: float
    fpr: float
    precision: float | None  # None when no positives were predicted
    leakage: float
    n_train: int
    n_test: int

    def __post_init__(self) -> None:
        for name in ("accuracy", "tpr", "fpr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")


def evaluate(
    y_true: np.ndarray,
    y_pred: np.ndarray,
    positive_class,
    prior: float | None = None,
    n_train: int = 0,
) -> ClassifierReport:
    """Score predictions against ground truth.

    ``prior`` is the base rate used for the random-guessing baseline
    (defaulting to the test-set negative-class fraction); leakage is
    accuracy minus max(prior, 1 - prior).  Precision is undefined when the
    model predicts no positives.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0:
        raise ValueError("test set must be non-empty")
    pos = y_true == positive_class
    neg = ~pos
    pred_pos = y_pred == positive_class
    accuracy = float(np.mean(y_true == y_pred))
    tpr = float(np.mean(pred_pos[pos])) if pos.any() else 0.0
    fpr = float(np.mean(pred_pos[neg])) if neg.any() else 0.0
    n_pred_pos = int(pred_pos.sum())
    precision = (
        float((pred_pos & pos).sum() / n_pred_pos) if n_pred_pos > 0 else None
    )
    if prior is None:
        prior = float(np.mean(neg))
    leakage = accuracy - max(prior, 1.0 - prior)
    return ClassifierReport(
        accuracy=accuracy,
        tpr=tpr,
        fpr=fpr,
        precision=precision,
        leakage=leakage,
        n_train=n_train,
        n_test=len(y_true),
    )


def weighted_report(
    correct_given_neg: float,
    correct_given_pos: float,
    prior_neg: float,
    n_train: int,
    n_test: int,
) -> ClassifierReport:
    """Combine per-class conditional accuracies under an analytic prior.

    Used when class priors are set analytically but data is generated with
    fixed per-class counts; the positive class is the onion-side one.
    """
    c = prior_neg
    tpr = correct_given_pos
    fpr = 1.0 - correct_given_neg
    accuracy = c * correct_given_neg + (1.0 - c) * correct_given_pos
    denom = (1.0 - c) * tpr + c * fpr
    precision = ((1.0 - c) * tpr / denom) if denom > 0 else None
    return ClassifierReport(
        accuracy=accuracy,
        tpr=tpr,
        fpr=fpr,
        precision=precision,
        leakage=accuracy - max(c, 1.0 - c),
        n_train=n_train,
        n_test=n_test,
    )


# --- feature dataset format ---------------------------------------------------


def feature_csv_header(max_len: int) -> str:
    return "label,duration," + ",".join(f"s{i}" for i in range(1, max_len + 1))


def write_feature_csv(path, rows: list[tuple[str, FeatureVector]], max_len: int) -> None:
    """One circuit per row: label, duration, then the direction sequence."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(feature_csv_header(max_len) + "\n")
        for label, fv in rows:
            seq = ",".join(str(v) for v in fv.cell_seq)
            fh.write(f"{label},{fv.duration!r},{seq}\n")
