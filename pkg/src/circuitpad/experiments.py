"""Experiment orchestration, persistence and report emission.

Five canned experiments mirror the evaluation ladder: fingerprinting vanilla
traffic, the handshake-shaping defense, the delaying strawman under both
packing models, and preemptive padding over a (phi, c) grid, plus the
learning/challenge security game.  Every run emits a results CSV whose rows
carry the manifest hash of the run that produced them, and a manifest with
checksums of all written files; identical config and seed reproduce the
outputs byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .adversary import (
    BayesTripletClassifier,
    ClassifierReport,
    NO_MATCH,
    TraceFeaturizer,
    count_triplets,
    evaluate,
    session_views,
    to_adversary_view,
    train_classifier,
    weighted_report,
)
from .cells import CircuitPurpose, CircuitTrace, parse_cell_record, write_circuit
from .config import ConfigError, HarnessConfig
from .defenses import PaddedSession, StrategyKind, apply_strategy
from .traffic import (
    ConnectionType,
    PackingMode,
    SimConfig,
    UserModel,
    session_rng,
    simulate_session,
)

RESULTS_HEADER = (
    "experiment,scenario,task,classifier,phi,c,accuracy,tpr,fpr,"
    "precision,leakage,n_train,n_test,seed,manifest"
)

EXPERIMENT_IDS = ("exp1", "exp2", "exp3", "exp4", "exp5", "game")

_STRATEGY_FOR_EXPERIMENT = {
    "exp1": None,
    "exp2": StrategyKind.PROP999,
    "exp3": StrategyKind.STRAWMAN,
    "exp4": StrategyKind.STRAWMAN,
    "exp5": StrategyKind.PCP,
}


@dataclass(frozen=True)
class TaskSpec:
    """One binary classification task over labelled circuits."""

    name: str
    positive: CircuitPurpose
    classes: tuple[CircuitPurpose, ...] | None = None  # None: one-vs-all

    def label(self, purpose: CircuitPurpose) -> str | None:
        if self.classes is None:
            return purpose.value if purpose is self.positive else "Other"
        return purpose.value if purpose in self.classes else None


ONE_VS_ALL_TASKS = (
    TaskSpec("other-vs-intro", CircuitPurpose.INTRO),
    TaskSpec("other-vs-rend", CircuitPurpose.REND),
)

PAIRWISE_TASKS = (
    TaskSpec(
        "fake-hsdir-vs-hsdir",
        CircuitPurpose.HSDIR,
        (CircuitPurpose.FAKE_HSDIR, CircuitPurpose.HSDIR),
    ),
    TaskSpec(
        "fake-intro-vs-intro",
        CircuitPurpose.INTRO,
        (CircuitPurpose.FAKE_INTRO, CircuitPurpose.INTRO),
    ),
    TaskSpec(
        "padded-exit-vs-rend",
        CircuitPurpose.REND,
        (CircuitPurpose.PADDED_EXIT, CircuitPurpose.REND),
    ),
)


@dataclass(frozen=True)
class RunManifest:
    """Input identity and output checksums of one run."""

    seed: int
    config_hash: str
    version: str
    files: dict

    @property
    def run_id(self) -> str:
        key = f"{self.seed}:{self.config_hash}:{self.version}"
        return hashlib.sha256(key.encode()).hexdigest()[:16]

    def write(self, path: Path) -> None:
        payload = {
            "run_id": self.run_id,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "version": self.version,
            "files": self.files,
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def make_manifest(cfg: HarnessConfig, out_dir: Path, files: list[Path]) -> RunManifest:
    return RunManifest(
        seed=cfg.seed,
        config_hash=cfg.digest(),
        version=__version__,
        files={f.name: _sha256_file(f) for f in files},
    )


def _prepare_out(out_dir: Path, force: bool, expected: list[str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    if not force:
        clashes = [name for name in expected if (out_dir / name).exists()]
        if clashes:
            raise FileExistsError(
                f"refusing to overwrite {', '.join(clashes)} in {out_dir} "
                "(pass --force to allow)"
            )


# --- dataset generation ---------------------------------------------------


def balanced_session_stream(config: SimConfig, n_sessions: int | None = None):
    """Sessions with connection types alternating by site round.

    Keeps every site supplied with both connection types and the class
    counts exactly balanced, mirroring per-class collected datasets.
    """
    n = config.n_sessions if n_sessions is None else n_sessions
    n_sites = len(config.sites)
    for i in range(n):
        force = (
            ConnectionType.CLEARNET
            if (i // n_sites) % 2 == 0
            else ConnectionType.ONION
        )
        site = config.sites[i % n_sites]
        rng = session_rng(config.seed, i)
        yield i, simulate_session(
            config, site, rng, session_id=f"s{i:06d}", force_type=force
        )


def defended_stream(cfg: HarnessConfig, sim: SimConfig, strategy_kind, **strategy_kw):
    """Yield (index, session-or-padded-session) under the experiment defense."""
    strategy = (
        cfg.strategy_config(kind=strategy_kind, **strategy_kw)
        if strategy_kind is not None
        else None
    )
    for i, session in balanced_session_stream(sim):
        if strategy is None:
            yield i, session
        else:
            yield i, apply_strategy(session, strategy, session_rng(sim.seed, i, lane=1))


# --- circuit records and splits --------------------------------------------


@dataclass(frozen=True)
class CircuitRecord:
    session_index: int
    session_id: str
    site_id: str
    purpose: CircuitPurpose
    features: np.ndarray


def collect_records(stream, max_len: int) -> list[CircuitRecord]:
    featurizer = TraceFeaturizer(max_len=max_len).fit(None)
    records = []
    for i, sess in stream:
        circuits = sess.circuits
        site_id = sess.site_id
        session_id = sess.session_id if hasattr(sess, "session_id") else f"s{i}"
        feats = featurizer.transform([to_adversary_view(c) for c in circuits])
        for circ, row in zip(circuits, feats):
            records.append(
                CircuitRecord(
                    session_index=i,
                    session_id=session_id,
                    site_id=site_id,
                    purpose=circ.purpose,
                    features=row,
                )
            )
    return records


def split_sessions(
    records: list[CircuitRecord], scenario: str, train_fraction: float,
    site: str | None = None,
) -> tuple[set[int], set[int]]:
    """Partition session indices into train/test per the scenario.

    Closed world splits each site's sessions (no session straddles the
    split); open world splits the site set itself, so train and test
    destinations are disjoint.
    """
    sessions_by_site: dict[str, list[int]] = {}
    for r in records:
        sessions_by_site.setdefault(r.site_id, [])
        if r.session_index not in sessions_by_site[r.site_id]:
            sessions_by_site[r.site_id].append(r.session_index)
    if scenario == "single-site":
        if site is None or site not in sessions_by_site:
            raise ConfigError(f"single-site scenario needs a known site, got {site!r}")
        sessions_by_site = {site: sessions_by_site[site]}
    train: set[int] = set()
    test: set[int] = set()
    if scenario == "multi-open":
        sites = sorted(sessions_by_site)
        cut = max(1, int(round(len(sites) * train_fraction)))
        if cut >= len(sites):
            cut = len(sites) - 1
        train_sites = set(sites[:cut])
        for s, idxs in sessions_by_site.items():
            (train if s in train_sites else test).update(idxs)
    else:
        for s, idxs in sessions_by_site.items():
            idxs = sorted(idxs)
            cut = max(1, int(round(len(idxs) * train_fraction)))
            if cut >= len(idxs):
                cut = len(idxs) - 1
            train.update(idxs[:cut])
            test.update(idxs[cut:])
    return train, test


def run_task(
    task: TaskSpec,
    records: list[CircuitRecord],
    train_idx: set[int],
    test_idx: set[int],
    classifier: str,
    tree_max_depth: int,
    tree_min_leaf: int,
    seed: int,
) -> ClassifierReport:
    X_train, y_train, X_test, y_test = [], [], [], []
    for r in records:
        label = task.label(r.purpose)
        if label is None:
            continue
        if r.session_index in train_idx:
            X_train.append(r.features)
            y_train.append(label)
        elif r.session_index in test_idx:
            X_test.append(r.features)
            y_test.append(label)
    if not X_train or not X_test:
        raise ValueError(f"task {task.name}: empty train or test split")
    model = train_classifier(
        classifier,
        np.array(X_train),
        np.array(y_train),
        max_depth=tree_max_depth,
        min_leaf=tree_min_leaf,
        seed=seed,
    )
    y_pred = model.predict(np.array(X_test))
    return evaluate(
        np.array(y_test),
        y_pred,
        positive_class=task.positive.value,
        n_train=len(y_train),
    )


# --- experiment drivers -----------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def _row(
    experiment: str, scenario: str, task: str, classifier: str,
    phi, c, report: ClassifierReport, seed: int, manifest_id: str,
) -> str:
    return ",".join(
        [
            experiment,
            scenario,
            task,
            classifier,
            "" if phi is None else f"{phi:g}",
            "" if c is None else f"{c:g}",
            _fmt(report.accuracy),
            _fmt(report.tpr),
            _fmt(report.fpr),
            _fmt(report.precision),
            _fmt(report.leakage),
            str(report.n_train),
            str(report.n_test),
            str(seed),
            manifest_id,
        ]
    )


def run_classification_experiment(
    cfg: HarnessConfig, experiment_id: str, manifest_id: str
) -> list[str]:
    """Experiments over learned classifiers (vanilla, prop999, strawman)."""
    exp_cfg = cfg.raw["experiment"]
    adv = cfg.raw["adversary"]
    packing = {
        "exp1": "identical",
        "exp2": "identical",
        "exp3": "asymmetric",
        "exp4": "identical",
    }[experiment_id]
    n_sites = cfg.raw["sites"]["count"]
    if experiment_id in ("exp3", "exp4"):
        n_sites = min(n_sites, 10)  # strawman evaluation uses a small site set
    sim = cfg.sim_config(packing_mode=PackingMode(packing.capitalize()))
    if n_sites != len(sim.sites):
        sim = cfg.sim_config(packing_mode=sim.packing_mode, sites=sim.sites[:n_sites])
    strategy_kind = _STRATEGY_FOR_EXPERIMENT[experiment_id]
    records = collect_records(
        defended_stream(cfg, sim, strategy_kind), adv["max_len"]
    )
    tasks = ONE_VS_ALL_TASKS if experiment_id in ("exp1", "exp2") else PAIRWISE_TASKS
    classifiers = [c for c in adv["classifiers"] if c != "bayes"]
    scenarios = (
        ["multi-closed", "multi-open"]
        if exp_cfg["scenario"] != "single-site"
        else ["single-site"]
    )
    rows = []
    for scenario in scenarios:
        train_idx, test_idx = split_sessions(
            records, scenario, exp_cfg["train_fraction"], exp_cfg.get("site")
        )
        for task in tasks:
            for clf in classifiers:
                report = run_task(
                    task,
                    records,
                    train_idx,
                    test_idx,
                    clf,
                    adv["tree_max_depth"],
                    adv["tree_min_leaf"],
                    cfg.seed,
                )
                rows.append(
                    _row(
                        experiment_id, scenario, task.name, clf,
                        None, None, report, cfg.seed, manifest_id,
                    )
                )
    return rows


def pcp_class_statistics(
    cfg: HarnessConfig,
    phi: float,
    n_per_class: int,
    lambda_u: float | None = None,
    site_index: int = 0,
    max_len: int | None = None,
    collect_features: bool = False,
):
    """Per-class triplet counts (and optionally features) under the
    preemptive defense at ratio phi.

    Clearnet and onion sessions are generated in equal numbers with
    independent derived streams; base-rate weighting happens at evaluation
    time, mirroring fixed per-class dataset collection.
    """
    sim = cfg.sim_config()
    if lambda_u is not None:
        sim = cfg.sim_config(
            user=UserModel(lambda_u=lambda_u, clearnet_prob=sim.user.clearnet_prob)
        )
    site = sim.sites[site_index % len(sim.sites)]
    strategy = cfg.strategy_config(
        kind=StrategyKind.PCP, phi=phi, lambda_u_estimate=sim.user.lambda_u
    )
    featurizer = (
        TraceFeaturizer(max_len=max_len or cfg.raw["adversary"]["max_len"]).fit(None)
        if collect_features
        else None
    )
    out = {}
    for conn, lane_base in ((ConnectionType.CLEARNET, 10), (ConnectionType.ONION, 20)):
        counts = np.empty(n_per_class, dtype=np.int64)
        d_true = np.empty(n_per_class, dtype=np.int64)
        feats = []
        for i in range(n_per_class):
            rng = session_rng(sim.seed, i, lane=lane_base)
            session = simulate_session(sim, site, rng, f"g{i:06d}", force_type=conn)
            padded = apply_strategy(
                session, strategy, session_rng(sim.seed, i, lane=lane_base + 1)
            )
            n = count_triplets(session_views(padded.circuits))
            counts[i] = -1 if n is NO_MATCH else n
            d_true[i] = padded.dummy_triplet_count
            if featurizer is not None:
                role = next(
                    c
                    for c in padded.circuits
                    if c.purpose in (CircuitPurpose.PADDED_EXIT, CircuitPurpose.REND)
                )
                feats.append(featurizer.transform([to_adversary_view(role)])[0])
        out[conn] = {
            "n": counts,
            "d": d_true,
            "features": np.array(feats) if feats else None,
        }
    return out


def bayes_grid_accuracy(
    stats, phi: float, c: float
) -> tuple[float, float, ClassifierReport]:
    """Weighted Bayes-on-N accuracy from per-class statistics."""
    clf = BayesTripletClassifier(phi=phi, c=c).fit()
    correct = {}
    for conn in (ConnectionType.CLEARNET, ConnectionType.ONION):
        ns = stats[conn]["n"]
        preds = clf.predict([None if v < 0 else int(v) for v in ns])
        correct[conn] = float(np.mean(preds == conn.value))
    report = weighted_report(
        correct_given_neg=correct[ConnectionType.CLEARNET],
        correct_given_pos=correct[ConnectionType.ONION],
        prior_neg=c,
        n_train=0,
        n_test=len(stats[ConnectionType.CLEARNET]["n"]) * 2,
    )
    return report.accuracy, report.leakage, report


def tree_grid_accuracy(
    stats, c: float, tree_max_depth: int, tree_min_leaf: int, seed: int,
    train_fraction: float = 0.75,
) -> ClassifierReport:
    """Weighted decision-tree accuracy on the exit/rend-role cell sequences."""
    Xc = stats[ConnectionType.CLEARNET]["features"]
    Xo = stats[ConnectionType.ONION]["features"]
    cut_c = int(len(Xc) * train_fraction)
    cut_o = int(len(Xo) * train_fraction)
    X_train = np.vstack([Xc[:cut_c], Xo[:cut_o]])
    y_train = np.array(
        [ConnectionType.CLEARNET.value] * cut_c
        + [ConnectionType.ONION.value] * cut_o
    )
    model = train_classifier(
        "tree", X_train, y_train,
        max_depth=tree_max_depth, min_leaf=tree_min_leaf, seed=seed,
    )
    correct_c = float(
        np.mean(model.predict(Xc[cut_c:]) == ConnectionType.CLEARNET.value)
    )
    correct_o = float(
        np.mean(model.predict(Xo[cut_o:]) == ConnectionType.ONION.value)
    )
    return weighted_report(
        correct_given_neg=correct_c,
        correct_given_pos=correct_o,
        prior_neg=c,
        n_train=len(y_train),
        n_test=(len(Xc) - cut_c) + (len(Xo) - cut_o),
    )


def run_pcp_experiment(
    cfg: HarnessConfig, manifest_id: str, with_tree: bool = True
) -> list[str]:
    """Preemptive-padding grid: Bayes-on-N and tree accuracy per (phi, c)."""
    exp_cfg = cfg.raw["experiment"]
    adv = cfg.raw["adversary"]
    grid = exp_cfg["grid"]
    n_per_class = exp_cfg["sessions_per_class"]
    rows = []
    phis = sorted({float(p) for p, _ in grid})
    cs_by_phi = {
        phi: sorted({float(c) for p, c in grid if float(p) == phi}) for phi in phis
    }
    for phi in phis:
        stats = pcp_class_statistics(
            cfg, phi, n_per_class,
            collect_features=with_tree and "tree" in adv["classifiers"],
        )
        for c in cs_by_phi[phi]:
            _, _, report = bayes_grid_accuracy(stats, phi, c)
            rows.append(
                _row(
                    "exp5", "single-site", "padded-exit-vs-padded-rend",
                    "bayes", phi, c, report, cfg.seed, manifest_id,
                )
            )
            if with_tree and "tree" in adv["classifiers"]:
                tree_report = tree_grid_accuracy(
                    stats, c, adv["tree_max_depth"], adv["tree_min_leaf"], cfg.seed
                )
                rows.append(
                    _row(
                        "exp5", "single-site", "padded-exit-vs-padded-rend",
                        "tree", phi, c, tree_report, cfg.seed, manifest_id,
                    )
                )
    return rows


# --- security game -----------------------------------------------------------


class EmpiricalTraceClassifier:
    """Adversary for the security game: posterior over observable summaries.

    Learns the empirical distribution of (circuit count, triplet count) per
    connection type from the learning traces and answers challenges with the
    maximum-likelihood label under a balanced prior (Laplace smoothing 0.5).
    """

    N_CAP = 16  # larger counts pool into one bucket

    def __init__(self):
        self.counts: dict[tuple, dict[ConnectionType, float]] = {}
        self.totals = {ConnectionType.CLEARNET: 0, ConnectionType.ONION: 0}

    def _summary(self, circuits) -> tuple:
        n = count_triplets(session_views(circuits))
        n_val = -1 if n is NO_MATCH else min(n, self.N_CAP)
        return (len(circuits), n_val)

    def learn(self, circuits, label: ConnectionType) -> None:
        key = self._summary(circuits)
        slot = self.counts.setdefault(
            key, {ConnectionType.CLEARNET: 0.0, ConnectionType.ONION: 0.0}
        )
        slot[label] += 1
        self.totals[label] += 1

    def classify(self, circuits) -> ConnectionType:
        key = self._summary(circuits)
        slot = self.counts.get(
            key, {ConnectionType.CLEARNET: 0.0, ConnectionType.ONION: 0.0}
        )
        scores = {}
        for label in (ConnectionType.CLEARNET, ConnectionType.ONION):
            total = self.totals[label]
            scores[label] = (slot[label] + 0.5) / (total + 1.0)
        if scores[ConnectionType.ONION] > scores[ConnectionType.CLEARNET]:
            return ConnectionType.ONION
        return ConnectionType.CLEARNET


def wilson_interval(successes: int, total: int, z: float = 1.96) -> tuple[float, float]:
    if total == 0:
        return 0.0, 1.0
    phat = successes / total
    denom = 1 + z * z / total
    centre = phat + z * z / (2 * total)
    margin = z * np.sqrt(phat * (1 - phat) / total + z * z / (4 * total * total))
    lo = max(0.0, float((centre - margin) / denom))
    hi = min(1.0, float((centre + margin) / denom))
    return lo, hi


def security_game(
    cfg: HarnessConfig,
    k: int | None = None,
    trials: int | None = None,
    defended: bool = True,
) -> dict:
    """Learning/challenge/response protocol against one site.

    The challenger hands the adversary k traces per connection type of site
    w, then repeatedly flips a fair coin, generates a fresh trace of the
    drawn type and asks for a guess.  Returns the empirical win rate with a
    95% binomial confidence interval.
    """
    exp_cfg = cfg.raw["experiment"]
    k = k if k is not None else exp_cfg["game_learning_traces"]
    trials = trials if trials is not None else exp_cfg["game_trials"]
    if k < 1 or trials < 1:
        raise ConfigError("security game needs k >= 1 and trials >= 1")
    sim = cfg.sim_config()
    strategy = cfg.strategy_config() if defended else None
    site_name = exp_cfg.get("site") or sim.sites[0].site_id
    site = next((s for s in sim.sites if s.site_id == site_name), sim.sites[0])

    def make_trace(index: int, lane: int, conn: ConnectionType):
        rng = session_rng(sim.seed, index, lane=lane)
        session = simulate_session(sim, site, rng, f"w{index:06d}", force_type=conn)
        if strategy is None:
            return session.circuits
        padded = apply_strategy(
            session, strategy, session_rng(sim.seed, index, lane=lane + 1)
        )
        return padded.circuits

    adversary = EmpiricalTraceClassifier()
    for i in range(k):
        adversary.learn(make_trace(i, 30, ConnectionType.CLEARNET), ConnectionType.CLEARNET)
        adversary.learn(make_trace(i, 40, ConnectionType.ONION), ConnectionType.ONION)

    coin = np.random.default_rng(np.random.SeedSequence([sim.seed, 50]))
    wins = 0
    for t in range(trials):
        secret = (
            ConnectionType.CLEARNET if coin.random() < 0.5 else ConnectionType.ONION
        )
        challenge = make_trace(t, 60, secret)
        if adversary.classify(challenge) is secret:
            wins += 1
    lo, hi = wilson_interval(wins, trials)
    return {
        "win_rate": wins / trials,
        "ci_low": lo,
        "ci_high": hi,
        "trials": trials,
        "k": k,
    }


# --- dataset export / import --------------------------------------------------


def export_trace_jsonl(
    sessions, out_dir: Path, run_id: str, force: bool = False
) -> list[Path]:
    """Write the per-cell ground-truth records plus the session sidecar."""
    sessions = list(sessions)
    if not sessions:
        raise ValueError("dataset must be non-empty")
    _prepare_out(out_dir, force, ["traces.jsonl", "sessions.jsonl"])
    traces = out_dir / "traces.jsonl"
    sidecar = out_dir / "sessions.jsonl"
    with open(traces, "w", encoding="utf-8", newline="\n") as fh:
        for sess in sessions:
            for circ in sess.circuits:
                write_circuit(fh, run_id, sess.session_id, circ)
    with open(sidecar, "w", encoding="utf-8", newline="\n") as fh:
        for sess in sessions:
            meta = {
                "session_id": sess.session_id,
                "connection_type": sess.connection_type.value,
                "think_time": sess.think_time,
                "site_id": sess.site_id,
                "circuits": {
                    c.circuit_id: {"created_at": c.created_at, "closed_at": c.closed_at}
                    for c in sess.circuits
                },
            }
            if isinstance(sess, PaddedSession):
                meta["dummy_triplet_count"] = sess.dummy_triplet_count
                meta["delay_added"] = sess.delay_added
            fh.write(json.dumps(meta, sort_keys=True) + "\n")
    return [traces, sidecar]


@dataclass(frozen=True)
class LoadedSession:
    """Session reconstructed from an exported dataset."""

    session_id: str
    connection_type: ConnectionType
    think_time: float
    circuits: tuple[CircuitTrace, ...]
    site_id: str


def load_trace_jsonl(out_dir: Path) -> list[LoadedSession]:
    from .cells import Cell

    traces = out_dir / "traces.jsonl"
    sidecar = out_dir / "sessions.jsonl"
    cells_by_circuit: dict[tuple[str, str], list] = {}
    purpose_by_circuit: dict[tuple[str, str], CircuitPurpose] = {}
    order: list[tuple[str, str]] = []
    with open(traces, encoding="utf-8") as fh:
        for line in fh:
            rec = parse_cell_record(line)
            key = (rec["session_id"], rec["circuit_id"])
            if key not in cells_by_circuit:
                cells_by_circuit[key] = []
                order.append(key)
            purpose_by_circuit[key] = rec["purpose"]
            cells_by_circuit[key].append(
                Cell(rec["t"], rec["dir"], rec["cmd"], bool(rec["pad"]))
            )
    sessions = []
    with open(sidecar, encoding="utf-8") as fh:
        for line in fh:
            meta = json.loads(line)
            sid = meta["session_id"]
            circuits = []
            for key in order:
                if key[0] != sid:
                    continue
                circ_meta = meta["circuits"][key[1]]
                circuits.append(
                    CircuitTrace(
                        circuit_id=key[1],
                        purpose=purpose_by_circuit[key],
                        cells=tuple(cells_by_circuit[key]),
                        created_at=circ_meta["created_at"],
                        closed_at=circ_meta["closed_at"],
                    )
                )
            sessions.append(
                LoadedSession(
                    session_id=sid,
                    connection_type=ConnectionType(meta["connection_type"]),
                    think_time=meta["think_time"],
                    circuits=tuple(circuits),
                    site_id=meta["site_id"],
                )
            )
    return sessions


def export_feature_csv(
    sessions, out_dir: Path, max_len: int, force: bool = False
) -> list[Path]:
    from .adversary import extract_features, write_feature_csv

    sessions = list(sessions)
    if not sessions:
        raise ValueError("dataset must be non-empty")
    _prepare_out(out_dir, force, ["features.csv"])
    rows = []
    for sess in sessions:
        for circ in sess.circuits:
            fv = extract_features(to_adversary_view(circ), max_len)
            rows.append((circ.purpose.value, fv))
    path = out_dir / "features.csv"
    write_feature_csv(path, rows, max_len)
    return [path]


# --- top-level entry ----------------------------------------------------------


def write_results(path: Path, rows: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(RESULTS_HEADER + "\n")
        for row in rows:
            fh.write(row + "\n")


def run_experiment(
    cfg: HarnessConfig, experiment_id: str, out_dir: Path, force: bool = False
) -> Path:
    """End-to-end run of one experiment; writes results.csv and manifest.json."""
    if experiment_id not in EXPERIMENT_IDS:
        raise ConfigError(f"unknown experiment {experiment_id!r}")
    _prepare_out(out_dir, force, ["results.csv", "manifest.json"])
    manifest_stub = RunManifest(
        seed=cfg.seed, config_hash=cfg.digest(), version=__version__, files={}
    )
    manifest_id = manifest_stub.run_id
    if experiment_id == "exp5":
        rows = run_pcp_experiment(cfg, manifest_id)
    elif experiment_id == "game":
        outcome = security_game(cfg)
        report = ClassifierReport(
            accuracy=outcome["win_rate"],
            tpr=outcome["win_rate"],
            fpr=1.0 - outcome["win_rate"],
            precision=None,
            leakage=outcome["win_rate"] - 0.5,
            n_train=outcome["k"] * 2,
            n_test=outcome["trials"],
        )
        rows = [
            _row(
                "game", "single-site", "challenge-response", "empirical",
                None, None, report, cfg.seed, manifest_id,
            )
        ]
    else:
        rows = run_classification_experiment(cfg, experiment_id, manifest_id)
    results = out_dir / "results.csv"
    write_results(results, rows)
    manifest = make_manifest(cfg, out_dir, [results])
    manifest.write(out_dir / "manifest.json")
    return results
