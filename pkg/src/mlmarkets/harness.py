"""Experiment engine: seeded repeated train/test evaluation of market aggregators.

Each repetition permutes and splits the data, trains one belief provider per
agent, adapts market wealths on the training split and scores every method on
the shared test split by test log likelihood (natural log).
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import stats

from .core import UtilitySpec
from .equilibrium import SolverConfig, solve_many
from .errors import MarketError, ValidationError
from .providers import Dataset, load_csv_dataset, make_blobs, predict_beliefs, train_bagged_tree, train_gaussian_nb
from .wealth import LabeledBeliefSet, run_batch_epochs, run_online_epoch

log = logging.getLogger(__name__)

METHODS = ("iso_market", "log_market", "uniform_mixture", "mean_single", "best_single")


@dataclass
class ExperimentConfig:
    dataset: str | None = None
    label_column: str = "label"
    synthetic: dict = field(
        default_factory=lambda: {"n_samples": 600, "n_classes": 3, "n_features": 2, "separation": 1.5, "seed": 0}
    )
    num_agents: int = 20
    agent_kind: str = "bagged_tree"
    depth_limit: int = 12
    min_leaf: int = 10
    var_floor: float = 1e-6
    train_fraction: float = 2.0 / 3.0
    max_items: int = 3200
    repetitions: int = 30
    epochs: int = 1
    eta_mode: dict = field(default_factory=lambda: {"mode": "gamma", "shape": 3.0, "scale": 1.0})
    update_scheme: str = "batch"
    num_corrupted: int = 0
    baseline: str = "iso_market"
    base_seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    jobs: int = 1

    def __post_init__(self):
        if isinstance(self.solver, dict):
            self.solver = SolverConfig(**self.solver)
        if not 0.0 < self.train_fraction < 1.0:
            raise ValidationError("train_fraction must lie in (0, 1)")
        if self.repetitions < 1 or self.num_agents < 1 or self.epochs < 0 or self.max_items < 3:
            raise ValidationError("repetitions, num_agents >= 1; epochs >= 0; max_items >= 3")
        if self.agent_kind not in ("bagged_tree", "gaussian_nb"):
            raise ValidationError(f"unknown agent_kind {self.agent_kind!r}")
        if self.update_scheme not in ("batch", "online", "none"):
            raise ValidationError(f"unknown update_scheme {self.update_scheme!r}")
        if not 0 <= self.num_corrupted <= self.num_agents:
            raise ValidationError("num_corrupted must be between 0 and num_agents")
        if self.baseline not in METHODS:
            raise ValidationError(f"baseline must be one of {METHODS}")
        mode = self.eta_mode.get("mode")
        if mode == "gamma":
            if not (self.eta_mode.get("shape", 3.0) > 0 and self.eta_mode.get("scale", 1.0) > 0):
                raise ValidationError("gamma shape and scale must be positive")
        elif mode == "homogeneous":
            if not self.eta_mode.get("eta", 0) > 0:
                raise ValidationError("homogeneous eta must be positive")
        else:
            raise ValidationError(f"eta_mode.mode must be 'gamma' or 'homogeneous', got {mode!r}")

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["solver"] = self.solver.to_dict()
        d.pop("jobs")
        return d


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    d.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.from_dict(d)


def load_dataset(config: ExperimentConfig) -> Dataset:
    if config.dataset:
        data, _ = load_csv_dataset(config.dataset, config.label_column)
        return data
    return make_blobs(**config.synthetic)


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def sample_eta(count: int, shape: float = 3.0, scale: float = 1.0, seed: int = 0) -> np.ndarray:
    """Draw ``count`` risk-aversion values as ``1 + Gamma(shape, scale)``."""
    if not (shape > 0 and scale > 0):
        raise ValidationError("shape and scale must be positive")
    return 1.0 + np.random.default_rng(seed).gamma(shape, scale, size=count)


def split_dataset(data: Dataset, train_fraction: float, max_items: int, seed: int) -> tuple[Dataset, Dataset]:
    """Permute, truncate to ``max_items`` and split at ``floor(train_fraction * N)``."""
    if len(data) < 3:
        raise ValidationError("need at least 3 items to split")
    perm = np.random.default_rng(seed).permutation(len(data))[:max_items]
    n_train = int(math.floor(train_fraction * len(perm)))
    if n_train == 0 or n_train == len(perm):
        raise ValidationError(f"split of {len(perm)} items at fraction {train_fraction} leaves one side empty")
    return data.take(perm[:n_train]), data.take(perm[n_train:])


@dataclass
class MetricsRecord:
    test_ll: float
    accuracy: float
    n_instances: int

    def to_dict(self):
        return {"test_ll": self.test_ll, "accuracy": self.accuracy, "n_instances": self.n_instances}


def score_predictions(C: np.ndarray, targets: np.ndarray) -> MetricsRecord:
    """Test log likelihood and argmax accuracy of per-instance distributions ``C``."""
    rows = np.arange(len(targets))
    ll = float(np.sum(np.log(C[rows, targets])))
    acc = float(np.mean(np.argmax(C, axis=1) == targets))
    return MetricsRecord(ll, acc, int(len(targets)))


def evaluate_market(test: LabeledBeliefSet, wealths, utilities, config: SolverConfig = SolverConfig()) -> MetricsRecord:
    """Clear one market per test instance and score its prices on the targets."""
    C, _ = solve_many(test.by_instance(), wealths, utilities, config)
    return score_predictions(C, test.targets)


def adapt_wealths(scheme: str, epochs: int, train: LabeledBeliefSet, utilities, config: SolverConfig) -> np.ndarray:
    """Run the configured wealth-update scheme from uniform wealths; returns ``(epochs+1, N_A)``."""
    w = np.full(train.num_agents, 1.0 / train.num_agents)
    if scheme == "none" or epochs == 0:
        return w[None, :]
    if scheme == "batch":
        return run_batch_epochs(w, train, utilities, epochs, config)
    trajectory = [w]
    for _ in range(epochs):
        w, _ = run_online_epoch(w, train, utilities, config)
        trajectory.append(w)
    return np.stack(trajectory)


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def corrupt_beliefs(beliefs: np.ndarray) -> np.ndarray:
    """Shift class labels cyclically (k -> k+1) so the agent is confidently wrong."""
    return np.roll(beliefs, 1, axis=-1)


@dataclass
class Repetition:
    index: int
    seed: int
    train: LabeledBeliefSet
    test: LabeledBeliefSet
    etas: np.ndarray


def prepare_repetition(config: ExperimentConfig, data: Dataset, index: int) -> Repetition:
    """Split, train providers and compute train/test belief arrays for one repetition.

    Repetition seeds come from ``SeedSequence(base_seed).spawn``, so every
    method compared within a repetition sees the same split, agents and etas.
    """
    rep_ss = np.random.SeedSequence(config.base_seed).spawn(index + 1)[index]
    split_ss, agents_ss, eta_ss = rep_ss.spawn(3)
    train, test = split_dataset(data, config.train_fraction, config.max_items, _seed_int(split_ss))
    providers = []
    for agent_ss in agents_ss.spawn(config.num_agents):
        seed = _seed_int(agent_ss)
        if config.agent_kind == "bagged_tree":
            providers.append(train_bagged_tree(train, config.depth_limit, config.min_leaf, seed))
        else:
            idx = np.random.default_rng(seed).integers(0, len(train), size=len(train))
            providers.append(train_gaussian_nb(train.take(idx), config.var_floor))
    b_train = predict_beliefs(providers, train)
    b_test = predict_beliefs(providers, test)
    if config.num_corrupted:
        b_train[: config.num_corrupted] = corrupt_beliefs(b_train[: config.num_corrupted])
        b_test[: config.num_corrupted] = corrupt_beliefs(b_test[: config.num_corrupted])
    mode = config.eta_mode
    if mode["mode"] == "gamma":
        etas = sample_eta(config.num_agents, mode.get("shape", 3.0), mode.get("scale", 1.0), _seed_int(eta_ss))
    else:
        etas = np.full(config.num_agents, float(mode["eta"]))
    return Repetition(
        index, _seed_int(rep_ss),
        LabeledBeliefSet(b_train, train.labels), LabeledBeliefSet(b_test, test.labels), etas,
    )


def iso_utilities(etas) -> tuple[UtilitySpec, ...]:
    return tuple(UtilitySpec.isoelastic(float(e)) for e in etas)


def log_utilities(n: int) -> tuple[UtilitySpec, ...]:
    return (UtilitySpec.logarithmic(),) * n


def single_agent_lls(data: LabeledBeliefSet) -> np.ndarray:
    cols = np.arange(data.num_instances)
    return np.log(data.beliefs[:, cols, data.targets]).sum(axis=1)


def run_repetition(config: ExperimentConfig, data: Dataset, index: int) -> dict:
    rep = prepare_repetition(config, data, index)
    n = config.num_agents
    test_b = rep.test.beliefs
    cols = np.arange(rep.test.num_instances)
    out = {"repetition": index, "seed": rep.seed, "etas": rep.etas.tolist(), "methods": {}, "wealths": {}}
    try:
        for name, utilities in (("iso_market", iso_utilities(rep.etas)), ("log_market", log_utilities(n))):
            traj = adapt_wealths(config.update_scheme, config.epochs, rep.train, utilities, config.solver)
            out["wealths"][name] = traj[-1].tolist()
            out["methods"][name] = evaluate_market(rep.test, traj[-1], utilities, config.solver).to_dict()
    except MarketError as exc:
        raise type(exc)(f"repetition {index}: {exc}") from exc

    out["methods"]["uniform_mixture"] = score_predictions(test_b.mean(axis=0), rep.test.targets).to_dict()
    per_agent_ll = single_agent_lls(rep.test)
    per_agent_acc = np.mean(np.argmax(test_b, axis=2) == rep.test.targets[None, :], axis=1)
    out["methods"]["mean_single"] = {
        "test_ll": float(per_agent_ll.mean()),
        "accuracy": float(per_agent_acc.mean()),
        "n_instances": int(len(cols)),
    }
    best = int(np.argmax(single_agent_lls(rep.train)))
    out["methods"]["best_single"] = score_predictions(test_b[best], rep.test.targets).to_dict()
    out["best_single_agent"] = best
    return out


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _finite_or_none(x: float):
    return float(x) if math.isfinite(x) else None


def paired_summary(diffs) -> dict:
    """Mean, spread and right-tailed paired t-test (df = n - 1) of per-repetition differences."""
    d = np.asarray(diffs, dtype=np.float64)
    n = d.size
    mean = float(d.mean())
    if n < 2:
        return {"mean": mean, "sd": None, "se": None, "t_stat": None, "p_value": None, "df": n - 1}
    sd = float(d.std(ddof=1))
    se = sd / math.sqrt(n)
    if se == 0.0:
        t_stat = 0.0 if mean == 0.0 else math.copysign(math.inf, mean)
    else:
        t_stat = mean / se
    p = float(stats.t.sf(t_stat, n - 1)) if math.isfinite(t_stat) else (0.0 if t_stat > 0 else 1.0)
    return {"mean": mean, "sd": sd, "se": se, "t_stat": _finite_or_none(t_stat), "p_value": p, "df": n - 1}


def llr(lls_a, lls_b) -> np.ndarray:
    """Per-repetition log likelihood ratio ``LL_A - LL_B``."""
    return np.asarray(lls_a, dtype=np.float64) - np.asarray(lls_b, dtype=np.float64)


@dataclass
class ExperimentReport:
    config: dict
    repetitions: list
    summary: dict = field(default_factory=dict)

    def method_lls(self, method: str) -> np.ndarray:
        return np.array([r["methods"][method]["test_ll"] for r in self.repetitions])

    def to_json(self) -> str:
        return json.dumps(
            {"config": self.config, "summary": self.summary, "repetitions": self.repetitions},
            indent=1, sort_keys=True, allow_nan=False,
        ) + "\n"

    def to_table(self) -> str:
        baseline = self.config["baseline"]
        header = f"{'method':<16}{'mean LL':>14}{'accuracy':>10}{'LLR(base-m)':>14}{'sd':>10}{'t':>10}{'p':>12}"
        lines = [f"baseline: {baseline}   repetitions: {len(self.repetitions)}", header, "-" * len(header)]
        for m in METHODS:
            s = self.summary["methods"][m]
            comp = self.summary["llr_vs_baseline"].get(m)
            if comp is None:
                tail = f"{'-':>14}{'-':>10}{'-':>10}{'-':>12}"
            else:
                tail = (
                    f"{comp['mean']:>14.4f}{_fmt(comp['sd'], '>10.4f')}"
                    f"{_fmt(comp['t_stat'], '>10.3f')}{_fmt(comp['p_value'], '>12.3g')}"
                )
            lines.append(f"{m:<16}{s['mean_test_ll']:>14.4f}{s['mean_accuracy']:>10.4f}{tail}")
        return "\n".join(lines) + "\n"


def _fmt(x, spec):
    width = spec[1:].split(".")[0]
    return f"{'-':>{width}}" if x is None else format(x, spec)


def summarize(config: ExperimentConfig, reps: list) -> dict:
    methods = {}
    for m in METHODS:
        lls = [r["methods"][m]["test_ll"] for r in reps]
        accs = [r["methods"][m]["accuracy"] for r in reps]
        methods[m] = {"mean_test_ll": float(np.mean(lls)), "mean_accuracy": float(np.mean(accs))}
    base = np.array([r["methods"][config.baseline]["test_ll"] for r in reps])
    comparisons = {}
    for m in METHODS:
        if m == config.baseline:
            continue
        other = np.array([r["methods"][m]["test_ll"] for r in reps])
        comparisons[m] = paired_summary(llr(base, other))
    iso = np.array([r["methods"]["iso_market"]["test_ll"] for r in reps])
    logm = np.array([r["methods"]["log_market"]["test_ll"] for r in reps])
    mean_single = np.array([r["methods"]["mean_single"]["test_ll"] for r in reps])
    n_test = np.array([r["methods"]["iso_market"]["n_instances"] for r in reps])
    return {
        "methods": methods,
        "llr_vs_baseline": comparisons,
        "iso_vs_log": paired_summary(llr(iso, logm)),
        "iso_vs_log_scaled": paired_summary(llr(iso, logm) / n_test),
        "iso_vs_mean_single": paired_summary(llr(iso, mean_single)),
    }


def _map_repetitions(fn, config: ExperimentConfig, data: Dataset, *args) -> list:
    indices = range(config.repetitions)
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            futures = [pool.submit(fn, config, data, i, *args) for i in indices]
            return [f.result() for f in futures]
    return [fn(config, data, i, *args) for i in indices]


def run_experiment(config: ExperimentConfig, data: Dataset | None = None) -> ExperimentReport:
    data = load_dataset(config) if data is None else data
    reps = _map_repetitions(run_repetition, config, data)
    return ExperimentReport(config.to_dict(), reps, summarize(config, reps))


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def _eta_sweep_repetition(config: ExperimentConfig, data: Dataset, index: int, eta_grid) -> dict:
    rep = prepare_repetition(config, data, index)
    n = config.num_agents
    row = {"repetition": index, "homogeneous": {}}
    for eta in eta_grid:
        utilities = (UtilitySpec.isoelastic(float(eta)),) * n
        w = adapt_wealths(config.update_scheme, config.epochs, rep.train, utilities, config.solver)[-1]
        row["homogeneous"][repr(float(eta))] = evaluate_market(rep.test, w, utilities, config.solver).test_ll
    if config.eta_mode["mode"] == "gamma":
        etas = rep.etas
    else:
        etas = sample_eta(n, 3.0, 1.0, rep.seed)
    utilities = iso_utilities(etas)
    w = adapt_wealths(config.update_scheme, config.epochs, rep.train, utilities, config.solver)[-1]
    row["inhomogeneous"] = evaluate_market(rep.test, w, utilities, config.solver).test_ll
    return row


def run_eta_sweep(config: ExperimentConfig, eta_grid, data: Dataset | None = None) -> dict:
    """Test LL of homogeneous markets over ``eta_grid`` next to a gamma-sampled inhomogeneous market."""
    eta_grid = [float(e) for e in eta_grid]
    if not eta_grid or any(e <= 0 for e in eta_grid):
        raise ValidationError("eta_grid must be a non-empty list of positive values")
    data = load_dataset(config) if data is None else data
    rows = _map_repetitions(_eta_sweep_repetition, config, data, eta_grid)
    table = []
    for eta in eta_grid:
        vals = np.array([r["homogeneous"][repr(eta)] for r in rows])
        table.append({"eta": eta, "mean_test_ll": float(vals.mean()), "sd": float(vals.std(ddof=1)) if len(vals) > 1 else None})
    inh = np.array([r["inhomogeneous"] for r in rows])
    return {
        "config": config.to_dict(),
        "eta_grid": eta_grid,
        "table": table,
        "inhomogeneous": {"mean_test_ll": float(inh.mean()), "sd": float(inh.std(ddof=1)) if len(inh) > 1 else None},
        "repetitions": rows,
    }


def _epoch_sweep_repetition(config: ExperimentConfig, data: Dataset, index: int, max_epochs: int) -> dict:
    rep = prepare_repetition(config, data, index)
    out = {"repetition": index, "markets": {}}
    for name, utilities in (("iso_market", iso_utilities(rep.etas)), ("log_market", log_utilities(config.num_agents))):
        traj = run_batch_epochs(np.full(config.num_agents, 1.0 / config.num_agents), rep.train, utilities, max_epochs, config.solver)
        trace = []
        for epoch, w in enumerate(traj):
            m = evaluate_market(rep.test, w, utilities, config.solver)
            trace.append({"epoch": epoch, "test_ll": m.test_ll, "accuracy": m.accuracy})
        out["markets"][name] = {"trace": trace, "wealths": traj.tolist()}
    return out


def run_epoch_sweep(config: ExperimentConfig, max_epochs: int, data: Dataset | None = None) -> dict:
    """Batch-update wealths for ``max_epochs`` epochs, scoring the test split after each.

    Epoch 0 is the uniform-wealth market. Returned ``mean_trace`` rows average
    over repetitions; per-repetition wealth trajectories are kept as well.
    """
    if max_epochs < 1:
        raise ValidationError("max_epochs must be >= 1")
    data = load_dataset(config) if data is None else data
    rows = _map_repetitions(_epoch_sweep_repetition, config, data, max_epochs)
    mean_trace = {}
    for name in ("iso_market", "log_market"):
        mean_trace[name] = [
            {
                "epoch": e,
                "test_ll": float(np.mean([r["markets"][name]["trace"][e]["test_ll"] for r in rows])),
                "accuracy": float(np.mean([r["markets"][name]["trace"][e]["accuracy"] for r in rows])),
            }
            for e in range(max_epochs + 1)
        ]
    return {"config": config.to_dict(), "max_epochs": max_epochs, "mean_trace": mean_trace, "repetitions": rows}


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n")
