"""End-to-end experiment: data, candidates, ground truth, OPE scores, selection reports.

Every output file starts with ``#`` comment lines carrying the resolved
configuration and seed. Numbers are written with ``repr`` and JSON with sorted
keys, so identical configurations give byte-identical files.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import data, fqi, mdp, nn, ope, selection
from .data import BehaviorSpec, Dataset, atomic_write
from .fqi import CandidateSet, HyperGrid
from .sepsis import SepsisSimulator
from .seeding import derive_seed

log = logging.getLogger("opesel")

ENVIRONMENTS = {"sepsis": SepsisSimulator}

DISCRETE_METHODS = ("wis", "am", "fqe", "wdr-fqe", "wdr-am", "fqi-value", "tde")
CONTINUOUS_METHODS = ("wis", "am", "fqe", "wdr-fqe", "fqi-value", "tde")
REGRET_AT = (1, 5, 10)

# sub-seed keys under a replication seed
_TRAIN, _VAL, _CANDIDATES, _AUX = 0, 1, 2, 3


def sub_seed(seed: int, key: int) -> int:
    return derive_seed(seed, key) & 0x7FFFFFFF


def make_env(name: str):
    try:
        return ENVIRONMENTS[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}") from None


class ConfigError(ValueError):
    pass


# settings that cannot change any result
RUNTIME_KEYS = ("output_dir", "workers")


# -- configuration -----------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Resolved experiment settings; see README for the JSON key paths."""

    env: str = "sepsis"
    state_mode: str = "discrete"
    m_train: int = 10000
    m_val: int = 10000
    behavior: str = "uniform"
    discount: float = 0.99
    # discrete candidates: tabular FQI iteration checkpoints per training discount
    fqi_iterations: list = field(default_factory=lambda: [1, 2, 4, 8, 16, 32])
    train_discounts: list = field(default_factory=lambda: [0.5, 0.8, 0.9, 0.99])
    # continuous candidates: hyperparameter grid and shared network settings
    grid: dict = field(default_factory=lambda: asdict(HyperGrid()))
    net: dict = field(default_factory=lambda: asdict(nn.NetConfig()))
    ope_net: dict = field(default_factory=lambda: asdict(nn.NetConfig()))
    methods: list | None = None
    epsilon: float = 0.01
    horizon: int = 20
    two_stage: str = "wis,fqe,auto"
    combine: list = field(default_factory=lambda: ["wis", "am", "fqe"])
    seeds: list = field(default_factory=lambda: [0])
    workers: int = 1
    output_dir: str = "results"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"env: unknown environment {self.env!r}")
        if self.state_mode not in ("discrete", "continuous"):
            raise ConfigError("state_mode must be 'discrete' or 'continuous'")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.m_train < 1 or self.m_val < 1:
            raise ConfigError("m_train and m_val must be >= 1")
        if not 0 < self.discount <= 1:
            raise ConfigError("discount must lie in (0, 1]")
        BehaviorSpec.parse(self.behavior)
        unknown = set(self.resolved_methods) - set(DISCRETE_METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}")
        if self.state_mode == "continuous" and "wdr-am" in self.resolved_methods:
            raise ConfigError("wdr-am is only available for discrete states")
        parse_two_stage(self.two_stage)

    @property
    def resolved_methods(self) -> list[str]:
        if self.methods is not None:
            return list(self.methods)
        return list(DISCRETE_METHODS if self.state_mode == "discrete" else CONTINUOUS_METHODS)

    @property
    def net_config(self) -> nn.NetConfig:
        return nn.NetConfig(**self.net)

    @property
    def ope_net_config(self) -> nn.NetConfig:
        return nn.NetConfig(**self.ope_net)

    @property
    def hyper_grid(self) -> HyperGrid:
        return HyperGrid(**{k: tuple(v) for k, v in self.grid.items()})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = self.resolved_methods
        return d

    def to_json(self) -> str:
        """Config embedded in output headers; output location and worker count are left out."""
        d = {k: v for k, v in self.to_dict().items() if k not in RUNTIME_KEYS}
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        merged = {}
        for k, v in d.items():
            default = getattr(cls(), k) if k in ("grid", "net", "ope_net") else None
            merged[k] = {**default, **v} if isinstance(default, dict) else v
        return cls(**merged)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None

    def replace(self, **overrides) -> "ExperimentConfig":
        d = copy.deepcopy(asdict(self))
        d.update({k: v for k, v in overrides.items() if v is not None})
        return ExperimentConfig.from_dict(d)


def parse_two_stage(text: str) -> tuple[str, str, str]:
    """``stage1,stage2,alpha`` where alpha is an integer or ``auto`` (K/4)."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3 or not all(parts):
        raise ConfigError(f"two_stage must look like 'wis,fqe,24', got {text!r}")
    if parts[2] != "auto" and not parts[2].isdigit():
        raise ConfigError(f"two_stage alpha must be an integer or 'auto', got {parts[2]!r}")
    return parts[0], parts[1], parts[2]


def resolve_alpha(alpha: str, k: int) -> int:
    a = max(1, k // 4) if alpha == "auto" else int(alpha)
    if not 1 <= a <= k:
        raise ConfigError(f"two-stage alpha {a} outside [1, {k}]")
    return a


# -- candidates and truth ----------------------------------------------------------


def build_candidates(config: ExperimentConfig, train: Dataset, env, seed: int) -> CandidateSet:
    if config.state_mode == "discrete":
        return fqi.build_tabular_candidates(
            train, config.fqi_iterations, env.n_states, env.n_actions, config.discount, config.train_discounts
        )
    return fqi.build_candidates(
        train, config.hyper_grid, sub_seed(seed, _CANDIDATES), env.features,
        env.n_states, env.n_actions, config.discount, config.net_config,
    )


def ground_truth(cset: CandidateSet, env, discount: float) -> np.ndarray:
    exact = env.exact_mdp(discount)
    return np.array([mdp.evaluate_policy_analytic(exact, c.policy).scalar_value for c in cset])


# -- scoring -----------------------------------------------------------------------


@dataclass
class ScoreRow:
    policy_id: str
    method: str
    hyperparams: dict
    raw_value: float
    diagnostics: dict

    @property
    def value(self) -> float:
        """Reported value: return estimates are clipped to [-1, 1]; TD scores are not."""
        if self.method == "tde" or math.isnan(self.raw_value):
            return self.raw_value
        return float(np.clip(self.raw_value, *fqi.RETURN_RANGE))


def _fqe_job(policy, val: Dataset, horizon: int, discount: float, net: nn.NetConfig | None, featurize):
    q, est = ope.fqe(val, policy, horizon, net, discount, featurize)
    return q, est


def _pool_map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def score_candidates(
    cset: CandidateSet,
    val: Dataset,
    env,
    methods: Sequence[str],
    state_mode: str,
    epsilon: float,
    horizon: int,
    discount: float,
    seed: int,
    ope_net: nn.NetConfig | None = None,
    workers: int = 1,
) -> list[ScoreRow]:
    """OPE scores of every candidate on ``val``, ordered by candidate then method.

    Auxiliary models (behavior estimate, AM models) are fitted once per call and
    shared by all candidates.
    """
    methods = list(methods)
    discrete = state_mode == "discrete"
    aux_seed = sub_seed(seed, _AUX)
    ope_net = ope_net or nn.NetConfig()
    needs_behavior = {"wis", "wdr-fqe", "wdr-am"} & set(methods)
    needs_fqe = {"fqe", "wdr-fqe"} & set(methods)

    behavior = None
    if needs_behavior:
        if discrete:
            behavior = mdp.estimate_tabular_behavior(val, env.n_states, env.n_actions)
        else:
            clf = ope.fit_behavior_classifier(val, env.features, env.n_actions, ope_net.with_seed(sub_seed(aux_seed, 0)))
            behavior = ope.classifier_behavior(clf, val, env.features)
    am_model = None
    if {"am", "wdr-am"} & set(methods):
        if discrete:
            am_model = mdp.estimate_tabular_mdp(val, env.n_states, env.n_actions, discount)
        else:
            am_model = ope.fit_am_models(val, env.features, env.n_actions, ope_net.with_seed(sub_seed(aux_seed, 1)))

    fqe_results = {}
    if needs_fqe:
        net = None if discrete else ope_net.with_seed(sub_seed(aux_seed, 2))
        job = partial(_fqe_job, val=val, horizon=horizon, discount=discount, net=net,
                      featurize=None if discrete else env.features)
        fqe_results = dict(zip(range(len(cset)), _pool_map(job, [c.policy for c in cset], workers)))

    init_states = val.initial_states
    rows: list[ScoreRow] = []
    for k, cand in enumerate(cset):
        pid, pol = cand.policy_id, cand.policy
        for m in methods:
            try:
                if m == "wis":
                    est = ope.wis(val, pol, behavior, epsilon, discount)
                    rows.append(ScoreRow(pid, m, {"epsilon": epsilon}, est.value, est.diagnostics))
                elif m == "am":
                    if discrete:
                        est = ope.am_tabular(am_model, pol, init_states)
                        rows.append(ScoreRow(pid, m, {}, est.value, {}))
                    else:
                        est = ope.am_rollout(am_model, ope.greedy_feature_policy(cand.q), horizon,
                                             env.features(init_states), discount)
                        rows.append(ScoreRow(pid, m, {"horizon": horizon}, est.value, est.diagnostics))
                elif m == "fqe":
                    est = fqe_results[k][1]
                    rows.append(ScoreRow(pid, m, {"horizon": horizon}, est.value, est.diagnostics))
                elif m == "wdr-fqe":
                    est = ope.wdr(val, pol, behavior, epsilon, fqe_results[k][0], discount, m)
                    rows.append(ScoreRow(pid, m, {"epsilon": epsilon, "horizon": horizon}, est.value, est.diagnostics))
                elif m == "wdr-am":
                    est = ope.wdr(val, pol, behavior, epsilon, ope.am_q(am_model, pol), discount, m)
                    rows.append(ScoreRow(pid, m, {"epsilon": epsilon}, est.value, est.diagnostics))
                elif m == "fqi-value":
                    est = ope.fqi_value_score(pol, cand.q, init_states)
                    rows.append(ScoreRow(pid, m, {}, est.value, {}))
                elif m == "tde":
                    err = ope.rms_tde(val, pol, cand.q, discount)
                    rows.append(ScoreRow(pid, m, {}, -err, {"rms_td_error": err}))
                else:
                    raise ConfigError(f"unknown method {m!r}")
            except ope.UndefinedEstimateError as exc:
                rows.append(ScoreRow(pid, m, {"epsilon": epsilon}, math.nan, {"undefined": str(exc)}))
    return rows


# -- file formats ------------------------------------------------------------------

SCORES_TAG = "# opesel-scores v1"
TRUTH_TAG = "# opesel-truth v1"
REPORT_TAG = "# opesel-report v1"
SCORE_COLUMNS = ["policy_id", "method", "hyperparams", "value", "raw_value", "diagnostics"]


def _num(x: float) -> str:
    return repr(float(x))


def _json(d) -> str:
    return json.dumps(d, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _header(tag: str, seed, config_json: str | None, extra: Iterable[str] = ()) -> list[str]:
    lines = [f"{tag}; seed={seed}"]
    if config_json is not None:
        lines.append(f"# config={config_json}")
    lines += [f"# {e}" for e in extra]
    return lines


def _csv_text(header: list[str], columns: list[str], rows: Iterable[list]) -> str:
    buf = io.StringIO()
    buf.write("\n".join(header) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def format_scores(rows: Sequence[ScoreRow], seed, config_json: str | None) -> str:
    body = [[r.policy_id, r.method, _json(r.hyperparams), _num(r.value), _num(r.raw_value), _json(r.diagnostics)]
            for r in rows]
    return _csv_text(_header(SCORES_TAG, seed, config_json), SCORE_COLUMNS, body)


def _split_header(text: str, tag: str, what: str) -> tuple[dict, list[str]]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(tag):
        raise ValueError(f"line 1: not an opesel {what} file")
    meta = {"seed": lines[0].split("seed=", 1)[1] if "seed=" in lines[0] else ""}
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("# config="):
            meta["config"] = line[len("# config="):]
        if not line.startswith("#"):
            body_start = i
            break
    else:
        body_start = len(lines)
    return meta, lines[body_start:]


def parse_scores(text: str) -> tuple[dict, list[ScoreRow]]:
    meta, body = _split_header(text, SCORES_TAG, "scores")
    reader = csv.reader(body)
    cols = next(reader, None)
    if cols != SCORE_COLUMNS:
        raise ValueError(f"scores: unexpected columns {cols}")
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if len(rec) != len(SCORE_COLUMNS):
            raise ValueError(f"scores: row {lineno}: expected {len(SCORE_COLUMNS)} fields")
        rows.append(ScoreRow(rec[0], rec[1], json.loads(rec[2]), float(rec[4]), json.loads(rec[5])))
    return meta, rows


def format_truth(ids: Sequence[str], truths: np.ndarray, seed, config_json: str | None) -> str:
    return _csv_text(_header(TRUTH_TAG, seed, config_json), ["policy_id", "truth"],
                     [[p, _num(v)] for p, v in zip(ids, truths)])


def parse_truth(text: str) -> tuple[dict, list[str], np.ndarray]:
    meta, body = _split_header(text, TRUTH_TAG, "truth")
    reader = csv.reader(body)
    if next(reader, None) != ["policy_id", "truth"]:
        raise ValueError("truth: unexpected columns")
    ids, vals = [], []
    for rec in reader:
        ids.append(rec[0])
        vals.append(float(rec[1]))
    return meta, ids, np.array(vals)


# -- selection reports -------------------------------------------------------------


def score_table(rows: Sequence[ScoreRow], ids: Sequence[str]) -> dict[str, np.ndarray]:
    """Method -> raw score vector aligned with ``ids``."""
    pos = {p: i for i, p in enumerate(ids)}
    table: dict[str, np.ndarray] = {}
    for r in rows:
        if r.policy_id not in pos:
            raise ValueError(f"score for unknown policy {r.policy_id!r}")
        table.setdefault(r.method, np.full(len(ids), np.nan))[pos[r.policy_id]] = r.raw_value
    return table


def _ranks(scores: np.ndarray) -> np.ndarray:
    """1 = best; ties and NaN handled as in selection ordering."""
    r = np.empty(len(scores), dtype=np.int64)
    r[selection.order_by_score(scores)] = np.arange(1, len(scores) + 1)
    return r


def _metrics(scores: np.ndarray, truths: np.ndarray, ids: Sequence[str]) -> dict:
    try:
        rho = selection.spearman_rho(scores, truths)
    except selection.UndefinedCorrelation:
        rho = None
    out = {"spearman": rho, "chosen": ids[int(selection.top_n(scores, 1)[0])]}
    for n in REGRET_AT:
        if n <= len(ids):
            out[f"regret@{n}"] = selection.regret_at_n(scores, truths, n)
    return out


def selection_summary(
    ids: Sequence[str], truths: np.ndarray, table: dict[str, np.ndarray], two_stage: str, combine: Sequence[str]
) -> dict:
    summary = {"k": len(ids), "best_truth": float(truths.max()),
               "best_policy": ids[int(np.argmax(truths))], "methods": {}}
    for m, scores in table.items():
        summary["methods"][m] = _metrics(scores, truths, ids)
    present = [m for m in combine if m in table]
    if len(present) >= 2:
        vecs = [table[m] for m in present]
        summary["methods"]["avg-score"] = _metrics(selection.average_score(vecs), truths, ids)
        summary["methods"]["avg-rank"] = _metrics(selection.average_rank(vecs), truths, ids)
    s1, s2, alpha = parse_two_stage(two_stage)
    if s1 in table and s2 in table:
        a = resolve_alpha(alpha, len(ids))
        res = selection.two_stage_select(table[s1], lambda i: table[s2][i], a)
        summary["two_stage"] = {
            "stage1": s1, "stage2": s2, "alpha": a, "chosen": ids[res.chosen],
            "regret@1": float(truths.max() - truths[res.chosen]),
            "subset": [ids[i] for i in res.subset],
        }
    return summary


def format_report(ids, truths, table: dict[str, np.ndarray], seed, config_json) -> str:
    methods = list(table)
    cols = ["policy_id", "truth", "truth_rank"]
    for m in methods:
        cols += [f"{m}_score", f"{m}_rank"]
    tr = _ranks(truths)
    ranks = {m: _ranks(table[m]) for m in methods}
    body = []
    for i, p in enumerate(ids):
        row = [p, _num(truths[i]), str(tr[i])]
        for m in methods:
            row += [_num(table[m][i]), str(ranks[m][i])]
        body.append(row)
    return _csv_text(_header(REPORT_TAG, seed, config_json), cols, body)


def format_summary(summary: dict, seed, config_json) -> str:
    head = _header("# opesel-summary v1", seed, config_json)
    return "\n".join(head) + "\n" + json.dumps(summary, sort_keys=True, indent=2, default=_json_default) + "\n"


def write_selection(
    out_dir: Path, seed, ids, truths, rows: Sequence[ScoreRow], two_stage: str, combine, config_json
) -> dict:
    """Write ``report-seed<seed>.csv`` and ``summary-seed<seed>.txt``; returns the summary."""
    table = score_table(rows, ids)
    summary = selection_summary(ids, truths, table, two_stage, combine)
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write(out_dir / f"report-seed{seed}.csv", format_report(ids, truths, table, seed, config_json))
    atomic_write(out_dir / f"summary-seed{seed}.txt", format_summary(summary, seed, config_json))
    return summary


# -- pipeline -----------------------------------------------------------------------


def generate_pair(config: ExperimentConfig, env, seed: int) -> tuple[Dataset, Dataset]:
    behavior = BehaviorSpec.parse(config.behavior)
    train = data.generate(env, behavior, config.m_train, seed=sub_seed(seed, _TRAIN), discount=config.discount)
    val = data.generate(env, behavior, config.m_val, seed=sub_seed(seed, _VAL), discount=config.discount)
    return train, val


def run_seed(config: ExperimentConfig, seed: int, workers: int = 1) -> dict:
    """One replication: writes scores, truth, report and summary files for ``seed``."""
    env = make_env(config.env)
    out = Path(config.output_dir)
    cfg_json = config.to_json()
    train, val = generate_pair(config, env, seed)
    cset = build_candidates(config, train, env, seed)
    truths = ground_truth(cset, env, config.discount)
    rows = score_candidates(
        cset, val, env, config.resolved_methods, config.state_mode, config.epsilon, config.horizon,
        config.discount, seed, config.ope_net_config, workers,
    )
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / f"scores-seed{seed}.csv", format_scores(rows, seed, cfg_json))
    atomic_write(out / f"truth-seed{seed}.csv", format_truth(cset.ids, truths, seed, cfg_json))
    return write_selection(out, seed, cset.ids, truths, rows, config.two_stage, config.combine, cfg_json)


def _run_seed_safe(config: ExperimentConfig, seed: int, workers: int) -> tuple[int, dict | None, str | None]:
    try:
        return seed, run_seed(config, seed, workers), None
    except Exception as exc:  # one failed seed must not stop the others
        return seed, None, f"{type(exc).__name__}: {exc}"


def aggregate(summaries: dict[int, dict], failures: dict[int, str]) -> dict:
    """Mean/std of Spearman and regret quantiles per method across seeds."""
    methods: dict[str, dict[str, list]] = {}
    for seed in sorted(summaries):
        s = summaries[seed]
        entries = dict(s["methods"])
        if "two_stage" in s:
            ts = s["two_stage"]
            entries[f"two-stage({ts['stage1']},{ts['stage2']},{ts['alpha']})"] = {"regret@1": ts["regret@1"]}
        for m, met in entries.items():
            acc = methods.setdefault(m, {})
            for key, v in met.items():
                if key.startswith("regret@") or key == "spearman":
                    acc.setdefault(key, []).append(v)
    out = {}
    for m, acc in methods.items():
        res = {}
        for key, vals in acc.items():
            arr = np.array([v for v in vals if v is not None], dtype=np.float64)
            if key == "spearman":
                res[key] = {"mean": float(arr.mean()) if arr.size else None,
                            "std": float(arr.std()) if arr.size else None, "n": int(arr.size)}
            else:
                q = np.quantile(arr, [0.0, 0.25, 0.5, 0.75, 1.0])
                res[key] = dict(zip(["min", "q25", "median", "q75", "max"], map(float, q)))
        out[m] = res
    return {"seeds": sorted(summaries), "failed": {str(k): v for k, v in sorted(failures.items())}, "methods": out}


def run_pipeline(config: ExperimentConfig) -> dict:
    """Run every seed, then write ``aggregate.txt``. Failed seeds are logged and listed."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = list(config.seeds)
    if config.workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_seed_safe, [config] * len(seeds), seeds, [1] * len(seeds)))
    else:
        results = [_run_seed_safe(config, s, config.workers) for s in seeds]
    summaries, failures = {}, {}
    for seed, summary, err in results:
        if err is None:
            summaries[seed] = summary
        else:
            log.error("seed %s failed: %s", seed, err)
            failures[seed] = err
    agg = aggregate(summaries, failures)
    atomic_write(out / "aggregate.txt", format_summary(agg, ",".join(map(str, seeds)), config.to_json()))
    return agg


# -- sensitivity analysis -----------------------------------------------------------

SWEEP_COLUMNS = ["sweep", "setting", "method", "spearman", "regret@1", "regret@5", "regret@10"]
SWEEP_KINDS = ("epsilon", "horizon", "m_val", "behavior")


def sensitivity_sweep(
    config: ExperimentConfig,
    cset: CandidateSet,
    truths: np.ndarray,
    val: Dataset,
    kind: str,
    values: Sequence,
    seed: int,
) -> list[list[str]]:
    """Re-score the same candidates while varying one OPE-side setting.

    ``epsilon`` and ``horizon`` reuse ``val``; ``m_val`` and ``behavior``
    regenerate validation data from the replication seed. Candidates and ground
    truth are never recomputed.
    """
    if kind not in SWEEP_KINDS:
        raise ConfigError(f"unknown sweep {kind!r}; choose from {', '.join(SWEEP_KINDS)}")
    env = make_env(config.env)
    out = []
    for v in values:
        cfg, dataset = config, val
        if kind == "epsilon":
            cfg = config.replace(epsilon=float(v))
        elif kind == "horizon":
            cfg = config.replace(horizon=int(v))
        elif kind == "m_val":
            cfg = config.replace(m_val=int(v))
        else:
            cfg = config.replace(behavior=str(v))
        if kind in ("m_val", "behavior"):
            behavior = BehaviorSpec.parse(cfg.behavior)
            m = cfg.m_val
            if behavior.kind == "mixture" and kind == "behavior":
                m = sum(n for _, n in behavior.components)
            dataset = data.generate(env, behavior, m, seed=sub_seed(seed, _VAL), discount=cfg.discount)
        rows = score_candidates(cset, dataset, env, cfg.resolved_methods, cfg.state_mode, cfg.epsilon,
                                cfg.horizon, cfg.discount, seed, cfg.ope_net_config, cfg.workers)
        for m, scores in score_table(rows, cset.ids).items():
            met = _metrics(scores, truths, cset.ids)
            out.append([kind, str(v), m, "" if met["spearman"] is None else _num(met["spearman"])]
                       + [_num(met[f"regret@{n}"]) if f"regret@{n}" in met else "" for n in REGRET_AT])
    return out


def format_sweep(rows: list[list[str]], seed, config_json) -> str:
    return _csv_text(_header("# opesel-sweep v1", seed, config_json), SWEEP_COLUMNS, rows)


def cdf_table(
    score_runs: Sequence[np.ndarray], truth_runs: Sequence[np.ndarray], alphas: Sequence[int], betas: Sequence[int]
) -> list[list[str]]:
    """Empirical top-alpha / top-beta hit rates next to the random-ordering probability."""
    k = len(truth_runs[0])
    if any(len(t) != k for t in truth_runs):
        raise ValueError("all runs must score the same number of candidates")
    emp = selection.empirical_cdf(score_runs, truth_runs, alphas, betas)
    return [[str(a), str(b), _num(emp[i, j]), _num(selection.random_prune_probability(k, a, b))]
            for i, a in enumerate(alphas) for j, b in enumerate(betas)]


def format_cdf(rows: list[list[str]], method: str, n_runs: int) -> str:
    head = _header("# opesel-cdf v1", "-", None, [f"method={method}; runs={n_runs}"])
    return _csv_text(head, ["alpha", "beta", "empirical", "random"], rows)
