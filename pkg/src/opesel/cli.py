"""Command-line entry point: ``opesel <subcommand> ...``.

Errors print one JSON line ``{"error": <type>, "message": <text>}`` to stderr
and exit with status 2.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import data, fqi, nn, pipeline
from .data import BehaviorSpec
from .pipeline import ExperimentConfig


def _csv_list(cast):
    def parse(text: str):
        return [cast(x) for x in text.split(",") if x.strip()]
    return parse


def _resolve_config(args, **overrides) -> ExperimentConfig:
    base = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    return base.replace(**overrides)


def _emit(text: str, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        data.atomic_write(out, text)


def _read(path: str) -> str:
    return sys.stdin.read() if path == "-" else Path(path).read_text()


def _seed_from_meta(meta: dict, fallback: int | None) -> int:
    if fallback is not None:
        return fallback
    try:
        return int(meta["seed"])
    except (KeyError, ValueError):
        raise ValueError("no --seed given and none recorded in the input header") from None


def _dataset_role_seed(seed: int, role: str | None) -> int:
    if role is None:
        return seed
    return pipeline.sub_seed(seed, {"train": pipeline._TRAIN, "val": pipeline._VAL}[role])


# -- subcommands --------------------------------------------------------------------


def cmd_generate(args) -> None:
    cfg = _resolve_config(args, env=args.env, behavior=args.behavior)
    env = pipeline.make_env(cfg.env)
    behavior = BehaviorSpec.parse(cfg.behavior)
    m = args.m
    if m is None:
        m = cfg.m_val if args.role == "val" else cfg.m_train
    ds = data.generate(env, behavior, m, args.max_len, _dataset_role_seed(args.seed, args.role), cfg.discount)
    note = f"replication_seed={args.seed}; role={args.role or '-'}; config={cfg.to_json()}"
    ds = dataclasses.replace(ds, comments=(note,))
    _emit(data.format_dataset(ds), args.out)


def cmd_train(args) -> None:
    cfg = _resolve_config(args, state_mode=args.mode)
    env = pipeline.make_env(cfg.env)
    train = data.load(args.data)
    cset = pipeline.build_candidates(cfg, train, env, args.seed)
    fqi.save_candidates(cset, args.out, [f"replication_seed={args.seed}", f"config={cfg.to_json()}"])


def _load_manifest(path: str, cfg: ExperimentConfig):
    env = pipeline.make_env(cfg.env)
    return env, fqi.load_candidates(path, env.features, env.n_states)


def cmd_truth(args) -> None:
    cfg = _resolve_config(args)
    env, cset = _load_manifest(args.manifest, cfg)
    truths = pipeline.ground_truth(cset, env, cfg.discount)
    _emit(pipeline.format_truth(cset.ids, truths, args.seed, cfg.to_json()), args.out)


def _infer_mode(cset) -> str:
    return "discrete" if all(isinstance(c.q, fqi.TabularQ) for c in cset) else "continuous"


def cmd_evaluate(args) -> None:
    cfg = _resolve_config(args, methods=args.methods, epsilon=args.epsilon, horizon=args.horizon)
    env, cset = _load_manifest(args.manifest, cfg)
    mode = _infer_mode(cset)
    if mode != cfg.state_mode:
        cfg = cfg.replace(state_mode=mode)
    val = data.load(args.data)
    rows = pipeline.score_candidates(cset, val, env, cfg.resolved_methods, mode, cfg.epsilon, cfg.horizon,
                                     cfg.discount, args.seed, cfg.ope_net_config, cfg.workers)
    _emit(pipeline.format_scores(rows, args.seed, cfg.to_json()), args.out)


def cmd_select(args) -> None:
    meta, rows = pipeline.parse_scores(_read(args.scores))
    _, ids, truths = pipeline.parse_truth(Path(args.truth).read_text())
    seed = _seed_from_meta(meta, args.seed)
    cfg = ExperimentConfig.from_dict(json.loads(meta["config"])) if "config" in meta else ExperimentConfig()
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    cfg = cfg.replace(two_stage=args.two_stage, combine=args.combine)
    config_json = meta.get("config") if args.two_stage is None and args.combine is None and not args.config else cfg.to_json()
    summary = pipeline.write_selection(Path(args.out), seed, ids, truths, rows, cfg.two_stage, cfg.combine, config_json)
    sys.stdout.write(json.dumps({"seed": seed, "chosen": {m: v["chosen"] for m, v in summary["methods"].items()},
                                 "two_stage": summary.get("two_stage", {}).get("chosen")}, sort_keys=True) + "\n")


def cmd_analyze(args) -> None:
    if args.sweep == "cdf":
        if not args.scores or len(args.scores) != len(args.truth or []):
            raise ValueError("cdf needs matching --scores and --truth file lists")
        runs_s, runs_t = [], []
        for sp, tp in zip(args.scores, args.truth):
            _, rows = pipeline.parse_scores(Path(sp).read_text())
            _, ids, truths = pipeline.parse_truth(Path(tp).read_text())
            table = pipeline.score_table(rows, ids)
            if args.method not in table:
                raise ValueError(f"{sp}: no scores for method {args.method!r}")
            runs_s.append(table[args.method])
            runs_t.append(truths)
        k = len(runs_t[0])
        alphas = args.alphas or list(range(1, k + 1))
        betas = args.betas or list(range(1, k + 1))
        _emit(pipeline.format_cdf(pipeline.cdf_table(runs_s, runs_t, alphas, betas), args.method, len(runs_s)), args.out)
        return
    if not (args.manifest and args.data and args.truth and args.values):
        raise ValueError(f"sweep {args.sweep} needs --manifest, --data, --truth and --values")
    cfg = _resolve_config(args, methods=args.methods)
    env, cset = _load_manifest(args.manifest, cfg)
    cfg = cfg.replace(state_mode=_infer_mode(cset))
    _, ids, truths = pipeline.parse_truth(Path(args.truth[0]).read_text())
    if ids != cset.ids:
        raise ValueError("truth file does not match the manifest's policies")
    val = data.load(args.data)
    seed = args.seed if args.seed is not None else 0
    rows = pipeline.sensitivity_sweep(cfg, cset, truths, val, args.sweep, args.values, seed)
    _emit(pipeline.format_sweep(rows, seed, cfg.to_json()), args.out)


def cmd_run(args) -> None:
    cfg = _resolve_config(args, seeds=args.seed, output_dir=args.out)
    agg = pipeline.run_pipeline(cfg)
    sys.stdout.write(json.dumps({"output_dir": cfg.output_dir, "seeds": agg["seeds"], "failed": agg["failed"]},
                                sort_keys=True) + "\n")
    if agg["failed"] and not agg["seeds"]:
        raise RuntimeError("every seed failed")


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="opesel", description="Offline policy selection with off-policy evaluation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_required=False, seed_list=False):
        sp.add_argument("--config", help="JSON experiment config; flags override it")
        sp.add_argument("--workers", type=int, default=None, help="worker processes")
        if seed_list:
            sp.add_argument("--seed", type=_csv_list(int), default=None, help="comma-separated replication seeds")
        else:
            sp.add_argument("--seed", type=int, required=seed_required, default=None)
        return sp

    g = common(sub.add_parser("generate", help="roll out a dataset file"), seed_required=True)
    g.add_argument("--env", default=None)
    g.add_argument("--behavior", default=None, help="uniform | egreedy<eps> | mixture(a:n+b:n)")
    g.add_argument("--m", type=int, default=None, help="number of episodes")
    g.add_argument("--max-len", type=int, default=None)
    g.add_argument("--role", choices=["train", "val"], default=None,
                   help="derive the dataset seed as the pipeline does for this role")
    g.add_argument("--out", default="-")
    g.set_defaults(func=cmd_generate)

    t = common(sub.add_parser("train", help="build candidate policies and a manifest"), seed_required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--mode", choices=["discrete", "continuous"], default=None)
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    tr = common(sub.add_parser("truth", help="exact values of a manifest's policies"))
    tr.add_argument("--manifest", required=True)
    tr.add_argument("--out", default="-")
    tr.set_defaults(func=cmd_truth)

    e = common(sub.add_parser("evaluate", help="OPE scores CSV for a manifest"), seed_required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--data", required=True, help="validation dataset")
    e.add_argument("--methods", type=_csv_list(str), default=None)
    e.add_argument("--epsilon", type=float, default=None)
    e.add_argument("--horizon", type=int, default=None)
    e.add_argument("--out", default="-")
    e.set_defaults(func=cmd_evaluate)

    s = common(sub.add_parser("select", help="selection report from scores and truth"))
    s.add_argument("--scores", required=True, help="scores CSV, '-' for stdin")
    s.add_argument("--truth", required=True)
    s.add_argument("--two-stage", default=None, help="stage1,stage2,alpha (alpha may be 'auto')")
    s.add_argument("--combine", type=_csv_list(str), default=None)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_select)

    a = common(sub.add_parser("analyze", help="sensitivity sweeps and top-alpha CDF tables"))
    a.add_argument("--sweep", required=True, choices=[*pipeline.SWEEP_KINDS, "cdf"])
    a.add_argument("--manifest")
    a.add_argument("--data")
    a.add_argument("--truth", nargs="+")
    a.add_argument("--scores", nargs="+")
    a.add_argument("--values", type=_csv_list(str), default=None)
    a.add_argument("--methods", type=_csv_list(str), default=None)
    a.add_argument("--method", default="fqe", help="method for cdf tables")
    a.add_argument("--alphas", type=_csv_list(int), default=None)
    a.add_argument("--betas", type=_csv_list(int), default=None)
    a.add_argument("--out", default="-")
    a.set_defaults(func=cmd_analyze)

    r = common(sub.add_parser("run", help="full pipeline over all seeds"), seed_list=True)
    r.add_argument("--out", default=None, help="output directory")
    r.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ValueError, OSError, RuntimeError, KeyError, nn.TrainingError) as exc:
        msg = str(exc).replace("\n", " ")
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": msg}) + "\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
