"""Command-line entry point: ``tsda {prepare,synth,train,sweep,report}``.

Exit codes: 0 success, 2 validation error, 3 trial failures in a completed run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ArgumentError, LoadError, SweepError

EXIT_OK, EXIT_INVALID, EXIT_TRIAL_FAILURES = 0, 2, 3


def cmd_prepare(args) -> int:
    from .data import load_dataset

    domains = load_dataset(args.manifest)
    manifest = json.loads(Path(args.manifest).read_text())
    print(f"{manifest.get('name', '')}: {len(domains)} domains, C={manifest.get('channels')}, "
          f"K={manifest.get('classes')}, T={manifest.get('window_length')}")
    for dom_id, splits in domains.items():
        print(f"  domain {dom_id}: train {len(splits['train'])}, test {len(splits['test'])}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .data import ShiftSpec, make_synthetic, save_dataset

    try:
        spec = ShiftSpec.from_dict(json.loads(Path(args.spec).read_text()))
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise ArgumentError(f"cannot read shift spec {args.spec}: {exc}") from None
    source, target = make_synthetic(spec, args.seed)
    out = Path(args.out)
    path = save_dataset(out.parent, out.name, {"source": source, "target": target}, spec.length)
    print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    from .algorithms import HParams, TrainConfig, adapt, get_algorithm
    from .backbones import BackboneSpec
    from .config import load_config
    from .data import Scenario, load_dataset, prepare_scenario
    from .metrics import accuracy, macro_f1

    cfg = load_config(args.config)
    if "manifest" not in cfg.data:
        raise ArgumentError("config needs [data] manifest = ...")
    spec = get_algorithm(args.alg)
    scenario = Scenario.parse(args.scenario)
    data = prepare_scenario(load_dataset(cfg.data["manifest"]), scenario)
    hp_values = dict(cfg.hparams)
    lr = float(hp_values.pop("learning_rate", 1e-3))
    hp = HParams(lr, {k: float(v) for k, v in hp_values.items()}, args.seed)
    hp.validate(spec)
    c, _ = data["src_train"].shape
    backbone = BackboneSpec(**{**cfg.backbone, "input_channels": c, "num_classes": data["src_train"].num_classes})
    tgt_train = data["tgt_train"] if spec.id == "target_only" else data["tgt_train"].unlabeled()
    cand = adapt(spec, data["src_train"], tgt_train, backbone, hp, TrainConfig.from_dict(cfg.train))
    out = Path(args.out or f"runs/{spec.id}_{scenario.source_domain}-{scenario.target_domain}_s{args.seed}")
    out.mkdir(parents=True, exist_ok=True)
    cand.save(out / "checkpoint.tsda")
    cand.write_log(out / "train_log.jsonl")
    result = {"algorithm": spec.id, "scenario": scenario.key, "seed": args.seed, "status": cand.status,
              "error": cand.error, "macro_f1": None, "accuracy": None}
    if not cand.failed:
        y = data["tgt_test"].labels
        pred = cand.predict(data["tgt_test"].samples)
        result.update(macro_f1=macro_f1(y, pred, data["tgt_test"].num_classes), accuracy=accuracy(y, pred))
    (out / "metrics.json").write_text(json.dumps(result, sort_keys=True, indent=2) + "\n")
    print(json.dumps(result, sort_keys=True))
    return EXIT_TRIAL_FAILURES if cand.failed else EXIT_OK


def cmd_sweep(args) -> int:
    from .sweep import SweepPlan, run_sweep

    plan = SweepPlan.load(args.plan)
    out = Path(args.out) if args.out else Path(args.plan).resolve().parent
    result = run_sweep(plan, out, resume=args.resume)
    print(json.dumps(result.summary["average"], sort_keys=True))
    return EXIT_TRIAL_FAILURES if result.failed_trials else EXIT_OK


def cmd_report(args) -> int:
    from .metrics import domain_gap
    from .report import render_report
    from .sweep import aggregate

    summaries = [json.loads(p.read_text()) for p in sorted(Path(args.inp).rglob("summary.json"))]
    by_alg: dict = {}
    for s in summaries:
        by_alg.setdefault((s.get("dataset", ""), s["algorithm"]), []).append(s)
    tables = [aggregate(group) for _, group in sorted(by_alg.items())]
    gaps = []
    for dataset in sorted({d for d, _ in by_alg}):
        bounds = {}
        for alg in ("target_only", "source_only"):
            table = next((t for t in tables if t["algorithm"] == alg and t["dataset"] == dataset), None)
            if table:
                rows = {r["risk"]: r["average"] for r in table["rows"]}
                bounds[alg] = rows.get("TGT", next(iter(rows.values())))
        if len(bounds) == 2 and None not in bounds.values():
            gaps.append(domain_gap(100 * bounds["target_only"], 100 * bounds["source_only"], dataset))
    paths = render_report(tables, args.out, gaps)
    for p in paths.values():
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsda", description="Time-series domain adaptation benchmark")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="validate a dataset directory")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="write a synthetic shifted domain pair")
    p.add_argument("--spec", required=True, help="shift spec JSON")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one candidate")
    p.add_argument("--alg", required=True)
    p.add_argument("--scenario", required=True, help="src:tgt domain ids")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run a hyper-parameter sweep")
    p.add_argument("--plan", required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="render tables from sweep summaries")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ArgumentError, LoadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SweepError as exc:
        print(f"sweep error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
