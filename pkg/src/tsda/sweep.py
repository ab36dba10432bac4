"""Random hyper-parameter sweeps, risk-based selection and aggregation."""

from __future__ import annotations

import functools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .algorithms import HParams, TrainConfig, adapt, get_algorithm
from .backbones import BackboneSpec
from .data import LabelAudit, Scenario, ShiftSpec, load_dataset, make_synthetic, prepare_scenario
from .errors import ArgumentError, SelectionError, SweepError
from .metrics import accuracy, macro_f1
from .selection import RISKS, SelectionData, argmin_risk, compute_risks, draw_few_shot

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (1, 2, 3)
FIREWALL_PHASES = ("adapt", "SRC", "DEV")


def sample_hparams(schema: dict, rng: np.random.Generator) -> dict:
    """Draw every parameter log-uniformly inside its ``(low, high)`` range."""
    if not schema:
        raise ArgumentError("empty hyper-parameter schema")
    out = {}
    for name in sorted(schema):
        lo, hi = schema[name]
        if not 0 < lo <= hi:
            raise ArgumentError(f"bad range for {name}: {(lo, hi)}")
        out[name] = float(10 ** rng.uniform(math.log10(lo), math.log10(hi)))
    return out


@dataclass
class SweepPlan:
    algorithm: str
    scenarios: list
    dataset: dict  # {"manifest": path} or {"synthetic": ShiftSpec dict, "seed": int}
    n_combos: int = 100
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    backbone: dict = field(default_factory=lambda: {"kind": "cnn1d"})
    train: dict = field(default_factory=dict)
    risks: list = field(default_factory=lambda: list(RISKS))
    selection: str = "mean"  # or "per_seed"
    fewshot_per_class: int = 5
    hparam_seed: int = 0
    fixed_hparams: dict = field(default_factory=dict)
    workers: int = 1

    def validate(self) -> None:
        get_algorithm(self.algorithm)
        if self.n_combos < 1 or not self.seeds or not self.scenarios:
            raise ArgumentError("plan needs n_combos >= 1, seeds and scenarios")
        if self.selection not in ("mean", "per_seed"):
            raise ArgumentError(f"unknown selection mode {self.selection!r}")
        for r in self.risks:
            if r not in RISKS:
                raise ArgumentError(f"unknown risk {r!r}")
        if ("manifest" in self.dataset) == ("synthetic" in self.dataset):
            raise ArgumentError("dataset needs exactly one of 'manifest' or 'synthetic'")
        for s in self.scenarios:
            Scenario.parse(s)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SweepPlan":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SweepPlan":
        try:
            plan = cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ArgumentError(f"cannot read plan {path}: {exc}") from None
        plan.validate()
        return plan

    def combo_hparams(self, combo: int, seed: int) -> HParams:
        spec = get_algorithm(self.algorithm)
        drawn = sample_hparams(spec.schema, np.random.default_rng([self.hparam_seed, combo]))
        drawn.update(self.fixed_hparams)
        lr = drawn.pop("learning_rate")
        return HParams(lr, drawn, seed)


@functools.lru_cache(maxsize=4)
def _load_domains(dataset_json: str) -> dict:
    dataset = json.loads(dataset_json)
    if "manifest" in dataset:
        return load_dataset(dataset["manifest"])
    source, target = make_synthetic(ShiftSpec.from_dict(dataset["synthetic"]), dataset.get("seed", 0))
    return {"source": source, "target": target}


def load_domains(plan: SweepPlan) -> dict:
    return _load_domains(json.dumps(plan.dataset, sort_keys=True))


def _backbone_for(plan: SweepPlan, data) -> BackboneSpec:
    c, _ = data["src_train"].shape
    opts = {"kind": "cnn1d", **plan.backbone}
    opts.update(input_channels=c, num_classes=data["src_train"].num_classes)
    return BackboneSpec(**opts)


def run_trial(plan: SweepPlan, scenario: str, combo: int, seed: int) -> dict:
    """Train one candidate and score it; never raises for training failures."""
    audit = LabelAudit()
    data = prepare_scenario(load_domains(plan), Scenario.parse(scenario))
    tgt_train = data["tgt_train"].guarded(audit, "target_train")
    tgt_test = data["tgt_test"].guarded(audit, "target_test")
    hp = plan.combo_hparams(combo, seed)
    row = {"scenario": scenario, "combo": combo, "seed": seed, "hparams": hp.to_dict(),
           "status": "ok", "error": "", "risks": None, "dev": None, "macro_f1": None, "accuracy": None}
    with audit.phase("adapt"):
        cand = adapt(plan.algorithm, data["src_train"], tgt_train, _backbone_for(plan, data), hp,
                     TrainConfig.from_dict(plan.train))
    fewshot = None
    if "FST" in plan.risks:
        with audit.phase("FST"):
            fewshot = draw_few_shot(tgt_train, plan.fewshot_per_class, seed=plan.hparam_seed)
    if cand.failed:
        row.update(status="failed", error=cand.error)
    else:
        views = SelectionData(data["src_train"], data["src_test"], tgt_train.unlabeled()
                              if plan.algorithm != "target_only" else tgt_train, tgt_test, fewshot)
        try:
            values, diag = compute_risks(cand, views, plan.risks, seed=seed, audit=audit)
            row.update(risks=values, dev=diag)
        except SelectionError as exc:
            row.update(status="failed", error=str(exc))
        with audit.phase("evaluation"):
            pred = cand.predict(tgt_test.samples)
            y = tgt_test.labels
            row.update(macro_f1=macro_f1(y, pred, tgt_test.num_classes), accuracy=accuracy(y, pred))
    row["target_label_reads"] = {
        phase: audit.reads(phases=(phase,))
        for phase in ("adapt", "SRC", "DEV", "FST", "TGT", "evaluation")
    }
    return row


def _trial_job(plan_dict, scenario, combo, seed):
    return run_trial(SweepPlan.from_dict(plan_dict), scenario, combo, seed)


def _row_key(row) -> tuple:
    return row["scenario"], row["combo"], row["seed"]


def trial_keys(plan: SweepPlan) -> list[tuple]:
    return [(s, c, seed) for s in plan.scenarios for c in range(plan.n_combos) for seed in plan.seeds]


@dataclass
class SweepResult:
    rows: list
    summary: dict

    @property
    def failed_trials(self) -> int:
        return sum(r["status"] != "ok" for r in self.rows)


def _read_rows(path: Path) -> list:
    rows = []
    if path.exists():
        for line in path.read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError:
                break  # torn final line from an interrupted write
    return rows


def run_sweep(plan: SweepPlan, out_dir, resume: bool = False, max_trials: int | None = None) -> SweepResult | None:
    """Run every (scenario, combo, seed) trial and summarize.

    Rows are appended to ``trials.jsonl`` as they finish.  ``resume``
    skips rows already present.  ``max_trials`` stops after that many new
    trials and returns ``None``, leaving a resumable state.
    """
    plan.validate()
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        plan_path, trials_path = out / "sweep_plan.json", out / "trials.jsonl"
        if resume and plan_path.exists() and plan_path.read_text() != plan.to_json():
            raise SweepError(f"{plan_path} does not match the plan being resumed")
        plan_path.write_text(plan.to_json())
        rows = _read_rows(trials_path) if resume else []
        # rewrite so a torn tail line is dropped
        with open(trials_path, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    except OSError as exc:
        raise SweepError(f"cannot prepare sweep directory {out}: {exc}") from exc

    done = {_row_key(r) for r in rows}
    todo = [k for k in trial_keys(plan) if k not in done]
    interrupted = max_trials is not None and len(todo) > max_trials
    if max_trials is not None:
        todo = todo[:max_trials]

    def append(row):
        try:
            with open(trials_path, "a") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        except OSError as exc:
            raise SweepError(f"cannot append to {trials_path}: {exc}") from exc
        rows.append(row)

    if plan.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            futures = [pool.submit(_trial_job, plan.to_dict(), *k) for k in todo]
            for fut in futures:  # plan order keeps the log deterministic
                append(fut.result())
    else:
        for k in todo:
            log.info("trial %s combo %d seed %d", *k)
            append(run_trial(plan, *k))
    if interrupted:
        return None
    summary = summarize(plan, rows)
    try:
        (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        raise SweepError(f"cannot write summary: {exc}") from exc
    return SweepResult(sorted(rows, key=_row_key), summary)


def _stats(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def summarize(plan: SweepPlan, rows: list) -> dict:
    """Per scenario and risk: the selected combo and its macro-F1 over seeds."""
    by_key = {_row_key(r): r for r in rows}
    scenarios = {}
    for scenario in plan.scenarios:
        per_risk = {}
        for risk in plan.risks:
            def risk_of(c, s):
                r = by_key.get((scenario, c, s))
                if r is None or r["status"] != "ok" or r["risks"] is None:
                    return None
                v = r["risks"].get(risk)
                return v if v is not None and math.isfinite(v) else None

            try:
                if plan.selection == "mean":
                    means = []
                    for c in range(plan.n_combos):
                        vals = [risk_of(c, s) for s in plan.seeds]
                        means.append(None if any(v is None for v in vals) else float(np.mean(vals)))
                    combo = argmin_risk(means)
                    f1s = [by_key[(scenario, combo, s)]["macro_f1"] for s in plan.seeds]
                    entry = {"combo": combo, "risk_value": means[combo]}
                else:
                    picks, f1s = [], []
                    for s in plan.seeds:
                        c = argmin_risk([risk_of(c, s) for c in range(plan.n_combos)])
                        picks.append(c)
                        f1s.append(by_key[(scenario, c, s)]["macro_f1"])
                    entry = {"combo": picks, "risk_value": None}
                entry["f1_mean"], entry["f1_std"] = _stats(f1s)
            except SelectionError:
                entry = {"combo": None, "risk_value": None, "f1_mean": None, "f1_std": None}
            per_risk[risk] = entry
        scenarios[scenario] = per_risk
    average = {}
    for risk in plan.risks:
        vals = [scenarios[s][risk]["f1_mean"] for s in plan.scenarios]
        average[risk] = float(np.mean(vals)) if all(v is not None for v in vals) else None
    reads = {p: sum(r.get("target_label_reads", {}).get(p, 0) for r in rows)
             for p in ("adapt", "SRC", "DEV", "FST", "TGT", "evaluation")}
    return {
        "algorithm": plan.algorithm,
        "backbone": plan.backbone.get("kind", "cnn1d"),
        "dataset": plan.dataset.get("name", "manifest" if "manifest" in plan.dataset else "synthetic"),
        "selection": plan.selection,
        "scenarios": scenarios,
        "average": average,
        "trials": len(rows),
        "failed_trials": sum(r["status"] != "ok" for r in rows),
        "target_label_reads": reads,
    }


def aggregate(results) -> dict:
    """Merge per-scenario summaries of one algorithm/backbone into a benchmark table.

    ``results`` holds :class:`SweepResult` objects or summary dicts.
    """
    summaries = [r.summary if isinstance(r, SweepResult) else r for r in results]
    if not summaries:
        raise ArgumentError("nothing to aggregate")
    algs = {s["algorithm"] for s in summaries}
    backbones = {s["backbone"] for s in summaries}
    if len(algs) > 1:
        raise ArgumentError(f"mixed algorithms: {sorted(algs)}")
    if len(backbones) > 1:
        raise ArgumentError(f"mixed backbones: {sorted(backbones)}")
    scenarios, risks = {}, []
    for s in summaries:
        for name, per_risk in s["scenarios"].items():
            scenarios[name] = per_risk
            for risk in per_risk:
                if risk not in risks:
                    risks.append(risk)
    rows = []
    for risk in risks:
        cells = {name: (per[risk]["f1_mean"], per[risk]["f1_std"]) for name, per in scenarios.items() if risk in per}
        means = [m for m, _ in cells.values()]
        avg = float(np.mean(means)) if means and all(m is not None for m in means) else None
        rows.append({"algorithm": summaries[0]["algorithm"], "risk": risk, "scenarios": cells, "average": avg})
    return {
        "algorithm": summaries[0]["algorithm"],
        "backbone": summaries[0]["backbone"],
        "dataset": summaries[0].get("dataset", ""),
        "scenario_names": list(scenarios),
        "rows": rows,
    }
