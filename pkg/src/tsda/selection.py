"""Label-free and label-using model-selection risks (SRC, DEV, FST, TGT)."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbones import extract_features
from .errors import ArgumentError, SelectionError

RISKS = ("SRC", "DEV", "FST", "TGT")
LABEL_FREE = ("SRC", "DEV")
CE_CLAMP = 1e-7
R_CLAMP = 1e-6
VAR_FLOOR = 1e-12
ETA_DEFINITION = "eta = -Cov(L_w, W) / Var(W); 0 when Var(W) < 1e-12"


def cross_entropy(probs, labels, clamp: float = CE_CLAMP) -> np.ndarray:
    """Per-sample cross-entropy from class probabilities."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ArgumentError("labels outside the probability columns")
    return -np.log(np.maximum(probs[np.arange(len(labels)), labels], clamp))


def _mean_ce(model, ds) -> float:
    if len(ds) == 0:
        raise ArgumentError("risk needs a non-empty labelled set")
    return float(cross_entropy(model.predict_proba(ds.samples), ds.labels).mean())


def src_risk(model, source_test) -> float:
    """Mean cross-entropy on the source test split."""
    return _mean_ce(model, source_test)


def tgt_risk(model, target_test) -> float:
    """Mean cross-entropy on the labelled target test split (oracle)."""
    return _mean_ce(model, target_test)


@dataclass(frozen=True)
class FewShotSet:
    samples: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __len__(self) -> int:
        return len(self.labels)


def draw_few_shot(target_train, per_class: int = 5, seed: int = 0) -> FewShotSet:
    """Stratified labelled draw from the target *train* split.

    Classes with fewer than ``per_class`` samples contribute all of them.
    """
    if per_class < 1:
        raise ArgumentError("per_class must be >= 1")
    labels = target_train.labels
    rng = np.random.default_rng([seed, 5])
    picks = []
    for k in range(target_train.num_classes):
        members = np.flatnonzero(labels == k)
        if members.size:
            picks.append(rng.permutation(members)[:per_class])
    idx = np.sort(np.concatenate(picks)) if picks else np.zeros(0, dtype=np.int64)
    return FewShotSet(target_train.samples[idx], labels[idx], target_train.num_classes)


def fst_risk(model, fewshot: FewShotSet) -> float:
    """Mean cross-entropy over the q few-shot target samples."""
    if len(fewshot) == 0:
        raise ArgumentError("few-shot set is empty")
    return float(cross_entropy(model.predict_proba(fewshot.samples), fewshot.labels).mean())


# --------------------------------------------------------------------------
# DEV


@dataclass
class DevDiagnostics:
    eta: float
    mean_weight: float
    weight_variance: float
    discriminator_loss: float = float("nan")


def fit_domain_discriminator(
    zs, zt, seed: int = 0, hidden: int = 64, epochs: int = 100, lr: float = 1e-3,
    batch_size: int = 32, betas=(0.5, 0.99), weight_decay: float = 1e-4,
):
    """Two-layer logistic model separating source (1) from target (0) features.

    Returns ``(predict, final_loss)`` where ``predict`` maps features to
    probabilities of being source.
    """
    zs = torch.as_tensor(np.asarray(zs), dtype=torch.float64)
    zt = torch.as_tensor(np.asarray(zt), dtype=torch.float64)
    x = torch.cat([zs, zt])
    y = torch.cat([torch.ones(len(zs)), torch.zeros(len(zt))]).double()
    gen = torch.Generator().manual_seed(seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = nn.Sequential(nn.Linear(x.shape[1], hidden), nn.ReLU(), nn.Linear(hidden, 1)).double()
    opt = torch.optim.Adam(net.parameters(), lr=lr, betas=tuple(betas), weight_decay=weight_decay)
    for _ in range(epochs):
        order = torch.randperm(len(x), generator=gen)
        for i in range(0, len(x), batch_size):
            b = order[i:i + batch_size]
            loss = F.binary_cross_entropy_with_logits(net(x[b]).squeeze(1), y[b])
            opt.zero_grad()
            loss.backward()
            opt.step()
    with torch.no_grad():
        final = float(F.binary_cross_entropy_with_logits(net(x).squeeze(1), y))

    @torch.no_grad()
    def predict(z):
        return torch.sigmoid(net(torch.as_tensor(np.asarray(z), dtype=torch.float64)).squeeze(1)).numpy()

    return predict, final


def dev_risk_from_outputs(r_src_test, ce_src_test, n_src_train: int, n_tgt_train: int):
    """DEV risk given discriminator outputs and per-sample losses on source test.

    ``r_src_test`` is the probability each source-test sample is *source*.
    """
    r = np.clip(np.asarray(r_src_test, dtype=np.float64), R_CLAMP, 1 - R_CLAMP)
    ce = np.asarray(ce_src_test, dtype=np.float64)
    if r.shape != ce.shape or r.size == 0:
        raise ArgumentError("need matching, non-empty discriminator outputs and losses")
    w = (n_src_train / n_tgt_train) * (1 - r) / r
    lw = w * ce
    var_w = float(np.var(w))
    if var_w < VAR_FLOOR:
        eta = 0.0
    else:
        cov = float(np.mean((lw - lw.mean()) * (w - w.mean())))
        eta = -cov / var_w
    value = float(lw.mean() + eta * w.mean() - eta)
    return value, DevDiagnostics(eta, float(w.mean()), var_w)


def dev_risk(model, source_train, source_test, target_train, seed: int = 0, discriminator=None, **fit_kwargs):
    """Importance-weighted source-test risk.

    ``target_train`` is only read for its samples.  ``discriminator``
    overrides the fitted domain classifier (a callable on features).
    """
    net = model.network
    zs_tr = extract_features(net, source_train.samples)
    zt_tr = extract_features(net, target_train.samples)
    zs_te = extract_features(net, source_test.samples)
    disc_loss = float("nan")
    if discriminator is None:
        discriminator, disc_loss = fit_domain_discriminator(zs_tr, zt_tr, seed=seed, **fit_kwargs)
    r = discriminator(zs_te)
    if not np.all(np.isfinite(r)):
        raise SelectionError("domain discriminator produced non-finite outputs")
    ce = cross_entropy(model.predict_proba(source_test.samples), source_test.labels)
    value, diag = dev_risk_from_outputs(r, ce, len(source_train), len(target_train))
    diag.discriminator_loss = disc_loss
    return value, diag


# --------------------------------------------------------------------------
# selection


@dataclass
class SelectionData:
    """Data views for risk evaluation; ``target_train`` may be unlabeled."""

    src_train: object
    src_test: object
    tgt_train: object
    tgt_test: object = None
    fewshot: FewShotSet | None = None


def compute_risks(model, data: SelectionData, risks=RISKS, seed: int = 0, audit=None) -> tuple[dict, dict | None]:
    """All requested risks for one candidate.

    Returns ``(values, dev_diagnostics)``.  With a
    :class:`~tsda.data.LabelAudit`, each risk runs inside its own phase.
    """
    from contextlib import nullcontext

    values, diag = {}, None
    for risk in risks:
        ctx = audit.phase(risk) if audit is not None else nullcontext()
        with ctx:
            if risk == "SRC":
                values[risk] = src_risk(model, data.src_test)
            elif risk == "DEV":
                values[risk], d = dev_risk(model, data.src_train, data.src_test, data.tgt_train, seed=seed)
                diag = asdict(d)
            elif risk == "FST":
                values[risk] = fst_risk(model, data.fewshot)
            elif risk == "TGT":
                values[risk] = tgt_risk(model, data.tgt_test)
            else:
                raise ArgumentError(f"unknown risk {risk!r}")
    return values, diag


def argmin_risk(values) -> int:
    """Index of the smallest finite value; ties go to the lowest index."""
    best, best_val = None, math.inf
    for i, v in enumerate(values):
        if v is None or not math.isfinite(v):
            continue
        if best is None or v < best_val:
            best, best_val = i, v
    if best is None:
        raise SelectionError("every candidate failed")
    return best


@dataclass
class RiskReport:
    values: dict = field(default_factory=dict)  # candidate id -> {risk: value or None}
    selected: dict = field(default_factory=dict)  # risk -> candidate id
    dev: dict = field(default_factory=dict)  # candidate id -> diagnostics
    oracle: bool = False  # TGT computed from target test labels
    metadata: dict = field(default_factory=lambda: {"dev_eta": ETA_DEFINITION})

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def build_report(candidates, data: SelectionData, risks=RISKS, seed: int = 0, audit=None) -> RiskReport:
    report = RiskReport(oracle="TGT" in risks)
    ids = []
    for i, cand in enumerate(candidates):
        cid = str(i)
        ids.append(cid)
        if getattr(cand, "failed", False):
            report.values[cid] = {r: None for r in risks}
            continue
        try:
            values, diag = compute_risks(cand, data, risks, seed=seed, audit=audit)
        except SelectionError:
            report.values[cid] = {r: None for r in risks}
            continue
        report.values[cid] = values
        if diag is not None:
            report.dev[cid] = diag
    for risk in risks:
        col = [report.values[c][risk] for c in ids]
        try:
            report.selected[risk] = ids[argmin_risk(col)]
        except SelectionError:
            report.selected[risk] = None
    return report


def select_best(candidates, risk: str, data: SelectionData, seed: int = 0, audit=None):
    """Candidate id minimizing ``risk`` plus the full report."""
    if risk not in RISKS:
        raise ArgumentError(f"unknown risk {risk!r}")
    report = build_report(candidates, data, (risk,), seed=seed, audit=audit)
    if report.selected[risk] is None:
        raise SelectionError("every candidate failed")
    return report.selected[risk], report
