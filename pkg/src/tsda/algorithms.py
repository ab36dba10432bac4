"""UDA algorithm registry and the shared training loop."""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import losses as L
from .backbones import BackboneSpec, Network, build_backbone, load_checkpoint, predict_proba, save_checkpoint
from .data import TimeSeriesDataset
from .errors import ArgumentError

LR_RANGE = (1e-3, 1e0)
WEIGHT_RANGE = (1e-2, 1e1)
CLS_RANGE = (1e-1, 1e1)


@dataclass(frozen=True)
class AlgorithmSpec:
    id: str
    category: str | None
    distribution: str | None
    losses: tuple
    schema: dict  # name -> (low, high), sampled log-uniformly


def _schema(**weights):
    return {"learning_rate": LR_RANGE, **weights}


_SPECS = [
    AlgorithmSpec("source_only", None, None, ("CE(source)",), _schema()),
    AlgorithmSpec("target_only", None, None, ("CE(target)",), _schema()),
    AlgorithmSpec("ddc", "discrepancy", "marginal", ("MMD",),
                  _schema(mmd_weight=WEIGHT_RANGE, src_cls_weight=CLS_RANGE)),
    AlgorithmSpec("deep_coral", "discrepancy", "marginal", ("CORAL",),
                  _schema(coral_weight=WEIGHT_RANGE, src_cls_weight=CLS_RANGE)),
    AlgorithmSpec("homm", "discrepancy", "marginal", ("High-order MMD",),
                  _schema(homm_weight=WEIGHT_RANGE, src_cls_weight=CLS_RANGE)),
    AlgorithmSpec("mmda", "discrepancy", "joint", ("MMD", "CORAL", "Entropy"),
                  _schema(mmd_weight=WEIGHT_RANGE, coral_weight=WEIGHT_RANGE,
                          entropy_weight=WEIGHT_RANGE, src_cls_weight=CLS_RANGE)),
    AlgorithmSpec("dsan", "discrepancy", "joint", ("Local MMD",),
                  _schema(lmmd_weight=WEIGHT_RANGE, src_cls_weight=WEIGHT_RANGE)),
    AlgorithmSpec("dann", "adversarial", "marginal", ("Domain Classifier", "Gradient Reversal Layer"),
                  _schema(domain_weight=WEIGHT_RANGE, src_cls_weight=CLS_RANGE)),
    AlgorithmSpec("cdan", "adversarial", "joint", ("Conditional adversarial Domain Classifier",),
                  _schema(domain_weight=WEIGHT_RANGE, entropy_weight=WEIGHT_RANGE, src_cls_weight=CLS_RANGE)),
    AlgorithmSpec("dirt_t", "adversarial", "joint", ("Virtual adversarial", "Entropy", "Domain Classifier"),
                  _schema(domain_weight=WEIGHT_RANGE, entropy_weight=WEIGHT_RANGE, vat_weight=WEIGHT_RANGE,
                          disc_steps=WEIGHT_RANGE, src_cls_weight=CLS_RANGE)),
    AlgorithmSpec("codats", "adversarial", "marginal", ("Domain Classifier", "Gradient Reversal Layer"),
                  _schema(domain_weight=WEIGHT_RANGE, src_cls_weight=CLS_RANGE)),
    AlgorithmSpec("advskm", "adversarial", "marginal", ("Spectral Kernel", "Adversarial MMD"),
                  _schema(adv_mmd_weight=WEIGHT_RANGE, src_cls_weight=CLS_RANGE)),
]
REGISTRY = {s.id: s for s in _SPECS}


def list_algorithms() -> list[AlgorithmSpec]:
    return list(_SPECS)


def get_algorithm(alg_id: str) -> AlgorithmSpec:
    try:
        return REGISTRY[alg_id]
    except KeyError:
        raise ArgumentError(f"unknown algorithm {alg_id!r}; known: {sorted(REGISTRY)}") from None


@dataclass
class HParams:
    learning_rate: float = 1e-3
    weights: dict = field(default_factory=dict)
    seed: int = 1

    def weight(self, name: str, default: float = 1.0) -> float:
        return float(self.weights.get(name, default))

    def to_dict(self) -> dict:
        return {"learning_rate": self.learning_rate, "weights": dict(sorted(self.weights.items())), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "HParams":
        return cls(float(d["learning_rate"]), dict(d.get("weights", {})), int(d.get("seed", 1)))

    def validate(self, spec: AlgorithmSpec) -> None:
        values = {"learning_rate": self.learning_rate, **self.weights}
        for name, value in values.items():
            if name not in spec.schema:
                raise ArgumentError(f"{spec.id} has no hyper-parameter {name!r}")
            lo, hi = spec.schema[name]
            if not lo <= value <= hi:
                raise ArgumentError(f"{name}={value} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    weight_decay: float = 1e-4
    betas: tuple = (0.5, 0.99)
    vat_radius: float = 1.0
    vat_xi: float = 1e-2
    teacher_decay: float = 0.99
    disc_hidden: int = 256

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class CandidateModel:
    network: Network
    algorithm: str
    hparams: HParams
    log: list = field(default_factory=list)
    status: str = "ok"
    error: str = ""

    @property
    def failed(self) -> bool:
        return self.status != "ok"

    def predict_proba(self, x) -> np.ndarray:
        return predict_proba(self.network, x)

    def predict(self, x) -> np.ndarray:
        return self.predict_proba(x).argmax(1)

    def metadata(self) -> dict:
        log = [{k: v for k, v in row.items() if k != "wall_time"} for row in self.log]
        return {"algorithm": self.algorithm, "hparams": self.hparams.to_dict(), "log": log,
                "status": self.status, "error": self.error}

    def save(self, path) -> None:
        save_checkpoint(path, self.network, self.metadata())

    @classmethod
    def load(cls, path) -> "CandidateModel":
        net, meta = load_checkpoint(path)
        return cls(net, meta["algorithm"], HParams.from_dict(meta["hparams"]), meta["log"],
                   meta["status"], meta["error"])

    def write_log(self, path) -> None:
        with open(path, "w") as fh:
            for row in self.log:
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def source_classification_loss(probs: torch.Tensor, labels: torch.Tensor, clamp: float = 1e-7) -> torch.Tensor:
    """Mean cross-entropy from probabilities, clamped away from log 0."""
    labels = torch.as_tensor(labels).long()
    k = probs.shape[1]
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= k):
        raise ArgumentError(f"labels outside [0, {k})")
    picked = probs.gather(1, labels[:, None]).squeeze(1)
    return -torch.log(picked.clamp_min(clamp)).mean()


def batch_schedule(n_src: int, n_tgt: int, batch_size: int, epochs: int, seed: int):
    """Per-epoch index batches; the smaller domain is resampled cyclically.

    Yields ``(epoch, [(src_idx, tgt_idx), ...])``.  Independent of the
    algorithm so every method sees the same batch order for a seed.
    """
    rng = np.random.default_rng([seed, 7])
    iters = math.ceil(max(n_src, n_tgt) / batch_size)
    need = iters * batch_size

    def cyclic(n):
        parts, total = [], 0
        while total < need:
            parts.append(rng.permutation(n))
            total += n
        return np.concatenate(parts)[:need]

    for epoch in range(epochs):
        s, t = cyclic(n_src), cyclic(n_tgt)
        yield epoch, [(s[i * batch_size:(i + 1) * batch_size], t[i * batch_size:(i + 1) * batch_size])
                      for i in range(iters)]


def _mlp(din, hidden, dout):
    return nn.Sequential(nn.Linear(din, hidden), nn.ReLU(), nn.Linear(hidden, dout))


class Algorithm:
    """One method's per-batch update.  Subclasses implement :meth:`step`."""

    def __init__(self, net: Network, hp: HParams, cfg: TrainConfig):
        self.net, self.hp, self.cfg = net, hp, cfg
        self.cls_weight = hp.weight("src_cls_weight", 1.0)
        self.generator = torch.Generator().manual_seed(hp.seed)
        self.extra = self.build_extra()
        self.optimizer = self.adam(list(net.parameters()) + [p for m in self.extra for p in m.parameters()])

    def build_extra(self) -> list[nn.Module]:
        return []

    def adam(self, params):
        return torch.optim.Adam(params, lr=self.hp.learning_rate, betas=tuple(self.cfg.betas),
                                weight_decay=self.cfg.weight_decay)

    def classification(self, zs, ys):
        logits = self.net.classifier(zs)
        return F.cross_entropy(logits, ys), logits

    def apply(self, optimizer, loss):
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss {loss.item()}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

    def step(self, xs, ys, xt) -> dict:
        raise NotImplementedError


class SourceOnly(Algorithm):
    def step(self, xs, ys, xt):
        cls, _ = self.classification(self.net.features(xs), ys)
        self.apply(self.optimizer, cls)
        return {"cls": cls.item()}


class DiscrepancyAlgorithm(Algorithm):
    """CE plus a weighted sum of feature discrepancies."""

    def terms(self, zs, ys, zt, logits_t) -> dict:
        raise NotImplementedError

    def step(self, xs, ys, xt):
        zs = self.net.features(xs)
        zt = self.net.features(xt)
        cls, _ = self.classification(zs, ys)
        logits_t = self.net.classifier(zt)
        parts = self.terms(zs, ys, zt, logits_t)
        loss = self.cls_weight * cls
        for name, (weight, value) in parts.items():
            loss = loss + weight * value
        self.apply(self.optimizer, loss)
        return {"cls": cls.item(), **{k: v.item() for k, (_, v) in parts.items()}, "total": loss.item()}


class DDC(DiscrepancyAlgorithm):
    def terms(self, zs, ys, zt, logits_t):
        return {"mmd": (self.hp.weight("mmd_weight"), L.mmd(zs, zt))}


class DeepCORAL(DiscrepancyAlgorithm):
    def terms(self, zs, ys, zt, logits_t):
        return {"coral": (self.hp.weight("coral_weight"), L.coral(zs, zt))}


class HoMM(DiscrepancyAlgorithm):
    def terms(self, zs, ys, zt, logits_t):
        return {"homm": (self.hp.weight("homm_weight"), L.homm(zs, zt, order=3))}


class MMDA(DiscrepancyAlgorithm):
    def terms(self, zs, ys, zt, logits_t):
        return {
            "mmd": (self.hp.weight("mmd_weight"), L.mmd(zs, zt)),
            "coral": (self.hp.weight("coral_weight"), L.coral(zs, zt)),
            "entropy": (self.hp.weight("entropy_weight"), L.entropy_from_logits(logits_t)),
        }


class DSAN(DiscrepancyAlgorithm):
    def terms(self, zs, ys, zt, logits_t):
        pt = F.softmax(logits_t, 1).detach()
        return {"lmmd": (self.hp.weight("lmmd_weight"), L.lmmd(zs, ys, zt, pt))}


class DANN(Algorithm):
    """Domain classifier trained through a gradient reversal layer."""

    def build_extra(self):
        self.disc = _mlp(self.disc_input_dim(), self.cfg.disc_hidden, 1)
        return [self.disc]

    def disc_input_dim(self):
        return self.net.spec.feature_dim

    def disc_input(self, z, logits):
        return z

    def domain_loss(self, zs, zt, ls, lt, reverse=True):
        hs, ht = self.disc_input(zs, ls), self.disc_input(zt, lt)
        if reverse:
            hs, ht = L.gradient_reversal(hs, 1.0), L.gradient_reversal(ht, 1.0)
        return L.domain_discriminator_loss(self.disc(hs), self.disc(ht), logits=True)

    def step(self, xs, ys, xt):
        zs, zt = self.net.features(xs), self.net.features(xt)
        cls, ls = self.classification(zs, ys)
        lt = self.net.classifier(zt)
        dom = self.domain_loss(zs, zt, ls, lt)
        loss = self.cls_weight * cls + self.hp.weight("domain_weight") * dom
        self.apply(self.optimizer, loss)
        return {"cls": cls.item(), "domain": dom.item(), "total": loss.item()}


class CDAN(DANN):
    """Discriminator sees the outer product of features and class probabilities."""

    def disc_input_dim(self):
        return self.net.spec.feature_dim * self.net.spec.num_classes

    def disc_input(self, z, logits):
        p = F.softmax(logits, 1)
        return torch.bmm(p[:, :, None], z[:, None, :]).flatten(1)

    def step(self, xs, ys, xt):
        zs, zt = self.net.features(xs), self.net.features(xt)
        cls, ls = self.classification(zs, ys)
        lt = self.net.classifier(zt)
        dom = self.domain_loss(zs, zt, ls, lt)
        ent = L.entropy_from_logits(lt)
        loss = self.cls_weight * cls + self.hp.weight("domain_weight") * dom + self.hp.weight("entropy_weight") * ent
        self.apply(self.optimizer, loss)
        return {"cls": cls.item(), "domain": dom.item(), "entropy": ent.item(), "total": loss.item()}


class CoDATS(DANN):
    """Alternates a discriminator update with a reversed-gradient feature update."""

    disc_steps = 1

    def __init__(self, net, hp, cfg):
        super().__init__(net, hp, cfg)
        self.optimizer = self.adam(net.parameters())
        self.disc_optimizer = self.adam(self.disc.parameters())

    def discriminator_update(self, xs, xt):
        with torch.no_grad():
            zs, zt = self.net.features(xs), self.net.features(xt)
            ls, lt = self.net.classifier(zs), self.net.classifier(zt)
        d = None
        for _ in range(self.disc_steps):
            d = self.domain_loss(zs, zt, ls, lt, reverse=False)
            self.apply(self.disc_optimizer, d)
        return d

    def extra_terms(self, xs, xt, zs, zt, lt) -> dict:
        return {}

    def step(self, xs, ys, xt):
        d = self.discriminator_update(xs, xt)
        zs, zt = self.net.features(xs), self.net.features(xt)
        cls, ls = self.classification(zs, ys)
        lt = self.net.classifier(zt)
        dom = self.domain_loss(zs, zt, ls, lt)
        loss = self.cls_weight * cls + self.hp.weight("domain_weight") * dom
        parts = self.extra_terms(xs, xt, zs, zt, lt)
        for weight, value in parts.values():
            loss = loss + weight * value
        self.apply(self.optimizer, loss)
        self.after_step()
        return {"cls": cls.item(), "domain": dom.item(), "disc": d.item(),
                **{k: v.item() for k, (_, v) in parts.items()}, "total": loss.item()}

    def after_step(self):
        pass


class DIRTT(CoDATS):
    """Adversarial alignment plus VAT, target entropy and an EMA teacher."""

    def __init__(self, net, hp, cfg):
        self.disc_steps = max(1, int(round(hp.weight("disc_steps", 1.0))))
        super().__init__(net, hp, cfg)
        self.teacher = copy.deepcopy(net)
        for p in self.teacher.parameters():
            p.requires_grad_(False)

    def extra_terms(self, xs, xt, zs, zt, lt):
        vat_w = self.hp.weight("vat_weight")
        kw = dict(radius=self.cfg.vat_radius, xi=self.cfg.vat_xi, generator=self.generator)
        vat = L.vat_loss(self.net, xs, **kw) + L.vat_loss(self.net, xt, **kw)
        with torch.no_grad():
            teacher_logits = self.teacher(xt)
        p_teacher = F.softmax(teacher_logits, 1)
        consistency = (p_teacher * (F.log_softmax(teacher_logits, 1) - F.log_softmax(lt, 1))).sum(1).mean()
        return {
            "vat": (vat_w, vat),
            "entropy": (self.hp.weight("entropy_weight"), L.entropy_from_logits(lt)),
            "teacher": (vat_w, consistency),
        }

    @torch.no_grad()
    def after_step(self):
        decay = self.cfg.teacher_decay
        for t, s in zip(self.teacher.parameters(), self.net.parameters()):
            t.mul_(decay).add_(s, alpha=1 - decay)
        for t, s in zip(self.teacher.buffers(), self.net.buffers()):
            t.copy_(s)


class SpectralKernelNet(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.inp = nn.Linear(dim, dim)
        self.out = nn.Linear(2 * dim, dim)

    def forward(self, z):
        h = self.inp(z)
        return self.out(torch.cat([torch.cos(h), torch.sin(h)], 1))


class AdvSKM(Algorithm):
    """MMD on a learned embedding that is trained to maximize the discrepancy."""

    def build_extra(self):
        self.kernel_net = SpectralKernelNet(self.net.spec.feature_dim)
        return []

    def __init__(self, net, hp, cfg):
        super().__init__(net, hp, cfg)
        self.kernel_optimizer = self.adam(self.kernel_net.parameters())

    def step(self, xs, ys, xt):
        zs, zt = self.net.features(xs), self.net.features(xt)
        adv = -L.mmd(self.kernel_net(zs.detach()), self.kernel_net(zt.detach()))
        self.apply(self.kernel_optimizer, adv)
        cls, _ = self.classification(zs, ys)
        m = L.mmd(self.kernel_net(zs), self.kernel_net(zt))
        loss = self.cls_weight * cls + self.hp.weight("adv_mmd_weight") * m
        self.apply(self.optimizer, loss)
        return {"cls": cls.item(), "adv_mmd": m.item(), "total": loss.item()}


_IMPL = {
    "source_only": SourceOnly,
    "target_only": SourceOnly,
    "ddc": DDC,
    "deep_coral": DeepCORAL,
    "homm": HoMM,
    "mmda": MMDA,
    "dsan": DSAN,
    "dann": DANN,
    "cdan": CDAN,
    "dirt_t": DIRTT,
    "codats": CoDATS,
    "advskm": AdvSKM,
}


def adapt(
    alg: str | AlgorithmSpec,
    source_train: TimeSeriesDataset,
    target_train,
    backbone: BackboneSpec,
    hp: HParams,
    cfg: TrainConfig = TrainConfig(),
) -> CandidateModel:
    """Train one candidate for ``cfg.epochs`` epochs.

    ``target_train`` is only read for its samples, except by
    ``target_only`` which trains on the target labels.  A non-finite loss
    marks the candidate failed instead of raising.
    """
    spec = get_algorithm(alg) if isinstance(alg, str) else alg
    if source_train.shape != target_train.shape:
        raise ArgumentError("source and target windows differ in shape")
    if spec.id == "target_only":
        xl, yl = target_train.samples, target_train.labels
    else:
        xl, yl = source_train.samples, source_train.labels
    xu = target_train.samples
    net = build_backbone(backbone, hp.seed)
    net.train()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(hp.seed)
        method = _IMPL[spec.id](net, hp, cfg)
    xl_t, yl_t, xu_t = (torch.from_numpy(np.array(a)) for a in (xl, yl, xu))
    candidate = CandidateModel(net, spec.id, hp)
    try:
        for epoch, batches in batch_schedule(len(xl), len(xu), cfg.batch_size, cfg.epochs, hp.seed):
            start = time.perf_counter()
            sums: dict = {}
            for src_idx, tgt_idx in batches:
                terms = method.step(xl_t[src_idx], yl_t[src_idx], xu_t[tgt_idx])
                for k, v in terms.items():
                    sums[k] = sums.get(k, 0.0) + v
            row = {"epoch": epoch, **{k: v / len(batches) for k, v in sums.items()}}
            if not all(math.isfinite(v) for k, v in row.items() if k != "epoch"):
                raise TrainingDiverged(f"non-finite epoch mean at epoch {epoch}")
            row["wall_time"] = time.perf_counter() - start
            candidate.log.append(row)
    except TrainingDiverged as exc:
        candidate.status, candidate.error = "failed", str(exc)
    net.eval()
    return candidate
