"""Training loop, evaluation, gradient check and run reports."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as D
from . import loss as L
from . import metrics as M
from . import model as Mo
from . import optim as O
from . import tensor as T
from .errors import ConfigError, NonFiniteLossError
from .tensor import Tensor

log = logging.getLogger(__name__)

# independent random streams derived from the run seed
STREAM_INIT, STREAM_SHUFFLE, STREAM_AUGMENT = 1, 2, 3


def stream(seed: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, purpose]))


@dataclass
class RunConfig:
    # dataset: a CSV file, or the mixture generator when data_file is empty
    data_file: str = ""
    data_seed: int = 0
    n_true_classes: int = 4
    dim: int = 16
    n_points: int = 2000
    separation: float = 10.0
    balanced: bool = True
    # model
    encoder_layers: tuple[int, ...] = (64,)
    proj_hidden: int = 64
    proj_out: int = 16
    base_classes: int = 4
    head_sizes: tuple[int, ...] = ()
    head_mode: str = "learnable"
    leaky_slope: float = 0.01
    # loss
    loss: str = "selfclassifier"
    tau_row: float = 0.1
    tau_col: float = 0.05
    # optimizer
    base_lr: float = 4.8
    warmup_start_lr: float = 0.3
    final_lr: float = 0.0048
    warmup_epochs: float = 10
    weight_decay: float = 1e-6
    momentum: float = 0.9
    lars_eta: float = 0.001
    lars_eps: float = 1e-9
    # views and nearest-neighbour augmentation
    n_global: int = 2
    n_local: int = 2
    sigma_global: float = 1.5
    sigma_local: float = 1.5
    keep_fraction: float = 0.5
    nn_enabled: bool = True
    queue_capacity: int = 4096
    nn_warmup_epochs: int = 1
    # loop
    batch_size: int = 256
    epochs: int = 200
    eval_every: int = 0
    seed: int = 0
    output_dir: str = ""
    collapse_threshold: float = 0.5
    collapse_after_epoch: int = 5
    knn_k: int = 20
    hierarchy_file: str = ""

    def __post_init__(self):
        self.encoder_layers = tuple(int(v) for v in self.encoder_layers)
        self.head_sizes = tuple(int(v) for v in self.head_sizes)
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.n_global < 1:
            raise ConfigError("n_global must be >= 1")
        if self.n_global + self.n_local < 2:
            raise ConfigError("need at least two views in total")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.epochs > 0 and not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(f"warmup_epochs must be in [0, epochs), got {self.warmup_epochs}")
        if self.loss not in ("selfclassifier", "naive"):
            raise ConfigError(f"loss must be 'selfclassifier' or 'naive', got {self.loss!r}")

    @property
    def heads(self) -> tuple[int, ...]:
        return self.head_sizes or tuple(self.base_classes * k for k in (1, 2, 4, 8))

    def model_config(self, input_dim: int) -> Mo.ModelConfig:
        return Mo.ModelConfig(
            input_dim=input_dim, encoder_layers=self.encoder_layers, proj_hidden=self.proj_hidden,
            proj_out=self.proj_out, head_sizes=self.heads, head_mode=self.head_mode,
            leaky_slope=self.leaky_slope,
        )

    def loss_config(self) -> L.LossConfig:
        return L.LossConfig(tau_row=self.tau_row, tau_col=self.tau_col)

    def optim_config(self) -> O.OptimConfig:
        return O.OptimConfig(
            base_lr=self.base_lr, warmup_start_lr=self.warmup_start_lr, final_lr=self.final_lr,
            warmup_epochs=self.warmup_epochs, total_epochs=self.epochs,
            weight_decay=self.weight_decay, momentum=self.momentum,
            lars_eta=self.lars_eta, lars_eps=self.lars_eps,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


# -- config files --------------------------------------------------------------

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, raw: str, kind):
    try:
        if kind is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if typing.get_origin(kind) is tuple:
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def _field_types() -> dict[str, type]:
    hints = typing.get_type_hints(RunConfig)
    return {f.name: hints[f.name] for f in dataclasses.fields(RunConfig)}


def parse_config_text(text: str, overrides: dict[str, str] | None = None) -> RunConfig:
    """Parse ``key = value`` lines (``#`` starts a comment); unknown keys are errors."""
    types = _field_types()
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = raw
    for key, raw in (overrides or {}).items():
        if key not in types:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = raw
    return RunConfig(**{k: _coerce(k, v, types[k]) for k, v in values.items()})


def load_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, overrides)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


# -- reports -------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    lr: float
    entropy: list[float]
    queue_fill: float
    acc: list[float] | None = None


@dataclass
class RunReport:
    config: dict
    head_sizes: list[int]
    epochs: list[EpochRecord] = field(default_factory=list)
    alarms: list[dict] = field(default_factory=list)
    initial_metrics: dict | None = None
    final_metrics: dict | None = None
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        """Everything except wall time, so identical runs serialize identically."""
        d = dataclasses.asdict(self)
        d.pop("wall_time")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        d = dict(d)
        d["epochs"] = [EpochRecord(**e) for e in d.get("epochs", [])]
        return cls(**d)

    def epoch_rows(self) -> tuple[list[str], list[list]]:
        h = len(self.head_sizes)
        header = ["epoch", "loss", "lr"] + [f"entropy_h{i}" for i in range(h)] + [f"acc_h{i}" for i in range(h)]
        rows = []
        for e in self.epochs:
            acc = e.acc if e.acc is not None else [""] * h
            rows.append([e.epoch, e.loss, e.lr, *e.entropy, *acc])
        return header, rows


def write_epoch_csv(report: RunReport, path) -> None:
    header, rows = report.epoch_rows()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in r])


def write_metrics_csv(metrics: dict, path) -> None:
    """Long-format table: scope, head, level, metric, value."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scope", "head", "classes", "level", "metric", "value"])
        for head in metrics.get("heads", []):
            for k in ("acc", "acc_majority", "nmi", "ami", "ari"):
                w.writerow(["flat", head["head"], head["classes"], "", k, format(head[k], ".17g")])
        for level, vals in (metrics.get("hierarchy") or {}).items():
            for k, v in vals.items():
                w.writerow(["hierarchy", metrics["base_head"], "", level, k, format(v, ".17g")])
        if metrics.get("knn") is not None:
            w.writerow(["knn", "", "", "", f"top1@k{metrics['knn_k']}", format(metrics["knn"], ".17g")])


def render_report(report_path, out_dir) -> list[Path]:
    """Write ``epochs.csv`` and ``final_metrics.csv`` from a saved report."""
    report = RunReport.from_dict(json.loads(Path(report_path).read_text()))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "epochs.csv"]
    write_epoch_csv(report, written[0])
    if report.final_metrics:
        written.append(out / "final_metrics.csv")
        write_metrics_csv(report.final_metrics, written[-1])
    return written


# -- collapse monitor ---------------------------------------------------------


def marginal_entropy(mean_probs: np.ndarray) -> float:
    p = mean_probs[mean_probs > 0]
    return float(-(p * np.log(p)).sum())


def collapse_monitor(logits_history, tau_row: float = 0.1) -> list[float]:
    """Entropy (nats) of the sample-averaged row softmax, per head.

    ``logits_history`` is a sequence of batches, each a list with one N x C
    logits array per head.
    """
    if not logits_history:
        raise ConfigError("collapse_monitor needs at least one batch")
    n_heads = len(logits_history[0])
    sums = [None] * n_heads
    count = 0
    for batch in logits_history:
        for h, s in enumerate(batch):
            p = T.softmax(T.as_tensor(s), "rows", tau_row).data.sum(axis=0)
            sums[h] = p if sums[h] is None else sums[h] + p
        count += len(batch[0])
    return [marginal_entropy(s / count) for s in sums]


# -- evaluation ----------------------------------------------------------------


def knn_split(n: int, every: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic hold-out: every ``every``-th item is a test item."""
    idx = np.arange(n)
    test = idx % every == 0
    return idx[~test], idx[test]


def evaluate(
    params: Mo.ModelParams,
    model_cfg: Mo.ModelConfig,
    dataset: D.Dataset,
    hierarchy: M.HierarchyMap | None = None,
    knn_k: int | None = 20,
) -> dict:
    """Eval-mode metrics of every head against the dataset labels.

    The base head is the one with the fewest classes; hierarchy levels are
    scored for the base head only.
    """
    if dataset.dim != model_cfg.input_dim:
        raise ConfigError(f"dataset has {dataset.dim} features, model expects {model_cfg.input_dim}")
    z, logits = Mo.forward(params, model_cfg, Tensor(dataset.points), mode="eval")
    truth = dataset.labels
    heads = []
    for h, s in enumerate(logits):
        pred = s.data.argmax(axis=1)
        res = M.flat_metrics(pred, truth)
        res["acc_majority"] = M.hungarian_acc(pred, truth, "majority")[0]
        heads.append({"head": h, "classes": s.cols, **res})
    base = int(np.argmin(model_cfg.head_sizes))
    out: dict = {"heads": heads, "base_head": base, "hierarchy": None, "knn": None, "knn_k": knn_k}
    if hierarchy is not None:
        pred = logits[base].data.argmax(axis=1)
        out["hierarchy"] = {"leaf": M.flat_metrics(pred, truth), **M.hierarchical_eval(pred, truth, hierarchy)}
    if knn_k:
        tr, te = knn_split(len(truth))
        if len(tr) and len(te):
            out["knn"] = M.knn_probe(z.data[tr], truth[tr], z.data[te], truth[te], knn_k)
    return out


def evaluate_checkpoint(checkpoint, dataset: D.Dataset, hierarchy=None, knn_k: int | None = 20) -> dict:
    params, model_cfg, _ = Mo.load_checkpoint(checkpoint)
    return evaluate(params, model_cfg, dataset, hierarchy, knn_k)


# -- training ------------------------------------------------------------------


def load_dataset(cfg: RunConfig) -> D.Dataset:
    if cfg.data_file:
        try:
            return D.read_csv(cfg.data_file)
        except OSError as exc:
            raise ConfigError(f"cannot read dataset {cfg.data_file}: {exc}") from None
    return D.generate_mixture(cfg.data_seed, cfg.n_true_classes, cfg.dim, cfg.n_points,
                              cfg.separation, cfg.balanced)


def _batches(perm: np.ndarray, batch_size: int) -> list[np.ndarray]:
    out = [perm[i:i + batch_size] for i in range(0, len(perm), batch_size)]
    # a single leftover sample cannot be batch-normalized
    if len(out) > 1 and len(out[-1]) < 2:
        out.pop()
    return out


def _logit_stats(per_head: list[L.ViewLogits]) -> dict:
    stats = {}
    for h, views in enumerate(per_head):
        arrs = np.stack([v.data for v in views.logits])
        stats[f"head{h}"] = {
            "min": float(np.nanmin(arrs)) if np.isfinite(arrs).any() else None,
            "max": float(np.nanmax(arrs)) if np.isfinite(arrs).any() else None,
            "nan": int(np.isnan(arrs).sum()),
            "inf": int(np.isinf(arrs).sum()),
        }
    return stats


class Trainer:
    """Holds model, optimizer, queue and random streams for one run."""

    def __init__(self, cfg: RunConfig, dataset: D.Dataset | None = None):
        self.cfg = cfg
        self.dataset = dataset if dataset is not None else load_dataset(cfg)
        if len(self.dataset) < 2:
            raise ConfigError("dataset needs at least two points")
        self.model_cfg = cfg.model_config(self.dataset.dim)
        self.loss_cfg = cfg.loss_config()
        self.params = Mo.init(self.model_cfg, stream(cfg.seed, STREAM_INIT))
        self.shuffle_rng = stream(cfg.seed, STREAM_SHUFFLE)
        self.aug_rng = stream(cfg.seed, STREAM_AUGMENT)
        self.queue = D.NNQueue(cfg.queue_capacity, self.model_cfg.proj_out)
        self.hierarchy = M.HierarchyMap.read_tsv(cfg.hierarchy_file) if cfg.hierarchy_file else None
        self.optimizer = None
        if cfg.epochs > 0:
            trainable = Mo.trainable_parameters(self.params, self.model_cfg)
            self.optim_cfg = cfg.optim_config()
            self.optimizer = O.LARS(trainable, self.optim_cfg, Mo.adaptation_exempt(trainable))

    def views(self, x: np.ndarray) -> tuple[list[np.ndarray], list[str]]:
        c = self.cfg
        out, kinds = [], []
        for _ in range(c.n_global):
            out.append(D.augment(x, "global", self.aug_rng, c.sigma_global, c.sigma_local, c.keep_fraction))
            kinds.append(L.GLOBAL)
        for _ in range(c.n_local):
            out.append(D.augment(x, "local", self.aug_rng, c.sigma_global, c.sigma_local, c.keep_fraction))
            kinds.append(L.LOCAL)
        return out, kinds

    def batch_loss(self, x: np.ndarray, use_nn: bool):
        """Forward every view; returns (loss, per-head ViewLogits, global embeddings)."""
        xs, kinds = self.views(x)
        embeddings = [Mo.embed(self.params, self.model_cfg, v, "train") for v in xs]
        logits = [Mo.head_logits(self.params, z) for z in embeddings]
        n_heads = len(self.model_cfg.head_sizes)
        targets: list[list[Tensor | None]] = [[None] * len(xs) for _ in range(n_heads)]
        if use_nn:
            # the last global view acts as target through its queue neighbour
            g = self.cfg.n_global - 1
            neighbour = Tensor(self.queue.nearest(embeddings[g].data))
            for h, s in enumerate(Mo.head_logits(self.params, neighbour)):
                targets[h][g] = s
        per_head = [
            L.ViewLogits([logits[v][h] for v in range(len(xs))], kinds, targets[h])
            for h in range(n_heads)
        ]
        loss = L.multihead_loss(per_head, self.loss_cfg, kind=self.cfg.loss)
        globals_ = [embeddings[i].data for i, k in enumerate(kinds) if k == L.GLOBAL]
        return loss, per_head, globals_

    def train_epoch(self, epoch: int) -> EpochRecord:
        c = self.cfg
        batches = _batches(self.shuffle_rng.permutation(len(self.dataset)), c.batch_size)
        use_nn = c.nn_enabled and epoch >= c.nn_warmup_epochs
        losses = []
        prob_sums = [np.zeros(k) for k in self.model_cfg.head_sizes]
        seen = 0
        lr = 0.0
        for b, idx in enumerate(batches):
            x = self.dataset.points[idx]
            loss, per_head, globals_ = self.batch_loss(x, use_nn and len(self.queue) > 0)
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLossError(
                    f"non-finite loss {value} at epoch {epoch + 1}, batch {b}",
                    {"epoch": epoch + 1, "batch": b, "batch_size": len(idx), "logits": _logit_stats(per_head)},
                )
            self.optimizer.zero_grad()
            loss.backward()
            lr = O.lr_at(self.optim_cfg, epoch + b / len(batches))
            self.optimizer.step(lr)
            for z in globals_:
                self.queue.push(z)
            for h, views in enumerate(per_head):
                p = T.softmax(views.logits[0], "rows", c.tau_row).data
                prob_sums[h] += p.sum(axis=0)
            seen += len(idx)
            losses.append(value)
        entropy = [marginal_entropy(s / seen) for s in prob_sums]
        return EpochRecord(epoch + 1, float(np.mean(losses)), lr, entropy, self.queue.fill)

    def evaluate(self, knn_k: int | None = None) -> dict:
        return evaluate(self.params, self.model_cfg, self.dataset, self.hierarchy,
                        self.cfg.knn_k if knn_k is None else knn_k)

    def run(self) -> RunReport:
        c = self.cfg
        start = time.perf_counter()
        echo = c.to_dict()
        echo.pop("output_dir")  # where a report is written must not change its content
        report = RunReport(config=echo, head_sizes=list(self.model_cfg.head_sizes))
        if c.epochs == 0:
            report.initial_metrics = self.evaluate()
        for epoch in range(c.epochs):
            rec = self.train_epoch(epoch)
            if c.eval_every and (epoch + 1) % c.eval_every == 0:
                rec.acc = [h["acc"] for h in self.evaluate(knn_k=0)["heads"]]
            report.epochs.append(rec)
            if rec.epoch > c.collapse_after_epoch:
                for h, (ent, k) in enumerate(zip(rec.entropy, self.model_cfg.head_sizes)):
                    if ent < c.collapse_threshold * math.log(k):
                        report.alarms.append({"epoch": rec.epoch, "head": h, "entropy": ent,
                                              "threshold": c.collapse_threshold * math.log(k)})
            log.info("epoch %d loss %.4f lr %.4g entropy %s", rec.epoch, rec.loss, rec.lr,
                     " ".join(f"{e:.3f}" for e in rec.entropy))
        report.final_metrics = self.evaluate()
        report.wall_time = time.perf_counter() - start
        if c.output_dir:
            self.write_outputs(report)
        return report

    def write_outputs(self, report: RunReport) -> None:
        out = Path(self.cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        Mo.save_checkpoint(out / "model.scck", self.params, self.model_cfg, {"seed": self.cfg.seed})
        (out / "report.json").write_text(report.to_json())
        (out / "timing.json").write_text(json.dumps({"wall_time": report.wall_time}))
        write_epoch_csv(report, out / "epochs.csv")
        if report.final_metrics:
            write_metrics_csv(report.final_metrics, out / "final_metrics.csv")


def train(cfg: RunConfig, dataset: D.Dataset | None = None) -> RunReport:
    return Trainer(cfg, dataset).run()


# -- gradient check -----------------------------------------------------------


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values())


def toy_setup(seed: int = 0):
    """Tiny model (8 samples x 4 features, under 1e3 parameters) and two fixed views."""
    model_cfg = Mo.ModelConfig(input_dim=4, encoder_layers=(6,), proj_hidden=5, proj_out=4,
                               head_sizes=(3, 6))
    rng = np.random.default_rng(seed)
    params = Mo.init(model_cfg, rng)
    x1 = rng.normal(size=(8, 4))
    x2 = x1 + 0.3 * rng.normal(size=(8, 4))
    x3 = D.augment(x1, "local", rng)
    return model_cfg, params, [x1, x2, x3], [L.GLOBAL, L.GLOBAL, L.LOCAL]


def grad_check(tolerance: float = 1e-3, seed: int = 0, step: float = 1e-4,
               loss_kind: str = "selfclassifier") -> GradCheckReport:
    """Analytic vs central-difference gradients of the full multi-head loss, per parameter."""
    model_cfg, params, xs, kinds = toy_setup(seed)
    loss_cfg = L.LossConfig()

    def build() -> Tensor:
        logits = [Mo.forward(params, model_cfg, x, "train")[1] for x in xs]
        per_head = [L.ViewLogits([lg[h] for lg in logits], kinds) for h in range(len(model_cfg.head_sizes))]
        return L.multihead_loss(per_head, loss_cfg, kind=loss_kind)

    errors = {}
    for name, t in params.tensors.items():
        errors[name] = T.check_gradient(build, t, step).max_rel_error
    return GradCheckReport(errors, tolerance)
