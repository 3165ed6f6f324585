"""Differentiable architecture search over the supernet.

Sampling: per block position, one candidate is drawn by adding Gumbel noise
to the architecture logits (alpha row), dividing by a temperature tau, and
taking softmax. The forward pass uses the argmax candidate only; gradients
flow to alpha through the soft weights (straight-through), implemented by
scaling the chosen op's output with soft[k] + (1 - value(soft[k])), which is
exactly 1.0 forward and d(soft[k])/d(alpha) backward.

Search alternates two phases per step: architecture logits update on a
held-out slice of the training set (weights frozen), then weight update of a
freshly sampled architecture on the training slice (alpha untouched).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, ConfigError, FormatError, StateError
from .metrics import compute_metrics, confusion, per_class_table
from .numerics import (
    SGD,
    Adam,
    Tensor,
    assert_finite,
    cosine_lr,
    no_grad,
    softmax,
    softmax_cross_entropy,
)
from .search_space import (
    ArchDescriptor,
    ChildNet,
    Supernet,
    SupernetConfig,
    derive_child,
    model_size_mb,
)

# independent RNG streams derived from one user-facing seed; stream 0
# (parameter init) is consumed by build_supernet/derive_child
INIT_STREAM, ARCH_STREAM, DATA_STREAM = 0, 1, 2


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(stream,)))


# -- sampling ------------------------------------------------------------------


class GumbelSampler:
    """Draws candidate indices from softmax(alpha) via the Gumbel-max trick."""

    def __init__(self, tau: float, rng: np.random.Generator):
        if tau <= 0:
            raise ArgumentError(f"tau must be positive, got {tau}")
        self.tau = float(tau)
        self.rng = rng

    def noise(self, size) -> np.ndarray:
        u = self.rng.random(size)
        u = np.clip(u, 1e-12, 1.0 - 1e-12)
        return -np.log(-np.log(u))


def gumbel_sample(sampler: GumbelSampler, alpha_row: Tensor) -> tuple[int, Tensor]:
    """One draw: (hard argmax index, soft weights with gradient to alpha_row)."""
    if not isinstance(alpha_row, Tensor):
        alpha_row = Tensor(alpha_row)
    g = sampler.noise(alpha_row.shape)
    soft = softmax((alpha_row + g) * (1.0 / sampler.tau))
    return int(np.argmax(soft.data)), soft


def st_scale(soft: Tensor, index: int) -> Tensor:
    """Straight-through scale: forward exactly 1.0, backward d soft[index]."""
    picked = soft[index]
    return picked + (1.0 - float(picked.data))


def relaxed_mixture(alpha_row, op_outputs) -> Tensor:
    """Fully relaxed reference path: sum_k softmax(alpha)_k * op_k output.

    Diagnostic only; the search loop uses hard sampling instead.
    """
    if not isinstance(alpha_row, Tensor):
        alpha_row = Tensor(alpha_row)
    op_outputs = list(op_outputs)
    if alpha_row.shape != (len(op_outputs),):
        raise ArgumentError(
            f"alpha row of shape {alpha_row.shape} for {len(op_outputs)} op outputs"
        )
    probs = softmax(alpha_row)
    mixed = op_outputs[0] * probs[0]
    for k in range(1, len(op_outputs)):
        mixed = mixed + op_outputs[k] * probs[k]
    return mixed


def sample_architecture(net: Supernet, sampler: GumbelSampler, with_st: bool):
    """Sample one candidate per position. Returns (selections, st_scales|None)."""
    selections: list[int] = []
    scales: list[Tensor] | None = [] if with_st else None
    for pos in range(net.config.num_positions):
        row = net.alpha.tensor[pos]
        k, soft = gumbel_sample(sampler, row)
        selections.append(k)
        if with_st:
            scales.append(st_scale(soft, k))
    return selections, scales


def tau_schedule(epoch: int, total_epochs: int, tau_start: float, tau_end: float) -> float:
    """Exponential anneal from tau_start (epoch 0) to tau_end (last epoch)."""
    if total_epochs < 1:
        raise ArgumentError(f"total_epochs must be >= 1, got {total_epochs}")
    if tau_start <= 0 or tau_end <= 0:
        raise ArgumentError("temperatures must be positive")
    if total_epochs == 1:
        return float(tau_start)
    frac = epoch / (total_epochs - 1)
    return float(tau_start * (tau_end / tau_start) ** frac)


# -- search loop ------------------------------------------------------------------


@dataclass(frozen=True)
class SearchConfig:
    epochs: int = 100
    batch_size: int = 8
    tau_start: float = 5.0
    tau_end: float = 0.5
    alpha_lr: float = 1e-3
    weight_lr: float = 1e-3
    weight_momentum: float = 0.9
    weight_decay: float = 3e-4
    val_fraction: float = 0.2
    resample_per_phase: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in (0,1), got {self.val_fraction}")
        if self.tau_start <= 0 or self.tau_end <= 0:
            raise ConfigError("temperatures must be positive")
        if self.tau_end > self.tau_start:
            raise ConfigError("tau schedule must be nonincreasing (tau_end <= tau_start)")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "tau_start": self.tau_start,
            "tau_end": self.tau_end,
            "alpha_lr": self.alpha_lr,
            "weight_lr": self.weight_lr,
            "weight_momentum": self.weight_momentum,
            "weight_decay": self.weight_decay,
            "val_fraction": self.val_fraction,
            "resample_per_phase": self.resample_per_phase,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        try:
            return cls(**{k: d[k] for k in cls().to_dict()})
        except KeyError as exc:
            raise FormatError(f"search config dict missing field {exc}") from None


@dataclass
class SearchRecord:
    epoch: int
    arch: ArchDescriptor
    val_loss: float
    val_accuracy: float
    tau: float


class SearchHistory:
    """One record per completed search epoch, epochs strictly increasing."""

    def __init__(self, records=None):
        self.records: list[SearchRecord] = []
        for r in records or []:
            self.append(r)

    def append(self, record: SearchRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise StateError(
                f"epoch {record.epoch} not after {self.records[-1].epoch}"
            )
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for r in self.records:
                fh.write(json.dumps({
                    "epoch": r.epoch,
                    "choices": list(r.arch.choices),
                    "val_loss": r.val_loss,
                    "val_accuracy": r.val_accuracy,
                    "tau": r.tau,
                }, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path, config: SupernetConfig) -> "SearchHistory":
        history = cls()
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                arch = ArchDescriptor(
                    config=config,
                    choices=tuple(row["choices"]),
                    provenance={"search_epoch": row["epoch"],
                                "val_accuracy": row["val_accuracy"]},
                )
                history.append(SearchRecord(
                    epoch=int(row["epoch"]),
                    arch=arch,
                    val_loss=float(row["val_loss"]),
                    val_accuracy=float(row["val_accuracy"]),
                    tau=float(row["tau"]),
                ))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad history record ({exc})") from None
        return history


@dataclass
class StepStats:
    val_loss: float
    train_loss: float
    val_selections: tuple[int, ...]
    train_selections: tuple[int, ...]


class weights_frozen:
    """Temporarily clear requires_grad on all non-alpha supernet parameters."""

    def __init__(self, net: Supernet):
        self.net = net
        self._frozen: list = []

    def __enter__(self):
        for p in self.net.weight_parameters():
            if p.tensor.requires_grad:
                p.tensor.requires_grad = False
                self._frozen.append(p)
        return self

    def __exit__(self, *exc):
        for p in self._frozen:
            p.tensor.requires_grad = True
        return False


def _as_batch(batch) -> tuple[Tensor, np.ndarray]:
    x, y = batch
    if not isinstance(x, Tensor):
        x = Tensor(x)
    return x, np.asarray(y)


def alpha_update_step(net: Supernet, sampler: GumbelSampler, val_batch,
                      alpha_opt, tag: str = "") -> tuple[float, tuple[int, ...]]:
    """Phase 1: sample, forward the validation batch with straight-through
    scales, backpropagate into alpha only, and step the alpha optimizer."""
    x, y = _as_batch(val_batch)
    net.train(True)
    selections, scales = sample_architecture(net, sampler, with_st=True)
    with weights_frozen(net):
        logits = net.forward(x, selections, st_scales=scales)
        loss = softmax_cross_entropy(logits, y)
        assert_finite(loss, f"architecture-update loss ({tag or 'phase 1'})")
        loss.backward()
    alpha_opt.step()
    return loss.item(), tuple(selections)


def weight_update_step(net: Supernet, sampler: GumbelSampler, train_batch,
                       weight_opt, tag: str = "",
                       selections=None) -> tuple[float, tuple[int, ...]]:
    """Phase 2: (re)sample, forward the training batch without straight-through
    scales (alpha stays out of the graph), and step the sampled ops' weights."""
    x, y = _as_batch(train_batch)
    net.train(True)
    if selections is None:
        with no_grad():
            selections, _ = sample_architecture(net, sampler, with_st=False)
    logits = net.forward(x, selections)
    loss = softmax_cross_entropy(logits, y)
    assert_finite(loss, f"weight-update loss ({tag or 'phase 2'})")
    loss.backward()
    weight_opt.step()
    return loss.item(), tuple(selections)


def search_step(net: Supernet, sampler: GumbelSampler, train_batch, val_batch,
                alpha_opt, weight_opt, tag: str = "",
                resample: bool = True) -> StepStats:
    """One alternating bilevel step: alpha on val data, weights on train data."""
    val_loss, val_sel = alpha_update_step(net, sampler, val_batch, alpha_opt, tag)
    train_loss, train_sel = weight_update_step(
        net, sampler, train_batch, weight_opt, tag,
        selections=None if resample else list(val_sel),
    )
    return StepStats(val_loss, train_loss, val_sel, train_sel)


# -- data plumbing ------------------------------------------------------------


def stratified_split(entries, val_fraction: float, rng: np.random.Generator):
    """Per-class shuffle and split; every class keeps >= 1 training entry."""
    by_label: dict[int, list] = {}
    for e in entries:
        by_label.setdefault(e.label, []).append(e)
    train, val = [], []
    for label in sorted(by_label):
        group = by_label[label]
        order = rng.permutation(len(group))
        n_val = min(len(group) - 1, round(val_fraction * len(group))) if len(group) > 1 else 0
        for j, i in enumerate(order):
            (val if j < n_val else train).append(group[i])
    return train, val


class _Cycler:
    """Endless shuffled index stream over [0, n)."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self._queue: list[int] = []

    def take(self, k: int) -> list[int]:
        out = []
        while len(out) < k:
            if not self._queue:
                self._queue = list(self.rng.permutation(self.n))
            out.append(self._queue.pop(0))
        return out


def _predict(forward, dataset, entries, batch_size: int):
    """Deterministic (test-path) predictions: (pred[N], label[N], mean loss)."""
    preds, labels, losses = [], [], []
    with no_grad():
        for lo in range(0, len(entries), batch_size):
            chunk = entries[lo : lo + batch_size]
            x, y = dataset.batch(chunk, augment=False)
            logits = forward(Tensor(x))
            loss = softmax_cross_entropy(logits, y)
            losses.append(loss.item() * len(chunk))
            preds.extend(np.argmax(logits.data, axis=1).tolist())
            labels.extend(y.tolist())
    return np.array(preds), np.array(labels), sum(losses) / len(entries)


def evaluate_selections(net: Supernet, selections, dataset, entries,
                        batch_size: int) -> tuple[float, float]:
    """Eval-mode loss/accuracy of one sampled architecture using supernet weights."""
    net.train(False)
    selections = list(selections)
    preds, labels, loss = _predict(
        lambda x: net.forward(x, selections), dataset, entries, batch_size
    )
    return loss, float((preds == labels).mean())


def evaluate_model(model: ChildNet, dataset, entries, batch_size: int) -> tuple[float, float]:
    model.train(False)
    preds, labels, loss = _predict(model, dataset, entries, batch_size)
    return loss, float((preds == labels).mean())


# -- top-level stages ------------------------------------------------------------


def run_search(net: Supernet, dataset, config: SearchConfig, log_fn=None) -> SearchHistory:
    """Full search: per epoch, alternate steps over paired splits of the
    training data, anneal tau, then record the argmax-of-alpha architecture
    with its eval-mode validation score."""
    train_entries = dataset.entries("train")
    if not train_entries:
        raise ConfigError("manifest has no train entries")
    if len({e.label for e in train_entries}) < 2:
        raise ConfigError("search needs at least 2 classes in the train split")
    arch_rng = stream_rng(config.seed, ARCH_STREAM)
    data_rng = stream_rng(config.seed, DATA_STREAM)
    d_t, d_v = stratified_split(train_entries, config.val_fraction, data_rng)
    if not d_t or not d_v:
        raise ConfigError(
            f"search split degenerated ({len(d_t)} train / {len(d_v)} val entries)"
        )

    sampler = GumbelSampler(config.tau_start, arch_rng)
    alpha_opt = Adam([net.alpha], config.alpha_lr)
    weight_opt = SGD(
        net.weight_parameters(),
        config.weight_lr,
        momentum=config.weight_momentum,
        weight_decay=config.weight_decay,
        allow_missing_grads=True,
    )
    val_cycler = _Cycler(len(d_v), data_rng)
    steps = max(1, len(d_t) // config.batch_size)
    history = SearchHistory()

    for epoch in range(config.epochs):
        sampler.tau = tau_schedule(epoch, config.epochs, config.tau_start, config.tau_end)
        perm = data_rng.permutation(len(d_t))
        mean_val, mean_train = 0.0, 0.0
        for step in range(steps):
            idx = perm[step * config.batch_size : (step + 1) * config.batch_size]
            if idx.size == 0:
                idx = perm
            tb = dataset.batch([d_t[i] for i in idx], augment=True, rng=data_rng)
            vb = dataset.batch(
                [d_v[i] for i in val_cycler.take(min(config.batch_size, len(d_v)))],
                augment=True, rng=data_rng,
            )
            stats = search_step(
                net, sampler, tb, vb, alpha_opt, weight_opt,
                tag=f"epoch {epoch} step {step}", resample=config.resample_per_phase,
            )
            mean_val += stats.val_loss / steps
            mean_train += stats.train_loss / steps

        choices = tuple(int(c) for c in np.argmax(net.alpha.data, axis=1))
        val_loss, val_acc = evaluate_selections(net, choices, dataset, d_v, config.batch_size)
        arch = ArchDescriptor(
            net.config, choices,
            provenance={"search_epoch": epoch, "val_accuracy": val_acc},
        )
        history.append(SearchRecord(epoch, arch, val_loss, val_acc, sampler.tau))
        if log_fn:
            log_fn(
                f"search epoch {epoch}: tau {sampler.tau:.3f} "
                f"step losses train {mean_train:.4f} val {mean_val:.4f} | "
                f"argmax arch val_acc {val_acc:.4f} val_loss {val_loss:.4f}"
            )
    return history


def _rank_key(acc: float, loss: float, epoch: int):
    return (-acc, loss, -epoch)


def select_top_k(history: SearchHistory, k: int = 10) -> list[ArchDescriptor]:
    """Best k architectures by validation accuracy (ties: lower loss, then
    later epoch), deduplicated by choices. May return fewer than k when the
    history holds fewer distinct architectures."""
    if not history.records:
        raise StateError("cannot select from an empty search history")
    if k < 1:
        raise ArgumentError(f"k must be >= 1, got {k}")
    if k > len(history.records):
        raise ArgumentError(f"k={k} exceeds history length {len(history.records)}")
    ranked = sorted(history.records, key=lambda r: _rank_key(r.val_accuracy, r.val_loss, r.epoch))
    seen, out = set(), []
    for r in ranked:
        if r.arch.choices in seen:
            continue
        seen.add(r.arch.choices)
        out.append(r.arch)
        if len(out) == k:
            break
    return out


def shortlist_train(archs, dataset, batches_per_arch: int = 50, *, seed: int = 0,
                    batch_size: int = 8, lr: float = 1e-3, val_fraction: float = 0.2,
                    log_fn=None) -> ArchDescriptor:
    """Train each candidate from scratch for a fixed batch budget and return
    the best by held-out accuracy (same tie rule as select_top_k).

    Each candidate's RNG derives from (seed, choices), so identical
    candidates score identically regardless of shortlist composition.
    """
    archs = list(archs)
    if not archs:
        raise ArgumentError("shortlist needs at least one candidate")
    if batches_per_arch < 1:
        raise ArgumentError(f"batches_per_arch must be >= 1, got {batches_per_arch}")
    data_rng = stream_rng(seed, DATA_STREAM)
    d_t, d_v = stratified_split(dataset.entries("train"), val_fraction, data_rng)
    if not d_t or not d_v:
        raise ConfigError("shortlist split degenerated")

    best = None
    for i, arch in enumerate(archs):
        seq = np.random.SeedSequence([int(seed)] + [int(c) for c in arch.choices])
        init_seq, data_seq = seq.spawn(2)
        child = ChildNet(arch.config, arch.choices, np.random.default_rng(init_seq))
        child_rng = np.random.default_rng(data_seq)
        opt = Adam(child.parameters(), lr)
        cycler = _Cycler(len(d_t), child_rng)
        child.train(True)
        for b in range(batches_per_arch):
            entries = [d_t[j] for j in cycler.take(min(batch_size, len(d_t)))]
            x, y = dataset.batch(entries, augment=True, rng=child_rng)
            loss = softmax_cross_entropy(child(Tensor(x)), y)
            assert_finite(loss, f"shortlist candidate {i} batch {b}")
            loss.backward()
            opt.step()
        val_loss, val_acc = evaluate_model(child, dataset, d_v, batch_size)
        arch.provenance["shortlist_val_accuracy"] = val_acc
        arch.provenance["shortlist_val_loss"] = val_loss
        if log_fn:
            log_fn(f"shortlist candidate {i}: val_acc {val_acc:.4f} val_loss {val_loss:.4f}")
        key = _rank_key(val_acc, val_loss, arch.provenance.get("search_epoch", -i))
        if best is None or key < best[0]:
            best = (key, arch)
    return best[1]


@dataclass
class TrainResult:
    model: ChildNet
    arch: ArchDescriptor
    report: object  # MetricsReport
    train_losses: list[float] = field(default_factory=list)
    predictions: np.ndarray | None = None
    labels: np.ndarray | None = None


def train_child(arch: ArchDescriptor, dataset, epochs: int, seed: int, *,
                batch_size: int = 8, lr: float = 1e-3, lr_min: float = 1e-5,
                positive_class: int = 1, log_fn=None) -> TrainResult:
    """Retrain one architecture from scratch (Adam, cosine-annealed lr) and
    evaluate on the test split."""
    if epochs < 0:
        raise ArgumentError(f"epochs must be >= 0, got {epochs}")
    if not 0 <= positive_class < arch.config.num_classes:
        raise ArgumentError(
            f"positive_class {positive_class} outside [0, {arch.config.num_classes})"
        )
    train_entries = dataset.entries("train")
    test_entries = dataset.entries("test")
    if epochs > 0 and not train_entries:
        raise ConfigError("manifest has no train entries")
    if not test_entries:
        raise ConfigError("manifest has no test entries")

    child = derive_child(arch.config, arch, seed)
    data_rng = stream_rng(seed, DATA_STREAM)
    opt = Adam(child.parameters(), lr)
    losses: list[float] = []
    steps = max(1, len(train_entries) // batch_size) if train_entries else 0
    for epoch in range(epochs):
        opt.lr = cosine_lr(epoch, epochs, lr, lr_min)
        child.train(True)
        perm = data_rng.permutation(len(train_entries))
        total = 0.0
        for step in range(steps):
            idx = perm[step * batch_size : (step + 1) * batch_size]
            if idx.size == 0:
                idx = perm
            x, y = dataset.batch([train_entries[i] for i in idx], augment=True, rng=data_rng)
            loss = softmax_cross_entropy(child(Tensor(x)), y)
            assert_finite(loss, f"child training epoch {epoch} step {step}")
            loss.backward()
            opt.step()
            total += loss.item()
        losses.append(total / steps)
        if log_fn:
            log_fn(f"child epoch {epoch}: lr {opt.lr:.6f} train loss {losses[-1]:.4f}")

    child.train(False)
    preds, labels, _ = _predict(child, dataset, test_entries, batch_size)
    counts = confusion(preds, labels, positive_class)
    report = compute_metrics(
        counts,
        correct_multiclass=int((preds == labels).sum()),
        total=len(labels),
        model_size=model_size_mb(child),
        per_class=per_class_table(preds, labels, arch.config.num_classes),
    )
    return TrainResult(child, arch, report, losses, preds, labels)
