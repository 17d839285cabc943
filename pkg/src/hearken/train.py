"""Dataset split, epoch loop and patch-voting evaluation.

Each epoch visits every training clip once with a fresh random crop of
`patch_frames` frames (short clips padded by repeating their last frame).
Features are standardized per (map, band) with statistics estimated on the
training set and stored in the checkpoint.  Evaluation cuts each clip into
overlapping patches, averages the patch posteriors and takes the argmax.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from hearken import augment, dsp, manifest, mil, models
from hearken.checkpoint import ModelBundle, from_built
from hearken.errors import DomainError, NumericalError
from hearken.nnet import SgdMomentum, batch_loss_and_grads
from hearken.seeding import STAGE_INIT, STAGE_MIL, STAGE_SPLIT, STAGE_TRAIN, derive_rng

L1_RHO = 1e-6


def split_dataset(entries, train_fraction=0.75, seed=0):
    """Stratified random split; every class keeps at least one clip per side."""
    by_class = {}
    for e in entries:
        by_class.setdefault(e.class_id, []).append(e)
    rng = derive_rng(seed, STAGE_SPLIT)
    train, test = [], []
    for cls in sorted(by_class):
        clips = by_class[cls]
        if len(clips) < 2:
            raise DomainError(f"class {cls} has fewer than 2 clips, cannot split")
        order = rng.permutation(len(clips))
        n_train = int(len(clips) * train_fraction)
        n_train = min(max(n_train, 1), len(clips) - 1)
        for j, i in enumerate(order):
            (train if j < n_train else test).append(clips[i])
    return train, test


class FeatureStore:
    """Computes and caches the (3, 50, T) float32 tensor of each clip."""

    def __init__(self, base_dir=None):
        self.base_dir = base_dir
        self._cache = {}

    def get(self, entry):
        feats = self._cache.get(entry.clip_id)
        if feats is None:
            feats = self._compute(entry)
            self._cache[entry.clip_id] = feats
        return feats

    def _compute(self, entry):
        path = entry.path
        if self.base_dir is not None and not os.path.isabs(path):
            path = os.path.join(self.base_dir, path)
        w = dsp.standardize(dsp.load_wav(path))
        if entry.origin == "vtlp":
            power, energy = dsp.power_spectra(w)
            feats = augment.vtlp_warp(power, energy, float(entry.params["warp"]))
        else:
            feats = dsp.log_mel_filterbank(w)
        return dsp.add_deltas(feats).astype(np.float32)


def _pad_frames(feats, length):
    t = feats.shape[-1]
    if t >= length:
        return feats
    fill = np.repeat(feats[..., -1:], length - t, axis=-1)
    return np.concatenate([feats, fill], axis=-1)


def random_crop(feats, length, rng):
    feats = _pad_frames(feats, length)
    t = feats.shape[-1]
    start = int(rng.integers(0, t - length + 1))
    return feats[..., start : start + length]


def _to_input(crops, mean, std):
    # (B, 3, 50, L) standardized per (map, band)
    x = (np.stack(crops) - mean[None, :, :, None]) / std[None, :, :, None]
    return np.ascontiguousarray(x, dtype=np.float32)


def norm_stats(store, entries):
    """Per-(map, band) mean/std over all frames of the training set."""
    acc_n = 0
    acc_sum = np.zeros((3, dsp.N_BANDS))
    acc_sq = np.zeros((3, dsp.N_BANDS))
    for e in entries:
        f = store.get(e).astype(np.float64)
        acc_n += f.shape[-1]
        acc_sum += f.sum(axis=-1)
        acc_sq += (f**2).sum(axis=-1)
    mean = acc_sum / acc_n
    var = np.maximum(acc_sq / acc_n - mean**2, 0.0)
    std = np.maximum(np.sqrt(var), 1e-3)
    return mean.astype(np.float32), std.astype(np.float32)


@dataclass
class TrainSettings:
    arch: str = "A-mini"
    patch_frames: int = 200
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    rho: float = L1_RHO
    lr_decay: float = 0.5
    lr_patience: int = 3
    seed: int = 0
    stop_accuracy: float | None = None
    mil_enabled: bool = False
    mil_bag_size: int = 2
    mil_aggregation: str = "max"


@dataclass
class EvalReport:
    class_ids: list
    accuracy: float
    confusion: np.ndarray
    clip_ids: list = field(default_factory=list)
    posteriors: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    true_labels: dict = field(default_factory=dict)

    def to_text(self):
        lines = [f"accuracy {self.accuracy:.6f}"]
        lines.append("classes " + " ".join(str(c) for c in self.class_ids))
        for row in self.confusion:
            lines.append(" ".join(str(int(v)) for v in row))
        if self.skipped:
            lines.append("skipped " + " ".join(self.skipped))
        return "\n".join(lines) + "\n"


def train(entries, settings: TrainSettings, val_entries=None, base_dir=None, log=None):
    """Train a classifier; returns (ModelBundle, metric rows).

    Metric rows are dicts with epoch/split/loss/accuracy, one train row per
    epoch plus one val row when a validation set is given.
    """
    if not entries:
        raise DomainError("empty training manifest")
    store = FeatureStore(base_dir)
    class_ids = manifest.classes_of(entries + list(val_entries or []))
    label_of = {c: i for i, c in enumerate(class_ids)}

    spec = models.arch_spec(settings.arch, len(class_ids), settings.patch_frames)
    built = models.build(spec, rng=derive_rng(settings.seed, STAGE_INIT))
    mean, std = norm_stats(store, entries)
    bundle = from_built(built, mean, std)

    net = built.net
    opt = SgdMomentum(net, lr=settings.lr, momentum=settings.momentum)
    rng = derive_rng(settings.seed, STAGE_TRAIN)
    metrics = []
    best_monitor = np.inf
    stale = 0

    for epoch in range(settings.epochs):
        order = rng.permutation(len(entries))
        crops = [random_crop(store.get(entries[i]), settings.patch_frames, rng) for i in order]
        labels = np.array([label_of[entries[i].class_id] for i in order])

        if settings.mil_enabled:
            loss = _mil_epoch(net, opt, crops, labels, bundle, settings, epoch)
        else:
            loss = _plain_epoch(net, opt, crops, labels, bundle, settings, rng)
        if not np.isfinite(loss):
            raise NumericalError(f"training diverged at epoch {epoch} (loss={loss})")
        metrics.append({"epoch": epoch, "split": "train", "loss": loss, "accuracy": ""})
        if log:
            log(f"epoch {epoch} train loss {loss:.4f} lr {opt.lr:.4g}")

        monitor = loss
        if val_entries:
            report = evaluate(bundle, val_entries, base_dir=base_dir, store=store)
            val_loss = _mean_nll(report, label_of)
            metrics.append(
                {"epoch": epoch, "split": "val", "loss": val_loss, "accuracy": report.accuracy}
            )
            monitor = val_loss
            if log:
                log(f"epoch {epoch} val loss {val_loss:.4f} accuracy {report.accuracy:.4f}")
            if settings.stop_accuracy is not None and report.accuracy >= settings.stop_accuracy:
                break
        if monitor < best_monitor - 1e-6:
            best_monitor = monitor
            stale = 0
        else:
            stale += 1
            if stale >= settings.lr_patience:
                opt.lr *= settings.lr_decay
                stale = 0
    return bundle, metrics


def _plain_epoch(net, opt, crops, labels, bundle, settings, rng):
    total, seen = 0.0, 0
    for start in range(0, len(crops), settings.batch_size):
        batch = crops[start : start + settings.batch_size]
        x = _to_input(batch, bundle.feat_mean, bundle.feat_std)
        y = labels[start : start + len(batch)]
        loss, _ = batch_loss_and_grads(net, x, y, rho=settings.rho, mode="train", rng=rng)
        opt.step()
        total += loss * len(batch)
        seen += len(batch)
    return total / max(seen, 1)


def _mil_epoch(net, opt, crops, labels, bundle, settings, epoch):
    rng = derive_rng(settings.seed, STAGE_MIL, epoch)
    by_class = {}
    for crop, lab in zip(crops, labels):
        by_class.setdefault(int(lab), []).append(crop)
    bags = mil.build_bags(by_class, settings.mil_bag_size, rng)
    rng.shuffle(bags)
    bags_per_batch = max(1, settings.batch_size // settings.mil_bag_size)
    total, seen = 0.0, 0
    for start in range(0, len(bags), bags_per_batch):
        chunk = bags[start : start + bags_per_batch]
        chunk = [
            mil.Bag(_to_input(b.instances, bundle.feat_mean, bundle.feat_std), b.label)
            for b in chunk
        ]
        loss, _ = mil.bag_forward_backward(
            net, chunk, rho=settings.rho, mode="train", rng=rng,
            aggregation=settings.mil_aggregation,
        )
        opt.step()
        total += loss * len(chunk)
        seen += len(chunk)
    return total / max(seen, 1)


def _mean_nll(report: EvalReport, label_of):
    nll = []
    for cid, post in zip(report.clip_ids, report.posteriors):
        true = report.true_labels[cid]
        nll.append(-np.log(max(post[true], 1e-12)))
    return float(np.mean(nll)) if nll else float("nan")


def evaluate(bundle: ModelBundle, entries, overlap=0.5, base_dir=None, store=None) -> EvalReport:
    """Patch-voting evaluation: mean posterior over 50%-overlap patches, argmax."""
    if not entries:
        raise DomainError("empty evaluation manifest")
    store = store or FeatureStore(base_dir)
    class_ids = manifest.classes_of(entries)
    label_of = {c: i for i, c in enumerate(class_ids)}
    m = bundle.n_classes
    if len(class_ids) > m:
        raise DomainError(f"manifest has {len(class_ids)} classes, model has {m}")
    confusion = np.zeros((m, m), dtype=np.int64)
    clip_ids, posteriors, skipped = [], [], []
    true_labels = {}
    for e in entries:
        feats = store.get(e)
        try:
            patches, _ = dsp.patch_stream(feats, bundle.patch_frames, overlap)
        except DomainError:
            skipped.append(e.clip_id)
            continue
        x = _to_input(patches, bundle.feat_mean, bundle.feat_std)
        p = bundle.net.forward(x, mode="eval")
        post = p.mean(axis=0)
        pred = int(np.argmax(post))
        true = label_of[e.class_id]
        confusion[true, pred] += 1
        clip_ids.append(e.clip_id)
        posteriors.append(post)
        true_labels[e.clip_id] = true
    total = confusion.sum()
    accuracy = float(np.trace(confusion)) / total if total else 0.0
    return EvalReport(class_ids, accuracy, confusion, clip_ids, posteriors, skipped, true_labels)


def confusion_difference(report_a: EvalReport, report_b: EvalReport):
    """Row-normalized confusion of A minus that of B."""
    if report_a.class_ids != report_b.class_ids:
        raise DomainError("reports cover different class sets")

    def rownorm(c):
        c = c.astype(np.float64)
        sums = c.sum(axis=1, keepdims=True)
        return np.divide(c, sums, out=np.zeros_like(c), where=sums > 0)

    return rownorm(report_a.confusion) - rownorm(report_b.confusion)


def write_metrics_csv(path, metrics):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,split,loss,accuracy\n")
        for row in metrics:
            acc = row["accuracy"]
            acc_s = f"{acc:.6f}" if acc != "" else ""
            fh.write(f"{row['epoch']},{row['split']},{row['loss']:.6f},{acc_s}\n")
