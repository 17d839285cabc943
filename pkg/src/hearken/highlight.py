"""Highlight scoring: pairwise ranking losses, a small MLP ensemble and mAP.

Moments are only comparable within their own video, so training pairs a
video's positive moments against its negatives.  Three losses are available:
plain hinge ranking, its Huber-smoothed variant, and a multiple-instance
variant that hinges on the best of a group of positives.  The final score of
a moment is the mean over an ensemble of independently seeded training runs.

The hinge and Huber forms follow the standard conventions (clamped at zero,
continuous linear branch); `printed_form=True` switches to the unclamped /
descending-branch variants for side-by-side study.
"""

from dataclasses import dataclass, field

import numpy as np

from hearken.errors import DomainError, ParseError
from hearken.nnet import Linear, Network, ReLU, SgdMomentum
from hearken.seeding import STAGE_RANK, derive_rng


@dataclass
class MomentRecord:
    video_id: str
    moment_id: int
    label: int           # 1 highlight, 0 non-highlight
    feature: np.ndarray


@dataclass
class LossSpec:
    kind: str = "ranking"          # ranking | huber | mirank
    delta: float = 1.0
    positives_per_group: int = 2   # group size I for mirank

    def __post_init__(self):
        if self.kind not in ("ranking", "huber", "mirank"):
            raise DomainError(f"unknown loss kind {self.kind!r}")
        if self.delta <= 0:
            raise DomainError("delta must be positive")
        if self.positives_per_group < 1:
            raise DomainError("positives_per_group must be >= 1")


def ranking_loss(y_pos, y_neg, printed_form=False):
    """Hinge on the margin: max(0, 1 - y_pos + y_neg)."""
    raw = 1.0 - y_pos + y_neg
    return raw if printed_form else max(0.0, raw)


def ranking_loss_grad(y_pos, y_neg):
    """(d/dy_pos, d/dy_neg); zero once the margin is satisfied."""
    if 1.0 - y_pos + y_neg > 0.0:
        return -1.0, 1.0
    return 0.0, 0.0


def huber_ranking_loss(y_pos, y_neg, delta=1.0, printed_form=False):
    """Squared hinge below delta, linear continuation above."""
    lr = ranking_loss(y_pos, y_neg)
    if lr < delta:
        return 0.5 * lr * lr
    if printed_form:
        return delta * (-lr + 0.5 * delta)
    return delta * (lr - 0.5 * delta)


def huber_ranking_grad(y_pos, y_neg, delta=1.0):
    lr = ranking_loss(y_pos, y_neg)
    if lr == 0.0:
        return 0.0, 0.0
    scale = lr if lr < delta else delta
    return -scale, scale


def mi_ranking_loss(y_pos, y_neg, printed_form=False):
    """Hinge on the best positive of the group: max(0, 1 - max_i(y_pos_i) + y_neg)."""
    y_pos = np.asarray(y_pos, dtype=np.float64)
    if y_pos.size < 1:
        raise DomainError("need at least one positive score")
    return ranking_loss(float(y_pos.max()), y_neg, printed_form=printed_form)


def mi_ranking_grad(y_pos, y_neg):
    """Gradient flows only to the argmax positive (first index on ties)."""
    y_pos = np.asarray(y_pos, dtype=np.float64)
    g_pos = np.zeros_like(y_pos)
    best = int(y_pos.argmax())
    gp, gn = ranking_loss_grad(float(y_pos[best]), y_neg)
    g_pos[best] = gp
    return g_pos, gn


def build_ranker(input_dim, hidden=(64, 16), rng=None):
    """Two hidden ReLU layers and one linear output unit, float64."""
    h1, h2 = hidden
    net = Network(
        [Linear(input_dim, h1, np.float64), ReLU(),
         Linear(h1, h2, np.float64), ReLU(),
         Linear(h2, 1, np.float64)],
        dtype=np.float64,
    )
    if rng is not None:
        net.init_params(rng)
    return net


@dataclass
class RankerEnsemble:
    nets: list
    input_dim: int
    excluded_videos: list = field(default_factory=list)


def _group_by_video(moments):
    videos = {}
    for i, m in enumerate(moments):
        videos.setdefault(m.video_id, []).append(i)
    return videos


def train_ranker(moments, loss: LossSpec, runs=5, seed=0, epochs=150, lr=0.02,
                 momentum=0.9, hidden=(64, 16)) -> RankerEnsemble:
    """Train `runs` independently seeded rankers on within-video pairs.

    Each epoch draws, per video, every positive against one random negative
    (for mirank: groups of I positives against one negative).  Videos missing
    a positive or a negative are excluded and reported on the ensemble.
    """
    if not moments:
        raise DomainError("no moments to train on")
    dim = len(moments[0].feature)
    videos = _group_by_video(moments)
    usable, excluded = {}, []
    for vid, idxs in videos.items():
        pos = [i for i in idxs if moments[i].label == 1]
        neg = [i for i in idxs if moments[i].label == 0]
        if pos and neg:
            usable[vid] = (pos, neg)
        else:
            excluded.append(vid)

    x = np.stack([m.feature for m in moments]).astype(np.float64)
    nets = []
    for run in range(runs):
        rng = derive_rng(seed, STAGE_RANK, run)
        net = build_ranker(dim, hidden, rng=rng)
        opt = SgdMomentum(net, lr=lr, momentum=momentum)
        for _ in range(epochs):
            scores = net.forward(x, mode="train", rng=rng)[:, 0]
            dscore = np.zeros_like(scores)
            n_terms = 0
            for vid in sorted(usable):
                pos, neg = usable[vid]
                if loss.kind == "mirank":
                    for p in pos:
                        group = [p] + [int(pos[k]) for k in
                                       rng.integers(0, len(pos), size=loss.positives_per_group - 1)]
                        nidx = int(neg[rng.integers(0, len(neg))])
                        gp, gn = mi_ranking_grad(scores[group], scores[nidx])
                        for gi, g in zip(group, gp):
                            dscore[gi] += g
                        dscore[nidx] += gn
                        n_terms += 1
                else:
                    for p in pos:
                        nidx = int(neg[rng.integers(0, len(neg))])
                        if loss.kind == "huber":
                            gp, gn = huber_ranking_grad(scores[p], scores[nidx], loss.delta)
                        else:
                            gp, gn = ranking_loss_grad(scores[p], scores[nidx])
                        dscore[p] += gp
                        dscore[nidx] += gn
                        n_terms += 1
            if n_terms == 0:
                break
            net.zero_grads()
            net.backward((dscore / n_terms)[:, None])
            opt.step()
        nets.append(net)
    return RankerEnsemble(nets, dim, excluded)


def score_moments(ensemble: RankerEnsemble, moments):
    """Mean H-factor over the ensemble replicas, one scalar per moment."""
    x = np.stack([m.feature for m in moments]).astype(np.float64)
    if x.shape[1] != ensemble.input_dim:
        raise DomainError(f"feature dim {x.shape[1]} != model dim {ensemble.input_dim}")
    return np.mean([net.forward(x, mode="eval")[:, 0] for net in ensemble.nets], axis=0)


def average_precision(labels_ranked):
    """AP of a binary relevance list already in rank order."""
    hits, total, ap = 0, 0, 0.0
    for rank, rel in enumerate(labels_ranked, start=1):
        if rel:
            hits += 1
            ap += hits / rank
    return ap / hits if hits else None


def mean_average_precision(moments, scores):
    """Per-video AP (score-descending, ties by moment id), averaged over videos.

    Returns (mAP, {video: AP}, videos excluded for lacking positives).
    """
    videos = _group_by_video(moments)
    aps, excluded = {}, []
    for vid in sorted(videos):
        idxs = videos[vid]
        order = sorted(idxs, key=lambda i: (-scores[i], moments[i].moment_id))
        ap = average_precision([moments[i].label for i in order])
        if ap is None:
            excluded.append(vid)
        else:
            aps[vid] = ap
    if not aps:
        raise DomainError("no video has a positive moment")
    return float(np.mean(list(aps.values()))), aps, excluded


# --- moment / score files ----------------------------------------------------

def write_moments(path, moments):
    with open(path, "w", encoding="utf-8") as fh:
        for m in moments:
            blob = np.asarray(m.feature, "<f4").tobytes().hex()
            fh.write(f"{m.video_id}\t{m.moment_id}\t{m.label}\t{blob}\n")


def read_moments(path):
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 fields")
            vid, mid, lab, blob = parts
            vec = np.frombuffer(bytes.fromhex(blob), "<f4").copy()
            out.append(MomentRecord(vid, int(mid), int(lab), vec))
    return out


def write_scores(path, moments, scores):
    with open(path, "w", encoding="utf-8") as fh:
        for m, s in zip(moments, scores):
            fh.write(f"{m.video_id}\t{m.moment_id}\t{s:.9g}\n")


def read_scores(path):
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            vid, mid, s = line.split("\t")
            out[(vid, int(mid))] = float(s)
    return out
