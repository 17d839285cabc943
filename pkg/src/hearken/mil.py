"""Multiple-instance learning: bags of patches through a shared network.

A bag of N instances is pushed through the network trunk (everything before
softmax), giving per-bag scores h of shape [M classes x N instances].  The
softmax layer is replaced by an aggregation over instances: max aggregation
(softmax of per-class maxima) or Noisy-OR (per-instance class posteriors
combined as p = 1 - prod(1 - p_j), renormalized so the bag loss stays a
proper log-likelihood).
"""

from dataclasses import dataclass

import numpy as np

from hearken.errors import DomainError
from hearken.nnet import cross_entropy_grad, cross_entropy_l1, fd_check_params, l1_subgradient

AGGREGATIONS = ("max", "noisy_or")


def _softmax(z, axis):
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def aggregate_max(h):
    """Softmax over per-class instance maxima: [M x N] -> class distribution [M]."""
    h = np.asarray(h, dtype=np.float64)
    return _softmax(h.max(axis=1), axis=-1)


def aggregate_max_batch(h):
    """Batched forward with cache for backward: h [B x M x N] -> (p [B x M], argmax)."""
    arg = h.argmax(axis=2)  # first index on ties
    hmax = np.take_along_axis(h, arg[:, :, None], axis=2)[:, :, 0]
    p = _softmax(hmax, axis=-1)
    return p, (p, arg, h.shape)


def aggregate_max_backward(dp, cache):
    """Route the softmax gradient to the argmax instance of each class."""
    p, arg, shape = cache
    dhmax = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
    dh = np.zeros(shape, dtype=dhmax.dtype)
    np.put_along_axis(dh, arg[:, :, None], dhmax[:, :, None], axis=2)
    return dh


def aggregate_noisy_or(h):
    """Noisy-OR over per-instance class posteriors, renormalized to sum 1."""
    p, _ = aggregate_noisy_or_batch(np.asarray(h, dtype=np.float64)[None])
    return p[0]


def noisy_or_prenorm(h):
    """Unnormalized Noisy-OR scores 1 - prod_j(1 - softmax_col_j)[i]."""
    h = np.asarray(h, dtype=np.float64)
    pij = _softmax(h, axis=0)  # per-instance posterior across classes
    return 1.0 - np.prod(1.0 - pij, axis=1)


def aggregate_noisy_or_batch(h):
    pij = _softmax(h, axis=1)        # (B, M, N) softmax across classes per instance
    onem = 1.0 - pij
    q = 1.0 - np.prod(onem, axis=2)  # (B, M)
    s = q.sum(axis=1, keepdims=True)
    p = q / s
    return p, (pij, onem, q, s)


def aggregate_noisy_or_backward(dp, cache):
    pij, onem, q, s = cache
    # renormalization: dq_i = dp_i/s - sum_m dp_m q_m / s^2
    dq = dp / s - (dp * q).sum(axis=1, keepdims=True) / (s**2)
    # product rule: dq/dpij = prod_{k != j}(1 - pik)
    safe = np.where(onem > 0.0, onem, 1.0)
    prod_others = np.prod(onem, axis=2, keepdims=True) / safe
    saturated = onem <= 0.0
    if saturated.any():
        prod_others = np.where(saturated, _leave_one_out(onem), prod_others)
    dpij = dq[:, :, None] * prod_others
    # softmax across classes (axis=1) backward per instance
    dh = pij * (dpij - (dpij * pij).sum(axis=1, keepdims=True))
    return dh


def _leave_one_out(onem):
    """Exact leave-one-out products, used only when some factor is zero."""
    b, m, n = onem.shape
    out = np.empty_like(onem)
    for j in range(n):
        out[:, :, j] = np.prod(np.delete(onem, j, axis=2), axis=2)
    return out


@dataclass
class Bag:
    instances: np.ndarray  # (N, 3, T, F)
    label: int

    def __post_init__(self):
        if len(self.instances) < 1:
            raise DomainError("a bag needs at least one instance")


def build_bags(crops_by_class, bag_size, rng):
    """Group per-class patch pools into bags of `bag_size` same-class instances.

    Classes with fewer patches than the bag size draw with replacement.
    """
    bags = []
    for cls in sorted(crops_by_class):
        pool = crops_by_class[cls]
        if len(pool) == 0:
            continue
        order = rng.permutation(len(pool))
        if len(pool) < bag_size:
            order = rng.integers(0, len(pool), size=bag_size)
        for start in range(0, len(order) - bag_size + 1, bag_size):
            chosen = order[start : start + bag_size]
            bags.append(Bag(np.stack([pool[i] for i in chosen]), cls))
    return bags


def bag_forward_backward(net, bags, rho=0.0, mode="train", rng=None, aggregation="max"):
    """Loss + parameter gradients for a batch of equally sized bags.

    Instances stream through the shared trunk as one batch; aggregation
    replaces the softmax layer; gradients from all instances accumulate into
    the shared parameters.
    """
    if aggregation not in AGGREGATIONS:
        raise DomainError(f"unknown aggregation {aggregation!r}")
    n_bags = len(bags)
    bag_size = len(bags[0].instances)
    x = np.concatenate([b.instances for b in bags]).astype(net.dtype)
    labels = np.array([b.label for b in bags])

    net.zero_grads()
    logits = net.forward(x, mode=mode, rng=rng, upto=-1)          # (B*N, M)
    m = logits.shape[1]
    h = logits.reshape(n_bags, bag_size, m).transpose(0, 2, 1)    # (B, M, N)
    h64 = h.astype(np.float64)
    if aggregation == "max":
        p, cache = aggregate_max_batch(h64)
    else:
        p, cache = aggregate_noisy_or_batch(h64)
    loss = cross_entropy_l1(p, labels, net.weights(), rho)
    dp = cross_entropy_grad(p, labels)
    if aggregation == "max":
        dh = aggregate_max_backward(dp, cache)
    else:
        dh = aggregate_noisy_or_backward(dp, cache)
    dlogits = dh.transpose(0, 2, 1).reshape(n_bags * bag_size, m).astype(net.dtype)
    net.backward(dlogits, upto=-1)
    l1_subgradient(net, rho)
    return loss, p


def grad_check_mil(net, bags, aggregation, rho=0.0, eps=1e-5, max_per_layer=200, rng=None):
    """Finite-difference verification of gradients through an aggregation.

    Returns (report dict, overall max relative error); float64, eval mode.
    """
    net64 = net.astype(np.float64)
    bags64 = [Bag(np.asarray(b.instances, dtype=np.float64), b.label) for b in bags]

    def objective():
        loss, _ = bag_forward_backward(net64, bags64, rho=rho, mode="eval",
                                       aggregation=aggregation)
        return loss

    _ = objective()  # populates analytic gradients
    analytic = {name: g.copy() for name, g in net64.named_grads()}
    report = fd_check_params(net64, objective, analytic, eps=eps,
                             max_per_layer=max_per_layer, rng=rng)
    overall = max(report.values()) if report else 0.0
    return report, overall
