#!/usr/bin/env python3
"""
Connectionist temporal classification loss.

The forward (alpha) and backward (beta) recursions run in log space over
the blank-extended label sequence. beta_t(s) excludes the emission at t,
so for every t

    P(target | x) = sum_s alpha_t(s) * beta_t(s)

and the gradient with respect to the frame log-probabilities is

    d(-log P) / d log y_t(k) = -sum_{s: l'_s = k} alpha_t(s) beta_t(s) / P

>>> from hand.tensor.tensor import Tensor
>>> lp = Tensor(np.log(np.full((2, 2), 0.5)))
>>> round(ctc_loss(lp, [0], blank=1).item(), 6)
0.287682
"""
import numpy as np
from scipy.special import logsumexp

from ..lib.errors import ContractError, InfeasibleTargetError
from ..tensor.tensor import apply, as_tensor

NEG_INF = -np.inf


def extend_with_blanks(target, blank):
    """a b -> _ a _ b _"""
    ext = [blank]
    for label in target:
        ext.extend([label, blank])
    return ext


def min_frames(target):
    """Frames needed: one per label plus one blank between repeats.

    >>> min_frames([1, 1, 2])
    4
    """
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _can_skip(ext, s, blank):
    return s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]


def ctc_alpha(log_probs, ext, blank):
    t_len, n = log_probs.shape[0], len(ext)
    alpha = np.full((t_len, n), NEG_INF)
    alpha[0, 0] = log_probs[0, ext[0]]
    if n > 1:
        alpha[0, 1] = log_probs[0, ext[1]]
    for t in range(1, t_len):
        for s in range(n):
            terms = [alpha[t - 1, s]]
            if s >= 1:
                terms.append(alpha[t - 1, s - 1])
            if _can_skip(ext, s, blank):
                terms.append(alpha[t - 1, s - 2])
            alpha[t, s] = logsumexp(terms) + log_probs[t, ext[s]]
    return alpha


def ctc_beta(log_probs, ext, blank):
    t_len, n = log_probs.shape[0], len(ext)
    beta = np.full((t_len, n), NEG_INF)
    beta[t_len - 1, n - 1] = 0.0
    if n > 1:
        beta[t_len - 1, n - 2] = 0.0
    for t in range(t_len - 2, -1, -1):
        for s in range(n):
            terms = [beta[t + 1, s] + log_probs[t + 1, ext[s]]]
            if s + 1 < n:
                terms.append(beta[t + 1, s + 1] + log_probs[t + 1, ext[s + 1]])
            if s + 2 < n and _can_skip(ext, s + 2, blank):
                terms.append(beta[t + 1, s + 2] + log_probs[t + 1, ext[s + 2]])
            beta[t, s] = logsumexp(terms)
    return beta


def ctc_log_likelihood(log_probs, target, blank):
    ext = extend_with_blanks(target, blank)
    alpha = ctc_alpha(log_probs, ext, blank)
    tail = alpha[-1, -2:] if len(ext) > 1 else alpha[-1, -1:]
    return float(logsumexp(tail))


def ctc_loss(log_probs, target, blank=0):
    """-log P(target | log_probs) for log_probs [T, V + 1].

    Parameters
    ----------
    log_probs : Tensor
        Per-frame log-probabilities including the blank column.
    target : sequence of int
        Label ids, none of them the blank.
    blank : int
        Column of the blank symbol.
    """
    log_probs = as_tensor(log_probs)
    target = [int(t) for t in target]
    if log_probs.ndim != 2:
        raise ContractError(
            "ctc expects [T, V+1] log-probabilities, got {}".format(
                log_probs.shape
            )
        )
    if blank in target:
        raise ContractError("target contains the blank id {}".format(blank))
    t_len = log_probs.shape[0]
    if t_len < min_frames(target):
        raise InfeasibleTargetError(
            "target of {} labels needs {} frames, got {}".format(
                len(target), min_frames(target), t_len
            )
        )
    ext = extend_with_blanks(target, blank)
    cache = {}

    def forward(lp):
        alpha = ctc_alpha(lp, ext, blank)
        tail = alpha[-1, -2:] if len(ext) > 1 else alpha[-1, -1:]
        cache["alpha"] = alpha
        cache["log_p"] = logsumexp(tail)
        return -cache["log_p"]

    def vjp(g):
        lp = log_probs.data
        beta = ctc_beta(lp, ext, blank)
        occupancy = np.exp(cache["alpha"] + beta - cache["log_p"])
        grad = np.zeros_like(lp)
        for s, label in enumerate(ext):
            grad[:, label] -= occupancy[:, s]
        return (g * grad,)

    return apply("ctc_loss", forward, vjp, log_probs)


def greedy_collapse(frame_ids, blank=0):
    """Best-path decoding: merge repeats, then drop blanks.

    >>> greedy_collapse([0, 3, 3, 0, 3, 4, 4, 0], blank=0)
    [3, 3, 4]
    """
    out = []
    prev = None
    for i in frame_ids:
        if i != prev and i != blank:
            out.append(int(i))
        prev = i
    return out


if __name__ == "__main__":
    import doctest
    failure_count, test_count = doctest.testmod()
    assert test_count > 0
    assert failure_count == 0, "Doctests failed!"
