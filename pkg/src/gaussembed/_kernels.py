"""Compiled inner loops for stochastic gradient ascent on the embedding table.

The sequential kernel is the deterministic reference path used by all tests
and by single-worker training; the parallel kernel runs the same per-pair
update from multiple threads with lock-free (racy) writes into the shared
table, so its results are not bit-reproducible.

Per-pair semantics (kept in lockstep with the pure-Python reference in
``training.py``, which the tests compare against): all energies and
gradients are evaluated at the pre-update parameters, the full gradient of
the pair's loss is then applied once, sigmas are clamped to their allowed
interval, and a pair whose energies come out non-finite is skipped and
counted instead of corrupting the table.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

# Term layout inside one sample, for k context negatives:
#   0            positive context term        (bias 1)
#   1 .. k       context negatives            (bias 1)
#   k+1          relation target              (bias 2, scaled by alpha)
#   k+2 .. 2k+1  relation negatives           (bias 2, scaled by alpha)

EI_NONE = 0
EI_W2 = 1
EI_KL = 2


@njit(cache=True, inline="always")
def _sigmoid(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True, inline="always")
def _log_sigmoid(x):
    if x >= 0.0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


@njit(cache=True, inline="always")
def _clamp(x, lo, hi):
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


@njit(cache=True, inline="always")
def _renorm(means, row, max_norm):
    nsq = 0.0
    for j in range(means.shape[1]):
        nsq += means[row, j] * means[row, j]
    if nsq > max_norm * max_norm:
        s = max_norm / math.sqrt(nsq)
        for j in range(means.shape[1]):
            means[row, j] *= s

@njit(cache=True)
def _apply_pair(
    means, sigmas, biases,
    i, w, contexts, negs, targets, tnegs,
    k, n_terms, ei_kind, alpha,
    squared, grad_floor, sigma_min, sigma_max, max_norm, update_bias,
    lr,
    dbuf, coefs, cfac, gsw, gsx, accw,
):
    dim = means.shape[1]
    sw = sigmas[w]
    loss = 0.0

    # Compute phase: energies and per-term gradient pieces at the
    # pre-update parameters.  Nothing is mutated until every term checks out.
    for t in range(n_terms):
        if t == 0:
            x = contexts[i]
        elif t <= k:
            x = negs[i, t - 1]
        elif t == k + 1:
            x = targets[i]
        else:
            x = tnegs[i, t - k - 2]
        part2 = t > k
        bias = biases[1] if part2 else biases[0]
        sx = sigmas[x]
        normsq = 0.0
        for j in range(dim):
            dj = means[w, j] - means[x, j]
            dbuf[t, j] = dj
            normsq += dj * dj
        if not math.isfinite(normsq):
            return 0.0, False
        if part2 and ei_kind == EI_KL:
            r = sw / sx
            kl = (
                dim * math.log(sx / sw)
                - 0.5 * dim
                + 0.5 * dim * r * r
                + 0.5 * normsq / (sx * sx)
            )
            e = -kl + bias
            c = 1.0 / (sx * sx)
            cfac[t] = c
            gsw[t] = dim / sw - dim * sw * c
            gsx[t] = -dim / sx + (dim * sw * sw + normsq) * c / sx
        else:
            sd = sw - sx
            w2sq = normsq + dim * sd * sd
            if squared:
                e = -w2sq + bias
                c = 2.0
            else:
                w2 = math.sqrt(w2sq)
                e = -w2 + bias
                c = 1.0 / (w2 if w2 > grad_floor else grad_floor)
            cfac[t] = c
            gsw[t] = -dim * sd * c
            gsx[t] = dim * sd * c
        if not math.isfinite(e):
            return 0.0, False
        scale = alpha if part2 else 1.0
        if t == 0 or t == k + 1:
            loss += scale * _log_sigmoid(e)
            coefs[t] = scale * _sigmoid(-e)
        else:
            loss += scale * _log_sigmoid(-e)
            coefs[t] = -scale * _sigmoid(e)

    # Update phase.  Partner rows take their single-term gradient directly;
    # the center row accumulates across terms and is applied last, matching
    # a full-gradient evaluation at the old parameters.
    for j in range(dim):
        accw[j] = 0.0
    accsw = 0.0
    db1 = 0.0
    db2 = 0.0
    for t in range(n_terms):
        if t == 0:
            x = contexts[i]
        elif t <= k:
            x = negs[i, t - 1]
        elif t == k + 1:
            x = targets[i]
        else:
            x = tnegs[i, t - k - 2]
        co = coefs[t]
        mc = co * cfac[t]
        for j in range(dim):
            dj = dbuf[t, j]
            means[x, j] += lr * (mc * dj)
            accw[j] -= mc * dj
        sigmas[x] = _clamp(sigmas[x] + lr * (co * gsx[t]), sigma_min, sigma_max)
        accsw += co * gsw[t]
        if t > k:
            db2 += co
        else:
            db1 += co
    for j in range(dim):
        means[w, j] += lr * accw[j]
    sigmas[w] = _clamp(sigmas[w] + lr * accsw, sigma_min, sigma_max)
    if max_norm > 0.0:
        # Renorm only after every term applied, so duplicate partner rows
        # see the same summed update the reference path applies.
        for t in range(n_terms):
            if t == 0:
                x = contexts[i]
            elif t <= k:
                x = negs[i, t - 1]
            elif t == k + 1:
                x = targets[i]
            else:
                x = tnegs[i, t - k - 2]
            _renorm(means, x, max_norm)
        _renorm(means, w, max_norm)
    if update_bias:
        biases[0] += lr * db1
        biases[1] += lr * db2
    return loss, True


@njit(cache=True)
def train_block_seq(
    means, sigmas, biases,
    centers, contexts, negs, targets, tnegs,
    ei_kind, alpha,
    squared, grad_floor, sigma_min, sigma_max, max_norm, update_bias,
    lr_start, lr_step, lr_min,
    dbuf, coefs, cfac, gsw, gsx, accw,
):
    n = centers.shape[0]
    k = negs.shape[1]
    n_terms = dbuf.shape[0]
    loss_sum = 0.0
    applied = 0
    skipped = 0
    for i in range(n):
        lr = lr_start - lr_step * i
        if lr < lr_min:
            lr = lr_min
        loss, ok = _apply_pair(
            means, sigmas, biases,
            i, centers[i], contexts, negs, targets, tnegs,
            k, n_terms, ei_kind, alpha,
            squared, grad_floor, sigma_min, sigma_max, max_norm, update_bias,
            lr,
            dbuf, coefs, cfac, gsw, gsx, accw,
        )
        if ok:
            loss_sum += loss
            applied += 1
        else:
            skipped += 1
    return loss_sum, applied, skipped


@njit(cache=True, parallel=True)
def train_block_par(
    means, sigmas, biases,
    centers, contexts, negs, targets, tnegs,
    ei_kind, alpha,
    squared, grad_floor, sigma_min, sigma_max, max_norm, update_bias,
    lr_start, lr_step, lr_min,
    n_terms,
):
    n = centers.shape[0]
    k = negs.shape[1]
    dim = means.shape[1]
    loss_sum = 0.0
    applied = 0
    skipped = 0
    for i in prange(n):
        dbuf = np.empty((n_terms, dim))
        coefs = np.empty(n_terms)
        cfac = np.empty(n_terms)
        gsw = np.empty(n_terms)
        gsx = np.empty(n_terms)
        accw = np.empty(dim)
        lr = lr_start - lr_step * i
        if lr < lr_min:
            lr = lr_min
        loss, ok = _apply_pair(
            means, sigmas, biases,
            i, centers[i], contexts, negs, targets, tnegs,
            k, n_terms, ei_kind, alpha,
            squared, grad_floor, sigma_min, sigma_max, max_norm, update_bias,
            lr,
            dbuf, coefs, cfac, gsw, gsx, accw,
        )
        if ok:
            loss_sum += loss
            applied += 1
        else:
            skipped += 1
    return loss_sum, applied, skipped
