"""Loss values, gradients, SGD semantics, and the compiled-kernel contract."""

import math
import re

import numpy as np
import pytest

from gaussembed.corpus import build_sampling_tables, build_vocabulary
from gaussembed.relations import ISA_RELATION, NO_RELATION
from gaussembed.training import (
    EmbeddingMatrix,
    LossSample,
    TrainConfig,
    _loss_and_grads,
    apply_block,
    init_params,
    sgd_step,
    train,
    wdg_ei_loss,
    wdg_loss,
)

from oracles import finite_difference_gradient


def straight_line_wdg_loss(sample, params, squared=False):
    """Formula transcription with explicit loops, no shared code."""

    def sig(x):
        return 1.0 / (1.0 + math.exp(-x))

    def w2(i, j):
        s = 0.0
        for a, b in zip(params.means[i], params.means[j]):
            s += (a - b) ** 2
        s += params.dim * (params.sigmas[i] - params.sigmas[j]) ** 2
        return s if squared else math.sqrt(s)

    def e1(i, j):
        return -w2(i, j) + params.bias1

    total = math.log(sig(e1(sample.center, sample.context)))
    for n in sample.negatives:
        total += math.log(sig(-e1(sample.center, n)))
    return total


def straight_line_ei_loss(sample, params, alpha, use_kl):
    def sig(x):
        return 1.0 / (1.0 + math.exp(-x))

    def w2(i, j):
        s = 0.0
        for a, b in zip(params.means[i], params.means[j]):
            s += (a - b) ** 2
        s += params.dim * (params.sigmas[i] - params.sigmas[j]) ** 2
        return math.sqrt(s)

    def kl(i, j):
        d = params.dim
        si, sj = params.sigmas[i], params.sigmas[j]
        msq = sum((a - b) ** 2 for a, b in zip(params.means[i], params.means[j]))
        return (
            d * math.log(sj / si) - d / 2 + d * si * si / (2 * sj * sj)
            + msq / (2 * sj * sj)
        )

    def e2(i, j):
        dist = kl(i, j) if use_kl else w2(i, j)
        return -dist + params.bias2

    total = straight_line_wdg_loss(sample, params)
    part2 = math.log(sig(e2(sample.center, sample.target)))
    for m in sample.relation_negatives:
        part2 += math.log(sig(-e2(sample.center, m)))
    return total + alpha * part2


def random_params(rng, rows, dim, bias1=0.5, bias2=0.25):
    return EmbeddingMatrix(
        means=rng.normal(scale=0.8, size=(rows, dim)),
        sigmas=rng.uniform(0.5, 2.0, size=rows),
        bias1=bias1,
        bias2=bias2,
    )


def identical_params(rows, dim, sigma=1.0, bias=0.0):
    return EmbeddingMatrix(
        means=np.tile(np.linspace(-0.2, 0.2, dim), (rows, 1)),
        sigmas=np.full(rows, sigma),
        bias1=bias,
        bias2=bias,
    )


class TestWdgLoss:
    def test_all_identical_energy_zero(self):
        params = identical_params(3, 4)
        sample = LossSample(center=0, context=1, negatives=(2,))
        assert wdg_loss(sample, params) == pytest.approx(2 * math.log(0.5), rel=1e-12)

    def test_saturated_negative_vanishes(self):
        params = identical_params(3, 2, bias=0.7)
        params.means[2] += 100.0  # E(w, n) ~ -100: log sigmoid(-E) ~ 0
        sample = LossSample(center=0, context=1, negatives=(2,))
        expected = math.log(1.0 / (1.0 + math.exp(-0.7)))
        assert wdg_loss(sample, params) == pytest.approx(expected, abs=1e-12)

    def test_always_nonpositive(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            params = random_params(rng, 6, 3)
            sample = LossSample(center=0, context=1, negatives=(2, 3, 4))
            assert wdg_loss(sample, params) <= 0.0

    @pytest.mark.parametrize("squared", [False, True])
    def test_matches_transcription_oracle(self, squared):
        rng = np.random.default_rng(1)
        for _ in range(50):
            params = random_params(rng, 5, int(rng.integers(1, 6)))
            sample = LossSample(center=0, context=1, negatives=(2, 3))
            got = wdg_loss(sample, params, squared_w2_energy=squared)
            want = straight_line_wdg_loss(sample, params, squared=squared)
            assert got == pytest.approx(want, rel=1e-12)


class TestWdgEiLoss:
    def test_alpha_zero_equals_base_loss(self):
        rng = np.random.default_rng(2)
        params = random_params(rng, 6, 4)
        sample = LossSample(
            center=0, context=1, negatives=(2, 3),
            relation="Synonym", target=4, relation_negatives=(5, 2),
        )
        assert wdg_ei_loss(sample, params, 0.0) == wdg_loss(sample, params)

    def test_sentinel_with_identical_params(self):
        # Sentinel row is just another (identical) row here; both halves
        # contribute 2*log(1/2) each with alpha=1, k=1.
        params = identical_params(4, 3, bias=0.0)
        sample = LossSample(
            center=0, context=1, negatives=(2,),
            relation=NO_RELATION, target=3, relation_negatives=(2,),
        )
        assert wdg_ei_loss(sample, params, 1.0) == pytest.approx(
            4 * math.log(0.5), rel=1e-12
        )

    @pytest.mark.parametrize("mode,use_kl", [("all", False), ("isa", True)])
    def test_matches_transcription_oracle(self, mode, use_kl):
        rng = np.random.default_rng(3)
        tag = ISA_RELATION if mode == "isa" else "SimilarTo"
        for _ in range(50):
            params = random_params(rng, 7, int(rng.integers(1, 5)))
            sample = LossSample(
                center=0, context=1, negatives=(2, 3),
                relation=tag, target=4, relation_negatives=(5, 6),
            )
            got = wdg_ei_loss(sample, params, 0.5, ei_mode=mode)
            want = straight_line_ei_loss(sample, params, 0.5, use_kl=use_kl)
            assert got == pytest.approx(want, rel=1e-12)

    def test_alpha_bilinearity(self):
        rng = np.random.default_rng(4)
        params = random_params(rng, 6, 3)
        sample = LossSample(
            center=0, context=1, negatives=(2,),
            relation="Synonym", target=3, relation_negatives=(4, 5),
        )
        l0 = wdg_ei_loss(sample, params, 0.0)
        l1 = wdg_ei_loss(sample, params, 1.0)
        part2 = l1 - l0
        for alpha, delta in ((0.3, 0.4), (1.0, 0.25), (2.0, 1e-3)):
            la = wdg_ei_loss(sample, params, alpha)
            lad = wdg_ei_loss(sample, params, alpha + delta)
            assert lad - la == pytest.approx(delta * part2, rel=1e-9)

    def test_unknown_tag_in_isa_mode_rejected(self):
        params = identical_params(4, 2)
        sample = LossSample(
            center=0, context=1, negatives=(2,),
            relation="Synonym", target=3, relation_negatives=(2,),
        )
        with pytest.raises(ValueError, match="isa mode"):
            wdg_ei_loss(sample, params, 1.0, ei_mode="isa")

    def test_missing_relation_rejected(self):
        params = identical_params(3, 2)
        sample = LossSample(center=0, context=1, negatives=(2,))
        with pytest.raises(ValueError, match="relation"):
            wdg_ei_loss(sample, params, 1.0)


class TestFullLossGradient:
    """Analytic gradient of the entire loss vs central finite differences."""

    def _pack(self, params):
        return np.concatenate(
            [params.means.ravel(), params.sigmas, [params.bias1, params.bias2]]
        )

    def _unpack(self, theta, rows, dim):
        means = theta[: rows * dim].reshape(rows, dim).copy()
        sigmas = theta[rows * dim: rows * dim + rows].copy()
        return EmbeddingMatrix(
            means=means, sigmas=sigmas,
            bias1=float(theta[-2]), bias2=float(theta[-1]),
        )

    def _flat_grad(self, sample, params, config):
        loss, grads, db1, db2 = _loss_and_grads(sample, params, config)
        assert grads is not None
        g_means = np.zeros_like(params.means)
        g_sigmas = np.zeros_like(params.sigmas)
        for row, (dm, ds) in grads.items():
            g_means[row] += dm
            g_sigmas[row] += ds
        return loss, np.concatenate([g_means.ravel(), g_sigmas, [db1, db2]])

    @pytest.mark.parametrize("setup", [
        ("wdg", "all", False),
        ("wdg", "all", True),
        ("ei", "all", False),
        ("ei", "isa", False),
    ])
    def test_gradcheck(self, setup):
        kind, mode, squared = setup
        rng = np.random.default_rng(hash(setup) % 2**32)
        rows, dim = 5, 4
        config = TrainConfig(
            dim=dim, alpha=0.7, ei_mode=mode, squared_w2_energy=squared
        )
        for _ in range(10):
            params = random_params(rng, rows, dim)
            if kind == "wdg":
                sample = LossSample(center=0, context=1, negatives=(2, 3))
            else:
                tag = ISA_RELATION if mode == "isa" else "Synonym"
                sample = LossSample(
                    center=0, context=1, negatives=(2, 3),
                    relation=tag, target=4, relation_negatives=(3, 2),
                )
            _, analytic = self._flat_grad(sample, params, config)

            def loss_at(theta):
                p = self._unpack(theta, rows, dim)
                if kind == "wdg":
                    return wdg_loss(sample, p, squared_w2_energy=squared)
                return wdg_ei_loss(
                    sample, p, config.alpha, ei_mode=mode,
                    squared_w2_energy=squared,
                )

            numeric = finite_difference_gradient(loss_at, self._pack(params))
            err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
            assert err.max() < 1e-4


class TestSgdStep:
    def test_lr_zero_is_bitwise_noop(self):
        rng = np.random.default_rng(5)
        params = random_params(rng, 5, 3)
        before = params.copy()
        sample = LossSample(center=0, context=1, negatives=(2, 3))
        loss, applied = sgd_step(sample, params, 0.0, TrainConfig(dim=3))
        assert applied
        assert np.array_equal(before.means, params.means)
        assert np.array_equal(before.sigmas, params.sigmas)
        assert (before.bias1, before.bias2) == (params.bias1, params.bias2)
        assert loss <= 0.0

    def test_positive_pair_distance_decreases_monotonically(self):
        from gaussembed.geometry import w2_spherical

        config = TrainConfig(dim=4, sigma_min=1e-3, sigma_max=10.0)
        params = EmbeddingMatrix(
            means=np.array([
                [0.0, 0.0, 0.0, 0.0],
                [1.0, 0.5, -0.5, 0.25],
                [50.0, 50.0, 50.0, 50.0],  # distant negative: no real pull
            ]),
            sigmas=np.array([1.0, 1.4, 1.0]),
            bias1=1.0,
            bias2=1.0,
        )
        sample = LossSample(center=0, context=1, negatives=(2,))
        dist = w2_spherical(params.gaussian(0), params.gaussian(1))
        for _ in range(200):
            _, applied = sgd_step(sample, params, 0.01, config)
            assert applied
            new = w2_spherical(params.gaussian(0), params.gaussian(1))
            assert new < dist
            dist = new

    def test_sigma_clamped_under_hostile_learning_rates(self):
        rng = np.random.default_rng(6)
        config = TrainConfig(dim=3, sigma_min=0.05, sigma_max=2.5)
        params = random_params(rng, 8, 3)
        params.sigmas[:] = np.clip(params.sigmas, 0.05, 2.5)
        skipped = 0
        for _ in range(2000):
            ids = rng.choice(8, size=4, replace=False)
            sample = LossSample(
                center=int(ids[0]), context=int(ids[1]),
                negatives=(int(ids[2]), int(ids[3])),
            )
            lr = float(rng.uniform(0.0, 50.0))
            _, applied = sgd_step(sample, params, lr, config)
            skipped += not applied
            assert np.all(params.sigmas >= 0.05) and np.all(params.sigmas <= 2.5)
        assert skipped >= 0  # counting path exercised without crashing

    def test_fixed_bias_mode_never_touches_biases(self):
        rng = np.random.default_rng(7)
        config = TrainConfig(dim=3, bias_mode="fixed", fixed_bias_value=0.8)
        params = random_params(rng, 4, 3, bias1=0.8, bias2=0.8)
        sample = LossSample(center=0, context=1, negatives=(2, 3))
        for _ in range(10):
            sgd_step(sample, params, 0.05, config)
        assert params.bias1 == 0.8 and params.bias2 == 0.8


class TestInitParams:
    def test_mean_component_range(self):
        config = TrainConfig(dim=50)
        params = init_params(100, config, seed=0)
        assert params.means.shape == (100, 50)
        assert np.all(params.means > -0.01) and np.all(params.means < 0.01)

    def test_sigma_init_exact(self):
        params = init_params(10, TrainConfig(dim=5, sigma_init=1.0), seed=0)
        assert np.all(params.sigmas == 1.0)

    def test_seeds_change_means_not_sigmas(self):
        config = TrainConfig(dim=8)
        a = init_params(20, config, seed=1)
        b = init_params(20, config, seed=2)
        assert not np.array_equal(a.means, b.means)
        assert np.array_equal(a.sigmas, b.sigmas)

    def test_bias_modes(self):
        learned = init_params(3, TrainConfig(dim=2, bias_mode="learned"), seed=0)
        assert learned.bias1 == 1.0 and learned.bias2 == 1.0
        fixed = init_params(
            3, TrainConfig(dim=2, bias_mode="fixed", fixed_bias_value=2.5), seed=0
        )
        assert fixed.bias1 == 2.5 and fixed.bias2 == 2.5

    def test_extra_rows_for_sentinel(self):
        params = init_params(7, TrainConfig(dim=3), seed=0, n_extra_rows=1)
        assert params.n_rows == 8


class _KernelHarness:
    """Shared setup: one block of samples fed to both update paths."""

    def build(self, rng, n, rows, dim, k, with_relations, config):
        params = random_params(rng, rows, dim, bias1=0.6, bias2=0.3)
        centers = rng.integers(0, rows - 1, size=n).astype(np.int32)
        contexts = rng.integers(0, rows - 1, size=n).astype(np.int32)
        negs = rng.integers(0, rows - 1, size=(n, k)).astype(np.int32)
        # Force awkward duplicates: negative == context, twin negatives.
        negs[0, 0] = contexts[0]
        if k >= 2:
            negs[1, 1] = negs[1, 0]
        targets = tnegs = None
        if with_relations:
            targets = rng.integers(0, rows, size=n).astype(np.int32)
            targets[2] = rows - 1  # pretend last row is the sentinel
            tnegs = rng.integers(0, rows - 1, size=(n, k)).astype(np.int32)
            tnegs[3, 0] = contexts[3]
        return params, centers, contexts, negs, targets, tnegs

    def run_reference(self, params, centers, contexts, negs, targets, tnegs,
                      lr_start, lr_step, config):
        tag = ISA_RELATION if config.ei_mode == "isa" else "Synonym"
        loss_sum = 0.0
        applied = skipped = 0
        for i in range(len(centers)):
            if targets is None:
                sample = LossSample(
                    center=int(centers[i]), context=int(contexts[i]),
                    negatives=tuple(int(x) for x in negs[i]),
                )
            else:
                sample = LossSample(
                    center=int(centers[i]), context=int(contexts[i]),
                    negatives=tuple(int(x) for x in negs[i]),
                    relation=tag, target=int(targets[i]),
                    relation_negatives=tuple(int(x) for x in tnegs[i]),
                )
            lr = max(config.lr_min, lr_start - lr_step * i)
            loss, ok = sgd_step(sample, params, lr, config)
            if ok:
                loss_sum += loss
                applied += 1
            else:
                skipped += 1
        return loss_sum, applied, skipped


@pytest.mark.parametrize("variant", ["plain", "ei_all", "ei_isa", "squared", "max_norm", "fixed_bias"])
def test_kernel_matches_reference_path(variant):
    harness = _KernelHarness()
    rng = np.random.default_rng(hash(variant) % 2**32)
    kwargs = dict(dim=6, negatives=3, lr_min=1e-4, alpha=0.8)
    with_relations = variant.startswith("ei")
    if variant == "ei_isa":
        kwargs["ei_mode"] = "isa"
    if variant == "squared":
        kwargs["squared_w2_energy"] = True
    if variant == "max_norm":
        kwargs["max_norm"] = 1.5
    if variant == "fixed_bias":
        kwargs["bias_mode"] = "fixed"
    config = TrainConfig(**kwargs)

    params, centers, contexts, negs, targets, tnegs = harness.build(
        rng, n=300, rows=10, dim=6, k=3, with_relations=with_relations, config=config
    )
    lr_start, lr_step = 0.05, 1e-4

    ref = params.copy()
    ref_out = harness.run_reference(
        ref, centers, contexts, negs, targets, tnegs, lr_start, lr_step, config
    )

    fast = params.copy()
    biases = np.array([fast.bias1, fast.bias2])
    fast_out = apply_block(
        fast, biases, centers, contexts, negs, targets, tnegs,
        lr_start, lr_step, config,
    )

    np.testing.assert_allclose(fast.means, ref.means, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(fast.sigmas, ref.sigmas, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(
        biases, [ref.bias1, ref.bias2], rtol=1e-9, atol=1e-12
    )
    assert fast_out[1] == ref_out[1] and fast_out[2] == ref_out[2]
    assert fast_out[0] == pytest.approx(ref_out[0], rel=1e-9)


def test_kernel_sigma_bounds_under_hostile_lr():
    rng = np.random.default_rng(8)
    config = TrainConfig(dim=4, negatives=2, sigma_min=0.2, sigma_max=1.8,
                         learning_rate=30.0, lr_min=10.0)
    params = random_params(rng, 12, 4)
    params.sigmas[:] = np.clip(params.sigmas, 0.2, 1.8)
    biases = np.array([params.bias1, params.bias2])
    for _ in range(20):
        n = 500
        centers = rng.integers(0, 12, size=n).astype(np.int32)
        contexts = rng.integers(0, 12, size=n).astype(np.int32)
        negs = rng.integers(0, 12, size=(n, 2)).astype(np.int32)
        apply_block(params, biases, centers, contexts, negs, None, None,
                    30.0, 0.0, config)
        assert np.all(params.sigmas >= 0.2) and np.all(params.sigmas <= 1.8)


class TestTrain:
    def _corpus(self, seed=0, n_lines=60, n_words=25, line_len=40):
        rng = np.random.default_rng(seed)
        return [
            " ".join(f"w{int(i)}" for i in rng.integers(0, n_words, size=line_len))
            for _ in range(n_lines)
        ]

    def _fit(self, lines, config, relations=None):
        vocab = build_vocabulary(lines, min_count=1)
        tables = build_sampling_tables(
            vocab, subsample=config.subsample, table_size=max(1000, len(vocab))
        )
        return train(lines, vocab, tables, config, relations=relations), vocab

    def test_epochs_zero_returns_initialization(self):
        lines = self._corpus()
        config = TrainConfig(dim=6, epochs=0, subsample=1.0, seed=3)
        (params, report), vocab = self._fit(lines, config)
        fresh = init_params(vocab, config, config.seed)
        assert np.array_equal(params.means, fresh.means)
        assert np.array_equal(params.sigmas, fresh.sigmas)
        assert report.epochs == []

    def test_fixed_seed_single_thread_bit_reproducible(self):
        lines = self._corpus()
        config = TrainConfig(dim=6, epochs=2, subsample=1.0, seed=11,
                             shuffle_buffer=4096)
        (p1, r1), _ = self._fit(lines, config)
        (p2, r2), _ = self._fit(lines, config)
        assert np.array_equal(p1.means, p2.means)
        assert np.array_equal(p1.sigmas, p2.sigmas)
        assert (p1.bias1, p1.bias2) == (p2.bias1, p2.bias2)
        assert r1.lines() == r2.lines()
        assert r1.skipped_total == 0

    def test_report_line_format_and_lr_floor(self):
        lines = self._corpus()
        config = TrainConfig(dim=4, epochs=2, subsample=1.0, seed=1)
        (params, report), _ = self._fit(lines, config)
        pattern = re.compile(
            r"^epoch=\d+ pairs=\d+ mean_loss=-?\d+\.\d{6} lr=\d+\.\d{6} skipped=\d+$"
        )
        assert len(report.lines()) == 2
        for line in report.lines():
            assert pattern.match(line)
        # Linear decay runs out exactly at the floor on the last pair.
        assert report.epochs[-1].lr == config.lr_min

    def test_scheduled_pairs_match_processed(self):
        lines = self._corpus()
        config = TrainConfig(dim=4, epochs=3, subsample=0.05, seed=5)
        (params, report), _ = self._fit(lines, config)
        assert sum(e.pairs for e in report.epochs) == report.scheduled_pairs

    def test_mismatched_tables_rejected(self):
        lines = self._corpus()
        vocab = build_vocabulary(lines, min_count=1)
        other = build_vocabulary(["a b c d"], min_count=1)
        tables = build_sampling_tables(other, table_size=100)
        with pytest.raises(ValueError, match="do not match"):
            train(lines, vocab, tables, TrainConfig(dim=4))

    def test_multi_worker_smoke(self):
        lines = self._corpus(n_lines=30)
        config = TrainConfig(dim=4, epochs=1, subsample=1.0, threads=2, seed=2)
        (params, report), _ = self._fit(lines, config)
        assert np.all(np.isfinite(params.means))
        assert np.all(np.isfinite(params.sigmas))
        assert report.epochs[0].pairs > 0
