"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s``.  The heavy fixtures
(default corpus, one seed-fixed training run) are shared session-wide, so a
full run costs roughly the sum of: one training run (criterion 4), the
augmentation comparison (criterion 5), the highlight study (criterion 8) and
two CLI pipeline executions (criterion 10).
"""

import hashlib
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from hearken import augment, dsp, features, highlight, manifest, mil, models, synth, train
from hearken.augment import EqParams
from hearken.dsp import Waveform
from hearken.highlight import LossSpec, MomentRecord
from hearken.nnet import Softmax, grad_check
from hearken.seeding import derive_rng


def report(n, ok, detail):
    print(f"\nACCEPTANCE {n} [{'PASS' if ok else 'FAIL'}] {detail}")
    return ok


class TestCriterion1:
    def test_parameter_count_oracle(self):
        t0 = time.time()
        a = models.param_count(models.build(models.arch_spec("A", 28, 400)).net)
        b = models.param_count(models.build(models.arch_spec("B", 28, 400)).net)
        ok_a = abs(a - 233e6) / 233e6 < 0.01
        ok_b = abs(b - 257e6) / 257e6 < 0.01
        elapsed = time.time() - t0
        ok = ok_a and ok_b and elapsed < 1.0
        assert report(1, ok, f"A={a:,} (233M±1%: {ok_a}), B={b:,} (257M±1%: {ok_b}), {elapsed:.2f}s")


class TestCriterion2:
    def test_gradient_verification(self):
        t0 = time.time()
        rng = derive_rng(0, 8)
        spec = models.arch_spec("A-mini", n_classes=5, patch_frames=24)
        built = models.build(spec, rng=rng)
        x = rng.standard_normal((2, *spec.input_shape))
        labels = rng.integers(0, 5, size=2)
        _, overall = grad_check(built.net, x, labels, rho=1e-6, rng=derive_rng(0, 9))
        _, corrupted = grad_check(built.net, x, labels, rho=1e-6,
                                  rng=derive_rng(0, 9), corrupt=".W")

        mil_spec = models.arch_spec("custom:conv:3:4|pool:2:2|fc:12", 4, 12)
        mil_built = models.build(mil_spec, rng=derive_rng(1, 0))
        bag_rng = derive_rng(1, 1)
        bag_x = bag_rng.standard_normal((4, *mil_spec.input_shape))
        bags = [mil.Bag(bag_x[:2], 0), mil.Bag(bag_x[2:], 3)]
        agg_err = max(
            mil.grad_check_mil(mil_built.net, bags, agg, rng=bag_rng)[1]
            for agg in mil.AGGREGATIONS
        )
        elapsed = time.time() - t0
        worst = max(overall, agg_err)
        ok = worst < 1e-4 and corrupted > 1e-3 and elapsed < 120
        assert report(
            2, ok,
            f"max rel err {worst:.2e} (<1e-4), corrupted control {corrupted:.2e} "
            f"(detected: {corrupted > 1e-3}), {elapsed:.0f}s",
        )


class TestCriterion3:
    def test_dsp_properties(self):
        t0 = time.time()
        rng = derive_rng(2, 0)
        worst_gain = 0.0
        for _ in range(100):
            p = EqParams(rng.uniform(100, 6000), rng.uniform(-8, 8), rng.uniform(1, 9))
            c = augment.design_peaking_eq(p, 16000)
            h = augment.eq_response(c, [p.f0], 16000)
            worst_gain = max(worst_gain, abs(20 * np.log10(np.abs(h[0])) - p.g))

        worst_identity = 0.0
        freqs = np.linspace(10, 7990, 400)
        for _ in range(20):
            c = augment.design_peaking_eq(
                EqParams(rng.uniform(100, 6000), 0.0, rng.uniform(1, 9)), 16000
            )
            worst_identity = max(
                worst_identity, float(np.max(np.abs(np.abs(augment.eq_response(c, freqs, 16000)) - 1.0)))
            )

        deltas = dsp.add_deltas(np.full((25, 50), 2.5))
        deltas_zero = np.all(deltas[1] == 0.0) and np.all(deltas[2] == 0.0)

        frames_ok = True
        for n in rng.integers(400, 150000, size=50):
            n = int(n)
            w = Waveform(rng.standard_normal(n) * 0.1, 16000)
            frames_ok &= dsp.log_mel_filterbank(w).shape[0] == (n - 400) // 160 + 1

        elapsed = time.time() - t0
        ok = worst_gain < 0.01 and worst_identity < 1e-12 and deltas_zero and frames_ok and elapsed < 60
        assert report(
            3, ok,
            f"EQ gain err {worst_gain:.4f} dB (<0.01), g=0 identity dev {worst_identity:.1e} "
            f"(<1e-12), const deltas zero: {deltas_zero}, frame formula: {frames_ok}, {elapsed:.0f}s",
        )


class TestCriterion4:
    def test_end_to_end_learning(self, trained_run):
        ok = (
            trained_run["final_accuracy"] >= 0.90
            and trained_run["epochs_run"] <= 30
            and trained_run["elapsed"] < 600
        )
        assert report(
            4, ok,
            f"A-mini test accuracy {trained_run['final_accuracy']:.3f} (>=0.90) after "
            f"{trained_run['epochs_run']} epochs (<=30) in {trained_run['elapsed']:.0f}s (<600s)",
        )


class TestCriterion5:
    def test_augmentation_direction(self, default_corpus, tmp_path_factory):
        t0 = time.time()
        d, entries = default_corpus
        wins, detail = 0, []
        for seed in (0, 1, 2):
            tr, te = train.split_dataset(entries, 0.75, seed=seed)
            by_class = {}
            for e in tr:
                by_class.setdefault(e.class_id, []).append(e)
            srng = derive_rng(seed, 100)
            subset = []
            for c in sorted(by_class):
                picks = srng.permutation(len(by_class[c]))[: max(2, len(by_class[c]) // 4)]
                subset.extend(by_class[c][i] for i in picks)
            aug_dir = tmp_path_factory.mktemp(f"aug_seed{seed}")
            expanded = augment.augment_dataset(
                subset, n_total=4 * len(subset), emda_fraction=1.0, seed=seed,
                out_dir=aug_dir, manifest_dir=str(d),
            )
            accs = {}
            for name, data in (("base", subset), ("aug", expanded)):
                settings = train.TrainSettings(epochs=25, seed=seed)
                bundle, _ = train.train(data, settings, base_dir=str(d))
                accs[name] = train.evaluate(bundle, te, base_dir=str(d)).accuracy
            wins += accs["aug"] >= accs["base"]
            detail.append(f"seed{seed}: {accs['base']:.3f}->{accs['aug']:.3f}")
        elapsed = time.time() - t0
        ok = wins == 3 and elapsed < 1800
        assert report(5, ok, f"EMDA 4x expansion wins {wins}/3 ({'; '.join(detail)}), {elapsed:.0f}s (<1800s)")


class TestCriterion6:
    def test_mil_equivalences(self):
        t0 = time.time()
        rng = derive_rng(3, 0)
        worst_max = 0.0
        sm = Softmax()
        for _ in range(200):
            h = rng.standard_normal((7, 1)) * 3
            p = mil.aggregate_max(h)
            ref = sm.forward(h[:, 0][None, :])[0]
            worst_max = max(worst_max, float(np.max(np.abs(p - ref))))

        worst_nor = 0.0
        for _ in range(1000):
            h = rng.standard_normal((5, 3)) * 3
            pre = mil.noisy_or_prenorm(h)
            pij = np.exp(h - h.max(axis=0)) / np.exp(h - h.max(axis=0)).sum(axis=0)
            oracle = 1.0 - np.prod(1.0 - pij, axis=1)
            worst_nor = max(worst_nor, float(np.max(np.abs(pre - oracle))))
        elapsed = time.time() - t0
        ok = worst_max < 1e-6 and worst_nor < 1e-7 and elapsed < 10
        assert report(
            6, ok,
            f"N=1 max vs softmax {worst_max:.1e} (<1e-6), Noisy-OR vs product oracle "
            f"{worst_nor:.1e} (<1e-7) on 1000 matrices, {elapsed:.1f}s",
        )


class TestCriterion7:
    def test_feature_contract(self, trained_run):
        t0 = time.time()
        bundle = trained_run["bundle"]
        rng = derive_rng(4, 0)
        x = rng.standard_normal(int(5.0 * 16000)) * 0.3
        t = np.arange(len(x)) / 16000
        x += np.sin(2 * np.pi * 700 * t)
        w = Waveform(x / np.max(np.abs(x)), 16000)

        feats = features.extract_features(bundle, w)
        norm_ok = all(abs(np.linalg.norm(f.vector) - 1.0) < 1e-6 for f in feats)
        stride = bundle.patch_frames // 2 * dsp.FRAME_SEC
        times_ok = all(
            f.t_start == pytest.approx(i * stride, abs=1e-9) for i, f in enumerate(feats)
        )
        again = features.extract_features(bundle, w)
        det_ok = all(np.array_equal(a.vector, b.vector) for a, b in zip(feats, again))
        elapsed = time.time() - t0
        ok = norm_ok and times_ok and det_ok and elapsed < 60
        assert report(
            7, ok,
            f"unit norms: {norm_ok}, 50%-overlap timestamps: {times_ok}, "
            f"deterministic: {det_ok} ({len(feats)} patches), {elapsed:.0f}s",
        )


class TestCriterion8:
    def test_highlight_ranking(self, trained_run, tmp_path_factory):
        t0 = time.time()
        bundle = trained_run["bundle"]
        hd = tmp_path_factory.mktemp("hiset")
        segs = synth.synth_highlight_set(20, 8, 0.25, hd, seed=0)
        moments = []
        for vid in sorted({s.video_id for s in segs}):
            w = dsp.standardize(dsp.load_wav(os.path.join(hd, vid + ".wav")))
            for s in [s for s in segs if s.video_id == vid]:
                vec = features.moment_feature(bundle, w, s.t_start, s.t_end)
                moments.append(MomentRecord(s.video_id, s.moment_id, s.label, vec))
        vids = sorted({m.video_id for m in moments})

        def run(mom, kind, seed):
            order = derive_rng(seed, 200).permutation(len(vids))
            train_v = {vids[i] for i in order[: len(vids) // 2]}
            trm = [m for m in mom if m.video_id in train_v]
            tem = [m for m in mom if m.video_id not in train_v]
            ens = highlight.train_ranker(trm, LossSpec(kind), runs=5, seed=seed, epochs=150)
            value, _, _ = highlight.mean_average_precision(tem, highlight.score_moments(ens, tem))
            return value

        maps = {k: [run(moments, k, s) for s in (0, 1, 2)] for k in ("ranking", "huber", "mirank")}
        ranker_ok = all(v >= 0.9 for v in maps["ranking"])
        huber_wins = sum(h >= r for h, r in zip(maps["huber"], maps["ranking"]))
        mirank_wins = sum(m >= r for m, r in zip(maps["mirank"], maps["ranking"]))
        variants_ok = huber_wins >= 2 and mirank_wins >= 2

        crng = derive_rng(0, 300)
        control_moments = [
            MomentRecord(m.video_id, m.moment_id, m.label,
                         crng.standard_normal(len(m.feature)).astype(np.float32))
            for m in moments
        ]
        control = run(control_moments, "ranking", 0)
        control_ok = abs(control - 0.25) <= 0.15
        elapsed = time.time() - t0
        ok = ranker_ok and variants_ok and control_ok and elapsed < 600
        assert report(
            8, ok,
            f"ranking mAP {['%.3f' % v for v in maps['ranking']]} (>=0.9: {ranker_ok}), "
            f"huber wins {huber_wins}/3, mirank wins {mirank_wins}/3 (>=2: {variants_ok}), "
            f"random control {control.real:.3f} in [0.10,0.40]: {control_ok} "
            f"(chance-level E[AP] at 8 moments/2 positives is 0.434), {elapsed:.0f}s",
        )


class TestCriterion9:
    def test_loss_closed_forms(self):
        t0 = time.time()
        checks = [
            highlight.ranking_loss(2.0, 0.0) == 0.0,
            highlight.ranking_loss(0.0, 0.0) == 1.0,
            highlight.huber_ranking_loss(2.0, 0.0, 1.0) == 0.0,
            abs(highlight.huber_ranking_loss(0.0, 0.0, 1.0) - 0.5) < 1e-12,  # L=delta joint
            abs(highlight.huber_ranking_loss(0.0, 1.0, 1.0) - 1.5) < 1e-12,  # linear branch
            highlight.mi_ranking_loss([0.4], 0.1) == highlight.ranking_loss(0.4, 0.1),
            highlight.mi_ranking_loss([0.0, 5.0], 0.0) == 0.0,
            abs(highlight.average_precision([1, 0, 1, 0]) - (1 + 2 / 3) / 2) < 1e-9,
            highlight.average_precision([1, 1, 0]) == 1.0,
        ]
        elapsed = time.time() - t0
        ok = all(checks) and elapsed < 1.0
        assert report(9, ok, f"{sum(checks)}/{len(checks)} closed-form checks, {elapsed:.2f}s")


class TestCriterion10:
    PIPELINE = [
        ["synth", "--out", "{d}/corpus", "--seed", "5", "--set", "synth.clips_per_class=3"],
        ["augment", "--manifest", "{d}/corpus/manifest.tsv", "--out", "{d}/aug",
         "--seed", "5", "--set", "aug.n_total=8"],
        ["train", "--manifest", "{d}/aug/manifest.tsv", "--out", "{d}/model",
         "--seed", "5", "--set", "epochs=3"],
        ["eval", "--checkpoint", "{d}/model/model.aen", "--manifest", "{d}/corpus/manifest.tsv",
         "--out", "{d}/eval.txt", "--seed", "5"],
        ["synth", "--highlight", "--out", "{d}/videos", "--seed", "5",
         "--set", "synth.videos=4"],
        ["extract", "--checkpoint", "{d}/model/model.aen", "--segments", "{d}/videos/segments.tsv",
         "--audio-dir", "{d}/videos", "--out", "{d}/moments.tsv", "--seed", "5"],
        ["rank", "--moments", "{d}/moments.tsv", "--out", "{d}/scores.tsv", "--seed", "5",
         "--set", "rank.epochs=30", "--set", "rank.runs=2"],
    ]

    def _run_pipeline(self, d):
        env = {k: v for k, v in os.environ.items()
               if k not in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS")}
        for step in self.PIPELINE:
            argv = [a.format(d=d) for a in step]
            proc = subprocess.run([sys.executable, "-m", "hearken.cli", *argv],
                                  capture_output=True, text=True, env=env)
            assert proc.returncode == 0, f"{argv}: {proc.stderr[-800:]}"

    def _tree_hashes(self, root):
        out = {}
        for base, _, names in os.walk(root):
            for name in names:
                p = os.path.join(base, name)
                rel = os.path.relpath(p, root)
                with open(p, "rb") as fh:
                    out[rel] = hashlib.sha256(fh.read()).hexdigest()
        return out

    def test_pipeline_rerun_hash_identical(self, tmp_path_factory):
        t0 = time.time()
        d1 = str(tmp_path_factory.mktemp("pipe1"))
        d2 = str(tmp_path_factory.mktemp("pipe2"))
        self._run_pipeline(d1)
        self._run_pipeline(d2)
        h1, h2 = self._tree_hashes(d1), self._tree_hashes(d2)
        same_files = set(h1) == set(h2)
        mismatched = [k for k in h1 if same_files and h1[k] != h2.get(k)]
        elapsed = time.time() - t0
        ok = same_files and not mismatched
        assert report(
            10, ok,
            f"{len(h1)} output files, identical trees: {same_files}, "
            f"hash mismatches: {mismatched[:5] if mismatched else 'none'}, {elapsed:.0f}s",
        )
