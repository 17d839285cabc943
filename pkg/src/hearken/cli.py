"""Command-line entry point wiring the full pipeline.

Subcommands: synth, augment, train, eval, extract, rank, map, gradcheck.
All randomness flows from one --seed; data goes to files or stdout, logs to
stderr.  Exit codes: 0 success, 1 usage, 2 data/format/config error,
3 numerical failure.

Numeric modules import lazily so BLAS thread limits (from the `jobs` key)
apply before numpy loads.
"""

import argparse
import os
import sys

from hearken import config as cfgmod
from hearken.errors import ConfigError, DomainError, FormatError, HearkenError, NumericalError, ParseError


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser():
    p = _Parser(prog="hearken", description="Audio event CNN toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
        sp.add_argument("--seed", type=int, help="global seed (overrides config)")
        sp.add_argument("--jobs", type=int, help="worker/BLAS thread cap (default 1)")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("synth", help="generate the synthetic corpus or highlight set")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--highlight", action="store_true", help="emit highlight videos instead")

    sp = sub.add_parser("augment", help="expand a manifest with mixed/warped clips")
    common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("train", help="train a classifier checkpoint")
    common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--val-manifest")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("eval", help="patch-voting evaluation of a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", help="write the report here as well")

    sp = sub.add_parser("extract", help="extract deep features")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", help="per-clip patch features from a manifest")
    sp.add_argument("--segments", help="segments.tsv for moment features")
    sp.add_argument("--audio-dir", help="directory holding the segment videos")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("rank", help="train the H-factor scorer and score moments")
    common(sp)
    sp.add_argument("--moments", required=True)
    sp.add_argument("--loss", choices=["ranking", "huber", "mirank"])
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("map", help="mean average precision of a score file")
    common(sp)
    sp.add_argument("--scores", required=True)
    sp.add_argument("--moments", required=True)
    sp.add_argument("--videos", help="file listing the video ids to include")

    sp = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(sp)
    sp.add_argument("--arch", default="A-mini")
    return p


def _log(msg):
    print(msg, file=sys.stderr)


def _echo_config(cfg, out_dir=None):
    text = cfgmod.echo(cfg)
    for line in text.strip().split("\n"):
        _log(f"config {line}")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "run_config.txt"), "w", encoding="utf-8") as fh:
            fh.write(text)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = cfgmod.load(args.config, args.set, args.seed)
        if args.jobs is not None:
            cfg["jobs"] = args.jobs
        jobs = str(max(1, int(cfg["jobs"])))
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, jobs)
        return _dispatch(args, cfg)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (ConfigError, FormatError, ParseError, DomainError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except HearkenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args, cfg) -> int:
    handler = {
        "synth": _cmd_synth,
        "augment": _cmd_augment,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "extract": _cmd_extract,
        "rank": _cmd_rank,
        "map": _cmd_map,
        "gradcheck": _cmd_gradcheck,
    }[args.command]
    return handler(args, cfg)


def _cmd_synth(args, cfg) -> int:
    from hearken import synth

    _echo_config(cfg, args.out)
    if args.highlight:
        segments = synth.synth_highlight_set(
            cfg["synth.videos"], cfg["synth.moments"], cfg["synth.positive_rate"],
            args.out, cfg["seed"], event_kind=cfg["synth.event_kind"],
        )
        _log(f"wrote {cfg['synth.videos']} videos, {len(segments)} moments to {args.out}")
    else:
        entries = synth.synth_corpus(
            synth.default_classes(), cfg["synth.clips_per_class"], args.out, cfg["seed"]
        )
        _log(f"wrote {len(entries)} clips to {args.out}")
    return 0


def _cmd_augment(args, cfg) -> int:
    from hearken import augment, manifest

    _echo_config(cfg, args.out)
    entries = manifest.read_manifest(args.manifest)
    base = os.path.dirname(os.path.abspath(args.manifest))
    for e in entries:  # absolute paths survive the move into the new manifest
        e.path = manifest.resolve_path(args.manifest, e.path)
    expanded = augment.augment_dataset(
        entries, cfg["aug.n_total"], cfg["aug.emda_fraction"], cfg["seed"],
        args.out, manifest_dir=base,
    )
    out_path = os.path.join(args.out, "manifest.tsv")
    manifest.write_manifest(out_path, expanded, relative_to=args.out)
    _log(f"manifest grew {len(entries)} -> {len(expanded)} entries ({out_path})")
    return 0


def _cmd_train(args, cfg) -> int:
    from hearken import checkpoint, manifest, train

    _echo_config(cfg, args.out)
    entries = manifest.read_manifest(args.manifest)
    base = os.path.dirname(os.path.abspath(args.manifest))
    val_entries = None
    if args.val_manifest:
        val_entries = manifest.read_manifest(args.val_manifest)
    settings = train.TrainSettings(
        arch=cfg["arch"], patch_frames=cfg["patch_frames"], epochs=cfg["epochs"],
        batch_size=cfg["batch_size"], lr=cfg["lr"], lr_decay=cfg["lr_decay"],
        lr_patience=cfg["lr_patience"], seed=cfg["seed"],
        stop_accuracy=cfg["stop_accuracy"], mil_enabled=cfg["mil.enabled"],
        mil_bag_size=cfg["mil.bag_size"], mil_aggregation=cfg["mil.aggregation"],
    )
    log = _log if args.verbose else None
    bundle, metrics = train.train(entries, settings, val_entries=val_entries,
                                  base_dir=base, log=log)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "model.aen")
    checkpoint.save_checkpoint(ckpt, bundle)
    train.write_metrics_csv(os.path.join(args.out, "metrics.csv"), metrics)
    _log(f"checkpoint written to {ckpt}")
    return 0


def _cmd_eval(args, cfg) -> int:
    from hearken import checkpoint, manifest, train

    _echo_config(cfg)
    bundle = checkpoint.load_checkpoint(args.checkpoint)
    entries = manifest.read_manifest(args.manifest)
    base = os.path.dirname(os.path.abspath(args.manifest))
    report = train.evaluate(bundle, entries, overlap=cfg["eval.overlap"], base_dir=base)
    text = report.to_text()
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return 0


def _cmd_extract(args, cfg) -> int:
    from hearken import checkpoint, dsp, features, manifest, synth

    _echo_config(cfg)
    bundle = checkpoint.load_checkpoint(args.checkpoint)
    if args.segments:
        if not args.audio_dir:
            raise DomainError("--segments requires --audio-dir")
        from hearken.highlight import MomentRecord, write_moments

        segments = synth.read_segments(args.segments)
        moments = []
        wave_cache = {}
        for seg in segments:
            w = wave_cache.get(seg.video_id)
            if w is None:
                w = dsp.standardize(dsp.load_wav(os.path.join(args.audio_dir, seg.video_id + ".wav")))
                wave_cache[seg.video_id] = w
            vec = features.moment_feature(bundle, w, seg.t_start, seg.t_end)
            moments.append(MomentRecord(seg.video_id, seg.moment_id, seg.label, vec))
        write_moments(args.out, moments)
        _log(f"wrote {len(moments)} moment features to {args.out}")
    elif args.manifest:
        entries = manifest.read_manifest(args.manifest)
        rows = []
        for e in entries:
            w = dsp.standardize(dsp.load_wav(manifest.resolve_path(args.manifest, e.path)))
            for feat in features.extract_features(bundle, w):
                rows.append((e.clip_id, feat))
        features.write_features(args.out, rows)
        _log(f"wrote {len(rows)} patch features to {args.out}")
    else:
        raise DomainError("extract needs --manifest or --segments")
    return 0


def _cmd_rank(args, cfg) -> int:
    from hearken import highlight
    from hearken.seeding import STAGE_RANK, derive_rng

    _echo_config(cfg)
    moments = highlight.read_moments(args.moments)
    loss_kind = args.loss or cfg["rank.loss"]
    spec = highlight.LossSpec(loss_kind, cfg["rank.delta"], cfg["rank.group"])
    video_ids = sorted({m.video_id for m in moments})
    rng = derive_rng(cfg["seed"], STAGE_RANK, 999)
    order = rng.permutation(len(video_ids))
    n_train = max(1, int(len(video_ids) * cfg["rank.train_fraction"]))
    train_videos = {video_ids[i] for i in order[:n_train]}
    train_moments = [m for m in moments if m.video_id in train_videos]
    ensemble = highlight.train_ranker(
        train_moments, spec, runs=cfg["rank.runs"], seed=cfg["seed"],
        epochs=cfg["rank.epochs"], lr=cfg["rank.lr"], hidden=cfgmod.hidden_sizes(cfg),
    )
    scores = highlight.score_moments(ensemble, moments)
    highlight.write_scores(args.out, moments, scores)
    test_path = args.out + ".test_videos"
    with open(test_path, "w", encoding="utf-8") as fh:
        for vid in video_ids:
            if vid not in train_videos:
                fh.write(vid + "\n")
    _log(f"scored {len(moments)} moments ({loss_kind}); held-out list in {test_path}")
    if ensemble.excluded_videos:
        _log(f"excluded from pairing: {' '.join(ensemble.excluded_videos)}")
    return 0


def _cmd_map(args, cfg) -> int:
    from hearken import highlight

    moments = highlight.read_moments(args.moments)
    scores_by_key = highlight.read_scores(args.scores)
    if args.videos:
        with open(args.videos, "r", encoding="utf-8") as fh:
            keep = {line.strip() for line in fh if line.strip()}
        moments = [m for m in moments if m.video_id in keep]
    scores = [scores_by_key[(m.video_id, m.moment_id)] for m in moments]
    value, _, excluded = highlight.mean_average_precision(moments, scores)
    print(f"mAP {value:.6f}")
    if excluded:
        _log(f"videos without positives: {' '.join(excluded)}")
    return 0


def _cmd_gradcheck(args, cfg) -> int:
    from hearken import mil, models
    from hearken.nnet import grad_check
    from hearken.seeding import STAGE_GRADCHECK, derive_rng

    _echo_config(cfg)
    rng = derive_rng(cfg["seed"], STAGE_GRADCHECK)
    # short verification geometry: gradient correctness is length-independent
    spec = models.arch_spec(args.arch, n_classes=5, patch_frames=24)
    built = models.build(spec, rng=rng)
    x = rng.standard_normal((2, *spec.input_shape))
    labels = rng.integers(0, 5, size=2)
    report, overall = grad_check(built.net, x, labels, rho=1e-6, rng=rng)
    for name, err in report.items():
        _log(f"gradcheck {name}: {err:.3e}")

    mil_spec = models.arch_spec("custom:conv:3:4|pool:2:2|fc:12", n_classes=4, patch_frames=12)
    mil_built = models.build(mil_spec, rng=rng)
    bag_x = rng.standard_normal((4, *mil_spec.input_shape))
    bags = [mil.Bag(bag_x[:2], 0), mil.Bag(bag_x[2:], 3)]
    for agg in mil.AGGREGATIONS:
        _, agg_err = mil.grad_check_mil(mil_built.net, bags, agg, rng=rng)
        _log(f"gradcheck mil[{agg}]: {agg_err:.3e}")
        overall = max(overall, agg_err)
    print(f"max relative error {overall:.3e}")

    _, corrupted = grad_check(built.net, x, labels, rho=1e-6, rng=rng, corrupt=".W")
    detected = corrupted > 1e-3
    _log(f"corrupted-gradient control: {corrupted:.3e} ({'detected' if detected else 'MISSED'})")
    if overall < 1e-4 and detected:
        return 0
    raise NumericalError(f"gradient verification failed (max rel err {overall:.3e})")


if __name__ == "__main__":
    sys.exit(main())
