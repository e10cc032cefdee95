"""Command-line driver: toy corpus generation, training, evaluation, ablations.

Commands: make-toy, train, eval, ablate, dump-features, augment-preview.
Every command is deterministic given its config/seed arguments.
"""

import argparse
import csv
import dataclasses
import io
import os
import sys

import numpy as np

from . import SEGMENT_SECONDS, __version__
from .augment import apply_policy, crop_pair, format_op_log, load_augment_corpora, strategy_policy
from .config import ConfigError, RunConfig, load_config, save_config
from .corpus import (
    build_trial_list,
    generate_toy_corpus,
    generate_toy_noise_corpus,
    generate_toy_rir_corpus,
    load_label_map,
    load_manifest,
    load_noise_corpus,
    load_rir_corpus,
    load_trial_list,
    load_waveform,
    save_corpus_list,
    save_label_map,
    save_manifest,
    save_trial_list,
    save_waveform,
)
from .evaluation import (
    DcfParams,
    det_curve_csv,
    evaluation_report,
    extract_embedding,
    format_report,
    save_score_file,
    score_trials,
)
from .features import dump_features, featurize, logmel
from .trainer import Trainer, load_checkpoint, system_from_checkpoint


class CliError(RuntimeError):
    """User-facing command failure; message printed to stderr, exit code 1."""


# ---------------------------------------------------------------------------
# make-toy
# ---------------------------------------------------------------------------

def cmd_make_toy(args) -> int:
    out = args.out
    os.makedirs(out, exist_ok=True)
    manifest, labels = generate_toy_corpus(
        out, args.speakers, args.utts, args.duration, args.seed, segment_s=args.segment
    )
    # manifest paths are stored relative to the corpus directory
    rel_entries = [
        dataclasses.replace(e, path=os.path.relpath(e.path, out)) for e in manifest.entries
    ]
    save_manifest(os.path.join(out, "manifest.tsv"), dataclasses.replace(manifest, entries=rel_entries))
    save_label_map(os.path.join(out, "labels.tsv"), labels)
    trials = build_trial_list(labels, args.trials, args.seed)
    save_trial_list(os.path.join(out, "trials.txt"), trials)

    noise = generate_toy_noise_corpus(os.path.join(out, "noise"), args.noise_count, 4.0, args.seed)
    rel_noise = [dataclasses.replace(e, path=os.path.relpath(e.path, out)) for e in noise.entries]
    save_corpus_list(os.path.join(out, "noise_list.tsv"), dataclasses.replace(noise, entries=rel_noise))
    rirs = generate_toy_rir_corpus(os.path.join(out, "rir"), args.rir_count, args.seed)
    rel_rirs = [dataclasses.replace(e, path=os.path.relpath(e.path, out)) for e in rirs.entries]
    save_corpus_list(os.path.join(out, "rir_list.tsv"), dataclasses.replace(rirs, entries=rel_rirs))

    config = RunConfig()
    config = dataclasses.replace(
        config,
        paths=dataclasses.replace(
            config.paths,
            manifest=os.path.join(out, "manifest.tsv"),
            noise_list=os.path.join(out, "noise_list.tsv"),
            rir_list=os.path.join(out, "rir_list.tsv"),
            trials=os.path.join(out, "trials.txt"),
            labels=os.path.join(out, "labels.tsv"),
            run_dir=os.path.join(out, "run"),
        ),
        train=dataclasses.replace(
            config.train,
            batch_utterances=min(32, len(manifest)),
            total_steps=800,
            checkpoint_every=200,
            seed=args.seed,
        ),
    )
    save_config(os.path.join(out, "config.json"), config)

    n_target = sum(t[0] for t in trials)
    print(f"toy corpus: {len(manifest)} utterances from {args.speakers} speakers in {out}")
    print(f"trials: {len(trials)} ({n_target} target / {len(trials) - n_target} non-target)")
    print(f"noise files: {len(noise)}  rir files: {len(rirs)}")
    print(f"config template: {os.path.join(out, 'config.json')}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def build_trainer(config: RunConfig, resume: str | None = None, run_dir: str | None = None) -> Trainer:
    if not config.paths.manifest:
        raise CliError("config paths.manifest is required for training")
    manifest = load_manifest(config.paths.manifest)
    if len(manifest) == 0:
        raise CliError(f"manifest {config.paths.manifest} is empty")
    policy = config.augmentation_policy()
    noise_corpus = rir_corpus = None
    if policy.noise_enabled:
        if not config.paths.noise_list:
            raise CliError("strategy uses additive noise but paths.noise_list is not set")
        noise_corpus = load_noise_corpus(config.paths.noise_list)
        if len(noise_corpus) == 0:
            raise CliError(f"noise list {config.paths.noise_list} is empty")
    if policy.reverb_enabled:
        if not config.paths.rir_list:
            raise CliError("strategy uses reverberation but paths.rir_list is not set")
        rir_corpus = load_rir_corpus(config.paths.rir_list)
        if len(rir_corpus) == 0:
            raise CliError(f"rir list {config.paths.rir_list} is empty")
    corpora = load_augment_corpora(noise_corpus, rir_corpus)
    run_dir = run_dir if run_dir is not None else config.paths.run_dir

    if resume:
        return Trainer.from_checkpoint(
            resume, manifest, corpora=corpora, specaug_policy=config.specaug, run_dir=run_dir
        )
    return Trainer(
        manifest,
        config.train,
        config.encoder,
        config.head_config(),
        corpora=corpora,
        specaug_policy=config.specaug,
        run_dir=run_dir,
    )


def cmd_train(args) -> int:
    config = load_config(args.config, args.set or [])
    trainer = build_trainer(config, resume=args.resume)
    if trainer.run_dir:
        save_config(os.path.join(trainer.run_dir, "config.json"), config)
    history = trainer.run(args.steps)
    if history:
        last = history[-1]
        print(
            f"trained to step {trainer.step}/{trainer.cfg.total_steps}: "
            f"ap={last['ap']:.4f} ssreg={last['ssreg']:.4f} emb_std={last['emb_std']:.4f}"
        )
    else:
        print(f"nothing to do: already at step {trainer.step}")
    print(f"run dir: {trainer.run_dir}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def evaluate_checkpoint(
    checkpoint_path: str,
    manifest_path: str,
    trials_path: str,
    out_dir: str | None = None,
    p_target: float = 0.05,
) -> dict:
    payload = load_checkpoint(checkpoint_path)
    model = system_from_checkpoint(payload).model
    manifest = load_manifest(manifest_path)
    paths = {e.utterance_id: e.path for e in manifest.entries}
    trials = load_trial_list(trials_path)

    needed = sorted({u for _, a, b in trials for u in (a, b)})
    missing = [u for u in needed if u not in paths]
    if missing:
        raise CliError(f"trial utterances missing from manifest: {missing[:5]}")
    embeddings = {u: extract_embedding(load_waveform(paths[u]), model) for u in needed}

    score_set = score_trials(trials, embeddings)
    params = DcfParams(p_target=p_target)
    report = evaluation_report(score_set, params)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        save_score_file(os.path.join(out_dir, "scores.txt"), trials, score_set)
        with open(os.path.join(out_dir, "det.csv"), "w", encoding="utf-8") as fh:
            fh.write(det_curve_csv(score_set))
        with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(format_report(report))
    return report


def cmd_eval(args) -> int:
    report = evaluate_checkpoint(
        args.checkpoint, args.manifest, args.trials, args.out, args.p_target
    )
    print(format_report(report), end="")
    return 0


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

def cmd_ablate(args) -> int:
    config = load_config(args.config, args.set or [])
    if args.strategies is not None and args.lambdas is not None:
        raise CliError("choose one sweep: --strategies or --lambdas")
    if args.strategies is not None:
        mode, values = "strategy", [int(v) for v in args.strategies.split(",") if v != ""]
    elif args.lambdas is not None:
        mode, values = "lambda", [float(v) for v in args.lambdas.split(",") if v != ""]
    else:
        raise CliError("provide a sweep via --strategies or --lambdas")
    if not values:
        raise CliError("sweep list is empty")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [config.train.seed]
    if not config.paths.trials:
        raise CliError("config paths.trials is required for ablation")

    os.makedirs(args.out, exist_ok=True)
    rows = []
    for value in values:
        for seed in seeds:
            if mode == "strategy":
                train_cfg = dataclasses.replace(config.train, strategy=value, seed=seed)
            else:
                train_cfg = dataclasses.replace(config.train, ssreg_weight=value, seed=seed)
            sub_config = dataclasses.replace(config, train=train_cfg)
            run_dir = os.path.join(args.out, f"{mode}_{value}_seed{seed}")
            trainer = build_trainer(sub_config, run_dir=run_dir)
            trainer.run()
            report = evaluate_checkpoint(
                os.path.join(run_dir, "final.pt"),
                config.paths.manifest,
                config.paths.trials,
                out_dir=os.path.join(run_dir, "eval"),
            )
            rows.append(
                {
                    mode: value,
                    "seed": seed,
                    "eer_pct": report["eer_pct"],
                    "min_dcf": report["min_dcf"],
                }
            )
            print(f"{mode}={value} seed={seed}: EER {report['eer_pct']:.2f}% minDCF {report['min_dcf']:.3f}")

    table = format_ablation_table(mode, rows)
    with open(os.path.join(args.out, "table.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    with open(os.path.join(args.out, "table.csv"), "w", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=[mode, "seed", "eer_pct", "min_dcf"])
        writer.writeheader()
        writer.writerows(rows)
    print()
    print(table, end="")
    return 0


def format_ablation_table(mode: str, rows: list[dict]) -> str:
    buf = io.StringIO()
    header = f"{mode:>10}  {'seed':>6}  {'EER(%)':>8}  {'minDCF':>8}"
    buf.write(header + "\n")
    buf.write("-" * len(header) + "\n")
    for row in rows:
        buf.write(
            f"{row[mode]:>10}  {row['seed']:>6}  {row['eer_pct']:>8.2f}  {row['min_dcf']:>8.3f}\n"
        )
    return buf.getvalue()


# ---------------------------------------------------------------------------
# dump-features / augment-preview
# ---------------------------------------------------------------------------

def cmd_dump_features(args) -> int:
    wav = load_waveform(args.wav)
    feat = logmel(wav) if args.raw else featurize(wav)
    dump_features(args.out, feat)
    kind = "log-mel (raw)" if args.raw else "log-mel + MVN"
    print(f"wrote {feat.shape[0]}x{feat.shape[1]} {kind} matrix to {args.out}")
    return 0


def cmd_augment_preview(args) -> int:
    wav = load_waveform(args.wav)
    policy = strategy_policy(args.strategy)
    noise_corpus = load_noise_corpus(args.noise_list) if args.noise_list else None
    rir_corpus = load_rir_corpus(args.rir_list) if args.rir_list else None
    if policy.noise_enabled and noise_corpus is None:
        raise CliError(f"strategy {args.strategy} needs --noise-list")
    if policy.reverb_enabled and rir_corpus is None:
        raise CliError(f"strategy {args.strategy} needs --rir-list")
    corpora = load_augment_corpora(noise_corpus, rir_corpus)

    rng = np.random.default_rng(args.seed)
    utt_id = os.path.splitext(os.path.basename(args.wav))[0]
    pair = crop_pair(wav, utt_id, rng, args.segment)
    pair = apply_policy(pair, policy, corpora, rng)

    os.makedirs(args.out_dir, exist_ok=True)
    save_waveform(os.path.join(args.out_dir, "seg_a.wav"), pair.seg_a)
    save_waveform(os.path.join(args.out_dir, "seg_b.wav"), pair.seg_b)
    lines = format_op_log(pair)
    with open(os.path.join(args.out_dir, "oplog.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    return 0


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="siamsv",
        description="Self-supervised speaker embedding training and evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"siamsv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy", help="generate a synthetic toy-speaker corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--speakers", type=int, default=32)
    p.add_argument("--utts", type=int, default=20, help="utterances per speaker")
    p.add_argument("--duration", type=float, default=5.0, help="utterance length in seconds")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--trials", type=int, default=1000, help="verification trials to sample")
    p.add_argument("--noise-count", type=int, default=12)
    p.add_argument("--rir-count", type=int, default=12)
    p.add_argument("--segment", type=float, default=SEGMENT_SECONDS)
    p.set_defaults(func=cmd_make_toy)

    p = sub.add_parser("train", help="train from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--steps", type=int, help="run at most this many steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a trial list with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--out", help="directory for scores.txt, det.csv, report.txt")
    p.add_argument("--p-target", type=float, default=0.05)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep augmentation strategies or SSReg weights")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.add_argument("--strategies", help="comma-separated strategy ids, e.g. 1,4")
    p.add_argument("--lambdas", help="comma-separated SSReg weights, e.g. 0,0.08,0.5")
    p.add_argument("--seeds", help="comma-separated seeds (default: config seed)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-features", help="write a binary feature matrix for debugging")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--raw", action="store_true", help="skip MVN")
    p.set_defaults(func=cmd_dump_features)

    p = sub.add_parser("augment-preview", help="write one augmented segment pair + op log")
    p.add_argument("--wav", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--strategy", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-list")
    p.add_argument("--rir-list")
    p.add_argument("--segment", type=float, default=SEGMENT_SECONDS)
    p.set_defaults(func=cmd_augment_preview)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
