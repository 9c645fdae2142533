"""``convasr`` command line: one binary, one subcommand per pipeline stage.

Exit codes: 0 success, 1 runtime failure, 2 usage error. ``--config FILE``
(JSON) overrides flags: top-level keys are :class:`ExperimentConfig` fields
and a section named after the subcommand overrides that subcommand's flags.
Artifact directories get ``config.json`` (reproducible) and ``metadata.json``
(the only file carrying a timestamp).
"""
from __future__ import annotations

import argparse
import datetime
import json
import platform
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .errors import ConvAsrError

COMMANDS = ("synth", "train-lstm", "train-resnet", "dilate", "decode", "fuse", "train-lm", "tune-interp",
            "rescore", "score", "report", "verify")


class UsageError(Exception):
    pass


# -- run directories -----------------------------------------------------------------------

def _record(out: Path, args: argparse.Namespace, exp) -> None:
    """Write the exact producing config, and a separate timestamped metadata file."""
    out.mkdir(parents=True, exist_ok=True)
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out", "config")}
    (out / "config.json").write_text(json.dumps({"command": args.command, "flags": flags,
                                                 "experiment": exp.to_dict()}, indent=1, sort_keys=True,
                                                default=str) + "\n")
    (out / "metadata.json").write_text(json.dumps({
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        "convasr": __version__, "python": platform.python_version(), "numpy": np.__version__,
        "argv": sys.argv[1:]}, indent=1) + "\n")


def _experiment(args: argparse.Namespace, overrides: dict):
    from .pipeline import ExperimentConfig
    base = {}
    if getattr(args, "seed", None) is not None:
        base["seed"] = args.seed
    return ExperimentConfig.from_dict({**base, **overrides})


def _apply_config(args: argparse.Namespace) -> dict:
    """Fold ``--config`` into ``args``; return the experiment-level overrides."""
    if not getattr(args, "config", None):
        return {}
    data = json.loads(Path(args.config).read_text())
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    section = data.pop(args.command, {})
    for other in COMMANDS:
        data.pop(other, None)
    for key, value in section.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise UsageError(f"config section {args.command!r} sets unknown flag {key!r}")
        setattr(args, dest, value)
    if "seed" in data and hasattr(args, "seed"):
        args.seed = data["seed"]
    return data


def _load_corpus(path):
    from .corpus import load_corpus
    return load_corpus(path)


def _corpus_seed_default(args, corpus) -> None:
    if getattr(args, "seed", None) is None:
        args.seed = corpus.config.seed


def _load_am(path):
    from .lstm_am import LstmAcousticModel
    from .resnet_am import ResNetAcousticModel
    meta = json.loads(Path(path).with_suffix(".json").read_text())
    kind = meta.get("kind")
    if kind == "lstm_am":
        return LstmAcousticModel.load(path)
    if kind == "resnet_am":
        return ResNetAcousticModel.load(path)
    raise ConvAsrError(f"{path}: unknown acoustic model kind {kind!r}")


def _load_lm(path):
    from .lm import NeuralLM, NgramLM
    path = Path(path)
    if path.with_suffix(path.suffix + ".json").exists():
        return NeuralLM.load(path)
    return NgramLM.load(path)


# -- subcommands -------------------------------------------------------------------------------

def cmd_synth(args, exp) -> int:
    from .corpus import save_corpus, synth_corpus
    from .lm import synthetic_nbest, write_nbest
    from .pipeline import split_corpus
    corpus = synth_corpus(exp.corpus_config())
    out = Path(args.out)
    manifest = save_corpus(corpus, out / "corpus")
    if args.nbest:
        eval_u = split_corpus(corpus, exp)["eval"]
        lists = [synthetic_nbest(u.id, u.words, corpus.words, args.nbest, seed=exp.seed + i)
                 for i, u in enumerate(eval_u)]
        write_nbest(lists, out / "nbest.txt")
    _record(out, args, exp)
    print(f"wrote {len(corpus.utterances)} utterances to {manifest} (sha256 {corpus.fingerprint()[:16]})")
    return 0


def cmd_train_lstm(args, exp) -> int:
    from . import lstm_am
    from .pipeline import split_corpus, train_lstm
    corpus = _load_corpus(args.corpus)
    parts = split_corpus(corpus, exp)
    lam = exp.sa_mtl_lambda if args.lam is None else args.lam
    model, result = train_lstm(corpus, parts["train"], exp, lam)
    out = Path(args.out)
    _record(out, args, exp)
    model.save(out / "model.ckpt")
    stats = {"lambda": lam, "losses": result.losses, "speaker_losses": result.speaker_losses,
             "dev_frame_acc": lstm_am.frame_accuracy(model, parts["dev"])}
    (out / "train_log.json").write_text(json.dumps(stats, indent=1) + "\n")
    print(f"LSTM lambda={lam}: dev frame accuracy {stats['dev_frame_acc']:.3f}; saved {out / 'model.ckpt'}")
    return 0


def cmd_train_resnet(args, exp) -> int:
    from . import resnet_am
    from .pipeline import split_corpus, train_resnet
    corpus = _load_corpus(args.corpus)
    parts = split_corpus(corpus, exp)
    model, result = train_resnet(corpus, parts["train"], exp)
    out = Path(args.out)
    _record(out, args, exp)
    model.save(out / "model.ckpt")
    stats = {"losses": result.losses, "dev_frame_acc": resnet_am.frame_accuracy(model, parts["dev"])}
    (out / "train_log.json").write_text(json.dumps(stats, indent=1) + "\n")
    print(f"ResNet: dev frame accuracy {stats['dev_frame_acc']:.3f}; saved {out / 'model.ckpt'}")
    return 0


def cmd_dilate(args, exp) -> int:
    from .resnet_am import ResNetAcousticModel, to_dilated
    model = ResNetAcousticModel.load(args.model)
    dense = to_dilated(model)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dense.save(out)
    print(f"dense model with context {dense.context} written to {out}")
    return 0


def _write_scores(directory: Path, scores) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for s in scores:
        s.save(directory / f"{s.utt_id}.fs")


def _read_scores(directory) -> dict:
    from .decode_fusion import FrameScores
    files = sorted(Path(directory).glob("*.fs"))
    if not files:
        raise ConvAsrError(f"{directory}: no frame-score files")
    out = {}
    for f in files:
        s = FrameScores.load(f)
        out[s.utt_id] = s
    return out


def _decode_and_write(out: Path, corpus, exp, scores: dict, split_utts) -> None:
    from .pipeline import decode_all, decoder_lm, split_corpus
    from .scoring import write_trn
    lm = decoder_lm(corpus, split_corpus(corpus, exp)["train"])
    ids = [u.id for u in split_utts if u.id in scores]
    hyps = decode_all([scores[i] for i in ids], corpus, lm, exp.decode_config())
    write_trn(dict(zip(ids, hyps)), out / "hyp.trn")
    write_trn({u.id: u.words for u in split_utts if u.id in scores}, out / "ref.trn")


def cmd_decode(args, exp) -> int:
    from .pipeline import frame_scores, split_corpus
    corpus = _load_corpus(args.corpus)
    _corpus_seed_default(args, corpus)
    utts = split_corpus(corpus, exp)[args.split]
    model = _load_am(args.model)
    scores = frame_scores(model, utts, Path(args.model).parent.name or "model")
    out = Path(args.out)
    _record(out, args, exp)
    _write_scores(out / "scores", scores)
    _decode_and_write(out, corpus, exp, {s.utt_id: s for s in scores}, utts)
    print(f"decoded {len(scores)} {args.split} utterances into {out / 'hyp.trn'}")
    return 0


def cmd_fuse(args, exp) -> int:
    from .decode_fusion import FusionConfig, fuse, tune_weights, viterbi_decode
    from .pipeline import decoder_lm, split_corpus
    corpus = _load_corpus(args.corpus)
    parts = split_corpus(corpus, exp)
    streams = [_read_scores(d) for d in args.scores]
    common = sorted(set.intersection(*(set(s) for s in streams)))
    if not common:
        raise ConvAsrError("score directories share no utterances")
    if args.weights:
        cfg = FusionConfig(tuple(args.weights), args.pooling)
    else:
        if not args.tune_dev:
            raise UsageError("give --weights or --tune-dev score directories")
        if len(args.tune_dev) != len(streams):
            raise UsageError("--tune-dev needs one directory per --scores directory")
        dev = [_read_scores(d) for d in args.tune_dev]
        by_id = {u.id: u for u in parts["dev"]}
        dev_ids = sorted(set.intersection(*(set(s) for s in dev)) & set(by_id))
        lm = decoder_lm(corpus, parts["train"])
        dcfg = exp.decode_config()
        cfg, dev_wer = tune_weights([[s[i] for s in dev] for i in dev_ids], [by_id[i].words for i in dev_ids],
                                    lambda s: viterbi_decode(s, corpus.lexicon, lm, dcfg).words,
                                    exp.fusion_grid, args.pooling)
        print(f"tuned weights {cfg.weights} (dev WER {dev_wer:.2f})")
    fused = {i: fuse([s[i] for s in streams], cfg) for i in common}
    for i, s in fused.items():
        s.model_id, s.utt_id = "fused", i
    out = Path(args.out)
    _record(out, args, exp)
    _write_scores(out / "scores", fused.values())
    (out / "fusion.json").write_text(json.dumps({"weights": list(cfg.weights), "pooling": cfg.pooling}) + "\n")
    utts = [u for u in corpus.utterances if u.id in fused]
    _decode_and_write(out, corpus, exp, fused, utts)
    print(f"fused {len(fused)} utterances with weights {cfg.weights}")
    return 0


def cmd_train_lm(args, exp) -> int:
    from .lm import LmSchedule, NeuralLmConfig, Vocab, brown_cluster, lm_corpora, perplexity, train_ngram
    from .lm import train_char_lstm, train_word_dcc, train_word_lstm
    from .pipeline import derive_seed
    corpus = _load_corpus(args.corpus)
    _corpus_seed_default(args, corpus)
    lmc = exp.lm
    texts = lm_corpora(corpus, lmc.get("n_general", 600), lmc.get("n_domain", 200), lmc.get("n_heldout", 100),
                       seed=derive_seed(exp.seed, "lm-text") % 2**31)
    vocab = Vocab.build([sorted(corpus.lexicon)])
    train_text = texts["general"] + texts["domain"] if args.text == "both" else texts[args.text]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "ngram":
        order = args.order or lmc.get("order", 3)
        model = train_ngram(train_text, order, lmc.get("discount", 0.7), vocab=vocab)
    else:
        schedule = LmSchedule(epochs=args.epochs or lmc.get("epochs", 4), seed=derive_seed(exp.seed, "lm-train"))
        cfg = NeuralLmConfig(arch=args.kind)
        if args.kind == "word_dcc":
            model, _ = train_word_dcc(texts["general"] if args.two_stage else train_text, cfg, schedule, vocab)
        else:
            classes = brown_cluster(texts["domain"], args.mtl_classes) if args.mtl_classes else None
            trainer = train_word_lstm if args.kind == "word_lstm" else train_char_lstm
            model, _ = trainer(texts["general"] if args.two_stage else train_text, cfg, schedule, classes, vocab)
        if args.two_stage:
            model.fit(texts["domain"], schedule)
    model.save(out)
    ppl = perplexity(model, texts["heldout"])
    print(f"{model.kind} LM saved to {out}; heldout perplexity {ppl:.3f}")
    return 0


def cmd_tune_interp(args, exp) -> int:
    from .lm import lm_corpora, mixture_perplexity, perplexity, tune_interpolation
    from .lm.interpolate import event_probs
    from .pipeline import derive_seed
    models = [_load_lm(p) for p in args.lm]
    if args.heldout:
        heldout = [ln.split() for ln in Path(args.heldout).read_text().splitlines() if ln.strip()]
    else:
        if not args.corpus:
            raise UsageError("give --heldout text or --corpus")
        corpus = _load_corpus(args.corpus)
        _corpus_seed_default(args, corpus)
        lmc = exp.lm
        heldout = lm_corpora(corpus, lmc.get("n_general", 600), lmc.get("n_domain", 200),
                             lmc.get("n_heldout", 100), seed=derive_seed(exp.seed, "lm-text") % 2**31)["heldout"]
    weights = tune_interpolation(models, heldout)
    weights.names = tuple(str(p) for p in args.lm)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    weights.save(out)
    P = event_probs(models, heldout)
    for name, m, w in zip(args.lm, models, weights.weights):
        print(f"{name}: weight {w:.4f} perplexity {perplexity(m, heldout):.3f}")
    print(f"mixture perplexity {mixture_perplexity(P, weights.weights):.3f} after "
          f"{len(weights.log_likelihoods) - 1} EM iterations")
    return 0


def cmd_rescore(args, exp) -> int:
    from .lm import InterpolationWeights, read_nbest, rescore_nbest, write_nbest
    from .scoring import write_trn
    models = [_load_lm(p) for p in args.lm]
    weights = InterpolationWeights.load(args.weights).weights if args.weights else \
        tuple([1.0 / len(models)] * len(models))
    lists = [rescore_nbest(nb, models, weights, args.acoustic_weight, args.insertion_penalty, args.lm_weight)
             for nb in read_nbest(args.nbest)]
    out = Path(args.out)
    _record(out, args, exp)
    write_nbest(lists, out / "rescored.nbest")
    write_trn({nb.utt_id: list(nb.best.words) for nb in lists}, out / "hyp.trn")
    print(f"rescored {len(lists)} n-best lists; 1-best in {out / 'hyp.trn'}")
    return 0


def _read_hyps(path):
    from .scoring import ctm_to_words, read_ctm, read_trn
    return ctm_to_words(read_ctm(path)) if str(path).endswith(".ctm") else read_trn(path)


def cmd_score(args, exp) -> int:
    from .scoring import error_tables, read_glm, read_trn, render_error_tables, score_corpus
    from .scoring.report import OVERALL
    glm = read_glm(args.glm) if args.glm else None
    report = score_corpus(read_trn(args.ref), _read_hyps(args.hyp), glm,
                          optional_hesitations=args.optional_hesitations)
    print(report.text(), end="")
    for line in report.summary_lines():
        print(line)
    print(f"WER {report.subsets[OVERALL].wer:.1f}%")
    if args.errors:
        print(render_error_tables(error_tables(list(report.alignments.values()))), end="")
    if args.json:
        Path(args.json).write_text(report.to_json() + "\n")
    return 0


def cmd_report(args, exp) -> int:
    from .scoring import read_glm, read_trn, score_corpus, wer_table
    from .scoring.report import OVERALL
    glm = read_glm(args.glm) if args.glm else None
    refs = read_trn(args.ref)
    reports = {}
    for spec in args.hyp:
        if "=" not in spec:
            raise UsageError(f"--hyp expects NAME=FILE, got {spec!r}")
        name, path = spec.split("=", 1)
        reports[name] = score_corpus(refs, _read_hyps(path), glm)
    columns = sorted({c for r in reports.values() for c in r.subsets if c != OVERALL}) + [OVERALL]
    print(wer_table(reports, columns), end="")
    return 0


def cmd_verify(args, exp) -> int:
    from .verify import run_checks
    results = run_checks(args.only or None)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed" + (f"; failed: {', '.join(failed)}"
                                                                         if failed else ""))
    return 1 if failed else 0


# -- parser -------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file whose settings override these flags")
    parser = argparse.ArgumentParser(prog="convasr", description="Synthetic conversational ASR experiments.")
    parser.add_argument("--version", action="version", version=f"convasr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate a synthetic corpus")
    p.add_argument("--seed", type=int, default=0, help="root seed (default 0)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--nbest", type=int, default=0, help="also write N-entry synthetic n-best lists for eval")

    for name, func, what in (("train-lstm", cmd_train_lstm, "train the BLSTM acoustic model"),
                             ("train-resnet", cmd_train_resnet, "train the windowed ResNet acoustic model")):
        p = add(name, func, what)
        p.add_argument("--corpus", required=True, help="corpus directory written by synth")
        p.add_argument("--seed", type=int, default=None, help="root seed (default: the corpus seed)")
        p.add_argument("--out", required=True, help="output directory")
        if name == "train-lstm":
            p.add_argument("--lam", type=float, default=None,
                           help="speaker-adversarial weight (default from config, 0.1)")

    p = add("dilate", cmd_dilate, "convert a windowed ResNet into its dense-prediction form")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output checkpoint path")

    p = add("decode", cmd_decode, "frame scores and Viterbi decoding for one corpus split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True, help="acoustic model checkpoint")
    p.add_argument("--split", choices=("train", "dev", "eval"), default="eval")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("fuse", cmd_fuse, "frame-level fusion of several systems' scores, then decoding")
    p.add_argument("--corpus", required=True)
    p.add_argument("--scores", nargs="+", required=True, help="score directories written by decode")
    p.add_argument("--weights", nargs="+", type=float, help="fixed fusion weights")
    p.add_argument("--tune-dev", nargs="+", help="dev score directories for weight tuning")
    p.add_argument("--pooling", choices=("log-linear", "linear"), default="log-linear")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = add("train-lm", cmd_train_lm, "train a language model on corpus-grammar text")
    p.add_argument("--corpus", required=True)
    p.add_argument("--kind", choices=("ngram", "word_lstm", "char_lstm", "word_dcc"), default="ngram")
    p.add_argument("--text", choices=("domain", "general", "both"), default="domain")
    p.add_argument("--two-stage", action="store_true", help="neural: train on general text, then domain")
    p.add_argument("--mtl-classes", type=int, default=0, help="Brown classes for the multi-task head")
    p.add_argument("--order", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output model path")

    p = add("tune-interp", cmd_tune_interp, "EM-tune linear interpolation weights on heldout text")
    p.add_argument("--lm", nargs="+", required=True)
    p.add_argument("--heldout", help="text file, one sentence per line")
    p.add_argument("--corpus", help="draw heldout text from this corpus instead")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="weights JSON")

    p = add("rescore", cmd_rescore, "rescore n-best lists with interpolated language models")
    p.add_argument("--nbest", required=True)
    p.add_argument("--lm", nargs="+", required=True)
    p.add_argument("--weights", help="weights JSON from tune-interp (default uniform)")
    p.add_argument("--acoustic-weight", type=float, default=1.0)
    p.add_argument("--lm-weight", type=float, default=1.0)
    p.add_argument("--insertion-penalty", type=float, default=0.0)
    p.add_argument("--out", required=True)

    p = add("score", cmd_score, "score hypotheses (TRN or CTM) against TRN references")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--glm", help="GLM mapping rules")
    p.add_argument("--optional-hesitations", action="store_true")
    p.add_argument("--errors", action="store_true", help="also print the top error tables")
    p.add_argument("--json", help="write the per-subset summary as JSON")

    p = add("report", cmd_report, "WER table for several systems")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", nargs="+", required=True, metavar="NAME=FILE")
    p.add_argument("--glm")

    p = add("verify", cmd_verify, "run the acceptance suite; nonzero exit on any failure")
    p.add_argument("--only", nargs="+", metavar="CHECK", help="run only these checks")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = _apply_config(args)
        if getattr(args, "corpus", None) and getattr(args, "seed", 0) is None:
            _corpus_seed_default(args, _load_corpus(args.corpus))
        exp = _experiment(args, overrides)
        return args.func(args, exp)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"convasr {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ConvAsrError, OSError, ValueError, KeyError) as exc:
        print(f"convasr {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
