"""Command-line entry point: ``masksum <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Summaries go to standard output, one per line; reports, checkpoints and
logs go to files under ``--out``; diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import numerics as nx
from .agent import ActorCritic
from .corpus import CorpusError, Example, SyntheticSpec, generate_synthetic, load_jsonl, stats, write_jsonl
from .pipeline import (RunConfig, desk_config, evaluate, gradcheck, make_vocab, summarize, train_rl,
                       train_supervised)
from .rouge import corpus_eval
from .textrank import EmbeddingTable, extract_summary
from .tokenizer import Vocab
from .transformer import Transformer

log = logging.getLogger("masksum")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SPLITS = ("train", "val", "test")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="masksum", description="Summarization with a learned attention-mask policy.",
                     formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text, formatter_class=fmt)
        p.add_argument("--config", metavar="PATH", default=None, help="key=value run config file")
        p.add_argument("--preset", choices=("default", "desk"), default="default",
                       help="base settings before --config and flags are applied")
        p.add_argument("--seed", type=int, default=None, help="random seed (overrides the config)")
        p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
        return p

    p = command("build-vocab", "Build a vocabulary from a corpus.")
    p.add_argument("--corpus", required=True, metavar="PATH", help="JSONL file or split directory")
    p.add_argument("--out", required=True, metavar="DIR", help="output directory for vocab.txt")

    p = command("gen-synthetic", "Generate the synthetic salient/noise corpus.")
    p.add_argument("--out", required=True, metavar="DIR", help="writes train/val/test.jsonl here")
    p.add_argument("--num-examples", type=int, default=SyntheticSpec.num_examples)
    p.add_argument("--vocab-size", type=int, default=SyntheticSpec.vocab_size)
    p.add_argument("--noise-rate", type=float, default=SyntheticSpec.noise_rate)
    p.add_argument("--no-paraphrase", action="store_true", help="copy salient sentences verbatim")

    p = command("stats", "Corpus statistics.")
    p.add_argument("--corpus", required=True, metavar="PATH", help="JSONL file or split directory")
    p.add_argument("--vocab", metavar="PATH", default=None, help="vocab.txt for coverage")
    p.add_argument("--out", metavar="DIR", default=None, help="also write stats.txt here")

    p = command("train-supervised", "Teacher-forced training of the summarizer.")
    p.add_argument("--corpus", required=True, metavar="PATH", help="split directory or training JSONL")
    p.add_argument("--out", required=True, metavar="DIR", help="checkpoint and log directory")

    p = command("train-rl", "Actor-critic mask training on top of a supervised checkpoint.")
    p.add_argument("--corpus", required=True, metavar="PATH", help="split directory or training JSONL")
    p.add_argument("--checkpoint", required=True, metavar="PATH", help="supervised run directory or model.ckpt")
    p.add_argument("--out", required=True, metavar="DIR", help="checkpoint and log directory")
    p.add_argument("--reward-weights", metavar="W1,W2,WL", default=None,
                   help="ROUGE-1/2/L reward weights (config default 0.4,0.3,0.3)")
    p.add_argument("--joint-finetune", type=_bool, metavar="BOOL", default=None,
                   help="also train the model under the sampled mask (config default true)")

    p = command("summarize", "Summarize documents, one output line per document.")
    p.add_argument("--input", required=True, metavar="PATH", help="one document per line, or JSONL")
    p.add_argument("--checkpoint", required=True, metavar="PATH", help="run directory or model checkpoint")
    p.add_argument("--agent", metavar="PATH", default=None,
                   help="agent checkpoint (default: agent.ckpt next to the model, if present)")
    p.add_argument("--no-agent", action="store_true", help="decode without the mask policy")

    p = command("evaluate", "Score oracle, TextRank, model and model+agent on the test split.")
    p.add_argument("--corpus", required=True, metavar="PATH", help="split directory or test JSONL")
    p.add_argument("--checkpoint", metavar="PATH", default=None, help="run directory or model checkpoint")
    p.add_argument("--agent", metavar="PATH", default=None, help="agent checkpoint")
    p.add_argument("--out", required=True, metavar="DIR", help="report directory")
    p.add_argument("--reward-weights", metavar="W1,W2,WL", default=None)
    p.add_argument("--k", type=int, default=None, help="TextRank sentences (config default 3)")
    _embedding_flags(p)

    p = command("baseline-textrank", "Extractive TextRank summaries, one per line.")
    p.add_argument("--corpus", required=True, metavar="PATH", help="JSONL file, split directory or text file")
    p.add_argument("--k", type=int, default=None, help="sentences per summary (config default 3)")
    p.add_argument("--out", metavar="DIR", default=None, help="also write a results file")
    p.add_argument("--reward-weights", metavar="W1,W2,WL", default=None)
    _embedding_flags(p)

    p = command("gradcheck", "Finite-difference check of the model and agent gradients.")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--out", metavar="DIR", default=None, help="also write gradcheck.txt here")
    return parser


def _embedding_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group()
    group.add_argument("--embeddings", metavar="PATH", default=None, help="word vector text file")
    group.add_argument("--hash-embeddings", action="store_true",
                       help="hash-seeded random word vectors (used when no file is configured)")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def resolve_config(args) -> RunConfig:
    base = desk_config() if args.preset == "desk" else RunConfig()
    try:
        config = RunConfig.load(args.config, base) if args.config else base
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        if getattr(args, "reward_weights", None) is not None:
            overrides["reward_weights"] = args.reward_weights
        if getattr(args, "joint_finetune", None) is not None:
            overrides["joint_finetune"] = str(args.joint_finetune)
        if getattr(args, "k", None) is not None:
            overrides["textrank_k"] = str(args.k)
        if getattr(args, "embeddings", None):
            overrides["embeddings"] = args.embeddings
        if getattr(args, "hash_embeddings", False):
            overrides["embeddings"] = ""
        return RunConfig.from_mapping(overrides, config)
    except FileNotFoundError:
        raise
    except (KeyError, ValueError) as exc:
        raise UsageError(f"bad configuration: {exc}") from exc


def load_splits(path) -> dict[str, list[Example]]:
    """A directory with ``{train,val,test}.jsonl`` or a single JSONL file (returned as every split)."""
    path = Path(path)
    if path.is_dir():
        found = {s: load_jsonl(path / f"{s}.jsonl") for s in SPLITS if (path / f"{s}.jsonl").exists()}
        if not found:
            raise DataError(f"{path}: no train/val/test.jsonl files")
        return found
    examples = load_jsonl(path)
    return {s: examples for s in SPLITS}


def _split(splits: dict[str, list[Example]], name: str, path) -> list[Example]:
    if name not in splits:
        raise DataError(f"{path}: missing {name}.jsonl")
    return splits[name]


def locate_checkpoint(path, prefer_rl: bool = True) -> tuple[Path, Path]:
    """(model checkpoint, vocab file) from a run directory or a checkpoint path."""
    path = Path(path)
    if path.is_dir():
        names = ("model_rl.ckpt", "model.ckpt") if prefer_rl else ("model.ckpt", "model_rl.ckpt")
        ckpt = next((path / n for n in names if (path / n).exists()), None)
        if ckpt is None:
            raise FileNotFoundError(f"no model checkpoint in {path}")
    else:
        ckpt = path
        if not ckpt.exists():
            raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    vocab = ckpt.parent / "vocab.txt"
    if not vocab.exists():
        raise FileNotFoundError(f"vocab not found next to checkpoint: {vocab}")
    return ckpt, vocab


def load_model(path, prefer_rl: bool = True) -> tuple[Transformer, Vocab, Path]:
    ckpt, vocab_path = locate_checkpoint(path, prefer_rl)
    try:
        model = Transformer.load(ckpt)
    except (ValueError, KeyError, OSError) as exc:
        raise DataError(f"cannot read checkpoint {ckpt}: {exc}") from exc
    return model, Vocab.load(vocab_path), ckpt


def load_agent(explicit, ckpt: Path | None, disabled: bool = False) -> ActorCritic | None:
    if disabled:
        return None
    if explicit:
        if not Path(explicit).exists():
            raise FileNotFoundError(f"agent checkpoint not found: {explicit}")
        return ActorCritic.load(explicit)
    if ckpt is not None and (ckpt.parent / "agent.ckpt").exists():
        return ActorCritic.load(ckpt.parent / "agent.ckpt")
    return None


def read_documents(path) -> list[str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    if path.suffix == ".jsonl":
        return [e.article for e in load_jsonl(path)]
    return path.read_text(encoding="utf-8").splitlines()


def _embeddings(config: RunConfig) -> EmbeddingTable:
    if config.embeddings:
        if not Path(config.embeddings).exists():
            raise FileNotFoundError(f"embedding file not found: {config.embeddings}")
        return EmbeddingTable.load(config.embeddings)
    return EmbeddingTable.hash_embeddings()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_build_vocab(args, config: RunConfig) -> int:
    splits = load_splits(args.corpus)
    vocab = make_vocab(config, _split(splits, "train", args.corpus))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    log.info("wrote %s (%d tokens)", out / "vocab.txt", len(vocab))
    return EXIT_OK


def cmd_gen_synthetic(args, config: RunConfig) -> int:
    spec = SyntheticSpec(vocab_size=args.vocab_size, num_examples=args.num_examples,
                         noise_rate=args.noise_rate, paraphrase=not args.no_paraphrase, seed=config.seed)
    try:
        splits = generate_synthetic(spec)
    except CorpusError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, examples in zip(SPLITS, splits):
        write_jsonl(out / f"{name}.jsonl", examples)
    log.info("wrote %d/%d/%d examples to %s", *(len(s) for s in splits), out)
    return EXIT_OK


def cmd_stats(args, config: RunConfig) -> int:
    splits = load_splits(args.corpus)
    vocab = Vocab.load(args.vocab) if args.vocab else None
    path = Path(args.corpus)
    names = SPLITS if path.is_dir() else ("train",)
    lines = []
    for name in names:
        if name in splits:
            lines += [f"[{name}]"] + stats(splits[name], vocab).lines()
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "stats.txt").write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_train_supervised(args, config: RunConfig) -> int:
    splits = load_splits(args.corpus)
    train = _split(splits, "train", args.corpus)
    val = splits.get("val", [])
    _, _, report = train_supervised(config, train, val, out_dir=args.out)
    best = report.evals[report.best_epoch][1] if report.evals else float("nan")
    log.info("best epoch %d, val rouge1 F1 %.4f", report.best_epoch, best)
    return EXIT_OK


def cmd_train_rl(args, config: RunConfig) -> int:
    splits = load_splits(args.corpus)
    model, vocab, _ = load_model(args.checkpoint, prefer_rl=False)
    _, _, report = train_rl(config, _split(splits, "train", args.corpus), splits.get("val", []), model, vocab,
                            out_dir=args.out)
    for key in ("supervised_val_reward", "final_val_reward"):
        if key in report.extra:
            log.info("%s %.4f", key, report.extra[key])
    return EXIT_OK


def cmd_summarize(args, config: RunConfig) -> int:
    model, vocab, ckpt = load_model(args.checkpoint)
    agent = load_agent(args.agent, ckpt, args.no_agent)
    for doc in read_documents(args.input):
        sys.stdout.write(summarize(model, vocab, doc, config, agent) + "\n")
    return EXIT_OK


def cmd_evaluate(args, config: RunConfig) -> int:
    splits = load_splits(args.corpus)
    test = _split(splits, "test", args.corpus)
    model = vocab = agent = None
    if args.checkpoint:
        model, vocab, ckpt = load_model(args.checkpoint)
        agent = load_agent(args.agent, ckpt)
    report = evaluate(test, config, model, vocab, agent, emb=_embeddings(config), out_dir=args.out)
    sys.stdout.write(report.table())
    return EXIT_OK


def cmd_baseline_textrank(args, config: RunConfig) -> int:
    path = Path(args.corpus)
    if path.is_dir() or path.suffix == ".jsonl":
        splits = load_splits(path)
        examples = _split(splits, "test", path)
    else:
        examples = [Example(str(i), doc, "") for i, doc in enumerate(read_documents(path))]
    emb = _embeddings(config)
    summaries = [extract_summary(e.article, config.textrank_k, emb, config.damping) for e in examples]
    for s in summaries:
        sys.stdout.write(s + "\n")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        corpus_eval(list(zip(summaries, (e.summary for e in examples))), config.weights).write(
            out / "results_baseline.txt")
    return EXIT_OK


def cmd_gradcheck(args, config: RunConfig) -> int:
    report = gradcheck(config, tolerance=args.tolerance)
    text = "\n".join(report.lines()) + "\n"
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.txt").write_text(text, encoding="utf-8")
    if not report.passed:
        log.error("gradient check failed: %s", ", ".join(report.failures))
        return EXIT_NUMERIC
    return EXIT_OK


COMMANDS = {
    "build-vocab": cmd_build_vocab,
    "gen-synthetic": cmd_gen_synthetic,
    "stats": cmd_stats,
    "train-supervised": cmd_train_supervised,
    "train-rl": cmd_train_rl,
    "summarize": cmd_summarize,
    "evaluate": cmd_evaluate,
    "baseline-textrank": cmd_baseline_textrank,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        config = resolve_config(args)
        log.info("command %s seed %d", args.command, config.seed)
        return COMMANDS[args.command](args, config)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except (CorpusError, DataError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except nx.NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except ValueError as exc:
        # remaining value errors come from inconsistent inputs (e.g. vocab/model mismatch)
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
