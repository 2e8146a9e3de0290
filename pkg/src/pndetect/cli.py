"""Command-line entry point: ``pndetect <command> [--config FILE] [flags]``.

Commands run the pipeline stages against a working directory::

    simulate -> ingest -> label -> train / eval -> explain
                       \\-> stats

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 internal error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import explain as xp
from .config import ConfigError, PipelineConfig, dump_config, load_config
from .evaluation import cross_validate
from .features import build_vocab, class_weights, vectorize, vectorize_corpus, Vocabulary
from .ingestion import (
    IngestError,
    IngestResult,
    daily_counts,
    load_ohlcv_dir,
    parse_comments,
    parse_listings,
    parse_posts,
    parse_sector_map,
    sector_histogram,
    window_from_record,
    window_posts,
    window_to_record,
    write_comments,
    write_posts,
)
from .labeling import POST, AgreementLexicon, assemble_dataset, default_lexicon, read_dataset, write_dataset
from .market_events import classify_window, write_verdict_report
from .models import CheckpointError, TrainConfig, TrainingError, load_checkpoint, save_checkpoint, train
from .synth import generate_corpus, write_corpus
from .text_pipeline import Preprocessor, default_preprocessor, read_pair_list, read_word_list

log = logging.getLogger("pndetect")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers ----------------------------------------------------------------------

def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _open_w(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="\n")


def _require(cfg: PipelineConfig, *names: str) -> dict[str, Path]:
    out = {}
    for name in names:
        p = cfg.path(name)
        if p is None:
            raise UsageError(f"paths.{name} is not set (config file or --{name.replace('_', '-')})")
        if not p.exists():
            raise FileNotFoundError(f"{name} not found: {p}")
        out[name] = p
    return out


def _stage_file(cfg: PipelineConfig, stage: str, name: str) -> Path:
    p = cfg.workdir / stage / name
    if not p.exists():
        raise FileNotFoundError(f"missing {p}; run the '{stage}' command first")
    return p


def _read_inputs(cfg: PipelineConfig) -> IngestResult:
    paths = _require(cfg, "posts", "comments", "ohlcv_dir", "sector_map")
    if cfg.path("listings") is not None:
        paths.update(_require(cfg, "listings"))
    with open(paths["posts"], encoding="utf-8") as fh:
        posts = parse_posts(fh, source=str(paths["posts"]))
    with open(paths["comments"], encoding="utf-8") as fh:
        comments = parse_comments(fh, source=str(paths["comments"]))
    bars = load_ohlcv_dir(paths["ohlcv_dir"])
    with open(paths["sector_map"], encoding="utf-8", newline="") as fh:
        sector_map = parse_sector_map(fh, source=str(paths["sector_map"]))
    if "listings" in paths:
        with open(paths["listings"], encoding="utf-8") as fh:
            listings = parse_listings(fh)
    else:
        listings = set(sector_map.entries) | set(bars)
    return window_posts(posts, listings, bars, comments)


def _load_sector_map(cfg: PipelineConfig):
    p = _require(cfg, "sector_map")["sector_map"]
    with open(p, encoding="utf-8", newline="") as fh:
        return parse_sector_map(fh, source=str(p))


def _word_file(cfg: PipelineConfig, name: str) -> list[str] | None:
    if cfg.path(name) is None:
        return None
    return _require(cfg, name)[name].read_text(encoding="utf-8").splitlines()


def _text_tools(cfg: PipelineConfig) -> tuple[Preprocessor, AgreementLexicon]:
    """Preprocessor and lexicon, with any configured word lists swapped in."""
    pre = default_preprocessor()
    stop, contr, lem = (_word_file(cfg, n) for n in ("stopwords", "contractions", "lemmas"))
    if stop is not None or contr is not None or lem is not None:
        pre = Preprocessor(
            stopwords=frozenset(w.lower() for w in read_word_list(stop)) if stop is not None else pre.stopwords,
            contractions=read_pair_list(contr) if contr is not None else pre.contractions,
            lemmas=read_pair_list(lem) if lem is not None else pre.lemmas,
        )
    empath, custom = _word_file(cfg, "agreement_empath"), _word_file(cfg, "agreement_custom")
    if empath is None and custom is None and pre is default_preprocessor():
        return pre, default_lexicon()
    base = default_lexicon()
    lexicon = AgreementLexicon.from_terms(
        read_word_list(empath) if empath is not None else base.empath_terms,
        read_word_list(custom) if custom is not None else base.custom_terms,
        pre,
    )
    return pre, lexicon


def _select(docs, which: str):
    return [d for d in docs if which == "all" or d.kind == POST]


def _train_config(cfg: PipelineConfig, seed: int | None = None) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        learning_rate=t.learning_rate,
        epochs=t.epochs,
        batch_size=t.batch_size,
        seed=t.seed if seed is None else seed,
        l2=t.l2,
        hidden_sizes=tuple(cfg.model.hidden_sizes) if cfg.model.kind == "mlp" else (),
        optimizer=t.optimizer,
    )


def _labeled_matrix(cfg: PipelineConfig, vocab: Vocabulary | None = None):
    with open(_stage_file(cfg, "label", "dataset.jsonl"), encoding="utf-8") as fh:
        docs = _select(read_dataset(fh), cfg.eval.docs)
    if not docs:
        raise IngestError("labeled dataset is empty")
    if vocab is None:
        vocab = build_vocab((d.tokens.tokens for d in docs), cfg.features.min_count)
    X = vectorize_corpus((d.tokens.tokens for d in docs), vocab)
    y = np.array([int(d.label) for d in docs])
    return docs, vocab, X, y


# -- commands ---------------------------------------------------------------------

def cmd_ingest(cfg: PipelineConfig) -> int:
    res = _read_inputs(cfg)
    out = cfg.workdir / "ingest"
    with _open_w(out / "posts.jsonl") as fh:
        write_posts(res.posts, fh)
    with _open_w(out / "comments.jsonl") as fh:
        write_comments(res.comments, fh)
    with _open_w(out / "windows.jsonl") as fh:
        for post_id, win in res.windows.items():
            fh.write(json.dumps(window_to_record(win)) + "\n")
    with _open_w(out / "outcomes.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["post_id", "symbol", "outcome"])
        for p in res.posts:
            w.writerow([p.id, p.symbol or "", res.outcomes[p.id].value])
    stats = res.stats.as_dict()
    stats["config"] = cfg.digest()
    _write_json(out / "stats.json", stats)
    for k, v in res.stats.as_dict().items():
        print(f"{k:>28}: {v}")
    return EXIT_OK


def cmd_label(cfg: PipelineConfig) -> int:
    ing = cfg.workdir / "ingest"
    with open(_stage_file(cfg, "ingest", "posts.jsonl"), encoding="utf-8") as fh:
        posts = parse_posts(fh, source=str(ing / "posts.jsonl"))
    with open(_stage_file(cfg, "ingest", "comments.jsonl"), encoding="utf-8") as fh:
        comments = parse_comments(fh, source=str(ing / "comments.jsonl"))
    with open(_stage_file(cfg, "ingest", "windows.jsonl"), encoding="utf-8") as fh:
        windows = {}
        for line in fh:
            if line.strip():
                win = window_from_record(json.loads(line))
                windows[win.post_ref] = win
    sector_map = _load_sector_map(cfg)
    pre, lexicon = _text_tools(cfg)
    verdicts = {
        pid: classify_window(win, cfg.market.slope_threshold, cfg.market.sigma_multiplier)
        for pid, win in windows.items()
    }
    docs, report = assemble_dataset(posts, comments, verdicts, lexicon, sector_map, pre)
    out = cfg.workdir / "label"
    with _open_w(out / "verdicts.csv") as fh:
        write_verdict_report(windows, verdicts, fh)
    with _open_w(out / "dataset.jsonl") as fh:
        write_dataset(docs, fh)
    table = report.format_table()
    with _open_w(out / "class_distribution.txt") as fh:
        fh.write(table + "\n")
    _write_json(out / "class_distribution.json", report.as_dict())
    print(table)
    return EXIT_OK


def cmd_train(cfg: PipelineConfig) -> int:
    docs, vocab, X, y = _labeled_matrix(cfg)
    tcfg = _train_config(cfg)
    if cfg.train.balance_classes:
        tcfg = replace(tcfg, class_weights=class_weights(y))
    model = train(cfg.model.kind, X, y, tcfg)
    out = cfg.workdir / "train"
    out.mkdir(parents=True, exist_ok=True)
    with _open_w(out / "vocab.tsv") as fh:
        vocab.write(fh)
    save_checkpoint(out / "model.npz", model, tcfg, vocab)
    _write_json(out / "summary.json", {
        "config": cfg.digest(),
        "model": cfg.model.kind,
        "docs": cfg.eval.docs,
        "n_docs": len(docs),
        "vocab_size": vocab.size,
        "final_loss": round(float(model.history[-1]), 10),
    })
    print(f"trained {cfg.model.kind} on {len(docs)} documents, vocabulary {vocab.size}, "
          f"final loss {model.history[-1]:.6f}")
    return EXIT_OK


def cmd_eval(cfg: PipelineConfig) -> int:
    docs, vocab, X, y = _labeled_matrix(cfg)
    name = f"{cfg.model.kind.upper()} {'Posts' if cfg.eval.docs == 'posts' else 'Posts and Comments'}"
    report = cross_validate(
        X, y, cfg.model.kind, _train_config(cfg), k=cfg.eval.k, seed=cfg.eval.seed,
        balance=cfg.train.balance_classes, weighting=cfg.features.weighting,
        threads=cfg.threads, name=name,
    )
    out = cfg.workdir / "eval"
    text = f"config {cfg.digest()}  k={cfg.eval.k}  docs={cfg.eval.docs}  n={len(docs)}\n\n"
    text += report.format_table()
    with _open_w(out / "report.txt") as fh:
        fh.write(text + "\n")
    with _open_w(out / "report.csv") as fh:
        report.write_csv(fh)
    print(text)
    return EXIT_OK


def cmd_explain(cfg: PipelineConfig, checkpoint: Path | None = None) -> int:
    tdir = cfg.workdir / "train"
    with open(_stage_file(cfg, "train", "vocab.tsv"), encoding="utf-8") as fh:
        vocab = Vocabulary.read(fh, cfg.features.min_count)
    ckpt = checkpoint or tdir / "model.npz"
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    model, _ = load_checkpoint(ckpt, vocab)
    docs, _, X, y = _labeled_matrix(cfg, vocab)
    e = cfg.explain
    background = xp.background_sample(X, y, e.background_size, e.seed)
    rows = xp.stratified_indices(y, e.instances, e.seed + 1).tolist()
    terms = vocab.terms
    instances = [vectorize(docs[i].tokens.tokens, vocab) for i in rows]
    out = cfg.workdir / "explain"
    attrs = []
    for i, x in zip(rows, instances):
        attr = xp.shapley_attribute(model, x, background, e.samples, xp.instance_seed(e.seed, x), e.output)
        attrs.append(attr)
        with _open_w(out / "attributions" / f"{docs[i].id}.csv") as fh:
            xp.write_attribution(attr, terms, fh)
    ranking = xp.rank_attributions(attrs, terms, e.top_n)
    with _open_w(out / "ranking.csv") as fh:
        xp.write_ranking(ranking, fh)
    print(f"explained {len(instances)} documents; top terms:")
    for rank, (term, v) in enumerate(ranking, start=1):
        print(f"{rank:>3}. {term:<28} {v:.6f}")
    return EXIT_OK


def cmd_simulate(cfg: PipelineConfig, out: Path, n_posts: int, pnd_fraction: float,
                 comments_per_post: float, skip_fraction: float, seed: int) -> int:
    corpus = generate_corpus(
        n_posts, pnd_fraction, default_lexicon(), seed=seed,
        comments_per_post=comments_per_post, skip_fraction=skip_fraction,
        slope_threshold=cfg.market.slope_threshold,
    )
    paths = write_corpus(corpus, out)
    sim_cfg = PipelineConfig()
    sim_cfg.paths.posts = paths["posts"].name
    sim_cfg.paths.comments = paths["comments"].name
    sim_cfg.paths.ohlcv_dir = paths["ohlcv_dir"].name
    sim_cfg.paths.sector_map = paths["sector_map"].name
    sim_cfg.paths.listings = paths["listings"].name
    sim_cfg.market = cfg.market
    with _open_w(Path(out) / "config.yaml") as fh:
        fh.write(dump_config(sim_cfg))
    counts = corpus.truth.class_counts()
    print(f"wrote {len(corpus.posts)} posts, {len(corpus.comments)} comments, "
          f"{len(corpus.bars)} OHLCV files to {out}")
    print(f"ground truth P&D: {counts['posts']['pnd']} posts, {counts['comments']['pnd']} comments")
    return EXIT_OK


def cmd_stats(cfg: PipelineConfig) -> int:
    res = _read_inputs(cfg)
    sector_map = _load_sector_map(cfg)
    hist = sector_histogram(res.posts, sector_map)
    daily = daily_counts(res.posts, res.comments)
    out = cfg.workdir / "stats"
    with _open_w(out / "sectors.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sector", "posts"])
        for sector, n in sorted(hist.items(), key=lambda e: (-e[1], e[0])):
            w.writerow([sector, n])
    with _open_w(out / "daily.csv") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "posts", "comments"])
        for day, (p, c) in daily.items():
            w.writerow([day.isoformat(), p, c])
    top = max(hist.values(), default=0)
    print("posts per sector:")
    for sector, n in sorted(hist.items(), key=lambda e: (-e[1], e[0])):
        bar = "#" * max(1, round(40 * n / top)) if top else ""
        print(f"  {sector:<24} {n:>7}  {bar}")
    print(f"{len(daily)} active days")
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("common options")
    g.add_argument("--config", type=Path, help="pipeline config file (YAML); flags override it")
    g.add_argument("--workdir", help="working directory for stage outputs (default: work)")
    g.add_argument("--threads", type=int, help="cap on worker threads (default: 1)")
    g.add_argument("--seed", type=int, help="seed for training, fold splits, sampling and simulation (default: 0)")
    g.add_argument("--slope-threshold", type=float,
                   help="maximum normalized rising slope for a P&D shape (default: 0.18)")
    g.add_argument("--sigma-multiplier", type=float,
                   help="anomaly threshold in baseline standard deviations (default: 2.0)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _input_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("inputs")
    g.add_argument("--posts", help="posts file, JSON Lines")
    g.add_argument("--comments", help="comments file, JSON Lines")
    g.add_argument("--ohlcv-dir", help="directory of <SYMBOL>.csv daily bars")
    g.add_argument("--sector-map", help="symbol,sector CSV")
    g.add_argument("--listings", help="known tickers, one per line (default: sector map and OHLCV symbols)")


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--model", choices=["mlp", "logreg"], help="classifier (default: mlp)")
    g.add_argument("--hidden", help="comma-separated MLP hidden layer sizes (default: 64)")
    g.add_argument("--epochs", type=int, help="training epochs (default: 10)")
    g.add_argument("--learning-rate", type=float, help="step size (default: 0.01)")
    g.add_argument("--batch-size", type=int, help="mini-batch size (default: 64)")
    g.add_argument("--l2", type=float, help="L2 penalty on weights (default: 1e-05)")
    g.add_argument("--docs", choices=["posts", "all"], help="train/evaluate on posts only or posts and comments (default: all)")
    g.add_argument("--min-count", type=int, help="minimum corpus frequency for a vocabulary term (default: 1)")
    g.add_argument("--weighting", choices=["count", "tfidf"], help="feature weighting (default: count)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pndetect", description=__doc__.split("\n")[0],
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse inputs, resolve tickers and build event windows")
    _common(p)
    _input_flags(p)

    p = sub.add_parser("label", help="classify market windows and label posts and comments")
    _common(p)
    p.add_argument("--sector-map", help="symbol,sector CSV")
    g = p.add_argument_group("word lists (default: bundled lists)")
    g.add_argument("--stopwords", help="stopword list, one word per line")
    g.add_argument("--contractions", help="contraction table, form<TAB>expansion")
    g.add_argument("--lemmas", help="lemma table, form<TAB>lemma")
    g.add_argument("--agreement-empath", help="agreement terms, first list")
    g.add_argument("--agreement-custom", help="agreement terms, second list")

    p = sub.add_parser("train", help="train a classifier on the labeled dataset")
    _common(p)
    _model_flags(p)

    p = sub.add_parser("eval", help="stratified k-fold cross-validation report")
    _common(p)
    _model_flags(p)
    p.add_argument("--k", type=int, help="number of folds (default: 5)")

    p = sub.add_parser("explain", help="Shapley attributions and word impact ranking")
    _common(p)
    p.add_argument("--checkpoint", type=Path, help="model checkpoint (default: <workdir>/train/model.npz)")
    p.add_argument("--docs", choices=["posts", "all"], help="documents to explain (default: all)")
    p.add_argument("--samples", type=int, help="permutation samples per document (default: 200)")
    p.add_argument("--instances", type=int, help="documents to explain (default: 50)")
    p.add_argument("--background-size", type=int, help="background documents (default: 100)")
    p.add_argument("--top-n", type=int, help="ranking length (default: 30)")
    p.add_argument("--output", choices=["probability", "logit"], help="model output explained (default: probability)")

    p = sub.add_parser("simulate", help="write a synthetic corpus with known labels")
    _common(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--n-posts", type=int, default=5000, help="number of posts (default: 5000)")
    p.add_argument("--pnd-fraction", type=float, default=0.09, help="share of P&D posts (default: 0.09)")
    p.add_argument("--comments-per-post", type=float, default=3.0, help="mean comments per post (default: 3.0)")
    p.add_argument("--skip-fraction", type=float, default=0.1,
                   help="share of posts without a usable window (default: 0.1)")

    p = sub.add_parser("stats", help="sector histogram and daily submission counts")
    _common(p)
    _input_flags(p)
    return parser


OVERRIDES = {
    "workdir": "paths.workdir",
    "threads": "threads",
    "slope_threshold": "market.slope_threshold",
    "sigma_multiplier": "market.sigma_multiplier",
    "posts": "paths.posts",
    "comments": "paths.comments",
    "ohlcv_dir": "paths.ohlcv_dir",
    "sector_map": "paths.sector_map",
    "listings": "paths.listings",
    "stopwords": "paths.stopwords",
    "contractions": "paths.contractions",
    "lemmas": "paths.lemmas",
    "agreement_empath": "paths.agreement_empath",
    "agreement_custom": "paths.agreement_custom",
    "model": "model.kind",
    "epochs": "train.epochs",
    "learning_rate": "train.learning_rate",
    "batch_size": "train.batch_size",
    "l2": "train.l2",
    "docs": "eval.docs",
    "min_count": "features.min_count",
    "weighting": "features.weighting",
    "k": "eval.k",
    "samples": "explain.samples",
    "instances": "explain.instances",
    "background_size": "explain.background_size",
    "top_n": "explain.top_n",
    "output": "explain.output",
}


def _config_from_args(args) -> PipelineConfig:
    overrides = {}
    for attr, dotted in OVERRIDES.items():
        value = getattr(args, attr, None)
        if value is not None:
            # path flags are relative to the current directory, not the config file
            if dotted.startswith("paths."):
                value = str(Path(value).resolve())
            overrides[dotted] = value
    if getattr(args, "hidden", None):
        try:
            overrides["model.hidden_sizes"] = [int(h) for h in args.hidden.split(",") if h.strip()]
        except ValueError:
            raise ConfigError(f"--hidden must be comma-separated integers, got {args.hidden!r}") from None
    if args.seed is not None:
        for dotted in ("train.seed", "eval.seed", "explain.seed"):
            overrides[dotted] = args.seed
    return load_config(args.config, overrides)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    stage = args.command
    try:
        cfg = _config_from_args(args)
        commands: dict[str, Callable[[], int]] = {
            "ingest": lambda: cmd_ingest(cfg),
            "label": lambda: cmd_label(cfg),
            "train": lambda: cmd_train(cfg),
            "eval": lambda: cmd_eval(cfg),
            "explain": lambda: cmd_explain(cfg, args.checkpoint),
            "simulate": lambda: cmd_simulate(cfg, args.out, args.n_posts, args.pnd_fraction,
                                             args.comments_per_post, args.skip_fraction,
                                             args.seed if args.seed is not None else 0),
            "stats": lambda: cmd_stats(cfg),
        }
        return commands[stage]()
    except (UsageError, ConfigError) as exc:
        print(f"pndetect: [{stage}] usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IngestError, CheckpointError) as exc:
        print(f"pndetect: [{stage}] data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"pndetect: [{stage}] training failed: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        log.debug("internal error", exc_info=True)
        print(f"pndetect: [{stage}] internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
