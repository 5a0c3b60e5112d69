"""Command-line entry point: ``barcodemlm <command> [options]``.

Exit codes: 0 ok, 1 user error (bad config, missing file, invalid data),
2 internal error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import numpy as np

from barcodemlm import __version__
from barcodemlm.config import RunConfig, read_config_file, stage_seed
from barcodemlm.corpus import (
    BarcodeRecord,
    ConfigError,
    make_taxonomic_splits,
    make_zsl_splits,
    parse_fasta,
    parse_records,
    preprocess,
    write_records,
)

logger = logging.getLogger("barcodemlm")

OUT_ENV = "BARCODEMLM_OUT"
COMMANDS = ("preprocess", "split", "pretrain", "finetune", "embed", "probe", "zsl", "report", "synth")


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def _read_corpus(path: str | Path, column_map: dict | None = None) -> list[BarcodeRecord]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    with open(path, encoding="utf-8") as fh:
        if path.suffix.lower() in (".fa", ".fasta", ".fas", ".fna"):
            records, report = parse_fasta(fh)
        else:
            records, report = parse_records(fh, column_map)
    if report.errors:
        logger.warning("%s: skipped %d malformed rows", path, len(report.errors))
    return records


def _write_text(path: Path, lines: Sequence[str]) -> Path:
    path.write_text("".join(f"{line}\n" for line in lines))
    return path


def _out_dir(args) -> Path:
    root = args.out or os.path.join(os.environ.get(OUT_ENV, "runs"), args.command)
    out = Path(root)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _labels(records: Sequence[BarcodeRecord], rank: str) -> list[str]:
    missing = [r.record_id for r in records if not r.rank(rank)]
    if missing:
        raise ValueError(f"{len(missing)} records lack a {rank} label (e.g. {missing[:3]})")
    return [r.rank(rank) for r in records]


# ---------------------------------------------------------------------------
# commands


def cmd_preprocess(args, out: Path, seed: int) -> dict:
    columns = dict(item.split("=", 1) for item in args.column or [])
    records = _read_corpus(args.input, columns)
    survivors, report = preprocess(records, args.min_len, args.max_n_frac)
    with open(out / "cleaned.tsv", "w", encoding="utf-8") as fh:
        write_records(survivors, fh)
    _write_text(out / "cleaning_report.txt", [f"{k}={v}" for k, v in report.as_dict().items()])
    return {"input": args.input, "min_len": args.min_len, "max_n_frac": args.max_n_frac, "columns": columns}


def cmd_split(args, out: Path, seed: int) -> dict:
    records = _read_corpus(args.input)
    by_id = {r.record_id: r for r in records}
    if args.kind == "taxonomic":
        if args.n_genera is None:
            raise UsageError("split --kind taxonomic requires --n-genera")
        spec = make_taxonomic_splits(
            records, args.n_genera, args.per_genus_min, args.per_genus_max, args.unseen_cap, seed=seed
        )
    else:
        spec = make_zsl_splits(records, seed=seed)
    with open(out / "splits.tsv", "w") as fh:
        spec.write(fh)
    for name, ids in spec.assignments().items():
        with open(out / f"{name}.tsv", "w", encoding="utf-8") as fh:
            write_records([by_id[i] for i in ids], fh)
    return {"input": args.input, "kind": args.kind, **spec.parameters}


def cmd_pretrain(args, out: Path, seed: int) -> dict:
    from barcodemlm.models import EncoderConfig, PretrainSpec, run_mlm_pretraining
    from barcodemlm.plotting import plot_training_curve
    from barcodemlm.tokenizer import build_vocab, tokenize

    records = _read_corpus(args.input)
    vocab = build_vocab(args.k)
    overrides = {} if args.dropout is None else {"dropout": args.dropout}
    config = EncoderConfig.preset(args.preset, args.k, **overrides)
    corpus = [t[: config.max_len] for t in (tokenize(r.sequence, vocab, args.mode) for r in records) if t]
    if not corpus:
        raise ValueError("no record produced any tokens")
    spec = PretrainSpec(
        epochs=args.epochs, batch_size=args.batch_size, lr0=args.lr, mask_ratio=args.mask_ratio, seed=seed
    )
    model, history = run_mlm_pretraining(corpus, vocab, config, spec, checkpoint_dir=out)
    with open(out / "vocab.txt", "w") as fh:
        vocab.save(fh)
    with open(out / "pretrain_curve.csv", "w") as fh:
        history.write_csv(fh)
    plot_training_curve(
        [r.step for r in history.records], [r.loss for r in history.records],
        out / "pretrain_loss.png", history.epoch_loss,
    )
    return {"input": args.input, "mode": args.mode, "preset": args.preset, **config.to_dict(),
            **{f"train.{k}": v for k, v in spec.__dict__.items()}}


def _classifier_inputs(model_kind: str, records, vocab, mode, max_len, input_len=660):
    from barcodemlm.tokenizer import encode_batch, one_hot_batch

    if model_kind == "cnn":
        return one_hot_batch([r.sequence for r in records], input_len)
    return encode_batch([r.sequence for r in records], vocab, mode, max_len)


def cmd_finetune(args, out: Path, seed: int) -> dict:
    from barcodemlm.evaluation import fine_tuned_eval
    from barcodemlm.models import (
        BarcodeCNN, BarcodeEncoder, CNNConfig, EncoderConfig, SequenceClassifier, SupervisedSpec,
        load_model, run_supervised_training, save_model,
    )
    from barcodemlm.models.encoder import MaskedLM
    from barcodemlm.plotting import plot_training_curve
    from barcodemlm.tokenizer import build_vocab

    train = _read_corpus(args.input)
    val = _read_corpus(args.val) if args.val else []
    names = sorted(set(_labels(train, args.rank)))
    index = {n: i for i, n in enumerate(names)}
    val = [r for r in val if r.rank(args.rank) in index]
    y_train = np.array([index[l] for l in _labels(train, args.rank)])
    y_val = np.array([index[l] for l in _labels(val, args.rank)])

    vocab = None
    if args.model == "cnn":
        model = BarcodeCNN(CNNConfig(n_classes=len(names), input_len=args.input_len), seed=seed)
        max_len = None
    else:
        if args.checkpoint:
            loaded, _ = load_model(args.checkpoint)
            encoder = loaded.encoder if isinstance(loaded, MaskedLM) else loaded
            if not isinstance(encoder, BarcodeEncoder):
                raise UsageError(f"{args.checkpoint} does not hold a transformer encoder")
        else:
            encoder = BarcodeEncoder(EncoderConfig.preset(args.preset, args.k), seed=seed)
        model = SequenceClassifier(encoder, len(names), seed=seed + 1)
        vocab = build_vocab(encoder.config.k)
        max_len = encoder.config.max_len
    kind = "cnn" if args.model == "cnn" else "transformer"
    overrides = {k: v for k, v in dict(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, optimizer=args.optimizer,
        momentum=args.momentum, schedule=args.schedule, freeze_encoder=args.freeze_encoder,
    ).items() if v is not None}
    spec = SupervisedSpec.for_kind(kind, seed=seed, **overrides)
    x_train = _classifier_inputs(args.model, train, vocab, args.mode, max_len, args.input_len)
    x_val = _classifier_inputs(args.model, val, vocab, args.mode, max_len, args.input_len) if val else None
    model, history = run_supervised_training(model, x_train, y_train, spec, x_val, y_val)
    save_model(out / "classifier.ckpt", model, labels=names)
    with open(out / "finetune_metrics.csv", "w") as fh:
        history.write_csv(fh)
    plot_training_curve(
        [r.epoch for r in history.records], [r.loss for r in history.records],
        out / "finetune_loss.png", title="Supervised loss",
    )
    if args.test:
        test = [r for r in _read_corpus(args.test)]
        x_test = _classifier_inputs(args.model, test, vocab, args.mode, max_len, args.input_len)
        report = fine_tuned_eval(model, x_test, _labels(test, args.rank), names, args.rank)
        report.config = {"model": args.model, "best_epoch": history.best_epoch}
        with open(out / "eval_fine_tuned.txt", "w") as fh:
            report.write(fh)
        with open(out / "eval_fine_tuned_per_class.csv", "w") as fh:
            report.write_per_class(fh)
    return {"input": args.input, "val": args.val, "test": args.test, "model": args.model,
            "checkpoint": args.checkpoint, "rank": args.rank, **spec.to_dict()}


def cmd_embed(args, out: Path, seed: int) -> dict:
    import torch

    from barcodemlm.evaluation import EmbeddingMatrix, extract_embeddings
    from barcodemlm.models import BarcodeCNN, SequenceClassifier, load_model
    from barcodemlm.models.encoder import MaskedLM
    from barcodemlm.tokenizer import build_vocab, one_hot_batch

    if not args.checkpoint:
        raise UsageError("embed requires --checkpoint")
    records = _read_corpus(args.input)
    ranks = [r for r in args.ranks.split(",") if r]
    model, _ = load_model(args.checkpoint)
    if isinstance(model, BarcodeCNN):
        with torch.no_grad():
            x = torch.as_tensor(one_hot_batch([r.sequence for r in records], model.config.input_len))
            vectors = model.embed(x.to(next(model.parameters()).dtype)).double().numpy()
        emb = EmbeddingMatrix(vectors, [r.record_id for r in records],
                              {rank: [r.rank(rank) for r in records] for rank in ranks})
    else:
        encoder = model.encoder if isinstance(model, (MaskedLM, SequenceClassifier)) else model
        emb = extract_embeddings(encoder, records, build_vocab(encoder.config.k), args.mode, ranks, args.batch_size)
    with open(out / "embeddings.tsv", "w") as fh:
        emb.write(fh)
    return {"input": args.input, "checkpoint": args.checkpoint, "mode": args.mode, "ranks": args.ranks}


def _read_embeddings(path):
    from barcodemlm.evaluation import EmbeddingMatrix

    if not Path(path).exists():
        raise FileNotFoundError(f"embedding file not found: {path}")
    with open(path) as fh:
        return EmbeddingMatrix.read(fh)


def cmd_probe(args, out: Path, seed: int) -> dict:
    from barcodemlm.evaluation import knn_probe, linear_probe

    if not (args.train and args.test):
        raise UsageError("probe requires --train and --test embedding files")
    train, test = _read_embeddings(args.train), _read_embeddings(args.test)
    if args.protocol == "linear":
        rank = args.rank or "species"
        report = linear_probe(train, test, rank)
    else:
        rank = args.rank or "genus"
        report = knn_probe(train, test, rank, args.k_neighbors, args.metric)
    with open(out / f"eval_{report.protocol}.txt", "w") as fh:
        report.write(fh)
    with open(out / f"eval_{report.protocol}_per_class.csv", "w") as fh:
        report.write_per_class(fh)
    return {"train": args.train, "test": args.test, "protocol": args.protocol, "rank": rank,
            "metric": args.metric, "k_neighbors": args.k_neighbors}


def _read_features(path: str) -> np.ndarray:
    from barcodemlm.nn.checkpoint import load_tensors

    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"feature file not found: {p}")
    if p.suffix.lower() in (".tsv", ".txt", ".csv"):
        return np.loadtxt(p, delimiter="," if p.suffix.lower() == ".csv" else "\t", ndmin=2)
    tensors = load_tensors(p)
    return tensors.get("features", next(iter(tensors.values())))


def _resolve_grid(name: str) -> dict:
    from barcodemlm.bzsl import PAPER_GRID, SMALL_GRID

    if name == "paper":
        return PAPER_GRID
    if name == "small":
        return SMALL_GRID
    values = read_config_file(name)
    try:
        return {key: [float(v) if key in ("k0", "k1", "s") else int(v) for v in values[key].split(",")]
                for key in ("k0", "k1", "m", "s", "K")}
    except KeyError as exc:
        raise ConfigError(f"grid file {name} lacks key {exc}") from None


def cmd_zsl(args, out: Path, seed: int) -> dict:
    from barcodemlm.bzsl import grid_search, write_grid_csv, zsl_dataset_from_split
    from barcodemlm.plotting import plot_grid_results

    if not (args.features and args.specimens and args.dna):
        raise UsageError("zsl requires --features, --specimens and --dna")
    features = _read_features(args.features)
    if not Path(args.specimens).exists():
        raise FileNotFoundError(f"specimen table not found: {args.specimens}")
    with open(args.specimens) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header[:2] != ["specimen_id", "species"]:
            raise ConfigError("specimen table header must start with 'specimen_id<TAB>species'")
        rows = [line.rstrip("\n").split("\t")[:2] for line in fh if line.strip()]
    if len(rows) != features.shape[0]:
        raise ValueError(f"{len(rows)} specimens but {features.shape[0]} feature rows")
    ids, species = [r[0] for r in rows], [r[1] for r in rows]
    dna = _read_embeddings(args.dna)
    sp_labels = dna.label_array("species")
    groups = defaultdict(list)
    for i, sp in enumerate(sp_labels):
        groups[sp].append(i)
    dna_means = {sp: dna.vectors[rows_].mean(axis=0) for sp, rows_ in groups.items()}

    records = [BarcodeRecord(i, "", {"species": s}) for i, s in zip(ids, species)]
    split = make_zsl_splits(records, seed=seed)
    with open(out / "zsl_splits.tsv", "w") as fh:
        split.write(fh)
    dataset = zsl_dataset_from_split(features, ids, species, split, dna_means, seed=seed)
    pca_dim = args.pca_dim if args.pca_dim and args.pca_dim < features.shape[1] else None
    best, report, grid_rows = grid_search(dataset, _resolve_grid(args.grid), pca_dim)
    with open(out / "grid_results.csv", "w") as fh:
        write_grid_csv(grid_rows, fh)
    with open(out / "eval_bzsl.txt", "w") as fh:
        report.write(fh)
    plot_grid_results(grid_rows, out / "bzsl_grid.png")
    return {"features": args.features, "specimens": args.specimens, "dna": args.dna,
            "grid": args.grid, "pca_dim": pca_dim, **{f"best.{k}": v for k, v in best.as_row().items()}}


def _format_table(title: str, columns: Sequence[str], table: dict) -> list[str]:
    width = max([len("Model")] + [len(m) for m in table]) + 2
    lines = [title, "Model".ljust(width) + "".join(c.rjust(14) for c in columns)]
    for model, row in table.items():
        cells = [f"{100 * row[c]:.1f}" if c in row else "--" for c in columns]
        lines.append(model.ljust(width) + "".join(cell.rjust(14) for cell in cells))
    return lines


def cmd_report(args, out: Path, seed: int) -> dict:
    from barcodemlm.evaluation import EvalReport
    from barcodemlm.plotting import plot_report

    if not args.inputs:
        raise UsageError("report requires at least one --input NAME=PATH")
    ssl: dict[str, dict] = {}
    zsl: dict[str, dict] = {}
    col = {"fine_tuned": "Fine-tuned", "linear_probe": "Linear-probe", "knn_probe": "1-NN probe"}
    for item in args.inputs:
        if "=" not in item:
            raise UsageError(f"--input expects NAME=PATH, got {item!r}")
        name, path = item.split("=", 1)
        if not Path(path).exists():
            raise FileNotFoundError(f"report input not found: {path}")
        with open(path) as fh:
            rep = EvalReport.read(fh)
        if rep.protocol == "bzsl":
            zsl.setdefault(name, {}).update(
                {"Seen": rep.metrics["seen_acc"], "Unseen": rep.metrics["unseen_acc"],
                 "Harmonic Mean": rep.metrics["harmonic_mean"]})
        else:
            ssl.setdefault(name, {})[col.get(rep.protocol, rep.protocol)] = rep.accuracy
    lines: list[str] = []
    if ssl:
        lines += _format_table("Taxonomic classification accuracy (%)", list(col.values()), ssl) + [""]
        plot_report(ssl, out / "report_taxonomic.png", "Taxonomic classification")
    if zsl:
        lines += _format_table("Zero-shot species accuracy (%)", ["Seen", "Unseen", "Harmonic Mean"], zsl) + [""]
        plot_report(zsl, out / "report_zsl.png", "Bayesian zero-shot")
    _write_text(out / "report.txt", lines)
    print("\n".join(lines))
    return {"inputs": ";".join(args.inputs)}


def cmd_synth(args, out: Path, seed: int) -> dict:
    from barcodemlm.nn.checkpoint import save_tensors
    from barcodemlm.synthetic import synthetic_taxonomy, synthetic_zsl_genera

    if args.kind == "taxonomy":
        records = synthetic_taxonomy(
            n_genera=args.n_genera or 5, species_per_genus=args.species_per_genus,
            specimens_per_species=args.specimens, length=args.length, seed=seed,
            rare_species_per_genus=args.rare_species, rare_specimens=args.rare_specimens,
        )
        with open(out / "corpus.tsv", "w") as fh:
            write_records(records, fh)
    else:
        data = synthetic_zsl_genera(n_genera=args.n_genera or 8, species_per_genus=args.species_per_genus,
                                    per_class=args.specimens, seed=seed)
        save_tensors(out / "image_features.bin", {"features": data["features"]})
        with open(out / "specimens.tsv", "w") as fh:
            fh.write("specimen_id\tspecies\n")
            for i, c in enumerate(data["labels"]):
                fh.write(f"IMG{i:05d}\tsp{c:03d}\n")
        from barcodemlm.evaluation import EmbeddingMatrix

        names = [f"sp{c:03d}" for c in sorted(data["dna_means"])]
        emb = EmbeddingMatrix(np.stack([data["dna_means"][c] for c in sorted(data["dna_means"])]),
                              [f"DNA_{n}" for n in names], {"species": names})
        with open(out / "dna_embeddings.tsv", "w") as fh:
            emb.write(fh)
    return {"kind": args.kind}


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="barcodemlm", description="DNA barcode MLM pipeline")
    parser.add_argument("--version", action="version", version=f"barcodemlm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="key = value config file; flags override it")
        p.add_argument("--seed", type=int, default=None, help="global seed (default 0)")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command> or runs/<command>)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    def tokenizing(p):
        p.add_argument("--k", type=int, default=4)
        p.add_argument("--mode", choices=["non-overlapping", "overlapping"], default="non-overlapping")
        p.add_argument("--preset", choices=["desk", "paper"], default="desk")

    p = common(sub.add_parser("preprocess", help="clean and filter a raw corpus"))
    p.add_argument("--input")
    p.add_argument("--min-len", type=int, default=200)
    p.add_argument("--max-n-frac", type=float, default=0.5)
    p.add_argument("--column", action="append", help="remap a column, e.g. sequence=seq")

    p = common(sub.add_parser("split", help="fine-tuning/unseen/pretraining or zero-shot splits"))
    p.add_argument("--input")
    p.add_argument("--kind", choices=["taxonomic", "zsl"], default="taxonomic")
    p.add_argument("--n-genera", type=int)
    p.add_argument("--per-genus-min", type=int, default=20)
    p.add_argument("--per-genus-max", type=int, default=50)
    p.add_argument("--unseen-cap", type=int, default=20)

    p = common(sub.add_parser("pretrain", help="masked-language-model pretraining"))
    p.add_argument("--input")
    tokenizing(p)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--mask-ratio", type=float, default=0.5)
    p.add_argument("--dropout", type=float)

    p = common(sub.add_parser("finetune", help="supervised species classification"))
    p.add_argument("--input")
    p.add_argument("--val")
    p.add_argument("--test")
    p.add_argument("--checkpoint")
    p.add_argument("--model", choices=["transformer", "cnn"], default="transformer")
    p.add_argument("--rank", default="species")
    tokenizing(p)
    p.add_argument("--input-len", type=int, default=660)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=["sgd", "adamw"])
    p.add_argument("--momentum", type=float)
    p.add_argument("--schedule", choices=["step", "linear", "constant"])
    p.add_argument("--freeze-encoder", action="store_true", default=None)

    p = common(sub.add_parser("embed", help="pooled embeddings from a checkpoint"))
    p.add_argument("--input")
    p.add_argument("--checkpoint")
    p.add_argument("--mode", choices=["non-overlapping", "overlapping"], default="non-overlapping")
    p.add_argument("--ranks", default="species,genus")
    p.add_argument("--batch-size", type=int, default=32)

    p = common(sub.add_parser("probe", help="linear or 1-NN probe on embeddings"))
    p.add_argument("--protocol", choices=["linear", "knn"], default="linear")
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("--rank")
    p.add_argument("--metric", choices=["euclidean", "cosine"], default="euclidean")
    p.add_argument("--k-neighbors", type=int, default=1)

    p = common(sub.add_parser("zsl", help="Bayesian zero-shot grid search"))
    p.add_argument("--features")
    p.add_argument("--specimens")
    p.add_argument("--dna")
    p.add_argument("--grid", default="paper", help="paper, small, or a key-value grid file")
    p.add_argument("--pca-dim", type=int, default=500)

    p = common(sub.add_parser("report", help="aggregate evaluation reports into tables"))
    p.add_argument("--input", dest="inputs", action="append", help="NAME=PATH of an eval_*.txt file")

    p = common(sub.add_parser("synth", help="write a synthetic corpus for demos"))
    p.add_argument("--kind", choices=["taxonomy", "zsl"], default="taxonomy")
    p.add_argument("--n-genera", type=int)
    p.add_argument("--species-per-genus", type=int, default=4)
    p.add_argument("--specimens", type=int, default=30)
    p.add_argument("--length", type=int, default=600)
    p.add_argument("--rare-species", type=int, default=1,
                   help="extra species per genus with few barcodes (the unseen pool)")
    p.add_argument("--rare-specimens", type=int, default=5)
    return parser


def _apply_config(parser: argparse.ArgumentParser, args: argparse.Namespace, argv: Sequence[str]) -> None:
    """Config-file values fill every option not given explicitly on the command line."""
    if not args.config:
        return
    values = read_config_file(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    given = {a.dest for a in sub._actions for s in a.option_strings if any(x == s or x.startswith(s + "=") for x in argv)}
    for key, raw in values.items():
        if key not in actions:
            raise UsageError(f"config field {key!r} is not an option of '{args.command}'")
        if key in given:
            continue
        action = actions[key]
        try:
            if isinstance(action, argparse._StoreTrueAction):
                value = raw.strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(action, argparse._AppendAction):
                value = [v.strip() for v in raw.split(",") if v.strip()]
            else:
                value = action.type(raw) if action.type else raw
        except ValueError:
            raise UsageError(f"config field {key!r}: cannot parse {raw!r}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config field {key!r}: {value!r} not in {sorted(action.choices)}")
        setattr(args, key, value)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_config(parser, args, argv)
        needs_input = {"preprocess", "split", "pretrain", "finetune", "embed"}
        if args.command in needs_input and not args.input:
            raise UsageError(f"{args.command} requires --input")
        seed = 0 if args.seed is None else args.seed
        out = _out_dir(args)
        params = HANDLERS[args.command](args, out, stage_seed(seed, args.command))
        RunConfig(args.command, seed, str(out), params).write(out)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"barcodemlm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"barcodemlm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        print(f"barcodemlm {args.command}: internal error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
