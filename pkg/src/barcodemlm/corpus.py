"""Barcode corpus ingestion, cleaning, and deterministic splitting."""

from __future__ import annotations

import csv
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

logger = logging.getLogger(__name__)

RANKS = ("phylum", "class", "order", "family", "genus", "species")

DEFAULT_COLUMNS = {
    "id": "processid",
    "sequence": "nucleotides",
    "bin": "bin_uri",
    **{rank: rank for rank in RANKS},
}

TSV_HEADER = ["processid", *RANKS, "bin_uri", "nucleotides"]

_NON_ACGT = re.compile(r"[^ACGT]")


class ConfigError(ValueError):
    """A configuration value or column mapping is invalid."""


class DegenerateSequenceError(ValueError):
    """Cleaning left nothing of the sequence."""


@dataclass
class BarcodeRecord:
    record_id: str
    sequence: str
    taxonomy: dict[str, str | None] = field(default_factory=dict)
    bin_id: str | None = None

    def rank(self, name: str) -> str | None:
        return self.taxonomy.get(name)

    @property
    def genus(self) -> str | None:
        return self.taxonomy.get("genus")

    @property
    def species(self) -> str | None:
        return self.taxonomy.get("species")


@dataclass
class ParseReport:
    rows: int = 0
    empty_sequence: int = 0
    duplicate_id: int = 0
    errors: list[tuple[int, str]] = field(default_factory=list)


@dataclass
class CleaningReport:
    input_records: int = 0
    degenerate: int = 0
    duplicates: int = 0
    too_short: int = 0
    too_many_n: int = 0
    survivors: int = 0

    def as_dict(self) -> dict[str, int]:
        return dict(self.__dict__)


def _blank_to_none(value: str | None) -> str | None:
    if value is None:
        return None
    value = value.strip()
    return value or None


def parse_records(
    source: TextIO, column_map: Mapping[str, str] | None = None
) -> tuple[list[BarcodeRecord], ParseReport]:
    """Read a header-addressed TSV into raw (uncleaned) records.

    ``column_map`` maps the logical fields ``id``, ``sequence``, ``bin`` and
    the rank names to header columns; missing keys fall back to the BOLD-style
    defaults. Rows with an empty sequence are dropped and counted. Malformed
    rows are logged with their line number and skipped.
    """
    columns = dict(DEFAULT_COLUMNS)
    if column_map:
        columns.update(column_map)
    reader = csv.reader(source, delimiter="\t")
    try:
        header = next(reader)
    except StopIteration:
        raise ConfigError("input has no header row") from None
    index = {name: i for i, name in enumerate(header)}
    for key in ("id", "sequence"):
        if columns[key] not in index:
            raise ConfigError(f"missing column {columns[key]!r} (mapped from {key!r})")
    optional = {
        key: index.get(columns[key]) for key in ("bin", *RANKS) if key in columns
    }

    report = ParseReport()
    records: list[BarcodeRecord] = []
    seen_ids: set[str] = set()
    for row in reader:
        line = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        report.rows += 1
        if len(row) != len(header):
            msg = f"expected {len(header)} fields, found {len(row)}"
            logger.warning("line %d: %s", line, msg)
            report.errors.append((line, msg))
            continue
        record_id = row[index[columns["id"]]].strip()
        sequence = row[index[columns["sequence"]]].strip()
        if not sequence:
            report.empty_sequence += 1
            continue
        if not record_id or record_id in seen_ids:
            msg = f"missing or repeated record id {record_id!r}"
            logger.warning("line %d: %s", line, msg)
            report.errors.append((line, msg))
            report.duplicate_id += 1
            continue
        seen_ids.add(record_id)
        taxonomy = {
            rank: _blank_to_none(row[optional[rank]]) if optional.get(rank) is not None else None
            for rank in RANKS
        }
        bin_id = _blank_to_none(row[optional["bin"]]) if optional.get("bin") is not None else None
        records.append(BarcodeRecord(record_id, sequence, taxonomy, bin_id))
    return records, report


def parse_fasta(source: TextIO) -> tuple[list[BarcodeRecord], ParseReport]:
    """Read FASTA where the description carries ``rank=value`` pairs.

    Example header: ``>ABC123 genus=Aedes species=Aedes_vexans bin_uri=BOLD:AAA1``.
    """
    report = ParseReport()
    records: list[BarcodeRecord] = []
    seen_ids: set[str] = set()

    def flush(header: str | None, chunks: list[str], line: int) -> None:
        if header is None:
            return
        report.rows += 1
        parts = header.split()
        if not parts:
            report.errors.append((line, "empty FASTA header"))
            return
        record_id, fields = parts[0], {}
        for token in parts[1:]:
            if "=" in token:
                key, value = token.split("=", 1)
                fields[key.strip().lower()] = _blank_to_none(value)
        sequence = "".join(chunks).strip()
        if not sequence:
            report.empty_sequence += 1
            return
        if record_id in seen_ids:
            report.errors.append((line, f"repeated record id {record_id!r}"))
            report.duplicate_id += 1
            return
        seen_ids.add(record_id)
        taxonomy = {rank: fields.get(rank) for rank in RANKS}
        records.append(BarcodeRecord(record_id, sequence, taxonomy, fields.get("bin_uri")))

    header: str | None = None
    header_line = 0
    chunks: list[str] = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith(">"):
            flush(header, chunks, header_line)
            header, header_line, chunks = line[1:], lineno, []
        elif header is None:
            report.errors.append((lineno, "sequence data before first header"))
        else:
            chunks.append(line)
    flush(header, chunks, header_line)
    return records, report


def clean_sequence(raw: str) -> str:
    """Upper-case, map every non-ACGT symbol to N, strip trailing Ns.

    >>> clean_sequence("ACGR-T")
    'ACGNNT'
    """
    cleaned = _NON_ACGT.sub("N", raw.upper()).rstrip("N")
    if not cleaned:
        raise DegenerateSequenceError(f"sequence {raw[:20]!r} is empty after cleaning")
    return cleaned


def clean_records(
    records: Iterable[BarcodeRecord],
) -> tuple[list[BarcodeRecord], int]:
    """Return cleaned copies (input order kept) and the degenerate-drop count."""
    out, degenerate = [], 0
    for rec in records:
        try:
            seq = clean_sequence(rec.sequence)
        except DegenerateSequenceError:
            degenerate += 1
            continue
        out.append(BarcodeRecord(rec.record_id, seq, dict(rec.taxonomy), rec.bin_id))
    return out, degenerate


def sanitize_corpus(
    records: Sequence[BarcodeRecord], min_len: int = 200, max_n_frac: float = 0.5
) -> tuple[list[BarcodeRecord], CleaningReport]:
    """Drop duplicate sequences (first occurrence wins), short and N-rich records."""
    report = CleaningReport(input_records=len(records))
    seen: set[str] = set()
    survivors = []
    for rec in records:
        seq = rec.sequence
        if seq in seen:
            report.duplicates += 1
            continue
        seen.add(seq)
        if len(seq) < min_len:
            report.too_short += 1
            continue
        if seq.count("N") / len(seq) > max_n_frac:
            report.too_many_n += 1
            continue
        survivors.append(rec)
    report.survivors = len(survivors)
    return survivors, report


def preprocess(
    records: Sequence[BarcodeRecord], min_len: int = 200, max_n_frac: float = 0.5
) -> tuple[list[BarcodeRecord], CleaningReport]:
    cleaned, degenerate = clean_records(records)
    survivors, report = sanitize_corpus(cleaned, min_len, max_n_frac)
    report.input_records = len(records)
    report.degenerate = degenerate
    return survivors, report


def write_records(records: Iterable[BarcodeRecord], sink: TextIO) -> None:
    writer = csv.writer(sink, delimiter="\t", lineterminator="\n")
    writer.writerow(TSV_HEADER)
    for rec in records:
        writer.writerow(
            [rec.record_id, *(rec.taxonomy.get(r) or "" for r in RANKS), rec.bin_id or "", rec.sequence]
        )


# ---------------------------------------------------------------------------
# splits


def largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    """Integer apportionment of ``n`` items by ``fractions``; ties go to the earlier slot."""
    total = float(sum(fractions))
    quotas = [n * f / total for f in fractions]
    counts = [int(np.floor(q)) for q in quotas]
    remainders = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in remainders[: n - sum(counts)]:
        counts[i] += 1
    return counts


@dataclass
class SplitSpec:
    pretrain_ids: list[str]
    finetune_train_ids: list[str]
    finetune_val_ids: list[str]
    finetune_test_ids: list[str]
    unseen_ids: list[str]
    seed: int
    parameters: dict = field(default_factory=dict)

    SPLIT_NAMES = ("pretrain", "finetune_train", "finetune_val", "finetune_test", "unseen")

    def assignments(self) -> dict[str, list[str]]:
        return {name: getattr(self, f"{name}_ids") for name in self.SPLIT_NAMES}

    def write(self, sink: TextIO) -> None:
        write_split_file(sink, self.assignments(), self.seed, self.parameters)


@dataclass
class ZSLSplit:
    seen_train_ids: list[str]
    seen_test_ids: list[str]
    unseen_val_ids: list[str]
    unseen_test_ids: list[str]
    seen_species: list[str]
    unseen_val_species: list[str]
    unseen_test_species: list[str]
    seed: int
    parameters: dict = field(default_factory=dict)

    SPLIT_NAMES = ("seen_train", "seen_test", "unseen_val", "unseen_test")

    def assignments(self) -> dict[str, list[str]]:
        return {name: getattr(self, f"{name}_ids") for name in self.SPLIT_NAMES}

    def write(self, sink: TextIO) -> None:
        write_split_file(sink, self.assignments(), self.seed, self.parameters)


def write_split_file(sink: TextIO, assignments: Mapping[str, list[str]], seed: int, parameters: Mapping) -> None:
    params = " ".join(f"{k}={v}" for k, v in sorted(parameters.items()))
    sink.write(f"# seed={seed} {params}\n".rstrip() + "\n")
    for name, ids in assignments.items():
        for rid in ids:
            sink.write(f"{rid}\t{name}\n")


def read_split_file(source: TextIO) -> dict[str, list[str]]:
    out: dict[str, list[str]] = defaultdict(list)
    for line in source:
        line = line.rstrip("\n")
        if not line or line.startswith("#"):
            continue
        rid, name = line.split("\t")
        out[name].append(rid)
    return dict(out)


def _stratified(groups: Mapping[str, list[str]], fractions: Sequence[float]) -> list[list[str]]:
    parts: list[list[str]] = [[] for _ in fractions]
    for key in sorted(groups):
        ids = groups[key]
        start = 0
        for part, count in zip(parts, largest_remainder(len(ids), fractions)):
            part.extend(ids[start : start + count])
            start += count
    return parts


def make_taxonomic_splits(
    records: Sequence[BarcodeRecord],
    n_genera: int,
    per_genus_min: int = 20,
    per_genus_max: int = 50,
    unseen_cap: int = 20,
    fractions: Sequence[float] = (0.7, 0.2, 0.1),
    seed: int = 0,
) -> SplitSpec:
    """Fine-tuning / unseen / pretraining partition of a cleaned corpus.

    Species with fewer than ``per_genus_min`` barcodes are "rare": they never
    enter fine-tuning and are the only source of the unseen subset. Fractions
    are ordered (train, test, val).
    """
    if len(fractions) != 3:
        raise ConfigError("fractions must be (train, test, val)")
    rng = np.random.default_rng(seed)
    labelled = [r for r in records if r.genus and r.species]
    species_total = Counter(r.species for r in labelled)
    rare = {sp for sp, n in species_total.items() if n < per_genus_min}

    common_by_genus: dict[str, list[BarcodeRecord]] = defaultdict(list)
    rare_by_genus: dict[str, list[BarcodeRecord]] = defaultdict(list)
    for rec in labelled:
        (rare_by_genus if rec.species in rare else common_by_genus)[rec.genus].append(rec)

    eligible = []
    for genus in sorted(set(common_by_genus) | set(rare_by_genus)):
        if len(common_by_genus.get(genus, ())) >= per_genus_min:
            eligible.append(genus)
        else:
            logger.warning(
                "genus %s skipped: %d non-rare barcodes < %d",
                genus, len(common_by_genus.get(genus, ())), per_genus_min,
            )
    if len(eligible) < n_genera:
        raise ValueError(
            f"need {n_genera} eligible genera, found {len(eligible)} "
            f"(short by {n_genera - len(eligible)})"
        )
    chosen = sorted(eligible[i] for i in rng.choice(len(eligible), size=n_genera, replace=False))

    by_species: dict[str, list[str]] = defaultdict(list)
    unseen: list[str] = []
    for genus in chosen:
        pool = common_by_genus[genus]
        take = min(len(pool), per_genus_max)
        for i in sorted(rng.choice(len(pool), size=take, replace=False)):
            by_species[pool[i].species].append(pool[i].record_id)
        rare_pool = rare_by_genus.get(genus, [])
        take = min(len(rare_pool), unseen_cap)
        unseen.extend(rare_pool[i].record_id for i in sorted(rng.choice(len(rare_pool), size=take, replace=False)))

    for species in by_species:
        by_species[species] = [by_species[species][i] for i in rng.permutation(len(by_species[species]))]
    train, test, val = _stratified(by_species, fractions)

    unseen_set = set(unseen)
    unseen_species = {r.species for r in labelled if r.record_id in unseen_set}
    used = set(train) | set(test) | set(val) | set(unseen)
    pretrain = [
        r.record_id for r in records
        if r.record_id not in used and not (r.species and r.species in unseen_species)
    ]
    params = {
        "n_genera": n_genera, "per_genus_min": per_genus_min, "per_genus_max": per_genus_max,
        "unseen_cap": unseen_cap, "fractions": ",".join(str(f) for f in fractions),
    }
    return SplitSpec(pretrain, train, val, test, unseen, seed, params)


def make_zsl_splits(
    records: Sequence[BarcodeRecord],
    unseen_test_frac: float = 0.10,
    unseen_val_frac: float = 0.10,
    seen_train_frac: float = 0.80,
    seed: int = 0,
) -> ZSLSplit:
    """Species-disjoint unseen test/val classes and a per-species seen train/test split."""
    labelled = [r for r in records if r.species]
    by_species: dict[str, list[str]] = defaultdict(list)
    for rec in labelled:
        by_species[rec.species].append(rec.record_id)
    species = sorted(by_species)
    if len(species) < 10:
        raise ValueError(f"zero-shot split needs at least 10 species, got {len(species)}")
    rng = np.random.default_rng(seed)
    order = [species[i] for i in rng.permutation(len(species))]
    n_test = int(np.floor(unseen_test_frac * len(order) + 0.5))
    n_val = int(np.floor(unseen_val_frac * (len(order) - n_test) + 0.5))
    unseen_test_sp = sorted(order[:n_test])
    unseen_val_sp = sorted(order[n_test : n_test + n_val])
    seen_sp = sorted(order[n_test + n_val :])

    seen_groups = {
        sp: [by_species[sp][i] for i in rng.permutation(len(by_species[sp]))] for sp in seen_sp
    }
    seen_train, seen_test = _stratified(seen_groups, (seen_train_frac, 1.0 - seen_train_frac))
    unseen_test = [rid for sp in unseen_test_sp for rid in by_species[sp]]
    unseen_val = [rid for sp in unseen_val_sp for rid in by_species[sp]]
    params = {
        "unseen_test_frac": unseen_test_frac, "unseen_val_frac": unseen_val_frac,
        "seen_train_frac": seen_train_frac,
    }
    return ZSLSplit(
        seen_train, seen_test, unseen_val, unseen_test, seen_sp, unseen_val_sp, unseen_test_sp, seed, params
    )
