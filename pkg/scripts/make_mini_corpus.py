"""Regenerate the bundled adversarial mini-corpus and its golden survivor file.

Each row is built with a known outcome, so the golden file follows from the
construction below rather than from running the cleaning code.
"""

from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parents[1] / "src" / "barcodemlm" / "data"
HEADER = ["processid", "phylum", "class", "order", "family", "genus", "species", "bin_uri", "nucleotides"]

rng = np.random.default_rng(20240611)


def dna(n: int) -> str:
    return "".join(rng.choice(list("ACGT"), size=n))


def iupac(seq: str, every: int, symbols: str) -> str:
    chars = list(seq)
    for j, i in enumerate(range(5, len(chars) - 5, every)):
        chars[i] = symbols[j % len(symbols)]
    return "".join(chars)


s001, s002, s008_base, s016 = dna(300), dna(300), dna(300), dna(199)
s008 = iupac(s008_base, 17, "RYKMSW-")
# (id, raw sequence, outcome, cleaned length, N count)
ROWS = [
    ("MC001", s001, "keep", 300, 0),
    ("MC002", s002.lower(), "keep", 300, 0),
    ("MC003", s001, "duplicate", None, None),
    ("MC004", s002, "duplicate", None, None),  # differs from MC002 only by case
    ("MC005", dna(150), "too_short", None, None),
    ("MC006", "N" * 220 + dna(180), "too_many_n", None, None),  # 55% N
    ("MC007", "N" * 200 + dna(200), "keep", 400, 200),  # exactly 50% N
    ("MC008", s008, "keep", 300, s008.count("R") + sum(s008.count(c) for c in "YKMSW-")),
    ("MC009", dna(250) + "N" * 100, "keep", 250, 0),
    ("MC010", dna(190) + "N" * 50, "too_short", None, None),  # 240 raw, 190 after strip
    ("MC011", dna(210) + "nnRYN-", "keep", 210, 0),
    ("MC012", "", "parse_empty", None, None),
    ("MC013", "NNNN--nnRY", "degenerate", None, None),
    ("MC001", dna(300), "parse_duplicate_id", None, None),
    ("MC015", dna(200), "keep", 200, 0),
    ("MC016", s016, "too_short", None, None),
    ("MC017", s016, "duplicate", None, None),
    ("MC018", iupac(s008_base, 17, "YYYYYYY"), "duplicate", None, None),  # same N pattern as MC008
    ("MC019", None, "parse_malformed", None, None),
    ("MC021", "acgu" * 75, "keep", 299, 74),  # final u becomes a trailing N
    ("MC022", "N" * 130 + dna(120) + "N" * 300, "too_many_n", None, None),  # 130/250 after strip
    ("MC023", dna(100) + "N" * 110 + dna(100) + "N" * 300, "keep", 310, 110),
]


def main() -> None:
    DATA.mkdir(parents=True, exist_ok=True)
    with open(DATA / "mini_corpus.tsv", "w") as fh:
        fh.write("\t".join(HEADER) + "\n")
        for i, (rid, seq, *_rest) in enumerate(ROWS):
            taxa = ["Arthropoda", "Insecta", "Diptera", "Culicidae", f"Genus{i % 3}", f"Genus{i % 3} sp{i}"]
            if seq is None:
                fh.write("\t".join([rid, *taxa[:3]]) + "\n")
                continue
            fh.write("\t".join([rid, *taxa, f"BOLD:MC{i:04d}", seq]) + "\n")
    counts = {"input_records": 0, "degenerate": 0, "duplicates": 0, "too_short": 0, "too_many_n": 0, "survivors": 0}
    key = {"keep": "survivors", "duplicate": "duplicates", "degenerate": "degenerate",
           "too_short": "too_short", "too_many_n": "too_many_n"}
    for _, _, outcome, _, _ in ROWS:
        if outcome.startswith("parse_"):
            continue
        counts["input_records"] += 1
        counts[key[outcome]] += 1
    with open(DATA / "mini_corpus_golden.tsv", "w") as fh:
        for k, v in counts.items():
            fh.write(f"#{k}={v}\n")
        fh.write("processid\tlength\tn_count\n")
        for rid, _, outcome, length, n_count in ROWS:
            if outcome == "keep":
                fh.write(f"{rid}\t{length}\t{n_count}\n")


if __name__ == "__main__":
    main()
