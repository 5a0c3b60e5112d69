"""Embedding extraction, probing protocols and evaluation reports."""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence, TextIO

import numpy as np
import torch
from scipy.spatial.distance import cdist

from barcodemlm.corpus import BarcodeRecord, ConfigError
from barcodemlm.models.encoder import BarcodeEncoder, pool_embeddings
from barcodemlm.models.training import predict
from barcodemlm.tokenizer import TokenizedBatch, Vocabulary, pad_token_lists, tokenize

logger = logging.getLogger(__name__)


@dataclass
class EmbeddingMatrix:
    vectors: np.ndarray
    record_ids: list[str]
    labels: dict[str, list[str | None]] = field(default_factory=dict)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        n = self.vectors.shape[0]
        if len(self.record_ids) != n or any(len(v) != n for v in self.labels.values()):
            raise ValueError("embedding rows, ids and labels are misaligned")
        if not np.isfinite(self.vectors).all():
            raise ValueError("embedding matrix contains non-finite values")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def label_array(self, rank: str) -> np.ndarray:
        if rank not in self.labels:
            raise KeyError(f"no {rank!r} labels (have {sorted(self.labels)})")
        return np.array([x if x is not None else "" for x in self.labels[rank]], dtype=object)

    def subset(self, rows: Sequence[int]) -> "EmbeddingMatrix":
        rows = list(rows)
        return EmbeddingMatrix(
            self.vectors[rows], [self.record_ids[i] for i in rows],
            {r: [v[i] for i in rows] for r, v in self.labels.items()},
        )

    def write(self, sink: TextIO) -> None:
        ranks = list(self.labels)
        sink.write(f"#d={self.dim} n={len(self)} rank_columns={','.join(ranks)}\n")
        for i, rid in enumerate(self.record_ids):
            labels = [self.labels[r][i] or "" for r in ranks]
            values = [f"{x:.9g}" for x in self.vectors[i]]
            sink.write("\t".join([rid, *labels, *values]) + "\n")

    @classmethod
    def read(cls, source: TextIO) -> "EmbeddingMatrix":
        header = source.readline().strip()
        if not header.startswith("#"):
            raise ValueError("embedding file must start with a '#d=... n=... rank_columns=...' header")
        meta = dict(part.split("=", 1) for part in header[1:].split())
        d, n = int(meta["d"]), int(meta["n"])
        ranks = [r for r in meta.get("rank_columns", "").split(",") if r]
        ids, labels, rows = [], {r: [] for r in ranks}, []
        for line in source:
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 1 + len(ranks) + d:
                raise ValueError(f"embedding row has {len(parts)} fields, expected {1 + len(ranks) + d}")
            ids.append(parts[0])
            for r, value in zip(ranks, parts[1 : 1 + len(ranks)]):
                labels[r].append(value or None)
            rows.append([float(x) for x in parts[1 + len(ranks) :]])
        if len(ids) != n:
            raise ValueError(f"header promises {n} rows, file has {len(ids)}")
        return cls(np.array(rows, dtype=np.float64).reshape(n, d), ids, labels)


@dataclass
class EvalReport:
    protocol: str
    rank: str
    accuracy: float
    macro_accuracy: float | None = None
    per_class: dict[str, float] | None = None
    metrics: dict[str, float] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    predictions: list | None = field(default=None, repr=False)  # in query order; not serialized

    def write(self, sink: TextIO) -> None:
        sink.write(f"protocol={self.protocol}\nrank={self.rank}\naccuracy={self.accuracy:.9g}\n")
        if self.macro_accuracy is not None:
            sink.write(f"macro_accuracy={self.macro_accuracy:.9g}\n")
        for key, value in self.metrics.items():
            sink.write(f"{key}={value:.9g}\n")
        for key, value in sorted(self.config.items()):
            sink.write(f"config.{key}={value}\n")

    def write_per_class(self, sink: TextIO) -> None:
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(["class", "accuracy"])
        for label, acc in sorted((self.per_class or {}).items()):
            writer.writerow([label, f"{acc:.9g}"])

    @classmethod
    def read(cls, source: TextIO) -> "EvalReport":
        values = dict(line.rstrip("\n").split("=", 1) for line in source if "=" in line)
        config = {k[7:]: v for k, v in values.items() if k.startswith("config.")}
        fixed = {"protocol", "rank", "accuracy", "macro_accuracy"}
        metrics = {k: float(v) for k, v in values.items() if k not in fixed and not k.startswith("config.")}
        macro = values.get("macro_accuracy")
        return cls(values["protocol"], values["rank"], float(values["accuracy"]),
                   float(macro) if macro is not None else None, None, metrics, config)


def per_class_accuracy(truth: Sequence, pred: Sequence) -> dict[str, float]:
    truth, pred = np.asarray(truth, dtype=object), np.asarray(pred, dtype=object)
    out = {}
    for label in sorted(set(truth.tolist()), key=str):
        sel = truth == label
        out[str(label)] = float(np.mean(pred[sel] == label))
    return out


def build_report(protocol: str, rank: str, truth: Sequence, pred: Sequence, config: Mapping | None = None) -> EvalReport:
    truth_arr, pred_arr = np.asarray(truth, dtype=object), np.asarray(pred, dtype=object)
    per_class = per_class_accuracy(truth_arr, pred_arr)
    acc = float(np.mean(truth_arr == pred_arr)) if len(truth_arr) else 0.0
    macro = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return EvalReport(protocol, rank, acc, macro, per_class, config=dict(config or {}), predictions=pred_arr.tolist())


# ---------------------------------------------------------------------------
# embedding extraction


@torch.no_grad()
def embed_token_lists(encoder: BarcodeEncoder, token_lists: Sequence[Sequence[int]], batch_size: int = 32) -> np.ndarray:
    encoder.eval()
    out = []
    for start in range(0, len(token_lists), batch_size):
        batch = pad_token_lists(token_lists[start : start + batch_size], encoder.pad_id, encoder.config.max_len)
        ids, mask = torch.from_numpy(batch.ids), torch.from_numpy(batch.padding_mask)
        out.append(pool_embeddings(encoder(ids, mask), mask).to(torch.float64).numpy())
    if not out:
        return np.zeros((0, encoder.config.d_model))
    return np.concatenate(out)


def extract_embeddings(
    encoder: BarcodeEncoder,
    records: Sequence[BarcodeRecord],
    vocab: Vocabulary,
    mode: str = "non-overlapping",
    ranks: Sequence[str] = ("species", "genus"),
    batch_size: int = 32,
) -> EmbeddingMatrix:
    """Pooled eval-mode embedding per record; untokenizable records are skipped."""
    kept, token_lists = [], []
    skipped = []
    for rec in records:
        tokens = tokenize(rec.sequence, vocab, mode)
        if not tokens:
            skipped.append(rec.record_id)
            continue
        kept.append(rec)
        token_lists.append(tokens[: encoder.config.max_len])
    if skipped:
        logger.warning("skipped %d records with no tokens: %s", len(skipped), ", ".join(skipped[:10]))
    vectors = embed_token_lists(encoder, token_lists, batch_size)
    return EmbeddingMatrix(
        vectors.reshape(len(kept), encoder.config.d_model),
        [r.record_id for r in kept],
        {rank: [r.rank(rank) for r in kept] for rank in ranks},
    )


# ---------------------------------------------------------------------------
# linear probe


class LogisticRegression:
    """Multinomial logistic regression fitted by full-batch gradient descent.

    Features are standardized with the training mean and a single global
    scale, so translating or isotropically scaling the inputs does not change
    the fitted decision rule.
    """

    def __init__(self, l2: float = 1e-4, tol: float = 1e-6, max_iter: int = 5000):
        self.l2, self.tol, self.max_iter = l2, tol, max_iter

    def _standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean_) / self.scale_

    def fit(self, x: np.ndarray, y: np.ndarray) -> "LogisticRegression":
        x = np.asarray(x, dtype=np.float64)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        self.mean_ = x.mean(axis=0)
        centred = x - self.mean_
        self.scale_ = float(np.sqrt((centred ** 2).sum(axis=1).mean())) or 1.0
        z = np.hstack([centred / self.scale_, np.ones((x.shape[0], 1))])
        n, c = z.shape[0], len(self.classes_)
        onehot = np.zeros((n, c))
        onehot[np.arange(n), y_idx] = 1.0
        # softmax cross-entropy Hessian is bounded by 0.5 * z^T z / n
        lipschitz = 0.5 * np.linalg.norm(z, 2) ** 2 / n + self.l2
        step = 1.0 / lipschitz
        w = np.zeros((z.shape[1], c))
        prev = w.copy()
        penal = np.ones((z.shape[1], 1))
        penal[-1] = 0.0  # bias is not penalized
        self.n_iter_ = self.max_iter
        for it in range(1, self.max_iter + 1):
            # Nesterov-accelerated gradient step
            look = w + (it - 1) / (it + 2) * (w - prev)
            grad = z.T @ (_softmax(z @ look) - onehot) / n + self.l2 * penal * look
            prev, w = w, look - step * grad
            if np.abs(grad).max() < self.tol:
                self.n_iter_ = it
                break
        self.coef_ = w
        return self

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        z = self._standardize(np.asarray(x, dtype=np.float64))
        return z @ self.coef_[:-1] + self.coef_[-1]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(x), axis=1)]


def _softmax(a: np.ndarray) -> np.ndarray:
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def linear_probe(
    train: EmbeddingMatrix, test: EmbeddingMatrix, rank: str = "species",
    l2: float = 1e-4, tol: float = 1e-6, max_iter: int = 5000,
) -> EvalReport:
    if len(train) == 0 or len(test) == 0:
        raise ValueError("linear probe needs non-empty train and test embedding sets")
    y_train, y_test = train.label_array(rank), test.label_array(rank)
    missing = sorted(set(y_test.tolist()) - set(y_train.tolist()))
    if missing:
        raise ValueError(f"test labels absent from training set: {missing}")
    model = LogisticRegression(l2, tol, max_iter).fit(train.vectors, y_train)
    pred = model.predict(test.vectors)
    config = {"l2": l2, "tol": tol, "max_iter": max_iter, "iterations": model.n_iter_}
    return build_report("linear_probe", rank, y_test, pred, config)


# ---------------------------------------------------------------------------
# nearest-neighbour probe


METRICS = {"euclidean": "sqeuclidean", "cosine": "cosine"}


def nearest_neighbors(reference: np.ndarray, query: np.ndarray, k: int = 1,
                      metric: str = "euclidean", chunk: int = 1024) -> np.ndarray:
    """(n_query, k) reference rows ordered by distance, ties to the lower row."""
    if metric not in METRICS:
        raise ConfigError(f"unknown metric {metric!r} (expected one of {sorted(METRICS)})")
    out = []
    for start in range(0, query.shape[0], chunk):
        dist = cdist(query[start : start + chunk], reference, METRICS[metric])
        out.append(np.argsort(dist, axis=1, kind="stable")[:, :k])
    return np.concatenate(out) if out else np.zeros((0, k), dtype=np.int64)


def knn_probe(
    reference: EmbeddingMatrix, query: EmbeddingMatrix, rank: str = "genus",
    k_neighbors: int = 1, metric: str = "euclidean",
) -> EvalReport:
    """Label each query by its nearest reference vectors (majority vote for k > 1)."""
    if len(reference) == 0:
        raise ValueError("reference embedding set is empty")
    if len(query) == 0:
        raise ValueError("query embedding set is empty")
    if metric not in METRICS:
        raise ConfigError(f"unknown metric {metric!r} (expected one of {sorted(METRICS)})")
    ref_labels, truth = reference.label_array(rank), query.label_array(rank)
    neighbours = nearest_neighbors(reference.vectors, query.vectors, k_neighbors, metric)
    pred = []
    for row in neighbours:
        labels = [ref_labels[i] for i in row]
        counts = Counter(labels)
        top = max(counts.values())
        # ties in the vote go to the label of the closest neighbour among them
        pred.append(next(l for l in labels if counts[l] == top))
    config = {"k_neighbors": k_neighbors, "metric": metric}
    return build_report("knn_probe", rank, truth, np.array(pred, dtype=object), config)


# ---------------------------------------------------------------------------
# fine-tuned model


def fine_tuned_eval(
    model: torch.nn.Module,
    inputs: TokenizedBatch | np.ndarray,
    labels: Sequence[str],
    label_names: Sequence[str],
    rank: str = "species",
) -> EvalReport:
    """Top-1 accuracy of a trained classifier; ``label_names`` is its class order."""
    index = {name: i for i, name in enumerate(label_names)}
    unknown = sorted({l for l in labels if l not in index})
    if unknown:
        raise ValueError(f"labels unknown to the trained model: {unknown}")
    pred = predict(model, inputs)
    names = np.array(label_names, dtype=object)[pred] if len(pred) else np.array([], dtype=object)
    return build_report("fine_tuned", rank, np.array(labels, dtype=object), names)


def harmonic_mean(seen_acc: float, unseen_acc: float) -> float:
    if not (0 <= seen_acc <= 1 and 0 <= unseen_acc <= 1):
        raise ValueError("accuracies must lie in [0, 1]")
    if seen_acc + unseen_acc == 0:
        return 0.0
    return 2 * seen_acc * unseen_acc / (seen_acc + unseen_acc)
