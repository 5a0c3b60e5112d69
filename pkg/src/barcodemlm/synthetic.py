"""Synthetic barcode taxonomies and zero-shot datasets for demos and tests."""

from __future__ import annotations

import numpy as np

from barcodemlm.corpus import BarcodeRecord

BASES = np.array(list("ACGT"))


def mutate(seq: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Point-mutate each position with probability ``rate`` to a different base."""
    out = seq.copy()
    hits = np.flatnonzero(rng.random(seq.size) < rate)
    shift = rng.integers(1, 4, size=hits.size)
    codes = np.searchsorted(BASES, out[hits])
    out[hits] = BASES[(codes + shift) % 4]
    return out


def synthetic_taxonomy(
    n_genera: int = 5,
    species_per_genus: int = 4,
    specimens_per_species: int = 30,
    length: int = 600,
    species_divergence: float = 0.05,
    specimen_mutation: float = 0.02,
    seed: int = 0,
    rare_species_per_genus: int = 0,
    rare_specimens: int = 5,
) -> list[BarcodeRecord]:
    """Three-level tree: random genus ancestors, mutated species ancestors,
    specimens carrying ``specimen_mutation`` point mutations.

    ``rare_species_per_genus`` appends species with only ``rare_specimens``
    barcodes each (numbered after the common ones), which is what the
    taxonomic split draws its unseen set from.
    """
    rng = np.random.default_rng(seed)
    records = []
    for g in range(n_genera):
        genus_anc = rng.choice(BASES, size=length)
        for s in range(species_per_genus + rare_species_per_genus):
            species_anc = mutate(genus_anc, species_divergence, rng)
            count = specimens_per_species if s < species_per_genus else rare_specimens
            for i in range(count):
                seq = "".join(mutate(species_anc, specimen_mutation, rng))
                taxonomy = {
                    "phylum": "Arthropoda", "class": "Insecta", "order": "Synthetica",
                    "family": "Synthidae", "genus": f"G{g:02d}", "species": f"G{g:02d}_s{s:02d}",
                }
                records.append(BarcodeRecord(f"SYN{g:02d}{s:02d}{i:03d}", seq, taxonomy, f"BIN:{g:02d}{s:02d}"))
    return records


def synthetic_zsl(
    n_seen: int = 10,
    n_unseen: int = 3,
    dim: int = 4,
    dna_dim: int = 6,
    per_class: int = 40,
    K: int = 2,
    spread: float = 8.0,
    noise: float = 1.0,
    seed: int = 0,
) -> dict:
    """Gaussian image classes whose unseen means equal the mean of their K
    DNA-nearest seen classes (neighbours found by brute force)."""
    rng = np.random.default_rng(seed)
    img_means = {c: rng.normal(0, spread, dim) for c in range(n_seen)}
    dna_means = {c: rng.normal(0, spread, dna_dim) for c in range(n_seen + n_unseen)}
    anchors = {}
    for c in range(n_seen, n_seen + n_unseen):
        dist = [float(np.linalg.norm(dna_means[c] - dna_means[s])) for s in range(n_seen)]
        anchors[c] = sorted(range(n_seen), key=lambda s: (dist[s], s))[:K]
        img_means[c] = np.mean([img_means[a] for a in anchors[c]], axis=0)
    features, labels = [], []
    for c in range(n_seen + n_unseen):
        features.append(img_means[c] + noise * rng.normal(size=(per_class, dim)))
        labels.extend([c] * per_class)
    return {
        "features": np.vstack(features),
        "labels": np.array(labels),
        "dna_means": dna_means,
        "image_means": img_means,
        "anchors": anchors,
        "seen": list(range(n_seen)),
        "unseen": list(range(n_seen, n_seen + n_unseen)),
    }


def synthetic_zsl_genera(
    n_genera: int = 8,
    species_per_genus: int = 4,
    dim: int = 8,
    dna_dim: int = 6,
    per_class: int = 30,
    genus_spread: float = 10.0,
    species_spread: float = 3.0,
    noise: float = 1.0,
    seed: int = 0,
) -> dict:
    """Zero-shot data where any species may be held out.

    DNA and image means share a genus-level layout: a species' offset from
    its genus centre in image space is a fixed linear map of its DNA offset,
    so congeners are DNA neighbours and carry related image means.
    """
    rng = np.random.default_rng(seed)
    link = rng.normal(size=(dim, dna_dim)) / np.sqrt(dna_dim)
    img_means, dna_means = {}, {}
    for g in range(n_genera):
        dna_centre = rng.normal(0, genus_spread, dna_dim)
        img_centre = rng.normal(0, genus_spread, dim)
        for s in range(species_per_genus):
            c = g * species_per_genus + s
            offset = rng.normal(0, species_spread, dna_dim)
            dna_means[c] = dna_centre + offset
            img_means[c] = img_centre + link @ offset
    n = n_genera * species_per_genus
    features = np.vstack([img_means[c] + noise * rng.normal(size=(per_class, dim)) for c in range(n)])
    return {
        "features": features,
        "labels": np.repeat(np.arange(n), per_class),
        "dna_means": dna_means,
        "image_means": img_means,
    }
