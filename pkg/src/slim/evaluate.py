"""Frozen-encoder evaluation: representation extraction, linear probe, k-NN."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .data import LabeledDataset, SkeletonSequence, resample_linear
from .errors import ValidationError
from .model import SkeletonEncoder


@dataclass
class ProbeConfig:
    epochs: int = 100
    lr: float = 1.0e-2
    weight_decay: float = 0.0
    seed: int = 0


def extract_representations(
    encoder: SkeletonEncoder,
    sequences: list[SkeletonSequence],
    source: str = "cls",
    frames: int = 64,
    batch_size: int = 128,
) -> np.ndarray:
    """Per-sequence feature vectors from a frozen encoder (no masking, no aug)."""
    if source not in ("cls", "patch_mean"):
        raise ValidationError(f"unknown representation source {source!r}")
    encoder.eval()
    reps = []
    with torch.no_grad():
        for lo in range(0, len(sequences), batch_size):
            chunk = sequences[lo : lo + batch_size]
            arr = np.stack(
                [resample_linear(s, frames).coords.astype(np.float32) for s in chunk]
            )
            enc = encoder(torch.from_numpy(arr))
            vec = enc.cls if source == "cls" else enc.patches.mean(dim=1)
            reps.append(vec.numpy())
    return np.concatenate(reps, axis=0)


def dataset_representations(
    encoder: SkeletonEncoder, dataset: LabeledDataset, source: str = "cls", frames: int = 64
) -> tuple[np.ndarray, np.ndarray]:
    reps = extract_representations(encoder, dataset.sequences, source=source, frames=frames)
    return reps, dataset.labels.copy()


def linear_probe(
    train_reps: np.ndarray,
    train_labels: np.ndarray,
    test_reps: np.ndarray,
    test_labels: np.ndarray,
    cfg: ProbeConfig | None = None,
) -> float:
    """Multinomial logistic regression on frozen features; returns test top-1."""
    cfg = cfg or ProbeConfig()
    train_labels = np.asarray(train_labels, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    if train_reps.ndim != 2 or test_reps.ndim != 2:
        raise ValidationError("representations must be 2D (n, dim)")
    if train_reps.shape[1] != test_reps.shape[1]:
        raise ValidationError("train/test feature dimensions differ")
    classes = np.unique(train_labels)
    if len(classes) < 2:
        raise ValidationError("need at least 2 classes to fit a probe")
    n_classes = int(train_labels.max()) + 1

    torch.manual_seed(cfg.seed)
    clf = nn.Linear(train_reps.shape[1], n_classes)
    opt = torch.optim.AdamW(clf.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    x = torch.from_numpy(np.ascontiguousarray(train_reps, dtype=np.float32))
    y = torch.from_numpy(train_labels)
    for epoch in range(cfg.epochs):
        for group in opt.param_groups:
            group["lr"] = 0.5 * cfg.lr * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
        opt.zero_grad()
        loss = nn.functional.cross_entropy(clf(x), y)
        loss.backward()
        opt.step()

    with torch.no_grad():
        logits = clf(torch.from_numpy(np.ascontiguousarray(test_reps, dtype=np.float32)))
        pred = logits.argmax(dim=-1).numpy()
    return float((pred == test_labels).mean())


def knn_retrieve(
    gallery_reps: np.ndarray,
    gallery_labels: np.ndarray,
    query_reps: np.ndarray,
    query_labels: np.ndarray,
    k: int = 1,
) -> float:
    """Cosine-similarity k-NN top-1 accuracy; ties go to the lowest gallery index."""
    if len(gallery_reps) == 0:
        raise ValidationError("gallery is empty")
    if k < 1:
        raise ValidationError("k must be >= 1")
    gallery_labels = np.asarray(gallery_labels, dtype=np.int64)
    query_labels = np.asarray(query_labels, dtype=np.int64)

    def normalize(m):
        m = np.asarray(m, dtype=np.float64)
        norms = np.linalg.norm(m, axis=1, keepdims=True)
        return m / np.maximum(norms, 1e-12)

    sim = normalize(query_reps) @ normalize(gallery_reps).T
    if k == 1:
        pred = gallery_labels[np.argmax(sim, axis=1)]
    else:
        k_eff = min(k, sim.shape[1])
        pred = np.empty(len(query_labels), dtype=np.int64)
        for qi in range(sim.shape[0]):
            # Stable ranking: by similarity descending, index ascending.
            order = np.lexsort((np.arange(sim.shape[1]), -sim[qi]))[:k_eff]
            votes = gallery_labels[order]
            counts = np.bincount(votes)
            best = counts.max()
            # Among tied labels, prefer the one whose best neighbor ranks first.
            for lbl in votes:
                if counts[lbl] == best:
                    pred[qi] = lbl
                    break
    return float((pred == query_labels).mean())
