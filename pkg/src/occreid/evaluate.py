"""Retrieval evaluation.

Probes are matched against the gallery by L2 distance between trunk
features. An identity's score under the multi-shot protocol is the
minimum distance over its N gallery images (mean is available as an
alternative); identities are ranked ascending with ties broken by label.
The CMC curve is the fraction of probes whose true identity appears
within the top r ranks; multi-trial runs redraw the gallery per trial
and average the curves pointwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import make_probe_gallery
from .errors import LengthMismatch, UnknownProbeIdentity
from .model import ModelParams, extract_features, preprocess_image
from .rng import SplitMix64, derive_seed

_AGGREGATES = ("min", "mean")


@dataclass(frozen=True)
class EvalReport:
    """CMC curve plus the rank-1/5/10 summary, averaged over trials."""

    shots: int
    trials: int
    cmc: tuple
    rank1: float
    rank5: float
    rank10: float
    per_trial_seeds: tuple


def l2_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"feature lengths differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum()))


def rank_identities(probe_feat, gallery: dict, aggregate: str = "min") -> list:
    """Gallery identities ordered by ascending distance to the probe.

    Each identity's score aggregates its per-image L2 distances (min by
    default); equal scores fall back to ascending identity label.
    """
    if aggregate not in _AGGREGATES:
        raise ValueError(f"aggregate must be one of {_AGGREGATES}, got {aggregate!r}")
    if not gallery:
        raise ValueError("empty gallery")
    scored = []
    for ident in sorted(gallery):
        dists = [l2_distance(probe_feat, g) for g in gallery[ident]]
        score = min(dists) if aggregate == "min" else sum(dists) / len(dists)
        scored.append((score, ident))
    scored.sort()
    return [ident for _, ident in scored]


def _rank_k(cmc: np.ndarray, k: int) -> float:
    return float(cmc[min(k, len(cmc)) - 1] * 100.0)


def cmc_curve(probes, gallery: dict, aggregate: str = "min") -> EvalReport:
    """Single-trial CMC over (feature, identity) probes.

    cmc[r] is the fraction of probes whose true identity sits at rank
    <= r + 1; the last entry is always 1 because every identity is ranked.
    """
    if not probes:
        raise ValueError("no probes")
    shots = len(next(iter(gallery.values())))
    hits = np.zeros(len(gallery))
    for feat, ident in probes:
        if ident not in gallery:
            raise UnknownProbeIdentity(f"probe identity {ident} not in gallery")
        ranked = rank_identities(feat, gallery, aggregate)
        hits[ranked.index(ident)] += 1
    cmc = np.cumsum(hits) / len(probes)
    return EvalReport(
        shots,
        1,
        tuple(float(v) for v in cmc),
        _rank_k(cmc, 1),
        _rank_k(cmc, 5),
        _rank_k(cmc, 10),
        (),
    )


def evaluate(
    params: ModelParams,
    samples,
    shots: int,
    trials: int = 10,
    seed: int = 0,
    aggregate: str = "min",
) -> EvalReport:
    """Multi-trial protocol: trial t redraws the gallery with a generator
    seeded by derive_seed(seed, t) and the curves are averaged pointwise.

    Features are extracted once per sample (deterministic center crop at
    the network's input side) and shared across trials.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    samples = list(samples)
    prepped = [preprocess_image(s.image, params.arch) for s in samples]
    feats = extract_features(params, prepped)
    feat_of = {s.id: feats[i] for i, s in enumerate(samples)}

    curves = []
    trial_seeds = []
    shots_seen = None
    for t in range(trials):
        trial_seed = derive_seed(seed, t)
        trial_seeds.append(trial_seed)
        pg = make_probe_gallery(samples, shots, SplitMix64(trial_seed))
        gallery = {
            ident: [feat_of[s.id] for s in members] for ident, members in pg.gallery.items()
        }
        probes = [(feat_of[s.id], s.identity) for s in pg.probes]
        report = cmc_curve(probes, gallery, aggregate)
        shots_seen = report.shots
        curves.append(report.cmc)
    cmc = np.mean(np.asarray(curves), axis=0)
    return EvalReport(
        shots_seen,
        trials,
        tuple(float(v) for v in cmc),
        _rank_k(cmc, 1),
        _rank_k(cmc, 5),
        _rank_k(cmc, 10),
        tuple(trial_seeds),
    )
