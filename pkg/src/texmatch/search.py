"""1:N identification over a gallery with multi-template score fusion.

A gallery row binds a subject id and variant tag to a template. A query
may carry several variants; each one matches the same subject's variant
and the per-variant scores fuse by weighted mean over the variants both
sides share. Rankings sort by fused score descending with the subject id
as a deterministic tiebreaker.
"""

from __future__ import annotations

import csv
import dataclasses
import statistics
import time
from concurrent.futures import ThreadPoolExecutor

from .errors import ValidationError
from .matcher import GraphMatchParams, match_templates
from .template import TextureTemplate, VARIANTS, read_template

MANIFEST_FIELDS = ("subject_id", "variant", "template_path")


@dataclasses.dataclass
class GalleryEntry:
    subject_id: str
    templates: dict[str, TextureTemplate]


@dataclasses.dataclass
class Gallery:
    """Subjects with one template per enrolled variant."""

    entries: list[GalleryEntry]

    def __post_init__(self):
        ids = [e.subject_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate subject ids in gallery")
        lengths = {t.descriptor_len
                   for e in self.entries for t in e.templates.values()}
        if len(lengths) > 1:
            raise ValidationError(
                f"gallery mixes descriptor lengths {sorted(lengths)}")

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def from_manifest(cls, path) -> "Gallery":
        """Load a CSV manifest of subject_id, variant, template_path rows.

        A leading header row naming those columns is skipped. Relative
        template paths resolve against the manifest's directory.
        """
        import os

        base = os.path.dirname(os.fspath(path))
        by_subject: dict[str, dict[str, TextureTemplate]] = {}
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row:
                    continue
                if tuple(x.strip() for x in row) == MANIFEST_FIELDS:
                    continue
                if len(row) != 3:
                    raise ValidationError(f"manifest row {row!r} needs 3 fields")
                subject, variant, tpath = (x.strip() for x in row)
                if variant not in VARIANTS:
                    raise ValidationError(f"unknown variant {variant!r}")
                if not os.path.isabs(tpath):
                    tpath = os.path.join(base, tpath)
                bucket = by_subject.setdefault(subject, {})
                if variant in bucket:
                    raise ValidationError(
                        f"subject {subject} enrolls variant {variant} twice")
                bucket[variant] = read_template(tpath)
        entries = [GalleryEntry(sid, tpls)
                   for sid, tpls in sorted(by_subject.items())]
        return cls(entries=entries)


@dataclasses.dataclass(frozen=True)
class RankedCandidate:
    subject_id: str
    score: float
    per_variant: dict[str, float]


@dataclasses.dataclass(frozen=True)
class LatencyStats:
    mean_ms: float
    median_ms: float
    p95_ms: float
    count: int


@dataclasses.dataclass(frozen=True)
class SearchResult:
    """One query's full ranking plus comparison latency statistics."""

    query_id: str
    ranking: tuple[RankedCandidate, ...]
    latency: LatencyStats


def fuse_scores(scores: list[float], weights: list[float] | None = None) -> float:
    """Weighted mean of per-variant scores.

    Weights default to uniform; they are renormalized over the scores
    actually present, so a missing variant costs its weight share rather
    than dragging the mean down.
    """
    if not scores:
        raise ValidationError("cannot fuse an empty score list")
    if weights is None:
        weights = [1.0] * len(scores)
    if len(weights) != len(scores):
        raise ValidationError(
            f"{len(weights)} weights for {len(scores)} scores")
    total = sum(weights)
    if total <= 0:
        raise ValidationError("weights must sum to a positive value")
    return sum(w * s for w, s in zip(weights, scores)) / total


def _latency_stats(times_ms: list[float]) -> LatencyStats:
    if not times_ms:
        return LatencyStats(0.0, 0.0, 0.0, 0)
    ordered = sorted(times_ms)
    p95 = ordered[min(len(ordered) - 1, int(0.95 * len(ordered)))]
    return LatencyStats(mean_ms=statistics.fmean(times_ms),
                        median_ms=statistics.median(times_ms),
                        p95_ms=p95, count=len(times_ms))


def search(query: dict[str, TextureTemplate], gallery: Gallery,
           params: GraphMatchParams | None = None,
           weights: dict[str, float] | None = None,
           threads: int = 1, query_id: str = "") -> SearchResult:
    """Rank every gallery subject against a query's variant templates.

    Subjects sharing no variant with the query score 0. Scores are
    deterministic regardless of the thread count; threads only spread
    subjects over a pool.
    """
    if not query:
        raise ValidationError("query holds no templates")
    if params is None:
        params = GraphMatchParams()

    def one_subject(entry: GalleryEntry):
        per_variant: dict[str, float] = {}
        times: list[float] = []
        for variant, tpl in query.items():
            ref = entry.templates.get(variant)
            if ref is None:
                continue
            t0 = time.perf_counter()
            score, _ = match_templates(tpl, ref, params)
            times.append((time.perf_counter() - t0) * 1e3)
            per_variant[variant] = score
        if per_variant:
            shared = sorted(per_variant)
            fused = fuse_scores([per_variant[v] for v in shared],
                                [weights.get(v, 1.0) for v in shared]
                                if weights else None)
        else:
            fused = 0.0
        return RankedCandidate(entry.subject_id, fused, per_variant), times

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(one_subject, gallery.entries))
    else:
        outcomes = [one_subject(e) for e in gallery.entries]

    all_times = [t for _, times in outcomes for t in times]
    ranking = sorted((cand for cand, _ in outcomes),
                     key=lambda c: (-c.score, c.subject_id))
    return SearchResult(query_id=query_id, ranking=tuple(ranking),
                        latency=_latency_stats(all_times))


@dataclasses.dataclass(frozen=True)
class CmcCurve:
    """Cumulative match characteristic: identification rate by rank.

    missing lists query ids whose true mate never appears among that
    query's candidates; they stay in the denominator as permanent misses.
    """

    rates: tuple[float, ...]
    n_queries: int
    missing: tuple[str, ...]

    def rate_at(self, rank: int) -> float:
        if not 1 <= rank <= len(self.rates):
            raise ValidationError(f"rank {rank} outside 1..{len(self.rates)}")
        return self.rates[rank - 1]


def cmc(results: list[SearchResult], true_mates: dict[str, str],
        max_rank: int | None = None) -> CmcCurve:
    """Identification rates at ranks 1..max_rank.

    Every result's query id must have a true mate entry. rate[k-1] is
    the fraction of queries whose mate ranks at or above k.
    """
    if not results:
        raise ValidationError("no search results to score")
    longest = max(len(r.ranking) for r in results)
    k_max = max_rank if max_rank is not None else max(longest, 1)
    if k_max < 1:
        raise ValidationError(f"max_rank must be positive, got {k_max}")
    ranks: list[int | None] = []
    missing: list[str] = []
    for result in results:
        if result.query_id not in true_mates:
            raise ValidationError(f"no true mate for query {result.query_id!r}")
        mate = true_mates[result.query_id]
        position = None
        for idx, cand in enumerate(result.ranking):
            if cand.subject_id == mate:
                position = idx + 1
                break
        if position is None:
            missing.append(result.query_id)
        ranks.append(position)
    n = len(results)
    rates = tuple(sum(1 for r in ranks if r is not None and r <= k) / n
                  for k in range(1, k_max + 1))
    return CmcCurve(rates=rates, n_queries=n, missing=tuple(missing))


def write_cmc_csv(path, curve: CmcCurve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "rate"])
        for k, rate in enumerate(curve.rates, start=1):
            writer.writerow([k, f"{rate:.6f}"])
