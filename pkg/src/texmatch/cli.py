"""Command-line entry points.

Subcommands cover the full pipeline: extract templates from images,
match template pairs, run 1:N searches, score them (cmc, roc), generate
synthetic data, and benchmark comparison latency. Report-style commands
(cmc, roc, bench) render a PNG figure next to their delimited output
unless --no-fig is given.

Exit codes: 0 success, 2 command-line usage errors, 3 I/O errors,
4 malformed files or contract violations.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import TexmatchError, ValidationError
from .matcher import GraphMatchParams, match_templates_timed
from .pgmio import read_pgm, write_pgm
from .ridgeflow import estimate_orientation_field, segment_roi, write_field_csv
from .search import (Gallery, LatencyStats, RankedCandidate, SearchResult,
                     cmc, search, write_cmc_csv)
from .synth import SynthConfig, planted_pair, random_template
from .template import (DESCRIPTOR_LENS, ExtractionConfig, TextureTemplate,
                       build_template, read_template, write_template)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DATA = 4


def _load_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _load_params(path) -> tuple[GraphMatchParams, dict[str, float] | None]:
    """Read matcher parameters and fusion weights from a TOML file."""
    if path is None:
        return GraphMatchParams(), None
    data = _load_toml(path)
    matcher_keys = {f.name for f in dataclasses.fields(GraphMatchParams)}
    section = data.get("matcher", {})
    unknown = set(section) - matcher_keys
    if unknown:
        raise ValidationError(f"unknown matcher parameters {sorted(unknown)}")
    params = GraphMatchParams(**section)
    weights = data.get("fusion", {}).get("weights")
    if weights is not None:
        weights = {str(k): float(v) for k, v in weights.items()}
    return params, weights


def _patch_len(desc_len: int) -> int:
    if desc_len not in DESCRIPTOR_LENS:
        raise ValidationError(
            f"descriptor length {desc_len} not in {DESCRIPTOR_LENS}")
    return desc_len // 3


def _fig_path(out_path) -> str:
    return os.path.splitext(os.fspath(out_path))[0] + ".png"


def _write_json(payload: dict, out_path) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out_path is None:
        print(text)
    else:
        with open(out_path, "w", encoding="ascii") as fh:
            fh.write(text + "\n")


def cmd_extract(args) -> int:
    image = read_pgm(args.image)
    field = estimate_orientation_field(image)
    roi = segment_roi(image, field, args.mag_threshold)
    config = ExtractionConfig(stride=args.stride, border_margin=args.border,
                              dual=(args.kind == "latent"),
                              patch_len=_patch_len(args.desc_len),
                              projection_seed=args.projection_seed)
    template = build_template(image, roi, field, config, variant=args.variant)
    write_template(args.out, template)
    if args.field_csv:
        write_field_csv(args.field_csv, field, roi)
    print(f"wrote {args.out}: {template.n_minutiae} minutiae, "
          f"descriptor length {template.descriptor_len}")
    return EXIT_OK


def cmd_match(args) -> int:
    latent = read_template(args.latent)
    reference = read_template(args.ref)
    params, _ = _load_params(args.params)
    score, final, timings = match_templates_timed(latent, reference, params)
    payload = {
        "score": score,
        "n_final": len(final),
        "correspondences": [
            {"i1": c.i1, "i2": c.i2, "desc_sim": c.desc_sim} for c in final],
        "timings": {k: round(v, 4) for k, v in timings.items()},
    }
    if args.json or args.out:
        _write_json(payload, args.out)
    else:
        print(f"score {score:.4f} from {len(final)} correspondences")
    return EXIT_OK


def _load_queries(query_dir) -> dict[str, dict[str, TextureTemplate]]:
    """Group <query>.<anything>.ftt files by their stem before the first dot.

    The variant comes from each template's header, not the filename.
    """
    queries: dict[str, dict[str, TextureTemplate]] = {}
    names = sorted(n for n in os.listdir(query_dir) if n.endswith(".ftt"))
    if not names:
        raise ValidationError(f"no .ftt files in {query_dir}")
    for name in names:
        qid = name.split(".")[0]
        template = read_template(os.path.join(query_dir, name))
        bucket = queries.setdefault(qid, {})
        if template.variant in bucket:
            raise ValidationError(
                f"query {qid} has two {template.variant!r} templates")
        bucket[template.variant] = template
    return queries


def cmd_search(args) -> int:
    queries = _load_queries(args.query_dir)
    gallery = Gallery.from_manifest(args.gallery)
    params, weights = _load_params(args.params)
    out_queries = []
    for qid in sorted(queries):
        result = search(queries[qid], gallery, params=params, weights=weights,
                        threads=args.threads, query_id=qid)
        ranking = result.ranking
        if args.topk > 0:
            ranking = ranking[:args.topk]
        out_queries.append({
            "query_id": qid,
            "candidates": [
                {"subject_id": c.subject_id, "score": c.score,
                 "per_variant": c.per_variant} for c in ranking],
            "latency": dataclasses.asdict(result.latency),
        })
    _write_json({"gallery_size": len(gallery), "queries": out_queries},
                args.out)
    return EXIT_OK


def _results_from_json(path) -> list[SearchResult]:
    with open(path, encoding="ascii") as fh:
        data = json.load(fh)
    results = []
    for q in data["queries"]:
        ranking = tuple(
            RankedCandidate(c["subject_id"], float(c["score"]),
                            dict(c.get("per_variant", {})))
            for c in q["candidates"])
        lat = q.get("latency", {})
        results.append(SearchResult(
            query_id=q["query_id"], ranking=ranking,
            latency=LatencyStats(lat.get("mean_ms", 0.0),
                                 lat.get("median_ms", 0.0),
                                 lat.get("p95_ms", 0.0),
                                 lat.get("count", 0))))
    return results


def _read_two_column_csv(path, header: tuple[str, str]) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            if tuple(x.strip() for x in row) == header:
                continue
            if len(row) != 2:
                raise ValidationError(f"row {row!r} needs 2 fields")
            out[row[0].strip()] = row[1].strip()
    return out


def cmd_cmc(args) -> int:
    results = _results_from_json(args.results)
    mates = _read_two_column_csv(args.mates, ("query_id", "mate_id"))
    curve = cmc(results, mates, max_rank=args.max_rank)
    write_cmc_csv(args.out, curve)
    if curve.missing:
        print(f"{len(curve.missing)} queries without a retrievable mate: "
              + ", ".join(curve.missing), file=sys.stderr)
    if not args.no_fig:
        from .figures import save_cmc_figure

        save_cmc_figure(curve, _fig_path(args.out))
    print(f"rank-1 rate {curve.rates[0]:.4f} over {curve.n_queries} queries")
    return EXIT_OK


def _read_truth_csv(path) -> dict[int, int]:
    mapping = _read_two_column_csv(path, ("latent_idx", "ref_idx"))
    return {int(k): int(v) for k, v in mapping.items()}


def roc_table(genuine: np.ndarray, impostor: np.ndarray,
              n_thresholds: int = 256) -> list[tuple[float, float, float]]:
    """(threshold, tpr, fpr) rows over the pooled score range."""
    if genuine.size == 0 or impostor.size == 0:
        raise ValidationError("both genuine and impostor scores are required")
    lo = min(genuine.min(), impostor.min())
    hi = max(genuine.max(), impostor.max())
    rows = []
    for thr in np.linspace(lo, hi, n_thresholds):
        tpr = float(np.mean(genuine >= thr))
        fpr = float(np.mean(impostor >= thr))
        rows.append((float(thr), tpr, fpr))
    return rows


def cmd_roc(args) -> int:
    pairs = []
    with open(args.pairs, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            if tuple(x.strip() for x in row) == ("latent", "reference", "truth"):
                continue
            if len(row) != 3:
                raise ValidationError(f"pairs row {row!r} needs 3 fields")
            pairs.append(tuple(x.strip() for x in row))
    if len(pairs) < 2:
        raise ValidationError("need at least 2 pairs to form impostor scores")
    base = os.path.dirname(os.fspath(args.pairs))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    loaded = [(read_template(resolve(lp)), read_template(resolve(rp)),
               _read_truth_csv(resolve(tp))) for lp, rp, tp in pairs]
    genuine = []
    for lat, ref, truth in loaded:
        for li, ri in truth.items():
            genuine.append(float(
                lat.descriptors[li].astype(np.float64)
                @ ref.descriptors[ri].astype(np.float64)))
    rng = np.random.default_rng(args.seed)
    impostor = []
    for k, (lat, _, truth) in enumerate(loaded):
        other_ref = loaded[(k + 1) % len(loaded)][1]
        sims = (lat.descriptors[sorted(truth)].astype(np.float64)
                @ other_ref.descriptors.astype(np.float64).T).ravel()
        impostor.append(sims)
    impostor = np.concatenate(impostor) if impostor else np.array([])
    if impostor.size > args.max_impostors:
        impostor = rng.choice(impostor, size=args.max_impostors, replace=False)
    genuine = np.asarray(genuine)

    rows = roc_table(genuine, impostor)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "tpr", "fpr"])
        for thr, tpr, fpr in rows:
            writer.writerow([f"{thr:.6f}", f"{tpr:.6f}", f"{fpr:.6f}"])
    if not args.no_fig:
        from .figures import save_roc_figure

        fprs = [max(r[2], 1e-6) for r in rows]
        save_roc_figure(fprs, [r[1] for r in rows], _fig_path(args.out))
    sep = float(genuine.mean() - impostor.mean())
    print(f"{genuine.size} genuine / {impostor.size} impostor scores, "
          f"mean separation {sep:.4f}")
    return EXIT_OK


def _synth_config_from_toml(path) -> SynthConfig:
    if path is None:
        return SynthConfig()
    data = _load_toml(path)
    extraction = ExtractionConfig(**data.pop("extraction", {}))
    synth_keys = {f.name for f in dataclasses.fields(SynthConfig)}
    unknown = set(data) - synth_keys
    if unknown:
        raise ValidationError(f"unknown synth settings {sorted(unknown)}")
    if "rotation_range" in data:
        lo, hi = data["rotation_range"]
        data["rotation_range"] = (float(lo), float(hi))
    return SynthConfig(extraction=extraction, **data)


def cmd_synth(args) -> int:
    config = _synth_config_from_toml(args.config)
    os.makedirs(args.out_dir, exist_ok=True)
    manifest_rows = []
    mates_rows = []
    for k in range(args.count):
        cfg_k = dataclasses.replace(config, seed=args.seed + k)
        image, pair = planted_pair(cfg_k)
        sid = f"ref_{k:04d}"
        qid = f"lat_{k:04d}"
        write_pgm(os.path.join(args.out_dir, f"{sid}.pgm"), image)
        write_template(os.path.join(args.out_dir, f"{sid}.ftt"),
                       pair.reference)
        write_template(os.path.join(args.out_dir, f"{qid}.ftt"), pair.latent)
        with open(os.path.join(args.out_dir, f"{qid}.truth.csv"), "w",
                  newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["latent_idx", "ref_idx"])
            for li in sorted(pair.truth):
                writer.writerow([li, pair.truth[li]])
        manifest_rows.append((sid, pair.reference.variant, f"{sid}.ftt"))
        mates_rows.append((qid, sid))
    with open(os.path.join(args.out_dir, "gallery_manifest.csv"), "w",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "variant", "template_path"])
        writer.writerows(manifest_rows)
    with open(os.path.join(args.out_dir, "mates.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "mate_id"])
        writer.writerows(mates_rows)
    print(f"wrote {args.count} planted pairs to {args.out_dir}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from threadpoolctl import threadpool_limits

    params, _ = _load_params(args.params)
    if args.latent and args.ref:
        latent = read_template(args.latent)
        reference = read_template(args.ref)
    elif args.latent or args.ref:
        raise ValidationError("--latent and --ref must be given together")
    else:
        latent = random_template("latent", args.latent_points, args.desc_len,
                                 seed=args.seed)
        reference = random_template("reference", args.ref_points,
                                    args.desc_len, seed=args.seed + 1)

    times_ms: list[float] = []
    stage_totals = {"sim_ms": 0.0, "norm_ms": 0.0, "topn_ms": 0.0,
                    "graph_ms": 0.0}
    with threadpool_limits(limits=1):  # honest single-thread numbers
        for _ in range(5):
            match_templates_timed(latent, reference, params)
        score = None
        n_final = None
        for _ in range(args.comparisons):
            t0 = time.perf_counter()
            score, final, timings = match_templates_timed(latent, reference,
                                                          params)
            times_ms.append((time.perf_counter() - t0) * 1e3)
            n_final = len(final)
            for key in stage_totals:
                stage_totals[key] += timings[key]

    ordered = sorted(times_ms)
    n = len(ordered)
    payload = {
        "comparisons": n,
        "latent_minutiae": latent.n_minutiae,
        "reference_minutiae": reference.n_minutiae,
        "descriptor_len": latent.descriptor_len,
        "mean_ms": sum(ordered) / n,
        "median_ms": ordered[n // 2],
        "p95_ms": ordered[min(n - 1, int(0.95 * n))],
        "score": score,
        "n_final": n_final,
        "stage_means_ms": {k: v / n for k, v in stage_totals.items()},
    }
    _write_json(payload, args.out)
    if not args.no_fig and args.out is not None:
        from .figures import save_latency_figure

        save_latency_figure(times_ms, _fig_path(args.out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="texmatch",
        description="Texture-template fingerprint matching toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract a template from a PGM image")
    p.add_argument("--image", required=True)
    p.add_argument("--kind", choices=("latent", "reference"), required=True)
    p.add_argument("--variant", choices=("raw", "e1", "e2", "t"),
                   default="raw")
    p.add_argument("--stride", type=int, default=32)
    p.add_argument("--border", type=int, default=48)
    p.add_argument("--desc-len", type=int, default=192,
                   help="template descriptor length (96, 192, or 384)")
    p.add_argument("--mag-threshold", type=float, default=None)
    p.add_argument("--projection-seed", type=int,
                   default=ExtractionConfig.projection_seed)
    p.add_argument("--field-csv", default=None,
                   help="also dump the orientation field/ROI as CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("match", help="match a latent against a reference")
    p.add_argument("--latent", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--params", default=None, help="TOML parameter file")
    p.add_argument("--json", action="store_true",
                   help="emit a JSON report on stdout")
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("search", help="1:N search of queries against a gallery")
    p.add_argument("--query-dir", required=True)
    p.add_argument("--gallery", required=True, help="manifest CSV")
    p.add_argument("--params", default=None)
    p.add_argument("--topk", type=int, default=0,
                   help="truncate each ranking (0 keeps all)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("cmc", help="identification-rate curve from results")
    p.add_argument("--results", required=True, help="search output JSON")
    p.add_argument("--mates", required=True, help="query_id,mate_id CSV")
    p.add_argument("--max-rank", type=int, default=None)
    p.add_argument("--out", required=True, help="rank,rate CSV")
    p.add_argument("--no-fig", action="store_true")
    p.set_defaults(func=cmd_cmc)

    p = sub.add_parser("roc", help="descriptor ROC from planted pairs")
    p.add_argument("--pairs", required=True,
                   help="CSV of latent,reference,truth paths")
    p.add_argument("--max-impostors", type=int, default=200000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="threshold,tpr,fpr CSV")
    p.add_argument("--no-fig", action="store_true")
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("synth", help="generate planted reference/latent pairs")
    p.add_argument("--config", default=None, help="TOML synthesis settings")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="comparison latency benchmark")
    p.add_argument("--comparisons", type=int, default=1000)
    p.add_argument("--latent", default=None, help="latent template file")
    p.add_argument("--ref", default=None, help="reference template file")
    p.add_argument("--latent-points", type=int, default=120,
                   help="grid points for the synthetic latent (x2 duals)")
    p.add_argument("--ref-points", type=int, default=600)
    p.add_argument("--desc-len", type=int, default=192)
    p.add_argument("--params", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--no-fig", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TexmatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
