"""Command-line interface mirroring the HTTP service surface.

Configuration comes from an optional TOML file (``--config``), with

    [store]    root = "corpus-store"
    [pipeline] hash_kind / theta_visual / text_metric / theta_textual
    [ocr]      provider = "sidecar" | "process" | "http", command, url
    [service]  host / port / token

and individual flags override file values. Report-producing commands write
delimited output plus rendered figures into their --out-dir.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

try:
    import tomllib  # Python 3.11+
except ModuleNotFoundError:  # pragma: no cover - 3.10 fallback
    import tomli as tomllib

from .calibration import GridSpec, GroundTruthSet, bench, grid_results_csv, grid_results_json, grid_search
from .hashing import HashKind
from .ocr import ExternalProcessProvider, HttpProvider, LabelCache, OcrProvider, SidecarProvider
from .pipeline import PipelineConfig, SeedImage, batch_query, query, write_candidates_jsonl
from .store import CorpusStore, read_manifest
from .stories import ClusterParams, PolicyCategory, cluster, moderation_report, render_report_csv, stories_to_json


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _pipeline_config(ctx_cfg: dict, hash_kind: str | None,
                     theta_visual: int | None, metric: str | None,
                     theta_textual: float | None) -> PipelineConfig:
    doc = dict(ctx_cfg.get("pipeline", {}))
    if hash_kind is not None:
        doc["hash_kind"] = hash_kind
    if theta_visual is not None:
        doc["theta_visual"] = theta_visual
    if metric is not None:
        doc["text_metric"] = metric
    if theta_textual is not None:
        doc["theta_textual"] = theta_textual
    return PipelineConfig.from_dict(doc)


def _provider(ctx_cfg: dict, name: str | None) -> OcrProvider:
    ocr_cfg = ctx_cfg.get("ocr", {})
    kind = name or ocr_cfg.get("provider", "sidecar")
    if kind == "sidecar":
        return SidecarProvider()
    if kind == "process":
        command = ocr_cfg.get("command")
        if not command:
            raise click.UsageError("[ocr] command required for process provider")
        return ExternalProcessProvider(list(command))
    if kind == "http":
        return HttpProvider(url=ocr_cfg.get("url"),
                            timeout=float(ocr_cfg.get("timeout", 10.0)))
    raise click.UsageError(f"unknown OCR provider {kind!r}")


def _open_store(ctx_cfg: dict, store_path: str | None) -> CorpusStore:
    root = store_path or ctx_cfg.get("store", {}).get("root")
    if not root:
        raise click.UsageError("--store is required (or [store] root in config)")
    return CorpusStore(root)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="TOML configuration file.")
@click.pass_context
def main(ctx: click.Context, config_path: str | None) -> None:
    """Find soft-moderation candidates by visual and textual similarity."""
    ctx.obj = _load_config(config_path)


_store_opt = click.option("--store", "store_path", default=None,
                          help="Corpus store directory.")
_provider_opt = click.option("--provider", "provider_name", default=None,
                             type=click.Choice(["sidecar", "process", "http"]),
                             help="OCR provider (default from config/sidecar).")


@main.command()
@click.argument("manifest", type=click.Path(exists=True))
@_store_opt
@click.pass_context
def ingest(ctx: click.Context, manifest: str, store_path: str | None) -> None:
    """Ingest a JSON-lines manifest of images into the store."""
    store = _open_store(ctx.obj, store_path)
    summary = store.ingest(read_manifest(manifest))
    click.echo(json.dumps(summary.to_dict(), indent=2))
    if summary.failed:
        sys.exit(1)


def _config_options(fn):
    fn = click.option("--hash-kind", default=None,
                      type=click.Choice([k.value for k in HashKind]))(fn)
    fn = click.option("--theta-visual", default=None, type=int)(fn)
    fn = click.option("--metric", default=None,
                      help="Text metric, e.g. jaccard:4 or jaro_winkler.")(fn)
    fn = click.option("--theta-textual", default=None, type=float)(fn)
    return fn


@main.command("query")
@click.option("--image", "image_path", type=click.Path(exists=True),
              default=None, help="Seed image file.")
@click.option("--image-id", default=None, help="Seed image id in the store.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write candidates as JSON-lines.")
@_store_opt
@_provider_opt
@_config_options
@click.pass_context
def query_cmd(ctx: click.Context, image_path: str | None, image_id: str | None,
              out_path: str | None, store_path: str | None,
              provider_name: str | None, hash_kind: str | None,
              theta_visual: int | None, metric: str | None,
              theta_textual: float | None) -> None:
    """Run one seed image through retrieval and text refinement."""
    if bool(image_path) == bool(image_id):
        raise click.UsageError("provide exactly one of --image or --image-id")
    store = _open_store(ctx.obj, store_path)
    config = _pipeline_config(ctx.obj, hash_kind, theta_visual, metric,
                              theta_textual)
    provider = _provider(ctx.obj, provider_name)
    cache = LabelCache()
    store.preload_label_cache(cache)
    if image_id:
        data, path = store.image_payload(image_id)
        seed = SeedImage(query_id=image_id, data=data, path=path,
                         corpus_id=image_id)
    else:
        path = Path(image_path)
        seed = SeedImage(query_id=path.stem, data=path.read_bytes(), path=path)
    candidates, report = query(seed, config, store.indexes[config.hash_kind],
                               provider, cache, store)
    if out_path:
        write_candidates_jsonl(out_path, candidates)
        click.echo(f"wrote {len(candidates)} candidates to {out_path}")
    else:
        for cand in candidates:
            click.echo(json.dumps(cand.to_dict(), sort_keys=True))
    click.echo(json.dumps({"report": report.to_dict()}, indent=2))


@main.command("batch-query")
@click.option("--seed-set", required=True, help="Seed set name in the store.")
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Write candidates as JSON-lines.")
@_store_opt
@_provider_opt
@_config_options
@click.pass_context
def batch_query_cmd(ctx: click.Context, seed_set: str, out_path: str,
                    store_path: str | None, provider_name: str | None,
                    hash_kind: str | None, theta_visual: int | None,
                    metric: str | None, theta_textual: float | None) -> None:
    """Query every member of a seed set and merge the candidates."""
    store = _open_store(ctx.obj, store_path)
    config = _pipeline_config(ctx.obj, hash_kind, theta_visual, metric,
                              theta_textual)
    provider = _provider(ctx.obj, provider_name)
    cache = LabelCache()
    store.preload_label_cache(cache)
    seeds = store.seed_images(seed_set, config.hash_kind)
    result = batch_query(seeds, config, store.indexes[config.hash_kind],
                         provider, cache, store)
    write_candidates_jsonl(out_path, result.candidates)
    accepted = sum(1 for c in result.candidates if c.decision.is_positive)
    click.echo(json.dumps({
        "candidates": len(result.candidates),
        "accepted": accepted,
        "failed_seeds": result.failed_seeds,
        "out": str(out_path),
    }, indent=2))


@main.command()
@click.option("--gt", "gt_path", type=click.Path(exists=True), default=None,
              help="Ground-truth CSV (query_id,candidate_id,is_relevant).")
@click.option("--synthetic", is_flag=True,
              help="Use the built-in synthetic ground truth instead of a store.")
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--top", default=10, help="Rows to print.")
@_store_opt
@click.pass_context
def calibrate(ctx: click.Context, gt_path: str | None, synthetic: bool,
              out_dir: str, top: int, store_path: str | None) -> None:
    """Grid-search thresholds and metrics; write rankings and a figure."""
    from .reports import render_grid_figure

    if synthetic == bool(gt_path):
        raise click.UsageError("provide either --gt with --store, or --synthetic")
    if synthetic:
        from .synthetic import build_grid_ground_truth

        corpus, gt, _ = build_grid_ground_truth()
    else:
        corpus = _open_store(ctx.obj, store_path)
        gt = GroundTruthSet.from_csv(gt_path)
    results = grid_search(GridSpec(), gt, corpus)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "grid_results.csv").write_text(grid_results_csv(results))
    (out / "grid_results.json").write_text(grid_results_json(results))
    figure = render_grid_figure(results, out / "grid_f1.png")
    click.echo(f"wrote {out / 'grid_results.csv'}, {out / 'grid_results.json'}, "
               f"{figure}")
    click.echo(f"{'config':<44} {'f1':>8} {'prec':>8} {'rec':>8}")
    for config, scores in results[:top]:
        click.echo(f"{config.describe():<44} {scores.f1:>8.4f} "
                   f"{scores.precision:>8.4f} {scores.recall:>8.4f}")


@main.command()
@click.option("--eps", default=90, help="Clustering radius.")
@click.option("--min-cluster-size", default=1)
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--flags-csv", type=click.Path(exists=True), default=None,
              help="CSV image_id,moderated for the rate report.")
@click.option("--categories-csv", type=click.Path(exists=True), default=None,
              help="CSV story_id,category to tag stories before reporting.")
@_store_opt
@click.pass_context
def stories(ctx: click.Context, eps: int, min_cluster_size: int, out_dir: str,
            flags_csv: str | None, categories_csv: str | None,
            store_path: str | None) -> None:
    """Cluster the corpus into image stories and report moderation rates."""
    import csv as _csv

    from .reports import render_category_figure

    store = _open_store(ctx.obj, store_path)
    hashes = [(image_id, store.hash_for(image_id, HashKind.PDQ256))
              for image_id in store.image_ids()]
    built = cluster(hashes, ClusterParams(eps=eps,
                                          min_cluster_size=min_cluster_size))
    if categories_csv:
        with open(categories_csv, newline="") as fh:
            mapping = {int(r[0]): PolicyCategory(r[1])
                       for r in _csv.reader(fh) if r and r[0] != "story_id"}
        built = [s.with_category(mapping[s.story_id])
                 if s.story_id in mapping else s for s in built]
    flags = {image_id: False for image_id, _ in hashes}
    if flags_csv:
        with open(flags_csv, newline="") as fh:
            for row in _csv.reader(fh):
                if row and row[0] != "image_id":
                    flags[row[0]] = row[1].strip() in ("1", "true", "True")
    rows = moderation_report(built, flags)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "stories.json").write_text(stories_to_json(built))
    (out / "moderation_report.csv").write_text(render_report_csv(rows))
    figure = render_category_figure(rows, out / "moderation_by_category.png")
    click.echo(f"{len(built)} stories over {len(hashes)} images")
    click.echo(f"wrote {out / 'stories.json'}, "
               f"{out / 'moderation_report.csv'}, {figure}")


@main.command("bench")
@click.option("--sample", "sample_size", default=50,
              help="Images to sample from the store.")
@click.option("--runs", default=5)
@click.option("--out-dir", type=click.Path(), required=True)
@_store_opt
@_provider_opt
@click.pass_context
def bench_cmd(ctx: click.Context, sample_size: int, runs: int, out_dir: str,
              store_path: str | None, provider_name: str | None) -> None:
    """Time hashing, indexing, and OCR over a corpus sample."""
    from .reports import render_latency_figure

    store = _open_store(ctx.obj, store_path)
    provider = _provider(ctx.obj, provider_name)
    ids = store.image_ids()[:sample_size]
    samples = [store.image_payload(image_id) for image_id in ids]
    report = bench(samples, provider, runs=runs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.json").write_text(json.dumps(report.to_dict(), indent=2))
    (out / "bench_table.txt").write_text(report.comparison_table() + "\n")
    figure = render_latency_figure(report, out / "ocr_latency.png")
    click.echo(report.comparison_table())
    click.echo(f"wrote {out / 'bench.json'}, {out / 'bench_table.txt'}, {figure}")


@main.command()
@click.option("--host", default=None)
@click.option("--port", default=None, type=int)
@click.option("--token", default=None, help="Bearer token (default: env).")
@_store_opt
@_provider_opt
@click.pass_context
def serve(ctx: click.Context, host: str | None, port: int | None,
          token: str | None, store_path: str | None,
          provider_name: str | None) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    service_cfg = ctx.obj.get("service", {})
    store = _open_store(ctx.obj, store_path)
    provider = _provider(ctx.obj, provider_name)
    config = _pipeline_config(ctx.obj, None, None, None, None)
    app = create_app(store, provider=provider, config=config,
                     token=token if token is not None
                     else service_cfg.get("token"))
    uvicorn.run(app, host=host or service_cfg.get("host", "127.0.0.1"),
                port=port or int(service_cfg.get("port", 8080)))


@main.command("gen-corpus")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--seed", default=0, type=int)
@click.option("--variants", default=40)
@click.option("--twins", default=10)
@click.option("--distractors", default=150)
def gen_corpus(out_dir: str, seed: int, variants: int, twins: int,
               distractors: int) -> None:
    """Generate the planted demo corpus with known ground truth."""
    from .synthetic import build_planted_corpus

    planted = build_planted_corpus(Path(out_dir), seed=seed,
                                   n_variants=variants, n_twins=twins,
                                   n_distractors=distractors)
    click.echo(json.dumps({
        "root": str(planted.root),
        "manifest": str(planted.manifest_path),
        "seeds": len(planted.seeds),
        "variants": len(planted.variant_ids),
        "twins": len(planted.twin_ids),
        "distractors": len(planted.distractor_ids),
    }, indent=2))


if __name__ == "__main__":
    main()
