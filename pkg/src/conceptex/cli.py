"""Command line entry point wiring the pipeline end to end.

Precedence for every option: explicit flag > config file value > built-in
default. The config file is a flat JSON object keyed by the flag names
(dashes or underscores both accepted). Environment variables with the
CONCEPTEX_ prefix override flags in CI.

Exit codes: 0 success, 2 missing prerequisite artifact, 3 validation failure.
Failures emit a one-line JSON error report on stderr; outputs are written
atomically (temp file + rename).
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .causal import DiscreteSCM, ObservedJointKXS, ObservedJointXPS, backdoor_estimate
from .causal import frontdoor_estimate, interventional_truth, verify_identities
from .classifier import ClassifierConfig, load_classifier, save_classifier, train_classifier
from .corpus import DatasetSplit, EntityRecord, ingest, make_splits, serialize
from .evaluation import (
    bias_rate,
    export_review_csv,
    pooled_new_count,
    score_run,
)
from .extractor import (
    ExtractorConfig,
    assemble_prompted_input,
    extract_concepts,
    load_extractor,
    save_extractor,
    train_extractor,
)
from .io_utils import read_json, read_jsonl, write_json, write_jsonl
from .taxonomy import Taxonomy, induce_taxonomy
from .corpus import build_input


def _fail(verb: str, code: int, message: str) -> None:
    sys.stderr.write(json.dumps({"verb": verb, "exit_code": code, "error": message}) + "\n")
    sys.exit(code)


def pipeline_command(fn):
    """Map internal errors onto the documented exit codes with a JSON report."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        verb = fn.__name__.removesuffix("_cmd").replace("_", "-")
        try:
            return fn(*args, **kwargs)
        except FileNotFoundError as exc:
            _fail(verb, 2, f"missing prerequisite artifact: {exc.filename or exc}")
        except (ValueError, KeyError) as exc:
            _fail(verb, 3, str(exc))

    return wrapper


def _load_config(config_path: str | None) -> dict:
    if not config_path:
        return {}
    if not Path(config_path).exists():
        raise FileNotFoundError(config_path)
    cfg = read_json(config_path)
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a flat JSON object")
    return {str(k).replace("-", "_"): v for k, v in cfg.items()}


def _resolve(ctx: click.Context, cfg: dict, **values):
    """Apply flag > config file > default precedence per option."""
    out = {}
    for name, flag_value in values.items():
        source = ctx.get_parameter_source(name)
        if source == click.core.ParameterSource.DEFAULT and name in cfg:
            out[name] = cfg[name]
        else:
            out[name] = flag_value
    return out


def _require(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(p))
    return p


def _load_records(path: str | Path) -> list[EntityRecord]:
    _require(path, "records")
    return ingest(path, format="jsonl")


def _load_taxonomy(path: str | Path) -> Taxonomy:
    _require(path, "taxonomy")
    return Taxonomy.from_json(read_json(path))


def _split_from_manifest(records: list[EntityRecord], manifest: dict) -> DatasetSplit:
    by_name: dict[str, list[EntityRecord]] = {}
    for rec in records:
        by_name.setdefault(rec.entity, []).append(rec)

    def collect(names):
        out = []
        for name in names:
            if name not in by_name:
                raise ValueError(f"split manifest references unknown entity {name!r}")
            out.extend(by_name[name])
        return out

    return DatasetSplit(
        train=collect(manifest["train"]),
        validation=collect(manifest["validation"]),
        test=collect(manifest["test"]),
        seed=manifest.get("seed", 0),
    )


def _obtain_split(records, split_manifest, test_size, seed) -> DatasetSplit:
    if split_manifest and Path(split_manifest).exists():
        return _split_from_manifest(records, read_json(split_manifest))
    split = make_splits(records, test_size=test_size, seed=seed)
    if split_manifest:
        write_json(split_manifest, split.manifest())
    return split


@click.group()
@click.version_option(__version__)
def cli() -> None:
    """Concept extraction pipeline: taxonomy induction, topic prompting,
    pointer-network span decoding and causal verification."""


@cli.command("ingest")
@click.option("--config", "config_path", default=None, help="Flat JSON config file.")
@click.option("--input", "input_path", required=True, help="KG dump (jsonl or tsv).")
@click.option("--format", "fmt", default="jsonl", show_default=True,
              type=click.Choice(["jsonl", "tsv"]))
@click.option("--output", required=True, help="Validated records JSONL.")
@click.option("--quarantine", default=None, help="Quarantine sidecar path.")
@click.option("--single-gold", is_flag=True, default=False, show_default=True,
              help="Keep one random gold concept per record.")
@click.option("--seed", default=0, show_default=True)
@click.pass_context
@pipeline_command
def ingest_cmd(ctx, config_path, input_path, fmt, output, quarantine, single_gold, seed):
    """Validate a knowledge-graph dump into typed records."""
    cfg = _load_config(config_path)
    opts = _resolve(ctx, cfg, fmt=fmt, quarantine=quarantine, single_gold=single_gold, seed=seed)
    _require(input_path, "input corpus")
    records = ingest(
        input_path,
        format=opts["fmt"],
        quarantine_path=opts["quarantine"],
        single_gold=opts["single_gold"],
        seed=opts["seed"],
    )
    serialize(records, output)
    click.echo(f"ingested {len(records)} records -> {output}")


@cli.command("build-taxonomy")
@click.option("--config", "config_path", default=None)
@click.option("--records", "records_path", required=True)
@click.option("--top-n", default=100, show_default=True)
@click.option("--delta", default=1.0, show_default=True)
@click.option("--k-min", default=3, show_default=True)
@click.option("--k-max", default=30, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--label-map", "label_map_path", default=None,
              help="JSON {cluster_id: topic name}.")
@click.option("--output", required=True)
@click.pass_context
@pipeline_command
def build_taxonomy_cmd(ctx, config_path, records_path, top_n, delta, k_min, k_max, seed,
                       label_map_path, output):
    """Induce the topic taxonomy from typical concepts."""
    cfg = _load_config(config_path)
    opts = _resolve(ctx, cfg, top_n=top_n, delta=delta, k_min=k_min, k_max=k_max, seed=seed)
    records = _load_records(records_path)
    label_map = None
    if label_map_path:
        label_map = {int(k): v for k, v in read_json(_require(label_map_path, "label map")).items()}
    from .taxonomy import concept_coverage, select_typical_concepts

    nodes = select_typical_concepts(records, opts["top_n"])
    coverage = concept_coverage(records, nodes)
    taxonomy = induce_taxonomy(
        records,
        top_n=opts["top_n"],
        delta=opts["delta"],
        k_range=(opts["k_min"], opts["k_max"]),
        seed=opts["seed"],
        label_map=label_map,
    )
    write_json(output, taxonomy.to_json())
    click.echo(
        f"taxonomy with k={taxonomy.k} -> {output} "
        f"({len(nodes)} typical concepts covering {coverage:.2%} of labeled entities)"
    )


def _classifier_options(fn):
    options = [
        click.option("--epochs", default=2, show_default=True),
        click.option("--learning-rate", default=3e-5, show_default=True),
        click.option("--embedding-dim", default=64, show_default=True),
        click.option("--hidden-dim", default=128, show_default=True),
        click.option("--num-layers", default=2, show_default=True),
        click.option("--num-heads", default=4, show_default=True),
        click.option("--max-len", default=128, show_default=True),
        click.option("--dropout", default=0.1, show_default=True),
        click.option("--seed", default=0, show_default=True),
        click.option("--test-size", default=0, show_default=True,
                     help="Records carved out before the 9:1 train/validation split."),
        click.option("--split-manifest", default=None,
                     help="Reuse (or record) the split as a JSON manifest."),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


@cli.command("train-classifier")
@click.option("--config", "config_path", default=None)
@click.option("--records", "records_path", required=True)
@click.option("--taxonomy", "taxonomy_path", required=True)
@click.option("--output", required=True, help="Model checkpoint path.")
@click.option("--report", "report_path", default=None)
@click.option("--batch-size", default=16, show_default=True)
@_classifier_options
@click.pass_context
@pipeline_command
def train_classifier_cmd(ctx, config_path, records_path, taxonomy_path, output, report_path,
                         **flags):
    """Train the topic classifier on taxonomy-derived topic labels."""
    cfg = _load_config(config_path)
    opts = _resolve(ctx, cfg, **flags)
    records = _load_records(records_path)
    taxonomy = _load_taxonomy(taxonomy_path)
    split = _obtain_split(records, opts["split_manifest"], opts["test_size"], opts["seed"])
    config = ClassifierConfig(
        num_topics=taxonomy.k,
        num_layers=opts["num_layers"],
        embedding_dim=opts["embedding_dim"],
        hidden_dim=opts["hidden_dim"],
        num_heads=opts["num_heads"],
        max_len=opts["max_len"],
        dropout=opts["dropout"],
        learning_rate=opts["learning_rate"],
        batch_size=opts["batch_size"],
        epochs=opts["epochs"],
        seed=opts["seed"],
    )
    model, report = train_classifier(split, taxonomy, config)
    save_classifier(model, output)
    if report_path:
        write_json(report_path, report)
    last = report["epochs"][-1]["val_accuracy"] if report["epochs"] else None
    click.echo(f"classifier -> {output} (val accuracy: {last})")


@cli.command("train-extractor")
@click.option("--config", "config_path", default=None)
@click.option("--records", "records_path", required=True)
@click.option("--taxonomy", "taxonomy_path", required=True)
@click.option("--output", required=True)
@click.option("--report", "report_path", default=None)
@click.option("--alpha", default=0.3, show_default=True, help="Start-loss weight.")
@click.option("--threshold", default=0.12, show_default=True, help="Confidence cutoff.")
@click.option("--max-span-len", default=30, show_default=True)
@click.option("--encoder", default="scratch_tiny", show_default=True,
              type=click.Choice(["scratch_tiny", "pretrained_masked_lm"]))
@click.option("--pretrained-name", default=None)
@click.option("--no-prompt", is_flag=True, default=False, show_default=True,
              help="Train the ablation variant without the topic prompt.")
@click.option("--batch-size", default=4, show_default=True)
@_classifier_options
@click.pass_context
@pipeline_command
def train_extractor_cmd(ctx, config_path, records_path, taxonomy_path, output, report_path,
                        alpha, threshold, max_span_len, encoder, pretrained_name, no_prompt,
                        **flags):
    """Train the prompt-augmented pointer-network extractor."""
    cfg = _load_config(config_path)
    opts = _resolve(ctx, cfg, alpha=alpha, threshold=threshold, max_span_len=max_span_len,
                    encoder=encoder, pretrained_name=pretrained_name, no_prompt=no_prompt, **flags)
    records = _load_records(records_path)
    taxonomy = _load_taxonomy(taxonomy_path)
    split = _obtain_split(records, opts["split_manifest"], opts["test_size"], opts["seed"])
    config = ExtractorConfig(
        alpha=opts["alpha"],
        threshold=opts["threshold"],
        max_span_len=opts["max_span_len"],
        encoder=opts["encoder"],
        pretrained_name=opts["pretrained_name"],
        use_prompt=not opts["no_prompt"],
        num_layers=opts["num_layers"],
        embedding_dim=opts["embedding_dim"],
        hidden_dim=opts["hidden_dim"],
        num_heads=opts["num_heads"],
        max_len=opts["max_len"],
        dropout=opts["dropout"],
        learning_rate=opts["learning_rate"],
        batch_size=opts["batch_size"],
        epochs=opts["epochs"],
        seed=opts["seed"],
    )
    model, report = train_extractor(split, taxonomy, None, config)
    save_extractor(model, output)
    if report_path:
        write_json(report_path, report)
    click.echo(f"extractor -> {output}")


@cli.command("extract")
@click.option("--config", "config_path", default=None)
@click.option("--records", "records_path", required=True)
@click.option("--classifier", "classifier_path", default=None)
@click.option("--extractor", "extractor_path", required=True)
@click.option("--taxonomy", "taxonomy_path", required=True)
@click.option("--output", required=True, help="Predictions JSONL.")
@click.option("--no-prompt", is_flag=True, default=False,
              help="Run without the topic prompt (w/o P ablation).")
@click.option("--threshold", default=None, type=float,
              help="Override the checkpoint's confidence cutoff.")
@click.option("--attention-entity", default=None,
              help="Entity whose [CLS] attention to dump.")
@click.option("--attention-dump", default=None, help="Attention JSONL path.")
@click.pass_context
@pipeline_command
def extract_cmd(ctx, config_path, records_path, classifier_path, extractor_path, taxonomy_path,
                output, no_prompt, threshold, attention_entity, attention_dump):
    """Classify topics, prompt the encoder and decode concept spans."""
    from .evaluation import dump_attention

    cfg = _load_config(config_path)
    opts = _resolve(ctx, cfg, no_prompt=no_prompt, threshold=threshold)
    records = _load_records(records_path)
    taxonomy = _load_taxonomy(taxonomy_path)
    extractor = load_extractor(_require(extractor_path, "extractor checkpoint"))
    config = extractor.config
    if opts["no_prompt"]:
        config.use_prompt = False
    if opts["threshold"] is not None:
        config.threshold = opts["threshold"]
    classifier = None
    if config.use_prompt:
        if not classifier_path:
            raise FileNotFoundError("classifier checkpoint (required for prompted extraction)")
        classifier = load_classifier(_require(classifier_path, "classifier checkpoint"))

    rows = []
    for rec in records:
        spans, topic = extract_concepts(rec, classifier, extractor, taxonomy, config)
        rows.append({
            "entity": rec.entity,
            "topic": topic,
            "spans": [s.to_json() for s in spans],
        })
        if attention_dump and rec.entity == attention_entity:
            prompted = assemble_prompted_input(topic, build_input(rec), config.max_len)
            dump_attention(extractor, prompted, attention_dump)
    write_jsonl(output, rows)
    click.echo(f"extracted spans for {len(rows)} records -> {output}")


def _load_predictions(path) -> dict[str, list[str]]:
    _require(path, "predictions")
    preds: dict[str, list[str]] = {}
    for row in read_jsonl(path):
        preds[row["entity"]] = [s["text"] for s in row.get("spans", [])]
    return preds


def _gold_maps(records, gold_existing_path, gold_new_path):
    existing = {rec.entity: set(rec.concepts) for rec in records}
    if gold_existing_path:
        existing = {row["entity"]: set(row["concepts"])
                    for row in read_jsonl(_require(gold_existing_path, "gold existing"))}
    new = {}
    if gold_new_path:
        new = {row["entity"]: set(row["concepts"])
               for row in read_jsonl(_require(gold_new_path, "gold new"))}
    return existing, new


@cli.command("evaluate")
@click.option("--config", "config_path", default=None)
@click.option("--records", "records_path", required=True)
@click.option("--gold-existing", "gold_existing_path", default=None,
              help="JSONL {entity, concepts} overriding the records' concepts.")
@click.option("--gold-new", "gold_new_path", default=None,
              help="JSONL {entity, concepts} of correct-but-new concepts.")
@click.option("--run", "runs", multiple=True, required=True,
              help="name=predictions.jsonl; repeat for a comparison group.")
@click.option("--output", required=True, help="Metrics JSON.")
@click.option("--review", "review_path", default=None, help="CSV export for manual labeling.")
@click.pass_context
@pipeline_command
def evaluate_cmd(ctx, config_path, records_path, gold_existing_path, gold_new_path, runs,
                 output, review_path):
    """Score prediction runs; relative recall pools NCs across the group."""
    records = _load_records(records_path)
    existing, new = _gold_maps(records, gold_existing_path, gold_new_path)
    run_preds = {}
    for spec in runs:
        if "=" not in spec:
            raise ValueError(f"--run expects name=path, got {spec!r}")
        name, path = spec.split("=", 1)
        run_preds[name] = _load_predictions(path)
    pooled = pooled_new_count(run_preds, existing, new)
    scored = {
        name: score_run(preds, existing, new, pooled, run_name=name)
        for name, preds in run_preds.items()
    }
    write_json(output, {name: s.to_json() for name, s in scored.items()})
    if review_path:
        export_review_csv(next(iter(scored.values())), review_path)
    for name, s in scored.items():
        click.echo(f"{name}: {json.dumps(s.aggregates)}")


@cli.command("bias-map")
@click.option("--config", "config_path", default=None)
@click.option("--records", "records_path", required=True)
@click.option("--predictions", "predictions_path", required=True)
@click.option("--taxonomy", "taxonomy_path", required=True)
@click.option("--pairs", required=True,
              help="Semicolon-separated concept pairs, e.g. 'writer:novel;singer:music'.")
@click.option("--output", required=True, help="CSV (concept_a, concept_b, rate).")
@click.pass_context
@pipeline_command
def bias_map_cmd(ctx, config_path, records_path, predictions_path, taxonomy_path, pairs, output):
    """Bias rates of concept pairs over one prediction run."""
    records = _load_records(records_path)
    taxonomy = _load_taxonomy(taxonomy_path)
    preds = _load_predictions(predictions_path)
    lines = ["concept_a,concept_b,rate"]
    for pair in pairs.split(";"):
        if ":" not in pair:
            raise ValueError(f"pair must be A:B, got {pair!r}")
        a, b = (p.strip() for p in pair.split(":", 1))
        entries = [
            {"entity": rec.entity, "gold": set(rec.concepts), "spans": preds.get(rec.entity, [])}
            for rec in records
            if a in rec.concepts
        ]
        report = bias_rate(entries, a, b, taxonomy=taxonomy)
        lines.append(f"{a},{b},{report.rate:.6f}")
    from .io_utils import atomic_write_text

    atomic_write_text(output, "\n".join(lines) + "\n")
    click.echo("\n".join(lines))


@cli.command("causal-check")
@click.option("--random", "n_random", default=0, show_default=True,
              help="Verify the identities on this many random SCMs.")
@click.option("--seed", default=7, show_default=True)
@click.option("--scm", "scm_path", default=None, help="SCM JSON to inspect.")
@click.option("--x", "x_value", default=0, show_default=True)
@click.pass_context
@pipeline_command
def causal_check_cmd(ctx, n_random, seed, scm_path, x_value):
    """Print frontdoor/backdoor estimates against the mutilated-graph truth."""
    if scm_path:
        scm = DiscreteSCM.from_json(read_json(_require(scm_path, "SCM spec")))
        truth = interventional_truth(scm, x_value)
        fd = frontdoor_estimate(ObservedJointXPS.from_scm(scm), x_value)
        bd = backdoor_estimate(ObservedJointKXS.from_scm(scm), x_value)
        click.echo(f"P(S|do(X={x_value})) truth     : {np.array2string(truth, precision=6)}")
        click.echo(f"frontdoor estimate            : {np.array2string(fd, precision=6)}")
        click.echo(f"backdoor estimate             : {np.array2string(bd, precision=6)}")
        click.echo(f"max |frontdoor - truth| = {np.abs(fd - truth).max():.3e}")
        click.echo(f"max |backdoor  - truth| = {np.abs(bd - truth).max():.3e}")
        return
    if n_random <= 0:
        raise ValueError("pass --random N or --scm FILE")
    result = verify_identities(n_random, seed)
    click.echo(
        f"checked {result['models']} random SCMs (seed {result['seed']}): "
        f"max frontdoor deviation {result['max_frontdoor_dev']:.3e}, "
        f"max backdoor deviation {result['max_backdoor_dev']:.3e}"
    )
    if result["max_frontdoor_dev"] >= 1e-9 or result["max_backdoor_dev"] >= 1e-9:
        raise ValueError("frontdoor/backdoor identity violated beyond 1e-9")


def main() -> None:
    cli(auto_envvar_prefix="CONCEPTEX")


if __name__ == "__main__":
    main()
