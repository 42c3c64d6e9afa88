"""Command-line entry point orchestrating the labeling pipeline.

Subcommands mirror the pipeline stages: ingest, rba, llm, vote, agree,
eval, split, sample, annotate serve, export, terms. Every command exits 0
on success, 2 on usage errors, 3 on data-contract violations, and 4 on
endpoint/transport failures, printing a single JSON error line to stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import ensemble, io, metrics, sampling, rba as rba_mod, llm as llm_mod
from .ingest import extract_findings, load_column_mapping, load_reports, tfidf_suggest_terms
from .lexicon import load_lexicon
from .schema import DataContractError, load_schema, project_labels
from .service import create_app, derive_view, AnnotationStore

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONTRACT = 3
EXIT_TRANSPORT = 4


def _schema_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--schema", default=None, help="label schema JSON (default: embedded)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radlabel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load reports and extract findings sections")
    p.add_argument("--reports", required=True)
    p.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    p.add_argument("--map", dest="mapping", default=None, help="column mapping config JSON")
    p.add_argument("--out", required=True)

    p = sub.add_parser("rba", help="run the rule-based annotator over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--lexicon", default=None, help="lexicon JSON (default: embedded)")
    p.add_argument("--out", required=True)
    _schema_flag(p)

    p = sub.add_parser("llm", help="label a corpus through a chat-completions endpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--concurrency", type=int, default=4)
    p.add_argument("--base-url", default=None, help="endpoint base URL (default: env)")
    p.add_argument("--max-attempts", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--audit", required=True, help="completions audit JSONL")
    _schema_flag(p)

    p = sub.add_parser("vote", help="majority-vote ensemble of prediction files")
    p.add_argument("--preds", nargs="+", required=True)
    p.add_argument("--tie", choices=("negative", "positive", "reject-even"), default="negative")
    p.add_argument("--out", required=True)
    _schema_flag(p)

    p = sub.add_parser("agree", help="pairwise kappa between prediction files")
    p.add_argument("--preds", nargs="+", required=True)
    p.add_argument("--out", required=True)
    _schema_flag(p)

    p = sub.add_parser("eval", help="F1 metrics against a reference labels CSV")
    p.add_argument("--preds", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--labels", default=None, help="comma-separated label subset")
    p.add_argument("--bootstrap", type=int, default=None, help="bootstrap resamples")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    _schema_flag(p)

    p = sub.add_parser("split", help="patient-exclusive stratified train/test split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--labels", required=True, help="labels CSV used for stratification")
    p.add_argument("--train-frac", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    _schema_flag(p)

    p = sub.add_parser("sample", help="disagreement-category sampling for manual labeling")
    p.add_argument("--preds", nargs="+", required=True)
    p.add_argument("--quota", type=int, default=10, help="per label x category quota")
    p.add_argument("--supplement", type=int, default=0, help="extra random reports")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="selected report ids text file")
    p.add_argument("--prevalence-out", default=None,
                   help="category prevalence CSV (default: <out>.prevalence.csv)")
    _schema_flag(p)

    p = sub.add_parser("annotate", help="annotation workflows")
    annotate_sub = p.add_subparsers(dest="annotate_command", required=True)
    ps = annotate_sub.add_parser("serve", help="serve the annotation API and UI")
    ps.add_argument("--corpus", required=True)
    ps.add_argument("--ids", required=True, help="report ids text file for the queue")
    ps.add_argument("--port", type=int, default=8642)
    ps.add_argument("--host", default="127.0.0.1")
    ps.add_argument("--data-dir", default="annotations")
    ps.add_argument("--preds", nargs="*", default=[], help="prediction files for context")
    ps.add_argument("--show-predictions", action="store_true")
    ps.add_argument("--ui", default="frontend/dist", help="static UI assets directory")
    _schema_flag(ps)

    p = sub.add_parser("export", help="export a reference view from the annotation log")
    p.add_argument("--data-dir", default="annotations")
    p.add_argument("--view", choices=("actionable", "mention"), required=True)
    p.add_argument("--annotator", default=None)
    p.add_argument("--out", required=True)
    _schema_flag(p)

    p = sub.add_parser("terms", help="suggest lexicon terms by corpus TF-IDF")
    p.add_argument("--corpus", required=True)
    p.add_argument("--top-k", type=int, default=50)
    p.add_argument("--out", required=True)

    return parser


def _load_schema_arg(args) -> object:
    return load_schema(getattr(args, "schema", None))


def cmd_ingest(args) -> int:
    mapping = load_column_mapping(args.mapping) if args.mapping else None
    corpus = load_reports(args.reports, format=args.format, mapping=mapping)
    sectioned = type(corpus)(
        records=[extract_findings(r) if r.findings is None else r for r in corpus],
        source=corpus.source,
    )
    io.write_corpus_jsonl(sectioned, args.out)
    flagged = sum(1 for r in sectioned if r.findings is None)
    print(f"ingested {len(sectioned)} reports ({flagged} without findings) -> {args.out}")
    return EXIT_OK


def cmd_rba(args) -> int:
    schema = _load_schema_arg(args)
    corpus = io.read_corpus_jsonl(args.corpus)
    lexicon = load_lexicon(args.lexicon, schema)
    preds = rba_mod.label_corpus(corpus, lexicon, schema)
    io.write_predictions_jsonl(preds, args.out, schema=schema)
    print(f"rba labeled {len(preds.predictions)} reports, {len(preds.errors)} errors -> {args.out}")
    return EXIT_OK


def cmd_llm(args) -> int:
    schema = _load_schema_arg(args)
    corpus = io.read_corpus_jsonl(args.corpus)
    config = llm_mod.PromptConfig(
        model=args.model,
        temperature=args.temperature,
        base_url=args.base_url,
        concurrency=args.concurrency,
        max_attempts=args.max_attempts,
    )
    run = llm_mod.label_corpus(corpus, config, schema)
    io.write_predictions_jsonl(run.prediction_set, args.out, statuses=run.statuses, schema=schema)
    io.write_completions_jsonl(run.completions, args.audit)
    # Model vectors are stored as returned; normal/disease contradictions are
    # reported as a consistency statistic instead of being repaired.
    from .schema import validate_label_vector

    inconsistent = sum(
        1
        for vec in run.prediction_set.predictions.values()
        if validate_label_vector(vec, schema)
    )
    print(
        f"llm labeled {len(run.prediction_set.predictions)} reports, "
        f"{len(run.prediction_set.errors)} errors, "
        f"{inconsistent} normal/disease-inconsistent vectors -> {args.out}"
    )
    return EXIT_OK


def cmd_vote(args) -> int:
    schema = _load_schema_arg(args)
    preds = [io.read_predictions_jsonl(p, schema) for p in args.preds]
    tie = args.tie.replace("-", "_")
    voted = ensemble.majority_vote(preds, tie_policy=tie, schema=schema)
    io.write_predictions_jsonl(voted, args.out, schema=schema)
    print(f"ensemble of {len(preds)} labelers -> {args.out}")
    return EXIT_OK


def cmd_agree(args) -> int:
    schema = _load_schema_arg(args)
    preds = [io.read_predictions_jsonl(p, schema) for p in args.preds]
    pairs = metrics.pairwise_kappa_matrix(preds, schema)
    io.write_kappa_csv(pairs, args.out)
    print(f"{len(pairs)} model pairs -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    schema = _load_schema_arg(args)
    if args.bootstrap is not None and args.seed is None:
        raise UsageError("--bootstrap requires an explicit --seed")
    pred = io.read_predictions_jsonl(args.preds, schema)
    truth = io.read_truth_csv(args.truth, schema)
    labels = None
    if args.labels:
        labels = [lbl.strip() for lbl in args.labels.split(",") if lbl.strip()]
        pred = project_labels(pred, labels, schema)
        truth = {rid: {l: row[l] for l in labels} for rid, row in truth.items()}
    report = metrics.f1_scores(pred, truth, schema, labels)
    cis = {}
    if args.bootstrap:
        eval_labels = labels if labels is not None else list(schema.labels)
        for idx, label in enumerate(eval_labels):
            cis[label] = metrics.bootstrap_ci(
                metrics.label_f1_metric(idx), pred, truth,
                resamples=args.bootstrap, seed=args.seed, schema=schema, labels=eval_labels,
            )
        cis["macro"] = metrics.bootstrap_ci(
            metrics.macro_f1_metric, pred, truth,
            resamples=args.bootstrap, seed=args.seed, schema=schema, labels=eval_labels,
        )
        cis["micro"] = metrics.bootstrap_ci(
            metrics.micro_f1_metric, pred, truth,
            resamples=args.bootstrap, seed=args.seed, schema=schema, labels=eval_labels,
        )
    io.write_metrics_csv(report, args.out, cis)
    print(
        f"evaluated {report.n_evaluated} reports "
        f"(macro F1 {report.macro:.4f}, micro F1 {report.micro:.4f}) -> {args.out}"
    )
    return EXIT_OK


def cmd_split(args) -> int:
    schema = _load_schema_arg(args)
    corpus = io.read_corpus_jsonl(args.corpus)
    labels = io.read_truth_csv(args.labels, schema)
    split = sampling.stratified_patient_split(
        corpus, labels, train_fraction=args.train_frac, seed=args.seed, schema=schema
    )
    patients = {r.report_id: r.patient_id for r in corpus}
    io.write_split_csv(split, patients, args.out)
    worst = max(abs(d) for d in split.frequency_deviation.values())
    print(
        f"split {len(split.patient_side)} patients "
        f"(max per-label test deviation {worst * 100:.2f} pp) -> {args.out}"
    )
    return EXIT_OK


def cmd_sample(args) -> int:
    schema = _load_schema_arg(args)
    preds = [io.read_predictions_jsonl(p, schema) for p in args.preds]
    selected = sampling.sample_disagreement_set(preds, args.quota, args.seed, schema)
    if args.supplement:
        pool = sorted(set.intersection(*(p.covered_ids() for p in preds)))
        extra = sampling.random_supplement(pool, set(selected), args.supplement, args.seed)
        selected = sorted(set(selected) | set(extra))
    io.write_ids_txt(selected, args.out)
    prevalence = sampling.category_prevalences(preds, schema)
    prevalence_path = args.prevalence_out or f"{args.out}.prevalence.csv"
    io.write_prevalence_csv(prevalence, prevalence_path)
    shares = prevalence.as_percentages()
    print(
        f"sampled {len(selected)} reports; full-agreement share "
        f"{sampling.full_agreement_share(shares):.2f}% -> {args.out}"
    )
    return EXIT_OK


def cmd_annotate(args) -> int:
    import uvicorn

    schema = _load_schema_arg(args)
    corpus = io.read_corpus_jsonl(args.corpus)
    ids = io.read_ids_txt(args.ids)
    findings = {
        r.report_id: r.findings for r in corpus if r.findings is not None
    }
    predictions = [io.read_predictions_jsonl(p, schema) for p in args.preds]
    app = create_app(
        corpus_findings=findings,
        queue_ids=ids,
        data_dir=args.data_dir,
        schema=schema,
        predictions=predictions or None,
        show_predictions=args.show_predictions,
        ui_dir=args.ui if Path(args.ui).is_dir() else None,
    )
    print(f"serving annotation API on {args.host}:{args.port} (queue of {len(ids)})")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def cmd_export(args) -> int:
    schema = _load_schema_arg(args)
    store = AnnotationStore(args.data_dir, schema)
    view = derive_view(store.annotations, args.view, schema, args.annotator)
    io.write_truth_csv(view, args.out, schema)
    print(f"exported {len(view)} reports ({args.view} view) -> {args.out}")
    return EXIT_OK


def cmd_terms(args) -> int:
    import csv as csv_module

    corpus = io.read_corpus_jsonl(args.corpus)
    scores = tfidf_suggest_terms(corpus, args.top_k)
    with open(args.out, "w", newline="") as handle:
        writer = csv_module.writer(handle)
        writer.writerow(["term", "tfidf", "document_frequency"])
        for score in scores:
            writer.writerow([score.term, f"{score.tfidf:.6f}", score.document_frequency])
    print(f"{len(scores)} terms -> {args.out}")
    return EXIT_OK


class UsageError(Exception):
    pass


COMMANDS = {
    "ingest": cmd_ingest,
    "rba": cmd_rba,
    "llm": cmd_llm,
    "vote": cmd_vote,
    "agree": cmd_agree,
    "eval": cmd_eval,
    "split": cmd_split,
    "sample": cmd_sample,
    "annotate": cmd_annotate,
    "export": cmd_export,
    "terms": cmd_terms,
}


def _fail(code: int, message: str) -> int:
    sys.stderr.write(json.dumps({"error": message, "code": code}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    from .llm import TransportError

    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except TransportError as exc:
        return _fail(EXIT_TRANSPORT, str(exc))
    except DataContractError as exc:
        return _fail(EXIT_CONTRACT, str(exc))
    except FileNotFoundError as exc:
        return _fail(EXIT_CONTRACT, f"missing input file: {exc.filename}")


if __name__ == "__main__":
    sys.exit(main())
