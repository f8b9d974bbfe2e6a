"""Command-line surface tying the pipeline together.

Subcommands walk the natural order of a study: ingest a taxonomy, generate
tasks and probes from it, run an evaluation against an endpoint roster,
score the resulting records, analyze activation dumps, and emit reports.
Exit codes: 0 success, 1 validation or input problems, 2 partial failure,
3 budget refusal.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from .dumps import DumpError, read_dump
from .gateway import (
    ChatCompletionsClient,
    Completer,
    GatewayError,
    ModelEndpoint,
    ResponseCache,
    ScriptedModel,
    load_endpoints,
)
from .lineio import LineParseError, iter_records
from .orchestrator import (
    BudgetExceeded,
    OrchestratorError,
    RecordLog,
    Task,
    load_experiment_spec,
    load_run_records,
    run_experiment,
)
from .prompts import PromptError
from .repr_analysis import ALL_METRICS, AnalysisError, compare_suite, curves_to_rows
from .reports import (
    ALL_FORMATS,
    ReportError,
    emit_report,
    load_bundle,
    score_experiment,
)
from .taskgen import (
    TaskGenError,
    build_cot_series,
    build_probes,
    eligible_cot_codes,
    gen_description_mcq,
    gen_nca_tasks,
    mcq_from_record,
    nca_from_record,
    required_steps_for,
    save_tasks,
)
from .taxonomy import (
    ComplexityBand,
    TaxonomyError,
    ingest_taxonomy,
    load_taxonomy,
    save_taxonomy,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_PARTIAL = 2
EXIT_BUDGET = 3

SCRIPTED_PREFIX = "scripted:"


def load_tasks(path: str | Path) -> list[Task]:
    """Load a task file holding MCQ records, NCA records, or both."""
    tasks: list[Task] = []
    for lineno, record in iter_records(path):
        if "code_a" in record:
            tasks.append(nca_from_record(record))
        else:
            tasks.append(mcq_from_record(record, lineno))
    return tasks


def _scripted_from_file(path: Path, endpoint_id: str) -> ScriptedModel:
    payload = json.loads(path.read_text(encoding="utf-8"))
    rules = [(str(pattern), value) for pattern, value in payload["rules"]]
    return ScriptedModel(
        rules,
        default=str(payload.get("default", "")),
        endpoint_id=endpoint_id,
    )


def build_completers(
    roster: Sequence[ModelEndpoint], roster_dir: Path
) -> dict[str, tuple[ModelEndpoint, Completer]]:
    """One completer per roster entry; scripted URLs resolve to script files.

    A base_url of the form ``scripted:relative/path.json`` loads a script
    with ``{"rules": [[pattern, reply], ...], "default": "..."}`` where a
    reply may also be a 3-element list, one text per run. All real endpoints
    share a single HTTP client.
    """
    client: ChatCompletionsClient | None = None
    completers: dict[str, tuple[ModelEndpoint, Completer]] = {}
    for endpoint in roster:
        if endpoint.base_url.startswith(SCRIPTED_PREFIX):
            script_path = Path(endpoint.base_url[len(SCRIPTED_PREFIX) :])
            if not script_path.is_absolute():
                script_path = roster_dir / script_path
            completers[endpoint.id] = (
                endpoint,
                _scripted_from_file(script_path, endpoint.id),
            )
        else:
            if client is None:
                client = ChatCompletionsClient()
            completers[endpoint.id] = (endpoint, client)
    return completers


def _resolve(base: Path, candidate: str) -> Path:
    path = Path(candidate)
    return path if path.is_absolute() else base / path


def cmd_ingest(args: argparse.Namespace) -> int:
    taxonomy = ingest_taxonomy(record for _, record in iter_records(args.input))
    save_taxonomy(taxonomy, args.out)
    print(
        f"ingested {taxonomy.system.id}: {len(taxonomy.nodes)} nodes, "
        f"{len(taxonomy.roots)} roots, {len(taxonomy.leaves())} leaves -> {args.out}"
    )
    return EXIT_OK


def cmd_gen_tasks(args: argparse.Namespace) -> int:
    taxonomy = load_taxonomy(args.taxonomy)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wrote_anything = False

    if args.mcq:
        mcqs = gen_description_mcq(taxonomy, args.seed, args.mcq)
        save_tasks(out_dir / "mcq.jsonl", mcqs)
        print(f"wrote {len(mcqs)} MCQ tasks -> {out_dir / 'mcq.jsonl'}")
        wrote_anything = True

    quotas = {
        ComplexityBand.MEMORY_LIGHT: args.quota_ml,
        ComplexityBand.MEDIUM: args.quota_md,
        ComplexityBand.MEMORY_HEAVY: args.quota_mh,
    }
    quotas = {band: n for band, n in quotas.items() if n}
    if quotas:
        nca = gen_nca_tasks(taxonomy, args.seed, quotas)
        save_tasks(out_dir / "nca.jsonl", nca)
        print(f"wrote {len(nca)} NCA tasks -> {out_dir / 'nca.jsonl'}")
        wrote_anything = True

    if args.per_system:
        probes = build_probes(taxonomy, args.per_system, args.seed)
        save_tasks(out_dir / "probes.jsonl", probes)
        required = required_steps_for(taxonomy.system.id)
        eligible = set(eligible_cot_codes(taxonomy, required))
        series = [
            build_cot_series(taxonomy, probe, required)
            for probe in probes
            if probe.code in eligible
        ]
        save_tasks(out_dir / "cot.jsonl", series)
        print(
            f"wrote {len(probes)} probes and {len(series)} CoT series "
            f"({required} steps) -> {out_dir}"
        )
        wrote_anything = True

    if not wrote_anything:
        print(
            "nothing to generate: pass --mcq, a band quota, or --per-system",
            file=sys.stderr,
        )
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_run_eval(args: argparse.Namespace) -> int:
    spec_path = Path(args.spec)
    spec = load_experiment_spec(spec_path)
    if args.budget is not None:
        spec = dataclasses.replace(spec, budget=args.budget)
    tasks = load_tasks(_resolve(spec_path.parent, spec.task_file))

    records_path = Path(args.records)
    if records_path.exists() and not args.resume:
        print(
            f"error: {records_path} already holds records; pass --resume to continue",
            file=sys.stderr,
        )
        return EXIT_VALIDATION

    roster_path = Path(args.roster)
    roster = load_endpoints(roster_path)
    completers = build_completers(roster, roster_path.parent)
    cache = ResponseCache(args.cache) if args.cache else None
    log = RecordLog(records_path)

    summary = run_experiment(
        spec, tasks, completers, log, cache=cache, parallel=args.parallel
    )
    print(
        f"executed {summary.executed} cells, resumed past {summary.resumed}, "
        f"{len(summary.failures)} failures -> {records_path}"
    )
    if summary.partial:
        for failure in summary.failures[:10]:
            print(
                f"  failed: {failure.question_id} {failure.endpoint_id} "
                f"{failure.template} run {failure.run_index}: {failure.error}",
                file=sys.stderr,
            )
        return EXIT_PARTIAL
    return EXIT_OK


def parse_pairs(text: str | None) -> list[tuple[str, str]]:
    if not text:
        return []
    pairs = []
    for chunk in text.split(","):
        left, sep, right = chunk.partition(":")
        if not sep or not left or not right:
            raise ValueError(f"pair {chunk!r} must look like endpointA:endpointB")
        pairs.append((left.strip(), right.strip()))
    return pairs


def cmd_score(args: argparse.Namespace) -> int:
    records = load_run_records(args.records)
    tasks = load_tasks(args.tasks)
    taxonomy = load_taxonomy(args.taxonomy) if args.taxonomy else None
    bundle = score_experiment(
        records,
        tasks,
        taxonomy,
        partial=args.partial,
        pairs=parse_pairs(args.pairs),
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(
        json.dumps(bundle.to_json_dict(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    print(
        f"scored {len(bundle.question_rows)} question cells across "
        f"{len(bundle.accuracy_rows)} (endpoint, template) cells -> {out}"
    )
    return EXIT_OK


def parse_labeled_dumps(entries: Sequence[str]) -> dict[str, Any]:
    dumps = {}
    for entry in entries:
        label, sep, path = entry.partition("=")
        if not sep or not label or not path:
            raise ValueError(f"dump {entry!r} must look like label=path")
        dumps[label] = read_dump(path)
    return dumps


def parse_plan(text: str) -> list[tuple[str, str]]:
    plan = []
    for chunk in text.split(","):
        left, sep, right = chunk.partition("~")
        if not sep or not left or not right:
            raise ValueError(f"comparison {chunk!r} must look like labelA~labelB")
        plan.append((left.strip(), right.strip()))
    return plan


def cmd_analyze_repr(args: argparse.Namespace) -> int:
    dumps = parse_labeled_dumps(args.dump)
    plan = parse_plan(args.plan)
    metrics = args.metrics.split(",") if args.metrics else list(ALL_METRICS)
    for metric in metrics:
        if metric not in ALL_METRICS:
            raise ValueError(f"unknown metric {metric!r}; choose from {ALL_METRICS}")
    curves = compare_suite(dumps, plan, metrics=metrics, statistic=args.statistic)
    rows = curves_to_rows(curves)
    columns = [
        "vocabulary", "comparison", "metric", "layer",
        "value", "n_included", "statistic",
    ]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(columns)]
    for row in rows:
        lines.append(
            "\t".join(
                repr(row[c]) if isinstance(row[c], float) else str(row[c])
                for c in columns
            )
        )
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(rows)} similarity rows ({len(curves)} curves) -> {out}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.bundle)
    formats = args.formats.split(",") if args.formats else list(ALL_FORMATS)
    written = emit_report(bundle, args.out_dir, formats=formats)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiernav",
        description="Hierarchy navigation evaluation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a raw taxonomy and write the store")
    p.add_argument("--input", required=True, help="raw taxonomy record file")
    p.add_argument("--out", required=True, help="validated store path")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("gen-tasks", help="generate MCQ/NCA tasks and probes")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--mcq", type=int, default=0, help="description MCQs to generate")
    p.add_argument("--quota-ml", type=int, default=0, help="MemoryLight NCA quota")
    p.add_argument("--quota-md", type=int, default=0, help="Medium NCA quota")
    p.add_argument("--quota-mh", type=int, default=0, help="MemoryHeavy NCA quota")
    p.add_argument(
        "--per-system", type=int, default=0, help="description probes per system"
    )
    p.set_defaults(func=cmd_gen_tasks)

    p = sub.add_parser("run-eval", help="run an experiment spec against a roster")
    p.add_argument("--spec", required=True, help="experiment spec record file")
    p.add_argument("--roster", required=True, help="endpoint roster record file")
    p.add_argument("--records", required=True, help="run-record log path")
    p.add_argument("--cache", help="response cache directory")
    p.add_argument("--resume", action="store_true", help="continue an existing log")
    p.add_argument("--budget", type=int, help="override the spec's live-call budget")
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=cmd_run_eval)

    p = sub.add_parser("score", help="aggregate run records into a report bundle")
    p.add_argument("--records", required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("--taxonomy", help="required when scoring path-template records")
    p.add_argument("--pairs", help="endpoint pairs for delta rows, e.g. a:b,c:d")
    p.add_argument("--partial", action="store_true", help="tolerate missing cells")
    p.add_argument("--out", required=True, help="bundle file to write")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("analyze-repr", help="layer similarity curves from dumps")
    p.add_argument(
        "--dump",
        action="append",
        required=True,
        help="label=path, repeatable",
    )
    p.add_argument("--plan", required=True, help="comparisons, e.g. qb~qs,ab~as")
    p.add_argument("--metrics", help=f"comma list from {ALL_METRICS}")
    p.add_argument("--statistic", default="mean", choices=("mean", "median"))
    p.add_argument("--out", required=True, help="delimited curve table to write")
    p.set_defaults(func=cmd_analyze_repr)

    p = sub.add_parser("report", help="emit report files from a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--formats", help=f"comma list from {ALL_FORMATS}")
    p.set_defaults(func=cmd_report)

    return parser


_INPUT_ERRORS = (
    AnalysisError,
    DumpError,
    GatewayError,
    LineParseError,
    OrchestratorError,
    PromptError,
    ReportError,
    TaskGenError,
    TaxonomyError,
    OSError,
    ValueError,
    KeyError,
    json.JSONDecodeError,
)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def entrypoint() -> None:
    sys.exit(main())
