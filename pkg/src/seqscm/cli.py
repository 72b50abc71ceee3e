"""``seqscm`` command line.

Exit codes: 0 success, 1 usage error, 2 validation failure, 3 scorer or
backend failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from . import __version__
from .benchmark import (
    OutcomeTarget,
    audit_sate,
    dataset_columns,
    dataset_meta,
    dataset_rows,
    dataset_seed,
    generate_dataset,
    hidden_projection,
    meta_path,
    read_dataset,
    restrict_covariates,
    write_dataset,
)
from .errors import EstimationError, MetricError, ScorerError, SeqScmError, ValidationError
from .estimators import ESTIMATORS, estimate, get_estimator
from .fileio import atomic_write_json, atomic_write_text, csv_text
from .metrics import REPORT_FIELDS, evaluate, write_reports
from .sampling import (
    COUNTERFACTUAL,
    Intervention,
    Unit,
    sample_counterfactual,
    sample_interventional,
    sample_observational,
    unit_rng,
)
from .scorers import TabularScorer, TabularScoreTable, load_scorer
from .spec_format import (
    ScmSpecDocument,
    bundled_path,
    format_variation,
    instantiate_variation,
    load_spec,
    parse_variation,
    sample_variations,
    spec_warnings,
)

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_SCORER = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# argument helpers
# --------------------------------------------------------------------------


def resolve_spec(ref: str) -> ScmSpecDocument:
    """A spec file path, or the name of a bundled spec (``marathon_g1``)."""
    path = Path(ref)
    if path.is_file():
        return load_spec(path)
    name = path.name
    for suffix in (".scm.json", ".json"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    bundled = bundled_path(f"{name}.scm.json")
    if bundled.is_file():
        return load_spec(bundled)
    raise UsageError(f"spec {ref!r} not found (neither a file nor a bundled spec)")


def parse_set(text: str) -> Intervention:
    name, sep, value = text.partition("=")
    if not sep or not name:
        raise UsageError(f"--set expects VAR=INDEX, got {text!r}")
    try:
        return Intervention(name.strip(), int(value))
    except ValueError:
        raise UsageError(f"--set value must be an integer index, got {value!r}") from None


def parse_arms(text: str) -> tuple[int, int]:
    try:
        a0, a1 = (int(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"--arms expects two comma-separated indices, got {text!r}") from None
    return a0, a1


def parse_targets(values: Sequence[str] | None, default: str | None = None) -> list[OutcomeTarget]:
    items = [t for v in (values or ([default] if default else [])) for t in v.split(",") if t.strip()]
    try:
        return [OutcomeTarget.parse(t) for t in items]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def parse_scorer_list(text: str) -> list[tuple[str, str]]:
    out = []
    for item in text.split(","):
        label, sep, cfg = item.partition("=")
        if not sep or not label.strip() or not cfg.strip():
            raise UsageError(f"--scorers expects label=config pairs, got {item!r}")
        out.append((label.strip(), cfg.strip()))
    labels = [label for label, _ in out]
    if len(set(labels)) != len(labels):
        raise UsageError(f"--scorers labels must be unique, got {labels}")
    return out


def require_seed(args) -> int:
    if args.seed is None:
        raise UsageError(f"'{args.command}' samples data and needs an explicit --seed")
    return args.seed


def require_scorer(args, label: str | None = None):
    if not args.scorer:
        raise UsageError(f"'{args.command}' needs --scorer (mock:NAME, PATH.json, tabular:PATH or remote)")
    return load_scorer(args.scorer, label=label)


def pick_variation(args, spec: ScmSpecDocument) -> tuple[int, ...]:
    if args.variation:
        return parse_variation(args.variation)
    return (0,) * len(spec.variables)


def _echo(argv: Sequence[str]) -> list[str]:
    """The command for metadata; ``--workers`` is left out since it never changes output."""
    out, skip = ["seqscm"], False
    for arg in argv:
        if skip:
            skip = False
        elif arg == "--workers":
            skip = True
        elif not arg.startswith("--workers="):
            out.append(arg)
    return out


def _emit_text(text: str, output: str | None) -> None:
    if output:
        atomic_write_text(output, text)
    else:
        sys.stdout.write(text)


def _chunked(n: int, start: int, parts: int) -> list[list[int]]:
    idx = list(range(start, start + n))
    size = max(1, math.ceil(len(idx) / max(1, parts)))
    return [idx[i:i + size] for i in range(0, len(idx), size)]


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_validate(args, argv) -> int:
    spec = resolve_spec(args.spec)
    if args.variation:
        instantiate_variation(spec, parse_variation(args.variation), TabularScorer(TabularScoreTable(), "validate"))
    for w in spec_warnings(spec):
        print(f"warning: {w}", file=sys.stderr)
    print(
        f"ok: {spec.name}: {len(spec.variables)} variables, {len(spec.edges)} edges, "
        f"treatment {spec.treatment}, outcome {spec.outcome}, {spec.n_variations} phrasing variations"
    )
    return EXIT_OK


def _sample_job(job) -> list[str]:
    scm, mode, iv, indices = job
    out = []
    for i in indices:
        unit = sample_observational(scm, unit_index=i) if iv is None else sample_interventional(scm, iv, unit_index=i)
        out.append(json.dumps(unit.to_json(), ensure_ascii=False))
    return out


def cmd_sample(args, argv) -> int:
    seed = require_seed(args)
    spec = resolve_spec(args.spec)
    scm = instantiate_variation(spec, pick_variation(args, spec), require_scorer(args), seed=seed)
    iv = None
    if args.mode == "do":
        if not args.set:
            raise UsageError("--mode do needs --set VAR=INDEX")
        iv = parse_set(args.set)
        iv.check(scm)
    elif args.set:
        raise UsageError("--set only applies with --mode do")
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    jobs = [(scm, args.mode, iv, chunk) for chunk in _chunked(args.n, args.start, args.workers * 4)]
    if args.workers <= 1:
        lines = [line for j in jobs for line in _sample_job(j)]
    else:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            lines = [line for part in pool.map(_sample_job, jobs) for line in part]
    _emit_text("\n".join(lines) + "\n", args.output)
    if args.output:
        atomic_write_json(
            meta_path(args.output),
            {"spec": spec.name, "variation": format_variation(scm.variation), "scorer": scm.scorer.label,
             "seed": seed, "mode": args.mode, "intervention": None if iv is None else str(iv),
             "n": args.n, "start": args.start, "command": _echo(argv)},
        )
    return EXIT_OK


def cmd_counterfactual(args, argv) -> int:
    spec = resolve_spec(args.spec)
    scorer = require_scorer(args)
    if not args.set:
        raise UsageError("counterfactual needs --set VAR=INDEX")
    iv = parse_set(args.set)
    try:
        lines = Path(args.from_).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read {args.from_}: {exc}") from None
    models = {}
    out = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.from_}:{line_no}: {exc.msg}") from None
        variation = tuple(doc.get("variation") or (0,) * len(spec.variables))
        seed = int(doc.get("seed", 0)) if args.seed is None else args.seed
        key = (variation, seed)
        if key not in models:
            models[key] = instantiate_variation(spec, variation, scorer, seed=seed)
        scm = models[key]
        factual = Unit.from_json(doc, scm)
        # the stream defaults to the factual unit's own seed; --seed overrides it
        rng = unit_rng(seed, factual.provenance.unit_index, COUNTERFACTUAL, iv)
        cf = sample_counterfactual(scm, factual, iv, rng)
        out.append(json.dumps(cf.to_json(), ensure_ascii=False))
    _emit_text("\n".join(out) + ("\n" if out else ""), args.output)
    return EXIT_OK


def _benchmark_job(job) -> tuple[str, dict]:
    spec, variation, scorer, seed, size, engine, extra = job
    scm = instantiate_variation(spec, variation, scorer, seed=seed)
    ds = generate_dataset(scm, size, engine=engine)
    text = csv_text(dataset_columns(ds), dataset_rows(ds))
    return text, dataset_meta(ds, **extra)


def cmd_benchmark(args, argv) -> int:
    seed = require_seed(args)
    spec = resolve_spec(args.spec)
    scorer = require_scorer(args)
    if not args.output:
        raise UsageError("benchmark needs --output DIR")
    if min(args.variations, args.datasets, args.size) < 1:
        raise UsageError("--variations, --datasets and --size must be >= 1")
    out = Path(args.output)
    variations = sample_variations(spec, args.variations, seed)
    jobs, paths = [], []
    for vi, v in enumerate(variations):
        for di in range(args.datasets):
            extra = {"variation_index": vi, "dataset_index": di, "master_seed": seed}
            jobs.append((spec, v, scorer, dataset_seed(seed, vi, di), args.size, args.engine, extra))
            paths.append(out / f"v{vi:03d}" / f"d{di:03d}.csv")
    echo = _echo(argv)

    def write(path, result):
        text, meta = result
        atomic_write_text(path, text)
        meta["command"] = echo
        atomic_write_json(meta_path(path), meta)

    if args.workers <= 1:
        for path, job in zip(paths, jobs):
            write(path, _benchmark_job(job))
    else:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            for path, result in zip(paths, pool.map(_benchmark_job, jobs, chunksize=4)):
                write(path, result)
    atomic_write_json(
        out / "manifest.json",
        {
            "spec": spec.name,
            "scorer": scorer.label,
            "seed": seed,
            "variations": [format_variation(v) for v in variations],
            "datasets_per_variation": args.datasets,
            "size": args.size,
            "files": [str(p.relative_to(out)) for p in paths],
            "command": echo,
        },
    )
    print(f"wrote {len(paths)} datasets under {out}")
    return EXIT_OK


def cmd_project(args, argv) -> int:
    if not args.hide_exogenous and not args.covariates:
        raise UsageError("project needs --hide-exogenous or --covariates")
    if not args.output:
        raise UsageError("project needs --output FILE.csv")
    ds = read_dataset(args.dataset)
    if args.hide_exogenous:
        ds = hidden_projection(ds)
    if args.covariates:
        ds = restrict_covariates(ds, [c.strip() for c in args.covariates.split(",") if c.strip()])
    write_dataset(ds, args.output, command=_echo(argv), projected_from=str(args.dataset))
    return EXIT_OK


def _load_for_estimation(path: str, covariates: str | None):
    ds = read_dataset(path)
    if covariates is not None:
        ds = restrict_covariates(ds, [c.strip() for c in covariates.split(",") if c.strip()])
    return ds


def cmd_estimate(args, argv) -> int:
    targets = parse_targets([args.target] if args.target else None)
    if len(targets) != 1:
        raise UsageError("estimate needs exactly one --target")
    ds = _load_for_estimation(args.dataset, args.covariates)
    method = _methods(args.method)
    if len(method) != 1:
        raise UsageError("estimate takes a single --method")
    result = estimate(ds, method[0], targets[0], parse_arms(args.arms))
    if args.output:
        result.to_csv(args.output)
    print(json.dumps({"method": result.method, "target": str(targets[0]), "ate": result.ate,
                      "diagnostics": result.diagnostics}))
    return EXIT_OK


def _methods(values: Sequence[str] | None) -> list[str]:
    items = [m.strip() for v in (values or ["all"]) for m in v.split(",") if m.strip()]
    if "all" in items:
        return list(ESTIMATORS)
    for m in items:
        try:
            get_estimator(m)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return items


def _dataset_files(refs: Sequence[str]) -> list[Path]:
    files: list[Path] = []
    for ref in refs:
        p = Path(ref)
        if p.is_dir():
            files.extend(sorted(p.rglob("*.csv")))
        elif p.is_file():
            files.append(p)
        else:
            raise UsageError(f"dataset {ref!r} not found")
    if not files:
        raise UsageError("no dataset files found")
    return files


def cmd_evaluate(args, argv) -> int:
    targets = parse_targets(args.target, default="p:0")
    methods = _methods(args.method)
    arms = parse_arms(args.arms)
    reports = []
    for path in _dataset_files(args.dataset):
        ds = _load_for_estimation(str(path), args.covariates)
        for target in targets:
            for m in methods:
                reports.append(evaluate(ds, estimate(ds, m, target, arms), target, arms, dataset_id=str(path)))
    if args.output:
        write_reports(reports, args.output, command=_echo(argv))
    else:
        sys.stdout.write(csv_text(REPORT_FIELDS, (r.as_row() for r in reports)))
    return EXIT_OK


def cmd_audit(args, argv) -> int:
    seed = require_seed(args)
    spec = resolve_spec(args.spec)
    if args.scorers:
        pairs = parse_scorer_list(args.scorers)
    elif args.scorer:
        pairs = [(Path(args.scorer.split(":")[-1]).name.split(".")[0] or "scorer", args.scorer)]
    else:
        raise UsageError("audit needs --scorers label=config,... or --scorer")
    scorers = [load_scorer(cfg, label=label) for label, cfg in pairs]
    targets = parse_targets(args.target) or None
    if not args.output:
        raise UsageError("audit needs --output FILE.csv")
    report = audit_sate(
        spec, scorers, args.variations, args.datasets, args.size, seed,
        targets=targets, arms=parse_arms(args.arms), workers=args.workers,
    )
    csv_path, json_path = report.write(args.output, command=_echo(argv))
    if len(scorers) < 2:
        print("single scorer: distribution-only report", file=sys.stderr)
    for row in report.failures():
        print(f"warning: {row.scorer} variation {row.variation} failed: {row.error}", file=sys.stderr)
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (required by sampling commands)")
    common.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
    common.add_argument("--output", "-o", help="output file or directory")
    common.add_argument("--scorer", help="mock:NAME, PATH.json, tabular:PATH, remote or remote:URL")

    parser = _Parser(prog="seqscm", description="Sequence-driven SCM data generation and effect benchmarks.")
    parser.add_argument("--version", action="version", version=f"seqscm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", parents=[common], help="check a spec document")
    p.add_argument("spec")
    p.add_argument("--variation", help="also instantiate this phrasing variation (e.g. 0-2-1-0-0)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sample", parents=[common], help="observational or interventional units (JSONL)")
    p.add_argument("--spec", required=True)
    p.add_argument("--variation")
    p.add_argument("--mode", choices=["obs", "do"], default="obs")
    p.add_argument("--set", help="intervention VAR=INDEX for --mode do")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--start", type=int, default=0, help="first unit index")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("counterfactual", parents=[common], help="counterfactuals of recorded units")
    p.add_argument("--spec", required=True)
    p.add_argument("--from", dest="from_", required=True, help="JSONL file of factual units")
    p.add_argument("--set", required=True, help="intervention VAR=INDEX")
    p.set_defaults(func=cmd_counterfactual)

    p = sub.add_parser("benchmark", parents=[common], help="potential-outcome datasets over phrasing variations")
    p.add_argument("--spec", required=True)
    p.add_argument("--variations", type=int, default=1)
    p.add_argument("--datasets", type=int, default=1)
    p.add_argument("--size", type=int, default=1000)
    p.add_argument("--engine", choices=["auto", "python", "compiled"], default="auto")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("project", parents=[common], help="hide covariates from a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--hide-exogenous", action="store_true")
    p.add_argument("--covariates", help="comma-separated covariates to keep")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("estimate", parents=[common], help="fit one estimator, write per-unit CATE")
    p.add_argument("--dataset", required=True)
    p.add_argument("--method", action="append", help=f"one of {', '.join(ESTIMATORS)}")
    p.add_argument("--target", required=True, help="cat:K, p:K or logp:K")
    p.add_argument("--arms", default="0,1")
    p.add_argument("--covariates", help="comma-separated covariates to adjust for (default all)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("evaluate", parents=[common], help="metric reports for estimators on datasets")
    p.add_argument("--dataset", action="append", required=True, help="CSV file or directory (repeatable)")
    p.add_argument("--method", action="append", help="estimator names, comma-separated, or 'all' (default)")
    p.add_argument("--target", action="append", help="cat:K, p:K or logp:K (default p:0)")
    p.add_argument("--arms", default="0,1")
    p.add_argument("--covariates")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("audit", parents=[common], help="compare scorers' SATEs across phrasing variations")
    p.add_argument("--spec", required=True)
    p.add_argument("--scorers", help="label=config pairs, comma-separated")
    p.add_argument("--variations", type=int, default=1)
    p.add_argument("--datasets", type=int, default=1)
    p.add_argument("--size", type=int, default=1000)
    p.add_argument("--target", action="append", help="targets (default every p:K)")
    p.add_argument("--arms", default="0,1")
    p.set_defaults(func=cmd_audit)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "workers", 1) < 1:
        print("seqscm: error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args, argv)
    except UsageError as exc:
        print(f"seqscm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScorerError as exc:
        print(f"seqscm {args.command}: scorer failure: {exc}", file=sys.stderr)
        return EXIT_SCORER
    except (ValidationError, EstimationError, MetricError) as exc:
        print(f"seqscm {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SeqScmError as exc:
        print(f"seqscm {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"seqscm {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
