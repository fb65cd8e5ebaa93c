"""Single entry-point command line for the platform.

Subcommands: sample, init-stages, serve, filter, qualify, export,
simulate, analyze. A declarative JSON config supplies defaults; flags
win over the config. Machine-readable results go to files, a short human
summary to stdout. Exit codes: 0 success, 1 operational failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import analysis as analysis_mod
from .config import StudyConfig, build_stage_configs
from .domain import (
    Stage,
    read_catalog_csv,
    write_catalog_csv,
)
from .errors import AvqStudyError
from .sampler import SamplingPlan, diversity_report, stratified_sample
from .server.service import StudyService
from .simulation_run import (
    CohortSpec,
    HttpClient,
    SimulationPlan,
    run_study_simulation,
    write_report,
)
from .simulator import RaterModel
from .stats import read_mos_csv, write_filter_report_csv, write_mos_csv


def _load_config(path: str | None) -> StudyConfig:
    if path is None:
        default = Path("avqstudy.json")
        return StudyConfig.load(default) if default.exists() else StudyConfig()
    return StudyConfig.load(path)


def _parse_ratios(text: str) -> dict[str, float]:
    out = {}
    for part in text.split(","):
        key, _, value = part.partition("=")
        out[key.strip()] = float(value)
    return out


def _parse_cohort(text: str) -> tuple[CohortSpec, ...]:
    specs = []
    for part in text.split(","):
        model, _, count = part.rpartition(":")
        specs.append(CohortSpec(model=RaterModel.parse(model), count=int(count)))
    return tuple(specs)


def cmd_sample(args: argparse.Namespace, config: StudyConfig) -> int:
    pool = read_catalog_csv(args.pool)
    kwargs = dict(
        alpha=config.sampler_alpha if args.alpha is None else args.alpha,
        n_bins=config.sampler_bins if args.bins is None else args.bins,
        intermediate_n=(
            config.sampler_intermediate_n if args.intermediate_n is None
            else args.intermediate_n
        ),
        final_n=config.sampler_final_n if args.final_n is None else args.final_n,
        seed=args.seed,
        no_balancing=args.no_balancing,
    )
    if args.ratios:
        kwargs["group_ratios"] = _parse_ratios(args.ratios)
    plan = SamplingPlan(**kwargs)
    result = stratified_sample(pool, plan)
    write_catalog_csv(result.selected, args.out)
    report = diversity_report(result.selected, pool, plan)
    if args.report:
        Path(args.report).write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n"
        )
    print(report["summary"])
    print(f"selection written to {args.out}")
    return 0


def cmd_init_stages(args: argparse.Namespace, config: StudyConfig) -> int:
    catalog = read_catalog_csv(args.catalog)
    homed, stage_configs = build_stage_configs(catalog, config)
    service = StudyService(media_base_url=config.media_base_url)
    service.install_catalog(homed)
    for cfg in stage_configs.values():
        service.install_stage(cfg)
    service.save(config.store_dir)
    for stage, cfg in stage_configs.items():
        print(f"{stage.value}: {len(cfg.groups)} groups of {cfg.group_size}")
    print(f"store initialized at {config.store_dir}")
    return 0


def _load_service(config: StudyConfig) -> StudyService:
    return StudyService.load(
        config.store_dir,
        media_base_url=config.media_base_url,
        assignment_expiry_s=config.assignment_expiry_minutes * 60.0,
    )


def cmd_serve(args: argparse.Namespace, config: StudyConfig) -> int:
    import uvicorn

    from .server.app import create_app

    service = _load_service(config)
    app = create_app(
        service,
        admin_token_env=config.admin_token_env,
        export_dir=config.export_dir,
    )
    host = args.host or config.bind_host
    port = args.port or config.bind_port
    print(f"serving on {host}:{port} (store: {config.store_dir})")
    uvicorn.run(app, host=host, port=port, log_level="info")
    service.save(config.store_dir)
    return 0


def cmd_filter(args: argparse.Namespace, config: StudyConfig) -> int:
    service = _load_service(config)
    outcomes, table = service.run_stage_filter(Stage(args.stage))
    service.save(config.store_dir)
    out = Path(config.export_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / f"filter_{args.stage}.csv"
    mos_path = out / f"mos_{args.stage}.csv"
    write_filter_report_csv(outcomes, str(report_path))
    write_mos_csv(table, str(mos_path))
    accepted = sum(1 for o in outcomes if o.accepted)
    print(f"{args.stage}: {accepted}/{len(outcomes)} submissions accepted")
    print(f"report: {report_path}; MOS ({len(table)} sequences): {mos_path}")
    return 0


def cmd_qualify(args: argparse.Namespace, config: StudyConfig) -> int:
    service = _load_service(config)
    granted = service.grade_qualification()
    service.save(config.store_dir)
    print(f"qualified {len(granted)} new workers")
    for worker_id in sorted(granted):
        print(f"  {worker_id}")
    return 0


def cmd_export(args: argparse.Namespace, config: StudyConfig) -> int:
    service = _load_service(config)
    paths = service.export_dataset(config.export_dir)
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return 0


def cmd_simulate(args: argparse.Namespace, config: StudyConfig) -> int:
    if args.plan:
        plan = SimulationPlan.from_dict(json.loads(Path(args.plan).read_text()))
    else:
        plan = SimulationPlan(
            pretest_cohort=_parse_cohort(args.cohort),
            qualification_cohort=(
                _parse_cohort(args.qual_cohort) if args.qual_cohort else ()
            ),
            seed=args.seed,
            n_sequences=args.sequences,
            pretest_sequences=args.pretest_sequences,
            group_size=config.group_size,
            pretest_tasks_per_worker=args.tasks_per_worker,
            formal_tasks_per_worker=args.formal_tasks,
        )
    client = None
    if args.server:
        client = HttpClient(args.server, admin_token=args.admin_token)
    report = run_study_simulation(plan, client=client)
    write_report(report, args.out)
    print(report.summary())
    print(f"report written to {args.out}")
    return 0


def cmd_analyze(args: argparse.Namespace, config: StudyConfig) -> int:
    mos = read_mos_csv(args.mos)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = analysis_mod.modality_report(mos)
    (out / "modality_groups.csv").write_text(
        analysis_mod.modality_report_to_csv_text(rows)
    )
    correlations = analysis_mod.correlation_report(mos)
    (out / "correlations.json").write_text(
        json.dumps(correlations, indent=2, sort_keys=True) + "\n"
    )
    distributions = analysis_mod.distribution_report(mos)
    (out / "distributions.json").write_text(
        json.dumps(distributions, indent=2, sort_keys=True) + "\n"
    )
    print(f"{'group':<10}{'n':>6}  {'audio%':>7}  {'d(V)':>6}  {'d(A)':>6}")
    for r in rows:
        print(
            f"{r.group:<10}{r.n:>6}  {r.mean_audio_attention_pct:>7.2f}  "
            f"{r.mean_diff_video:>+6.2f}  {r.mean_diff_audio:>+6.2f}"
        )
    print(f"reports written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avq",
        description="Crowdsourced audio-visual quality study platform.",
    )
    parser.add_argument("--config", help="path to the deployment config JSON")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="stratified-sample a stimulus set from a pool")
    p.add_argument("--pool", required=True, help="candidate-pool catalog CSV")
    p.add_argument("--out", required=True, help="output selection CSV")
    p.add_argument("--report", help="diversity report JSON path")
    p.add_argument("--alpha", type=float, help="balancing strength (default 0.3)")
    p.add_argument("--bins", type=int, help="bins per continuous feature (default 8)")
    p.add_argument("--intermediate-n", type=int, help="intermediate set size (default 10000)")
    p.add_argument("--final-n", type=int, help="final selection size (default 1296)")
    p.add_argument("--seed", type=int, default=0, help="RNG seed")
    p.add_argument("--ratios", help="semantic ratio overrides, e.g. speech=2,music=1")
    p.add_argument(
        "--no-balancing", action="store_true",
        help="plain proportional sampling within groups (ignore bin weights)",
    )
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("init-stages", help="build stage groups from a catalog")
    p.add_argument("catalog", help="study catalog CSV")
    p.set_defaults(func=cmd_init_stages)

    p = sub.add_parser("serve", help="run the study HTTP server")
    p.add_argument("--host", help="bind host (overrides config)")
    p.add_argument("--port", type=int, help="bind port (overrides config)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("filter", help="run dynamic filtering for a stage")
    p.add_argument(
        "stage", choices=[s.value for s in Stage], metavar="stage",
        help="one of: " + ", ".join(s.value for s in Stage),
    )
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("qualify", help="grant qualification to passing workers")
    p.set_defaults(func=cmd_qualify)

    p = sub.add_parser("export", help="write catalog, MOS, and filter report")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("simulate", help="run a simulated rater cohort")
    p.add_argument(
        "--cohort", default="faithful(0.3):20",
        help="pretest cohort, e.g. 'faithful(0.3):20,random_uniform:10'",
    )
    p.add_argument("--qual-cohort", help="qualification cohort (same format)")
    p.add_argument("--plan", help="simulation plan JSON (overrides cohort flags)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sequences", type=int, default=180, help="synthetic catalog size")
    p.add_argument("--pretest-sequences", type=int, default=120)
    p.add_argument("--tasks-per-worker", type=int, default=1, help="pretest tasks per worker")
    p.add_argument("--formal-tasks", type=int, default=1, help="formal tasks per worker")
    p.add_argument("--server", help="drive a live server at this base URL")
    p.add_argument("--admin-token", help="bearer token for admin endpoints")
    p.add_argument("--out", default="simulation_report.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="modality, correlation, distribution reports")
    p.add_argument("--mos", required=True, help="MOS export CSV")
    p.add_argument("--out-dir", default="analysis", help="report output directory")
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = _load_config(args.config)
    try:
        return args.func(args, config)
    except AvqStudyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
