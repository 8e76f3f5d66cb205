#!/usr/bin/env python3
"""
Command-line entry point: python -m app.cli <subcommand> [flags]

    gen        seeded synthetic suite: dataset.bin, manifest.json, projection.bin
    unlearn    forget matrices, projectors and a persisted projection bank
    eval       BF/AF accuracies and MIA: report.json and report.csv
    mia        MIA from four accuracies or from a report
    gradcheck  finite-difference audit of encoder and synthesis gradients
    report     merge report.json files into one table (CSV)

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical contract failure.
"""
import argparse
import json
import logging
import sys
from dataclasses import asdict, \
    replace
from pathlib import Path
from typing import List, \
    Optional

from app.config import Config, \
    configure_cli_logging
from app.loader.bank_loader import load_bank, \
    save_bank
from app.loader.dataset_loader import load_dataset, \
    save_dataset
from app.loader.manifest_loader import load_manifest, \
    save_manifest
from app.loader.matrix_format import load_matrix, \
    save_matrix
from app.models.types import SynthesisConfig, \
    SyntheticGenConfig, \
    UnlearnKind, \
    UnlearnMode
from app.services.database_service import DatabaseService
from app.services.encoder_service import EncoderVariant, \
    PrecomputedEncoder, \
    TextEmbedder, \
    TextMode, \
    build_encoder
from app.services.evaluation_service import EvaluationReport, \
    evaluate, \
    merge_reports_table, \
    mia_score
from app.services.gradcheck_service import GradcheckConfig, \
    run_gradient_audit
from app.services.synthetic_data_service import build_suite, \
    default_names, \
    separability_certificate
from app.services.unlearning_service import CanonicalSource, \
    SampledCanonicals, \
    SynthesizedCanonicals, \
    run_unlearning
from app.utils.error_handlers import EXIT_DATA, \
    EXIT_OK, \
    BadDocument, \
    DataError, \
    UnlearningError, \
    UsageError

logger = logging.getLogger(__name__)

DATASET_FILE = 'dataset.bin'
MANIFEST_FILE = 'manifest.json'
PROJECTION_FILE = 'projection.bin'
REPORT_JSON = 'report.json'
REPORT_CSV = 'report.csv'


class CliArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(message)


def _names(value: str) -> List[str]:
    names = [name.strip() for name in value.split(',') if name.strip()]
    if not names:
        raise argparse.ArgumentTypeError('expected a comma-separated list of names')
    return names


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True,
                      exist_ok=True)
    path.write_text(text,
                    encoding='utf-8')


def cmd_gen(args) -> int:
    domains, classes = default_names(args.domains,
                                     args.classes)
    if args.domain_names:
        domains = args.domain_names
    if args.class_names:
        classes = args.class_names
    if len(domains) != args.domains or len(classes) != args.classes:
        raise UsageError('--domain-names/--class-names must match --domains/--classes')

    cfg = SyntheticGenConfig(classes=classes,
                             domains=domains,
                             samples_per_cell=args.samples,
                             embedding_dim=args.embedding_dim,
                             feature_dim=args.feature_dim,
                             input_dim=args.input_dim,
                             prototype_max_cosine=args.prototype_max_cosine,
                             domain_offset=args.domain_offset,
                             sample_noise=args.sample_noise,
                             feature_noise=args.feature_noise,
                             max_draws=args.max_draws,
                             seed=args.seed,
                             encoder_seed=args.encoder_seed,
                             synthesis_seed=args.synthesis_seed,
                             forget_classes=tuple(args.forget_classes or ()),
                             unlearn_domains=tuple(args.unlearn_domains or ()))
    suite = build_suite(cfg,
                        args.encoder)

    out = Path(args.out)
    save_dataset(out / DATASET_FILE,
                 suite.dataset,
                 args.storage)
    save_manifest(out / MANIFEST_FILE,
                  suite.manifest)
    save_matrix(out / PROJECTION_FILE,
                suite.projection,
                'f64')

    certificate = separability_certificate(suite.dataset,
                                           suite.manifest,
                                           suite.projection)
    print(f"wrote {len(suite.dataset)} samples to {out}")
    print(f"separability: {certificate.summary()}")
    return EXIT_OK


def _resolve_mode(args, manifest) -> UnlearnMode:
    kind = UnlearnKind(args.mode) if args.mode else manifest.mode.kind
    if kind in (UnlearnKind.GLOBAL, UnlearnKind.TEXT_ONLY):
        if args.domains:
            raise UsageError(f"--domains does not apply to {kind.value} unlearning")
        return UnlearnMode(kind)
    return UnlearnMode(kind,
                       tuple(args.domains or manifest.mode.domains or manifest.unlearn_domains))


def cmd_unlearn(args) -> int:
    manifest = load_manifest(args.manifest)
    artifacts = Path(args.manifest).parent
    projection = load_matrix(args.projection or artifacts / PROJECTION_FILE)
    mode = _resolve_mode(args,
                         manifest)
    if args.all_classes:
        forget = list(manifest.classes)
    else:
        forget = list(args.forget_classes or manifest.forget_classes)
    text = TextEmbedder(manifest,
                        args.text_mode)
    rel_tol = args.rank_tol if args.rank_tol is not None else Config.RANK_REL_TOL

    settings = {
        'mode': mode.to_dict(),
        'forget_classes': forget,
        'canonical_source': args.canonical_source,
        'pooled_projector': args.pooled,
        'pooled_global': args.pooled_global,
        'rank_rel_tol': rel_tol,
        'text_mode': text.mode.value}

    if mode.kind is UnlearnKind.TEXT_ONLY:
        canonicals = None
    elif CanonicalSource(args.canonical_source) is CanonicalSource.SAMPLED:
        dataset = load_dataset(args.dataset or artifacts / DATASET_FILE)
        canonicals = SampledCanonicals(dataset,
                                       projection,
                                       manifest)
    else:
        seed = args.synthesis_seed if args.synthesis_seed is not None else manifest.seeds.get('synthesis',
                                                                                              0)
        synthesis = SynthesisConfig.from_config(Config,
                                                max_iters=args.synth_max_iters,
                                                initial_step=args.synth_initial_step,
                                                backtracking=args.synth_backtracking,
                                                growth_factor=args.synth_growth,
                                                min_step=args.synth_min_step,
                                                target_cosine=args.synth_target_cosine,
                                                init_seed=seed)
        if args.encoder == EncoderVariant.PRECOMPUTED.value:
            encoder = PrecomputedEncoder.from_file(args.dataset or artifacts / DATASET_FILE)
        else:
            encoder = build_encoder(manifest,
                                    args.encoder)
        canonicals = SynthesizedCanonicals(encoder,
                                           projection,
                                           text,
                                           synthesis,
                                           args.pooled_global)
        settings['encoder'] = encoder.variant.value
        settings['synthesis'] = asdict(synthesis)

    outcome = run_unlearning(manifest,
                             projection,
                             mode,
                             text,
                             canonicals,
                             forget,
                             rel_tol,
                             args.pooled)
    bank = replace(outcome.bank,
                   settings=settings)
    save_bank(args.out,
              bank)

    ranks = ', '.join(f"{name}={bank.rank_removed[name]}" for name in bank.targeted_domains)
    print(f"{mode.label()} bank written to {args.out}; rank removed: {ranks}")
    return EXIT_OK


def cmd_eval(args) -> int:
    dataset = load_dataset(args.dataset)
    manifest = load_manifest(args.manifest)
    bank = load_bank(args.bank)
    if list(bank.domains) != list(manifest.domains):
        raise DataError(f"bank domains {bank.domains} differ from manifest domains {manifest.domains}")
    if bank.forget_classes:
        manifest = replace(manifest,
                           forget_classes=list(bank.forget_classes))

    zero_tol = args.cosine_zero_tol if args.cosine_zero_tol is not None else Config.COSINE_ZERO_TOL
    text = TextEmbedder(manifest,
                        args.text_mode)
    report = evaluate(dataset,
                      bank,
                      manifest,
                      text.class_text_matrix(),
                      zero_tol,
                      config={
                          'unlearn': bank.settings,
                          'manifest': {
                              'seeds': dict(manifest.seeds),
                              'encoder': dict(manifest.encoder or {}),
                              'generator': dict((manifest.synthetic or {}).get('generator',
                                                                               {}))},
                          'eval': {
                              'cosine_zero_tol': zero_tol,
                              'text_mode': text.mode.value}},
                      label=args.label or '')

    out = Path(args.out)
    _write_text(out / REPORT_JSON,
                report.render_document())
    _write_text(out / REPORT_CSV,
                report.render_csv())

    cells = report.to_document()
    for domain in report.domains:
        retain = [cells['accuracy'][phase][domain]['retain'] for phase in ('BF', 'AF')]
        forget = [cells['accuracy'][phase][domain]['forget'] for phase in ('BF', 'AF')]
        print(f"{domain}: retain {retain[0]} -> {retain[1]}, forget {forget[0]} -> {forget[1]}, "
              f"mia {cells['mia'][domain]}")

    if args.ledger_url:
        with DatabaseService(args.ledger_url) as db_service:
            run = db_service.store_report(report)
            print(f"recorded run #{run.id} in the ledger")
    return EXIT_OK


def _load_report(path) -> EvaluationReport:
    try:
        document = json.loads(Path(path).read_text(encoding='utf-8'))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise BadDocument(f"{path} is not a JSON report: {str(e)}")
    return EvaluationReport.from_document(document)


def cmd_mia(args) -> int:
    direct = [args.bf_forget, args.af_forget, args.bf_retain, args.af_retain]
    if args.report:
        if any(value is not None for value in direct):
            raise UsageError('use either --report/--domain or the four accuracies, not both')
        if not args.domain:
            raise UsageError('--report needs --domain')
        report = _load_report(args.report)
        if args.domain not in report.domains:
            raise DataError(f"report has no domain '{args.domain}'")
        direct = [report.cell('BF', args.domain, 'forget'),
                  report.cell('AF', args.domain, 'forget'),
                  report.cell('BF', args.domain, 'retain'),
                  report.cell('AF', args.domain, 'retain')]
        if any(value is None for value in direct):
            raise DataError(f"report has an empty retain or forget set in '{args.domain}'")
    elif any(value is None for value in direct):
        raise UsageError('--bf-forget, --af-forget, --bf-retain and --af-retain are all required')
    print(f"{mia_score(*direct):.2f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = GradcheckConfig(variants=tuple(args.variants),
                          probes=args.probes,
                          seed=args.seed,
                          step=args.step,
                          tolerance=args.tolerance,
                          input_dim=args.input_dim,
                          feature_dim=args.feature_dim,
                          embedding_dim=args.embedding_dim)
    audit = run_gradient_audit(cfg)
    for line in audit.summary_lines():
        print(line)
    print(f"gradient audit passed (tolerance {cfg.tolerance:.1e})")
    return EXIT_OK


def cmd_report(args) -> int:
    table = merge_reports_table([_load_report(path) for path in args.reports])
    if args.out:
        _write_text(Path(args.out),
                    table)
    else:
        sys.stdout.write(table)
    return EXIT_OK


def build_parser() -> CliArgumentParser:
    parser = CliArgumentParser(prog='python -m app.cli',
                               description='Training-free nullspace unlearning for dual encoders')
    parser.add_argument('--log-level',
                        default='WARNING',
                        help='Diagnostic log level on stderr (default: WARNING)')
    parser.add_argument('--log-file',
                        help='Also write diagnostics to this file')
    subparsers = parser.add_subparsers(dest='command',
                                       required=True)

    gen = subparsers.add_parser('gen',
                                help='Generate a seeded synthetic multi-domain suite')
    gen.add_argument('--out',
                     required=True)
    gen.add_argument('--seed',
                     type=int,
                     default=42)
    gen.add_argument('--domains',
                     type=int,
                     default=4)
    gen.add_argument('--classes',
                     type=int,
                     default=7)
    gen.add_argument('--samples',
                     type=int,
                     default=50,
                     help='Samples per (class, domain) cell')
    gen.add_argument('--domain-names',
                     type=_names)
    gen.add_argument('--class-names',
                     type=_names)
    gen.add_argument('--forget-classes',
                     type=_names)
    gen.add_argument('--unlearn-domains',
                     type=_names)
    gen.add_argument('--embedding-dim',
                     type=int,
                     default=Config.TOY_EMBEDDING_DIM)
    gen.add_argument('--feature-dim',
                     type=int,
                     default=Config.TOY_FEATURE_DIM)
    gen.add_argument('--input-dim',
                     type=int,
                     default=Config.TOY_INPUT_DIM)
    gen.add_argument('--prototype-max-cosine',
                     type=float,
                     default=Config.GEN_PROTOTYPE_MAX_COSINE)
    gen.add_argument('--domain-offset',
                     type=float,
                     default=Config.GEN_DOMAIN_OFFSET)
    gen.add_argument('--sample-noise',
                     type=float,
                     default=Config.GEN_SAMPLE_NOISE)
    gen.add_argument('--feature-noise',
                     type=float,
                     default=Config.GEN_FEATURE_NOISE)
    gen.add_argument('--max-draws',
                     type=int,
                     default=Config.GEN_MAX_DRAWS)
    gen.add_argument('--encoder-seed',
                     type=int,
                     default=1)
    gen.add_argument('--synthesis-seed',
                     type=int,
                     default=7)
    gen.add_argument('--encoder',
                     choices=['linear',
                              'tanh'],
                     default='linear',
                     help='Encoder recorded for synthesis (samples are always placed linearly)')
    gen.add_argument('--storage',
                     choices=['f32',
                              'f64'],
                     default='f32')
    gen.set_defaults(handler=cmd_gen)

    unlearn = subparsers.add_parser('unlearn',
                                    help='Build the projection bank for an unlearning mode')
    unlearn.add_argument('--manifest',
                         required=True)
    unlearn.add_argument('--out',
                         required=True)
    unlearn.add_argument('--mode',
                         choices=[kind.value for kind in UnlearnKind],
                         help='Defaults to the mode recorded in the manifest')
    unlearn.add_argument('--domains',
                         type=_names,
                         help='Targeted domains for selective/complete modes')
    unlearn.add_argument('--forget-classes',
                         type=_names)
    unlearn.add_argument('--all-classes',
                         action='store_true',
                         help='Forget every class (full-domain erasure with --mode complete)')
    unlearn.add_argument('--projection',
                         help=f'Projection matrix (default: {PROJECTION_FILE} next to the manifest)')
    unlearn.add_argument('--dataset',
                         help=f'Ingested samples for --canonical-source sampled or --encoder precomputed (default: {DATASET_FILE} next to the manifest)')
    unlearn.add_argument('--canonical-source',
                         choices=[source.value for source in CanonicalSource],
                         default=CanonicalSource.SYNTHESIZED.value)
    unlearn.add_argument('--encoder',
                         choices=[variant.value for variant in EncoderVariant],
                         help='Override the toy encoder variant recorded in the manifest, or replay '
                              f'the features of --dataset (default: {DATASET_FILE} next to the manifest) with precomputed')
    unlearn.add_argument('--text-mode',
                         choices=[mode.value for mode in TextMode])
    unlearn.add_argument('--pooled',
                         action='store_true',
                         help='One projector shared by all targeted domains')
    unlearn.add_argument('--pooled-global',
                         action='store_true',
                         help='Global canonical embeddings as the mean of the domain canonicals')
    unlearn.add_argument('--rank-tol',
                         type=float)
    unlearn.add_argument('--synthesis-seed',
                         type=int)
    unlearn.add_argument('--synth-max-iters',
                         type=int)
    unlearn.add_argument('--synth-initial-step',
                         type=float)
    unlearn.add_argument('--synth-backtracking',
                         type=float)
    unlearn.add_argument('--synth-growth',
                         type=float)
    unlearn.add_argument('--synth-min-step',
                         type=float)
    unlearn.add_argument('--synth-target-cosine',
                         type=float)
    unlearn.set_defaults(handler=cmd_unlearn)

    evaluation = subparsers.add_parser('eval',
                                       help='Evaluate BF/AF accuracies and MIA')
    evaluation.add_argument('--dataset',
                            required=True)
    evaluation.add_argument('--manifest',
                            required=True)
    evaluation.add_argument('--bank',
                            required=True)
    evaluation.add_argument('--out',
                            required=True)
    evaluation.add_argument('--label')
    evaluation.add_argument('--text-mode',
                            choices=[mode.value for mode in TextMode])
    evaluation.add_argument('--cosine-zero-tol',
                            type=float)
    evaluation.add_argument('--ledger-url',
                            help='Record the report in this SQLAlchemy database')
    evaluation.set_defaults(handler=cmd_eval)

    mia = subparsers.add_parser('mia',
                                help='MIA = (BF_forget - AF_forget) - (BF_retain - AF_retain)')
    mia.add_argument('--bf-forget',
                     type=float)
    mia.add_argument('--af-forget',
                     type=float)
    mia.add_argument('--bf-retain',
                     type=float)
    mia.add_argument('--af-retain',
                     type=float)
    mia.add_argument('--report')
    mia.add_argument('--domain')
    mia.set_defaults(handler=cmd_mia)

    gradcheck = subparsers.add_parser('gradcheck',
                                      help='Finite-difference audit of analytic gradients')
    gradcheck.add_argument('--variants',
                           type=_names,
                           default=['linear',
                                    'tanh'])
    gradcheck.add_argument('--probes',
                           type=int,
                           default=50)
    gradcheck.add_argument('--seed',
                           type=int,
                           default=0)
    gradcheck.add_argument('--step',
                           type=float,
                           default=Config.GRADCHECK_STEP)
    gradcheck.add_argument('--tolerance',
                           type=float,
                           default=Config.GRADCHECK_TOLERANCE)
    gradcheck.add_argument('--input-dim',
                           type=int,
                           default=Config.TOY_INPUT_DIM)
    gradcheck.add_argument('--feature-dim',
                           type=int,
                           default=Config.TOY_FEATURE_DIM)
    gradcheck.add_argument('--embedding-dim',
                           type=int,
                           default=Config.TOY_EMBEDDING_DIM)
    gradcheck.set_defaults(handler=cmd_gradcheck)

    report = subparsers.add_parser('report',
                                   help='Merge report.json files into one CSV table')
    report.add_argument('reports',
                        nargs='+')
    report.add_argument('--out')
    report.set_defaults(handler=cmd_report)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """Parse argv, run the subcommand and map failures to exit codes."""
    try:
        args = build_parser().parse_args(argv)
        configure_cli_logging(args.log_level,
                              args.log_file)
        return args.handler(args)
    except UnlearningError as e:
        logger.debug(f"{type(e).__name__}: {e.message}",
                     exc_info=True)
        print(f"error: {type(e).__name__}: {e.message}",
              file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {type(e).__name__}: {e}",
              file=sys.stderr)
        return EXIT_DATA
    except SystemExit as e:
        # --help
        return int(e.code or 0)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
