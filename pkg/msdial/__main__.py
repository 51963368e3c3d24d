"""Command line interface."""
from __future__ import annotations
from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import Any, Optional, Sequence

from msdial._data.synthetic import write_synthetic
from msdial._experiment import LAMBDA_GRID, Experiment, load_domains
from msdial._reports import emit_results, export_features, pca_project
from msdial.config import (
    METHODS,
    ExperimentConfig,
    Method,
    SyntheticConfig,
    load_config,
)
from msdial.exceptions import ConfigError, MsDialError, ValidationError


def _methods(value: str) -> list[Method]:
    """Parse a comma separated method list.

    Args:
        value: Argument.

    Returns:
        Methods.
    """
    methods = [item.strip() for item in value.split(",") if item.strip()]
    for method in methods:
        if method not in METHODS:
            raise ConfigError(
                f"Unsupported method {method!r}, use {', '.join(METHODS)}"
            )
    return methods  # type: ignore


def _floats(value: str) -> list[float]:
    """Parse a comma separated float list.

    Args:
        value: Argument.

    Returns:
        Values.
    """
    try:
        return [float(item) for item in value.split(",") if item.strip()]
    except ValueError as exception:
        raise ConfigError(str(exception))


def _config(args: Namespace, **overrides: Any) -> ExperimentConfig:
    """Configuration from the file and command line flags.

    Args:
        args: Parsed arguments.
        overrides: Other overrides.

    Returns:
        Configuration.
    """
    synthetic = getattr(args, "synthetic", None)
    return load_config(
        args.config,
        target_name=args.target,
        replications=args.replications,
        seed=args.seed,
        epochs=args.epochs,
        output_dir=args.out,
        synthetic=None if synthetic is None else dict(shift=synthetic),
        **{"lambda": args.lambda_},
        **overrides,
    )


def _gen_synth(args: Namespace) -> None:
    """Write synthetic domains feature tables."""
    cfg = load_config(args.config) if args.config else None
    fields: dict[str, Any] = (
        dict(cfg.synthetic) if cfg is not None and cfg.synthetic is not None else {}
    )
    fields.update(
        (key, value)
        for key, value in dict(
            domains=args.domains,
            latent_dim=args.latent_dim,
            classes=args.classes,
            samples=args.samples,
            shift=args.shift,
            seed=args.seed,
        ).items()
        if value is not None
    )
    spec = SyntheticConfig(**fields).build()
    for path in write_synthetic(spec, args.out or "."):
        print(path)


def _train(args: Namespace) -> None:
    """Run experiments and write the results table."""
    cfg = _config(args)
    methods = _methods(args.method) if args.method else [cfg.method]
    experiment = Experiment()
    try:
        records = experiment.leave_one_domain_out(cfg, methods)
    finally:
        experiment.close()
    path = Path(cfg.output_dir) / "results.csv"
    emit_results(records, path)
    for record in records:
        print(record)
    print(path)


def _ablate(args: Namespace) -> None:
    """Run the entropy weight sweep and write the results table.

    Without target, the table has per entropy weight averages over all targets.
    """
    cfg = _config(args, method="msdial")
    experiment = Experiment()
    try:
        records = experiment.lambda_sweep(cfg, args.lambdas or LAMBDA_GRID)
    finally:
        experiment.close()
    path = Path(cfg.output_dir) / "ablation.csv"
    emit_results(records, path)
    for record in records:
        print(record)
    print(path)


def _export_features(args: Namespace) -> None:
    """Train a model and export the test features of every domain."""
    method = _methods(args.method)[0] if args.method else None
    cfg = _config(args, method=method)
    if cfg.target_name is None:
        raise ConfigError("The feature export requires a target domain")
    domains = load_domains(cfg)
    experiment = Experiment()
    try:
        model, target_id, data = experiment.train_model(cfg, domains)
    finally:
        experiment.close()
    root = Path(cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    for _, test in domains:
        if test.name == data.name:
            dataset, domain_id = data.test, target_id
        else:
            dataset = test
            domain_id = (
                [source.name for source in data.sources].index(test.name)
                if cfg.method == "msdial"
                else 0
            )
        path = root / f"{test.name}.features.tsv"
        export_features(model, dataset, args.layer, path, domain_id)
        print(path)


def _project(args: Namespace) -> None:
    """Project a feature table to 2-D."""
    pca_project(args.input, args.out)
    print(args.out)


def _experiment_flags(parser: ArgumentParser) -> None:
    """Add experiment flags.

    Args:
        parser: Sub-command parser.
    """
    parser.add_argument("--config", help="Configuration file")
    parser.add_argument("--target", help="Target domain name")
    parser.add_argument("--method", help="Method(s): src, tar, msdial")
    parser.add_argument("--lambda", dest="lambda_", type=float, help="Entropy weight")
    parser.add_argument("--replications", type=int, help="Replications")
    parser.add_argument("--epochs", type=int, help="Training epochs")
    parser.add_argument("--seed", type=int, help="Random seed")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument(
        "--synthetic",
        choices=("diagonal", "identity"),
        help="Use generated synthetic domains with this shift",
    )


def _parser() -> ArgumentParser:
    """Command line parser.

    Returns:
        Parser.
    """
    parser = ArgumentParser(
        prog="msdial",
        description="Multi-source domain adaptation with domain alignment layers",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gen_synth = commands.add_parser("gen-synth", help="Generate synthetic domains")
    gen_synth.add_argument("--config", help="Configuration file")
    gen_synth.add_argument("--domains", type=int, help="Number of domains")
    gen_synth.add_argument("--latent-dim", type=int, help="Latent dimension")
    gen_synth.add_argument("--classes", type=int, help="Classes")
    gen_synth.add_argument("--samples", type=int, help="Train samples per domain")
    gen_synth.add_argument("--shift", choices=("diagonal", "identity"))
    gen_synth.add_argument("--seed", type=int, help="Random seed")
    gen_synth.add_argument("--out", help="Output directory")
    gen_synth.set_defaults(func=_gen_synth)

    train = commands.add_parser("train", help="Run experiments")
    _experiment_flags(train)
    train.set_defaults(func=_train)

    ablate = commands.add_parser("ablate", help="Entropy weight sweep")
    _experiment_flags(ablate)
    ablate.add_argument("--lambdas", type=_floats, help="Comma separated weights")
    ablate.set_defaults(func=_ablate)

    export = commands.add_parser("export-features", help="Export learned features")
    _experiment_flags(export)
    export.add_argument(
        "--layer", type=int, help="Node boundary, the final classifier by default"
    )
    export.set_defaults(func=_export_features)

    project = commands.add_parser("project", help="2-D projection of features")
    project.add_argument("--input", required=True, help="Feature table")
    project.add_argument("--out", required=True, help="Projection CSV")
    project.set_defaults(func=_project)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Command line entry point.

    Args:
        argv: Arguments, the process ones if None.

    Returns:
        Exit code.
    """
    parser = _parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (MsDialError, ValidationError) as exception:
        parser.exit(1, f"error: {exception}\n")
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
