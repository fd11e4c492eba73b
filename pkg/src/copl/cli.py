"""Command-line front end for the preference-learning pipeline.

Subcommands map one-to-one onto pipeline stages (generate, train-gcf,
train-reward, adapt, eval), plus ``sweep`` for group-imbalance series and
``export`` for CSV dumps.  All artifacts live under ``--out``; every
invocation writes a ``run_manifest.json`` recording the effective config
hash, seed, library versions and wall time.  Artifacts other than the
manifest are byte-identical across reruns of the same inputs.

Exit codes: 0 success, 1 usage error, 2 runtime error.
``COPL_LOG`` selects log verbosity (debug, info, warning, error).
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .gcf import export_embeddings_csv, load_gcf, propagate, save_gcf
from .graph import build_graph
from .harness import (
    ARTIFACT_DATASET,
    ARTIFACT_GCF,
    ARTIFACT_REPORT,
    ARTIFACT_REWARD,
    ARTIFACT_UNSEEN,
    ExperimentConfig,
    StageError,
    load_unseen,
    run_experiment,
    save_unseen,
    stage_dataset,
    stage_eval,
    stage_gcf,
    stage_reward,
    stage_unseen,
)
from .jsonio import dump_file, dumps, load_file
from .mole import export_allocation_csv, expert_allocation, load_mole, save_mole
from .prefdata import load_dataset, save_dataset

log = logging.getLogger("copl")

MANIFEST = "run_manifest.json"


class UsageError(Exception):
    pass


class MissingArtifactError(FileNotFoundError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage problems instead of argparse's 2
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="copl", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name: str, help_text: str, ratios: bool = False) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", required=True, help="artifact directory")
        p.add_argument("--seed", type=int, default=None, help="override the config master seed")
        if ratios:
            p.add_argument("--ratios", required=True, help="comma-separated group ratios, e.g. 1:9,5:5,9:1")
            p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        return p

    add("generate", "generate the synthetic dataset")
    add("train-gcf", "train graph embeddings on the dataset")
    add("train-reward", "train the personalized reward model")
    add("adapt", "adapt unseen users from their annotations")
    add("eval", "evaluate all artifacts into a metrics report")
    add("sweep", "rerun the pipeline across group-size ratios", ratios=True)
    add("export", "export embeddings and expert allocation as CSV")
    return parser


def _configure_logging() -> None:
    level = os.environ.get("COPL_LOG", "warning").lower()
    levels = {
        "debug": logging.DEBUG,
        "info": logging.INFO,
        "warning": logging.WARNING,
        "error": logging.ERROR,
        "quiet": logging.CRITICAL,
    }
    logging.basicConfig(
        level=levels.get(level, logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )


def _load_config(path: str, seed_override: int | None) -> tuple[ExperimentConfig, bool]:
    try:
        raw = load_file(path)
    except FileNotFoundError:
        raise MissingArtifactError(f"config file not found: {path}")
    config = ExperimentConfig.from_dict(raw)
    overridden = seed_override is not None
    if overridden:
        config = replace(config, master_seed=seed_override)
    return config, overridden


def _require(out: Path, name: str, produced_by: str) -> Path:
    path = out / name
    if not path.exists():
        raise MissingArtifactError(
            f"missing artifact: {name} (run `copl {produced_by}` into {out} first)"
        )
    return path


def _write_manifest(
    out: Path, subcommand: str, config: ExperimentConfig, overridden: bool, started: float, outputs: list[str]
) -> None:
    config_hash = hashlib.sha256(dumps(config.to_dict()).encode("utf-8")).hexdigest()
    dump_file(
        {
            "subcommand": subcommand,
            "config_hash": config_hash,
            "master_seed": config.master_seed,
            "seed_overridden": overridden,
            "versions": {
                "copl": __version__,
                "python": platform.python_version(),
                "numpy": __import__("numpy").__version__,
                "torch": __import__("torch").__version__,
            },
            "wall_time_seconds": time.perf_counter() - started,
            "outputs": outputs,
        },
        out / MANIFEST,
    )


def _load_table(out: Path, dataset):
    model, table = load_gcf(_require(out, ARTIFACT_GCF, "train-gcf"))
    if table is None:
        table = propagate(build_graph(dataset), model)
    return model, table


def _cmd_generate(config: ExperimentConfig, out: Path) -> list[str]:
    dataset = stage_dataset(config)
    save_dataset(dataset, out / ARTIFACT_DATASET)
    log.info("dataset: %d users, %d items, %d train annotations",
             len(dataset.users), len(dataset.survey), len(dataset.annotations))
    return [ARTIFACT_DATASET]


def _cmd_train_gcf(config: ExperimentConfig, out: Path) -> list[str]:
    dataset = load_dataset(_require(out, ARTIFACT_DATASET, "generate"))
    graph = build_graph(dataset)
    model, table, trace = stage_gcf(config, dataset, graph)
    save_gcf(model, table, out / ARTIFACT_GCF)
    log.info("gcf trained: final epoch loss %.6f", trace[-1])
    return [ARTIFACT_GCF]


def _cmd_train_reward(config: ExperimentConfig, out: Path) -> list[str]:
    dataset = load_dataset(_require(out, ARTIFACT_DATASET, "generate"))
    _, table = _load_table(out, dataset)
    model, trace = stage_reward(config, dataset, table)
    save_mole(model, out / ARTIFACT_REWARD)
    log.info("reward model trained: final epoch loss %.6f", trace[-1])
    return [ARTIFACT_REWARD]


def _cmd_adapt(config: ExperimentConfig, out: Path) -> list[str]:
    dataset = load_dataset(_require(out, ARTIFACT_DATASET, "generate"))
    _, table = _load_table(out, dataset)
    graph = build_graph(dataset)
    cohort = stage_unseen(config, dataset, graph, table)
    save_unseen(cohort, out / ARTIFACT_UNSEEN)
    log.info("adapted %d unseen users", len(cohort))
    return [ARTIFACT_UNSEEN]


def _cmd_eval(config: ExperimentConfig, out: Path) -> list[str]:
    started = time.perf_counter()
    dataset = load_dataset(_require(out, ARTIFACT_DATASET, "generate"))
    _, table = _load_table(out, dataset)
    model = load_mole(_require(out, ARTIFACT_REWARD, "train-reward"))
    cohort = []
    if config.unseen.count > 0:
        cohort = load_unseen(load_file(_require(out, ARTIFACT_UNSEEN, "adapt")))
    report = stage_eval(config, dataset, table, model, cohort, time.perf_counter() - started)
    dump_file(report.to_dict(), out / ARTIFACT_REPORT)
    log.info("report: seen %.4f gnn %.4f", report.seen_accuracy, report.gnn_test_accuracy)
    return [ARTIFACT_REPORT]


def _parse_ratios(text: str) -> list[tuple[float, ...]]:
    ratios = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            ratio = tuple(float(x) for x in part.split(":"))
        except ValueError:
            raise UsageError(f"bad ratio {part!r}; expected numbers like 1:9")
        if len(ratio) < 2 or any(r <= 0 for r in ratio):
            raise UsageError(f"bad ratio {part!r}; expected at least two positive sizes")
        ratios.append(ratio)
    if not ratios:
        raise UsageError("--ratios is empty")
    return ratios


def _ratio_dir(ratio: tuple[float, ...]) -> str:
    return "ratio_" + "_".join(format(r, "g") for r in ratio)


def _run_one_ratio(config_dict: dict, ratio: tuple[float, ...], out_str: str) -> str:
    from .harness import imbalance_sweep  # re-imported in worker processes

    config = ExperimentConfig.from_dict(config_dict)
    imbalance_sweep(config, [ratio], out_str)
    return _ratio_dir(ratio)


def _cmd_sweep(config: ExperimentConfig, out: Path, ratios_text: str, jobs: int) -> list[str]:
    ratios = _parse_ratios(ratios_text)
    out.mkdir(parents=True, exist_ok=True)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            dirs = list(
                pool.map(
                    _run_one_ratio,
                    [config.to_dict()] * len(ratios),
                    ratios,
                    [str(out)] * len(ratios),
                )
            )
    else:
        dirs = [_run_one_ratio(config.to_dict(), ratio, str(out)) for ratio in ratios]
    summary = {
        "ratios": [
            {
                "ratio": list(ratio),
                "report": str(Path(d) / ARTIFACT_REPORT),
            }
            for ratio, d in zip(ratios, dirs)
        ]
    }
    dump_file(summary, out / "sweep_summary.json")
    return [str(Path(d) / ARTIFACT_REPORT) for d in dirs] + ["sweep_summary.json"]


def _cmd_export(config: ExperimentConfig, out: Path) -> list[str]:
    dataset = load_dataset(_require(out, ARTIFACT_DATASET, "generate"))
    _, table = _load_table(out, dataset)
    export_embeddings_csv(table, dataset.users, out / "embeddings.csv")
    outputs = ["embeddings.csv"]
    reward_path = out / ARTIFACT_REWARD
    if reward_path.exists():
        model = load_mole(reward_path)
        allocation = expert_allocation(model, table.user_embeddings, dataset.users)
        export_allocation_csv(allocation, dataset.users, out / "expert_allocation.csv")
        outputs.append("expert_allocation.csv")
    return outputs


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    started = time.perf_counter()
    try:
        config, overridden = _load_config(args.config, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.subcommand == "generate":
            outputs = _cmd_generate(config, out)
        elif args.subcommand == "train-gcf":
            outputs = _cmd_train_gcf(config, out)
        elif args.subcommand == "train-reward":
            outputs = _cmd_train_reward(config, out)
        elif args.subcommand == "adapt":
            outputs = _cmd_adapt(config, out)
        elif args.subcommand == "eval":
            outputs = _cmd_eval(config, out)
        elif args.subcommand == "sweep":
            outputs = _cmd_sweep(config, out, args.ratios, args.jobs)
        elif args.subcommand == "export":
            outputs = _cmd_export(config, out)
        else:  # pragma: no cover - argparse enforces the enum
            raise UsageError(f"unknown subcommand {args.subcommand!r}")
        _write_manifest(out, args.subcommand, config, overridden, started, outputs)
        return 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (MissingArtifactError, StageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        log.debug("unhandled error", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
