"""Batch runner for memory experiments.

Reads one experiment config (or a ``[leaky, baseline]`` pair) from JSON,
applies command-line overrides, runs it and writes result files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from pydantic import ValidationError

from .config import get_settings
from .errors import ConfigError, LeaksimError
from .operations.experiment import ExperimentConfig, run_batch, sweep, thermal_approximation
from .simulator import LeakageSimulator

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="leaksim", description="Simulate leakage in QEC memory experiments.")
    parser.add_argument("--config", type=Path, help="JSON experiment config, or a two-entry [leaky, baseline] list")
    parser.add_argument("--code", choices=["repetition", "surface"])
    parser.add_argument("--distance", type=int)
    parser.add_argument("--rounds", type=int)
    parser.add_argument("--preset", help="noise preset: noiseless, thermal, coherent or physical")
    parser.add_argument("--mode", choices=["exact3", "rpa", "qubit"])
    parser.add_argument("--shots", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int, help="worker processes (default: LEAKSIM_WORKERS)")
    parser.add_argument("--baseline", action="store_true", help="also run the seed-matched leak-free baseline")
    parser.add_argument("--dump-records", action="store_true", help="write records.ndjson with every trajectory")
    parser.add_argument("--out-dir", help="result directory (default: LEAKSIM_OUT_DIR)")
    parser.add_argument("--log-level", help="logging level (default: LEAKSIM_LOG_LEVEL)")
    parser.add_argument(
        "--thermal-approximation",
        action="store_true",
        help="compare naive RPA with the fitted thermal model against the exact run",
    )
    parser.add_argument(
        "--sweep",
        metavar="FIELD=V1,V2,...",
        help="vary one config field, e.g. cz.eta=0.1,0.2,0.3",
    )
    return parser.parse_args(argv)


def load_configs(args: argparse.Namespace) -> list[ExperimentConfig]:
    """Build configs from ``--config`` and the override flags."""
    raw: list[dict] = [{}]
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}") from exc
        raw = data if isinstance(data, list) else [data]
        if not 1 <= len(raw) <= 2:
            raise ConfigError("a batch file holds one config or a [leaky, baseline] pair")
    overrides = {
        "code": args.code,
        "distance": args.distance,
        "rounds": args.rounds,
        "preset": args.preset,
        "mode": args.mode,
        "shots": args.shots,
        "seed": args.seed,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if args.baseline:
        overrides["baseline"] = True
    if args.dump_records:
        overrides["dump_records"] = True
    configs = []
    for i, entry in enumerate(raw):
        merged = {**entry, **overrides}
        if args.out_dir is not None:
            merged["out_dir"] = args.out_dir if i == 0 else str(Path(args.out_dir) / "baseline")
        configs.append(ExperimentConfig.model_validate(merged))
    return configs


def _parse_sweep(text: str) -> tuple[str, list]:
    field_path, _, values = text.partition("=")
    if not field_path or not values:
        raise ConfigError(f"sweep must look like FIELD=V1,V2,..., got {text!r}")
    return field_path, [json.loads(v) for v in values.split(",")]


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    settings = get_settings()
    logging.basicConfig(
        level=(args.log_level or settings.log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        configs = load_configs(args)
        sweep_spec = _parse_sweep(args.sweep) if args.sweep else None
        if configs[0].out_dir is None:
            configs[0] = configs[0].model_copy(update={"out_dir": settings.out_dir})
    except ValidationError as exc:
        print(f"[error] invalid config:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"[error] {exc}", file=sys.stderr)
        return EXIT_CONFIG

    sim = LeakageSimulator(workers=args.workers, settings=settings)
    try:
        if args.thermal_approximation:
            out = thermal_approximation(sim, configs[0])
            path = Path(configs[0].out_dir) / "thermal_approximation.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(out, indent=2, default=str))
            print(json.dumps(out.get("added_error_mpe", {}), indent=2))
        elif sweep_spec is not None:
            field_path, values = sweep_spec
            base = configs[0].model_copy(update={"out_dir": None})
            store = Path(configs[0].out_dir) / "runs"
            rows = sweep(sim, base, field_path, values, store=store)
            path = Path(configs[0].out_dir) / "sweep.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(rows, indent=2, default=str))
            for value, row in zip(values, rows):
                eps = row["fit"]["epsilon_L"] if row["fit"] else float("nan")
                print(f"{field_path}={value}: epsilon_L={eps:.5f}")
        else:
            rows = run_batch(sim, configs, store=Path(configs[0].out_dir) / "runs")
            head = rows[0]
            print(json.dumps(head["fit"] or {"p_logical": head["p_logical"]}, indent=2))
    except (ValidationError, ConfigError) as exc:
        print(f"[error] {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LeaksimError, OSError, RuntimeError) as exc:
        logger.exception("run failed")
        print(f"[error] {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
