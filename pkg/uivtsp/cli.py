"""Command-line entry point: scenario runs, sweeps and ledger inspection."""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

from pydantic import BaseModel

from uivtsp import __version__
from uivtsp.errors import ConfigurationError, LedgerFormatError
from uivtsp.ledger import block_to_json, dump_chain, load_chain, verify_chain
from uivtsp.reporting import (
    aggregate_rows,
    plot_leak_probability,
    plot_rate_by_dishonest,
    plot_suppression,
    plot_tracing_delay,
    render_run_plots,
    write_cycles_csv,
    write_delay_csv,
    write_summary_csv,
    write_sweep_csv,
)
from uivtsp.simulator import (
    MetricsSeries,
    Scheme,
    Simulation,
    cell_seed,
    load_config,
    measure_tracing_delay,
    run_grid,
)
from uivtsp.trust import PenaltyMode, Thresholds

logger = logging.getLogger("uivtsp")

LOG_FORMAT = "%(levelname)-5.5s [%(name)s] %(message)s"

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_USAGE = 2


class RunManifest(BaseModel):
    version: str
    config: dict[str, Any]
    seed: int
    started_at: str
    finished_at: str | None = None
    outputs: dict[str, str] = {}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Argument helpers
# ---------------------------------------------------------------------------


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _thresholds(text: str) -> tuple[float, float, float]:
    try:
        return Thresholds.parse(text).as_tuple()
    except ConfigurationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _threshold_list(text: str) -> list[tuple[float, float, float]]:
    return [_thresholds(part) for part in text.split(";") if part.strip()]


def _seed_range(text: str) -> list[int]:
    """'1-10' or '1,2,5'."""
    if "-" in text and "," not in text:
        low, _, high = text.partition("-")
        try:
            return list(range(int(low), int(high) + 1))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad seed range {text!r}") from None
    return _int_list(text)


# flag name -> ScenarioConfig field
_SCENARIO_FLAGS = {
    "workers": "n_workers",
    "semihonest": "pct_semihonest",
    "cycles": "cycles",
    "k": "width_k",
    "embed": "embed_count",
    "penalty": "penalty_mode",
    "trap_window": "trap_window_cycles",
    "seed": "seed",
    "p_dishonest": "p_leak_dishonest",
    "p_semihonest": "p_leak_semihonest",
    "vulnerabilities": "n_vulnerabilities",
}


def _add_scenario_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("scenario")
    group.add_argument("--config", type=Path, help="JSON file mirroring the flags; flags override it")
    group.add_argument("--workers", type=int)
    group.add_argument("--semihonest", type=float)
    group.add_argument("--cycles", type=int)
    group.add_argument("--k", type=int, choices=(256, 512, 1024))
    group.add_argument("--embed", type=int)
    group.add_argument("--penalty", choices=[PenaltyMode.literal.value, PenaltyMode.on_leak.value])
    group.add_argument("--trap-window", type=int, help="trap validity in cycles")
    group.add_argument("--seed", type=int)
    group.add_argument("--p-dishonest", type=float, help="per-cycle leak probability of dishonest workers")
    group.add_argument("--p-semihonest", type=float, help="per-cycle leak probability of semi-honest workers")
    group.add_argument("--vulnerabilities", type=int)
    group.add_argument("--out", type=Path, default=Path("results"))
    group.add_argument("--force", action="store_true", help="overwrite existing outputs")


def _base_config(args: argparse.Namespace) -> dict[str, Any]:
    data: dict[str, Any] = {}
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError(f"config {args.config} must hold a JSON object")
    for flag, field in _SCENARIO_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            data[field] = value
    return data


def _schemes(value: str) -> list[Scheme]:
    return [Scheme.uiv_tsp, Scheme.uiv_sp] if value == "both" else [Scheme(value)]


def _claim(path: Path, force: bool) -> Path:
    if path.exists():
        if not force:
            raise UsageError(f"{path} already exists; pass --force to overwrite")
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()
    return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    data = _base_config(args)
    if args.dishonest is not None:
        data["pct_dishonest"] = args.dishonest
    if args.thresholds is not None:
        data["thresholds"] = args.thresholds
    configs = [load_config({**data, "scheme": scheme.value}) for scheme in _schemes(args.scheme)]

    out: Path = args.out
    targets = [out / cfg.scheme.value for cfg in configs]
    for target in targets:
        _claim(target, args.force)
    _claim(out / "summary.csv", args.force)

    results: list[MetricsSeries] = []
    for cfg, target in zip(configs, targets):
        target.mkdir(parents=True)
        manifest = RunManifest(
            version=__version__,
            config=cfg.model_dump(mode="json"),
            seed=cfg.seed,
            started_at=_now(),
            outputs={
                "cycles": str(target / "cycles.csv"),
                "ledger": str(target / "ledger.jsonl"),
                "summary": str(out / "summary.csv"),
            },
        )
        manifest_path = target / "manifest.json"
        manifest_path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")

        sim = Simulation(cfg)
        series = sim.run()
        results.append(series)
        write_cycles_csv(series, target / "cycles.csv")
        dump_chain(sim.authority.chain, target / "ledger.jsonl")

        manifest.finished_at = _now()
        manifest_path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")

    write_summary_csv(results, out / "summary.csv")
    render_run_plots(results, out)
    for series in results:
        print(
            f"{series.config.scheme.value}: detection={_show(series.detection_rate)} "
            f"false_alarm={_show(series.false_alarm_rate)} "
            f"leakage={_show(series.leakage_probability)}"
        )
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    base = _base_config(args)
    base.setdefault("seed", 0)
    dishonest = args.dishonest or [base.get("pct_dishonest", 0.3)]
    triples = args.thresholds or [tuple(base.get("thresholds", (0.2, 0.5, 0.8)))]
    seeds = args.seeds or [base["seed"]]
    schemes = _schemes(args.scheme)
    if not (dishonest and triples and seeds and schemes):
        raise UsageError("empty sweep grid")

    configs = []
    for pct in dishonest:
        for triple in triples:
            for rep in seeds:
                seed = cell_seed(base["seed"], pct, *triple, rep)
                for scheme in schemes:
                    configs.append(
                        load_config(
                            {
                                **base,
                                "pct_dishonest": pct,
                                "thresholds": triple,
                                "seed": seed,
                                "scheme": scheme.value,
                            }
                        )
                    )

    out: Path = args.out
    _claim(out / "sweep_summary.csv", args.force)
    _claim(out / "tracing_delay.csv", args.force)
    logger.info("Sweep: %d scenario cells on %d job(s)", len(configs), args.jobs)
    results = run_grid(configs, jobs=args.jobs)
    write_sweep_csv(results, out / "sweep_summary.csv")

    plots = out / "plots"
    rows = aggregate_rows(results)
    plot_suppression(results, plots / "suppression.png")
    plot_leak_probability(rows, plots / "leak_probability.png")
    if len({r["pct_dishonest"] for r in rows}) > 1:
        plot_rate_by_dishonest(rows, "detection_rate", "detection rate", plots / "detection.png")
        plot_rate_by_dishonest(rows, "false_alarm_rate", "false alarm rate", plots / "false_alarm.png")

    if not args.skip_delay:
        widths = args.k_axis or [base.get("width_k", 256)]
        embeds = args.embed_axis or [base.get("embed_count", 1)]
        if not (widths and embeds):
            raise UsageError("empty delay grid")
        cells = measure_tracing_delay(widths, embeds, rounds=args.rounds, seed=base["seed"])
        write_delay_csv(cells, out / "tracing_delay.csv")
        plot_tracing_delay(cells, plots / "tracing_delay.png")
    return EXIT_OK


def cmd_ledger_verify(args: argparse.Namespace) -> int:
    chain = load_chain(args.path)
    verdict = verify_chain(chain)
    print(verdict)
    logger.info("Ledger %s: %d blocks, %s", args.path, len(chain), verdict)
    return EXIT_OK if verdict else EXIT_INVALID


def cmd_ledger_show(args: argparse.Namespace) -> int:
    chain = load_chain(args.path)
    if args.height is not None:
        if not 0 <= args.height < len(chain):
            raise UsageError(f"height {args.height} outside 0-{len(chain) - 1}")
        print(json.dumps(block_to_json(chain.blocks[args.height]), indent=2))
        return EXIT_OK
    for block in chain.blocks:
        head = block.head
        kinds = ",".join(leaf.kind.value for leaf in block.leaves)
        print(f"{head.block_id:>6} {block.hash.short()} {head.sw_id:<12} tr={head.trust_value:.4f} {kinds}")
    return EXIT_OK


def cmd_ledger_archive(args: argparse.Namespace) -> int:
    from uivtsp.archive import save_chain
    from uivtsp.database import SessionLocal, init_archive

    chain = load_chain(args.path)
    verdict = verify_chain(chain)
    if not verdict:
        print(verdict)
        return EXIT_INVALID
    init_archive()
    with SessionLocal() as db:
        written = save_chain(db, chain, args.name)
    print(f"archived {written} new block(s) of {len(chain)} as {args.name!r}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("uivtsp.main:app", host=args.host, port=args.port)
    return EXIT_OK


def _show(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.3f}"


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uivtsp",
        description="Trusted sharing of undisclosed IIoT vulnerabilities: simulations and ledger tools.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario per scheme")
    _add_scenario_flags(run)
    run.add_argument("--dishonest", type=float)
    run.add_argument("--thresholds", type=_thresholds, help="l,m,h")
    run.add_argument("--scheme", choices=["uiv-tsp", "uiv-sp", "both"], default="both")
    run.set_defaults(handler=cmd_run)

    sweep = sub.add_parser("sweep", help="grid of scenarios plus the tracing-delay grid")
    _add_scenario_flags(sweep)
    sweep.add_argument("--dishonest", type=_float_list, help="axis, e.g. 0.1,0.2,0.3,0.4,0.5")
    sweep.add_argument("--thresholds", type=_threshold_list, help="axis of l,m,h triples separated by ';'")
    sweep.add_argument("--seeds", type=_seed_range, help="repetitions, e.g. 1-10")
    sweep.add_argument("--scheme", choices=["uiv-tsp", "uiv-sp", "both"], default="both")
    sweep.add_argument("--k-axis", type=_int_list, help="digest widths, e.g. 256,512,1024")
    sweep.add_argument("--embed-axis", type=_int_list, help="embed counts, e.g. 1,2,3,4")
    sweep.add_argument("--rounds", type=int, default=200)
    sweep.add_argument("--skip-delay", action="store_true")
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.set_defaults(handler=cmd_sweep)

    ledger = sub.add_parser("ledger", help="inspect a JSON-Lines ledger")
    ledger_sub = ledger.add_subparsers(dest="ledger_command", required=True)
    verify = ledger_sub.add_parser("verify")
    verify.add_argument("path", type=Path)
    verify.set_defaults(handler=cmd_ledger_verify)
    show = ledger_sub.add_parser("show")
    show.add_argument("path", type=Path)
    show.add_argument("--height", type=int)
    show.set_defaults(handler=cmd_ledger_show)
    archive = ledger_sub.add_parser("archive", help="store the chain into DATABASE_URL")
    archive.add_argument("path", type=Path)
    archive.add_argument("--name", default="default", help="archive chain name")
    archive.set_defaults(handler=cmd_ledger_archive)

    serve = sub.add_parser("serve", help="run the authority HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    try:
        return args.handler(args)
    except (UsageError, ConfigurationError) as exc:
        print(f"uivtsp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LedgerFormatError as exc:
        print(f"uivtsp: cannot parse ledger: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"uivtsp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
