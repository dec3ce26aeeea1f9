"""Command-line front end.

    tokenkf run CONFIG [--output-dir DIR] [--jobs N]
    tokenkf verify
    tokenkf oracle NAME ARGS...

Exit codes for ``run``: 0 ok, 2 config does not parse, 3 a value violates
its invariant, 4 output cannot be written. ``verify`` exits 1 if any
criterion fails.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import FilterConfig
from .diagnostics import gain_window_summary, transition_timeline
from .errors import FilterError, InvalidConfig
from .policies import UpdatePolicy, policy_from_dict
from .sim import StreamScenario, cumulative_rmse, generate, iter_evaluate, save_trace, save_trace_csv

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("tokenkf")

OUTPUT_DIR_ENV = "TOKENKF_OUTPUT_DIR"
SCHEMA_VERSION = 1
DIAGNOSTIC_COLUMNS = ["frame", "mean_gain", "mean_q", "mean_p", "rho", "transition_score", "rmse"]
OUTPUT_FORMATS = {"csv", "jsonl", "binary-trace"}
# small traces only; the long-format CSV has T*N*D rows
TRACE_CSV_LIMIT = 100_000

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_INVALID, EXIT_IO = 0, 1, 2, 3, 4


class ConfigParseError(Exception):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)
        self.line, self.column = line, column


@dataclass
class RunConfig:
    scenario: StreamScenario
    policies: list[UpdatePolicy]
    filter: FilterConfig
    seeds: list[int]
    output_dir: Path
    output_formats: list[str] = field(default_factory=lambda: ["csv"])
    prefix_lengths: list[int] = field(default_factory=list)


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _build(cls, section: str, values: dict, forbidden: set[str] = frozenset()):
    allowed = _fields(cls) - forbidden
    for key in values:
        if key not in allowed:
            raise InvalidConfig(f"{section}.{key}", "unknown field")
    try:
        return cls(**values)
    except InvalidConfig as exc:
        raise InvalidConfig(f"{section}.{exc.field}", str(exc).split(": ", 1)[-1]) from None
    except TypeError as exc:
        raise InvalidConfig(section, str(exc)) from None


def parse_run_config(text: str, output_dir: Path | str | None = None) -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        col = getattr(exc, "colno", None)
        msg = getattr(exc, "msg", str(exc))
        if line is None:
            m = re.search(r"at line (\d+), column (\d+)", str(exc))
            if m:
                line, col = int(m.group(1)), int(m.group(2))
            msg = re.sub(r"\s*\(at line \d+, column \d+\)", "", msg)
        raise ConfigParseError(msg, line, col) from None

    known = {"RunConfig", "StreamScenario", "FilterConfig", "UpdatePolicy"}
    for key in doc:
        if key not in known:
            raise InvalidConfig(key, f"unknown section; expected one of {sorted(known)}")

    run = dict(doc.get("RunConfig", {}))
    scenario_values = dict(doc.get("StreamScenario", {}))
    # the run's seed list drives the scenario seed
    scenario_values.setdefault("seed", 0)
    scenario = _build(StreamScenario, "StreamScenario", scenario_values)
    # verification switches are not part of the public config surface
    filter_cfg = _build(FilterConfig, "FilterConfig", dict(doc.get("FilterConfig", {})),
                        forbidden={"idealized", "forced_q"})

    raw_policies = doc.get("UpdatePolicy", [])
    if isinstance(raw_policies, dict):
        raw_policies = [raw_policies]
    if not raw_policies:
        raise InvalidConfig("UpdatePolicy", "at least one policy is required")
    policies = []
    for i, spec in enumerate(raw_policies):
        try:
            policies.append(policy_from_dict(spec))
        except InvalidConfig as exc:
            raise InvalidConfig(f"UpdatePolicy[{i}].{exc.field}", str(exc).split(": ", 1)[-1]) from None
    labels = [p.label() for p in policies]
    if len(set(labels)) != len(labels):
        raise InvalidConfig("UpdatePolicy", f"duplicate policies: {labels}")
    if any(p.name == "adaptive-r" or getattr(p, "inner", None) and p.inner.name == "adaptive-r"
           for p in policies) and scenario.n_image_tokens == 0:
        raise InvalidConfig("StreamScenario.n_image_tokens", "adaptive-r needs synthetic attention (n_image_tokens > 0)")

    allowed_run = {"seeds", "output_dir", "output_formats", "prefix_lengths"}
    for key in run:
        if key not in allowed_run:
            raise InvalidConfig(f"RunConfig.{key}", "unknown field")
    seeds = run.get("seeds", [])
    if not isinstance(seeds, list) or not seeds:
        raise InvalidConfig("RunConfig.seeds", "at least one seed is required")
    for s in seeds:
        if isinstance(s, bool) or not isinstance(s, int) or not 0 <= s < 2**64:
            raise InvalidConfig("RunConfig.seeds", f"seed {s!r} is not an unsigned 64-bit integer")
    if len(set(seeds)) != len(seeds):
        raise InvalidConfig("RunConfig.seeds", "seeds must be distinct")
    formats = run.get("output_formats", ["csv"])
    if not isinstance(formats, list) or not formats or not set(formats) <= OUTPUT_FORMATS:
        raise InvalidConfig("RunConfig.output_formats", f"must be a nonempty subset of {sorted(OUTPUT_FORMATS)}")
    prefixes = run.get("prefix_lengths", [scenario.length])
    for n in prefixes:
        if isinstance(n, bool) or not isinstance(n, int) or not 1 <= n <= scenario.length:
            raise InvalidConfig("RunConfig.prefix_lengths", f"{n!r} is not within [1, {scenario.length}]")

    out = output_dir or run.get("output_dir") or os.environ.get(OUTPUT_DIR_ENV) or "runs"
    return RunConfig(
        scenario=scenario,
        policies=policies,
        filter=filter_cfg,
        seeds=list(seeds),
        output_dir=Path(out),
        output_formats=list(formats),
        prefix_lengths=sorted(set(prefixes)),
    )


def load_run_config(path, output_dir=None) -> RunConfig:
    return parse_run_config(Path(path).read_text(), output_dir)


def fmt(x) -> str:
    """Shortest round-trip decimal for floats."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def run_cell(cfg: RunConfig, policy: UpdatePolicy, seed: int) -> dict:
    """Evaluate one (policy, seed) pair, streaming per-frame rows to disk."""
    scenario = dataclasses.replace(cfg.scenario, seed=seed)
    trace = generate(scenario)
    stem = f"{policy.label()}_seed{seed}"
    out = cfg.output_dir
    csv_fh = open(out / f"{stem}.csv", "w", newline="") if "csv" in cfg.output_formats else None
    json_fh = open(out / f"{stem}.jsonl", "w") if "jsonl" in cfg.output_formats else None
    gains, scores, errs = [], [], []
    try:
        writer = None
        if csv_fh:
            csv_fh.write(f"# tokenkf diagnostics schema-version {SCHEMA_VERSION} policy={policy.label()} seed={seed}\n")
            writer = csv.writer(csv_fh, lineterminator="\n")
            writer.writerow(DIAGNOSTIC_COLUMNS)
        for state, diag, err in iter_evaluate(trace, policy, cfg.filter):
            row = [
                state.frame_index,
                diag.mean_gain,
                diag.mean_process_noise,
                diag.mean_posterior_variance,
                diag.update_ratio,
                diag.mean_drift_score,
                err,
            ]
            if writer:
                writer.writerow([fmt(v) for v in row])
            if json_fh:
                json_fh.write(json.dumps(dict(zip(DIAGNOSTIC_COLUMNS, row))) + "\n")
            gains.append(diag.mean_gain)
            scores.append(diag.mean_drift_score)
            errs.append(err)
    finally:
        for fh in (csv_fh, json_fh):
            if fh:
                fh.close()

    cum = cumulative_rmse(np.asarray(errs))
    timeline = transition_timeline(scores)
    summary = {"policy": policy.label(), "seed": seed, "frames": len(errs), "final_rmse": errs[-1]}
    for n in cfg.prefix_lengths:
        summary[f"prefix_rmse_{n}"] = float(cum[n - 1])
    if len(gains) >= 5:
        summary.update(gain_window_summary(gains))
    else:
        summary.update(early_mean_gain=None, late_mean_gain=None)
    summary["transition_threshold"] = timeline.threshold
    summary["transition_windows"] = [list(w) for w in timeline.windows]
    return summary


def _summary_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, list):
        return ";".join(f"{a}-{b}" for a, b in value)
    return fmt(value)


def write_summaries(cfg: RunConfig, summaries: list[dict]) -> None:
    columns = list(summaries[0])
    if "csv" in cfg.output_formats:
        with open(cfg.output_dir / "summary.csv", "w", newline="") as fh:
            fh.write(f"# tokenkf summary schema-version {SCHEMA_VERSION} percentile=linear smoothing=trailing-11\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for s in summaries:
                w.writerow([_summary_cell(s[c]) for c in columns])
    if "jsonl" in cfg.output_formats:
        with open(cfg.output_dir / "summary.jsonl", "w") as fh:
            for s in summaries:
                fh.write(json.dumps(s) + "\n")


def _check_writable(directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    probe = directory / ".tokenkf-write-check"
    probe.write_text("")
    probe.unlink()


def _run_cell_star(args):
    return run_cell(*args)


def execute(cfg: RunConfig, jobs: int = 1) -> list[dict]:
    _check_writable(cfg.output_dir)
    if "binary-trace" in cfg.output_formats:
        for seed in cfg.seeds:
            trace = generate(dataclasses.replace(cfg.scenario, seed=seed))
            save_trace(trace, cfg.output_dir / f"trace_seed{seed}.bin")
            if trace.candidates.size <= TRACE_CSV_LIMIT:
                save_trace_csv(trace, cfg.output_dir / f"trace_seed{seed}.csv")
    cells = [(cfg, p, s) for p in cfg.policies for s in cfg.seeds]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(_run_cell_star, cells))
    else:
        summaries = [run_cell(*c) for c in cells]
    write_summaries(cfg, summaries)
    return summaries


def run_config(path, output_dir=None, jobs: int = 1) -> int:
    try:
        cfg = load_run_config(path, output_dir)
    except ConfigParseError as exc:
        print(f"error: cannot parse {path}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InvalidConfig as exc:
        print(f"error: invalid value for {exc.field}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        summaries = execute(cfg, jobs)
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    except FilterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    log.info("wrote %d cells to %s", len(summaries), cfg.output_dir)
    return EXIT_OK


def verify() -> int:
    from .acceptance import run_all

    results = run_all()
    failed = [r.key for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed" + (f"; failed: {failed}" if failed else ""))
    return EXIT_FAIL if failed else EXIT_OK


def oracle(name: str, args: list[str]) -> int:
    from .theory import ORACLES

    if name not in ORACLES:
        print(f"error: unknown oracle {name!r}; choose from {sorted(ORACLES)}", file=sys.stderr)
        return EXIT_PARSE
    fn, types = ORACLES[name]
    if len(args) > len(types):
        print(f"error: {name} takes at most {len(types)} arguments", file=sys.stderr)
        return EXIT_PARSE
    try:
        values = [t(a) for t, a in zip(types, args)]
        result = fn(*values)
    except (TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if dataclasses.is_dataclass(result):
        result = dataclasses.asdict(result)
    print(json.dumps(result))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="tokenkf", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="evaluate policies over synthetic streams")
    p_run.add_argument("config")
    p_run.add_argument("--output-dir", default=None, help=f"overrides the config and ${OUTPUT_DIR_ENV}")
    p_run.add_argument("--jobs", type=int, default=1)
    sub.add_parser("verify", help="run the acceptance criteria")
    p_or = sub.add_parser("oracle", help="evaluate a closed-form reference")
    p_or.add_argument("name")
    p_or.add_argument("args", nargs="*")
    ns = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    if ns.command == "run":
        return run_config(ns.config, ns.output_dir, ns.jobs)
    if ns.command == "verify":
        return verify()
    return oracle(ns.name, ns.args)


if __name__ == "__main__":
    sys.exit(main())
