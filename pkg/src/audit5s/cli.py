"""Command-line entry point: ``audit5s audit|validate|economics|report``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
(partial results may have been written).
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from dataclasses import dataclass, field
from datetime import datetime
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import __version__
from .client import (
    DEFAULT_CREDENTIAL_ENV,
    BackendProfile,
    ClientConfig,
    Clock,
    ConfigError,
    DispatchGate,
    HttpBackend,
    MockBackend,
    global_gate,
    parse_script,
)
from .economics import ScenarioError, evaluate_scenario, load_scenario, paper_scenario
from .engine import TemplateError, build_prompt, load_template
from .pipeline import (
    ATTENTION_THRESHOLD,
    consistency_or_none,
    run_audit,
    run_validation,
    utc_now,
)
from .report import (
    ReportError,
    build_audit_report,
    build_economics_report,
    build_validation_report,
    load_document,
    parse_formats,
    render_report,
)
from .store import GroundTruthError, HistoryStore, load_ground_truth, scan_batch

log = logging.getLogger("audit5s")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
HISTORY_FILE = "audit_history.jsonl"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits with 2 by default
        self.print_usage(sys.stderr)
        raise UsageError(message)


# Config-file keys, by section. Values are strings; flags with the same name win.
CONFIG_KEYS = {
    "run": ("backend", "seed", "script", "batch", "ground_truth", "out", "formats", "window",
            "scenario", "horizon", "history", "template", "attention_threshold"),
    "client": ("retries", "delay", "timeout", "endpoint", "credential", "cost_per_request"),
    "backend": ("prompt_field", "image_field", "media_type_field", "response_field", "model", "model_field"),
}
DEFAULTS = {
    "backend": "mock", "seed": "0", "out": "audit5s_out", "formats": "json,csv,html", "window": "5",
    "horizon": "5", "retries": "3", "delay": "3", "timeout": "60", "credential": DEFAULT_CREDENTIAL_ENV,
    "attention_threshold": str(ATTENTION_THRESHOLD),
}


@dataclass
class RunConfig:
    backend: str = "mock"
    seed: int = 0
    script: Optional[Path] = None
    client: ClientConfig = field(default_factory=ClientConfig)
    profile: BackendProfile = field(default_factory=BackendProfile)
    batch: Optional[Path] = None
    ground_truth: Optional[Path] = None
    out: Path = Path("audit5s_out")
    formats: tuple[str, ...] = ("json", "csv", "html")
    scenario: Optional[Path] = None
    horizon: int = 5
    window: int = 5
    history: Optional[Path] = None
    template: Optional[Path] = None
    attention_threshold: int = ATTENTION_THRESHOLD

    @property
    def history_path(self) -> Path:
        return self.history or self.out / HISTORY_FILE


def read_config_file(path: Path) -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values: dict[str, str] = {}
    for section in parser.sections():
        allowed = CONFIG_KEYS.get(section)
        if allowed is None:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, value in parser.items(section):
            key = key.replace("-", "_")
            if key not in allowed:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            values[key] = value
    return values


def _int(values: dict, key: str, minimum: int = 0) -> int:
    try:
        n = int(values[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be an integer, got {values[key]!r}") from None
    if n < minimum:
        raise ConfigError(f"{key} must be >= {minimum}")
    return n


def _float(values: dict, key: str) -> float:
    try:
        x = float(values[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be a number, got {values[key]!r}") from None
    if not x >= 0:
        raise ConfigError(f"{key} must be >= 0")
    return x


def _path(values: dict, key: str) -> Optional[Path]:
    v = values.get(key)
    return Path(v) if v else None


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = dict(DEFAULTS)
    if getattr(args, "config", None):
        values.update(read_config_file(Path(args.config)))
    for key in set().union(*CONFIG_KEYS.values()):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = str(flag)
    backend = values["backend"].strip().lower()
    if backend not in ("mock", "http"):
        raise ConfigError(f"backend must be 'http' or 'mock', got {backend!r}")
    cost = None
    if values.get("cost_per_request"):
        try:
            cost = Decimal(values["cost_per_request"])
        except InvalidOperation:
            raise ConfigError("cost_per_request must be a decimal amount") from None
    client = ClientConfig(
        max_retries=_int(values, "retries"),
        inter_request_delay=_float(values, "delay"),
        request_timeout=_float(values, "timeout"),
        endpoint=values.get("endpoint", ""),
        credential=values["credential"],
        cost_per_request=cost,
    )
    client.validate()
    profile_keys = {k: values[k] for k in CONFIG_KEYS["backend"] if values.get(k)}
    try:
        formats = parse_formats(values["formats"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(
        backend=backend,
        seed=_int(values, "seed", minimum=-(2**63)),
        script=_path(values, "script"),
        client=client,
        profile=BackendProfile(**profile_keys),
        batch=_path(values, "batch"),
        ground_truth=_path(values, "ground_truth"),
        out=Path(values["out"]),
        formats=formats,
        scenario=_path(values, "scenario"),
        horizon=_int(values, "horizon", minimum=1),
        window=_int(values, "window", minimum=2),
        history=_path(values, "history"),
        template=_path(values, "template"),
        attention_threshold=_int(values, "attention_threshold"),
    )


def make_backend(cfg: RunConfig, clock: Optional[Clock] = None):
    if cfg.backend == "http":
        return HttpBackend(cfg.client.endpoint, cfg.client.credential, cfg.profile)
    script = None
    if cfg.script is not None:
        try:
            script = parse_script(json.loads(cfg.script.read_text("utf-8")))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"bad mock script {cfg.script}: {exc}") from exc
    return MockBackend(seed=cfg.seed, script=script, clock=clock)


# -- subcommands -----------------------------------------------------------------------


@dataclass
class Env:
    """Injectable process services; tests swap in a fake clock and a fixed wall clock."""

    gate: DispatchGate = field(default_factory=global_gate)
    now: Callable[[], datetime] = utc_now
    stdout: object = None

    def echo(self, message: str) -> None:
        print(message, file=self.stdout or sys.stdout)


def _audit(cfg: RunConfig, env: Env) -> tuple[int, object]:
    if cfg.batch is None:
        raise ConfigError("--batch is required")
    try:
        batch = scan_batch(cfg.batch)
    except OSError as exc:
        raise ConfigError(str(exc)) from exc
    if not len(batch):
        raise ConfigError(f"no PNG/JPEG images in {cfg.batch}")
    for name in batch.skipped:
        log.info("skipped unsupported file %s", name)
    try:
        prompt = build_prompt(load_template(cfg.template) if cfg.template else None)
    except (OSError, TemplateError) as exc:
        raise ConfigError(f"prompt template: {exc}") from exc
    backend = make_backend(cfg, env.gate.clock)
    store = HistoryStore(cfg.history_path)
    run = run_audit(batch, prompt, cfg.client, backend, store, env.gate, env.now, cfg.attention_threshold)
    history = store.read().records
    doc = build_audit_report(run, history, consistency_or_none(history, cfg.window), cfg.window)
    render_report(doc, cfg.formats, cfg.out)
    env.echo(f"audited {run.total} images: {len(run.sheets)} evaluated, {len(run.failures)} failed, "
             f"success rate {run.success_rate:.1f}%")
    return (EXIT_RUNTIME if run.failures else EXIT_OK), run


def cmd_audit(cfg: RunConfig, env: Env) -> int:
    return _audit(cfg, env)[0]


def cmd_validate(cfg: RunConfig, env: Env) -> int:
    if cfg.ground_truth is None:
        raise ConfigError("--ground-truth is required")
    try:
        truth = load_ground_truth(cfg.ground_truth)
    except OSError as exc:
        raise ConfigError(f"cannot read ground truth: {exc}") from exc
    except GroundTruthError as exc:
        raise ConfigError(f"{cfg.ground_truth}: {exc}") from exc
    code = EXIT_OK
    if cfg.batch is not None:
        code = cmd_audit(cfg, env)
    records = HistoryStore(cfg.history_path).read().records
    if not records:
        raise ConfigError(f"no audit history at {cfg.history_path}; run 'audit' first or pass --batch")
    result = run_validation(records, truth)
    render_report(build_validation_report(result), cfg.formats, cfg.out)
    if result.unmatched_ground_truth:
        env.echo(f"warning: {len(result.unmatched_ground_truth)} ground-truth ids have no audit result")
    if result.agreement is not None:
        a = result.agreement
        env.echo(f"kappa {a.kappa:.3f} (95% CI {a.ci_low:.2f}-{a.ci_high:.2f}), {a.interpretation.label}; "
                 f"accuracy {100 * result.metrics.overall_accuracy:.1f}% over {result.n} images")
    else:
        env.echo(f"kappa undefined: {result.agreement_error}")
    return code


def cmd_economics(cfg: RunConfig, env: Env) -> int:
    try:
        scenario = load_scenario(cfg.scenario) if cfg.scenario else paper_scenario()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc}") from exc
    except ScenarioError as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc
    try:
        report = evaluate_scenario(scenario, cfg.horizon)
    except ValueError as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc
    render_report(build_economics_report(report), cfg.formats, cfg.out)
    payback = "never" if report.payback_months == float("inf") else f"{report.payback_months:.1f} months"
    roi = "undefined" if report.roi_year1_percent is None else f"{report.roi_year1_percent:.1f}%"
    env.echo(f"monthly savings {report.monthly_savings}; year-1 ROI {roi}; payback {payback}")
    return EXIT_OK


def cmd_report(cfg: RunConfig, env: Env, source: Optional[str]) -> int:
    if not source:
        raise ConfigError("--input is required")
    try:
        doc = load_document(source)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load report {source}: {exc}") from exc
    for path in render_report(doc, cfg.formats, cfg.out):
        env.echo(str(path))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI file with [run], [client] and [backend] sections")
    common.add_argument("--backend", choices=("http", "mock"))
    common.add_argument("--seed", type=int)
    common.add_argument("--script", help="JSON mock script (list of replies/failures)")
    common.add_argument("--batch", help="directory of PNG/JPEG images")
    common.add_argument("--ground-truth", dest="ground_truth")
    common.add_argument("--out", help="output directory")
    common.add_argument("--formats", help="comma list of json,csv,html")
    common.add_argument("--delay", type=float, help="seconds between requests (default 3)")
    common.add_argument("--retries", type=int, help="retries per image (default 3)")
    common.add_argument("--timeout", type=float, help="seconds per request (default 60)")
    common.add_argument("--endpoint")
    common.add_argument("--credential", help="name of the env var holding the API key")
    common.add_argument("--window", type=int, help="audits in the Shitsuke consistency window")
    common.add_argument("--scenario")
    common.add_argument("--horizon", type=int, help="years of cumulative ROI")
    common.add_argument("--history", help=f"history file (default OUT/{HISTORY_FILE})")
    common.add_argument("--template", help="prompt template file")
    common.add_argument("--attention-threshold", dest="attention_threshold", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="audit5s", description="Automated 5S audits from images.")
    parser.add_argument("--version", action="version", version=f"audit5s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    sub.add_parser("audit", parents=[common], help="audit a batch of images")
    sub.add_parser("validate", parents=[common], help="compare audits with human ground truth")
    sub.add_parser("economics", parents=[common], help="manual vs automated cost model")
    rep = sub.add_parser("report", parents=[common], help="re-render a stored JSON report")
    rep.add_argument("--input", required=True, help="JSON report written by another subcommand")
    return parser


def main(argv: Optional[Sequence[str]] = None, env: Optional[Env] = None) -> int:
    env = env or Env()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"audit5s: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "audit":
            return cmd_audit(cfg, env)
        if args.command == "validate":
            return cmd_validate(cfg, env)
        if args.command == "economics":
            return cmd_economics(cfg, env)
        return cmd_report(cfg, env, args.input)
    except ConfigError as exc:
        print(f"audit5s: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ReportError, OSError, ValueError) as exc:
        print(f"audit5s: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
