"""
Monte Carlo experiment runner and command-line entry point.

    ghzqkd --parties 3 --n 16 --d 8 --dprime 8 --attack 2cnot --trials 10000 --seed 42 --out report.json

Each trial is an independent protocol session seeded from (master seed,
trial index).  Tallies are plain integer sums, so the report does not depend
on the order in which trials finish.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from .adversary import AttackKind, audit_leakage, make_attack
from .protocol import SequencePlan, Session, SessionConfig

logger = logging.getLogger(__name__)

MAX_POSITIONS = 10_000
CONFIDENCE = 0.95


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    num_parties: int = 3
    n: int = 16
    d: int = 8
    d_prime: int = 8
    attack: str = "none"
    encoding_mode: str = "two-op"
    eve_knows_agreement: bool = False
    trials: int = 1000
    seed: int = 1
    error_threshold: float = 0.0
    targets: list[int] | None = None
    mitm_z_pattern: str = "random"
    check_bases: str = "zx"
    fixed_label: int | None = None
    abort_on_detection: bool = False
    workers: int = 1
    out: str | None = None
    format: str | None = None
    dump_transcripts: str | None = None

    def validate(self) -> "ExperimentConfig":
        if self.trials < 1:
            raise ConfigError("--trials must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("--seed must be a 64-bit unsigned integer")
        if self.num_parties < 3:
            raise ConfigError("--parties must be >= 3")
        if min(self.n, self.d, self.d_prime) < 1:
            raise ConfigError("--n, --d and --dprime must be >= 1")
        if self.n + self.d + self.d_prime > MAX_POSITIONS:
            raise ConfigError(f"n + d + dprime exceeds the {MAX_POSITIONS}-position budget")
        try:
            AttackKind(self.attack)
        except ValueError:
            raise ConfigError(f"--attack: unknown attack {self.attack!r}") from None
        if self.encoding_mode not in ("two-op", "four-op"):
            raise ConfigError(f"--encoding: unknown mode {self.encoding_mode!r}")
        if not 0.0 <= self.error_threshold <= 1.0:
            raise ConfigError("--threshold must lie in [0, 1]")
        if self.targets is not None and any(not 0 <= t < self.num_parties for t in self.targets):
            raise ConfigError("--targets must name parties 0..N-1")
        if self.format not in (None, "json", "csv"):
            raise ConfigError("--format must be json or csv")
        if self.workers < 1:
            raise ConfigError("--workers must be >= 1")
        try:
            self.session_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    @property
    def plan(self) -> SequencePlan:
        return SequencePlan(self.n, self.d, self.d_prime)

    def session_config(self) -> SessionConfig:
        return SessionConfig(
            num_parties=self.num_parties,
            plan=self.plan,
            encoding_mode=self.encoding_mode,
            error_threshold=self.error_threshold,
            abort_on_detection=self.abort_on_detection,
            check_bases=self.check_bases,
            fixed_label=self.fixed_label,
        )

    def make_attack(self):
        if self.attack == "none":
            return None
        return make_attack(self.attack, self.targets, self.eve_knows_agreement, self.mitm_z_pattern)

    def echo(self) -> dict:
        """Config fields that determine the result (output locations excluded)."""
        skip = {"out", "format", "dump_transcripts", "workers"}
        return {k: v for k, v in dataclasses.asdict(self).items() if k not in skip}


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, trial]))


@dataclass
class Tally:
    """Integer counters accumulated over trials; addition is commutative."""

    sessions: int = 0
    aborted: int = 0
    detected: int = 0
    checks_z: int = 0
    checks_x: int = 0
    fails_z: int = 0
    fails_x: int = 0
    completed: int = 0
    agreed: int = 0
    accepted: int = 0
    tampered: int = 0
    dprime_mismatch: int = 0
    dprime_reveals: int = 0
    dprime_mismatch_by_owner: Counter = field(default_factory=Counter)
    dprime_reveals_by_owner: Counter = field(default_factory=Counter)
    detected_by_owner: Counter = field(default_factory=Counter)
    selected: Counter = field(default_factory=Counter)
    eve_sessions: int = 0
    eve_whole_key: int = 0
    eve_bits_guessed: int = 0
    eve_bits_correct: int = 0
    substitutions: int = 0
    exact_substitutions: int = 0
    leakage_failures: int = 0
    home_violations: int = 0

    def __add__(self, other: "Tally") -> "Tally":
        out = Tally()
        for f in dataclasses.fields(self):
            setattr(out, f.name, getattr(self, f.name) + getattr(other, f.name))
        return out

    def add_session(self, rep, d_prime: int) -> None:
        self.sessions += 1
        self.aborted += rep.aborted
        self.detected += rep.detected
        for owner, hit in rep.detected_at_step4.items():
            self.detected_by_owner[str(owner)] += hit
        self.checks_z += rep.step4_checks["Z"]
        self.checks_x += rep.step4_checks["X"]
        self.fails_z += rep.step4_error_count["Z"]
        self.fails_x += rep.step4_error_count["X"]
        self.leakage_failures += not audit_leakage(rep.transcript)
        self.home_violations += not rep.home_untouched
        if not rep.aborted:
            self.completed += 1
            self.agreed += rep.all_keys_agree
            self.accepted += rep.key_accepted
            self.tampered += sum(rep.tamper_counts.values()) > 0
            self.selected[str(rep.selected_key_owner)] += 1
            for owner, rates in rep.dprime_error_rates.items():
                mism = sum(round(r * d_prime) for r in rates.values())
                self.dprime_mismatch += mism
                self.dprime_reveals += d_prime * len(rates)
                self.dprime_mismatch_by_owner[str(owner)] += mism
                self.dprime_reveals_by_owner[str(owner)] += d_prime * len(rates)
        eve = rep.eve_report
        if eve is not None:
            self.substitutions += eve.substitutions
            self.exact_substitutions += eve.exact_substitutions
            if eve.bits_guessed:
                self.eve_sessions += 1
                self.eve_whole_key += eve.whole_key_correct
                self.eve_bits_guessed += eve.bits_guessed
                self.eve_bits_correct += eve.bits_correct


@dataclass
class Metric:
    name: str
    successes: int
    count: int

    @property
    def estimate(self) -> float | None:
        return self.successes / self.count if self.count else None

    @property
    def interval(self) -> tuple[float | None, float | None]:
        return wilson_interval(self.successes, self.count)

    def to_dict(self) -> dict:
        lo, hi = self.interval
        return {"estimate": self.estimate, "ci_low": lo, "ci_high": hi,
                "successes": self.successes, "count": self.count}


def wilson_interval(k: int, n: int, confidence: float = CONFIDENCE) -> tuple[float | None, float | None]:
    if n == 0:
        return None, None
    ci = binomtest(k, n).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class ExperimentReport:
    config: dict
    seed: int
    trials: int
    metrics: dict[str, Metric]
    selected_key_distribution: dict[str, int]
    detected_by_owner: dict[str, int]
    leakage_audit_failures: int
    home_particle_violations: int
    wall_clock_seconds: float = 0.0

    def __getitem__(self, name: str) -> Metric:
        return self.metrics[name]

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "config": self.config,
            "seed": self.seed,
            "trials": self.trials,
            "metrics": {k: m.to_dict() for k, m in sorted(self.metrics.items())},
            "selected_key_distribution": dict(sorted(self.selected_key_distribution.items())),
            "step4_detections_by_owner": dict(sorted(self.detected_by_owner.items())),
            "leakage_audit_failures": self.leakage_audit_failures,
            "home_particle_violations": self.home_particle_violations,
        }
        if include_timing:
            out["wall_clock_seconds"] = self.wall_clock_seconds
        return out


def _run_trials(config: ExperimentConfig, start: int, stop: int) -> Tally:
    tally = Tally()
    session_cfg = config.session_config()
    dump_dir = Path(config.dump_transcripts) if config.dump_transcripts else None
    for trial in range(start, stop):
        session = Session(session_cfg, trial_rng(config.seed, trial), config.make_attack())
        rep = session.run()
        tally.add_session(rep, config.d_prime)
        if dump_dir is not None:
            rep.transcript.dump(dump_dir / f"trial_{trial:06d}.jsonl")
    return tally


def run_monte_carlo(config: ExperimentConfig) -> ExperimentReport:
    config.validate()
    t0 = time.perf_counter()
    if config.dump_transcripts:
        Path(config.dump_transcripts).mkdir(parents=True, exist_ok=True)
    if config.workers == 1:
        tally = _run_trials(config, 0, config.trials)
    else:
        bounds = np.linspace(0, config.trials, config.workers + 1).astype(int)
        with ProcessPoolExecutor(config.workers) as pool:
            parts = pool.map(_run_trials, [config] * config.workers, bounds[:-1], bounds[1:])
            tally = sum(parts, Tally())
    report = build_report(config, tally)
    report.wall_clock_seconds = time.perf_counter() - t0
    logger.info("%d trials in %.2fs", config.trials, report.wall_clock_seconds)
    return report


def build_report(config: ExperimentConfig, t: Tally) -> ExperimentReport:
    metrics = [
        Metric("step4_detection_rate", t.detected, t.sessions),
        Metric("z_check_failure_rate", t.fails_z, t.checks_z),
        Metric("x_check_failure_rate", t.fails_x, t.checks_x),
        Metric("key_agreement_rate", t.agreed, t.completed),
        Metric("key_acceptance_rate", t.accepted, t.completed),
        Metric("tamper_rate", t.tampered, t.completed),
        Metric("abort_rate", t.aborted, t.sessions),
        Metric("dprime_error_rate", t.dprime_mismatch, t.dprime_reveals),
        Metric("eve_whole_key_rate", t.eve_whole_key, t.eve_sessions),
        Metric("eve_bit_rate", t.eve_bits_correct, t.eve_bits_guessed),
        Metric("mitm_exact_substitute_rate", t.exact_substitutions, t.substitutions),
    ]
    for owner in range(config.num_parties):
        key = str(owner)
        metrics.append(Metric(f"dprime_error_rate_owner_{owner}",
                              t.dprime_mismatch_by_owner[key], t.dprime_reveals_by_owner[key]))
    return ExperimentReport(
        config=config.echo(),
        seed=config.seed,
        trials=config.trials,
        metrics={m.name: m for m in metrics},
        selected_key_distribution=dict(t.selected),
        detected_by_owner={str(o): t.detected_by_owner[str(o)] for o in range(config.num_parties)},
        leakage_audit_failures=t.leakage_failures,
        home_particle_violations=t.home_violations,
    )


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def report_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "estimate", "ci_low", "ci_high", "trials", "seed"])
    for name, m in sorted(report.metrics.items()):
        lo, hi = m.interval
        writer.writerow([name, _fmt(m.estimate), _fmt(lo), _fmt(hi), m.count, report.seed])
    return buf.getvalue()


def report_json(report: ExperimentReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def write_report(report: ExperimentReport, fmt: str, path) -> None:
    text = report_csv(report) if fmt == "csv" else report_json(report)
    Path(path).write_text(text)


# --------------------------------------------------------------------------
# CLI
# --------------------------------------------------------------------------

_FLAG_TO_FIELD = {
    "parties": "num_parties",
    "n": "n",
    "d": "d",
    "dprime": "d_prime",
    "attack": "attack",
    "encoding": "encoding_mode",
    "eve_knows_agreement": "eve_knows_agreement",
    "trials": "trials",
    "seed": "seed",
    "threshold": "error_threshold",
    "targets": "targets",
    "mitm_z_pattern": "mitm_z_pattern",
    "check_bases": "check_bases",
    "fixed_label": "fixed_label",
    "abort_on_detection": "abort_on_detection",
    "workers": "workers",
    "out": "out",
    "format": "format",
    "dump_transcripts": "dump_transcripts",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ghzqkd", description="Monte Carlo simulator for multi-key GHZ key distribution.",
                argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="JSON file supplying defaults; flags override it")
    p.add_argument("--parties", type=int, help="number of parties N (default 3)")
    p.add_argument("--n", type=int, help="key positions per sequence (default 16)")
    p.add_argument("--d", type=int, help="positions sacrificed to the pre-encoding check (default 8)")
    p.add_argument("--dprime", type=int, help="positions sacrificed to the post-decoding check (default 8)")
    p.add_argument("--attack", choices=[k.value for k in AttackKind], help="adversary (default none)")
    p.add_argument("--encoding", choices=["two-op", "four-op"], help="operator agreement (default two-op)")
    p.add_argument("--eve-knows-agreement", action="store_true", help="Eve knows the operator agreement")
    p.add_argument("--trials", type=int, help="number of sessions (default 1000)")
    p.add_argument("--seed", type=int, help="master seed (default 1)")
    p.add_argument("--threshold", type=float, help="accepted d' error rate (default 0)")
    p.add_argument("--targets", type=int, nargs="+", help="owners whose sequences Eve attacks (default all)")
    p.add_argument("--mitm-z-pattern", help="substitute bits for mitm-z: random|matched|mismatched|<bits>")
    p.add_argument("--check-bases", choices=["zx", "z", "x"], help="bases drawn for the d-check (default zx)")
    p.add_argument("--fixed-label", type=int, help="prepare every GHZ state with this label")
    p.add_argument("--abort-on-detection", action="store_true", help="stop a session after a failed d-check")
    p.add_argument("--workers", type=int, help="worker processes (default 1)")
    p.add_argument("--out", help="report path; .csv selects the tabular format")
    p.add_argument("--format", choices=["json", "csv"], help="report format (default from --out suffix)")
    p.add_argument("--dump-transcripts", metavar="DIR", help="write one JSON-lines transcript per trial")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def parse_cli(argv=None) -> ExperimentConfig:
    """Parse argv into a validated config; raises SystemExit(1) on bad input."""
    parser = build_parser()
    ns = vars(parser.parse_args(argv))
    values: dict = {}
    if "config" in ns:
        try:
            file_values = json.loads(Path(ns["config"]).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"--config: cannot read {ns['config']}: {exc}")
        fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
        for key, value in file_values.items():
            name = _FLAG_TO_FIELD.get(key.replace("-", "_"), key)
            if name not in fields:
                parser.error(f"--config: unknown key {key!r}")
            values[name] = value
    for flag, value in ns.items():
        if flag in _FLAG_TO_FIELD:
            values[_FLAG_TO_FIELD[flag]] = value
    try:
        return ExperimentConfig(**values).validate()
    except (ConfigError, TypeError) as exc:
        parser.error(str(exc))


def _summary(report: ExperimentReport) -> str:
    lines = [f"trials={report.trials} seed={report.seed} attack={report.config['attack']}"]
    for name, m in sorted(report.metrics.items()):
        if m.count:
            lo, hi = m.interval
            lines.append(f"  {name:<32} {m.estimate:.4f}  [{lo:.4f}, {hi:.4f}]  n={m.count}")
    return "\n".join(lines)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    config = parse_cli(argv)
    logging.basicConfig(level=logging.INFO if "-v" in argv or "--verbose" in argv else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        report = run_monte_carlo(config)
    except OSError as exc:
        print(f"ghzqkd: I/O error: {exc}", file=sys.stderr)
        return 2
    print(_summary(report))
    if config.out:
        fmt = config.format or ("csv" if config.out.endswith(".csv") else "json")
        try:
            write_report(report, fmt, config.out)
        except OSError as exc:
            print(f"ghzqkd: cannot write {config.out}: {exc}", file=sys.stderr)
            return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
