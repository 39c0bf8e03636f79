"""Command-line entry point: JSON config in, CSV or JSON tables out.

Exit codes: 0 ok, 1 invalid input, 2 numerical failure or age out of
support, 3 verification failure.  Every output starts with a comment line
carrying the tool version and a hash of the config.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, eigen
from .compensator import ObservationHistory, ObserverState, TailBank, compensator_table, end_law, total_hazard
from .diffusion import DiffusionSpec, LevelSet
from .errors import ExcursionError, ValidationError, VerificationFailure
from .laplace import ORDERS, crosscheck_convolution, hazard_curve
from .simulate import PathConfig, simulate_records
from .verify import McSettings, bm_suite, oracle_checks

SIDES = ("up", "down")
TAIL_CASES = ("zero_plus", "zero_minus", "one_plus", "one_minus")


def _fields(where, data, allowed, required=()):
    if not isinstance(data, dict):
        raise ValidationError(where, f"expected an object, got {type(data).__name__}")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ValidationError(where, f"unknown keys {unknown}; allowed {sorted(allowed)}")
    missing = [k for k in required if k not in data]
    if missing:
        raise ValidationError(where, f"missing keys {missing}")
    return data


@dataclass(frozen=True)
class GridConfig:
    min: float
    max: float
    points: int

    @classmethod
    def load(cls, where, data, default):
        d = _fields(where, data if data is not None else asdict(default), ("min", "max", "points"))
        g = cls(float(d.get("min", default.min)), float(d.get("max", default.max)),
                int(d.get("points", default.points)))
        if not (0 < g.min < g.max and math.isfinite(g.max) and g.points >= 2):
            raise ValidationError(where, f"need 0 < min < max < inf and points >= 2, got {g}")
        return g

    def values(self):
        return np.geomspace(self.min, self.max, self.points)


@dataclass(frozen=True)
class SimulationConfig:
    h: float = 1e-4
    T: float = 10.0
    seed: int = 0
    replications: int = 100
    scheme: str = "exact_bm"


@dataclass(frozen=True)
class RunConfig:
    diffusion: dict
    levels: tuple
    start_level_index: int = 1
    lambda_grid: GridConfig = GridConfig(1e-2, 1e2, 41)
    x_grid: GridConfig = GridConfig(1e-4, 1e3, 400)
    inversion_order: int = 14
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    digest: str = ""

    @classmethod
    def from_dict(cls, data, digest=""):
        where = "cli.RunConfig"
        _fields(where, data, ("diffusion", "levels", "start_level_index", "lambda_grid", "x_grid",
                              "inversion_order", "simulation"), ("diffusion", "levels"))
        diff = _fields("cli.RunConfig.diffusion", data["diffusion"],
                       ("a", "b", "interval", "lo_boundary", "hi_boundary"), ("a", "b"))
        sim = _fields("cli.RunConfig.simulation", data.get("simulation", {}), SimulationConfig.__dataclass_fields__)
        order = data.get("inversion_order", 14)
        if order not in ORDERS:
            raise ValidationError(where, f"inversion_order must be one of {ORDERS}, got {order!r}")
        cfg = cls(dict(diff), tuple(data["levels"]), int(data.get("start_level_index", 1)),
                  GridConfig.load("cli.RunConfig.lambda_grid", data.get("lambda_grid"), cls.lambda_grid),
                  GridConfig.load("cli.RunConfig.x_grid", data.get("x_grid"), cls.x_grid),
                  int(order), SimulationConfig(**sim), digest)
        # constructing the engine objects re-validates every invariant
        cfg.levelset()
        cfg.path_config()
        return cfg

    def spec(self) -> DiffusionSpec:
        d = self.diffusion
        interval = d.get("interval", ["-inf", "inf"])
        if isinstance(interval, dict):
            interval = [interval.get("lo", "-inf"), interval.get("hi", "inf")]
        if not isinstance(interval, (list, tuple)) or len(interval) != 2:
            raise ValidationError("cli.RunConfig.diffusion", "interval must be [lo, hi] or {lo, hi}")
        return DiffusionSpec(str(d["a"]), str(d["b"]), tuple(float(v) for v in interval),
                             d.get("lo_boundary", "natural"), d.get("hi_boundary", "natural"))

    def levelset(self) -> LevelSet:
        levels = LevelSet(self.levels, self.spec())
        if not 1 <= self.start_level_index <= levels.N:
            raise ValidationError("cli.RunConfig", f"start_level_index must be in 1..{levels.N}")
        return levels

    def path_config(self) -> PathConfig:
        s = self.simulation
        cfg = PathConfig(float(s.h), float(s.T), self.levelset().x(self.start_level_index), int(s.seed), s.scheme)
        cfg.validate_for(self.spec())
        if int(s.replications) < 1:
            raise ValidationError("cli.RunConfig.simulation", "replications must be >= 1")
        return cfg

    def bank(self) -> TailBank:
        return TailBank(self.spec(), self.levelset(), self.x_grid.values(), self.inversion_order)


def load_config(path) -> RunConfig:
    where = "cli.load_config"
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ValidationError(where, f"cannot read {path}: {exc.strerror}") from exc
    try:
        data = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ValidationError(where, f"{path} is not valid JSON: {exc}") from exc
    digest = hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:16]
    try:
        return RunConfig.from_dict(data, digest)
    except (TypeError, ValueError) as exc:
        raise ValidationError("cli.RunConfig", str(exc)) from exc


def header(cfg: RunConfig, command: str) -> str:
    return f"# excursions {__version__} {command} config_sha256={cfg.digest}\n"


def _num(v):
    return repr(float(v))


def _csv(cfg, command, columns, rows, comments=()):
    buf = io.StringIO()
    buf.write(header(cfg, command))
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def cmd_psi(cfg, args):
    spec, levels = cfg.spec(), cfg.levelset()
    lams = cfg.lambda_grid.values()
    rows = []
    for i in ([args.level] if args.level else range(1, levels.N + 1)):
        for case in ([args.case] if args.case else eigen.available_cases(levels, i)):
            rows.extend(eigen.exponent_table(spec, levels, i, case, lams).rows())
    return _csv(cfg, "psi", ["level_index", "case", "lambda", "psi"], rows)


def cmd_tails(cfg, args):
    bank = cfg.bank()
    levels = bank.levels
    rows = []
    for i in ([args.level] if args.level else range(1, levels.N + 1)):
        for side in SIDES:
            total = bank.sum_tail(i, side)
            grids = [g for g in bank.target_tails(i, side).values() if not args.case or g.case == args.case]
            if not args.case or args.case == total.case:
                grids.append(total)
            for g in grids:
                hz = hazard_curve(g, total)
                rows.extend((i, g.case, x, t, h) for x, t, h in zip(g.x, g.tail, hz))
    return _csv(cfg, "tails", ["level_index", "case", "x", "tail", "hazard"], rows)


def cmd_hazard(cfg, args):
    bank = cfg.bank()
    state = ObserverState(args.last_level or cfg.start_level_index, args.side, args.age)
    law = end_law(state, bank)
    report = total_hazard(state, bank)
    out = {
        "version": __version__,
        "config_sha256": cfg.digest,
        "state": {"last_level": state.last_level, "side": state.side, "age": state.age},
        "targets": [{"level": j, "p": law.probabilities[j], "hazard": report.hazards[j]}
                    for j in sorted(law.probabilities)],
        "p_never": law.p_never,
        "total_hazard": report.total,
    }
    return json.dumps(out, indent=2) + "\n"


def read_history(path) -> ObservationHistory:
    """History CSV ``time,level,side``; the first row is the start of observation."""
    where = "cli.read_history"
    try:
        with open(path, newline="") as fh:
            lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    except OSError as exc:
        raise ValidationError(where, f"cannot read {path}: {exc.strerror}") from exc
    reader = csv.DictReader(lines)
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["time", "level", "side"]:
        raise ValidationError(where, "history header must be 'time,level,side'")
    try:
        rows = [(float(r["time"]), int(r["level"]), r["side"].strip()) for r in reader]
    except (TypeError, ValueError) as exc:
        raise ValidationError(where, f"bad history row: {exc}") from exc
    if not rows:
        raise ValidationError(where, "history needs at least the starting row")
    t0, level, side = rows[0]
    return ObservationHistory(level, side, rows[1:], t0)


def cmd_compensate(cfg, args):
    bank = cfg.bank()
    history = read_history(args.history)
    if args.times:
        try:
            times = [float(t) for t in args.times.split(",")]
        except ValueError as exc:
            raise ValidationError("cli.compensate", f"--times must be comma-separated numbers: {exc}") from exc
    else:
        times = [t for t, _, _ in history.events] or [history.start_time]
    rows = compensator_table(history, args.target, args.floor, times, bank)
    return _csv(cfg, "compensate", ["time", "count", "compensator", "extrapolated"],
                [(t, c, v, int(e)) for t, c, v, e in rows],
                [f"target={args.target} floor={args.floor!r}"])


def cmd_simulate(cfg, args):
    tab = simulate_records(cfg.spec(), cfg.levelset(), cfg.path_config(), range(cfg.simulation.replications))
    rows = ((a, b, lv, side, d, "" if c else e, int(c), int(r))
            for (a, b, lv, side, d, e, c), r in zip(tab.rows(), tab.replication))
    return _csv(cfg, "simulate",
                ["start_time", "end_time", "start_level", "side", "duration", "end_level", "censored",
                 "replication"], rows)


def cmd_crosscheck(cfg, args):
    level = args.level or cfg.start_level_index
    rep = crosscheck_convolution(cfg.spec(), cfg.levelset(), level, args.direction, order=cfg.inversion_order)
    text = _csv(cfg, "crosscheck", ["x", "direct", "convolution", "discrepancy"], rep.rows(),
                [f"level={level} direction={args.direction} total_mass={rep.total_mass!r}",
                 f"max_relative_discrepancy={rep.max_relative_discrepancy!r} tolerance={args.tolerance!r}"])
    if rep.max_relative_discrepancy >= args.tolerance:
        return text, VerificationFailure(
            "laplace.crosscheck_convolution",
            f"max discrepancy {rep.max_relative_discrepancy:.3e} >= {args.tolerance:g}")
    return text


def cmd_verify(cfg, args):
    spec = cfg.spec()
    if not (spec.is_brownian and spec.a(0.0) == 1.0 and spec.b(0.0) == 0.0):
        raise ValidationError("cli.verify", "the bm oracle needs a = 1 and b = 0")
    s = cfg.simulation
    settings = McSettings(float(s.h), float(s.T), int(s.seed), int(s.replications), int(s.seed),
                          min(int(s.replications), 2000))
    checks = oracle_checks() if args.oracle_only else bm_suite(settings)
    lines = [header(cfg, "verify").rstrip("\n")] + [c.line() for c in checks]
    failed = [c.name for c in checks if not c.passed]
    lines.append(f"{len(checks) - len(failed)}/{len(checks)} passed")
    text = "\n".join(lines) + "\n"
    if failed:
        return text, VerificationFailure("cli.verify", f"failed: {', '.join(failed)}")
    return text


COMMANDS = {
    "psi": cmd_psi, "tails": cmd_tails, "hazard": cmd_hazard, "compensate": cmd_compensate,
    "simulate": cmd_simulate, "verify": cmd_verify, "crosscheck": cmd_crosscheck,
}


def build_parser():
    p = argparse.ArgumentParser(prog="excursions", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"excursions {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("config", help="JSON run configuration")
        sp.add_argument("-o", "--output", help="write here instead of stdout")
        return sp

    sp = add("psi", "Laplace exponents on the lambda grid (CSV)")
    sp.add_argument("--level", type=int)
    sp.add_argument("--case", choices=eigen.CASES)
    sp = add("tails", "inverted tails and hazards on the x grid (CSV)")
    sp.add_argument("--level", type=int)
    sp.add_argument("--case", choices=TAIL_CASES + ("sum_plus", "sum_minus"))
    sp = add("hazard", "end law and hazards for one observer state (JSON)")
    sp.add_argument("--last-level", type=int, help="1-based; defaults to start_level_index")
    sp.add_argument("--side", choices=SIDES, required=True)
    sp.add_argument("--age", type=float, required=True)
    sp = add("compensate", "counts and compensator along an observation history (CSV)")
    sp.add_argument("--history", required=True, help="CSV with columns time,level,side")
    sp.add_argument("--target", type=int, required=True, help="1-based level index")
    sp.add_argument("--floor", type=float, default=0.0, help="duration floor")
    sp.add_argument("--times", help="comma-separated times; defaults to the event times")
    add("simulate", "simulated excursion records (CSV)")
    sp = add("verify", "acceptance checks against an oracle")
    sp.add_argument("--oracle", choices=("bm",), required=True)
    sp.add_argument("--oracle-only", action="store_true", help="skip the Monte Carlo checks")
    sp = add("crosscheck", "convolution identity for the tail of excursions reaching a neighbour (CSV)")
    sp.add_argument("--level", type=int)
    sp.add_argument("--direction", choices=SIDES, default="up")
    sp.add_argument("--tolerance", type=float, default=2e-3)
    return p


def _emit(text, output):
    if output:
        with open(output, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        result = COMMANDS[args.command](cfg, args)
        failure = None
        if isinstance(result, tuple):
            result, failure = result
        _emit(result, args.output)
        if failure is not None:
            raise failure
    except ExcursionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
