"""Batch front end: ``sstr <command> --spec FILE [--seed U64] [--out PATH] [--threads N]``.

Experiment files are flat ``key = value`` lines; ``#`` starts a comment.
Example::

    N = 2000
    M = 128
    T = 200
    p_a = 0.1
    snr_db = 10
    W = 4
    L = 110
    beamformer = MRC
    sweep = epsilon
    values = 0.05:1.0:0.05
    trials = 100

Exit status is 0 on success, 1 on a validation error and 2 on a numerical
failure; failures also produce a JSON error record.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from . import __version__
from .analytic import (
    Beamformer,
    conditional_sstr,
    k_bar,
    miss_probability,
    ser,
    sstr_exact,
    sstr_mean_approx,
)
from .errors import DegenerateDistribution, OutOfRange, ParseError, SstrError
from .model import SystemConfig, validate_config
from .optimizer import optimize_epsilon_cgp, optimize_epsilon_grid, optimize_joint, optimize_length
from .simulator import empirical_sstr, run_trials

COMMANDS = ("analytic", "simulate", "optimize", "sweep")
SWEEP_PARAMS = ("N", "M", "T", "p_a", "epsilon", "L", "snr_db", "W")
SWEEP_COLUMNS = ["sweep_value", "sstr_analytic", "sstr_mean_approx", "sstr_mc", "mc_half_width",
                 "p_miss_at_kbar", "ser_at_kbar", "runtime_s"]
OPTIMIZE_COLUMNS = ["sweep_value", "epsilon_opt", "L_opt", "value", "method", "restarts"]

CONFIG_KEYS = {"N", "M", "T", "p_a", "gamma", "snr_db", "sigma2", "W", "amp_iters", "se_samples",
               "seed", "threshold", "tau_mode", "se_tol", "amp_damping", "fixed_pilots",
               "overload_fails"}
SPEC_KEYS = {"command", "L", "epsilon", "active_users", "beamformer", "sweep", "values", "trials",
             "optimize", "method", "restarts", "grid_size", "mean_approx", "output_path"}
INT_KEYS = {"N", "M", "T", "W", "L", "amp_iters", "se_samples", "seed", "active_users", "trials",
            "restarts", "grid_size"}
BOOL_KEYS = {"fixed_pilots", "overload_fails", "mean_approx"}
TEXT_KEYS = {"command", "beamformer", "sweep", "values", "optimize", "method", "output_path",
             "tau_mode"}


@dataclass
class ExperimentSpec:
    config: SystemConfig
    command: str
    beamformer: Beamformer = Beamformer.MRC
    L: Optional[int] = None
    epsilon: Optional[float] = None
    active_users: Optional[int] = None
    sweep: Optional[str] = None
    values: Tuple = ()
    trials: Optional[int] = None
    optimize: str = "joint"
    method: str = "cgp"
    restarts: int = 10
    grid_size: int = 1001
    mean_approx: bool = True
    output_path: Optional[str] = None
    raw: dict = field(default_factory=dict, repr=False)


def _parse_bool(text, key, line):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ParseError(f"expected a boolean, got {text!r}", line, key)


def _parse_scalar(key, text, line):
    if key in BOOL_KEYS:
        return _parse_bool(text, key, line)
    if key in TEXT_KEYS:
        return text
    try:
        if key in INT_KEYS:
            return int(text)
        return float(text)
    except ValueError:
        kind = "an integer" if key in INT_KEYS else "a number"
        raise ParseError(f"expected {kind}, got {text!r}", line, key) from None


def _tidy(x: float) -> float:
    return float(f"{x:.12g}")


def _parse_values(text, integer, line):
    text = text.strip()
    try:
        if ":" in text:
            start, stop, step = (float(p) for p in text.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            vals = [_tidy(start + i * step) for i in range(n)]
        else:
            vals = [float(p) for p in text.replace(",", " ").split()]
    except ValueError:
        raise ParseError(f"malformed value list {text!r}", line, "values") from None
    if not vals:
        raise ParseError("empty value list", line, "values")
    if integer:
        if any(not v.is_integer() for v in vals):
            raise ParseError("sweep values must be integers", line, "values")
        vals = [int(v) for v in vals]
    return tuple(vals)


def parse_spec_text(text: str, command: Optional[str] = None) -> ExperimentSpec:
    """Parse experiment text; ``command`` overrides the file's ``command`` key."""
    entries = {}
    lines = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ParseError("missing key", lineno)
        if key not in CONFIG_KEYS | SPEC_KEYS:
            raise ParseError("unknown key", lineno, key)
        if key in entries:
            raise ParseError("duplicate key", lineno, key)
        if not value:
            raise ParseError("missing value", lineno, key)
        lines[key] = lineno
        entries[key] = value if key == "values" else _parse_scalar(key, value, lineno)

    command = command or entries.get("command", "sweep")
    if command not in COMMANDS:
        raise ParseError(f"command must be one of {COMMANDS}", lines.get("command"), "command")

    sweep = entries.get("sweep")
    values = ()
    if sweep is not None:
        if sweep not in SWEEP_PARAMS:
            raise ParseError(f"cannot sweep {sweep!r}; allowed: {', '.join(SWEEP_PARAMS)}",
                             lines["sweep"], "sweep")
        if "values" not in entries:
            raise ParseError("sweep needs a 'values' list", lines["sweep"], "values")
        values = _parse_values(entries["values"], sweep in ("N", "M", "T", "L", "W"),
                               lines["values"])
    elif "values" in entries:
        raise ParseError("'values' given without 'sweep'", lines["values"], "values")

    config = validate_config({k: v for k, v in entries.items() if k in CONFIG_KEYS})
    spec = ExperimentSpec(
        config=config,
        command=command,
        beamformer=Beamformer.parse(entries.get("beamformer", "MRC")),
        L=entries.get("L"),
        epsilon=entries.get("epsilon"),
        active_users=entries.get("active_users"),
        sweep=sweep,
        values=values,
        trials=entries.get("trials"),
        optimize=entries.get("optimize", "joint"),
        method=entries.get("method", "cgp"),
        restarts=entries.get("restarts", 10),
        grid_size=entries.get("grid_size", 1001),
        mean_approx=entries.get("mean_approx", True),
        output_path=entries.get("output_path"),
        raw=entries,
    )
    check_spec(spec)
    return spec


def parse_spec(path, command: Optional[str] = None) -> ExperimentSpec:
    """Read and validate an experiment file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    return parse_spec_text(text, command)


def check_spec(spec: ExperimentSpec) -> None:
    """Cross-field validation; raises :class:`OutOfRange` or :class:`ParseError`."""
    swept = spec.sweep
    wants_mc = spec.command == "simulate" or (spec.command == "sweep" and spec.trials is not None)
    if wants_mc:
        if spec.trials is None or spec.trials < 2:
            raise OutOfRange("trials", "Monte-Carlo runs need trials >= 2")
    if spec.epsilon is not None and not 0.0 <= spec.epsilon <= 1.0:
        raise OutOfRange("epsilon", "epsilon must lie in [0, 1]")
    if spec.active_users is not None and not 0 <= spec.active_users <= spec.config.N:
        raise OutOfRange("active_users", "active_users must lie in [0, N]")
    if spec.restarts < 1:
        raise OutOfRange("restarts", "restarts must be >= 1")
    if spec.grid_size < 3:
        raise OutOfRange("grid_size", "grid_size must be >= 3")
    if spec.command == "optimize":
        if spec.optimize not in ("epsilon", "length", "joint"):
            raise ParseError("optimize must be epsilon, length or joint", key="optimize")
        if spec.method not in ("cgp", "grid"):
            raise ParseError("method must be cgp or grid", key="method")
        if spec.optimize == "epsilon" and spec.L is None and swept != "L":
            raise ParseError("optimizing epsilon needs L", key="L")
        if spec.optimize == "length" and spec.epsilon is None and swept != "epsilon":
            raise ParseError("optimizing L needs epsilon", key="epsilon")
        return
    if spec.L is None and swept != "L":
        raise ParseError("missing pilot length L", key="L")
    if spec.epsilon is None and swept != "epsilon" and spec.active_users is None:
        raise ParseError("missing access probability epsilon", key="epsilon")
    for value in spec.values or (None,):
        point_config(spec, value)


def point_config(spec: ExperimentSpec, value):
    """``(config, L, epsilon)`` at one sweep value (validated)."""
    config, L, eps = spec.config, spec.L, spec.epsilon
    name = spec.sweep
    if name == "L":
        L = int(value)
    elif name == "epsilon":
        eps = float(value)
    elif name == "snr_db":
        config = config.replace(gamma=config.sigma2 * 10.0 ** (float(value) / 10.0))
    elif name is not None:
        config = config.replace(**{name: type(getattr(config, name))(value)})
    if eps is None:
        eps = 1.0
    if not 0.0 <= eps <= 1.0:
        raise OutOfRange("epsilon", "epsilon must lie in [0, 1]")
    if L is not None and not 1 <= L <= config.T - 1:
        raise OutOfRange("L", f"L must lie in [1, {config.T - 1}]")
    return config, L, eps


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return str(x)
    return repr(float(x))


def _analytic_columns(spec, config, L, eps):
    bf = spec.beamformer
    row = {}
    k = spec.active_users
    if k is not None:
        row["sstr_analytic"] = conditional_sstr(k, L, config, bf)
        kref = float(k)
    else:
        row["sstr_analytic"] = sstr_exact(L, eps, config, bf).value
        try:
            row["sstr_mean_approx"] = sstr_mean_approx(L, eps, config, bf).value
            kref = k_bar(L, config.N, config.p_a * eps)
        except DegenerateDistribution:
            kref = None
    if kref is not None:
        row["p_miss_at_kbar"] = miss_probability(kref, L, config.M, config.gamma, config.sigma2)
        row["ser_at_kbar"] = ser(bf, config.W, kref, L, config.M, config.gamma, config.sigma2)
    return row


def _point_row(spec, value, threads):
    config, L, eps = point_config(spec, value)
    row = {"sweep_value": value}
    row.update(_analytic_columns(spec, config, L, eps))
    want_mc = spec.command == "simulate" or (spec.command == "sweep" and spec.trials)
    if want_mc:
        trials = run_trials(config, L, eps, spec.trials, (spec.beamformer,),
                            k=spec.active_users, threads=threads)[spec.beamformer]
        point = empirical_sstr(trials, config.T)
        row["sstr_mc"] = point.value
        row["mc_half_width"] = point.half_width
    return row


def _optimize_row(spec, value, threads):
    config, L, eps = point_config(spec, value)
    bf = spec.beamformer
    seed = config.seed
    if spec.optimize == "epsilon":
        if spec.method == "cgp":
            res = optimize_epsilon_cgp(L, config, bf, restarts=spec.restarts, seed=seed)
        else:
            res = optimize_epsilon_grid(L, config, bf, spec.grid_size)
    elif spec.optimize == "length":
        res = optimize_length(spec.epsilon if spec.sweep != "epsilon" else eps, config, bf,
                              spec.mean_approx)
    else:
        res = optimize_joint(config, bf, restarts=spec.restarts, seed=seed, threads=threads)
    restarts = res.diagnostics.get("restarts", "")
    return {"sweep_value": value, "epsilon_opt": res.epsilon_opt, "L_opt": res.L_opt,
            "value": res.value, "method": res.method, "restarts": restarts}


def execute(spec: ExperimentSpec, threads: int = 1, timing: bool = False):
    """Run ``spec``; returns ``(header, rows, manifest)`` with rows as string lists.

    Rows are emitted in sweep order. ``runtime_s`` is left empty unless
    ``timing`` is set so that identical inputs give identical CSV bytes;
    runtimes always go to the manifest.
    """
    optimize = spec.command == "optimize"
    header = OPTIMIZE_COLUMNS if optimize else SWEEP_COLUMNS
    make = _optimize_row if optimize else _point_row
    rows, runtimes = [], []
    for value in spec.values or (None,):
        start = time.perf_counter()
        row = make(spec, value, threads)
        elapsed = time.perf_counter() - start
        runtimes.append(elapsed)
        if not optimize and timing:
            row["runtime_s"] = elapsed
        rows.append([_fmt(row.get(col)) for col in header])
    manifest = {
        "tool": "sstr",
        "version": __version__,
        "command": spec.command,
        "seed": spec.config.seed,
        "config": {k: v for k, v in asdict(spec.config).items()},
        "rows": len(rows),
        "runtime_s": runtimes,
        "threads": threads,
    }
    return header, rows, manifest


def write_csv(header: Sequence[str], rows: Sequence[Sequence[str]], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)


def read_csv(path) -> List[dict]:
    """Read a result CSV back; numeric fields become numbers, empty fields ``None``."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            parsed = {}
            for key, text in rec.items():
                if text == "":
                    parsed[key] = None
                elif key in ("method",):
                    parsed[key] = text
                elif key in ("L_opt", "restarts"):
                    parsed[key] = int(text)
                else:
                    parsed[key] = float(text)
            out.append(parsed)
    return out


def _error_record(exc, code):
    return {"error": type(exc).__name__, "message": str(exc), "exit_code": code,
            "field": getattr(exc, "field", None) or getattr(exc, "key", None),
            "line": getattr(exc, "line", None)}


def build_parser():
    parser = argparse.ArgumentParser(prog="sstr", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--spec", required=True, help="experiment file (key = value lines)")
    parser.add_argument("--seed", type=int, help="overrides the seed in the spec file")
    parser.add_argument("--out", help="CSV output path (default: output_path or stdout)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for trials")
    parser.add_argument("--timing", action="store_true",
                        help="fill the runtime_s column (output is then not reproducible)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out
    try:
        spec_path = Path(args.spec)
        try:
            spec_bytes = spec_path.read_bytes()
        except OSError as exc:
            raise ParseError(f"cannot read {spec_path}: {exc.strerror}") from None
        try:
            text = spec_bytes.decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError(f"{spec_path} is not UTF-8 text") from None
        spec = parse_spec_text(text, args.command)
        if args.seed is not None:
            spec.config = spec.config.replace(seed=args.seed)
        if args.threads < 1:
            raise OutOfRange("threads", "threads must be >= 1")
        out = out or spec.output_path
        header, rows, manifest = execute(spec, threads=args.threads, timing=args.timing)
    except (ParseError, OutOfRange) as exc:
        return _fail(exc, 1, out)
    except (SstrError, ArithmeticError, FloatingPointError) as exc:
        return _fail(exc, 2, out)

    manifest["config_hash"] = hashlib.sha256(spec_bytes).hexdigest()
    manifest["spec_file"] = str(spec_path)
    if out:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            write_csv(header, rows, fh)
        Path(_sidecar(out, "manifest")).write_text(json.dumps(manifest, indent=2) + "\n",
                                                   encoding="utf-8")
    else:
        buf = io.StringIO()
        write_csv(header, rows, buf)
        sys.stdout.write(buf.getvalue())
    return 0


def _sidecar(out, kind):
    p = Path(out)
    return p.with_name(p.stem + f".{kind}.json")


def _fail(exc, code, out):
    record = _error_record(exc, code)
    sys.stderr.write(json.dumps(record) + "\n")
    if out:
        Path(_sidecar(out, "error")).write_text(json.dumps(record, indent=2) + "\n",
                                                encoding="utf-8")
    return code


if __name__ == "__main__":
    sys.exit(main())
