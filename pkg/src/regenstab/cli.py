"""Command-line front end: ``regenstab {analyze,sweep,simulate,lift}``.

Exit codes: 0 stable, 1 unstable, 2 marginal, 10 invalid model file,
11 usage error, 12 stability assumption not met, 13 file I/O error.
Commands that do not render a verdict exit 0 on success.

If ``--out`` is omitted, CSV output goes to ``$REGENSTAB_OUTPUT_DIR/<name>.csv``
when that variable is set and to standard output otherwise.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import montecarlo as mc
from .mlift import DimensionError, induced_matrix, infinitesimal_lift, multi_index_basis
from .models import (
    AssumptionError,
    MJLSModel,
    ModelError,
    PeriodicObservationModel,
    load_model,
    parse_model,
)
from .stability import (
    analyze,
    find_crossing,
    report_to_json,
    report_to_text,
    sweep_growth_rate,
    sweep_to_csv,
)

EXIT_STABLE, EXIT_UNSTABLE, EXIT_MARGINAL = 0, 1, 2
EXIT_MODEL, EXIT_USAGE, EXIT_ASSUMPTION, EXIT_IO = 10, 11, 12, 13
VERDICT_EXIT = {"stable": EXIT_STABLE, "unstable": EXIT_UNSTABLE, "marginal": EXIT_MARGINAL}
OUTPUT_DIR_ENV = "REGENSTAB_OUTPUT_DIR"
EXAMPLE_MODEL = "economy_periodic.json"


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    model_path: str | None = None
    output_path: str | None = None
    m: int | None = None
    h: float | None = None
    h_grid: tuple[float, float, float] | None = None
    path_count: int = 100
    horizon: float = 10.0
    step: float = 0.01
    seed: int = 0
    workers: int = 1
    format: str = "text"
    per_path: str | None = None
    switching_dump: str | None = None
    x0: tuple[float, ...] | None = None
    state: int | None = None
    matrix: str | None = None

    def validate(self):
        if self.m is not None and self.m < 1:
            raise UsageError("--m must be >= 1")
        if self.h is not None and not (math.isfinite(self.h) and self.h > 0):
            raise UsageError("--h must be > 0")
        if self.command == "sweep":
            if self.h_grid is None:
                raise UsageError("sweep requires --h-grid START:STOP:STEP")
            start, stop, step = self.h_grid
            if not start > 0 or not step > 0:
                raise UsageError("--h-grid needs start > 0 and step > 0")
            if stop < start:
                raise UsageError(f"--h-grid stop {stop} is below start {start}")
        if self.command == "simulate":
            if self.path_count < 1:
                raise UsageError("--paths must be >= 1")
            if not self.horizon > 0:
                raise UsageError("--horizon must be > 0")
            if not self.step > 0:
                raise UsageError("--step must be > 0")
            if self.workers < 1:
                raise UsageError("--workers must be >= 1")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _grid_arg(text: str) -> tuple[float, float, float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected START:STOP:STEP")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric grid {text!r}") from None


def _vector_arg(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="regenstab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model_required=True):
        sp.add_argument("--model", dest="model_path", required=model_required,
                        help=f"model JSON file ('example' loads the bundled {EXAMPLE_MODEL})")
        sp.add_argument("--m", type=int, help="lift degree (default: from the model, usually 2)")
        sp.add_argument("--out", dest="output_path", help="output file")
        sp.add_argument("--format", choices=["text", "csv", "json", "json-like", "structured"],
                        default="text")

    a = sub.add_parser("analyze", help="build the stability matrix and print the verdict")
    common(a)
    a.add_argument("--h", type=float, help="sampling period (periodic models; samples an mjls)")

    s = sub.add_parser("sweep", help="rho(A_h) and log(rho)/h over a grid of periods")
    common(s)
    s.add_argument("--h-grid", type=_grid_arg, default=(0.001, 0.300, 0.001),
                   help="START:STOP:STEP (default 0.001:0.3:0.001)")
    s.add_argument("--workers", type=int, default=1)

    sim = sub.add_parser("simulate", help="Monte Carlo moments of ||x(t)||^m")
    common(sim)
    sim.add_argument("--h", type=float, help="override the sampling period of a periodic model")
    sim.add_argument("--paths", dest="path_count", type=int, default=100)
    sim.add_argument("--horizon", type=float, default=10.0)
    sim.add_argument("--step", type=float, default=0.01, help="time-grid step")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--per-path", help="also write t,path_id,norm_m to this file")
    sim.add_argument("--switching-dump", help="write time,mode of path 0 to this file")
    sim.add_argument("--x0", type=_vector_arg, help="fixed initial state (default: unit sphere)")
    sim.add_argument("--state", type=int, help="fixed initial embedded state")

    li = sub.add_parser("lift", help="print the lift basis and lifted matrices")
    common(li, model_required=False)
    li.add_argument("--matrix", help="inline JSON matrix, e.g. '[[1,2],[3,4]]'")
    return p


def _load(cfg: RunConfig):
    if cfg.model_path == "example":
        text = resources.files("regenstab").joinpath("data", EXAMPLE_MODEL).read_text()
        return parse_model(text)
    try:
        return load_model(cfg.model_path)
    except OSError as exc:
        raise ModelError(f"cannot read model file: {exc.strerror or exc}") from None


def _write(cfg: RunConfig, text: str, default_name: str, stdout) -> str | None:
    target = cfg.output_path
    if target is None and os.environ.get(OUTPUT_DIR_ENV):
        target = str(Path(os.environ[OUTPUT_DIR_ENV]) / default_name)
    if target is None:
        stdout.write(text)
        return None
    _write_file(target, text)
    return target


def _write_file(target: str, text: str):
    path = Path(target)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _model_for(cfg: RunConfig, model):
    if cfg.m is not None and cfg.m != model.m:
        model = model.with_degree(cfg.m)
    if cfg.h is not None and isinstance(model, PeriodicObservationModel):
        model = model.with_period(cfg.h)
    return model


def cmd_analyze(cfg: RunConfig, stdout=sys.stdout, stderr=sys.stderr) -> int:
    model = _model_for(cfg, _load(cfg))
    h = cfg.h if isinstance(model, MJLSModel) else None
    report = analyze(model, h=h)
    if cfg.format == "csv":
        d = report.to_dict()
        cols = ["class", "test", "dimension", "decisive_value", "verdict", "growth_rate", "h"]
        vals = [repr(d[c]) if isinstance(d.get(c), float) else str(d.get(c, "")) for c in cols]
        text = ",".join(cols) + "\n" + ",".join(vals) + "\n"
    elif cfg.format in ("json", "json-like", "structured"):
        text = report_to_json(report)
    else:
        text = report_to_text(report)
    if cfg.output_path:
        _write_file(cfg.output_path, text)
    else:
        stdout.write(text)
    return VERDICT_EXIT[report.verdict]


def sweep_grid(start: float, stop: float, step: float) -> list[float]:
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + k * step, 12) for k in range(count)]


def cmd_sweep(cfg: RunConfig, stdout=sys.stdout, stderr=sys.stderr) -> int:
    model = _load(cfg)
    if not isinstance(model, PeriodicObservationModel):
        raise UsageError(f"sweep needs a periodic model, got class {model.kind!r}")
    model = _model_for(cfg, model)
    rows = sweep_growth_rate(model, model.m, sweep_grid(*cfg.h_grid), workers=cfg.workers)
    _write(cfg, sweep_to_csv(rows), "sweep.csv", stdout)
    bracket = find_crossing(rows)
    if bracket is None:
        side = "below" if rows[0].rho < 1 else "at or above"
        stderr.write(f"no rho=1 crossing on the grid; rho starts {side} 1\n")
    else:
        stderr.write(f"rho=1 crossing bracketed by h in [{bracket[0]:g}, {bracket[1]:g}]\n")
    return 0


def cmd_simulate(cfg: RunConfig, stdout=sys.stdout, stderr=sys.stderr) -> int:
    model = _model_for(cfg, _load(cfg))
    if cfg.x0 is not None:
        if len(cfg.x0) != model.modes.n:
            raise UsageError(f"--x0 has {len(cfg.x0)} entries, state dimension is {model.modes.n}")
        policy = mc.X0Policy.fixed(cfg.x0, cfg.state)
    else:
        policy = mc.X0Policy("sphere", state=cfg.state)
    if cfg.state is not None and not 0 <= cfg.state < model.num_states:
        raise UsageError(f"--state must be in [0, {model.num_states - 1}]")
    ens = mc.estimate_moments(
        model, model.m, policy, cfg.path_count, cfg.horizon, cfg.step, cfg.seed,
        workers=cfg.workers, keep_paths=cfg.per_path is not None,
    )
    where = _write(cfg, mc.moments_to_csv(ens), "moments.csv", stdout)
    if cfg.per_path:
        _write_file(cfg.per_path, mc.per_path_to_csv(ens))
    if cfg.switching_dump:
        rng = mc.path_rng(cfg.seed, 0)
        state, _ = policy.draw(model.modes.n, model.num_states, rng)
        path = mc.sample_switching(model, cfg.horizon, seed=cfg.seed, rng=rng, initial_state=state)
        _write_file(cfg.switching_dump, mc.switching_to_csv(path))

    try:
        report = analyze(model)
        unit = "per time unit" if report.test == "hurwitz" or report.h else "per regeneration"
        analytic = f"{report.growth_rate:.6g} ({unit}, verdict {report.verdict})"
    except (AssumptionError, ModelError) as exc:
        analytic = f"n/a ({exc})"
    log = stderr if where is None else stdout
    log.write(f"paths: {ens.path_count}, m: {ens.m}, horizon: {ens.time_grid[-1]:g}\n")
    log.write(f"empirical growth rate: {ens.empirical_growth_rate:.6g} per time unit\n")
    log.write(f"analytic growth rate:  {analytic}\n")
    if ens.saturation_time is not None:
        log.write(f"moment mean saturated (overflow) from t = {ens.saturation_time:g}\n")
    return 0


def _print_matrix(out, M, labels):
    width = max(len(s) for s in labels)
    for lab, row in zip(labels, M):
        out.write(f"  {lab:>{width}} | " + " ".join(f"{v: .6g}".rjust(12) for v in row) + "\n")


def cmd_lift(cfg: RunConfig, stdout=sys.stdout, stderr=sys.stderr) -> int:
    m = cfg.m if cfg.m is not None else 2
    if cfg.matrix is not None:
        try:
            mats = {"A": np.array(json.loads(cfg.matrix), dtype=np.float64)}
        except (ValueError, TypeError) as exc:
            raise UsageError(f"--matrix is not a numeric JSON matrix: {exc}") from None
    elif cfg.model_path is not None:
        model = _load(cfg)
        mats = {str(lab): model.modes[lab] for lab in model.modes.labels}
    else:
        raise UsageError("lift needs --matrix or --model")
    out = []
    for name, A in mats.items():
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError(f"matrix {name} must be square, got shape {A.shape}")
        basis = multi_index_basis(A.shape[0], m)
        labels = [basis.monomial_label(k) for k in range(basis.size)]
        if cfg.format in ("json", "json-like", "structured"):
            out.append({
                "name": name, "m": m, "basis": [list(a) for a in basis.indices],
                "induced": induced_matrix(A, m).tolist(),
                "infinitesimal": infinitesimal_lift(A, m).tolist(),
            })
            continue
        stdout.write(f"mode {name}: n={A.shape[0]}, m={m}, n_m={basis.size}\n")
        stdout.write("basis: " + ", ".join(
            f"{lab} {tuple(a)}" for lab, a in zip(labels, basis.indices)) + "\n")
        stdout.write("induced A^[m]:\n")
        _print_matrix(stdout, induced_matrix(A, m), labels)
        stdout.write("infinitesimal A_[m]:\n")
        _print_matrix(stdout, infinitesimal_lift(A, m), labels)
    if out:
        stdout.write(json.dumps(out, indent=2) + "\n")
    return 0


COMMANDS = {"analyze": cmd_analyze, "sweep": cmd_sweep, "simulate": cmd_simulate, "lift": cmd_lift}


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        ns = build_parser().parse_args(argv)
        cfg = RunConfig(**vars(ns))
        cfg.validate()
        return COMMANDS[cfg.command](cfg, stdout, stderr)
    except UsageError as exc:
        stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except AssumptionError as exc:
        stderr.write(f"not applicable: {exc}\n")
        return EXIT_ASSUMPTION
    except (ModelError, DimensionError) as exc:
        stderr.write(f"invalid model: {exc}\n")
        return EXIT_MODEL
    except OSError as exc:
        stderr.write(f"i/o error: {exc}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
