"""Command-line front end: solve, sweep, curve and simulate.

Configuration is a JSON document (see ``RunConfig.to_dict`` for the
schema).  Data goes to stdout or ``--out``; diagnostics go to stderr.
Exit codes: 0 ok, 2 invalid input, 3 solver failure.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .agents import (
    AgentType,
    default_log_return_grid,
    emit_figure_data,
    simulate_wealth,
    strategy_plan,
    value_check,
)
from .envelope import theta_lower
from .errors import DomainError, PortfolioError
from .fixed_point import AgentConstants, agent_constants
from .market import MarketParams, PreferenceParams, Tolerances, ValidatedModel, validate
from .one_period import atom_mass

log = logging.getLogger("periodic_portfolio")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3
SWEEP_PARAMS = ("beta", "gamma", "k", "delta")
SWEEP_COLUMNS = (
    "param", "value", "status", "a_my", "a_exp", "beta_a_exp", "a_pre", "a_so",
    "beta_hat", "xi_hat", "branch", "ordering_ok", "message",
)
CURVE_COLUMNS = ("agent", "log_return", "fraction_invested")
PATH_COLUMNS = ("path", "terminal_wealth")


@dataclass(frozen=True)
class SweepOptions:
    param: str = "beta"
    grid: List[float] = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(1, 11)])


@dataclass(frozen=True)
class CurveOptions:
    t_frac: float = 0.5
    grid: List[float] = field(default_factory=lambda: default_log_return_grid().tolist())


@dataclass(frozen=True)
class SimulateOptions:
    agent: str = "Sophisticated"
    x0: float = 1.0
    periods: int = 20
    paths: int = 100_000


@dataclass(frozen=True)
class RunConfig:
    market: MarketParams = MarketParams(0.1, 0.15, 0.01, 1.0)
    preferences: PreferenceParams = PreferenceParams(0.5, 1.25, 1.0, 0.3, 0.4)
    tolerances: Tolerances = Tolerances()
    agents: List[str] = field(default_factory=lambda: [a.value for a in AgentType])
    sweep: SweepOptions = SweepOptions()
    curve: CurveOptions = CurveOptions()
    simulate: SimulateOptions = SimulateOptions()
    seed: int = 0
    jobs: int = 1

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        nested = {
            "market": MarketParams, "preferences": PreferenceParams,
            "tolerances": Tolerances, "sweep": SweepOptions,
            "curve": CurveOptions, "simulate": SimulateOptions,
        }
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DomainError(f"unknown config keys: {sorted(unknown)}")
        kwargs: Dict[str, Any] = {}
        for key, value in data.items():
            if key in nested:
                typ = nested[key]
                if not isinstance(value, dict):
                    raise DomainError(f"config section {key!r} must be an object")
                allowed = {f.name for f in fields(typ)}
                extra = set(value) - allowed
                if extra:
                    raise DomainError(f"unknown keys in {key!r}: {sorted(extra)}")
                try:
                    kwargs[key] = typ(**value)
                except TypeError as exc:
                    raise DomainError(f"bad section {key!r}: {exc}") from None
            else:
                kwargs[key] = value
        cfg = cls(**kwargs)
        for name in cfg.agents:
            AgentType(name)
        if cfg.sweep.param not in SWEEP_PARAMS:
            raise DomainError(f"sweep param must be one of {SWEEP_PARAMS}")
        return cfg

    def model(self) -> ValidatedModel:
        return validate(self.market, self.preferences, self.tolerances)


# ----------------------------------------------------------------- emission

def _num(x: float, digits: int) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return "null"
    return format(x, f".{digits}g")


def dumps(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """JSON with every float written to 17 significant digits."""
    pad, inner = " " * (indent * _level), " " * (indent * (_level + 1))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{inner}{dumps(v, indent, _level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (bool, int, float, np.integer, np.floating)):
        return _num(obj, 17)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_csv(columns: Sequence[str], rows: Sequence[Sequence[Any]], header: Sequence[str] = ()) -> str:
    """CSV text with floats at 10 significant digits; ``header`` lines start with '#'."""
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        cells = []
        for v in row:
            if v is None:
                cells.append("")
            elif isinstance(v, str):
                cells.append(v.replace(",", ";"))
            else:
                cells.append(_num(v, 10))
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


# ----------------------------------------------------------------- commands

def _ordering(c: AgentConstants, beta: float) -> Dict[str, Any]:
    b_exp = beta * c.a_exp
    if beta == 1.0:
        ok = abs(c.a_so - c.a_exp) <= 1e-8
        return {"chain": "A_so = A_exp at beta = 1", "chain_holds": ok, "beta_hat_in_range": ok}
    if beta == 0.0:
        ok = c.a_so == 0.0
        return {"chain": "A_so = 0 at beta = 0", "chain_holds": ok, "beta_hat_in_range": ok}
    if c.a_my > 0:
        chain = 0 < c.a_so < b_exp < c.a_exp
        bh = c.beta_hat is not None and 0 < c.beta_hat < beta
        name = "0 < A_so < beta*A_exp < A_exp"
    elif c.a_my < 0:
        chain = c.a_exp < c.a_so <= b_exp < 0
        bh = c.beta_hat is not None and beta <= c.beta_hat < 1
        name = "A_exp < A_so <= beta*A_exp < 0"
    else:
        chain, bh, name = c.a_so == 0 and c.a_exp == 0, True, "all zero"
    return {"chain": name, "chain_holds": bool(chain), "beta_hat_in_range": bool(bh)}


def cmd_solve(cfg: RunConfig) -> Dict[str, Any]:
    model = cfg.model()
    c = agent_constants(model)
    p = model.pref
    out: Dict[str, Any] = {
        "a_my": c.a_my,
        "a_exp": c.a_exp,
        "beta_a_exp": p.beta * c.a_exp,
        "a_pre": c.a_pre,
        "a_so": c.a_so,
        "beta_hat": c.beta_hat,
        "xi_hat": c.xi_hat,
        "theta_lower": theta_lower(p),
        "xi_lower": c.xi_lower,
        "h_lower_bar": c.h_lower_bar,
        "branch": c.branch.value,
        "merton_ratio": model.merton_ratio,
        "ordering": _ordering(c, p.beta),
        "diagnostics": dict(c.diagnostics),
    }
    residuals: Dict[str, Any] = {}
    for name in cfg.agents:
        plan = strategy_plan(AgentType(name), c, model)
        report = value_check(plan, model)
        residuals[name] = report.residuals
    out["residuals"] = residuals
    return out


def _sweep_point(args) -> List[Any]:
    cfg, value = args
    param = cfg.sweep.param
    base = [param, value]
    try:
        pref = replace(cfg.preferences, **{param: value})
        model = validate(cfg.market, pref, cfg.tolerances)
        c = agent_constants(model)
        ordering = _ordering(c, pref.beta)
        ok = ordering["chain_holds"] and ordering["beta_hat_in_range"]
        return base + ["ok", c.a_my, c.a_exp, pref.beta * c.a_exp, c.a_pre, c.a_so,
                       c.beta_hat, c.xi_hat, c.branch.value, ok, ""]
    except PortfolioError as exc:
        status = "invalid" if isinstance(exc, DomainError) else "failed"
        return base + [status] + [None] * 9 + [str(exc)]


def cmd_sweep(cfg: RunConfig, param: Optional[str] = None, grid: Optional[Sequence[float]] = None):
    """Rows of SWEEP_COLUMNS, one per grid value, in grid order."""
    param = param or cfg.sweep.param
    grid = list(grid if grid is not None else cfg.sweep.grid)
    if param not in SWEEP_PARAMS:
        raise DomainError(f"sweep param must be one of {SWEEP_PARAMS}, got {param!r}")
    if not grid:
        raise DomainError("sweep grid is empty")
    cfg = replace(cfg, sweep=SweepOptions(param, [float(v) for v in grid]))
    cfg.model()
    work = [(cfg, float(v)) for v in grid]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(_sweep_point, work))
    else:
        rows = [_sweep_point(w) for w in work]
    return rows


def cmd_curve(cfg: RunConfig) -> Dict[str, Any]:
    model = cfg.model()
    opts = cfg.curve
    if not opts.grid:
        raise DomainError("curve grid is empty")
    if not 0.0 <= opts.t_frac < 1.0:
        raise DomainError(f"t_frac must lie in [0, 1), got {opts.t_frac}")
    rows = emit_figure_data([AgentType(a) for a in cfg.agents], opts.t_frac, opts.grid, model)
    return {"merton_ratio": model.merton_ratio, "t_frac": opts.t_frac, "rows": rows}


def cmd_simulate(cfg: RunConfig) -> Dict[str, Any]:
    model = cfg.model()
    o = cfg.simulate
    if o.paths < 1 or o.periods < 1:
        raise DomainError("paths and periods must be at least 1")
    c = agent_constants(model)
    plan = strategy_plan(AgentType(o.agent), c, model)
    stats = simulate_wealth(plan, o.x0, o.periods, o.paths, cfg.seed, model, jobs=cfg.jobs)
    return {
        "agent": plan.agent.value,
        "x0": o.x0,
        "paths": stats.paths,
        "periods": stats.periods,
        "seed": stats.seed,
        "bankruptcy_frequency": stats.bankruptcy_frequency,
        "ruin_rate": stats.ruin_rate,
        "ruin_rate_se": stats.ruin_rate_se,
        "first_period_atom_mass": atom_mass(plan.first_period_law, model),
        "steady_atom_mass": atom_mass(plan.steady_law, model),
        "return_mean": list(stats.return_mean),
        "return_std": list(stats.return_std),
        "terminal_quantiles": {format(q, "g"): v for q, v in stats.terminal_quantiles.items()},
        "_terminal": stats.terminal_wealth,
    }


# ----------------------------------------------------------------- driver

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--out", metavar="PATH", help="write data here instead of stdout")
    common.add_argument("--format", choices=("json", "csv"))
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--tol-quad", type=float)
    common.add_argument("--tol-root", type=float)

    p = argparse.ArgumentParser(prog="periodic-portfolio", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="value constants and residual report")
    sw = sub.add_parser("sweep", parents=[common], help="constants over a parameter grid")
    sw.add_argument("--param", choices=SWEEP_PARAMS)
    sw.add_argument("--grid", help="comma-separated values")
    sub.add_parser("curve", parents=[common], help="investment-level curves")
    sm = sub.add_parser("simulate", parents=[common], help="Monte-Carlo wealth paths")
    sm.add_argument("--paths-out", metavar="PATH", help="per-path terminal wealth CSV")
    return p


def load_config(args: argparse.Namespace) -> RunConfig:
    data: Dict[str, Any] = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DomainError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise DomainError("config must be a JSON object")
    cfg = RunConfig.from_dict(data)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.jobs is not None:
        cfg = replace(cfg, jobs=max(1, args.jobs))
    tol = cfg.tolerances
    if args.tol_quad is not None:
        tol = replace(tol, quad=args.tol_quad)
    if args.tol_root is not None:
        tol = replace(tol, root=args.tol_root)
    return replace(cfg, tolerances=tol)


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO,
             "debug": logging.DEBUG}.get(os.environ.get("PP_LOG_LEVEL", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args)
        cmd = args.command
        log.info("%s: market=%s preferences=%s", cmd, cfg.market, cfg.preferences)
        if cmd == "solve":
            res = cmd_solve(cfg)
            if args.format == "csv":
                flat = {k: v for k, v in res.items() if not isinstance(v, dict)}
                text = write_csv(tuple(flat), [tuple(flat.values())])
            else:
                text = dumps(res) + "\n"
            _emit(text, args.out)
            return EXIT_OK
        if cmd == "sweep":
            grid = [float(v) for v in args.grid.split(",")] if args.grid else None
            rows = cmd_sweep(cfg, args.param, grid)
            if args.format == "json":
                text = dumps([dict(zip(SWEEP_COLUMNS, r)) for r in rows]) + "\n"
            else:
                text = write_csv(SWEEP_COLUMNS, rows)
            _emit(text, args.out)
            failed = [r for r in rows if r[2] != "ok"]
            for r in failed:
                print(f"sweep {r[0]}={r[1]} {r[2]}: {r[-1]}", file=sys.stderr)
            if any(r[2] == "failed" for r in failed):
                return EXIT_SOLVER
            return EXIT_INPUT if failed else EXIT_OK
        if cmd == "curve":
            res = cmd_curve(cfg)
            if args.format == "json":
                res = dict(res, rows=[dict(zip(CURVE_COLUMNS, r)) for r in res["rows"]])
                text = dumps(res) + "\n"
            else:
                text = write_csv(CURVE_COLUMNS, res["rows"],
                                 header=[f"merton_ratio={_num(res['merton_ratio'], 10)}",
                                         f"t_frac={_num(res['t_frac'], 10)}"])
            _emit(text, args.out)
            return EXIT_OK
        res = cmd_simulate(cfg)
        terminal = res.pop("_terminal")
        if args.paths_out:
            _emit(write_csv(PATH_COLUMNS, [(i, w) for i, w in enumerate(terminal)]), args.paths_out)
        _emit(dumps(res) + "\n", args.out)
        return EXIT_OK
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (PortfolioError, ArithmeticError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
