"""Command-line entry point.

One config file (TOML, or JSON by extension) describes one run.  Every key is
validated before any computation starts; errors name the offending key path.
Outputs are a sorted-key JSON manifest plus CSV tables, written atomically
per run: on any failure the files written so far are removed.

Exit codes: 0 all checks hold, 1 some check failed, 2 configuration error,
3 runtime failure (numerical, construction or I/O).
"""

from __future__ import annotations

import argparse
import ast
import copy
import hashlib
import json
import logging
import math
import os
import shutil
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, DegenSolveError, EmissionError

log = logging.getLogger("degensolve")

COMMANDS = ("solve", "check-conditions", "oracle", "barrier", "convergence", "report")
FAMILY_NAMES = ("identity", "sharpness", "fedii", "axis", "power")

# section -> key -> (type(s), default); ``...`` marks a required key
_NUM = (int, float)
SCHEMA = {
    "family": {"name": (str, ...), "params": (list, [])},
    "grid": {"lows": (list, ...), "highs": (list, ...), "counts": (list, ...)},
    "dirichlet": {
        "kind": (str, "expression"),
        "expression": (str, None),
        "value": (_NUM, None),
        "m": (int, 1),
        "modes": (int, 3),
        "amplitude": (_NUM, 1.0),
    },
    "solver": {
        "eps_ladder": (list, None),
        "levels": (int, 21),
        "newton_tol": (_NUM, 1e-10),
        "max_newton_iters": (int, 60),
        "damping": (_NUM, 0.5),
        "min_step": (_NUM, 2.0**-30),
        "M": (_NUM, None),
    },
    "checks": {
        "maximum": (bool, True),
        "interior": (bool, False),
        "shrink": (_NUM, 0.5),
        "factor": (_NUM, 10.0),
        "boundary_point": (list, None),
        "sigma": (_NUM, 0.05),
        "kappa0": (_NUM, 1.0),
    },
    "conditions": {
        "lows": (list, None),
        "highs": (list, None),
        "z_range": (list, [-1.0, 1.0]),
        "flags": (list, ["subordinate", "super_subordinate", "subunit"]),
        "sample_density": (int, 21),
        "exponent": (_NUM, 1.0),
        "diagonal_bound": (_NUM, 1.0),
        "nondegeneracy_points": (list, []),
        "epsilon": (_NUM, 0.5),
    },
    "oracle": {
        "m": (int, 1),
        "exclusion_radius": (_NUM, 0.1),
        "holder_tol": (_NUM, 0.005),
    },
    "barrier": {
        "omega_exponent": (_NUM, 0.5),
        "omega_coeff": (_NUM, 1.0),
        "rbar": (_NUM, 1.0),
        "kappa0": (_NUM, 1.0),
        "m0": (_NUM, 1.0),
        "K": (_NUM, 1.0),
        "samples": (int, 10_000),
        "search_budget": (int, 200),
    },
    "convergence": {
        "counts": (list, [33, 65]),
        "m": (int, 1),
        "lows": (list, [0.2, 0.2]),
        "highs": (list, [1.2, 1.2]),
        "levels": (int, 17),
        "max_error": (_NUM, 5e-3),
        "min_order": (_NUM, 1.5),
    },
}
TOP_LEVEL = {"command": (str, ...), "seed": (int, 0)}
# sections each command needs, beyond the top level
NEEDS = {
    "solve": ("family", "grid", "dirichlet", "solver", "checks"),
    "check-conditions": ("family", "conditions"),
    "oracle": ("grid", "oracle"),
    "barrier": ("family", "barrier"),
    "convergence": ("convergence", "solver"),
    "report": (),
}

_EXPR_FUNCS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "sinh", "cosh", "arctan")
_EXPR_NAMES = ("x", "y", "z", "pi", "e")


@dataclass
class RunConfig:
    command: str
    seed: int
    sections: dict
    source: str | None = None
    threads: int | None = None
    echo: dict = field(default_factory=dict)


def _type_name(t):
    if isinstance(t, tuple):
        return "number"
    return {str: "string", int: "integer", list: "array", bool: "boolean"}.get(t, t.__name__)


def _check_type(key, value, typ):
    if typ is _NUM or typ == _NUM:
        ok = isinstance(value, _NUM) and not isinstance(value, bool)
    elif typ is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, typ)
    if not ok:
        raise ConfigError(key, f"expected {_type_name(typ)}, got {type(value).__name__}")


def _numbers(key, values, length=None):
    if length is not None and len(values) != length:
        raise ConfigError(key, f"expected {length} entries, got {len(values)}")
    for i, v in enumerate(values):
        if not isinstance(v, _NUM) or isinstance(v, bool) or not math.isfinite(v):
            raise ConfigError(f"{key}[{i}]", "expected a finite number")
    return [float(v) for v in values]


def _compile_expression(key, text):
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(key, f"cannot parse expression: {exc.msg}") from None
    allowed = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
               ast.operator, ast.unaryop)
    for node in ast.walk(tree):
        if not isinstance(node, allowed):
            raise ConfigError(key, f"unsupported syntax {type(node).__name__}")
        if isinstance(node, ast.Name) and node.id not in _EXPR_FUNCS + _EXPR_NAMES:
            raise ConfigError(key, f"unknown name {node.id!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _EXPR_FUNCS):
            raise ConfigError(key, "only elementary functions may be called")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ConfigError(key, "only numeric constants are allowed")
    return compile(tree, key, "eval")


def _load_file(path: Path) -> dict:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    if path.suffix.lower() == ".json":
        try:
            return json.loads(raw.decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        return tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError("<file>", f"invalid TOML: {exc}") from None


def parse_config(source, command: str | None = None, seed: int | None = None) -> RunConfig:
    """Validate a config (path or mapping) and fill defaults.

    ``command``/``seed`` given on the command line override the file.
    """
    if isinstance(source, (str, os.PathLike)):
        data = _load_file(Path(source))
        origin = str(source)
    elif isinstance(source, dict):
        data = copy.deepcopy(source)
        origin = None
    else:
        raise ConfigError("<config>", "expected a path or a mapping")
    if not isinstance(data, dict):
        raise ConfigError("<config>", "top level must be a table")
    if command is not None:
        data["command"] = command
    if seed is not None:
        data["seed"] = seed

    for key in data:
        if key not in TOP_LEVEL and key not in SCHEMA:
            raise ConfigError(key, "unknown key")
    echo = {}
    for key, (typ, default) in TOP_LEVEL.items():
        if key not in data:
            if default is ...:
                raise ConfigError(key, "missing required key")
            data[key] = default
        _check_type(key, data[key], typ)
        echo[key] = data[key]
    cmd = data["command"]
    if cmd not in COMMANDS:
        raise ConfigError("command", f"unknown command {cmd!r}; expected one of {', '.join(COMMANDS)}")
    if data["seed"] < 0 or data["seed"] >= 2**64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer")

    sections = {}
    for name in NEEDS[cmd] + tuple(s for s in SCHEMA if s in data and s not in NEEDS[cmd]):
        given = data.get(name, {})
        if not isinstance(given, dict):
            raise ConfigError(name, "expected a table")
        out = {}
        for key in given:
            if key not in SCHEMA[name]:
                raise ConfigError(f"{name}.{key}", "unknown key")
        for key, (typ, default) in SCHEMA[name].items():
            path = f"{name}.{key}"
            if key in given:
                value = given[key]
                if value is not None:
                    _check_type(path, value, typ)
            elif default is ...:
                raise ConfigError(path, "missing required key")
            else:
                value = copy.deepcopy(default)
            out[key] = value
        sections[name] = out
    _validate_semantics(cmd, sections)
    for name, sec in sections.items():
        echo[name] = {k: v for k, v in sec.items() if not k.startswith("_")}
    return RunConfig(cmd, data["seed"], sections, origin, echo=echo)


def _validate_semantics(cmd, s):
    from .coefficients import SUITE_FLAGS, make_builtin_family
    from .errors import ParameterError
    from .grid import StructuredGrid
    from .solver import SolverConfig, default_eps_ladder

    if "family" in s:
        fam = s["family"]
        if fam["name"] not in FAMILY_NAMES:
            raise ConfigError("family.name", f"unresolved family {fam['name']!r}")
        params = _numbers("family.params", fam["params"])
        try:
            fam["_field"] = make_builtin_family(fam["name"], params)
        except ParameterError as exc:
            raise ConfigError("family.params", str(exc)) from None
    if "grid" in s:
        g = s["grid"]
        lows = _numbers("grid.lows", g["lows"])
        highs = _numbers("grid.highs", g["highs"], len(lows))
        counts = g["counts"]
        if len(counts) != len(lows) or not all(isinstance(c, int) and not isinstance(c, bool) for c in counts):
            raise ConfigError("grid.counts", "expected one integer per axis")
        try:
            g["_grid"] = StructuredGrid(tuple(lows), tuple(highs), tuple(counts))
        except ParameterError as exc:
            raise ConfigError("grid", str(exc)) from None
        if "family" in s and s["family"]["_field"].dim != len(lows):
            raise ConfigError("grid.lows", "grid dimension does not match the family")
    if "dirichlet" in s:
        d = s["dirichlet"]
        kind = d["kind"]
        if kind == "expression":
            if d["expression"] is None:
                raise ConfigError("dirichlet.expression", "required for kind 'expression'")
            d["_code"] = _compile_expression("dirichlet.expression", d["expression"])
        elif kind == "constant":
            if d["value"] is None:
                raise ConfigError("dirichlet.value", "required for kind 'constant'")
        elif kind == "oracle":
            if d["m"] < 1:
                raise ConfigError("dirichlet.m", "must be >= 1")
            if "grid" in s and s["grid"]["_grid"].dim != 2:
                raise ConfigError("dirichlet.kind", "oracle data need a 2-D grid")
        elif kind == "random":
            if d["modes"] < 1:
                raise ConfigError("dirichlet.modes", "must be >= 1")
        else:
            raise ConfigError("dirichlet.kind", f"unknown kind {kind!r}")
    if "solver" in s:
        sv = s["solver"]
        ladder = sv["eps_ladder"]
        sv["_explicit_ladder"] = ladder is not None
        if ladder is None:
            if sv["levels"] < 1:
                raise ConfigError("solver.levels", "must be >= 1")
            ladder = list(default_eps_ladder(sv["levels"]))
        else:
            ladder = _numbers("solver.eps_ladder", ladder)
            if not ladder or any(b >= a for a, b in zip(ladder, ladder[1:])) or min(ladder) <= 0:
                raise ConfigError("solver.eps_ladder", "must be nonempty, positive and strictly decreasing")
        sv["eps_ladder"] = ladder
        try:
            sv["_config"] = SolverConfig(
                eps_ladder=tuple(ladder),
                newton_tol=float(sv["newton_tol"]),
                max_newton_iters=sv["max_newton_iters"],
                damping=float(sv["damping"]),
                min_step=float(sv["min_step"]),
                M=None if sv["M"] is None else float(sv["M"]),
            )
        except ParameterError as exc:
            raise ConfigError("solver", str(exc)) from None
    if "checks" in s:
        c = s["checks"]
        if not 0 < c["shrink"] < 1:
            raise ConfigError("checks.shrink", "must lie in (0, 1)")
        if c["boundary_point"] is not None:
            _numbers("checks.boundary_point", c["boundary_point"], s["grid"]["_grid"].dim if "grid" in s else None)
        if c["sigma"] <= 0:
            raise ConfigError("checks.sigma", "must be positive")
        if c["interior"] and s.get("solver", {}).get("eps_ladder") and len(s["solver"]["eps_ladder"]) < 3:
            raise ConfigError("checks.interior", "needs an eps ladder with at least 3 rungs")
    if "conditions" in s:
        c = s["conditions"]
        bad = set(c["flags"]) - SUITE_FLAGS - {"diagonal"}
        if bad:
            raise ConfigError("conditions.flags", f"unknown flags {sorted(bad)}")
        dim = s["family"]["_field"].dim
        c["lows"] = _numbers("conditions.lows", c["lows"] or [-1.0] * dim, dim)
        c["highs"] = _numbers("conditions.highs", c["highs"] or [1.0] * dim, dim)
        if any(h <= l for l, h in zip(c["lows"], c["highs"])):
            raise ConfigError("conditions.highs", "must exceed conditions.lows")
        zr = _numbers("conditions.z_range", c["z_range"], 2)
        if zr[1] < zr[0]:
            raise ConfigError("conditions.z_range", "must be increasing")
        for i, p in enumerate(c["nondegeneracy_points"]):
            if not isinstance(p, list):
                raise ConfigError(f"conditions.nondegeneracy_points[{i}]", "expected an array")
            _numbers(f"conditions.nondegeneracy_points[{i}]", p, dim)
        if c["epsilon"] <= 0:
            raise ConfigError("conditions.epsilon", "must be positive")
    if "oracle" in s:
        if s["oracle"]["m"] < 1:
            raise ConfigError("oracle.m", "must be >= 1")
        if "grid" in s and s["grid"]["_grid"].dim != 2:
            raise ConfigError("grid.lows", "the oracle lives on a 2-D grid")
    if "barrier" in s:
        b = s["barrier"]
        if not 0 < b["omega_exponent"] <= 1:
            raise ConfigError("barrier.omega_exponent", "must lie in (0, 1]")
        for key in ("omega_coeff", "rbar", "kappa0"):
            if b[key] <= 0:
                raise ConfigError(f"barrier.{key}", "must be positive")
        if b["samples"] < 1:
            raise ConfigError("barrier.samples", "must be positive")
    if "convergence" in s:
        c = s["convergence"]
        counts = c["counts"]
        if len(counts) < 2 or not all(isinstance(n, int) and n >= 3 for n in counts):
            raise ConfigError("convergence.counts", "need at least two node counts >= 3")
        lows = _numbers("convergence.lows", c["lows"], 2)
        highs = _numbers("convergence.highs", c["highs"], 2)
        if any(h <= l for l, h in zip(lows, highs)):
            raise ConfigError("convergence.highs", "must exceed convergence.lows")
        if lows[0] <= 0 < highs[0] and lows[1] <= 0 < highs[1]:
            log.info("convergence box contains the origin; the oracle is only Hoelder there")


# ---------------------------------------------------------------------------
# helpers


def _dirichlet(sections, grid, seed):
    import numpy as np

    d = sections["dirichlet"]
    kind = d["kind"]
    if kind == "constant":
        return float(d["value"])
    if kind == "expression":
        code = d["_code"]
        ns = {name: getattr(np, name) for name in _EXPR_FUNCS}
        ns.update(pi=np.pi, e=np.e)

        def func(*xs):
            env = dict(ns)
            env.update(zip(("x", "y", "z"), xs))
            return np.broadcast_to(eval(code, {"__builtins__": {}}, env), np.shape(xs[0])).astype(float)

        return func
    if kind == "oracle":
        from .oracle import SharpnessExample, sharpness_w

        ex = SharpnessExample(d["m"])
        return lambda x, y: sharpness_w(ex, x, y)
    # random smooth trigonometric data
    return random_smooth_data(grid.dim, seed, d["modes"], float(d["amplitude"]))


def random_smooth_data(dim, seed, modes=3, amplitude=1.0):
    """Deterministic random trigonometric polynomial ``x -> sum a sin(k.x + phase)``."""
    import numpy as np

    rng = np.random.default_rng(seed)
    ks = rng.integers(-3, 4, size=(modes, dim)).astype(float)
    phases = rng.uniform(0, 2 * np.pi, modes)
    amps = rng.normal(size=modes)
    amps *= amplitude / max(np.abs(amps).sum(), 1e-300)

    def func(*xs):
        out = np.zeros(np.shape(xs[0]))
        for k, ph, a in zip(ks, phases, amps):
            arg = ph + sum(kk * np.pi * 0.5 * xx for kk, xx in zip(k, xs))
            out = out + a * np.sin(arg)
        return out

    return func


def _jsonable(obj):
    import numpy as np

    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items() if not str(k).startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps_manifest(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(v)) if not isinstance(v, (int, str)) or isinstance(v, bool) else str(v)
                              for v in row))
    return "\n".join(lines) + "\n"


def _field_csv(grid, values) -> str:
    pts = grid.points
    names = ("x", "y", "z")[: grid.dim] + ("w",)
    rows = [tuple(p) + (v,) for p, v in zip(pts.tolist(), values.ravel().tolist())]
    return _csv(names, rows)


@dataclass
class RunResult:
    manifest: dict
    files: dict  # name -> text
    checks: dict  # name -> bool


# ---------------------------------------------------------------------------
# commands


def run_solve(cfg: RunConfig) -> RunResult:
    from .principles import check_maximum_principle, interior_regularity_report
    from .solver import viscosity_continuation

    s = cfg.sections
    grid = s["grid"]["_grid"]
    fld = s["family"]["_field"]
    data = _dirichlet(s, grid, cfg.seed)
    ladder = viscosity_continuation(fld, grid, data, s["solver"]["_config"])
    checks, reports = {}, {}
    if s["checks"]["maximum"]:
        reps = [check_maximum_principle(sol, data, fld) for sol in ladder]
        worst = min(reps, key=lambda r: r.margin)
        reports["maximum"] = worst.to_dict()
        checks["maximum"] = all(r.holds for r in reps)
    if s["checks"]["interior"]:
        rep = interior_regularity_report(ladder, s["checks"]["shrink"], s["checks"]["factor"])
        reports["interior_bounds"] = rep.to_dict()
        checks["interior_bounds"] = rep.holds
    if s["checks"]["boundary_point"] is not None:
        from .barriers import boundary_modulus_check

        rep = boundary_modulus_check(
            ladder,
            data,
            {
                "x0": s["checks"]["boundary_point"],
                "sigma": s["checks"]["sigma"],
                "kappa0": s["checks"]["kappa0"],
                "field": fld,
            },
        )
        reports["boundary_modulus"] = rep.to_dict()
        checks["boundary_modulus"] = rep.holds
    ladder_rows = [(sol.eps, sol.residual_norm, sol.newton_iters, sol.rung_change if sol.rung_change is not None else 0.0)
                   for sol in ladder]
    files = {
        "solution.csv": _field_csv(grid, ladder[-1].values),
        "ladder.csv": _csv(("eps", "residual_norm", "newton_iters", "rung_change"), ladder_rows),
    }
    manifest = {
        "results": {
            "eps_ladder": [sol.eps for sol in ladder],
            "norms": [sol.residual_norm for sol in ladder],
            "iters": [sol.newton_iters for sol in ladder],
            "rung_changes": [sol.rung_change for sol in ladder],
            "M": ladder[-1].M,
            "final_sup": float(abs(ladder[-1].values).max()),
        },
        "reports": reports,
    }
    return RunResult(manifest, files, checks)


def run_check_conditions(cfg: RunConfig) -> RunResult:
    from .coefficients import BoxRegion, check_diagonal_equivalence, check_subordination_suite, nondegeneracy_report

    s = cfg.sections
    c = s["conditions"]
    fld = s["family"]["_field"]
    region = BoxRegion.from_bounds(c["lows"], c["highs"])
    zr = tuple(float(v) for v in c["z_range"])
    flags = [f for f in c["flags"] if f != "diagonal"]
    reports = []
    if "diagonal" in c["flags"]:
        reports.append(check_diagonal_equivalence(fld, region, zr, float(c["diagonal_bound"]), c["sample_density"]))
    if flags:
        reports.extend(
            check_subordination_suite(fld, region, zr, flags, c["sample_density"], exponent=float(c["exponent"]))
        )
    for p in c["nondegeneracy_points"]:
        reports.append(nondegeneracy_report(fld, [float(v) for v in p], float(c["epsilon"]), zr))
    rows = [(r.condition_name, int(r.holds), r.best_constant, r.samples) for r in reports]
    checks = {}
    for i, r in enumerate(reports):
        key = r.condition_name if r.condition_name not in checks else f"{r.condition_name}_{i}"
        checks[key] = r.holds
    return RunResult(
        {"reports": [r.to_dict() for r in reports]},
        {"conditions.csv": _csv(("condition", "holds", "best_constant", "samples"), rows)},
        checks,
    )


def run_oracle(cfg: RunConfig) -> RunResult:
    from .oracle import SharpnessExample, oracle_diagnostics, sharpness_w

    s = cfg.sections
    grid = s["grid"]["_grid"]
    o = s["oracle"]
    ex = SharpnessExample(o["m"])
    rep = oracle_diagnostics(ex, grid, float(o["exclusion_radius"]))
    X, Y = grid.coords
    checks = {
        "energy_bound": rep.energy <= rep.energy_bound,
        "holder_exponent": abs(rep.holder_slope - rep.holder_target) <= float(o["holder_tol"]),
    }
    return RunResult(
        {"results": rep.to_dict()},
        {"oracle.csv": _field_csv(grid, sharpness_w(ex, X, Y))},
        checks,
    )


def run_barrier(cfg: RunConfig) -> RunResult:
    from .barriers import ConcaveMajorant, build_barrier, verify_barrier

    s = cfg.sections
    b = s["barrier"]
    fld = s["family"]["_field"]
    omega = ConcaveMajorant.power(float(b["omega_exponent"]), float(b["omega_coeff"]), float(b["rbar"]))
    bar = build_barrier(omega, float(b["kappa0"]), float(b["m0"]), float(b["K"]), fld, b["search_budget"])
    rep = verify_barrier(bar, fld, float(b["m0"]), float(b["K"]), b["samples"])
    checks = {"barrier": rep.holds, "psi": all(bar.psi_checks().values())}
    return RunResult(
        {"certificate": rep.metadata["certificate"], "report": rep.to_dict(), "psi_checks": bar.psi_checks()},
        {},
        checks,
    )


def convergence_study(m, lows, highs, counts, config):
    """Sup-errors of the continuation solution against the oracle and observed orders."""
    import numpy as np

    from .coefficients import make_builtin_family
    from .grid import StructuredGrid
    from .oracle import SharpnessExample, sharpness_w
    from .solver import viscosity_continuation

    ex = SharpnessExample(m)
    fld = make_builtin_family("sharpness", [m])
    rows = []
    for n in counts:
        grid = StructuredGrid(tuple(lows), tuple(highs), (n, n))
        X, Y = grid.coords
        exact = sharpness_w(ex, X, Y)
        sol = viscosity_continuation(fld, grid, exact, config)[-1]
        err = float(np.abs(sol.values - exact).max())
        rows.append({"count": n, "h": float(grid.spacing[0]), "error": err})
    for a, b in zip(rows, rows[1:]):
        b["order"] = float(math.log(a["error"] / b["error"]) / math.log(a["h"] / b["h"]))
    return rows


def run_convergence(cfg: RunConfig) -> RunResult:
    from .solver import SolverConfig, default_eps_ladder

    s = cfg.sections
    c = s["convergence"]
    config = s["solver"]["_config"]
    if not s["solver"]["_explicit_ladder"]:
        config = SolverConfig(**{**config.to_dict(), "eps_ladder": default_eps_ladder(c["levels"])})
    rows = convergence_study(c["m"], c["lows"], c["highs"], c["counts"], config)
    checks = {
        "max_error": rows[0]["error"] <= float(c["max_error"]),
        "monotone": all(b["error"] < a["error"] for a, b in zip(rows, rows[1:])),
        "order": all(r["order"] >= float(c["min_order"]) for r in rows[1:]),
    }
    table = [(r["count"], r["h"], r["error"], r.get("order", 0.0)) for r in rows]
    return RunResult(
        {"results": {"levels": rows, "eps_final": config.eps_ladder[-1]}},
        {"convergence.csv": _csv(("count", "h", "error", "order"), table)},
        checks,
    )


COMMAND_RUNNERS = {
    "solve": run_solve,
    "check-conditions": run_check_conditions,
    "oracle": run_oracle,
    "barrier": run_barrier,
    "convergence": run_convergence,
}


# ---------------------------------------------------------------------------
# emission


def emit_report(result: RunResult, cfg: RunConfig, out_dir) -> Path:
    """Write manifest and tables; remove anything written if a write fails."""
    out = Path(out_dir)
    created_dir = not out.exists()
    written = []
    manifest = {
        "command": cfg.command,
        "config": cfg.echo,
        "checks": {k: bool(v) for k, v in result.checks.items()},
        "all_checks_hold": all(result.checks.values()),
        "files": {},
    }
    manifest.update(result.manifest)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name in sorted(result.files):
            data = result.files[name].encode("utf-8")
            path = out / name
            with open(path, "wb") as fh:
                written.append(path)
                fh.write(data)
            manifest["files"][name] = hashlib.sha256(data).hexdigest()
        path = out / "manifest.json"
        with open(path, "wb") as fh:
            written.append(path)
            fh.write(dumps_manifest(manifest).encode("utf-8"))
    except (OSError, TypeError, ValueError) as exc:
        for p in written:
            try:
                p.unlink()
            except OSError:
                pass
        if created_dir:
            shutil.rmtree(out, ignore_errors=True)
        raise EmissionError(f"failed to write outputs to {out}: {exc}") from exc
    return out / "manifest.json"


def run_report(out_dir) -> int:
    path = Path(out_dir) / "manifest.json"
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise EmissionError(f"cannot read {path}: {exc}") from exc
    print(f"{manifest.get('command', '?')}: {path}")
    checks = manifest.get("checks", {})
    for name in sorted(checks):
        print(f"  {'PASS' if checks[name] else 'FAIL'}  {name}")
    if not checks:
        print("  (no checks)")
    return 0 if all(checks.values()) else 1


def run(cfg: RunConfig, out_dir) -> tuple[int, RunResult]:
    result = COMMAND_RUNNERS[cfg.command](cfg)
    if out_dir is not None:
        emit_report(result, cfg, out_dir)
    return (0 if all(result.checks.values()) else 1), result


def _set_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="degensolve", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name != "report":
            p.add_argument("--config", required=True, help="TOML or JSON run configuration")
            p.add_argument("--seed", type=int, default=None, help="random seed (u64), overrides the config")
            p.add_argument("--threads", type=int, default=None, help="BLAS thread count")
        p.add_argument("--out", required=(name == "report"), default=None, help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "report":
        try:
            return run_report(args.out)
        except EmissionError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 3
    threads = os.environ.get("DEGENSOLVE_THREADS") or args.threads
    if threads is not None:
        try:
            threads = int(threads)
            if threads < 1:
                raise ValueError
        except ValueError:
            print("error: threads: expected a positive integer", file=sys.stderr)
            return 2
        _set_threads(threads)
    try:
        cfg = parse_config(args.config, command=args.command, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    cfg.threads = threads
    try:
        code, result = run(cfg, args.out)
    except DegenSolveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    for name in sorted(result.checks):
        print(f"{'PASS' if result.checks[name] else 'FAIL'}  {name}")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
