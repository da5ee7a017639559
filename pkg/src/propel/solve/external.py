"""File-based adapter for MPS-speaking solvers.

The command template must contain ``{input}``, ``{output}`` and ``{time_limit}``
placeholders. The solver is expected to write a solution file made of
``<var_name> <value>`` lines plus an ``=obj= <value>`` line; an optional
``=status= <status>`` line is honoured.
"""

from __future__ import annotations

import math
import shlex
import subprocess
import tempfile
from pathlib import Path

import numpy as np

from ..exceptions import ConfigError, ExternalProcessError, ExternalTimeoutError, SolutionParseError
from ..mip import MipInstance
from ..mps import export_mps
from ._types import MipResult, SolveClock, SolveLimits

_STATUSES = {"optimal", "feasible", "infeasible", "time_limit"}


def format_solution(mip: MipInstance, result: MipResult) -> str:
    lines = [f"=status= {result.status}"]
    if result.has_incumbent:
        lines.append(f"=obj= {result.best_objective!r}")
        lines += [f"{v.name} {float(x)!r}" for v, x in zip(mip.vars, result.best_solution)]
    return "\n".join(lines) + "\n"


def parse_solution(text: str, mip: MipInstance) -> tuple[str | None, float | None, np.ndarray | None]:
    status, obj = None, None
    values: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        tok = raw.split()
        if not tok or tok[0].startswith("#"):
            continue
        if len(tok) != 2:
            raise SolutionParseError(f"solution line {lineno}: expected '<name> <value>', got {raw!r}")
        key, val = tok
        if key == "=status=":
            if val not in _STATUSES:
                raise SolutionParseError(f"solution line {lineno}: unknown status {val!r}")
            status = val
            continue
        try:
            num = float(val)
        except ValueError:
            raise SolutionParseError(f"solution line {lineno}: bad number {val!r}") from None
        if key == "=obj=":
            obj = num
        elif key in mip.var_index:
            values[key] = num
        else:
            raise SolutionParseError(f"solution line {lineno}: unknown variable {key!r}")
    if status == "infeasible":
        return status, None, None
    if obj is None and not values:
        raise SolutionParseError("solution file carries neither an objective nor variable values")
    x = None
    if values:
        x = np.zeros(mip.n_vars)
        for name, v in values.items():
            x[mip.var_index[name]] = v
        if obj is None:
            obj = mip.objective_value(x)
    return status, obj, x


def external_solve(mip: MipInstance, cmd_template: str, lim: SolveLimits | None = None,
                   clock: SolveClock | None = None) -> MipResult:
    lim = lim or SolveLimits()
    for key in ("{input}", "{output}", "{time_limit}"):
        if key not in cmd_template:
            raise ConfigError(f"external solver template lacks the {key} placeholder")
    clock = clock or SolveClock(lim.deterministic_clock)
    text = export_mps(mip)
    with tempfile.TemporaryDirectory(prefix="propel-ext-") as tmp:
        inp = Path(tmp) / "model.mps"
        out = Path(tmp) / "model.sol"
        inp.write_text(text)
        tl = lim.time_limit
        cmd = cmd_template.format(input=shlex.quote(str(inp)), output=shlex.quote(str(out)),
                                  time_limit="1e9" if math.isinf(tl) else repr(float(tl)))
        wall_timeout = None if (math.isinf(tl) or lim.deterministic_clock) else tl + 30.0
        try:
            proc = subprocess.run(shlex.split(cmd), capture_output=True, text=True, timeout=wall_timeout)
        except FileNotFoundError as exc:
            raise ExternalProcessError(f"cannot start external solver: {exc}") from exc
        except subprocess.TimeoutExpired as exc:
            raise ExternalTimeoutError(f"external solver exceeded {wall_timeout:.1f}s") from exc
        if proc.returncode != 0:
            raise ExternalProcessError(
                f"external solver exited with code {proc.returncode}: {proc.stderr.strip()[-500:]}")
        if not out.exists():
            raise SolutionParseError("external solver wrote no solution file")
        status, obj, x = parse_solution(out.read_text(), mip)
    clock.tick()
    now = clock.now()
    if status == "infeasible":
        inf = math.inf if mip.sense == "min" else -math.inf
        return MipResult("infeasible", None, inf, inf, [], 0, now)
    return MipResult(status or "feasible", x, obj, obj if status == "optimal" else
                     (-math.inf if mip.sense == "min" else math.inf),
                     [(now, obj)], 0, now)
