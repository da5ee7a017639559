"""Free-format MPS export and import.

Every column gets an objective entry (possibly 0) so column order survives a
round trip, and every column gets explicit bounds because solvers disagree on
the default upper bound of integer columns.
"""

from __future__ import annotations

import math
import re

from .exceptions import DataError
from .mip import Constraint, MipInstance, Variable, ensure_valid

_ROW_CODE = {"<=": "L", "=": "E", ">=": "G"}
_CODE_ROW = {v: k for k, v in _ROW_CODE.items()}
_NAME_OK = re.compile(r"^\S+$")
OBJ_ROW = "obj"


def _num(v: float) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def export_mps(mip: MipInstance) -> str:
    ensure_valid(mip)
    names = [v.name for v in mip.vars] + [c.name for c in mip.cons]
    for name in names:
        if not name or not _NAME_OK.match(name):
            raise DataError(f"name {name!r} cannot be written to free-format MPS")
    if OBJ_ROW in {c.name for c in mip.cons}:
        raise DataError(f"constraint name {OBJ_ROW!r} is reserved for the objective row")

    col_entries: list[list[tuple[str, float]]] = [[] for _ in mip.vars]
    for con in mip.cons:
        for j, a in con.terms:
            col_entries[j].append((con.name, a))

    out = [f"NAME {mip.name}"]
    out.append("OBJSENSE")
    out.append("    MAX" if mip.sense == "max" else "    MIN")
    out.append("ROWS")
    out.append(f" N {OBJ_ROW}")
    out += [f" {_ROW_CODE[c.sense]} {c.name}" for c in mip.cons]
    out.append("COLUMNS")
    in_int = False
    marker = 0
    for v, entries in zip(mip.vars, col_entries):
        if v.is_integer and not in_int:
            out.append(f"    MARKER{marker} 'MARKER' 'INTORG'")
            marker += 1
            in_int = True
        elif not v.is_integer and in_int:
            out.append(f"    MARKER{marker} 'MARKER' 'INTEND'")
            marker += 1
            in_int = False
        out.append(f"    {v.name} {OBJ_ROW} {_num(v.obj_coeff)}")
        out += [f"    {v.name} {row} {_num(a)}" for row, a in entries]
    if in_int:
        out.append(f"    MARKER{marker} 'MARKER' 'INTEND'")
    out.append("RHS")
    out += [f"    RHS {c.name} {_num(c.rhs)}" for c in mip.cons if c.rhs != 0.0]
    out.append("BOUNDS")
    for v in mip.vars:
        if v.lb == v.ub:
            out.append(f" FX BND {v.name} {_num(v.lb)}")
            continue
        if v.lb == -math.inf and v.ub == math.inf:
            out.append(f" FR BND {v.name}")
            continue
        out.append(f" MI BND {v.name}" if v.lb == -math.inf else f" LO BND {v.name} {_num(v.lb)}")
        out.append(f" PL BND {v.name}" if v.ub == math.inf else f" UP BND {v.name} {_num(v.ub)}")
    out.append("ENDATA")
    return "\n".join(out) + "\n"


def parse_mps(text: str) -> MipInstance:
    """Read free-format MPS (no RANGES, no SOS)."""
    name = "mip"
    sense = "min"
    section = None
    obj_row = None
    row_sense: dict[str, str] = {}
    row_order: list[str] = []
    rhs: dict[str, float] = {}
    col_order: list[str] = []
    cols: dict[str, dict] = {}
    in_int = False

    def col(cname: str) -> dict:
        if cname not in cols:
            cols[cname] = {"obj": 0.0, "terms": {}, "int": in_int, "lb": None, "ub": None}
            col_order.append(cname)
        return cols[cname]

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip()
        if not line.strip() or line.lstrip().startswith("*"):
            continue
        tok = line.split()
        if not raw[0].isspace():
            head = tok[0].upper()
            section = head
            if head == "NAME":
                name = tok[1] if len(tok) > 1 else name
            elif head == "OBJSENSE" and len(tok) > 1:
                sense = _sense(tok[1], lineno)
            elif head == "ENDATA":
                break
            elif head not in ("ROWS", "COLUMNS", "RHS", "BOUNDS", "OBJSENSE"):
                raise DataError(f"line {lineno}: unsupported MPS section {head!r}")
            continue
        try:
            if section == "OBJSENSE":
                sense = _sense(tok[0], lineno)
            elif section == "ROWS":
                code, rname = tok[0].upper(), tok[1]
                if code == "N":
                    if obj_row is None:
                        obj_row = rname
                    continue
                row_sense[rname] = _CODE_ROW[code]
                row_order.append(rname)
            elif section == "COLUMNS":
                if len(tok) >= 3 and tok[1].strip("'").upper() == "MARKER":
                    kind = tok[2].strip("'").upper()
                    in_int = kind == "INTORG"
                    continue
                c = col(tok[0])
                for rname, val in zip(tok[1::2], tok[2::2]):
                    if rname == obj_row:
                        c["obj"] += float(val)
                    elif rname in row_sense:
                        c["terms"][rname] = c["terms"].get(rname, 0.0) + float(val)
                    else:
                        raise DataError(f"line {lineno}: unknown row {rname!r}")
            elif section == "RHS":
                pairs = tok[1:] if len(tok) % 2 == 1 else tok
                for rname, val in zip(pairs[0::2], pairs[1::2]):
                    if rname == obj_row:
                        continue
                    if rname not in row_sense:
                        raise DataError(f"line {lineno}: unknown row {rname!r}")
                    rhs[rname] = float(val)
            elif section == "BOUNDS":
                _apply_bound(tok, cols, lineno)
            else:
                raise DataError(f"line {lineno}: data outside a section")
        except (IndexError, KeyError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"line {lineno}: cannot parse {line.strip()!r}") from exc

    row_pos = {r: k for k, r in enumerate(row_order)}
    terms: list[list[tuple[int, float]]] = [[] for _ in row_order]
    variables = []
    for j, cname in enumerate(col_order):
        c = cols[cname]
        for rname, a in c["terms"].items():
            terms[row_pos[rname]].append((j, a))
        lb = 0.0 if c["lb"] is None else c["lb"]
        ub = math.inf if c["ub"] is None else c["ub"]
        variables.append(Variable(cname, lb, ub, c["int"], c["obj"]))
    cons = [Constraint.build(r, terms[k], row_sense[r], rhs.get(r, 0.0)) for k, r in enumerate(row_order)]
    mip = MipInstance(tuple(variables), tuple(cons), sense, name)
    ensure_valid(mip)
    return mip


def _sense(tok: str, lineno: int) -> str:
    t = tok.upper()
    if t in ("MAX", "MAXIMIZE"):
        return "max"
    if t in ("MIN", "MINIMIZE"):
        return "min"
    raise DataError(f"line {lineno}: unknown OBJSENSE {tok!r}")


def _apply_bound(tok: list[str], cols: dict, lineno: int) -> None:
    kind = tok[0].upper()
    # the bound-set name is optional in free format
    if kind in ("FR", "MI", "PL", "BV"):
        cname = tok[-1] if len(tok) <= 3 else tok[2]
        val = None
    else:
        cname, val = (tok[2], float(tok[3])) if len(tok) >= 4 else (tok[1], float(tok[2]))
    if cname not in cols:
        raise DataError(f"line {lineno}: bound on unknown column {cname!r}")
    c = cols[cname]
    if kind == "UP":
        c["ub"] = val
        if val < 0 and c["lb"] is None:
            c["lb"] = -math.inf
    elif kind == "LO":
        c["lb"] = val
    elif kind == "FX":
        c["lb"] = c["ub"] = val
    elif kind == "FR":
        c["lb"], c["ub"] = -math.inf, math.inf
    elif kind == "MI":
        c["lb"] = -math.inf
    elif kind == "PL":
        c["ub"] = math.inf
    elif kind == "BV":
        c["lb"], c["ub"], c["int"] = 0.0, 1.0, True
    elif kind == "LI":
        c["lb"], c["int"] = val, True
    elif kind == "UI":
        c["ub"], c["int"] = val, True
    else:
        raise DataError(f"line {lineno}: unsupported bound type {kind!r}")
