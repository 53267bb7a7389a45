"""Mixed-integer linear program for the pedestrian delay schedule.

The model is built from plain dataclasses so it can be written to, and read
back from, CPLEX LP text, checked row by row against a simulated trace, or
handed to HiGHS through :func:`scipy.optimize.milp`.

Variable naming (J junction, o stage H/V, corners and intervals 1-based)::

    th_J{j}_{o}_k{k}     stage green bit                 binary
    dl_J{j}_{o}_k{k}     first-interval selector         binary
    cap_J{j}_{o}_k{k}    crosswalk capacity              integer
    f_J{j}_{a}to{b}_k{k} pedestrians crossing a -> b     integer
    P_J{j}_c{a}_k{k}     corner volume at interval k     integer
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ped_dynamics import PedScenario, PedTrace, ifloor
from .topology import ALL_RED, HORIZONTAL, N_CORNERS, PARTNER, STAGE_NAMES, STAGES, VERTICAL

KINDS = ("binary", "integer", "continuous")
SENSES = ("<=", ">=", "=")
DEFAULT_EPS = 1e-4
CHECK_TOL = 1e-7


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str = "continuous"
    lb: float = 0.0
    ub: float = math.inf


@dataclass(frozen=True)
class Constraint:
    name: str
    terms: tuple  # ((var_name, coef), ...)
    sense: str
    rhs: float

    @property
    def family(self) -> str:
        return self.name.split("_", 1)[0]


@dataclass
class MilpModel:
    variables: list = field(default_factory=list)
    constraints: list = field(default_factory=list)
    objective: tuple = ()
    sense: str = "min"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self._index = {v.name: i for i, v in enumerate(self.variables)}

    def add_var(self, name: str, kind: str, lb: float = 0.0, ub: float = math.inf) -> str:
        if kind not in KINDS:
            raise ValueError(f"unknown variable kind {kind!r}")
        if name in self._index:
            raise ValueError(f"duplicate variable {name}")
        self._index[name] = len(self.variables)
        self.variables.append(Variable(name, kind, float(lb), float(ub)))
        return name

    def add_row(self, name: str, terms, sense: str, rhs: float):
        if sense not in SENSES:
            raise ValueError(f"unknown sense {sense!r}")
        merged: dict[str, float] = {}
        for var, coef in terms:
            if var not in self._index:
                raise KeyError(f"constraint {name} references undeclared variable {var}")
            merged[var] = merged.get(var, 0.0) + float(coef)
        self.constraints.append(Constraint(name, tuple(merged.items()), sense, float(rhs)))

    def index(self, name: str) -> int:
        return self._index[name]

    def counts(self) -> dict:
        kinds = {k: 0 for k in KINDS}
        for v in self.variables:
            kinds[v.kind] += 1
        return {"variables": len(self.variables), "constraints": len(self.constraints), **kinds}

    def same_as(self, other: "MilpModel") -> bool:
        return (self.variables == other.variables and self.constraints == other.constraints
                and tuple(self.objective) == tuple(other.objective) and self.sense == other.sense)


def _o(o: int) -> str:
    return STAGE_NAMES[o]


def var_theta(j, o, k):
    return f"th_J{j}_{_o(o)}_k{k}"


def var_delta(j, o, k):
    return f"dl_J{j}_{_o(o)}_k{k}"


def var_cap(j, o, k):
    return f"cap_J{j}_{_o(o)}_k{k}"


def var_flow(j, a, b, k):
    return f"f_J{j}_{a + 1}to{b + 1}_k{k}"


def var_floor(j, o, a, k):
    return f"u_J{j}_{_o(o)}_{a + 1}_k{k}"


def var_pick(j, o, a, k):
    return f"z_J{j}_{_o(o)}_{a + 1}_k{k}"


def var_vol(j, a, k):
    return f"P_J{j}_c{a + 1}_k{k}"


def big_m(scenario: PedScenario, steps: int) -> tuple[float, float]:
    """(M, M1): flow gate bound and capacity-selection bound for this instance."""
    first, cont = scenario.capacities()
    demand = int(scenario.initial_volume.sum(axis=1).max() +
                 scenario.arrivals[:, :steps].sum(axis=(1, 2)).max())
    m = float(demand + cont)
    n = scenario.geometry.rate
    m1 = float(max(steps, math.ceil(n * scenario.delta)) + 1)
    return m, m1


def build_milp(scenario: PedScenario, steps: int | None = None, eps: float = DEFAULT_EPS,
               min_rule: bool = False) -> MilpModel:
    """MILP for the delay-optimal schedule over ``steps`` intervals.

    The flow rows only bound each crossing from above, so a solver may hold
    pedestrians back. ``min_rule=True`` adds a floor variable ``u`` and a
    selector ``z`` per stream forcing a green flow up to min(capacity, u),
    which makes the optimum coincide with the simulator's.
    """
    n_steps = scenario.intervals if steps is None else steps
    if n_steps > scenario.intervals:
        raise ValueError("scenario too short for the requested horizon")
    geo, delta = scenario.geometry, scenario.delta
    first, cont = scenario.capacities()  # also rejects delta <= startup + walk time
    n = geo.rate
    usable = delta - geo.startup - geo.walk_time
    m, m1 = big_m(scenario, n_steps)
    model = MilpModel(metadata={"M": m, "M1": m1, "eps": eps, "delta": delta, "steps": n_steps})
    ratios = scenario.ratios()

    for j in range(scenario.n_junctions):
        for k in range(1, n_steps + 1):
            for o in STAGES:
                model.add_var(var_theta(j, o, k), "binary", 0, 1)
            for o in STAGES:
                model.add_var(var_delta(j, o, k), "binary", 0, 1)
            for o in STAGES:
                model.add_var(var_cap(j, o, k), "integer", 0, math.ceil(n * delta))
            for o in STAGES:
                for a in range(N_CORNERS):
                    model.add_var(var_flow(j, a, PARTNER[o, a], k), "integer", 0, math.inf)
            if min_rule:
                for o in STAGES:
                    for a in range(N_CORNERS):
                        model.add_var(var_floor(j, o, a, k), "integer", 0, math.inf)
                        model.add_var(var_pick(j, o, a, k), "binary", 0, 1)
            for a in range(N_CORNERS):
                if k == 1:
                    p0 = int(scenario.initial_volume[j, a])
                    model.add_var(var_vol(j, a, k), "integer", p0, p0)
                else:
                    model.add_var(var_vol(j, a, k), "integer", 0, math.inf)

    obj: dict[str, float] = {}
    for j in range(scenario.n_junctions):
        hist = int(scenario.history[j])
        for k in range(1, n_steps + 1):
            ks = k - 1
            model.add_row(f"stage_J{j}_k{k}", [(var_theta(j, o, k), 1) for o in STAGES], "=", 1)
            for o in STAGES:
                for a in range(N_CORNERS):
                    model.add_row(f"gate_J{j}_{_o(o)}_{a + 1}_k{k}",
                                  [(var_flow(j, a, PARTNER[o, a], k), 1), (var_theta(j, o, k), -m)], "<=", 0)
            # capacity selection
            for o in STAGES:
                dl, cap = var_delta(j, o, k), var_cap(j, o, k)
                tag = f"J{j}_{_o(o)}_k{k}"
                model.add_row(f"dsela_{tag}", [(dl, m1)], "<=", m1 + k - 1)
                model.add_row(f"dselb_{tag}", [(dl, m1)], "<=", m1 - k + 1)
                model.add_row(f"capfu_{tag}", [(cap, 1), (dl, m1)], "<=", m1 + n * usable)
                model.add_row(f"capfl_{tag}", [(cap, -1), (dl, m1)], "<=", m1 - eps - n * usable + 1)
                if k == 1:
                    prev = 1.0 if hist == o else 0.0
                    model.add_row(f"capru_{tag}", [(cap, 1)], "<=", n * usable + m1 * prev)
                    model.add_row(f"caprl_{tag}", [(cap, -1)], "<=", m1 * prev - eps - n * usable + 1)
                    model.add_row(f"capgu_{tag}", [(cap, 1)], "<=", m1 * (1 - prev) + n * delta)
                    model.add_row(f"capgl_{tag}", [(cap, -1)], "<=", m1 * (1 - prev) - eps - n * delta + 1)
                else:
                    th = var_theta(j, o, k - 1)
                    model.add_row(f"capru_{tag}", [(cap, 1), (th, -m1)], "<=", n * usable)
                    model.add_row(f"caprl_{tag}", [(cap, -1), (th, -m1)], "<=", -eps - n * usable + 1)
                    model.add_row(f"capgu_{tag}", [(cap, 1), (th, m1)], "<=", m1 + n * delta)
                    model.add_row(f"capgl_{tag}", [(cap, -1), (th, m1)], "<=", m1 - eps - n * delta + 1)
            # hopping bounds
            for o in STAGES:
                for a in range(N_CORNERS):
                    f = var_flow(j, a, PARTNER[o, a], k)
                    model.add_row(f"flowcap_J{j}_{_o(o)}_{a + 1}_k{k}", [(f, 1), (var_cap(j, o, k), -1)], "<=", 0)
                    model.add_row(f"flowdem_J{j}_{_o(o)}_{a + 1}_k{k}",
                                  [(f, 1), (var_vol(j, a, k), -ratios[j, ks, o, a])], "<=", 0)
                    if min_rule:
                        tag = f"J{j}_{_o(o)}_{a + 1}_k{k}"
                        u, z, th = var_floor(j, o, a, k), var_pick(j, o, a, k), var_theta(j, o, k)
                        eta = ratios[j, ks, o, a]
                        model.add_row(f"floorhi_{tag}", [(u, 1), (var_vol(j, a, k), -eta)], "<=", 0)
                        model.add_row(f"floorlo_{tag}", [(u, 1), (var_vol(j, a, k), -eta)], ">=", -1 + eps)
                        model.add_row(f"satcap_{tag}", [(f, 1), (var_cap(j, o, k), -1), (z, -m), (th, -m)],
                                      ">=", -2 * m)
                        model.add_row(f"satdem_{tag}", [(f, 1), (u, -1), (z, m), (th, -m)], ">=", -m)
            # volume dynamics; floor applies to the departing share of the inflow
            if k < n_steps:
                for a in range(N_CORNERS):
                    g = float(scenario.gamma[j, ks, a])
                    arr = float(scenario.arrivals[j, ks, a])
                    terms = [(var_vol(j, a, k + 1), 1), (var_vol(j, a, k), -1)]
                    terms += [(var_flow(j, a, PARTNER[o, a], k), 1) for o in STAGES]
                    terms += [(var_flow(j, PARTNER[o, a], a, k), -(1 - g)) for o in STAGES]
                    model.add_row(f"dynlo_J{j}_{a + 1}_k{k}", terms, ">=", arr)
                    model.add_row(f"dynhi_J{j}_{a + 1}_k{k}", terms, "<=", arr + 1 - eps)
            for a in range(N_CORNERS):
                obj[var_vol(j, a, k)] = obj.get(var_vol(j, a, k), 0.0) + delta
                for o in STAGES:
                    f = var_flow(j, a, PARTNER[o, a], k)
                    obj[f] = obj.get(f, 0.0) - delta
    model.objective = tuple(obj.items())
    return model


# -- trace checking ---------------------------------------------------------

@dataclass
class Violation:
    name: str
    family: str
    lhs: float
    sense: str
    rhs: float

    @property
    def excess(self) -> float:
        if self.sense == "<=":
            return self.lhs - self.rhs
        if self.sense == ">=":
            return self.rhs - self.lhs
        return abs(self.lhs - self.rhs)


@dataclass
class CheckReport:
    rows_checked: int
    violations: list
    bound_violations: list

    @property
    def ok(self) -> bool:
        return not self.violations and not self.bound_violations

    @property
    def families(self) -> set:
        return {v.family for v in self.violations}

    def to_dict(self) -> dict:
        return {
            "rows_checked": self.rows_checked,
            "ok": self.ok,
            "violations": [{"name": v.name, "family": v.family, "lhs": v.lhs, "sense": v.sense,
                            "rhs": v.rhs, "excess": v.excess} for v in self.violations],
            "bound_violations": self.bound_violations,
        }


def theta_from_schedule(schedule) -> np.ndarray:
    """Green bits of shape (J, N, 2) from a stage schedule."""
    s = np.asarray(schedule)
    return np.stack([(s == o) for o in STAGES], axis=-1).astype(np.int64)


def trace_assignment(trace: PedTrace, history=None, theta=None) -> dict:
    """Variable values implied by a simulated trace."""
    theta = theta_from_schedule(trace.schedule) if theta is None else np.asarray(theta)
    n_j, n = trace.schedule.shape
    hist = np.full(n_j, ALL_RED) if history is None else np.asarray(history)
    values: dict[str, float] = {}
    for j in range(n_j):
        for k in range(1, n + 1):
            ks = k - 1
            for o in STAGES:
                values[var_theta(j, o, k)] = float(theta[j, ks, o])
                values[var_delta(j, o, k)] = 1.0 if (k == 1 and hist[j] != o) else 0.0
                values[var_cap(j, o, k)] = float(trace.capacities[j, ks, o])
                for a in range(N_CORNERS):
                    b = PARTNER[o, a]
                    green = trace.schedule[j, ks] == o
                    values[var_flow(j, a, b, k)] = float(trace.out[j, ks, a]) if green else 0.0
                    u = ifloor(trace.volumes[j, ks, a] * trace.ratios[j, ks, o, a])
                    values[var_floor(j, o, a, k)] = float(u)
                    values[var_pick(j, o, a, k)] = 1.0 if trace.capacities[j, ks, o] <= u else 0.0
            for a in range(N_CORNERS):
                values[var_vol(j, a, k)] = float(trace.volumes[j, ks, a])
    return values


def evaluate_rows(model: MilpModel, values: dict, tol: float = CHECK_TOL) -> CheckReport:
    """Row and bound check of an assignment; values for undeclared names are ignored."""
    violations = []
    for row in model.constraints:
        lhs = sum(coef * values[var] for var, coef in row.terms)
        if row.sense == "<=":
            bad = lhs > row.rhs + tol
        elif row.sense == ">=":
            bad = lhs < row.rhs - tol
        else:
            bad = abs(lhs - row.rhs) > tol
        if bad:
            violations.append(Violation(row.name, row.family, lhs, row.sense, row.rhs))
    bounds = []
    for v in model.variables:
        x = values.get(v.name)
        if x is None:
            bounds.append({"name": v.name, "problem": "unassigned"})
        elif x < v.lb - tol or x > v.ub + tol:
            bounds.append({"name": v.name, "problem": f"value {x} outside [{v.lb}, {v.ub}]"})
        elif v.kind != "continuous" and abs(x - round(x)) > tol:
            bounds.append({"name": v.name, "problem": f"value {x} not integral"})
    return CheckReport(len(model.constraints), violations, bounds)


def check_trace(model: MilpModel, trace: PedTrace, history=None, theta=None) -> CheckReport:
    """Evaluate every row of ``model`` at the assignment implied by ``trace``.

    ``theta`` (shape (J, N, 2)) overrides the green bits derived from the
    trace's schedule, which lets callers test stage-rule faults.
    """
    return evaluate_rows(model, trace_assignment(trace, history, theta))


# -- LP text format ---------------------------------------------------------

_WRAP = 8


def _num(x: float) -> str:
    x = float(x)
    if math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _terms(terms) -> list[str]:
    out = []
    for var, coef in terms:
        sign = "-" if coef < 0 else "+"
        out.append(f"{sign} {_num(abs(coef))} {var}")
    return out


def _wrapped(head: str, tokens: list[str], tail: str = "") -> list[str]:
    lines = []
    chunk = [head]
    for i, tok in enumerate(tokens):
        chunk.append(tok)
        if (i + 1) % _WRAP == 0 and i + 1 < len(tokens):
            lines.append(" ".join(chunk))
            chunk = ["  "]
    if tail:
        chunk.append(tail)
    lines.append(" ".join(chunk))
    return lines


def lp_text(model: MilpModel) -> str:
    lines = ["\\ mixedflow pedestrian schedule MILP"]
    for key in sorted(model.metadata):
        lines.append(f"\\ meta {key} = {_num(model.metadata[key])}")
    lines.append("Minimize" if model.sense == "min" else "Maximize")
    lines += _wrapped(" obj:", _terms(model.objective))
    lines.append("Subject To")
    for row in model.constraints:
        lines += _wrapped(f" {row.name}:", _terms(row.terms), f"{row.sense} {_num(row.rhs)}")
    lines.append("Bounds")
    for v in model.variables:
        if v.lb == v.ub:
            lines.append(f" {v.name} = {_num(v.lb)}")
        elif math.isinf(v.lb) and math.isinf(v.ub):
            lines.append(f" {v.name} free")
        elif math.isinf(v.ub):
            lines.append(f" {v.name} >= {_num(v.lb)}")
        else:
            lines.append(f" {_num(v.lb)} <= {v.name} <= {_num(v.ub)}")
    lines.append("Binary")
    lines += [f" {v.name}" for v in model.variables if v.kind == "binary"]
    lines.append("General")
    lines += [f" {v.name}" for v in model.variables if v.kind == "integer"]
    lines.append("End")
    return "\n".join(lines) + "\n"


def export_lp(model: MilpModel, path) -> Path:
    path = Path(path)
    try:
        path.write_text(lp_text(model))
    except OSError as exc:
        raise OSError(f"cannot write LP file {path}: {exc}") from exc
    return path


_SECTIONS = {"minimize": "obj", "maximize": "obj", "subject to": "rows", "bounds": "bounds",
             "binary": "binary", "binaries": "binary", "general": "general", "generals": "general",
             "end": "end"}


def _parse_num(tok: str) -> float:
    t = tok.lower()
    if t in ("inf", "+inf", "infinity", "+infinity"):
        return math.inf
    if t in ("-inf", "-infinity"):
        return -math.inf
    return float(tok)


def _parse_expr(text: str) -> tuple:
    toks = text.split()
    terms = []
    i = 0
    while i < len(toks):
        sign = -1.0 if toks[i] == "-" else 1.0
        if toks[i] in "+-":
            i += 1
        coef = 1.0
        try:
            coef = float(toks[i])
            i += 1
        except ValueError:
            pass
        terms.append((toks[i], sign * coef))
        i += 1
    return tuple(terms)


def parse_lp(text: str) -> MilpModel:
    """Read LP text written by :func:`lp_text` (a CPLEX LP subset)."""
    section = None
    sense = "min"
    metadata = {}
    statements: dict[str, list] = {"obj": [], "rows": [], "bounds": [], "binary": [], "general": []}
    for raw in text.splitlines():
        if raw.startswith("\\"):
            m = re.match(r"\\ meta (\S+) = (\S+)", raw)
            if m:
                metadata[m.group(1)] = _parse_num(m.group(2))
            continue
        line = raw.strip()
        key = line.lower()
        if key in _SECTIONS:
            section = _SECTIONS[key]
            if key == "maximize":
                sense = "max"
            continue
        if not line or section in (None, "end"):
            continue
        if section in ("obj", "rows"):
            if ":" in line:
                statements[section].append(line)
            elif statements[section]:
                statements[section][-1] += " " + line
            else:
                raise ValueError(f"LP parse error near {line!r}")
        else:
            statements[section].append(line)

    obj_terms = ()
    if statements["obj"]:
        obj_terms = _parse_expr(statements["obj"][0].split(":", 1)[1])

    variables: list[Variable] = []
    seen = {}
    for line in statements["bounds"]:
        toks = line.split()
        if len(toks) == 2 and toks[1].lower() == "free":
            name, lb, ub = toks[0], -math.inf, math.inf
        elif len(toks) == 3 and toks[1] == "=":
            name, lb = toks[0], _parse_num(toks[2])
            ub = lb
        elif len(toks) == 3 and toks[1] == ">=":
            name, lb, ub = toks[0], _parse_num(toks[2]), math.inf
        elif len(toks) == 3 and toks[1] == "<=":
            name, lb, ub = toks[0], 0.0, _parse_num(toks[2])
        elif len(toks) == 5 and toks[1] == "<=" and toks[3] == "<=":
            name, lb, ub = toks[2], _parse_num(toks[0]), _parse_num(toks[4])
        else:
            raise ValueError(f"unsupported bound line {line!r}")
        seen[name] = len(variables)
        variables.append(Variable(name, "continuous", lb, ub))
    for kind, sect in (("binary", "binary"), ("integer", "general")):
        for line in statements[sect]:
            for name in line.split():
                if name not in seen:
                    seen[name] = len(variables)
                    variables.append(Variable(name, kind, 0.0, 1.0 if kind == "binary" else math.inf))
                else:
                    v = variables[seen[name]]
                    variables[seen[name]] = Variable(name, kind, v.lb, v.ub)

    model = MilpModel(variables=variables, sense=sense, metadata=metadata)
    for stmt in statements["rows"]:
        name, body = stmt.split(":", 1)
        m = re.match(r"(.*?)(<=|>=|=)\s*(\S+)\s*$", body)
        if not m:
            raise ValueError(f"constraint {name} has no sense/rhs")
        model.add_row(name.strip(), _parse_expr(m.group(1)), m.group(2), _parse_num(m.group(3)))
    for var, _ in obj_terms:
        if var not in model._index:
            raise KeyError(f"objective references undeclared variable {var}")
    model.objective = obj_terms
    return model


def read_lp(path) -> MilpModel:
    return parse_lp(Path(path).read_text())


# -- HiGHS bridge -----------------------------------------------------------

@dataclass
class MilpSolution:
    status: int
    message: str
    objective: float | None
    values: dict


def _compiled_rows(model: MilpModel) -> list:
    """Sparse constraint block for HiGHS, cached on the model until rows change."""
    from scipy.optimize import LinearConstraint
    from scipy.sparse import coo_matrix

    key = (len(model.variables), len(model.constraints))
    cached = getattr(model, "_rows_cache", None)
    if cached is not None and cached[0] == key:
        return cached[1]
    rows, cols, data = [], [], []
    lo = np.empty(len(model.constraints))
    hi = np.empty(len(model.constraints))
    for r, row in enumerate(model.constraints):
        for var, coef in row.terms:
            rows.append(r)
            cols.append(model.index(var))
            data.append(coef)
        lo[r] = -np.inf if row.sense == "<=" else row.rhs
        hi[r] = np.inf if row.sense == ">=" else row.rhs
    block = []
    if model.constraints:
        a = coo_matrix((data, (rows, cols)), shape=(len(model.constraints), len(model.variables))).tocsr()
        block = [LinearConstraint(a, lo, hi)]
    model._rows_cache = (key, block)
    return block


def solve_highs(model: MilpModel, fixed: dict | None = None, objective: dict | None = None,
                sense: str | None = None, time_limit: float | None = None,
                presolve: bool = False) -> MilpSolution:
    """Solve ``model`` with HiGHS; ``fixed`` pins variables, ``objective`` replaces the cost row.

    Presolve is off by default: on the thin epsilon bands of the dynamics rows
    it has been seen to cut off the true optimum while still reporting
    optimality.
    """
    from scipy.optimize import Bounds, milp

    n = len(model.variables)
    obj = dict(model.objective) if objective is None else objective
    sense = model.sense if sense is None else sense
    c = np.zeros(n)
    for var, coef in obj.items():
        c[model.index(var)] = coef
    if sense == "max":
        c = -c
    lb = np.array([v.lb for v in model.variables])
    ub = np.array([v.ub for v in model.variables])
    for var, val in (fixed or {}).items():
        lb[model.index(var)] = ub[model.index(var)] = val
    integrality = np.array([0 if v.kind == "continuous" else 1 for v in model.variables])
    constraints = _compiled_rows(model)
    options = {"mip_rel_gap": 0.0, "presolve": presolve}
    if time_limit is not None:
        options["time_limit"] = time_limit
    res = milp(c, constraints=constraints, integrality=integrality, bounds=Bounds(lb, ub), options=options)
    values = {}
    value = None
    if res.x is not None:
        values = {v.name: float(x) for v, x in zip(model.variables, res.x)}
        value = float(res.fun) if sense == "min" else -float(res.fun)
    return MilpSolution(res.status, res.message, value, values)


def flows_from_solution(solution: MilpSolution, n_junctions: int, steps: int, schedule) -> np.ndarray:
    """Out-count per corner (J, N, 4) read off a solution, using the green stage of ``schedule``."""
    out = np.zeros((n_junctions, steps, N_CORNERS), dtype=np.int64)
    for j in range(n_junctions):
        for k in range(1, steps + 1):
            o = int(schedule[j][k - 1])
            for a in range(N_CORNERS):
                out[j, k - 1, a] = round(solution.values[var_flow(j, a, PARTNER[o, a], k)])
    return out


def schedule_from_solution(solution: MilpSolution, n_junctions: int, steps: int) -> np.ndarray:
    s = np.zeros((n_junctions, steps), dtype=np.int64)
    for j in range(n_junctions):
        for k in range(1, steps + 1):
            s[j, k - 1] = HORIZONTAL if round(solution.values[var_theta(j, HORIZONTAL, k)]) == 1 else VERTICAL
    return s


_INTERVAL = re.compile(r"_k(\d+)$")


def interval_of(name: str) -> int:
    m = _INTERVAL.search(name)
    return int(m.group(1)) if m else 0


def truncate(model: MilpModel, steps: int) -> MilpModel:
    """Sub-model over intervals 1..steps: later variables and any row touching them are dropped."""
    keep = [v for v in model.variables if interval_of(v.name) <= steps]
    sub = MilpModel(variables=keep, sense=model.sense, metadata={**model.metadata, "steps": steps})
    sub.constraints = [r for r in model.constraints if all(v in sub._index for v, _ in r.terms)]
    sub.objective = tuple((v, c) for v, c in model.objective if v in sub._index)
    return sub


def fixed_schedule_flows(model: MilpModel, schedule) -> np.ndarray:
    """Pin the green bits to ``schedule`` and maximise served flow; return out-counts (J, N, 4).

    Flow is maximised interval by interval, each interval's optimum fixed
    before the next one is solved. Once the earlier flows are fixed the
    volumes at k are fixed too, so each crossing independently reaches its
    upper bound min(capacity, floor(eta * P)). A single total over the whole
    horizon is not enough: holding pedestrians back can allow more crossings
    later.
    """
    s = np.asarray(schedule, dtype=np.int64)
    n_j, n = s.shape
    fixed = {}
    for j in range(n_j):
        for k in range(1, n + 1):
            for o in STAGES:
                fixed[var_theta(j, o, k)] = 1.0 if s[j, k - 1] == o else 0.0
    for k in range(1, n + 1):
        obj = {var_flow(j, a, PARTNER[o, a], k): 1.0
               for j in range(n_j) for o in STAGES for a in range(N_CORNERS)}
        prefix = truncate(model, k)
        sol = solve_highs(prefix, fixed={v: x for v, x in fixed.items() if v in prefix._index},
                          objective=obj, sense="max")
        if sol.objective is None:
            raise RuntimeError(f"fixed-schedule flow problem not solved at interval {k}: {sol.message}")
        for name in obj:
            fixed[name] = float(round(sol.values[name]))
    return flows_from_solution(MilpSolution(0, "", None, fixed), n_j, n, s)
