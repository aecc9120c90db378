"""Batch front end: scenario configs in, trajectories and reports out.

Config files are flat key/value text grouped in [sections], with full-line
comments starting with '#'.  Particle indices in configs and file headers are
1-based.  Emitted trajectories use 17-significant-digit decimals, so reading
a file back reproduces the arrays bit for bit.

Exit codes: 0 success, 2 config or validation error, 3 solver did not
converge (reports are still written), 4 numerical singularity.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .chain_model import (
    ChainParams,
    ForcingSpec,
    QuadraticForce,
    SampledSignal,
    Sinusoid,
)
from .dual_action import (
    BaseState,
    DualField,
    ProblemSpec,
    ScaleParams,
    SingularStiffnessError,
    base_from_primal,
    perturb_base,
    zero_base,
)
from .dual_solver import (
    SingularSystemError,
    SolveOptions,
    recover_primal,
    solve_dual,
    verify,
)
from .periodic_search import PeriodicSpec, recover_periodic_orbit, solve_periodic
from .primal_solver import (
    IntegrationBlowUpError,
    TimeGrid,
    Trajectory,
    integrate_primal,
)

__all__ = [
    "ConfigError",
    "RunReport",
    "ScenarioConfig",
    "load_config",
    "main",
    "parse_report",
    "read_dual_field",
    "read_trajectory",
    "run_one",
    "scenario_presets",
    "write_dual_field",
    "write_trajectory",
]

MODES = ("simulate", "dual-solve", "periodic", "verify")

_KNOWN_KEYS = {
    "run": {"mode", "seed", "method"},
    "chain": {"n", "m", "d", "C", "A", "B"},
    "forcing": {"sinusoid", "constant", "table"},
    "grid": {"T", "M"},
    "initial": {"x0", "v0"},
    "scales": {"c_x", "c_v"},
    "base": {"kind", "refine", "amplitude", "settle_periods", "path"},
    "solver": {"max_iterations", "tolerance", "step_control"},
    "output": {"prefix"},
}
_REPEATABLE = {
    ("chain", "C"),
    ("chain", "A"),
    ("chain", "B"),
    ("forcing", "sinusoid"),
    ("forcing", "constant"),
    ("forcing", "table"),
    ("initial", "x0"),
    ("initial", "v0"),
}
_BASE_KINDS = ("zero", "primal", "perturbed-primal", "settled-primal", "trajectory")


class ConfigError(ValueError):
    """Malformed or invalid scenario configuration."""


def _parse_entries(text: str, origin: str) -> dict:
    entries: dict[tuple[str, str], list[str]] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        where = f"{origin}:{lineno}"
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _KNOWN_KEYS:
                raise ConfigError(f"{where}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {line!r}")
        if section is None:
            raise ConfigError(f"{where}: key outside any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KNOWN_KEYS[section]:
            raise ConfigError(f"{where}: unknown key {section}.{key}")
        slot = (section, key)
        if slot in entries and slot not in _REPEATABLE:
            raise ConfigError(f"{where}: duplicate key {section}.{key}")
        entries.setdefault(slot, []).append(value)
    return entries


def _apply_set(entries: dict, assignment: str) -> None:
    if "=" not in assignment or "." not in assignment.split("=", 1)[0]:
        raise ConfigError(f"--set needs SECTION.KEY=VALUE, got {assignment!r}")
    target, value = assignment.split("=", 1)
    section, key = (part.strip() for part in target.split(".", 1))
    if section not in _KNOWN_KEYS or key not in _KNOWN_KEYS[section]:
        raise ConfigError(f"--set names unknown key {section}.{key}")
    entries[(section, key)] = [value.strip()]


def _take(entries: dict, section: str, key: str) -> list[str] | None:
    return entries.pop((section, key), None)


def _one(values: list[str] | None, default: str | None = None) -> str | None:
    return values[0] if values else default


def _to_int(text: str, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{what} must be an integer, got {text!r}") from None


def _to_float(text: str, what: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{what} must be a number, got {text!r}") from None


def _to_floats(values: list[str], what: str) -> np.ndarray:
    out = []
    for chunk in values:
        for token in chunk.split():
            out.append(_to_float(token, what))
    return np.array(out)


@dataclass(frozen=True)
class ScenarioConfig:
    """Typed scenario description resolved from one config file."""

    name: str
    config_dir: Path
    mode: str
    seed: int
    method: str
    n: int
    m: float
    d: float
    C: np.ndarray
    A: np.ndarray
    B_entries: tuple
    sinusoids: tuple
    tables: tuple
    T: float
    M: int
    x0: np.ndarray | None
    v0: np.ndarray | None
    c_x: float
    c_v: float
    base_kind: str
    base_refine: int
    base_amplitude: float
    base_settle: int
    base_path: Path | None
    max_iterations: int
    tolerance: float
    step_control: str
    prefix: str

    def chain_params(self) -> ChainParams:
        B = None
        if self.B_entries:
            B = np.zeros((self.n, self.n, self.n))
            for j, r, s, value in self.B_entries:
                B[j, r, s] = value
                B[j, s, r] = value
        force = QuadraticForce(n=self.n, A=self.A, B=B, C=self.C)
        sinusoids = [(j, s) for j, s in self.sinusoids]
        tables = []
        for j, path in self.tables:
            data = np.loadtxt(path, ndmin=2)
            if data.shape[1] != 2:
                raise ConfigError(f"forcing table {path} needs two columns (t, value)")
            tables.append((j, SampledSignal(data[:, 0], data[:, 1])))
        forcing = ForcingSpec(n=self.n, sinusoids=sinusoids, tables=tables)
        return ChainParams(m=self.m, d=self.d, force=force, forcing=forcing)

    def grid(self) -> TimeGrid:
        return TimeGrid(T=self.T, M=self.M)

    def solver_options(self) -> SolveOptions:
        return SolveOptions(max_iterations=self.max_iterations,
                            tolerance=self.tolerance,
                            step_control=self.step_control)

    def base(self, params: ChainParams, grid: TimeGrid) -> BaseState:
        kind = self.base_kind
        if kind == "zero":
            return zero_base(grid, self.n)
        if kind in ("primal", "perturbed-primal"):
            if self.x0 is None or self.v0 is None:
                raise ConfigError(f"base kind {kind} needs [initial] x0 and v0")
            base = base_from_primal(params, self.x0, self.v0, grid,
                                    refine=self.base_refine)
            if kind == "perturbed-primal":
                base = perturb_base(base, self.base_amplitude, seed=self.seed)
            return base
        if kind == "settled-primal":
            return self._settled_base(params, grid)
        if kind == "trajectory":
            if self.base_path is None:
                raise ConfigError("base kind trajectory needs base.path")
            traj = read_trajectory(self.base_path)
            if traj.grid != grid or traj.x.shape[1] != self.n:
                raise ConfigError(
                    f"base trajectory {self.base_path} does not match the run grid")
            return BaseState(grid, traj.x, traj.v)
        raise ConfigError(f"unknown base kind {kind!r}")

    def _settled_base(self, params: ChainParams, grid: TimeGrid) -> BaseState:
        # integrate through settle_periods copies of the span on a refined
        # grid, keep the last copy, and close it up for the cyclic problem
        x0 = self.x0 if self.x0 is not None else np.zeros(self.n)
        v0 = self.v0 if self.v0 is not None else np.zeros(self.n)
        k, r = self.base_settle, self.base_refine
        long_grid = TimeGrid(T=k * grid.T, M=k * grid.M * r)
        traj = integrate_primal(params, x0, v0, long_grid, method=self.method)
        start = (k - 1) * grid.M * r
        xb = traj.x[start::r][:grid.M + 1].copy()
        vb = traj.v[start::r][:grid.M + 1].copy()
        xb[-1], vb[-1] = xb[0], vb[0]
        if r % 2 == 0:
            xm = traj.x[start + r // 2::r][:grid.M]
            vm = traj.v[start + r // 2::r][:grid.M]
        else:
            lo = start + np.arange(grid.M) * r + r // 2
            xm = 0.5 * (traj.x[lo] + traj.x[lo + 1])
            vm = 0.5 * (traj.v[lo] + traj.v[lo + 1])
        return BaseState(grid, xb, vb, xm, vm)

    def problem(self) -> ProblemSpec:
        if self.x0 is None or self.v0 is None:
            raise ConfigError(f"mode {self.mode} needs [initial] x0 and v0")
        params = self.chain_params()
        grid = self.grid()
        return ProblemSpec(params=params, scales=ScaleParams(self.c_x, self.c_v),
                           base=self.base(params, grid), grid=grid,
                           x0=self.x0, v0=self.v0)

    def periodic_problem(self) -> PeriodicSpec:
        params = self.chain_params()
        grid = self.grid()
        return PeriodicSpec(params=params, scales=ScaleParams(self.c_x, self.c_v),
                            base=self.base(params, grid), grid=grid)

    def semantic_hash(self) -> str:
        """Digest of every field that changes the computation.

        Output naming is excluded; forcing tables and trajectory bases hash
        by file content, not path.
        """
        def arr(a):
            return "none" if a is None else ",".join(repr(float(v)) for v in np.ravel(a))

        def digest(path):
            return hashlib.sha256(Path(path).read_bytes()).hexdigest()

        parts = [
            f"mode={self.mode}", f"seed={self.seed}", f"method={self.method}",
            f"n={self.n}", f"m={self.m!r}", f"d={self.d!r}",
            f"C={arr(self.C)}", f"A={arr(self.A)}",
            "B=" + ";".join(f"{j},{r},{s},{v!r}"
                            for j, r, s, v in sorted(self.B_entries)),
            "sin=" + ";".join(f"{j},{s.amplitude!r},{s.omega!r},{s.phase!r}"
                              for j, s in self.sinusoids),
            "tab=" + ";".join(f"{j},{digest(p)}" for j, p in self.tables),
            f"T={self.T!r}", f"M={self.M}",
            f"x0={arr(self.x0)}", f"v0={arr(self.v0)}",
            f"c_x={self.c_x!r}", f"c_v={self.c_v!r}",
            f"base={self.base_kind},{self.base_refine},{self.base_amplitude!r},"
            f"{self.base_settle}",
            "base_file=" + (digest(self.base_path) if self.base_path else "none"),
            f"solver={self.max_iterations},{self.tolerance!r},{self.step_control}",
        ]
        return hashlib.sha256("\n".join(parts).encode()).hexdigest()[:16]


def load_config(path, sets=(), mode: str | None = None) -> ScenarioConfig:
    """Parse one scenario file, apply --set overrides, resolve defaults."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    entries = _parse_entries(text, str(path))
    for assignment in sets:
        _apply_set(entries, assignment)

    config_mode = _one(_take(entries, "run", "mode"))
    run_mode = mode or config_mode
    if run_mode is None:
        raise ConfigError(f"{path}: no mode given on the command line or in [run]")
    if run_mode not in MODES:
        raise ConfigError(f"{path}: mode must be one of {', '.join(MODES)}, "
                          f"got {run_mode!r}")
    seed = _to_int(_one(_take(entries, "run", "seed"), "0"), "run.seed")
    method = _one(_take(entries, "run", "method"), "rk4")

    n_text = _one(_take(entries, "chain", "n"))
    if n_text is None:
        raise ConfigError(f"{path}: chain.n is required")
    n = _to_int(n_text, "chain.n")
    m_text = _one(_take(entries, "chain", "m"))
    d_text = _one(_take(entries, "chain", "d"))
    if m_text is None or d_text is None:
        raise ConfigError(f"{path}: chain.m and chain.d are required")
    m = _to_float(m_text, "chain.m")
    d = _to_float(d_text, "chain.d")

    C_vals = _take(entries, "chain", "C")
    C = _to_floats(C_vals, "chain.C") if C_vals else np.zeros(n)
    if C.shape != (n,):
        raise ConfigError(f"{path}: chain.C needs {n} values, got {C.size}")
    A_vals = _take(entries, "chain", "A")
    if A_vals is None:
        raise ConfigError(f"{path}: chain.A is required")
    A_flat = _to_floats(A_vals, "chain.A")
    if A_flat.size != n * n:
        raise ConfigError(f"{path}: chain.A needs {n * n} values row-major, "
                          f"got {A_flat.size}")
    A = A_flat.reshape(n, n)

    B_entries = []
    for chunk in _take(entries, "chain", "B") or []:
        tokens = chunk.split()
        if len(tokens) != 4:
            raise ConfigError(f"{path}: chain.B entries are 'j r s value', "
                              f"got {chunk!r}")
        j, r, s = (_to_int(t, "chain.B index") for t in tokens[:3])
        for idx in (j, r, s):
            if not 1 <= idx <= n:
                raise ConfigError(f"{path}: chain.B index {idx} outside 1..{n}")
        B_entries.append((j - 1, r - 1, s - 1, _to_float(tokens[3], "chain.B value")))

    sinusoids = []
    for chunk in _take(entries, "forcing", "sinusoid") or []:
        tokens = chunk.split()
        if len(tokens) != 4:
            raise ConfigError(f"{path}: forcing.sinusoid entries are "
                              f"'j amplitude omega phase', got {chunk!r}")
        j = _to_int(tokens[0], "forcing.sinusoid index")
        if not 1 <= j <= n:
            raise ConfigError(f"{path}: forcing.sinusoid index {j} outside 1..{n}")
        amp, omega, phase = (_to_float(t, "forcing.sinusoid") for t in tokens[1:])
        sinusoids.append((j - 1, Sinusoid(amp, omega, phase)))
    for chunk in _take(entries, "forcing", "constant") or []:
        tokens = chunk.split()
        if len(tokens) != 2:
            raise ConfigError(f"{path}: forcing.constant entries are 'j value', "
                              f"got {chunk!r}")
        j = _to_int(tokens[0], "forcing.constant index")
        if not 1 <= j <= n:
            raise ConfigError(f"{path}: forcing.constant index {j} outside 1..{n}")
        value = _to_float(tokens[1], "forcing.constant value")
        sinusoids.append((j - 1, Sinusoid(value, 0.0, 0.0)))
    tables = []
    for chunk in _take(entries, "forcing", "table") or []:
        tokens = chunk.split()
        if len(tokens) != 2:
            raise ConfigError(f"{path}: forcing.table entries are 'j path', "
                              f"got {chunk!r}")
        j = _to_int(tokens[0], "forcing.table index")
        if not 1 <= j <= n:
            raise ConfigError(f"{path}: forcing.table index {j} outside 1..{n}")
        tables.append((j - 1, (path.parent / tokens[1]).resolve()))

    T_text = _one(_take(entries, "grid", "T"))
    M_text = _one(_take(entries, "grid", "M"))
    if T_text is None or M_text is None:
        raise ConfigError(f"{path}: grid.T and grid.M are required")
    T = _to_float(T_text, "grid.T")
    M = _to_int(M_text, "grid.M")

    x0_vals = _take(entries, "initial", "x0")
    v0_vals = _take(entries, "initial", "v0")
    x0 = _to_floats(x0_vals, "initial.x0") if x0_vals else None
    v0 = _to_floats(v0_vals, "initial.v0") if v0_vals else None
    for label, vec in (("x0", x0), ("v0", v0)):
        if vec is not None and vec.shape != (n,):
            raise ConfigError(f"{path}: initial.{label} needs {n} values, "
                              f"got {vec.size}")

    c_x = _to_float(_one(_take(entries, "scales", "c_x"), "1.0"), "scales.c_x")
    c_v = _to_float(_one(_take(entries, "scales", "c_v"), "1.0"), "scales.c_v")

    base_kind = _one(_take(entries, "base", "kind"),
                     "zero" if run_mode == "periodic" else "primal")
    if base_kind not in _BASE_KINDS:
        raise ConfigError(f"{path}: base.kind must be one of "
                          f"{', '.join(_BASE_KINDS)}, got {base_kind!r}")
    base_refine = _to_int(_one(_take(entries, "base", "refine"), "10"),
                          "base.refine")
    base_amplitude = _to_float(_one(_take(entries, "base", "amplitude"), "0.0"),
                               "base.amplitude")
    base_settle = _to_int(_one(_take(entries, "base", "settle_periods"), "10"),
                          "base.settle_periods")
    base_path_text = _one(_take(entries, "base", "path"))
    base_path = (path.parent / base_path_text).resolve() if base_path_text else None

    max_iterations = _to_int(_one(_take(entries, "solver", "max_iterations"), "50"),
                             "solver.max_iterations")
    tolerance = _to_float(_one(_take(entries, "solver", "tolerance"), "1e-10"),
                          "solver.tolerance")
    step_control = _one(_take(entries, "solver", "step_control"), "damped-newton")

    prefix = _one(_take(entries, "output", "prefix"), path.stem)

    assert not entries, f"unconsumed config entries: {sorted(entries)}"
    return ScenarioConfig(
        name=path.name, config_dir=path.parent, mode=run_mode, seed=seed,
        method=method, n=n, m=m, d=d, C=C, A=A, B_entries=tuple(B_entries),
        sinusoids=tuple(sinusoids), tables=tuple(tables), T=T, M=M,
        x0=x0, v0=v0, c_x=c_x, c_v=c_v, base_kind=base_kind,
        base_refine=base_refine, base_amplitude=base_amplitude,
        base_settle=base_settle, base_path=base_path,
        max_iterations=max_iterations, tolerance=tolerance,
        step_control=step_control, prefix=prefix,
    )


def scenario_presets() -> list:
    """Paths of the bundled scenario configs."""
    root = resources.files("dualchain").joinpath("scenarios")
    return sorted(Path(str(item)) for item in root.iterdir()
                  if item.name.endswith(".cfg"))


def _format_row(values) -> str:
    return " ".join("%.17g" % v for v in values)


def write_trajectory(path, traj: Trajectory) -> None:
    n = traj.x.shape[1]
    header = ("t " + " ".join(f"x_{i}" for i in range(1, n + 1))
              + " " + " ".join(f"v_{i}" for i in range(1, n + 1)))
    data = np.column_stack([traj.grid.nodes(), traj.x, traj.v])
    np.savetxt(path, data, fmt="%.17g", header=header, comments="")


def read_trajectory(path) -> Trajectory:
    with open(path) as fh:
        tokens = fh.readline().split()
    n = sum(1 for tok in tokens if tok.startswith("x_"))
    if n == 0 or tokens[0] != "t" or len(tokens) != 1 + 2 * n:
        raise ValueError(f"{path} lacks a 't x_1..x_n v_1..v_n' header")
    data = np.loadtxt(path, skiprows=1, ndmin=2)
    if data.shape[1] != 1 + 2 * n:
        raise ValueError(f"{path}: rows have {data.shape[1]} columns, "
                         f"expected {1 + 2 * n}")
    grid = TimeGrid(T=float(data[-1, 0]), M=data.shape[0] - 1)
    return Trajectory(grid, data[:, 1:1 + n].copy(), data[:, 1 + n:].copy())


def write_dual_field(path, D: DualField) -> None:
    n = D.n
    header = ("t " + " ".join(f"gamma_{i}" for i in range(1, n + 1))
              + " " + " ".join(f"lambda_{i}" for i in range(1, n + 1)))
    data = np.column_stack([D.grid.nodes(), D.gamma, D.lam])
    np.savetxt(path, data, fmt="%.17g", header=header, comments="")


def read_dual_field(path) -> DualField:
    with open(path) as fh:
        tokens = fh.readline().split()
    n = sum(1 for tok in tokens if tok.startswith("gamma_"))
    if n == 0 or tokens[0] != "t" or len(tokens) != 1 + 2 * n:
        raise ValueError(f"{path} lacks a 't gamma_1.. lambda_1..' header")
    data = np.loadtxt(path, skiprows=1, ndmin=2)
    grid = TimeGrid(T=float(data[-1, 0]), M=data.shape[0] - 1)
    return DualField(grid, data[:, 1:1 + n].copy(), data[:, 1 + n:].copy())


def _fmt_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, float):
        return "%.17g" % value
    if isinstance(value, tuple):
        return " ".join(str(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class RunReport:
    """Structured outcome of one run: metadata, convergence, files."""

    mode: str
    config_name: str
    config_hash: str
    seed: int
    wall_time_s: float
    convergence: dict | None
    verification: dict | None
    manifest: dict

    def to_text(self) -> str:
        lines = [
            "[run]",
            f"mode = {self.mode}",
            f"config = {self.config_name}",
            f"config_hash = {self.config_hash}",
            f"seed = {self.seed}",
            f"wall_time_s = {self.wall_time_s:.3f}",
        ]
        for title, body in (("convergence", self.convergence),
                            ("verification", self.verification)):
            if body is None:
                continue
            lines.append(f"[{title}]")
            lines.extend(f"{key} = {_fmt_value(value)}"
                         for key, value in body.items())
        lines.append("[manifest]")
        lines.extend(f"{name} = sha256:{digest}"
                     for name, digest in sorted(self.manifest.items()))
        return "\n".join(lines) + "\n"


def parse_report(path) -> dict:
    """Report text back as {section: {key: value-string}}."""
    sections: dict[str, dict[str, str]] = {}
    current = None
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = sections.setdefault(line[1:-1], {})
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        current[key] = value
    return sections


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dual_max(D: DualField) -> float:
    return float(max(np.max(np.abs(D.gamma)), np.max(np.abs(D.lam))))


def _verification_dict(report) -> dict:
    body = {
        "gradient_norm": report.gradient_norm,
        "momentum_residual_max": report.momentum_residual_max,
        "kinematic_residual_max": report.kinematic_residual_max,
    }
    if report.oracle_deviation_max is not None:
        body["oracle_deviation_max"] = report.oracle_deviation_max
    body["ellipticity_min"] = report.ellipticity_min
    body["hessian_inertia"] = report.hessian_inertia
    body["concavity_ok"] = report.concavity_ok
    return body


def run_one(config_path, out_dir, sets=(), mode: str | None = None) -> int:
    """Execute one scenario; emit its files; map outcomes to exit codes."""
    try:
        cfg = load_config(config_path, sets=sets, mode=mode)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    try:
        if cfg.mode == "simulate":
            if cfg.x0 is None or cfg.v0 is None:
                raise ConfigError("mode simulate needs [initial] x0 and v0")
            sim_params, sim_grid = cfg.chain_params(), cfg.grid()
        elif cfg.mode == "periodic":
            spec = cfg.periodic_problem()
        else:
            spec = cfg.problem()
    except IntegrationBlowUpError as exc:
        print(f"base-state integration diverged: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    code = 0
    convergence = None
    verification = None
    manifest = {}
    try:
        if cfg.mode == "simulate":
            traj = integrate_primal(sim_params, cfg.x0, cfg.v0, sim_grid,
                                    method=cfg.method)
            traj_path = out / f"{cfg.prefix}_trajectory.txt"
            write_trajectory(traj_path, traj)
            manifest[traj_path.name] = _sha256_file(traj_path)
        elif cfg.mode == "dual-solve":
            sol = solve_dual(spec, cfg.solver_options())
            traj = recover_primal(sol, spec)
            dual_path = out / f"{cfg.prefix}_dual.txt"
            traj_path = out / f"{cfg.prefix}_trajectory.txt"
            write_dual_field(dual_path, sol.D)
            write_trajectory(traj_path, traj)
            manifest[dual_path.name] = _sha256_file(dual_path)
            manifest[traj_path.name] = _sha256_file(traj_path)
            convergence = _convergence_dict(sol)
            verification = _verification_dict(verify(sol, spec))
            code = 0 if sol.converged else 3
        elif cfg.mode == "verify":
            sol = solve_dual(spec, cfg.solver_options())
            oracle = integrate_primal(spec.params, spec.x0, spec.v0,
                                      spec.grid.refined(10),
                                      method=cfg.method).restrict(10)
            convergence = _convergence_dict(sol)
            verification = _verification_dict(verify(sol, spec, oracle=oracle))
            code = 0 if sol.converged else 3
        else:  # periodic
            sol = solve_periodic(spec, cfg.solver_options())
            orbit = recover_periodic_orbit(sol, spec)
            traj_path = out / f"{cfg.prefix}_trajectory.txt"
            write_trajectory(traj_path, orbit)
            manifest[traj_path.name] = _sha256_file(traj_path)
            convergence = _convergence_dict(sol)
            code = 0 if sol.converged else 3
    except (SingularStiffnessError, SingularSystemError) as exc:
        print(f"numerical singularity: {exc}", file=sys.stderr)
        return 4
    except IntegrationBlowUpError as exc:
        print(f"direct integration diverged: {exc}", file=sys.stderr)
        return 3

    if cfg.mode != "simulate":
        report = RunReport(
            mode=cfg.mode, config_name=cfg.name,
            config_hash=cfg.semantic_hash(), seed=cfg.seed,
            wall_time_s=time.perf_counter() - started,
            convergence=convergence, verification=verification,
            manifest=manifest,
        )
        (out / f"{cfg.prefix}_report.txt").write_text(report.to_text())
    if code == 3:
        print(f"{cfg.name}: solver did not converge (report written)",
              file=sys.stderr)
    return code


def _convergence_dict(sol) -> dict:
    return {
        "converged": bool(sol.converged),
        "iterations": int(sol.iterations),
        "initial_residual": float(sol.residual_history[0]),
        "final_residual": float(sol.residual_history[-1]),
        "dual_max": _dual_max(sol.D),
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dualchain",
        description="Simulate, dual-solve, and verify damped forced particle "
                    "chains from scenario configs.")
    parser.add_argument("mode", nargs="?", choices=MODES, default=None,
                        help="run mode; overrides the config's [run] mode")
    parser.add_argument("--config", action="append", required=True,
                        dest="configs", metavar="PATH",
                        help="scenario config (repeatable)")
    parser.add_argument("--set", action="append", default=[], dest="sets",
                        metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    parser.add_argument("--out", default=".", metavar="DIR",
                        help="output directory (default: current)")
    parser.add_argument("--jobs", type=int, default=1, metavar="N",
                        help="run multiple configs in parallel")
    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be at least 1")

    configs = [Path(p) for p in args.configs]
    out = Path(args.out)
    # several scenarios fan out into isolated per-config directories
    dirs = [out / p.stem for p in configs] if len(configs) > 1 else [out]
    tasks = [(cfg, str(dest), tuple(args.sets), args.mode)
             for cfg, dest in zip(configs, dirs)]

    if args.jobs == 1 or len(tasks) == 1:
        codes = [run_one(*task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(args.jobs, len(tasks))) as pool:
            codes = list(pool.map(run_one, *zip(*tasks)))
    for cfg, code in zip(configs, codes):
        print(f"{cfg.stem}: exit {code}")
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
