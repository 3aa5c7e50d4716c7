"""Strict JSON run configuration.

Unknown keys and out-of-range values are rejected at load time; parse
errors carry the line and column of the offending JSON.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .auxiliary import StructuralParams, build_cutoffs
from .gevrey import GevreyError, GevreyParams
from .grid import GridError, GridSpec
from .solver import SolverConfig
from .state import PROFILES, OuterFlow, canonical_profile, tanh_profile

DEFAULT_RHO_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


class ConfigError(ValueError):
    """Invalid configuration; maps to exit status 2."""


SECTIONS = {
    "grid": {"nx", "ny", "nz", "z_max", "stretch", "m_max"},
    "solver": {"dt", "t_end", "epsilon", "scheme", "cfl_safety", "blowup_factor", "check_cfl"},
    "gevrey": {"rho", "sigma", "ell", "kappa", "delta", "m_max", "n_shift"},
    "cutoffs": {"eps_c", "gamma_ref"},
    "outer": {"kind", "U", "V", "p", "path"},
    "initial": {"kind", "profile", "params", "path"},
    "diagnostics": {"stride", "norms", "structural", "monitor", "residuals", "rho_grid", "c_max",
                    "figures", "snapshots"},
}
TOP_KEYS = set(SECTIONS) | {"output", "seed", "name"}
PROFILE_PARAMS = {"critical-curve": {"delta", "amp", "pert", "vpert"}, "tanh": {"U"}, "zero": set()}


@dataclass
class Diagnostics:
    stride: int = 1
    norms: bool = True
    structural: bool = True
    monitor: bool = True
    residuals: bool = False
    rho_grid: tuple = DEFAULT_RHO_GRID
    c_max: float = 1e3
    figures: bool = True
    snapshots: bool = True


@dataclass
class RunConfig:
    grid: GridSpec
    solver: SolverConfig
    gevrey: GevreyParams
    eps_c: float = 0.2
    gamma_ref: float = 1.0
    outer: dict = field(default_factory=lambda: {"kind": "profile"})
    initial: dict = field(default_factory=lambda: {"kind": "profile", "profile": "critical-curve", "params": {}})
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    output: str | None = None
    seed: int = 0
    name: str = "run"
    source: str | None = None

    def structural_params(self) -> StructuralParams:
        g = self.gevrey
        return StructuralParams(delta=g.delta, ell=g.ell, kappa=g.kappa, eps_c=self.eps_c,
                                gamma_ref=self.gamma_ref, sigma=g.sigma, N=g.n_shift or 6)

    def to_dict(self) -> dict:
        s = self.solver
        d = self.diagnostics
        return {"name": self.name, "seed": self.seed, "output": self.output,
                "grid": self.grid.to_dict(),
                "solver": {"dt": s.dt, "t_end": s.t_end, "epsilon": s.epsilon, "scheme": s.scheme,
                           "cfl_safety": s.cfl_safety, "blowup_factor": s.blowup_factor,
                           "check_cfl": s.check_cfl},
                "gevrey": self.gevrey.to_dict(),
                "cutoffs": {"eps_c": self.eps_c, "gamma_ref": self.gamma_ref},
                "outer": dict(self.outer), "initial": dict(self.initial),
                "diagnostics": {"stride": d.stride, "norms": d.norms, "structural": d.structural,
                                "monitor": d.monitor, "residuals": d.residuals,
                                "rho_grid": list(d.rho_grid), "c_max": d.c_max,
                                "figures": d.figures, "snapshots": d.snapshots}}


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(extra)}")


def _num(v, where, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    if integer and not isinstance(v, int):
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    if not math.isfinite(v) and not (where.endswith("blowup_factor") and v == math.inf):
        raise ConfigError(f"{where}: must be finite")
    return v


def _bool(v, where):
    if not isinstance(v, bool):
        raise ConfigError(f"{where}: expected true or false, got {v!r}")
    return v


PARTIAL_DEFAULTS = {"grid": {"nx": 16, "ny": 16, "nz": 65}, "solver": {"dt": 1e-3, "t_end": 0.0}}


def parse_config(doc: dict, base_dir: Path | None = None, partial: bool = False) -> RunConfig:
    """Validate a decoded JSON document.

    ``partial`` allows the grid and solver sections to be absent, as in a
    parameter file for offline diagnosis.
    """
    _check_keys(doc, TOP_KEYS, "config")
    for sec in ("grid", "solver"):
        if sec not in doc:
            if not partial:
                raise ConfigError(f"config: missing required section '{sec}'")
            doc = dict(doc, **{sec: PARTIAL_DEFAULTS[sec]})
    for sec, keys in SECTIONS.items():
        if sec in doc:
            _check_keys(doc[sec], keys, sec)

    gd = dict(doc["grid"])
    for k in ("nx", "ny", "nz", "m_max"):
        if k in gd:
            _num(gd[k], f"grid.{k}", integer=True)
    for k in ("z_max",):
        if k in gd:
            _num(gd[k], f"grid.{k}")
    if gd.get("stretch") is not None:
        _num(gd["stretch"], "grid.stretch")
    try:
        grid = GridSpec(**gd)
    except TypeError as e:
        raise ConfigError(f"grid: {e}") from None
    except GridError as e:
        raise ConfigError(f"grid: {e}") from None

    sd = dict(doc["solver"])
    for k in ("dt", "t_end", "epsilon", "cfl_safety", "blowup_factor"):
        if k in sd:
            _num(sd[k], f"solver.{k}")
    if "check_cfl" in sd:
        _bool(sd["check_cfl"], "solver.check_cfl")
    try:
        solver = SolverConfig(**sd)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"solver: {e}") from None

    gv = dict(doc.get("gevrey", {}))
    for k, v in gv.items():
        if v is not None:
            _num(v, f"gevrey.{k}", integer=k in ("m_max", "n_shift"))
    if "delta" in gv or "ell" in gv:
        ell = gv.get("ell", GevreyParams.ell)
        delta = gv.get("delta", GevreyParams.delta)
        if not delta > ell + 0.5:
            raise ConfigError(f"gevrey.delta: {delta} must exceed ell + 1/2 = {ell + 0.5} "
                              "(weight constraint ell + 1/2 < delta <= ell + 1)")
    try:
        gevrey = GevreyParams(**gv)
    except GevreyError as e:
        raise ConfigError(f"gevrey: {e}") from None

    cd = doc.get("cutoffs", {})
    eps_c = _num(cd.get("eps_c", 0.2), "cutoffs.eps_c")
    gamma_ref = _num(cd.get("gamma_ref", 1.0), "cutoffs.gamma_ref")
    try:
        build_cutoffs(eps_c, gamma_ref, grid.build())
    except ValueError as e:
        raise ConfigError(f"cutoffs: {e}") from None

    outer = dict(doc.get("outer", {"kind": "profile"}))
    kind = outer.get("kind", "profile")
    if kind not in ("profile", "constant", "file"):
        raise ConfigError(f"outer.kind: expected profile, constant or file, got {kind!r}")
    if kind == "constant":
        for k in ("U", "V", "p"):
            _num(outer.get(k, 0.0), f"outer.{k}")
    if kind == "file":
        outer["path"] = _resolve(outer.get("path"), base_dir, "outer.path")

    init = dict(doc.get("initial", {"kind": "profile", "profile": "critical-curve"}))
    ik = init.get("kind", "profile")
    if ik == "profile":
        prof = init.get("profile", "critical-curve")
        if prof not in PROFILES:
            raise ConfigError(f"initial.profile: unknown profile {prof!r}; choose from {sorted(PROFILES)}")
        params = init.get("params", {})
        _check_keys(params, PROFILE_PARAMS[prof], "initial.params")
        for k, v in params.items():
            _num(v, f"initial.params.{k}")
        init = {"kind": "profile", "profile": prof, "params": dict(params)}
    elif ik == "file":
        init["path"] = _resolve(init.get("path"), base_dir, "initial.path")
    else:
        raise ConfigError(f"initial.kind: expected profile or file, got {ik!r}")

    dd = dict(doc.get("diagnostics", {}))
    diag = Diagnostics()
    if "stride" in dd:
        diag.stride = _num(dd["stride"], "diagnostics.stride", integer=True)
        if diag.stride < 1:
            raise ConfigError("diagnostics.stride: must be >= 1")
    for k in ("norms", "structural", "monitor", "residuals", "figures", "snapshots"):
        if k in dd:
            setattr(diag, k, _bool(dd[k], f"diagnostics.{k}"))
    if "rho_grid" in dd:
        rg = dd["rho_grid"]
        if not isinstance(rg, list) or len(rg) < 2:
            raise ConfigError("diagnostics.rho_grid: need a list of at least two radii")
        rg = sorted(_num(r, "diagnostics.rho_grid") for r in rg)
        if rg[0] <= 0 or rg[-1] > 1 or len(set(rg)) != len(rg):
            raise ConfigError("diagnostics.rho_grid: radii must be distinct and lie in (0, 1]")
        diag.rho_grid = tuple(rg)
    if "c_max" in dd:
        diag.c_max = _num(dd["c_max"], "diagnostics.c_max")

    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not (0 <= seed < 2 ** 64):
        raise ConfigError("seed: expected an unsigned 64-bit integer")
    out = doc.get("output")
    if out is not None and not isinstance(out, str):
        raise ConfigError("output: expected a path string")
    name = doc.get("name", "run")
    if not isinstance(name, str):
        raise ConfigError("name: expected a string")
    return RunConfig(grid, solver, gevrey, eps_c, gamma_ref, outer, init, diag, out, seed, name)


def _resolve(path, base_dir, where):
    if not isinstance(path, str):
        raise ConfigError(f"{where}: expected a path string")
    p = Path(path)
    if not p.is_absolute() and base_dir is not None:
        p = base_dir / p
    return str(p)


def _locate(text: str, message: str) -> int | None:
    """Line of the key a validation message refers to, if it appears once."""
    m = re.match(r"([\w.]+): (?:unknown key\(s\) (\w+))?", message)
    if not m:
        return None
    key = m.group(2) or m.group(1).split(".")[-1]
    hits = [i + 1 for i, ln in enumerate(text.splitlines()) if f'"{key}"' in ln]
    return hits[0] if hits else None


def load_config(path, partial: bool = False) -> RunConfig:
    """Read and validate a JSON config file."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    try:
        cfg = parse_config(doc, path.parent, partial)
    except ConfigError as e:
        line = _locate(text, str(e))
        where = f"{path}:{line}" if line else str(path)
        raise ConfigError(f"{where}: {e}") from None
    cfg.source = str(path)
    return cfg


# ----- materialization -----

def initial_fields(cfg: RunConfig, grid):
    init = cfg.initial
    if init["kind"] == "file":
        from .io import read_snapshot
        snap = read_snapshot(init["path"])
        if snap.grid.spec != grid.spec:
            raise ConfigError(f"{init['path']}: snapshot grid differs from the configured grid")
        return snap.u, snap.v
    prof = init["profile"]
    params = init.get("params", {})
    if prof == "critical-curve":
        return canonical_profile(grid, **params)
    if prof == "tanh":
        return tanh_profile(grid, **params)
    return PROFILES[prof](grid)


def outer_flow(cfg: RunConfig, grid, u0) -> OuterFlow:
    o = cfg.outer
    kind = o.get("kind", "profile")
    if kind == "constant":
        return OuterFlow(float(o.get("U", 0.0)), float(o.get("V", 0.0)), float(o.get("p", 0.0)))
    if kind == "file":
        try:
            data = np.load(o["path"])
            return OuterFlow.from_samples(data["times"], data["U"], data["V"], data["p"])
        except (OSError, KeyError, ValueError) as e:
            raise OSError(f"{o['path']}: cannot read outer-flow samples ({e})") from None
    return OuterFlow(U=float(np.mean(u0[..., -1])), V=0.0, p=0.0)
