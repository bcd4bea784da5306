"""Command-line front end: ``orbiqe <command> [options]``.

Every command writes one table (CSV with a header row, or a JSON object with
``config``, ``results`` and ``version`` keys). Options may also come from a
``key=value`` file passed with ``--config``; command-line flags win.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import __version__, acceptance, flow, geom, qe, spectral, symbols

COMMANDS = ("spectrum", "weyl", "local-weyl", "pointwise-weyl", "qe", "defect", "egorov", "geodesic",
            "birkhoff", "lyapunov", "ergodicity", "zeta", "report")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = ""
    backend: str = "pillowcase"
    sphere_n: int = 1
    triangle: tuple = (2, 3, 7)
    refine: int = 5
    k: int = 60
    l_max: int = 30
    lambda_max: float = 60.0
    lam: float = 0.0
    T: float = 1000.0
    dt: float = 0.5
    t: float = 1.0
    n_starts: int = 20
    eps: float = 0.1
    observable: str = "one"
    m: tuple = (1, 0)
    k_min: float = 200.0
    k_max: float = 400.0
    base: str = ""
    direction: float = -1.0
    seed: int = 0
    out: str = "-"
    format: str = "csv"
    mesh_in: str = ""
    mesh_out: str = ""

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.format!r}")
        if self.backend not in ("sphere", "pillowcase", "triangle"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        positive = {"sphere_n": self.sphere_n, "k": self.k, "lambda_max": self.lambda_max, "T": self.T,
                    "dt": self.dt, "eps": self.eps, "k_min": self.k_min, "k_max": self.k_max}
        for key, val in positive.items():
            if not val > 0:
                raise ConfigError(f"{key} must be positive, got {val}")
        if self.l_max < 0 or self.refine < 0:
            raise ConfigError("l_max and refine must be nonnegative")
        if self.n_starts < 2:
            raise ConfigError("n_starts must be at least 2")
        if self.dt > self.T:
            raise ConfigError("dt must not exceed T")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.backend == "triangle":
            sig = geom.classify_signature(*self.triangle)
            if sig.geometry != "hyperbolic":
                raise ConfigError(f"triangle signature {self.triangle} is {sig.geometry}, not hyperbolic")
        observable_for(self)
        return self


# ---------------------------------------------------------------------------
# Observables by name


def _named_observables(cfg: RunConfig) -> dict:
    one = qe.Observable.constant()
    if cfg.backend == "sphere":
        return {
            "one": one,
            "cos_theta": qe.Observable.position(lambda x: x[:, 2], "cos_theta", exact_average=0.0),
            "cos2_theta": qe.Observable.position(lambda x: x[:, 2] ** 2, "cos2_theta", exact_average=1 / 3),
            "exp_cos_theta": qe.Observable.position(lambda x: np.exp(x[:, 2]), "exp_cos_theta",
                                                    exact_average=math.sinh(1.0)),
        }
    if cfg.backend == "pillowcase":
        return {
            "one": one,
            "cos_x1": qe.Observable.position(lambda x: np.cos(x[:, 0]), "cos_x1", exact_average=0.0),
            "cos_2x1": qe.Observable.position(lambda x: np.cos(2 * x[:, 0]), "cos_2x1", exact_average=0.0),
            "one_plus_cos_x1": qe.Observable.position(lambda x: 1 + 0.5 * np.cos(x[:, 0]), "one_plus_cos_x1",
                                                      exact_average=1.0),
            "xi1sq": qe.Observable.direction(lambda t: np.cos(t) ** 2, "xi1sq", exact_average=0.5),
        }
    obs = {"one": one}
    for o, key in zip(acceptance.triangle_observables(), ("re_w", "r2", "bump")):
        obs[key] = qe.Observable.position(o.func, key)
    return obs


def observable_for(cfg: RunConfig) -> qe.Observable:
    table = _named_observables(cfg)
    if cfg.observable == "ball" and cfg.backend == "triangle":
        f, *_ = acceptance.ball_indicator(geom.hyperbolic_triangle(*cfg.triangle))
        return qe.Observable.position(f, "ball", smoothness="indicator")
    if cfg.observable not in table:
        names = sorted(table) + (["ball"] if cfg.backend == "triangle" else [])
        raise ConfigError(f"observable {cfg.observable!r} not available on {cfg.backend}; choose from {names}")
    return table[cfg.observable]


# ---------------------------------------------------------------------------
# Backends


def geometry_for(cfg: RunConfig) -> geom.GeometryBackend:
    if cfg.backend == "sphere":
        return geom.sphere_quotient(cfg.sphere_n)
    if cfg.backend == "pillowcase":
        return geom.pillowcase()
    return geom.hyperbolic_triangle(*cfg.triangle)


def eigensystem_for(cfg: RunConfig) -> spectral.EigenSystem:
    if cfg.backend == "sphere":
        return spectral.sphere_quotient_spectrum(cfg.sphere_n, cfg.l_max)
    if cfg.backend == "pillowcase":
        return spectral.pillowcase_spectrum(cfg.lambda_max)
    mesh = None
    if cfg.mesh_in:
        mesh = spectral.read_mesh(cfg.mesh_in)
    eig = spectral.triangle_orbifold_spectrum(*cfg.triangle, cfg.k, cfg.refine, mesh=mesh)
    if cfg.mesh_out:
        spectral.write_mesh(eig.space.mesh, cfg.mesh_out)
    return eig


def _start(cfg: RunConfig, be: geom.GeometryBackend) -> flow.UnitPhasePoint:
    if cfg.base:
        vals = [float(v) for v in cfg.base.split(",")]
        direction = cfg.direction if cfg.direction >= 0 else 0.0
        if cfg.backend == "triangle":
            return flow.UnitPhasePoint(complex(vals[0], vals[1]), direction)
        return flow.UnitPhasePoint(np.array(vals), direction)
    F = flow.sample_liouville(be, 1, cfg.seed)
    base, a = be.base_and_direction(F)
    return flow.UnitPhasePoint(base[0], float(a[0]) if cfg.direction < 0 else cfg.direction)


def _base_columns(cfg, base):
    if cfg.backend == "triangle":
        return ["base_re", "base_im"], [complex(base).real, complex(base).imag]
    b = list(np.asarray(base, dtype=float))
    names = ["x", "y", "z"] if cfg.backend == "sphere" else ["x1", "x2"]
    return names, b


# ---------------------------------------------------------------------------
# Commands. Each returns (columns, rows, summary).


def cmd_spectrum(cfg):
    eig = eigensystem_for(cfg)
    cluster = np.empty(len(eig), dtype=int)
    for i, g in enumerate(eig.clusters()):
        cluster[g] = i
    rows = [[j, float(lam), int(cluster[j])] for j, lam in enumerate(eig.eigenvalues)]
    return ["index", "lambda", "cluster"], rows, {"tag": eig.tag, "count": len(eig)}


def _fit_row(fit):
    return ["C", "predicted", "relative_error", "exponent", "n_points"], [
        [fit.C, fit.predicted, fit.relative_error, fit.exponent, fit.n_points]]


def cmd_weyl(cfg):
    eig = eigensystem_for(cfg)
    fit = qe.local_weyl_fit(qe.matrix_elements(eig, qe.Observable.constant()), eig)
    cols, rows = _fit_row(fit)
    return cols, rows, dict(zip(cols, rows[0]))


def cmd_local_weyl(cfg):
    eig = eigensystem_for(cfg)
    fit = qe.local_weyl_fit(qe.matrix_elements(eig, observable_for(cfg)), eig)
    cols, rows = _fit_row(fit)
    return cols, rows, dict(zip(cols, rows[0]))


def cmd_pointwise_weyl(cfg):
    if cfg.backend != "sphere":
        raise ConfigError("pointwise-weyl needs the sphere backend")
    eig = eigensystem_for(cfg)
    lam = cfg.lam if cfg.lam > 0 else float(eig.lambda_max)
    measured, predicted, ratio = qe.pointwise_weyl_at_cone(eig, cfg.sphere_n, lam)
    cols = ["lambda", "measured", "predicted", "ratio"]
    row = [lam, measured, predicted, ratio]
    return cols, [row], dict(zip(cols, row))


def cmd_qe(cfg):
    eig = eigensystem_for(cfg)
    obs = observable_for(cfg)
    omega = obs.exact_average if obs.exact_average is not None else qe.liouville_average(obs, eig)
    prof = qe.qe_variance_and_density(qe.matrix_elements(eig, obs), omega, cfg.eps)
    rows = [[float(a), int(n), float(v), float(x)]
            for a, n, v, x in zip(prof.lambdas, prof.counts, prof.variance, prof.excluded)]
    return ["lambda", "count", "variance", "excluded_fraction"], rows, {"omega": float(omega)}


def cmd_defect(cfg):
    eig = eigensystem_for(cfg)
    lam = cfg.lam if cfg.lam > 0 else float(eig.lambda_max)
    res = qe.operator_average_defect(eig, observable_for(cfg), lam)
    cols = ["lambda", "count", "defect", "ratio"]
    row = [lam, res.count, res.norm, res.ratio]
    return cols, [row], dict(zip(cols, row))


def cmd_egorov(cfg):
    mismatch = qe.egorov_phase_check(cfg.m, (cfg.k_min, cfg.k_max), cfg.t)
    cols = ["m1", "m2", "k_min", "k_max", "max_mismatch"]
    row = [int(cfg.m[0]), int(cfg.m[1]), cfg.k_min, cfg.k_max, mismatch]
    return cols, [row], dict(zip(cols, row))


def cmd_geodesic(cfg):
    be = geometry_for(cfg)
    s0 = _start(cfg, be)
    s1 = flow.geodesic_advance(s0, cfg.t, be)
    n0, b0 = _base_columns(cfg, s0.base)
    n1, b1 = _base_columns(cfg, s1.base)
    cols = ["t"] + [f"start_{c}" for c in n0] + ["start_direction"] + [f"end_{c}" for c in n1] + ["end_direction"]
    row = [cfg.t] + b0 + [s0.direction] + b1 + [s1.direction]
    return cols, [row], dict(zip(cols, row))


def cmd_birkhoff(cfg):
    be = geometry_for(cfg)
    s0 = _start(cfg, be)
    val = flow.birkhoff_average(observable_for(cfg), s0, cfg.T, cfg.dt, be)
    cols = ["T", "dt", "average"]
    row = [cfg.T, cfg.dt, val]
    return cols, [row], dict(zip(cols, row))


def cmd_lyapunov(cfg):
    be = geometry_for(cfg)
    rep = flow.lyapunov_exponent(_start(cfg, be), cfg.T, be, seed=cfg.seed)
    cols = ["exponent", "half_width", "T", "renormalizations"]
    row = [rep.exponent, rep.half_width, rep.T, rep.renormalizations]
    return cols, [row], dict(zip(cols, row))


def cmd_ergodicity(cfg):
    be = geometry_for(cfg)
    obs = observable_for(cfg)
    rep = flow.ergodicity_report([obs], cfg.n_starts, cfg.T, be, seed=cfg.seed, dt=cfg.dt)
    o = rep.observables[0]
    rows = [[i, value] for i, (_, value) in enumerate(o.averages)]
    return ["start", "average"], rows, {"variance": o.variance, "mean": o.mean,
                                        "liouville_reference": o.liouville_reference}


def cmd_zeta(cfg):
    if cfg.backend == "triangle":
        raise ConfigError("zeta needs an exact backend (sphere or pillowcase)")
    eig = eigensystem_for(cfg)
    obs = observable_for(cfg)
    probe = symbols.zeta_residue(eig, obs)
    cols = ["residue", "uncertainty", "sign", "C_A", "tauberian"]
    row = [probe.residue, probe.uncertainty, probe.sign, probe.C_A, probe.tauberian]
    return cols, [row], dict(zip(cols, row))


def cmd_report(cfg):
    results = acceptance.run_all()
    rows = [[r.number, r.title, "pass" if r.passed else "fail", json.dumps(r.details, sort_keys=True, default=float)]
            for r in results]
    return ["criterion", "title", "status", "details"], rows, {"passed": sum(r.passed for r in results),
                                                                "total": len(results)}


HANDLERS = {name: globals()["cmd_" + name.replace("-", "_")] for name in COMMANDS}


# ---------------------------------------------------------------------------
# Output


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def render(cfg: RunConfig, cols, rows, summary) -> str:
    if cfg.format == "csv":
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        for row in rows:
            buf.write(",".join(_csv_escape(_cell(v)) for v in row) + "\n")
        return buf.getvalue()
    conf = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()}
    payload = {
        "config": conf,
        "results": {"columns": list(cols), "rows": [[_json_value(v) for v in r] for r in rows],
                    **{k: _json_value(v) for k, v in summary.items()}},
        "version": __version__,
    }
    return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def _csv_escape(s: str) -> str:
    if any(c in s for c in ',"\n'):
        return '"' + s.replace('"', '""') + '"'
    return s


def _json_value(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v)
    return v


# ---------------------------------------------------------------------------
# Argument handling


def _parse_pair(text, kind=int, n=2):
    parts = [kind(p) for p in str(text).replace(" ", "").split(",") if p]
    if len(parts) != n:
        raise ConfigError(f"expected {n} comma-separated values, got {text!r}")
    return tuple(parts)


def read_config_file(path) -> dict:
    out = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def _coerce(key, value):
    types = {f.name: f.type for f in fields(RunConfig)}
    if key not in types:
        raise ConfigError(f"unknown configuration key {key!r}")
    default = getattr(RunConfig(), key)
    try:
        if key == "triangle":
            return _parse_pair(value, int, 3)
        if key == "m":
            return _parse_pair(value, int, 2)
        if isinstance(default, bool):
            return str(value).lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None
    return str(value)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="orbiqe", description="Ergodicity numerics on compact 2-orbifolds.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"))
    g = p.add_mutually_exclusive_group()
    g.add_argument("--sphere-n", type=int, help="use S^2/Z_n")
    g.add_argument("--pillowcase", action="store_true", help="use the flat pillowcase")
    g.add_argument("--triangle", help="use H^2/Delta+(p,q,r), given as p,q,r")
    p.add_argument("--refine", type=int, help="FEM refinement level")
    p.add_argument("--k", type=int, help="Neumann and Dirichlet modes to compute")
    p.add_argument("--l-max", type=int)
    p.add_argument("--lambda-max", type=float)
    p.add_argument("--lam", type=float, help="spectral cutoff for pointwise-weyl and defect")
    p.add_argument("--T", type=float, help="integration time")
    p.add_argument("--dt", type=float)
    p.add_argument("--t", type=float, help="flow time for geodesic, phase time for egorov")
    p.add_argument("--n-starts", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--observable")
    p.add_argument("--m", help="lattice vector m1,m2 for egorov")
    p.add_argument("--k-min", type=float)
    p.add_argument("--k-max", type=float)
    p.add_argument("--base", help="start base point (comma-separated model coordinates)")
    p.add_argument("--direction", type=float)
    p.add_argument("--mesh-in")
    p.add_argument("--mesh-out")
    return p


def config_from_args(args) -> RunConfig:
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    flags = {k: v for k, v in vars(args).items() if v is not None and k not in ("config", "pillowcase")}
    if args.pillowcase:
        flags["backend"] = "pillowcase"
    if args.sphere_n is not None:
        flags["backend"] = "sphere"
    if args.triangle is not None:
        flags["backend"] = "triangle"
    values.update({k: v for k, v in flags.items() if not (k == "pillowcase")})
    if "sphere_n" in values and "backend" not in values:
        values["backend"] = "sphere"
    if "triangle" in values and "backend" not in values:
        values["backend"] = "triangle"
    cfg = RunConfig()
    for key, val in values.items():
        setattr(cfg, key, _coerce(key, val))
    return cfg.validate()


def _fail(kind: str, exc: BaseException, code: int) -> int:
    msg = {"error": kind, "type": type(exc).__name__, "message": " ".join(str(exc).split())}
    print(json.dumps(msg, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 2
    except ConfigError as exc:
        return _fail("config", exc, 2)
    try:
        cfg = config_from_args(args)
    except (ConfigError, geom.GeometryError) as exc:
        return _fail("config", exc, 2)
    try:
        cols, rows, summary = HANDLERS[cfg.command](cfg)
    except ConfigError as exc:
        return _fail("config", exc, 2)
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        return _fail("numeric", exc, 3)
    text = render(cfg, cols, rows, summary)
    if cfg.out in ("", "-"):
        sys.stdout.write(text)
    else:
        with open(cfg.out, "w", newline="") as fh:
            fh.write(text)
    if cfg.command == "report":
        return 0 if summary["passed"] == summary["total"] else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
