"""Batch front-end: ``towpde <subcommand> --config run.ini --out DIR``.

The configuration is an INI file.  Sections and keys (defaults in brackets)::

    [domain]  kind = interval | box | ball | annulus
              lo, hi            (interval/box; comma lists for box)
              center, radius    (ball)   center, r_in, r_out (annulus)
    [params]  n, eps | eps_list, p | alpha, T
    [data]    F = constant | linear | heat_eigen | ramp
              c [1.0]                          constant level
              offset [0], slope [0,..], rate [0]  linear: offset + slope.x + rate t
              psi_offset, psi_slope, phi_c     ramp: psi linear, phi_init = phi_c [min psi]
    [dirs]    N [per-dimension default], theta_tol [1e-4], refinement [local_bracket]
    [grid]    h [eps / 8]
    [mc]      M [10000], seed [0], start (comma list), t0 [T rounded to a level],
              player_I, player_II = greedy | random | pull [greedy], record [false]
    [elliptic] tol [1e-9], max_iter [1000000]
    [asymptotics] K_list
    [exit]    z [origin], delta_ext, R, radii, eps_list
    [scan]    n_pairs [1000], seed [0], radius_hint [0.1]
"""

from __future__ import annotations

import argparse
import configparser
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    ScanSpec,
    asymptotic_study,
    boundary_modulus_scan,
    convergence_study,
    fit_exit_constant,
    heat_reference,
    ramp_data,
)
from .dpp_core import BoundaryData, ConvergenceError, solve_elliptic_dpp, solve_parabolic_dpp
from .game import (
    RandomStrategy,
    annulus_exit_time,
    estimate_value,
    greedy_pair,
    pull_strategy,
    simulate_batch,
)
from .geometry import DomainGeometry, GameParams, SpaceTimePoint, dist_to_boundary
from .grid import OutOfDomainError
from .io import write_csv, write_json
from .quadrature import DirectionSet
from .rng import RngSpec

logger = logging.getLogger("towpde")

SUBCOMMANDS = ("solve", "elliptic", "simulate", "exit-time", "asymptotics", "converge", "scan")
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected numbers, got {text!r}") from None


def _get(cp, section, key, default=None, kind=float):
    if not cp.has_option(section, key):
        if default is None:
            raise ConfigError(f"missing [{section}] {key}")
        return default
    raw = cp.get(section, key)
    try:
        if kind is bool:
            return cp.getboolean(section, key)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


@dataclass
class RunConfig:
    subcommand: str
    domain: DomainGeometry
    n: int
    eps_list: list[float]
    p: float | None
    alpha: float | None
    T: float
    data: dict
    dirs: dict
    h: float | None
    mc: dict
    extra: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def eps(self) -> float:
        return self.eps_list[0]

    def params(self, eps: float | None = None, T: float | None = None) -> GameParams:
        eps = self.eps if eps is None else eps
        T = self.T if T is None else T
        if self.p is not None:
            return GameParams.from_p(self.n, eps, self.p, T)
        return GameParams.from_alpha(self.n, eps, self.alpha, T)

    def direction_set(self) -> DirectionSet:
        return DirectionSet.default(self.n, self.dirs["N"], self.dirs["refinement"], self.dirs["theta_tol"])

    def h_for(self, eps: float) -> float:
        return self.h if self.h is not None else eps / 8

    def echo(self) -> dict:
        """Fully resolved configuration, defaults included."""
        return {
            "subcommand": self.subcommand,
            "domain": self.domain.as_dict(),
            "params": {"n": self.n, "eps_list": self.eps_list, "p": self.p, "alpha": self.alpha, "T": self.T},
            "data": self.data,
            "dirs": self.dirs,
            "grid": {"h": self.h, "h_rule": "eps/8" if self.h is None else "fixed"},
            "mc": self.mc,
            **self.extra,
        }


def _domain(cp) -> DomainGeometry:
    if not cp.has_section("domain"):
        raise ConfigError("missing [domain] section")
    kind = cp.get("domain", "kind", fallback="")
    if kind == "interval":
        return DomainGeometry.interval(_get(cp, "domain", "lo"), _get(cp, "domain", "hi"))
    if kind == "box":
        return DomainGeometry.box(_floats(_get(cp, "domain", "lo", kind=str)),
                                  _floats(_get(cp, "domain", "hi", kind=str)))
    if kind == "ball":
        return DomainGeometry.ball(_floats(_get(cp, "domain", "center", kind=str)), _get(cp, "domain", "radius"))
    if kind == "annulus":
        return DomainGeometry.annulus(_floats(_get(cp, "domain", "center", kind=str)),
                                      _get(cp, "domain", "r_in"), _get(cp, "domain", "r_out"))
    raise ConfigError(f"unknown domain kind {kind!r}")


def load_config(path, subcommand: str, seed: int | None = None) -> RunConfig:
    """Parse and validate a configuration file; raise :class:`ConfigError` on any problem."""
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    cp = configparser.ConfigParser()
    try:
        read = cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if not read:
        raise ConfigError(f"cannot read config {path}")
    try:
        return _build(cp, subcommand, seed)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _build(cp, subcommand, seed) -> RunConfig:
    domain = _domain(cp)
    n = _get(cp, "params", "n", kind=int)
    if n != domain.n:
        raise ConfigError(f"params n={n} does not match the {domain.n}-d domain")
    if cp.has_option("params", "eps_list"):
        eps_list = _floats(cp.get("params", "eps_list"))
    else:
        eps_list = [_get(cp, "params", "eps")]
    if not eps_list or any(not e > 0 for e in eps_list):
        raise ConfigError("eps must be positive")
    has_p, has_a = cp.has_option("params", "p"), cp.has_option("params", "alpha")
    p = _get(cp, "params", "p") if has_p else None
    alpha = _get(cp, "params", "alpha") if has_a else None
    if not has_p and not has_a:
        raise ConfigError("give p or alpha in [params]")
    if has_p and has_a and not math.isclose(alpha, (p - 1) / (p + n), rel_tol=0, abs_tol=1e-12):
        raise ConfigError(f"alpha={alpha} inconsistent with p={p}: expected {(p - 1) / (p + n)}")
    if has_p and has_a:
        alpha = None
    T = _get(cp, "params", "T", default=1.0)

    kind = cp.get("data", "F", fallback="constant")
    data: dict = {"F": kind}
    if kind == "constant":
        data["c"] = _get(cp, "data", "c", default=1.0)
    elif kind == "linear":
        data["offset"] = _get(cp, "data", "offset", default=0.0)
        data["slope"] = _floats(cp.get("data", "slope", fallback=",".join(["0"] * n)))
        data["rate"] = _get(cp, "data", "rate", default=0.0)
        if len(data["slope"]) != n:
            raise ConfigError("[data] slope needs n entries")
    elif kind == "heat_eigen":
        if n != 1 or p is None and not math.isclose(alpha, 1 / 3) or p is not None and p != 2.0:
            raise ConfigError("heat_eigen needs n = 1, p = 2")
    elif kind == "ramp":
        data["psi_offset"] = _get(cp, "data", "psi_offset", default=0.0)
        data["psi_slope"] = _floats(cp.get("data", "psi_slope", fallback=",".join(["1"] * n)))
        if len(data["psi_slope"]) != n:
            raise ConfigError("[data] psi_slope needs n entries")
        data["phi_c"] = _get(cp, "data", "phi_c", default=float("nan"))
    else:
        raise ConfigError(f"unknown F kind {kind!r}")

    dirs = {
        "N": _get(cp, "dirs", "N", default=DirectionSet.default(n).N, kind=int),
        "theta_tol": _get(cp, "dirs", "theta_tol", default=1e-4),
        "refinement": cp.get("dirs", "refinement", fallback="local_bracket") if n > 1 else "none",
    }
    h = _get(cp, "grid", "h") if cp.has_option("grid", "h") else None
    if h is not None and not h > 0:
        raise ConfigError("grid h must be positive")

    mc = {
        "M": _get(cp, "mc", "M", default=10000, kind=int),
        "seed": int(seed) if seed is not None else _get(cp, "mc", "seed", default=0, kind=int),
        "player_I": cp.get("mc", "player_I", fallback="greedy"),
        "player_II": cp.get("mc", "player_II", fallback="greedy"),
        "record": _get(cp, "mc", "record", default=False, kind=bool),
    }
    extra: dict = {}
    cfg = RunConfig(subcommand, domain, n, eps_list, p, alpha, T, data, dirs, h, mc, extra,
                    {s: dict(cp.items(s)) for s in cp.sections()})
    cfg.params()  # validates eps, T and the exponent
    cfg.direction_set()

    if subcommand == "simulate":
        if mc["M"] < 2:
            raise ConfigError("M ≥ 2 required")
        for who in ("player_I", "player_II"):
            if mc[who] not in ("greedy", "random", "pull"):
                raise ConfigError(f"unknown strategy {mc[who]!r}")
        starts = _floats(_get(cp, "mc", "start", kind=str))
        if len(starts) % n:
            raise ConfigError("[mc] start needs a multiple of n coordinates")
        mc["start"] = starts
        params = cfg.params()
        K = math.ceil(round(params.T / params.dt, 9))
        mc["t0"] = _get(cp, "mc", "t0", default=K * params.dt)
        pts = np.array(starts).reshape(-1, n)
        if np.any(dist_to_boundary(domain, pts) <= 0):
            raise ConfigError("start points must lie inside the domain")
    elif subcommand == "elliptic":
        extra["elliptic"] = {"tol": _get(cp, "elliptic", "tol", default=1e-9),
                             "max_iter": _get(cp, "elliptic", "max_iter", default=10**6, kind=int)}
    elif subcommand == "asymptotics":
        if kind != "ramp":
            raise ConfigError("asymptotics needs [data] F = ramp")
        K_list = [int(k) for k in _floats(_get(cp, "asymptotics", "K_list", kind=str))]
        if not K_list or min(K_list) < 0:
            raise ConfigError("K_list must hold non-negative levels")
        extra["asymptotics"] = {"K_list": K_list, "tol": _get(cp, "asymptotics", "tol", default=1e-9)}
    elif subcommand == "exit-time":
        if mc["M"] < 2:
            raise ConfigError("M ≥ 2 required")
        ex = {
            "z": _floats(cp.get("exit", "z", fallback=",".join(["0"] * n))),
            "delta_ext": _get(cp, "exit", "delta_ext"),
            "R": _get(cp, "exit", "R"),
            "radii": _floats(_get(cp, "exit", "radii", kind=str)),
        }
        if not 0 < ex["delta_ext"] < ex["R"]:
            raise ConfigError("need 0 < delta_ext < R")
        if any(not ex["delta_ext"] < r <= ex["R"] for r in ex["radii"]):
            raise ConfigError("start radii must lie in (delta_ext, R]")
        extra["exit"] = ex
    elif subcommand == "converge":
        if kind != "heat_eigen":
            raise ConfigError("converge needs a reference solution: [data] F = heat_eigen")
        if h is not None:
            raise ConfigError("converge ties h to eps; leave [grid] h unset")
    elif subcommand == "scan":
        extra["scan"] = {"n_pairs": _get(cp, "scan", "n_pairs", default=1000, kind=int),
                         "seed": int(seed) if seed is not None else _get(cp, "scan", "seed", default=0, kind=int),
                         "radius_hint": _get(cp, "scan", "radius_hint", default=0.1)}
        if kind not in ("heat_eigen", "constant", "linear"):
            raise ConfigError("scan needs Lipschitz data: constant, linear or heat_eigen")
    return cfg


# -- data builders ------------------------------------------------------------------------

def boundary_data(cfg: RunConfig) -> BoundaryData:
    d = cfg.data
    if d["F"] == "constant":
        return BoundaryData.constant(d["c"])
    if d["F"] == "linear":
        slope, off, rate = np.array(d["slope"]), d["offset"], d["rate"]
        L = float(np.linalg.norm(slope)) + abs(rate) * math.sqrt(cfg.T)
        return BoundaryData(lambda X, t: off + X @ slope + rate * t, L=L, name="linear")
    if d["F"] == "heat_eigen":
        return heat_reference(T=cfg.T).boundary_data()
    psi, phi = ramp_parts(cfg)
    return ramp_data(psi, phi, cfg.eps)


def ramp_parts(cfg: RunConfig):
    d = cfg.data
    slope, off = np.array(d["psi_slope"]), d["psi_offset"]

    def psi(X):
        return off + X @ slope

    phi_c = d["phi_c"]
    if math.isnan(phi_c):
        # lower barrier: the minimum of psi over the padded bounding box
        lo, hi = cfg.domain.bounding_box
        lo, hi = lo - cfg.eps, hi + cfg.eps
        phi_c = off + float(np.sum(np.minimum(slope * lo, slope * hi)))

    def phi(X, t):
        return np.full(len(X), phi_c)

    return psi, phi


def _strategy(name, who, u, cfg, oracle_pair):
    if name == "greedy":
        return oracle_pair[0] if who == "I" else oracle_pair[1]
    if name == "random":
        return RandomStrategy(cfg.mc["seed"] + (1 if who == "I" else 2))
    centre = cfg.domain.enclosing_ball[0]
    return pull_strategy(centre)


# -- subcommands --------------------------------------------------------------------------

def _cmd_solve(cfg, out, threads):
    params = cfg.params()
    u = solve_parabolic_dpp(cfg.domain, params, boundary_data(cfg), dirs=cfg.direction_set(),
                            h=cfg.h_for(params.eps), threads=threads)
    write_csv(out / "solution.csv", "grid_function", u.columns(), u.rows())
    return {"header": u.header()}


def _cmd_elliptic(cfg, out, threads):
    params = cfg.params()
    d = cfg.data
    if d["F"] == "ramp":
        psi = ramp_parts(cfg)[0]
    else:
        F = boundary_data(cfg)
        psi = lambda X: F(X, cfg.T)  # noqa: E731
    opts = cfg.extra["elliptic"]
    U = solve_elliptic_dpp(cfg.domain, params, psi, tol=opts["tol"], max_iter=opts["max_iter"],
                           dirs=cfg.direction_set(), h=cfg.h_for(params.eps), threads=threads)
    nodes = U.lattice.nodes()
    cols = [f"x{i + 1}" for i in range(cfg.n)] + ["value"]
    write_csv(out / "elliptic.csv", "elliptic_solution", cols,
              ((*x.tolist(), float(v)) for x, v in zip(nodes, U.values.reshape(-1))))
    return {"iterations": U.iterations, "residual": U.residual, "gap": U.gap}


def _cmd_simulate(cfg, out, threads):
    params = cfg.params()
    F = boundary_data(cfg)
    mc = cfg.mc
    need_u = "greedy" in (mc["player_I"], mc["player_II"])
    u = None
    pair = (None, None)
    if need_u:
        u = solve_parabolic_dpp(cfg.domain, params, F, dirs=cfg.direction_set(),
                                h=cfg.h_for(params.eps), threads=threads)
        pair = greedy_pair(u, cfg.direction_set())
    sI = _strategy(mc["player_I"], "I", u, cfg, pair)
    sII = _strategy(mc["player_II"], "II", u, cfg, pair)
    rng = RngSpec(mc["seed"])
    rows, records = [], []
    starts = np.array(mc["start"]).reshape(-1, cfg.n)
    for i, x in enumerate(starts):
        z0 = SpaceTimePoint(x, mc["t0"])
        mean, err = estimate_value(z0, sI, sII, params, cfg.domain, F, mc["M"], rng, threads=threads)
        u_val = u.evaluate(x, mc["t0"]) if u is not None else float("nan")
        rows.append((i, *x.tolist(), mc["t0"], mc["M"], mean, err, u_val))
        records.append({"start": x.tolist(), "t0": mc["t0"], "mean": mean, "stderr": err, "dpp_value": u_val})
        if mc["record"]:
            batch = simulate_batch(z0, sI, sII, params, cfg.domain, F, rng, mc["M"])
            write_csv(out / f"trajectories_{i}.csv", "trajectories", batch.columns(), batch.rows())
    cols = ["start", *[f"x{j + 1}" for j in range(cfg.n)], "t0", "M", "mean", "stderr", "dpp_value"]
    write_csv(out / "estimates.csv", "value_estimates", cols, rows)
    return {"estimates": records}


def _cmd_exit_time(cfg, out, threads):
    ex = cfg.extra["exit"]
    z = np.array(ex["z"])
    rows = []
    rng = RngSpec(cfg.mc["seed"])
    e_l, d_l, m_l = [], [], []
    for eps in cfg.eps_list:
        params = cfg.params(eps=eps)
        for r in ex["radii"]:
            x0 = z.copy()
            x0[0] += r
            mean, err = annulus_exit_time(x0, z, ex["delta_ext"], ex["R"], params, cfg.mc["M"], rng)
            dist = r - ex["delta_ext"]
            rows.append((eps, params.alpha, r, dist, mean, err, eps**2 * mean / (dist + eps)))
            e_l.append(eps)
            d_l.append(dist)
            m_l.append(mean)
    fit = fit_exit_constant(e_l, d_l, m_l)
    write_csv(out / "exit_time.csv", "exit_time",
              ["eps", "alpha", "r0", "dist", "mean_tau", "stderr", "ratio"], rows)
    return {"C_fit": fit.C, "C_bound": fit.C_bound, "max_rel_dev": fit.max_rel_dev}


def _cmd_asymptotics(cfg, out, threads):
    psi, phi = ramp_parts(cfg)
    opts = cfg.extra["asymptotics"]
    params = cfg.params()
    tab = asymptotic_study(cfg.domain, psi, phi, params, opts["K_list"], h=cfg.h_for(params.eps),
                           dirs=cfg.direction_set(), tol=opts["tol"])
    write_csv(out / "asymptotics.csv", "asymptotics", tab.columns(), tab.csv_rows())
    return {"nondecreasing": tab.nondecreasing, "nonincreasing": tab.nonincreasing,
            "diffs_nonincreasing": tab.diffs_nonincreasing, "elliptic_iterations": tab.elliptic_iterations}


def _cmd_converge(cfg, out, threads):
    ref = heat_reference(T=cfg.T)
    tpl = {"n": cfg.n, "T": cfg.T, "p": cfg.p, "alpha": cfg.alpha}
    table = convergence_study(cfg.domain, ref, cfg.eps_list, tpl, 8, cfg.direction_set(), threads)
    write_csv(out / "errors.csv", "error_table", table.columns(), table.csv_rows())
    return {"verdict": table.verdict, "runtime": [r.runtime for r in table.rows]}


def _cmd_scan(cfg, out, threads):
    F = boundary_data(cfg)
    opts = cfg.extra["scan"]
    spec = ScanSpec(opts["n_pairs"], opts["seed"], opts["radius_hint"])
    rows, reports = [], []
    for eps in cfg.eps_list:
        params = cfg.params(eps=eps)
        u = solve_parabolic_dpp(cfg.domain, params, F, dirs=cfg.direction_set(), h=cfg.h_for(eps), threads=threads)
        rep = boundary_modulus_scan(u, F, cfg.domain, params, spec)
        rows.append((eps, rep.max_ratio_lateral, rep.max_ratio_initial, rep.max_ratio_interior, rep.max_ratio))
        reports.append({"eps": eps, **rep.as_dict()})
    write_csv(out / "scan.csv", "modulus_scan",
              ["eps", "max_ratio_lateral", "max_ratio_initial", "max_ratio_interior", "max_ratio"], rows)
    return {"reports": reports}


COMMANDS = {
    "solve": _cmd_solve,
    "elliptic": _cmd_elliptic,
    "simulate": _cmd_simulate,
    "exit-time": _cmd_exit_time,
    "asymptotics": _cmd_asymptotics,
    "converge": _cmd_converge,
    "scan": _cmd_scan,
}


def run(cfg: RunConfig, out, threads: int = 1) -> int:
    """Execute a validated configuration, writing CSV data and JSON metadata into ``out``."""
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        logger.error("output directory %s is not writable: %s", out, exc)
        return EXIT_VALIDATION
    start = time.perf_counter()
    try:
        summary = COMMANDS[cfg.subcommand](cfg, out, threads)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_VALIDATION
    except (ConvergenceError, OutOfDomainError, RuntimeError, FloatingPointError) as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    wall = time.perf_counter() - start
    write_json(out / f"{cfg.subcommand}.json", cfg.subcommand,
               {"version": __version__, "config": cfg.echo(), "threads": threads, "wall_time": wall,
                "summary": summary})
    return EXIT_OK


def _threads(arg: int | None) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("TOWPDE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"TOWPDE_THREADS={env!r} is not an integer") from None
    return 1


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="towpde", description="Tug-of-war DPP solver and game simulator")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="INI configuration file")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="overrides the configured seed")
    ap.add_argument("--threads", type=int, default=None, help="worker cap (env TOWPDE_THREADS)")
    ap.add_argument("--quiet", action="store_true")
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        threads = _threads(args.threads)
        cfg = load_config(args.config, args.subcommand, args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return run(cfg, args.out, threads)


if __name__ == "__main__":
    sys.exit(main())
