"""Command line interface.

    hawkes-queue <command> --config run.json [--out path|-] [--format csv|json]
                 [--seed N] [--reps N] [--compare sim:N]

Commands: moments, autocov, simulate, cgf, control, click-impact, selftest.

Exit codes: 0 success, 1 configuration error, 2 numerical error,
3 non-convergence, 4 selftest failure.

Configs are JSON. Rates may be given as numbers or decimal strings; they are
read as exact decimals and echoed back in the same form.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation

import numpy as np

from . import applications, control, det_queue, generating, queue_moments, simulate
from .errors import CgfBlowup, ConfigError, NoConvergence, NumericError
from .hawkes_core import HawkesParams, autocov_count
from .phase_type import PhaseTypeDist, erlang, exponential, hyperexp, new

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_NOCONV, EXIT_SELFTEST = 0, 1, 2, 3, 4

COMMANDS = ("moments", "autocov", "simulate", "cgf", "control", "click-impact", "selftest")


# ------------------------------------------------------------------ config

def _dec(value, where):
    if isinstance(value, bool) or value is None:
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    try:
        d = Decimal(str(value)) if not isinstance(value, Decimal) else value
    except InvalidOperation:
        raise ConfigError(f"{where}: {value!r} is not a decimal number") from None
    if not d.is_finite():
        raise ConfigError(f"{where}: must be finite")
    return d


def _pos(value, where):
    d = _dec(value, where)
    if d <= 0:
        raise ConfigError(f"{where}: must be positive, got {d}")
    return d


def _nonneg(value, where):
    d = _dec(value, where)
    if d < 0:
        raise ConfigError(f"{where}: must be nonnegative, got {d}")
    return d


def _int(value, where, lo=0):
    if isinstance(value, bool) or not isinstance(value, (int, Decimal, str)):
        raise ConfigError(f"{where}: expected an integer")
    try:
        d = Decimal(str(value))
    except InvalidOperation:
        raise ConfigError(f"{where}: expected an integer") from None
    if d != d.to_integral_value() or d < lo:
        raise ConfigError(f"{where}: expected an integer >= {lo}")
    return int(d)


def _grid(spec, where):
    if isinstance(spec, dict):
        start = _nonneg(spec.get("start", 0), f"{where}.start")
        stop = _nonneg(spec.get("stop"), f"{where}.stop")
        num = _int(spec.get("num"), f"{where}.num", 1)
        if num == 1:
            vals = [stop]
        else:
            step = (stop - start) / (num - 1)
            vals = [start + i * step for i in range(num)]
    elif isinstance(spec, list):
        vals = [_nonneg(v, f"{where}[{i}]") for i, v in enumerate(spec)]
    else:
        raise ConfigError(f"{where}: expected a list or {{start, stop, num}}")
    if not vals:
        raise ConfigError(f"{where}: grid is empty")
    if any(b < a for a, b in zip(vals, vals[1:])):
        raise ConfigError(f"{where}: grid must be sorted")
    return tuple(vals)


_SERVICE_FIELDS = {
    "exponential": {"mu": _pos},
    "erlang": {"n": None, "mu": _pos},
    "hyperexp": {"theta": None, "mus": None},
    "phase_type": {"S": None, "theta": None},
    "deterministic": {"length": _pos},
    "lognormal": {"mean": _pos, "variance": _nonneg},
}


def _service(spec, where="service"):
    if spec is None:
        return None
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(f"{where}: expected an object with a 'type' field")
    kind = spec["type"]
    if kind not in _SERVICE_FIELDS:
        raise ConfigError(f"{where}.type: unknown service {kind!r}; "
                          f"expected one of {sorted(_SERVICE_FIELDS)}")
    out = {"type": kind}
    for name, conv in _SERVICE_FIELDS[kind].items():
        if name not in spec:
            raise ConfigError(f"{where}.{name}: missing")
        v = spec[name]
        w = f"{where}.{name}"
        if conv is not None:
            out[name] = conv(v, w)
        elif name == "n":
            out[name] = _int(v, w, 1)
        elif name == "S":
            if not isinstance(v, list) or not all(isinstance(r, list) for r in v):
                raise ConfigError(f"{w}: expected a matrix (list of rows)")
            out[name] = tuple(tuple(_dec(x, f"{w}[{i}][{j}]") for j, x in enumerate(r))
                              for i, r in enumerate(v))
        else:
            if not isinstance(v, list):
                raise ConfigError(f"{w}: expected a list")
            chk = _pos if name == "mus" else _nonneg
            out[name] = tuple(chk(x, f"{w}[{i}]") for i, x in enumerate(v))
    extra = set(spec) - set(_SERVICE_FIELDS[kind]) - {"type"}
    if extra:
        raise ConfigError(f"{where}: unknown fields {sorted(extra)}")
    return out


def _arrivals(spec):
    if not isinstance(spec, dict):
        raise ConfigError("arrivals: expected an object")
    out = {
        "baseline": _pos(spec.get("baseline"), "arrivals.baseline"),
        "jump": _nonneg(spec.get("jump"), "arrivals.jump"),
        "decay": _pos(spec.get("decay"), "arrivals.decay"),
    }
    if spec.get("initial_intensity") is not None:
        out["initial_intensity"] = _nonneg(spec["initial_intensity"], "arrivals.initial_intensity")
    else:
        out["initial_intensity"] = out["baseline"]
    extra = set(spec) - {"baseline", "jump", "decay", "initial_intensity"}
    if extra:
        raise ConfigError(f"arrivals: unknown fields {sorted(extra)}")
    return out


_CONTROL_FIELDS = {"mu_I": _pos, "r_O": _nonneg, "r_I": _nonneg, "c": _nonneg, "k": _nonneg,
                   "w": _nonneg, "horizon": _pos, "q_O0": _nonneg, "q_I0": _nonneg}


def _control(spec):
    if spec is None:
        return None
    if not isinstance(spec, dict):
        raise ConfigError("control: expected an object")
    out = {}
    for name, conv in _CONTROL_FIELDS.items():
        if name in spec:
            out[name] = conv(spec[name], f"control.{name}")
        elif name in ("q_O0", "q_I0"):
            out[name] = Decimal(0)
        else:
            raise ConfigError(f"control.{name}: missing")
    out["grid_points"] = _int(spec.get("grid_points", 1001), "control.grid_points", 2)
    extra = set(spec) - set(_CONTROL_FIELDS) - {"grid_points"}
    if extra:
        raise ConfigError(f"control: unknown fields {sorted(extra)}")
    return out


def _click(spec):
    if spec is None:
        return None
    if not isinstance(spec, dict):
        raise ConfigError("click: expected an object")
    return {"mu": _pos(spec.get("mu"), "click.mu"), "m": _nonneg(spec.get("m", 1), "click.m")}


def _deltas(spec):
    if spec is None:
        return ()
    if not isinstance(spec, list) or not all(isinstance(r, list) for r in spec):
        raise ConfigError("deltas: expected a list of vectors")
    return tuple(tuple(_dec(x, f"deltas[{i}][{j}]") for j, x in enumerate(r))
                 for i, r in enumerate(spec))


@dataclass(frozen=True)
class RunConfig:
    arrivals: dict
    service: dict | None = None
    times: tuple = ()
    lags: tuple = ()
    deltas: tuple = ()
    reps: int = 1000
    seed: int = 0
    n_jobs: int = 1
    control: dict | None = None
    click: dict | None = None

    KEYS = ("arrivals", "service", "times", "lags", "deltas", "reps", "seed", "n_jobs",
            "control", "click")

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config: top level must be an object")
        unknown = set(d) - set(cls.KEYS)
        if unknown:
            raise ConfigError(f"config: unknown fields {sorted(unknown)}")
        if "arrivals" not in d:
            raise ConfigError("arrivals: missing")
        return cls(
            arrivals=_arrivals(d["arrivals"]),
            service=_service(d.get("service")),
            times=_grid(d["times"], "times") if "times" in d else (),
            lags=_grid(d["lags"], "lags") if "lags" in d else (),
            deltas=_deltas(d.get("deltas")),
            reps=_int(d.get("reps", 1000), "reps", 2),
            seed=_int(d.get("seed", 0), "seed", 0),
            n_jobs=_int(d.get("n_jobs", 1), "n_jobs", 1),
            control=_control(d.get("control")),
            click=_click(d.get("click")),
        )

    def to_dict(self):
        def enc(v):
            if isinstance(v, Decimal):
                return str(v)
            if isinstance(v, (tuple, list)):
                return [enc(x) for x in v]
            if isinstance(v, dict):
                return {k: enc(x) for k, x in v.items()}
            return v

        out = {"arrivals": enc(self.arrivals)}
        if self.service is not None:
            out["service"] = enc(self.service)
        for name in ("times", "lags", "deltas"):
            if getattr(self, name):
                out[name] = enc(getattr(self, name))
        out.update(reps=self.reps, seed=self.seed, n_jobs=self.n_jobs)
        if self.control is not None:
            out["control"] = enc(self.control)
        if self.click is not None:
            out["click"] = enc(self.click)
        return out

    # ---- model objects

    def hawkes(self) -> HawkesParams:
        a = self.arrivals
        try:
            return HawkesParams(float(a["baseline"]), float(a["jump"]), float(a["decay"]),
                                float(a["initial_intensity"]))
        except ConfigError as exc:
            raise ConfigError(f"arrivals: {exc}") from None

    def service_object(self):
        s = self.service
        if s is None:
            raise ConfigError("service: required for this command")
        f = lambda v: float(v)
        try:
            kind = s["type"]
            if kind == "exponential":
                return exponential(f(s["mu"]))
            if kind == "erlang":
                return erlang(s["n"], f(s["mu"]))
            if kind == "hyperexp":
                return hyperexp([f(x) for x in s["theta"]], [f(x) for x in s["mus"]])
            if kind == "phase_type":
                return new(np.array([[f(x) for x in r] for r in s["S"]]),
                           np.array([f(x) for x in s["theta"]]))
            if kind == "deterministic":
                return simulate.Deterministic(f(s["length"]))
            return simulate.Lognormal(f(s["mean"]), f(s["variance"]))
        except ConfigError as exc:
            raise ConfigError(f"service: {exc}") from None

    def require(self, *names):
        for n in names:
            if not getattr(self, n):
                raise ConfigError(f"{n}: required for this command")

    def float_times(self):
        return [float(t) for t in self.times]


def load_config(text: str) -> RunConfig:
    try:
        d = json.loads(text, parse_float=Decimal)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return RunConfig.from_dict(d)


# ------------------------------------------------------------------ output

def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


@dataclass
class Table:
    columns: list
    rows: list
    summary: dict = field(default_factory=dict)

    def csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([fmt(v) for v in r])
        return buf.getvalue()

    def json(self):
        def conv(v):
            if isinstance(v, (np.floating, float)):
                return float(v) if np.isfinite(v) else fmt(v)
            if isinstance(v, (np.integer,)):
                return int(v)
            if isinstance(v, np.bool_):
                return bool(v)
            return v

        rows = [{c: conv(v) for c, v in zip(self.columns, r)} for r in self.rows]
        return json.dumps({"summary": self.summary, "rows": rows}, indent=1, sort_keys=True) + "\n"


def _compare_reps(spec):
    if spec is None:
        return 0
    if not spec.startswith("sim:"):
        raise ConfigError(f"--compare: expected sim:<reps>, got {spec!r}")
    try:
        n = int(spec[4:])
    except ValueError:
        raise ConfigError(f"--compare: bad replication count in {spec!r}") from None
    if n < 2:
        raise ConfigError("--compare: at least 2 replications")
    return n


# ---------------------------------------------------------------- commands

def _z(est, exact):
    return est.z(exact)


def cmd_moments(cfg: RunConfig, compare=0) -> Table:
    cfg.require("times")
    p = cfg.hawkes()
    sv = cfg.service_object()
    times = cfg.float_times()
    rows = []
    if isinstance(sv, simulate.Deterministic):
        dm = det_queue.DetQueueModel(p, sv.length)
        cols = ["t", "mean_total", "var_total", "source"]
        for t in times:
            rows.append([t, det_queue.mean(dm, t), det_queue.variance(dm, t), "closed"])
        n = 1
    elif isinstance(sv, simulate.Lognormal):
        raise ConfigError("service: lognormal service has no closed-form moments; use simulate")
    else:
        m = queue_moments.QueueModel(p, sv)
        n = m.n
        cols = (["t"] + [f"mean_{i + 1}" for i in range(n)] + ["mean_total"]
                + [f"var_{i + 1}" for i in range(n)] + ["var_total"]
                + [f"cov_lq_{i + 1}" for i in range(n)] + ["source"])
        for t in times:
            if p.is_stable():
                E, c, X, src = queue_moments.moments(m, t)
            else:
                (E, c, X), src = queue_moments.ode_reference(m, t), "ode"
            rows.append([t, *E, E.sum(), *np.diag(X), X.sum(), *c, src])
    summary = {"command": "moments", "config": cfg.to_dict()}
    if compare:
        data = simulate.run_replications(p, sv, max(times), [t for t in times if t > 0] or times,
                                         compare, cfg.seed, cfg.n_jobs)
        cols = cols + ["sim_mean_total", "sim_mean_se", "z_mean", "sim_var_total", "sim_var_se",
                       "z_var"]
        for r in rows:
            t = r[0]
            if t == 0:
                r.extend([0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
                continue
            em = simulate.evaluate(data, simulate.Statistic("mean_q", t=t))
            ev = simulate.evaluate(data, simulate.Statistic("var_q", t=t))
            mt, vt = r[cols.index("mean_total")], r[cols.index("var_total")]
            r.extend([em.point, em.std_error, _z(em, mt), ev.point, ev.std_error, _z(ev, vt)])
        summary.update(compare_reps=compare, seed=cfg.seed)
    return Table(cols, rows, summary)


def cmd_autocov(cfg: RunConfig, compare=0) -> Table:
    cfg.require("times", "lags")
    p = cfg.hawkes()
    times = cfg.float_times()
    lags = [float(x) for x in cfg.lags]
    sv = cfg.service_object() if cfg.service is not None else None
    if sv is None:
        what = "count"
        f = lambda t, tau: autocov_count(p, t, tau)
    elif isinstance(sv, simulate.Deterministic):
        what = "queue"
        dm = det_queue.DetQueueModel(p, sv.length)
        f = lambda t, tau: det_queue.autocov(dm, t, tau)
    elif isinstance(sv, simulate.Lognormal):
        raise ConfigError("service: lognormal service has no closed-form autocovariance")
    else:
        what = "queue"
        m = queue_moments.QueueModel(p, sv)
        f = lambda t, tau: float(queue_moments.autocov_q(m, t, tau).sum())
    cols = ["t", "tau", "value", "std_error", "source"]
    rows = []
    for t in times:
        for tau in lags:
            rows.append([t, tau, 0.0 if tau > t else f(t, tau), None, "closed"])
    summary = {"command": "autocov", "quantity": what, "config": cfg.to_dict()}
    if compare:
        probes = sorted({round(x, 12) for t in times for tau in lags if tau <= t
                         for x in (t, t - tau)})
        svc = sv if sv is not None else simulate.Deterministic(1.0)
        data = simulate.run_replications(p, svc, max(times), probes, compare, cfg.seed, cfg.n_jobs)
        name = "autocov" if sv is not None else "autocov_N"
        for t in times:
            for tau in lags:
                if tau > t:
                    rows.append([t, tau, 0.0, 0.0, "sim"])
                    continue
                e = simulate.evaluate(data, simulate.Statistic(name, t=round(t, 12),
                                                               tau=round(t, 12) - round(t - tau, 12)))
                rows.append([t, tau, e.point, e.std_error, "sim"])
        summary.update(compare_reps=compare, seed=cfg.seed)
    return Table(cols, rows, summary)


def cmd_simulate(cfg: RunConfig, compare=0) -> Table:
    cfg.require("times")
    p = cfg.hawkes()
    sv = cfg.service_object() if cfg.service is not None else simulate.Deterministic(1.0)
    times = cfg.float_times()
    data = simulate.run_replications(p, sv, max(times), times, cfg.reps, cfg.seed, cfg.n_jobs)
    cols = ["t", "mean_lambda", "mean_lambda_se", "mean_N", "mean_N_se", "var_N", "var_N_se"]
    if cfg.service is not None:
        cols += ["mean_q", "mean_q_se", "var_q", "var_q_se", "cov_lq", "cov_lq_se"]
    rows = []
    for t in times:
        r = [t]
        names = ["mean_lambda", "mean_N", "var_N"]
        if cfg.service is not None:
            names += ["mean_q", "var_q", "cov_lq"]
        for nm in names:
            e = simulate.evaluate(data, simulate.Statistic(nm, t=t))
            r += [e.point, e.std_error]
        rows.append(r)
    summary = {"command": "simulate", "reps": cfg.reps, "seed": cfg.seed,
               "config": cfg.to_dict()}
    return Table(cols, rows, summary)


def cmd_cgf(cfg: RunConfig, compare=0) -> Table:
    cfg.require("times", "deltas")
    p = cfg.hawkes()
    sv = cfg.service_object()
    if not isinstance(sv, PhaseTypeDist):
        raise ConfigError("service: the generating function needs phase-type service")
    m = queue_moments.QueueModel(p, sv)
    cols = ["delta", "t", "G", "blowup", "blowup_time"]
    rows = []
    nblow = 0
    for d in cfg.deltas:
        dv = np.array([float(x) for x in d])
        label = ";".join(str(x) for x in d)
        for t in cfg.float_times():
            try:
                G = generating.cgf(m, generating.CgfQuery(dv, t))
                rows.append([label, t, G, False, None])
            except CgfBlowup as exc:
                nblow += 1
                rows.append([label, t, float("inf"), True, exc.blowup_time])
    summary = {"command": "cgf", "blowups": nblow, "config": cfg.to_dict()}
    return Table(cols, rows, summary)


def control_problem(cfg: RunConfig) -> control.ControlProblem:
    if cfg.control is None:
        raise ConfigError("control: required for this command")
    c = cfg.control
    kw = {k: float(v) for k, v in c.items() if k != "grid_points"}
    return control.ControlProblem(cfg.hawkes(), grid_points=c["grid_points"], **kw)


def cmd_control(cfg: RunConfig, compare=0) -> Table:
    prob = control_problem(cfg)
    sol = control.solve(prob)
    cols = ["t", "mu_star", "mean_q_O", "mean_q_I", "mean_lambda", "gamma1", "gamma2", "gamma3"]
    rows = [[t, mu, *x, *g] for t, mu, x, g in zip(sol.grid, sol.mu_star, sol.states, sol.adjoints)]
    summary = {"command": "control", "objective": sol.objective, "converged": sol.converged,
               "iterations": sol.iterations, "stationarity": sol.stationarity,
               "objective_history": sol.history, "config": cfg.to_dict()}
    t = Table(cols, rows, summary)
    t.converged = sol.converged
    return t


def cmd_click(cfg: RunConfig, compare=0) -> Table:
    cfg.require("times")
    if cfg.click is None:
        raise ConfigError("click: required for this command")
    p = cfg.hawkes()
    mu = float(cfg.click["mu"])
    mrate = float(cfg.click["m"])
    cols = ["T", "count_gap", "count_gap_limit", "dwell_time", "revenue_gap", "revenue_gap_limit"]
    rows = []
    for T in cfg.float_times():
        q = applications.ClickImpactQuery(p, mu, mrate, T)
        rows.append([T, applications.count_gap(p, T), applications.count_gap_limit(p),
                     applications.dwell_time(q), applications.revenue_gap(q),
                     applications.revenue_gap_limit(q)])
    summary = {"command": "click-impact", "config": cfg.to_dict()}
    if compare:
        cols += ["sim_count_gap", "sim_count_gap_se", "sim_revenue_gap", "sim_revenue_gap_se"]
        for r in rows:
            if r[0] == 0:
                r.extend([1.0, 0.0, 0.0, 0.0])
                continue
            gn, gd = simulate.click_gap(p, mu, r[0], compare, cfg.seed)
            r.extend([gn.point, gn.std_error, mrate * gd.point, mrate * gd.std_error])
        summary.update(compare_reps=compare, seed=cfg.seed)
    return Table(cols, rows, summary)


def cmd_selftest(reps=None, out=sys.stdout) -> bool:
    from . import acceptance
    results = acceptance.run_all(reps=reps, stream=out)
    return all(r.passed for r in results)


DISPATCH = {"moments": cmd_moments, "autocov": cmd_autocov, "simulate": cmd_simulate,
            "cgf": cmd_cgf, "control": cmd_control, "click-impact": cmd_click}


def build_parser():
    ap = argparse.ArgumentParser(prog="hawkes-queue",
                                 description="Hawkes-driven infinite-server queue analytics.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--reps", type=int, help="override the replication count")
    ap.add_argument("--out", "-o", default="-", help="output path, '-' for stdout")
    ap.add_argument("--compare", help="append simulation columns, e.g. sim:100000")
    ap.add_argument("--format", choices=("csv", "json"), default="csv")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            return EXIT_OK if cmd_selftest(args.reps) else EXIT_SELFTEST
        if not args.config:
            raise ConfigError("--config is required")
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        cfg = load_config(text)
        over = {}
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be nonnegative")
            over["seed"] = args.seed
        if args.reps is not None:
            if args.reps < 2:
                raise ConfigError("--reps must be at least 2")
            over["reps"] = args.reps
        if over:
            cfg = RunConfig(**{**cfg.__dict__, **over})
        table = DISPATCH[args.command](cfg, _compare_reps(args.compare))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoConvergence as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    except NumericError as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    text = table.json() if args.format == "json" else table.csv()
    if args.out == "-":
        sys.stdout.write(text)
        if args.format == "csv":
            print(json.dumps(table.summary, sort_keys=True, default=fmt), file=sys.stderr)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
        if args.format == "csv":
            with open(args.out + ".summary.json", "w") as fh:
                json.dump(table.summary, fh, indent=1, sort_keys=True, default=fmt)
                fh.write("\n")
    if getattr(table, "converged", True) is False:
        print("no convergence: control sweep hit the iteration cap", file=sys.stderr)
        return EXIT_NOCONV
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
