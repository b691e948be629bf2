"""Command-line experiment runner.

Every command evaluates a list of metrics ``(name, value, relation, bound)``
and writes ``<out>/<command>.csv`` and ``<out>/<command>.json``. The exit
code is 0 when every metric passes, 1 on a metric failure or numerical
error, and 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import absorb, connection, halfline, lift
from .cstar import delta_norm
from .config import ExperimentConfig, load_config
from .errors import AbsorbError, ConfigError
from .module import gram, normalization_excess, rescale
from .opcore import hermitian_residual, op_norm

__all__ = ["Metric", "RunReport", "run", "main", "COMMANDS"]

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Metric:
    name: str
    value: float
    relation: str = "info"  # one of <=, <, >=, >, info
    bound: float | None = None
    keys: tuple = ()

    @property
    def passed(self):
        v, b = self.value, self.bound
        if self.relation == "info":
            return True
        if not np.isfinite(v):
            return False
        return {"<=": v <= b, "<": v < b, ">=": v >= b, ">": v > b}[self.relation]


@dataclass
class RunReport:
    experiment: str
    parameters: dict
    metrics: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def passed(self):
        return not self.errors and all(m.passed for m in self.metrics)

    def failures(self):
        return [m for m in self.metrics if not m.passed]

    def to_json(self):
        return {
            "experiment": self.experiment,
            "parameters": self.parameters,
            "pass": self.passed,
            "wall_time": self.wall_time,
            "errors": self.errors,
            "metrics": [
                {"name": m.name, "keys": dict(m.keys), "value": m.value,
                 "relation": m.relation, "bound": m.bound, "pass": m.passed}
                for m in self.metrics
            ],
        }


class _Collector:
    """Accumulates metrics for one unit of work (typically one instance)."""

    def __init__(self, **keys):
        self.keys = keys
        self.metrics = []

    def add(self, name, value, relation="info", bound=None, **keys):
        allkeys = dict(self.keys, **keys)
        self.metrics.append(Metric(name, float(value), relation,
                                   None if bound is None else float(bound),
                                   tuple(allkeys.items())))


def _sort_key(metric, columns):
    keys = dict(metric.keys)
    out = []
    for c in columns:
        v = keys.get(c, "")
        out.append((0, v, "") if isinstance(v, (int, float)) else (1, 0, str(v)))
    return tuple(out) + ((1, 0, metric.name),)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_outputs(report: RunReport, columns, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cols = list(columns) + ["metric", "value", "relation", "bound", "pass"]
    buf = io.StringIO()
    buf.write(f"#schema=absorbtk.{report.experiment}.v{SCHEMA_VERSION}:{','.join(cols)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for m in sorted(report.metrics, key=lambda m: _sort_key(m, columns)):
        keys = dict(m.keys)
        w.writerow([_fmt(keys.get(c)) for c in columns]
                   + [m.name, _fmt(m.value), m.relation, _fmt(m.bound), int(m.passed)])
    (out_dir / f"{report.experiment}.csv").write_text(buf.getvalue())
    (out_dir / f"{report.experiment}.json").write_text(json.dumps(report.to_json(), indent=2) + "\n")


def _map(cfg, fn, items):
    if cfg.threads == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        return list(pool.map(fn, items))


def _decreasing(col, name, values):
    """Strict decrease of a sequence; exact-zero sequences pass trivially."""
    vals = np.asarray(values, dtype=float)
    ratio = float(np.max(vals[1:] / vals[:-1])) if np.all(vals[:-1] > 0) else float("inf")
    col.add(name, ratio, "<", 1.0)


def _rng(cfg, idx):
    return np.random.default_rng([cfg.seed, idx])


# --- commands ------------------------------------------------------------------

def _instances_cell(cfg, idx, label, ctx, pres):
    col = _Collector(instance=label)
    tol = cfg.tolerances
    G = gram(pres)
    col.add("membership_max", float(np.max(G.membership)), "<=", 1e-8)
    lam = np.linalg.eigvalsh(G.data)
    col.add("gram_min_eig", lam[0], ">=", -1e-10)
    col.add("gram_max_eig", lam[-1])
    col.add("gram_symmetry", hermitian_residual(G.data), "<=", tol["hermitian"])
    rp = rescale(pres)
    col.add("normalization_excess", normalization_excess(rp), "<=", 1.0 + tol["normalization"])
    Gr = np.linalg.eigvalsh(gram(rp).data)
    col.add("rescaled_min_eig", Gr[0])
    col.add("rescaled_max_eig", Gr[-1])
    col.add("omega_dim", connection.omega_algebra(ctx).dim)
    col.add("dimension", ctx.d)
    col.add("generators", pres.J)
    return col.metrics


def _invertible(sys):
    g_min, g_max = sys.gram_extremes
    return g_min > 1e-10 * max(1.0, g_max)


def _absorb_cell(cfg, idx, label, ctx, pres):
    col = _Collector(instance=label)
    tol = cfg.tolerances
    pres = rescale(pres)
    G = gram(pres).data
    depth = max(cfg.chain_max, 2 * max(cfg.levels))
    chain = absorb.resolvent_chain(G, depth)
    tel = absorb.telescoping_residuals(chain)[3:cfg.chain_max]
    col.add("telescoping_max", tel.max(), "<=", tol["telescoping"], N=cfg.chain_max)
    Ns = np.arange(1, depth + 1)
    scaled = (absorb.isometry_defects_by_level(chain) * Ns)[:cfg.chain_max]
    col.add("dfct_times_N_max", scaled.max(), "<=", 1.0 + tol["dfct_slack"], N=cfg.chain_max)
    identity = np.allclose(G, np.eye(len(G)), rtol=0, atol=1e-15)
    rng = _rng(cfg, idx)
    eta = rng.standard_normal((len(G), ctx.d)) + 1j * rng.standard_normal((len(G), ctx.d))
    tails = []
    for N in cfg.levels:
        sys_ = absorb.build_isometry(pres, N, chain)
        col.add("dfct", sys_.dfct, "<=", 1.0 / N, N=N)
        if identity:
            col.add("dfct_identity_error", abs(sys_.dfct - 1.0 / (N + 1)), "<=", tol["zero"], N=N)
        kr = absorb.build_K(sys_, dense=False)
        col.add("KP_commutator", kr.commutator_residual, "<=", tol["commutator"], N=N)
        if _invertible(sys_):
            col.add("lambda_min_WKW", kr.lambda_min, ">", 0.0, N=N)
            # the defect bound scales like dfct * kappa / min(1, ||G||); it is
            # attained for G = I, hence the rounding allowance
            bound = sys_.dfct * sys_.coefficient_norm(eta) * sys_.condition / min(1.0, sys_.gram_extremes[1])
            col.add("frame_reconstruction", sys_.frame_reconstruction_residual(eta), "<=",
                    bound * (1 + 1e-9), N=N)
        else:
            col.add("lambda_min_WKW", kr.lambda_min, N=N)
        tail = absorb.diff_compact_tail(sys_, N, 2 * N)
        bound, _ = absorb.tail_level_bound(sys_, N, 2 * N)
        col.add("tail", tail, "<=", bound + 1e-14, N=N)
        tails.append(tail)
    if ctx.is_trivial_derivation:
        col.add("tail_max", max(tails), "<=", tol["zero"], N=max(cfg.levels))
    elif len(tails) > 1:
        _decreasing(col, "tail_ratio_max", tails)
    return col.metrics


def _decay_cell(cfg, idx, label, ctx, pres):
    col = _Collector(instance=label)
    tol = cfg.tolerances
    lo, hi = cfg.decay_range
    pres = rescale(pres)
    sys_ = absorb.build_isometry(pres, hi)
    prof = absorb.decay_profile(sys_, range(lo, hi + 1), double_check=True)
    col.add("engine_agreement", prof.agreement, "<=", tol["agreement"], n=hi)
    if prof.exact_zero:
        col.add("exact_zero", 1.0)
        col.add("r_max", float(prof.r.max()), "<=", tol["zero"], n=hi)
        return col.metrics
    ref = prof.r[0] * prof.n[0] ** 0.8
    for n, r, ri in prof.rows():
        col.add("r_n", r, "<=", tol["decay_growth"] * ref / n ** 0.8, n=n)
    col.add("slope", prof.slope, ">=", -1.2, n=hi)
    col.add("slope", prof.slope, "<=", -0.8, n=hi)
    col.add("slope_full_range", prof.slope_full, n=lo)
    return col.metrics


def _pad(sys_, x):
    out = np.zeros((sys_.W.shape[0], sys_.d), dtype=complex)
    out[:len(x)] = x
    return out


def _random_algebra_element(ctx, rng):
    a = (rng.standard_normal(ctx.dim) + 1j * rng.standard_normal(ctx.dim)) @ ctx.frame
    a = a.reshape(ctx.d, ctx.d)
    return a / op_norm(a)


def _connection_cell(cfg, idx, label, ctx, pres):
    col = _Collector(instance=label)
    tol = cfg.tolerances
    pres = rescale(pres)
    rng = _rng(cfg, idx)
    chain = absorb.resolvent_chain(gram(pres).data, max(cfg.levels))
    first = absorb.build_isometry(pres, cfg.levels[0], chain)
    x = connection.random_smooth_input(first, rng)[:pres.J * ctx.d]
    y = connection.random_smooth_input(first, rng)[:pres.J * ctx.d]
    a = _random_algebra_element(ctx, rng)
    a_norm = delta_norm(ctx, a)
    col.add("omega_dim", connection.omega_algebra(ctx).dim)
    trivial = ctx.is_trivial_derivation
    leib, herm = [], []
    for N in cfg.levels:
        s = absorb.build_isometry(pres, N, chain)
        xi = connection.smooth_sample(s, _pad(s, x))
        eta = connection.smooth_sample(s, _pad(s, y))
        L = connection.leibniz_residual(s, xi, a)
        H = connection.hermitian_residual(s, xi, eta)
        leib.append(L)
        herm.append(H)
        if trivial:
            col.add("leibniz", L, "<=", tol["zero"], N=N)
            col.add("hermitian", H, "<=", tol["zero"], N=N)
        elif _invertible(s):
            bound = connection.connection_bound(s, xi, a_norm)
            col.add("leibniz", L, "<=", bound, N=N)
            col.add("hermitian", H, "<=", bound, N=N)
        else:
            col.add("leibniz", L, N=N)
            col.add("hermitian", H, N=N)
        # slots recomputed one frame vector at a time
        gv = connection.grassmann(s, xi)
        alt = sum(s.frame_vector(k) @ ctx.commutator(s.frame_vector(k).conj().T @ s.G @ xi)
                  for k in range(1, N * pres.J + 1))
        col.add("grassmann_paths", op_norm(gv.coefficients() - alt), "<=", tol["hermitian"], N=N)
        col.add("inner_membership", ctx.membership_residual(xi.conj().T @ s.G @ eta), "<=", 1e-8, N=N)
    if not trivial and len(cfg.levels) > 1:
        _decreasing(col, "leibniz_ratio_max", leib)
        _decreasing(col, "hermitian_ratio_max", herm)
    return col.metrics


def _lift_cell(cfg, idx, label, ctx, pres):
    col = _Collector(instance=label)
    tol = cfg.tolerances
    pres = rescale(pres)
    rng = _rng(cfg, idx)
    chain = absorb.resolvent_chain(gram(pres).data, max(cfg.levels))
    first = absorb.build_isometry(pres, cfg.levels[0], chain)
    x = connection.random_smooth_input(first, rng)[:pres.J * ctx.d]
    eta = rng.standard_normal(ctx.d) + 1j * rng.standard_normal(ctx.d)
    lvc = []
    for N in cfg.levels:
        s = absorb.build_isometry(pres, N, chain)
        ls = lift.lift_system(s)
        L = lift.lift_operator(ls)
        col.add("lift_hermitian", hermitian_residual(L), "<=", tol["hermitian"], N=N)
        xi = connection.smooth_sample(s, _pad(s, x))
        lvc.append(lift.lift_vs_connection(ls, xi, eta))
        col.add("lift_vs_connection", lvc[-1], N=N)
        reg = lift.regularized_lift(ls)
        col.add("regularizer_commutator", reg.commutator_residual, "<=", tol["commutator"], N=N)
        col.add("regularized_hermitian", reg.hermitian_residual, "<=", tol["hermitian"], N=N)
        col.add("delta_w_range", reg.range_residual, "<=", tol["commutator"], N=N)
        col.add("delta_w_embedding", reg.embedding_defect, N=N)
        if _invertible(s):
            col.add("lambda_min_delta", reg.lambda_min, ">", 0.0, N=N)
        else:
            col.add("lambda_min_delta", reg.lambda_min, N=N)
        li = lift.lift_operator(lift.lift_system(s, np.eye(ctx.d)))
        gh = ls.G_half
        ident = op_norm(gh @ (li - np.eye(len(li))) @ gh)
        col.add("identity_lift_defect", abs(ident - s.dfct), "<=", tol["zero"], N=N)
    if len(lvc) > 1 and max(lvc) > 0:
        _decreasing(col, "lift_vs_connection_ratio_max", lvc)

    # GNS localization: faithful, pure and a random rank-2 state
    d = ctx.d
    a = _random_algebra_element(ctx, rng)
    faithful, _ = lift.gns_localize(ctx, np.eye(d) / d)
    col.add("gns_faithful_dim", faithful.dimension, ">=", ctx.dim)
    col.add("gns_faithful_dim", faithful.dimension, "<=", ctx.dim)
    col.add("gns_isometric", abs(op_norm(faithful.rep(a)) - op_norm(a)), "<=", tol["gns"])
    pure = np.zeros((d, d))
    pure[0, 0] = 1.0
    states = {"faithful": faithful, "pure": lift.gns_localize(ctx, pure)[0]}
    if ctx.dim == d * d:
        col.add("gns_pure_dim", states["pure"].dimension, ">=", d)
        col.add("gns_pure_dim", states["pure"].dimension, "<=", d)
    if d > 1:
        v = rng.standard_normal((d, 2)) + 1j * rng.standard_normal((d, 2))
        rho = v @ v.conj().T
        states["rank2"] = lift.gns_localize(ctx, rho / np.trace(rho))[0]
    frame = [f.reshape(d, d) for f in ctx.frame]
    pairs = [(i, j) for i in range(len(frame)) for j in range(len(frame))]
    if len(pairs) > 256:
        pairs = [pairs[k] for k in rng.choice(len(pairs), 256, replace=False)]
    for sname, sp in states.items():
        mult = max(op_norm(sp.rep(frame[i] @ frame[j]) - sp.rep(frame[i]) @ sp.rep(frame[j]))
                   for i, j in pairs)
        star = max(op_norm(sp.rep(f.conj().T) - sp.rep(f).conj().T) for f in frame)
        col.add("gns_multiplicative", mult, "<=", tol["gns"], state=sname)
        col.add("gns_adjoint", star, "<=", tol["gns"], state=sname)
        xs = _random_algebra_element(ctx, rng)
        xh = 0.5 * (xs + xs.conj().T)
        col.add("localized_adjoint", lift.localized_adjoint_residual(sp, ctx.D0, xh),
                "<=", tol["gns"], state=sname)
    return col.metrics


def _composition_metrics(cfg):
    col = _Collector(instance="random")
    rng = np.random.default_rng([cfg.seed, 7919])
    worst = {"adjoint": 0.0, "left": 0.0, "sandwich": 0.0}
    for _ in range(cfg.samples):
        k = int(rng.integers(1, 17))
        mats = []
        for _ in range(2):
            z = rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))
            h = z + z.conj().T
            mats.append(h / op_norm(h))
        res = lift.composition_identities(*mats)
        for key, v in res.items():
            worst[key] = max(worst[key], v)
    for key, v in worst.items():
        col.add(f"composition_{key}", v, "<=", cfg.tolerances["composition"])
    return col.metrics


def _halfline_metrics(cfg):
    tol = cfg.tolerances
    col = _Collector()
    grids = [halfline.Grid.with_spacing(cfg.L, k) for k in cfg.divisions]
    rows = halfline.regularization_contrast(grids)
    table = {(r.M, r.sign, r.regularized): r.defect for r in rows}
    for r in rows:
        col.add("defect", r.defect, L=cfg.L, h=r.h, sign=r.sign, regularized=int(r.regularized))
    finest = grids[-1]
    reg_minus = []
    for g in grids:
        keys = dict(L=cfg.L, h=g.h)
        minus, plus = table[(g.M, -1, False)], table[(g.M, 1, False)]
        col.add("defect_minus", minus, ">=", tol["defect_minus"], **keys)
        col.add("defect_gap", minus - plus, ">=", tol["defect_gap"], **keys)
        reg_minus.append(table[(g.M, -1, True)])
    col.add("defect_plus_finest", table[(finest.M, 1, False)], "<=", tol["defect_plus"], L=cfg.L, h=finest.h)
    col.add("regularized_minus_finest", reg_minus[-1], "<=", tol["regularized"], L=cfg.L, h=finest.h)
    col.add("regularized_minus_increase", float(np.max(np.diff(reg_minus))) if len(reg_minus) > 1 else 0.0,
            "<=", 0.0, L=cfg.L)
    op = halfline.build_dirac(finest)
    wp = halfline.weight_profile(finest)
    reg = halfline.regularized_dirac(op, wp.xi)
    col.add("regularized_symmetry", reg.hermitian_residual(), "<=", tol["symmetry"], L=cfg.L, h=finest.h)
    col.add("profile_normalization", wp.normalization, "<=", 1.0 + 1e-9, L=cfg.L, h=finest.h)

    # second-order stencil on sin(t) * bump(t)
    errs = []
    for k in (256, 512, 1024):
        g = halfline.Grid.with_spacing(cfg.lift_L, k)
        b, db = halfline.bump(g.nodes)
        f, df = b * np.sin(g.nodes), db * np.sin(g.nodes) + b * np.cos(g.nodes)
        errs.append(np.linalg.norm(halfline.build_dirac(g) @ f - 1j * df) / np.linalg.norm(df))
    for k, (e0, e1) in zip((512, 1024), zip(errs, errs[1:])):
        lk = dict(L=cfg.lift_L, h=cfg.lift_L / k)
        col.add("stencil_ratio", e0 / e1, ">=", 3.5, **lk)
        col.add("stencil_ratio", e0 / e1, "<=", 4.5, **lk)

    # lift action: error model fitted on coarse runs, checked on finer ones
    coarse = [(N, cfg.lift_L / k, halfline.lift_apply_error(halfline.Grid.with_spacing(cfg.lift_L, k), N))
              for N in (128, 256, 512) for k in (256, 512)]
    c1, c2 = halfline.fit_error_model(coarse)
    col.add("model_C1", c1, L=cfg.lift_L)
    col.add("model_C2", c2, L=cfg.lift_L)
    fine = [(1024, 1024), (2048, 2048), (cfg.lift_N, cfg.lift_divisions)]
    for N, k in dict.fromkeys(fine):
        h = cfg.lift_L / k
        err = halfline.lift_apply_error(halfline.Grid.with_spacing(cfg.lift_L, k), N)
        keys = dict(L=cfg.lift_L, h=h, N=N)
        col.add("lift_apply_model", err, "<=", tol["model_slack"] * (c1 / N + c2 * h * h), **keys)
        if (N, k) == (cfg.lift_N, cfg.lift_divisions):
            col.add("lift_apply_error", err, "<=", tol["lift_apply"], **keys)
    return col.metrics


def _per_instance(cell):
    def runner(cfg):
        insts = cfg.resolve_instances()
        items = list(enumerate(insts))
        results = _map(cfg, lambda it: cell(cfg, it[0], *it[1]), items)
        return [m for ms in results for m in ms]
    return runner


def _lift_runner(cfg):
    return _per_instance(_lift_cell)(cfg) + _composition_metrics(cfg)


COMMANDS = {
    "instances": (_per_instance(_instances_cell), ("instance",)),
    "absorb": (_per_instance(_absorb_cell), ("instance", "N")),
    "decay": (_per_instance(_decay_cell), ("instance", "n")),
    "connection": (_per_instance(_connection_cell), ("instance", "N")),
    "lift": (_lift_runner, ("instance", "N", "state")),
    "halfline": (_halfline_metrics, ("L", "h", "N", "sign", "regularized")),
}


def _parameters(cfg):
    return {
        "instances": list(cfg.instances), "levels": list(cfg.levels),
        "decay_range": list(cfg.decay_range), "chain_max": cfg.chain_max,
        "L": cfg.L, "divisions": list(cfg.divisions), "lift_L": cfg.lift_L,
        "lift_N": cfg.lift_N, "lift_divisions": cfg.lift_divisions,
        "samples": cfg.samples, "seed": cfg.seed, "threads": cfg.threads,
        "tolerances": dict(cfg.tolerances),
    }


def run(command, cfg: ExperimentConfig, write=True):
    """Run one command and (optionally) write its CSV and JSON files."""
    if command == "verify-all":
        return _verify_all(cfg, write)
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    fn, columns = COMMANDS[command]
    report = RunReport(command, _parameters(cfg))
    t0 = time.perf_counter()
    try:
        report.metrics = fn(cfg)
    except ConfigError:
        raise
    except AbsorbError as exc:
        report.errors.append(f"{type(exc).__name__}: {exc}")
    report.wall_time = time.perf_counter() - t0
    if write:
        write_outputs(report, columns, cfg.output_dir)
    return report


def _verify_all(cfg, write):
    t0 = time.perf_counter()
    summary = RunReport("verify-all", _parameters(cfg))
    col = _Collector()
    for name in COMMANDS:
        rep = run(name, cfg, write)
        col.add("pass", 1.0 if rep.passed else 0.0, ">=", 1.0, command=name)
        col.add("failures", len(rep.failures()) + len(rep.errors), command=name)
        summary.errors.extend(f"{name}: {e}" for e in rep.errors)
    summary.metrics = col.metrics
    summary.wall_time = time.perf_counter() - t0
    if write:
        write_outputs(summary, ("command",), cfg.output_dir)
    return summary


def _parser():
    p = argparse.ArgumentParser(prog="absorbtk", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=list(COMMANDS) + ["verify-all"])
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--out", help="output directory (default: $ABSORBTK_OUT or ./absorbtk-out)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--tolerance", action="append", default=[], metavar="NAME=VALUE")
    p.add_argument("--instance", action="append", default=[],
                   help="builtin instance (e.g. pauli, clockshift:8) or file:PATH; repeatable")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.instance:
            cfg.instances = list(args.instance)
            cfg.resolve_instances()
        if args.out:
            cfg.output_dir = args.out
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            cfg.threads = args.threads
        for item in args.tolerance:
            name, eq, value = item.partition("=")
            if not eq:
                raise ConfigError(f"--tolerance expects NAME=VALUE, got {item!r}")
            cfg.set_tolerance(name.strip(), value.strip())
        cfg.validate()
        report = run(args.command, cfg)
    except ConfigError as exc:
        print(f"absorbtk: config error: {exc}", file=sys.stderr)
        return 2
    status = "PASS" if report.passed else "FAIL"
    print(f"{args.command}: {status} ({len(report.metrics)} metrics, {report.wall_time:.1f} s)")
    for m in report.failures():
        print(f"  failed {m.name} {dict(m.keys)}: {m.value!r} {m.relation} {m.bound!r}")
    for e in report.errors:
        print(f"  error: {e}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
