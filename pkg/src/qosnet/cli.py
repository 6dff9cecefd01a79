"""Experiment runner: config parsing, figure pipelines and CSV output."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import math
import sys
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .effcap import (
    effcap_ccdf_markov,
    effcap_ccdf_nearest,
    effcap_mean_closed_form,
    effcap_samples,
    effective_capacity_conditional,
    empirical_ccdf,
    psi_integral,
)
from .geometry import (
    NetworkParams,
    SlotDraw,
    conditional_success_probability,
    realization_seed,
    sample_network,
    sir,
)
from .numerics import NumericsError
from .simulator import (
    SimConfig,
    aggregate,
    map_realizations,
    run_realization,
    simulate_network,
    simulate_sir,
)
from .snc_delay import (
    KINDS,
    ArrivalEnvelope,
    MellinService,
    delay_bound_spatial_ccdf,
    delay_violation_curve,
    kbps_to_nats_per_slot,
    nearest_u2_raw,
    service_mellin_exact,
    service_mellin_nearest_u1,
    service_mellin_nearest_u2,
)

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_NUMERICAL = 0, 2, 3, 4
COMMANDS = ("simulate", "bound", "effcap", "fig1", "fig2", "fig3", "validate")


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _opt(cast):
    return lambda text: None if text.strip().lower() in ("", "none") else cast(text)


def _list(cast):
    return lambda text: tuple(cast(x) for x in text.split(",") if x.strip())


# key -> (parser, default)
FIELDS: dict[str, tuple[Callable, object]] = {
    "lam": (float, 1.0),
    "alpha": (float, 3.5),
    "p": (float, 0.5),
    "r": (float, 0.3),
    "window_radius": (_opt(float), None),
    "rho_kbps": (float, 64.0),
    "T_ms": (float, 1.0),
    "n_symbols": (int, 100),
    "slots": (int, 20000),
    "warmup": (_opt(int), None),
    "realizations": (int, 200),
    "master_seed": (int, 0),
    "w_list": (_list(int), tuple(range(1, 11))),
    "rho_list": (_list(float), (32.0, 64.0)),
    "bound_kind": (str, "exact_conditional"),
    "fig2_r": (float, 0.2),
    "fig2_w": (_list(int), (1, 3)),
    "x_list": (_list(float), tuple(round(0.05 * k, 2) for k in range(1, 20))),
    "r_list": (_list(float), (0.1, 0.2, 0.3, 0.4, 0.5)),
    "fig3_w": (_list(int), (1, 3)),
    "thetaT": (float, 0.5),
    "effcap_x": (_list(float), (0.5, 1.0, 2.0)),
}


@dataclass(frozen=True)
class Config:
    values: dict

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def net(self, **changes) -> NetworkParams:
        kw = {k: self.values[k] for k in ("lam", "alpha", "p", "r", "window_radius")}
        kw.update(changes)
        return NetworkParams(**kw)

    def sim(self, **changes) -> SimConfig:
        net_changes = {k: changes.pop(k) for k in ("r",) if k in changes}
        kw = dict(net=self.net(**net_changes), rho_kbps=self.rho_kbps, T_ms=self.T_ms,
                  n_symbols=self.n_symbols, slots=self.slots, warmup=self.warmup,
                  realizations=self.realizations, master_seed=self.master_seed, w_list=self.w_list)
        kw.update(changes)
        return SimConfig(**kw)

    @property
    def rho_nats(self) -> float:
        return kbps_to_nats_per_slot(self.rho_kbps, self.T_ms)

    def text(self) -> str:
        return "\n".join(f"{k}={_fmt_value(v)}" for k, v in sorted(self.values.items()))


@dataclass
class ExperimentSpec:
    command: str
    config_path: str | None = None
    out_dir: str = "."
    master_seed: int | None = None
    overrides: list = field(default_factory=list)
    workers: int = 1


def _fmt_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_fmt_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return "none" if v is None else str(v)


def _parse_lines(lines: Sequence[tuple[str, str]]) -> dict:
    raw = {}
    for where, line in lines:
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ParseError(f"{where}: expected key=value, got {line.strip()!r}")
        key, val = (s.strip() for s in text.split("=", 1))
        if key not in FIELDS:
            raise ParseError(f"{where}: unknown field {key!r}")
        try:
            raw[key] = FIELDS[key][0](val)
        except ValueError as exc:
            raise ParseError(f"{where}: bad value for {key}: {val!r} ({exc})") from None
    return raw


def parse_config(path: str | Path | None = None, overrides: Sequence[str] = ()) -> Config:
    """Flat key=value config with '#' comments; overrides win over the file."""
    values = {k: default for k, (_, default) in FIELDS.items()}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ParseError(f"config file {p} not found")
        lines = [(f"{p.name}:{i}", line) for i, line in enumerate(p.read_text().splitlines(), 1)]
        values.update(_parse_lines(lines))
    values.update(_parse_lines([(f"override {i}", o) for i, o in enumerate(overrides, 1)]))
    cfg = Config(values)
    validate_config(cfg)
    return cfg


def validate_config(cfg: Config) -> None:
    problems = []
    try:
        cfg.sim()
    except ValueError as exc:
        problems.extend(str(exc).split("; "))
    if cfg.bound_kind not in KINDS:
        problems.append(f"bound_kind must be one of {KINDS}")
    if not cfg.rho_kbps > 0 or any(r <= 0 for r in cfg.rho_list):
        problems.append("arrival rates must be positive")
    if not cfg.thetaT > 0:
        problems.append("thetaT must be positive")
    if any(not 0 < x < 1 for x in cfg.x_list):
        problems.append("x_list entries must lie in (0, 1)")
    if any(x <= 0 for x in cfg.effcap_x):
        problems.append("effcap_x entries must be positive")
    for key in ("r_list", "fig2_r"):
        for r in np.atleast_1d(getattr(cfg, key)):
            try:
                cfg.net(r=float(r))
            except ValueError as exc:
                problems.append(f"{key}: {exc}")
    for key in ("fig2_w", "fig3_w"):
        try:
            cfg.sim(w_list=getattr(cfg, key))
        except ValueError as exc:
            problems.append(f"{key}: {exc}")
    if problems:
        raise ValidationError(problems)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(out_dir: str | Path, command: str, cfg: Config, header: Sequence[str],
              rows: Sequence[Sequence], tag: str | None = None) -> Path:
    """Comment block with the resolved config, then a header row and the data."""
    conf = cfg.text()
    name = command if tag is None else f"{command}_{tag}"
    digest = hashlib.sha256(f"{name}\n{conf}".encode()).hexdigest()[:12]
    buf = io.StringIO()
    buf.write(f"# command={name}\n# master_seed={cfg.master_seed}\n")
    for line in conf.splitlines():
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}_{digest}.csv"
    path.write_bytes(buf.getvalue().encode())
    return path


# ---- per-realization tasks (module level so worker processes can pickle them)

def _delay_task(index: int, sim: SimConfig, rhos: Sequence[float], kind: str):
    results = simulate_network(index, sim, rhos)
    for res in results:
        svc = MellinService.for_network(res.network, kind)
        env = ArrivalEnvelope(kbps_to_nats_per_slot(res.extra["rho_kbps"], sim.T_ms))
        curve = delay_violation_curve(svc, env, sim.w_list, n_symbols=sim.n_symbols)
        res.extra["bound"] = {w: b.bound for w, b in zip(sim.w_list, curve)}
        res.extra["bound_detail"] = curve
    return results


def _bound_task(index: int, sim: SimConfig, rhos: Sequence[float], kind: str):
    net = sample_network(sim.net, realization_seed(sim.master_seed, index, 0))
    svc = MellinService.for_network(net, kind)
    return [delay_violation_curve(svc, ArrivalEnvelope(kbps_to_nats_per_slot(rho, sim.T_ms)),
                                  sim.w_list, n_symbols=sim.n_symbols) for rho in rhos]


def _effcap_task(index: int, net: NetworkParams, seed: int, thetaT: float):
    network = sample_network(net, realization_seed(seed, index, 0))
    return effective_capacity_conditional(network, thetaT)


def _delay_results(cfg: Config, sim: SimConfig, rhos, workers: int):
    per_index = map_realizations(partial(_delay_task, sim=sim, rhos=tuple(rhos), kind=cfg.bound_kind),
                                 sim.realizations, workers)
    return [[res[k] for res in per_index] for k in range(len(rhos))]


def _stderr_mean(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0


# ---- commands

def run_simulate(cfg: Config, out_dir, workers: int = 1) -> list[Path]:
    sim = cfg.sim()
    (results,) = _delay_results(cfg, sim, [cfg.rho_kbps], workers)
    rows = [(i, cfg.rho_kbps, w, r.pv_empirical[w], r.stderr[w], r.mean_capacity, r.n_samples)
            for i, r in enumerate(results) for w in sim.w_list]
    header = ("realization_id", "rho_kbps", "w_slots", "pv_emp", "stderr", "mean_capacity", "n_samples")
    return [write_csv(out_dir, "simulate", cfg, header, rows)]


def run_bound(cfg: Config, out_dir, workers: int = 1) -> list[Path]:
    sim = cfg.sim()
    curves = map_realizations(partial(_bound_task, sim=sim, rhos=(cfg.rho_kbps,), kind=cfg.bound_kind),
                              sim.realizations, workers)
    rows = [(i, cfg.rho_kbps, b.w, b.bound, b.s_star, b.stability_margin, b.feasible, b.kind)
            for i, c in enumerate(curves) for b in c[0]]
    header = ("realization_id", "rho_kbps", "w_slots", "pv_bound", "s_star", "stability_margin",
              "feasible", "kind")
    return [write_csv(out_dir, "bound", cfg, header, rows)]


def run_effcap(cfg: Config, out_dir, workers: int = 1) -> list[Path]:
    net = cfg.net()
    R = np.array(map_realizations(partial(_effcap_task, net=net, seed=cfg.master_seed, thetaT=cfg.thetaT),
                                  cfg.realizations, workers))
    rows = [(i, cfg.thetaT, v) for i, v in enumerate(R)]
    paths = [write_csv(out_dir, "effcap", cfg, ("realization_id", "thetaT", "effcap_nats_per_slot"), rows)]
    mean = float(R.mean())
    xs = sorted(set(cfg.effcap_x) | {float(m * np.median(R)) for m in (1, 2, 4)})
    curve = [(x, effcap_ccdf_markov(mean, x), effcap_ccdf_nearest(net, cfg.thetaT, x),
              empirical_ccdf(R, x)) for x in xs]
    paths.append(write_csv(out_dir, "effcap", cfg, ("x", "markov_ub", "nearest_formula", "empirical_ccdf"),
                           curve, tag="curve"))
    try:
        closed = effcap_mean_closed_form(net, cfg.thetaT)
    except NumericsError:
        closed = math.nan
    print(f"effcap: MC mean {mean:.6g} (stderr {_stderr_mean(R):.3g}), Jensen closed form {closed:.6g}")
    return paths


def fig1_rows(cfg: Config, workers: int = 1):
    sim = cfg.sim()
    per_rho = _delay_results(cfg, sim, cfg.rho_list, workers)
    rows = []
    for rho, results in zip(cfg.rho_list, per_rho):
        for w in sim.w_list:
            pv = [r.pv_empirical[w] for r in results]
            bd = [r.extra["bound"][w] for r in results]
            rows.append((w * cfg.T_ms, rho, float(np.mean(pv)), float(np.mean(bd)), _stderr_mean(pv),
                         "spatial_mean"))
        for i, r in enumerate(results):
            for w in sim.w_list:
                rows.append((w * cfg.T_ms, rho, r.pv_empirical[w], r.extra["bound"][w], r.stderr[w],
                             f"realization_{i}"))
    return rows, per_rho


def run_fig1(cfg: Config, out_dir, workers: int = 1) -> list[Path]:
    rows, _ = fig1_rows(cfg, workers)
    header = ("w_ms", "rho_kbps", "pv_simulated", "pv_bound", "stderr", "scope")
    return [write_csv(out_dir, "fig1", cfg, header, rows)]


def fig2_rows(cfg: Config, workers: int = 1):
    sim = cfg.sim(r=cfg.fig2_r, w_list=cfg.fig2_w)
    (results,) = _delay_results(cfg, sim, [cfg.rho_kbps], workers)
    env = ArrivalEnvelope(cfg.rho_nats)
    xs = np.asarray(cfg.x_list, dtype=float)
    rows = []
    for w in sim.w_list:
        _, ccdf_emp = aggregate(results, w)
        bounds = np.sort([r.extra["bound"][w] for r in results])
        ccdf_bound = 1.0 - np.searchsorted(bounds, xs, side="right") / bounds.size
        analytical = delay_bound_spatial_ccdf(sim.net, env, w, xs, n_symbols=sim.n_symbols)
        for x, e, b, a in zip(xs, ccdf_emp(xs), ccdf_bound, analytical):
            rows.append((float(x), w * cfg.T_ms, float(e), float(b), float(a)))
    return rows


def run_fig2(cfg: Config, out_dir, workers: int = 1) -> list[Path]:
    header = ("x", "w_ms", "ccdf_empirical", "ccdf_bound", "ccdf_analytical")
    return [write_csv(out_dir, "fig2", cfg, header, fig2_rows(cfg, workers))]


def fig3_rows(cfg: Config, workers: int = 1):
    rows = []
    for r in cfg.r_list:
        sim = cfg.sim(r=r, w_list=cfg.fig3_w)
        (results,) = _delay_results(cfg, sim, [cfg.rho_kbps], workers)
        for w in sim.w_list:
            pv = [res.pv_empirical[w] for res in results]
            bd = [res.extra["bound"][w] for res in results]
            rows.append((r, w * cfg.T_ms, float(np.mean(pv)), float(np.mean(bd)), _stderr_mean(pv)))
    return rows


def run_fig3(cfg: Config, out_dir, workers: int = 1) -> list[Path]:
    header = ("r_km", "w_ms", "pv_simulated", "pv_bound", "stderr")
    return [write_csv(out_dir, "fig3", cfg, header, fig3_rows(cfg, workers))]


def validation_checks(cfg: Config, n_networks: int = 8, draws: int = 20000) -> list[tuple]:
    """(check, status, measured, detail) rows; status is pass, fail or info."""
    out = []

    def add(name, ok, measured, detail=""):
        out.append((name, "info" if ok is None else ("pass" if ok else "fail"), float(measured), detail))

    net_params = cfg.net()
    nets = [sample_network(net_params, realization_seed(cfg.master_seed, i, 0)) for i in range(n_networks)]
    worst_ps, worst_m, worst_psi = 0.0, 0.0, 0.0
    for i, net in enumerate(nets):
        rng = np.random.default_rng(realization_seed(cfg.master_seed, i, 2))
        n = net.n_interferers
        s = sir(net, SlotDraw(rng.standard_exponential((draws, n + 1)), rng.random((draws, n)) < net_params.p))
        for xi in (0.1, 1.0, 10.0):
            ps = conditional_success_probability(net, xi)
            se = math.sqrt(max(ps * (1 - ps), 1e-12) / draws)
            worst_ps = max(worst_ps, abs(np.mean(s > xi) - ps) / se)
        samples = (1 + s) ** -0.5
        m = service_mellin_exact(net, 0.5)
        worst_m = max(worst_m, abs(samples.mean() - m) / (samples.std(ddof=1) / math.sqrt(draws)))
        for th in (0.1, 0.5, 1.0, 2.0):
            exact = service_mellin_exact(net, 1 - th)
            worst_psi = max(worst_psi, abs(psi_integral(net, th) - exact) / max(exact, 1e-300))
    add("success_probability_vs_mc", worst_ps <= 3.5, worst_ps, "max |z| over networks and xi")
    add("mellin_exact_vs_mc", worst_m <= 3.5, worst_m, "max |z| at s=0.5")
    add("psi_equals_mellin", worst_psi <= 1e-6, worst_psi, "max relative difference")

    grid_ok = True
    for Z in (0.1, 1.0, 10.0):
        for s_ in (0.1, 0.5, 0.9):
            u1, u2 = service_mellin_nearest_u1(Z, s_), service_mellin_nearest_u2(Z, s_)
            grid_ok &= u2 <= u1 + 1e-12
            add(f"u_table Z={Z} s={s_}", None, u1, f"u2={u2!r} raw_u2={nearest_u2_raw(Z, s_)!r}")
    add("u2_le_u1", grid_ok, 0.0, "grid Z in {0.1,1,10}, s in {0.1,0.5,0.9}")

    p1 = cfg.net(p=1.0)
    worst = -math.inf
    for i in range(n_networks):
        net = sample_network(p1, realization_seed(cfg.master_seed, i, 0))
        for s_ in (0.1, 0.5, 0.9):
            worst = max(worst, service_mellin_nearest_u1(net.nearest_ratio(), s_) - service_mellin_exact(net, s_))
    add("u1_le_exact_p1", worst <= 1e-10, worst, "max(u1 - exact)")

    mono = True
    for net in nets[:3]:
        vals = [effective_capacity_conditional(net, th) for th in (0.1, 0.5, 1.0, 2.0, 5.0)]
        mono &= all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))
    add("effcap_nonincreasing", mono, 0.0, "thetaT in {0.1,0.5,1,2,5}")

    R = effcap_samples(nets, cfg.thetaT)
    closed = effcap_mean_closed_form(net_params, cfg.thetaT)
    se = _stderr_mean(R)
    add("jensen_closed_form_le_mc_mean", closed <= R.mean() + 3 * se, closed - R.mean(), f"stderr {se!r}")
    for x in cfg.effcap_x:
        nf, emp = effcap_ccdf_nearest(net_params, cfg.thetaT, x), empirical_ccdf(R, x)
        add(f"nearest_formula_ordering x={x}", None, nf - emp,
            "formula above empirical" if nf >= emp else "formula below empirical")

    sim = cfg.sim(slots=4000, warmup=400, w_list=(1, 2, 3, 5))
    worst_gap, fifo, detok = -math.inf, True, True
    for i in range(min(n_networks, 4)):
        r1 = _delay_task(i, sim, (cfg.rho_kbps,), "exact_conditional")[0]
        r2 = _delay_task(i, sim, (cfg.rho_kbps,), "exact_conditional")[0]
        detok &= r1.pv_empirical == r2.pv_empirical
        for w in sim.w_list:
            worst_gap = max(worst_gap, r1.pv_empirical[w] - r1.extra["bound"][w] - 3 * r1.stderr[w])
    net = nets[0]
    trace = run_realization(net, sim, realization_seed(cfg.master_seed, 0, 1))
    d = np.diff(trace.D)
    fifo = bool(np.all(trace.D <= trace.A + 1e-9) and np.all(d >= -1e-9))
    backlog_plus = trace.backlog[:-1] + sim.rho_nats
    work = bool(np.all(d[(backlog_plus > 0) & (trace.C > 0)] > 0))
    add("lossless_fifo", fifo, 0.0)
    add("work_conservation", work, 0.0)
    add("empirical_le_bound", worst_gap <= 0, worst_gap, "max(pv_emp - bound - 3 se)")
    add("determinism", detok, 0.0)
    sirs = simulate_sir(net, 20000, realization_seed(cfg.master_seed, 0, 1))
    vals = (1 + sirs) ** -0.5
    z = abs(vals.mean() - service_mellin_exact(net, 0.5)) / (vals.std(ddof=1) / math.sqrt(vals.size))
    add("simulated_mellin_vs_exact", z <= 3.5, z, "|z| at thetaT=0.5")
    return out


def run_validate(cfg: Config, out_dir, workers: int = 1) -> tuple[list[Path], bool]:
    rows = validation_checks(cfg)
    for name, status, measured, detail in rows:
        print(f"{status:4s}  {name}  {measured!r}  {detail}")
    path = write_csv(out_dir, "validate", cfg, ("check", "status", "measured", "detail"), rows)
    return [path], all(r[1] != "fail" for r in rows)


RUNNERS = {"simulate": run_simulate, "bound": run_bound, "effcap": run_effcap,
           "fig1": run_fig1, "fig2": run_fig2, "fig3": run_fig3}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qosnet", description="Delay and effective-capacity experiments "
                                 "for Poisson bipolar networks")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="flat key=value config file")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--seed", type=int, help="master seed")
    ap.add_argument("--realizations", type=int)
    ap.add_argument("--slots", type=int)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")
    ap.add_argument("--workers", type=int, default=1, help="worker processes (does not affect output)")
    return ap


def spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    overrides = list(args.set)
    if args.realizations is not None:
        overrides.append(f"realizations={args.realizations}")
    if args.slots is not None:
        overrides.append(f"slots={args.slots}")
    if args.seed is not None:
        overrides.append(f"master_seed={args.seed}")
    return ExperimentSpec(args.command, args.config, args.out, args.seed, overrides, args.workers)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    spec = spec_from_args(args)
    try:
        cfg = parse_config(spec.config_path, spec.overrides)
    except ValidationError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if spec.command == "validate":
            paths, ok = run_validate(cfg, spec.out_dir, spec.workers)
        else:
            paths, ok = RUNNERS[spec.command](cfg, spec.out_dir, spec.workers), True
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for p in paths:
        print(p)
    return EXIT_OK if ok else EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
