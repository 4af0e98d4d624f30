"""
Command-line runner.

    ottolab flow     --config ou.cfg --out runs/ou
    ottolab simulate --config ou.cfg --out runs/ou [--reversed]
    ottolab verify   --config ou.cfg --out runs/ou --which de_bruijn|all [--negative-control]

Config files hold one ``key = value`` per line (``#`` starts a comment). Any key can be
overridden on the command line as ``--key value``.
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import measure, pde, sde, stochastic_analysis as sa, verify
from .functionals import flow_diagnostics
from .potential import Perturbation, Potential
from .transport import w2_increment_rates

VERIFICATIONS = ("de_bruijn", "wasserstein_slope", "steepest_descent", "hwi", "talagrand_lsi",
                 "exp_decay", "time_reversal", "martingale", "fontbona_jourdain", "forward_identity",
                 "trajectorial_rate")

DEFAULT_BUMP = Perturbation(0.0, 1.0, 0.2)


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


@dataclass
class ExperimentConfig:
    potential: Potential
    init_kind: str = "gaussian"
    init_mean: float = 1.0
    init_var: float = 2.0
    init_file: str = ""
    t0: float = 0.0
    T: float = 1.0
    dt_pde: float = 1e-4
    dt_sde: float = 1e-3
    x_min: float = -10.0
    x_max: float = 10.0
    n: int = 2048
    m_paths: int = 100_000
    seed: int = 20240601
    save_stride: int = 10
    perturbation: Optional[Perturbation] = None
    out: str = "out"

    _KEYS = {
        "init.kind": "init_kind", "init.mean": "init_mean", "init.var": "init_var",
        "init.file": "init_file", "t0": "t0", "T": "T", "dt_pde": "dt_pde", "dt_sde": "dt_sde",
        "grid.x_min": "x_min", "grid.x_max": "x_max", "grid.n": "n", "m_paths": "m_paths",
        "seed": "seed", "save_stride": "save_stride", "out": "out",
    }

    @classmethod
    def from_mapping(cls, cfg: dict) -> "ExperimentConfig":
        try:
            pot = Potential.from_config(cfg)
        except KeyError as e:
            raise ConfigError(str(e.args[0]), "required key is missing") from None
        except ValueError as e:
            raise ConfigError("potential.kind", str(e)) from None
        try:
            pert = Perturbation.from_config(cfg)
        except ValueError as e:
            raise ConfigError("perturbation.radius", str(e)) from None
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, attr in cls._KEYS.items():
            if key not in cfg:
                continue
            raw = cfg[key]
            typ = types[attr]
            try:
                if typ in ("float", float):
                    kw[attr] = float(raw)
                elif typ in ("int", int):
                    kw[attr] = int(raw)
                else:
                    kw[attr] = str(raw)
            except ValueError:
                raise ConfigError(key, f"cannot parse {raw!r}") from None
        unknown = sorted(k for k in cfg if k not in cls._KEYS and not k.startswith(("potential.", "perturbation.")))
        if unknown:
            raise ConfigError(unknown[0], "unknown key")
        c = cls(potential=pot, perturbation=pert, **kw)
        c.validate()
        return c

    def validate(self) -> None:
        pos = {"init.var": self.init_var, "dt_pde": self.dt_pde, "dt_sde": self.dt_sde,
               "m_paths": self.m_paths, "save_stride": self.save_stride}
        for k, v in pos.items():
            if not v > 0:
                raise ConfigError(k, "must be positive")
        if self.dt_sde > 1e-2:
            raise ConfigError("dt_sde", "must not exceed 1e-2")
        if not self.T > self.t0:
            raise ConfigError("T", "must exceed t0")
        if not self.x_max > self.x_min:
            raise ConfigError("grid.x_max", "must exceed grid.x_min")
        if self.n < 16:
            raise ConfigError("grid.n", "must be at least 16")
        if self.init_kind not in ("gaussian", "gibbs", "grid"):
            raise ConfigError("init.kind", "expected gaussian, gibbs or grid")
        if self.init_kind == "grid" and not self.init_file:
            raise ConfigError("init.file", "required when init.kind = grid")
        if self.init_kind == "gibbs" and not self.potential.normalizable:
            raise ConfigError("init.kind", "the Gibbs density of this potential is not normalizable")

    def to_mapping(self) -> dict:
        out = dict(self.potential.to_config())
        if self.perturbation is not None:
            out.update(self.perturbation.to_config())
        for key, attr in self._KEYS.items():
            out[key] = getattr(self, attr)
        return out

    # -- builders --------------------------------------------------------------------

    def initial_density(self) -> measure.GridDensity:
        if self.init_kind == "gaussian":
            return measure.gaussian(self.init_mean, self.init_var, self.x_min, self.x_max, self.n)
        if self.init_kind == "gibbs":
            return measure.gibbs(self.potential, self.x_min, self.x_max, self.n)
        d = measure.GridDensity.from_csv(self.init_file)
        return measure.normalize(d.values, d.x_min, d.x_max)

    def initial_sampler(self) -> sde.Sampler:
        if self.init_kind == "gaussian":
            return sde.gaussian_sampler(self.init_mean, self.init_var)
        return sde.grid_sampler(self.initial_density())


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}", "expected key = value")
        out[key.strip()] = value.strip()
    return out


def format_config(cfg: dict) -> str:
    return "".join(f"{k} = {measure.fmt(v)}\n" for k, v in cfg.items())


def normalized(pot: Potential) -> Potential:
    """Shift the additive constant so the Gibbs measure has unit mass."""
    if not pot.normalizable:
        raise ValueError(f"{pot.kind} potential has a non-normalizable Gibbs measure")
    return replace(pot, c=pot.c + 0.5 * math.log(pot.mass()))


# -- commands ------------------------------------------------------------------------------

def cmd_flow(cfg: ExperimentConfig, out: Path) -> int:
    flow = pde.solve_forward(cfg.potential, cfg.initial_density(), cfg.t0, cfg.T, cfg.dt_pde,
                             cfg.perturbation, cfg.save_stride)
    flow.save(out / "snapshots")
    diag = flow_diagnostics(flow)
    diag.extra["W2_rate"] = w2_increment_rates(flow)
    diag.extra["half_sqrtI"] = 0.5 * np.sqrt(np.maximum(diag.I, 0.0))
    diag.to_csv(out / "flow_diagnostics.csv")
    print(f"flow: {len(flow)} snapshots on [{cfg.t0}, {cfg.T}] written to {out}")
    return 0


def cmd_simulate(cfg: ExperimentConfig, out: Path, reversed_mode: bool = False,
                 ensemble_stride: int = 100) -> int:
    flow = pde.solve_forward(cfg.potential, cfg.initial_density(), cfg.t0, cfg.T, cfg.dt_pde,
                             cfg.perturbation, cfg.save_stride)
    if reversed_mode:
        ens = sde.simulate_reversed(flow, cfg.potential, cfg.dt_sde, cfg.m_paths, cfg.seed)
        ens.to_csv(out / "ensemble_reversed.csv", ensemble_stride)
        recs = verify.verify_time_reversal(flow, ens)
        verify.write_records(out / "reversal_report.csv", recs)
        ok = verify.all_passed(recs)
        print(f"simulate (reversed): {'pass' if ok else 'FAIL'}")
        return 0 if ok else 1
    ens = sde.simulate_forward(cfg.potential, cfg.initial_sampler(), cfg.t0, cfg.T, cfg.dt_sde,
                               cfg.m_paths, cfg.seed, cfg.perturbation)
    ens.to_csv(out / "ensemble.csv", ensemble_stride)
    rows = []
    for t in flow.times[:: max(1, int(round(0.1 / flow.spacing)))]:
        try:
            xs = ens.at(t)
        except ValueError:
            continue
        d = flow.at(t)
        kde = measure.from_samples(xs, d.x_min, d.x_max, d.n)
        rows.append([t, float(np.mean(xs)), float(np.var(xs, ddof=1)), measure.moment(d, 1),
                     measure.variance(d), measure.l1_distance(kde, d)])
    measure.write_rows(out / "marginals.csv", ["t", "mc_mean", "mc_var", "grid_mean", "grid_var", "l1"], rows,
                       {"seed": cfg.seed, "m_paths": cfg.m_paths, "dt_sde": cfg.dt_sde})
    print(f"simulate: {cfg.m_paths} paths written to {out}")
    return 0


class _Lab:
    """Lazily built objects shared between verifications of one run."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self._cache = {}

    def get(self, key, make: Callable):
        if key not in self._cache:
            self._cache[key] = make()
        return self._cache[key]


    @property
    def pert(self) -> Perturbation:
        return self.cfg.perturbation if self.cfg.perturbation is not None else DEFAULT_BUMP

    def flow(self, pot=None, pert=None, T=None, stride=None):
        c = self.cfg
        pot = c.potential if pot is None else pot
        T = c.T if T is None else T
        stride = c.save_stride if stride is None else stride
        key = ("flow", pot, pert, T, stride)
        return self.get(key, lambda: pde.solve_forward(pot, c.initial_density(), c.t0, T, c.dt_pde, pert, stride))

    def paths(self, pert=None, seed_offset=0):
        c = self.cfg
        return self.get(("paths", pert, seed_offset), lambda: sde.simulate_forward(
            c.potential, c.initial_sampler(), c.t0, c.T, c.dt_sde, c.m_paths, c.seed + seed_offset, pert))

    def processes(self, pert=None, fisher_sign=1.0):
        def make():
            return sa.build_processes(self.paths(pert, 1 if pert else 0), self.flow(pert=pert),
                                      self.cfg.potential, pert, fisher_sign=fisher_sign)
        return self.get(("proc", pert, fisher_sign), make)


def _report_records(rep: sa.MartingaleReport) -> list[verify.VerificationRecord]:
    """Martingale-report rows as verification records (pass flags are kept as reported)."""
    out = []
    for test, s1, s2, phi, stat, thr, ok in rep.rows:
        ctx = f"s=[{s1:.4g},{s2:.4g}] phi={phi}"
        if phi == "ratio":
            kind, rhs, tol = "abs", 1.0, thr
        elif thr < 0:
            # one-sided lower bound on a Z statistic
            kind, rhs, tol = "ge", thr, 1e-12
        else:
            kind, rhs, tol = "abs", 0.0, thr
        out.append(verify.VerificationRecord(test, ctx, stat, rhs, tol, kind, bool(ok)))
    return out


def run_verification(name: str, lab: _Lab, negative_control: bool = False) -> list[verify.VerificationRecord]:
    c = lab.cfg
    pot = c.potential
    if name == "de_bruijn":
        return verify.verify_de_bruijn(lab.flow())
    if name == "wasserstein_slope":
        return verify.verify_wasserstein_slope(lab.flow())
    if name == "steepest_descent":
        T = c.t0 + 20 * c.dt_pde * c.save_stride
        fl = lab.flow(T=T)
        pf = lab.flow(pert=lab.pert, T=T)
        return verify.verify_steepest_descent(fl, pf, lab.pert)
    if name == "hwi":
        pn = normalized(pot)
        d0 = c.initial_density()
        d1 = measure.gibbs(pn, c.x_min, c.x_max, c.n)
        return verify.verify_hwi(d0, d1, pn)
    if name in ("talagrand_lsi", "exp_decay"):
        pn = normalized(pot)
        fl = lab.flow(pot=pn)
        if name == "exp_decay":
            return [verify.verify_exponential_decay(fl)]
        recs = []
        step = max(1, len(fl) // 50)
        for i in range(0, len(fl), step):
            for r in verify.verify_talagrand_lsi(fl.state(i), pn):
                recs.append(replace(r, context=f"t={fl.times[i]:.6g} {r.context}"))
        return recs
    if name == "time_reversal":
        fl = lab.flow()
        rev = sde.simulate_reversed(fl, pot, c.dt_sde, c.m_paths, c.seed + 2)
        recs = verify.verify_time_reversal(fl, rev)
        if c.init_kind == "gibbs" and c.perturbation is None:
            recs += verify.verify_stationary_reversal(lab.paths(), rev)
        return recs
    if name == "martingale":
        recs = []
        tp = lab.processes()
        use = tp.scaled(1.5) if negative_control else tp
        recs += _report_records(sa.martingale_zero_drift_test(use))
        recs += _report_records(sa.quadratic_variation_test(tp))
        recs += _report_records(sa.mean_fisher_check(tp))
        if c.perturbation is not None:
            tpb = lab.processes(lab.pert, -1.0 if negative_control else 1.0)
            recs += _report_records(sa.martingale_zero_drift_test(tpb))
            recs += _report_records(sa.quadratic_variation_test(tpb))
        return recs
    if name == "fontbona_jourdain":
        pn = normalized(pot)
        fl = lab.flow(pot=pn)
        rep = sa.fontbona_jourdain_test(pn, fl, c.m_paths, c.seed + 3, c.dt_sde)
        return _report_records(rep)
    if name == "forward_identity":
        recs = _report_records(sa.forward_identity_test(lab.paths(), lab.flow()))
        pf = lab.flow(pert=lab.pert)
        pb = lab.paths(lab.pert, 1)
        recs += _report_records(sa.forward_identity_test(pb, pf, pot, lab.pert))
        return recs
    if name == "trajectorial_rate":
        tp = lab.processes()
        t0 = c.t0 + 0.2 * (c.T - c.t0)
        t0 = float(tp.flow.times[np.argmin(np.abs(tp.flow.times - t0))])
        recs = _report_records(sa.trajectorial_rate_test(tp, t0, 50 * c.dt_sde))
        if c.perturbation is not None:
            tpb = lab.processes(lab.pert)
            recs += _report_records(sa.trajectorial_rate_test(tpb, t0, 20 * c.dt_sde, tol=0.15))
            recs += _report_records(sa.ratio_limit_test(lab.flow(pert=lab.pert), lab.flow()))
        return recs
    raise KeyError(name)


def cmd_verify(cfg: ExperimentConfig, out: Path, which: str, negative_control: bool = False) -> int:
    names = VERIFICATIONS if which == "all" else [w.strip() for w in which.split(",")]
    bad = [n for n in names if n not in VERIFICATIONS]
    if bad:
        print(f"unknown verification {bad[0]!r}; available: {', '.join(VERIFICATIONS)}, all", file=sys.stderr)
        return 2
    lab = _Lab(cfg)
    records = []
    for name in names:
        recs = run_verification(name, lab, negative_control)
        ok = verify.all_passed(recs)
        print(f"{name:20s} {'pass' if ok else 'FAIL'} ({sum(r.passed for r in recs)}/{len(recs)})")
        records += recs
    verify.write_records(out / "verification_report.csv", records)
    return 0 if verify.all_passed(records) else 1


# -- entry point ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ottolab", description=__doc__.split("\n\n")[0].strip())
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("flow", "simulate", "verify"):
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="key = value config file")
        s.add_argument("--out", type=Path, help="output directory (overrides 'out')")
        s.add_argument("--seed", type=int, help="overrides 'seed'")
        if name == "simulate":
            s.add_argument("--reversed", action="store_true", help="simulate the time-reversed diffusion")
            s.add_argument("--ensemble-stride", type=int, default=100,
                           help="time thinning of ensemble.csv")
        if name == "verify":
            s.add_argument("--which", default="all", help="verification name, comma list or 'all'")
            s.add_argument("--negative-control", action="store_true",
                           help="corrupt the cumulative Fisher process; the run must then fail")
    return p


def _overrides(extra: list[str]) -> dict:
    out = {}
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--") or len(tok) < 3:
            raise ConfigError(tok, "expected --key value")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        else:
            try:
                val = next(it)
            except StopIteration:
                raise ConfigError(key, "missing value") from None
        out[key] = val
    return out


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        cfg_map = {}
        if args.config is not None:
            cfg_map.update(parse_config_text(Path(args.config).read_text()))
        cfg_map.update(_overrides(extra))
        if args.seed is not None:
            cfg_map["seed"] = args.seed
        if args.out is not None:
            cfg_map["out"] = str(args.out)
        cfg = ExperimentConfig.from_mapping(cfg_map)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(format_config(cfg.to_mapping()))
    if args.command == "flow":
        return cmd_flow(cfg, out)
    if args.command == "simulate":
        return cmd_simulate(cfg, out, args.reversed, args.ensemble_stride)
    return cmd_verify(cfg, out, args.which, args.negative_control)


if __name__ == "__main__":
    sys.exit(main())
