"""Pipeline orchestration: config parsing, staged experiment execution,
report and plot-data emission.

Configs are flat structured text with dotted keys::

    schema_version = 1
    model.kind = lambda_omega
    model.beta = 0.5
    model.q = 0.2
    grid.M = 64
    grid.N = 512
    stages = profile,spectrum

Values are numbers, "inf", bare strings, or comma lists.  Reports are JSON
with one verdict per check, each carrying a stable tag string naming the
quantity it certifies; exit codes: 0 all pass, 1 bound violated, 2 bad
config or runtime failure.
"""

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import _spectral as sp
from . import bloch, dynamics, model, profile, propagator, shapes, whitham


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "schema_version": 1,
    "seed": 1234,
    "model.kind": "lambda_omega",
    "model.beta": 0.5,
    "model.q": 0.2,
    "grid.M": 64,
    "grid.N": 512,
    "spectrum.xi_count": 64,
    "spectrum.n_modes": 32,
    "perturbation.h0.shape": "step",
    "perturbation.h0.amplitude": 2.0e-3,
    "perturbation.h0.half_width": 64.0,
    "perturbation.h0.edge_width": 2.0,
    "perturbation.v0.shape": "none",
    "perturbation.v0.amplitude": 1.0e-3,
    "perturbation.v0.width": 1.0,
    "times.t_min": 10.0,
    "times.t_max": 1000.0,
    "times.per_decade": 24,
    "simulate.t_max": 1000.0,
    "duhamel.horizon": 20.0,
    "duhamel.nodes": 81,
    "whitham.points_per_period": 4,
    "whitham.family_steps": 3,
    "whitham.family_delta_k": 0.0015,
    "p_list": [2.0, float("inf")],
    "output.dir": "out",
}


def _parse_value(text):
    text = text.strip()
    if "," in text:
        return [_parse_value(tok) for tok in text.split(",") if tok.strip()]
    low = text.lower()
    if low == "inf":
        return float("inf")
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config(text):
    """Flat dotted-key config text -> dict with defaults filled in."""
    out = dict(DEFAULTS)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = _parse_value(value)
    if out.get("schema_version") != 1:
        raise ConfigError("unsupported schema_version")
    return out


def load_config(path):
    return parse_config(Path(path).read_text())


def config_hash(config, keys):
    payload = json.dumps({k: config.get(k) for k in sorted(keys)},
                         sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# model/data construction from config

def build_system(config):
    kind = config["model.kind"]
    if kind == "lambda_omega":
        params = model.LambdaOmegaParams(beta=float(config["model.beta"]),
                                         q=float(config["model.q"]))
        return model.make_lambda_omega(params), params
    if kind == "polynomial":
        n = int(config["model.components"])
        tables = []
        for i in range(1, n + 1):
            table = {}
            for term in str(config[f"model.f{i}"]).split(";"):
                term = term.strip()
                if not term:
                    continue
                expo, coeff = term.split(":")
                table[tuple(int(e) for e in expo.split("."))] = float(coeff)
            tables.append(table)
        return model.make_polynomial_system(tables), None
    raise ConfigError(f"unknown model.kind {kind!r}")


def build_h0(config, x, n_periods):
    shape = config["perturbation.h0.shape"]
    amp = float(config["perturbation.h0.amplitude"])
    if shape == "none" or amp == 0.0:
        return np.zeros_like(x)
    if shape == "step":
        return shapes.smoothed_box(x, n_periods, amp,
                                   half_width=float(config["perturbation.h0.half_width"]),
                                   edge_width=float(config["perturbation.h0.edge_width"]))
    if shape == "gaussian-integral":
        return shapes.gaussian_bump_integral(
            x, n_periods, amp, width=float(config["perturbation.h0.edge_width"]))
    if shape == "custom-samples":
        return np.load(config["perturbation.h0.path"])
    raise ConfigError(f"unknown h0 shape {shape!r}")


def build_v0(config, x, n_periods, n_components):
    shape = config["perturbation.v0.shape"]
    if shape == "none":
        return None
    if shape == "gaussian":
        return shapes.gaussian_bump(x, n_periods,
                                    float(config["perturbation.v0.amplitude"]),
                                    width=float(config["perturbation.v0.width"]),
                                    n_components=n_components)
    raise ConfigError(f"unknown v0 shape {shape!r}")


# ---------------------------------------------------------------------------
# report plumbing

class SuiteReport:
    def __init__(self, config):
        self.config = config
        self.checks = []
        self.fits = {}
        self.errors = []
        self.timing = {}
        self.environment = {
            "version": __version__,
            "grid": {"M": config["grid.M"], "N": config["grid.N"]},
            "seed": config["seed"],
        }

    def add_check(self, name, tag, value, bound, passed, extra=None):
        entry = {"name": name, "tag": tag, "value": value, "bound": bound,
                 "passed": bool(passed)}
        if extra:
            entry.update(extra)
        self.checks.append(entry)

    def add_fit(self, name, fit):
        self.fits[name] = fit
        self.checks.append({"name": name, "tag": fit.tag,
                            "value": fit.exponent,
                            "bound": fit.claimed_slope,
                            "passed": bool(fit.accepted)})

    def add_error(self, stage, message):
        self.errors.append({"stage": stage, "error": message})

    def skipped(self, stage, reason):
        self.checks.append({"name": f"{stage}", "tag": "skipped",
                            "value": None, "bound": None, "passed": False,
                            "skipped": reason})

    @property
    def all_passed(self):
        return not self.errors and all(
            c["passed"] for c in self.checks if "skipped" not in c)

    def payload(self):
        return {"schema_version": 1, "environment": self.environment,
                "checks": self.checks, "errors": self.errors}

    def to_json(self):
        return json.dumps(self.payload(), sort_keys=True, indent=2)

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        timing = dict(self.timing)
        (out / "timing.json").write_text(json.dumps(timing, sort_keys=True,
                                                    indent=2))


# ---------------------------------------------------------------------------
# stage implementations

STAGE_ORDER = ["profile", "spectrum", "linear-suite", "modulation-suite",
               "simulate", "duhamel", "whitham"]

PROFILE_KEYS = ["model.kind", "model.beta", "model.q", "grid.M"]
SPECTRUM_KEYS = PROFILE_KEYS + ["spectrum.xi_count", "spectrum.n_modes"]


class Pipeline:
    def __init__(self, config, out_dir=None, jobs=1):
        self.config = config
        self.out_dir = Path(out_dir or config["output.dir"])
        self.jobs = max(int(jobs), 1)
        self.report = SuiteReport(config)
        self.state = {}

    # -- cache helpers

    def _cache_dir(self, kind, keys):
        h = config_hash(self.config, keys)
        d = self.out_dir / "cache" / f"{kind}-{h}"
        return d

    def stage_profile(self):
        cfg = self.config
        system, params = build_system(cfg)
        if params is None:
            raise ConfigError("pipeline profiles require the built-in family")
        M = int(cfg["grid.M"])
        cache = self._cache_dir("profile", PROFILE_KEYS)
        if (cache / "profile.json").exists():
            meta, values, deriv = profile.load_profile_arrays(
                cache / "profile.csv", cache / "profile.json")
            b = system.df(values)
            res = (meta["k"] ** 2 * sp.derivative(values, 2)
                   + meta["k"] * meta["c"] * sp.derivative(values, 1)
                   + system.f(values))
            prof = profile.WaveProfile(
                k_star=meta["k"], c=meta["c"], values=values,
                deriv=sp.derivative(values, 1), b_coeff=b,
                residual_norm=float(np.abs(res).max()), system=system,
                reference=values.copy())
        else:
            guess = model.wave_train(params, sp.grid(M))
            prof = profile.solve_profile(system, params.k_star, guess,
                                         residual_tol=1e-13)
            cache.mkdir(parents=True, exist_ok=True)
            profile.save_profile(prof, cache / "profile.csv",
                                 cache / "profile.json")
        self.state["system"] = system
        self.state["params"] = params
        self.state["profile"] = prof
        self.report.add_check(
            "profile.residual", "profile:pde-residual",
            prof.residual_norm, 1e-10, prof.residual_norm <= 1e-10)
        phase_defect = abs(float(np.sum(
            sp.derivative(prof.reference, 1) * prof.values))) / prof.M
        self.report.add_check(
            "profile.gauge", "profile:translation-gauge",
            phase_defect, 1e-12, phase_defect <= 1e-12)

    def stage_spectrum(self):
        cfg = self.config
        prof = self.state["profile"]
        summary, branches = bloch.spectrum_scan(
            prof, xi_count=int(cfg["spectrum.xi_count"]),
            n_modes=int(cfg["spectrum.n_modes"]))
        self.state["summary"] = summary
        cache = self._cache_dir("spectrum", SPECTRUM_KEYS)
        cache.mkdir(parents=True, exist_ok=True)
        (cache / "summary.json").write_text(
            json.dumps(summary.to_dict(), sort_keys=True, indent=2))
        rows = bloch.spectrum_rows(summary)
        with open(cache / "spectrum.csv", "w") as fh:
            fh.write("xi,re_lambda,im_lambda\n")
            for xi, re, im in rows:
                fh.write(f"{xi:.12e},{re:.12e},{im:.12e}\n")
        self.report.add_check("spectrum.theta", "certificate:diffusive-decay",
                              summary.theta, 0.0, summary.theta > 0)
        self.report.add_check("spectrum.simplicity",
                              "certificate:simple-zero-eigenvalue",
                              summary.simplicity_margin, 0.1,
                              summary.simplicity_margin > 0.1)
        self.report.add_check("spectrum.curvature", "certificate:positive-curvature",
                              summary.d, 0.0, summary.d > 0)
        self.report.add_check("spectrum.gap", "certificate:isolated-branch",
                              summary.spectral_gap, 0.0, summary.spectral_gap > 0)

    def _plan(self):
        if "plan" not in self.state:
            self.state["plan"] = propagator.PropagatorPlan(
                self.state["profile"], int(self.config["grid.N"]))
        return self.state["plan"]

    def _times(self):
        cfg = self.config
        return propagator.geometric_times(float(cfg["times.t_min"]),
                                          float(cfg["times.t_max"]),
                                          int(cfg["times.per_decade"]))

    def stage_linear_suite(self):
        cfg = self.config
        plan = self._plan()
        x = plan.grid()
        bump = np.exp(-((x - plan.N / 2.0) ** 2) / 2.0)
        g = bump[None, :] * plan.phase_direction
        ts = self._times()
        window = (float(cfg["times.t_min"]), float(cfg["times.t_max"]))
        p_list = tuple(float(p) for p in cfg["p_list"])

        def run(op):
            claims = {p: (propagator.phase_claim_slope(p, 0, 0) if op == "phase"
                          else propagator.residual_claim_slope(p))
                      for p in p_list}
            return propagator.decay_experiment(
                plan, g, ts, operator=op, p_list=p_list, window=window,
                tag=f"localized-{op}", claims=claims)

        with ThreadPoolExecutor(max_workers=self.jobs) as pool:
            futures = {op: pool.submit(run, op) for op in ("phase", "residual")}
            for op, fut in futures.items():
                for p, fit in fut.result().items():
                    key = "inf" if np.isinf(p) else str(int(p))
                    self.report.add_fit(f"linear.{op}.L{key}", fit)

    def stage_modulation_suite(self):
        cfg = self.config
        plan = self._plan()
        x = plan.grid()
        h0 = build_h0(cfg, x, plan.N)
        md = propagator.ModulationData.from_samples(h0, plan.N)
        self.state["modulation"] = md
        ts = self._times()
        window = (float(cfg["times.t_min"]), float(cfg["times.t_max"]))
        fit_dx = propagator.modulational_experiment(plan, md, ts, l=1,
                                                    window=window)
        fit_sup = propagator.modulational_experiment(plan, md, ts, l=0,
                                                     window=window)
        fit_res = propagator.modulational_residual_experiment(plan, md, ts,
                                                              window=window)
        self.report.add_fit("modulation.phase.dx", fit_dx)
        self.report.checks[-1]["passed"] = bool(
            abs(fit_dx.exponent - fit_dx.claimed_slope) <= 0.1)
        self.report.add_fit("modulation.phase.sup", fit_sup)
        self.report.checks[-1]["passed"] = bool(abs(fit_sup.exponent) <= 0.05)
        self.report.add_fit("modulation.residual", fit_res)
        self.report.checks[-1]["passed"] = bool(
            abs(fit_res.exponent - fit_res.claimed_slope) <= 0.1)
        layer = propagator.initial_layer_check(plan, md)
        self.report.add_check(
            "modulation.initial-layer", "bound:short-time-phase-defect",
            layer.constants[np.inf]["phase_minus_h0"], 10.0,
            layer.constants[np.inf]["phase_minus_h0"] < 10.0,
            extra=layer.to_dict())

    def stage_simulate(self):
        cfg = self.config
        plan = self._plan()
        x = plan.grid()
        h0 = build_h0(cfg, x, plan.N)
        md = propagator.ModulationData.from_samples(h0, plan.N)
        v0 = build_v0(cfg, x, plan.N, plan.n)
        u0, e0 = dynamics.make_initial_data(plan, md, v0)
        t_max = float(cfg["simulate.t_max"])
        ts = np.concatenate([[0.0], propagator.geometric_times(
            1.0, t_max, int(cfg["times.per_decade"]) // 2)])
        traj = dynamics.simulate(plan, u0, ts, e0, h0=md.h0)
        self.state["trajectory"] = traj
        fits = dynamics.decay_suite(traj)
        for name, fit in fits.items():
            if isinstance(fit, propagator.DecayFit):
                self.report.add_fit(f"nonlinear.{name}", fit)
                self.report.checks[-1]["passed"] = bool(
                    fit.exponent <= fit.claimed_slope + 0.1)
            else:
                self.report.add_check(
                    "nonlinear.psi-bounded", "bound:phase-sup",
                    fit["ratio_sup_initial"], 2.0,
                    0.5 <= fit["ratio_final_initial"] <= 2.0
                    and fit["ratio_sup_initial"] <= 2.0)
        trace = dynamics.weighted_sup_trace(traj)
        self.report.add_check("nonlinear.closure",
                              "bound:quadratic-closure-constant",
                              trace.closure_constant, None, True,
                              extra=trace.to_dict())

    def stage_duhamel(self):
        cfg = self.config
        plan = self._plan()
        md = self.state.get("modulation")
        if md is None:
            x = plan.grid()
            md = propagator.ModulationData.from_samples(
                build_h0(cfg, x, plan.N), plan.N)
        v0 = build_v0(cfg, plan.grid(), plan.N, plan.n)
        d0 = np.zeros((plan.n, plan.total_points)) if v0 is None else v0
        horizon = float(cfg["duhamel.horizon"])
        fixed = dynamics.duhamel_iterate(plan, md, d0, horizon,
                                         n_nodes=int(cfg["duhamel.nodes"]))
        self.state["duhamel"] = fixed
        psi0_defect = float(np.abs(fixed.psi[0] - md.h0).max())
        self.report.add_check("duhamel.initial-phase",
                              "identity:prescribed-initial-phase",
                              psi0_defect, 1e-14, psi0_defect <= 1e-14)
        diffs = fixed.meta["iteration_diffs"]
        contracted = len(diffs) >= 2 and diffs[-1] < diffs[0]
        self.report.add_check("duhamel.contraction",
                              "convergence:integral-iteration",
                              diffs[-1], diffs[0], contracted)

    def stage_whitham(self):
        cfg = self.config
        prof = self.state["profile"]
        system = self.state["system"]
        fam = profile.continue_family(system, prof,
                                      float(cfg["whitham.family_delta_k"]),
                                      int(cfg["whitham.family_steps"]))
        summs = [bloch.spectrum_scan(p, xi_count=int(cfg["spectrum.xi_count"]),
                                     n_modes=int(cfg["spectrum.n_modes"]))[0]
                 for p in fam.profiles]
        coeffs = whitham.extract_coefficients(fam, summs)
        defect = coeffs.dispersion_consistency_defect()
        self.report.add_check("whitham.dispersion-consistency",
                              "identity:branch-vs-family-drift",
                              defect, 1e-4, defect <= 1e-4)
        traj = self.state.get("trajectory")
        if traj is None:
            self.report.skipped("whitham.compare", "no simulation available")
            return
        plan = self._plan()
        npts = plan.N * int(cfg["whitham.points_per_period"])
        md = self.state["modulation"]
        dxh = whitham.restrict_to_slow_grid(md.dx_h0, npts)[0]
        k0 = prof.k_star * (1.0 + dxh)
        wt = whitham.solve_whitham(coeffs, k0, plan.N, traj.times.max(),
                                   record_times=traj.times[traj.times > 0])
        rep = whitham.compare_with_pde(wt, traj)
        self.state["whitham_report"] = rep
        mid = rep.l2_relative[np.argmin(np.abs(rep.times - 100.0))]
        self.report.add_check("whitham.l2-error", "bound:modulation-law-match",
                              float(mid), 0.2, mid <= 0.2,
                              extra={"series": rep.to_dict()})

    def run(self, stages):
        failed = None
        for stage in STAGE_ORDER:
            if stage not in stages:
                continue
            if failed is not None:
                self.report.skipped(stage, f"prerequisite failed: {failed}")
                continue
            t0 = time.perf_counter()
            try:
                getattr(self, "stage_" + stage.replace("-", "_"))()
            except (bloch.StabilityViolation, bloch.SimplicityViolation) as exc:
                self.report.add_error(stage, f"{type(exc).__name__}: {exc}")
                failed = stage
            except Exception as exc:
                self.report.add_error(stage, f"{type(exc).__name__}: {exc}")
                failed = stage
            self.report.timing[stage] = time.perf_counter() - t0
        return self.report


def run_pipeline(config, stages=None, out_dir=None, jobs=1):
    if stages is None:
        stages = config.get("stages", STAGE_ORDER)
    if isinstance(stages, str):
        stages = [stages]
    pipe = Pipeline(config, out_dir=out_dir, jobs=jobs)
    report = pipe.run(list(stages))
    report.write(pipe.out_dir)
    emit_plots(report, pipe.out_dir / "plots")
    return report


# ---------------------------------------------------------------------------
# plot emission

def emit_plots(report: SuiteReport, directory):
    """One data file plus one gnuplot command file per decay fit."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, fit in sorted(report.fits.items()):
        stem = name.replace(".", "_").replace(":", "_")
        data_path = directory / f"{stem}.csv"
        with open(data_path, "w") as fh:
            fh.write("t,norm\n")
            for t, v in fit.series:
                fh.write(f"{t:.12e},{v:.12e}\n")
        guide = ""
        if fit.claimed_slope is not None:
            t0, n0 = fit.series[len(fit.series) // 2]
            guide = (f", {n0:.6e} * ((1+x)/{1+t0:.6e})**({fit.claimed_slope}) "
                     f"title 'claimed slope {fit.claimed_slope}'")
        script = (
            "set logscale xy\n"
            "set xlabel 't'\n"
            "set ylabel 'norm'\n"
            f"set title '{name} (fit {fit.exponent:.3f}, r2 {fit.r_squared:.4f})'\n"
            f"plot '{data_path.name}' using (1+$1):2 with linespoints "
            f"title 'measured'{guide}\n")
        (directory / f"{stem}.gp").write_text(script)


# ---------------------------------------------------------------------------
# entry point

def main(argv=None):
    parser = argparse.ArgumentParser(prog="wavetrainlab")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGE_ORDER + ["full"]:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None)
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--stages", type=str, default=None)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config) if args.config else dict(DEFAULTS)
        if args.seed is not None:
            config["seed"] = args.seed
        if args.command == "full":
            stages = (args.stages.split(",") if args.stages else STAGE_ORDER)
        else:
            stages = [args.command]
        report = run_pipeline(config, stages=stages, out_dir=args.out,
                              jobs=args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if report.errors:
        for err in report.errors:
            print(f"[{err['stage']}] {err['error']}", file=sys.stderr)
        return 2 if not report.checks else 1
    return 0 if report.all_passed else 1


if __name__ == "__main__":
    sys.exit(main())
