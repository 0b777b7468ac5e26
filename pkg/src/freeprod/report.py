"""Pipeline orchestration and report emission."""
from __future__ import annotations

import csv
import io
import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from math import log

import numpy as np

from . import __version__
from .config import RunConfig
from .entropy import EntropyTriple, entropy_v1, entropy_v2, entropy_v3
from .errors import FreeProductError, SpecError
from .exit_chain import build_exit_chain, build_type_chain, c_h, rate_of_escape_block
from .factor import first_visit, identity_residuals, validate_factor
from .growth import check_inequalities, growth_report, sphere_counts_bfs
from .presets import REFERENCE, example_spec
from .xi import FreeProductSpec, certify_transience, solve_with_derivative

RESIDUAL_TOL = 1e-10
AGREEMENT_TOL = 1e-6
DEFAULT_WALKERS = 10_000
DEFAULT_HORIZON = 10_000
GROWTH_WALKERS = 1_000
GROWTH_HORIZON = 5_000
ORACLE_WALKERS = 1_000_000
ORACLE_HORIZON = 6


@dataclass
class Check:
    name: str
    passed: bool
    value: float | None = None
    reference: float | None = None
    tol: float | None = None
    detail: str = ""


@dataclass
class AnalysisReport:
    source: str
    command: str
    kind: str
    spec: dict
    results: dict = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)
    failure: dict | None = None
    timing: dict = field(default_factory=dict)
    versions: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.failure is None and all(c.passed for c in self.checks)

    def check(self, name, passed, value=None, reference=None, tol=None, detail=""):
        self.checks.append(Check(name, bool(passed), _plain(value), reference, tol, detail))

    def to_dict(self, timing: bool = True) -> dict:
        out = {
            "source": self.source,
            "command": self.command,
            "kind": self.kind,
            "ok": self.ok,
            "spec": self.spec,
            "results": _plain(self.results),
            "checks": [c.__dict__ for c in self.checks],
            "failure": self.failure,
            "versions": self.versions,
        }
        if timing:
            out["timing"] = self.timing
        return out


def _plain(x):
    """Recursively convert numpy containers and scalars to JSON-ready Python objects."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _versions() -> dict:
    import scipy

    return {"freeprod": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


class _StageFailed(Exception):
    pass


@contextmanager
def _stage(report: AnalysisReport, name: str):
    t0 = time.perf_counter()
    try:
        yield
    except FreeProductError as exc:
        report.failure = {"stage": name, "error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, SpecError):
            report.failure["violations"] = exc.violations
        raise _StageFailed from exc
    finally:
        report.timing[name] = time.perf_counter() - t0


def spec_echo(spec: FreeProductSpec) -> dict:
    return {
        "alphas": [float(a) for a in spec.alphas],
        "factors": [
            {"states": list(f.states), "transitions": f.transitions.tolist()} for f in spec.factors
        ],
    }


def resolve(cfg: RunConfig, preset: str | None, spec: FreeProductSpec | None):
    """``(kind, spec, reference)`` for a preset name or an explicit spec."""
    if preset is None:
        return "chain", spec, {}
    if preset == "paper-7.1":
        return "chain", example_spec(), REFERENCE[preset]
    if preset == "paper-zz2-7.2":
        return "group", None, REFERENCE[preset]
    raise ValueError(f"unknown preset {preset!r}")


def _ref_checks(report, reference, values: dict, tol: float | None):
    for key, val in values.items():
        base = key.split(":")[0]
        if base in reference:
            ref, default_tol = reference[base]
            t = tol if tol is not None else default_tol
            report.check(f"reference.{key.replace(':', '.')}", abs(val - ref) <= t, val, ref, t)


@dataclass
class ChainAnalysis:
    sol: object
    tc: object
    kernel: object
    ell0: float
    entropy: EntropyTriple


def _analytic_chain(report: AnalysisReport, spec: FreeProductSpec, tol: float | None, reference: dict) -> ChainAnalysis:
    res = report.results
    with _stage(report, "validate"):
        spec.validate()
        res["validation"] = [
            {"factor": f.factor_id, "epsilon0": rep.epsilon0, "K": rep.K}
            for f, rep in ((f, validate_factor(f)) for f in spec.factors)
        ]
    with _stage(report, "xi"):
        sol = solve_with_derivative(spec)
        res["xi"] = {
            "xi": sol.xi, "xi_prime": sol.xi_prime, "residual": float(np.max(sol.residuals)),
            "iterations": sol.iterations, "monotone": sol.monotone,
        }
        report.check("xi.residual", np.max(sol.residuals) <= 1e-12, np.max(sol.residuals), tol=1e-12)
        ids = [identity_residuals(f, c) for f, c in zip(spec.factors, sol.caches)]
        worst = max(max(d.values()) for d in ids)
        res["factor_identities"] = ids
        report.check("invariants.factor_identities", worst <= RESIDUAL_TOL, worst, tol=RESIDUAL_TOL)
    with _stage(report, "transience_gate"):
        res["transience_gate"] = {"certified_z": certify_transience(spec, base=sol)}
    with _stage(report, "chains"):
        tc = build_type_chain(spec, sol)
        kernel = build_exit_chain(spec, sol, tc)
        res["type_chain"] = {"q_hat": tc.q_hat, "nu": tc.nu, "residuals": tc.residuals()}
        res["exit_chain"] = {"pi": list(kernel.pi), "residuals": kernel.residuals()}
        worst = max(max(tc.residuals().values()), max(kernel.residuals().values()))
        report.check("invariants.chains", worst <= RESIDUAL_TOL, worst, tol=RESIDUAL_TOL)
        ell0 = rate_of_escape_block(spec, sol, tc)
        ch_direct, ch_pi = c_h(spec, sol, tc, kernel)
        res["ell0"] = ell0
        res["c_h"] = {"value": ch_direct, "two_route_gap": abs(ch_direct - ch_pi)}
        report.check("c_h.two_routes", abs(ch_direct - ch_pi) <= 1e-12 * max(1.0, ch_direct),
                     abs(ch_direct - ch_pi), tol=1e-12)
    with _stage(report, "entropy"):
        h1 = entropy_v1(ell0, ch_direct)
        h2, hq = entropy_v2(ell0, kernel)
        h3, d = entropy_v3(spec, sol)
        ent = EntropyTriple(h1, h2, h3, hq)
        res["entropy"] = {
            "h_v1": h1, "h_v2": h2, "h_v3": h3, "h_q": hq, "spread": ent.spread,
            "dg_dr": d.dg_dr, "dg_ds": d.dg_ds,
        }
        report.check("entropy.agreement", ent.spread <= AGREEMENT_TOL, ent.spread, tol=AGREEMENT_TOL)
        report.check("entropy.positive", min(h1, h2, h3) > 0, min(h1, h2, h3))
        report.check("entropy.dgf_same_sign", d.dg_dr * d.dg_ds > 0, d.dg_dr * d.dg_ds)
        _ref_checks(report, reference, {"ell0": ell0, "h:v1": h1, "h:v2": h2, "h:v3": h3}, tol)
    return ChainAnalysis(sol, tc, kernel, ell0, ent)


def _growth(report: AnalysisReport, spec: FreeProductSpec, an: ChainAnalysis | None, ell1=None):
    with _stage(report, "growth"):
        g = growth_report(spec)
        res = {
            "lambda0": g.lambda0, "lambda1": g.lambda1, "g0": g.g0, "g1": g.g1,
            "power_residual_block": g.residual0, "power_residual_metric": g.residual1,
            "cone_vertices": g.cone_vertices,
            "sphere_counts_block": g.sphere_counts_block,
            "sphere_counts_metric": g.sphere_counts_metric,
        }
        report.check("growth.power_residuals", max(g.residual0, g.residual1) <= RESIDUAL_TOL,
                     max(g.residual0, g.residual1), tol=RESIDUAL_TOL)
        # two-step ratio: with two factors the block matrix is bipartite and one-step ratios oscillate
        S = g.sphere_counts_block
        ratio0 = (S[-1] / S[-3]) ** 0.5
        gap0 = abs(g.lambda0 - ratio0) / ratio0
        res["block_ratio_two_step"] = ratio0
        report.check("growth.lambda0_vs_block_ratio", gap0 <= 0.02, gap0, ratio0, 0.02)
        if an is not None:
            est, se = (ell1.value, ell1.stderr) if ell1 is not None else (None, 0.0)
            ineq = check_inequalities(an.entropy.h_v1, an.ell0, est, g.lambda0, g.lambda1, se)
            res["inequalities"] = ineq.__dict__
            report.check("growth.block_inequality", ineq.block_ok, ineq.slack_block,
                         detail="h <= log(lambda0) * ell0")
            if ineq.metric_ok is not None:
                report.check("growth.metric_inequality", ineq.metric_ok, ineq.slack_metric,
                             detail="h <= log(lambda1) * ell1 (simulated ell1, 3 stderr slack)")
        report.results["growth"] = res
    return g


def f_length_drift(spec: FreeProductSpec, an: ChainAnalysis) -> float:
    """``ell0 * E_pi[-log F(o, g | xi)]``: drift of the per-letter first-visit length."""
    total = 0.0
    for j, f in enumerate(spec.factors):
        lf = np.array([-log(first_visit(an.sol.caches[j], 0, g)) for g in range(1, f.size)])
        total += float(np.dot(lf, an.kernel.pi[j]))
    return an.ell0 * total


def _simulate(report: AnalysisReport, spec: FreeProductSpec, cfg: RunConfig, an: ChainAnalysis | None,
              concentration: bool = False):
    from . import sim

    walkers = cfg.walkers or DEFAULT_WALKERS
    horizon = cfg.horizon or DEFAULT_HORIZON
    with _stage(report, "simulate"):
        tables = sim.build_tables(spec, an.sol if an else None, an.kernel if an else None)
        agg = sim.run_walkers(spec, horizon, walkers, cfg.seed, tables)
        est = sim.estimate_drifts(agg, tables)
        out = {
            "walkers": walkers, "horizon": horizon, "seed": cfg.seed,
            "estimates": {k: {"value": e.value, "stderr": e.stderr} for k, e in est.estimates.items()},
        }
        if an is not None:
            analytic = {"ell0": an.ell0, "ell": an.entropy.h_v1, "h_q": an.entropy.h_q,
                        "ell_F": f_length_drift(spec, an)}
            out["analytic"] = analytic
            for k, v in analytic.items():
                e = est[k]
                report.check(f"simulation.{k}", abs(e.value - v) <= 3 * e.stderr, e.value, v, 3 * e.stderr,
                             "within 3 standard errors")
            tv = sim.exit_kernel_tv(agg.exit_counts, tables)
            out["exit_kernel_tv"] = [{"type": i, "transitions": n, "tv": d} for i, n, d in tv]
            for i, n, d in tv:
                if n >= 100_000:
                    report.check(f"simulation.exit_kernel_tv.{i}", d <= 0.01, d, tol=0.01)
            if concentration and horizon >= 10:
                small = sim.run_walkers(spec, horizon // 10, walkers, cfg.seed, tables)
                rows = sim.concentration_check(small, agg, an.entropy.h_v1)
                out["concentration"] = {"horizons": [horizon // 10, horizon], "rows": [r.__dict__ for r in rows]}
                for r in rows:
                    report.check(f"simulation.concentration.{r.eps}", r.consistent, r.frac_large, r.frac_small,
                                 2 * r.stderr)
        report.results["simulation"] = out
    return est


def _analyze_group(report: AnalysisReport, tol: float | None, reference: dict):
    from .groups import ZZ2Factor, entropy_groups, fhat_level, solve_group_xi, solve_zz2_xi, zz2_f_closed_form

    res = report.results
    f = ZZ2Factor()
    with _stage(report, "xi"):
        xi = solve_zz2_xi()
        xi_iter = solve_group_xi([f, f], [0.5, 0.5])
        gap = float(np.max(np.abs(xi_iter - xi)))
        res["xi"] = {"xi": xi, "fixed_point_gap": gap}
        report.check("xi.cross_check", gap <= 1e-9, gap, tol=1e-9, detail="bisection vs fixed-point iteration")
    with _stage(report, "first_visits"):
        hs = ZZ2Factor.half_space(xi)
        fhat = fhat_level(xi)
        Fa, Fb, Fc = ZZ2Factor.base_first_visits(xi)
        r_quad = ZZ2Factor.half_space_residual(xi, hs)
        r_lin = ZZ2Factor.linear_residual(xi)
        r_fhat = abs(fhat - (xi / 3) * (1 + fhat + fhat**2))
        sandwich = 0.0
        for n in range(1, 31):
            for j in (0, 1):
                v = zz2_f_closed_form(n, j, xi)
                sandwich = max(sandwich, v - fhat**n, fhat ** (n - 1) * min(Fa, Fb) - v)
        base_gap = max(abs(zz2_f_closed_form(1, 0, xi) - Fa), abs(zz2_f_closed_form(1, 1, xi) - Fb))
        res["first_visits"] = {
            "fhat": fhat, "fhat_a": hs.a, "fhat_b": hs.b, "F_a": Fa, "F_b": Fb, "F_c": Fc,
            "quadratic_residual": r_quad, "linear_residual": r_lin, "fhat_residual": r_fhat,
            "fhat_split_gap": abs(hs.total - fhat), "closed_form_base_gap": base_gap,
            "sandwich_worst_violation": sandwich,
        }
        worst = max(r_quad, r_lin, r_fhat, abs(hs.total - fhat), base_gap)
        report.check("invariants.group_series", worst <= RESIDUAL_TOL, worst, tol=RESIDUAL_TOL)
        report.check("invariants.bound_sandwich", sandwich <= 1e-15, sandwich, detail="n <= 30")
    with _stage(report, "entropy"):
        g = entropy_groups([f, f], [0.5, 0.5], [xi, xi])
        res["entropy"] = {
            "h": g.h, "rho": g.rho, "truncation": g.truncation, "tail_bound": g.tail_bound,
            "first_letter_mass": g.first_letter_mass,
        }
        report.check("entropy.positive", g.h > 0, g.h)
        gap = max(abs(m - r) for m, r in zip(g.first_letter_mass, g.rho))
        report.check("entropy.first_letter_mass", gap <= 1e-6, gap, tol=1e-6, detail="mass of first letter vs rho")
    _ref_checks(report, reference, {"xi": xi, "fhat": fhat, "h": g.h}, tol)


def run_pipeline(cfg: RunConfig, spec: FreeProductSpec | None = None, preset: str | None = None) -> AnalysisReport:
    """Run ``cfg.command`` and return the report; failures end the run with the stage recorded."""
    kind, spec, reference = resolve(cfg, preset, spec)
    report = AnalysisReport(preset or cfg.source, cfg.command, kind, spec_echo(spec) if spec else {"preset": preset},
                            versions=_versions())
    t0 = time.perf_counter()
    try:
        if kind == "group":
            if cfg.command != "analyze":
                raise ValueError(f"command {cfg.command!r} is only available for finite factors")
            _analyze_group(report, cfg.tol, reference)
        elif cfg.command == "validate":
            _validate(report, spec)
        elif cfg.command == "analyze":
            an = _analytic_chain(report, spec, cfg.tol, reference)
            est = _simulate(report, spec, cfg, an) if cfg.walkers else None
            _growth(report, spec, an, est["ell1"] if est else None)
        elif cfg.command == "simulate":
            _simulate_only(report, spec, cfg, reference)
        elif cfg.command == "growth":
            _growth_command(report, spec, cfg)
        elif cfg.command == "oracle":
            _oracle(report, spec, cfg)
        else:
            raise ValueError(f"unknown command {cfg.command!r}")
    except _StageFailed:
        pass
    report.timing["total"] = time.perf_counter() - t0
    return report


def _validate(report, spec):
    with _stage(report, "validate"):
        report.results["validation"] = [
            {"factor": f.factor_id, "violations": rep.violations, "epsilon0": rep.epsilon0, "K": rep.K}
            for f, rep in ((f, validate_factor(f)) for f in spec.factors)
        ]
        report.results["product_violations"] = spec.violations()
        spec.validate()


def _simulate_only(report, spec, cfg, reference):
    """Simulation with analytic comparisons when the analytic pipeline succeeds, without them otherwise."""
    with _stage(report, "validate"):
        v = spec.structural_violations()
        if v:
            raise SpecError("invalid free product specification", v)
    probe = AnalysisReport(report.source, "analyze", report.kind, report.spec)
    try:
        an = _analytic_chain(probe, spec, cfg.tol, reference)
        report.results["analytic"] = {k: probe.results[k] for k in ("xi", "ell0", "entropy")}
        report.checks.extend(probe.checks)
    except _StageFailed:
        an = None
        report.results["analytic_unavailable"] = probe.failure
    _simulate(report, spec, cfg, an, concentration=an is not None)


def _growth_command(report, spec, cfg):
    from . import sim

    probe = AnalysisReport(report.source, "analyze", report.kind, report.spec)
    an = _analytic_chain(probe, spec, cfg.tol, {})
    report.results["analytic"] = {"ell0": an.ell0, "h": an.entropy.h_v1}
    with _stage(report, "simulate_ell1"):
        tables = sim.build_tables(spec)
        walkers, horizon = cfg.walkers or GROWTH_WALKERS, cfg.horizon or GROWTH_HORIZON
        agg = sim.run_walkers(spec, horizon, walkers, cfg.seed, tables)
        ell1 = sim.estimate_drifts(agg, tables)["ell1"]
        report.results["ell1"] = {"value": ell1.value, "stderr": ell1.stderr, "walkers": walkers, "horizon": horizon}
    g = _growth(report, spec, an, ell1)
    n = len(g.sphere_counts_block) - 1
    bfs = sphere_counts_bfs(spec, n)
    ratio = bfs[n] / bfs[n - 1]
    gap = abs(g.lambda1 - ratio) / ratio
    report.results["growth"]["sphere_counts_bfs"] = bfs
    report.check("growth.lambda1_vs_bfs_ratio", gap <= 0.02, gap, ratio, 0.02)
    report.check("growth.cone_counts_match_bfs", bfs == g.sphere_counts_metric, None)


def _oracle(report, spec, cfg):
    from . import sim

    with _stage(report, "validate"):
        spec.validate()
    n = cfg.horizon or ORACLE_HORIZON
    walkers = cfg.walkers or ORACLE_WALKERS
    with _stage(report, "enumerate"):
        exact = sim.enumerate_distribution(spec, n)
        total = sum(exact.values())
        report.results["enumeration"] = {"n": n, "support": len(exact), "total_mass": total,
                                         "entropy_over_n": sim.exact_entropy(exact) / max(n, 1)}
        report.check("oracle.mass", abs(total - 1.0) <= 1e-12, abs(total - 1.0), tol=1e-12)
    with _stage(report, "simulate"):
        tables = sim.build_tables(spec)
        agg = sim.run_walkers(spec, n, walkers, cfg.seed, tables, keep_words=True)
        tv = sim.total_variation(exact, sim.empirical_distribution(agg, tables))
        report.results["simulator_tv"] = {"tv": tv, "walkers": walkers, "seed": cfg.seed}
        report.check("oracle.simulator_tv", tv <= 0.005, tv, tol=0.005)
    with _stage(report, "green_partial_sums"):
        g = sim.green_partial_sums(spec, 0.5, 1e-8)
        mono = all(b >= a for a, b in zip(g.partial, g.partial[1:]))
        below = all(p <= g.green + 1e-15 for p in g.partial)
        report.results["green_partial_sums"] = {"z": g.z, "N": g.N, "partial": g.partial, "green": g.green,
                                                "gap": g.gap, "tail_bound": g.tail_bound}
        report.check("oracle.green_gap", 0 <= g.gap < 1e-8 or abs(g.gap) < 1e-15, g.gap, tol=1e-8)
        report.check("oracle.partial_sums_monotone_below", mono and below, None)


def emit_report(report: AnalysisReport, fmt: str = "text") -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        return _csv(report)
    if fmt == "text":
        return _text(report)
    raise ValueError(f"unknown format {fmt!r}")


def _csv(report: AnalysisReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    sim = report.results.get("simulation")
    growth = report.results.get("growth")
    if report.command == "simulate" and sim:
        w.writerow(["estimator", "value", "stderr", "walkers", "horizon", "seed"])
        for k, e in sim["estimates"].items():
            w.writerow([k, repr(e["value"]), repr(e["stderr"]), sim["walkers"], sim["horizon"], sim["seed"]])
    elif report.command == "growth" and growth:
        w.writerow(["n", "block", "metric"])
        for n, (b, m) in enumerate(zip(growth["sphere_counts_block"], growth["sphere_counts_metric"])):
            w.writerow([n, b, m])
    else:
        w.writerow(["quantity", "value"])
        for key, val in _flatten(_plain(report.results)):
            w.writerow([key, repr(val) if isinstance(val, float) else val])
    return buf.getvalue()


def _flatten(d, prefix=""):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flatten(v, key + ".")
        elif isinstance(v, (int, float, bool, str)) or v is None:
            yield key, v
        elif isinstance(v, list) and v and all(isinstance(x, dict) for x in v):
            for k2, x in enumerate(v):
                yield from _flatten(x, f"{key}.{k2}.")
        elif isinstance(v, list) and all(isinstance(x, str) for x in v):
            yield key, "; ".join(v)
        elif isinstance(v, list) and 0 < len(v) <= 8 and all(isinstance(x, (int, float)) for x in v):
            yield key, " ".join(f"{x:.10g}" if isinstance(x, float) else str(x) for x in v)


def _text(report: AnalysisReport) -> str:
    lines = [f"{report.command} {report.source} ({report.kind})"]
    for key, val in _flatten(_plain(report.results)):
        if isinstance(val, float):
            val = f"{val:.10g}"
        lines.append(f"  {key:<44} {val}")
    lines.append("checks:")
    for c in report.checks:
        val = "" if c.value is None else f"{c.value:.6g}"
        ref = "" if c.reference is None else f" ref {c.reference:.6g}"
        tol = "" if c.tol is None else f" tol {c.tol:.3g}"
        lines.append(f"  [{'PASS' if c.passed else 'FAIL'}] {c.name} {val}{ref}{tol} {c.detail}".rstrip())
    if report.failure:
        lines.append(f"FAILED at stage {report.failure['stage']}: {report.failure['error']}: {report.failure['message']}")
    lines.append("result: " + ("ok" if report.ok else "FAILED"))
    return "\n".join(lines) + "\n"
