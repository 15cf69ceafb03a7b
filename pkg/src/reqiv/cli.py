"""Command-line entry point: ``reqiv <subcommand> ...`` or ``python -m reqiv``.

Exit codes: 0 success, 1 invalid input or flags, 2 an estimator did not converge.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import warnings
from datetime import timedelta
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from . import __version__
from . import decomp as decomp_mod
from . import fixtures, lar as lar_mod, msr as msr_mod, overid as overid_mod, panel, selectmod, synthgen
from .numkit import VarianceSpec

log = logging.getLogger("reqiv")

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED = 0, 1, 2


class UsageError(Exception):
    pass


class NonConvergence(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# helpers


def derive_seed(seed: int, label: str) -> int:
    """Child seed from the global seed and a label (first 8 bytes of SHA-256)."""
    h = hashlib.sha256(f"{int(seed)}:{label}".encode()).digest()
    return int.from_bytes(h[:8], "big") >> 1


def _csv_list(text: str) -> list:
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _int_list(text: str) -> list:
    return [int(t) for t in _csv_list(text)]


def _read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise UsageError(f"{path}: line {lineno}: expected key = value")
            out[key.strip().replace("-", "_")] = val.strip()
    return out


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("REQIV_THREADS", "1")))
    except ValueError:
        raise UsageError("REQIV_THREADS must be an integer") from None


class _Run:
    """Resolved output paths plus provenance written next to each output."""

    def __init__(self, args, argv_used: dict):
        self.args = args
        base = args.output_dir or os.environ.get("REQIV_OUTPUT_DIR") or "."
        self.out_dir = Path(base)
        self.settings = argv_used
        self.config_hash = hashlib.sha256(json.dumps(argv_used, sort_keys=True, default=str).encode()).hexdigest()
        self.seeds: dict = {}

    def path(self, p) -> Path:
        p = Path(p)
        if not p.is_absolute():
            p = self.out_dir / p
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_table(self, df: pd.DataFrame, p, extra: Optional[dict] = None) -> Path:
        path = self.path(p)
        df.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
        self.write_meta(path, extra)
        return path

    def write_meta(self, path: Path, extra: Optional[dict] = None):
        meta = {
            "tool": "reqiv",
            "version": __version__,
            "subcommand": self.args.command,
            "config_hash": self.config_hash,
            "settings": self.settings,
            "seeds": self.seeds,
        }
        if extra:
            meta.update(extra)
        with open(str(path) + ".meta.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")


def _variance(args, run: _Run, label: str) -> VarianceSpec:
    seed = args.bootstrap_seed if args.bootstrap_seed is not None else derive_seed(args.seed, label)
    run.seeds[label] = seed
    method = "cluster_bootstrap" if args.variance == "bootstrap" else "analytic_sandwich"
    return VarianceSpec(method, args.cluster, args.replicates, seed)


def _load_panel(path) -> pd.DataFrame:
    return panel.read_panel_csv(path)


def _model_spec(args, run, label="fit") -> selectmod.ModelSpec:
    rho = None if str(args.rho).lower() == "free" else float(args.rho)
    return selectmod.ModelSpec(
        outcome_kind=args.kind,
        outcome=args.outcome,
        x_columns=tuple(args.x),
        z_columns=tuple(args.z),
        rho_constraint=rho,
        weight_column=None if str(args.weight).lower() == "none" else args.weight,
        variance=_variance(args, run, label),
        sample_rule=args.sample_rule,
        group_column=args.group_column,
    )


def _prepare_rows(rows, args):
    if getattr(args, "max_r", None):
        rows = panel.restrict_requests(rows, args.max_r)
    needed = {c for c in list(getattr(args, "x", [])) + list(getattr(args, "z", [])) if c.startswith("R_eq_")}
    levels = sorted(int(c[len("R_eq_"):]) for c in needed if c not in rows)
    if levels:
        rows = panel.add_request_indicators(rows, levels)
    return rows


def _check_converged(fit):
    if not fit.converged:
        raise NonConvergence("maximum likelihood did not converge")


# ---------------------------------------------------------------------------
# subcommands


def cmd_build_panel(args, run: _Run):
    if args.fixture:
        if args.fixture == "table1":
            records = fixtures.table1_records()
        else:
            records = fixtures.schedule_records(args.fixture, args.fixture_size)
    elif args.contacts:
        records = panel.read_contacts_csv(args.contacts)
    else:
        raise UsageError("build-panel needs --contacts or --fixture")
    seed = args.imputation_seed if args.imputation_seed is not None else derive_seed(args.seed, "imputation")
    run.seeds["imputation"] = seed
    records = panel.impute_opt_out_strata(records, seed)
    cfg = panel.PanelBuildConfig(seed, timedelta(days=args.min_gap_days), not args.no_t0)
    rows = panel.build_panel(records, cfg)
    if args.max_r:
        rows = panel.restrict_requests(rows, args.max_r)
    diag = panel.validate_panel(rows, records, cfg.min_request_gap)
    out = run.path(args.out)
    panel.write_panel_csv(rows, out)
    run.write_meta(out, {"rows": len(rows), "violations": len(diag.violations)})
    run.write_table(diag.response_rates, Path(args.out).with_suffix(".rates.csv"))
    if diag.violations:
        vdf = pd.DataFrame([vars(v) for v in diag.violations])
        run.write_table(vdf, Path(args.out).with_suffix(".violations.csv"))
        log.warning("%d panel violations (%s)", len(diag.violations), ", ".join(sorted(diag.tags())))
    print(f"wrote {len(rows)} rows to {out}")


def cmd_lar(args, run: _Run):
    rows = _load_panel(args.panel)
    if args.group_column and args.group is not None:
        rows = rows.loc[rows[args.group_column].astype(str) == str(args.group)]
    variance = _variance(args, run, "lar")
    if args.pairs:
        est, skipped = [], []
        for pair in args.pairs:
            r, _, rp = pair.partition(":")
            est.append(lar_mod.estimate_lar(rows, int(r), int(rp), variance, _threads()))
    else:
        est, skipped = lar_mod.lar_profile(rows, variance, _threads())
    for r, rp, why in skipped:
        log.warning("pair (%d, %d) skipped: %s", r, rp, why)
    table = lar_mod.profile_table(est)
    run.write_table(table, args.out, {"skipped": skipped})
    if args.steps_out:
        run.write_table(lar_mod.step_data(est), args.steps_out)
    print(table.to_string(index=False))


def cmd_fit(args, run: _Run):
    rows = _prepare_rows(_load_panel(args.panel), args)
    spec = _model_spec(args, run)
    fit = selectmod.fit_model(rows, spec, args.method, n_jobs=_threads())
    table = fit.table()
    run.write_table(table, args.out, {"loglik": fit.loglik, "converged": fit.converged,
                                      "n_rows": fit.n_rows, "n_clusters": fit.n_clusters})
    if args.fit_file:
        p = run.path(args.fit_file)
        with open(p, "w") as fh:
            json.dump(fit.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(table.to_string(index=False))
    for g in fit.groups:
        est, se = selectmod.population_mean(fit, rows, "corrected", g)
        print(f"population mean{'' if g is None else f' [{g}]'}: {est:.6g} ({se:.3g})")
    _check_converged(fit)


def _load_fit(path) -> selectmod.SelectionFit:
    try:
        with open(path) as fh:
            return selectmod.SelectionFit.from_dict(json.load(fh))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"{path}: not a fit file ({exc})") from None


def cmd_msr_curve(args, run: _Run):
    fit = _load_fit(args.fit_file)
    rows = _load_panel(args.panel) if args.panel else None
    if rows is not None and args.max_r:
        rows = panel.restrict_requests(rows, args.max_r)
    curve = msr_mod.msr_curve(fit, rows, args.grid_size, args.group)
    run.write_table(curve.table(), args.out, {"interval": "delta method, 95%"})
    if args.segments_out:
        run.write_table(curve.segments_table(), args.segments_out)
    print(f"aggregate: {msr_mod.msr_aggregate(fit, args.group):.6g}")


def cmd_decompose(args, run: _Run):
    fit = _load_fit(args.fit_file)
    rows = _prepare_rows(_load_panel(args.panel), args)
    variance = None
    if args.se == "bootstrap":
        seed = args.bootstrap_seed if args.bootstrap_seed is not None else derive_seed(args.seed, "decompose")
        run.seeds["decompose"] = seed
        variance = VarianceSpec("cluster_bootstrap", fit.spec.variance.cluster_column, args.replicates, seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = decomp_mod.decompose(fit, rows, args.reference, args.exclude, args.se, variance, _threads())
    rep = res.report()
    run.write_table(rep, args.out, {"se_method": res.se_method, "loglik": res.loglik, "n_rows": res.n_rows})
    print(rep.to_string(index=False))


def cmd_overid(args, run: _Run):
    rows = _prepare_rows(_load_panel(args.panel), args)
    spec = _model_spec(args, run, "overid")
    res = overid_mod.overid_test(rows, spec, args.tested, args.method, args.test, n_jobs=_threads())
    run.write_table(res.request_coefficients, args.out)
    if args.tests_out:
        run.write_table(res.wald_stats, args.tests_out)
    print(res.request_coefficients.to_string(index=False))
    print(res.wald_stats.to_string(index=False))
    _check_converged(res.fit)


def cmd_synth_nct(args, run: _Run):
    moments = synthgen.read_moments_csv(args.moments) if args.moments else synthgen.default_nct_moments()
    seed = args.rounding_seed if args.rounding_seed is not None else derive_seed(args.seed, "nct-rounding")
    run.seeds["nct-rounding"] = seed
    data = synthgen.generate_nct(moments, seed, args.binary_rounding)
    out_dir = run.path(Path(args.out_dir) / "x").parent
    for name, recs in data.records.items():
        p = out_dir / f"contacts_{name}.csv"
        panel.write_contacts_csv(recs, p)
        run.write_meta(p, {"variable": name, "group_sizes": list(data.sizes)})
    truth = pd.DataFrame([(v.name, v.kind, v.ground_truth_mean) for v in moments.variables],
                         columns=["variable", "kind", "ground_truth_mean"])
    run.write_table(truth, out_dir / "ground_truth.csv")
    run.write_table(data.achieved, out_dir / "achieved_moments.csv",
                    {"rounding": f"{data.binary_rounding} count; cumulative group boundaries"})
    print(f"wrote {len(data.records)} contact files for N={moments.n_total} to {out_dir}")


_SIM_FLOATS = {"c", "a", "b", "beta", "rho", "sigma", "noise_sd", "time_drift", "request_effect",
               "defiers", "nonuniform_requests"}


def _sim_config(values: dict, seed_default: int) -> synthgen.SimConfig:
    v = dict(values)
    try:
        msr = synthgen.MsrSpec(
            kind=v.pop("msr_kind", "probit"),
            **{k: float(v.pop(k)) for k in ("c", "a", "b", "beta", "rho", "sigma") if k in v},
        )
        viol = synthgen.Violations(
            **{k: float(v.pop(k)) for k in ("time_drift", "request_effect", "defiers", "nonuniform_requests")
               if k in v},
            **({"request_effect_from": int(v.pop("request_effect_from"))} if "request_effect_from" in v else {}),
        )
        cfg = synthgen.SimConfig(
            n_subjects=int(v.pop("n_subjects")),
            propensities=tuple(float(x) for x in _csv_list(v.pop("propensities"))),
            msr=msr,
            outcome_kind=v.pop("outcome_kind", "binary"),
            noise_sd=float(v.pop("noise_sd", 0.0)),
            seed=int(v.pop("seed", seed_default)),
            violations=viol,
        )
    except KeyError as exc:
        raise UsageError(f"simulation config is missing {exc}") from None
    if v:
        raise UsageError(f"unknown simulation keys: {sorted(v)}")
    return cfg


def cmd_simulate(args, run: _Run):
    values = _read_config(args.sim_config) if args.sim_config else {}
    for kv in args.set or []:
        k, sep, val = kv.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {kv!r}")
        values[k.strip()] = val.strip()
    cfg = _sim_config(values, derive_seed(args.seed, "simulate"))
    run.seeds["simulate"] = cfg.seed
    res = synthgen.simulate(cfg)
    out = run.path(args.out)
    panel.write_contacts_csv(res.records(), out)
    run.write_meta(out, {"sim_config": cfg.to_dict()})
    tr = res.truth
    truth = pd.DataFrame(
        [(r, rp, tr["complier_means"][(r, rp)], tr["complier_means_sample"][(r, rp)],
          tr["complier_shares"][(r, rp)]) for (r, rp) in sorted(tr["complier_means"])],
        columns=["r", "r_prime", "complier_mean", "complier_mean_sample", "complier_share"])
    run.write_table(truth, args.truth_out, {"population_mean": tr["population_mean"],
                                            "sample_mean": tr["sample_mean"]})
    print(f"simulated {cfg.n_subjects} subjects; population mean {tr['population_mean']:.6g}")


def reproduce_nct_table(rounding_seed: int = 0, replicates: int = 500, bootstrap_seed: int = 20240601,
                        n_jobs: int = 1) -> tuple[pd.DataFrame, bool]:
    """Group means and selection-corrected means for every rebuilt variable.

    Returns the report and whether every likelihood fit converged.
    """
    moments = synthgen.default_nct_moments()
    data = synthgen.generate_nct(moments, rounding_seed)
    out, ok = [], True
    for v in moments.variables:
        rows = panel.add_request_indicators(panel.build_panel(data.records[v.name]), [2])
        fin = panel.final_request_rows(rows.loc[rows["R"] >= 1])
        resp = fin.loc[fin["S_hat"] == 1]
        typ = panel.classify_response_timing(rows)
        y_by = resp.set_index(["term_id", "subject_id"])["Y_hat"]
        lab = typ.reindex(y_by.index)
        groups = {}
        for g in ("early", "late"):
            y = y_by[lab == g]
            groups[g] = (float(y.mean()), float(y.std(ddof=0) / np.sqrt(len(y))))
        pooled = float(resp["Y_hat"].mean())
        spec = selectmod.ModelSpec(v.kind, z_columns=("R_eq_2",))
        fiml = selectmod.fit_model(rows, spec, "fiml")
        ok &= bool(fiml.converged)
        m_est, m_se = selectmod.population_mean(fiml, rows)
        spec2 = selectmod.ModelSpec(v.kind, z_columns=("R_eq_2",),
                                    variance=VarianceSpec("cluster_bootstrap", "cluster_id", replicates,
                                                          bootstrap_seed))
        two = selectmod.fit_heckman_twostep(rows, spec2, n_jobs=n_jobs)
        t_est, t_se = selectmod.population_mean(two, rows)
        out.append((v.name, v.kind, groups["early"][0], groups["early"][1], groups["late"][0], groups["late"][1],
                    pooled, m_est, m_se, float(fiml.rho[0]), t_est, t_se, v.ground_truth_mean,
                    synthgen.REFERENCE_TWO_DIMENSIONAL_ESTIMATES.get(v.name, np.nan)))
    cols = ["variable", "kind", "always_taker_mean", "always_taker_se", "reminder_complier_mean",
            "reminder_complier_se", "respondent_mean", "mle", "mle_se", "mle_rho", "two_step", "two_step_se",
            "ground_truth", "two_dimensional_reference"]
    return pd.DataFrame(out, columns=cols), ok


def _format_nct(report: pd.DataFrame) -> str:
    def f(x, kind):
        return f"{x:,.0f}" if kind == "continuous" else f"{x:.3f}"

    lines = [f"{'':<18}{'always-takers':>16}{'reminder':>16}{'respondents':>13}{'MLE':>18}{'two-step':>18}"]
    for r in report.itertuples():
        k = r.kind
        lines.append(
            f"{r.variable:<18}{f(r.always_taker_mean, k) + ' (' + f(r.always_taker_se, k) + ')':>16}"
            f"{f(r.reminder_complier_mean, k) + ' (' + f(r.reminder_complier_se, k) + ')':>16}"
            f"{f(r.respondent_mean, k):>13}"
            f"{f(r.mle, k) + ' (' + f(r.mle_se, k) + ')':>18}"
            f"{f(r.two_step, k) + ' (' + f(r.two_step_se, k) + ')':>18}"
        )
    return "\n".join(lines)


def cmd_reproduce_nct(args, run: _Run):
    rseed = args.rounding_seed if args.rounding_seed is not None else 0
    bseed = args.bootstrap_seed if args.bootstrap_seed is not None else derive_seed(args.seed, "nct-bootstrap")
    run.seeds.update({"nct-rounding": rseed, "nct-bootstrap": bseed})
    report, ok = reproduce_nct_table(rseed, args.replicates, bseed, _threads())
    run.write_table(report, args.out)
    print(_format_nct(report))
    if not ok:
        raise NonConvergence("an NCT likelihood fit did not converge")


# ---------------------------------------------------------------------------
# parser


def _add_model_flags(p):
    p.add_argument("--panel", required=True)
    p.add_argument("--kind", choices=["binary", "continuous"], required=True)
    p.add_argument("--outcome", default="Y_hat")
    p.add_argument("--x", type=_csv_list, default=[], help="outcome covariates, comma separated")
    p.add_argument("--z", type=_csv_list, default=[], help="selection covariates, comma separated")
    p.add_argument("--rho", default="free", help="'free' or a fixed value")
    p.add_argument("--weight", default="weight", help="weight column or 'none'")
    p.add_argument("--sample-rule", choices=["all_rows", "final_request_only"], default="all_rows")
    p.add_argument("--group-column")
    p.add_argument("--max-r", type=int)
    p.add_argument("--method", choices=["fiml", "twostep"], default="fiml")


def _add_variance_flags(p, default="analytic"):
    p.add_argument("--variance", choices=["analytic", "bootstrap"], default=default)
    p.add_argument("--cluster", default="cluster_id")
    p.add_argument("--replicates", type=int, default=500)
    p.add_argument("--bootstrap-seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value file; command-line flags win")
    common.add_argument("--seed", type=int, default=0, help="global seed for derived module seeds")
    common.add_argument("--output-dir", help="base for relative output paths (env REQIV_OUTPUT_DIR)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="reqiv", description="Request-count instruments for survey nonresponse.")
    p.add_argument("--version", action="version", version=f"reqiv {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("build-panel", parents=[common], help="contact log -> request panel")
    s.add_argument("--contacts")
    s.add_argument("--fixture", help="bundled term id (e.g. 2016F) or 'table1'")
    s.add_argument("--fixture-size", type=int, default=100)
    s.add_argument("--out", default="panel.csv")
    s.add_argument("--imputation-seed", type=int)
    s.add_argument("--min-gap-days", type=float, default=3.0)
    s.add_argument("--no-t0", action="store_true")
    s.add_argument("--max-r", type=int)
    s.set_defaults(func=cmd_build_panel)

    s = sub.add_parser("lar", parents=[common], help="propensities and local average responses")
    s.add_argument("--panel", required=True)
    s.add_argument("--pairs", type=_csv_list, help="r:r' pairs, e.g. 2:1,3:1 (default adjacent)")
    s.add_argument("--group-column")
    s.add_argument("--group")
    s.add_argument("--out", default="lar.csv")
    s.add_argument("--steps-out")
    _add_variance_flags(s)
    s.set_defaults(func=cmd_lar)

    s = sub.add_parser("fit", parents=[common], help="selection model")
    _add_model_flags(s)
    _add_variance_flags(s)
    s.add_argument("--out", default="params.csv")
    s.add_argument("--fit-file", default="fit.json")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("msr-curve", parents=[common], help="marginal survey response curve")
    s.add_argument("--fit-file", required=True)
    s.add_argument("--panel")
    s.add_argument("--max-r", type=int)
    s.add_argument("--group")
    s.add_argument("--grid-size", type=int, default=512)
    s.add_argument("--out", default="msr.csv")
    s.add_argument("--segments-out")
    s.set_defaults(func=cmd_msr_curve)

    s = sub.add_parser("decompose", parents=[common], help="two-group gap decomposition")
    s.add_argument("--fit-file", required=True)
    s.add_argument("--panel", required=True)
    s.add_argument("--max-r", type=int)
    s.add_argument("--reference")
    s.add_argument("--exclude", type=_csv_list, default=[])
    s.add_argument("--se", choices=["bootstrap", "delta", "none"], default="bootstrap")
    s.add_argument("--replicates", type=int, default=200)
    s.add_argument("--bootstrap-seed", type=int)
    s.add_argument("--out", default="decomposition.csv")
    s.set_defaults(func=cmd_decompose)

    s = sub.add_parser("overid", parents=[common], help="request-indicator overidentification test")
    _add_model_flags(s)
    _add_variance_flags(s)
    s.add_argument("--tested", type=_int_list, required=True)
    s.add_argument("--test", choices=["wald", "lr"], default="wald")
    s.add_argument("--out", default="overid.csv")
    s.add_argument("--tests-out", default="overid_tests.csv")
    s.set_defaults(func=cmd_overid)

    s = sub.add_parser("synth-nct", parents=[common], help="rebuild the two-request survey data")
    s.add_argument("--moments")
    s.add_argument("--rounding-seed", type=int)
    s.add_argument("--binary-rounding", choices=["floor", "nearest"], default="floor")
    s.add_argument("--out-dir", default="nct")
    s.set_defaults(func=cmd_synth_nct)

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo contact log")
    s.add_argument("--sim-config")
    s.add_argument("--set", action="append", help="key=value simulation setting (repeatable)")
    s.add_argument("--out", default="sim_contacts.csv")
    s.add_argument("--truth-out", default="sim_truth.csv")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("reproduce-nct", parents=[common], help="rebuild, fit and report the survey")
    s.add_argument("--rounding-seed", type=int)
    s.add_argument("--bootstrap-seed", type=int)
    s.add_argument("--replicates", type=int, default=500)
    s.add_argument("--out", default="nct_report.csv")
    s.set_defaults(func=cmd_reproduce_nct)
    return p


def _apply_config(parser, argv):
    args = parser.parse_args(argv)
    if not args.config:
        return args
    values = _read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for k, v in values.items():
        if k not in known or k in ("config", "help", "func"):
            raise UsageError(f"{args.config}: unknown setting {k!r} for {args.command}")
        act = known[k]
        if isinstance(act, (argparse._StoreTrueAction,)):
            defaults[k] = v.lower() in ("1", "true", "yes", "on")
        elif isinstance(act, argparse._AppendAction):
            defaults[k] = _csv_list(v)
        else:
            defaults[k] = v
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    settings = {k: v for k, v in vars(args).items() if k not in ("func", "output_dir", "verbose")}
    r = _Run(args, settings)
    try:
        args.func(args, r)
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (UsageError, panel.DataFormatError, ValueError, KeyError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def main() -> None:
    sys.exit(run())
