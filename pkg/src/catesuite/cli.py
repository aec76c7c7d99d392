"""Batch command-line front end.

Subcommands: fit, ate, stability, subgroup, pdp, simulate. Every run is
driven by a TOML config (--config); --seed/--threads/--out override the
config in place. Outputs embed the config sha256 and the effective master
seed, and are byte-reproducible for a fixed config + seed regardless of
--threads.

Exit codes: 0 success, 1 configuration/validation/usage error, 2 internal
error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from ._io import write_csv, write_json
from .analysis import (
    ROW_ESTIMATORS,
    default_grid,
    marginal_cate,
    pdp,
    subgroup_ate,
    subgroup_difference_test,
)
from .ate import ate_aipw, ate_ipw, ate_matching, ate_regression, match_pairs
from .config import RunConfig, parse_estimator_name
from .data import effective_cluster_ids
from .dgp import generate
from .errors import CatesuiteError, ConfigError
from .learners import CrossFitPlan
from .nuisance import fit_nuisance, overlap_report
from .sensitivity import gamma_star
from .stability import envelope_policy, run_suite, stability_report

ATE_TAGS = ("IPW", "REG", "AIPW", "MATCH")


def cmd_simulate(cfg: RunConfig, outdir: str) -> str:
    spec = cfg.dgp_spec()
    ds, truth = generate(spec)
    raw_cols = [ds.raw_values(name) for name in ds.feature_names]
    data_rows = (
        [ds.unit_ids[i]] + [col[i] for col in raw_cols] + [ds.cluster_ids[i], int(ds.treatment[i]), ds.outcome[i]]
        for i in range(ds.n)
    )
    header = ("unit_id",) + ds.feature_names + ("cluster", "z", "y")
    meta = dict(cfg.meta(), dgp=spec.name)
    write_csv(os.path.join(outdir, "data.csv"), header, data_rows, meta)
    tau = truth.tau(ds.features)
    e = truth.e(ds.features)
    truth_rows = ((ds.unit_ids[i], tau[i], e[i]) for i in range(ds.n))
    write_csv(os.path.join(outdir, "truth.csv"), ("unit_id", "true_tau", "true_e"), truth_rows, meta)
    return (
        f"simulate: {spec.name} n={ds.n} -> {outdir}/data.csv + truth.csv "
        f"(sample ATE {truth.sample_ate:+.4f})"
    )


def cmd_stability(cfg: RunConfig, outdir: str) -> str:
    ds = cfg.load_dataset()
    M = run_suite(ds, cfg.suite(), threads=cfg.threads)
    sec = cfg.section("stability")
    threshold = sec.get("spread_threshold")
    rep = stability_report(M, None if threshold is None else float(threshold))
    pol = envelope_policy(M, str(sec.get("mode", "pessimistic")), float(sec.get("threshold", 0.0)))
    meta = cfg.meta()

    write_csv(
        os.path.join(outdir, "cate_matrix.csv"),
        ("unit_id",) + M.names,
        ([M.unit_ids[i]] + list(M.values[i]) for i in range(M.n_units)),
        meta,
    )
    write_csv(
        os.path.join(outdir, "stability_report.csv"),
        ("unit_id", "median", "min", "max", "spread", "std", "sign_agreement", "stable"),
        (
            (rep.unit_ids[i], rep.median[i], rep.row_min[i], rep.row_max[i], rep.spread[i],
             rep.std[i], rep.sign_agreement[i], int(rep.stable[i]))
            for i in range(len(rep.unit_ids))
        ),
        meta,
    )
    write_csv(
        os.path.join(outdir, "decisions.csv"),
        ("unit_id", "decision", "min", "max"),
        (
            (pol.unit_ids[i], pol.decisions[i], pol.row_min[i], pol.row_max[i])
            for i in range(len(pol.unit_ids))
        ),
        dict(meta, mode=pol.mode, threshold=pol.threshold),
    )
    counts = {d: pol.decisions.count(d) for d in ("treat", "withhold", "abstain")}
    write_json(
        os.path.join(outdir, "summary.json"),
        {
            "estimators": list(M.names),
            "failures": M.failures,
            "stability": rep.summary,
            "policy": {"mode": pol.mode, "threshold": pol.threshold, "counts": counts},
        },
        meta,
    )
    return (
        f"stability: {M.n_estimators} estimators x {M.n_units} units -> {outdir} "
        f"(median spread {rep.summary['median_spread']:.4f}, {len(M.failures)} failed)"
    )


def cmd_ate(cfg: RunConfig, outdir: str) -> str:
    ds = cfg.load_dataset()
    sec = cfg.section("ate")
    which = tuple(str(s).upper() for s in sec.get("estimators", ATE_TAGS))
    unknown = set(which) - set(ATE_TAGS)
    if unknown:
        raise ConfigError(f"[ate] unknown estimator(s) {sorted(unknown)}; choose from {ATE_TAGS}")
    ss = np.random.SeedSequence(cfg.seed).spawn(8)
    meta = cfg.meta()

    nm = None
    overlap = None
    if set(which) & set(ROW_ESTIMATORS):
        outcome, propensity = cfg.nuisance_specs()
        folds = int(sec.get("crossfit", 0))
        plan = None
        if folds:
            plan = CrossFitPlan.build(effective_cluster_ids(ds), folds, seed=ss[0])
        nm = fit_nuisance(ds, outcome, propensity, clip=cfg.clip, crossfit=plan, seed=ss[1])
        overlap = overlap_report(nm, ds)

    pairs = None
    if "MATCH" in which or sec.get("sensitivity", False):
        feats = tuple(str(f) for f in sec.get("match_features", ds.feature_names))
        pairs = match_pairs(ds, feats)

    runners = {
        "IPW": lambda: ate_ipw(ds, nm, B=cfg.B, level=cfg.level, seed=ss[2]),
        "REG": lambda: ate_regression(ds, nm, B=cfg.B, level=cfg.level, seed=ss[3]),
        "AIPW": lambda: ate_aipw(ds, nm, B=cfg.B, level=cfg.level, seed=ss[4]),
        "MATCH": lambda: ate_matching(pairs, B=cfg.B, level=cfg.level, seed=ss[5]),
    }
    estimates = [runners[tag]() for tag in ATE_TAGS if tag in which]

    sens = None
    if sec.get("sensitivity", False):
        kwargs = {"alpha": float(sec.get("alpha", 0.05))}
        if sec.get("gamma_grid"):
            kwargs["grid"] = [float(g) for g in sec["gamma_grid"]]
        res = gamma_star(pairs, **kwargs)
        write_csv(
            os.path.join(outdir, "sensitivity.csv"),
            ("gamma", "p_value"),
            zip(res.gammas, res.p_values),
            dict(meta, mode=res.mode, alpha=res.alpha),
        )
        sens = res.to_dict()

    write_json(
        os.path.join(outdir, "ate.json"),
        {
            "estimates": [e.to_dict() for e in estimates],
            "overlap": None if overlap is None else overlap.to_dict(),
            "sensitivity": sens,
            "n": ds.n,
        },
        meta,
    )
    points = " ".join(f"{e.tag} {e.point:+.4f}" for e in estimates)
    extra = f", gamma* {sens['gamma_star']}" if sens else ""
    return f"ate: {points} -> {outdir}/ate.json{extra}"


def cmd_fit(cfg: RunConfig, outdir: str) -> str:
    sec = cfg.require("fit")
    if "estimator" not in sec:
        raise ConfigError("[fit] needs estimator= (canonical <kind>_<base>_<cluster|nocluster> name)")
    entry = parse_estimator_name(str(sec["estimator"]))
    ds = cfg.load_dataset()
    suite = replace(cfg.suite(), estimators=(entry,))
    M = run_suite(ds, suite, threads=cfg.threads)
    cate = M.values[:, 0]
    meta = cfg.meta()
    write_csv(
        os.path.join(outdir, "cate_fit.csv"),
        ("unit_id", "cate"),
        ((M.unit_ids[i], cate[i]) for i in range(M.n_units)),
        dict(meta, estimator=entry.name),
    )
    base = suite.base_spec(entry.base)
    nm = fit_nuisance(
        ds, base, base, clip=cfg.clip, include_cluster=entry.with_cluster,
        seed=np.random.SeedSequence(cfg.seed).spawn(2)[1],
    )
    write_json(
        os.path.join(outdir, "summary.json"),
        {
            "estimator": entry.name,
            "n": ds.n,
            "cate": {
                "mean": float(np.mean(cate)),
                "std": float(np.std(cate)),
                "min": float(np.min(cate)),
                "max": float(np.max(cate)),
            },
            "overlap": overlap_report(nm, ds).to_dict(),
        },
        meta,
    )
    return f"fit: {entry.name} on {ds.n} units -> {outdir} (mean CATE {float(np.mean(cate)):+.4f})"


def cmd_pdp(cfg: RunConfig, outdir: str) -> str:
    ds = cfg.load_dataset()
    sec = cfg.section("pdp")
    names = sec.get("estimators")
    suite = cfg.suite(tuple(str(n) for n in names) if names else None)
    M = run_suite(ds, suite, threads=cfg.threads, keep_models=True)
    models = {name: M.models[name] for name in M.names}
    features = tuple(str(f) for f in sec.get("features", ds.feature_names))
    points = int(sec.get("points", 20))
    bins = int(sec.get("bins", 20))
    rows = []
    for f in features:
        rows.extend(marginal_cate(models, ds, f, bins=bins).to_rows())
        rows.extend(pdp(models, ds, f, default_grid(ds, f, points)).to_rows())
    write_csv(
        os.path.join(outdir, "curves.csv"),
        ("feature", "grid_value", "estimator", "value", "kind"),
        rows,
        cfg.meta(),
    )
    return (
        f"pdp: {len(features)} feature(s) x {M.n_estimators} estimator(s) -> "
        f"{outdir}/curves.csv ({len(rows)} rows)"
    )


def cmd_subgroup(cfg: RunConfig, outdir: str) -> str:
    ds = cfg.load_dataset()
    hyps = cfg.hypotheses()
    if not hyps:
        raise ConfigError("subgroup command needs at least one [[subgroup.hypothesis]]")
    estimator = str(cfg.section("subgroup").get("estimator", "AIPW")).upper()
    ss = np.random.SeedSequence(cfg.seed).spawn(2 + 2 * len(hyps))
    nm = None
    if estimator in ROW_ESTIMATORS:
        outcome, propensity = cfg.nuisance_specs()
        nm = fit_nuisance(ds, outcome, propensity, clip=cfg.clip, seed=ss[0])
    results = []
    for i, h in enumerate(hyps):
        est_s, est_c = subgroup_ate(ds, h, estimator, nm, B=cfg.B, level=cfg.level, seed=ss[2 + 2 * i])
        test = subgroup_difference_test(ds, h, estimator, nm, B=cfg.B, seed=ss[3 + 2 * i])
        results.append(
            {"label": h.label, "subgroup": est_s.to_dict(), "complement": est_c.to_dict(),
             "delta": test.delta, "p_value": test.p_value}
        )
    write_json(
        os.path.join(outdir, "subgroup.json"),
        {"estimator": estimator, "B": cfg.B, "results": results},
        cfg.meta(),
    )
    min_p = min(r["p_value"] for r in results)
    return f"subgroup: {len(results)} hypothesis(es) via {estimator} -> {outdir}/subgroup.json (min p {min_p:.4f})"


COMMANDS = {
    "fit": (cmd_fit, "fit one estimator and write per-unit CATE estimates"),
    "ate": (cmd_ate, "average-effect estimates (IPW/REG/AIPW/MATCH) with bootstrap CIs"),
    "stability": (cmd_stability, "run the estimator suite and report per-unit agreement"),
    "subgroup": (cmd_subgroup, "subgroup ATEs and difference tests for declared hypotheses"),
    "pdp": (cmd_pdp, "marginal-CATE and partial-dependence curve tables"),
    "simulate": (cmd_simulate, "generate a synthetic study with known ground truth"),
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="catesuite",
        description="Heterogeneous-treatment-effect estimation toolkit (batch interface).",
    )
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="path to the TOML run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override [run].seed")
        sp.add_argument("--threads", type=int, default=None, help="override [run].threads (0 = all cores)")
        sp.add_argument("--out", default=None, help="override [output].dir")
    return p


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        code = exc.code if isinstance(exc.code, int) else 1
        return 0 if code == 0 else 1
    try:
        cfg = RunConfig.load(args.config).override(seed=args.seed, threads=args.threads)
        outdir = args.out or cfg.outdir
        os.makedirs(outdir, exist_ok=True)
        line = COMMANDS[args.command][0](cfg, outdir)
        print(line)
        return 0
    except CatesuiteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - anything else is a bug, not user error
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main_entry() -> None:  # console-script entry point
    raise SystemExit(main())


if __name__ == "__main__":
    main_entry()
