"""Command-line interface: ``stgarch <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from stgarch.cli.config import Config, load_config
from stgarch.cli.crossval import CVConfig, proxy_space_search, run_cross_validation
from stgarch.cli.io import (
    ingest_panel,
    read_returns,
    read_targets,
    write_locations,
    write_matrix,
    write_rows,
)
from stgarch.cli.proxy import preprocess_features, read_feature_table
from stgarch.core import GarchOrder, Panel, unconditional_variance
from stgarch.covfit import extract_residuals, fit_covariance_mle
from stgarch.estimators import LocalGARCH, STGARCHKriger
from stgarch.experiments import ApproxConfig, run_approximation_study, run_monte_carlo
from stgarch.simulate import FieldSampler, random_bspline_surface, simulate_stgarch

logger = logging.getLogger("stgarch")


def _threads(text: str) -> int:
    if text == "auto":
        return os.cpu_count() or 1
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("--threads must be >= 1 or 'auto'")
    return n


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("--seed must be an unsigned 64-bit integer")
    return v


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(type(obj).__name__)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(payload), fh, indent=1, sort_keys=True, default=_json_default)
        fh.write("\n")


def _require(cfg: Config, key: str) -> str:
    v = cfg.get("data", key)
    if not v:
        raise SystemExit(f"error: no {key} file given (use --{key} or [data] {key} in the config)")
    return v


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args, cfg: Config, out: Path) -> None:
    m = args.sites if args.sites else int(str(cfg.get("mc", "n1")).split(",")[0])
    T = args.T if args.T else max(int(x) for x in str(cfg.get("mc", "T")).split(","))
    order = GarchOrder(cfg.get("model", "p"), cfg.get("model", "q"))
    rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(0,)))
    locations = rng.uniform(size=(m, 2))
    surface = random_bspline_surface(order, int(rng.integers(2**63 - 1)), cfg.surface_config())
    sampler = FieldSampler(locations, cfg.innovation_model(), seed=int(rng.integers(2**63 - 1)))
    burn = int(cfg.get("mc", "burn_in"))
    panel = simulate_stgarch(surface, sampler.sample(T + burn), locations, burn)
    labels = [f"s{u:03d}" for u in range(m)]
    dates = list(range(1, T + 1))
    write_matrix(out / "returns.csv", "date", dates, labels, panel.values)
    write_matrix(out / "volatility.csv", "date", dates, labels, panel.volatility)
    write_locations(out / "locations.csv", labels, locations)
    params = surface.evaluate(locations)
    names = order.param_names()
    write_rows(
        out / "parameters.csv",
        ["entity", *names, "unconditional_variance"],
        ([lab, *row, c] for lab, row, c in zip(labels, params, surface.unconditional_variance(locations))),
    )


def _fit_rows(fits, names, labels):
    for lab, f in zip(labels, fits):
        if hasattr(f, "estimate"):
            yield [
                lab, f.target.x, f.target.y, *f.estimate.as_vector(), *f.std_errors,
                f.converged, f.effective_weight_mass, f.inside_hull, f.neg_loglik, "",
            ]
        else:
            nan = [float("nan")] * (2 * len(names))
            yield [lab, f.target.x, f.target.y, *nan, False, float("nan"), False, float("nan"), f.reason]


def cmd_fit(args, cfg: Config, out: Path) -> None:
    panel = ingest_panel(_require(cfg, "returns"), _require(cfg, "locations"))
    kw = cfg.estimator_kwargs(args.seed, args.threads)
    local = LocalGARCH(
        p=kw["p"], q=kw["q"], kernel=kw["kernel"], bandwidth=kw["bandwidth"], n_starts=kw["n_starts"],
        tol=kw["tol"], gtol=kw["gtol"], maxiter=kw["maxiter"], init=kw["init"], margin=kw["margin"],
        seed=args.seed, n_jobs=args.threads,
    ).fit(panel.values, panel.locations, panel.labels)
    names = local.order_.param_names()
    header = ["entity", "x", "y", *names, *[f"se_{n}" for n in names],
              "converged", "weight_mass", "inside_hull", "neg_loglik", "error"]
    site_fits = list(local.fit_targets(panel.locations).values())
    write_rows(out / "site_fits.csv", header, _fit_rows(site_fits, names, panel.labels))
    report = {"config": cfg.to_dict(), "bandwidth": local.kernel_.bandwidth}
    if all(hasattr(f, "estimate") for f in site_fits):
        res = extract_residuals(panel, site_fits, kw["init"], require_converged=kw["strict"])
        for fieldname in ("eta", "zeta"):
            cf = fit_covariance_mle(res, fieldname, kw["covariance_family"], smoothness=kw["smoothness"])
            report[f"covariance_{fieldname}"] = {
                "family": cf.model.family,
                "sill": cf.model.sill,
                "range": cf.model.range,
                "nugget": cf.model.nugget,
                "smoothness": cf.model.smoothness,
                "std_errors": cf.std_errors,
                "z_scores": cf.z_scores,
                "neg_loglik": cf.neg_loglik,
                "converged": cf.converged,
            }
        report["residual_warnings"] = res.warnings
    if cfg.get("data", "targets"):
        tnames, tloc = read_targets(cfg.get("data", "targets"))
        tfits = list(local.fit_targets(tloc).values())
        write_rows(out / "target_fits.csv", header, _fit_rows(tfits, names, tnames))
    _write_json(out / "fit.json", report)


def cmd_predict(args, cfg: Config, out: Path) -> None:
    panel = ingest_panel(_require(cfg, "returns"), _require(cfg, "locations"))
    tnames, tloc = read_targets(_require(cfg, "targets"))
    est = STGARCHKriger(**cfg.estimator_kwargs(args.seed, args.threads)).fit(
        panel.values, panel.locations, panel.labels
    )
    preds = est.predict_targets(tloc)
    off = est.time_offset_
    dates = list(panel.times)[off:] if panel.times is not None else list(range(off + 1, panel.T + 1))
    vol = np.column_stack(
        [tp.prediction.volatility if tp.ok else np.full(len(dates), np.nan) for tp in preds]
    )
    write_matrix(out / "predicted_volatility.csv", "date", dates, tnames, vol)
    names = est.local_.order_.param_names()
    rows = []
    for name, tp in zip(tnames, preds):
        if tp.fit is not None and hasattr(tp.fit, "estimate"):
            c = unconditional_variance(tp.fit.estimate)
            vec = list(tp.fit.estimate.as_vector())
        else:
            c, vec = float("nan"), [float("nan")] * len(names)
        nfl = tp.prediction.n_floored if tp.ok else -1
        rows.append([name, tp.target.x, tp.target.y, *vec, c, nfl, tp.error])
    write_rows(
        out / "targets.csv",
        ["entity", "x", "y", *names, "unconditional_variance", "n_floored", "error"],
        rows,
    )
    _write_json(out / "predict.json", {"config": cfg.to_dict(), "unconverged_sites": est.unconverged_})


def cmd_mc(args, cfg: Config, out: Path) -> None:
    mc = cfg.mc_config(args.seed, args.threads)
    report = run_monte_carlo(mc)
    report.to_csv(out / "mc.csv")
    report.to_json(out / "mc.json")


def _cv_config(cfg: Config, args) -> CVConfig:
    return CVConfig(
        k=cfg.get("cv", "k"),
        seed=args.seed,
        score=cfg.get("cv", "score"),
        estimator=cfg.estimator_kwargs(args.seed, 1),
    )


def cmd_cv(args, cfg: Config, out: Path) -> None:
    panel = ingest_panel(_require(cfg, "returns"), _require(cfg, "locations"))
    cvc = _cv_config(cfg, args)
    rep = run_cross_validation(panel, cvc.k, cvc)
    write_rows(
        out / "cv_folds.csv",
        ["fold", "n_entities", "rmse", "baseline_rmse", "error"],
        (
            [f, sum(1 for v in rep.folds.values() if v == f), rep.fold_rmse[f], rep.fold_baseline_rmse[f],
             rep.failures.get(f, "")]
            for f in range(cvc.k)
        ),
    )
    write_rows(out / "cv_entities.csv", ["entity", "fold"], sorted(rep.folds.items()))
    write_rows(
        out / "cv_summary.csv",
        ["pooled_rmse", "mean_fold_rmse", "baseline_rmse", "n_obs", "partial"],
        [[rep.pooled_rmse, rep.mean_fold_rmse, rep.baseline_rmse, rep.n_obs, rep.partial]],
    )
    labels = sorted(rep.predictions)
    if labels:
        n = len(rep.predictions[labels[0]])
        write_matrix(
            out / "cv_predictions.csv", "t", range(panel.T - n + 1, panel.T + 1), labels,
            np.column_stack([rep.predictions[x] for x in labels]),
        )
    _write_json(out / "cv.json", {"config": cfg.to_dict(), "failures": rep.failures, "partial": rep.partial})


def cmd_search(args, cfg: Config, out: Path) -> None:
    dates, entities, values = read_returns(_require(cfg, "returns"))
    panel = Panel(np.zeros((len(entities), 2)), values, labels=entities, times=dates)
    table = preprocess_features(read_feature_table(_require(cfg, "features")), cfg.get("cv", "max_missing"))
    cvc = _cv_config(cfg, args)
    rep = proxy_space_search(table, panel, cvc, n_jobs=args.threads)
    write_rows(
        out / "search.csv",
        ["rank", "feature_1", "feature_2", "pooled_rmse"],
        ([i + 1, a, b, r] for i, ((a, b), r) in enumerate(rep.ranking)),
    )
    write_rows(
        out / "search_failures.csv",
        ["feature_1", "feature_2", "reason"],
        ([a, b, why] for (a, b), why in sorted(rep.failures.items())),
    )
    _write_json(
        out / "search.json",
        {"config": cfg.to_dict(), "retained": table.names, "dropped": table.dropped, "folds": rep.folds},
    )


def cmd_approx(args, cfg: Config, out: Path) -> None:
    order = GarchOrder(cfg.get("model", "p"), cfg.get("model", "q"))
    rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(1,)))
    surface = random_bspline_surface(order, int(rng.integers(2**63 - 1)), cfg.surface_config())
    dists = [float(x) for x in args.distances.split(",")]
    anchor = [float(x) for x in args.anchor.split(",")]
    rep = run_approximation_study(
        surface, anchor, dists,
        ApproxConfig(replications=args.replications, T=args.T or 500, seed=args.seed),
    )
    rep.to_csv(out / "approx.csv")
    _write_json(
        out / "approx.json",
        {"config": cfg.to_dict(), "spearman": rep.spearman, "slope": rep.slope, "anchor": anchor},
    )


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "mc": cmd_mc,
    "cv": cmd_cv,
    "search": cmd_search,
    "approx-study": cmd_approx,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=_seed, default=0, help="master seed (default 0)")
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    common.add_argument("--threads", type=_threads, default=1, help="worker threads, or 'auto'")
    common.add_argument(
        "--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one config key"
    )
    common.add_argument("-v", "--verbose", action="store_true")
    data = argparse.ArgumentParser(add_help=False)
    for key in ("returns", "locations", "features", "targets"):
        data.add_argument(f"--{key}", help=f"{key} CSV (overrides [data] {key})")

    ap = argparse.ArgumentParser(prog="stgarch", description="Spatiotemporal GARCH estimation and kriging.")
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="simulate a panel with a random parameter surface")
    s.add_argument("--sites", type=int, default=0)
    s.add_argument("--T", type=int, default=0)
    sub.add_parser("fit", parents=[common, data], help="local fits at sites (and targets) plus covariance fits")
    sub.add_parser("predict", parents=[common, data], help="kriged volatility at target locations")
    m = sub.add_parser("mc", parents=[common], help="Monte Carlo bias/RMSE study")
    m.add_argument("--replications", type=int)
    cv = sub.add_parser("cv", parents=[common, data], help="k-fold cross-validation over entities")
    cv.add_argument("--k", type=int)
    se = sub.add_parser("search", parents=[common, data], help="rank feature-pair proxy spaces by CV RMSE")
    se.add_argument("--k", type=int)
    a = sub.add_parser("approx-study", parents=[common], help="stationary-approximation deviation study")
    a.add_argument("--anchor", default="0.5,0.5")
    a.add_argument("--distances", default="0,0.025,0.05,0.1,0.15,0.2,0.3")
    a.add_argument("--replications", type=int, default=50)
    a.add_argument("--T", type=int, default=0)
    return ap


def _effective_config(args) -> Config:
    cfg = load_config(args.config)
    for key in ("returns", "locations", "features", "targets"):
        v = getattr(args, key, None)
        if v:
            cfg.set("data", key, v)
    if getattr(args, "k", None):
        cfg.set("cv", "k", args.k)
    if args.command == "mc" and getattr(args, "replications", None):
        cfg.set("mc", "replications", args.replications)
    for item in args.set:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise SystemExit(f"error: --set expects SECTION.KEY=VALUE, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.split(".", 1)
        try:
            cfg.set(section, key, value)
        except (KeyError, ValueError) as exc:
            raise SystemExit(f"error: --set {item}: {exc}") from None
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    cfg = _effective_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    try:
        COMMANDS[args.command](args, cfg, out)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
