"""Command-line entry point: ``fsagp {simulate,fit,predict,score,study}``.

Exit codes: 0 success, 1 validation or configuration error, 2 numerical
failure. Outputs of a failed command are removed.
"""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys

import numpy as np

from . import __version__
from .harness import (GRID, VARIANTS, StudySettings, asd, interval_score, mspe, replicate_data,
                      run_study, study_setup)
from .io import RunConfig, ingest_csv, inverse_shift_log, read_locations, sha256_file, shift_log_transform
from .predictor import PredictionSet, predict_field
from .sampler import ChainConfig, ChainError, ChainRecord, run_chain
from .sparse import CholeskyError


class _Outputs:
    """Tracks files written by a command so they can be removed on failure."""

    def __init__(self):
        self.paths = []

    def add(self, path):
        self.paths.append(os.fspath(path))
        return path

    def cleanup(self):
        for p in self.paths:
            try:
                os.remove(p)
            except FileNotFoundError:
                pass


def _versions():
    import numba
    import scipy

    return {"fsagp": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def _write_manifest(path, argv, cfg: RunConfig | None, inputs, outputs, extra=None):
    manifest = {
        "argv": list(argv),
        "config_text": cfg.source_text if cfg else None,
        "config_sha256": cfg.digest() if cfg else None,
        "seed": cfg.seed if cfg else None,
        "inputs": {os.fspath(p): sha256_file(p) for p in inputs},
        "outputs": {os.fspath(p): sha256_file(p) for p in outputs},
        "versions": _versions(),
    }
    if extra:
        manifest.update(extra)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_data(path, cfg: RunConfig, need_noise=True):
    noise = cfg.require_noise_var() if need_noise else cfg.noise_var
    data = ingest_csv(path, cfg.dims, cfg.has_header, noise_var=noise, trend=cfg.trend)
    if cfg.transform == "shiftlog":
        data.z = shift_log_transform(data.z, cfg.shift)
    for note in data.notes:
        print(f"note: {note}", file=sys.stderr)
    return data


def _chain_config(cfg: RunConfig, data) -> ChainConfig:
    lo, hi = cfg.domain(data)
    return ChainConfig(n_iter=cfg.n_iter, n_burn=cfg.n_burn, thin=cfg.thin, seed=cfg.seed,
                       taper_length=cfg.taper_length, knot_mode="random" if cfg.knot_mode == "random" else "fixed",
                       proposal_domain=(lo, hi), check_every=cfg.check_every)


# --- subcommands -------------------------------------------------------------


def cmd_simulate(args, out: _Outputs):
    os.makedirs(args.out_dir, exist_ok=True)
    for rep in range(args.replicates):
        Y, Z, design = replicate_data(args.study, args.seed, rep)
        noise_var = study_setup(args.study, Y)[0]
        group = np.empty(GRID.size, dtype=object)
        group[design.obs], group[design.mar], group[design.mbd] = "OBS", "MAR", "MBD"
        stem = os.path.join(args.out_dir, f"{args.study}_rep{rep:03d}")
        data_path = out.add(stem + "_data.csv")
        with open(data_path, "w") as fh:
            fh.write("s,z\n")
            for i in design.obs:
                fh.write(f"{float(GRID[i])!r},{float(Z[i])!r}\n")
        truth_path = out.add(stem + "_truth.csv")
        with open(truth_path, "w") as fh:
            fh.write("s,y,group\n")
            for i in range(GRID.size):
                fh.write(f"{float(GRID[i])!r},{float(Y[i])!r},{group[i]}\n")
        print(f"{data_path}: n={design.obs.size}, noise_var={noise_var}")
    return 0


def cmd_fit(args, out: _Outputs):
    cfg = RunConfig.load(args.config)
    data = _load_data(args.data, cfg)
    params = cfg.params(data)
    knots = cfg.initial_knots(data)
    chain = run_chain(data, params, _chain_config(cfg, data), knots=knots)
    out.add(args.out)
    chain.to_csv(args.out)
    manifest = out.add(args.manifest or os.path.splitext(args.out)[0] + ".manifest.json")
    stats = {k: v for k, v in chain.stats.items()}
    _write_manifest(manifest, ["fit", *args.raw_argv], cfg, [args.data, args.config], [args.out],
                    {"chain_stats": stats, "mu_sigma": params.sigma.prior_mean, "mu_gamma": params.scales[0].prior_mean})
    print(f"wrote {len(chain)} kept draws to {args.out}; mean r = {np.mean(chain.r):.2f}")
    return 0


def cmd_predict(args, out: _Outputs):
    cfg = RunConfig.load(args.config)
    data = _load_data(args.data, cfg)
    template = cfg.params(data)
    chain = ChainRecord.from_csv(args.chain, cfg.dims)
    if chain.theta_labels != template.free_labels():
        raise ValueError("chain columns do not match the configured parameterization")
    locs, extra = read_locations(args.locations, cfg.dims, cfg.has_header)
    from .data import trend_matrix

    pset = PredictionSet.build(locs, data.locs, trend_matrix(locs, cfg.trend, extra))
    field_ = predict_field(chain, data, pset, template, cfg.taper_length, keep_every=cfg.keep_every,
                           level=cfg.credible_level, seed=cfg.seed + 1, include_noise=args.include_noise,
                           keep_draws=bool(args.draws) or cfg.transform == "shiftlog")
    if cfg.transform == "shiftlog":
        # both summaries of the back-transformed field
        back = inverse_shift_log(field_.draws, cfg.shift)
        field_.extra["back_mean_of_draws"] = back.mean(axis=1)
        field_.extra["back_of_mean"] = inverse_shift_log(field_.mean, cfg.shift)
        field_.extra["back_sd"] = back.std(axis=1, ddof=1) if back.shape[1] > 1 else np.zeros(back.shape[0])
    out.add(args.out)
    field_.to_csv(args.out)
    outputs = [args.out]
    if args.draws:
        out.add(args.draws)
        field_.write_draws(args.draws)
        outputs.append(args.draws)
    manifest = out.add(os.path.splitext(args.out)[0] + ".manifest.json")
    _write_manifest(manifest, ["predict", *args.raw_argv], cfg, [args.data, args.config, args.chain, args.locations],
                    outputs, {"n_draws": int(field_.draws.shape[1]) if field_.draws is not None else None})
    print(f"wrote predictions for {pset.n} locations to {args.out}")
    return 0


def cmd_score(args, out: _Outputs):
    pred = np.genfromtxt(args.pred, delimiter=",", names=True)
    truth = np.genfromtxt(args.truth, delimiter=",", names=True, dtype=None, encoding="utf-8")
    value_col = args.value_column
    target = np.asarray(truth[value_col], dtype=float)
    if target.size != pred["mean"].size:
        raise ValueError("prediction and truth files differ in length")
    if args.transform == "shiftlog":
        target = shift_log_transform(target, args.shift)
    groups = {"ALL": None}
    if "group" in (truth.dtype.names or ()):
        labels = np.asarray(truth["group"]).astype(str)
        for g in sorted(set(labels)):
            groups[g] = np.flatnonzero(labels == g)
    level = args.level
    results = {}
    for g, idx in groups.items():
        results[g] = {
            "MSPE" if args.metric == "mspe" else "ASD": (mspe if args.metric == "mspe" else asd)(pred["mean"], target, idx),
            "IS": interval_score(pred["lower"], pred["upper"], target, 1.0 - level, idx),
            "n": int(target.size if idx is None else idx.size),
        }
    text = json.dumps(results, indent=2, sort_keys=True)
    if args.out:
        out.add(args.out)
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def cmd_study(args, out: _Outputs):
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    settings = StudySettings(n_iter=args.n_iter, n_burn=args.n_burn, thin=args.thin, keep_every=args.keep_every)
    table = run_study(args.study, variants, args.replicates, args.seed, settings, n_jobs=args.jobs)
    os.makedirs(args.out_dir, exist_ok=True)
    stem = os.path.join(args.out_dir, f"{args.study}_seed{args.seed}")
    table.write_csv(out.add(stem + "_scores.csv"))
    table.write_raw_csv(out.add(stem + "_raw.csv"))
    with open(out.add(stem + "_table.txt"), "w") as fh:
        fh.write(table.to_text())
    print(table.to_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fsagp", description="Full-scale approximation GP toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write synthetic datasets for the 1-D studies")
    s.add_argument("study", choices=["sim1", "sim2", "sim3"])
    s.add_argument("--replicates", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="run the reversible-jump sampler")
    f.add_argument("--data", required=True)
    f.add_argument("--config", required=True)
    f.add_argument("--out", required=True, help="chain CSV")
    f.add_argument("--manifest")
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("predict", help="posterior prediction from a fitted chain")
    r.add_argument("--data", required=True)
    r.add_argument("--config", required=True)
    r.add_argument("--chain", required=True)
    r.add_argument("--locations", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--draws", help="optional binary file of all draws")
    r.add_argument("--include-noise", action="store_true", help="predict Z instead of Y")
    r.set_defaults(func=cmd_predict)

    c = sub.add_parser("score", help="MSPE/ASD and interval score against truth or held-out data")
    c.add_argument("--pred", required=True)
    c.add_argument("--truth", required=True)
    c.add_argument("--value-column", default="y")
    c.add_argument("--metric", choices=["mspe", "asd"], default="mspe")
    c.add_argument("--level", type=float, default=0.95)
    c.add_argument("--transform", choices=["none", "shiftlog"], default="none")
    c.add_argument("--shift", type=float, default=160.0)
    c.add_argument("--out")
    c.set_defaults(func=cmd_score)

    t = sub.add_parser("study", help="replicated simulation study")
    t.add_argument("study", choices=["sim1", "sim2", "sim3"])
    t.add_argument("--variants", default="", help="comma list, e.g. random-NPC,fixed14-SPC")
    t.add_argument("--replicates", type=int, default=10)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--n-iter", type=int, default=10_000)
    t.add_argument("--n-burn", type=int, default=5_000)
    t.add_argument("--thin", type=int, default=10)
    t.add_argument("--keep-every", type=int, default=1)
    t.add_argument("--jobs", type=int, default=1)
    t.add_argument("--out-dir", default=".")
    t.set_defaults(func=cmd_study)
    return p


def cli_main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    args.raw_argv = argv[1:]
    out = _Outputs()
    try:
        return args.func(args, out)
    except (ChainError, CholeskyError, np.linalg.LinAlgError) as exc:
        out.cleanup()
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as exc:
        out.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main())
