"""Command-line entry point for experiments and scaling benchmarks."""

from __future__ import annotations

import argparse
import logging
import re
import sys
from pathlib import Path

from .experiment import (
    MODELS,
    BenchResult,
    ExperimentConfig,
    TerrainSpec,
    bench_scaling,
    build_model,
    run_monte_carlo,
)


def _parse_counts(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _parse_estimators(text):
    specs = re.findall(r"[a-z0-9_]+(?:\([^)]*\))?", text)
    if not specs:
        raise argparse.ArgumentTypeError(f"no estimators in {text!r}")
    return tuple(specs)


def _parse_terrain(text):
    if text == "synthetic":
        return TerrainSpec()
    if text.startswith("synthetic:"):
        kwargs = {}
        casts = {
            "seed": int, "rows": int, "cols": int,
            "cell": float, "roughness": float, "amplitude": float,
        }
        names = {"rows": "n_rows", "cols": "n_cols", "cell": "cell_size"}
        for item in text[len("synthetic:"):].split(","):
            key, _, value = item.partition("=")
            key = key.strip()
            if key not in casts:
                raise argparse.ArgumentTypeError(f"unknown synthetic terrain key {key!r}")
            kwargs[names.get(key, key)] = casts[key](value)
        return TerrainSpec(**kwargs)
    return TerrainSpec(kind="file", path=text)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="epmf-tan",
        description="Terrain-referenced tracking benchmark for grid and particle filters.",
    )
    parser.add_argument("--config", type=Path, help="JSON config file; flags override its values")
    parser.add_argument("--model", choices=MODELS)
    parser.add_argument("--estimators", type=_parse_estimators,
                        help="comma list, e.g. 'pmf_dense,epmf_fft,epmf_fst(0.005),pf(1681)'")
    parser.add_argument("--steps", type=int, help="trajectory length K")
    parser.add_argument("--mc", type=int, help="Monte-Carlo replications M")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--grid-points", type=_parse_counts,
                        help="per-axis grid counts, e.g. '41,41' (a single value is replicated)")
    parser.add_argument("--sigma-mult", type=float)
    parser.add_argument("--terrain", type=_parse_terrain,
                        help="terrain file path, 'synthetic', or 'synthetic:seed=7,cell=30,roughness=0.6'")
    parser.add_argument("--out-dir", type=str)
    parser.add_argument("--bench", action="store_true",
                        help="run the dense-vs-fft scaling benchmark instead of an experiment")
    parser.add_argument("--bench-sizes", type=_parse_counts,
                        help="per-axis counts for --bench, e.g. '9,15,21,31,41'")
    return parser


def _print_metrics(results):
    dims = max(r.rmse.shape[0] for r in results.values())
    head = ["estimator"]
    head += [f"RMSE({j + 1})" for j in range(dims)]
    head += [f"aSTD({j + 1})" for j in range(dims)]
    head += ["mean s/step", "median s/step"]
    rows = [head]
    for rm in results.values():
        row = [rm.estimator]
        row += [f"{v:.4f}" for v in rm.rmse]
        row += [f"{v:.4f}" for v in rm.astd]
        row += [f"{rm.mean_step_time_s:.5f}", f"{rm.median_step_time_s:.5f}"]
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    for row in rows:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    sample = next(iter(results.values()))
    if sample.n_excluded:
        print(f"excluded replications: {sample.n_excluded}")
    for rm in results.values():
        cons = ", ".join(f"{v:.3f}" for v in rm.consistency)
        print(f"consistency |RMSE-aSTD|/aSTD {rm.estimator}: {cons}")


def _run_bench(cfg, sizes):
    dim = build_model(cfg.model).dynamics.dim
    if sizes is None:
        sizes = (9, 15, 21, 31, 41) if dim == 2 else (5, 7, 9, 11)
    rows = []
    for path in ("dense", "fft"):
        res = bench_scaling(cfg.model, sizes, path=path, seed=cfg.seed)
        rows.append(res)
        print(f"{path}: slope {res.slope:.3f}")
        for n, t in zip(res.n_points, res.mean_step_time_s):
            print(f"  N={int(n):>8d}  {t:.5f} s/step")
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench.csv", "w") as fh:
            fh.write("path,n_points,mean_step_time_s\n")
            for res in rows:
                for n, t in zip(res.n_points, res.mean_step_time_s):
                    fh.write(f"{res.path},{int(n)},{t:.10g}\n")
    return rows


def main(argv=None):
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    cfg = cfg.with_overrides(
        model=args.model,
        estimators=args.estimators,
        steps=args.steps,
        mc=args.mc,
        seed=args.seed,
        grid_points=args.grid_points,
        sigma_mult=args.sigma_mult,
        terrain=args.terrain,
        out_dir=args.out_dir,
    )
    if args.bench:
        _run_bench(cfg, args.bench_sizes)
        return 0
    results = run_monte_carlo(cfg)
    _print_metrics(results)
    return 0


if __name__ == "__main__":
    sys.exit(main())
