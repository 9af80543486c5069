"""Command-line driver: ``npl-et <subcommand> --config FILE [--seed U64] [--workers N] [--out DIR]``.

Configs are UTF-8 ``key=value`` files with ``#`` comments.  Every key must be
known to the schema below; each subcommand lists the keys it requires.
Exit status: 0 ok, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import __version__
from . import io as nio
from .errors import (CapacityError, ConfigError, DegenerateDataError, DimensionMismatchError,
                     FormatError, InsufficientDataError, InvalidArgumentError,
                     InvalidSegmentationError, ModelViolationError, NplError, NumericError,
                     PreconditionError)
from .experiments import lesion_scene, region_labels
from .geometry import Grid, SparseDesign, assemble_design, build_parallel_geometry, build_ring_geometry
from .gibbs import (Chain, GibbsConfig, eigenmode_correlations, eigenmode_fractions, fisher_matrices,
                    increasing_trend, run_chain)
from .misspec import (MIN_VALUE, counterexample_objective, counterexample_solve, random_starts)
from .model import PenaltyParams, Sinogram, make_disk_phantom, normalize_total, simulate_sinogram
from .mri import Segmentation, reduce_design, wlb_sample
from .npl import NplConfig, npl_sample
from .recon import SolverConfig, lambda_opt, solve
from .stats import STATUS_NAMES, coverage, default_mask, profile, summarize

OUT_ENV = "NPL_ET_OUT"
EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (parser, default); default None means "no default"
SCHEMA: Dict[str, tuple] = {
    # grid and geometry
    "width": (int, 64), "height": (int, None), "extent": (float, 1.0),
    "geometry": (str, "parallel"), "n_angles": (int, None), "n_offsets": (int, None),
    "n_detectors": (int, 64), "normalization": (str, "scaled"), "design_text": (_bool, False),
    # phantom
    "phantom": (str, "disk"), "inner_value": (float, 2.0), "outer_value": (float, 1.0),
    "r_in": (float, 0.25), "r_out": (float, None), "total": (float, 0.0),
    # data and solver
    "t": (float, 1.0), "seed": (int, 0),
    "max_iters": (int, 500), "rel_tol": (float, 1e-9),
    "zeta": (float, 0.05), "nu": (float, 0.15), "beta": (float, 2e-3), "beta_min": (float, 1e-3),
    # npl / wlb
    "rho": (float, 0.0), "B": (int, 100),
    # gibbs
    "alpha": (float, 1.0), "prior_beta": (float, 1.0), "burn_in": (int, 1000),
    "n_samples": (int, 2000), "m_max": (int, 0),
    # summaries
    "level": (float, 0.95), "row": (int, -1),
    # input paths
    "phantom_file": (str, None), "design_file": (str, None), "sinogram_file": (str, None),
    "segmentation_file": (str, None), "archive_dir": (str, None), "chain_dir": (str, None),
    "target_file": (str, None), "summary_dir": (str, None),
    # misspec
    "n_starts": (int, 20),
}


@dataclass
class RunConfig:
    values: Dict[str, object]
    text: str

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        try:
            raw = nio.parse_kv(text)
        except FormatError as exc:
            raise ConfigError(str(exc)) from exc
        unknown = sorted(set(raw) - set(SCHEMA))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        vals = {}
        for k, (conv, default) in SCHEMA.items():
            if k in raw:
                try:
                    vals[k] = conv(raw[k])
                except ValueError as exc:
                    raise ConfigError(f"bad value for {k}: {raw[k]!r}") from exc
            else:
                vals[k] = default
        return cls(vals, text)

    def __getitem__(self, key):
        return self.values[key]

    def require(self, *keys):
        missing = [k for k in keys if self.values.get(k) is None]
        if missing:
            raise ConfigError(f"missing required keys: {', '.join(missing)}")

    @property
    def hash(self) -> str:
        canon = "".join(f"{k}={self.values[k]!r}\n" for k in sorted(self.values))
        return hashlib.sha256(canon.encode()).hexdigest()

    def grid(self) -> Grid:
        w = self["width"]
        return Grid(w, self["height"] or w, self["extent"])

    def penalty(self) -> PenaltyParams:
        return PenaltyParams(self["zeta"], self["nu"])


@dataclass
class Context:
    cfg: RunConfig
    out: Path
    seed: int
    workers: int
    inputs: List[Path]

    def path(self, key: str) -> Path:
        self.cfg.require(key)
        p = Path(self.cfg[key])
        if not p.exists():
            raise FileNotFoundError(f"{key}: {p} does not exist")
        self.inputs.append(p)
        return p


# -- loaders ----------------------------------------------------------------------

def _grid_design(ctx: Context) -> SparseDesign:
    g = ctx.cfg.grid()
    path = ctx.path("design_file")
    try:
        return nio.read_design_binary(path, g)
    except InvalidArgumentError as exc:
        raise DimensionMismatchError(f"design_file: {exc}") from exc


def _image(ctx: Context, key: str, grid: Grid) -> np.ndarray:
    v, w, h = nio.read_image(ctx.path(key))
    if (w, h) != (grid.width, grid.height):
        raise DimensionMismatchError(f"{key}: image is {w}x{h}, config grid is {grid.width}x{grid.height}")
    return v


def _write_image_set(out: Path, stem: str, values, grid: Grid):
    nio.write_image(out / f"{stem}.npli", values, grid.width, grid.height)
    nio.write_image_csv(out / f"{stem}.csv", values, grid.width, grid.height)
    nio.write_pgm16(out / f"{stem}.pgm", values, grid.width, grid.height)


# -- subcommands ------------------------------------------------------------------

def cmd_phantom(ctx: Context):
    cfg, g = ctx.cfg, ctx.cfg.grid()
    if cfg["phantom"] == "disk":
        img = make_disk_phantom(g, cfg["inner_value"], cfg["outer_value"], cfg["r_in"],
                                cfg["r_out"] if cfg["r_out"] is not None else g.extent)
        x, y = g.centers()
        r = np.hypot(x, y)
        outer = r < (cfg["r_out"] if cfg["r_out"] is not None else np.inf)
        seg = Segmentation([region_labels(g, [outer, r < cfg["r_in"]])])
    elif cfg["phantom"] == "lesion":
        if g.width != g.height:
            raise ConfigError("the lesion phantom needs a square grid")
        sc = lesion_scene(g.width, 1.0, n_angles=1)
        img, seg = sc.truth, sc.segmentation
    else:
        raise ConfigError(f"unknown phantom kind {cfg['phantom']!r}")
    if cfg["total"] > 0:
        img = normalize_total(img, cfg["total"])
    _write_image_set(ctx.out, "phantom", img, g)
    nio.write_segmentation(ctx.out, seg, g.width, g.height)
    print(f"phantom: {g.width}x{g.height}, total activity {img.sum():.6g}, {seg.p_m} segments")


def cmd_project(ctx: Context):
    cfg, g = ctx.cfg, ctx.cfg.grid()
    if cfg["geometry"] == "parallel":
        rays = build_parallel_geometry(cfg["n_angles"] or g.width, cfg["n_offsets"] or g.width, g)
        design = assemble_design(rays, g, cfg["normalization"])
    elif cfg["geometry"] == "ring":
        rays = build_ring_geometry(cfg["n_detectors"], g)
        design = assemble_design(rays, g, cfg["normalization"], drop_empty_rays=True)
    else:
        raise ConfigError(f"unknown geometry {cfg['geometry']!r}")
    nio.write_design_binary(ctx.out / "design.npld", design)
    if cfg["design_text"]:
        nio.write_design_text(ctx.out / "design.txt", design)
    if cfg["phantom_file"] is not None:
        lam = _image(ctx, "phantom_file", g)
        nio.write_sinogram(ctx.out / "intensities.npls", Sinogram(design.forward(lam), 1.0))
    print(f"design: d={design.d} p={design.p} nnz={design.nnz} ({cfg['normalization']})")


def cmd_simulate(ctx: Context):
    g = ctx.cfg.grid()
    design = _grid_design(ctx)
    lam = _image(ctx, "phantom_file", g)
    sino = simulate_sinogram(lam, design, ctx.cfg["t"], ctx.seed)
    nio.write_sinogram(ctx.out / "sinogram.npls", sino)
    nio.write_sinogram_csv(ctx.out / "sinogram.csv", sino)
    print(f"sinogram: d={sino.d}, t={sino.t:g}, total counts {int(sino.values.sum())}")


def _solver(cfg: RunConfig, beta: float) -> SolverConfig:
    return SolverConfig(cfg["max_iters"], cfg["rel_tol"], beta, cfg.penalty() if beta > 0 else None)


def _recon(ctx: Context, beta_t: float, stem: str):
    g = ctx.cfg.grid()
    design = _grid_design(ctx)
    sino = nio.read_sinogram(ctx.path("sinogram_file"))
    rep = solve(sino.values / sino.t, design, _solver(ctx.cfg, beta_t / sino.t))
    nio.write_solve_report(ctx.out, rep, g.width, g.height, stem)
    nio.write_pgm16(ctx.out / f"{stem}.pgm", rep.result, g.width, g.height)
    print(f"{stem}: iterations={rep.iterations} converged={rep.converged} objective={rep.objective_final:.10g}")


def cmd_mlem(ctx: Context):
    _recon(ctx, 0.0, "mlem")


def cmd_map(ctx: Context):
    _recon(ctx, ctx.cfg["beta"], "map")


def cmd_lambda_opt(ctx: Context):
    g = ctx.cfg.grid()
    design = _grid_design(ctx)
    lam = _image(ctx, "phantom_file", g)
    rep = lambda_opt(lam, design, ctx.cfg["beta_min"], ctx.cfg.penalty(), ctx.cfg["max_iters"], ctx.cfg["rel_tol"])
    nio.write_solve_report(ctx.out, rep, g.width, g.height, "lambda_opt")
    nio.write_pgm16(ctx.out / "lambda_opt.pgm", rep.result, g.width, g.height)
    print(f"lambda_opt: iterations={rep.iterations} converged={rep.converged}")


def _mixing(ctx: Context, design: SparseDesign):
    seg = nio.read_segmentation(ctx.path("segmentation_file"))
    return reduce_design(design, seg)


def cmd_wlb(ctx: Context):
    design = _grid_design(ctx)
    sino = nio.read_sinogram(ctx.path("sinogram_file"))
    mixing = _mixing(ctx, design)
    rows = []
    for b in range(ctx.cfg["B"]):
        md = wlb_sample(sino, mixing, ctx.seed, b=b)
        mass = float(mixing.col_sums @ md.lambda_m)
        rows.append([b, *[float(v) for v in md.lambda_m], mass, float(md.weights.sum())])
    head = ["draw"] + [f"lambda_m_{k}" for k in range(mixing.p_m)] + ["mass", "weight_total"]
    nio.write_csv(ctx.out / "wlb.csv", head, rows)
    print(f"wlb: {len(rows)} draws over {mixing.p_m} segments, cond(A_M)={mixing.condition_number:.4g}")


def cmd_npl(ctx: Context):
    cfg, g = ctx.cfg, ctx.cfg.grid()
    design = _grid_design(ctx)
    sino = nio.read_sinogram(ctx.path("sinogram_file"))
    mixing = _mixing(ctx, design) if cfg["rho"] > 0 else None
    solver = SolverConfig(cfg["max_iters"], cfg["rel_tol"])
    ncfg = NplConfig(rho=cfg["rho"], B=cfg["B"], beta=cfg["beta"],
                     penalty=cfg.penalty(), solver=solver, seed=ctx.seed)
    arch = npl_sample(sino, design, mixing, ncfg, workers=ctx.workers)
    meta = {"kind": "npl", "seed": ctx.seed, "rho": cfg["rho"], "t": sino.t, "beta": cfg["beta"],
            "zeta": cfg["zeta"], "nu": cfg["nu"], "B": cfg["B"], "width": g.width, "height": g.height,
            "max_iters": cfg["max_iters"], "rel_tol": cfg["rel_tol"]}
    nio.write_archive(ctx.out, arch, g.width, g.height, meta)
    n_fail = int((~arch.ok).sum())
    print(f"npl: {arch.B} draws, {n_fail} failed")
    if n_fail == arch.B:
        raise NumericError("every draw failed")


def cmd_gibbs(ctx: Context):
    cfg, g = ctx.cfg, ctx.cfg.grid()
    design = _grid_design(ctx)
    sino = nio.read_sinogram(ctx.path("sinogram_file"))
    start = _image(ctx, "phantom_file", g)
    gcfg = GibbsConfig(cfg["alpha"], cfg["prior_beta"], cfg["burn_in"], cfg["n_samples"], None, ctx.seed)
    chain = run_chain(sino, design, gcfg, start)
    meta = {"seed": ctx.seed, "t": sino.t, "alpha": cfg["alpha"], "prior_beta": cfg["prior_beta"],
            "burn_in": cfg["burn_in"], "n_samples": cfg["n_samples"], "width": g.width, "height": g.height}
    nio.write_chain(ctx.out, chain, g.width, g.height, meta)
    print(f"gibbs: stored {chain.samples.shape[0]} samples after {cfg['burn_in']} burn-in")


def cmd_diagnose(ctx: Context):
    g = ctx.cfg.grid()
    design = _grid_design(ctx)
    lam = _image(ctx, "phantom_file", g)
    ctx.cfg.require("chain_dir")
    chain_dir = Path(ctx.cfg["chain_dir"])
    samples = nio.read_archive_draws(chain_dir)
    pair = fisher_matrices(lam, design)
    m = ctx.cfg["m_max"] or pair.rank
    ga = eigenmode_fractions(pair, m)
    ge = eigenmode_correlations(Chain(samples, None), pair, m)
    rows = [(k + 1, float(pair.eigvals[k]), float(ga[k]), float(ge[k])) for k in range(len(ga))]
    nio.write_csv(ctx.out / "diagnostics.csv", ["mode", "s_m", "gamma_analytic", "gamma_empirical"], rows)
    half = samples.shape[0] // 2
    first = eigenmode_correlations(Chain(samples[:half], None), pair, m)
    second = eigenmode_correlations(Chain(samples[half:], None), pair, m)
    drift = float(np.nanmax(np.abs(first - second)))
    check = {"max_half_difference": drift}
    if np.count_nonzero(np.isfinite(ge)) >= 8:
        check["empirical_trend_increasing"] = bool(increasing_trend(ge))
    nio.atomic_write_text(ctx.out / "burn_in_check.txt", nio.format_kv(check))
    err = np.abs(ga - ge)
    print(f"diagnose: {len(rows)} modes, max |analytic - empirical| = {np.nanmax(err):.4f}")


def cmd_summarize(ctx: Context):
    cfg, g = ctx.cfg, ctx.cfg.grid()
    ctx.cfg.require("archive_dir")
    draws = nio.read_archive_draws(cfg["archive_dir"])
    s = summarize(draws, cfg["level"])
    for stem, img in (("mean", s.mean), ("std", s.std), ("lower", s.lower), ("upper", s.upper)):
        _write_image_set(ctx.out, stem, img, g)
    row = cfg["row"] if cfg["row"] >= 0 else g.height // 2
    lo, mid, hi = profile(s, row, g.width)
    nio.write_csv(ctx.out / "profile.csv", ["x", "lower", "mean", "upper"],
                  [(k, float(a), float(b), float(c)) for k, (a, b, c) in enumerate(zip(lo, mid, hi))])
    nio.atomic_write_text(ctx.out / "summary.txt", nio.format_kv({"n_draws": s.n_draws, "level": s.level}))
    print(f"summarize: {s.n_draws} draws, level {s.level}")


def cmd_coverage(ctx: Context):
    cfg, g = ctx.cfg, ctx.cfg.grid()
    ctx.cfg.require("archive_dir")
    draws = nio.read_archive_draws(cfg["archive_dir"])
    s = summarize(draws, cfg["level"])
    target = _image(ctx, "target_file", g)
    cov = coverage(s, target, default_mask(target))
    nio.write_csv(ctx.out / "coverage.csv", ["pixel", "status"],
                  [(j, STATUS_NAMES[int(v)]) for j, v in enumerate(cov.status)])
    nio.atomic_write_text(ctx.out / "fraction.txt", f"fraction={cov.fraction!r}\n")
    print(f"fraction={cov.fraction:.4f}")


def cmd_misspec(ctx: Context):
    starts = np.vstack([[1.0, 0, 0, 0], [0.3, 0.7, 0.1, 0.1], random_starts(ctx.cfg["n_starts"], ctx.seed)])
    rows = []
    print(f"{'start':>5} {'lambda1':>12} {'lambda2':>12} {'lambda3':>10} {'lambda4':>10} {'objective':>14}")
    for k, st in enumerate(starts):
        lam = counterexample_solve(st)
        obj = counterexample_objective(lam)
        rows.append((k, *[float(v) for v in lam], float(obj)))
        print(f"{k:5d} {lam[0]:12.8f} {lam[1]:12.8f} {lam[2]:10.2e} {lam[3]:10.2e} {obj:14.10f}")
    print(f"analytic minimum log(2+sqrt2)+1 = {MIN_VALUE:.10f}")
    nio.write_csv(ctx.out / "counterexample.csv", ["start", "λ1", "λ2", "λ3", "λ4", "objective"], rows)


COMMANDS: Dict[str, Callable[[Context], None]] = {
    "phantom": cmd_phantom, "project": cmd_project, "simulate": cmd_simulate, "mlem": cmd_mlem,
    "map": cmd_map, "lambda-opt": cmd_lambda_opt, "wlb": cmd_wlb, "npl": cmd_npl, "gibbs": cmd_gibbs,
    "diagnose": cmd_diagnose, "summarize": cmd_summarize, "coverage": cmd_coverage,
    "misspec": cmd_misspec,
}


def _manifest(ctx: Context, command: str):
    lines = [f"tool=npl-et {__version__}", f"command={command}", f"config_sha256={ctx.cfg.hash}",
             f"seed={ctx.seed}", f"workers={ctx.workers}"]
    for p in ctx.inputs:
        if p.is_file():
            lines.append(f"input:{p}={nio.file_hash(p)}")
    lines.append(f"timestamp={time.strftime('%Y-%m-%dT%H:%M:%SZ', time.gmtime())}")
    nio.atomic_write_text(ctx.out / "manifest.txt", "\n".join(lines) + "\n")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="npl-et", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="key=value config file")
    ap.add_argument("--seed", type=int, help="overrides the seed key (unsigned 64-bit)")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, help=f"output directory (default ${OUT_ENV} or ./out)")
    return ap


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is None:
            if args.command != "misspec":
                raise ConfigError("--config is required")
            text = ""
        else:
            try:
                text = args.config.read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from exc
        cfg = RunConfig.parse(text)
        seed = args.seed if args.seed is not None else cfg["seed"]
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        out = args.out or Path(os.environ.get(OUT_ENV, "out"))
        out.mkdir(parents=True, exist_ok=True)
        ctx = Context(cfg, out, seed, args.workers, [args.config] if args.config else [])
        COMMANDS[args.command](ctx)
        _manifest(ctx, args.command)
        return 0
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, FileNotFoundError, DimensionMismatchError, ModelViolationError,
            DegenerateDataError, InvalidSegmentationError, InsufficientDataError, CapacityError,
            PreconditionError, NplError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
