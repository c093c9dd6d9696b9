"""Command-line front end.

Subcommands: ``simulate``, ``fit``, ``classify``, ``benchmark`` and
``rcd-extract``.  Parameters come from an optional YAML config file with
sections ``simulate``, ``plan``, ``em``, ``hypergeom``, ``benchmark`` and
``rcd``; command-line flags override the file.

Exit codes: 0 success, 1 usage or config error, 2 numerical failure,
3 partial batch failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import spd
from .baselines import gmm_eigen, kmeans_eigen, log_euclidean_classify, rand_index
from .dataset import read_dataset, write_dataset
from .em import ModelParams, PairLikelihood, build_weight_plan, classify, fit
from .errors import WishartEMError
from .rcd import blue_scale, rcd_pipeline, read_image, read_mask_csv
from .simulate import SimConfig, simulate, trained_means
from .special import HypergeomConfig

log = logging.getLogger("wishart_em")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_PARTIAL = 0, 1, 2, 3
LAMBDA_GRID = [5 * 2.0**-k for k in range(5, -1, -1)]
U_GRID = [0.2, 0.4, 0.6, 0.8]
METHODS = ("em_hybrid", "log_euclidean", "kmeans_eigen", "gmm_eigen")
BENCHMARK_COLUMNS = ["replication", "method", "lambda", "u", "rand_index", "wall_ms"]

DEFAULTS = {
    "seed": 0,
    "simulate": {"T": 50, "p": 3, "K": 3, "M": 5, "phi": 1.0, "weights": None,
                 "covariate_dim": 10, "n_train": 10},
    "plan": {"lambda": 1.25, "u": 0.4, "seed": None},
    "em": {"tol": 1e-6, "max_iter": 200, "init": {}},
    "hypergeom": {"max_weight": 60, "relative_tol": 1e-10, "method": "auto"},
    "benchmark": {"replications": 100, "methods": list(METHODS), "lambdas": LAMBDA_GRID,
                  "us": U_GRID, "restarts": 10},
    "rcd": {"masks": None},
}


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- config --------------------------------------------------------------------

def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in update.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(data) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    return _merge(DEFAULTS, data)


def apply_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(cfg)
    flag_map = {
        "seed": ("seed",),
        "T": ("simulate", "T"), "p": ("simulate", "p"), "K": ("simulate", "K"),
        "M": ("simulate", "M"), "phi": ("simulate", "phi"),
        "covariate_dim": ("simulate", "covariate_dim"), "n_train": ("simulate", "n_train"),
        "lam": ("plan", "lambda"), "u": ("plan", "u"), "plan_seed": ("plan", "seed"),
        "tol": ("em", "tol"), "max_iter": ("em", "max_iter"),
        "init_phi": ("em", "init", "phi"), "init_dof": ("em", "init", "dof"),
        "max_weight": ("hypergeom", "max_weight"), "hyp_method": ("hypergeom", "method"),
        "replications": ("benchmark", "replications"), "methods": ("benchmark", "methods"),
        "lambdas": ("benchmark", "lambdas"), "us": ("benchmark", "us"),
        "restarts": ("benchmark", "restarts"),
    }
    for attr, path in flag_map.items():
        val = getattr(args, attr, None)
        if val is None:
            continue
        node = cfg
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = val
    return cfg


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()


def sim_config(cfg: dict, seed: int) -> SimConfig:
    s = cfg["simulate"]
    weights = tuple(s["weights"]) if s.get("weights") else ()
    try:
        return SimConfig(T=int(s["T"]), p=int(s["p"]), K=int(s["K"]), M=s["M"], phi=float(s["phi"]),
                         weights=weights, covariate_dim=int(s["covariate_dim"]), seed=int(seed))
    except (ValueError, TypeError, WishartEMError) as exc:
        raise ConfigError(f"invalid simulate section: {exc}") from None


def hyp_config(cfg: dict) -> HypergeomConfig:
    h = cfg["hypergeom"]
    try:
        return HypergeomConfig(int(h["max_weight"]), float(h["relative_tol"]), str(h["method"]))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid hypergeom section: {exc}") from None


def plan_seed(cfg: dict) -> int:
    seed = cfg["plan"].get("seed")
    return int(cfg["seed"] if seed is None else seed)


def _write_manifest(out: Path, command: str, cfg: dict, extra: dict | None = None) -> None:
    manifest = {"command": command, "seed": cfg["seed"], "config_hash": config_hash(cfg), "config": cfg}
    manifest.update(extra or {})
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)


# -- commands --------------------------------------------------------------------

def cmd_simulate(cfg: dict, out: Path) -> int:
    sc = sim_config(cfg, cfg["seed"])
    sim = simulate(sc)
    train = trained_means(sc, sim.group_means, int(cfg["simulate"]["n_train"]),
                          seed=np.random.SeedSequence([sc.seed, 1]))
    write_dataset(out, sim.to_dataset(train))
    _write_manifest(out, "simulate", cfg, {"files": sorted(p.name for p in out.iterdir())})
    log.info("wrote %d matrices to %s", sc.T, out)
    return EXIT_OK


def _load_means(data_dir: Path, means_path: str | None, data) -> np.ndarray:
    if means_path:
        return np.array(spd.read_spd_csv(means_path))
    if data.trained_means is not None:
        return data.trained_means
    if data.means is not None:
        return data.means
    raise ConfigError(f"{data_dir} holds no trained_means.csv or means.csv; pass --means")


def _init_params(cfg: dict, K: int):
    init = cfg["em"].get("init") or {}
    if not init:
        return None
    try:
        return ModelParams(dof=float(init["dof"]), phi=float(init["phi"]),
                           weights=tuple(init.get("weights") or [1.0 / K] * K))
    except (KeyError, TypeError, ValueError, WishartEMError) as exc:
        raise ConfigError(f"em.init needs dof and phi: {exc}") from None


def cmd_fit(cfg: dict, data_dir: Path, out: Path, means_path: str | None = None) -> int:
    data = read_dataset(data_dir)
    means = _load_means(data_dir, means_path, data)
    plan = build_weight_plan(data.covariates, float(cfg["plan"]["lambda"]), float(cfg["plan"]["u"]),
                             plan_seed(cfg))
    result = fit(data, means, init=_init_params(cfg, means.shape[0]), plan=plan, cfg=hyp_config(cfg),
                 max_iter=int(cfg["em"]["max_iter"]), tol=float(cfg["em"]["tol"]))
    result.save(out)
    extra = {"wall_seconds": result.wall_seconds, "data": str(data_dir), "pairs": len(plan)}
    if data.labels is not None:
        extra["rand_index"] = rand_index(result.labels, data.labels)
    _write_manifest(out, "fit", cfg, extra)
    log.info("fit converged=%s after %d iterations in %.1fs", result.converged,
             result.iterations, result.wall_seconds)
    return EXIT_OK


def cmd_classify(cfg: dict, data_dir: Path, out: Path, params_path: str | None,
                 means_path: str | None = None) -> int:
    data = read_dataset(data_dir)
    means = _load_means(data_dir, means_path, data)
    if params_path:
        with open(params_path) as fh:
            p = json.load(fh)["params"]
        params = ModelParams(dof=p["dof"], weights=tuple(p["weights"]), phi=p["phi"])
    else:
        params = _init_params(cfg, means.shape[0])
        if params is None:
            raise ConfigError("classify needs --params or em.init (dof, phi)")
    plan = build_weight_plan(data.covariates, float(cfg["plan"]["lambda"]), float(cfg["plan"]["u"]),
                             plan_seed(cfg))
    G, labels = classify(data, means, params, plan, hyp_config(cfg))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "classifier.csv", "w", newline="") as fh:
        csv.writer(fh).writerows([[repr(float(v)) for v in row] for row in G])
    (out / "labels.csv").write_text("".join(f"{v}\n" for v in labels))
    _write_manifest(out, "classify", cfg, {"params": params.to_dict()})
    return EXIT_OK


def run_replication(cfg: dict, rep: int) -> list[dict]:
    """All requested methods on one simulated replication; rows in a fixed order."""
    seed = int(cfg["seed"]) + rep
    sc = sim_config(cfg, seed)
    bench = cfg["benchmark"]
    sim = simulate(sc)
    means = trained_means(sc, sim.group_means, int(cfg["simulate"]["n_train"]),
                          seed=np.random.SeedSequence([seed, 1]))
    data = sim.to_dataset(means)
    rows = []

    def record(method, lam, u, func):
        start = time.perf_counter()
        try:
            labels = func()
            score = rand_index(labels, sim.labels)
            error = None
        except WishartEMError as exc:
            score, error = None, f"{type(exc).__name__}: {exc}"
        rows.append({"replication": rep, "method": method, "lambda": lam, "u": u, "rand_index": score,
                     "wall_ms": 1000.0 * (time.perf_counter() - start), "error": error})

    restarts = int(bench.get("restarts", 10))
    for method in bench["methods"]:
        if method == "em_hybrid":
            hyp = hyp_config(cfg)
            for u in bench["us"]:
                shared = None
                for lam in bench["lambdas"]:
                    def run_em(lam=lam, u=u):
                        nonlocal shared
                        plan = build_weight_plan(data.covariates, float(lam), float(u), seed)
                        if shared is None:
                            shared = PairLikelihood(data, means, plan, hyp)
                        res = fit(data, means, plan=plan, cfg=hyp, likelihood=shared,
                                  max_iter=int(cfg["em"]["max_iter"]), tol=float(cfg["em"]["tol"]))
                        return res.labels
                    record(method, float(lam), float(u), run_em)
        elif method == "log_euclidean":
            record(method, None, None, lambda: log_euclidean_classify(data.matrices, means))
        elif method == "kmeans_eigen":
            record(method, None, None, lambda: kmeans_eigen(data.matrices, sc.K, seed, restarts))
        elif method == "gmm_eigen":
            record(method, None, None, lambda: gmm_eigen(data.matrices, sc.K, seed, restarts))
        else:
            raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    return rows


def _replication_job(args):
    cfg, rep = args
    try:
        return rep, run_replication(cfg, rep), None
    except ConfigError:
        raise
    except Exception as exc:  # recorded, the batch continues
        return rep, [], f"{type(exc).__name__}: {exc}"


def cmd_benchmark(cfg: dict, out: Path, jobs: int = 1) -> int:
    bench = cfg["benchmark"]
    n_rep = int(bench["replications"])
    if n_rep < 1:
        raise ConfigError("benchmark.replications must be >= 1")
    unknown = set(bench["methods"]) - set(METHODS)
    if unknown:
        raise ConfigError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
    sim_config(cfg, cfg["seed"])  # validate before spawning workers
    tasks = [(cfg, rep) for rep in range(n_rep)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_replication_job, tasks))
    else:
        results = [_replication_job(t) for t in tasks]
    results.sort(key=lambda r: r[0])

    out.mkdir(parents=True, exist_ok=True)
    failures = []
    rows = []
    for rep, rep_rows, error in results:
        if error:
            failures.append({"replication": rep, "error": error})
        for row in rep_rows:
            if row["error"]:
                failures.append({"replication": rep, "method": row["method"], "lambda": row["lambda"],
                                 "u": row["u"], "error": row["error"]})
            rows.append(row)
    with open(out / "results.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCHMARK_COLUMNS)
        for row in rows:
            writer.writerow(["" if row[c] is None else row[c] for c in BENCHMARK_COLUMNS])
    summary = {}
    for row in rows:
        if row["rand_index"] is None:
            continue
        key = row["method"] if row["lambda"] is None else f"{row['method']}[lambda={row['lambda']},u={row['u']}]"
        summary.setdefault(key, []).append(row["rand_index"])
    with open(out / "summary.json", "w") as fh:
        json.dump({"mean_rand_index": {k: float(np.mean(v)) for k, v in sorted(summary.items())},
                   "failures": failures}, fh, indent=2)
    _write_manifest(out, "benchmark", cfg, {"replications": n_rep, "failures": len(failures)})
    for key, vals in sorted(summary.items()):
        log.info("%-40s mean Rand %.4f over %d", key, np.mean(vals), len(vals))
    return EXIT_PARTIAL if failures else EXIT_OK


def descriptor_name(path) -> str:
    return Path(path).stem + "_rcd.csv"


def _extract_one(args):
    path, mask_path, out = args
    try:
        img = read_image(path)
        mask = read_mask_csv(mask_path) if mask_path else None
        desc = rcd_pipeline(img, mask)
        sigma = blue_scale(img, mask)
        target = Path(out) / descriptor_name(path)
        spd.write_spd_csv(target, [desc])
        return {"image": str(path), "descriptor": target.name, "sigma_blue": sigma, "error": None}
    except (WishartEMError, OSError, ValueError) as exc:
        return {"image": str(path), "descriptor": None, "sigma_blue": None,
                "error": f"{type(exc).__name__}: {exc}"}


def cmd_rcd_extract(cfg: dict, images: list[str], out: Path, masks: list[str] | None = None,
                    jobs: int = 1) -> int:
    if masks and len(masks) != len(images):
        raise ConfigError("give one mask per image")
    names = [descriptor_name(p) for p in images]
    if len(set(names)) != len(names):
        raise ConfigError("image file names must have distinct stems")
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(img, masks[i] if masks else None, str(out)) for i, img in enumerate(images)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_extract_one, tasks))
    else:
        records = [_extract_one(t) for t in tasks]
    for rec in records:
        if rec["error"]:
            log.error("%s: %s", rec["image"], rec["error"])
    n_failed = sum(r["error"] is not None for r in records)
    _write_manifest(out, "rcd-extract", cfg, {"images": records, "failures": n_failed})
    return EXIT_PARTIAL if n_failed else EXIT_OK


# -- argument parsing --------------------------------------------------------------

def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wishart-em", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True, help="output directory")

    def sim_flags(p):
        p.add_argument("--T", type=int)
        p.add_argument("--p", type=int)
        p.add_argument("--K", type=int)
        p.add_argument("--M", type=int)
        p.add_argument("--phi", type=float)
        p.add_argument("--covariate-dim", dest="covariate_dim", type=int)
        p.add_argument("--n-train", dest="n_train", type=int)

    def fit_flags(p):
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--u", type=float)
        p.add_argument("--plan-seed", dest="plan_seed", type=int)
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", dest="max_iter", type=int)
        p.add_argument("--init-phi", dest="init_phi", type=float)
        p.add_argument("--init-dof", dest="init_dof", type=float)
        p.add_argument("--max-weight", dest="max_weight", type=int)
        p.add_argument("--hyp-method", dest="hyp_method", choices=["series", "auto"])

    p = sub.add_parser("simulate", help="simulate a dataset directory")
    common(p)
    sim_flags(p)

    for name in ("fit", "classify"):
        p = sub.add_parser(name, help=f"{name} a dataset directory")
        common(p)
        fit_flags(p)
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--means", help="CSV of K plug-in means (default: dataset trained means)")
        if name == "classify":
            p.add_argument("--params", help="fit.json holding fitted parameters")

    p = sub.add_parser("benchmark", help="replicated comparison of classifiers")
    common(p)
    sim_flags(p)
    fit_flags(p)
    p.add_argument("--replications", type=int)
    p.add_argument("--methods", type=lambda s: [m for m in s.split(",") if m])
    p.add_argument("--lambdas", type=_float_list)
    p.add_argument("--us", type=_float_list)
    p.add_argument("--restarts", type=int)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("rcd-extract", help="region covariance descriptors of images")
    common(p)
    p.add_argument("images", nargs="+")
    p.add_argument("--masks", nargs="+", help="mask CSV per image, same order")
    p.add_argument("--jobs", type=int, default=1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    out = Path(args.out)
    try:
        cfg = apply_overrides(load_config(args.config), args)
        if args.command == "simulate":
            out.mkdir(parents=True, exist_ok=True)
            return cmd_simulate(cfg, out)
        if args.command == "fit":
            return cmd_fit(cfg, Path(args.data), out, args.means)
        if args.command == "classify":
            return cmd_classify(cfg, Path(args.data), out, args.params, args.means)
        if args.command == "benchmark":
            return cmd_benchmark(cfg, out, max(1, args.jobs))
        return cmd_rcd_extract(cfg, args.images, out, args.masks, max(1, args.jobs))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WishartEMError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
