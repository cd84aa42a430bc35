"""Command-line front door.

Hyperparameters live in a JSON config file (archivable, diffable); flags
are reserved for paths and execution knobs. Every subcommand writes its
artifacts into --out, which must not already exist unless --force is
given. Exit codes: 0 success, 1 config/usage error, 2 training diverged.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from . import analysis, datasets, theory, trainer
from .datasets import SplitDataset
from .linalg import Rng
from .nncore import MlpSpec
from .perturb import AttackSpec, BallSpec, InnerAscentSpec
from .trainer import TrainConfig, TrainingDiverged


class ConfigError(Exception):
    pass


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _check_keys(section: dict, where: str, allowed: set[str], required: set[str] = frozenset()):
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected an object")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{where}: unknown key '{key}'")
    for key in required:
        if key not in section:
            raise ConfigError(f"{where}: missing key '{key}'")


def load_config(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: invalid JSON ({exc})") from None
    _check_keys(cfg, "config", allowed={"seed", "model", "dataset", "train", "scan",
                                        "sweep", "calibrate", "attack_eval", "theory"})
    return cfg


def build_dataset(cfg: dict) -> SplitDataset:
    section = cfg.get("dataset")
    if section is None:
        raise ConfigError("config: missing 'dataset' section")
    kind = section.get("kind")
    if kind == "spiral":
        _check_keys(section, "dataset", {"kind", "n_per_class", "num_classes", "noise_sd",
                                         "seed", "test_fraction"},
                    {"kind", "n_per_class", "num_classes", "noise_sd", "seed", "test_fraction"})
        ds = datasets.gen_spiral(section["n_per_class"], section["num_classes"],
                                 section["noise_sd"], section["seed"])
    elif kind == "blobs":
        _check_keys(section, "dataset", {"kind", "n_per_class", "centers", "sd",
                                         "seed", "test_fraction"},
                    {"kind", "n_per_class", "centers", "sd", "seed", "test_fraction"})
        ds = datasets.gen_blobs(section["n_per_class"], np.asarray(section["centers"]),
                                section["sd"], section["seed"])
    elif kind == "csv":
        _check_keys(section, "dataset", {"kind", "path", "seed", "test_fraction", "standardize"},
                    {"kind", "path", "seed", "test_fraction"})
        ds = datasets.load_csv(section["path"])
    else:
        raise ConfigError("dataset.kind must be spiral, blobs, or csv")
    sd = datasets.split(ds, section["test_fraction"], section["seed"])
    if section.get("standardize", False):
        sd = datasets.standardize(sd)
    return sd


def build_model_spec(cfg: dict, num_classes: int, d_in: int) -> MlpSpec:
    section = cfg.get("model", {"hidden": [64, 64]})
    _check_keys(section, "model", {"hidden"}, {"hidden"})
    hidden = section["hidden"]
    if not isinstance(hidden, list) or any(not isinstance(h, int) or h < 1 for h in hidden):
        raise ConfigError("model.hidden must be a list of positive ints")
    return MlpSpec((d_in, *hidden, num_classes))


def build_train_config(cfg: dict, seed_override: int | None) -> TrainConfig:
    section = cfg.get("train")
    if section is None:
        raise ConfigError("config: missing 'train' section")
    _check_keys(section, "train",
                {"mode", "epochs", "batch_size", "outer_lr", "lr_decay", "momentum",
                 "weight_decay", "inner", "ball", "attack", "gnp"},
                {"mode", "epochs", "batch_size", "outer_lr"})
    seed = cfg.get("seed", 0) if seed_override is None else seed_override

    inner = None
    if "inner" in section:
        _check_keys(section["inner"], "train.inner", {"zeta", "n_steps"}, {"zeta", "n_steps"})
        inner = InnerAscentSpec(section["inner"]["zeta"], section["inner"]["n_steps"])
    ball = None
    if "ball" in section:
        _check_keys(section["ball"], "train.ball", {"epsilon"}, {"epsilon"})
        ball = BallSpec(section["ball"]["epsilon"])
    attack = None
    if "attack" in section:
        attack = build_attack(section["attack"], "train.attack")
    gnp_zeta = gnp_epsilon = None
    if "gnp" in section:
        _check_keys(section["gnp"], "train.gnp", {"zeta", "epsilon"}, {"zeta", "epsilon"})
        gnp_zeta = section["gnp"]["zeta"]
        gnp_epsilon = section["gnp"]["epsilon"]

    try:
        return TrainConfig(
            mode=section["mode"], epochs=section["epochs"], batch_size=section["batch_size"],
            outer_lr=section["outer_lr"], seed=seed,
            lr_decay=tuple((e, f) for e, f in section.get("lr_decay", [])),
            momentum=section.get("momentum", 0.0),
            weight_decay=section.get("weight_decay", 0.0),
            inner=inner, ball=ball, attack=attack,
            gnp_zeta=gnp_zeta, gnp_epsilon=gnp_epsilon)
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from None


def build_attack(section: dict, where: str) -> AttackSpec:
    _check_keys(section, where, {"kind", "radius", "step", "steps"}, {"kind", "radius"})
    try:
        return AttackSpec(section["kind"], section["radius"],
                          section.get("step"), section.get("steps"))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def prepare_out_dir(path: str, force: bool) -> Path:
    out = Path(path)
    if out.exists():
        if not force:
            raise ConfigError(f"output directory exists: {path} (use --force to overwrite)")
        shutil.rmtree(out)
    out.mkdir(parents=True)
    return out


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(c) if isinstance(c, (str, int, bool)) else _fmt(c) for c in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def save_model(path: Path, spec: MlpSpec, theta: np.ndarray) -> None:
    doc = {"layer_sizes": list(spec.layer_sizes), "theta": [float(x) for x in theta]}
    path.write_text(json.dumps(doc), encoding="utf-8")


def load_model(path: str) -> tuple[MlpSpec, np.ndarray]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"model file not found: {path}")
    doc = json.loads(p.read_text(encoding="utf-8"))
    _check_keys(doc, "model file", {"layer_sizes", "theta"}, {"layer_sizes", "theta"})
    spec = MlpSpec(tuple(doc["layer_sizes"]))
    theta = np.asarray(doc["theta"], dtype=np.float64)
    if theta.shape != (spec.num_params(),):
        raise ConfigError("model file: theta length does not match layer sizes")
    return spec, theta


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    data = build_dataset(cfg)
    spec = build_model_spec(cfg, data.train.num_classes, data.train.d)
    tc = build_train_config(cfg, args.seed)
    out = prepare_out_dir(args.out, args.force)

    record = trainer.train(spec, data, tc)

    write_csv(out / "history.csv",
              ["epoch", "train_loss", "train_err", "test_loss", "test_err"],
              [(e.epoch, e.train_loss, e.train_err, e.test_loss, e.test_err)
               for e in record.epochs])
    run_doc = {
        "config": cfg,
        "seed": tc.seed,
        "epochs": [{"epoch": e.epoch, "train_loss": e.train_loss, "train_err": e.train_err,
                    "test_loss": e.test_loss, "test_err": e.test_err,
                    "wall_time_s": e.wall_time_s} for e in record.epochs],
        "final_theta": [float(x) for x in record.final_theta],
    }
    (out / "run.json").write_text(json.dumps(run_doc), encoding="utf-8")
    save_model(out / "model.json", spec, record.final_theta)
    return 0


def cmd_scan(args) -> int:
    cfg = load_config(args.config)
    data = build_dataset(cfg)
    spec, theta = load_model(args.model)
    section = cfg.get("scan", {})
    _check_keys(section, "scan", {"alpha_max", "alpha_points", "grid_points", "direction_seed"})
    alpha_max = section.get("alpha_max", 1.0)
    alpha_points = section.get("alpha_points", 41)
    grid_points = section.get("grid_points", 21)
    dir_seed = section.get("direction_seed", 0)
    out = prepare_out_dir(args.out, args.force)

    alphas = np.linspace(-alpha_max, alpha_max, alpha_points)
    d1 = analysis.filter_normalized_direction(spec, theta, Rng(dir_seed).with_stream("scan-dir", 0))
    scan1 = analysis.landscape_1d(spec, theta, data, d1, alphas)
    write_csv(out / "landscape1d.csv", ["alpha", "train_loss", "test_loss"],
              zip(scan1.alphas, scan1.losses_train, scan1.losses_test))

    dx = analysis.filter_normalized_direction(spec, theta, Rng(dir_seed).with_stream("scan-dir", 1))
    dy = analysis.filter_normalized_direction(spec, theta, Rng(dir_seed).with_stream("scan-dir", 2))
    grid = np.linspace(-alpha_max, alpha_max, grid_points)
    scan2 = analysis.landscape_2d(spec, theta, data.train, dx, dy, grid, grid)
    rows = [(gx, gy, scan2.losses[i, j])
            for i, gx in enumerate(grid) for j, gy in enumerate(grid)]
    write_csv(out / "landscape2d.csv", ["x", "y", "loss"], rows)
    return 0


def cmd_theory(args) -> int:
    cfg = load_config(args.config)
    section = cfg.get("theory", {})
    _check_keys(section, "theory", {"eps", "sigma1_sq", "beta_min", "beta_max",
                                    "r_min", "r_max", "grid_n", "n_surfaces"})
    eps = section.get("eps", 1.0)
    sigma1_sq = section.get("sigma1_sq", 0.5)
    grid_n = section.get("grid_n", 40)
    betas = np.linspace(section.get("beta_min", 0.05), section.get("beta_max", 0.99), grid_n)
    rs = np.linspace(section.get("r_min", 0.1), section.get("r_max", 5.0), grid_n)
    out = prepare_out_dir(args.out, args.force)

    report = theory.verify_region_grid(sigma1_sq, eps, betas, rs)
    rows = []
    for i, beta in enumerate(report.betas):
        for j, r in enumerate(report.rs):
            rows.append((_fmt(beta), _fmt(r),
                         int(report.in_region[i, j]), int(report.amp_prefers_well2[i, j])))
    write_csv(out / "region.csv", ["beta", "r", "in_region", "amp_prefers_well2"], rows)

    n_surfaces = section.get("n_surfaces", 100)
    check_rows = []
    for case in range(n_surfaces):
        rng = Rng(1000 + case)
        dim = int(rng.with_stream("dim").generator().integers(1, 6))
        s = theory.random_surface(rng.with_stream("surface"), dim)
        s_eps = float(rng.with_stream("eps").generator().uniform(0.01, 2.0))
        closed = theory.perturbed_min_closed(s, s_eps)
        numeric = theory.ball_max_numeric(s, s.mu, s_eps)
        rel_err = abs(closed - numeric) / s.amplitude
        check_rows.append((case, dim, _fmt(s_eps), _fmt(closed), _fmt(numeric),
                           _fmt(rel_err), int(rel_err > 1e-6)))
    write_csv(out / "theorem1_check.csv",
              ["case", "dim", "eps", "closed", "numeric", "rel_err", "mismatch"], check_rows)
    if any(row[-1] for row in check_rows):
        print("theory check found mismatches", file=sys.stderr)
        return 2
    return 0


def _sweep_one(payload) -> list[tuple]:
    cfg, seed, eps_grid = payload
    data = build_dataset(cfg)
    spec = build_model_spec(cfg, data.train.num_classes, data.train.d)
    tc = build_train_config(cfg, seed)
    rows = analysis.epsilon_sweep(spec, data, tc, eps_grid)
    return [(r.epsilon, r.train_risk, r.test_risk, r.seed) for r in rows]


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    section = cfg.get("sweep", {})
    _check_keys(section, "sweep", {"eps_grid", "seeds"})
    eps_grid = tuple(section.get("eps_grid", analysis.DEFAULT_SWEEP_GRID))
    seeds = section.get("seeds", [cfg.get("seed", 0)])
    tc = build_train_config(cfg, None)
    if tc.mode != "AMP":
        raise ConfigError("sweep needs train.mode == AMP")
    out = prepare_out_dir(args.out, args.force)

    payloads = [(cfg, seed, eps_grid) for seed in seeds]
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            per_seed = list(pool.map(_sweep_one, payloads))
    else:
        per_seed = [_sweep_one(p) for p in payloads]

    rows = [row for rows_one in per_seed for row in rows_one]
    write_csv(out / "sweep.csv", ["epsilon", "train_risk", "test_risk", "seed"],
              [(_fmt(e), _fmt(tr), _fmt(te), s) for e, tr, te, s in rows])
    return 0


def cmd_calibrate(args) -> int:
    cfg = load_config(args.config)
    section = cfg.get("calibrate", {})
    _check_keys(section, "calibrate", {"bins", "predictions"})
    bins = section.get("bins", 10)
    out = prepare_out_dir(args.out, args.force)

    if "predictions" in section:
        conf, correct = _load_predictions(section["predictions"])
        report = analysis.ece(conf, correct, bins)
    else:
        if args.model is None:
            raise ConfigError("calibrate needs --model unless calibrate.predictions is set")
        data = build_dataset(cfg)
        spec, theta = load_model(args.model)
        report = analysis.model_calibration(spec, theta, data.test, bins)

    rows = []
    for m in range(report.bins):
        rows.append((_fmt(m / report.bins), _fmt((m + 1) / report.bins),
                     int(report.counts[m]), _fmt(report.accuracies[m]),
                     _fmt(report.confidences[m])))
    write_csv(out / "calibration.csv", ["bin_lo", "bin_hi", "count", "acc", "conf"], rows)
    print(f"ece={_fmt(report.ece)}")
    return 0


def _load_predictions(path: str) -> tuple[np.ndarray, np.ndarray]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"predictions file not found: {path}")
    lines = p.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "confidence,correct":
        raise ConfigError("predictions file must start with header 'confidence,correct'")
    conf, correct = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != 2:
            raise ConfigError(f"predictions line {lineno}: expected 2 cells")
        conf.append(float(cells[0]))
        correct.append(cells[1].strip() in ("1", "true", "True"))
    return np.asarray(conf), np.asarray(correct, dtype=bool)


def cmd_attack(args) -> int:
    cfg = load_config(args.config)
    section = cfg.get("attack_eval", {})
    _check_keys(section, "attack_eval", {"attacks"}, {"attacks"})
    if args.model is None:
        raise ConfigError("attack needs --model")
    data = build_dataset(cfg)
    spec, theta = load_model(args.model)
    out = prepare_out_dir(args.out, args.force)

    rows = []
    for i, attack_cfg in enumerate(section["attacks"]):
        attack = build_attack(attack_cfg, f"attack_eval.attacks[{i}]")
        err = analysis.robustness_eval(spec, theta, data.test, attack)
        rows.append((attack.kind, _fmt(attack.radius), _fmt(err)))
    write_csv(out / "robustness.csv", ["attack", "radius", "error"], rows)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ampreg",
                                     description="Adversarial model perturbation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {"train": cmd_train, "scan": cmd_scan, "theory": cmd_theory,
                "sweep": cmd_sweep, "calibrate": cmd_calibrate, "attack": cmd_attack}
    for name in handlers:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", required=True, help="output directory (must not exist)")
        p.add_argument("--force", action="store_true", help="overwrite the output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers where supported")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if name in ("scan", "calibrate", "attack"):
            p.add_argument("--model", default=None, help="model.json from a training run")

    args = parser.parse_args(argv)
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
