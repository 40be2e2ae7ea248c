"""Command-line surface tying the pipeline together.

Commands:

* ``synth``             write a synthetic dataset (manifest + PPM/depth files)
* ``train``             fit the regressor and coupling coefficients on a dataset
* ``predict``           run a checkpoint on one image, write a depth raster
* ``eval``              pooled error metrics of a checkpoint over a dataset
* ``gradcheck``         finite-difference check of every analytic gradient
* ``verify``            randomized cross-checks against the brute-force oracles
* ``sweep-superpixels`` accuracy/cost trade-off over superpixel counts

Configuration comes from an optional ``--config`` file (``key = value``
lines) plus repeatable ``--set key=value`` overrides; every key is
validated before any file is touched.  Exit codes: 0 success, 1 failed
check (gradcheck/verify), 2 configuration error, 3 I/O or file-format
error, 4 numerical failure (Cholesky).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from . import crf, metrics, oracle, synth, training, unary
from .config import ConfigError, config_from_mapping, parse_config_file
from .crf import CrfInstance, FactorizationError, PairwiseWeights
from .formats import (
    Checkpoint,
    FormatError,
    read_checkpoint,
    read_depth_raster,
    read_manifest,
    read_ppm,
    write_checkpoint,
    write_depth_raster,
    write_history,
    write_manifest,
    write_ppm,
)
from .graph import SceneSample

CHECKPOINT_EVERY = 10
GRAD_TOL = 1e-4

EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


def _collect_overrides(args) -> dict:
    overrides = {}
    if getattr(args, "config", None):
        overrides.update(parse_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _load_samples(dataset_dir, *, with_depth: bool):
    root = Path(dataset_dir)
    samples = []
    for img_rel, dep_rel, _seed in read_manifest(root / "manifest.txt"):
        image = read_ppm(root / img_rel)
        depth = read_depth_raster(root / dep_rel) if with_depth else None
        samples.append(SceneSample(image=image, depth=depth))
    return samples


def _predictor(ckpt: Checkpoint) -> metrics.Predictor:
    return metrics.Predictor(
        model=ckpt.model,
        beta=np.asarray(ckpt.beta, dtype=float),
        graph_cfg=ckpt.config.graph_config(),
        input_mean=ckpt.input_mean,
        input_std=ckpt.input_std,
    )


def _checkpoint_of(config, state, input_mean, input_std) -> Checkpoint:
    return Checkpoint(
        config=config,
        model=state.model,
        beta=state.beta,
        gammas=np.asarray([config.gamma_color, config.gamma_hist, config.gamma_lbp]),
        input_mean=input_mean,
        input_std=input_std,
    )


def _rel_err(actual, expected, floor: float = 1e-12) -> float:
    actual = np.atleast_1d(np.asarray(actual, dtype=float))
    expected = np.atleast_1d(np.asarray(expected, dtype=float))
    scale = max(float(np.max(np.abs(expected))) if expected.size else 0.0, floor)
    diff = float(np.max(np.abs(actual - expected))) if expected.size else 0.0
    return diff / scale


def cmd_synth(args) -> int:
    config = config_from_mapping(_collect_overrides(args))
    samples = synth.generate_dataset(config.scene_spec(), config.count, config.seed)
    out = Path(args.out if args.out is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for idx, sample in enumerate(samples):
        img_name = f"img_{idx:04d}.ppm"
        dep_name = f"depth_{idx:04d}.txt"
        write_ppm(out / img_name, sample.image)
        write_depth_raster(out / dep_name, sample.depth)
        rows.append((img_name, dep_name, synth.sample_seed(config.seed, idx)))
    write_manifest(out / "manifest.txt", rows)
    print(f"wrote {len(rows)} samples to {out}")
    return 0


def cmd_train(args) -> int:
    overrides = _collect_overrides(args)
    if args.resume is not None:
        base_ckpt = read_checkpoint(args.resume)
        config = config_from_mapping(overrides, base=base_ckpt.config)
        # on resume the epochs key means ADDITIONAL epochs, default none
        additional = config.epochs if "epochs" in overrides else 0
        completed = base_ckpt.config.epochs
    else:
        base_ckpt = None
        config = config_from_mapping(overrides)
        additional = config.epochs
        completed = 0
    samples = _load_samples(args.dataset, with_depth=True)
    graph_cfg = config.graph_config()
    if base_ckpt is None:
        scenes, input_mean, input_std = training.prepare_dataset(samples, graph_cfg)
    else:
        # standardization stats are part of the model; never recompute them
        scenes = [training.prepare_scene(s, graph_cfg) for s in samples]
        input_mean, input_std = base_ckpt.input_mean, base_ckpt.input_std
        for scene in scenes:
            scene.inputs = (scene.inputs - input_mean) / input_std
    train_cfg = config.train_config()
    if base_ckpt is None:
        state = training.init_state(config.layer_dims(), train_cfg)
    else:
        beta = np.asarray(base_ckpt.beta, dtype=float).copy()
        state = training.TrainState(
            model=base_ckpt.model,
            beta=beta,
            theta_velocity=np.zeros(unary.get_params(base_ckpt.model).size),
            beta_velocity=np.zeros_like(beta),
            rng=np.random.default_rng(train_cfg.seed + 1),
            epoch=completed,
        )
    if args.unary_only:
        state.beta = np.zeros_like(state.beta)
    out = Path(args.out if args.out is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    done = 0
    while done < additional:
        chunk = min(CHECKPOINT_EVERY, additional - done)
        state = training.train(
            scenes,
            dataclasses.replace(train_cfg, epochs=chunk),
            state=state,
            unary_only=args.unary_only,
            freeze_first_layer=args.freeze_first_layer,
        )
        done += chunk
        if done < additional:
            snap = dataclasses.replace(config, epochs=completed + done)
            write_checkpoint(
                out / f"checkpoint_epoch_{state.epoch:04d}.txt",
                _checkpoint_of(snap, state, input_mean, input_std),
            )
    final_config = dataclasses.replace(config, epochs=completed + additional)
    write_checkpoint(
        out / "checkpoint.txt", _checkpoint_of(final_config, state, input_mean, input_std)
    )
    write_history(out / "history.csv", state.history)
    print(
        f"trained {additional} epochs ({completed + additional} total); "
        f"checkpoint at {out / 'checkpoint.txt'}"
    )
    return 0


def cmd_predict(args) -> int:
    ckpt = read_checkpoint(args.checkpoint)
    image = read_ppm(args.image)
    depth = metrics.predict_image(SceneSample(image=image), _predictor(ckpt))
    write_depth_raster(args.out, depth)
    print(f"wrote depth raster {args.out}")
    return 0


_EVAL_COLUMNS = ("mask", "rel", "rms", "log10", "delta1", "delta2", "delta3", "pixels")


def _report_row(name, report) -> list:
    return [
        name,
        repr(report.rel),
        repr(report.rms),
        repr(report.log10),
        repr(report.delta1),
        repr(report.delta2),
        repr(report.delta3),
        str(report.pixel_count),
    ]


def cmd_eval(args) -> int:
    ckpt = read_checkpoint(args.checkpoint)
    predictor = _predictor(ckpt)
    root = Path(args.dataset)
    pairs_by_mask: dict[str, list] = {}
    for img_rel, dep_rel, _seed in read_manifest(root / "manifest.txt"):
        image = read_ppm(root / img_rel)
        gt = read_depth_raster(root / dep_rel)
        pred = metrics.predict_image(SceneSample(image=image), predictor)
        if args.c1_cap is not None:
            c1, c2 = metrics.capped_masks(gt, args.c1_cap)
            pairs_by_mask.setdefault("C1", []).append(metrics.DepthPair(pred, gt, c1))
            pairs_by_mask.setdefault("C2", []).append(metrics.DepthPair(pred, gt, c2))
        else:
            everything = np.ones_like(gt, dtype=bool)
            pairs_by_mask.setdefault("all", []).append(
                metrics.DepthPair(pred, gt, everything)
            )
    reports = {}
    for name, pairs in pairs_by_mask.items():
        try:
            reports[name] = metrics.metrics(pairs)
        except ValueError as exc:
            raise ConfigError(f"{name} selection is empty: {exc}")
    if args.out is not None:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_EVAL_COLUMNS)
            for name, report in reports.items():
                writer.writerow(_report_row(name, report))
    header = "".join(f"{c:>9}" for c in _EVAL_COLUMNS)
    print(header)
    for name, r in reports.items():
        print(
            f"{name:>9}"
            f"{r.rel:>9.4f}{r.rms:>9.4f}{r.log10:>9.4f}"
            f"{r.delta1:>9.2f}{r.delta2:>9.2f}{r.delta3:>9.2f}"
            f"{r.pixel_count:>9d}"
        )
    return 0


def _check_line(name, err, tol) -> bool:
    ok = err < tol
    print(f"{'PASS' if ok else 'FAIL'} {name}: max rel err {err:.3e} (tol {tol:.0e})")
    return ok


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    n, k = args.nodes, args.channels
    instance, weights = oracle.random_instance(rng, n, num_channels=k)
    dims = (5, 6, 4, 1)
    model = unary.build_model(dims, seed=args.seed)
    features = rng.normal(size=(n, dims[0]))

    def with_z(z):
        return CrfInstance(
            z=np.asarray(z, dtype=float),
            similarities=instance.similarities,
            edges=instance.edges,
            y=instance.y,
            validate=False,
        )

    z0, tape = unary.forward(model, features)
    base = with_z(z0)
    _, grad_z, grad_beta = crf.nll_with_grads(base, weights)
    grad_theta = unary.backward(model, tape, grad_z)

    def nll_of_theta(theta):
        probe = unary.build_model(dims, seed=args.seed)
        unary.set_params(probe, theta)
        z, _ = unary.forward(probe, features)
        return crf.nll(with_z(z), weights)

    fd_theta = oracle.fd_gradient(nll_of_theta, unary.get_params(model))
    fd_z = oracle.fd_gradient(lambda z: crf.nll(with_z(z), weights), np.atleast_1d(z0))
    fd_beta = oracle.fd_gradient(
        lambda b: crf.nll(base, PairwiseWeights(b)), weights.beta
    )
    ok = True
    ok &= _check_line("regressor outputs (dNLL/dz)", _rel_err(grad_z, fd_z), GRAD_TOL)
    ok &= _check_line(
        "unary parameters (dNLL/dtheta)", _rel_err(grad_theta, fd_theta), GRAD_TOL
    )
    ok &= _check_line(
        "coupling coefficients (dNLL/dbeta)", _rel_err(grad_beta, fd_beta), GRAD_TOL
    )
    print("gradcheck " + ("passed" if ok else "FAILED") + f" on n={n}, channels={k}")
    return 0 if ok else EXIT_CHECK_FAILED


def cmd_verify(args) -> int:
    rng = np.random.default_rng(args.seed)
    ok = True

    worst = 0.0
    for _ in range(args.trials):
        n = int(rng.integers(1, 3))
        instance, weights = oracle.random_instance(rng, n, with_y=False)
        analytic = crf.log_partition(instance, weights)
        quad = oracle.quad_log_partition(instance, weights)
        worst = max(worst, _rel_err(quad, analytic))
    ok &= _check_line("log-partition vs quadrature", worst, 1e-6)

    worst = 0.0
    for _ in range(args.trials):
        instance, weights = oracle.random_instance(rng, 2, with_y=False)
        star = crf.map_infer(instance, weights)
        grid_spec = oracle.GridSpec(
            lo=float(star.min()) - 1.0, hi=float(star.max()) + 1.0, points=401
        )
        found = oracle.grid_map(instance, weights, grid_spec)
        worst = max(worst, float(np.max(np.abs(found - star))) / grid_spec.cell)
    ok &= _check_line("MAP vs grid search (grid cells)", worst, 1.0 + 1e-9)

    instance, weights = oracle.random_instance(rng, 3, with_y=False)
    mean_mc, cov_mc = oracle.mc_moments(instance, weights, draws=20_000, seed=args.seed)
    mean_exact, cov_exact = oracle.gaussian_params(instance, weights)
    se = np.sqrt(np.diag(cov_exact) / 20_000)
    worst = float(np.max(np.abs(mean_mc - mean_exact) / se))
    print_ok = worst < 4.0
    print(
        f"{'PASS' if print_ok else 'FAIL'} posterior mean vs Monte Carlo: "
        f"max {worst:.2f} standard errors (tol 4)"
    )
    ok &= print_ok

    for _ in range(args.trials):
        instance, weights = oracle.random_instance(rng, int(rng.integers(2, 8)))
        crf.build_precision(crf.coupling_matrix(instance, weights))
    corrupt = np.array([[0.0, -5.0], [-5.0, 0.0]])
    try:
        crf.build_precision(corrupt)
    except FactorizationError:
        print("PASS positive definiteness: valid couplings factor, corrupted raises")
    else:
        print("FAIL positive definiteness: corrupted coupling did not raise")
        ok = False

    print("verify " + ("passed" if ok else "FAILED") + f" over {args.trials} trials")
    return 0 if ok else EXIT_CHECK_FAILED


def cmd_sweep(args) -> int:
    config = config_from_mapping(_collect_overrides(args))
    try:
        counts = [int(t) for t in args.counts.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"--counts expects integers, got {args.counts!r}")
    if not counts:
        raise ConfigError("--counts must name at least one superpixel count")
    if len(set(counts)) != len(counts):
        raise ConfigError(f"duplicate superpixel counts: {args.counts!r}")
    if any(c < 1 for c in counts):
        raise ConfigError("superpixel counts must be positive")
    train_samples = _load_samples(args.train_dataset, with_depth=True)
    test_samples = _load_samples(args.test_dataset, with_depth=True)
    rows = []
    for count in counts:
        swept = dataclasses.replace(config, target_superpixels=count)
        started = time.perf_counter()
        scenes, input_mean, input_std = training.prepare_dataset(
            train_samples, swept.graph_config()
        )
        state = training.train(scenes, swept.train_config(), swept.layer_dims())
        seconds = time.perf_counter() - started
        predictor = metrics.Predictor(
            model=state.model,
            beta=state.beta,
            graph_cfg=swept.graph_config(),
            input_mean=input_mean,
            input_std=input_std,
        )
        pairs = []
        for sample in test_samples:
            pred = metrics.predict_image(sample, predictor)
            mask = np.ones_like(sample.depth, dtype=bool)
            pairs.append(metrics.DepthPair(pred, sample.depth, mask))
        rms = metrics.metrics(pairs).rms
        rows.append((count, rms, seconds))
        print(f"count {count:>5d}: rms {rms:.4f}, train {seconds:.2f} s")
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["count", "rms", "train_seconds"])
        for count, rms, seconds in rows:
            writer.writerow([count, repr(rms), repr(seconds)])
    print(f"wrote sweep results to {args.out}")
    return 0


def _add_config_flags(parser) -> None:
    parser.add_argument("--config", help="configuration file of key = value lines")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one configuration key (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depthcrf",
        description="Depth regression with a continuous CRF over superpixel graphs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic scene dataset")
    _add_config_flags(p)
    p.add_argument("--out", help="dataset directory (default: out_dir key)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a dataset directory")
    _add_config_flags(p)
    p.add_argument("--dataset", required=True, help="dataset directory with manifest.txt")
    p.add_argument("--out", help="output directory (default: out_dir key)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument(
        "--unary-only",
        action="store_true",
        help="pin all coupling coefficients to zero (regressor-only baseline)",
    )
    p.add_argument(
        "--freeze-first-layer",
        action="store_true",
        help="keep the first regressor layer fixed during training",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict a depth raster for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="input image (binary PPM)")
    p.add_argument("--out", required=True, help="output depth raster path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="evaluate a checkpoint over a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="metrics CSV path (table always printed)")
    p.add_argument(
        "--c1-cap",
        type=float,
        default=None,
        help="also report metrics restricted to ground truth below this depth",
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nodes", type=int, default=12, help="graph size of the test instance")
    p.add_argument("--channels", type=int, default=3, help="similarity channels")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("verify", help="randomized cross-checks against the oracles")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=10)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser(
        "sweep-superpixels",
        aliases=["sweep_superpixels"],
        help="train/evaluate across superpixel counts, write count,rms,train_seconds",
    )
    _add_config_flags(p)
    p.add_argument("--train-dataset", required=True)
    p.add_argument("--test-dataset", required=True)
    p.add_argument("--counts", required=True, help="comma-separated superpixel counts")
    p.add_argument("--out", required=True, help="results CSV path")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad flags, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FactorizationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def entry() -> None:
    sys.exit(main())
