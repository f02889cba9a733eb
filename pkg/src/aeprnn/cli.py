"""``aeprnn`` command-line entry point.

Subcommands: ``degrade``, ``train``, ``infer``, ``eval``, ``sweep``,
``bounds`` and ``rfn-preview``.  Exit status is 0 on success, 1 for usage
errors, 2 for invalid input or configuration, 3 for runtime or numerical
failures.
"""
from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .aep import BoundInputs, generalization_bound_noiseless, infer_mi_lower_bound, run_sweep, write_sweep_csv
from .config import ConfigError, ExperimentConfig, dump_config, parse_config, resolve_image
from .imaging import Image, degrade, gaussian_psf, save_image, write_psf_text
from .metrics import evaluate, format_metric_row
from .patches import PatchGeometry
from .pipeline import EvalCase, component_seeds, restore_and_score
from .plotting import plot_restoration, plot_rfn_preview, plot_sweep, plot_training_log
from .rfn import normalize_image
from .rnn import NumericalError, TrainingDiverged, infer_image, prepare_dataset, read_weights, train, write_weights

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3

CONFIG_ECHO = "config.txt"
METRIC_HEADER = "image_id,psnr_db,ssim"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _stem(ref: str) -> str:
    return ref[7:] if ref.startswith("corpus:") else Path(ref).stem


def _load_config(args) -> ExperimentConfig:
    cfg = parse_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = replace(cfg, threads=args.threads)
    return cfg


def _override_paths(cfg: ExperimentConfig, args) -> ExperimentConfig:
    paths = cfg.paths
    for key in ("clean", "degraded", "output_dir"):
        value = getattr(args, key, None)
        if value is not None:
            paths = replace(paths, **{key: value})
    if getattr(args, "test_clean", None):
        paths = replace(paths, test_clean=tuple(args.test_clean))
    for ref in [paths.clean, paths.degraded, *paths.test_clean]:
        if ref is not None and not ref.startswith("corpus:") and not Path(ref).is_file():
            raise ConfigError(f"file not found: {ref}")
    return replace(cfg, paths=paths)


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.paths.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_ECHO).write_text(dump_config(cfg))
    return out


def _training_pair(cfg: ExperimentConfig, noise_seed: int, out: Path):
    if cfg.paths.clean is None:
        raise ConfigError("no training image: set 'clean' in the config or pass --clean")
    clean = resolve_image(cfg.paths.clean)
    psf = gaussian_psf(cfg.psf_size, cfg.psf_sigma)
    if cfg.paths.degraded is not None:
        degraded = resolve_image(cfg.paths.degraded)
        if degraded.shape != clean.shape:
            raise ConfigError(f"degraded {degraded.shape} and clean {clean.shape} differ in shape")
    else:
        degraded = degrade(clean, psf, cfg.noise_sigma, noise_seed)
    if cfg.crop is not None:
        clean, degraded = clean.crop(*cfg.crop), degraded.crop(*cfg.crop)
    if cfg.paths.degraded is None:
        save_image(degraded, out / "train_degraded.pgm")
    return clean, degraded


def _test_cases(cfg: ExperimentConfig, seeds) -> list[EvalCase]:
    psf = gaussian_psf(cfg.psf_size, cfg.psf_sigma)
    cases = []
    for ref, seed in zip(cfg.paths.test_clean, seeds):
        clean = resolve_image(ref)
        cases.append(EvalCase(_stem(ref), clean, degrade(clean, psf, cfg.noise_sigma, seed)))
    return cases


# ---------------------------------------------------------------------------
# subcommands


def cmd_degrade(args) -> int:
    size, sigma = args.psf
    if size != int(size) or int(size) < 1 or int(size) % 2 == 0:
        raise ConfigError(f"--psf size must be a positive odd integer, got {size}")
    if args.noise < 0:
        raise ConfigError("--noise must be non-negative")
    psf = gaussian_psf(int(size), sigma)
    out = degrade(resolve_image(args.input), psf, args.noise, 0 if args.seed is None else args.seed, args.boundary)
    save_image(out, args.output)
    if args.psf_out:
        write_psf_text(psf, args.psf_out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _override_paths(_load_config(args), args)
    if args.mode is not None:
        cfg = replace(cfg, train=replace(cfg.train, mode=args.mode))
    if args.epochs is not None:
        cfg = replace(cfg, train=replace(cfg.train, max_epochs=args.epochs))
    out = _out_dir(cfg)
    # root seed split: [0] training, [1] training-image noise, [2 + k] test image k
    train_seed, noise_seed, *test_seeds = component_seeds(cfg.train.seed, 2 + len(cfg.paths.test_clean))
    clean, degraded = _training_pair(cfg, noise_seed, out)
    tcfg = replace(cfg.train, seed=train_seed)
    ds = prepare_dataset(degraded, clean, cfg.geometry, tcfg.mode, cfg.rfn)
    try:
        params, log = train(ds, tcfg, cfg.geometry, cfg.rfn)
    except TrainingDiverged as exc:
        write_weights(out / "weights.partial.bin", exc.params, cfg.geometry, tcfg.mode, cfg.rfn)
        _write_log(exc.log, out / "train_log.csv")
        raise
    write_weights(out / "weights.bin", params, cfg.geometry, tcfg.mode, cfg.rfn)
    _write_log(log, out / "train_log.csv")
    plot_training_log(log, out / "train_loss.png")
    if cfg.paths.test_clean:
        cases = _test_cases(cfg, test_seeds)
        rows = restore_and_score(params, cases, cfg.geometry, tcfg.mode, cfg.rfn, cfg.threads)
        with open(out / "metrics.csv", "w") as fh:
            fh.write("image_id,stage,psnr_db,ssim\n")
            for r in rows:
                for stage, rep in (("degraded", r.before), ("restored", r.after)):
                    fh.write(f"{r.name},{stage},{rep.psnr_db:.4f},{rep.ssim:.4f}\n")
                save_image(r.restored, out / f"{r.name}_restored.pgm")
        for r, case in zip(rows, cases):
            plot_restoration(case.clean, case.degraded, r.restored, out / f"{r.name}_restoration.png", r.name)
        print(METRIC_HEADER)
        for r in rows:
            print(format_metric_row(r.name, r.after))
    return EXIT_OK


def _write_log(log, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_loss\n")
        for epoch, loss in log:
            fh.write(f"{epoch},{loss:.10g}\n")


def cmd_infer(args) -> int:
    params, header = read_weights(args.weights)
    cfg = _load_config(args)
    n = header["N"]
    if args.config:
        geom = replace(cfg.geometry, l_t=header["l_t"])
        if geom.n != n:
            raise ConfigError(f"config window width {geom.n} does not match weights N = {n}")
    else:
        left = (n - 1) // 2
        geom = PatchGeometry(header["l_t"], left, n - 1 - left)
    rfn = replace(cfg.rfn, c1=header["c1"], tau=header["tau"])
    est = infer_image(resolve_image(args.input), params, geom, header["mode"], rfn, threads=cfg.threads)
    if not np.all(np.isfinite(est.data)):
        raise NumericalError("non-finite values in restored image")
    save_image(est, args.output)
    return EXIT_OK


def cmd_eval(args) -> int:
    ref, est = resolve_image(args.ref), resolve_image(args.est)
    print(METRIC_HEADER)
    print(format_metric_row(args.id or Path(args.est).stem, evaluate(ref, est)))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _override_paths(_load_config(args), args)
    if args.m_grid:
        cfg = replace(cfg, m_grid=tuple(args.m_grid))
    if args.n is not None:
        cfg = replace(cfg, mi_n=args.n)
    if not cfg.paths.test_clean:
        raise ConfigError("sweep needs held-out images: set 'test_clean' or pass --test-clean")
    out = _out_dir(cfg)
    train_seed, noise_seed, *test_seeds = component_seeds(cfg.train.seed, 2 + len(cfg.paths.test_clean))
    clean, degraded = _training_pair(cfg, noise_seed, out)
    total = clean.data.size
    grid = cfg.m_grid or tuple(int(v) for v in np.unique(np.geomspace(4, total, 4).round().astype(int)))
    if max(grid) > total:
        raise ConfigError(f"m_grid entry {max(grid)} exceeds the {total} available training windows")
    cases = _test_cases(cfg, test_seeds)
    tcfg = replace(cfg.train, seed=train_seed)
    records = run_sweep(degraded, clean, [(c.degraded, c.clean) for c in cases], grid, tcfg,
                        cfg.geometry, cfg.rfn, threads=cfg.threads)
    write_sweep_csv(records, out / "sweep.csv")
    n = cfg.resolved_mi_n
    try:
        mi = infer_mi_lower_bound(records, n)
    except ValueError:
        mi = math.nan
    (out / "mi_bound.txt").write_text(f"n,mi_lower_bound_bits\n{n},{mi:.10g}\n")
    plot_sweep(records, out / "sweep.png", mi if math.isfinite(mi) and mi > 0 else None, n)
    print("m,train_error,recovery_error,seed")
    for r in records:
        print(f"{r.m},{r.train_error:.6g},{r.recovery_error:.6g},{r.seed}")
    print(f"# mutual-information lower bound: {mi:.6g} bit/symbol (n = {n})")
    return EXIT_OK if not any(r.failed for r in records) else EXIT_RUNTIME


def cmd_bounds(args) -> int:
    print("m,delta_bound")
    for m in args.m:
        b = generalization_bound_noiseless(BoundInputs(m, args.dim, args.rate, args.delta_m))
        print(f"{m},{b:.10g}")
    return EXIT_OK


def cmd_rfn_preview(args) -> int:
    cfg = _load_config(args)
    rfn = cfg.rfn
    if args.tau is not None:
        rfn = replace(rfn, tau=args.tau)
    if args.kernel_side is not None:
        rfn = replace(rfn, kernel_side=args.kernel_side)
    img = resolve_image(args.input)
    norm, divisor = normalize_image(Image(img.scaled(), 1.0), rfn.kernel(), rfn.tau)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_ECHO).write_text(dump_config(replace(cfg, rfn=rfn)))
    for name, im in (("normalized", norm), ("energy", divisor)):
        top = float(np.max(np.abs(im.data))) or 1.0
        save_image(Image(np.clip(im.data, 0, None) / top * 255.0, 255.0), out / f"{name}.pgm")
    plot_rfn_preview(img, norm, divisor, out / "rfn_preview.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="root seed; overrides the config everywhere")
    common.add_argument("--threads", type=int, default=None, help="maximum worker threads")

    p = _Parser(prog="aeprnn", description="Sparse-coding RNN image restoration toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("degrade", parents=[common], help="blur and add noise to an image")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", dest="output", required=True)
    s.add_argument("--psf", nargs=2, type=float, metavar=("SIZE", "SIGMA"), default=(25, 1.6))
    s.add_argument("--noise", type=float, default=math.sqrt(2.0), help="noise standard deviation (0-255 scale)")
    s.add_argument("--boundary", choices=("replicate-edge", "zero-pad"), default="replicate-edge")
    s.add_argument("--psf-out", default=None, help="also write the PSF taps as text")
    s.set_defaults(func=cmd_degrade)

    for name, func, helptext in (("train", cmd_train, "train a restoration network"),
                                 ("sweep", cmd_sweep, "sample-size sweep")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--config", default=None)
        s.add_argument("--clean", default=None)
        s.add_argument("--degraded", default=None)
        s.add_argument("--test-clean", nargs="+", default=None)
        s.add_argument("--out-dir", dest="output_dir", default=None)
        if name == "train":
            s.add_argument("--mode", choices=("plain-rnn", "rfn-rnn"), default=None)
            s.add_argument("--epochs", type=int, default=None)
        else:
            s.add_argument("--m-grid", type=int, nargs="+", default=None)
            s.add_argument("--n", type=int, default=None, help="sequence length for the MI bound")
        s.set_defaults(func=func)

    s = sub.add_parser("infer", parents=[common], help="restore an image with trained weights")
    s.add_argument("--weights", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", dest="output", required=True)
    s.add_argument("--config", default=None)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", parents=[common], help="PSNR and SSIM of an estimate")
    s.add_argument("--ref", required=True)
    s.add_argument("--est", required=True)
    s.add_argument("--id", default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bounds", parents=[common], help="tabulate the sample-size error bound")
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--rate", type=float, required=True, help="entropy or mutual information, bit/symbol")
    s.add_argument("--m", type=int, nargs="+", required=True)
    s.add_argument("--delta-m", type=float, required=True)
    s.set_defaults(func=cmd_bounds)

    s = sub.add_parser("rfn-preview", parents=[common], help="write RFN-normalised image and energy map")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--tau", type=float, default=None)
    s.add_argument("--kernel-side", type=int, default=None)
    s.set_defaults(func=cmd_rfn_preview)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ArithmeticError, TrainingDiverged) as exc:
        print(f"aeprnn {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, OSError) as exc:
        print(f"aeprnn {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RuntimeError, MemoryError) as exc:
        print(f"aeprnn {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
