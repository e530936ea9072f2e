"""Command-line entry point: ``fourierhaze {gen-data,train-diffusion,train-gcl,dehaze,eval}``.

Exit status is 0 on success, 1 for invalid input or configuration, 2 for failures
while running. Logs go to stderr; artifacts only to files.
"""

import argparse
import logging
from pathlib import Path
import sys

import numpy as np

from .config import ConfigError, load_config
from .core import CheckpointError, ImageFormatError, config_hash, load_image, save_image
from .estimators import FourierDiffusionDehazer, GlobalCompensator
from .haze import generate_dataset, read_dataset, write_dataset
from .metrics import MetricsReport
from .training import PhaseOrderError

logger = logging.getLogger("fourierhaze")

VALIDATION_ERRORS = (ConfigError, ImageFormatError, CheckpointError, PhaseOrderError, FileNotFoundError, ValueError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def dehazer_from_config(cfg, **overrides):
    params = dict(
        timesteps=cfg.diffusion.T,
        sampling_steps=cfg.diffusion.S,
        beta_start=cfg.diffusion.beta_start,
        beta_end=cfg.diffusion.beta_end,
        hidden_channels=cfg.model.hidden,
        embed_dim=cfg.model.embed,
        transitional_iterations=cfg.train.phase1_iterations,
        phase2_iterations=cfg.train.phase2_iterations,
        batch_size=cfg.train.batch,
        learning_rate=cfg.train.lr,
        ema_decay=cfg.train.ema_decay,
        patch_size=cfg.sample.patch,
        stride=cfg.sample.stride,
        crops_per_image=cfg.train.crops_per_image,
        fir_beta=cfg.diffusion.beta_fir,
        use_fir=cfg.diffusion.use_fir,
        fir_max_t=cfg.diffusion.fir_max_t,
        msssim_form=cfg.train.msssim_form,
        clip_denoised=cfg.diffusion.clip_denoised,
        random_state=cfg.train.seed,
    )
    params.update(overrides)
    return FourierDiffusionDehazer(**params)


def compensator_from_config(cfg):
    return GlobalCompensator(
        channels=cfg.gcl.channels, fusion_channels=cfg.gcl.fusion_channels,
        n_iterations=cfg.gcl.iterations, batch_size=cfg.gcl.batch,
        learning_rate=cfg.gcl.lr, random_state=cfg.gcl.seed,
    )


def _append_log(path, records):
    with open(path, "a") as fh:
        for r in records:
            loss = "-" if r["loss"] is None else f"{r['loss']:.8f}"
            fh.write(f"{r['iteration']}\t{r['phase']}\t{loss}\t{r['lr']:g}\n")


def _list_images(path):
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.png"))
        if not files:
            raise FileNotFoundError(f"no PNG files in {path}")
        return files
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist")
    return [path]


def cmd_gen_data(args):
    cfg = load_config(args.config)
    if args.n is not None:
        cfg.data.n_pairs = args.n
    if args.seed is not None:
        cfg.data.seed = args.seed
    cfg.validate()
    sources = None
    if cfg.data.source_dir:
        files = _list_images(cfg.data.source_dir)[: cfg.data.n_pairs]
        sources = [load_image(f) for f in files]
    pairs, manifest = generate_dataset(
        cfg.data.n_pairs, cfg.data.seed, cfg.data.image_size, sources,
        (cfg.data.t_min, cfg.data.t_max), cfg.data.uniform,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(pairs, manifest, out)
    cfg.dump(out / "config.yaml")
    logger.info("wrote %d pairs to %s", len(pairs), out)


def cmd_train_diffusion(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    cfg.validate()
    _, clean, hazy = read_dataset(args.data)
    ckpt = Path(args.out)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    log_path = ckpt.with_suffix(".log.tsv")
    if args.resume and ckpt.exists():
        est = FourierDiffusionDehazer.load(ckpt)
        fresh = dehazer_from_config(cfg)
        if config_hash(est.geometry) != config_hash(fresh.geometry):
            raise ConfigError("checkpoint geometry differs from the config; cannot resume")
        est.set_params(**{k: v for k, v in fresh.get_params().items() if k != "warm_start"}, warm_start=True)
        previous = log_path.read_text().splitlines()[1:] if log_path.exists() else []
        logger.info("resuming from iteration %d", est.n_iter_)
    else:
        est = dehazer_from_config(cfg)
        previous = []

    every = cfg.train.checkpoint_every

    def on_step(record):
        if record["iteration"] % 100 == 0:
            logger.info("iter %d phase %s loss %.5f", record["iteration"], record["phase"], record["loss"])

    X, y = np.stack(hazy), np.stack(clean)
    total = cfg.train.phase1_iterations + cfg.train.phase2_iterations
    if every:
        start = getattr(est, "n_iter_", 0)
        stops = list(range(start - start % every + every, total, every)) + [total]
        for stop in stops:
            est.fit(X, y, callback=on_step, until=stop)
            est.set_params(warm_start=True)
            est.save(ckpt)
            logger.info("checkpoint at iteration %d", est.n_iter_)
    else:
        est.fit(X, y, callback=on_step)
        est.save(ckpt)
    with open(log_path, "w") as fh:
        fh.write("iteration\tphase\tloss\tlr\n")
        for line in previous:
            fh.write(line + "\n")
    _append_log(log_path, est.log_)
    cfg.dump(ckpt.parent / "config.yaml")
    logger.info("saved %s after %d iterations", ckpt, est.n_iter_)


def cmd_train_gcl(args):
    cfg = load_config(args.config)
    cfg.validate()
    _, clean, hazy = read_dataset(args.data)
    dehazer = FourierDiffusionDehazer.load(args.ckpt)
    f1 = [dehazer.restore(h, i) for i, h in enumerate(hazy)]
    gc = compensator_from_config(cfg)
    gc.fit(np.stack(hazy), np.stack(clean), local=np.stack(f1))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    gc.save(out, diffusion_hash=config_hash(dehazer.geometry))
    log_path = out.with_suffix(".log.tsv")
    log_path.write_text("iteration\tphase\tloss\tlr\n")
    _append_log(log_path, gc.log_)
    cfg.dump(out.parent / "gcl_config.yaml")


def cmd_dehaze(args):
    dehazer = FourierDiffusionDehazer.load(args.ckpt)
    if args.config:
        cfg = load_config(args.config)
        expected = dehazer_from_config(cfg)
        if config_hash(expected.geometry) != config_hash(dehazer.geometry) and not args.force:
            raise ConfigError(
                f"checkpoint geometry {dehazer.geometry} differs from config {expected.geometry}; "
                "pass --force to override"
            )
        dehazer.set_params(stride=cfg.sample.stride)
    if args.stride is not None:
        dehazer.set_params(stride=args.stride)
    gc = None
    if args.gcl_ckpt:
        gc = GlobalCompensator.load(args.gcl_ckpt)
        if gc.diffusion_config_hash_ not in (None, config_hash(dehazer.geometry)) and not args.force:
            raise ConfigError("global-branch checkpoint was trained against a different denoiser geometry")
    seed = dehazer.random_state if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, path in enumerate(_list_images(args.input)):
        hazy = load_image(path)
        if min(hazy.shape[1:]) < dehazer.patch_size:
            raise ValueError(f"{path.name} is smaller than the {dehazer.patch_size}-pixel patch")
        restored = dehazer.restore(hazy, i, random_state=seed)
        save_image(restored, out / path.name)
        if gc is not None:
            (out / "fused").mkdir(exist_ok=True)
            fused = gc.predict(hazy[None], restored[None])[0]
            save_image(fused, out / "fused" / path.name)
        logger.info("restored %s", path.name)
    resolved = dict(dehazer.get_params(), seed=seed)
    (out / "dehaze_params.txt").write_text("".join(f"{k}: {resolved[k]}\n" for k in sorted(resolved)))


def cmd_eval(args):
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"{d} is not a directory")
    pred = {p.name for p in pred_dir.glob("*.png")}
    gt = {p.name for p in gt_dir.glob("*.png")}
    matched = sorted(pred & gt)
    unmatched = sorted(pred ^ gt)
    for name in unmatched:
        logger.warning("unmatched file skipped: %s", name)
    if not matched:
        raise ValueError(f"no filenames in common between {pred_dir} and {gt_dir}")
    report = MetricsReport()
    for name in matched:
        report.add(name, load_image(pred_dir / name), load_image(gt_dir / name))
    report.write_csv(args.out)
    means = report.mean()
    logger.info("evaluated %d pairs (%d unmatched): %s", report.count, len(unmatched),
                ", ".join(f"{k}={v:.4f}" for k, v in means.items()))
    if report.excluded_pixels:
        logger.warning("%d zero-vector pixels excluded from SAM", report.excluded_pixels)


def build_parser():
    parser = _Parser(prog="fourierhaze", description="Fourier-aware conditional diffusion dehazing")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="synthesize paired hazy/clean PNGs")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-diffusion", help="phased training of the denoiser")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train_diffusion)

    p = sub.add_parser("train-gcl", help="train the global branch and fusion")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True, help="trained denoiser checkpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_gcl)

    p = sub.add_parser("dehaze", help="restore images with a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--gcl-ckpt")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--config")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_dehaze)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"fourierhaze: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        args.func(args)
    except VALIDATION_ERRORS as exc:
        logger.error("%s", exc)
        return 1
    except Exception as exc:  # noqa: BLE001
        logger.exception("failed: %s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
