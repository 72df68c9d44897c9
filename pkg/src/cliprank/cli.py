"""Command-line front end.

Module-level imports stay light on purpose: BLAS/OpenMP thread caps only
bind if the environment variables are set before numpy first loads, so the
group callback pins the pools and every command body imports the numeric
modules lazily afterwards.

Exit codes: 0 success, 2 configuration or usage, 3 data, 4 numerics,
1 anything unexpected.  Every failure writes one JSON line to stderr.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from .exceptions import CliprankError, ConfigError, DataError, NumericsError

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


def _pin_threads(n: int) -> None:
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def _echo_json(payload: dict) -> None:
    click.echo(json.dumps(payload, sort_keys=True))


def _run_overrides(**kwargs) -> dict:
    """Overrides dict for the run section, skipping unset values."""
    run = {key: value for key, value in kwargs.items() if value is not None}
    return {"run": run} if run else {}


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option(
    "--threads",
    type=click.IntRange(min=1),
    default=None,
    help="Cap the numeric thread pools (BLAS, OpenMP).",
)
@click.option(
    "--deterministic",
    is_flag=True,
    help="Single-threaded numerics with a fixed reduction order, so "
    "same-seed reruns are bit-identical.",
)
def cli(threads: int | None, deterministic: bool) -> None:
    """Train and evaluate a clip-ranking model on synthetic videos."""
    if deterministic:
        threads = 1
    if threads is not None:
        _pin_threads(threads)
    if deterministic:
        from . import autodiff as ad

        ad.set_conv_mode("sequential")


@cli.command("gen-data")
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="JSON config; defaults fill whatever it leaves out.",
)
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
)
@click.option("--seed", type=int, default=None, help="Override run.seed.")
def gen_data(config_path: Path | None, out_dir: Path, seed: int | None) -> None:
    """Render the synthetic corpus (train and test splits) into OUT."""
    from .config import load_config, write_effective
    from .synth import generate_synthetic_dataset

    cfg = load_config(config_path, overrides=_run_overrides(seed=seed))
    out_dir.mkdir(parents=True, exist_ok=True)
    write_effective(cfg.raw, out_dir / "config.json")
    summary: dict = {"out": str(out_dir), "seed": cfg.run.seed}
    for split in ("train", "test"):
        manifest = generate_synthetic_dataset(
            cfg.data.spec(split, cfg.run.seed), out_dir / split, split
        )
        summary[f"{split}_videos"] = len(manifest.entries)
    _echo_json(summary)


@cli.command()
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
)
@click.option(
    "--data",
    "data_dir",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    required=True,
    help="Directory produced by gen-data (holds train/ and test/).",
)
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
)
@click.option(
    "--resume",
    "resume_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Continue from an interval checkpoint of the same config.",
)
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--checkpoint-every", type=int, default=None)
@click.option("--no-rank", is_flag=True, help="Drop the ranking term.")
@click.option("--no-contrastive", is_flag=True, help="Drop the contrastive term.")
@click.option("--no-rotation", is_flag=True, help="Drop the rotation term.")
@click.option("--verbose", is_flag=True, help="Echo every metrics record.")
def pretrain(
    config_path: Path | None,
    data_dir: Path,
    out_dir: Path,
    resume_path: Path | None,
    seed: int | None,
    epochs: int | None,
    batch_size: int | None,
    checkpoint_every: int | None,
    no_rank: bool,
    no_contrastive: bool,
    no_rotation: bool,
    verbose: bool,
) -> None:
    """Run the self-supervised objective over the train split."""
    from .config import load_config, write_effective
    from .report import metrics_csv, plot_training_curves, read_metrics
    from .train import pretrain as run_pretrain
    from .video import load_dataset

    overrides = _run_overrides(
        seed=seed,
        epochs=epochs,
        batch_size=batch_size,
        checkpoint_every=checkpoint_every,
    )
    loss_overrides = {}
    if no_rank:
        loss_overrides["enable_rank"] = False
    if no_contrastive:
        loss_overrides["enable_contrastive"] = False
    if no_rotation:
        loss_overrides["enable_rotation"] = False
    if loss_overrides:
        overrides["loss"] = loss_overrides
    cfg = load_config(config_path, overrides=overrides)

    out_dir.mkdir(parents=True, exist_ok=True)
    write_effective(cfg.raw, out_dir / "config.json")
    videos = load_dataset(data_dir / "train" / "manifest.json")
    log_fn = (lambda rec: click.echo(json.dumps(rec))) if verbose else None
    result = run_pretrain(cfg, videos, out_dir, resume=resume_path, log_fn=log_fn)

    records = read_metrics(result.metrics_path)
    metrics_csv(records, out_dir / "metrics.csv")
    plot_training_curves(records, out_dir / "training_curves.png")
    _echo_json(
        {
            "checkpoint": str(result.checkpoint_path),
            "metrics": str(result.metrics_path),
            "steps": result.steps,
            "loss_total": result.last_record["loss_total"],
        }
    )


@cli.command("eval-rank")
@click.option(
    "--ckpt",
    "ckpt_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
)
@click.option(
    "--data",
    "data_dir",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    required=True,
)
@click.option(
    "--n",
    "n_examples",
    type=click.IntRange(min=1),
    default=None,
    help="Examples to draw (default: run.eval_examples from the checkpoint).",
)
@click.option("--seed", type=int, default=None)
@click.option(
    "--split", type=click.Choice(["train", "test"]), default="test", show_default=True
)
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Also write the full report here (JSON, CSV, PNG).",
)
def eval_rank(
    ckpt_path: Path,
    data_dir: Path,
    n_examples: int | None,
    seed: int | None,
    split: str,
    out_dir: Path | None,
) -> None:
    """Rank future clips against distractors with a trained model."""
    from .config import build_config, write_effective
    from .evaluation import evaluate_ranking, model_scorer
    from .report import plot_ranking, ranking_csv, write_json
    from .train import load_checkpoint, params_from_checkpoint
    from .video import load_dataset

    ckpt = load_checkpoint(ckpt_path)
    cfg = build_config(ckpt.raw_config)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_effective(ckpt.raw_config, out_dir / "config.json")

    params = params_from_checkpoint(ckpt)
    videos = load_dataset(data_dir / split / "manifest.json")
    n = n_examples if n_examples is not None else cfg.run.eval_examples
    eval_seed = seed if seed is not None else cfg.run.seed
    report = evaluate_ranking(
        videos,
        cfg.sample,
        cfg.augment,
        n_examples=n,
        seed=eval_seed,
        scorer=model_scorer(params, cfg.encoder),
    )

    summary = {
        "ckpt": str(ckpt_path),
        "split": split,
        "seed": eval_seed,
        "n_examples": report.n_examples,
        "pairwise_accuracy": report.pairwise_accuracy,
        "kendall_tau": report.kendall_tau,
    }
    if out_dir is not None:
        write_json(out_dir / "rank_report.json", {**summary, **report.to_dict()})
        ranking_csv(report, out_dir / "rank_report.csv")
        plot_ranking(report, out_dir / "rank_report.png")
        summary["report"] = str(out_dir / "rank_report.json")
    _echo_json(summary)


@cli.command()
@click.option(
    "--ckpt",
    "ckpt_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
)
@click.option(
    "--random-init",
    is_flag=True,
    help="Baseline: start from freshly initialized weights instead of a checkpoint.",
)
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Config for --random-init; a checkpoint carries its own.",
)
@click.option("--mode", type=click.Choice(["probe", "full"]), required=True)
@click.option(
    "--data",
    "data_dir",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    required=True,
)
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
)
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
def finetune(
    ckpt_path: Path | None,
    random_init: bool,
    config_path: Path | None,
    mode: str,
    data_dir: Path,
    out_dir: Path | None,
    seed: int | None,
    epochs: int | None,
    batch_size: int | None,
) -> None:
    """Train the motion-class head on labels and score the test split.

    Probe mode keeps the context encoder frozen; full mode trains it
    together with the head.
    """
    if ckpt_path is not None and random_init:
        raise click.UsageError("--ckpt and --random-init are mutually exclusive")
    if ckpt_path is None and not random_init:
        raise click.UsageError("pass either --ckpt or --random-init")

    from .config import build_config, load_config, write_effective
    from .evaluation import finetune as run_finetune
    from .report import plot_probe, probe_csv, write_json
    from .train import init_calibrated, load_checkpoint, params_from_checkpoint
    from .video import load_dataset

    if ckpt_path is not None:
        ckpt = load_checkpoint(ckpt_path)
        cfg = build_config(ckpt.raw_config)
        params = params_from_checkpoint(ckpt)
        init_label = str(ckpt_path)
    else:
        cfg = load_config(config_path)
        params = None  # needs the training videos, built below
        init_label = "random"

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_effective(cfg.raw, out_dir / "config.json")

    train_videos = load_dataset(data_dir / "train" / "manifest.json")
    test_videos = load_dataset(data_dir / "test" / "manifest.json")
    ft_seed = seed if seed is not None else cfg.run.seed
    if params is None:
        params = init_calibrated(cfg, train_videos, ft_seed)
    ft_epochs = epochs if epochs is not None else cfg.run.finetune_epochs
    ft_batch = batch_size if batch_size is not None else cfg.run.finetune_batch_size
    report = run_finetune(
        params,
        cfg.encoder,
        train_videos,
        test_videos,
        mode=mode,
        schedule=cfg.finetune_schedule,
        adam_cfg=cfg.adam,
        epochs=ft_epochs,
        batch_size=ft_batch,
        seed=ft_seed,
        aug_spec=cfg.augment,
    )

    summary = {
        "init": init_label,
        "mode": report.mode,
        "seed": ft_seed,
        "epochs": ft_epochs,
        "accuracy": report.accuracy,
        "n_test": report.n_test,
    }
    if out_dir is not None:
        write_json(out_dir / "probe_report.json", {**summary, **report.to_dict()})
        probe_csv(report, out_dir / "probe_report.csv")
        plot_probe(report, out_dir / "probe_report.png")
        summary["report"] = str(out_dir / "probe_report.json")
    _echo_json(summary)


@cli.command()
@click.option(
    "--ckpt",
    "ckpt_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
)
@click.option(
    "--video",
    "video_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    required=True,
)
@click.option(
    "--frame",
    "frame_index",
    type=click.IntRange(min=0),
    required=True,
    help="Probed frame; the context is the window that ends just before it.",
)
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
)
def heatmap(ckpt_path: Path, video_path: Path, frame_index: int, out_dir: Path) -> None:
    """Per-cell similarity map between a context window and one frame."""
    from . import autodiff as ad
    from .config import build_config, write_effective
    from .encoders import encode_context, encode_target
    from .evaluation import export_heatmap, heatmap_grid
    from .report import plot_heatmap, write_json
    from .sampling import apply_record, center_record
    from .train import load_checkpoint, params_from_checkpoint
    from .video import load_video

    ckpt = load_checkpoint(ckpt_path)
    cfg = build_config(ckpt.raw_config)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_effective(ckpt.raw_config, out_dir / "config.json")

    params = params_from_checkpoint(ckpt)
    video = load_video(video_path)
    k = cfg.sample.k
    if frame_index >= video.n:
        raise DataError(
            f"frame {frame_index} out of range for a {video.n}-frame video"
        )
    if frame_index < k:
        raise DataError(
            f"frame {frame_index} has no {k}-frame context window before it"
        )

    rec = center_record(video.frames.shape[-2], video.frames.shape[-1], cfg.augment)
    ch, cw = cfg.augment.crop_h, cfg.augment.crop_w
    context = apply_record(video.frames[frame_index - k : frame_index], rec, ch, cw)
    target = apply_record(video.frames[frame_index], rec, ch, cw)
    with ad.no_grad():
        h = encode_context(params, cfg.encoder, context)
        z = encode_target(params, cfg.encoder, target)
    grid = heatmap_grid(h, z)

    stem = out_dir / f"heatmap_f{frame_index:04d}"
    paths = export_heatmap(grid, ch, cw, stem)
    plot_heatmap(grid, target[0], stem.with_suffix(".png"))
    summary = {
        "ckpt": str(ckpt_path),
        "video": str(video_path),
        "frame": frame_index,
        "score": float(grid.mean()),
        "grid_h": int(grid.shape[0]),
        "grid_w": int(grid.shape[1]),
        "pgm": str(paths["pgm"]),
        "skt": str(paths["skt"]),
        "png": str(stem.with_suffix(".png")),
    }
    write_json(stem.with_suffix(".json"), summary)
    _echo_json(summary)


@cli.command()
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Margins and term enables are taken from its loss section.",
)
@click.option("--instances", type=click.IntRange(min=1), default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
)
def gradcheck(
    config_path: Path | None, instances: int, seed: int, out_dir: Path | None
) -> None:
    """Finite-difference check of the full objective's gradient.

    Runs in 64-bit on small random instances; exits 4 if any coordinate
    disagrees with the analytic gradient beyond tolerance.
    """
    from .config import load_config
    from .gradcheck import check_full_objective
    from .report import write_json

    cfg = load_config(config_path)
    reports = check_full_objective(
        n_instances=instances, seed=seed, loss_cfg=cfg.loss
    )
    worst = max(r.max_rel_error for r in reports)
    payload = {
        "instances": len(reports),
        "max_rel_error": worst,
        "tol": reports[0].tol,
        "passed": all(r.passed for r in reports),
    }
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json(out_dir / "gradcheck.json", payload)
    _echo_json(payload)
    if not payload["passed"]:
        raise NumericsError(
            f"gradient check failed: max relative error {worst:.3e} "
            f"exceeds {reports[0].tol:.1e}"
        )


@cli.command("dump-examples")
@click.option(
    "--data",
    "data_dir",
    type=click.Path(exists=True, file_okay=False, path_type=Path),
    required=True,
)
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Defaults to the config recorded next to the data.",
)
@click.option(
    "--split", type=click.Choice(["train", "test"]), default="train", show_default=True
)
@click.option("--n", "n_examples", type=click.IntRange(min=1), default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
)
def dump_examples(
    data_dir: Path,
    config_path: Path | None,
    split: str,
    n_examples: int,
    seed: int,
    out_dir: Path,
) -> None:
    """Write sampled training examples to disk for inspection.

    Each example becomes a directory of SKT1 tensors (context, targets,
    negatives, rotation inputs) plus a meta.json with the draw's record.
    """
    from . import skt
    from .config import load_config, write_effective
    from .rng import derive_rng
    from .sampling import make_example
    from .video import load_dataset

    if config_path is None and (data_dir / "config.json").exists():
        config_path = data_dir / "config.json"
    cfg = load_config(config_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_effective(cfg.raw, out_dir / "config.json")
    videos = load_dataset(data_dir / split / "manifest.json")

    for i in range(n_examples):
        rng = derive_rng(seed, "dump", i)
        idx = int(rng.integers(len(videos)))
        ex = make_example(videos, idx, cfg.sample, cfg.augment, rng)
        ex_dir = out_dir / f"example_{i:04d}"
        ex_dir.mkdir(exist_ok=True)
        skt.write_tensor(ex_dir / "context.skt", ex.context)
        skt.write_tensor(ex_dir / "targets.skt", ex.targets)
        skt.write_tensor(ex_dir / "negatives.skt", ex.negatives)
        skt.write_tensor(ex_dir / "rotations.skt", ex.rotation_inputs)
        meta = {
            "video_id": ex.video_id,
            "t": ex.t,
            "flip": ex.flip,
            "crop_y": ex.crop_y,
            "crop_x": ex.crop_x,
            "reversed": ex.reversed,
            "rotation_labels": [int(x) for x in ex.rotation_labels],
            "negative_ids": list(ex.negative_ids),
        }
        (ex_dir / "meta.json").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n"
        )
    _echo_json({"examples": n_examples, "out": str(out_dir), "split": split})


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv: list | None = None) -> int:
    """Entry point used by the console script; returns an exit code.

    0 success, 2 config/usage, 3 data, 4 numerics, 1 anything else.
    """
    try:
        rv = cli.main(args=argv, prog_name="cliprank", standalone_mode=False)
    except click.UsageError as err:
        # a bare "cliprank" should print help and succeed, not error out
        if err.__class__.__name__ == "NoArgsIsHelpError":
            click.echo(err.format_message())
            return 0
        return _fail("usage", err.format_message(), 2)
    except click.ClickException as err:
        return _fail("usage", err.format_message(), 2)
    except click.Abort:
        return _fail("aborted", "interrupted", 130)
    except ConfigError as err:
        return _fail("config", str(err), 2)
    except DataError as err:
        return _fail("data", str(err), 3)
    except NumericsError as err:
        return _fail("numerics", str(err), 4)
    except CliprankError as err:
        return _fail("error", str(err), 1)
    except Exception as err:  # pragma: no cover - last resort
        return _fail("internal", f"{type(err).__name__}: {err}", 1)
    return int(rv) if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(main())
