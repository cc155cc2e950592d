"""Command-line entry points.

Five subcommands: ``stats`` pools stroke-width statistics over a dataset,
``simulate`` runs seeded annotation sessions and writes report curves plus
final masks, ``evaluate`` scores prediction masks against ground truth,
``serve`` hosts the live annotation service, and ``synth`` writes a
synthetic corpus. Errors print one JSON line on stderr with a
machine-parsable ``error`` code and exit nonzero.
"""

from __future__ import annotations

import functools
import json
import socket
import sys
from pathlib import Path

import click
import numpy as np

from .config import load_config
from .metrics import evaluate_pair
from .preprocess import (
    list_mirror_ids,
    load_mirror,
    read_mask_png,
    write_mask_png,
)
from .refine import make_refiner
from .session import REPORT_COLUMNS, Session
from .strokes import WIDTH_MODES, compute_stroke_stats, get_stroke_widths
from .synth import generate_corpus

__all__ = ["main"]


def _error_code(exc: BaseException) -> str:
    code = getattr(exc, "code", None)
    if isinstance(code, str):
        return code
    if isinstance(exc, FileNotFoundError):
        return "not-found"
    if isinstance(exc, OSError):
        return "unavailable"
    if isinstance(exc, (ValueError, KeyError)):
        return "invalid-argument"
    return "internal-error"


def _fail(exc: BaseException):
    click.echo(json.dumps({"error": _error_code(exc), "message": str(exc)}),
               err=True)
    sys.exit(1)


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (click.ClickException, click.exceptions.Exit, SystemExit):
            raise
        except Exception as exc:
            _fail(exc)
    return wrapper


@click.group()
@click.option("--config", "config_path",
              type=click.Path(exists=True, dir_okay=False), default=None,
              help="TOML config file; flags override its values.")
@click.option("--dataset", default=None, help="Dataset root directory.")
@click.option("--seed", type=int, default=None, help="Master random seed.")
@click.option("--backend", default=None,
              help="identity | heuristic | oracle | remote:<url>")
@click.option("--width-mode", type=click.Choice(WIDTH_MODES), default=None)
@click.option("--cap", type=int, default=None, help="Interaction cap.")
@click.option("--patch-size", type=int, default=None, help="Evaluation patch size.")
@click.option("--port", type=int, default=None, help="Service port.")
@click.pass_context
def main(ctx, config_path, dataset, seed, backend, width_mode, cap, patch_size, port):
    """Interactive refinement of engraved-line segmentation masks."""
    try:
        ctx.obj = load_config(config_path, dataset_root=dataset, seed=seed,
                              backend=backend, width_mode=width_mode,
                              cap=cap, patch_size=patch_size, port=port)
    except Exception as exc:
        _fail(exc)


def _pooled_stats(dataset_root):
    ids = list_mirror_ids(dataset_root)
    if not ids:
        raise FileNotFoundError(f"no mirrors under {dataset_root}")
    widths = []
    for mirror_id in ids:
        widths.extend(get_stroke_widths(load_mirror(dataset_root, mirror_id).gt))
    return compute_stroke_stats(widths)


@main.command()
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write the stats JSON here instead of stdout.")
@click.pass_obj
@_guarded
def stats(cfg, out):
    """Pool stroke-width statistics over the dataset's ground truth."""
    doc = json.dumps(_pooled_stats(cfg.dataset_root).to_json_dict(), indent=2)
    if out:
        Path(out).write_text(doc + "\n", encoding="utf-8")
    else:
        click.echo(doc)


def _hold_last(rows, initial_row, length):
    """Pad a report series to ``length`` by holding its last state."""
    padded = list(rows)
    hold = padded[-1] if padded else initial_row
    while len(padded) < length:
        padded.append(dict(hold, step=len(padded)))
    return padded


def _write_rows(path, rows):
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in row.items()})


def _average_rows(per_repeat):
    """Arithmetic mean across repeats, column by column."""
    length = max(len(rows) for rows in per_repeat)
    averaged = []
    for i in range(length):
        cells = [rows[i] for rows in per_repeat]
        row = {"step": i}
        for column in ("pfm", "pfm_composed", "pfm_delta", "annotated_pixels"):
            values = [c[column] for c in cells]
            row[column] = (None if any(v is None for v in values)
                           else float(np.mean(values)))
        averaged.append(row)
    return averaged


@main.command()
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              required=True, help="Output directory for reports and masks.")
@click.option("--repeats", type=int, default=10, show_default=True)
@click.option("--mirrors", default=None,
              help="Comma-separated subset of mirror ids.")
@click.pass_obj
@_guarded
def simulate(cfg, out_dir, repeats, mirrors):
    """Run seeded annotation sessions over the dataset."""
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    stats_pool = _pooled_stats(cfg.dataset_root)
    ids = list_mirror_ids(cfg.dataset_root)
    if mirrors:
        wanted = [m.strip() for m in mirrors.split(",") if m.strip()]
        missing = sorted(set(wanted) - set(ids))
        if missing:
            raise FileNotFoundError(f"mirrors not in dataset: {missing}")
        ids = wanted
    out_root = Path(out_dir)
    summary = {}
    for mirror_index, mirror_id in enumerate(ids):
        mirror = load_mirror(cfg.dataset_root, mirror_id)
        if mirror.pred_init is None:
            raise FileNotFoundError(f"{mirror_id}: no initial prediction")
        folder = out_root / mirror_id
        folder.mkdir(parents=True, exist_ok=True)
        per_repeat = []
        finals = []
        for repeat in range(repeats):
            refiner = make_refiner(cfg.backend, gt=mirror.gt)
            seed = int(np.random.SeedSequence(
                [cfg.seed, mirror_index, repeat]).generate_state(1)[0])
            session = Session(mirror, refiner, stats_pool,
                              width_mode=cfg.width_mode, seed=seed,
                              cap=cfg.cap, patch_size=cfg.patch_size)
            initial_row = {
                "step": 0,
                "pfm": session.whole_pfm(),
                "pfm_composed": session.whole_pfm(),
                "pfm_delta": 0.0,
                "annotated_pixels": 0,
            }
            session.run_until_convergence()
            rows = session.report_rows()
            _write_rows(folder / f"repeat{repeat}.csv", rows)
            write_mask_png(folder / f"final_r{repeat}.png", session.full_mask())
            per_repeat.append((rows, initial_row))
            finals.append(session.whole_pfm())
        length = max(len(rows) for rows, _ in per_repeat)
        if length:
            padded = [_hold_last(rows, initial_row, length)
                      for rows, initial_row in per_repeat]
            _write_rows(folder / "average.csv", _average_rows(padded))
        else:
            _write_rows(folder / "average.csv", [])
        summary[mirror_id] = {
            "final_pfm_mean": float(np.mean(finals)),
            "steps_max": length,
        }
    (out_root / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    click.echo(json.dumps(summary, sort_keys=True))


@main.command()
@click.argument("pred_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("gt_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write the metrics JSON here instead of stdout.")
@_guarded
def evaluate(pred_dir, gt_dir, out):
    """Score prediction masks against ground-truth masks by filename."""
    gt_files = sorted(Path(gt_dir).glob("*.png"))
    if not gt_files:
        raise FileNotFoundError(f"no .png masks under {gt_dir}")
    files = {}
    for gt_file in gt_files:
        pred_file = Path(pred_dir) / gt_file.name
        if not pred_file.exists():
            raise FileNotFoundError(f"missing prediction for {gt_file.name}")
        report = evaluate_pair(read_mask_png(pred_file), read_mask_png(gt_file))
        files[gt_file.name] = report.to_json_dict()
    mean = {key: round(float(np.mean([f[key] for f in files.values()])), 6)
            for key in ("iou", "precision", "p_recall", "pfm")}
    doc = json.dumps({"files": files, "mean": mean}, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(doc + "\n", encoding="utf-8")
    else:
        click.echo(doc)


@main.command()
@click.option("--count", type=int, default=10, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              required=True, help="Dataset directory to create.")
@click.option("--size", type=int, default=512, show_default=True)
@click.pass_obj
@_guarded
def synth(cfg, count, out_dir, size):
    """Generate a synthetic engraved-mirror dataset."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    ids = generate_corpus(out_dir, count, seed=cfg.seed, size=size)
    click.echo(json.dumps({"root": str(out_dir), "written": ids}))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.pass_obj
@_guarded
def serve(cfg, host):
    """Host the annotation service and browser UI."""
    import uvicorn

    from .service import create_app

    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((host, cfg.port))
    except OSError as exc:
        raise OSError(f"port {cfg.port} unavailable: {exc}") from exc
    finally:
        probe.close()
    uvicorn.run(create_app(cfg), host=host, port=cfg.port, log_level="warning")


if __name__ == "__main__":
    main()
