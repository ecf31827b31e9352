# planemorph/cli/commands.py
"""
Implementations of the ``planemorph`` subcommands.

Each command takes the parsed argparse namespace and returns an exit code;
failures are raised as planemorph exceptions and mapped to exit codes by
``planemorph.cli.main``.
"""
import argparse
import json
import logging
import os
from typing import List, Tuple

from planemorph.common.exceptions import ConfigurationError, InvalidParameterError
from planemorph.common.schemas import CliConfig, ModelConfig, parse_cli_config
from planemorph.common.torch_utils import configure_runtime
from planemorph.data.phantoms import gen_phantom, gen_smooth_field
from planemorph.data.volume import LandmarkSet
from planemorph.io.checkpoint import load_checkpoint
from planemorph.io.dataset import DatasetManifest, PairEntry, load_dataset, save_landmarks, write_manifest
from planemorph.io.jsonio import read_json, write_csv, write_json
from planemorph.io.mvol import read_volume, write_mvol
from planemorph.nn.cost import cost_table, count_macs
from planemorph.nn.network import build_model, count_params, param_breakdown, predict_field
from planemorph.registration.field_ops import preimage_points, warp, warp_labels
from planemorph.training.evaluation import evaluate, report_table
from planemorph.training.trainer import Trainer

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_NAME = "resolved-config.json"
FIELD_SEED_OFFSET = 10000


# --- gen-data ---

def pair_files(i: int) -> PairEntry:
    tag = f"{i:03d}"
    return PairEntry(
        name=f"pair_{tag}",
        fixed=f"fixed_{tag}.mvol",
        moving=f"moving_{tag}.mvol",
        seg_fixed=f"seg_fixed_{tag}.mvol",
        seg_moving=f"seg_moving_{tag}.mvol",
        landmarks=f"landmarks_{tag}.json",
        gt_field=f"gt_field_{tag}.mvol",
    )


def generate_dataset(out: str, n: int, size: int, labels: int, max_disp: float,
                     sigma: float = 4.0, seed: int = 0) -> DatasetManifest:
    """
    Writes `n` synthetic pairs to `out`: a phantom and its copy warped by a
    smooth random ground-truth field, with label maps and landmarks.

    Pair i uses phantom seed `seed + i` and field seed `seed + 10000 + i`.
    """
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}", parameter="n")
    os.makedirs(out, exist_ok=True)
    grid = (size, size, size)
    entries: List[PairEntry] = []
    for i in range(n):
        entry = pair_files(i)
        fixed, seg_fixed, lm_fixed = gen_phantom(seed + i, grid, labels)
        gt_field = gen_smooth_field(seed + FIELD_SEED_OFFSET + i, grid, max_disp, sigma)
        moving = warp(fixed, gt_field)
        seg_moving = warp_labels(seg_fixed, gt_field)
        lm_moving = LandmarkSet(points=preimage_points(gt_field, lm_fixed.points), ids=lm_fixed.ids)

        write_mvol(os.path.join(out, entry.fixed), fixed)
        write_mvol(os.path.join(out, entry.moving), moving)
        write_mvol(os.path.join(out, entry.seg_fixed), seg_fixed)
        write_mvol(os.path.join(out, entry.seg_moving), seg_moving)
        write_mvol(os.path.join(out, entry.gt_field), gt_field)
        save_landmarks(os.path.join(out, entry.landmarks), lm_fixed, lm_moving)
        entries.append(entry)
        logger.debug("Generated %s.", entry.name)

    manifest = DatasetManifest(
        generator={"n": n, "size": size, "labels": labels,
                   "max_disp": max_disp, "sigma": sigma, "seed": seed},
        pairs=entries,
    )
    path = write_manifest(out, manifest)
    logger.info("Wrote %d synthetic pairs (%d^3, %d labels) and '%s'.", n, size, labels, path)
    return manifest


def cmd_gen_data(args: argparse.Namespace) -> int:
    generate_dataset(args.out, args.n, args.size, args.labels, args.max_disp, args.sigma, args.seed)
    return 0


# --- train ---

def load_cli_config(path: str) -> CliConfig:
    """Reads and validates a JSON experiment config."""
    try:
        document = read_json(path)
    except json.JSONDecodeError as e_json:
        raise ConfigurationError(f"Config '{path}' is not valid JSON: {e_json}") from e_json
    if not isinstance(document, dict):
        raise ConfigurationError(f"Config '{path}' must hold a JSON object.")
    return parse_cli_config(document)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_cli_config(args.config) if args.config else CliConfig()
    configure_runtime()
    dataset = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    write_json(os.path.join(args.out, RESOLVED_CONFIG_NAME), cfg.model_dump(mode="json"))

    trainer = Trainer(cfg.model, cfg.to_train_config(), cfg.loss.to_loss_weights())
    artifacts = trainer.fit(dataset, out_dir=args.out)
    logger.info("Run written to '%s': %s, %s (best epoch %s).", args.out, artifacts.final_checkpoint,
                artifacts.metrics_path, artifacts.best_epoch)
    return 0


# --- eval ---

def cmd_eval(args: argparse.Namespace) -> int:
    """Evaluates a checkpoint; writes the JSON report and a per-pair CSV next to it."""
    configure_runtime()
    model = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    report = evaluate(model, dataset, threads=args.threads)
    write_json(args.report, report.model_dump(mode="json"))
    table_path = os.path.splitext(args.report)[0] + ".csv"
    write_csv(table_path, report_table(report))
    logger.info("Report written to '%s' (per-pair table '%s').", args.report, table_path)
    return 0


# --- register ---

def cmd_register(args: argparse.Namespace) -> int:
    configure_runtime()
    model = load_checkpoint(args.checkpoint)
    fixed = read_volume(args.fixed)
    moving = read_volume(args.moving)
    field = predict_field(model, fixed, moving)
    warped = warp(moving, field)
    write_mvol(args.out, warped)
    write_mvol(args.field, field)
    logger.info("Registered '%s' to '%s': warped volume '%s', field '%s'.",
                args.moving, args.fixed, args.out, args.field)
    return 0


# --- bench-attn ---

def parse_grid(text: str) -> Tuple[int, int, int]:
    """'H,W,D' -> (H, W, D) with positive extents."""
    try:
        dims = tuple(int(part) for part in text.split(","))
    except ValueError as e_val:
        raise InvalidParameterError(f"grid '{text}' is not of the form H,W,D", parameter="grid") from e_val
    if len(dims) != 3 or min(dims) < 1:
        raise InvalidParameterError(f"grid '{text}' needs three positive extents", parameter="grid")
    return dims


def cmd_bench_attn(args: argparse.Namespace) -> int:
    dims = parse_grid(args.grid)
    table = cost_table(dims, args.dim)
    write_csv(args.out, table)
    logger.info("Attention cost for grid %s, C=%d:\n%s", dims, args.dim, table.to_string(index=False))
    return 0


# --- count-params ---

def cmd_count_params(args: argparse.Namespace) -> int:
    cfg = load_cli_config(args.config).model if args.config else ModelConfig()
    model = build_model(cfg)
    total = count_params(model)
    print(f"parameters: {total}")
    if args.size:
        macs = count_macs(model, (args.size, args.size, args.size))
        print(f"multiply-adds ({args.size}^3): {macs.total}")
    for name, count in param_breakdown(model).items():
        print(f"  {name}: {count}")
    return 0
