"""
CLI script running the synthetic registration experiments end to end:
ground-truth recovery with EM-11 and the plane-order robustness sweep.
"""
# pylint: disable=too-many-locals
import sys
import os

# ---- sys.path modification ----
src_path = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'src'))
if src_path not in sys.path:
    sys.path.insert(0, src_path)
# ---- End sys.path modification ----

import argparse
import logging
from typing import Any, Dict, List, Optional

from planemorph.cli.commands import generate_dataset
from planemorph.common.exceptions import ConfigurationError, DivergenceError, InvalidParameterError, LibraryError
from planemorph.common.schemas import LossWeights, ModelConfig, PlaneSpec, TrainConfig
from planemorph.common.torch_utils import configure_runtime
from planemorph.io.dataset import MANIFEST_NAME, load_dataset
from planemorph.io.jsonio import write_json
from planemorph.training.evaluation import evaluate
from planemorph.training.trainer import Trainer

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s [%(levelname)s]: %(message)s',
    datefmt='%Y-%m-%d %H:%M:%S'
)
script_logger = logging.getLogger(__name__)

# Pass criteria for the recovery experiment. The generator's identity-field
# Dice is about 0.90, so the Dice gain is bounded by roughly 0.10.
MIN_DICE_GAIN = 0.02
MIN_TRE_REDUCTION = 0.40
MAX_NEG_FRACTION = 0.5
# Largest allowed spread of final Dice across plane orders.
MAX_ORDER_DICE_SPREAD = 0.05

# Local NCC leaves out windows where the fixed phantom is flat: the blob tails
# are near-constant, and there squared NCC grows when labels dilate.
RECOVERY_LOSS = LossWeights(ncc_var_floor=1e-4)
DEFAULT_LR = 2e-3

PLANE_ORDERS = [
    [[PlaneSpec.XY], [PlaneSpec.YZ]],
    [[PlaneSpec.YZ], [PlaneSpec.ZX]],
    [[PlaneSpec.ZX], [PlaneSpec.XY]],
]


def recovery_model_config(seed: int, planes: Optional[List[List[PlaneSpec]]] = None) -> ModelConfig:
    return ModelConfig(variant="EM-11", stride=2, merge_d=2, embed_dim=16, seed=seed, planes=planes)


def run_training(data_dir: str, run_dir: str, model_cfg: ModelConfig, steps: int, lr: float,
                 seed: int) -> Dict[str, Any]:
    """Trains on `data_dir` for `steps` optimizer steps and evaluates on every pair."""
    train_cfg = TrainConfig(lr=lr, epochs=10_000, max_steps=steps, seed=seed, seg_fraction=0.0)
    artifacts = Trainer(model_cfg, train_cfg, RECOVERY_LOSS).fit(load_dataset(data_dir), out_dir=run_dir)
    report = evaluate(artifacts.model, load_dataset(data_dir))
    write_json(os.path.join(run_dir, "report.json"), report.model_dump(mode="json"))
    return {
        "steps": artifacts.n_steps,
        "dice_before": report.dice_before_mean,
        "dice_after": report.dice_mean,
        "tre_before": report.tre_before_mean,
        "tre_after": report.tre_mean,
        "neg_fraction": report.neg_fraction_mean,
    }


def recovery_dataset(work_dir: str, n_pairs: int, size: int, seed: int) -> str:
    """Generates the shared synthetic dataset under `work_dir` unless it is already there."""
    data_dir = os.path.join(work_dir, "data")
    if os.path.exists(os.path.join(data_dir, MANIFEST_NAME)):
        script_logger.info("Reusing synthetic dataset in %s.", data_dir)
    else:
        generate_dataset(data_dir, n_pairs, size, labels=4, max_disp=3.0, sigma=4.0, seed=seed)
    return data_dir


def recovery_experiment(work_dir: str, n_pairs: int, size: int, steps: int, lr: float,
                        seed: int) -> Dict[str, Any]:
    data_dir = recovery_dataset(work_dir, n_pairs, size, seed)
    result = run_training(data_dir, os.path.join(work_dir, "recovery"), recovery_model_config(seed),
                          steps, lr, seed)
    dice_gain = result["dice_after"] - result["dice_before"]
    tre_reduction = 1.0 - result["tre_after"] / result["tre_before"] if result["tre_before"] else 0.0
    result.update({
        "dice_gain": dice_gain,
        "tre_reduction": tre_reduction,
        "passed": bool(dice_gain >= MIN_DICE_GAIN and tre_reduction >= MIN_TRE_REDUCTION
                       and result["neg_fraction"] <= MAX_NEG_FRACTION),
    })
    script_logger.info("Recovery: Dice %.4f -> %.4f, TRE %.4f -> %.4f, %%|J|<=0 %.4f (passed=%s).",
                       result["dice_before"], result["dice_after"], result["tre_before"],
                       result["tre_after"], result["neg_fraction"], result["passed"])
    return result


def plane_order_experiment(work_dir: str, steps: int, lr: float, seed: int, n_pairs: int = 16,
                           size: int = 32) -> Dict[str, Any]:
    """Trains EM-11 once per plane order on the recovery dataset at a fixed seed."""
    data_dir = recovery_dataset(work_dir, n_pairs, size, seed)
    runs = {}
    for planes in PLANE_ORDERS:
        tag = "-".join(block[0].value for block in planes)
        runs[tag] = run_training(data_dir, os.path.join(work_dir, f"order_{tag}"),
                                 recovery_model_config(seed, planes), steps, lr, seed)
        script_logger.info("Plane order %s: final Dice %.4f.", tag, runs[tag]["dice_after"])
    dices = [r["dice_after"] for r in runs.values()]
    spread = max(dices) - min(dices)
    return {"runs": runs, "dice_spread": spread, "passed": bool(spread <= MAX_ORDER_DICE_SPREAD)}


def main():
    """Main function to parse arguments and run the synthetic experiments."""
    parser = argparse.ArgumentParser(
        description="Run the synthetic recovery and plane-order experiments.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter
    )
    parser.add_argument("--out", type=str, required=True,
                        help="Working directory for data, runs and summary.json.")
    parser.add_argument("--experiment", choices=["recovery", "plane-order", "all"], default="all",
                        help="Which experiment(s) to run.")
    parser.add_argument("--n-pairs", dest="n_pairs", type=int, default=16, help="Synthetic pairs.")
    parser.add_argument("--size", type=int, default=32, help="Cubic grid edge length.")
    parser.add_argument("--steps", type=int, default=200, help="Optimizer steps per training run.")
    parser.add_argument("--lr", type=float, default=DEFAULT_LR, help="Adam learning rate.")
    parser.add_argument("--seed", type=int, default=0, help="Seed for data and models.")
    parser.add_argument("--debug", action="store_true", help="Enable DEBUG level logging.")
    args = parser.parse_args()

    if args.debug:
        logging.getLogger().setLevel(logging.DEBUG)
        script_logger.debug("Debug logging enabled.")

    summary: Dict[str, Any] = {"config": vars(args).copy()}
    try:
        configure_runtime()
        os.makedirs(args.out, exist_ok=True)
        if args.experiment in ("recovery", "all"):
            summary["recovery"] = recovery_experiment(args.out, args.n_pairs, args.size, args.steps,
                                                      args.lr, args.seed)
        if args.experiment in ("plane-order", "all"):
            summary["plane_order"] = plane_order_experiment(args.out, args.steps, args.lr, args.seed,
                                                            args.n_pairs, args.size)
        write_json(os.path.join(args.out, "summary.json"), summary)
        script_logger.info("Summary written to %s.", os.path.join(args.out, "summary.json"))
    except (ConfigurationError, InvalidParameterError) as e_conf:
        script_logger.error("CONFIGURATION ERROR: %s", e_conf)
        sys.exit(2)
    except DivergenceError as e_div:
        script_logger.error("TRAINING DIVERGED: %s", e_div)
        sys.exit(3)
    except LibraryError as e_lib:
        script_logger.error("LIBRARY ERROR: %s", e_lib, exc_info=True)
        sys.exit(1)
    except Exception as e_gen:  # pylint: disable=broad-exception-caught
        script_logger.critical("UNEXPECTED ERROR: %s", e_gen, exc_info=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
