import argparse

from src.core.models import VARIANTS
from src.services.training_service import get_training_service, load_training_config


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="Train a network on a DMSF corpus")
    parser.add_argument("--config", required=True, help="Training config (key=value file, model keys allowed)")
    parser.add_argument("--variant", choices=VARIANTS, default=None, help="Override the model variant")
    parser.add_argument("--train-data", default=None, help="Override train_data")
    parser.add_argument("--out-dir", default=None, help="Override out_dir")
    parser.add_argument("--max-steps", type=int, default=None, help="Override max_steps")
    parser.add_argument("--seed", type=int, default=None, help="Override the training seed")
    parser.add_argument("--resume", action="store_true", help="Continue from the checkpoint in out_dir")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    overrides = {
        "variant": args.variant,
        "train_data": args.train_data,
        "out_dir": args.out_dir,
        "max_steps": args.max_steps,
        "seed": args.seed,
    }
    model_config, train_config = load_training_config(
        args.config, {key: str(value) for key, value in overrides.items() if value is not None}
    )
    result = get_training_service().train(model_config, train_config, resume=args.resume)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"loss trace: {result.loss_trace_path}")
    print(f"finished at step {result.steps}: loss {result.final_loss:.6f}, lr {result.final_lr:.3e}")
    return 0
