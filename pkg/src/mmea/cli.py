"""Command-line entry point: generate, train, eval, ablate.

Configuration is a flat key-value namespace: built-in defaults, then an
optional JSON config file (``--config``), then explicit flags, each
overriding the last.  All diagnostics go to standard error prefixed
with ``mmea:``; results and file paths go to standard output.  The exit
code is 0 exactly when the command completed.

``train`` writes ``checkpoint.ckpt`` and ``loss_trace.tsv`` under the
output directory; ``eval`` reads the checkpoint back from the same
place, recomputes the train/test seed split from the run config stored
inside it, and writes ``eval.txt`` and ``eval.tsv``.  ``ablate`` trains
every fusion variant with the shared seed and writes ``ablation.tsv``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .data import SyntheticConfig, generate_synthetic, load_dataset, split_seeds, write_dataset
from .errors import ContractError, MmeaError
from .evaluation import EvalReport, evaluate, write_report_table, write_report_text
from .model import (
    VARIANTS,
    ModelConfig,
    build_pair_inputs,
    embed_pair,
    load_checkpoint,
    params_from_arrays,
    save_checkpoint,
)
from .training import TrainConfig, train

LOG = logging.getLogger("mmea")

DEFAULTS: dict = {
    "data": None,  # dataset directory (train/eval/ablate)
    "out": "out",
    "seed": 0,
    "seed_ratio": 0.2,
    # synthetic generation
    "entities": 200,
    "relations": 20,
    "mean_degree": 6.0,
    "edge_drop": 0.1,
    "noise_std": 0.1,
    "attr_vocab": 50,
    "visual_dim": 32,
    "latent_dim": 32,
    # model dims and variant
    "emb_dim": 100,
    "hidden_dim": 300,
    "layers": 3,
    "rank": 4,
    "variant": "full",
    "top_k": None,  # vocabulary cap for attribute/relation bags
    # training
    "epochs": 600,
    "batch_size": 3500,
    "lr": 5e-3,
    "weight_decay": 1e-2,
    "tau": 0.1,
    "negatives": None,  # null: all in-batch counterparts
    "iterative": True,
    "expand_every": 20,
    "expand_threshold": 0.85,
    # evaluation
    "candidate_pool": "test",
    "pessimistic": False,
    "threads": 1,
}

FLAG_KEYS = ("data", "out", "seed", "epochs", "rank", "tau", "layers", "variant", "threads")


def _setup_logging() -> None:
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    name = os.environ.get("MMEA_LOG_LEVEL", "info").lower()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("mmea: %(message)s"))
    LOG.handlers[:] = [handler]
    LOG.propagate = False
    LOG.setLevel(levels.get(name, logging.INFO))
    if name not in levels:
        LOG.warning("unknown MMEA_LOG_LEVEL %r, using info", name)


def _merge_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config is not None:
        path = Path(args.config)
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise ContractError(f"config {path}: {err}")
        if not isinstance(loaded, dict):
            raise ContractError(f"config {path}: expected a JSON object with flat keys")
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise ContractError(f"config {path}: unknown keys {', '.join(unknown)}")
        cfg.update(loaded)
    for key in FLAG_KEYS:
        value = getattr(args, key)
        if value is not None:
            cfg[key] = value
    return cfg


def _model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(
        emb_dim=int(cfg["emb_dim"]),
        hidden_dim=int(cfg["hidden_dim"]),
        layers=int(cfg["layers"]),
        rank=int(cfg["rank"]),
        variant=str(cfg["variant"]),
    )


def _train_config(cfg: dict) -> TrainConfig:
    negatives = cfg["negatives"]
    return TrainConfig(
        epochs=int(cfg["epochs"]),
        batch_size=int(cfg["batch_size"]),
        lr=float(cfg["lr"]),
        weight_decay=float(cfg["weight_decay"]),
        tau=float(cfg["tau"]),
        negatives=None if negatives is None else int(negatives),
        iterative=bool(cfg["iterative"]),
        expand_every=int(cfg["expand_every"]),
        expand_threshold=float(cfg["expand_threshold"]),
        seed=int(cfg["seed"]),
    )


def _require_data(cfg: dict) -> str:
    if not cfg["data"]:
        raise ContractError("a dataset directory is required (--data DIR)")
    return str(cfg["data"])


def _prepare(cfg: dict, data_dir: str):
    """Load, split, and featurize: everything both train and eval need."""
    kg1, kg2, seeds = load_dataset(data_dir)
    train_seeds, test_seeds = split_seeds(seeds, float(cfg["seed_ratio"]), int(cfg["seed"]))
    top_k = None if cfg["top_k"] is None else int(cfg["top_k"])
    inputs = build_pair_inputs(kg1, kg2, attr_k=top_k, rel_k=top_k)
    return inputs, train_seeds, test_seeds


def _evaluate_embeddings(cfg: dict, emb1, emb2, test_pairs) -> EvalReport:
    return evaluate(
        emb1,
        emb2,
        test_pairs,
        candidate_pool=str(cfg["candidate_pool"]),
        pessimistic=bool(cfg["pessimistic"]),
        threads=int(cfg["threads"]),
    )


def cmd_generate(cfg: dict) -> int:
    gen = SyntheticConfig(
        num_entities=int(cfg["entities"]),
        num_relations=int(cfg["relations"]),
        mean_degree=float(cfg["mean_degree"]),
        edge_drop=float(cfg["edge_drop"]),
        noise_std=float(cfg["noise_std"]),
        attr_vocab=int(cfg["attr_vocab"]),
        visual_dim=int(cfg["visual_dim"]),
        latent_dim=int(cfg["latent_dim"]),
        seed=int(cfg["seed"]),
    )
    kg1, kg2, seeds = generate_synthetic(gen)
    # the dataset goes where the other commands will look for it
    out = Path(cfg["data"]) if cfg["data"] is not None else Path(cfg["out"])
    write_dataset(out, kg1, kg2, seeds)
    LOG.info("synthetic dataset written to %s", out)
    sys.stdout.write((out / "manifest.json").read_text(encoding="utf-8"))
    return 0


def cmd_train(cfg: dict) -> int:
    data_dir = _require_data(cfg)
    inputs, train_seeds, test_seeds = _prepare(cfg, data_dir)
    model_cfg = _model_config(cfg)
    train_cfg = _train_config(cfg)
    LOG.info(
        "training %s on %d seed pairs (%d held out) for %d epochs",
        model_cfg.variant,
        len(train_seeds),
        len(test_seeds),
        train_cfg.epochs,
    )
    period = max(1, train_cfg.expand_every)

    def hook(epoch: int, loss: float, _params) -> None:
        level = logging.INFO if epoch == 0 or (epoch + 1) % period == 0 else logging.DEBUG
        LOG.log(level, "epoch %d: loss %.6f", epoch + 1, loss)

    result = train(inputs, train_seeds.pairs, model_cfg, train_cfg, hook)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.ckpt"
    save_checkpoint(ckpt, result.params, {"run": cfg})
    with (out / "loss_trace.tsv").open("w", encoding="utf-8") as fh:
        fh.write("epoch\tloss\n")
        for epoch, value in enumerate(result.loss_trace, start=1):
            fh.write(f"{epoch}\t{value:.10f}\n")
    LOG.info("checkpoint written to %s", ckpt)
    print(f"final_loss\t{result.loss_trace[-1]:.10f}")
    print(f"checkpoint\t{ckpt}")
    return 0


def cmd_eval(cfg: dict) -> int:
    out = Path(cfg["out"])
    ckpt = out / "checkpoint.ckpt"
    if not ckpt.exists():
        raise ContractError(f"no checkpoint at {ckpt} (run train with the same --out first)")
    arrays, stored = load_checkpoint(ckpt)
    run = dict(DEFAULTS)
    run.update(stored.get("run", {}))
    data_dir = cfg["data"] or run["data"]
    if not data_dir:
        raise ContractError("a dataset directory is required (--data DIR)")
    # the stored run config governs the split, the features, and the model
    inputs, _train_seeds, test_seeds = _prepare(run, str(data_dir))
    model_cfg = _model_config(run)
    params = params_from_arrays(arrays, model_cfg, inputs)
    emb1, emb2 = embed_pair(params, inputs, model_cfg)
    report = _evaluate_embeddings(cfg, emb1, emb2, test_seeds.pairs)
    write_report_text(report, out / "eval.txt")
    write_report_table(report, out / "eval.tsv")
    LOG.info("report written to %s", out / "eval.txt")
    sys.stdout.write((out / "eval.txt").read_text(encoding="utf-8"))
    return 0


def cmd_ablate(cfg: dict) -> int:
    data_dir = _require_data(cfg)
    inputs, train_seeds, test_seeds = _prepare(cfg, data_dir)
    train_cfg = _train_config(cfg)
    rows = []
    for variant in VARIANTS:
        model_cfg = _model_config({**cfg, "variant": variant})
        LOG.info("ablation: training %s", variant)
        result = train(inputs, train_seeds.pairs, model_cfg, train_cfg)
        emb1, emb2 = embed_pair(result.params, inputs, model_cfg)
        report = _evaluate_embeddings(cfg, emb1, emb2, test_seeds.pairs)
        rows.append(f"{variant}\t{report.hits1:.6f}\t{report.hits10:.6f}\t{report.mrr:.6f}")
        LOG.info("ablation: %s hits1 %.4f mrr %.4f", variant, report.hits1, report.mrr)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    table = "variant\thits1\thits10\tmrr\n" + "\n".join(rows) + "\n"
    (out / "ablation.tsv").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", metavar="PATH", help="flat JSON config file")
    shared.add_argument("--data", metavar="DIR", help="dataset directory")
    shared.add_argument("--out", metavar="DIR", help="output directory")
    shared.add_argument("--seed", type=int, metavar="N", help="rng seed")
    shared.add_argument("--epochs", type=int, metavar="N")
    shared.add_argument("--rank", type=int, metavar="N", help="fusion rank")
    shared.add_argument("--tau", type=float, metavar="F", help="loss temperature")
    shared.add_argument("--layers", type=int, metavar="N", help="aggregation layers")
    shared.add_argument("--variant", choices=VARIANTS, help="fusion variant")
    shared.add_argument("--threads", type=int, metavar="N", help="evaluation scoring threads")
    parser = argparse.ArgumentParser(prog="mmea", description="Multi-modal entity alignment pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    sub.add_parser("generate", parents=[shared], help="write a synthetic dataset pair")
    sub.add_parser("train", parents=[shared], help="train and write a checkpoint")
    sub.add_parser("eval", parents=[shared], help="score a checkpoint on the held-out pairs")
    sub.add_parser("ablate", parents=[shared], help="train every fusion variant and tabulate")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    try:
        cfg = _merge_config(args)
        return COMMANDS[args.command](cfg)
    except (MmeaError, OSError) as err:
        LOG.error("%s", err)
        return 1


if __name__ == "__main__":
    sys.exit(main())
