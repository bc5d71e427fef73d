"""Command-line surface: world/dataset generation, training, evaluation,
retrieval queries, and the gradient-check suite.

Machine-readable JSON goes to stdout (and to --out files); human logs go
to stderr. Exit codes: 0 success, 1 usage error, 2 data/model error. The
seed precedence is: --seed flag, then the BRAINISH_SEED environment
variable, then the config file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import RunConfig, load_run_config, run_config_from_dict
from .errors import ComodalError, ConfigError
from .evaluation import eval_colearning, eval_fusion, eval_retrieval
from .gradcheck import GRAD_TOLERANCE, gradient_check_suite
from .model import init_model
from .rng import rng_fork
from .storage import (
    TEST_FILES,
    canonical_json,
    load_checkpoint,
    load_world,
    read_labeled,
    read_pairs,
    read_triple,
    save_checkpoint,
    save_world,
    write_labeled,
    write_pairs,
    write_triple,
)
from .trainer import run_training, split_heldout
from .world import build_world, sample_datasets
from .decoders import retrieve
from .world import ModalityInstance

SEED_ENV = "BRAINISH_SEED"


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(doc: dict, out_path: str | None = None) -> None:
    text = canonical_json(doc, pretty=True)
    if out_path is not None:
        Path(out_path).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors remapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _resolve_seed(flag_seed: int | None, config_seed: int) -> int:
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    return config_seed


def _load_config(path: str | None, fallback_dir: str | None = None) -> RunConfig:
    if path is not None:
        return load_run_config(path)
    if fallback_dir is not None:
        candidate = Path(fallback_dir) / "config.json"
        if candidate.exists():
            return load_run_config(str(candidate))
    return RunConfig()


def _init_model_for(run: RunConfig, world, seed: int):
    slots = world.arity if run.encoder.position_tags else 0
    return init_model(
        world.vocab_sizes, run.encoder.dims(), world.num_classes, rng_fork(seed, "init"),
        position_slots=slots,
    )


def _cmd_gen(args) -> int:
    run = _load_config(args.config)
    seed = _resolve_seed(args.seed, run.train.seed)
    run = run.with_seed(seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    world = build_world(run.world, rng_fork(seed, "world"))
    sizes = run.datasets
    triple = sample_datasets(world, (sizes.n1, sizes.n2, sizes.n3), rng_fork(seed, "data"))
    tests = sample_datasets(world, (sizes.n1_test, sizes.n2_test, sizes.n3_test), rng_fork(seed, "test"))

    save_world(world, out / "world.json")
    write_triple(out, triple)
    write_labeled(out / TEST_FILES["test1"], tests.d1)
    write_labeled(out / TEST_FILES["test2"], tests.d2)
    write_pairs(out / TEST_FILES["d3_test"], tests.d3)
    (out / "config.json").write_text(
        canonical_json(run.to_canonical_dict(), pretty=True), encoding="utf-8"
    )
    _log(f"wrote world and datasets to {out}")
    _emit(
        {
            "config_fingerprint": run.fingerprint(),
            "seed": seed,
            "counts": {
                "d1": len(triple.d1), "d2": len(triple.d2), "d3": len(triple.d3),
                "test1": len(tests.d1), "test2": len(tests.d2), "d3_test": len(tests.d3),
            },
        }
    )
    return 0


def _cmd_train(args) -> int:
    run = _load_config(args.config, fallback_dir=args.data)
    seed = _resolve_seed(args.seed, run.train.seed)
    run = run.with_seed(seed)
    world = load_world(Path(args.data) / "world.json")
    triple = read_triple(args.data, world)

    model0 = _init_model_for(run, world, seed)
    trained, trace = run_training(triple, model0, run.train, trace_path=args.trace)
    save_checkpoint(
        trained, args.out,
        config_doc=run.to_canonical_dict(), config_fingerprint=run.fingerprint(), seed=seed,
    )
    _log(f"trained {run.train.iterations} iterations; checkpoint at {args.out}")
    last = trace.records[-1]
    _emit(
        {
            "config_fingerprint": run.fingerprint(),
            "seed": seed,
            "iterations": run.train.iterations,
            "final": last.to_json_dict(),
            "heldout_initial": trace.initial_heldout,
            "heldout_final": trace.final_heldout,
        }
    )
    return 0


def _load_model_and_config(path: str):
    model, header = load_checkpoint(path)
    config_doc = header.get("config")
    run = run_config_from_dict(config_doc) if config_doc else RunConfig()
    return model, run, header


def _cmd_eval(args) -> int:
    model, run, header = _load_model_and_config(args.model)
    seed = _resolve_seed(args.seed, int(header.get("seed", run.train.seed)))
    run = run.with_seed(seed)
    data = Path(args.data)
    world = load_world(data / "world.json")

    if args.task == "retrieval":
        pool_path = data / TEST_FILES["d3_test"]
        if pool_path.exists():
            pool = read_pairs(pool_path, world)
        else:
            _, heldout = split_heldout(read_triple(data, world), run.train.heldout_fraction)
            pool = heldout.d3
        report = eval_retrieval(model, pool, run.eval.recall_ks, run.fingerprint(), seed=seed)
    elif args.task == "fusion":
        test1 = read_labeled(data / TEST_FILES["test1"], world, expect_modality=1)
        test2 = read_labeled(data / TEST_FILES["test2"], world, expect_modality=2)
        triple = read_triple(data, world)
        report = eval_fusion(model, test1, test2, train_data=triple, run=run, seed=seed)
    else:
        report = eval_colearning(world, run.eval.colearn, run)
    _emit(report.to_json_dict(), args.out)
    return 0


def _cmd_retrieve(args) -> int:
    model, _, _ = _load_model_and_config(args.model)
    try:
        rec = json.loads(args.query)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"query must be a JSON record: {exc}") from exc
    if not isinstance(rec, dict) or rec.get("modality") not in (1, 2) or not rec.get("units"):
        raise ConfigError("query record needs fields 'modality' (1|2) and non-empty 'units'")
    query = ModalityInstance(modality=rec["modality"], units=tuple(rec["units"]))

    other = 2 if query.modality == 1 else 1
    candidates = []
    with open(args.candidates, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            r = json.loads(line)
            if r.get("modality") == other:
                candidates.append(ModalityInstance(modality=other, units=tuple(r["units"])))
    ranked = retrieve(model, query, candidates, args.k)
    _emit(
        {
            "k": args.k,
            "num_candidates": len(candidates),
            "ordering": [int(i) for i in ranked.ordering],
            "scores": [float(s) for s in ranked.scores],
        }
    )
    return 0


def _cmd_check_grads(args) -> int:
    results = gradient_check_suite(args.seed, num_seeds=args.num_seeds)
    max_err = max(results.values())
    ok = max_err <= GRAD_TOLERANCE
    _emit(
        {
            "seed": args.seed,
            "paths": results,
            "max_relative_error": max_err,
            "tolerance": GRAD_TOLERANCE,
            "pass": ok,
        }
    )
    return 0 if ok else 2


def build_parser() -> _Parser:
    parser = _Parser(prog="comodal", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a world and its datasets")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="train the joint model")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("eval", help="run an evaluation task")
    p.add_argument("--task", required=True, choices=["fusion", "retrieval", "colearn"])
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("retrieve", help="rank candidates for one query")
    p.add_argument("--model", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--k", type=int, required=True)

    p = sub.add_parser("check-grads", help="run the finite-difference suite")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--num-seeds", type=int, default=20)
    return parser


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "retrieve": _cmd_retrieve,
    "check-grads": _cmd_check_grads,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except ComodalError as exc:
        _log(f"error: {exc}")
        return 2
    except FileNotFoundError as exc:
        _log(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
