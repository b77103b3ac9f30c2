"""stdio request loop speaking the engine's line protocol, version 1.

One JSON object per line. The oracle owns the corpus: eval requests carry
(seed, tokens) and the batch is derived here. Malformed input of any shape is
answered with an error line; the loop never crashes on bad requests and exits
only on "bye" or end of input.
"""

from __future__ import annotations

import argparse
import json
import sys

from .model import ToyModel

PROTOCOL_VERSION = 1
MAX_TOKENS = 1 << 22  # refuse absurd batch sizes instead of dying on them


def _emit(stdout, obj: dict) -> None:
    stdout.write(json.dumps(obj, separators=(",", ":")) + "\n")
    stdout.flush()


def _error(stdout, message: str, request_id=None) -> None:
    doc = {"type": "error", "message": message}
    if request_id is not None:
        doc["id"] = request_id
    _emit(stdout, doc)


def _plain_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _handle_eval(model: ToyModel, msg: dict, stdout) -> None:
    rid = msg.get("id")
    if not _plain_int(rid):
        _error(stdout, f"eval without a usable integer id: {rid!r}")
        return
    levels = msg.get("levels")
    if (
        not isinstance(levels, list)
        or len(levels) != model.n_units
        or not all(_plain_int(l) and 0 <= l < model.levels for l in levels)
    ):
        _error(
            stdout,
            f"levels must be {model.n_units} integers in 0..{model.levels - 1}",
            rid,
        )
        return
    seed = msg.get("seed")
    if not _plain_int(seed) or seed < 0:
        _error(stdout, f"seed must be a non-negative integer, got {seed!r}", rid)
        return
    tokens = msg.get("tokens")
    if not _plain_int(tokens) or not 1 <= tokens <= MAX_TOKENS:
        _error(stdout, f"tokens must be an integer in 1..{MAX_TOKENS}, got {tokens!r}", rid)
        return
    try:
        fitness = model.kl_fitness(tuple(levels), seed, tokens)
    except Exception as e:  # guarantee: bad requests never kill the process
        _error(stdout, f"evaluation failed: {e}", rid)
        return
    _emit(stdout, {"type": "result", "id": rid, "fitness": fitness, "tokens_used": tokens})


def serve(model: ToyModel, stdin=None, stdout=None) -> None:
    stdin = sys.stdin if stdin is None else stdin
    stdout = sys.stdout if stdout is None else stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            _error(stdout, f"invalid JSON: {line[:120]!r}")
            continue
        if not isinstance(msg, dict):
            _error(stdout, "requests must be JSON objects")
            continue
        kind = msg.get("type")
        if kind == "hello":
            _emit(
                stdout,
                {
                    "type": "info",
                    "version": PROTOCOL_VERSION,
                    "n_units": model.n_units,
                    "levels_per_unit": [model.levels] * model.n_units,
                },
            )
        elif kind == "eval":
            _handle_eval(model, msg, stdout)
        elif kind == "bye":
            return
        else:
            _error(stdout, f"unknown request type {kind!r}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pyoracle", description="toy-model KL fitness oracle on stdin/stdout"
    )
    parser.add_argument("--seed", type=int, default=0, help="model weight seed")
    parser.add_argument("--blocks", type=int, default=8, help="residual blocks (2 units each)")
    parser.add_argument("--dim", type=int, default=32, help="embedding dimension")
    parser.add_argument(
        "--levels", type=int, default=2,
        help="levels per unit: 0 dense .. last fully pruned (dropped)",
    )
    args = parser.parse_args(argv)
    serve(ToyModel(seed=args.seed, blocks=args.blocks, dim=args.dim, levels=args.levels))
    return 0


if __name__ == "__main__":
    sys.exit(main())
