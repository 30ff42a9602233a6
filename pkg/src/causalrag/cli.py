"""Command-line surface: ingest, index, train, ask, eval.

Every knob lives in a flat key=value config file and can be overridden by a
flag of the same name. Exit codes: 0 success, 1 input error, 2 collaborator
failure (LLM provider, encoder service).
"""

from __future__ import annotations

import argparse
import json
import sys

from .agent import (
    BanditEnvironment,
    PolicyNetwork,
    PolicySnapshot,
    PpoConfig,
    train,
)
from .embedding import (
    DIMENSION,
    HashingEncoder,
    HttpEncoder,
    build_index,
    load_index,
    load_passages,
    save_index,
)
from .errors import CausalRagError, LlmFailure, RemoteEncoderFailure
from .graph import load_triples, save_triples
from .llm import client_from_env
from .metrics import load_gold, run_eval
from .pipeline import (
    Pipeline,
    PipelineConfig,
    RetrievalSurrogateEnvironment,
    StageFlags,
)

CONFIG_KEYS = {
    "k": int,
    "max_hops": int,
    "max_paths": int,
    "alignment_threshold": float,
    "max_seeds": int,
    "causal_threshold": float,
    "hallucination_threshold": float,
    "support_threshold": float,
    "max_iterations": int,
}


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on bad input, per the CLI contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def load_config_file(path: str) -> dict:
    """Parse a flat key=value config file; # starts a comment."""
    values: dict = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = CONFIG_KEYS[key](value)
    return values


def _build_parser() -> _Parser:
    parser = _Parser(prog="causalrag",
                     description="Causally grounded retrieval-augmented generation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="triples JSONL -> graph file")
    p_ingest.add_argument("--triples", required=True)
    p_ingest.add_argument("--out", required=True)
    p_ingest.add_argument("--verified-only", action="store_true")

    p_index = sub.add_parser("index", help="passages JSONL -> embedding index file")
    p_index.add_argument("--passages", required=True)
    p_index.add_argument("--out", required=True)
    p_index.add_argument("--encoder-url", default="",
                         help="HTTP encoder endpoint; default is the hashing encoder")

    p_train = sub.add_parser("train", help="train the refinement policy")
    p_train.add_argument("--env", choices=["bandit", "surrogate"], default="bandit")
    p_train.add_argument("--rewards", default="0.3,0.3,0.9",
                         help="bandit: expected reward per action (expand,simplify,decompose)")
    p_train.add_argument("--queries", help="surrogate: text file, one query per line")
    p_train.add_argument("--graph", help="surrogate: graph triples file")
    p_train.add_argument("--passages", help="surrogate: passages file")
    p_train.add_argument("--epochs", type=int, default=50)
    p_train.add_argument("--steps-per-query", type=int, default=500)
    p_train.add_argument("--batch-size", type=int, default=64)
    p_train.add_argument("--learning-rate", type=float, default=3e-4)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--out", required=True)

    for name, helptext in (("ask", "answer a single query"),
                           ("eval", "evaluate a gold file under stage flags")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--graph", help="graph triples file")
        p.add_argument("--passages", help="passages JSONL file")
        p.add_argument("--index", help="persisted index file (else embed on the fly)")
        p.add_argument("--policy", help="policy snapshot JSON")
        p.add_argument("--cassette", help="cassette file for replay/record modes")
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--stages", default="full",
                       help="preset: baseline|refine|graph|rewrite|full")
        p.add_argument("--encoder-url", default="")
        for key, caster in CONFIG_KEYS.items():
            p.add_argument(f"--{key.replace('_', '-')}", type=caster, default=None)
        if name == "ask":
            p.add_argument("--trace", help="write the full pipeline state as JSON here")
            p.add_argument("query")
        else:
            p.add_argument("--gold", required=True)
            p.add_argument("--out-prefix", default="report",
                           help="writes <prefix>.json and <prefix>.txt")
    return parser


def _make_encoder(url: str):
    if url:
        return HttpEncoder(url, dimension=DIMENSION)
    return HashingEncoder(DIMENSION)


def _make_pipeline(args) -> Pipeline:
    overrides = {}
    if args.config:
        overrides.update(load_config_file(args.config))
    for key in CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    config = PipelineConfig(**overrides, stages=StageFlags.from_name(args.stages))

    encoder = _make_encoder(args.encoder_url)
    graph = None
    if args.graph:
        graph = load_triples(args.graph)
        graph.attach_embeddings(encoder)
    index = None
    if args.passages:
        records = load_passages(args.passages)
        if args.index:
            index = load_index(args.index, records)
        else:
            index = build_index(records, encoder)
    policy = PolicySnapshot.load(args.policy).to_policy() if args.policy else None
    client = client_from_env(cassette_path=args.cassette)
    return Pipeline(graph=graph, index=index, encoder=encoder, client=client,
                    policy=policy, config=config)


def cli(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        if args.command == "ingest":
            graph = load_triples(args.triples, verified_only=args.verified_only)
            save_triples(graph, args.out)
            print(f"ingested {len(graph)} edges over {len(graph.nodes)} nodes "
                  f"-> {args.out}")
            return 0

        if args.command == "index":
            encoder = _make_encoder(args.encoder_url)
            index = build_index(load_passages(args.passages), encoder)
            save_index(index, args.out)
            print(f"indexed {len(index)} passages (dimension {index.dimension}) "
                  f"-> {args.out}")
            return 0

        if args.command == "train":
            ppo = PpoConfig(epochs=args.epochs, steps_per_query=args.steps_per_query,
                            batch_size=args.batch_size,
                            learning_rate=args.learning_rate, seed=args.seed)
            if args.env == "bandit":
                rewards = tuple(float(r) for r in args.rewards.split(","))
                if len(rewards) != 3:
                    print("--rewards needs three comma-separated values",
                          file=sys.stderr)
                    return 1
                env = BanditEnvironment(rewards=rewards, seed=args.seed)
            else:
                if not args.queries:
                    print("surrogate env needs --queries", file=sys.stderr)
                    return 1
                with open(args.queries, encoding="utf-8") as handle:
                    queries = [line.strip() for line in handle if line.strip()]
                encoder = HashingEncoder(DIMENSION)
                graph = load_triples(args.graph) if args.graph else None
                if graph is not None:
                    graph.attach_embeddings(encoder)
                index = (build_index(load_passages(args.passages), encoder)
                         if args.passages else None)
                env = RetrievalSurrogateEnvironment(
                    queries, graph=graph, index=index, encoder=encoder,
                    seed=args.seed)
            policy = PolicyNetwork(seed=args.seed)
            snapshot = train(policy, env, ppo)
            snapshot.save(args.out)
            print(f"trained {args.epochs} epochs; "
                  f"mean reward {snapshot.epoch_rewards[0]:.4f} -> "
                  f"{snapshot.epoch_rewards[-1]:.4f}; saved {args.out}")
            return 0

        if args.command == "ask":
            pipeline = _make_pipeline(args)
            answer, state = pipeline.run(args.query)
            print(answer)
            if args.trace:
                with open(args.trace, "w", encoding="utf-8") as handle:
                    json.dump(state.to_dict(), handle, sort_keys=True, indent=2)
                    handle.write("\n")
            return 0

        if args.command == "eval":
            pipeline = _make_pipeline(args)
            gold = load_gold(args.gold)
            report = run_eval(pipeline, gold, stages=pipeline.config.stages,
                              stage_label=args.stages)
            report.save(args.out_prefix)
            print(report.to_table())
            return 0

        raise AssertionError(f"unhandled command {args.command!r}")

    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except (LlmFailure, RemoteEncoderFailure) as exc:
        print(f"collaborator failure: {exc}", file=sys.stderr)
        return 2
    except CausalRagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(cli())


if __name__ == "__main__":
    main()
