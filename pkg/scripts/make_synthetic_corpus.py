#!/usr/bin/env python3
"""Emit the planted-bias synthetic corpus as pipeline-ready JSONL files.

Writes records.jsonl (entity/abstract/concepts/topic), gold_existing.jsonl and
gold_new.jsonl (oracle labels for scoring) into the output directory, so the
full CLI walkthrough in the README can run against them.
"""

import argparse
from pathlib import Path

from conceptex.corpus import serialize
from conceptex.io_utils import write_jsonl
from conceptex.synth import make_bias_corpus


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("runs/synthetic"))
    parser.add_argument("--n-records", type=int, default=200)
    parser.add_argument("--seed", type=int, default=4)
    parser.add_argument("--bias-fraction", type=float, default=0.3)
    args = parser.parse_args()

    corpus = make_bias_corpus(args.n_records, seed=args.seed, bias_fraction=args.bias_fraction)
    args.out.mkdir(parents=True, exist_ok=True)
    serialize(corpus.records, args.out / "records.jsonl")
    write_jsonl(args.out / "gold_existing.jsonl",
                ({"entity": e, "concepts": sorted(c)} for e, c in corpus.gold_existing.items()))
    write_jsonl(args.out / "gold_new.jsonl",
                ({"entity": e, "concepts": sorted(c)} for e, c in corpus.gold_new.items()))
    print(f"{len(corpus.records)} records -> {args.out}/records.jsonl "
          f"({len(corpus.biased_entities)} with a planted lure)")


if __name__ == "__main__":
    main()
