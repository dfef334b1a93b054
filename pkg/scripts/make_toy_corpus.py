"""Write the synthetic two-domain corpus as parallel text files plus a run config.

Paths in the config are relative to the config file.

    python scripts/make_toy_corpus.py OUT_DIR [--seed N] [--n-test N]
"""

import argparse
import json
from pathlib import Path

from chunkstore.synth import two_domain_corpus


def write(path: Path, vocab, seqs) -> None:
    path.write_text("".join(" ".join(vocab.decode(s)) + "\n" for s in seqs), encoding="utf-8")


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("out", type=Path)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-out", type=int, default=3000)
    ap.add_argument("--n-in-train", type=int, default=3000)
    ap.add_argument("--n-test", type=int, default=500)
    args = ap.parse_args()

    corpus = two_domain_corpus(seed=args.seed, n_out=args.n_out, n_in_train=args.n_in_train,
                               n_in_test=args.n_test)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    splits = {"train": corpus.out_domain, "indomain": corpus.in_train, "test": corpus.in_test}
    for name, pairs in splits.items():
        write(out / f"{name}.src", corpus.vocab, [p.source for p in pairs])
        write(out / f"{name}.tgt", corpus.vocab, [p.target for p in pairs])

    config = {
        "seed": args.seed,
        "paths": {
            "vocab": "vocab.txt", "model": "model.bin",
            "datastore": "datastore.bin",
            "train_src": "train.src", "train_tgt": "train.tgt",
            "ds_src": "indomain.src", "ds_tgt": "indomain.tgt",
            "input": "test.src", "reference": "test.tgt",
        },
        "datastore": {"chunk_size": 16},
        "decode": {"lambda": 0.7, "temp": 10, "lambda_cache": 0.6, "temp_cache": 1},
    }
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out}/config.json")


if __name__ == "__main__":
    main()
