"""Synthetic triple dataset with a planted translation structure.

Entities and relations get latent vectors; for every (head, relation) pair
the nearest few entities under ||z_h + o_r - z_t|| become true tails, plus
a small fraction of uniformly corrupted noise edges. The result is a
learnable ~5k-triple knowledge graph: a moderate embedding width can fit
it well and small widths can still capture much of the structure, which is
what the croppable-training comparisons need.

The bundled copy under cropkge/data/synth was produced by exactly this
generator with its default arguments.
"""
from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np


def generate(
    out_dir: str | Path,
    num_entities: int = 200,
    num_relations: int = 6,
    latent_dim: int = 12,
    per_pair: int = 4,
    noise_frac: float = 0.02,
    valid_frac: float = 0.1,
    test_frac: float = 0.1,
    seed: int = 7,
) -> dict:
    """Write train/valid/test TSVs; returns the split sizes."""
    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, 1.0, size=(num_entities, latent_dim)) / np.sqrt(latent_dim)
    o = rng.normal(0.0, 1.0, size=(num_relations, latent_dim)) / np.sqrt(latent_dim)

    triples = []
    for r in range(num_relations):
        for h in range(num_entities):
            dist = np.linalg.norm(z[h] + o[r] - z, axis=1)
            dist[h] = np.inf
            tails = np.argpartition(dist, per_pair)[:per_pair]
            for t in sorted(int(x) for x in tails):
                triples.append((h, r, t))

    n_noise = int(noise_frac * len(triples))
    victims = rng.choice(len(triples), size=n_noise, replace=False)
    for idx in victims:
        h, r, _ = triples[idx]
        t = int(rng.integers(0, num_entities - 1))
        t += t >= h
        triples[idx] = (h, r, t)

    triples = list(dict.fromkeys(triples))
    order = rng.permutation(len(triples))
    triples = [triples[i] for i in order]

    n_valid = int(valid_frac * len(triples))
    n_test = int(test_frac * len(triples))
    valid = triples[:n_valid]
    test = triples[n_valid : n_valid + n_test]
    train = triples[n_valid + n_test :]

    # every entity and relation must occur in train: pull holdout triples in
    def present(split):
        ents = {h for h, _, _ in split} | {t for _, _, t in split}
        rels = {r for _, r, _ in split}
        return ents, rels

    train_ents, train_rels = present(train)
    for pool in (valid, test):
        for trip in list(pool):
            h, r, t = trip
            if h not in train_ents or t not in train_ents or r not in train_rels:
                pool.remove(trip)
                train.append(trip)
                train_ents.update((h, t))
                train_rels.add(r)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, split in (("train", train), ("valid", valid), ("test", test)):
        with open(out_dir / f"{name}.txt", "w", encoding="utf-8") as fh:
            for h, r, t in split:
                fh.write(f"e{h:03d}\tr{r}\te{t:03d}\n")
    return {"train": len(train), "valid": len(valid), "test": len(test)}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="generate the synthetic triple dataset")
    parser.add_argument("out_dir")
    parser.add_argument("--entities", type=int, default=200)
    parser.add_argument("--relations", type=int, default=6)
    parser.add_argument("--latent-dim", type=int, default=12)
    parser.add_argument("--per-pair", type=int, default=4)
    parser.add_argument("--noise-frac", type=float, default=0.02)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)
    sizes = generate(
        args.out_dir,
        num_entities=args.entities,
        num_relations=args.relations,
        latent_dim=args.latent_dim,
        per_pair=args.per_pair,
        noise_frac=args.noise_frac,
        seed=args.seed,
    )
    print(f"wrote {sizes['train']} train / {sizes['valid']} valid / {sizes['test']} test triples")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
