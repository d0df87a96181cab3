"""Cluster users by their mean attention pattern and check the clusters
against planted behaviour archetypes.

    python3 scripts/attention_clusters.py --archetypes 4 --set-size 20
"""
import argparse

import numpy as np

from mmrec.analysis import block_diagonal_score, cluster_agreement, elbow_curve, elbow_from_wcss, extract_profiles, heatmap, kmeans
from mmrec.auxiliary import FusionConfig, feature_matrices
from mmrec.model import ModelConfig, SeqRecModel, train
from mmrec.numerics import derive_seed, make_rng
from mmrec.synth import SynthConfig, synth_generate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--archetypes", type=int, default=4)
    ap.add_argument("--users", type=int, default=300)
    ap.add_argument("--set-size", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()

    # archetypes differ in history length: 4-5, 9-10, 14-15, 19-20 items
    data = synth_generate(SynthConfig(n_users=args.users, n_items=200, n_categories=20, n_archetypes=args.archetypes,
                                      min_len=4, max_len=23, band_width=2, strength=0.9, noise=0.5, seed=args.seed))
    split = data.split()
    fusion = FusionConfig("concat", ("text", "image"), 32)
    cfg = ModelConfig(n_layers=2, d=32, max_len=24, dropout=0.2, learning_rate=3e-3, epochs=args.epochs, batch_size=64, seed=args.seed)
    model = SeqRecModel(cfg, split.catalog.n_items, fusion, {m: data.tables[m].dim for m in fusion.modalities})
    aux = feature_matrices(data.tables, split.catalog, fusion.modalities)
    train(model, split, aux)

    users = sorted(split.test)
    profiles = extract_profiles(model, [split.history(u, "test") for u in users], aux)
    truth = np.array([data.labels[split.catalog.user_name(u)] for u in users])
    rng = make_rng(derive_seed(args.seed, "analyze"))
    ks = list(range(2, 9))
    wcss = elbow_curve(profiles, ks, rng, n_init=10)
    k = elbow_from_wcss(ks, wcss)
    print("k\twcss")
    for kk, w in zip(ks, wcss):
        print(f"{kk}\t{w:.4f}" + ("\t<- elbow" if kk == k else ""))

    fit = kmeans(profiles, k, rng, n_init=10)
    print(f"\nagreement with planted archetypes: {cluster_agreement(fit.assignments, truth):.3f}")
    print("cluster sizes:", np.bincount(fit.assignments, minlength=k).tolist())
    hm = heatmap(profiles, fit.assignments, args.set_size, rng)
    print()
    print(hm.to_tsv(), end="")
    print(f"block-diagonal score: {block_diagonal_score(hm.matrix):.3f}")


if __name__ == "__main__":
    main()
