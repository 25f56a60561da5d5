"""Regenerate the bundled synthetic interaction files under data/."""

import argparse
from pathlib import Path

from lerg.graph import planted_community_dataset, save_interactions

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=ROOT / "data", type=Path)
    args = ap.parse_args()
    args.out.mkdir(exist_ok=True)
    desk = planted_community_dataset(800, 1200, 10, 25.0, 0.85, seed=0)
    save_interactions(desk, args.out / "planted_communities.tsv")
    sample = planted_community_dataset(60, 90, 4, 8.0, 0.85, seed=1)
    save_interactions(sample, args.out / "sample_500.tsv")
    for name, ds in [("planted_communities", desk), ("sample_500", sample)]:
        print(f"{name}: {ds.num_users} users, {ds.num_items} items, {len(ds)} interactions")


if __name__ == "__main__":
    main()
