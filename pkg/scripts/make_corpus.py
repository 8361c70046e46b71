"""Write a synthetic-shape corpus (images, object-mask ground truth, fixations).

    python scripts/make_corpus.py data/shapes --count 20 --size 64
"""

import argparse
from pathlib import Path

import numpy as np

from saldefense.image import save_image, save_map
from saldefense.synthetic import make_shapes


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("root", type=Path)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=123)
    p.add_argument("--fixations", type=int, default=5, help="fixations sampled inside each object")
    args = p.parse_args(argv)

    data = make_shapes(args.count, seed=args.seed, size=args.size)
    rng = np.random.default_rng(args.seed + 1)
    for sub in ("images", "gt", "fix"):
        (args.root / sub).mkdir(parents=True, exist_ok=True)
    maps = data.saliency_maps()
    for i in range(len(data)):
        name = f"shape{i:03d}.png"
        save_image(data.images[i], args.root / "images" / name)
        save_map(maps[i], args.root / "gt" / name)
        rows, cols = np.nonzero(data.masks[i])
        pick = rng.choice(len(rows), size=min(args.fixations, len(rows)), replace=False)
        fix = np.zeros(maps[i].shape, dtype=np.uint8)
        fix[rows[pick], cols[pick]] = 255
        save_map(fix, args.root / "fix" / name)
    print(f"wrote {len(data)} images to {args.root}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
