"""Attack synthetic shapes with FGSM, clean them, and compare defenses.

For every defense this reports PSNR against the clean original on salient
windows (object windows) and on pure background windows, the background
perturbation energy left after cleaning, and classifier accuracy.

    python scripts/desk_pipeline.py --count 50 --epsilon 0.0314
"""

import argparse
import math
import time

import numpy as np

from saldefense.attacks import AttackConfig, TinyClassifier, attack_image, to_unit, train_tiny
from saldefense.defenses import DefenseConfig, clean
from saldefense.image import window_average_saliency
from saldefense.synthetic import make_shapes

DEFENSES = {
    "Bit-depth (3)": DefenseConfig("bitdepth", bits=3),
    "JPEG20": DefenseConfig("jpeg", quality=20),
    "JPEG80": DefenseConfig("jpeg", quality=80),
    "SHIELD": DefenseConfig("shield"),
    "SAD (20 90)": DefenseConfig("sad", sad_qualities=(20, 90)),
    "SAD (20 50 70 70 80 90)": DefenseConfig("sad"),
    "SAD (50 70 90)": DefenseConfig("sad", sad_qualities=(50, 70, 90)),
}


def psnr(sq_err: float, count: int) -> float:
    if count == 0:
        return float("nan")
    mse = sq_err / count
    return float("inf") if mse == 0 else 10 * math.log10(255**2 / mse)


def window_mask(grid_mask: np.ndarray, shape) -> np.ndarray:
    return np.kron(grid_mask, np.ones((8, 8), dtype=bool)).astype(bool)[: shape[0], : shape[1]]


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--epsilon", type=float, default=8 / 255)
    p.add_argument("--train-samples", type=int, default=600)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-seed", type=int, default=7)
    args = p.parse_args(argv)

    t0 = time.perf_counter()
    train = make_shapes(args.train_samples, seed=args.seed)
    model, hist = train_tiny(
        TinyClassifier.initialize(3, 32, seed=args.seed), train.images, train.labels,
        epochs=args.epochs, seed=args.seed,
    )
    print(f"trained in {time.perf_counter() - t0:.1f}s, train accuracy {hist.train_accuracy:.3f}")

    test = make_shapes(args.count, seed=args.test_seed)
    attack = AttackConfig("fgsm", epsilon=args.epsilon)
    advs = [attack_image(model, img, attack, true_class=int(y)) for img, y in zip(test.images, test.labels)]
    sal_maps = test.saliency_maps()
    salient = [window_mask(window_average_saliency(s) >= 128, s.shape) for s in sal_maps]
    background = [window_mask(window_average_saliency(s) == 0, s.shape) for s in sal_maps]

    def score(images):
        s_err = b_err = 0.0
        s_n = b_n = 0
        correct = 0
        for img, ref, y, sm, bm in zip(images, test.images, test.labels, salient, background):
            d = img.astype(float) - ref
            s_err += float((d[sm] ** 2).sum())
            b_err += float((d[bm] ** 2).sum())
            s_n += int(sm.sum()) * 3
            b_n += int(bm.sum()) * 3
            correct += model.predict(to_unit(img)) == y
        return psnr(s_err, s_n), psnr(b_err, b_n), b_err / max(len(images), 1), correct / len(images)

    rows = [("Original", score(test.images)), ("FGSM", score(advs))]
    for name, cfg in DEFENSES.items():
        cleaned = [
            clean(adv, cfg, sal if cfg.method == "sad" else None).image for adv, sal in zip(advs, sal_maps)
        ]
        rows.append((f"FGSM + {name}", score(cleaned)))

    print(f"{'condition':32s} {'salient dB':>10s} {'bg dB':>8s} {'bg energy':>10s} {'acc':>6s}")
    for name, (s_db, b_db, energy, acc) in rows:
        print(f"{name:32s} {s_db:10.2f} {b_db:8.2f} {energy:10.0f} {acc:6.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
