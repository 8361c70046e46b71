"""Experiment runner: original, attacked and cleaned conditions over a corpus.

A run evaluates every image under

* ``Original``
* each attack (``FGSM``, ``DeepFool``)
* each (attack, defense) pair, e.g. ``FGSM + SAD (50 70 90)``

and writes ``per_image.csv``, ``aggregate.csv`` and ``manifest.yaml`` to the
output directory. The config file schema is documented in the README.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import platform
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .attacks import AttackConfig, TinyClassifier, attack_image, train_tiny
from .defenses import DefenseConfig, clean
from .image import load_fixations, load_image, load_map, save_image
from .metrics import COLUMNS, MetricReport, evaluate
from .saliency import SaliencySource, get_saliency
from .synthetic import make_shapes

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm")


class HarnessError(RuntimeError):
    pass


def slug(label: str) -> str:
    """Filesystem-friendly form of a condition label."""
    return re.sub(r"[^a-z0-9]+", "_", label.lower()).strip("_")


def fmt(value: Optional[float]) -> str:
    """10 significant digits; missing values are empty."""
    return "" if value is None else f"{value:.10g}"


@dataclass
class ModelSpec:
    weights: Optional[Path] = None
    samples: int = 600
    epochs: int = 20
    seed: int = 0
    input_size: int = 32


@dataclass
class ExperimentConfig:
    corpus_dir: Path
    gt_map_template: str
    output_dir: Path
    fixation_template: Optional[str] = None
    image_ids: Optional[list[str]] = None
    saliency_source: SaliencySource = field(
        default_factory=lambda: SaliencySource("spectral_residual")
    )
    eval_map_source: SaliencySource = field(
        default_factory=lambda: SaliencySource("spectral_residual")
    )
    attacks: list[AttackConfig] = field(default_factory=list)
    defenses: list[DefenseConfig] = field(default_factory=list)
    model: ModelSpec = field(default_factory=ModelSpec)
    seed: int = 0
    emd_downsample: int = 32
    save_images: bool = False
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> "ExperimentConfig":
        base = Path(base_dir)
        data = dict(data)
        raw = dict(data)
        known = {
            "corpus_dir", "gt_map_template", "output_dir", "fixation_template", "image_ids",
            "saliency_source", "eval_map_source", "attacks", "defenses", "model", "seed",
            "emd_downsample", "save_images",
        }
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key in ("corpus_dir", "gt_map_template", "output_dir"):
            if key not in data:
                raise ValueError(f"config is missing {key!r}")

        def path(p):
            return base / p

        def template(t):
            return None if t is None else str(base / t)

        def source(d):
            d = dict(d or {"kind": "spectral_residual"})
            if d.get("path_template"):
                d["path_template"] = template(d["path_template"])
            return SaliencySource(**d)

        model = dict(data.get("model") or {})
        if model.get("weights"):
            model["weights"] = path(model["weights"])

        return cls(
            corpus_dir=path(data["corpus_dir"]),
            gt_map_template=template(data["gt_map_template"]),
            output_dir=path(data["output_dir"]),
            fixation_template=template(data.get("fixation_template")),
            image_ids=[str(i) for i in data["image_ids"]] if data.get("image_ids") else None,
            saliency_source=source(data.get("saliency_source")),
            eval_map_source=source(data.get("eval_map_source")),
            attacks=[AttackConfig(**a) for a in data.get("attacks") or []],
            defenses=[defense_from_dict(d) for d in data.get("defenses") or []],
            model=ModelSpec(**model),
            seed=int(data.get("seed", 0)),
            emd_downsample=int(data.get("emd_downsample", 32)),
            save_images=bool(data.get("save_images", False)),
            raw=raw,
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        with open(path) as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: config must be a mapping")
        return cls.from_dict(data, base_dir=path.parent)

    def conditions(self) -> list[str]:
        labels = ["Original"] + [a.label for a in self.attacks]
        for a in self.attacks:
            labels += [f"{a.label} + {d.label}" for d in self.defenses]
        dupes = sorted({x for x in labels if labels.count(x) > 1})
        if dupes:
            raise ValueError(f"duplicate condition labels: {dupes}")
        return labels


def defense_from_dict(d: dict) -> DefenseConfig:
    d = dict(d)
    if "qualities" in d:
        qualities = tuple(d.pop("qualities"))
        key = "sad_qualities" if d.get("method") == "sad" else "shield_qualities"
        d[key] = qualities
    for key in ("sad_qualities", "shield_qualities"):
        if key in d:
            d[key] = tuple(d[key])
    return DefenseConfig(**d)


def corpus_ids(cfg: ExperimentConfig) -> list[str]:
    if cfg.image_ids:
        return list(cfg.image_ids)
    if not cfg.corpus_dir.is_dir():
        raise HarnessError(f"corpus directory not found: {cfg.corpus_dir}")
    return sorted(p.stem for p in cfg.corpus_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _image_path(cfg: ExperimentConfig, image_id: str) -> Path:
    for suffix in IMAGE_SUFFIXES:
        p = cfg.corpus_dir / f"{image_id}{suffix}"
        if p.exists():
            return p
    raise HarnessError(f"no image file for id {image_id!r} in {cfg.corpus_dir}")


def _check_templates(cfg: ExperimentConfig, ids: Sequence[str]) -> None:
    for image_id in ids:
        _image_path(cfg, image_id)
        gt = Path(cfg.gt_map_template.format(id=image_id))
        if not gt.exists():
            raise HarnessError(f"ground-truth map missing for {image_id!r}: {gt}")
        if cfg.fixation_template:
            fx = Path(cfg.fixation_template.format(id=image_id))
            if not fx.exists():
                raise HarnessError(f"fixation map missing for {image_id!r}: {fx}")


def build_model(spec: ModelSpec) -> TinyClassifier:
    if spec.weights is not None:
        return TinyClassifier.load(spec.weights)
    data = make_shapes(spec.samples, seed=spec.seed, size=spec.input_size)
    init = TinyClassifier.initialize(3, spec.input_size, seed=spec.seed)
    model, _ = train_tiny(init, data.images, data.labels, epochs=spec.epochs, seed=spec.seed)
    return model


def image_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def condition_images(cfg: ExperimentConfig, model, img, image_id: str, index: int):
    """Yield ``(label, uint8 image)`` for every condition of one corpus image."""
    yield "Original", img
    for attack in cfg.attacks:
        adv = attack_image(model, img, attack)
        yield attack.label, adv
        for defense in cfg.defenses:
            sal = None
            if defense.method == "sad":
                sal = get_saliency(adv, cfg.saliency_source, image_id, condition=slug(attack.label))
            if defense.method == "shield":
                defense = replace(defense, rng_seed=image_seed(cfg.seed, index))
            yield f"{attack.label} + {defense.label}", clean(adv, defense, sal).image


@dataclass
class RunResult:
    per_image: list[dict]
    aggregate: list[dict]
    files: dict[str, Path]


def aggregate_rows(per_image: list[dict], labels: Sequence[str]) -> list[dict]:
    """Arithmetic mean of each metric per condition, in ``labels`` order."""
    out = []
    for label in labels:
        rows = [r for r in per_image if r["condition"] == label]
        agg = {"condition": label}
        for col in COLUMNS:
            vals = [r[col] for r in rows]
            agg[col] = None if not vals or any(v is None for v in vals) else math.fsum(vals) / len(vals)
        out.append(agg)
    return out


def _csv_text(rows: list[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([r[c] if isinstance(r[c], str) else fmt(r[c]) for c in columns])
    return buf.getvalue()


def _versions() -> dict:
    import PIL
    import scipy

    try:
        from importlib.metadata import version

        pot = version("pot")
    except Exception:
        pot = "unknown"
    return {
        "saldefense": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pillow": PIL.__version__,
        "pot": pot,
    }


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    ids = corpus_ids(cfg)
    if not ids:
        raise HarnessError("corpus is empty")
    _check_templates(cfg, ids)
    model = build_model(cfg.model) if cfg.attacks else None
    labels = cfg.conditions()

    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    per_image: list[dict] = []
    for index, image_id in enumerate(ids):
        img = load_image(_image_path(cfg, image_id))
        gt = load_map(cfg.gt_map_template.format(id=image_id))
        fix = load_fixations(cfg.fixation_template.format(id=image_id)) if cfg.fixation_template else None
        for label, cond_img in condition_images(cfg, model, img, image_id, index):
            try:
                if cfg.save_images:
                    img_dir = out / "images" / slug(label)
                    img_dir.mkdir(parents=True, exist_ok=True)
                    save_image(cond_img, img_dir / f"{image_id}.png")
                pred = get_saliency(cond_img, cfg.eval_map_source, image_id, condition=slug(label))
                report: MetricReport = evaluate(pred, gt, fix, cfg.emd_downsample)
            except Exception as exc:
                raise HarnessError(f"image {image_id!r}, condition {label!r}: {exc}") from exc
            per_image.append({"image_id": image_id, "condition": label, **report.as_row()})

    aggregate = aggregate_rows(per_image, labels)
    files = {
        "per_image": out / "per_image.csv",
        "aggregate": out / "aggregate.csv",
        "manifest": out / "manifest.yaml",
    }
    per_text = _csv_text(per_image, ("image_id", "condition") + COLUMNS)
    agg_text = _csv_text(aggregate, ("condition",) + COLUMNS)
    files["per_image"].write_text(per_text)
    files["aggregate"].write_text(agg_text)

    manifest = {
        "config": cfg.raw,
        "image_ids": ids,
        "conditions": labels,
        "seed": cfg.seed,
        "emd_downsample": cfg.emd_downsample,
        "model": _model_record(cfg.model) if cfg.attacks else None,
        "versions": _versions(),
        "outputs": {
            "per_image.csv": hashlib.sha256(per_text.encode()).hexdigest(),
            "aggregate.csv": hashlib.sha256(agg_text.encode()).hexdigest(),
        },
    }
    files["manifest"].write_text(yaml.safe_dump(manifest, sort_keys=False))
    return RunResult(per_image=per_image, aggregate=aggregate, files=files)


def _model_record(spec: ModelSpec) -> dict:
    if spec.weights is not None:
        digest = hashlib.sha256(Path(spec.weights).read_bytes()).hexdigest()
        return {"weights": str(spec.weights), "sha256": digest}
    return {
        "trained": {
            "samples": spec.samples,
            "epochs": spec.epochs,
            "seed": spec.seed,
            "input_size": spec.input_size,
        }
    }


def read_table(path) -> list[dict]:
    """Read an aggregate CSV written by :func:`run_experiment`."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        {"condition": r["condition"], **{c: (float(r[c]) if r.get(c) else None) for c in COLUMNS}}
        for r in rows
    ]


def write_table(rows: list[dict], path) -> None:
    Path(path).write_text(_csv_text(rows, ("condition",) + COLUMNS))


def min_max_normalize(rows: list[dict]) -> list[dict]:
    """Map every metric column independently onto [0, 1].

    Constant columns map to 0; columns with missing values stay missing.
    """
    if len(rows) < 2:
        raise ValueError("min-max normalization needs at least two rows")
    out = [{"condition": r["condition"]} for r in rows]
    for col in COLUMNS:
        vals = [r.get(col) for r in rows]
        if any(v is None for v in vals):
            for o in out:
                o[col] = None
            continue
        lo, hi = min(vals), max(vals)
        for o, v in zip(out, vals):
            o[col] = 0.0 if hi == lo else (v - lo) / (hi - lo)
    return out
