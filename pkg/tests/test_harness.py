import csv
import math

import pytest
import yaml

from corpus import write_config, write_corpus
from saldefense.harness import (
    ExperimentConfig,
    HarnessError,
    aggregate_rows,
    image_seed,
    min_max_normalize,
    read_table,
    run_experiment,
    slug,
    write_table,
)
from saldefense.metrics import COLUMNS

PROTOCOL_LABELS = [
    "Original",
    "FGSM",
    "DeepFool",
    "FGSM + Bit-depth Reduction",
    "FGSM + JPEG80 Compression",
    "FGSM + SHIELD",
    "FGSM + SAD (20 50 70 70 80 90)",
    "FGSM + SAD (50 70 90)",
    "DeepFool + Bit-depth Reduction",
    "DeepFool + JPEG80 Compression",
    "DeepFool + SHIELD",
    "DeepFool + SAD (20 50 70 70 80 90)",
    "DeepFool + SAD (50 70 90)",
]


@pytest.fixture
def corpus(tmp_path):
    return write_corpus(tmp_path)


@pytest.fixture(scope="module")
def protocol_run(tmp_path_factory, weights_file):
    root = write_corpus(tmp_path_factory.mktemp("protocol"))
    cfg_path = write_config(root, weights_file, fixation_template="fix/{id}.png")
    result = run_experiment(ExperimentConfig.load(cfg_path))
    return cfg_path, result


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_no_attacks_gives_single_original_row(corpus, weights_file):
    cfg_path = write_config(corpus, weights_file, attacks=[], defenses=[])
    result = run_experiment(ExperimentConfig.load(cfg_path))
    agg = read_csv(result.files["aggregate"])
    assert [r["condition"] for r in agg] == ["Original"]
    assert len(read_csv(result.files["per_image"])) == 3
    # without fixations NSS stays empty
    assert agg[0]["NSS"] == ""


def test_protocol_labels_and_row_count(protocol_run):
    _, result = protocol_run
    agg = read_csv(result.files["aggregate"])
    assert [r["condition"] for r in agg] == PROTOCOL_LABELS
    assert len(read_csv(result.files["per_image"])) == 3 * len(PROTOCOL_LABELS)
    assert all(r["NSS"] != "" for r in agg)


@pytest.mark.parametrize("attacks,defenses", [(0, 0), (1, 0), (1, 2), (2, 3)])
def test_row_count_arithmetic(tmp_path, attacks, defenses):
    data = {
        "corpus_dir": "c",
        "gt_map_template": "g/{id}.png",
        "output_dir": "o",
        "attacks": [{"method": m} for m in ("fgsm", "deepfool")[:attacks]],
        "defenses": [{"method": "jpeg", "quality": q} for q in (10, 20, 30)[:defenses]],
    }
    cfg = ExperimentConfig.from_dict(data, tmp_path)
    assert len(cfg.conditions()) == 1 + attacks + attacks * defenses


def test_rerun_is_byte_identical(protocol_run, tmp_path):
    cfg_path, first = protocol_run
    before = {k: p.read_bytes() for k, p in first.files.items()}
    second = run_experiment(ExperimentConfig.load(cfg_path))
    assert {k: p.read_bytes() for k, p in second.files.items()} == before


def test_aggregate_is_mean_of_per_image(protocol_run):
    _, result = protocol_run
    per = read_csv(result.files["per_image"])
    for row in read_csv(result.files["aggregate"]):
        vals = [r for r in per if r["condition"] == row["condition"]]
        for col in COLUMNS:
            mean = math.fsum(float(r[col]) for r in vals) / len(vals)
            assert abs(mean - float(row[col])) <= 1e-9 * max(1.0, abs(mean))


def test_manifest_records_run(protocol_run):
    _, result = protocol_run
    manifest = yaml.safe_load(result.files["manifest"].read_text())
    assert manifest["conditions"] == PROTOCOL_LABELS
    assert manifest["image_ids"] == ["img00", "img01", "img02"]
    assert manifest["seed"] == 0
    assert manifest["config"]["emd_downsample"] == 8
    assert set(manifest["versions"]) >= {"numpy", "scipy", "python"}
    assert len(manifest["model"]["sha256"]) == 64


def test_values_use_ten_significant_digits(protocol_run):
    _, result = protocol_run
    for row in read_csv(result.files["per_image"]):
        for col in COLUMNS:
            digits = row[col].lstrip("-").split("e")[0].replace(".", "").lstrip("0")
            assert len(digits) <= 10


def test_missing_ground_truth_is_reported(corpus, weights_file):
    (corpus / "gt" / "img01.png").unlink()
    cfg_path = write_config(corpus, weights_file, attacks=[], defenses=[])
    with pytest.raises(HarnessError, match="img01"):
        run_experiment(ExperimentConfig.load(cfg_path))


def test_empty_corpus(tmp_path, weights_file):
    (tmp_path / "images").mkdir()
    cfg_path = write_config(tmp_path, weights_file, attacks=[], defenses=[])
    with pytest.raises(HarnessError, match="empty"):
        run_experiment(ExperimentConfig.load(cfg_path))


def test_module_errors_name_image_and_condition(corpus, weights_file):
    # a ground-truth map of the wrong size fails inside the metrics module
    from saldefense.image import save_map
    import numpy as np

    save_map(np.full((16, 16), 9, np.uint8), corpus / "gt" / "img00.png")
    cfg_path = write_config(corpus, weights_file, attacks=[], defenses=[])
    with pytest.raises(HarnessError, match=r"img00.*Original"):
        run_experiment(ExperimentConfig.load(cfg_path))


def test_file_saliency_source_with_condition_placeholder(corpus, weights_file):
    cfg_path = write_config(
        corpus,
        weights_file,
        attacks=[{"method": "fgsm"}],
        defenses=[{"method": "sad", "qualities": [50, 70, 90]}],
        saliency_source={"kind": "file", "path_template": "gt/{id}.png"},
        eval_map_source={"kind": "file", "path_template": "gt/{id}.png"},
    )
    result = run_experiment(ExperimentConfig.load(cfg_path))
    # evaluating the ground truth against itself gives perfect scores everywhere
    for row in result.aggregate:
        assert row["CC"] == pytest.approx(1.0)
        assert row["EMD"] == pytest.approx(0.0, abs=1e-12)


def test_config_validation(tmp_path):
    base = {"corpus_dir": "c", "gt_map_template": "g/{id}.png", "output_dir": "o"}
    with pytest.raises(ValueError, match="unknown"):
        ExperimentConfig.from_dict({**base, "colour": 1}, tmp_path)
    with pytest.raises(ValueError, match="missing"):
        ExperimentConfig.from_dict({"corpus_dir": "c"}, tmp_path)
    dup = {**base, "attacks": [{"method": "fgsm"}], "defenses": [{"method": "jpeg"}, {"method": "jpeg"}]}
    with pytest.raises(ValueError, match="duplicate"):
        ExperimentConfig.from_dict(dup, tmp_path).conditions()
    cfg = ExperimentConfig.from_dict(base, tmp_path)
    assert cfg.corpus_dir == tmp_path / "c"


def test_image_seed_distinct_and_stable():
    seeds = [image_seed(0, i) for i in range(20)]
    assert len(set(seeds)) == 20
    assert image_seed(0, 3) == seeds[3]
    assert image_seed(1, 3) != seeds[3]


def test_slug():
    assert slug("FGSM + SAD (50 70 90)") == "fgsm_sad_50_70_90"


def test_aggregate_rows_missing_nss():
    per = [
        {"condition": "Original", "EMD": 1.0, "CC": 0.5, "NSS": None, "KLD": 0.1, "SIM": 0.4},
        {"condition": "Original", "EMD": 3.0, "CC": 0.7, "NSS": None, "KLD": 0.3, "SIM": 0.6},
    ]
    (row,) = aggregate_rows(per, ["Original"])
    assert row["EMD"] == 2.0 and row["NSS"] is None
    assert row["CC"] == pytest.approx(0.6)


def table(*emd):
    return [
        {"condition": f"c{i}", "EMD": v, "CC": 1.0, "NSS": None, "KLD": v * 2, "SIM": -v}
        for i, v in enumerate(emd)
    ]


def test_min_max_normalize():
    out = min_max_normalize(table(2.0, 4.0, 6.0))
    assert [r["EMD"] for r in out] == [0.0, 0.5, 1.0]
    assert [r["SIM"] for r in out] == [1.0, 0.5, 0.0]
    assert [r["CC"] for r in out] == [0.0, 0.0, 0.0]
    assert all(r["NSS"] is None for r in out)
    with pytest.raises(ValueError):
        min_max_normalize(table(2.0))


def test_table_roundtrip(tmp_path):
    rows = table(2.0, 4.0, 6.0)
    write_table(rows, tmp_path / "t.csv")
    assert read_table(tmp_path / "t.csv") == rows
