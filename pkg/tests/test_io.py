import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from centermask import weights
from centermask.config import from_text, lite_config, reference_text, tiny_config, to_text
from centermask.evaluate import average_precision, evaluate_ap, rle_decode, rle_encode
from centermask.model import CenterMask
from centermask.results import dataset_dict
from centermask.synth import generate_sample


# --- weights ------------------------------------------------------------------

def test_model_round_trip_is_bitwise(tmp_path):
    a = CenterMask(tiny_config(), seed=1)
    path = tmp_path / "w.cmkw"
    weights.save_model(str(path), a)
    b = CenterMask(tiny_config(), seed=2)
    weights.load_model(str(path), b)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        assert pa.data.tobytes() == pb.data.tobytes()


def test_byte_layout():
    blob = weights.dumps({"ab": np.array([[1.0, 2.0]], dtype=np.float32)})
    want = (b"CMKW" + struct.pack("<II", 1, 1) + struct.pack("<I", 2) + b"ab" + struct.pack("<I", 2)
            + struct.pack("<2Q", 1, 2) + struct.pack("<2f", 1.0, 2.0))
    assert blob == want


def test_truncation_names_the_entry():
    blob = weights.dumps([("first", np.zeros(3)), ("second.weight", np.ones((2, 2)))])
    with pytest.raises(weights.WeightsFormatError, match="second.weight"):
        weights.loads(blob[:-3])
    with pytest.raises(weights.WeightsFormatError, match="trailing"):
        weights.loads(blob + b"\0")


def test_magic_version_and_duplicates():
    blob = weights.dumps({"x": np.zeros(1)})
    with pytest.raises(weights.WeightsFormatError, match="magic"):
        weights.loads(b"XXXX" + blob[4:])
    with pytest.raises(weights.WeightsFormatError, match="version"):
        weights.loads(blob[:4] + struct.pack("<I", 2) + blob[8:])
    with pytest.raises(weights.WeightsFormatError, match="duplicate"):
        weights.dumps([("x", np.zeros(1)), ("x", np.zeros(1))])


def test_load_rejects_unknown_and_missing(tmp_path):
    model = CenterMask(tiny_config())
    entries = {n: p.data for n, p in model.named_parameters()}
    path = str(tmp_path / "w.cmkw")
    weights.save(path, {**entries, "stray": np.zeros(1)})
    with pytest.raises(KeyError, match="stray"):
        weights.load_model(path, model)
    gone = next(iter(entries))
    weights.save(path, {k: v for k, v in entries.items() if k != gone})
    with pytest.raises(KeyError, match=gone):
        weights.load_model(path, model)


def test_width_mismatch_is_an_error(tmp_path):
    path = str(tmp_path / "w.cmkw")
    weights.save_model(path, CenterMask(tiny_config()))
    with pytest.raises((KeyError, ValueError)):
        weights.load_model(path, CenterMask(lite_config()))


# --- run-length masks ---------------------------------------------------------

def test_rle_examples():
    m = np.array([[1, 1, 0], [0, 0, 1]])
    assert rle_encode(m) == {"size": [2, 3], "counts": [0, 2, 3, 1]}
    assert rle_encode(np.zeros((2, 2)))["counts"] == [4]
    with pytest.raises(ValueError):
        rle_decode({"size": [2, 2], "counts": [1, 2]})


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 10_000))
def test_rle_round_trip(h, w, seed):
    rng = np.random.default_rng(seed)
    m = (rng.uniform(size=(h, w)) < rng.uniform()).astype(np.uint8)
    rle = rle_encode(m)
    assert sum(rle["counts"]) == h * w
    np.testing.assert_array_equal(rle_decode(rle), m)


# --- config text --------------------------------------------------------------

def test_config_text_round_trip():
    for cfg in (lite_config(), tiny_config()):
        assert from_text(to_text(cfg)) == cfg


def test_config_text_edits_and_errors():
    cfg = from_text("# comment\npreset = tiny\ntrain.lr = 0.02  # faster\nhead.nms_iou = 0.5\n")
    assert cfg.train.lr == 0.02 and cfg.head.nms_iou == 0.5
    assert cfg.backbone == tiny_config().backbone
    with pytest.raises(ValueError, match="line 1"):
        from_text("train.nope = 3")
    with pytest.raises(ValueError, match="line 2"):
        from_text("\nno equals sign")
    with pytest.raises(ValueError, match="line 1"):
        from_text("train.lr = fast")
    assert "train.lr = " in reference_text()


def test_config_validates_final_values_together():
    cfg = from_text("train.iterations = 30\ntrain.milestones = 20, 26\n")
    assert cfg.train.milestones == (20, 26)
    with pytest.raises(ValueError, match="milestone"):
        from_text("train.iterations = 30\n")


# --- evaluator ----------------------------------------------------------------

def _gt(boxes, label=0, size=16):
    anns = []
    for i, b in enumerate(boxes):
        m = np.zeros((size, size), np.uint8)
        m[b[1]:b[3], b[0]:b[2]] = 1
        anns.append({"id": i, "image_id": 7, "label": label, "box": list(map(float, b)), "mask": rle_encode(m)})
    return {"images": [{"id": 7, "height": size, "width": size}], "annotations": anns}


def _pred(box, score, label=0, size=16):
    m = np.zeros((size, size), np.uint8)
    m[box[1]:box[3], box[0]:box[2]] = 1
    return {"image_id": 7, "label": label, "box": list(map(float, box)), "score": score, "mask": rle_encode(m)}


def test_perfect_and_empty_predictions():
    gt = _gt([(0, 0, 4, 4), (8, 8, 14, 12)])
    preds = [_pred(tuple(int(v) for v in a["box"]), 1.0) for a in gt["annotations"]]
    table = evaluate_ap(preds, gt)
    for kind in ("box", "mask"):
        assert table[kind]["per_threshold"] == [1.0] * 10
    assert evaluate_ap([], gt)["box"]["AP"] == 0.0


def test_hand_worked_three_predictions():
    # ranks: hit, miss, hit -> precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1
    gt = _gt([(0, 0, 4, 4), (8, 8, 14, 12)])
    preds = [_pred((0, 0, 4, 4), 0.9), _pred((4, 12, 6, 16), 0.8), _pred((8, 8, 14, 12), 0.7)]
    want = 0.5 * 1.0 + 0.5 * (2 / 3)
    table = evaluate_ap(preds, gt, iou_thresholds=(0.5,))
    assert table["box"]["AP"] == pytest.approx(want)
    assert table["mask"]["AP"] == pytest.approx(want)
    assert average_precision(np.array([1, 0, 1]), 2) == pytest.approx(want)


def test_duplicate_detection_is_a_false_positive():
    gt = _gt([(0, 0, 4, 4)])
    preds = [_pred((0, 0, 4, 4), 0.9), _pred((0, 0, 4, 4), 0.8)]
    assert evaluate_ap(preds, gt, iou_thresholds=(0.5,))["box"]["AP"] == 1.0
    assert average_precision(np.array([0, 1]), 1) == 0.5


def test_ground_truth_against_itself():
    samples = [generate_sample(s) for s in range(5)]
    gt = dataset_dict(samples)
    preds = [{**a, "score": 1.0} for a in gt["annotations"]]
    table = evaluate_ap(preds, gt)
    assert table["box"]["AP"] == 1.0 and table["mask"]["AP"] == 1.0


def test_unknown_image_id():
    gt = _gt([(0, 0, 4, 4)])
    with pytest.raises(ValueError, match="unknown image"):
        evaluate_ap([{**_pred((0, 0, 4, 4), 0.9), "image_id": 8}], gt)
    with pytest.raises(ValueError):
        evaluate_ap([], {"images": []})
