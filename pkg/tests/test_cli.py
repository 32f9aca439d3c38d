import json
import shutil

import numpy as np
import pytest

from zsikit import annotations as ann
from zsikit.cli import main
from zsikit.maskgeom import BinaryMask, rasterize, rle_encode
from zsikit.metrics import Prediction, predictions_to_json

from .conftest import DATA

SPLIT = str(DATA / "toy_split.json")


@pytest.fixture
def toy_test(tmp_path):
    assert main(["split", "--annotations", str(DATA / "toy3.json"), "--split", SPLIT, "--out", str(tmp_path)]) == 0
    return tmp_path / "test.json"


def perfect_predictions(test_path, mask=True):
    d = ann.load_dataset(test_path)
    out = []
    for a in d.annotations:
        im = d.image(a.image_id)
        seg = rle_encode(rasterize(a.segmentation, im.width, im.height)) if mask else None
        out.append(Prediction(a.image_id, a.category_id, 0.9, a.bbox, seg))
    return out


def write_preds(path, preds):
    path.write_text(predictions_to_json(preds))
    return str(path)


class TestSplit:
    def test_toy_counts(self, tmp_path, capsys):
        assert main(["split", "--annotations", str(DATA / "toy3.json"), "--split", SPLIT, "--out", str(tmp_path)]) == 0
        train = ann.load_dataset(tmp_path / "train.json")
        test = ann.load_dataset(tmp_path / "test.json")
        assert [im.id for im in train.images] == [1]
        assert [im.id for im in test.images] == [2, 3]
        assert "train 1 images" in capsys.readouterr().out

    def test_byte_identical(self, tmp_path):
        for k in ("a", "b"):
            assert main(["split", "--annotations", str(DATA / "split6.json"), "--split", SPLIT, "--out", str(tmp_path / k)]) == 0
        for f in ("train.json", "test.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_empty_file(self, tmp_path, capsys):
        (tmp_path / "empty.json").write_text("")
        assert main(["split", "--annotations", str(tmp_path / "empty.json"), "--out", str(tmp_path / "o")]) == 0
        assert "warning" in capsys.readouterr().err
        assert ann.load_dataset(tmp_path / "o" / "train.json").images == ()

    def test_missing_file(self, tmp_path):
        assert main(["split", "--annotations", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2

    def test_parse_error(self, tmp_path):
        (tmp_path / "bad.json").write_text('{"images": [')
        assert main(["split", "--annotations", str(tmp_path / "bad.json"), "--out", str(tmp_path)]) == 2

    def test_invalid_split(self, tmp_path):
        assert main(["split", "--annotations", str(DATA / "toy3.json"), "--split", "10/10", "--out", str(tmp_path)]) == 1

    def test_data_dir(self, tmp_path, monkeypatch):
        shutil.copy(DATA / "toy3.json", tmp_path / "toy3.json")
        monkeypatch.setenv("ZSIKIT_DATA_DIR", str(tmp_path))
        monkeypatch.chdir(DATA.parent)
        assert main(["split", "--annotations", "toy3.json", "--split", SPLIT, "--out", str(tmp_path / "o")]) == 0


class TestEval:
    @pytest.mark.parametrize("setting", ["zsd", "zsi", "gzsd", "gzsi"])
    def test_perfect(self, toy_test, tmp_path, setting, capsys):
        p = write_preds(tmp_path / "p.json", perfect_predictions(toy_test))
        out = tmp_path / "r.json"
        rc = main(["eval", "--annotations", str(toy_test), "--predictions", p, "--split", SPLIT,
                   "--setting", setting, "--out", str(out)])
        assert rc == 0
        rep = json.loads(out.read_text())
        assert rep["map"] == 1.0 and set(rep["recall"].values()) == {1.0}
        text = capsys.readouterr().out
        assert "100.0000" in text and "Recall@100 IoU=0.4" in text
        if setting.startswith("g"):
            assert {"seen", "unseen", "hm"} <= set(rep)
            assert rep["hm"]["map"] == 1.0
            assert "HM" in text

    def test_zsd_ignores_masks(self, toy_test, tmp_path):
        preds = perfect_predictions(toy_test)
        junk = [Prediction(p.image_id, p.category_id, p.score, p.bbox, rle_encode(BinaryMask.zeros(20, 20))) for p in preds]
        outs = []
        for name, pr in (("a", preds), ("b", junk)):
            p = write_preds(tmp_path / f"{name}.json", pr)
            main(["eval", "--annotations", str(toy_test), "--predictions", p, "--split", SPLIT,
                  "--setting", "zsd", "--out", str(tmp_path / f"{name}.out")])
            outs.append((tmp_path / f"{name}.out").read_bytes())
        assert outs[0] == outs[1]

    def test_unknown_image(self, toy_test, tmp_path, capsys):
        preds = [Prediction(99, 2, 0.5, perfect_predictions(toy_test)[0].bbox)]
        p = write_preds(tmp_path / "p.json", preds)
        assert main(["eval", "--annotations", str(toy_test), "--predictions", p, "--split", SPLIT, "--setting", "zsd"]) == 1
        assert "unknown image" in capsys.readouterr().err

    def test_missing_masks(self, toy_test, tmp_path):
        p = write_preds(tmp_path / "p.json", perfect_predictions(toy_test, mask=False))
        assert main(["eval", "--annotations", str(toy_test), "--predictions", p, "--split", SPLIT, "--setting", "zsi"]) == 1
        assert main(["eval", "--annotations", str(toy_test), "--predictions", p, "--split", SPLIT, "--setting", "zsd"]) == 0

    def test_bad_predictions_json(self, toy_test, tmp_path):
        (tmp_path / "p.json").write_text("[{")
        assert main(["eval", "--annotations", str(toy_test), "--predictions", str(tmp_path / "p.json"),
                     "--split", SPLIT, "--setting", "zsd"]) == 2

    def test_custom_thresholds_and_top_k(self, toy_test, tmp_path):
        p = write_preds(tmp_path / "p.json", perfect_predictions(toy_test))
        out = tmp_path / "r.json"
        assert main(["eval", "--annotations", str(toy_test), "--predictions", p, "--split", SPLIT, "--setting", "zsd",
                     "--iou-thresholds", "0.75,0.9", "--top-k", "5", "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert set(rep["recall"]) == {"0.75", "0.9"} and rep["top_k"] == 5

    def test_bad_threshold_flag(self, toy_test):
        with pytest.raises(SystemExit) as e:
            main(["eval", "--annotations", str(toy_test), "--predictions", "x", "--setting", "zsd", "--iou-thresholds", "1.5"])
        assert e.value.code == 2


class TestGradcheck:
    def test_default_passes(self, tmp_path, capsys):
        assert main(["gradcheck", "--seeds", "1", "--out", str(tmp_path / "g.json")]) == 0
        assert "all blocks pass" in capsys.readouterr().out
        assert json.loads((tmp_path / "g.json").read_text())["passed"] is True

    def test_corrupted_block(self, tmp_path):
        assert main(["gradcheck", "--seeds", "1", "--corrupt", "mask.E", "--out", str(tmp_path / "g.json")]) == 1
        checks = json.loads((tmp_path / "g.json").read_text())["checks"]
        assert [c["name"] for c in checks if not c["passed"]] == ["mask.E"]

    def test_repeatable(self, capsys):
        main(["gradcheck", "--seeds", "1", "--seed", "5", "--semantic-dim", "20"])
        a = capsys.readouterr().out
        main(["gradcheck", "--seeds", "1", "--seed", "5", "--semantic-dim", "20"])
        assert capsys.readouterr().out == a

    def test_with_embeddings_file(self, tmp_path):
        rng = np.random.default_rng(0)
        names = ["background", "person", "dog", "cat"]
        lines = [f"{len(names)} 16"] + [n + " " + " ".join(f"{v:.6f}" for v in rng.standard_normal(16)) for n in names]
        (tmp_path / "w.txt").write_text("\n".join(lines) + "\n")
        rc = main(["gradcheck", "--seeds", "1", "--embeddings", str(tmp_path / "w.txt"), "--split", SPLIT,
                   "--semantic-dim", "16"])
        assert rc == 0

    def test_missing_embedding(self, tmp_path):
        (tmp_path / "w.txt").write_text("1 16\nbackground " + " ".join(["1"] * 16) + "\n")
        rc = main(["gradcheck", "--seeds", "1", "--embeddings", str(tmp_path / "w.txt"), "--split", SPLIT,
                   "--semantic-dim", "16"])
        assert rc == 1


class TestToytrain:
    def test_default_passes(self, tmp_path):
        assert main(["toytrain", "--out", str(tmp_path / "t.json")]) == 0
        rep = json.loads((tmp_path / "t.json").read_text())
        assert rep["passed"] and rep["unseen_accuracy"] >= 0.9

    def test_one_hot(self, tmp_path):
        assert main(["toytrain", "--one-hot", "--out", str(tmp_path / "t.json")]) == 0
        rep = json.loads((tmp_path / "t.json").read_text())
        assert rep["unseen_accuracy"] <= 2 * rep["chance"]

    def test_zero_steps(self, tmp_path, capsys):
        main(["toytrain", "--steps", "0", "--out", str(tmp_path / "t.json")])
        rep = json.loads((tmp_path / "t.json").read_text())
        assert rep["steps"] == 0 and rep["final_loss"] is None and rep["v_b_shift"] == 0.0
        assert "unseen acc" in capsys.readouterr().out

    def test_config_file(self, tmp_path):
        cfg = {"scenario": {"n_seen": 4, "n_unseen": 2, "semantic_dim": 20, "visual_dim": 24, "subspace_rank": 3,
                            "samples_per_class": 5, "test_samples_per_class": 5, "background_samples": 5},
               "training": {"steps": 2, "lr": 0.001}}
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        rc = main(["toytrain", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "t.json")])
        assert rc in (0, 1)
        assert json.loads((tmp_path / "t.json").read_text())["scenario"]["n_seen"] == 4

    def test_bad_config(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"scenario": {"n_seen": 0}}))
        assert main(["toytrain", "--config", str(tmp_path / "c.json")]) == 1
        (tmp_path / "e.json").write_text(json.dumps({"training": {"epochs": 3}}))
        assert main(["toytrain", "--config", str(tmp_path / "e.json")]) == 1
        (tmp_path / "d.json").write_text("{")
        assert main(["toytrain", "--config", str(tmp_path / "d.json")]) == 2
