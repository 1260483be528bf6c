"""Config file parsing and the command-line surface."""

import numpy as np
import pytest

from mlrn.cli import main
from mlrn.config import (
    generator_config_from,
    parse_kv_text,
    train_config_from,
)
from mlrn.data import AttributeType, RelationType
from mlrn.harness import parse_metrics_csv
from mlrn.storage import load_checkpoint, read_dataset

TINY_CFG = """
# tiny smoke configuration
batch_size=16
epochs=2
seed=3
model.relation_layers=1
model.layer1_widths=16,16
model.deeper_widths=16,16
model.f_phi_widths=16,1
model.embed_dim=25
model.conv_channels=4
model.conv_count=2
model.image_size=16
model.me.d=4
model.me.sigma=0.28
optimizer.kind=lamb
optimizer.lr=2e-3
optimizer.weight_decay=0.01
optimizer.warmup_epochs=1
generator.image_size=16
generator.seed=5
"""


class TestKvParsing:
    def test_comments_and_blanks(self):
        kv = parse_kv_text("# full line comment\n\na=1  # trailing\n b = 2 \n")
        assert kv == {"a": "1", "b": "2"}

    def test_malformed_line_rejected(self):
        with pytest.raises(ValueError, match="key=value"):
            parse_kv_text("just some text\n")

    def test_train_config_types(self):
        cfg = train_config_from(parse_kv_text(TINY_CFG))
        assert cfg.batch_size == 16 and cfg.epochs == 2 and cfg.seed == 3
        assert cfg.model.layer1_widths == (16, 16)
        assert cfg.model.me is not None and cfg.model.me.d == 4
        assert cfg.optimizer.kind == "lamb"
        assert cfg.optimizer.weight_decay == pytest.approx(0.01)

    def test_me_absent_without_keys(self):
        cfg = train_config_from(parse_kv_text("model.relation_layers=1\n"))
        assert cfg.model.me is None

    def test_optional_float(self):
        cfg = train_config_from(parse_kv_text("stop_accuracy=0.85\n"))
        assert cfg.stop_accuracy == pytest.approx(0.85)
        cfg = train_config_from(parse_kv_text("stop_accuracy=none\n"))
        assert cfg.stop_accuracy is None

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError, match="unknown training key"):
            train_config_from(parse_kv_text("learning_rate=1\n"))
        with pytest.raises(ValueError, match="unknown model key"):
            train_config_from(parse_kv_text("model.depth=3\n"))
        with pytest.raises(ValueError, match="unknown optimizer key"):
            train_config_from(parse_kv_text("optimizer.momentum=0.9\n"))

    def test_generator_enums_and_bools(self):
        kv = parse_kv_text(
            "generator.allowed_relations=progression,AND\n"
            "generator.allowed_attributes=color\n"
            "generator.distractors=true\n"
            "generator.image_size=32\n"
        )
        cfg = generator_config_from(kv)
        assert cfg.allowed_relations == (RelationType.PROGRESSION, RelationType.AND)
        assert cfg.allowed_attributes == (AttributeType.COLOR,)
        assert cfg.distractors is True

    def test_overrides_win(self):
        cfg = train_config_from(parse_kv_text("epochs=9\n"), metrics_path="m.csv")
        assert cfg.metrics_path == "m.csv" and cfg.epochs == 9


class TestCli:
    @pytest.fixture()
    def workdir(self, tmp_path):
        cfg_path = tmp_path / "tiny.cfg"
        cfg_path.write_text(TINY_CFG)
        return tmp_path, cfg_path

    def test_gen_train_eval_cycle(self, workdir, capsys):
        tmp_path, cfg_path = workdir
        train_path = tmp_path / "train.mpgm"
        val_path = tmp_path / "val.mpgm"
        assert main(["gen-data", "--config", str(cfg_path), "--out", str(train_path), "--count", "48"]) == 0
        assert main(["gen-data", "--config", str(cfg_path), "--out", str(val_path), "--count", "24", "--seed", "9"]) == 0
        ds = read_dataset(train_path)
        assert len(ds) == 48 and ds.image_size == 16

        ckpt = tmp_path / "model.ckpt"
        metrics = tmp_path / "metrics.csv"
        rc = main(
            [
                "train",
                "--config",
                str(cfg_path),
                "--data",
                str(train_path),
                "--val",
                str(val_path),
                "--out-checkpoint",
                str(ckpt),
                "--out-metrics",
                str(metrics),
            ]
        )
        assert rc == 0
        rows = parse_metrics_csv(metrics)
        assert [r.epoch for r in rows] == [1, 2]
        assert ckpt.exists()
        # report path renders the curves figure next to the metrics file
        assert (tmp_path / "metrics.png").exists()
        bundle = load_checkpoint(ckpt)
        assert bundle.model_config is not None and bundle.model_config.image_size == 16

        report_path = tmp_path / "report.txt"
        rc = main(["eval", "--checkpoint", str(ckpt), "--data", str(val_path), "--report", str(report_path)])
        assert rc == 0
        text = report_path.read_text()
        assert "Total acc" in text and "Total error" in text
        assert (tmp_path / "report.png").exists()
        out = capsys.readouterr().out
        assert "Total acc" in out

    def test_gradcheck_command(self, capsys):
        rc = main(["gradcheck", "--scale", "tiny", "--max-elements", "4"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "wren_end_to_end_tiny" in out and "FAIL" not in out

    def test_multiseed_command(self, workdir, capsys):
        tmp_path, cfg_path = workdir
        train_path = tmp_path / "train.mpgm"
        val_path = tmp_path / "val.mpgm"
        main(["gen-data", "--config", str(cfg_path), "--out", str(train_path), "--count", "32"])
        main(["gen-data", "--config", str(cfg_path), "--out", str(val_path), "--count", "16", "--seed", "9"])
        out_dir = tmp_path / "sweep"
        text = (cfg_path.read_text().replace("epochs=2", "epochs=1")
                + f"train_path={train_path}\nval_path={val_path}\n")
        cfg2 = tmp_path / "sweep.cfg"
        cfg2.write_text(text)
        rc = main(["multiseed", "--config", str(cfg2), "--seeds", "2", "--out-dir", str(out_dir)])
        assert rc == 0
        summary = (out_dir / "multiseed_summary.csv").read_text().splitlines()
        assert summary[0] == "seed;final_training_acc;final_validation_acc;cluster"
        assert len([l for l in summary if l and not l.startswith("#")]) == 3
        assert (out_dir / "multiseed_curves.png").exists()
