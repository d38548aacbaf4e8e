import io
import os
import sys
import tempfile
import unittest
from pathlib import Path
from unittest.mock import MagicMock, patch

import pandas as pd

# Add the src directory to the path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.config import CONFIG_ENV_VAR, RunConfig
from src.data.dataset import read_manifest
from src.main import EXIT_CODES, build_parser, main
from src.training.ablation import TABLE_COLUMNS, configure_ablation, run_ablation_row

MICRO_CONFIG = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'data', 'run_config.json'))


def run_cli(*argv):
    """Run the CLI and capture (exit code, stdout, stderr)"""
    with patch("sys.stdout", new_callable=io.StringIO) as out, patch("sys.stderr", new_callable=io.StringIO) as err:
        code = main(list(argv))
    return code, out.getvalue(), err.getvalue()


@patch.dict(os.environ, {CONFIG_ENV_VAR: MICRO_CONFIG})
class TestCommandLine(unittest.TestCase):
    """Command dispatch, overrides and exit codes"""

    def test_parser_commands(self):
        parser = build_parser()
        args = parser.parse_args(["ablate", "9", "--epochs", "2"])
        self.assertEqual((args.command, args.row, args.epochs), ("ablate", 9, 2))
        with patch("sys.stderr", new_callable=io.StringIO):
            with self.assertRaises(SystemExit):
                parser.parse_args(["ablate", "12"])

    def test_count_params(self):
        code, out, _ = run_cli("count", "params", "--scope", "decoder")
        self.assertEqual(code, 0)
        self.assertIn("match", out)

    def test_ablate_dispatches_row(self):
        frame = pd.DataFrame([{"Row": 9, "DSC": 50.0}])
        with patch("src.main.run_ablation_row", return_value=frame) as run_row:
            code, out, _ = run_cli("ablate", "9", "--epochs", "1", "--results", "out.tsv")
        self.assertEqual(code, 0)
        index, config = run_row.call_args.args
        self.assertEqual(index, 9)
        self.assertIsInstance(config, RunConfig)
        self.assertEqual(run_row.call_args.kwargs, {"epochs": 1, "results_path": "out.tsv"})
        self.assertIn("Row\tDSC", out)

    def test_overrides_reach_the_config(self):
        frame = pd.DataFrame([{"Row": 1}])
        with patch("src.main.run_ablation_row", return_value=frame) as run_row:
            run_cli("ablate", "1", "--train.batch_size=2")
        self.assertEqual(run_row.call_args.args[1].train.batch_size, 2)

    def test_bad_override_is_a_config_error(self):
        code, _, err = run_cli("count", "params", "--train.nonsense=1")
        self.assertEqual(code, EXIT_CODES["config"])
        self.assertIn("error[config]:", err)

    def test_unknown_argument_is_a_usage_error(self):
        with patch("sys.stderr", new_callable=io.StringIO):
            with self.assertRaises(SystemExit) as ctx:
                main(["count", "params", "--bogus"])
        self.assertEqual(ctx.exception.code, 2)

    def test_missing_config_file(self):
        code, _, err = run_cli("--config", "does/not/exist.json", "count", "params")
        self.assertEqual(code, 2)
        self.assertIn("not found", err)

    def test_failed_gradcheck_exits_with_verification_code(self):
        report = MagicMock(passed=False)
        report.summary.return_value = "FAIL: max rel err 1.000e+00"
        with patch("src.main.run_gradcheck_suite", return_value=[("relu", report)]):
            code, out, err = run_cli("gradcheck")
        self.assertEqual(code, EXIT_CODES["verification"])
        self.assertIn("relu", out)
        self.assertIn("error[verification]", err)

    def test_synth_data_writes_manifests(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, _, _ = run_cli("synth-data", "--out", tmp, "--data.synthetic_samples=10")
            self.assertEqual(code, 0)
            self.assertEqual(len(list(Path(tmp, "images").glob("*.ppm"))), 10)
            self.assertEqual(len(list(Path(tmp, "masks").glob("*.pgm"))), 10)
            sizes = [len(read_manifest(Path(tmp, f"{name}.tsv"))) for name in ("train", "val", "test")]
            self.assertEqual(sizes, [8, 1, 1])

    def test_train_then_eval(self):
        with tempfile.TemporaryDirectory() as tmp:
            overrides = ["--train.max_epochs=1", "--data.synthetic_samples=6"]
            code, out, _ = run_cli("train", "--out", tmp, *overrides)
            self.assertEqual(code, 0)
            self.assertIn("Trained 1 epochs", out)
            code, out, _ = run_cli("eval", "--checkpoint", str(Path(tmp, "last.ckpt")), "--split", "train", *overrides)
            self.assertEqual(code, 0)
            self.assertEqual(out.splitlines()[0].split("\t"), ["Model", "Gran", "Slough", "Mac", "Nec", "Bone", "Tend", "Avg."])

    def test_eval_of_garbage_checkpoint(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp, "bad.ckpt")
            path.write_bytes(b"not a checkpoint")
            code, _, err = run_cli("eval", "--checkpoint", str(path))
        self.assertEqual(code, 1)
        self.assertIn("error[checkpoint]:", err)


class TestAblationHarness(unittest.TestCase):
    def test_configure_rows(self):
        config = configure_ablation(1, RunConfig.micro())
        self.assertEqual(config.decoder.align_norm, "none")
        self.assertEqual(config.decoder.unified_channels, 32)
        config = configure_ablation(10, RunConfig.micro())
        self.assertEqual(config.loss.kind, "focal_dice")
        self.assertTrue(config.augment.enabled)

    def test_results_file_accumulates_rows(self):
        base = RunConfig.micro()
        config = base.model_copy(update={"data": base.data.model_copy(update={"synthetic_samples": 6})})
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "results" / "ablation.tsv"
            first = run_ablation_row(9, config, epochs=1, results_path=path)
            run_ablation_row(1, config, epochs=1, results_path=path)
            table = pd.read_csv(path, sep="\t")
        self.assertEqual(list(first.columns), TABLE_COLUMNS)
        self.assertEqual(table["Row"].tolist(), [9, 1])
        self.assertEqual(table["Reported DSC"].tolist(), [81.89, 51.11])


if __name__ == '__main__':
    unittest.main()
