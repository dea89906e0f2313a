import tempfile
import unittest
from pathlib import Path

from errors import ParseError, UsageError
from loader import ANALYSES, PRESET_FILE, PresetLoader, create_preset_from_dict


class TestBundledPresets(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.loader = PresetLoader(PRESET_FILE).load_all()

    def test_every_analysis_has_presets(self):
        for analysis in ANALYSES:
            self.assertTrue(self.loader.names_for(analysis), analysis)

    def test_settings(self):
        preset = self.loader.get_preset("dense-small", "density")
        self.assertEqual(preset.settings, {"n": 8, "p": 31, "trials": 50, "seed": 1})
        self.assertIs(self.loader.get_preset("planted-5").settings["plant"], True)

    def test_unknown_or_misused_preset(self):
        with self.assertRaises(UsageError):
            self.loader.get_preset("no-such-preset")
        with self.assertRaises(UsageError) as ctx:
            self.loader.get_preset("bsgs-10007", "density")
        self.assertIn("known: dense-small, protocol-n6, sparse", str(ctx.exception))
        with self.assertRaises(UsageError) as ctx:
            self.loader.get_preset("no-such-preset", "dlog-check")
        self.assertIn("known: bsgs-10007)", str(ctx.exception))


class TestPresetValidation(unittest.TestCase):
    def test_unknown_analysis(self):
        with self.assertRaises(ParseError) as ctx:
            create_preset_from_dict({"name": "x", "analysis": "factoring"})
        self.assertEqual(ctx.exception.path, "$.preset.analysis")

    def test_unknown_setting(self):
        with self.assertRaises(ParseError) as ctx:
            create_preset_from_dict({"name": "x", "analysis": "dlog-check", "p": 11, "modulus": 3})
        self.assertEqual(ctx.exception.path, "$.preset.modulus")

    def test_values_must_be_integers(self):
        with self.assertRaises(ParseError):
            create_preset_from_dict({"name": "x", "analysis": "density", "n": "eight"})

    def test_missing_name(self):
        with self.assertRaises(ParseError):
            create_preset_from_dict({"analysis": "density"})


class TestPresetFiles(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_directory_of_files(self):
        (self.dir / "a.yaml").write_text("preset:\n  name: one\n  analysis: density\n  n: 4\n", encoding="utf-8")
        (self.dir / "b.yaml").write_text("preset:\n  name: two\n  analysis: dlog-check\n  p: 11\n", encoding="utf-8")
        loader = PresetLoader(self.dir).load_all()
        self.assertEqual(sorted(loader.presets), ["one", "two"])

    def test_invalid_yaml_reports_position(self):
        path = self.dir / "bad.yaml"
        path.write_text("preset:\n  name: [unclosed\n", encoding="utf-8")
        with self.assertRaises(ParseError) as ctx:
            PresetLoader(path).load_all()
        self.assertIsNotNone(ctx.exception.position)

    def test_missing_path_loads_nothing(self):
        loader = PresetLoader(self.dir / "absent.yaml").load_all()
        self.assertEqual(loader.presets, {})


if __name__ == '__main__':
    unittest.main()
