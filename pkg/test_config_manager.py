import json
import tempfile
import unittest
from pathlib import Path

from config_manager import DEFAULTS, ConfigManager


class TestConfigManager(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "otconfig.json"

    def tearDown(self):
        self.tmp.cleanup()

    def test_missing_file_gives_defaults(self):
        config = ConfigManager(str(self.path))
        self.assertEqual(config.get("port"), 7512)
        self.assertEqual(config.get("q"), 128)
        self.assertEqual(config.get("h1_domain_tag"), "OT12.h1.v1")
        self.assertIsNone(config.get("no_such_key"))
        self.assertFalse(self.path.exists())

    def test_file_values_override_defaults(self):
        self.path.write_text(json.dumps({"port": 9000, "colour": "blue"}), encoding="utf-8")
        config = ConfigManager(str(self.path))
        self.assertEqual(config.get("port"), 9000)
        self.assertEqual(config.get("timeout"), DEFAULTS["timeout"])
        self.assertNotIn("colour", config.config)

    def test_corrupt_file_falls_back(self):
        self.path.write_text("{port: ", encoding="utf-8")
        self.assertEqual(ConfigManager(str(self.path)).get("port"), 7512)
        self.path.write_text("[1, 2]", encoding="utf-8")
        self.assertEqual(ConfigManager(str(self.path)).get("port"), 7512)

    def test_set_saves(self):
        config = ConfigManager(str(self.path))
        config.set("timeout", 5.0)
        self.assertEqual(json.loads(self.path.read_text(encoding="utf-8")), {"timeout": 5.0})
        self.assertEqual(ConfigManager(str(self.path)).get("timeout"), 5.0)
        with self.assertRaises(KeyError):
            config.set("colour", "blue")


if __name__ == '__main__':
    unittest.main()
