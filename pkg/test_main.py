import contextlib
import io
import json
import random
import socket
import tempfile
import threading
import unittest
from pathlib import Path
from unittest import mock

from hashing import BitString
from main import main, make_rng
from params import read_params_file
from protocol import AliceSession
from transport import open_listener, serve_alice


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.common = ["--config", str(self.dir / "missing.json"), "--log-level", "ERROR"]

    def tearDown(self):
        self.tmp.cleanup()

    def run_cli(self, *argv):
        out = io.StringIO()
        with contextlib.redirect_stdout(out):
            code = main(list(argv) + self.common)
        return code, out.getvalue()

    def make_params(self, name, seed, n=2):
        path = self.dir / name
        code, _ = self.run_cli("setup", "--n", str(n), "--q", "16", "--seed", str(seed), "--params", str(path))
        self.assertEqual(code, 0)
        return path


class TestSetupCommand(CliTestCase):
    def test_seeded_setup_is_reproducible(self):
        first = self.make_params("one.json", 7)
        second = self.make_params("two.json", 7)
        self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_prints_field_summary(self):
        code, out = self.run_cli("setup", "--n", "2", "--q", "16", "--seed", "1",
                                 "--params", str(self.dir / "ot.json"))
        self.assertEqual(code, 0)
        self.assertIn("p = 7", out)
        self.assertIn("bitlen(p) = 3", out)
        self.assertIn("q = 16", out)

    def test_dimension_one_is_a_usage_error(self):
        code, _ = self.run_cli("setup", "--n", "1", "--params", str(self.dir / "ot.json"))
        self.assertEqual(code, 2)


class TestDemoCommand(CliTestCase):
    def test_deterministic_under_seed(self):
        args = ("demo", "--n", "3", "--q", "16", "--seed", "5")
        code, first = self.run_cli(*args)
        self.assertEqual(code, 0)
        for _ in range(4):
            self.assertEqual(self.run_cli(*args), (0, first))
        self.assertIn("transcript digest = ", first)
        self.assertIn("K = 7", first)

        _, other_side = self.run_cli(*args, "--choice", "b")
        self.assertIn("m_b = ", other_side)
        self.assertNotEqual(first, other_side)

    def test_given_message_is_recovered(self):
        code, out = self.run_cli("demo", "--n", "2", "--q", "16", "--seed", "2", "--m-a", "beef")
        self.assertEqual(code, 0)
        self.assertIn("m_a = beef", out)

    def test_message_of_wrong_length(self):
        code, _ = self.run_cli("demo", "--n", "2", "--q", "16", "--seed", "2", "--m-a", "abc")
        self.assertEqual(code, 2)


class TestBobCommand(CliTestCase):
    def serve(self, params_path, m_a, m_b):
        params = read_params_file(params_path)
        listener = open_listener(("127.0.0.1", 0))
        outcomes = []

        def run():
            factory = lambda: AliceSession.start(params, make_rng(9, "alice"), m_a, m_b)
            try:
                outcomes.extend(serve_alice(listener, factory, timeout=5.0, max_connections=1))
            finally:
                listener.close()

        worker = threading.Thread(target=run, daemon=True)
        worker.start()
        return worker, listener.getsockname()[1], outcomes

    def test_bob_recovers_chosen_message(self):
        path = self.make_params("ot.json", 3)
        worker, port, outcomes = self.serve(path, BitString(0x1234, 16), BitString(0xABCD, 16))
        code, out = self.run_cli("bob", "--params", str(path), "--connect", f"127.0.0.1:{port}",
                                 "--choice", "b", "--timeout", "5")
        worker.join(10.0)
        self.assertEqual(code, 0)
        self.assertIn("m_b = abcd", out)
        self.assertIsNone(outcomes[0].error)

    def test_mismatched_params_fail(self):
        alice_path = self.make_params("alice.json", 3)
        bob_path = self.make_params("bob.json", 4)
        worker, port, outcomes = self.serve(alice_path, BitString(1, 16), BitString(2, 16))
        code, _ = self.run_cli("bob", "--params", str(bob_path), "--connect", f"127.0.0.1:{port}",
                               "--choice", "a", "--timeout", "5")
        worker.join(10.0)
        self.assertEqual(code, 1)
        self.assertIsNotNone(outcomes[0].error)

    def test_alice_rejects_short_message_before_listening(self):
        path = self.make_params("ot.json", 3)
        code, _ = self.run_cli("alice", "--params", str(path), "--listen", "127.0.0.1:0", "--m-a", "12")
        self.assertEqual(code, 2)

    def test_bad_port_is_usage_error(self):
        path = self.make_params("ot.json", 3)
        for address in ("127.0.0.1:abc", "127.0.0.1:70000"):
            code, _ = self.run_cli("bob", "--params", str(path), "--connect", address, "--choice", "a")
            self.assertEqual(code, 2, address)

    def test_alice_reports_a_run_that_crashed(self):
        path = self.make_params("ot.json", 3)
        listener = open_listener(("127.0.0.1", 0))
        port = listener.getsockname()[1]
        codes = []
        with mock.patch("main.open_listener", return_value=listener), \
                mock.patch.object(AliceSession, "start", side_effect=TypeError("no session")):
            worker = threading.Thread(target=lambda: codes.append(
                main(["alice", "--params", str(path), "--timeout", "5"] + self.common)))
            worker.start()
            client = socket.create_connection(("127.0.0.1", port), timeout=5.0)
            worker.join(10.0)
            client.close()
        self.assertEqual(codes, [1])

    def test_unreachable_peer_is_io_error(self):
        path = self.make_params("ot.json", 3)
        listener = open_listener(("127.0.0.1", 0))
        port = listener.getsockname()[1]
        listener.close()
        code, _ = self.run_cli("bob", "--params", str(path), "--connect", f"127.0.0.1:{port}",
                               "--choice", "a", "--timeout", "2")
        self.assertEqual(code, 3)


class TestAnalyzeCommands(CliTestCase):
    def test_dlog_check(self):
        code, out = self.run_cli("analyze", "dlog-check", "--p", "10007", "--seed", "1")
        self.assertEqual(code, 0)
        self.assertIn("0 mismatches", out)

    def test_dlog_check_rejects_composite(self):
        code, _ = self.run_cli("analyze", "dlog-check", "--p", "10005")
        self.assertEqual(code, 2)

    def test_planted_permuted_subset(self):
        code, out = self.run_cli("analyze", "challenge1", "--n", "5", "--plant", "--modulus", "1018", "--seed", "3")
        self.assertEqual(code, 0)
        self.assertIn("search: x = ", out)
        self.assertIn("self-reduction: x = ", out)
        self.assertNotIn("verified = False", out)

    def test_density_csv(self):
        csv_path = self.dir / "density.csv"
        code, out = self.run_cli("analyze", "density", "--n", "8", "--p", "31", "--trials", "50",
                                 "--seed", "1", "--csv", str(csv_path))
        self.assertEqual(code, 0)
        lines = csv_path.read_text(encoding="utf-8").splitlines()
        self.assertEqual(len(lines), 51)
        self.assertEqual(lines[0], "seed,n,p,measured_count,predicted")
        self.assertTrue(lines[1].split(",")[4].startswith("8.258"))
        self.assertTrue(out.startswith("# n=8 p=31 trials=50"))

    def test_density_from_preset(self):
        code, out = self.run_cli("analyze", "density", "--preset", "sparse", "--trials", "5")
        self.assertEqual(code, 0)
        self.assertIn("# n=4 p=1009 trials=5 source=protocol", out)

    def test_density_rejects_composite_prime(self):
        for p in ("32", "33", "49"):
            code, _ = self.run_cli("analyze", "density", "--n", "8", "--p", p, "--trials", "2")
            self.assertEqual(code, 2, p)

    def test_preset_for_another_analysis(self):
        code, _ = self.run_cli("analyze", "density", "--preset", "planted-5")
        self.assertEqual(code, 2)

    def test_missing_dimension(self):
        code, _ = self.run_cli("analyze", "density", "--p", "31")
        self.assertEqual(code, 2)


class TestConfigCommand(CliTestCase):
    def test_set_values_are_saved(self):
        config_path = self.dir / "missing.json"
        code, out = self.run_cli("config", "--set", "port", "9000", "--set", "timeout", "2.5")
        self.assertEqual(code, 0)
        self.assertIn("port = 9000", out)
        self.assertEqual(json.loads(config_path.read_text(encoding="utf-8")), {"port": 9000, "timeout": 2.5})

        code, out = self.run_cli("config")
        self.assertEqual(code, 0)
        self.assertIn("timeout = 2.5", out)
        self.assertIn("q = 128", out)

    def test_bad_settings_are_usage_errors(self):
        self.assertEqual(self.run_cli("config", "--set", "colour", "blue")[0], 2)
        self.assertEqual(self.run_cli("config", "--set", "port", "high")[0], 2)
        self.assertFalse((self.dir / "missing.json").exists())


if __name__ == '__main__':
    unittest.main()
