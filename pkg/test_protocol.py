import math
import random
import unittest
from dataclasses import replace

from errors import DegenerateD, InvalidStage, LengthMismatch, MalformedMessage, RecoveryFailed
from field_core import FieldParams
from hashing import BitString, H1Spec, H2Spec, H2_TOY_IDENTITY, h2, make_h2_spec
from params import ProtocolParams, setup
from protocol import (
    AliceSession, AliceStage, BobSession, BobStage, Round1Message, Round2Message, Round4Message,
    Round5Message, Side, alice_round1, alice_round3, alice_round5, bob_recover, bob_round2,
    bob_round4, eval_f, exponent_offset, index_bound, mask_count, narrow_index_bound,
    recovery_search, tau_b_identity_check, tau_identity_check,
)


def worked_params() -> ProtocolParams:
    """p = 11, n = 2, C = ((1, 2), (3, 4)) with 8-bit messages and the identity h2."""
    return ProtocolParams(
        n=2, fp=FieldParams.from_prime(11), C=((1, 2), (3, 4)), q=8,
        h1_spec=H1Spec(q=8), h2_spec=H2Spec(variant=H2_TOY_IDENTITY, q=8, qprime=8),
    )


def worked_sessions(params: ProtocolParams):
    alice = AliceSession(params=params, t=(1, 1), a=5, b=6, alpha_a=2, alpha_b=6,
                         sigma_a=(1, 2), sigma_b=(2, 1), m_a=BitString(0xA5, 8), m_b=BitString(0x3C, 8))
    bob = BobSession(params=params, s=(0, 1), beta=2, rho=(1, 2))
    return alice, bob


def run_rounds(alice: AliceSession, bob: BobSession, choice: Side):
    r1 = alice_round1(alice)
    r2 = bob_round2(bob, r1)
    r3 = alice_round3(alice, r2)
    r4 = bob_round4(bob, r3, choice)
    r5 = alice_round5(alice, r4)
    return r1, r2, r3, r4, r5, bob_recover(bob, r5)


class TestWorkedInstance(unittest.TestCase):
    def setUp(self):
        self.params = worked_params()
        self.alice, self.bob = worked_sessions(self.params)

    def test_round_values(self):
        r1 = alice_round1(self.alice)
        self.assertEqual(r1.mu_a, (8, 10))
        self.assertEqual(r1.mu_b, (2, 7))

        r2 = bob_round2(self.bob, r1)
        self.assertEqual((r2.tau_a, r2.tau_b), (10, 7))
        self.assertEqual(eval_f(self.params, (1, 1), (0, 1), 5), 8)
        self.assertEqual(exponent_offset(self.alice.sigma_a, self.bob.s), 2)

        r3 = alice_round3(self.alice, r2)
        r4 = bob_round4(self.bob, r3, Side.A)
        self.assertEqual(r4.nu, (3, 3))

        r5 = alice_round5(self.alice, r4)
        self.assertEqual(r5.tau_B, 9)
        self.assertEqual(exponent_offset(self.bob.rho, self.alice.t), 3)
        self.assertEqual(bob_recover(self.bob, r5), BitString(0xA5, 8))

    def test_choice_b(self):
        *_, recovered = run_rounds(self.alice, self.bob, Side.B)
        self.assertEqual(recovered, BitString(0x3C, 8))

    def test_stages_advance(self):
        self.assertEqual(self.alice.stage, AliceStage.NEW)
        run_rounds(self.alice, self.bob, Side.A)
        self.assertEqual(self.alice.stage, AliceStage.SENT_R5)
        self.assertEqual(self.bob.stage, BobStage.RECOVERED)
        self.assertEqual(self.bob.recovered, BitString(0xA5, 8))


class TestIndexRanges(unittest.TestCase):
    def test_bounds(self):
        self.assertEqual(index_bound(2), 3)
        self.assertEqual(narrow_index_bound(2), 1)
        self.assertEqual(mask_count(2), 4)
        self.assertEqual(mask_count(8), 37)

    def test_exponent_offset(self):
        self.assertEqual(exponent_offset((1, 2, 3), (1, 1, 1)), 6)
        self.assertEqual(exponent_offset((3, 1, 2), (0, 1, 1)), 3)
        self.assertEqual(exponent_offset((3, 1, 2), (0, 0, 0)), 0)

    def test_empty_product(self):
        params = worked_params()
        self.assertEqual(eval_f(params, (0, 0), (1, 1), 5), 1)
        self.assertEqual(eval_f(params, (1, 1), (0, 0), 5), 1)


class TestEndToEnd(unittest.TestCase):
    """50 seeded runs per dimension and side: Bob gets m_d and the algebraic identities hold."""

    @classmethod
    def setUpClass(cls):
        cls.h2_spec = make_h2_spec(128, random.Random(2024))

    def test_recovers_chosen_message(self):
        for n in (2, 3, 4, 8):
            K = mask_count(n)
            for seed in range(50):
                rng = random.Random(f"{n}:{seed}")
                params = setup(n, rng, h2_spec=self.h2_spec)
                for choice in (Side.A, Side.B):
                    with self.subTest(n=n, seed=seed, choice=choice.value):
                        alice = AliceSession.start(params, rng)
                        bob = BobSession.start(params, rng)
                        r1, r2, r3, r4, r5, recovered = run_rounds(alice, bob, choice)

                        m_d = alice.m_a if choice is Side.A else alice.m_b
                        d, _, z_d = r3.side(choice)
                        self.assertEqual(recovered, m_d)
                        self.assertEqual(h2(recovered, params.h2_spec), z_d)

                        alpha_d = alice.alpha_a if choice is Side.A else alice.alpha_b
                        sigma_d = alice.sigma_a if choice is Side.A else alice.sigma_b
                        tau_d = r2.tau_a if choice is Side.A else r2.tau_b
                        self.assertTrue(tau_identity_check(params, alice.t, bob.s, d, alpha_d, sigma_d, tau_d))
                        self.assertTrue(tau_b_identity_check(params, alice.t, bob.s, d, bob.beta, bob.rho, r5.tau_B))

                        self.assertEqual(alice.counters.h1_calls, 2 * K)
                        self.assertEqual(alice.counters.h2_calls, 2)
                        self.assertLessEqual(bob.counters.h1_calls, K)
                        self.assertLessEqual(bob.counters.h2_calls, K * K)


class TestWorstCase(unittest.TestCase):
    """t = s = all ones with identity permutations puts k' and r' at n(n+1)/2."""

    @classmethod
    def setUpClass(cls):
        cls.h2_spec = make_h2_spec(64, random.Random(6))
        cls.params_by_n = {}

    def params_for(self, n):
        # A large field keeps accidental matches between the two power sequences out of the search.
        if n not in self.params_by_n:
            self.params_by_n[n] = setup(n, random.Random(5), p=2 ** 61 - 1, q=64, h2_spec=self.h2_spec)
        return self.params_by_n[n]

    def sessions(self, seed, n=3):
        params = self.params_for(n)
        rng = random.Random(seed)
        identity = tuple(range(1, n + 1))
        alice = replace(AliceSession.start(params, rng), t=(1,) * n, sigma_a=identity, sigma_b=identity)
        bob = replace(BobSession.start(params, rng), s=(1,) * n, rho=identity)
        return alice, bob

    def test_exact_worst_case_cost(self):
        alice, bob = self.sessions(1)
        run_rounds(alice, bob, Side.A)
        K = mask_count(3)
        self.assertEqual(bob.counters.h1_calls, K)
        self.assertEqual(bob.counters.h2_calls, K * K)

    def test_cost_grows_as_n_squared_and_n_to_the_fourth(self):
        sizes = (4, 8, 16)
        h1_counts, h2_counts = [], []
        for n in sizes:
            alice, bob = self.sessions(10 + n, n)
            *_, recovered = run_rounds(alice, bob, Side.B)
            self.assertEqual(recovered, alice.m_b)
            K = mask_count(n)
            self.assertEqual((bob.counters.h1_calls, bob.counters.h2_calls), (K, K * K), n)
            h1_counts.append(bob.counters.h1_calls)
            h2_counts.append(bob.counters.h2_calls)

        def log_slope(counts):
            xs = [math.log(n) for n in sizes]
            ys = [math.log(c) for c in counts]
            x_mean, y_mean = sum(xs) / len(xs), sum(ys) / len(ys)
            return (sum((x - x_mean) * (y - y_mean) for x, y in zip(xs, ys))
                    / sum((x - x_mean) ** 2 for x in xs))

        self.assertAlmostEqual(log_slope(h1_counts), 2.0, delta=0.2)
        self.assertAlmostEqual(log_slope(h2_counts), 4.0, delta=0.4)
        self.assertAlmostEqual(h1_counts[-1] / 16 ** 2, 0.5, delta=0.05)

    def test_narrow_range_misses_the_message(self):
        n = 4
        params = self.params_for(n)
        alice, bob = self.sessions(2, n)
        r2 = bob_round2(bob, alice_round1(alice))
        r3 = alice_round3(alice, r2)
        r5 = alice_round5(alice, bob_round4(bob, r3, Side.B))
        _, s_list, z = r3.side(Side.B)
        self.assertEqual(exponent_offset(alice.sigma_b, bob.s), 10)
        self.assertEqual(narrow_index_bound(n), 6)
        narrow = range(0, narrow_index_bound(n) + 1)
        full = range(0, index_bound(n) + 1)
        self.assertIsNone(recovery_search(params, bob.beta, r5.tau_B, s_list, z, narrow, narrow))
        self.assertEqual(recovery_search(params, bob.beta, r5.tau_B, s_list, z, full, full), alice.m_b)

    def test_corrupted_round5_fails_recovery(self):
        alice, bob = self.sessions(3)
        p = self.params_for(3).p
        r2 = bob_round2(bob, alice_round1(alice))
        r3 = alice_round3(alice, r2)
        r5 = alice_round5(alice, bob_round4(bob, r3, Side.A))
        with self.assertRaises(RecoveryFailed):
            bob_recover(bob, Round5Message(tau_B=(r5.tau_B * 3) % p))
        self.assertEqual(bob.stage, BobStage.SENT_R4)
        self.assertEqual(bob_recover(bob, r5), alice.m_a)


class TestSessionGuards(unittest.TestCase):
    def setUp(self):
        self.params = worked_params()
        self.alice, self.bob = worked_sessions(self.params)

    def test_out_of_order_rounds(self):
        with self.assertRaises(InvalidStage):
            alice_round3(self.alice, Round2Message(tau_a=1, tau_b=1))
        self.assertEqual(self.alice.stage, AliceStage.NEW)
        with self.assertRaises(InvalidStage):
            bob_recover(self.bob, Round5Message(tau_B=1))
        alice_round1(self.alice)
        with self.assertRaises(InvalidStage):
            alice_round1(self.alice)

    def test_zero_elements_are_rejected(self):
        with self.assertRaises(MalformedMessage):
            bob_round2(self.bob, Round1Message(mu_a=(0, 1), mu_b=(1, 1)))
        with self.assertRaises(MalformedMessage):
            bob_round2(self.bob, Round1Message(mu_a=(1,), mu_b=(1, 1)))
        self.assertEqual(self.bob.stage, BobStage.NEW)

        r2 = bob_round2(self.bob, alice_round1(self.alice))
        r3 = alice_round3(self.alice, r2)
        bob_round4(self.bob, r3, Side.A)
        with self.assertRaises(MalformedMessage):
            alice_round5(self.alice, Round4Message(nu=(3, 11)))
        self.assertEqual(self.alice.stage, AliceStage.SENT_R3)

    def test_degenerate_d(self):
        r2 = bob_round2(self.bob, alice_round1(self.alice))
        r3 = alice_round3(self.alice, r2)
        corrupted = replace(r3, a=(-self.params.C[0][0]) % self.params.p)
        with self.assertRaises(DegenerateD):
            bob_round4(self.bob, corrupted, Side.A)
        self.assertEqual(self.bob.stage, BobStage.SENT_R2)
        bob_round4(self.bob, r3, Side.A)
        self.assertEqual(self.bob.stage, BobStage.SENT_R4)

    def test_short_masked_list_is_malformed(self):
        r2 = bob_round2(self.bob, alice_round1(self.alice))
        r3 = alice_round3(self.alice, r2)
        with self.assertRaises(MalformedMessage):
            bob_round4(self.bob, replace(r3, s_list_a=r3.s_list_a[:-1]), Side.A)

    def test_session_invariants(self):
        with self.assertRaises(ValueError):
            replace(self.alice, b=5)
        with self.assertRaises(ValueError):
            replace(self.alice, a=10)          # 10 + c_{1,1} = 0
        with self.assertRaises(ValueError):
            replace(self.alice, alpha_b=2)
        with self.assertRaises(ValueError):
            replace(self.alice, alpha_a=3)     # 3 has order 5 in F_11
        with self.assertRaises(ValueError):
            replace(self.alice, sigma_a=(1, 1))
        with self.assertRaises(LengthMismatch):
            replace(self.alice, m_a=BitString(1, 7))
        with self.assertRaises(ValueError):
            replace(self.bob, s=(1, 2))
        with self.assertRaises(ValueError):
            replace(self.bob, beta=1)

    def test_start_rejects_wrong_message_length(self):
        with self.assertRaises(LengthMismatch):
            AliceSession.start(self.params, random.Random(0), m_a=BitString(0, 16))

    def test_secrets_stay_out_of_repr(self):
        text = repr(self.alice) + repr(self.bob)
        for secret in ("alpha_a=", "sigma_a=", "m_a=", "beta=", "rho=", "(t=", " t=", "(s=", " s="):
            self.assertNotIn(secret, text)


if __name__ == '__main__':
    unittest.main()
