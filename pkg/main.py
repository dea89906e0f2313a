"""
This is the main entry point for the oblivious transfer tools.

    python main.py setup   --n 4 --params ot.json [--seed S]
    python main.py alice   --params ot.json --listen 0.0.0.0:7512 [--m-a HEX --m-b HEX]
    python main.py bob     --params ot.json --connect host:7512 --choice a
    python main.py demo    --n 4 --seed 1 [--choice b]
    python main.py analyze density|permuted-subset|dlog-check [...]
    python main.py config  [--set KEY VALUE]

Exit codes: 0 success, 1 protocol failure, 2 usage error, 3 I/O error.
"""
import argparse
import logging
import random
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from analysis import (
    dlog_cross_check, permuted_subset_decide, permuted_subset_search,
    permuted_subset_search_by_decision, plant_permuted_subset, solution_density_experiment,
    PermutedSubsetInstance,
)
from config_manager import CONFIG_FILE, DEFAULTS, ConfigManager
from errors import EXIT_IO, EXIT_PROTOCOL, LengthMismatch, OTError, RecoveryFailed, SessionFailed, UsageError
from field_core import FieldParams, is_generator, is_probable_prime, sample_generator
from hashing import BitString, H2_DISCRETE_EXP, H2_VARIANTS, h2
from loader import PRESET_FILE, PresetLoader
from logger_config import setup_logging
from params import ProtocolParams, read_params_file, setup, validate, write_params_file
from protocol import AliceSession, BobSession, Side, mask_count
from transport import (
    AliceEndpoint, BobEndpoint, InProcessChannel, connect, open_listener, parse_address,
    run_protocol, serve_alice,
)

logger = logging.getLogger("Main")


def make_rng(seed: Optional[int], stream: str) -> random.Random:
    """Independent deterministic stream per role under --seed; OS entropy otherwise."""
    if seed is None:
        return random.SystemRandom()
    return random.Random(f"{seed}:{stream}")


def _parse_message(text: Optional[str], q: int, name: str) -> Optional[BitString]:
    if text is None:
        return None
    try:
        return BitString.from_hex(text, q)
    except (LengthMismatch, ValueError) as e:
        raise UsageError(f"{name} must be exactly {q // 4} hex digits: {e}") from None


def _load_checked_params(path: str, test_mode: bool) -> ProtocolParams:
    params = read_params_file(Path(path))
    violations = validate(params, test_mode=test_mode)
    if violations:
        raise UsageError(f"{path} fails validation: " + "; ".join(str(v) for v in violations))
    return params


def _print_counters(label: str, counters) -> None:
    print(f"{label}: h1 calls {counters.h1_calls}, h2 calls {counters.h2_calls}")


# --- Commands ---

def cmd_setup(args, config: ConfigManager) -> int:
    q = args.q if args.q is not None else config.get("q")
    params = setup(args.n, make_rng(args.seed, "setup"), p=args.p, q=q,
                   h2_variant=args.h2, domain_tag=config.get("h1_domain_tag").encode("utf-8"),
                   test_mode=args.test_mode)
    violations = validate(params, test_mode=args.test_mode)
    if violations:
        for v in violations:
            logger.error(str(v))
        return EXIT_PROTOCOL
    write_params_file(Path(args.params), params)
    print(f"p = {params.p}")
    print(f"bitlen(p) = {params.p.bit_length()}")
    print(f"q = {params.q}")
    return 0


def cmd_alice(args, config: ConfigManager) -> int:
    params = _load_checked_params(args.params, args.test_mode)
    m_a = _parse_message(args.m_a, params.q, "--m-a")
    m_b = _parse_message(args.m_b, params.q, "--m-b")
    rng = make_rng(args.seed, "alice")
    timeout = args.timeout if args.timeout is not None else config.get("timeout")
    address = parse_address(args.listen or f"0.0.0.0:{config.get('port')}", config.get("port"))

    listener = open_listener(address)
    logger.info(f"Alice listening on {address[0]}:{listener.getsockname()[1]}")
    try:
        outcomes = serve_alice(listener, lambda: AliceSession.start(params, rng, m_a, m_b),
                               timeout=timeout, max_connections=1)
    finally:
        listener.close()
    for outcome in outcomes:
        if isinstance(outcome.error, (OTError, OSError)):
            raise outcome.error
        if outcome.error is not None:
            raise SessionFailed(f"run with {outcome.peer} failed: {outcome.error!r}") from outcome.error
    print("Alice: run complete")
    return 0


def cmd_bob(args, config: ConfigManager) -> int:
    params = _load_checked_params(args.params, args.test_mode)
    choice = Side(args.choice)
    timeout = args.timeout if args.timeout is not None else config.get("timeout")
    address = parse_address(args.connect, config.get("port"))
    session = BobSession.start(params, make_rng(args.seed, "bob"))

    channel = connect(address, timeout)
    try:
        recovered = BobEndpoint(session, choice).run(channel)
    finally:
        channel.close()

    _, _, z = session.r3.side(choice)
    if h2(recovered, params.h2_spec) != z:
        raise RecoveryFailed(f"recovered message does not hash to z_{choice.value}")
    print(f"m_{choice.value} = {recovered.hex()}")
    _print_counters("Bob", session.counters)
    return 0


def cmd_demo(args, config: ConfigManager) -> int:
    q = args.q if args.q is not None else config.get("q")
    params = setup(args.n, make_rng(args.seed, "setup"), p=args.p, q=q,
                   domain_tag=config.get("h1_domain_tag").encode("utf-8"))
    m_a = _parse_message(args.m_a, params.q, "--m-a")
    m_b = _parse_message(args.m_b, params.q, "--m-b")
    alice = AliceSession.start(params, make_rng(args.seed, "alice"), m_a, m_b)
    bob = BobSession.start(params, make_rng(args.seed, "bob"))
    choice = Side(args.choice)
    timeout = args.timeout if args.timeout is not None else config.get("timeout")

    transcript = run_protocol(AliceEndpoint(alice), BobEndpoint(bob, choice), InProcessChannel.pair(timeout))

    print(f"n = {params.n}, p = {params.p}, q = {params.q}, K = {mask_count(params.n)}")
    print(f"transcript digest = {transcript.digest()}")
    print(f"m_{choice.value} = {transcript.recovered.hex()}")
    _print_counters("Alice", transcript.alice_counters)
    _print_counters("Bob", transcript.bob_counters)
    return 0


def _preset_settings(args, analysis: str) -> Dict[str, Any]:
    if not args.preset:
        return {}
    loader = PresetLoader(Path(args.presets)).load_all()
    return dict(loader.get_preset(args.preset, analysis).settings)


def _resolve(args, settings: Dict[str, Any], key: str, default: Any = None, required: bool = False) -> Any:
    """Explicit flag, then preset value, then default."""
    value = getattr(args, key, None)
    if value is None:
        value = settings.get(key, default)
    if value is None and required:
        raise UsageError(f"--{key.replace('_', '-')} is required (or give a --preset that sets it)")
    return value


def cmd_analyze_density(args, config: ConfigManager) -> int:
    settings = _preset_settings(args, "density")
    n = _resolve(args, settings, "n", required=True)
    p = _resolve(args, settings, "p")
    trials = _resolve(args, settings, "trials", 50)
    seed = _resolve(args, settings, "seed")
    workers = _resolve(args, settings, "workers", 1)

    report = solution_density_experiment(n, trials, make_rng(seed, "density"), p=p, workers=workers)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as f:
            report.to_csv(f)
        logger.info(f"CSV written to {args.csv}")
    else:
        report.to_csv(sys.stdout)
    print(f"# {report.summary()}")
    if not report.planted_always_found:
        logger.error("A planted t was missing from its solution set")
        return EXIT_PROTOCOL
    if not report.within_band():
        logger.warning("Mean solution count is outside a factor 4 of the prediction")
    return 0


def cmd_analyze_permuted_subset(args, config: ConfigManager) -> int:
    settings = _preset_settings(args, "permuted-subset")
    n = _resolve(args, settings, "n", required=True)
    modulus = _resolve(args, settings, "modulus", required=True)
    seed = _resolve(args, settings, "seed")
    plant = args.plant or bool(settings.get("plant", False))
    rng = make_rng(seed, "permuted-subset")

    if plant:
        inst, x_star, pi_star = plant_permuted_subset(n, modulus, rng)
        print(f"planted x = {''.join(map(str, x_star))}, pi = {pi_star}")
    else:
        inst = PermutedSubsetInstance(
            n=n, modulus=modulus,
            E=tuple(tuple(rng.randrange(modulus) for _ in range(n)) for _ in range(n)),
            f_vec=tuple(rng.randrange(modulus) for _ in range(n)),
        )

    found = permuted_subset_search(inst)
    if found is None:
        print("search: no solution")
        return EXIT_PROTOCOL if plant else 0
    x, pi = found
    print(f"search: x = {''.join(map(str, x))}, pi = {pi}, verified = {inst.satisfied_by(x, pi)}")
    by_decision = permuted_subset_search_by_decision(inst, permuted_subset_decide)
    print(f"self-reduction: x = {''.join(map(str, by_decision[0]))}, pi = {by_decision[1]}, "
          f"verified = {inst.satisfied_by(*by_decision)}")
    return 0 if inst.satisfied_by(x, pi) and inst.satisfied_by(*by_decision) else EXIT_PROTOCOL


def cmd_analyze_dlog_check(args, config: ConfigManager) -> int:
    settings = _preset_settings(args, "dlog-check")
    p = _resolve(args, settings, "p", required=True)
    g = _resolve(args, settings, "g")
    seed = _resolve(args, settings, "seed")
    if not is_probable_prime(p):
        raise UsageError(f"p = {p} is not prime")
    fp = FieldParams.from_prime(p)
    if g is None:
        g = sample_generator(fp, make_rng(seed, "dlog-check"))
    elif not is_generator(g, fp):
        raise UsageError(f"g = {g} does not generate F_{p}^x")
    mismatches = dlog_cross_check(fp, g)
    print(f"p = {p}, g = {g}: {mismatches} mismatches over {p - 1} elements")
    return 0 if mismatches == 0 else EXIT_PROTOCOL


def cmd_config(args, config: ConfigManager) -> int:
    for key, raw in args.set or []:
        if key not in DEFAULTS:
            raise UsageError(f"unknown config key '{key}' (known: {', '.join(sorted(DEFAULTS))})")
        kind = type(DEFAULTS[key])
        try:
            value = kind(raw)
        except ValueError:
            raise UsageError(f"{key} expects a {kind.__name__}, got '{raw}'") from None
        config.set(key, value)
        logger.info(f"Saved {key} = {value!r} to {config.config_path}")
    for key in sorted(DEFAULTS):
        print(f"{key} = {config.get(key)}")
    return 0


# --- Argument parsing ---

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="seed for deterministic runs")
    common.add_argument("--config", default=CONFIG_FILE, help="JSON config file (default: %(default)s)")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR (default from config)")
    common.add_argument("--timeout", type=float, help="network timeout in seconds")
    common.add_argument("--test-mode", action="store_true", help="accept the toy_identity h2")

    parser = argparse.ArgumentParser(prog="main.py", description="1-2 string oblivious transfer tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p_setup = sub.add_parser("setup", parents=[common], help="generate a parameter file")
    p_setup.add_argument("--n", type=int, required=True)
    p_setup.add_argument("--params", required=True, help="output path")
    p_setup.add_argument("--p", type=int, help="use this prime instead of generating one")
    p_setup.add_argument("--q", type=int, help="message length in bits")
    p_setup.add_argument("--h2", choices=H2_VARIANTS, default=H2_DISCRETE_EXP)
    p_setup.set_defaults(handler=cmd_setup)

    p_alice = sub.add_parser("alice", parents=[common], help="serve one run as Alice")
    p_alice.add_argument("--params", required=True)
    p_alice.add_argument("--listen", help="HOST:PORT")
    p_alice.add_argument("--m-a", help="q/4 hex digits; random when omitted")
    p_alice.add_argument("--m-b", help="q/4 hex digits; random when omitted")
    p_alice.set_defaults(handler=cmd_alice)

    p_bob = sub.add_parser("bob", parents=[common], help="connect as Bob and recover m_d")
    p_bob.add_argument("--params", required=True)
    p_bob.add_argument("--connect", required=True, help="HOST:PORT")
    p_bob.add_argument("--choice", choices=("a", "b"), required=True)
    p_bob.set_defaults(handler=cmd_bob)

    p_demo = sub.add_parser("demo", parents=[common], help="run both parties in process")
    p_demo.add_argument("--n", type=int, required=True)
    p_demo.add_argument("--p", type=int)
    p_demo.add_argument("--q", type=int)
    p_demo.add_argument("--choice", choices=("a", "b"), default="a")
    p_demo.add_argument("--m-a")
    p_demo.add_argument("--m-b")
    p_demo.set_defaults(handler=cmd_demo)

    p_config = sub.add_parser("config", parents=[common], help="show or change operator defaults")
    p_config.add_argument("--set", nargs=2, action="append", metavar=("KEY", "VALUE"),
                          help="store VALUE for KEY in the config file (repeatable)")
    p_config.set_defaults(handler=cmd_config)

    p_analyze = sub.add_parser("analyze", help="cryptanalysis experiments")
    analyses = p_analyze.add_subparsers(dest="analysis", required=True)
    presets = argparse.ArgumentParser(add_help=False)
    presets.add_argument("--preset", help="named preset")
    presets.add_argument("--presets", default=str(PRESET_FILE), help="preset file (default: %(default)s)")

    p_density = analyses.add_parser("density", parents=[common, presets],
                                    help="count solutions of the round 4/5 log system")
    p_density.add_argument("--n", type=int)
    p_density.add_argument("--p", type=int)
    p_density.add_argument("--trials", type=int)
    p_density.add_argument("--workers", type=int)
    p_density.add_argument("--csv", help="write CSV here instead of stdout")
    p_density.set_defaults(handler=cmd_analyze_density)

    p_subset = analyses.add_parser("permuted-subset", aliases=["challenge1"], parents=[common, presets],
                                   help="solve sum_j x_j e_ij + pi(i) = f_i by brute force")
    p_subset.add_argument("--n", type=int)
    p_subset.add_argument("--modulus", type=int)
    p_subset.add_argument("--plant", action="store_true", help="plant a known solution")
    p_subset.set_defaults(handler=cmd_analyze_permuted_subset)

    p_dlog = analyses.add_parser("dlog-check", parents=[common, presets],
                                 help="cross-check baby-step giant-step against a full power table")
    p_dlog.add_argument("--p", type=int)
    p_dlog.add_argument("--g", type=int)
    p_dlog.set_defaults(handler=cmd_analyze_dlog_check)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Runs one command and returns its exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    config = ConfigManager(args.config)
    setup_logging(args.log_level or config.get("log_level"))

    try:
        return args.handler(args, config)
    except OTError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
