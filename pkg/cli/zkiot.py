# zkiot command-line front end.
# keygen / prove / verify work on single gate programs; run executes a
# scenario end to end and writes its artifacts; inspect reads them back.
#
# Exit codes: 0 success (or every expectation met), 1 verification reject
# (or an unmet expectation), 2 usage, configuration or encoding error.

import argparse
import json
import logging
import os
import struct
import sys

# Add project root to path
current_dir = os.path.dirname(os.path.abspath(__file__))
project_root = os.path.dirname(current_dir)
if project_root not in sys.path:
    sys.path.insert(0, project_root)

from common import config, fc_scheme
from common.errors import ConfigError, EncodingError, NotFound, ZkIotError
from common.fc_scheme import ProvingKey, VerificationKey
from common.field import FieldElement
from common.protocol import ByteReader, pack_frames, unpack_frames
from common.r1cs import build_program, execute_program, format_program, parse_program
from common.run_store import (ESCROW_FILE, LEDGER_FILE, METRICS_FILE, SESSIONS_FILE, TRANSCRIPT_FILE,
                              RunStore)
from common.scenario_config import load_scenario
from server.world import run_scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_REJECT = 1
EXIT_USAGE = 2

PP_FILE = 'pp.bin'
PK_FILE = 'pk.bin'
VK_FILE = 'vk.bin'
FIRMWARE_FILE = 'firmware.prog'

# inspect query -> (artifact, column names)
QUERIES = {
    "records": (LEDGER_FILE, ("height", "index", "kind", "digest")),
    "proofs": (LEDGER_FILE, ("height", "index", "kind", "digest")),
    "escrow": (ESCROW_FILE, ("session", "state", "amount", "depositor", "beneficiary")),
    "transcript": (TRANSCRIPT_FILE, ("tick", "session", "state", "kind", "route", "digest")),
    "sessions": (SESSIONS_FILE, ("session", "state", "expect", "met", "chain")),
    "metrics": (METRICS_FILE, ("phase", "count", "mean_us", "min_us", "max_us", "total_us")),
}


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_USAGE


def _read(path: str) -> bytes:
    with open(path, 'rb') as f:
        return f.read()


def _write(path: str, data: bytes):
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    with open(path, 'wb') as f:
        f.write(data)


# === Proof file ===
# frame 0: modulus (8) || count (4) || public values; frame 1: proof bundle

def encode_proof_file(public, proof_bytes: bytes, modulus: int) -> bytes:
    header = struct.pack('!QI', modulus, len(public)) + b''.join(v.to_bytes() for v in public)
    return pack_frames([header, proof_bytes])


def decode_proof_file(data: bytes) -> tuple[tuple[FieldElement, ...], bytes]:
    header, proof_bytes = unpack_frames(data, expected=2)
    reader = ByteReader(header)
    modulus, count = reader.u64(), reader.u32()
    if count > config.MAX_CONSTRAINTS:
        raise EncodingError(f"Implausible public count {count}")
    public = tuple(FieldElement.from_bytes(reader.read(8), modulus) for _ in range(count))
    reader.finish()
    return public, proof_bytes


# === Commands ===

def cmd_keygen(args) -> int:
    try:
        with open(args.firmware, 'r', encoding='utf-8') as f:
            firmware = parse_program(f.read())
        inst = build_program(firmware, args.modulus)
        pp, pk, vk = fc_scheme.setup(args.security, inst)
    except FileNotFoundError:
        return _fail(f"firmware '{args.firmware}' not found")
    except (ValueError, ZkIotError) as e:
        return _fail(f"{args.firmware}: {e}")

    _write(os.path.join(args.out, PP_FILE), pp.to_bytes())
    _write(os.path.join(args.out, PK_FILE), pk.to_bytes())
    _write(os.path.join(args.out, VK_FILE), vk.to_bytes())
    _write(os.path.join(args.out, FIRMWARE_FILE), format_program(firmware).encode('utf-8'))
    logger.info(f"Keys for {args.firmware}: n={inst.n}, n_hat={pp.n_hat}, m_hat={pp.m_hat}")
    print(vk.digest.hex())
    return EXIT_OK


def cmd_prove(args) -> int:
    try:
        pk = ProvingKey.from_bytes(_read(os.path.join(args.keys, PK_FILE)))
        vk = VerificationKey.from_bytes(_read(os.path.join(args.keys, VK_FILE)))
        firmware = parse_program(_read(os.path.join(args.keys, FIRMWARE_FILE)).decode('utf-8'))
        inputs = [FieldElement(int(x), pk.pp.modulus) for x in args.inputs]
        z = execute_program(firmware, inputs, pk.pp.modulus)
        bundle = fc_scheme.prove(pk, z, vk)
    except FileNotFoundError as e:
        return _fail(f"missing key file: {e.filename}")
    except (ValueError, ZkIotError) as e:
        return _fail(str(e))

    public = z.public_values(pk.instance)
    _write(args.out, encode_proof_file(public, bundle.to_bytes(), pk.pp.modulus))
    print(f"y = {public[-1].value}")
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        vk = VerificationKey.from_bytes(_read(os.path.join(args.keys, VK_FILE)))
        public, proof_bytes = decode_proof_file(_read(args.proof))
    except FileNotFoundError as e:
        return _fail(f"missing file: {e.filename}")
    except ZkIotError as e:
        return _fail(f"malformed input: {e}")

    verdict = fc_scheme.verify_bytes(vk, proof_bytes, public)
    if verdict:
        print("accept")
        return EXIT_OK
    print(verdict.describe())
    return EXIT_REJECT


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario, seed=args.seed)
        result = run_scenario(scenario)
    except ConfigError as e:
        return _fail(str(e))
    except ZkIotError as e:
        return _fail(f"{type(e).__name__}: {e}")

    store = RunStore(args.out)
    store.save_run("".join(line + "\n" for line in result.transcript), result.ledger, result.escrow,
                   result.sessions, result.metrics, result.chains)

    if args.format == "machine":
        print(json.dumps({"sessions": result.sessions, "metrics": result.metrics}, sort_keys=True))
    else:
        for s in result.sessions:
            mark = "ok" if s["met"] else "UNEXPECTED"
            print(f"{s['session']}: {s['state']} (expected {s['expect']}) {mark}")
        for phase, stats in result.metrics.items():
            if isinstance(stats, dict) and stats.get("count"):
                print(f"  {phase:<8} n={stats['count']:<3} mean {stats['mean_us']:.0f} us")
        print(f"  accepts={result.metrics['accepts']} rejects={result.metrics['rejects']}")
    return EXIT_OK if result.expectations_met else EXIT_REJECT


def _rows(store: RunStore, query: str) -> list[dict]:
    artifact, columns = QUERIES[query]
    if query == "sessions":
        return [{c: s[c] for c in columns} for s in store.load_json(artifact)]
    if query == "metrics":
        metrics = store.load_json(artifact)
        return [{"phase": phase, **{c: stats.get(c, "") for c in columns[1:]}}
                for phase, stats in metrics.items() if isinstance(stats, dict)]
    rows = []
    for line in store.load_text(artifact).splitlines():
        row = dict(zip(columns, line.split("|")))
        if query == "proofs" and row.get("kind") != "proof":
            continue
        rows.append(row)
    return rows


def cmd_inspect(args) -> int:
    store = RunStore(args.out)
    columns = QUERIES[args.query][1]
    filters = []
    for item in args.filter or []:
        key, sep, value = item.partition('=')
        if not sep or key not in columns:
            return _fail(f"bad filter '{item}' for {args.query}; fields: {', '.join(columns)}")
        filters.append((key, value))
    try:
        rows = _rows(store, args.query)
    except NotFound as e:
        return _fail(str(e))

    rows = [r for r in rows if all(str(r.get(k)) == v for k, v in filters)]
    for row in rows:
        if args.format == "machine":
            print("|".join(str(row[c]) for c in columns))
        else:
            print("  ".join(f"{c}={row[c]}" for c in columns))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zkiot", description="zk-IoT toolkit")
    parser.add_argument('--verbose', action='store_true', help='Debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('keygen', help='Setup for a gate program')
    p.add_argument('firmware', help='Gate program (.prog)')
    p.add_argument('--out', default='keys', help='Directory for pp/pk/vk files')
    p.add_argument('--modulus', type=int, default=config.DEFAULT_MODULUS)
    p.add_argument('--security', type=int, default=config.DEFAULT_SECURITY)
    p.set_defaults(handler=cmd_keygen)

    p = sub.add_parser('prove', help='Execute and prove')
    p.add_argument('--keys', default='keys', help='Directory written by keygen')
    p.add_argument('--inputs', nargs='+', required=True, help='Integer inputs')
    p.add_argument('--out', default='proof.bin')
    p.set_defaults(handler=cmd_prove)

    p = sub.add_parser('verify', help='Verify a proof file')
    p.add_argument('--keys', default='keys')
    p.add_argument('--proof', default='proof.bin')
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser('run', help='Run a scenario')
    p.add_argument('--scenario', required=True)
    p.add_argument('--out', default=config.RUN_DIR)
    p.add_argument('--seed', type=int, default=None, help='Overrides the scenario seed')
    p.add_argument('--format', choices=('text', 'machine'), default='text')
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser('inspect', help='Query run artifacts')
    p.add_argument('query', choices=sorted(QUERIES))
    p.add_argument('--out', default=config.RUN_DIR)
    p.add_argument('--filter', action='append', help='field=value (repeatable)')
    p.add_argument('--format', choices=('text', 'machine'), default='text')
    p.set_defaults(handler=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='[ZKIOT] %(asctime)s - %(message)s')
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
