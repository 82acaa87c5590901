"""Command-line entry point: ``qkdnet <verb> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .decoy import analyze_measured
from .errors import KeyExhaustedError, QKDError
from .keynet import FrameType, KeyPool, KeyStore, Sequencer, encode_frame, iter_frames
from .otp import OTP_HEADER, otp_decrypt, otp_encrypt
from .randtest import DEFAULT_ALPHA, DEFAULT_BLOCK_LEN, battery
from .scenario import (
    BUILTIN_SCENARIOS,
    FORMATS,
    REFERENCE_MEASURED,
    emit_report,
    load_measured,
    load_scenario,
    render_estimate,
    run_scenario,
)

MAX_CHUNK_BYTES = 60_000


def _write(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_simulate(args):
    overrides = dict(seed=args.seed, duration_s=args.duration, keystore_dir=args.keystore_dir)
    if args.scenario in BUILTIN_SCENARIOS:
        kw = {k: v for k, v in overrides.items() if v is not None}
        scenario = BUILTIN_SCENARIOS[args.scenario](**kw)
    else:
        scenario = load_scenario(args.scenario, **overrides)
    report = run_scenario(scenario)
    text = emit_report(report, args.format, args.out)
    if not args.out:
        sys.stdout.write(text)
    if args.record:
        emit_report(report, "structured-record", args.record)
    return 0


def cmd_analyze(args):
    if args.preset:
        kwargs = dict(REFERENCE_MEASURED)
    else:
        if not args.measured:
            raise SystemExit("analyze needs a measured-values file or --preset table2")
        kwargs = {**REFERENCE_MEASURED, **load_measured(args.measured)} if args.defaults else load_measured(args.measured)
    for name in ("sigma_k", "q", "f"):
        value = getattr(args, name)
        if value is not None:
            kwargs[name] = value
    est = analyze_measured(**kwargs)
    _write(render_estimate(est, args.format), args.out)
    return 0 if est.valid else 1


def cmd_keys(args):
    rows = [KeyStore.open(p).summary() for p in args.stores]
    if args.format == "structured-record":
        _write(json.dumps(rows, sort_keys=True, indent=2) + "\n", None)
        return 0
    print(f"{'store':<32} {'link':>4} {'blocks':>6} {'total':>10} {'consumed':>10} {'available':>10}")
    for path, r in zip(args.stores, rows):
        print(
            f"{Path(path).name:<32} {r['link_id']:>4} {r['blocks']:>6} {r['total_bits']:>10} "
            f"{r['consumed_bits']:>10} {r['available_bits']:>10}"
        )
    return 0


def _generator_chunks(rate_bps, seconds, seed):
    rng = np.random.default_rng(seed)
    credit = 0.0
    for _ in range(int(seconds)):
        credit += rate_bps / 8.0
        n = int(credit)
        credit -= n
        yield rng.integers(0, 256, n, dtype=np.uint8).tobytes()


def _file_chunks(path):
    data = Path(path).read_bytes()
    for off in range(0, len(data), MAX_CHUNK_BYTES):
        yield data[off : off + MAX_CHUNK_BYTES]


def cmd_otp_send(args):
    store = KeyStore.open(args.keystore)
    pool = KeyPool.from_store(store)
    if args.input:
        chunks = _file_chunks(args.input)
    else:
        chunks = _generator_chunks(args.rate, args.seconds, args.seed)
    seq = Sequencer()
    offset = 0
    with open(args.output, "wb") as fh:
        for chunk in chunks:
            try:
                pad = pool.draw(8 * len(chunk))
            except KeyExhaustedError as exc:
                print(f"starved after {offset} bytes: {exc}", file=sys.stderr)
                return 2
            payload = OTP_HEADER.pack(args.session_id, offset) + otp_encrypt(chunk, pad)
            fh.write(encode_frame(seq.frame(FrameType.OTP_DATA, store.link_id, payload)))
            fh.flush()
            offset += len(chunk)
            if args.realtime and not args.input:
                time.sleep(1.0)
    print(f"sent {offset} bytes, {pool.available} key bits left", file=sys.stderr)
    return 0


def cmd_otp_recv(args):
    store = KeyStore.open(args.keystore)
    pool = KeyPool.from_store(store)
    expected = 0
    out = bytearray()
    for frame in iter_frames(Path(args.input).read_bytes()):
        if frame.type != FrameType.OTP_DATA:
            continue
        sid, offset = OTP_HEADER.unpack_from(frame.payload)
        if sid != args.session_id:
            continue
        if offset != expected:
            raise QKDError(f"stream offset {offset} does not follow {expected}")
        cipher = frame.payload[OTP_HEADER.size :]
        out += otp_decrypt(cipher, pool.draw(8 * len(cipher)))
        expected += len(cipher)
    Path(args.output).write_bytes(bytes(out))
    print(f"received {len(out)} bytes", file=sys.stderr)
    return 0


def cmd_randtest(args):
    data = Path(args.keyfile).read_bytes()
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    if args.n_bits:
        bits = bits[: args.n_bits]
    summary = battery(bits, args.alpha, block_bits=args.block_bits, block_len=args.block_len)
    if args.format == "structured-record":
        _write(json.dumps(summary.to_dict(), sort_keys=True, indent=2) + "\n", None)
    else:
        print(summary.table())
    return 0 if summary.all_pass(args.min_pass_rate) else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="qkdnet", description="Decoy-state QKD trusted-relay network simulator.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("simulate", help="run a scenario file or a built-in scenario")
    p.add_argument("scenario", help=f"INI scenario file or one of {sorted(BUILTIN_SCENARIOS)}")
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float, help="simulated seconds")
    p.add_argument("--format", choices=FORMATS, default="text-table")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--record", help="also write the structured record here")
    p.add_argument("--keystore-dir", help="persist every pool copy under this directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="decoy bounds from measured values")
    p.add_argument("measured", nargs="?", help="INI file with a [measured] section")
    p.add_argument("--preset", choices=["table2"])
    p.add_argument("--defaults", action="store_true", help="fill missing values from the table2 preset")
    p.add_argument("--sigma-k", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--f", type=float)
    p.add_argument("--format", choices=FORMATS, default="text-table")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("keys", help="summarize key-store files")
    p.add_argument("stores", nargs="+")
    p.add_argument("--format", choices=["text-table", "structured-record"], default="text-table")
    p.set_defaults(func=cmd_keys)

    p = sub.add_parser("otp-send", help="one-time-pad encrypt a file or generated stream into frames")
    p.add_argument("--keystore", required=True, help="sender's key-store copy")
    p.add_argument("--output", required=True, help="frame file to write")
    p.add_argument("--input", help="plaintext file (omit for generator mode)")
    p.add_argument("--rate", type=float, default=600.0, help="generator payload bits per second")
    p.add_argument("--seconds", type=float, default=10.0, help="generator duration")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--realtime", action="store_true", help="pace generator frames at one per second")
    p.add_argument("--session-id", type=int, default=1)
    p.set_defaults(func=cmd_otp_send)

    p = sub.add_parser("otp-recv", help="decrypt a frame file")
    p.add_argument("--keystore", required=True, help="receiver's key-store copy")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--session-id", type=int, default=1)
    p.set_defaults(func=cmd_otp_recv)

    p = sub.add_parser("randtest", help="randomness battery on a packed key file")
    p.add_argument("keyfile")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--block-bits", type=int, help="bits per tested block (default: whole file)")
    p.add_argument("--block-len", type=int, default=DEFAULT_BLOCK_LEN)
    p.add_argument("--n-bits", type=int)
    p.add_argument("--min-pass-rate", type=float, default=0.95)
    p.add_argument("--format", choices=["text-table", "structured-record"], default="text-table")
    p.set_defaults(func=cmd_randtest)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (QKDError, ValueError, OSError) as exc:
        print(f"qkdnet {args.verb}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
