"""Command-line front end: ``csicodec {gen,train,compress,decompress,eval,sweep}``.

Exit status is 0 on success, 2 on a usage error and 1 on any runtime error.
All randomness derives from ``--seed``.  Set CSICODEC_THREADS to limit the
BLAS thread pool.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .bitstream import Bitstream
from .channel import ChannelGenConfig, Dataset, generate_channels, read_dataset, \
    spacing_preserving_fs, write_dataset
from .checkpoint import ModelCheckpoint
from .codec import PAD_POLICIES, compress, decompress, evaluate, pad_to_16, rd_sweep, \
    write_rd_csv
from .metrics import cosine_corr, nmse
from .training import LAMBDA_TABLE, TrainConfig, lambda_id_for, train

log = logging.getLogger("csicodec")


class UsageError(Exception):
    """Flag combination that argparse cannot express; exits with status 2."""


def _add_pad(p):
    p.add_argument("--pad", choices=PAD_POLICIES, default="reject",
                   help="what to do with dims that are not multiples of 16 (default: reject)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csicodec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic channel dataset")
    p.add_argument("--nc", type=int, default=64, help="subcarriers (default 64)")
    p.add_argument("--nt", type=int, default=16, help="BS antennas (default 16)")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--paths", type=int, default=8)
    p.add_argument("--fs", type=float, default=None,
                   help="sampling rate in Hz (default keeps 78.125 kHz subcarrier spacing)")
    p.add_argument("--delay-spread", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("train", help="train a checkpoint for one lambda")
    p.add_argument("--data", required=True)
    lam = p.add_mutually_exclusive_group(required=True)
    lam.add_argument("--lambda-id", type=int, choices=range(len(LAMBDA_TABLE)), metavar="ID")
    lam.add_argument("--lambda", dest="lambda_value", type=float,
                     help="lambda value; the nearest table entry is used")
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--batch", type=int, default=TrainConfig.batch_size)
    p.add_argument("--lr", type=float, default=TrainConfig.lr)
    p.add_argument("--width", type=int, default=TrainConfig.width)
    p.add_argument("--seed", type=int, default=0)
    _add_pad(p)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("compress", help="compress one matrix of a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    _add_pad(p)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("decompress", help="reconstruct a matrix from a bitstream")
    p.add_argument("--model", required=True)
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True, help="dataset file holding the one matrix")

    p = sub.add_parser("eval", help="NMSE and rho of a reconstruction or of a model on a test set")
    p.add_argument("--data", required=True, help="reference dataset")
    p.add_argument("--recon", help="reconstructed dataset to compare against --data")
    p.add_argument("--index", type=int, help="reference sample matching a one-matrix --recon")
    p.add_argument("--model", help="checkpoint to run over the whole of --data")
    _add_pad(p)

    p = sub.add_parser("sweep", help="rate-distortion table over several checkpoints")
    p.add_argument("--models", required=True, help="comma-separated checkpoint paths")
    p.add_argument("--data", required=True)
    _add_pad(p)
    p.add_argument("-o", "--output", required=True, help="CSV report")
    return parser


def _sample(ds: Dataset, index: int) -> np.ndarray:
    if not 0 <= index < len(ds):
        raise UsageError(f"--index {index} is out of range for {len(ds)} samples")
    return ds.samples[index]


def cmd_gen(args) -> None:
    fs = args.fs if args.fs is not None else spacing_preserving_fs(args.nc)
    cfg = ChannelGenConfig(n_c=args.nc, n_t=args.nt, paths=args.paths, f_s=fs,
                           delay_spread=args.delay_spread, seed=args.seed)
    if args.count < 0:
        raise UsageError("--count must be non-negative")
    write_dataset(Dataset(generate_channels(cfg, args.count)), args.output)
    print(f"wrote {args.count} samples of {args.nc}x{args.nt} to {args.output}")


def cmd_train(args) -> None:
    lambda_id = args.lambda_id
    if lambda_id is None:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            lambda_id = lambda_id_for(args.lambda_value)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    ds = read_dataset(args.data)
    samples, _ = pad_to_16(ds.samples, args.pad)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr,
                      width=args.width, seed=args.seed)

    def progress(epoch, terms):
        log.info("epoch %d/%d rate %.4f mse %.3e", epoch + 1, cfg.epochs, terms.rate, terms.mse)

    result = train(samples, lambda_id, cfg, progress=progress)
    ModelCheckpoint.from_training(result).save(args.output)
    last = result.history[-1] if result.history else None
    summary = f" final rate {last.rate:.4f} mse {last.mse:.3e}" if last else ""
    print(f"saved lambda id {lambda_id} ({LAMBDA_TABLE[lambda_id]:g}) to {args.output}{summary}")


def cmd_compress(args) -> None:
    ckpt = ModelCheckpoint.load(args.model)
    h = _sample(read_dataset(args.data), args.index)
    stream = compress(h, ckpt, pad=args.pad)
    Path(args.output).write_bytes(stream.to_bytes())
    print(f"{len(stream.payload)} payload bytes, bit rate {stream.bit_rate:.5f} "
          f"(framed {stream.framed_bit_rate:.5f}) bits per dimension")


def cmd_decompress(args) -> None:
    ckpt = ModelCheckpoint.load(args.model)
    stream = Bitstream.from_bytes(Path(args.input).read_bytes())
    h_hat = decompress(stream, ckpt)
    write_dataset(Dataset(h_hat[None]), args.output)
    print(f"wrote {stream.n_c}x{stream.n_t} reconstruction to {args.output}")


def cmd_eval(args) -> None:
    if (args.recon is None) == (args.model is None):
        raise UsageError("eval needs exactly one of --recon or --model")
    ref = read_dataset(args.data)
    if args.model is not None:
        point = evaluate(ModelCheckpoint.load(args.model), ref.samples, pad=args.pad)
        print(f"lambda={point.lambda_value:g} bit_rate={point.bit_rate:.6f} "
              f"entropy={point.entropy:.6f} nmse_db={point.nmse_db:.4f} rho={point.rho:.6f}")
        return
    rec = read_dataset(args.recon)
    h = ref.samples
    if args.index is not None:
        h = _sample(ref, args.index)[None]
    elif len(rec) == 1 and len(ref) > 1:
        raise UsageError("--recon holds one matrix; pass --index to pick the reference")
    h_hat = rec.samples
    if h_hat.shape[1:] != h.shape[1:]:
        raise ValueError(f"reconstruction is {h_hat.shape[1]}x{h_hat.shape[2]}, "
                         f"reference is {h.shape[1]}x{h.shape[2]}")
    print(f"nmse_db={nmse(h, h_hat):.4f} rho={cosine_corr(h, h_hat):.6f}")


def cmd_sweep(args) -> None:
    paths = [s for s in args.models.split(",") if s]
    if not paths:
        raise UsageError("--models is empty")
    ckpts = [ModelCheckpoint.load(p) for p in paths]
    points = rd_sweep(ckpts, read_dataset(args.data).samples, pad=args.pad)
    sys.stdout.write(write_rd_csv(points, args.output))


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "compress": cmd_compress,
    "decompress": cmd_decompress,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"{parser.prog} {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
