"""Command-line entry point: ``nsfkit <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np


def _cmd_extract(args) -> int:
    from .audio_io import read_features, read_wav, write_features
    from .features import extract_features

    w = read_wav(args.wav)
    f0 = read_features(args.f0, 1)[:, 0] if args.f0 else None
    feat = extract_features(w, f0=f0)
    write_features(feat.frames, args.out)
    print(f"{args.out}: {len(feat)} frames x {feat.frames.shape[1]} dims")
    return 0


def _cmd_train(args) -> int:
    from .config import load_config
    from .train import DatasetManifest, TrainLog, train

    cfg = load_config(args.config)
    manifest = DatasetManifest.read(args.manifest)
    _, tlog = train(manifest, cfg.model, cfg.train, cfg.loss, out_dir=args.out,
                    on_epoch=lambda rec: print(TrainLog.format(rec), flush=True))
    print(f"best epoch {tlog.best_epoch}; checkpoint {os.path.join(args.out, 'best.ckpt')}")
    return 0


def _cmd_synth(args) -> int:
    from .audio_io import read_features, write_wav
    from .checkpoint import load_checkpoint
    from .models import FeatureSequence
    from .synth import synthesize

    model, _ = load_checkpoint(args.checkpoint)
    frames = read_features(args.features, 1 + model.cfg.spectral_dim)
    result = synthesize(model, FeatureSequence(frames), seed=args.seed,
                        dump_blocks=args.dump_blocks is not None)
    write_wav(result.waveform, args.out)
    if args.dump_blocks is not None:
        os.makedirs(args.dump_blocks, exist_ok=True)
        for name, signal in result.taps.items():
            np.asarray(signal, dtype="<f4").tofile(os.path.join(args.dump_blocks, f"{name}.f32"))
    if args.timing:
        print(result.timing_report())
    return 0


def _cmd_design_fir(args) -> int:
    from .fir import design_bank, frequency_response, measure

    bank = design_bank(args.sample_rate)
    for name, c in bank.items():
        m = measure(c, c.spec)
        print(f"# {name} order={c.order} pass={c.spec.passband} stop={c.spec.stopband} "
              f"stop_max_db={m['stop_max_db']:.2f} ripple_db={m['peak_ripple_db']:.2f}")
        print("taps " + " ".join(f"{t:.10g}" for t in c.taps))
    if args.response:
        omega, db = zip(*(frequency_response(c, args.grid) for c in bank.values()))
        hz = omega[0] * args.sample_rate / (2 * np.pi)
        print("freq_hz," + ",".join(bank))
        step = max(len(hz) // args.rows, 1)
        for i in range(0, len(hz), step):
            print(f"{hz[i]:.1f}," + ",".join(f"{d[i]:.2f}" for d in db))
    return 0


def _cmd_check_grad(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(args.instances, args.seed, progress=lambda r: print(r.line(), flush=True))
    if args.model:
        from .modelcheck import check_model_gradients
        res = check_model_gradients(args.model, seed=args.seed)
        print(res.line())
        results.append(res)
    return 0 if all(r.ok for r in results) else 1


def _cmd_count_params(args) -> int:
    from .config import load_config
    from .models import NSFModel, parameter_table
    from dataclasses import replace

    base = load_config(args.config).model
    kinds = [args.kind] if args.kind else ["b-NSF", "s-NSF", "hn-NSF"]
    for kind in kinds:
        model = NSFModel(replace(base, kind=kind))
        table = parameter_table(model)
        print(f"# {kind}")
        print(f"{'name':<40} {'shape':<18} {'count':>9}")
        for name, shape, n in table:
            print(f"{name:<40} {'x'.join(map(str, shape)):<18} {n:>9}")
        print(f"{'total':<40} {'':<18} {sum(n for *_, n in table):>9}")
    return 0


def _cmd_bench(args) -> int:
    from dataclasses import replace

    from .config import load_config
    from .models import NSFModel
    from .synth import bench

    base = load_config(args.config).model
    kinds = [args.kind] if args.kind else ["s-NSF", "b-NSF", "hn-NSF"]
    for kind in kinds:
        res = bench(NSFModel(replace(base, kind=kind)), args.durations, args.repeats)
        print(res.report())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nsfkit", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("extract", help="wav -> F0 + mel features (raw float32)")
    s.add_argument("wav")
    s.add_argument("out")
    s.add_argument("--f0", help="external per-frame F0 track (raw float32, 1 dim)")
    s.set_defaults(func=_cmd_extract)

    s = sub.add_parser("train", help="config + manifest -> checkpoint + log")
    s.add_argument("--config")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("synth", help="checkpoint + features -> wav")
    s.add_argument("checkpoint")
    s.add_argument("features")
    s.add_argument("out")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dump-blocks", metavar="DIR", help="write per-block signals as .f32")
    s.add_argument("--timing", action="store_true")
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("design-fir", help="design the voiced/unvoiced filter bank")
    s.add_argument("--sample-rate", type=float, default=16000.0)
    s.add_argument("--response", action="store_true", help="also print a dB response table")
    s.add_argument("--grid", type=int, default=4096)
    s.add_argument("--rows", type=int, default=64)
    s.set_defaults(func=_cmd_design_fir)

    s = sub.add_parser("check-grad", help="finite-difference gradient suite")
    s.add_argument("--instances", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--model", choices=["b-NSF", "s-NSF", "hn-NSF"],
                   help="also check a reduced model end to end")
    s.set_defaults(func=_cmd_check_grad)

    s = sub.add_parser("count-params", help="per-layer parameter table")
    s.add_argument("--kind", choices=["b-NSF", "s-NSF", "hn-NSF"])
    s.add_argument("--config")
    s.set_defaults(func=_cmd_count_params)

    s = sub.add_parser("bench", help="synthesis time versus duration")
    s.add_argument("--kind", choices=["b-NSF", "s-NSF", "hn-NSF"])
    s.add_argument("--config")
    s.add_argument("--durations", type=float, nargs="+", default=[1.0, 2.0, 4.0, 8.0])
    s.add_argument("--repeats", type=int, default=3)
    s.set_defaults(func=_cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    from .config import thread_limit

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with thread_limit():
            return args.func(args)
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
