"""Command-line interface.

Subcommands: process, simulate, metrics, gradcheck, traintoy, bench,
init-weights.  Exit codes: 0 ok, 2 input error, 3 numeric error.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dsp import RATE, AudioBuffer
from .metrics import ChunkPlan, MetricReport, erle, seg_sisnr, si_snr
from .model import (ModelConfig, NumericError, StreamingSession, WeightError,
                    count_params, forward, init_weights)
from .scene import (Corpus, SceneRanges, build_rir_bank,
                    make_training_examples, sample_recipe, synthesize,
                    synthetic_corpus)
from .training import toy_train
from .wavio import WavFormatError, read_wav, write_wav
from .weights_io import WeightFormatError, load_weights, save_weights


class InputError(ValueError):
    pass


def _single_threaded():
    try:
        from threadpoolctl import threadpool_limits
        return threadpool_limits(limits=1)
    except ImportError:
        import contextlib
        return contextlib.nullcontext()


def _load_model(path):
    store = load_weights(path)
    if "config" not in store.meta:
        raise InputError(f"{path}: weight file carries no model config")
    cfg = ModelConfig.from_dict(store.meta["config"])
    return store, cfg


def _config_by_name(name, seed=0):
    if name == "paper":
        return ModelConfig.paper_mode(seed=seed)
    if name == "desk":
        return ModelConfig.desk_mode(seed=seed)
    raise InputError(f"unknown config {name!r}")


def _print_report(report):
    print(json.dumps(report, sort_keys=True))


# ---- subcommands ---------------------------------------------------------


def cmd_process(args):
    mic = read_wav(args.mic)
    far = read_wav(args.farend)
    store, cfg = _load_model(args.weights)
    rep = {"tool_version": __version__, "config_hash": cfg.config_hash(),
           "mode": "streaming" if args.streaming else "offline"}
    t0 = time.perf_counter()
    with _single_threaded():
        if args.streaming:
            n = max(len(mic), len(far))
            pad = (-n) % cfg.stft.hop
            y = np.pad(mic.samples, (0, n - len(mic) + pad))
            x = np.pad(far.samples, (0, n - len(far) + pad))
            sess = StreamingSession(store, cfg)
            chunks = []
            for i in range(0, len(y), cfg.stft.hop):
                chunks.append(sess.feed(y[i:i + cfg.stft.hop], x[i:i + cfg.stft.hop]))
            chunks.append(sess.flush())
            s_hat = AudioBuffer(np.concatenate(chunks), RATE)
            rep["latency_samples"] = sess.algorithmic_latency
        else:
            _, s_hat = forward(mic, far, store, cfg, report=rep)
    wall = time.perf_counter() - t0
    clipped = write_wav(args.out, s_hat)
    rep["rtf"] = wall / max(mic.duration, 1e-9)
    rep["processing_seconds"] = wall
    rep["audio_seconds"] = mic.duration
    rep["clipped_samples"] = clipped
    _print_report(rep)


def _parse_ranges_file(path):
    kw = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition("=")
        key = key.strip()
        parts = [p.strip() for p in val.split(",")]
        if len(parts) == 1:
            kw[key] = float(parts[0])
        else:
            kw[key] = tuple(float(p) for p in parts)
    if "delay_samples" in kw:
        kw["delay_samples"] = tuple(int(v) for v in kw["delay_samples"])
    return SceneRanges(**kw)


def _load_corpus_dir(path, seed, n_rirs):
    root = Path(path)
    pools = {}
    for name in ("near", "far", "noise"):
        d = root / name
        if not d.is_dir():
            raise InputError(f"corpus missing directory {d}")
        clips = {p.stem: read_wav(p) for p in sorted(d.glob("*.wav"))}
        if not clips:
            raise InputError(f"corpus directory {d} holds no WAV files")
        pools[name] = clips
    echo = {}
    echo_dir = root / "echo"
    if echo_dir.is_dir():
        echo = {p.stem: read_wav(p) for p in sorted(echo_dir.glob("*.wav"))}
    rirs = build_rir_bank(n_rirs, seed=seed + 1)
    return Corpus(near=pools["near"], far=pools["far"], noise=pools["noise"],
                  rirs=rirs, echo=echo)


def cmd_simulate(args):
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    ranges = _parse_ranges_file(args.ranges) if args.ranges else SceneRanges()
    if args.corpus:
        corpus = _load_corpus_dir(args.corpus, args.seed, args.rirs)
    else:
        corpus = synthetic_corpus(seed=args.seed, n_rirs=args.rirs,
                                  clip_seconds=args.clip_seconds)
    rng = np.random.default_rng(args.seed)
    manifest = outdir / "manifest.jsonl"
    with open(manifest, "w") as mf:
        for i in range(args.recipes):
            # redraw when a sampled scene is degenerate (e.g. silent near clip)
            for _ in range(100):
                recipe = sample_recipe(rng, ranges, corpus)
                try:
                    ex = synthesize(recipe, corpus)
                    break
                except ValueError:
                    continue
            else:
                raise InputError("could not draw a usable scene")
            paths = {}
            for name, buf in (("s", ex.s), ("x", ex.x), ("y", ex.y),
                              ("d", ex.d), ("v", ex.v)):
                p = outdir / f"ex{i:05d}_{name}.wav"
                write_wav(p, buf)
                paths[name] = p.name
            rec = recipe.to_dict()
            rec.update({
                "files": paths,
                "measured_ser_db": ex.measured_ser_db,
                "measured_snr_db": ex.measured_snr_db,
                "y_scale": ex.y_scale,
                "x_scale": ex.x_scale,
            })
            mf.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"wrote {args.recipes} examples and {manifest}")


def cmd_metrics(args):
    est = read_wav(args.est)
    ref = read_wav(args.ref)
    mic = read_wav(args.mic)
    if not (len(est) == len(ref) == len(mic)):
        raise InputError("est/ref/mic lengths differ")
    per_c = {}
    rep = MetricReport(
        si_snr_db=si_snr(est, ref),
        seg_sisnr_db=seg_sisnr(est, ref, ChunkPlan(), per_c=per_c),
        seg_sisnr_per_c=per_c,
        erle_db=erle(mic, est),
    )
    _print_report(rep.to_dict())


def cmd_gradcheck(args):
    from .gradcheck import run_gradient_suite
    results = run_gradient_suite(seed=args.seed)
    worst = 0.0
    failed = []
    for name, err in results.items():
        status = "ok" if err < args.tol else "FAIL"
        print(f"{name:32s} max-rel-err {err:.3e}  {status}")
        worst = max(worst, err)
        if err >= args.tol:
            failed.append(name)
    if failed:
        print(f"gradcheck failed for: {', '.join(failed)}")
        sys.exit(1)
    print(f"gradcheck passed (worst {worst:.3e} < {args.tol})")


def cmd_traintoy(args):
    cfg = _config_by_name(args.config, seed=args.seed)
    store = init_weights(cfg, seed=args.seed)
    corpus = synthetic_corpus(seed=args.seed,
                              clip_seconds=args.chunk_seconds + 0.5, n_rirs=2)
    rng = np.random.default_rng(args.seed)
    examples = make_training_examples(rng, corpus, args.examples,
                                      seconds=args.chunk_seconds)

    def log_fn(rec):
        print(json.dumps(rec, sort_keys=True))

    with _single_threaded():
        trained, log = toy_train(store, cfg, examples, steps=args.steps,
                                 lr=args.lr, log_fn=log_fn)
    if args.out:
        save_weights(args.out, trained)
        print(f"saved trained weights to {args.out}")
    print(f"loss {log[0]['loss']:.3f} -> {log[-1]['loss']:.3f} "
          f"over {args.steps} steps")


def cmd_bench(args):
    if args.weights:
        store, cfg = _load_model(args.weights)
    else:
        cfg = _config_by_name(args.config, seed=args.seed)
        store = init_weights(cfg, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    n = int(args.seconds * RATE)
    y = AudioBuffer(0.1 * rng.normal(size=n))
    x = AudioBuffer(0.1 * rng.normal(size=n))
    with _single_threaded():
        t0 = time.perf_counter()
        forward(y, x, store, cfg)
        wall = time.perf_counter() - t0
    sess = StreamingSession(store, cfg)
    rep = {
        "tool_version": __version__,
        "audio_seconds": args.seconds,
        "processing_seconds": wall,
        "rtf": wall / args.seconds,
        "latency_samples": sess.algorithmic_latency,
        "latency_ms": 1000.0 * sess.algorithmic_latency / RATE,
        "params": count_params(store),
    }
    _print_report(rep)


def cmd_init_weights(args):
    cfg = _config_by_name(args.config, seed=args.seed)
    store = init_weights(cfg, seed=args.seed)
    save_weights(args.out, store)
    print(f"wrote {args.out}: {count_params(store)} parameters "
          f"(config {args.config}, seed {args.seed})")


# ---- argument parsing ----------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="dcaec", description="Deep complex AEC engine")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("process", help="cancel echo in a mic recording")
    sp.add_argument("--mic", required=True)
    sp.add_argument("--farend", required=True)
    sp.add_argument("--weights", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--streaming", action="store_true")
    sp.set_defaults(func=cmd_process)

    sp = sub.add_parser("simulate", help="generate synthetic scenes")
    sp.add_argument("--recipes", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--outdir", required=True)
    sp.add_argument("--ranges", default=None, help="key=value ranges file")
    sp.add_argument("--corpus", default=None, help="directory with near/ far/ noise/ WAVs")
    sp.add_argument("--rirs", type=int, default=8)
    sp.add_argument("--clip-seconds", type=float, default=4.0)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("metrics", help="score an estimate against a reference")
    sp.add_argument("--est", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--mic", required=True)
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("traintoy", help="desk-scale training smoke run")
    sp.add_argument("--steps", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--examples", type=int, default=8)
    sp.add_argument("--chunk-seconds", type=float, default=1.0)
    sp.add_argument("--config", default="desk", choices=["desk", "paper"])
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_traintoy)

    sp = sub.add_parser("bench", help="measure RTF and latency")
    sp.add_argument("--weights", default=None)
    sp.add_argument("--config", default="paper", choices=["desk", "paper"])
    sp.add_argument("--seconds", type=float, default=10.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("init-weights", help="write a seeded random weight file")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--config", default="paper", choices=["desk", "paper"])
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_init_weights)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (InputError, WavFormatError, WeightFormatError, WeightError,
            FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        sys.exit(2)
    except (NumericError, FloatingPointError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        sys.exit(3)


if __name__ == "__main__":
    main()
