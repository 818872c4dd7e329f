"""Command-line entry point: data prep, training, enhancement, evaluation, ablation.

Every subcommand is deterministic given its config and seed.  Exit codes:
0 success, 1 usage or configuration error, 2 runtime failure.  Logs go to
standard error; data goes to files or standard output.
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import json
import os
import sys
import time

import numpy as np

from .checkpoint import load_checkpoint
from .config import (
    ConfigError,
    ExperimentConfig,
    config_from_dict,
    desk_config,
    parse_config,
)
from .datapipe import MixSpec, incoherent_mix, read_corpus, remix_to_snr, synth_corpus, write_corpus
from .latents import FileLatentProvider, ToyLatentProvider, extract_toy, write_latent
from .metrics import evaluate_set
from .sampler import SamplerConfig, enhance
from .scorenet import FUSION_VARIANTS
from .sde import OuveSchedule, kernel_mean, kernel_std, kernel_var, simulate_forward
from .spectro import StftParams, mel_render, read_wav, stft, write_wav
from .train import train_loop

__all__ = ["main", "run_ablation"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _wavs_in(directory: str) -> list[str]:
    paths = sorted(glob.glob(os.path.join(directory, "*.wav")))
    if not paths:
        raise UsageError(f"no .wav files found in {directory}")
    return paths


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = parse_config(args.config)
    elif getattr(args, "preset", None) == "desk":
        cfg = desk_config(task=getattr(args, "task", None) or "vocal")
    else:
        raw = {}
        if getattr(args, "task", None):
            raw["task"] = args.task
        cfg = config_from_dict(raw)
    if getattr(args, "task", None):
        cfg = dataclasses.replace(cfg, task=args.task)
    if getattr(args, "steps", None):
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, max_steps=args.steps))
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(
            cfg,
            train=dataclasses.replace(cfg.train, seed=args.seed),
            data=dataclasses.replace(cfg.data, mix=dataclasses.replace(cfg.data.mix, seed=args.seed)),
        )
    cfg.validate()
    if getattr(args, "print_effective_config", False):
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    return cfg


def _latent_provider(cfg: ExperimentConfig):
    if cfg.latent.provider == "file":
        return FileLatentProvider(cfg.latent.file)
    return ToyLatentProvider(h=cfg.latent.h, seed=cfg.latent.seed)


def _training_pairs(cfg: ExperimentConfig, data: str):
    if data == "synthetic":
        return synth_corpus(
            cfg.data.n_pairs,
            seed=cfg.data.mix.seed,
            spec=cfg.data.mix,
            sample_rate=cfg.data.sample_rate,
        )
    manifest = data if data.endswith(".jsonl") else os.path.join(data, "manifest.jsonl")
    if not os.path.exists(manifest):
        raise UsageError(f"no manifest found at {manifest}; run 'synth' or 'remix' first")
    return read_corpus(manifest)


# ---------------------------------------------------------------- subcommands


def cmd_remix(args) -> int:
    vocals = [read_wav(p) for p in _wavs_in(args.vocals)]
    accomps = [read_wav(p) for p in _wavs_in(args.accomp)]
    if len(vocals) != len(accomps):
        raise UsageError(f"{len(vocals)} vocal files vs {len(accomps)} accompaniment files")
    records = []
    for i, (v, a) in enumerate(zip(vocals, accomps)):
        rec = remix_to_snr(v, a, args.snr, definition=args.snr_definition)
        rec.provenance.update({"mode": "remix", "index": i, "seed": args.seed})
        records.append(rec)
    manifest = write_corpus(records, args.out)
    _log(f"wrote {len(records)} remixed pairs, manifest {manifest}")
    return 0


def cmd_augment(args) -> int:
    if args.mode != "incoherent":
        raise UsageError(f"unknown augmentation mode {args.mode!r}")
    vocals = [read_wav(p) for p in _wavs_in(args.vocals)]
    accomps = [read_wav(p) for p in _wavs_in(args.accomp)]
    spec = MixSpec(target_snr_db=args.snr, segment_seconds=args.segment_seconds, seed=args.seed)
    records = incoherent_mix(vocals, accomps, args.n, spec, seed=args.seed)
    manifest = write_corpus(records, args.out)
    _log(f"wrote {len(records)} incoherent pairs, manifest {manifest}")
    return 0


def cmd_synth(args) -> int:
    spec = MixSpec(target_snr_db=args.snr, segment_seconds=args.segment_seconds, seed=args.seed)
    records = synth_corpus(args.n, seed=args.seed, spec=spec, sample_rate=args.sample_rate)
    manifest = write_corpus(records, args.out)
    _log(f"wrote {len(records)} synthetic pairs, manifest {manifest}")
    return 0


def cmd_extract_latents(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    for path in _wavs_in(getattr(args, "in")):
        latent = extract_toy(read_wav(path), h=args.H, seed=args.seed)
        out = os.path.join(args.out, os.path.splitext(os.path.basename(path))[0] + ".exlt")
        write_latent(latent, out)
        _log(f"{path} -> {out} ({latent.n_frames} x {latent.width})")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    pairs = _training_pairs(cfg, args.data)
    provider = _latent_provider(cfg)
    _log(f"training fusion={cfg.net.fusion} on {len(pairs)} pairs for {cfg.train.max_steps} steps")
    t0 = time.monotonic()
    losses = []
    def hook(step, loss):
        losses.append(loss)
        if (step + 1) % 100 == 0:
            _log(f"step {step + 1}: loss {np.mean(losses[-100:]):.4f}")
    ckpt = train_loop(
        pairs,
        provider,
        cfg.net,
        cfg.train,
        sched=cfg.schedule,
        stft_params=cfg.stft,
        chunk_frames=cfg.chunk_frames,
        compress_exponent=cfg.compression.exponent,
        compress_scale=cfg.compression.scale,
        out_dir=args.out,
        log_hook=hook,
        extra_config={"task": cfg.task, "sampler": cfg.to_dict()["sampler"]},
    )
    _log(f"finished in {time.monotonic() - t0:.1f}s; checkpoint {os.path.join(args.out, 'final.exdf')}")
    return 0


def cmd_enhance(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    stored = ckpt.config.get("sampler", {})
    cfg = SamplerConfig(
        n_steps=args.steps if args.steps is not None else stored.get("n_steps", 40),
        corrector_steps=(
            args.corrector_steps if args.corrector_steps is not None else stored.get("corrector_steps", 1)
        ),
        snr_r=args.snr_r if args.snr_r is not None else stored.get("snr_r", 0.5),
        seed=args.seed,
        use_ema=not args.raw_weights,
    )
    provider = FileLatentProvider(args.latent) if args.latent else None
    noisy = read_wav(getattr(args, "in"))
    out = enhance(noisy, ckpt, latent_provider=provider, cfg=cfg)
    write_wav(args.out, out)
    _log(f"enhanced {getattr(args, 'in')} -> {args.out} ({out.samples.shape[0]} samples)")
    return 0


def cmd_evaluate(args) -> int:
    enhanced = [read_wav(p) for p in _wavs_in(args.enhanced)]
    clean = [read_wav(p) for p in _wavs_in(args.clean)]
    interference = [read_wav(p) for p in _wavs_in(args.interference)]
    if not (len(enhanced) == len(clean) == len(interference)):
        raise UsageError("enhanced/clean/interference directories hold different clip counts")
    ids = [os.path.splitext(os.path.basename(p))[0] for p in _wavs_in(args.enhanced)]
    external = None
    if args.sidecar:
        with open(args.sidecar) as f:
            external = json.load(f)
    triples = []
    for e, c, i in zip(enhanced, clean, interference):
        n = min(e.samples.shape[0], c.samples.shape[0], i.samples.shape[0])
        cut = lambda w: dataclasses.replace(w, samples=w.samples[:n]) if w.samples.shape[0] > n else w
        triples.append((cut(e), cut(c), cut(i)))
    report = evaluate_set(triples, out=args.out, clip_ids=ids, external=external)
    print(report.format_table())
    return 0


def cmd_oracle(args) -> int:
    sched = OuveSchedule()
    rng = np.random.Generator(np.random.Philox(key=args.seed))
    shape = (4, 4)
    x0 = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * 0.3
    y = x0 + (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * 0.2
    ok = True
    for t in args.t:
        n_steps = max(1, int(round(t / args.dt)))
        stats = simulate_forward(x0, y, t, n_steps, args.paths, seed=args.seed, sched=sched)
        mean_err = float(np.max(np.abs(stats.empirical_mean - kernel_mean(x0, y, t, sched))))
        se = stats.mean_stderr(sched, t)
        var_rel = abs(stats.empirical_var - kernel_var(t, sched)) / kernel_var(t, sched)
        passed = mean_err <= 3.0 * se and var_rel <= 0.02
        ok = ok and passed
        print(
            f"t={t:<5g} mean_err={mean_err:.5f} (3se={3 * se:.5f}) "
            f"var_rel={var_rel:.4f} (tol 0.02) {'PASS' if passed else 'FAIL'}"
        )
    return 0 if ok else 2


def cmd_plot_mel(args) -> int:
    w = read_wav(getattr(args, "in"))
    params = StftParams(window_length=args.window, hop_length=args.hop, fft_size=args.fft_size)
    mel_render(stft(w, params), args.mels, args.out)
    _log(f"wrote {args.out}")
    return 0


def run_ablation(cfg: ExperimentConfig, variants: list[str], out_dir: str, n_eval: int = 4) -> list[dict]:
    """Train/evaluate each fusion variant under identical budgets and seeds.

    Returns one row per variant with aggregate metrics and wall time; a
    failed variant is marked and the others still run.  Results land in
    out_dir/ablation.json and a text table alongside.
    """
    if not variants:
        raise ValueError("need at least one fusion variant")
    os.makedirs(out_dir, exist_ok=True)
    train_pairs = synth_corpus(
        cfg.data.n_pairs, seed=cfg.data.mix.seed, spec=cfg.data.mix, sample_rate=cfg.data.sample_rate
    )
    held_out = synth_corpus(
        n_eval, seed=cfg.data.mix.seed + 10_000, spec=cfg.data.mix, sample_rate=cfg.data.sample_rate
    )
    provider = _latent_provider(cfg)
    rows = []
    for variant in variants:
        t0 = time.monotonic()
        row = {"variant": variant}
        try:
            spec_v = dataclasses.replace(cfg.net, fusion=variant)
            ckpt = train_loop(
                train_pairs,
                provider,
                spec_v,
                cfg.train,
                sched=cfg.schedule,
                stft_params=cfg.stft,
                chunk_frames=cfg.chunk_frames,
                compress_exponent=cfg.compression.exponent,
                compress_scale=cfg.compression.scale,
            )
            triples = []
            for rec in held_out:
                out = enhance(rec.mixture, ckpt, latent_provider=provider, cfg=cfg.sampler)
                triples.append((out, rec.clean, rec.interference))
            report = evaluate_set(triples)
            for name in ("si_sdr", "si_sir", "si_sar"):
                row[name] = report.aggregate[name]
        except Exception as e:  # a broken variant must not sink the others
            row["error"] = f"{type(e).__name__}: {e}"
        row["wall_time_s"] = round(time.monotonic() - t0, 2)
        rows.append(row)
        _log(f"ablation {variant}: {row.get('error', 'ok')} ({row['wall_time_s']}s)")

    with open(os.path.join(out_dir, "ablation.json"), "w") as f:
        json.dump({"config": cfg.to_dict(), "rows": rows}, f, indent=2)
    table = _ablation_table(rows)
    with open(os.path.join(out_dir, "ablation.txt"), "w") as f:
        f.write(table + "\n")
    return rows


def _ablation_table(rows: list[dict]) -> str:
    header = ["fusion variant", "SI-SDR", "SI-SIR", "SI-SAR", "time [s]"]
    body = []
    for row in rows:
        if "error" in row:
            body.append([row["variant"], f"FAILED: {row['error']}", "", "", f"{row['wall_time_s']}"])
            continue
        cells = [row["variant"]]
        for name in ("si_sdr", "si_sir", "si_sar"):
            cells.append(f"{row[name]['mean']:.1f} ± {row[name]['std']:.1f}")
        cells.append(f"{row['wall_time_s']}")
        body.append(cells)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
    lines = [fmt(header), fmt(["-" * w for w in widths])] + [fmt(r) for r in body]
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    variants = args.variants.split(",") if args.variants else list(FUSION_VARIANTS)
    for v in variants:
        if v not in FUSION_VARIANTS:
            raise UsageError(f"unknown fusion variant {v!r}; options: {', '.join(FUSION_VARIANTS)}")
    rows = run_ablation(cfg, variants, args.out, n_eval=args.n_eval)
    print(_ablation_table(rows))
    return 0


# -------------------------------------------------------------------- parser


def build_parser() -> _Parser:
    p = _Parser(prog="voxdiff", description=__doc__)
    p.add_argument("--threads", type=int, default=None, help="cap worker threads globally")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("remix", cmd_remix, "mix vocal/accompaniment file pairs at a target SNR")
    sp.add_argument("--vocals", required=True)
    sp.add_argument("--accomp", required=True)
    sp.add_argument("--snr", type=float, default=3.0)
    sp.add_argument("--snr-definition", choices=("si", "energy"), default="si")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("augment", cmd_augment, "incoherent-mixing augmentation from stem pools")
    sp.add_argument("--mode", default="incoherent")
    sp.add_argument("--vocals", required=True)
    sp.add_argument("--accomp", required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--snr", type=float, default=3.0)
    sp.add_argument("--segment-seconds", type=float, default=4.0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("synth", cmd_synth, "generate the synthetic desk-scale corpus")
    sp.add_argument("--n", type=int, default=12)
    sp.add_argument("--snr", type=float, default=3.0)
    sp.add_argument("--segment-seconds", type=float, default=2.0)
    sp.add_argument("--sample-rate", type=int, default=16000)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("extract-latents", cmd_extract_latents, "write latent files for a directory of WAVs")
    sp.add_argument("--in", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--H", type=int, default=2048)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("train", cmd_train, "run the score-matching training loop")
    sp.add_argument("--config", default=None, help="JSON config; empty file = documented defaults")
    sp.add_argument("--preset", choices=("full", "desk"), default="full")
    sp.add_argument("--task", choices=("speech", "vocal"), default=None)
    sp.add_argument("--data", required=True, help="corpus dir/manifest, or 'synthetic'")
    sp.add_argument("--out", required=True)
    sp.add_argument("--steps", type=int, default=None, help="override train.max_steps")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--print-effective-config", action="store_true")

    sp = add("enhance", cmd_enhance, "enhance one noisy WAV with a trained checkpoint")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--in", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--steps", type=int, default=None, help="default: checkpoint's stored setting")
    sp.add_argument("--corrector-steps", type=int, default=None)
    sp.add_argument("--snr-r", type=float, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--latent", default=None, help="precomputed latent file to use globally")
    sp.add_argument("--raw-weights", action="store_true", help="use raw instead of EMA weights")

    sp = add("evaluate", cmd_evaluate, "SI metrics for matched enhanced/clean/interference dirs")
    sp.add_argument("--enhanced", required=True)
    sp.add_argument("--clean", required=True)
    sp.add_argument("--interference", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--sidecar", default=None, help="JSON with external PESQ/ESTOI per clip id")

    sp = add("ablate", cmd_ablate, "train and compare fusion variants under equal budgets")
    sp.add_argument("--config", default=None)
    sp.add_argument("--preset", choices=("full", "desk"), default="desk")
    sp.add_argument("--task", choices=("speech", "vocal"), default=None)
    sp.add_argument("--variants", default=None, help="comma-separated subset of variants")
    sp.add_argument("--n-eval", type=int, default=4)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--print-effective-config", action="store_true")

    sp = add("oracle", cmd_oracle, "Euler-Maruyama check of the closed-form kernel")
    sp.add_argument("--t", type=float, nargs="+", default=[0.25, 0.5, 1.0])
    sp.add_argument("--paths", type=int, default=20000)
    sp.add_argument("--dt", type=float, default=1e-3)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("plot-mel", cmd_plot_mel, "render a mel spectrogram image (PGM or PNG)")
    sp.add_argument("--in", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--mels", type=int, default=80)
    sp.add_argument("--fft-size", type=int, default=510)
    sp.add_argument("--window", type=int, default=510)
    sp.add_argument("--hop", type=int, default=128)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        _log(f"usage error: {e}")
        return 1
    if args.threads is not None:
        import torch

        torch.set_num_threads(max(1, args.threads))
        os.environ["OMP_NUM_THREADS"] = str(max(1, args.threads))
    try:
        return int(args.func(args) or 0)
    except (UsageError, ConfigError) as e:
        _log(f"error: {e}")
        return 1
    except Exception as e:
        _log(f"runtime failure: {type(e).__name__}: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
