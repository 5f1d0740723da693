"""Command-line entry point: ``hfsign <subcommand>``.

Exit status: 0 success (for ``verify``: signed), 3 unsigned, 1 error,
2 usage.  Values come from built-in defaults, then the JSON ``--config``
file, then explicit flags.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_UNSIGNED = 3

log = logging.getLogger("hfsign")


class CliError(Exception):
    pass


# built-in defaults per subcommand; flags default to None so a config file can fill them
DEFAULTS = {
    "keygen": {"prefix": "user"},
    "synth-corpus": {"duration": 4.0, "first_clip": 0},
    "ingest": {},
    "train": {},
    "sign": {},
    "clone": {},
    "verify": {"threshold": 0.5},
    "eval": {"threshold": 0.5, "band_width": 600.0, "quantize": False},
    "analyze-bands": {"band_width": 600.0, "label_a": "a", "label_b": "b"},
}
REQUIRED = {
    "keygen": ["n", "out"],
    "synth-corpus": ["users", "clips", "out"],
    "ingest": ["dir", "manifest", "out"],
    "train": ["corpus", "keys", "out_dir"],
    "sign": ["input", "key_id", "keys", "sig_ckpt", "out"],
    "clone": ["input", "out"],
    "verify": ["input", "ver_ckpt"],
    "eval": ["corpus", "keys", "sig_ckpt", "ver_ckpt", "out"],
    "analyze-bands": ["cohort_a", "cohort_b", "out"],
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for every random choice (default 0)")
    common.add_argument("--config", default=None, help="JSON file of option values; flags override it")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hfsign", description="Keyed HF audio signatures against voice cloning.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("keygen", parents=[common], help="generate enrolled private keys")
    s.add_argument("--n", type=int)
    s.add_argument("--out")
    s.add_argument("--prefix")

    s = sub.add_parser("synth-corpus", parents=[common], help="write a synthetic speech-like corpus")
    s.add_argument("--users", type=int)
    s.add_argument("--clips", type=int)
    s.add_argument("--duration", type=float, help="seconds per clip (default 4.0)")
    s.add_argument("--first-clip", type=int, help="index of the first utterance per speaker (held-out sets)")
    s.add_argument("--out")

    s = sub.add_parser("ingest", parents=[common], help="resample a user-mapped WAV collection to 16 kHz")
    s.add_argument("--dir")
    s.add_argument("--manifest")
    s.add_argument("--out")

    s = sub.add_parser("train", parents=[common], help="jointly train signer and verifier")
    s.add_argument("--corpus")
    s.add_argument("--keys")
    s.add_argument("--out-dir")
    s.add_argument("--max-epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--dp", dest="dp_enabled", action="store_const", const=True, default=None,
                   help="train with Laplace-noised keys")
    s.add_argument("--epsilon", type=float)
    s.add_argument("--time-budget", dest="time_budget_s", type=float, help="wall-clock cap in seconds")

    s = sub.add_parser("sign", parents=[common], help="sign a WAV with a user's key")
    s.add_argument("--in", dest="input")
    s.add_argument("--key-id")
    s.add_argument("--keys")
    s.add_argument("--sig-ckpt")
    s.add_argument("--out")

    s = sub.add_parser("clone", parents=[common], help="apply the clone-proxy attack to a WAV")
    s.add_argument("--in", dest="input")
    s.add_argument("--out")

    s = sub.add_parser("verify", parents=[common], help="score a WAV; exit 0 if signed, 3 if not")
    s.add_argument("--in", dest="input")
    s.add_argument("--ver-ckpt")
    s.add_argument("--threshold", type=float)

    s = sub.add_parser("eval", parents=[common], help="EER, per-user accuracy and band report")
    s.add_argument("--corpus")
    s.add_argument("--keys")
    s.add_argument("--sig-ckpt")
    s.add_argument("--ver-ckpt")
    s.add_argument("--out")
    s.add_argument("--threshold", type=float)
    s.add_argument("--band-width", type=float)
    s.add_argument("--quantize", action="store_const", const=True, default=None,
                   help="round-trip signed audio through 16-bit WAV before scoring")

    s = sub.add_parser("analyze-bands", parents=[common], help="band energy comparison of two WAV cohorts")
    s.add_argument("--cohort-a")
    s.add_argument("--cohort-b")
    s.add_argument("--out")
    s.add_argument("--band-width", type=float)
    s.add_argument("--label-a")
    s.add_argument("--label-b")
    return p


def resolve(args, parser):
    """Merge defaults <- config file <- flags into a plain dict."""
    flags = {k: v for k, v in vars(args).items() if k not in ("config", "command", "verbose")}
    merged = {"seed": 0, **DEFAULTS[args.command]}
    extra = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise CliError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except ValueError as e:
            raise CliError(f"config file {path} is not valid JSON: {e}") from None
        if not isinstance(doc, dict):
            raise CliError(f"config file {path} must hold a JSON object")
        for k, v in doc.items():
            key = k.replace("-", "_")
            if key in flags:
                merged[key] = v
            else:
                extra[key] = v
    merged.update({k: v for k, v in flags.items() if v is not None})
    missing = [k for k in REQUIRED[args.command] if merged.get(k) is None]
    if missing:
        names = ", ".join("--" + ("in" if k == "input" else k.replace("_", "-")) for k in missing)
        parser.error(f"{args.command}: missing required option(s) {names}")
    if extra and args.command != "train":
        raise CliError(f"unknown config keys for {args.command}: {sorted(extra)}")
    return merged, extra


def _need_file(path, what):
    if not Path(path).is_file():
        raise CliError(f"{what} not found: {path}")


def _need_dir(path, what):
    if not Path(path).is_dir():
        raise CliError(f"{what} is not a directory: {path}")


def _out_parent(path):
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise CliError(f"output directory does not exist: {parent}")


def _corpus_manifest(path):
    p = Path(path)
    return p / "manifest.json" if p.is_dir() else p


def _load_corpus(path):
    from .threatlab import Corpus
    manifest = _corpus_manifest(path)
    _need_file(manifest, "corpus manifest")
    return Corpus.load(str(manifest.parent), str(manifest))


def _wav_files(path):
    p = Path(path)
    if p.is_file():
        return [p]
    _need_dir(p, "cohort")
    files = sorted(p.rglob("*.wav"))
    if not files:
        raise CliError(f"no .wav files under {p}")
    return files


def cmd_keygen(o, extra):
    from .keydp import generate_keys
    _out_parent(o["out"])
    keys = generate_keys(o["n"], np.random.default_rng(o["seed"]), prefix=o["prefix"])
    keys.save(o["out"])
    print(f"wrote {len(keys)} keys to {o['out']}")
    return EXIT_OK


def cmd_synth_corpus(o, extra):
    from .threatlab import build_corpus
    _out_parent(o["out"])
    corpus = build_corpus(o["users"], o["clips"], o["duration"], o["seed"], o["out"], first_clip=o["first_clip"])
    print(f"wrote {len(corpus.items())} clips for {len(corpus.user_ids)} users to {o['out']}")
    return EXIT_OK


def cmd_ingest(o, extra):
    from .threatlab import ingest
    _need_dir(o["dir"], "source directory")
    _need_file(o["manifest"], "manifest")
    _out_parent(o["out"])
    corpus = ingest(o["dir"], o["manifest"], o["out"])
    print(f"ingested {len(corpus.items())} clips for {len(corpus.user_ids)} users into {o['out']}")
    return EXIT_OK


def cmd_train(o, extra):
    from . import checkpoint
    from .keydp import KeySet
    from .trainer import TrainConfig, train_joint
    _need_file(o["keys"], "key file")
    corpus = _load_corpus(o["corpus"])
    out = Path(o["out_dir"])
    _out_parent(out)
    settings = dict(extra)
    for k in ("max_epochs", "batch_size", "dp_enabled", "epsilon", "time_budget_s"):
        if o.get(k) is not None:
            settings[k] = o[k]
    settings["seed"] = o["seed"]
    try:
        cfg = TrainConfig.from_dict(settings)
    except (TypeError, ValueError) as e:
        raise CliError(f"bad training configuration: {e}") from None
    keys = KeySet.load(o["keys"])
    out.mkdir(exist_ok=True)
    signer, verifier, history = train_joint(corpus, keys, cfg)
    meta = {"best_epoch": history.best_epoch + 1, "epochs": len(history)}
    checkpoint.save_signer(out / "signer.sspc", signer, extra=meta)
    checkpoint.save_verifier(out / "verifier.sspc", verifier, extra=meta)
    history.write_csv(out / "history.csv")
    (out / "train_config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    best = history.best_epoch
    acc = history.val_acc[best] if best >= 0 else float("nan")
    print(f"trained {len(history)} epochs; best epoch {best + 1} (val_acc {acc:.3f}); wrote {out}")
    return EXIT_OK


def cmd_sign(o, extra):
    from . import audio_io, checkpoint
    from .keydp import KeySet
    from .signet import sign_audio
    for k, what in (("input", "input WAV"), ("keys", "key file"), ("sig_ckpt", "signer checkpoint")):
        _need_file(o[k], what)
    _out_parent(o["out"])
    keys = KeySet.load(o["keys"])
    key = keys.get(o["key_id"])
    signer, header = checkpoint.load_signer(o["sig_ckpt"])
    clip = audio_io.load(o["input"])
    signed = sign_audio(clip, key, signer, checkpoint.stft_params(header), header["cutoff_hz"])
    audio_io.save(o["out"], signed)
    print(f"signed {o['input']} for {o['key_id']} -> {o['out']}")
    return EXIT_OK


def cmd_clone(o, extra):
    from . import audio_io
    from .threatlab import clone_proxy
    _need_file(o["input"], "input WAV")
    _out_parent(o["out"])
    clip = audio_io.load(o["input"])
    audio_io.save(o["out"], clone_proxy(clip, rng=np.random.default_rng(o["seed"])))
    print(f"cloned {o['input']} -> {o['out']}")
    return EXIT_OK


def cmd_verify(o, extra):
    from . import audio_io, checkpoint
    from .vernet import verify_audio
    _need_file(o["input"], "input WAV")
    _need_file(o["ver_ckpt"], "verifier checkpoint")
    verifier, header = checkpoint.load_verifier(o["ver_ckpt"])
    clip = audio_io.load(o["input"])
    verdict = verify_audio(clip, verifier, o["threshold"], checkpoint.stft_params(header), header["cutoff_hz"])
    print(f"score={verdict.score:.6f} decision={'signed' if verdict.signed else 'unsigned'}")
    return EXIT_OK if verdict.signed else EXIT_UNSIGNED


def cmd_eval(o, extra):
    from . import checkpoint, evalkit
    from .keydp import KeySet
    _need_file(o["keys"], "key file")
    _need_file(o["sig_ckpt"], "signer checkpoint")
    _need_file(o["ver_ckpt"], "verifier checkpoint")
    corpus = _load_corpus(o["corpus"])
    out = Path(o["out"])
    _out_parent(out)
    keys = KeySet.load(o["keys"])
    signer, _ = checkpoint.load_signer(o["sig_ckpt"])
    verifier, _ = checkpoint.load_verifier(o["ver_ckpt"])
    clips = {u: corpus.clips(u) for u in corpus.user_ids}
    config = {k: o[k] for k in ("corpus", "keys", "sig_ckpt", "ver_ckpt", "threshold", "band_width", "quantize", "seed")}
    report = evalkit.evaluate(clips, signer, verifier, keys, o["threshold"], o["seed"],
                              band_width_hz=o["band_width"], config=config, quantize=o["quantize"])
    out.mkdir(exist_ok=True)
    report.write_json(out / "report.json")
    report.write_quartiles_csv(out / "accuracy_quartiles.csv")
    from .dsp import BandProfile, profile_rows, write_band_csv
    rows = [r for label, e in report.band_profiles.items()
            for r in profile_rows(BandProfile(report.band_width_hz, np.asarray(e)), label)]
    write_band_csv(out / "bands.csv", rows)
    q = report.accuracy_quartiles
    print(f"EER {report.eer:.4f} at threshold {report.eer_threshold:.4f}; median per-user accuracy "
          f"{q['median']:.4f}; clone-of-signed rejection {report.clone_rejection:.4f}; wrote {out}")
    return EXIT_OK


def cmd_analyze_bands(o, extra):
    from . import audio_io, evalkit
    files_a, files_b = _wav_files(o["cohort_a"]), _wav_files(o["cohort_b"])
    _out_parent(o["out"])
    a = [audio_io.load(f) for f in files_a]
    b = [audio_io.load(f) for f in files_b]
    rep = evalkit.band_attenuation_report(a, b, o["band_width"], o["label_a"], o["label_b"])
    rep.write_csv(o["out"])
    print(f"compared {len(a)} vs {len(b)} clips; max |delta| {np.max(np.abs(rep.delta_db)):.2f} dB; wrote {o['out']}")
    return EXIT_OK


COMMANDS = {
    "keygen": cmd_keygen, "synth-corpus": cmd_synth_corpus, "ingest": cmd_ingest, "train": cmd_train,
    "sign": cmd_sign, "clone": cmd_clone, "verify": cmd_verify, "eval": cmd_eval,
    "analyze-bands": cmd_analyze_bands,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    from .audio_io import WavError
    from .checkpoint import CheckpointError
    try:
        options, extra = resolve(args, parser)
        return COMMANDS[args.command](options, extra)
    except (CliError, WavError, CheckpointError, KeyError, ValueError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"hfsign {args.command}: error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
