"""Command-line entry point: ``rwresnet {train,score,eval,gradcheck,synth-data}``.

Values come from built-in defaults, then an optional ``--config`` key=value
file, then explicit flags (highest precedence).  Logs go to stderr; results go
to files and stdout.  On failure the last stderr line is
``ERROR <code> <message>`` with code 1 (configuration), 2 (data) or 3
(numeric).
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import audio, gradcheck, metrics
from .backbone import BackboneConfig
from .checkpoint import load_model, save_checkpoint
from .errors import ConfigError, DataError, NumericError
from .frontend import PRESETS, VARIANTS, FrontendConfig
from .io_utils import atomic_write_bytes, atomic_write_text
from .model import RWResNet, predict_logits
from .training import ScheduleConfig, init_params, train, write_history_csv

log = logging.getLogger("rwresnet")


@dataclass(frozen=True)
class Opt:
    dest: str
    type: Callable[[str], Any]
    default: Any
    help: str
    choices: tuple | None = None
    flag: bool = False

    @property
    def name(self) -> str:
        return "--" + self.dest.replace("_", "-")


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _channels(s: str) -> tuple[int, int, int]:
    parts = [int(p) for p in s.replace(" ", "").split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected c1,c2,c3, got {s!r}")
    return tuple(parts)


def _path(s: str) -> Path:
    return Path(s)


MODEL_OPTS = [
    Opt("variant", str, "reswavegram", "feature extractor", VARIANTS),
    Opt("preset", str, "M", "channel preset (c1,c2,c3)", tuple(PRESETS)),
    Opt("channels", _channels, None, "explicit c1,c2,c3; overrides --preset"),
    Opt("cg", int, 1, "number of channel groups C_g"),
    Opt("input_len", int, 128000, "samples per utterance after cut/tile"),
]

TRAIN_OPTS = MODEL_OPTS + [
    Opt("epochs", int, 50, "training epochs"),
    Opt("batch", int, 16, "batch size"),
    Opt("seed", int, 0, "seed for init, shuffling and synthetic data"),
    Opt("lr", float, 1e-4, "initial learning rate"),
    Opt("eta_min", float, 1e-8, "learning-rate floor of the cosine schedule"),
    Opt("t0", float, 10.0, "first restart period, in epochs"),
    Opt("t_mult", float, 2.0, "restart period multiplier"),
    Opt("train_protocol", _path, None, "training protocol file"),
    Opt("dev_protocol", _path, None, "development protocol file (pooled with train)"),
    Opt("audio_root", _path, None, "directory holding <utt_id>.wav files"),
    Opt("checkpoint_dir", _path, Path("checkpoints"), "output directory for checkpoints and history.csv"),
    Opt("synth", int, None, "train on N synthetic utterances per class instead of protocol data"),
    Opt("select_on", str, "train", "best-epoch criterion: pooled train loss or held-out dev loss", ("train", "dev")),
    Opt("random_crop", _bool, False, "random crop instead of head cut for long training files", flag=True),
]

SCORE_OPTS = [
    Opt("checkpoint", _path, None, "checkpoint to score with"),
    Opt("protocol", _path, None, "protocol listing the utterances to score"),
    Opt("audio_root", _path, None, "directory holding <utt_id>.wav files"),
    Opt("output", _path, None, "score file to write"),
    Opt("batch", int, 16, "inference batch size"),
]

EVAL_OPTS = [
    Opt("scores", _path, None, "score file (utt_id score)"),
    Opt("protocol", _path, None, "protocol with the labels"),
    Opt("cost", _path, None, "t-DCF cost file (key=value)"),
    Opt("report", _path, None, "CSV report to write (metric,value,threshold)"),
]

GRADCHECK_OPTS = [
    Opt("seeds", int, 20, "random seeds per layer"),
]

SYNTH_OPTS = [
    Opt("n", int, 32, "utterances per class"),
    Opt("length", int, 8000, "samples per utterance"),
    Opt("seed", int, 0, "generator seed"),
    Opt("out_dir", _path, None, "output directory (protocol.txt and wav/)"),
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _add_opts(p: argparse.ArgumentParser, opts: list[Opt]) -> None:
    p.add_argument("--config", type=Path, default=None, help="key=value config file (default: none)")
    for o in opts:
        default = "none" if o.default is None else o.default
        if isinstance(default, tuple):
            default = ",".join(map(str, default))
        help_ = f"{o.help} (default: {default})"
        if o.flag:
            p.add_argument(o.name, dest=o.dest, action="store_const", const=True, default=None, help=help_)
        else:
            p.add_argument(o.name, dest=o.dest, type=o.type, choices=o.choices, default=None, help=help_)


def resolve(ns: argparse.Namespace, opts: list[Opt]) -> dict[str, Any]:
    """Merge defaults < config file < flags into one dict."""
    values = {o.dest: o.default for o in opts}
    by_key = {o.dest: o for o in opts}
    if ns.config is not None:
        try:
            text = Path(ns.config).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config file {ns.config}: {e}") from e
        for key, raw in metrics.parse_key_values(text, str(ns.config)).items():
            o = by_key.get(key.replace("-", "_"))
            if o is None:
                raise ConfigError(f"{ns.config}: unknown key {key!r}")
            try:
                v = o.type(raw)
            except ValueError as e:
                raise ConfigError(f"{ns.config}: bad value for {key}: {e}") from None
            if o.choices and v not in o.choices:
                raise ConfigError(f"{ns.config}: {key} must be one of {o.choices}, got {v!r}")
            values[o.dest] = v
    for o in opts:
        v = getattr(ns, o.dest)
        if v is not None:
            values[o.dest] = v
    return values


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _require_file(path: Path, what: str) -> None:
    if not path.is_file():
        raise ConfigError(f"{what} not found: {path}")


def _require_dir(path: Path, what: str) -> None:
    if not path.is_dir():
        raise ConfigError(f"{what} not found: {path}")


def _echo(cfg: dict) -> None:
    log.info("effective config: %s", " ".join(f"{k}={v}" for k, v in sorted(cfg.items())))


def frontend_config(cfg: dict) -> FrontendConfig:
    c1, c2, c3 = cfg["channels"] or PRESETS[cfg["preset"].upper()]
    if cfg["input_len"] < 1:
        raise ConfigError("input_len must be positive")
    return FrontendConfig(c1=c1, c2=c2, c3=c3, cg=cfg["cg"], variant=cfg["variant"], input_len=cfg["input_len"])


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(cfg: dict) -> int:
    fcfg = frontend_config(cfg)
    if min(cfg["epochs"], cfg["batch"]) < 1:
        raise ConfigError("epochs and batch must be >= 1")
    if cfg["synth"] is None:
        _require(cfg, "train_protocol", "audio_root")
        _require_file(cfg["train_protocol"], "train protocol")
        _require_dir(cfg["audio_root"], "audio root")
        if cfg["dev_protocol"] is not None:
            _require_file(cfg["dev_protocol"], "dev protocol")
    elif cfg["synth"] < 1:
        raise ConfigError("--synth must be >= 1")
    if cfg["select_on"] == "dev" and cfg["dev_protocol"] is None:
        raise ConfigError("--select-on dev needs --dev-protocol")
    _echo(cfg)

    rng = np.random.default_rng(cfg["seed"]) if cfg["random_crop"] else None
    dev_w = dev_y = None
    if cfg["synth"] is not None:
        trials, data = audio.synth_dataset(cfg["synth"], fcfg.input_len, cfg["seed"])
    else:
        trials = audio.read_protocol(cfg["train_protocol"])
        data = audio.load_audio(trials, cfg["audio_root"], fcfg.input_len, rng)
    waves, labels = audio.stack_audio(trials, data)
    if len(trials) == 0:
        raise DataError("training set is empty")
    if cfg["dev_protocol"] is not None:
        dev = audio.read_protocol(cfg["dev_protocol"])
        dev_w, dev_y = audio.stack_audio(dev, audio.load_audio(dev, cfg["audio_root"], fcfg.input_len))
    log.info("training on %d utterances (%d bonafide)", len(labels), int(labels.sum()))

    model = RWResNet(fcfg, BackboneConfig(in_channels=fcfg.cg))
    init_params(model, cfg["seed"])
    schedule = ScheduleConfig(
        lr0=cfg["lr"], eta_min=cfg["eta_min"], t0=cfg["t0"], t_mult=cfg["t_mult"], total_epochs=cfg["epochs"]
    )
    out_dir = cfg["checkpoint_dir"]
    best, history = train(
        model, waves, labels, dev_w, dev_y,
        epochs=cfg["epochs"], batch_size=cfg["batch"], seed=cfg["seed"],
        schedule=schedule, select_on=cfg["select_on"], checkpoint_dir=out_dir,
    )
    model.load_state_dict(best)
    save_checkpoint(model, out_dir / "best.rwrn")
    write_history_csv(history, out_dir / "history.csv")
    log.info("wrote %s", out_dir / "best.rwrn")
    return 0


def cmd_score(cfg: dict) -> int:
    _require(cfg, "checkpoint", "protocol", "audio_root", "output")
    _require_file(cfg["checkpoint"], "checkpoint")
    _require_file(cfg["protocol"], "protocol")
    _require_dir(cfg["audio_root"], "audio root")
    _echo(cfg)
    model = load_model(cfg["checkpoint"])
    trials = audio.read_protocol(cfg["protocol"])
    data = audio.load_audio(trials, cfg["audio_root"], model.frontend_cfg.input_len)
    waves, _ = audio.stack_audio(trials, data)
    if len(trials):
        scores = metrics.score(predict_logits(model, waves, cfg["batch"]).astype(np.float64))
    else:
        scores = np.zeros(0)
    if not np.all(np.isfinite(scores)):
        raise NumericError("model produced non-finite scores")
    records = [metrics.ScoreRecord(t.utt_id, float(s)) for t, s in zip(trials, scores)]
    atomic_write_text(cfg["output"], metrics.write_scores(records))
    log.info("wrote %d scores to %s", len(records), cfg["output"])
    return 0


def cmd_eval(cfg: dict) -> int:
    _require(cfg, "scores", "protocol", "cost")
    _require_file(cfg["scores"], "score file")
    _require_file(cfg["protocol"], "protocol")
    _require_file(cfg["cost"], "cost file")
    _echo(cfg)
    cost = metrics.read_cost(cfg["cost"])
    trials = audio.read_protocol(cfg["protocol"])
    records = metrics.read_scores(Path(cfg["scores"]).read_text(encoding="utf-8"))
    by_id = {r.utt_id: r.score for r in records}
    missing = [t.utt_id for t in trials if t.utt_id not in by_id]
    if missing:
        raise DataError(f"{len(missing)} protocol utterance(s) missing from scores: {' '.join(missing[:10])}")
    labeled = [metrics.ScoreRecord(t.utt_id, by_id[t.utt_id], t.label) for t in trials]
    bona, spoof = metrics.split_scores(labeled)
    if bona.size == 0 or spoof.size == 0:
        raise DataError("evaluation needs both bonafide and spoof trials")
    eer, eer_thr = metrics.compute_eer(bona, spoof)
    tdcf, tdcf_thr = metrics.compute_min_tdcf(bona, spoof, cost)
    report = metrics.format_report([("eer", 100 * eer, eer_thr), ("min_tdcf", tdcf, tdcf_thr)])
    if cfg["report"] is not None:
        atomic_write_text(cfg["report"], report)
    sys.stdout.write(report)
    return 0


def cmd_gradcheck(cfg: dict) -> int:
    if cfg["seeds"] < 1:
        raise ConfigError("--seeds must be >= 1")
    failed = []
    for case in gradcheck.CASES + gradcheck.BLOCK_CASES:
        r = gradcheck.run_case(case, cfg["seeds"])
        status = "ok" if r.passed else "FAIL"
        sys.stdout.write(f"{r.name} {r.max_error:.3e} {r.threshold:.0e} {status}\n")
        sys.stdout.flush()
        if not r.passed:
            failed.append(r.name)
    if failed:
        raise NumericError(f"gradient check failed for: {', '.join(failed)}")
    return 0


def cmd_synth_data(cfg: dict) -> int:
    _require(cfg, "out_dir")
    if cfg["n"] < 0 or cfg["length"] < 1:
        raise ConfigError("--n must be >= 0 and --length >= 1")
    _echo(cfg)
    out = Path(cfg["out_dir"])
    trials, data = audio.synth_dataset(cfg["n"], cfg["length"], cfg["seed"])
    for t in trials:
        atomic_write_bytes(out / "wav" / f"{t.utt_id}.wav", audio.serialize_wav(audio.to_pcm16(data[t.utt_id])))
    (out / "wav").mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "protocol.txt", audio.format_protocol(trials))
    log.info("wrote %d utterances to %s", len(trials), out)
    return 0


COMMANDS = {
    "train": (cmd_train, TRAIN_OPTS, "train a model (full-scale protocol data or --synth)"),
    "score": (cmd_score, SCORE_OPTS, "score a protocol with a checkpoint"),
    "eval": (cmd_eval, EVAL_OPTS, "EER and min t-DCF of a score file"),
    "gradcheck": (cmd_gradcheck, GRADCHECK_OPTS, "finite-difference check of every layer's backward"),
    "synth-data": (cmd_synth_data, SYNTH_OPTS, "write a synthetic WAV corpus with its protocol"),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rwresnet", description="RW-Resnet speech anti-spoofing")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging (default: off)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, opts, help_) in COMMANDS.items():
        _add_opts(sub.add_parser(name, help=help_, description=help_), opts)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        ns = build_parser().parse_args(argv)
        if ns.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        fn, opts, _ = COMMANDS[ns.command]
        return fn(resolve(ns, opts))
    except ConfigError as e:
        code, msg = 1, e
    except DataError as e:
        code, msg = 2, e
    except NumericError as e:
        code, msg = 3, e
    print(f"ERROR {code} {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
