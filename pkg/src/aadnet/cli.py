"""Command line entry point.

Usage::

    aadnet <command> [--config FILE] [key=value | --key value ...]

Commands: synth, preprocess, train, eval, ablate, prune, report. The
config file holds flat ``key = value`` lines (``#`` starts a comment);
command-line settings override it. Every command writes its artifacts and
the effective config to ``<out_dir>/<command>-<seed>-<timestamp>/`` and
prints that directory. Exit status: 0 success, 1 runtime failure, 2 usage
or config error.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
import time
from pathlib import Path

COMMANDS = ("synth", "preprocess", "train", "eval", "ablate", "prune", "report")

# key: (default, type, help)
DEFAULTS = {
    "duration_s": (3, int, "trial length in seconds (2, 3, 4 or 5)"),
    "epochs": (80, int, "training epochs"),
    "batch_size": (32, int, "mini-batch size"),
    "eval_batch_size": (32, int, "batch size for evaluation passes"),
    "lr": (5e-4, float, "Adam learning rate"),
    "seed": (0, int, "seed for initialization, shuffling, dropout and synthesis"),
    "dropout_eeg": (0.25, float, "dropout in the EEG convolution blocks"),
    "dropout_audio": (0.4, float, "dropout in the audio convolution blocks"),
    "dropout_concat": (0.25, float, "dropout between fully connected layers"),
    "checkpoint_every": (10, int, "epochs between checkpoints"),
    "architecture": ("none", str, "none, remove_blstm or remove_fc"),
    "out_dir": ("runs", str, "parent directory of run directories"),
    "data": ("", str, "trial container (.aadtrl)"),
    "manifest": ("", str, "manifest (.jsonl); default: next to the container"),
    "checkpoint": ("", str, "dense checkpoint to start from"),
    "split": ("test", str, "split evaluated by eval/ablate"),
    "ablation": ("none", str, "input mode for eval: none, zero_eeg or zero_audio"),
    "ablations": ("zero_eeg,zero_audio", str, "comma-separated modes for ablate"),
    "n_trials": (1000, int, "synthetic trials"),
    "n_recordings": (10, int, "synthetic recordings the trials are cut from"),
    "snr_db": (-3.0, float, "synthetic EEG signal-to-noise ratio per electrode"),
    "carrier": ("noise", str, "synthetic speech carrier: noise or wav"),
    "wav_a": ("", str, "speaker 1 WAV for carrier=wav or preprocess"),
    "wav_b": ("", str, "speaker 2 WAV for carrier=wav or preprocess"),
    "eeg_csv": ("", str, "EEG CSV for preprocess"),
    "eeg_rate": (64, int, "sampling rate of eeg_csv in Hz"),
    "attended": (0, int, "attended speaker of the preprocessed recording (0 = wav_a)"),
    "sparsity": (0.5, float, "target prunable-weight sparsity for prune"),
    "schedule": ("one_shot", str, "one_shot or sequential"),
    "ramp_epochs": (0, int, "sequential ramp length; 0 = half of finetune_epochs"),
    "finetune_epochs": (5, int, "fine-tuning epochs after pruning"),
    "run_dir": ("", str, "run directory summarized by report"),
}


class ConfigError(Exception):
    pass


def _convert(key: str, raw):
    default, typ, _ = DEFAULTS[key]
    if isinstance(raw, typ) and not isinstance(raw, bool):
        return raw
    try:
        if typ is int:
            f = float(raw)
            if f != int(f):
                raise ValueError
            return int(f)
        return typ(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}") from None


def _check_key(key: str, source: str) -> None:
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r} ({source})")


def read_config_file(path) -> dict:
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e.strerror}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        _check_key(key, f"{path}:{n}")
        out[key] = val
    return out


def parse_flags(args) -> dict:
    """``key=value``, ``--key=value`` and ``--key value`` forms."""
    out = {}
    it = iter(args)
    for tok in it:
        if tok.startswith("--"):
            tok = tok[2:]
            if "=" not in tok:
                try:
                    tok = f"{tok}={next(it)}"
                except StopIteration:
                    raise ConfigError(f"--{tok} needs a value") from None
        if "=" not in tok:
            raise ConfigError(f"expected key=value, got {tok!r}")
        key, val = tok.split("=", 1)
        key = key.replace("-", "_")
        _check_key(key, "command line")
        out[key] = val
    return out


def parse_config(file=None, flags=None) -> dict:
    """Defaults, then the file, then the flags; values converted to their types."""
    cfg = {k: v[0] for k, v in DEFAULTS.items()}
    merged = {}
    if file:
        merged.update(read_config_file(file))
    if isinstance(flags, dict):
        for k in flags:
            _check_key(k, "flags")
        merged.update(flags)
    elif flags:
        merged.update(parse_flags(flags))
    for k, v in merged.items():
        cfg[k] = _convert(k, v)
    return cfg


# -- helpers -------------------------------------------------------------------------


def make_run_dir(cfg: dict, command: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = Path(cfg["out_dir"]) / f"{command}-{cfg['seed']}-{stamp}"
    path, k = base, 1
    while path.exists():
        path = base.with_name(f"{base.name}.{k}")
        k += 1
    path.mkdir(parents=True)
    (path / "config.json").write_text(json.dumps({"command": command, **cfg}, indent=2, sort_keys=True))
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str))


def _train_config(cfg: dict, epochs: int | None = None):
    from .training import TrainConfig

    try:
        return TrainConfig(
            epochs=cfg["epochs"] if epochs is None else epochs,
            batch_size=cfg["batch_size"], lr=cfg["lr"], seed=cfg["seed"],
            dropout_eeg=cfg["dropout_eeg"], dropout_audio=cfg["dropout_audio"],
            dropout_concat=cfg["dropout_concat"], duration_s=cfg["duration_s"],
            eval_batch_size=cfg["eval_batch_size"], checkpoint_every=cfg["checkpoint_every"],
            architecture=cfg["architecture"],
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _require(path: str, what: str) -> Path:
    if not path:
        raise ConfigError(f"{what} path not set")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _load_data(cfg: dict):
    from .container import read_manifest, read_trials
    from .splits import split_dataset

    data_path = _require(cfg["data"], "trial container")
    man = cfg["manifest"] or str(data_path.with_suffix("")) + ".manifest.jsonl"
    man_path = _require(man, "manifest")
    data = read_trials(data_path, cfg["duration_s"])
    manifest = read_manifest(man_path)
    if len(manifest) != len(data):
        raise ValueError(f"manifest lists {len(manifest)} trials, container holds {len(data)}")
    return data, manifest, split_dataset(manifest)


def _load_model(cfg: dict):
    from .autodiff import load_checkpoint
    from .training import build_model

    model = build_model(_train_config(cfg))
    if cfg["checkpoint"]:
        model.load_state_dict(load_checkpoint(_require(cfg["checkpoint"], "checkpoint")))
    return model


# -- commands --------------------------------------------------------------------------


def cmd_synth(cfg: dict, run: Path) -> dict:
    from .synth import SynthConfig, generate_dataset

    try:
        sc = SynthConfig(
            n_trials=cfg["n_trials"], duration_s=cfg["duration_s"], snr_db=cfg["snr_db"],
            seed=cfg["seed"], carrier=cfg["carrier"], n_recordings=cfg["n_recordings"],
            wav_paths=tuple(p for p in (cfg["wav_a"], cfg["wav_b"]) if p),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None
    info = generate_dataset(sc, run)
    info["config"] = cfg
    _write_json(run / "synth.json", info)
    return info


def cmd_preprocess(cfg: dict, run: Path) -> dict:
    from .container import TrialWriter, write_manifest
    from .dsp import EEG_RATE, N_FREQ, preprocess_recording, read_eeg_csv, read_wav, trial_dims
    from .splits import split_dataset

    if cfg["attended"] not in (0, 1):
        raise ConfigError("attended must be 0 or 1")
    eeg = read_eeg_csv(_require(cfg["eeg_csv"], "EEG CSV"), cfg["eeg_rate"])
    a = read_wav(_require(cfg["wav_a"], "speaker 1 WAV"))
    b = read_wav(_require(cfg["wav_b"], "speaker 2 WAV"))
    d = cfg["duration_s"]
    x, sa, sb = preprocess_recording(eeg, a, b, d)
    eeg_T, spec_T = trial_dims(d)
    manifest = []
    src = Path(cfg["eeg_csv"]).stem
    with TrialWriter(run / "trials.aadtrl", eeg_T, x.shape[2], spec_T, N_FREQ, d) as w:
        for j in range(len(x)):
            w.write(x[j], sa[j], sb[j], cfg["attended"])
            manifest.append({"trial": j, "source": src, "span": [j * EEG_RATE, j * EEG_RATE + eeg_T],
                             "label": cfg["attended"]})
    hint = split_dataset(manifest).assignment()
    for e in manifest:
        e["split"] = hint[e["trial"]]
    write_manifest(manifest, run / "trials.manifest.jsonl")
    info = {"n_trials": len(x), "container": str(run / "trials.aadtrl"), "config": cfg}
    _write_json(run / "preprocess.json", info)
    return info


def cmd_train(cfg: dict, run: Path) -> dict:
    from .training import build_model, train

    tc = _train_config(cfg)
    data, _, plan = _load_data(cfg)
    model = _load_model(cfg) if cfg["checkpoint"] else build_model(tc)
    res = train(model, data, plan, tc, run, extra_summary={"config": cfg, "splits": plan.counts()})
    return res.summary


def cmd_eval(cfg: dict, run: Path) -> dict:
    from .model import AblationMode
    from .training import evaluate

    if cfg["ablation"] not in ("none", "zero_eeg", "zero_audio"):
        raise ConfigError(f"ablation must be none, zero_eeg or zero_audio, got {cfg['ablation']!r}")

    data, _, plan = _load_data(cfg)
    model = _load_model(cfg)
    idx = _split_indices(plan, cfg["split"])
    acc, nll = evaluate(model, data, idx, AblationMode(cfg["ablation"]), cfg["eval_batch_size"])
    out = {"split": cfg["split"], "ablation": cfg["ablation"], "accuracy": acc, "loss": nll,
           "n": len(idx), "config": cfg}
    _write_json(run / "eval.json", out)
    return out


def _split_indices(plan, split: str):
    if split not in ("train", "val", "test"):
        raise ConfigError(f"split must be train, val or test, got {split!r}")
    return getattr(plan, split)


def cmd_ablate(cfg: dict, run: Path) -> dict:
    from .model import AblationMode
    from .training import evaluate_ablations, train_architecture_ablation

    try:
        modes = [AblationMode(m.strip()) for m in cfg["ablations"].split(",") if m.strip()]
    except ValueError as e:
        raise ConfigError(str(e)) from None
    data, _, plan = _load_data(cfg)
    idx = _split_indices(plan, cfg["split"])
    masks = [AblationMode.NONE] + [m for m in modes if not m.changes_architecture and m is not AblationMode.NONE]
    out = {"split": cfg["split"], "config": cfg}
    out["modes"] = evaluate_ablations(_load_model(cfg), data, idx, masks, cfg["eval_batch_size"])
    for m in modes:
        if m.changes_architecture:
            res = train_architecture_ablation(data, plan, _train_config(cfg), m, run / m.value)
            out["modes"][m.value] = {"accuracy": res.summary["accuracy_median_last5"],
                                     "params_total": res.summary["params_total"]}
    with open(run / "ablation.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["mode", "accuracy"])
        for k, v in out["modes"].items():
            wr.writerow([k, v["accuracy"]])
    _write_json(run / "ablation.json", out)
    return out


def cmd_prune(cfg: dict, run: Path) -> dict:
    from .sparsify import FinetuneSchedule, finetune, sparsity_report

    if not cfg["checkpoint"]:
        raise ConfigError("prune needs checkpoint= (a dense trained model)")
    ft_epochs = cfg["finetune_epochs"]
    try:
        sched = FinetuneSchedule(cfg["schedule"], cfg["sparsity"], cfg["ramp_epochs"] or max(1, ft_epochs // 2))
    except ValueError as e:
        raise ConfigError(str(e)) from None
    data, _, plan = _load_data(cfg)
    model = _load_model(cfg)
    res = finetune(model, data, plan, sched, _train_config(cfg, epochs=ft_epochs), run)
    rep = sparsity_report(model)
    _write_json(run / "sparsity.json", {"final": rep, "by_epoch": res.sparsity_by_epoch})
    summary = dict(res.train.summary)
    summary["config"] = cfg
    _write_json(run / "summary.json", summary)
    return summary


def cmd_report(cfg: dict, run: Path) -> dict:
    from .autodiff import load_checkpoint
    from .model import format_param_report, param_count
    from .sparsify import sparsity_report
    from .training import read_metrics, summarize

    src = _require(cfg["run_dir"], "run directory")
    metrics = read_metrics(_require(str(src / "metrics.csv"), "metrics.csv"))
    src_cfg = json.loads((src / "config.json").read_text()) if (src / "config.json").exists() else {}
    src_cfg.pop("command", None)
    merged = {**cfg, **{k: v for k, v in src_cfg.items() if k in DEFAULTS}}
    model = _load_model({**merged, "checkpoint": ""})
    ckpts = sorted(src.glob("epoch*.aadw"))
    if ckpts:
        model.load_state_dict(load_checkpoint(ckpts[-1]))
    tc = _train_config(merged)
    summary = summarize(metrics, model, tc, {"config": merged, "source_run": str(src),
                                             "checkpoint": str(ckpts[-1]) if ckpts else None})
    rep = sparsity_report(model)
    summary["sparsity_report"] = rep
    _write_json(run / "report.json", summary)
    text = format_param_report(param_count(model))
    (run / "report.txt").write_text(text + "\n")
    print(text, file=sys.stderr)
    with open(run / "report.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["key", "value"])
        for k in ("accuracy_median_last5", "val_accuracy_median_last5", "params_total",
                  "params_prunable", "params_delta_vs_reference", "sparsity_global"):
            wr.writerow([k, summary[k]])
        for name, layer in rep["layers"].items():
            wr.writerow([f"sparsity.{name}", layer["sparsity"]])
    return summary


HANDLERS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "prune": cmd_prune,
    "report": cmd_report,
}


def dispatch(command: str, cfg: dict) -> int:
    """Run one command; returns the process exit code."""
    if command not in HANDLERS:
        print(f"error: unknown command {command!r}; choose from {', '.join(COMMANDS)}", file=sys.stderr)
        return 2
    try:
        run = make_run_dir(cfg, command)
        HANDLERS[command](cfg, run)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - every runtime failure maps to exit 1
        logging.getLogger(__name__).debug("command failed", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    print(run)
    return 0


def _usage() -> str:
    lines = [__doc__.strip(), "", "Config keys (default):"]
    lines += [f"  {k} ({v[0]!r}): {v[2]}" for k, v in DEFAULTS.items()]
    return "\n".join(lines)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help", "help"):
        print(_usage())
        return 0 if argv else 2
    command, rest = argv[0], argv[1:]
    cfg_file = None
    for i, tok in enumerate(rest):
        if tok.startswith("--config="):
            cfg_file = tok.split("=", 1)[1]
            rest = rest[:i] + rest[i + 1:]
            break
        if tok == "--config":
            if i + 1 >= len(rest):
                print("error: --config needs a file", file=sys.stderr)
                return 2
            cfg_file = rest[i + 1]
            rest = rest[:i] + rest[i + 2:]
            break
    try:
        cfg = parse_config(cfg_file, rest)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", stream=sys.stderr)
    return dispatch(command, cfg)


if __name__ == "__main__":
    sys.exit(main())
