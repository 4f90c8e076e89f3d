"""Command-line entry point.

Exit codes: 0 on success, 2 on usage errors (argparse), 1 on runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from csihar import experiments, plotting
from csihar.bayes import DirichletPrior, counts_from_confusion, evidence_strength, log_bayes_factor, verdict
from csihar.causal import EventPanel, discover_lagged_parents, graph_to_temporal_rules, read_panel_csv, write_graph_csv, write_panel_csv
from csihar.csi import (
    ACTIVITIES,
    DownsampleMode,
    downsample,
    fidelity_metrics,
    load_recording,
    save_pose_csv,
    save_recording,
    spectrum_mse,
    synth_recording,
)
from csihar.errors import CsiharError
from csihar.models import init_cnn, init_snn, cnn_forward, load_checkpoint, params_from_list, params_to_list, save_checkpoint, snn_forward
from csihar.neurosym import build_model, movement_encoding, predict_scores
from csihar.pose import event_panel
from csihar.resources import data_path
from csihar.rules import RuleError, parse_program
from csihar.training import (
    CNN_CONFIG,
    SNN_CONFIG,
    Standardizer,
    TrainConfig,
    evaluate_scores,
    load_config,
    predict,
    read_confusion_csv,
    write_confusion_csv,
    write_metrics_csv,
)

# CLI flag -> TrainConfig field
_CONFIG_FLAGS = {
    "lr": "lr", "epochs": "epochs", "step": "step", "hidden_dim": "hidden_dim",
    "epoch_annealing": "epoch_annealing", "reset": "reset_mechanism", "last_channel": "last_channel",
    "batch_size": "batch_size", "optimizer": "optimizer", "seed": "seed",
}  # fmt: skip


# -- shared helpers --------------------------------------------------------------


def _config(args, base: TrainConfig) -> TrainConfig:
    config = load_config(args.config, base) if args.config else base
    overrides = {field: getattr(args, flag) for flag, field in _CONFIG_FLAGS.items() if getattr(args, flag, None) is not None}
    return replace(config, **overrides)


def _read_rules(name_or_path: str) -> str:
    """A file path, or the name of a bundled program (with or without ``.rules``)."""
    path = Path(name_or_path)
    if path.is_file():
        return path.read_text()
    bundled = data_path(name_or_path if name_or_path.endswith(".rules") else f"{name_or_path}.rules")
    if bundled.is_file():
        return bundled.read_text(encoding="utf-8")
    raise FileNotFoundError(f"no rule file {name_or_path!r}")


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


# -- data commands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    rec, pose = synth_recording(
        args.activity, duration_s=args.duration, subcarriers=args.subcarriers,
        antennas=args.antennas, seed=args.seed, noise_std=args.noise,
    )  # fmt: skip
    save_recording(rec, args.out)
    if args.pose_out:
        save_pose_csv(pose, args.pose_out)
    print(f"wrote {rec.frames} frames x {rec.subcarriers} subcarriers x {rec.antennas} antennas to {args.out}")
    return 0


def cmd_downsample(args) -> int:
    rec = downsample(load_recording(args.input), args.factor, args.mode)
    save_recording(rec, args.out)
    print(f"wrote {rec.frames} frames at {rec.sample_rate:g} Hz to {args.out}")
    return 0


def cmd_downsample_eval(args) -> int:
    if args.input:
        original = load_recording(args.input)
    else:
        original, _ = synth_recording(args.activity, duration_s=args.duration, subcarriers=args.subcarriers,
                                      antennas=args.antennas, seed=args.seed)  # fmt: skip
    modes = [m.value for m in DownsampleMode] if args.mode == "all" else [args.mode]
    out = _out_dir(args.out_dir)
    metrics, spectra, spectrum_rows = {}, {}, None
    for mode in modes:
        down = downsample(original, args.factor, mode)
        rep = fidelity_metrics(original, down)
        values = {"mse_mean": rep.mse_mean, "mse_std": rep.mse_std, "mse_norm1_diff": rep.mse_norm1_diff}
        if args.window:
            win = fidelity_metrics(original, down, window_len=args.window * args.factor)
            values.update(windowed_mse_mean=win.mse_mean, windowed_mse_std=win.mse_std,
                          windowed_mse_norm1_diff=win.mse_norm1_diff)  # fmt: skip
        freqs, sq, orig_mag, down_mag = spectrum_mse(original, down)
        values["spectrum_mse"] = float(sq.mean())
        spectra[mode] = (freqs, down_mag)
        if spectrum_rows is None:
            spectrum_rows = {"freq_hz": freqs, "original": orig_mag}
        spectrum_rows[mode] = down_mag
        print(f"{mode}: " + " ".join(f"{k}={v:.6g}" for k, v in values.items()))
        metrics.update({f"{mode}.{k}": v for k, v in values.items()})
    write_metrics_csv(metrics, out / "fidelity.csv")
    with open(out / "spectrum.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(spectrum_rows)
        w.writerows([[_fmt(v) for v in row] for row in zip(*spectrum_rows.values())])
    plotting.spectrum_figure(spectra, (spectrum_rows["freq_hz"], spectrum_rows["original"]), out / "spectrum.png")
    return 0


# -- training --------------------------------------------------------------------


def _run(kind: str, config: TrainConfig, geometry: dict, rules: str | None):
    if kind == "snn":
        return experiments.run_snn(config, variant=geometry.pop("variant"), **geometry)
    if kind == "cnn":
        return experiments.run_cnn(config, **geometry)
    return experiments.run_neurosym(config, program=rules, **geometry)[1]


def _write_run(out: Path, result: experiments.RunResult, kind: str) -> dict[str, float]:
    report = result.report
    metrics = {"accuracy": report.accuracy, "train_windows": result.train_size, "test_windows": result.test_size,
               "final_loss": result.history[-1]}  # fmt: skip
    metrics.update({f"recall.{c}": float(r) for c, r in zip(report.classes, report.recall)})
    write_metrics_csv(metrics, out / "metrics.csv")
    write_confusion_csv(report, out / "confusion.csv")
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        w.writerows([[i + 1, _fmt(v)] for i, v in enumerate(result.history)])
    # standardiser statistics ride along after the parameters
    save_checkpoint(out / "checkpoint.spkw", params_to_list(result.params) + [result.standardizer.mean, result.standardizer.std])
    plotting.confusion_figure(report, out / "confusion.png")
    plotting.loss_figure(result.history, out / "loss.png")
    if kind == "neurosym":
        plotting.query_figure(result.test_scores, result.test_labels, report.classes, out / "query.png")
    return metrics


def _trial(kind: str, config: TrainConfig, geometry: dict, rules: str | None, out: str) -> dict[str, float]:
    result = _run(kind, config, dict(geometry), rules)
    return _write_run(_out_dir(out), result, kind)


def _train(args, kind: str, base: TrainConfig) -> int:
    config = _config(args, base)
    geometry = {"subcarriers": args.subcarriers, "antennas": args.antennas}
    if kind == "snn":
        geometry["variant"] = args.variant
    if kind != "neurosym":
        geometry["activities"] = tuple(args.activities)
    rules = _read_rules(args.rules) if kind == "neurosym" else None
    out = _out_dir(args.out_dir)
    if args.trials < 1:
        raise CsiharError("--trials must be >= 1")
    if args.trials == 1:
        metrics = [_trial(kind, config, geometry, rules, str(out))]
    else:
        jobs = [(kind, replace(config, seed=config.seed + i), geometry, rules, str(out / f"trial_{i}")) for i in range(args.trials)]
        with ProcessPoolExecutor(max_workers=min(args.trials, os.cpu_count() or 1)) as pool:
            futures = [pool.submit(_trial, *job) for job in jobs]
            metrics = [f.result() for f in futures]  # trial-index order
        acc = [m["accuracy"] for m in metrics]
        summary = {f"trial_{i}.accuracy": a for i, a in enumerate(acc)}
        summary.update(accuracy_mean=float(np.mean(acc)), accuracy_std=float(np.std(acc)))
        write_metrics_csv(summary, out / "metrics.csv")
    for i, m in enumerate(metrics):
        label = f"trial {i} (seed {config.seed + i}): " if args.trials > 1 else ""
        print(f"{label}accuracy={m['accuracy']:.4f} test_windows={m['test_windows']} final_loss={m['final_loss']:.6g}")
    return 0


def cmd_train_snn(args) -> int:
    return _train(args, "snn", SNN_CONFIG)


def cmd_train_cnn(args) -> int:
    return _train(args, "cnn", CNN_CONFIG)


def cmd_train_neurosym(args) -> int:
    return _train(args, "neurosym", SNN_CONFIG)


def cmd_eval(args) -> int:
    """Re-evaluate a saved checkpoint on the held-out windows of the synthetic set for ``--seed``."""
    config = _config(args, CNN_CONFIG if args.model == "cnn" else SNN_CONFIG)
    sc, ant = args.subcarriers, args.antennas
    if args.model == "snn":
        spec = experiments.snn_spec(config, sc, ant, args.variant, len(args.activities))
        template, forward = init_snn(spec), lambda x, p: snn_forward(x, spec, p)
    elif args.model == "cnn":
        spec = experiments.cnn_spec(config, sc, ant, len(args.activities))
        template, forward = init_cnn(spec), lambda x, p: cnn_forward(x, spec, p)
    else:
        activities = ("walking", "squatting")
        labels = [experiments.RULE_LABELS.get(a, a) for a in activities]
        model = build_model(_read_rules(args.rules), labels, sc, ant, config)
        template = model.init_params()
    arrays = load_checkpoint(args.checkpoint)
    if len(arrays) != len(template) + 2:
        raise CsiharError(f"checkpoint holds {len(arrays)} tensors; expected {len(template)} parameters plus 2 standardiser arrays")
    params = params_from_list(template, arrays[:-2])
    std = Standardizer(arrays[-2], arrays[-1])
    if args.model == "neurosym":
        _, test = experiments.split_data(activities, config.seed, sc, ant, encode=movement_encoding)
        test.x = std(test.x)
        scores = predict_scores(model, params, test.x)
    else:
        _, test = experiments.split_data(tuple(args.activities), config.seed, sc, ant)
        test.x = std(test.x)
        scores = predict(forward, params, test.x)
    report = evaluate_scores(scores, test.y, test.classes)
    out = _out_dir(args.out_dir)
    write_confusion_csv(report, out / "confusion.csv")
    write_metrics_csv({"accuracy": report.accuracy, "test_windows": len(test)}, out / "metrics.csv")
    plotting.confusion_figure(report, out / "confusion.png")
    print(f"accuracy={report.accuracy:.4f} test_windows={len(test)}")
    return 0


# -- analysis --------------------------------------------------------------------


def cmd_bayes_compare(args) -> int:
    a, b = read_confusion_csv(args.confusion_a), read_confusion_csv(args.confusion_b)
    if a.confusion.shape != b.confusion.shape:
        raise CsiharError(f"confusion matrices differ in size: {a.confusion.shape} vs {b.confusion.shape}")
    prior = DirichletPrior(args.u_correct, args.u_error)
    lbf = log_bayes_factor(counts_from_confusion(a.confusion), counts_from_confusion(b.confusion), prior)
    print(f"log_bf={lbf!r}")
    print(f"verdict={verdict(lbf)}")
    print(f"evidence={evidence_strength(lbf)}")
    return 0


def cmd_causal(args) -> int:
    if args.panel:
        panel = read_panel_csv(args.panel)
    else:
        # one segment per activity, back to back, so events switch on and off
        parts = []
        for i, act in enumerate(args.activity):
            _, pose = synth_recording(act, duration_s=args.duration, subcarriers=8, antennas=1, seed=args.seed * 100 + i)
            parts.append(event_panel(pose, window=args.window))
        panel = EventPanel(parts[0].variables, np.concatenate([p.values for p in parts]))
    graph = discover_lagged_parents(panel, max_lag=args.max_lag, alpha=args.alpha, permutations=args.permutations, seed=args.seed)
    out = _out_dir(args.out_dir)
    write_panel_csv(panel, out / "panel.csv")
    write_graph_csv(graph, out / "graph.csv")
    activity = args.label or experiments.RULE_LABELS.get(args.activity[0], args.activity[0])
    (out / "rules.pl").write_text(graph_to_temporal_rules(graph, activity))
    print(f"{panel.steps} steps, {len(panel.variables)} variables, {len(graph.edges)} edges")
    for e in graph.edges:
        print(f"{e.source} -[lag {e.lag}]-> {e.target}  cmi={e.cmi_bits:.4f} bits  p={e.p_value:.4f}")
    return 0


def cmd_rules_check(args) -> int:
    program = parse_program(_read_rules(args.rules))
    print(f"{len(program.clauses)} clauses, {len(program.neural_decls)} neural declarations, "
          f"{len(program.prob_facts)} probabilistic facts, {len(program.facts)} facts")  # fmt: skip
    for clause in program.clauses:
        print(f"  {clause}")
    return 0


# -- parser ----------------------------------------------------------------------


def _add_geometry(p, subcarriers: int = 64) -> None:
    p.add_argument("--subcarriers", type=int, default=subcarriers)
    p.add_argument("--antennas", type=int, default=4)


def _add_train_flags(p, seed_help: str = "seed for data, initialisation and batching") -> None:
    p.add_argument("--config", help="key = value file; flags given here override it")
    p.add_argument("--seed", type=int, help=seed_help)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--step", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--epoch-annealing", type=int)
    p.add_argument("--reset", choices=("zero", "subtract"))
    p.add_argument("--last-channel", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    _add_geometry(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csihar", description="Wi-Fi CSI activity recognition toolkit")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="write a synthetic CSI recording")
    p.add_argument("--activity", choices=ACTIVITIES, default="walking")
    p.add_argument("--duration", type=float, default=80.0, help="seconds")
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--pose-out")
    _add_geometry(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("downsample", help="downsample a CSI recording")
    p.add_argument("input")
    p.add_argument("--factor", type=int, default=5)
    p.add_argument("--mode", choices=[m.value for m in DownsampleMode], default="mean")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_downsample)

    p = sub.add_parser("downsample-eval", help="fidelity metrics and spectra of downsampling modes")
    p.add_argument("--input", help="CSI recording; a synthetic one is generated when omitted")
    p.add_argument("--mode", choices=[m.value for m in DownsampleMode] + ["all"], default="all")
    p.add_argument("--factor", type=int, default=5)
    p.add_argument("--window", type=int, default=0, help="also report windowed metrics over this many downsampled frames")
    p.add_argument("--activity", choices=ACTIVITIES, default="walking")
    p.add_argument("--duration", type=float, default=80.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="downsample_eval")
    _add_geometry(p)
    p.set_defaults(func=cmd_downsample_eval)

    for name, func, help_ in (
        ("train-snn", cmd_train_snn, "train a spiking classifier"),
        ("train-cnn", cmd_train_cnn, "train the convolutional baseline"),
        ("train-neurosym", cmd_train_neurosym, "train feature heads through a rule program"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_train_flags(p)
        p.add_argument("--trials", type=int, default=1, help="independent seeded trials run in parallel")
        p.add_argument("--out-dir", default=name.replace("-", "_"))
        if name == "train-neurosym":
            p.add_argument("--rules", default="walk_squat")
        else:
            p.add_argument("--activities", nargs="+", choices=ACTIVITIES, default=list(ACTIVITIES))
        if name == "train-snn":
            p.add_argument("--variant", choices=("model1", "model2"), default="model2")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out synthetic windows")
    p.add_argument("--model", choices=("snn", "cnn", "neurosym"), required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--variant", choices=("model1", "model2"), default="model2")
    p.add_argument("--rules", default="walk_squat")
    p.add_argument("--activities", nargs="+", choices=ACTIVITIES, default=list(ACTIVITIES))
    p.add_argument("--out-dir", default="eval")
    _add_train_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bayes-compare", help="Bayes factor for two confusion matrices")
    p.add_argument("confusion_a")
    p.add_argument("confusion_b")
    p.add_argument("--u-correct", type=float, default=1.0)
    p.add_argument("--u-error", type=float, default=0.01)
    p.set_defaults(func=cmd_bayes_compare)

    p = sub.add_parser("causal", help="lagged causal discovery over movement events")
    p.add_argument("--panel", help="binary panel CSV; otherwise built from a synthetic pose")
    p.add_argument("--activity", nargs="+", choices=ACTIVITIES, default=["walking"],
                   help="synthetic activity segments concatenated into one panel")
    p.add_argument("--duration", type=float, default=80.0, help="seconds per activity segment")
    p.add_argument("--window", type=int, default=9, help="pose frames per panel step")
    p.add_argument("--label", help="activity constant for the emitted rules (default: first activity)")
    p.add_argument("--max-lag", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--permutations", type=int, default=199)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="causal")
    p.set_defaults(func=cmd_causal)

    p = sub.add_parser("rules-check", help="parse a rule program and list its clauses")
    p.add_argument("rules", help="file path or bundled program name")
    p.set_defaults(func=cmd_rules_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CsiharError, RuleError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
