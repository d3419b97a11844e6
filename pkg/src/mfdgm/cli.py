"""Command-line front end.

    mfdgm train     --preset test1 [--config FILE] [--seed N] [--out DIR]
                    [--resume CKPT]
    mfdgm gradcheck [--seed N] [--out DIR]
    mfdgm compare   --preset compare [--config FILE] [--out DIR]
    mfdgm traffic   --preset traffic0 [--config FILE] [--seed N] [--out DIR]

A run starts from preset defaults (if --preset is given), applies the
config file on top (if any), then the --seed flag.  The output directory
comes from --out, else the MFDGM_OUT environment variable, else
./mfdgm_runs/<command>[_<preset>].

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 numeric abort (non-finite loss).

Every CSV has a header row and decimal-point floats with 17 significant
digits; metrics files contain no timing, so reruns with the same seed are
byte-identical.  Wall time goes to summary.json only.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys

import numpy as np

from .checkpoint import atomic_write_text, load_checkpoint, save_checkpoint
from .config import (
    ExperimentConfig,
    build_problem,
    build_train_config,
    config_hash,
    config_to_text,
    load_config,
    preset_config,
    validate_config,
)
from .errors import CheckpointError, ConfigError, MFDGMError, NumericError, UsageError
from .evaluation import evaluate_network_grid, fundamental_diagram, speed_field
from .gradcheck import run_gradcheck
from .training import TrainerState, train

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_json(path, payload):
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def resolve_out_dir(args, default_tag: str) -> str:
    out = args.out or os.environ.get("MFDGM_OUT")
    if not out:
        out = os.path.join("mfdgm_runs", default_tag)
    os.makedirs(out, exist_ok=True)
    return out


def effective_config(args) -> ExperimentConfig:
    config = preset_config(args.preset) if args.preset else ExperimentConfig()
    if args.config:
        config = load_config(args.config, base=config)
    if getattr(args, "seed", None) is not None:
        from dataclasses import replace
        config = replace(config, seed=args.seed)
    validate_config(config)
    return config


def _metrics_rows(metrics, which: str):
    for m in metrics:
        if which == "hjb":
            yield (m.iteration, m.hjb_residual, m.hjb_condition, m.hjb_total)
        else:
            yield (m.iteration, m.fp_residual, m.fp_condition, m.fp_total)


def write_metrics(out_dir, metrics, has_exact: bool):
    write_csv(os.path.join(out_dir, "loss_hjb.csv"),
              ["iteration", "residual_part", "condition_part", "total"],
              _metrics_rows(metrics, "hjb"))
    write_csv(os.path.join(out_dir, "loss_fp.csv"),
              ["iteration", "residual_part", "condition_part", "total"],
              _metrics_rows(metrics, "fp"))
    if has_exact:
        write_csv(os.path.join(out_dir, "rel_err.csv"),
                  ["iteration", "rel_err_rho", "rel_err_phi"],
                  ((m.iteration, m.rel_err_rho, m.rel_err_phi) for m in metrics))


def _run_summary(config, result):
    last = result.metrics[-1] if result.metrics else None
    return {
        "preset": config.preset or "custom",
        "status": result.status,
        "abort_iteration": result.abort_iteration,
        "iterations_done": result.iterations_done,
        "config_hash": config_hash(config),
        "final": None if last is None else {
            "iteration": last.iteration,
            "loss_hjb_total": last.hjb_total,
            "loss_fp_total": last.fp_total,
            "rel_err_rho": last.rel_err_rho,
            "rel_err_phi": last.rel_err_phi,
        },
        "wall_time_seconds": None if last is None else last.wall_time,
    }


def cmd_train(args) -> int:
    config = effective_config(args)
    out_dir = resolve_out_dir(args, f"train_{config.preset or 'custom'}")
    problem = build_problem(config)
    train_config = build_train_config(config, problem)
    chash = config_hash(config)

    state = None
    if args.resume:
        payload = load_checkpoint(args.resume, expected_config_hash=chash)
        state = payload["state"]

    ckpt_path = os.path.join(out_dir, "checkpoint.json")

    def on_record(st: TrainerState):
        if config.checkpoint_every > 0 and st.iteration % config.checkpoint_every == 0:
            save_checkpoint(ckpt_path, st, train_config.phi_network,
                            train_config.rho_network, chash)

    result = train(problem, train_config, state, on_record=on_record)
    write_metrics(out_dir, result.metrics, problem.exact is not None)
    # a final record at an off-cadence iteration belongs to this run's CSVs
    # but not to a continuation: a longer run would never have produced it
    ckpt_metrics = [m for m in result.metrics if m.iteration % config.record_every == 0]
    final_state = TrainerState(
        phi_params=result.phi_params, rho_params=result.rho_params,
        phi_opt=result.phi_opt, rho_opt=result.rho_opt,
        rng=_rng_from_snapshot(result.rng_snapshot),
        iteration=result.iterations_done, metrics=ckpt_metrics)
    save_checkpoint(ckpt_path, final_state, train_config.phi_network,
                    train_config.rho_network, chash)
    write_json(os.path.join(out_dir, "summary.json"), _run_summary(config, result))
    atomic_write_text(os.path.join(out_dir, "config.ini"), config_to_text(config))
    if result.status != "completed":
        print(f"aborted on non-finite loss at iteration {result.abort_iteration}; "
              f"outputs in {out_dir}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"completed {result.iterations_done} iterations; outputs in {out_dir}")
    return EXIT_OK


def _rng_from_snapshot(snapshot):
    from .sampling import restore_rng
    return restore_rng(snapshot)


def cmd_gradcheck(args) -> int:
    out_dir = resolve_out_dir(args, "gradcheck")
    report = run_gradcheck(seed=args.seed if args.seed is not None else 0)
    write_json(os.path.join(out_dir, "gradcheck_report.json"), report)
    for name, check in sorted(report["checks"].items()):
        status = "ok" if check["passed"] else "FAIL"
        print(f"{status:4s} {name}: max rel err {check['max_rel_err']:.3e} "
              f"(tolerance {check['tolerance']:.0e})")
    if not report["passed"]:
        worst = max(report["checks"].items(), key=lambda kv: kv[1]["max_rel_err"] / kv[1]["tolerance"])
        print(f"verification failed; worst offender: {worst[0]} "
              f"at {worst[1]['max_rel_err']:.3e}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    print(f"all checks passed; report in {out_dir}")
    return EXIT_OK


def cmd_compare(args) -> int:
    config = effective_config(args)
    out_dir = resolve_out_dir(args, f"compare_{config.preset or 'custom'}")
    problem = build_problem(config)
    if problem.exact is None:
        raise ConfigError("the comparison needs a problem with an exact solution")
    chash = config_hash(config)

    aborted = False
    for seed in config.compare_seeds:
        for mode in ("mfdgm", "dgm_mfg"):
            if mode == "mfdgm":
                tc = build_train_config(config, problem, mode=mode, seed=seed)
            else:
                tc = build_train_config(
                    config, problem, mode=mode, optimizer="sgd", seed=seed,
                    phi_lr=config.baseline_lr, rho_lr=config.baseline_lr,
                    weight_decay=config.baseline_weight_decay)
            result = train(problem, tc)
            aborted = aborted or result.status != "completed"
            write_csv(os.path.join(out_dir, f"rel_err_{mode}_seed{seed}.csv"),
                      ["iteration", "rel_err_rho", "rel_err_phi"],
                      ((m.iteration, m.rel_err_rho, m.rel_err_phi) for m in result.metrics))

    # medians recomputed from the emitted trajectory files, so the summary
    # is reproducible from the artifacts alone
    summary = {"preset": config.preset or "custom", "config_hash": chash,
               "seeds": list(config.compare_seeds), "methods": {}}
    for mode in ("mfdgm", "dgm_mfg"):
        finals_rho, finals_phi = [], []
        for seed in config.compare_seeds:
            path = os.path.join(out_dir, f"rel_err_{mode}_seed{seed}.csv")
            with open(path, "r", encoding="utf-8") as handle:
                last = handle.read().strip().splitlines()[-1].split(",")
            finals_rho.append(float(last[1]))
            finals_phi.append(float(last[2]))
        summary["methods"][mode] = {
            "final_rel_err_rho": finals_rho,
            "final_rel_err_phi": finals_phi,
            "median_final_rel_err_rho": statistics.median(finals_rho),
            "median_final_rel_err_phi": statistics.median(finals_phi),
        }
    write_json(os.path.join(out_dir, "compare_summary.json"), summary)
    med = {m: summary["methods"][m]["median_final_rel_err_phi"] for m in summary["methods"]}
    print(f"median final value-function error: mfdgm {med['mfdgm']:.4f} "
          f"vs dgm_mfg {med['dgm_mfg']:.4f}; outputs in {out_dir}")
    return EXIT_NUMERIC if aborted else EXIT_OK


_SLICE_LABELS = ((0.0, "0"), (0.5, "05"), (1.0, "1"))


def cmd_traffic(args) -> int:
    config = effective_config(args)
    if config.problem_kind != "traffic":
        raise ConfigError("the traffic command needs a traffic problem "
                          "(use --preset traffic0 or traffic05)")
    out_dir = resolve_out_dir(args, f"traffic_{config.preset or 'custom'}")
    problem = build_problem(config)
    train_config = build_train_config(config, problem)
    result = train(problem, train_config)
    write_metrics(out_dir, result.metrics, has_exact=False)

    x_axis = np.linspace(problem.omega_lo[0], problem.omega_hi[0], config.grid_nx)
    diagram_rows = []
    max_abs_phi_terminal = None
    for frac, label in _SLICE_LABELS:
        t_val = frac * problem.T
        t_axis = np.array([t_val])
        rho = evaluate_network_grid(result.rho_params, train_config.rho_network,
                                    t_axis, x_axis, "value")
        phi = evaluate_network_grid(result.phi_params, train_config.phi_network,
                                    t_axis, x_axis, "value")
        v_x = evaluate_network_grid(result.phi_params, train_config.phi_network,
                                    t_axis, x_axis, "x_derivative")
        u = speed_field(rho, v_x)
        q = fundamental_diagram(rho, u)
        for name, grid in (("rho", rho), ("phi", phi), ("u", u), ("q", q)):
            write_csv(os.path.join(out_dir, f"{name}_t{label}.csv"),
                      ["x", "value"], zip(x_axis.tolist(), grid.values[0].tolist()))
        diagram_rows.extend(
            (t_val, float(x_axis[i]), float(rho.values[0, i]), float(u.values[0, i]),
             float(q.values[0, i])) for i in range(x_axis.shape[0]))
        if label == "1":
            max_abs_phi_terminal = float(np.max(np.abs(phi.values)))
    write_csv(os.path.join(out_dir, "diagram_rho_q.csv"),
              ["t", "x", "rho", "u", "q"], diagram_rows)
    ref_rho = np.linspace(0.0, 1.0, 101)
    write_csv(os.path.join(out_dir, "diagram_greenshields.csv"),
              ["rho", "q"], zip(ref_rho.tolist(), (ref_rho * (1.0 - ref_rho)).tolist()))

    summary = _run_summary(config, result)
    summary["max_abs_phi_terminal"] = max_abs_phi_terminal
    write_json(os.path.join(out_dir, "summary.json"), summary)
    if result.status != "completed":
        print(f"aborted on non-finite loss at iteration {result.abort_iteration}",
              file=sys.stderr)
        return EXIT_NUMERIC
    print(f"completed; max |value fn| on the terminal slice: "
          f"{max_abs_phi_terminal:.4f}; outputs in {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfdgm",
        description="Mean-field-game solver: two networks trained on "
                    "Monte-Carlo residuals of the HJB and Fokker-Planck equations.")
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "train": "train one configuration and emit loss/error CSVs",
        "gradcheck": "verify jets, parameter gradients and problem callbacks",
        "compare": "alternating scheme vs summed-loss SGD baseline over a seed set",
        "traffic": "train a traffic preset and dump field slices and the flux diagram",
    }
    for name, help_text in specs.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="INI config file applied over the preset")
        sp.add_argument("--preset", help="named experiment preset")
        sp.add_argument("--seed", type=int, help="override the training seed")
        sp.add_argument("--out", help="output directory (else $MFDGM_OUT, else ./mfdgm_runs)")
        if name == "train":
            sp.add_argument("--resume", help="checkpoint file to continue from")
    return parser


_COMMANDS = {
    "train": cmd_train,
    "gradcheck": cmd_gradcheck,
    "compare": cmd_compare,
    "traffic": cmd_traffic,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, CheckpointError, UsageError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
