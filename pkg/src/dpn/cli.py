"""Command line: ``dpn {synth,pretrain,train,eval,analyze}``.

Exit status 0 on success, 1 on a runtime failure, 2 on a configuration error.
Every run directory receives ``config.txt`` (resolved configuration),
``schema.txt`` (output schema version and files) and ``status.txt``.
"""
import argparse
import dataclasses
import logging
import sys
import traceback
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import analysis
from .checkpoint import load_checkpoint, save_checkpoint
from .config import SCHEMA_VERSION, ConfigError, RunConfig, field_types, load_snapshot, resolve
from .data import ensure_dir
from .metrics import rela_impr
from .model import DPN
from .pipeline import load_prepared, pattern_corpus
from .refinement import RefinementNetwork, pretrain
from .synthetic import generate_synthetic, read_ground_truth
from .training import evaluate, train

log = logging.getLogger("dpn")

COMMANDS = ("synth", "pretrain", "train", "eval", "analyze")
PATH_FIELDS = ("out_dir", "data_dir", "interactions", "impressions", "sprm_checkpoint", "model_run", "baseline_run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpn", description="Deep Pattern Network CTR experiments")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat key = value file; flags override it")
    parser.add_argument("--quiet", action="store_true")
    for name, kind in field_types().items():
        if name == "command":
            continue
        flag = "--" + name.replace("_", "-")
        if kind is bool:
            parser.add_argument(flag, dest=name, nargs="?", const="true", default=None, metavar="BOOL")
        else:
            parser.add_argument(flag, dest=name, default=None, metavar=getattr(kind, "__name__", "X").upper())
    return parser


def config_from_args(argv) -> RunConfig:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        raise ConfigError("invalid command line") if exc.code else exc
    overrides = {k: v for k, v in vars(args).items() if k in field_types() and v is not None}
    overrides["command"] = args.command
    for key in PATH_FIELDS:
        if overrides.get(key):
            overrides[key] = str(Path(overrides[key]).resolve())
    cfg = resolve(args.config, overrides)
    for key in PATH_FIELDS:
        value = getattr(cfg, key)
        if value and not Path(value).is_absolute():
            setattr(cfg, key, str(Path(args.config).parent.joinpath(value).resolve() if args.config
                                  else Path(value).resolve()))
    return cfg


# commands


def cmd_synth(cfg: RunConfig, out: Path) -> list:
    ds = generate_synthetic(cfg.synthetic_spec(), seed=cfg.seed)
    ds.write(out)
    analysis.write_rows(out / "synth_summary.csv", ["users", "records", "impressions", "clicks"],
                        [[cfg.n_users, len(ds.records), len(ds.impressions),
                          sum(i["label"] for i in ds.impressions)]])
    return ["interactions.csv", "impressions.csv", "ground_truth.csv", "synth_summary.csv"]


def _prepared(cfg: RunConfig):
    if not (cfg.data_dir or cfg.interactions):
        raise ConfigError("no dataset: set data_dir or interactions")
    try:
        return load_prepared(cfg.data_dir, cfg.interactions, cfg.impressions, cfg.columns(), cfg.seq_len,
                             cfg.test_fraction, cfg.seed, cfg.neg_ratio)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None


def cmd_pretrain(cfg: RunConfig, out: Path) -> list:
    prep = _prepared(cfg)
    pcfg = cfg.pretrain_config()
    items, cats = pattern_corpus(prep, pcfg.s, cfg.pretrain_max_patterns, cfg.seed)
    if len(items) == 0:
        raise ConfigError(f"empty pretraining corpus: no fully valid length-{pcfg.s} windows in the histories")
    net, metrics = pretrain(items, cats, prep.vocab.n_items, prep.vocab.n_categories, pcfg)
    save_checkpoint(out / "sprm.ckpt", net.state_dict())
    analysis.write_rows(out / "pretrain_metrics.csv", ["epoch", "loss", "recovery"],
                        [[m["epoch"], analysis.fmt(m["loss"]), analysis.fmt(m["recovery"])] for m in metrics])
    return ["sprm.ckpt", "pretrain_metrics.csv"]


def _load_sprm(cfg: RunConfig):
    if cfg.base_only or cfg.no_sprm:
        return None
    if not cfg.sprm_checkpoint:
        raise ConfigError("no refinement checkpoint: run `dpn pretrain` and pass --sprm-checkpoint "
                          "<run>/sprm.ckpt, or train with --no-sprm")
    path = Path(cfg.sprm_checkpoint)
    if path.is_dir():
        path = path / "sprm.ckpt"
    if not path.is_file():
        raise ConfigError(f"refinement checkpoint not found: {path} (run `dpn pretrain` first or use --no-sprm)")
    net = RefinementNetwork.from_state(load_checkpoint(path), heads=cfg.heads)
    net.freeze()
    return net


def cmd_train(cfg: RunConfig, out: Path) -> list:
    sprm = _load_sprm(cfg)
    prep = _prepared(cfg)
    model, rows = train(prep.train, prep.test, prep.vocab.n_items, prep.vocab.n_categories,
                        cfg.train_config(), sprm)
    save_checkpoint(out / "model.ckpt", model.state_dict())
    analysis.write_rows(out / "train_log.csv", ["epoch", "split", "loss", "auc"],
                        [[r["epoch"], r["split"], analysis.fmt(r["loss"]), analysis.fmt(r["auc"])] for r in rows])
    return ["model.ckpt", "train_log.csv"]


def load_run(run_dir: str):
    """Rebuild ``(config, prepared data, model)`` from a train run directory."""
    run = Path(run_dir)
    if not (run / "config.txt").is_file() or not (run / "model.ckpt").is_file():
        raise ConfigError(f"{run} is not a finished train run (needs config.txt and model.ckpt)")
    cfg = load_snapshot(run / "config.txt")
    sprm = _load_sprm(cfg)
    prep = _prepared(cfg)
    model = DPN(prep.vocab.n_items, prep.vocab.n_categories, cfg.train_config(), sprm)
    model.load_state_dict(load_checkpoint(run / "model.ckpt"))
    return cfg, prep, model


def cmd_eval(cfg: RunConfig, out: Path) -> list:
    if not cfg.model_run:
        raise ConfigError("eval needs --model-run <train run directory>")
    _, prep, model = load_run(cfg.model_run)
    res = evaluate(model, prep.test)
    rows = [["model", cfg.model_run, analysis.fmt(res.auc), analysis.fmt(res.loss), ""]]
    if cfg.baseline_run:
        _, bprep, base = load_run(cfg.baseline_run)
        bres = evaluate(base, bprep.test)
        rows.append(["baseline", cfg.baseline_run, analysis.fmt(bres.auc), analysis.fmt(bres.loss), ""])
        rows[0][4] = analysis.fmt(rela_impr(res.auc, bres.auc))
    analysis.write_rows(out / "eval.csv", ["role", "run", "auc", "logloss", "rela_impr_pct"], rows)
    for r in rows:
        print(f"{r[0]}: auc={r[2]} logloss={r[3]}" + (f" RelaImpr={r[4]}%" if r[4] else ""))
    return ["eval.csv"]


def cmd_analyze(cfg: RunConfig, out: Path) -> list:
    if not cfg.model_run:
        raise ConfigError("analyze needs --model-run <train run directory>")
    mcfg, prep, model = load_run(cfg.model_run)
    files = []
    # pattern frequency
    freq_rows, top_rows = [], []
    for kind, table in analysis.frequency_tables(prep.records, cfg.pattern_order, cfg.top_patterns).items():
        freq_rows += [[kind, f, n] for f, n in table.histogram]
        top_rows += [[kind, rank, " ".join(map(str, p)), c] for rank, (p, c) in enumerate(table.top, 1)]
    analysis.write_rows(out / "pattern_frequency.csv", ["kind", "frequency", "n_patterns"], freq_rows)
    analysis.write_rows(out / "pattern_top.csv", ["kind", "rank", "pattern", "count"], top_rows)
    files += ["pattern_frequency.csv", "pattern_top.csv"]
    # IntraPMI of raw vs refined patterns
    sprm = model.sprm
    if sprm is None and mcfg.sprm_checkpoint:
        sprm = _load_sprm(dataclasses.replace(mcfg, no_sprm=False, base_only=False))
    if sprm is not None:
        raw, refined = analysis.retrieved_patterns(model, prep.test, sprm, mcfg.top_k, mcfg.pattern_len,
                                                   mcfg.refined_len)
        users = analysis.user_item_sets(prep.records, prep.vocab)
        s_raw = analysis.intra_pmi_scores(raw, users, prep.vocab.n_items)
        s_ref = analysis.intra_pmi_scores(refined, users, prep.vocab.n_items)
        analysis.write_cdf(out / "intrapmi_raw_cdf.csv", s_raw)
        analysis.write_cdf(out / "intrapmi_refined_cdf.csv", s_ref)
        analysis.write_rows(out / "intrapmi_summary.csv", ["patterns", "n", "mean_normalized", "normalization"],
                            [["raw", len(s_raw), analysis.fmt(s_raw.mean()), analysis.NORMALIZATION],
                             ["refined", len(s_ref), analysis.fmt(s_ref.mean()), analysis.NORMALIZATION]])
        files += ["intrapmi_raw_cdf.csv", "intrapmi_refined_cdf.csv", "intrapmi_summary.csv"]
    else:
        log.warning("no refinement network available; skipping the IntraPMI analysis")
    # conditional MI matrices
    gt = Path(mcfg.data_dir) / "ground_truth.csv" if mcfg.data_dir else None
    if gt is not None and gt.is_file():
        templates, _ = read_ground_truth(gt)
        sets = analysis.template_pattern_sets(prep.test, templates, prep.vocab)
    else:
        sets = analysis.frequent_pattern_sets(prep.test, prep.vocab)
    scores = evaluate(model, prep.test).scores
    mats = analysis.cmi_matrices(sets, prep.test, scores, cfg.min_support)
    sim_rows = []
    if cfg.baseline_run:
        _, bprep, base = load_run(cfg.baseline_run)
        mats["baseline"] = analysis.cmi_matrices(sets, bprep.test, evaluate(base, bprep.test).scores,
                                                 cfg.min_support)["model"]
    for name, m in mats.items():
        analysis.write_matrix(out / f"cmi_{name}.csv", sets, m)
        files.append(f"cmi_{name}.csv")
    if "truth" in mats:
        for name in ("model", "baseline", "labels"):
            if name in mats:
                sim_rows.append([name, analysis.fmt(analysis.similarity_or_nan(mats[name], mats["truth"]))])
        analysis.write_rows(out / "cmi_similarity.csv", ["matrix", "pearson_vs_truth"], sim_rows)
        files.append("cmi_similarity.csv")
    # case-study dumps
    if cfg.dump_instances > 0:
        analysis.debug_dump(model, prep.test, prep.vocab, out, cfg.dump_instances)
        files += ["dump_attention.csv", "dump_patterns.csv"]
    return files


HANDLERS = {"synth": cmd_synth, "pretrain": cmd_pretrain, "train": cmd_train, "eval": cmd_eval,
            "analyze": cmd_analyze}


def _write_status(out, code: int, message: str) -> None:
    if out is None:
        return
    try:
        (out / "status.txt").write_text(f"exit_status = {code}\nmessage = {message}\n")
    except OSError:
        pass


def run(argv=None) -> int:
    out = None
    try:
        cfg = config_from_args(sys.argv[1:] if argv is None else argv)
        out = ensure_dir(cfg.out_dir)
        (out / "config.txt").write_text(cfg.dumps())
        with threadpool_limits(limits=cfg.threads):
            files = HANDLERS[cfg.command](cfg, out)
        (out / "schema.txt").write_text(f"schema_version = {SCHEMA_VERSION}\ncommand = {cfg.command}\n"
                                        + "".join(f"file = {f}\n" for f in files))
    except ConfigError as exc:
        print(f"dpn: configuration error: {exc}", file=sys.stderr)
        _write_status(out, 2, str(exc))
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level guard maps failures to exit 1
        log.debug("%s", traceback.format_exc())
        print(f"dpn: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        _write_status(out, 1, f"{type(exc).__name__}: {exc}")
        return 1
    _write_status(out, 0, "ok")
    return 0


def main(argv=None) -> None:
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(level=logging.WARNING if "--quiet" in argv else logging.INFO,
                        format="%(asctime)s %(name)s %(message)s")
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
