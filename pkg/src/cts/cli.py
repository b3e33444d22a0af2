"""Command-line entry point wiring configs to the pipeline stages.

Configuration is one TOML file; ``--set section.key=value`` overrides
individual entries. Exit codes: 0 success, 1 usage error, 2 data or
format error, 3 numeric failure. Progress goes to stderr, results to
files and stdout. Stages are resumable: a rerun skips work whose outputs
exist and whose input hashes match.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .classify import ClassifierConfig, save_classifier, train_classifier
from .corpus import MULTI_CLASS, save_corpus, save_ontology
from .encoder import (
    EMBED_URL_ENV,
    HttpEncoderBackend,
    embed_corpus,
    load_embeddings,
    save_embeddings,
)
from .errors import (
    ArgumentError,
    CtsError,
    NumericError,
)
from .experiments import (
    CrossLingualConfig,
    ExperimentConfig,
    config_hash,
    load_prepared_corpus,
    run_cross_corpus,
    run_cross_lingual,
    run_within_corpus,
    combine_reports,
    render_report,
    stage_seed,
    write_report_files,
    VARIANT_CTS,
    VARIANT_SE,
    SETUP_LOW,
)
from .pairgen import PairGenConfig, save_pairs
from .specialize import (
    CtsConfig,
    head_encode,
    init_head,
    load_head,
    save_head,
    save_loss_curve,
    specialize,
)
from .splits import (
    indices_for_events,
    kfold_disjoint_events,
    sample_low_resource,
    save_fold_plan,
    validation_split,
)
from .experiments import _generate_pairs, _labels_for  # stage commands mirror the pipeline

log = logging.getLogger(__name__)


class UsageError(Exception):
    pass


_DEFAULTS: dict = {
    "corpus": {
        "path": "",
        "ontology": "",
        "name": "",
        "drop_labels": [],
        "top_events": 0,
        "relevancy": False,
    },
    "embeddings": {
        "store": "",
        "url": "",
        "batch_size": 32,
        "max_in_flight": 1,
    },
    "splits": {
        "k": 5,
        "quota": 10,
        "val_ratio": 0.1,
    },
    "pairgen": {
        "n": 0,
        "dedup": False,
    },
    "specialize": {
        "margin": 0.5,
        "epochs": 3,
        "batch_pairs": 64,
        "lr": 2e-5,
        "weight_decay": 0.01,
        "warmup_ratio": 0.05,
    },
    "classify": {
        "epochs": 30,
        "lr": 1e-3,
        "weight_decay": 0.01,
        "batch": 32,
        "dropout": 0.4,
        "threshold": 0.3,
        "hidden": 512,
    },
    "experiment": {
        "setup": "high",
        "variants": ["se", "se+cts"],
        "seed": 7,
        "run_seeds": [],
        "output": "runs",
        "jobs": 1,
        "pooled_scoring": False,
    },
    "crosslingual": {
        "target_corpus": "",
        "target_ontology": "",
        "target_embeddings": "",
        "translated_corpus": "",
        "translated_embeddings": "",
        "target_name": "",
        "random_seed": 1234,
    },
}


def _coerce(raw: str, like):
    if isinstance(like, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"expected a boolean, got {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, list):
        if raw.startswith("["):
            return json.loads(raw)
        return [x for x in raw.split(",") if x]
    return raw


def load_config(path: str, overrides: list[str] | None = None) -> dict:
    """Read the TOML config, merge over defaults, apply --set overrides."""
    if not Path(path).exists():
        raise UsageError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"invalid TOML in {path}: {exc}") from exc

    cfg = {section: dict(values) for section, values in _DEFAULTS.items()}
    for section, values in raw.items():
        if section not in cfg:
            raise UsageError(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise UsageError(f"[{section}] must be a table")
        for key, value in values.items():
            if key not in cfg[section]:
                raise UsageError(f"unknown config key {section}.{key}")
            cfg[section][key] = value

    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        dotted, value = item.split("=", 1)
        parts = dotted.split(".")
        if len(parts) != 2 or parts[0] not in cfg or parts[1] not in cfg[parts[0]]:
            raise UsageError(f"--set references unknown config key {dotted!r}")
        section, key = parts
        cfg[section][key] = _coerce(value, _DEFAULTS[section][key])
    return cfg


def experiment_config(cfg: dict, variant: str, args=None) -> ExperimentConfig:
    seed = cfg["experiment"]["seed"]
    jobs = cfg["experiment"]["jobs"]
    if args is not None and getattr(args, "seed", None) is not None:
        seed = args.seed
    if args is not None and getattr(args, "jobs", None) is not None:
        jobs = args.jobs
    if not cfg["corpus"]["path"]:
        raise UsageError("corpus.path is not set")
    if not cfg["corpus"]["ontology"]:
        raise UsageError("corpus.ontology is not set")
    return ExperimentConfig(
        corpus_path=cfg["corpus"]["path"],
        ontology_path=cfg["corpus"]["ontology"],
        embeddings_path=cfg["embeddings"]["store"],
        name=cfg["corpus"]["name"],
        variant=variant,
        setup=cfg["experiment"]["setup"],
        folds=cfg["splits"]["k"],
        seed=seed,
        run_seeds=tuple(cfg["experiment"]["run_seeds"]),
        quota=cfg["splits"]["quota"],
        val_ratio=cfg["splits"]["val_ratio"],
        pair_n=cfg["pairgen"]["n"],
        pair_dedup=cfg["pairgen"]["dedup"],
        drop_labels=tuple(cfg["corpus"]["drop_labels"]),
        top_events=cfg["corpus"]["top_events"],
        relevancy=cfg["corpus"]["relevancy"],
        pooled_scoring=cfg["experiment"]["pooled_scoring"],
        cts=CtsConfig(**cfg["specialize"]),
        classifier=ClassifierConfig(**cfg["classify"]),
        output_dir=cfg["experiment"]["output"],
        jobs=jobs,
    )


# ------------------------------------------------------------ stage caching

def _digest(*parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, (str, Path)) and Path(part).is_file():
            h.update(Path(part).read_bytes())
        else:
            h.update(json.dumps(part, sort_keys=True, default=str).encode())
        h.update(b"\x00")
    return h.hexdigest()


def _stage_cached(workdir: Path, name: str, digest: str, outputs: list[Path]) -> bool:
    marker = workdir / f".stage-{name}.json"
    if not marker.exists() or not all(p.exists() for p in outputs):
        return False
    try:
        return json.loads(marker.read_text())["inputs"] == digest
    except (json.JSONDecodeError, KeyError):
        return False


def _mark_stage(workdir: Path, name: str, digest: str) -> None:
    marker = workdir / f".stage-{name}.json"
    marker.write_text(json.dumps({"inputs": digest}))


def _fold_seed_jobs(config: ExperimentConfig, only_fold: int | None):
    for fold in range(config.folds):
        if only_fold is not None and fold != only_fold:
            continue
        for run_seed in config.effective_run_seeds:
            yield fold, run_seed


def _fold_train_indices(corpus, plan, fold, run_seed, config):
    train_idx = indices_for_events(corpus, plan.train_events(fold))
    if config.setup == SETUP_LOW:
        sampled = sample_low_resource(
            corpus, plan.train_events(fold), config.quota,
            stage_seed(config.seed, fold, run_seed, "sample"),
        )
        train_idx = [i for i in train_idx if corpus.posts[i].id in sampled]
    return train_idx


# ----------------------------------------------------------------- commands

def cmd_ingest(cfg, args) -> int:
    config = experiment_config(cfg, VARIANT_SE, args)
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    outputs = [outdir / "corpus.jsonl", outdir / "ontology.json"]
    digest = _digest(config.corpus_path, config.ontology_path, cfg["corpus"])
    if _stage_cached(outdir, "ingest", digest, outputs):
        log.info("ingest outputs up to date, skipping")
        return 0
    corpus = load_prepared_corpus(config)
    save_corpus(corpus, outputs[0])
    save_ontology(corpus.ontology, outputs[1])
    _mark_stage(outdir, "ingest", digest)
    print(
        f"{corpus.name}: {len(corpus)} posts, {len(corpus.events)} events, "
        f"{corpus.ontology.size} labels -> {outputs[0]}"
    )
    return 0


def cmd_split(cfg, args) -> int:
    config = experiment_config(cfg, VARIANT_SE, args)
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    out = outdir / "folds.json"
    digest = _digest(config.corpus_path, config.ontology_path, cfg["corpus"],
                     {"k": config.folds, "seed": config.seed})
    if _stage_cached(outdir, "split", digest, [out]):
        log.info("fold plan up to date, skipping")
        return 0
    corpus = load_prepared_corpus(config)
    plan = kfold_disjoint_events(corpus, config.folds, config.seed)
    save_fold_plan(plan, out)
    _mark_stage(outdir, "split", digest)
    sizes = [len(te) for _, te in plan.folds]
    print(f"{config.folds} folds over {len(corpus.events)} events "
          f"(test sizes {sizes}) -> {out}")
    return 0


def cmd_embed(cfg, args) -> int:
    config = experiment_config(cfg, VARIANT_SE, args)
    store = cfg["embeddings"]["store"]
    if not store:
        raise UsageError("embeddings.store is not set")
    corpus = load_prepared_corpus(config)
    if Path(store).exists():
        have = load_embeddings(store)
        if set(have.ids) >= {p.id for p in corpus.posts}:
            log.info("embedding store already covers the corpus, skipping")
            print(f"{store}: {len(have)} vectors, dim {have.dim} (cached)")
            return 0
    url = args.embed_url or os.environ.get(EMBED_URL_ENV) or cfg["embeddings"]["url"]
    if not url:
        raise UsageError(
            f"no embedding service URL (use --embed-url, {EMBED_URL_ENV}, "
            "or embeddings.url)"
        )
    backend = HttpEncoderBackend(url)
    matrix = embed_corpus(
        backend,
        corpus,
        batch_size=cfg["embeddings"]["batch_size"],
        max_in_flight=cfg["embeddings"]["max_in_flight"],
    )
    Path(store).parent.mkdir(parents=True, exist_ok=True)
    save_embeddings(matrix, store)
    print(f"{store}: {len(matrix)} vectors, dim {matrix.dim} from {backend.descriptor}")
    return 0


def cmd_pairs(cfg, args) -> int:
    config = experiment_config(cfg, VARIANT_CTS, args)
    corpus = load_prepared_corpus(config)
    plan = kfold_disjoint_events(corpus, config.folds, config.seed)
    outdir = Path(config.output_dir) / "pairs"
    outdir.mkdir(parents=True, exist_ok=True)
    for fold, run_seed in _fold_seed_jobs(config, args.fold):
        train_idx = _fold_train_indices(corpus, plan, fold, run_seed, config)
        pcfg = PairGenConfig(
            n=config.effective_pair_n,
            seed=stage_seed(config.seed, fold, run_seed, "pairs"),
            dedup=config.pair_dedup,
        )
        pairs = _generate_pairs(corpus, train_idx, pcfg)
        out = outdir / f"fold-{fold}-seed-{run_seed}.csv"
        save_pairs(pairs, out)
        print(f"fold {fold} seed {run_seed}: {len(pairs.pos)} positive, "
              f"{len(pairs.neg)} negative -> {out}")
    return 0


def cmd_specialize(cfg, args) -> int:
    config = experiment_config(cfg, VARIANT_CTS, args)
    corpus = load_prepared_corpus(config)
    emb = load_embeddings(config.embeddings_path)
    plan = kfold_disjoint_events(corpus, config.folds, config.seed)
    base = Path(config.output_dir) / config_hash(config)
    for fold, run_seed in _fold_seed_jobs(config, args.fold):
        train_idx = _fold_train_indices(corpus, plan, fold, run_seed, config)
        train_ids = [corpus.posts[i].id for i in train_idx]
        pcfg = PairGenConfig(
            n=config.effective_pair_n,
            seed=stage_seed(config.seed, fold, run_seed, "pairs"),
            dedup=config.pair_dedup,
        )
        pairs = _generate_pairs(corpus, train_idx, pcfg)
        cts_cfg = replace(
            config.cts, seed=stage_seed(config.seed, fold, run_seed, "cts")
        )
        head, curve = specialize(
            init_head(emb.dim), emb.select(train_ids), pairs, cts_cfg
        )
        out = base / f"fold-{fold}" / f"seed-{run_seed}"
        out.mkdir(parents=True, exist_ok=True)
        save_head(head, out / "head.ctsh")
        if curve:
            save_loss_curve(curve, out / "loss.csv")
        final = curve[-1][2] if curve else float("nan")
        print(f"fold {fold} seed {run_seed}: {len(curve)} steps, "
              f"final loss {final:.4f} -> {out / 'head.ctsh'}")
    return 0


def cmd_train(cfg, args) -> int:
    variant = args.variant
    config = experiment_config(cfg, variant, args)
    corpus = load_prepared_corpus(config)
    emb = load_embeddings(config.embeddings_path)
    plan = kfold_disjoint_events(corpus, config.folds, config.seed)
    base = Path(config.output_dir) / config_hash(config)
    task = corpus.ontology.task_kind
    for fold, run_seed in _fold_seed_jobs(config, args.fold):
        train_idx = _fold_train_indices(corpus, plan, fold, run_seed, config)
        train_ids = [corpus.posts[i].id for i in train_idx]
        out = base / f"fold-{fold}" / f"seed-{run_seed}"
        if variant == VARIANT_CTS:
            head_path = out / "head.ctsh"
            if not head_path.exists():
                raise ArgumentError(
                    f"{head_path} missing; run the specialize stage first"
                )
            head = load_head(head_path)
        else:
            head = init_head(emb.dim)
        Ztrain = head_encode(head, emb.select(train_ids))
        tr_ids, val_ids = validation_split(
            train_ids,
            config.val_ratio,
            stage_seed(config.seed, fold, run_seed, "split"),
            labels=[corpus.posts[i].labels for i in train_idx],
        )
        pos_of = {pid: k for k, pid in enumerate(train_ids)}
        clf_cfg = replace(
            config.classifier, seed=stage_seed(config.seed, fold, run_seed, "clf")
        )
        clf, history = train_classifier(
            Ztrain.rows,
            _labels_for(corpus, train_idx),
            corpus.ontology.size,
            task,
            clf_cfg,
            [pos_of[p] for p in tr_ids],
            [pos_of[p] for p in val_ids],
        )
        out.mkdir(parents=True, exist_ok=True)
        save_classifier(clf, out / "clf.ctsc")
        best = max(h["val_macro_f1"] for h in history)
        print(f"fold {fold} seed {run_seed}: best val macro-F1 {best:.3f} "
              f"-> {out / 'clf.ctsc'}")
    return 0


def _run_variants(cfg, args):
    variants = cfg["experiment"]["variants"]
    if not variants:
        raise UsageError("experiment.variants is empty")
    reports = [
        run_within_corpus(experiment_config(cfg, variant, args))
        for variant in variants
    ]
    return combine_reports(reports) if len(reports) > 1 else reports[0]


def cmd_evaluate(cfg, args) -> int:
    report = _run_variants(cfg, args)
    outdir = Path(cfg["experiment"]["output"])
    write_report_files(report, outdir)
    sys.stdout.write(render_report(report, "text"))
    return 0


def cmd_report(cfg, args) -> int:
    report = _run_variants(cfg, args)
    outdir = Path(cfg["experiment"]["output"])
    write_report_files(report, outdir)
    sys.stdout.write(render_report(report, args.format))
    return 0


def cmd_cross_corpus(args) -> int:
    source_cfg = load_config(args.source, args.set)
    target_cfg = load_config(args.target, args.set)
    report = run_cross_corpus(
        experiment_config(source_cfg, VARIANT_CTS, args),
        experiment_config(target_cfg, VARIANT_CTS, args),
    )
    outdir = Path(target_cfg["experiment"]["output"])
    write_report_files(report, outdir)
    sys.stdout.write(render_report(report, "text"))
    return 0


def cmd_cross_lingual(cfg, args) -> int:
    cl = cfg["crosslingual"]
    if not cl["target_corpus"] or not cl["target_ontology"]:
        raise UsageError("crosslingual.target_corpus and target_ontology are required")
    if not cl["target_embeddings"]:
        raise UsageError("crosslingual.target_embeddings is required")
    config = CrossLingualConfig(
        source=experiment_config(cfg, args.variant, args),
        target_corpus_path=cl["target_corpus"],
        target_ontology_path=cl["target_ontology"],
        target_embeddings_path=cl["target_embeddings"],
        translated_corpus_path=cl["translated_corpus"],
        translated_embeddings_path=cl["translated_embeddings"],
        target_name=cl["target_name"],
        random_seed=cl["random_seed"],
    )
    report = run_cross_lingual(config)
    outdir = Path(cfg["experiment"]["output"])
    write_report_files(report, outdir)
    sys.stdout.write(render_report(report, "text"))
    return 0


# -------------------------------------------------------------------- main

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n\n{self.format_help()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="cts", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry (section.key=value)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the master seed")
        p.add_argument("--jobs", type=int, default=None,
                       help="parallel fold jobs")
        p.add_argument("-v", "--verbose", action="count", default=0)
        p.add_argument("-q", "--quiet", action="count", default=0)

    for name, fold_flag in (
        ("ingest", False), ("split", False), ("embed", False),
        ("pairs", True), ("specialize", True), ("train", True),
        ("evaluate", False), ("report", False), ("cross-lingual", False),
    ):
        p = sub.add_parser(name)
        common(p)
        if fold_flag:
            p.add_argument("--fold", type=int, default=None,
                           help="restrict to one fold")
    sub.choices["embed"].add_argument("--embed-url", default=None,
                                      help="embedding service URL")
    sub.choices["train"].add_argument("--variant", default=VARIANT_CTS,
                                      choices=[VARIANT_SE, VARIANT_CTS])
    sub.choices["cross-lingual"].add_argument(
        "--variant", default=VARIANT_CTS, choices=[VARIANT_SE, VARIANT_CTS]
    )
    sub.choices["report"].add_argument(
        "--format", default="text", choices=["text", "markdown", "csv"]
    )
    cross = sub.add_parser("cross-corpus")
    common(cross, config=False)
    cross.add_argument("--source", required=True, help="source corpus TOML config")
    cross.add_argument("--target", required=True, help="target corpus TOML config")
    return parser


def _setup_logging(args) -> None:
    level = logging.INFO + 10 * (args.quiet - args.verbose)
    logging.basicConfig(
        stream=sys.stderr,
        level=max(logging.DEBUG, min(logging.CRITICAL, level)),
        format="%(levelname)s %(name)s: %(message)s",
    )


_HANDLERS = {
    "ingest": cmd_ingest,
    "split": cmd_split,
    "embed": cmd_embed,
    "pairs": cmd_pairs,
    "specialize": cmd_specialize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "cross-lingual": cmd_cross_lingual,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        _setup_logging(args)
        if args.command == "cross-corpus":
            return cmd_cross_corpus(args)
        cfg = load_config(args.config, args.set)
        return _HANDLERS[args.command](cfg, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except CtsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
