"""Experiment protocols: within-corpus CV, cross-corpus, cross-lingual.

Every run is a pure function of (config, seeds, embedding store): stage
seeds are derived from the master seed with SeedSequence, artifacts are
written under ``<output>/<config-hash>/fold-<i>/seed-<s>/``, and reports
are reproducible byte for byte. A leakage guard asserts that no
test-event post id reaches pair generation, specialization, or
classifier training.
"""
from __future__ import annotations

import concurrent.futures
import csv as csv_mod
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .classify import (
    ClassifierConfig,
    MlpClassifier,
    predict_multiclass,
    predict_multilabel,
    save_classifier,
    train_classifier,
)
from .corpus import (
    IRRELEVANT,
    MULTI_CLASS,
    RELEVANT,
    Corpus,
    filter_labels,
    load_corpus,
    load_ontology,
    map_to_relevancy,
    select_top_events,
    single_labels_of,
)
from .encoder import EmbeddingMatrix, load_embeddings
from .errors import ArgumentError, CtsError, IntegrityError, LeakageError
from .metrics import (
    EventScore,
    RunRecord,
    aggregate,
    paired_permutation_test,
    score_events,
)
from .pairgen import PairGenConfig, generate_pairs_multiclass, generate_pairs_multilabel
from .specialize import (
    CtsConfig,
    SpecializationHead,
    head_encode,
    init_head,
    save_head,
    save_loss_curve,
    specialize,
)
from .splits import (
    indices_for_events,
    kfold_disjoint_events,
    sample_low_resource,
    validation_split,
)

log = logging.getLogger(__name__)

VARIANT_SE = "se"
VARIANT_CTS = "se+cts"
SETUP_LOW = "low"
SETUP_HIGH = "high"

# stage tags for seed derivation
_STAGES = {"sample": 0, "pairs": 1, "cts": 2, "split": 3, "clf": 4, "random": 5}


def stage_seed(master: int, fold: int, run_seed: int, stage: str) -> int:
    """Derive one stage's PRNG seed from the master seed and run key."""
    ss = np.random.SeedSequence([master, fold, run_seed, _STAGES[stage]])
    return int(ss.generate_state(1, np.uint64)[0] >> 1)


@dataclass(frozen=True)
class ExperimentConfig:
    """One corpus, one variant, one data regime."""

    corpus_path: str
    ontology_path: str
    embeddings_path: str = ""
    name: str = ""
    variant: str = VARIANT_CTS
    setup: str = SETUP_HIGH
    folds: int = 5
    seed: int = 7
    run_seeds: tuple[int, ...] = ()
    quota: int = 10
    val_ratio: float = 0.1
    pair_n: int = 0
    pair_dedup: bool = False
    drop_labels: tuple[str, ...] = ()
    top_events: int = 0
    relevancy: bool = False
    pooled_scoring: bool = False
    cts: CtsConfig = field(default_factory=CtsConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    output_dir: str = ""
    jobs: int = 1

    def __post_init__(self):
        if self.variant not in (VARIANT_SE, VARIANT_CTS):
            raise ArgumentError(f"unknown variant {self.variant!r}")
        if self.setup not in (SETUP_LOW, SETUP_HIGH):
            raise ArgumentError(f"unknown setup {self.setup!r}")

    @property
    def effective_run_seeds(self) -> tuple[int, ...]:
        if self.run_seeds:
            return self.run_seeds
        return (1, 2, 3) if self.setup == SETUP_LOW else (1,)

    @property
    def effective_pair_n(self) -> int:
        if self.pair_n:
            return self.pair_n
        return 5 if self.setup == SETUP_LOW else 1


def config_hash(config: ExperimentConfig) -> str:
    """Identity of the computation; where it runs (output dir, job count)
    does not participate."""
    payload = asdict(config)
    payload.pop("output_dir")
    payload.pop("jobs")
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def load_prepared_corpus(config: ExperimentConfig) -> Corpus:
    """Load the corpus and apply the configured label-level preprocessing."""
    ontology = load_ontology(config.ontology_path)
    corpus = load_corpus(config.corpus_path, ontology, name=config.name or None)
    if config.drop_labels:
        corpus = filter_labels(corpus, config.drop_labels)
    if config.top_events:
        corpus = select_top_events(corpus, config.top_events)
    if config.relevancy:
        corpus = map_to_relevancy(corpus)
    return corpus


def store_descriptor(path: str | Path) -> str:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()[:8]
    return f"store:{Path(path).name}:{digest}"


@dataclass
class FoldRun:
    """Everything one (fold, seed) run produced."""

    record: RunRecord
    head: SpecializationHead
    clf: MlpClassifier
    loss_curve: list[tuple[int, float, float]]
    touched_post_ids: frozenset[str]
    test_post_ids: frozenset[str]


def _labels_for(corpus: Corpus, indices: Sequence[int]):
    if corpus.ontology.task_kind == MULTI_CLASS:
        return [next(iter(corpus.posts[i].labels)) for i in indices]
    return [set(corpus.posts[i].labels) for i in indices]


def _generate_pairs(corpus: Corpus, indices: Sequence[int], pcfg: PairGenConfig):
    labels = _labels_for(corpus, indices)
    if corpus.ontology.task_kind == MULTI_CLASS:
        return generate_pairs_multiclass(labels, pcfg)
    return generate_pairs_multilabel(labels, pcfg)


def _predict(clf: MlpClassifier, Z: np.ndarray, task_kind: str, threshold: float):
    if task_kind == MULTI_CLASS:
        return predict_multiclass(clf, Z)
    return predict_multilabel(clf, Z, threshold)


def run_single_fold(
    corpus: Corpus,
    emb: EmbeddingMatrix,
    train_events: Sequence[str],
    test_events: Sequence[str],
    fold: int,
    run_seed: int,
    config: ExperimentConfig,
    spec_source: tuple[Corpus, EmbeddingMatrix] | None = None,
) -> FoldRun:
    """Train and score one fold.

    The specialization head normally trains on this fold's training
    posts; ``spec_source`` points it at another corpus instead (the
    cross-corpus protocol), in which case any source event whose id
    appears among this fold's test events is excluded. That exclusion is
    vacuous for disjoint corpora and reduces exactly to the within-corpus
    protocol when source and target coincide.
    """
    task = corpus.ontology.task_kind
    label_count = corpus.ontology.size
    train_idx = indices_for_events(corpus, train_events)
    test_idx = indices_for_events(corpus, test_events)
    if config.setup == SETUP_LOW:
        sampled = sample_low_resource(
            corpus, train_events, config.quota,
            stage_seed(config.seed, fold, run_seed, "sample"),
        )
        train_idx = [i for i in train_idx if corpus.posts[i].id in sampled]
    train_ids = [corpus.posts[i].id for i in train_idx]
    test_ids = [corpus.posts[i].id for i in test_idx]
    if not train_ids or not test_ids:
        raise ArgumentError(f"fold {fold}: empty train or test side")

    touched: set[str] = set(train_ids)

    if spec_source is None:
        spec_corpus, spec_emb = corpus, emb
        spec_idx = train_idx
    else:
        spec_corpus, spec_emb = spec_source
        if spec_emb.dim != emb.dim:
            raise IntegrityError(
                f"source dim {spec_emb.dim} != target dim {emb.dim}"
            )
        excluded = set(test_events)
        spec_events = [e for e in spec_corpus.event_ids if e not in excluded]
        spec_idx = indices_for_events(spec_corpus, spec_events)
    spec_ids = [spec_corpus.posts[i].id for i in spec_idx]
    touched.update(spec_ids)

    head = init_head(emb.dim)
    curve: list[tuple[int, float, float]] = []
    if config.variant == VARIANT_CTS:
        pcfg = PairGenConfig(
            n=config.effective_pair_n,
            seed=stage_seed(config.seed, fold, run_seed, "pairs"),
            dedup=config.pair_dedup,
        )
        pairs = _generate_pairs(spec_corpus, spec_idx, pcfg)
        cts_cfg = replace(
            config.cts, seed=stage_seed(config.seed, fold, run_seed, "cts")
        )
        head, curve = specialize(head, spec_emb.select(spec_ids), pairs, cts_cfg)

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
    clf, _ = train_classifier(
        Ztrain.rows,
        _labels_for(corpus, train_idx),
        label_count,
        task,
        clf_cfg,
        [pos_of[p] for p in tr_ids],
        [pos_of[p] for p in val_ids],
    )

    leaked = touched & set(test_ids)
    if leaked:
        raise LeakageError(
            f"fold {fold}: test posts touched during training: {sorted(leaked)[:5]}"
        )

    Ztest = head_encode(head, emb.select(test_ids))
    preds = _predict(clf, Ztest.rows, task, config.classifier.threshold)
    golds = _labels_for(corpus, test_idx)
    if config.pooled_scoring:
        event_of = ["__all__"] * len(test_idx)
    else:
        event_of = [corpus.posts[i].event_id for i in test_idx]
    scores = score_events(preds, golds, event_of, label_count, task)
    return FoldRun(
        record=RunRecord(fold=fold, seed=run_seed, event_scores=tuple(scores)),
        head=head,
        clf=clf,
        loss_curve=curve,
        touched_post_ids=frozenset(touched),
        test_post_ids=frozenset(test_ids),
    )


@dataclass
class ReportRow:
    variant: str
    corpus: str
    setup: str
    micro_mean: float | None
    micro_std: float | None
    macro_mean: float | None
    macro_std: float | None
    p_value: float | None = None
    delta: float | None = None
    event_macro: dict[str, float] | None = None


@dataclass
class Report:
    rows: tuple[ReportRow, ...]
    provenance: dict[str, str]
    records: tuple[RunRecord, ...] = ()
    errors: tuple[str, ...] = ()
    loss_curves: dict[str, list[tuple[int, float, float]]] = field(default_factory=dict)


def _event_macro_means(records: Sequence[RunRecord]) -> dict[str, float]:
    sums: dict[str, list[float]] = {}
    for rec in records:
        for s in rec.event_scores:
            sums.setdefault(s.event_id, []).append(s.macro_f1)
    return {e: float(np.mean(v)) for e, v in sums.items()}


def _run_dir(base: Path, fold: int, seed: int) -> Path:
    return base / f"fold-{fold}" / f"seed-{seed}"


def _write_run(base: Path, run: FoldRun, cfg_hash: str) -> None:
    out = _run_dir(base, run.record.fold, run.record.seed)
    out.mkdir(parents=True, exist_ok=True)
    save_head(run.head, out / "head.ctsh")
    save_classifier(run.clf, out / "clf.ctsc")
    if run.loss_curve:
        save_loss_curve(run.loss_curve, out / "loss.csv")
    payload = run.record.to_dict()
    payload["config"] = cfg_hash
    payload["touched_post_ids"] = sorted(run.touched_post_ids)
    payload["test_post_ids"] = sorted(run.test_post_ids)
    (out / "scores.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8"
    )


def _load_cached_run(base: Path, fold: int, seed: int, cfg_hash: str) -> RunRecord | None:
    out = _run_dir(base, fold, seed)
    scores = out / "scores.json"
    if not scores.exists():
        return None
    if not (out / "head.ctsh").exists() or not (out / "clf.ctsc").exists():
        return None
    try:
        payload = json.loads(scores.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return None
    if payload.get("config") != cfg_hash:
        return None
    return RunRecord.from_dict(payload)


def run_within_corpus(
    config: ExperimentConfig,
    corpus: Corpus | None = None,
    embeddings: EmbeddingMatrix | None = None,
) -> Report:
    """The 5-fold disjoint-event protocol for one variant and setup.

    Low-setup runs repeat each fold once per run seed. Failed folds are
    recorded as errors and the report is marked incomplete rather than
    aborting the whole experiment. When ``output_dir`` is set, finished
    runs are written under ``<output>/<hash>/fold-<i>/seed-<s>/`` and
    reruns with an unchanged config reuse them.
    """
    if corpus is None:
        corpus = load_prepared_corpus(config)
    if embeddings is None:
        if not config.embeddings_path:
            raise ArgumentError("no embeddings given and no embeddings_path set")
        embeddings = load_embeddings(config.embeddings_path)
    missing = [p.id for p in corpus.posts if p.id not in set(embeddings.ids)]
    if missing:
        raise IntegrityError(
            f"{len(missing)} corpus posts missing from the embedding store "
            f"(first: {missing[:3]})"
        )

    cfg_hash = config_hash(config)
    plan = kfold_disjoint_events(corpus, config.folds, config.seed)
    jobs = [
        (fold, run_seed)
        for fold in range(config.folds)
        for run_seed in config.effective_run_seeds
    ]
    base = Path(config.output_dir) / cfg_hash if config.output_dir else None

    def execute(fold: int, run_seed: int) -> tuple[RunRecord | None, str | None, FoldRun | None]:
        if base is not None:
            cached = _load_cached_run(base, fold, run_seed, cfg_hash)
            if cached is not None:
                log.info("fold %d seed %d: reusing cached run", fold, run_seed)
                return cached, None, None
        try:
            run = run_single_fold(
                corpus, embeddings, plan.train_events(fold), plan.test_events(fold),
                fold, run_seed, config,
            )
        except CtsError as exc:
            msg = f"fold {fold} seed {run_seed}: {exc}"
            log.error("%s", msg)
            return None, msg, None
        return run.record, None, run

    if config.jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(lambda fs: execute(*fs), jobs))
    else:
        results = [execute(*fs) for fs in jobs]

    records: list[RunRecord] = []
    errors: list[str] = []
    curves: dict[str, list[tuple[int, float, float]]] = {}
    for (fold, run_seed), (record, error, run) in zip(jobs, results):
        if error is not None:
            errors.append(error)
            continue
        assert record is not None
        records.append(record)
        if run is not None:
            if base is not None:
                _write_run(base, run, cfg_hash)
            if run.loss_curve:
                curves[f"fold-{fold}/seed-{run_seed}"] = run.loss_curve

    if records:
        agg = aggregate(records)
        row = ReportRow(
            variant=config.variant,
            corpus=corpus.name,
            setup=config.setup,
            micro_mean=agg.micro_mean,
            micro_std=agg.micro_std,
            macro_mean=agg.macro_mean,
            macro_std=agg.macro_std,
            event_macro=_event_macro_means(records),
        )
    else:
        row = ReportRow(config.variant, corpus.name, config.setup, None, None, None, None)
    report = Report(
        rows=(row,),
        provenance={
            "config": cfg_hash,
            "variant": config.variant,
            "setup": config.setup,
            "folds": str(config.folds),
            "seed": str(config.seed),
            "run_seeds": ",".join(str(s) for s in config.effective_run_seeds),
            "backend": (
                store_descriptor(config.embeddings_path)
                if config.embeddings_path
                else f"inline:{len(embeddings)}x{embeddings.dim}"
            ),
            "generator": "PCG64/SeedSequence",
        },
        records=tuple(records),
        errors=tuple(errors),
        loss_curves=curves,
    )
    return report


def combine_reports(
    reports: Sequence[Report],
    reference: int = 0,
    resamples: int = 10000,
    seed: int = 0,
) -> Report:
    """Merge reports into one table; rows get p-values against the
    reference row via a paired permutation test over shared events."""
    if not reports:
        raise ArgumentError("no reports to combine")
    rows = [replace(r) for rep in reports for r in rep.rows]
    ref = rows[reference]
    for i, row in enumerate(rows):
        if i == reference or not row.event_macro or not ref.event_macro:
            continue
        shared = sorted(set(row.event_macro) & set(ref.event_macro))
        if not shared:
            continue
        row.p_value = paired_permutation_test(
            [row.event_macro[e] for e in shared],
            [ref.event_macro[e] for e in shared],
            resamples=resamples,
            seed=seed,
        )
    provenance = dict(reports[0].provenance)
    provenance["config"] = "+".join(r.provenance.get("config", "?") for r in reports)
    curves: dict[str, list] = {}
    for rep in reports:
        for key, curve in rep.loss_curves.items():
            curves[f"{rep.provenance.get('config', '?')}/{key}"] = curve
    return Report(
        rows=tuple(rows),
        provenance=provenance,
        records=tuple(r for rep in reports for r in rep.records),
        errors=tuple(e for rep in reports for e in rep.errors),
        loss_curves=curves,
    )


def run_cross_corpus(
    source_config: ExperimentConfig,
    target_config: ExperimentConfig,
) -> Report:
    """Specialize on the source corpus, classify on the target corpus.

    Both sides run in the high-data regime. The report carries the
    target-only baseline row (same backbone, no source specialization)
    and the transfer row with its absolute macro-F1 delta.
    """
    source_corpus = load_prepared_corpus(source_config)
    source_emb = load_embeddings(source_config.embeddings_path)
    target_corpus = load_prepared_corpus(target_config)
    target_emb = load_embeddings(target_config.embeddings_path)
    if source_emb.dim != target_emb.dim:
        raise IntegrityError(
            f"embedding dims differ: source {source_emb.dim}, target {target_emb.dim}"
        )

    base_cfg = replace(target_config, variant=VARIANT_SE, setup=SETUP_HIGH)
    baseline = run_within_corpus(base_cfg, corpus=target_corpus, embeddings=target_emb)

    cross_cfg = replace(target_config, variant=VARIANT_CTS, setup=SETUP_HIGH)
    cfg_hash = config_hash(cross_cfg) + "-x-" + config_hash(source_config)
    plan = kfold_disjoint_events(target_corpus, cross_cfg.folds, cross_cfg.seed)
    run_seed = cross_cfg.effective_run_seeds[0]

    records: list[RunRecord] = []
    errors: list[str] = []
    curves: dict[str, list] = {}
    base = Path(cross_cfg.output_dir) / cfg_hash if cross_cfg.output_dir else None
    for fold in range(cross_cfg.folds):
        try:
            run = run_single_fold(
                target_corpus, target_emb,
                plan.train_events(fold), plan.test_events(fold),
                fold, run_seed, cross_cfg,
                spec_source=(source_corpus, source_emb),
            )
        except CtsError as exc:
            msg = f"fold {fold}: {exc}"
            log.error("%s", msg)
            errors.append(msg)
            continue
        records.append(run.record)
        if base is not None:
            _write_run(base, run, cfg_hash)
        if run.loss_curve:
            curves[f"fold-{fold}/seed-{run_seed}"] = run.loss_curve

    base_row = baseline.rows[0]
    if records:
        agg = aggregate(records)
        row = ReportRow(
            variant=VARIANT_CTS,
            corpus=f"{source_corpus.name}->{target_corpus.name}",
            setup=SETUP_HIGH,
            micro_mean=agg.micro_mean,
            micro_std=agg.micro_std,
            macro_mean=agg.macro_mean,
            macro_std=agg.macro_std,
            delta=(
                agg.macro_mean - base_row.macro_mean
                if base_row.macro_mean is not None
                else None
            ),
            event_macro=_event_macro_means(records),
        )
        if row.event_macro and base_row.event_macro:
            shared = sorted(set(row.event_macro) & set(base_row.event_macro))
            if shared:
                row.p_value = paired_permutation_test(
                    [row.event_macro[e] for e in shared],
                    [base_row.event_macro[e] for e in shared],
                )
    else:
        row = ReportRow(
            VARIANT_CTS,
            f"{source_corpus.name}->{target_corpus.name}",
            SETUP_HIGH, None, None, None, None,
        )
    return Report(
        rows=(base_row, row),
        provenance={
            "config": cfg_hash,
            "source": source_corpus.name,
            "target": target_corpus.name,
            "backend": store_descriptor(target_config.embeddings_path),
            "source_backend": store_descriptor(source_config.embeddings_path),
            "generator": "PCG64/SeedSequence",
        },
        records=tuple(records),
        errors=tuple(errors + list(baseline.errors)),
        loss_curves=curves,
    )


@dataclass(frozen=True)
class CrossLingualConfig:
    """Source experiment plus the binary-relevancy transfer targets."""

    source: ExperimentConfig
    target_corpus_path: str
    target_ontology_path: str
    target_embeddings_path: str
    translated_corpus_path: str = ""
    translated_embeddings_path: str = ""
    target_name: str = ""
    random_seed: int = 1234


def _as_relevancy(corpus: Corpus) -> Corpus:
    if corpus.ontology.labels == (IRRELEVANT, RELEVANT):
        return corpus
    return map_to_relevancy(corpus)


def run_cross_lingual(config: CrossLingualConfig) -> Report:
    """Train a relevancy pipeline on the source corpus, score the target.

    The source corpus is collapsed to {irrelevant, relevant} before pair
    generation, specialization, and classifier training. The target is
    scored per event for each available condition: its native-language
    embeddings and, when provided, embeddings of the pre-translated
    texts. A uniformly random classifier row anchors the comparison.
    """
    src_cfg = replace(config.source, relevancy=True, setup=SETUP_HIGH)
    source = load_prepared_corpus(src_cfg)
    source_emb = load_embeddings(src_cfg.embeddings_path)

    target_ontology = load_ontology(config.target_ontology_path)
    target = _as_relevancy(
        load_corpus(
            config.target_corpus_path,
            target_ontology,
            name=config.target_name or None,
        )
    )
    conditions: list[tuple[str, Corpus, EmbeddingMatrix]] = [
        ("native", target, load_embeddings(config.target_embeddings_path))
    ]
    if config.translated_corpus_path:
        if not Path(config.translated_corpus_path).exists():
            raise ArgumentError(
                f"translated corpus not found: {config.translated_corpus_path}"
            )
        translated = _as_relevancy(
            load_corpus(
                config.translated_corpus_path,
                target_ontology,
                name=(config.target_name or None),
            )
        )
        conditions.append(
            ("translated", translated, load_embeddings(config.translated_embeddings_path))
        )

    # one full-corpus training pass on the source
    fold, run_seed = 0, src_cfg.effective_run_seeds[0]
    all_idx = list(range(len(source.posts)))
    ids = [p.id for p in source.posts]
    head = init_head(source_emb.dim)
    curves: dict[str, list] = {}
    if src_cfg.variant == VARIANT_CTS:
        pcfg = PairGenConfig(
            n=src_cfg.effective_pair_n,
            seed=stage_seed(src_cfg.seed, fold, run_seed, "pairs"),
            dedup=src_cfg.pair_dedup,
        )
        pairs = _generate_pairs(source, all_idx, pcfg)
        cts_cfg = replace(
            src_cfg.cts, seed=stage_seed(src_cfg.seed, fold, run_seed, "cts")
        )
        head, curve = specialize(head, source_emb.select(ids), pairs, cts_cfg)
        if curve:
            curves["source"] = curve
    Ztrain = head_encode(head, source_emb.select(ids))
    tr_ids, val_ids = validation_split(
        ids,
        src_cfg.val_ratio,
        stage_seed(src_cfg.seed, fold, run_seed, "split"),
        labels=[p.labels for p in source.posts],
    )
    pos_of = {pid: k for k, pid in enumerate(ids)}
    clf_cfg = replace(
        src_cfg.classifier, seed=stage_seed(src_cfg.seed, fold, run_seed, "clf")
    )
    clf, _ = train_classifier(
        Ztrain.rows,
        single_labels_of(source),
        source.ontology.size,
        MULTI_CLASS,
        clf_cfg,
        [pos_of[p] for p in tr_ids],
        [pos_of[p] for p in val_ids],
    )

    rows: list[ReportRow] = []
    golds = single_labels_of(target)
    events = [p.event_id for p in target.posts]
    rng = np.random.default_rng(np.random.SeedSequence(config.random_seed))
    random_preds = [int(x) for x in rng.integers(0, 2, size=len(golds))]
    random_scores = score_events(random_preds, golds, events, 2, MULTI_CLASS)
    rows.append(
        ReportRow(
            variant="random",
            corpus=target.name,
            setup="native",
            micro_mean=float(np.mean([s.micro_f1 for s in random_scores])),
            micro_std=None,
            macro_mean=float(np.mean([s.macro_f1 for s in random_scores])),
            macro_std=None,
        )
    )

    records = []
    for cond_name, cond_corpus, cond_emb in conditions:
        if cond_emb.dim != source_emb.dim:
            raise IntegrityError(
                f"{cond_name} embeddings dim {cond_emb.dim} != source {source_emb.dim}"
            )
        cond_ids = [p.id for p in cond_corpus.posts]
        Z = head_encode(head, cond_emb.select(cond_ids))
        preds = predict_multiclass(clf, Z.rows)
        cond_golds = single_labels_of(cond_corpus)
        cond_events = [p.event_id for p in cond_corpus.posts]
        scores = score_events(preds, cond_golds, cond_events, 2, MULTI_CLASS)
        record = RunRecord(fold=0, seed=run_seed, event_scores=tuple(scores))
        records.append(record)
        rows.append(
            ReportRow(
                variant=src_cfg.variant,
                corpus=cond_corpus.name,
                setup=cond_name,
                micro_mean=record.micro_mean,
                micro_std=None,
                macro_mean=record.macro_mean,
                macro_std=None,
                event_macro={s.event_id: s.macro_f1 for s in scores},
            )
        )

    return Report(
        rows=tuple(rows),
        provenance={
            "config": config_hash(src_cfg),
            "source": source.name,
            "target": target.name,
            "backend": store_descriptor(config.target_embeddings_path),
            "source_backend": store_descriptor(src_cfg.embeddings_path),
            "generator": "PCG64/SeedSequence",
        },
        records=tuple(records),
        loss_curves=curves,
    )


# ---------------------------------------------------------------- rendering

def format_score(mean: float | None, std: float | None = None, star: bool = False) -> str:
    """F1 cell shaped like the tables: scores x100 at one decimal."""
    if mean is None:
        return "-"
    out = f"{100 * mean:.1f}"
    if std is not None:
        out += f" ({100 * std:.1f})"
    if star:
        out += "*"
    return out


def format_delta(delta: float | None) -> str:
    """Absolute improvement/degradation suffix, e.g. ``(3.6↑)``."""
    if delta is None:
        return ""
    arrow = "↑" if delta > 0 else ("↓" if delta < 0 else "")
    return f"({abs(delta) * 100:.1f}{arrow})"


def _row_cells(row: ReportRow) -> list[str]:
    star = row.p_value is not None and row.p_value < 0.05
    macro = format_score(row.macro_mean, row.macro_std, star)
    if row.delta is not None:
        macro = f"{macro} {format_delta(row.delta)}"
    return [
        row.variant,
        row.corpus,
        row.setup,
        format_score(row.micro_mean, row.micro_std, star),
        macro,
        "-" if row.p_value is None else f"{row.p_value:.4f}",
    ]


_HEADER = ["variant", "corpus", "setup", "micro F1", "macro F1", "p"]


def render_report(report: Report, fmt: str = "text") -> str:
    """Render to ``text``, ``markdown``, or full-precision ``csv``."""
    if fmt == "csv":
        return _render_csv(report)
    if fmt not in ("text", "markdown"):
        raise ArgumentError(f"unknown report format {fmt!r}")
    table = [_HEADER] + [_row_cells(r) for r in report.rows]
    lines: list[str] = []
    if fmt == "markdown":
        lines.append("| " + " | ".join(table[0]) + " |")
        lines.append("|" + "|".join(" --- " for _ in table[0]) + "|")
        for cells in table[1:]:
            lines.append("| " + " | ".join(cells) + " |")
        lines.append("")
        for key in sorted(report.provenance):
            lines.append(f"- {key}: {report.provenance[key]}")
        for err in report.errors:
            lines.append(f"- INCOMPLETE: {err}")
    else:
        widths = [max(len(row[c]) for row in table) for c in range(len(table[0]))]
        for i, cells in enumerate(table):
            lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip())
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        lines.append("")
        for key in sorted(report.provenance):
            lines.append(f"{key}: {report.provenance[key]}")
        for err in report.errors:
            lines.append(f"INCOMPLETE: {err}")
    return "\n".join(lines) + "\n"


_CSV_FIELDS = [
    "variant", "corpus", "setup",
    "micro_mean", "micro_std", "macro_mean", "macro_std", "p_value", "delta",
]


def _render_csv(report: Report) -> str:
    buf = io.StringIO()
    writer = csv_mod.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_FIELDS)
    for row in report.rows:
        writer.writerow(
            [
                row.variant, row.corpus, row.setup,
                *(
                    "" if v is None else repr(float(v))
                    for v in (
                        row.micro_mean, row.micro_std, row.macro_mean,
                        row.macro_std, row.p_value, row.delta,
                    )
                ),
            ]
        )
    return buf.getvalue()


def report_from_csv(text: str, provenance: dict[str, str] | None = None) -> Report:
    """Inverse of the csv rendering; numbers round-trip exactly."""
    reader = csv_mod.reader(io.StringIO(text))
    header = next(reader, None)
    if header != _CSV_FIELDS:
        raise ArgumentError("not a report csv")
    rows = []
    for cells in reader:
        if not cells:
            continue
        nums = [None if c == "" else float(c) for c in cells[3:]]
        rows.append(ReportRow(cells[0], cells[1], cells[2], *nums))
    return Report(rows=tuple(rows), provenance=provenance or {})


def write_report_files(
    report: Report,
    outdir: str | Path,
    figures: bool = True,
) -> list[Path]:
    """Write report.txt/.md/.csv (and figures) under ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt, suffix in (("text", "txt"), ("markdown", "md"), ("csv", "csv")):
        path = outdir / f"report.{suffix}"
        path.write_text(render_report(report, fmt), encoding="utf-8")
        written.append(path)
    if figures:
        from . import figures as figmod

        written.extend(figmod.render_report_figures(report, outdir / "figures"))
    return written
