"""
Stage runners behind the CLI verbs.

Every stage reads its inputs from disk, writes its outputs atomically and leaves a manifest in
each directory it wrote to. Artifact layout under paths.output_dir:

    design/layer_<l>.npz                      embed
    encoders/layer_<l>_subject_<s>.npz        fit
    encoders/alignment_scores.csv             fit
    encoders/alignment_layers.csv             fit
    encoders/selected_layers.json             fit (layers = auto)
    attributions/records.jsonl                attribute
    analysis/<table>.csv, summary.json        analyze
    masking/masking.csv, stats.csv            mask
    report/<table>.csv, summary.json          report

synth writes the corpus file, one responses/subject_<s>.npz per subject and truth.json next to
the corpus; train writes the checkpoint.
"""

import glob
import json
import os
import re
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..analyzers.masking import MaskingExperiment, masking_experiment, masking_frame, masking_stats
from ..analyzers.metrics import standard_error
from ..analyzers.report import AnalysisSettings, MetricsReport, analyze_records, assemble_report, write_report
from ..attribution.records import AttributionRecord, read_records, write_records
from ..attribution.runner import AttributionSettings, BrainFit, attribution_keys, run_attributions
from ..config import RunConfig, config_to_dict, resolve_path
from ..encoders.cross_validation import (
    load_encoding_model,
    load_responses,
    make_folds,
    nested_cv,
    read_alignment_scores,
    save_encoding_model,
    save_responses,
    write_alignment_scores,
)
from ..encoders.layer_selection import layer_means, select_layers
from ..errors import DependencyError, RejectedInputError
from ..models.checkpoint import load_checkpoint, save_checkpoint
from ..models.training import evaluate_cross_entropy, train_lm
from ..stimulus.corpus import read_corpus, write_corpus
from ..stimulus.pipeline import build_design_matrices, corpus_token_stream, load_design, save_design, tr_layout
from ..stimulus.tokenizer import SubwordTokenizer
from ..synthdata.generator import SyntheticSpec, generate
from ..utils.file_utils import atomic_write_csv, atomic_write_json
from ..utils.logger import app_logger as logger
from .manifest import StageTimer, build_manifest, seeds_of, write_manifest

ProgressFactory = Callable[[str], Optional[Callable[[Dict], None]]]


def _no_progress(description: str):
    return None


@dataclass(frozen=True)
class ArtifactPaths:
    corpus: str
    responses: str
    checkpoint: str
    output_dir: str

    @classmethod
    def from_config(cls, config: RunConfig, config_path: Optional[str] = None) -> "ArtifactPaths":
        p = config.paths
        return cls(
            corpus=resolve_path(config_path, p.corpus),
            responses=resolve_path(config_path, p.responses),
            checkpoint=resolve_path(config_path, p.checkpoint),
            output_dir=resolve_path(config_path, p.output_dir),
        )

    @property
    def truth(self) -> str:
        return os.path.join(os.path.dirname(os.path.abspath(self.corpus)), "truth.json")

    def stage_dir(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def subject_responses(self, subject: int) -> str:
        return os.path.join(self.responses, f"subject_{subject}.npz")

    def design(self, layer: int) -> str:
        return os.path.join(self.stage_dir("design"), f"layer_{layer}.npz")

    def encoder(self, layer: int, subject: int) -> str:
        return os.path.join(self.stage_dir("encoders"), f"layer_{layer}_subject_{subject}.npz")

    @property
    def alignment_scores(self) -> str:
        return os.path.join(self.stage_dir("encoders"), "alignment_scores.csv")

    @property
    def selected_layers(self) -> str:
        return os.path.join(self.stage_dir("encoders"), "selected_layers.json")

    @property
    def records(self) -> str:
        return os.path.join(self.stage_dir("attributions"), "records.jsonl")


def _finish(command: str, config: RunConfig, outputs: Sequence[str], timer: StageTimer) -> List[str]:
    """Write one manifest into every directory the command wrote to."""
    by_directory = defaultdict(list)
    for path in outputs:
        by_directory[os.path.dirname(os.path.abspath(path))].append(path)
    manifests = []
    for directory, paths in sorted(by_directory.items()):
        manifest = build_manifest(command, config_to_dict(config), seeds_of(config), directory, paths, timer.seconds)
        manifests.append(write_manifest(directory, manifest))
    return manifests


def subject_ids(paths: ArtifactPaths) -> List[int]:
    found = []
    for path in glob.glob(os.path.join(paths.responses, "subject_*.npz")):
        match = re.fullmatch(r"subject_(\d+)\.npz", os.path.basename(path))
        if match:
            found.append(int(match.group(1)))
    if not found:
        raise DependencyError(os.path.join(paths.responses, "subject_*.npz"), "synth")
    return sorted(found)


def embedding_layers(config: RunConfig) -> List[int]:
    n_layers = config.model.n_layers
    if config.pipeline.layers == "auto":
        return list(range(n_layers))
    bad = [layer for layer in config.pipeline.layers if layer >= n_layers]
    if bad:
        raise RejectedInputError(f"Layers {bad} exceed the model depth {n_layers}")
    return list(config.pipeline.layers)


def attribution_layers(config: RunConfig, paths: ArtifactPaths) -> List[int]:
    """Configured layers, or the early/middle/late picks saved by fit when layers = auto."""
    if config.pipeline.layers != "auto":
        return embedding_layers(config)
    if not os.path.isfile(paths.selected_layers):
        raise DependencyError(paths.selected_layers, "fit")
    with open(paths.selected_layers, "r", encoding="utf-8") as f:
        return sorted(set(json.load(f)["layers"]))


def run_synth(config: RunConfig, paths: ArtifactPaths) -> List[str]:
    timer = StageTimer()
    spec = SyntheticSpec.from_config(config)
    with timer.stage("generate"):
        data, responses = generate(spec, SubwordTokenizer(config.model.vocab_size))
    with timer.stage("write"):
        write_corpus(paths.corpus, data.corpus)
        outputs = [paths.corpus]
        for matrix in responses:
            save_responses(paths.subject_responses(matrix.subject), matrix)
            outputs.append(paths.subject_responses(matrix.subject))
        atomic_write_json(paths.truth, {
            "planted": spec.planted,
            "planted_words": list(data.planted_words),
            "truth_hidden": spec.truth_hidden,
            "n_subjects": spec.n_subjects,
        })
        outputs.append(paths.truth)
    logger.info(f"Synthesized {len(data.corpus)} words and {len(responses)} subjects")
    return outputs + _finish("synth", config, outputs, timer)


def run_train(config: RunConfig, paths: ArtifactPaths, progress: ProgressFactory = _no_progress) -> List[str]:
    timer = StageTimer()
    corpus = read_corpus(paths.corpus)
    tokenizer = SubwordTokenizer(config.model.vocab_size)
    stream = corpus_token_stream(corpus, tokenizer)
    training = config.training
    callback = progress("Training")

    def on_eval(info: Dict) -> None:
        if callback:
            callback({"completed": info["step"], "total": training.steps})

    with timer.stage("train"):
        params = train_lm(config.model, stream, training.steps, training.learning_rate, training, on_eval)
    with timer.stage("evaluate"):
        held_loss = evaluate_cross_entropy(params, stream, training.seq_len, training.eval_windows)
    save_checkpoint(paths.checkpoint, params, {
        "steps": training.steps,
        "eval_cross_entropy": held_loss,
        "n_tokens": int(stream.size),
    })
    outputs = [paths.checkpoint]
    return outputs + _finish("train", config, outputs, timer)


def run_embed(config: RunConfig, paths: ArtifactPaths, progress: ProgressFactory = _no_progress) -> List[str]:
    timer = StageTimer()
    params, _ = load_checkpoint(paths.checkpoint)
    corpus = read_corpus(paths.corpus)
    layers = embedding_layers(config)
    with timer.stage("embed"):
        designs = build_design_matrices(
            params, corpus, SubwordTokenizer(params.config.vocab_size), config.pipeline.context_words,
            config.pipeline.delays, layers, config.jobs, progress("Embedding contexts")
        )
    outputs = []
    for layer, design in sorted(designs.items()):
        save_design(paths.design(layer), design)
        outputs.append(paths.design(layer))
    return outputs + _finish("embed", config, outputs, timer)


def _layer_table(scores) -> pd.DataFrame:
    per_layer = defaultdict(list)
    for score in scores:
        per_layer[score.layer].append(score.mean_r)
    rows = [
        {"layer": layer, "mean_r": float(np.mean(values)), "sem_r": float(standard_error(np.asarray(values))),
         "n_subjects": len(values)}
        for layer, values in sorted(per_layer.items())
    ]
    return pd.DataFrame(rows, columns=["layer", "mean_r", "sem_r", "n_subjects"])


def run_fit(config: RunConfig, paths: ArtifactPaths, progress: ProgressFactory = _no_progress) -> List[str]:
    timer = StageTimer()
    layers = embedding_layers(config)
    subjects = subject_ids(paths)
    responses = {s: load_responses(paths.subject_responses(s)) for s in subjects}
    grid = config.folds.lambda_grid
    outputs, scores = [], []
    callback = progress("Fitting encoders")
    total = len(layers) * len(subjects)
    with timer.stage("fit"):
        for layer in layers:
            design_path = paths.design(layer)
            if not os.path.isfile(design_path):
                raise DependencyError(design_path, "embed")
            design = load_design(design_path)
            folds = make_folds(design.values.shape[0], config.folds.outer_folds, config.folds.inner_folds)
            for subject in subjects:
                Y = responses[subject].align(design.row_keys)
                model, score = nested_cv(design.values, Y, folds, grid, design.delays, layer, subject)
                save_encoding_model(paths.encoder(layer, subject), model)
                outputs.append(paths.encoder(layer, subject))
                scores.append(score)
                if callback:
                    callback({"completed": len(scores), "total": total})

    write_alignment_scores(paths.alignment_scores, scores)
    layer_path = os.path.join(paths.stage_dir("encoders"), "alignment_layers.csv")
    atomic_write_csv(layer_path, _layer_table(scores))
    outputs += [paths.alignment_scores, layer_path]
    if config.pipeline.layers == "auto":
        means = layer_means(scores)
        selection = select_layers([means[layer] for layer in layers], config.model.n_layers)
        atomic_write_json(paths.selected_layers, {
            "early": selection.early, "middle": selection.middle, "late": selection.late,
            "layers": selection.as_list(),
        })
        outputs.append(paths.selected_layers)
        logger.info(f"Selected layers (early, middle, late): {selection.as_list()}")
    return outputs + _finish("fit", config, outputs, timer)


def load_fits(config: RunConfig, paths: ArtifactPaths, layers: Sequence[int]) -> Dict[Tuple[int, int], BrainFit]:
    fits = {}
    for subject in subject_ids(paths):
        responses = load_responses(paths.subject_responses(subject))
        for layer in layers:
            design_path = paths.design(layer)
            if not os.path.isfile(design_path):
                raise DependencyError(design_path, "embed")
            design = load_design(design_path)
            model = load_encoding_model(paths.encoder(layer, subject))
            fits[(layer, subject)] = BrainFit(model, design.row_keys, responses.align(design.row_keys))
    return fits


def run_attribute(config: RunConfig, paths: ArtifactPaths, progress: ProgressFactory = _no_progress) -> List[str]:
    timer = StageTimer()
    params, _ = load_checkpoint(paths.checkpoint)
    corpus = read_corpus(paths.corpus)
    layout = tr_layout(corpus)
    pipeline = config.pipeline
    fits = load_fits(config, paths, attribution_layers(config, paths))
    keys = attribution_keys(layout, corpus, pipeline.delays, pipeline.max_attribution_trs)
    settings = AttributionSettings(
        pipeline.context_words, pipeline.delays, pipeline.method, pipeline.ig_steps, pipeline.ig_rule
    )
    with timer.stage("attribute"):
        records = run_attributions(
            params, corpus, layout, SubwordTokenizer(params.config.vocab_size), fits, keys, settings,
            config.jobs, progress("Attributing")
        )
    write_records(paths.records, records)
    outputs = [paths.records]
    return outputs + _finish("attribute", config, outputs, timer)


def run_analyze(config: RunConfig, paths: ArtifactPaths) -> Tuple[MetricsReport, List[str]]:
    timer = StageTimer()
    records = read_records(paths.records)
    corpus = read_corpus(paths.corpus)
    if not os.path.isfile(paths.alignment_scores):
        raise DependencyError(paths.alignment_scores, "fit")
    alignment = read_alignment_scores(paths.alignment_scores)
    with timer.stage("analyze"):
        report = analyze_records(records, corpus, alignment, AnalysisSettings.from_config(config.pipeline, config.seed))
    outputs = write_report(report, paths.stage_dir("analysis"))
    return report, outputs + _finish("analyze", config, outputs, timer)


def _brain_groups(records: Sequence[AttributionRecord]) -> Dict[Tuple[int, int], List[AttributionRecord]]:
    groups = defaultdict(list)
    for record in records:
        if record.target.task == "brain":
            groups[(record.target.layer, record.target.subject)].append(record)
    return dict(sorted(groups.items()))


def run_mask(config: RunConfig, paths: ArtifactPaths, progress: ProgressFactory = _no_progress) -> List[str]:
    timer = StageTimer()
    pipeline = config.pipeline
    records = [r for r in read_records(paths.records) if r.target.method == pipeline.method]
    if not records:
        raise DependencyError(paths.records, "attribute")
    params, _ = load_checkpoint(paths.checkpoint)
    corpus = read_corpus(paths.corpus)
    experiment = MaskingExperiment(
        corpus, tr_layout(corpus), SubwordTokenizer(params.config.vocab_size),
        pipeline.context_words, pipeline.delays, pipeline.signed
    )
    brain = _brain_groups(records)
    fits = load_fits(config, paths, sorted({layer for layer, _ in brain})) if brain else {}
    nwp = [r for r in records if r.target.task == "nwp"]
    seeds = [config.seed + i for i in range(pipeline.masking_seeds)]

    runs = [("nwp", None, None, nwp)] if nwp else []
    runs += [("brain", layer, subject, group) for (layer, subject), group in brain.items()]
    callback = progress("Masking")
    total = len(runs) * len(pipeline.masking_thresholds) * len(seeds)
    results = []
    with timer.stage("mask"):
        for task, layer, subject, group in runs:
            fit = fits.get((layer, subject))
            for threshold in pipeline.masking_thresholds:
                for seed in seeds:
                    results.append(masking_experiment(
                        experiment, task, params, group, threshold, seed, fit, layer, subject
                    ))
                    if callback:
                        callback({"completed": len(results), "total": total})

    frame = masking_frame(results)
    directory = paths.stage_dir("masking")
    masking_path = os.path.join(directory, "masking.csv")
    stats_path = os.path.join(directory, "stats.csv")
    atomic_write_csv(masking_path, frame)
    atomic_write_csv(stats_path, masking_stats(frame, pipeline.alpha))
    outputs = [masking_path, stats_path]
    return outputs + _finish("mask", config, outputs, timer)


def run_report(config: RunConfig, paths: ArtifactPaths) -> Tuple[MetricsReport, List[str]]:
    timer = StageTimer()
    with timer.stage("report"):
        report = assemble_report(paths.stage_dir("analysis"), paths.stage_dir("masking"))
    outputs = write_report(report, paths.stage_dir("report"))
    return report, outputs + _finish("report", config, outputs, timer)
