"""KNN-3, cross-validation, ablations and the cross-dataset aggregates."""

from collections import Counter

import numpy as np
import pytest
from pydantic import ValidationError

import modules.evaluation as evaluation
from core.config import TrainConfig
from core.exceptions import AggregationError, ConfigError, DatasetError, FoldError
from core.kernel import MarkerSet, distance_for_knn
from core.network import encode, init_params
from modules.data_pipeline import Dataset, FoldPlan, make_folds, minmax_normalize
from modules.evaluation import (
    ABLATIONS,
    FoldResult,
    MethodScore,
    MetricKind,
    aggregate,
    cross_validate,
    distance_matrix,
    evaluate_checkpoint,
    evaluate_methods,
    knn_classify,
    knn_predict,
    latent_dim_sweep,
    marker_count_sweep,
    run_ablations,
    summarize,
)
from modules.trainer import TrainedModel, train
from utils.synth_generator import disjoint_regions


def _brute_force_knn(distances, labels, k=3):
    order = sorted(range(len(distances)), key=lambda j: (distances[j], j))[:k]
    votes = Counter(int(labels[j]) for j in order)
    summed = {c: sum(distances[j] for j in order if labels[j] == c) for c in votes}
    return min(votes, key=lambda c: (-votes[c], summed[c], c))


def _random_model(m, seed):
    rng = np.random.default_rng(seed)
    params = init_params(m, 2, seed=seed, hidden_dims=(6,), weight_std=0.5, bias_mean=0.1, bias_std=0.2)
    markers = MarkerSet(rng.uniform(0, 1, (2, 2)), rng.uniform(0, 1, (2, 2)))
    return TrainedModel(params, markers, config=None, pretrained_params=params.copy())


# ── KNN ──────────────────────────────────────────────────────────────────────

def test_unanimous_vote():
    assert knn_predict([[0.1, 0.2, 0.3, 0.9]], np.array([2, 2, 2, 1]))[0] == 2


def test_majority_vote():
    assert knn_predict([[0.1, 0.2, 0.3, 0.9]], np.array([1, 2, 1, 2]))[0] == 1


def test_vote_tie_broken_by_summed_distance():
    # labels 1, 2, 3 each get one vote; class 2 is nearest
    assert knn_predict([[0.5, 0.1, 0.6, 0.9]], np.array([1, 2, 3, 1]))[0] == 2


def test_full_tie_picks_lowest_label():
    assert knn_predict([[0.5, 0.5, 0.9]], np.array([2, 1, 3]), k_neighbors=2)[0] == 1


def test_knn_needs_enough_training_rows():
    with pytest.raises(DatasetError):
        knn_predict([[0.1, 0.2]], np.array([1, 2]))


def test_knn_classify_with_callable_metric():
    train = np.array([[0.0], [0.1], [1.0], [1.1], [0.2]])
    labels = np.array([1, 1, 2, 2, 1])
    metric = evaluation.euclidean_distances
    assert knn_classify(train, labels, np.array([0.05]), metric) == 1
    assert knn_classify(train, labels, np.array([1.05]), metric) == 2


@pytest.mark.parametrize("seed", range(50))
def test_knn_matches_brute_force_oracle(seed):
    rng = np.random.default_rng(seed)
    v = int(rng.integers(12, 60))
    x = rng.uniform(size=(v, 3))
    labels = rng.integers(1, 4, size=v)
    model = _random_model(3, seed)
    n_query = max(1, v // 4)
    xq, xt, yt = x[:n_query], x[n_query:], labels[n_query:]
    for kind in MetricKind:
        predicted = knn_predict(distance_matrix(kind, model, xq, xt), yt)
        for q in range(n_query):
            if kind is MetricKind.SMELL:
                dist = [distance_for_knn(xq[q], row, model.params, model.markers) for row in xt]
            elif kind is MetricKind.RAW_EUCLIDEAN:
                dist = [float(np.linalg.norm(xq[q] - row)) for row in xt]
            else:
                zq = encode(model.params, xq[q])
                dist = [float(np.linalg.norm(zq - encode(model.params, row))) for row in xt]
            assert predicted[q] == _brute_force_knn(dist, yt), (kind, q)


# ── Fold results ─────────────────────────────────────────────────────────────

def test_fold_result_accuracy_and_confusion():
    result = FoldResult.from_predictions(0, np.array([1, 1, 2, 2]), np.array([1, 2, 2, 2]), 2)
    assert result.accuracy == 0.75
    assert result.confusion == [[1, 1], [0, 2]]


def test_method_score_uses_population_std():
    folds = [FoldResult(fold=0, accuracy=1.0, confusion=[]), FoldResult(fold=1, accuracy=0.5, confusion=[])]
    score = MethodScore.from_folds("d", "smell", folds)
    assert score.mean_accuracy == 0.75
    assert score.std_accuracy == 0.25


def _eight_separable_rows():
    features = np.vstack([np.full((4, 2), 0.1), np.full((4, 2), 0.9)]) + np.arange(8)[:, None] * 1e-3
    return Dataset(features, np.repeat([1, 2], 4), "eight")


def test_empty_folds_left_out_of_the_mean(fast_config):
    data = _eight_separable_rows()
    plan = FoldPlan(np.arange(8), seed=0, n_folds=10)
    folds = cross_validate(data, fast_config, MetricKind.RAW_EUCLIDEAN, plan=plan)
    assert [f.accuracy for f in folds[8:]] == [None, None]
    score = MethodScore.from_folds("eight", "raw_euclidean", folds)
    assert score.mean_accuracy == 1.0
    assert score.std_accuracy == 0.0
    assert len(score.folds) == 10


def test_method_score_needs_one_scored_fold():
    with pytest.raises(AggregationError):
        MethodScore.from_folds("d", "smell", [FoldResult(fold=0, accuracy=None, confusion=[[0]])])


def test_more_folds_than_rows_is_a_user_error(fast_config):
    with pytest.raises(DatasetError):
        cross_validate(_eight_separable_rows(), fast_config.model_copy(update={"n_folds": 10}),
                       MetricKind.RAW_EUCLIDEAN)


def test_raw_euclidean_separates_blobs(toy_dataset, fast_config):
    folds = cross_validate(toy_dataset, fast_config, MetricKind.RAW_EUCLIDEAN)
    assert len(folds) == fast_config.n_folds
    assert all(f.accuracy == 1.0 for f in folds)


def test_cross_validation_is_reproducible(toy_dataset, fast_config):
    a = cross_validate(toy_dataset, fast_config, MetricKind.SMELL)
    b = cross_validate(toy_dataset, fast_config, MetricKind.SMELL)
    assert [f.accuracy for f in a] == [f.accuracy for f in b]
    assert [f.fold for f in a] == list(range(fast_config.n_folds))


def test_fold_seeds_are_offset_per_fold(toy_dataset, fast_config, monkeypatch):
    seeds = []
    original = evaluation.train

    def recording(dataset, plan, fold, config, *args, **kwargs):
        seeds.append((fold, config.seed))
        return original(dataset, plan, fold, config, *args, **kwargs)

    monkeypatch.setattr(evaluation, "train", recording)
    cross_validate(toy_dataset, fast_config.model_copy(update={"seed": 7}), MetricKind.SMELL)
    assert seeds == [(f, 7 + f) for f in range(fast_config.n_folds)]


def test_one_training_run_per_fold_serves_every_kind(toy_dataset, fast_config, monkeypatch):
    calls = []
    original = evaluation.train

    def counting(*args, **kwargs):
        calls.append(1)
        return original(*args, **kwargs)

    monkeypatch.setattr(evaluation, "train", counting)
    scores = evaluate_methods(toy_dataset, fast_config, ["smell", "smell_euclidean", "autoencoder_euclidean",
                                                        "raw_euclidean"])
    assert len(calls) == fast_config.n_folds
    assert [s.method for s in scores] == ["smell", "smell_euclidean", "autoencoder_euclidean", "raw_euclidean"]


def test_parallel_folds_match_serial(toy_dataset, fast_config):
    serial = cross_validate(toy_dataset, fast_config, MetricKind.SMELL, workers=1)
    parallel = cross_validate(toy_dataset, fast_config, MetricKind.SMELL, workers=2)
    assert [f.model_dump() for f in serial] == [f.model_dump() for f in parallel]


def test_fold_failure_names_the_fold(fast_config):
    # each training split keeps one row per class, so no similar pair exists
    data = Dataset(np.random.default_rng(0).uniform(size=(4, 2)), np.array([1, 1, 2, 2]))
    plan = make_folds(data, seed=0, n_folds=2)
    with pytest.raises(FoldError) as excinfo:
        cross_validate(data, fast_config.model_copy(update={"n_folds": 2}), MetricKind.SMELL, plan=plan)
    assert excinfo.value.fold in (0, 1)


# ── Ablations and sweeps ─────────────────────────────────────────────────────

def test_ablation_rows_and_flags(toy_dataset, fast_config, monkeypatch):
    flags = []
    original = evaluation.train

    def recording(dataset, plan, fold, config, *args, **kwargs):
        flags.append((config.zero_r_r, config.zero_r_d))
        return original(dataset, plan, fold, config, *args, **kwargs)

    monkeypatch.setattr(evaluation, "train", recording)
    rows = run_ablations(toy_dataset, fast_config)
    assert [r.method for r in rows] == ["full"] + [name for name, _ in ABLATIONS] + ["euclidean"]
    assert len(flags) == 4 * fast_config.n_folds
    assert set(flags) == {(False, False), (True, False), (False, True), (True, True)}
    assert all(len(r.folds) == fast_config.n_folds for r in rows)


def test_latent_dim_sweep_rows(toy_dataset, fast_config):
    rows = latent_dim_sweep(toy_dataset, fast_config, [1, 3])
    assert [r.latent_dim for r in rows] == [1, 3]
    assert all(0.0 <= r.mean_accuracy <= 1.0 for r in rows)


def test_marker_count_sweep_rows(toy_dataset, fast_config):
    rows = marker_count_sweep(toy_dataset, fast_config, [(1, 1), (2, 1)])
    assert [(r.k_pos, r.k_neg) for r in rows] == [(1, 1), (2, 1)]
    assert all(0.0 <= r.mean_accuracy <= 1.0 for r in rows)


def test_marker_count_sweep_rejects_empty_group(toy_dataset, fast_config):
    with pytest.raises(ValidationError):
        marker_count_sweep(toy_dataset, fast_config, [(0, 1)])


# ── Checkpoint scoring ───────────────────────────────────────────────────────

def test_checkpoint_scored_on_its_held_out_fold(toy_dataset, fast_config):
    plan = make_folds(toy_dataset, fast_config.seed, fast_config.n_folds)
    model = train(toy_dataset, plan, 1, fast_config)
    scores = {s.method: s for s in evaluate_checkpoint(toy_dataset, model, ["smell", "raw_euclidean"])}
    assert [f.fold for f in scores["smell"].folds] == [1]
    raw = cross_validate(toy_dataset, fast_config, MetricKind.RAW_EUCLIDEAN, plan=plan)
    assert scores["raw_euclidean"].folds[0].accuracy == raw[1].accuracy
    assert scores["raw_euclidean"].folds[0].confusion == raw[1].confusion


def test_checkpoint_without_held_out_fold_rejected(toy_dataset, fast_config):
    model = train(toy_dataset, None, None, fast_config)
    with pytest.raises(ConfigError):
        evaluate_checkpoint(toy_dataset, model, ["smell"])


def test_autoencoder_scoring_needs_pretrained_weights(toy_dataset, fast_config):
    plan = make_folds(toy_dataset, fast_config.seed, fast_config.n_folds)
    model = train(toy_dataset, plan, 0, fast_config)
    model.pretrained_params = None
    with pytest.raises(ConfigError):
        evaluate_checkpoint(toy_dataset, model, ["autoencoder_euclidean"])


# ── Disjoint regions with noise columns ──────────────────────────────────────

def test_smell_beats_raw_euclidean_when_noise_columns_dominate():
    data = minmax_normalize(disjoint_regions(n_rows=200, seed=0, noise_dims=10))
    config = TrainConfig(
        latent_dim=4, hidden_dims=(16,), k_pos=2, k_neg=1, batch_size=32,
        pretrain_epochs=5, joint_epochs=150, marker_sample_pairs=256, n_folds=4,
        learning_rate=0.05, init_weight_std=0.3, init_bias_mean=0.1,
    )
    scores = {s.method: s.mean_accuracy for s in evaluate_methods(data, config, ["smell", "raw_euclidean"])}
    assert scores["smell"] > scores["raw_euclidean"]


# ── Aggregation ──────────────────────────────────────────────────────────────

def test_single_method_aggregate():
    summary = aggregate({"a": {"smell": 0.9}, "b": {"smell": 0.7}})
    row = summary.aggregate_for("smell")
    assert row.ranking_avg == 1.0 and row.diff_avg == 0.0 and row.firsts == 2
    assert row.accuracy_avg == pytest.approx(0.8)


def test_swapped_winners_share_mean_rank():
    summary = aggregate({"a": {"A": 0.9, "B": 0.8}, "b": {"A": 0.8, "B": 0.9}})
    assert summary.aggregate_for("A").ranking_avg == 1.5
    assert summary.aggregate_for("B").ranking_avg == 1.5
    assert summary.aggregate_for("A").diff_avg == pytest.approx(0.05)


def test_ties_count_as_firsts_for_every_winner():
    summary = aggregate({"a": {"A": 0.9, "B": 0.9}, "b": {"A": 0.9, "B": 0.8}})
    assert summary.aggregate_for("A").firsts == 2
    assert summary.aggregate_for("B").firsts == 1
    assert summary.aggregate_for("B").ranking_avg == 1.5


def test_ragged_matrix_rejected():
    with pytest.raises(AggregationError):
        aggregate({"a": {"A": 0.9, "B": 0.8}, "b": {"A": 0.7}})


def test_empty_matrix_rejected():
    with pytest.raises(AggregationError):
        aggregate({})


def test_summarize_keeps_scores():
    scores = [MethodScore(dataset="a", method="smell", mean_accuracy=0.9, std_accuracy=0.0),
              MethodScore(dataset="a", method="raw_euclidean", mean_accuracy=0.8, std_accuracy=0.0)]
    summary = summarize(scores)
    assert summary.scores == scores
    assert summary.aggregate_for("raw_euclidean").ranking_avg == 2.0
