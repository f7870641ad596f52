import numpy as np
import pytest

from fewshot.data import DatasetContainer, EpisodeSpec, sample_episode
from fewshot.errors import CompatibilityError, ContractError, SamplingError
from fewshot.evaluation import (
    EvalProtocol, episode_accuracy, episode_predictions, eval_episode, eval_protocol, mean_ci95,
)
from fewshot.models import FewShotModel, ModelConfig, compute_prototypes
from fewshot.training import Checkpoint

from oracles import mean_ci_oracle, nearest_prototype_oracle

CFG = ModelConfig(widths=[8, 8, 8, 8], image_size=32)


def noise_dataset(seed=0, n_novel=6, per_class=20):
    """Pure-noise images: labels carry no information about pixels."""
    r = np.random.default_rng(seed)
    n_classes = n_novel + 2
    images = r.integers(0, 256, size=(n_classes * per_class, 3, 32, 32), dtype=np.uint8)
    labels = np.repeat(np.arange(n_classes, dtype=np.uint32), per_class)
    split = {"base": [0], "validation": [1], "novel": list(range(2, n_classes))}
    return DatasetContainer(images, labels, [f"n{i}" for i in range(n_classes)], split)


@pytest.fixture(scope="module")
def model():
    return FewShotModel(CFG, 6, ("extractor", "classifier"), seed=1)


class TestStatistics:
    def test_mean_ci_match_oracle(self, rng):
        for n in (2, 7, 500, 2000):
            accs = rng.integers(0, 76, size=n) / 75
            mean, ci, ok = mean_ci95(accs)
            m2, c2 = mean_ci_oracle(list(accs))
            assert ok and abs(mean - m2) <= 1e-12 and abs(ci - c2) <= 1e-12

    def test_single_episode_flags_ci(self):
        assert mean_ci95([0.4]) == (0.4, 0.0, False)

    def test_protocol_validation(self):
        with pytest.raises(ContractError):
            EvalProtocol(num_episodes=0)
        with pytest.raises(ContractError):
            EvalProtocol(method="kNN")


class TestEpisode:
    def test_self_retrieval(self, rng):
        feats = rng.normal(size=(5, 16))
        labels = np.arange(5)
        for method in ("CC", "PN"):
            assert episode_accuracy(feats, labels, feats, labels, method, 5) == 1.0

    def test_matches_brute_force_nearest_prototype(self, rng):
        for _ in range(200):
            sf, sl = rng.normal(size=(10, 6)), np.repeat(np.arange(5), 2)
            qf, ql = rng.normal(size=(20, 6)), rng.integers(0, 5, 20)
            protos = compute_prototypes(sf, sl, 5).data
            expected = np.mean(nearest_prototype_oracle(qf, protos) == ql)
            assert episode_accuracy(sf, sl, qf, ql, "PN", 5) == expected

    def test_cc_predictions_ignore_weight_scale(self, rng):
        sf, sl = rng.normal(size=(5, 6)), np.arange(5)
        qf = rng.normal(size=(30, 6))
        base = episode_predictions(sf, sl, qf, "CC", 5)
        np.testing.assert_array_equal(episode_predictions(sf * 7.5, sl, qf, "CC", 5), base)

    def test_compatibility(self, small_ds):
        bare = FewShotModel(CFG, 6, ("extractor",))
        ep = sample_episode(small_ds, EpisodeSpec(5, 1, 15, "novel"), 0)
        with pytest.raises(CompatibilityError):
            eval_episode(bare, small_ds, ep, "CC")
        assert 0.0 <= eval_episode(bare, small_ds, ep, "PN") <= 1.0


class TestProtocol:
    def test_chance_level_on_uninformative_images(self, model):
        ds = noise_dataset()
        report = eval_protocol(model, ds, EvalProtocol(num_episodes=500))
        assert abs(report.mean - 0.2) <= 0.02

    def test_report_is_pure_and_worker_independent(self, model, small_ds):
        proto = EvalProtocol(num_episodes=40, base_seed=3)
        a = eval_protocol(model, small_ds, proto)
        b = eval_protocol(model, small_ds, proto, workers=4)
        assert a.to_json() == b.to_json()
        assert len(a.episode_acc) == 40 and a.ci95_defined
        m, c = mean_ci_oracle(a.episode_acc)
        assert abs(a.mean - m) <= 1e-12 and abs(a.ci95 - c) <= 1e-12

    def test_episode_seeds_extend(self, model, small_ds):
        short = eval_protocol(model, small_ds, EvalProtocol(num_episodes=5))
        long = eval_protocol(model, small_ds, EvalProtocol(num_episodes=12))
        assert long.episode_acc[:5] == short.episode_acc
        one = eval_protocol(model, small_ds, EvalProtocol(num_episodes=1))
        assert not one.ci95_defined and one.ci95 == 0.0

    def test_read_only(self, model, small_ds, tmp_path):
        Checkpoint.from_model(model).save(tmp_path / "ck")
        before = [(tmp_path / "ck" / f).read_bytes() for f in ("manifest.json", "params.bin")]
        loaded = Checkpoint.load(tmp_path / "ck")
        eval_protocol(loaded.to_model(), small_ds, EvalProtocol(num_episodes=5), loaded.digest())
        after = [(tmp_path / "ck" / f).read_bytes() for f in ("manifest.json", "params.bin")]
        assert before == after
        np.testing.assert_array_equal(loaded.to_model().extractor.block0.conv.weight.data,
                                      model.extractor.block0.conv.weight.data)

    def test_report_json_fields(self, model, small_ds):
        import json
        doc = json.loads(eval_protocol(model, small_ds, EvalProtocol(num_episodes=3), "ab").to_json())
        assert {"protocol", "mean", "ci95", "episode_acc", "checkpoint_sha256"} <= set(doc)
        assert doc["protocol"]["n_way"] == 5 and doc["checkpoint_sha256"] == "ab"

    def test_insufficient_classes(self, model, small_ds):
        with pytest.raises(SamplingError):
            eval_protocol(model, small_ds, EvalProtocol(n_way=6, num_episodes=2))
