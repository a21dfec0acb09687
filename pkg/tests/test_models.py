import pickle

import numpy as np
import pytest

from covspec.errors import InvalidPlant, InvalidPrefix
from covspec.models import (VisualConfig, VisualTokenSet, Query, SyntheticModelPair, ScriptedModelPair,
                            gen_visual, probs_to_logits)
from covspec.probcore import softmax


@pytest.fixture
def scene():
    query = Query.from_terms(['umbrella', 'car'], 8)
    visual = gen_visual(3, 16, 8, 2, query, num_planted=4)
    return visual, query


class TestGenVisual:
    def test_defaults(self):
        vc = VisualConfig()
        assert (vc.num_tokens, vc.dim, vc.num_layers) == (768, 64, 4)

    def test_deterministic(self, scene):
        visual, query = scene
        again = gen_visual(3, 16, 8, 2, query, num_planted=4)
        assert again.source_digest == visual.source_digest
        np.testing.assert_array_equal(again.hidden_states, visual.hidden_states)

    def test_shapes(self, scene):
        visual, _ = scene
        assert (visual.count, visual.dim, visual.num_layers) == (16, 8, 2)
        assert visual.hidden_states.shape == (16, 3, 8)
        assert visual.is_full()

    def test_planted_match_keywords(self):
        query = Query.from_terms(['umbrella'], 8)
        visual = gen_visual(0, 20, 8, 2, query, num_planted=3, planted_cos=1.0)
        planted = np.flatnonzero(visual.source_importance == 1.0)
        assert len(planted) == 3
        unit = query.keywords[0] / np.linalg.norm(query.keywords[0])
        for i in planted:
            e = visual.embeddings[i]
            assert e @ unit / np.linalg.norm(e) == pytest.approx(1.0)

    def test_no_activity(self):
        query = Query.from_terms(['umbrella'], 8)
        visual = gen_visual(0, 20, 8, 3, query, num_planted=0, background_activity=0.0)
        np.testing.assert_array_equal(visual.hidden_states[:, 1:], visual.hidden_states[:, :1].repeat(3, axis=1))

    def test_too_many_planted(self):
        with pytest.raises(InvalidPlant):
            gen_visual(0, 4, 8, 2, Query.from_terms(['a'], 8), num_planted=5)

    def test_subset_keeps_identity(self, scene):
        visual, _ = scene
        sub = visual.subset([1, 5, 7])
        assert sub.count == 3 and not sub.is_full()
        assert sub.source_digest == visual.source_digest
        np.testing.assert_array_equal(sub.token_ids, [1, 5, 7])
        np.testing.assert_array_equal(sub.importance, visual.source_importance[[1, 5, 7]])


class TestSyntheticModels:
    def test_deterministic(self, scene):
        visual, query = scene
        a = SyntheticModelPair(32, 0.85, seed=1)
        b = SyntheticModelPair(32, 0.85, seed=1)
        np.testing.assert_array_equal(a.target_logits(visual, query, (1, 2)), b.target_logits(visual, query, (1, 2)))
        np.testing.assert_array_equal(a.draft_logits(visual, query, (1, 2)), b.draft_logits(visual, query, (1, 2)))

    def test_logit_range(self, scene):
        visual, query = scene
        logits = SyntheticModelPair(32, 0.5, seed=1).target_logits(visual, query, ())
        assert logits.shape == (32,)
        assert np.all(np.abs(logits) <= 4.0)

    def test_full_agreement_copies_target(self, scene):
        visual, query = scene
        models = SyntheticModelPair(32, 1.0, seed=1)
        for prefix in [(), (3,), (3, 9, 0)]:
            np.testing.assert_array_equal(models.draft_logits(visual, query, prefix),
                                          models.target_logits(visual, query, prefix))

    def test_prefix_order_matters(self, scene):
        visual, query = scene
        models = SyntheticModelPair(32, 0.85, seed=1)
        assert not np.array_equal(models.target_logits(visual, query, (1, 2)),
                                  models.target_logits(visual, query, (2, 1)))

    def test_visual_change_matters(self, scene):
        visual, query = scene
        models = SyntheticModelPair(32, 0.85, seed=1)
        embeddings = visual.embeddings.copy()
        embeddings[0] += 1.0
        changed = VisualTokenSet.from_arrays(embeddings, visual.hidden_states, visual.source_importance)
        assert not np.array_equal(models.target_logits(visual, query, ()),
                                  models.target_logits(changed, query, ()))

    def test_reduced_context_changes_draft(self, scene):
        visual, query = scene
        models = SyntheticModelPair(32, 1.0, seed=1)
        assert not np.array_equal(models.draft_logits(visual.subset(range(8)), query, ()),
                                  models.target_logits(visual, query, ()))

    def test_no_agreement_is_uncorrelated(self, scene):
        visual, query = scene
        models = SyntheticModelPair(16, 0.0, seed=2)
        rng = np.random.default_rng(0)
        draft, target = [], []
        for i in range(10**4):
            prefix = tuple(int(t) for t in rng.integers(0, 16, size=rng.integers(3, 7)))
            draft.append(models.draft_logits(visual, query, prefix)[i % 16])
            target.append(models.target_logits(visual, query, prefix)[i % 16])
        assert abs(np.corrcoef(draft, target)[0, 1]) < 0.05

    def test_out_of_vocabulary(self, scene):
        visual, query = scene
        with pytest.raises(InvalidPrefix):
            SyntheticModelPair(32, 0.85, seed=1).target_logits(visual, query, (32,))

    def test_bad_agreement(self):
        with pytest.raises(ValueError):
            SyntheticModelPair(32, 1.5, seed=1)

    def test_debug_dir(self, scene, tmp_path):
        visual, query = scene
        models = SyntheticModelPair(32, 0.85, seed=1, debug_dir=tmp_path)
        models.draft_logits(visual, query, (4,))
        models.target_logits(visual, query, (4, 5))
        with (tmp_path / '1' / '1.pickle').open('rb') as f:
            name, args, kwargs = pickle.load(f)
        assert name == 'target_logits'
        assert args[2] == (4, 5)
        SyntheticModelPair(32, 0.85, seed=1, debug_dir=tmp_path)
        assert (tmp_path / '2').is_dir()


class TestScriptedModels:
    def test_rows_by_position(self):
        models = ScriptedModelPair.from_probs([[0.5, 0.5], [0.9, 0.1]], [[0.2, 0.8]])
        np.testing.assert_allclose(softmax(models.target_logits(None, None, ())), [0.5, 0.5])
        np.testing.assert_allclose(softmax(models.target_logits(None, None, (0, 1, 1))), [0.9, 0.1])
        np.testing.assert_allclose(softmax(models.draft_logits(None, None, (1,))), [0.2, 0.8])

    def test_zero_probability(self):
        np.testing.assert_array_equal(softmax(probs_to_logits([0.0, 1.0])), [0.0, 1.0])
