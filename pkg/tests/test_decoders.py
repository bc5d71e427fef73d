import math

import numpy as np
import pytest

from comodal.decoders import (
    ClassifierParams,
    classify_loss,
    classify_loss_batch,
    init_classifier,
    predict_batch,
    predict_label,
    rank_candidates,
    retrieve,
)
from comodal.errors import DataError, DimensionError
from comodal.kernel import MlpParams, finite_diff_check
from comodal.model import init_model
from comodal.rng import rng_fork
from comodal.world import ModalityInstance

F32 = np.float32


def logit_classifier(logit_column: np.ndarray) -> ClassifierParams:
    """Classifier whose logits equal ``logit_column`` for embedding [1, 0, ...]."""
    c = len(logit_column)
    w = np.zeros((c, 4), dtype=F32)
    w[:, 0] = logit_column
    return ClassifierParams(
        mlp=MlpParams(layers=[(w, np.zeros(c, dtype=F32))], activate_final=False)
    )


def identity_classifier(n: int) -> ClassifierParams:
    return ClassifierParams(
        mlp=MlpParams(layers=[(np.eye(n, dtype=F32), np.zeros(n, dtype=F32))],
                      activate_final=False)
    )


E0 = np.array([1.0, 0.0, 0.0, 0.0], dtype=F32)


class TestClassifyLoss:
    def test_uniform_logits_ln_c(self):
        clf = logit_classifier(np.zeros(7))
        loss, _ = classify_loss(clf, E0, 3)
        assert loss == pytest.approx(math.log(7), abs=1e-9)

    def test_peaked_logits_near_zero_loss(self):
        logits = np.zeros(5)
        logits[2] = 20.0
        clf = logit_classifier(logits)
        loss, _ = classify_loss(clf, E0, 2)
        assert loss < 1e-3

    def test_label_out_of_range(self):
        clf = logit_classifier(np.zeros(4))
        with pytest.raises(DataError):
            classify_loss(clf, E0, 4)

    def test_loss_nonnegative_and_embedding_grad_present(self):
        clf = init_classifier(4, 6, rng_fork(0, "c"))
        loss, grads = classify_loss(clf, E0, 1)
        assert loss >= 0.0
        assert grads["embedding"].shape == (4,)

    def test_finite_difference_through_classifier_and_embedding(self):
        clf = init_classifier(4, 5, rng_fork(1, "c"))
        emb = np.asarray(rng_fork(2, "e").uniform_array(4) - 0.5)

        def loss_and_grad(t):
            c = ClassifierParams(
                mlp=MlpParams(layers=[(t["mlp.0.weight"], t["mlp.0.bias"])], activate_final=False)
            )
            loss, grads = classify_loss(c, t["embedding"], 2)
            return loss, {
                "mlp.0.weight": grads["mlp.0.weight"],
                "mlp.0.bias": grads["mlp.0.bias"],
                "embedding": grads["embedding"],
            }

        params = dict(clf.tensors())
        params["embedding"] = emb
        assert finite_diff_check(loss_and_grad, params, eps=1e-4) <= 1e-4

    def test_batch_mean_matches_singles(self):
        clf = init_classifier(4, 5, rng_fork(3, "c"))
        embs = np.asarray(rng_fork(4, "e").uniform_array(12).reshape(3, 4) - 0.5, dtype=F32)
        ys = np.array([0, 2, 4])
        batch_loss, _, _ = classify_loss_batch(clf, embs, ys)
        singles = [classify_loss(clf, embs[i], int(ys[i]))[0] for i in range(3)]
        assert batch_loss == pytest.approx(float(np.mean(singles)), abs=1e-9)


class TestPredictLabel:
    def test_example(self):
        clf = logit_classifier(np.array([0.1, 0.9, 0.3]))
        assert predict_label(clf, E0) == 1

    def test_tie_breaks_to_lowest(self):
        clf = logit_classifier(np.zeros(5))
        assert predict_label(clf, E0) == 0

    def test_matches_bruteforce_scan(self):
        clf = identity_classifier(6)
        rng = rng_fork(5, "scan")
        for _ in range(1000):
            logits = np.asarray(rng.uniform_array(6), dtype=F32)
            best, best_v = 0, float(logits[0])
            for j in range(1, 6):
                if float(logits[j]) > best_v:
                    best, best_v = j, float(logits[j])
            assert predict_label(clf, logits) == best

    def test_shift_invariance(self):
        clf = identity_classifier(4)
        rng = rng_fork(6, "shift")
        for _ in range(50):
            logits = np.asarray(rng.uniform_array(4), dtype=F32)
            assert predict_label(clf, logits) == predict_label(clf, logits + F32(3.5))

    def test_predict_batch(self):
        clf = identity_classifier(3)
        embs = np.array([[0.1, 0.9, 0.3], [1.0, 0.2, 0.1]], dtype=F32)
        assert predict_batch(clf, embs).tolist() == [1, 0]


class TestRankCandidates:
    def test_tie_rule(self):
        r = rank_candidates(np.array([0.2, 0.9, 0.9]), k=3)
        assert r.ordering.tolist() == [1, 2, 0]
        assert r.scores.tolist() == [0.9, 0.9, 0.2]

    def test_top_one(self):
        r = rank_candidates(np.array([0.2, 0.9, 0.9]), k=1)
        assert r.ordering.tolist() == [1]

    def test_matches_full_sort_oracle(self):
        rng = rng_fork(7, "rank")
        sims = np.asarray([round(x, 1) for x in rng.uniform_array(200)])  # force ties
        r = rank_candidates(sims, k=200)
        oracle = sorted(range(200), key=lambda j: (-sims[j], j))
        assert r.ordering.tolist() == oracle
        assert np.all(np.diff(r.scores) <= 0)

    def test_monotone_transform_invariance(self):
        rng = rng_fork(8, "mono")
        sims = np.asarray([round(x, 1) for x in rng.uniform_array(50)])
        a = rank_candidates(sims, k=50).ordering
        b = rank_candidates(np.exp(3.0 * sims) + 7.0, k=50).ordering
        assert a.tolist() == b.tolist()

    def test_k_out_of_range(self):
        with pytest.raises(DimensionError):
            rank_candidates(np.array([1.0, 2.0]), k=3)
        with pytest.raises(DimensionError):
            rank_candidates(np.array([1.0, 2.0]), k=0)

    def test_empty_candidates(self):
        with pytest.raises(DataError):
            rank_candidates(np.array([]), k=1)


class TestRetrieve:
    @pytest.fixture
    def model(self):
        return init_model((10, 10), (4, 6, 4), 3, rng_fork(9, "m"))

    def test_both_directions(self, model):
        rng = rng_fork(10, "r")
        cands2 = [ModalityInstance(2, (rng.randint(10), rng.randint(10))) for _ in range(8)]
        out = retrieve(model, ModalityInstance(1, (0, 1)), cands2, k=3)
        assert len(out.ordering) == 3
        cands1 = [ModalityInstance(1, (rng.randint(10), rng.randint(10))) for _ in range(8)]
        out = retrieve(model, ModalityInstance(2, (0, 1)), cands1, k=8)
        assert sorted(out.ordering.tolist()) == list(range(8))

    def test_wrong_modality_candidates(self, model):
        with pytest.raises(DataError):
            retrieve(model, ModalityInstance(1, (0,)), [ModalityInstance(1, (1,))], k=1)

    def test_empty_candidates(self, model):
        with pytest.raises(DataError):
            retrieve(model, ModalityInstance(1, (0,)), [], k=1)

    def test_caching_freedom_is_irrelevant(self, model):
        # two invocations must give identical rankings
        cands = [ModalityInstance(2, (i % 10, (3 * i) % 10)) for i in range(12)]
        q = ModalityInstance(1, (4, 2))
        a = retrieve(model, q, cands, k=12)
        b = retrieve(model, q, cands, k=12)
        assert a.ordering.tolist() == b.ordering.tolist()
