"""Domain vector losses: closed forms and brute-force numpy oracles."""

import numpy as np
import pytest

from protoadapt.autodiff import Tape, constant
from protoadapt.errors import ContractError, ShapeError, ValidationError
from protoadapt.heads import bind_head, init_head_state
from protoadapt.prompter import (
    DomainVectors,
    DpConfig,
    domain_diversity_loss,
    dp_loss_terms,
    init_domain_matrix,
    init_domains,
    perturb,
    perturbed_classification_loss,
    prototype_consistency_loss,
    sample_pair_choice,
)
from protoadapt.prototypes import PrototypeSet


def logsumexp(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))).squeeze(axis)


def domains_of(rows):
    return DomainVectors(matrix=constant(np.asarray(rows, dtype=float)))


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def proto_set(object_rows, background_rows=None):
    n = object_rows.shape[0]
    return PrototypeSet(
        object_prototypes=constant(object_rows),
        background_prototypes=None if background_rows is None else constant(background_rows),
        class_names=[f"class-{i}" for i in range(n)],
    )


def identity_head(dim, temperature=0.1, top_k=None):
    tape = Tape()
    return bind_head(init_head_state(dim, seed=0), tape, trainable=False,
                     cls_temperature=temperature, top_k=top_k)


class TestDiversityClosedForms:
    def test_single_vector_loss_is_zero(self):
        loss = domain_diversity_loss(domains_of([[0.3, -0.2, 0.5]]), tau=0.1)
        assert abs(loss.data[0, 0]) < 1e-9

    def test_identical_rows_give_log_count(self):
        rows = np.tile([[0.1, 0.2]], (4, 1))
        loss = domain_diversity_loss(domains_of(rows), tau=0.1)
        assert abs(loss.data[0, 0] - np.log(4.0)) < 1e-9

    def test_two_orthonormal_rows(self):
        loss = domain_diversity_loss(domains_of(np.eye(2)), tau=0.1)
        expected = np.log(1.0 + np.exp(-10.0))
        assert abs(loss.data[0, 0] - expected) < 1e-9

    def test_tau_must_be_positive(self):
        with pytest.raises(ValidationError):
            domain_diversity_loss(domains_of(np.eye(2)), tau=0.0)

    def test_oracle_on_random_rows(self):
        rng = np.random.default_rng(0)
        rows = rng.standard_normal((6, 5))
        tau = 0.37
        logits = rows @ rows.T / tau
        expected = np.mean(logsumexp(logits, axis=1) - np.diag(logits))
        loss = domain_diversity_loss(domains_of(rows), tau=tau)
        assert abs(loss.data[0, 0] - expected) < 1e-12


class TestConsistencyLoss:
    def test_zero_domains_orthonormal_prototypes(self):
        protos = constant(np.eye(3))
        domains = domains_of(np.zeros((6, 3)))
        pairs = [(0, 1), (2, 3), (4, 5)]
        loss = prototype_consistency_loss(protos, domains, pairs, tau=2.0)
        expected = np.log(1.0 + 2.0 * np.exp(-0.5))
        assert abs(loss.data[0, 0] - expected) < 1e-9

    def test_oracle_on_random_inputs(self):
        rng = np.random.default_rng(3)
        protos_np = unit_rows(rng, 4, 6)
        domains_np = 0.1 * rng.standard_normal((8, 6))
        pairs = sample_pair_choice(4, 8, rng)
        tau = 1.3

        losses = []
        for i, (k, m) in enumerate(pairs):
            anchor = protos_np[i] + domains_np[k]
            candidates = protos_np + domains_np[m]
            logits = candidates @ anchor / tau
            losses.append(logsumexp(logits) - logits[i])
        expected = np.mean(losses)

        loss = prototype_consistency_loss(constant(protos_np), domains_of(domains_np), pairs, tau)
        assert abs(loss.data[0, 0] - expected) < 1e-12

    def test_single_class_degenerates_to_zero(self):
        protos = constant(np.array([[1.0, 0.0]]))
        domains = domains_of(0.02 * np.ones((2, 2)))
        diagnostics = {}
        loss = prototype_consistency_loss(protos, domains, [(0, 1)], tau=2.0, diagnostics=diagnostics)
        assert abs(loss.data[0, 0]) < 1e-12
        assert diagnostics.get("proto_loss_degenerate") is True

    def test_equal_pair_rejected(self):
        protos = constant(np.eye(2))
        domains = domains_of(np.zeros((4, 2)))
        with pytest.raises(ContractError):
            prototype_consistency_loss(protos, domains, [(1, 1), (0, 2)], tau=2.0)

    def test_pair_count_must_match_classes(self):
        protos = constant(np.eye(3))
        domains = domains_of(np.zeros((6, 3)))
        with pytest.raises(ShapeError):
            prototype_consistency_loss(protos, domains, [(0, 1)], tau=2.0)


class TestPerturbedClassification:
    def test_zero_domains_orthonormal_identity_head(self):
        protos = proto_set(np.eye(3))
        domains = domains_of(np.zeros((6, 3)))
        pairs = [(0, 1), (2, 3), (4, 5)]
        loss = perturbed_classification_loss(protos, domains, pairs, identity_head(3))
        expected = np.log(1.0 + 2.0 * np.exp(-10.0))
        assert abs(loss.data[0, 0] - expected) < 1e-9

    def test_oracle_with_background_channel(self):
        rng = np.random.default_rng(7)
        protos_np = unit_rows(rng, 4, 5)
        bg_np = unit_rows(rng, 3, 5)
        domains_np = 0.05 * rng.standard_normal((8, 5))
        pairs = sample_pair_choice(4, 8, rng)
        temp = 0.1

        rows, labels = [], []
        for i, (k, m) in enumerate(pairs):
            for d in (k, m):
                rows.append(protos_np[i] + domains_np[d])
                labels.append(i)
        feats = np.stack(rows)
        feats = feats / np.linalg.norm(feats, axis=1, keepdims=True)
        obj_logits = feats @ protos_np.T / temp
        bg_col = np.max(feats @ bg_np.T, axis=1, keepdims=True) / temp
        logits = np.concatenate([obj_logits, bg_col], axis=1)
        expected = np.mean(
            logsumexp(logits, axis=1) - logits[np.arange(len(labels)), labels]
        )

        loss = perturbed_classification_loss(
            proto_set(protos_np, bg_np), domains_of(domains_np), pairs, identity_head(5)
        )
        assert abs(loss.data[0, 0] - expected) < 1e-12

    def test_pair_count_must_match_classes(self):
        protos = proto_set(np.eye(3))
        domains = domains_of(np.zeros((6, 3)))
        with pytest.raises(ShapeError):
            perturbed_classification_loss(protos, domains, [(0, 1)], identity_head(3))


class TestInitAndSampling:
    def test_matrix_shape_and_scale(self):
        m = init_domain_matrix(4, 32, DpConfig(), seed=0)
        assert m.shape == (8, 32)
        # std 0.02 Gaussian: sample std lands near 0.02 on 256 draws
        assert 0.01 < m.std() < 0.03
        assert np.abs(m).max() < 0.2

    def test_deterministic_per_seed(self):
        a = init_domain_matrix(3, 16, DpConfig(), seed=5)
        b = init_domain_matrix(3, 16, DpConfig(), seed=5)
        c = init_domain_matrix(3, 16, DpConfig(), seed=6)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_init_domains_requires_grad(self):
        tape = Tape()
        domains = init_domains(2, 8, DpConfig(), seed=0, tape=tape)
        assert domains.matrix.requires_grad
        assert domains.n_dom == 4

    def test_invalid_n_way_rejected(self):
        with pytest.raises(ValidationError):
            init_domain_matrix(0, 8, DpConfig(), seed=0)

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            DpConfig(tau_domain=0.0)
        with pytest.raises(ValidationError):
            DpConfig(n_dom_per_class=0)

    def test_pair_choice_distinct_and_in_range(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            pairs = sample_pair_choice(5, 10, rng)
            assert len(pairs) == 5
            for k, m in pairs:
                assert k != m
                assert 0 <= k < 10 and 0 <= m < 10

    def test_pair_choice_needs_two_domains(self):
        with pytest.raises(ContractError):
            sample_pair_choice(3, 1, np.random.default_rng(0))

    def test_perturb_adds_and_checks_shape(self):
        p = constant(np.array([[1.0, 0.0]]))
        d = constant(np.array([[0.1, -0.1]]))
        np.testing.assert_allclose(perturb(p, d).data, [[1.1, -0.1]])
        with pytest.raises(ShapeError):
            perturb(p, constant(np.zeros((1, 3))))


class TestCombinedTerms:
    def test_total_is_sum_of_parts(self):
        rng = np.random.default_rng(11)
        protos = proto_set(unit_rows(rng, 3, 6), unit_rows(rng, 2, 6))
        tape = Tape()
        domains = init_domains(3, 6, DpConfig(), seed=1, tape=tape)
        pairs = sample_pair_choice(3, domains.n_dom, rng)
        head = bind_head(init_head_state(6, seed=0), tape, trainable=False)
        terms = dp_loss_terms(domains, protos, pairs, DpConfig(), head)
        total = terms.domain.data + terms.proto.data + terms.proto_cls.data
        np.testing.assert_allclose(terms.total.data, total, atol=1e-12)

    def test_gradient_reaches_domain_matrix(self):
        rng = np.random.default_rng(13)
        protos = proto_set(unit_rows(rng, 3, 6))
        tape = Tape()
        domains = init_domains(3, 6, DpConfig(), seed=2, tape=tape)
        pairs = sample_pair_choice(3, domains.n_dom, rng)
        head = bind_head(init_head_state(6, seed=0), tape, trainable=False)
        terms = dp_loss_terms(domains, protos, pairs, DpConfig(), head)
        grads = tape.backward(terms.total)
        assert np.any(grads[domains.matrix.uid] != 0.0)
