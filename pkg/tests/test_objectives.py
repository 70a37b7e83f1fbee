import math

import numpy as np
import pytest
import torch

from crossprompt.errors import InputError
from crossprompt.objectives import (
    LossBreakdown,
    MixupVirtualExample,
    finetune_loss,
    mixup_loss,
    mixup_loss_from_logits,
    mixup_representations,
    multilingual_verbalizer_loss,
    pair_batch,
    pair_indices,
    prompt_batch_loss,
    sample_lambda,
)


def oracle_loss(logits, label, table):
    # plain-python log-sum-exp
    m = max(logits)
    lse = m + math.log(sum(math.exp(x - m) for x in logits))
    return -sum(logits[row[label]] - lse for row in table) / len(table)


def test_uniform_is_log_vocab():
    loss = multilingual_verbalizer_loss(torch.zeros(1, 4), [1], [[0, 1], [2, 3]])
    assert loss.item() == pytest.approx(math.log(4), abs=1e-6)


def test_two_language_example():
    # V = {yes, no, Evet, hiçbir}; entailment -> yes (0) / Evet (2)
    logits = torch.tensor([[2.0, 0.0, 0.0, 0.0]], dtype=torch.float64)
    loss = multilingual_verbalizer_loss(logits, [0], [[0, 1], [2, 3]]).item()
    sigma = np.exp([2.0, 0, 0, 0]) / np.exp([2.0, 0, 0, 0]).sum()
    assert loss == pytest.approx(-0.5 * (np.log(sigma[0]) + np.log(sigma[2])), abs=1e-9)
    # log(e^2 + 3) = 2.3408, so the average is 0.5 * (0.3408 + 2.3408)
    assert loss == pytest.approx(1.3408, abs=1e-4)


def test_single_language_is_cross_entropy():
    gen = torch.Generator().manual_seed(0)
    logits = torch.randn(6, 10, generator=gen)
    labels = torch.tensor([0, 1, 2, 0, 1, 2])
    table = [[7, 3, 5]]
    expected = torch.nn.functional.cross_entropy(logits, torch.tensor(table[0])[labels])
    assert multilingual_verbalizer_loss(logits, labels, table).item() == pytest.approx(expected.item(), abs=1e-6)


def test_random_cases_match_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        vocab = int(rng.integers(12, 30))
        n_lang = int(rng.integers(1, 4))
        c = int(rng.integers(2, 4))
        table = rng.choice(vocab, n_lang * c, replace=False).reshape(n_lang, c).tolist()
        logits = rng.normal(0, 3, vocab)
        label = int(rng.integers(c))
        got = multilingual_verbalizer_loss(torch.tensor(logits[None]), [label], table).item()
        assert got == pytest.approx(oracle_loss(logits.tolist(), label, table), abs=1e-6)


def test_empty_language_set():
    with pytest.raises(InputError):
        multilingual_verbalizer_loss(torch.zeros(1, 4), [0], [])


def test_label_out_of_range():
    with pytest.raises(InputError):
        multilingual_verbalizer_loss(torch.zeros(1, 4), [2], [[0, 1]])


def test_beta_statistics():
    draws = sample_lambda(1.2, np.random.default_rng(0), 100_000)
    assert abs(draws.mean() - 0.5) < 0.01
    assert abs(draws.var() - 1 / (4 * (2 * 1.2 + 1))) < 0.005
    assert draws.min() >= 0 and draws.max() <= 1
    with pytest.raises(InputError):
        sample_lambda(0.0, np.random.default_rng(0))


def test_interpolation_examples():
    mi, mj = torch.tensor([2.0, -1.0, 3.0]), torch.tensor([0.0, 4.0, 1.0])
    assert torch.allclose(mixup_representations(mi, mj, 0.3), torch.tensor([0.6, 2.5, 1.6]))
    assert torch.equal(mixup_representations(mi, mj, 1.0), mi)
    assert torch.equal(mixup_representations(mi, mj, 0.0), mj)
    mid = mixup_representations(torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0]), 0.5)
    assert torch.equal(mid, torch.tensor([0.5, 0.5]))
    with pytest.raises(InputError):
        mixup_representations(mi, torch.zeros(2), 0.5)


def test_interpolation_gradient():
    mi = torch.randn(5, dtype=torch.float64, requires_grad=True)
    mj = torch.randn(5, dtype=torch.float64, requires_grad=True)
    jac = torch.autograd.functional.jacobian(lambda a, b: mixup_representations(a, b, 0.3), (mi, mj))
    assert torch.allclose(jac[0], 0.3 * torch.eye(5, dtype=torch.float64))
    assert torch.allclose(jac[1], 0.7 * torch.eye(5, dtype=torch.float64))


def make_head(vocab=12, d=5, seed=0):
    gen = torch.Generator().manual_seed(seed)
    w = torch.randn(vocab, d, generator=gen, dtype=torch.float64)
    return lambda h: h @ w.T


def test_mixup_endpoints_and_linearity():
    head = make_head()
    table = [[1, 4, 7], [2, 5, 8]]
    m = torch.randn(5, dtype=torch.float64)
    one = mixup_loss(MixupVirtualExample(m, 0, 2, 1.0), table, head)
    assert one.item() == pytest.approx(multilingual_verbalizer_loss(head(m[None]), [0], table).item(), abs=1e-9)
    same = mixup_loss(MixupVirtualExample(m, 1, 1, 0.37), table, head)
    assert same.item() == pytest.approx(multilingual_verbalizer_loss(head(m[None]), [1], table).item(), abs=1e-9)
    for lam in (0.0, 0.2, 0.5, 0.9):
        mixed = mixup_loss(MixupVirtualExample(m, 0, 2, lam), table, head).item()
        li = mixup_loss(MixupVirtualExample(m, 0, 2, 1.0), table, head).item()
        lj = mixup_loss(MixupVirtualExample(m, 2, 0, 1.0), table, head).item()
        assert mixed == pytest.approx(lam * li + (1 - lam) * lj, abs=1e-6)


def test_mixup_uniform_head():
    loss = mixup_loss_from_logits(torch.zeros(1, 4), [0], [1], [0.3], [[0, 1], [2, 3]])
    assert loss.item() == pytest.approx(math.log(4), abs=1e-6)


def test_virtual_example_rejects_bad_lambda():
    with pytest.raises(InputError):
        MixupVirtualExample(torch.zeros(2), 0, 1, 1.5)


@pytest.mark.parametrize("b,expected", [(8, 4), (1, 0), (5, 2), (0, 0)])
def test_disjoint_pairing(b, expected):
    assert len(pair_indices(b)) == expected
    virtual = pair_batch(torch.randn(b, 3), list(range(b)), 1.2, np.random.default_rng(0))
    assert len(virtual) == expected
    assert [(v.label_i, v.label_j) for v in virtual] == pair_indices(b)


def test_overlapping_pairing():
    assert pair_indices(5, overlapping=True) == [(0, 1), (1, 2), (2, 3), (3, 4)]


def test_fresh_lambda_per_pair():
    virtual = pair_batch(torch.randn(8, 3), [0] * 8, 1.2, np.random.default_rng(1))
    assert len({v.lam for v in virtual}) == 4


def test_finetune_loss_examples():
    assert finetune_loss(torch.zeros(1, 3), [1]).item() == pytest.approx(math.log(3), abs=1e-6)
    assert finetune_loss(torch.tensor([[1.0, 2.0, 3.0]]), [2]).item() == pytest.approx(0.4076, abs=1e-4)
    assert finetune_loss(torch.tensor([[0.0, 0.0, 50.0]]), [2]).item() < 1e-12
    with pytest.raises(InputError):
        finetune_loss(torch.zeros(1, 3), [3])


def test_total_combines_with_weight():
    head = make_head()
    reprs = torch.randn(4, 5, dtype=torch.float64)
    out = prompt_batch_loss(reprs, [0, 1, 2, 0], [[1, 4, 7]], head, mixup_weight=0.5, rng=np.random.default_rng(0))
    assert isinstance(out, LossBreakdown)
    assert out.total.item() == pytest.approx(out.real_loss.item() + 0.5 * out.mixup_loss.item())
    assert len(out.lambdas) == 2
    rec = out.record(3)
    assert rec["step"] == 3 and len(rec["lambdas"]) == 2
    plain = prompt_batch_loss(reprs, [0, 1, 2, 0], [[1, 4, 7]], head)
    assert plain.mixup_loss.item() == 0.0
    assert out.real_loss.item() >= 0 and out.mixup_loss.item() >= 0
