import numpy as np
import pytest
import torch
import torch.nn.functional as F

from gradcheck import autograd_gradient, fd_gradient, max_relative_error
from semask.downstream import (
    ClassifierConfig,
    DamageClassifier,
    QuestionTokenVocab,
    VQAConfig,
    VQAHead,
    answer_question,
    build_classifier,
    build_vqa,
    classify_damage,
    encode_question,
    pad_token_batch,
    token_vocab_for_palette,
)
from semask.palettes import floodnet_palette

FLOOD = floodnet_palette()
TOKENS = token_vocab_for_palette(FLOOD)

TINY_CLF = ClassifierConfig(stem_channels=4, stage_widths=(4, 6), num_classes=3, dropout=0.0)
TINY_VQA = VQAConfig(
    visual_dim=6, hidden_dim=5, token_embed_dim=4, dropout=0.0, num_answers=7,
    backbone=ClassifierConfig(stem_channels=4, stage_widths=(4, 6)),
)


def rand_image(seed=0, size=48):
    return np.random.default_rng(seed).random((size, size, 3)).astype(np.float32)


def test_classifier_outputs_distribution():
    model = build_classifier(TINY_CLF, seed=0)
    probs = classify_damage(model, rand_image())
    assert probs.shape == (3,)
    assert probs.min() >= 0
    assert abs(probs.sum() - 1.0) <= 1e-6


def test_classifier_eval_deterministic_with_dropout_configured():
    model = build_classifier(ClassifierConfig(stem_channels=4, stage_widths=(4, 6), dropout=0.5), seed=0)
    a = classify_damage(model, rand_image(1))
    b = classify_damage(model, rand_image(1))
    assert np.array_equal(a, b)


def test_classifier_rejects_bad_config():
    with pytest.raises(ValueError):
        ClassifierConfig(num_classes=1)


def test_token_vocab_round_trip():
    ids = TOKENS.encode("is any water area visible")
    assert len(ids) == 5 and all(i > 0 for i in ids)
    with pytest.raises(KeyError):
        TOKENS.encode("what about zebras")


def test_encode_question_deterministic_and_sized():
    model = build_vqa(TINY_VQA, TOKENS.size, seed=0)
    q = "is any water area visible"
    a = encode_question(model, q, TOKENS)
    b = encode_question(model, q, TOKENS)
    assert np.array_equal(a, b)
    assert a.shape == (TINY_VQA.visual_dim,)


def test_answer_question_contract():
    model = build_vqa(TINY_VQA, TOKENS.size, seed=0)
    img = rand_image(3)
    q = "how many tree regions are visible"
    first = answer_question(model, img, q, TOKENS)
    second = answer_question(model, img, q, TOKENS)
    assert first == second
    assert 0 <= first < TINY_VQA.num_answers


def test_vqa_product_fusion_requires_matching_dims():
    model = build_vqa(TINY_VQA, TOKENS.size, seed=0)
    x = torch.randn(2, 3, 48, 48)
    tokens = pad_token_batch([TOKENS.encode("is any water area visible")] * 2)
    out = model(x, tokens)
    assert out.shape == (2, 7)
    with pytest.raises(ValueError):
        VQAConfig(fusion="stack")


def test_vqa_softmax_is_distribution_and_argmax_temperature_invariant():
    model = build_vqa(TINY_VQA, TOKENS.size, seed=1)
    model.eval()
    x = torch.randn(3, 3, 48, 48, generator=torch.Generator().manual_seed(0))
    tokens = pad_token_batch([TOKENS.encode("is any pool area visible")] * 3)
    with torch.no_grad():
        logits = model(x, tokens)
    probs = torch.softmax(logits, dim=1)
    assert torch.allclose(probs.sum(dim=1), torch.ones(3), atol=1e-6)
    base = logits.argmax(dim=1)
    for scale in (0.25, 4.0):
        assert torch.equal(torch.softmax(logits / scale, dim=1).argmax(dim=1), base)


def test_concat_fusion_shape():
    cfg = VQAConfig(
        visual_dim=6, hidden_dim=5, token_embed_dim=4, dropout=0.0, num_answers=4,
        fusion="concat", backbone=ClassifierConfig(stem_channels=4, stage_widths=(4,)),
    )
    model = build_vqa(cfg, TOKENS.size, seed=0)
    out = model(torch.randn(1, 3, 48, 48), pad_token_batch([TOKENS.encode("is any water area visible")]))
    assert out.shape == (1, 4)


def test_classifier_gradients_match_finite_differences():
    torch.manual_seed(0)
    model = DamageClassifier(
        ClassifierConfig(stem_channels=3, stage_widths=(3, 4), num_classes=2, dropout=0.0)
    ).double()
    model.train()
    rng = np.random.default_rng(1)
    x = torch.from_numpy(rng.random((2, 3, 24, 24)))
    y = torch.from_numpy(rng.integers(0, 2, size=2))

    def loss_fn():
        return F.cross_entropy(model(x), y)

    params = [p for p in model.parameters() if p.requires_grad]
    g_ad = autograd_gradient(loss_fn, params)
    g_fd = fd_gradient(loss_fn, params)
    assert max_relative_error(g_fd, g_ad) <= 1e-4


def test_vqa_gradients_match_finite_differences():
    torch.manual_seed(0)
    cfg = VQAConfig(
        visual_dim=4, hidden_dim=4, token_embed_dim=3, dropout=0.0, num_answers=3,
        backbone=ClassifierConfig(stem_channels=3, stage_widths=(3,)),
    )
    model = VQAHead(cfg, TOKENS.size).double()
    model.train()
    rng = np.random.default_rng(2)
    x = torch.from_numpy(rng.random((2, 3, 24, 24)))
    tokens = pad_token_batch([
        TOKENS.encode("is any water area visible"),
        TOKENS.encode("how many tree regions are visible"),
    ])
    y = torch.from_numpy(rng.integers(0, 3, size=2))

    def loss_fn():
        return F.cross_entropy(model(x, tokens), y)

    params = [p for p in model.parameters() if p.requires_grad]
    g_ad = autograd_gradient(loss_fn, params)
    g_fd = fd_gradient(loss_fn, params)
    assert max_relative_error(g_fd, g_ad) <= 1e-4
