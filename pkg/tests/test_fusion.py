import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mpoxvlm.data.synth import GeneratorConfig, generate_dataset
from mpoxvlm.data.vqa import lexicon_corpus
from mpoxvlm.fusion.lm import (
    Adapters,
    LmConfig,
    LoraConfig,
    attach_lora,
    build_adapters,
    build_lm,
    lora_merge,
    project_clip,
    project_cls,
)
from mpoxvlm.fusion.model import MpoxVLM, pad_layouts, score_and_generate
from mpoxvlm.fusion.sequence import (
    IncludeFlags,
    answer_nll,
    assemble_sequence,
    generate_answer,
    lm_forward,
    mpox_score,
    options_text,
    text_layout,
)
from mpoxvlm.fusion.tokenizer import TextTokenizer
from mpoxvlm.encoders import EncoderConfig, MaeConfig, build_encoders

TOK = TextTokenizer.from_corpus(lexicon_corpus())
INSTANCES = [r.vqa for r in generate_dataset(GeneratorConfig(n_total=40, image_size=16), 1).records]


def small_lm(seed=0, dim=16, dtype=torch.float64):
    lm = build_lm(len(TOK), LmConfig(dim=dim, depth=2, heads=2, max_len=128), seed).to(dtype)
    return lm


def brute_force_nll(lm, seq):
    """-sum log p(y_t | prefix) with one forward pass per answer token."""
    total = 0.0
    for pos in seq.loss_mask.nonzero().flatten().tolist():
        logits = lm(seq.embeds[:pos].unsqueeze(0))[0, -1]
        total -= float(logits.log_softmax(-1)[seq.token_ids[pos]])
    return total


@pytest.mark.parametrize("i", range(20))
def test_single_pass_nll_equals_chain(i):
    torch.manual_seed(i)
    lm = small_lm(seed=i)
    adapters = build_adapters(8, 16, 16, seed=i).double()
    k = 1 + i % 5
    z_clip = project_clip(adapters, torch.randn(k, 8, dtype=torch.float64))
    z_v = project_cls(adapters, torch.randn(8, dtype=torch.float64))
    include = IncludeFlags(context=bool(i % 2), cls_token=i % 3 != 0, clip_tokens=True)
    seq = assemble_sequence(z_clip, z_v, INSTANCES[i], TOK, lm.tok_emb, include)
    n = int(seq.loss_mask.sum())
    single = answer_nll(lm, seq).item() * n
    assert abs(single - brute_force_nll(lm, seq)) < 1e-10


def test_batched_loss_matches_single_sequence():
    lm = small_lm()
    enc = EncoderConfig(image_size=16, patch=8, dim=8, depth=1, heads=2)
    tok, vl, vit, _ = build_encoders(enc, MaeConfig(dec_dim=8, dec_depth=1, dec_heads=2), 0)
    adapters = build_adapters(8, 16, 16, seed=0)
    model = MpoxVLM(tok, vl, vit, adapters, lm, TOK).double()
    clip, cls = torch.randn(3, 4, 8, dtype=torch.float64), torch.randn(3, 8, dtype=torch.float64)
    layouts = model.layouts(INSTANCES[:3])
    ids, mask = pad_layouts(layouts, TOK.pad_id)
    batched = float(model.loss(clip, cls, ids, mask))
    total, count = 0.0, 0
    for j in range(3):
        seq = assemble_sequence(project_clip(adapters, clip[j]), project_cls(adapters, cls[j]),
                                INSTANCES[j], TOK, lm.tok_emb)
        n = int(seq.loss_mask.sum())
        total += float(answer_nll(lm, seq)) * n
        count += n
    assert batched == pytest.approx(total / count, abs=1e-10)


def test_sequence_layout():
    inst = INSTANCES[0]
    lay = text_layout(inst, TOK)
    assert lay.ids[0] == TOK.bos_id
    assert lay.ids.count(TOK.sep_id) == 3
    assert lay.ids[-1] == TOK.eos_id
    answer = [i for i, m in zip(lay.ids, lay.loss_mask) if m]
    assert answer == TOK.encode(inst.answer) + [TOK.eos_id]
    no_ctx = text_layout(inst, TOK, include_context=False)
    assert no_ctx.ids.count(TOK.sep_id) == 2
    assert "X_c" not in no_ctx.segments
    prefix = text_layout(inst, TOK, answer=False)
    assert not any(prefix.loss_mask) and prefix.ids[-1] == TOK.sep_id


def test_assembled_segments_in_order():
    lm = small_lm()
    adapters = build_adapters(8, 16, 16, seed=0).double()
    seq = assemble_sequence(
        project_clip(adapters, torch.randn(5, 8, dtype=torch.float64)),
        project_cls(adapters, torch.randn(8, dtype=torch.float64)),
        INSTANCES[0], TOK, lm.tok_emb,
    )
    order = [s for i, s in enumerate(seq.segments) if i == 0 or seq.segments[i - 1] != s]
    assert order == ["Z_CLIP", "Z_V", "X_c", "X_q", "X_o", "Y"]
    assert seq.segments.count("Z_CLIP") == 5 and seq.segments.count("Z_V") == 1
    assert (seq.token_ids[:6] == -1).all()


def test_options_text():
    assert options_text(("mpox", "non-mpox")) == "options : mpox or non-mpox"
    with pytest.raises(ValueError):
        options_text(())


@settings(max_examples=25, deadline=None)
@given(d_v=st.integers(1, 32), d_h=st.integers(1, 32), k=st.integers(1, 64), hidden=st.integers(1, 16))
def test_projection_shapes(d_v, d_h, k, hidden):
    adapters = Adapters(d_v, hidden, d_h)
    assert project_clip(adapters, torch.randn(k, d_v)).shape == (d_h, k)
    assert project_cls(adapters, torch.randn(d_v)).shape == (d_h, 1)
    assert project_clip(adapters, torch.randn(2, k, d_v)).shape == (2, d_h, k)


def test_projection_paper_scale():
    adapters = Adapters(1024, 64, 4096)
    k = (336 // 14) ** 2
    assert project_clip(adapters, torch.randn(k, 1024)).shape == (4096, 576)
    assert project_cls(adapters, torch.randn(1024)).shape == (4096, 1)


def test_projection_rejects_wrong_width():
    adapters = Adapters(8, 8, 8)
    with pytest.raises(ValueError):
        project_clip(adapters, torch.randn(4, 7))
    with pytest.raises(ValueError):
        project_cls(adapters, torch.randn(4, 2, 8))


def test_lora_zero_init_is_bit_identical():
    base = small_lm(dtype=torch.float32)
    adapted = build_lm(len(TOK), base.cfg, 0)
    attach_lora(adapted, LoraConfig(rank=4, alpha=8.0), seed=1)
    x = torch.randn(2, 9, base.cfg.dim)
    assert torch.equal(base(x), adapted(x))
    assert all(torch.count_nonzero(m.lora_B) == 0 for m in adapted.lora_layers())
    assert all(torch.count_nonzero(m.lora_A) > 0 for m in adapted.lora_layers())


def test_lora_merge_reproduces_logits():
    lm = attach_lora(small_lm(), LoraConfig(rank=2, alpha=4.0), seed=0)
    with torch.no_grad():
        for m in lm.lora_layers():
            m.lora_B.normal_(std=0.3)
    merged = lora_merge(lm)
    x = torch.randn(2, 7, lm.cfg.dim, dtype=torch.float64)
    assert (lm(x) - merged(x)).abs().max() < 1e-6
    with pytest.raises(ValueError):
        lora_merge(merged)


def test_lora_targets_only_q_and_v():
    lm = attach_lora(small_lm(), LoraConfig(), seed=0)
    names = [n for n, _ in lm.named_parameters() if "lora_" in n]
    assert names and all(".attn.q." in n or ".attn.v." in n for n in names)
    with pytest.raises(ValueError):
        attach_lora(lm, LoraConfig(), seed=0)


def test_lm_rejects_long_sequence():
    lm = small_lm()
    with pytest.raises(ValueError):
        lm(torch.zeros(1, 129, lm.cfg.dim, dtype=torch.float64))


def test_causality():
    lm = small_lm()
    x = torch.randn(1, 10, lm.cfg.dim, dtype=torch.float64)
    y = x.clone()
    y[0, 6:] += 1.0
    assert torch.equal(lm(x)[0, :6], lm(y)[0, :6])


def test_batched_scoring_matches_single():
    lm = small_lm(dtype=torch.float32)
    enc = EncoderConfig(image_size=16, patch=8, dim=8, depth=1, heads=2)
    tok, vl, vit, _ = build_encoders(enc, MaeConfig(dec_dim=8, dec_depth=1, dec_heads=2), 0)
    adapters = build_adapters(8, 16, 16, seed=0)
    model = MpoxVLM(tok, vl, vit, adapters, lm, TOK)
    clip, cls = torch.randn(4, 4, 8), torch.randn(4, 8)
    scores, answers = score_and_generate(model, clip, cls, INSTANCES[:4], max_new=3)
    with torch.no_grad():
        for j in range(4):
            prefix = assemble_sequence(project_clip(adapters, clip[j]), project_cls(adapters, cls[j]),
                                       INSTANCES[j], TOK, lm.tok_emb, answer=False)
            s = mpox_score(lm, prefix, INSTANCES[j].options, TOK, lm.tok_emb)
            assert scores[j] == pytest.approx(s, abs=1e-5)
            assert answers[j] == generate_answer(lm, prefix, TOK, lm.tok_emb, max_new=3)


def test_tokenizer_round_trip_with_byte_fallback():
    text = "patient profile : age group adult zebra quokka"
    ids = TOK.encode(text)
    assert TOK.decode(ids) == text
    assert any(TOK.is_byte(i) for i in ids)


def test_tokenizer_save_load(tmp_path):
    TOK.save(tmp_path / "vocab.txt")
    assert TextTokenizer.load(tmp_path / "vocab.txt").tokens == TOK.tokens
