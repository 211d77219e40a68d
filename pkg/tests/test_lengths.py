"""Tokenizer and multimodal length accounting tests."""

from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_sample, make_shard
from mmpack.errors import ConfigError, ContractViolation
from mmpack.ingest import Shard
from mmpack.lengths import (
    ByteTokenizer,
    PackerConfig,
    TokenizerPort,
    load_tokenizer,
    measure,
    measure_shard,
)


class TestByteTokenizer:
    def test_one_token_per_byte(self, tok):
        assert tok.encode("abc") == [97, 98, 99]
        assert tok.encode("") == []
        assert tok.encode("é") == [0xC3, 0xA9]

    def test_special_ids_distinct_and_in_vocab(self, tok):
        ids = {tok.placeholder_id, tok.separator_id, tok.pad_id}
        assert len(ids) == 3
        assert all(i < tok.vocab_size for i in ids)
        assert all(i > 255 for i in ids)

    def test_satisfies_port_protocol(self, tok):
        assert isinstance(tok, TokenizerPort)

    def test_decode_round_trip(self, tok):
        ids = [tok.placeholder_id, *tok.encode("hi"), tok.separator_id]
        assert tok.decode(ids) == "<image>hi<|im_end|>"


class TestLoadTokenizer:
    def test_builtin_byte(self):
        assert isinstance(load_tokenizer("byte"), ByteTokenizer)

    def test_json_config(self, tmp_path):
        path = tmp_path / "tok.json"
        path.write_text(json.dumps({"kind": "byte"}))
        assert isinstance(load_tokenizer(str(path)), ByteTokenizer)

    def test_unknown_kind(self, tmp_path):
        path = tmp_path / "tok.json"
        path.write_text(json.dumps({"kind": "bpe"}))
        with pytest.raises(ConfigError):
            load_tokenizer(str(path))

    def test_unknown_spec(self):
        with pytest.raises(ConfigError):
            load_tokenizer("no-such-tokenizer")


class TestPackerConfig:
    def test_defaults(self, cfg):
        assert cfg.context_length == 4096
        assert cfg.visual_tokens_per_image == 144

    def test_context_must_fit_one_image(self):
        with pytest.raises(ContractViolation):
            PackerConfig(context_length=145, pad_id=258, visual_tokens_per_image=144)
        PackerConfig(context_length=146, pad_id=258, visual_tokens_per_image=144)


class TestMeasure:
    def test_empty_caption(self, tok, cfg):
        m = measure(make_sample("u", ""), tok, cfg)
        assert m.len == 145
        assert m.text_tokens == [tok.placeholder_id, tok.separator_id]
        assert not m.truncated

    def test_twenty_token_caption(self, tok, cfg):
        m = measure(make_sample("u", "a" * 20), tok, cfg)
        assert m.len == 20 + 1 + 144
        assert m.text_tokens[0] == tok.placeholder_id
        assert m.text_tokens[-1] == tok.separator_id
        assert len(m.text_tokens) == 22

    def test_oversized_caption_truncated_to_context(self, tok, cfg):
        m = measure(make_sample("u", "x" * 5000), tok, cfg)
        assert m.len == cfg.context_length
        assert m.truncated
        assert m.text_tokens[-1] == tok.separator_id
        assert m.text_tokens[0] == tok.placeholder_id
        # image is never dropped
        assert m.image_count == 1

    def test_accounting_identity(self, tok, cfg):
        for caption in ["", "short", "a much longer caption with spaces"]:
            m = measure(make_sample("u", caption), tok, cfg)
            expanded = len(m.text_tokens) + m.image_count * (m.visual_token_count - 1)
            assert expanded == m.len
            assert m.len == (len(m.text_tokens) - m.image_count) + m.image_count * 144

    @given(n=st.integers(min_value=0, max_value=400))
    def test_strictly_increasing_below_truncation(self, n):
        tok, cfg = ByteTokenizer(), PackerConfig()
        shorter = measure(make_sample("u", "a" * n), tok, cfg)
        longer = measure(make_sample("u", "a" * (n + 1)), tok, cfg)
        assert longer.len == shorter.len + 1

    @given(n=st.integers(min_value=0, max_value=6000))
    def test_len_bounds(self, n):
        tok, cfg = ByteTokenizer(), PackerConfig()
        m = measure(make_sample("u", "a" * n), tok, cfg)
        assert 145 <= m.len <= cfg.context_length

    def test_pure_function(self, tok, cfg):
        sample = make_sample("u", "same caption")
        assert measure(sample, tok, cfg) == measure(sample, tok, cfg)


class TestMeasureShard:
    def test_empty(self, tok, cfg):
        assert measure_shard(Shard(0), tok, cfg) == []

    def test_order_and_lower_bound(self, tok, cfg):
        shard = make_shard(3)
        measured = measure_shard(shard, tok, cfg)
        assert [m.sample.uid for m in measured] == shard.uids()
        assert all(m.len >= 145 for m in measured)

    def test_one_oversized_does_not_poison_others(self, tok, cfg):
        shard = Shard(0, [make_sample("ok", "fine"), make_sample("big", "y" * 9000)])
        measured = measure_shard(shard, tok, cfg)
        assert [m.truncated for m in measured] == [False, True]
        assert measured[0].len == 4 + 1 + 144
