"""Shared fixtures: a tiny fixed-seed GPT-2 checkpoint plus probe files.

The checkpoint is built once per session. Seeding makes the weights, and
therefore every extracted activation, reproducible across runs.
"""

import json
from types import SimpleNamespace

import pytest
import torch
from tokenizers import Tokenizer
from tokenizers.models import WordLevel
from tokenizers.pre_tokenizers import Whitespace
from transformers import GPT2Config, GPT2Model, PreTrainedTokenizerFast

N_EMBD = 16
N_LAYER = 2
N_POSITIONS = 64
# hidden-state tuple includes the embedding output ahead of the blocks
N_CAPTURED_LAYERS = N_LAYER + 1
STEPS = 5

PROBE_ROWS = [
    {
        "id": "p1",
        "system": "TS",
        "code": "001",
        "question": "Which code covers acute widget failure ?",
        "answer_statement": "Code 001 covers acute widget failure .",
    },
    {
        "id": "p2",
        "system": "TS",
        "code": "002",
        "question": "Which code covers chronic gear wear ?",
        "answer_statement": "Code 002 covers chronic gear wear .",
    },
    {
        "id": "p3",
        "system": "TS",
        "code": "003",
        "question": "Which code covers sprocket misalignment ?",
        "answer_statement": "Code 003 covers sprocket misalignment .",
    },
]


def _cot_row(probe, clauses):
    question = probe["question"]
    steps = [
        f"{question} Reasoning so far : " + " , and ".join(clauses[: k + 1])
        for k in range(STEPS)
    ]
    return {
        "probe_id": probe["id"],
        "system": probe["system"],
        "code": probe["code"],
        "steps": steps,
        "joiner": ", and ",
    }


COT_ROWS = [
    _cot_row(
        PROBE_ROWS[0],
        ["R is root", "A is left", "AA is lower", "AAA is deep", "001 is leaf"],
    ),
    _cot_row(
        PROBE_ROWS[2],
        ["R is root", "B is right", "BB is lower", "BBB is deep", "003 is leaf"],
    ),
]


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# generated fixture\n\n")
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


def _fixture_texts():
    for row in PROBE_ROWS:
        yield row["question"]
        yield row["answer_statement"]
    for row in COT_ROWS:
        yield from row["steps"]


@pytest.fixture(scope="session")
def toy_model_dir(tmp_path_factory):
    target = tmp_path_factory.mktemp("toy-model")
    pre = Whitespace()
    words = set()
    for text in _fixture_texts():
        words.update(token for token, _ in pre.pre_tokenize_str(text))
    vocab = {"[UNK]": 0, "[PAD]": 1}
    for i, word in enumerate(sorted(words), start=2):
        vocab[word] = i
    inner = Tokenizer(WordLevel(vocab, unk_token="[UNK]"))
    inner.pre_tokenizer = Whitespace()
    tokenizer = PreTrainedTokenizerFast(
        tokenizer_object=inner, unk_token="[UNK]", pad_token="[PAD]"
    )
    config = GPT2Config(
        vocab_size=len(vocab),
        n_embd=N_EMBD,
        n_layer=N_LAYER,
        n_head=2,
        n_positions=N_POSITIONS,
        bos_token_id=0,
        eos_token_id=0,
    )
    torch.manual_seed(20240817)
    model = GPT2Model(config)
    model.eval()
    model.save_pretrained(target)
    tokenizer.save_pretrained(target)
    return target


@pytest.fixture(scope="session")
def toy_inputs(tmp_path_factory):
    target = tmp_path_factory.mktemp("toy-inputs")
    return SimpleNamespace(
        probes=write_jsonl(target / "probes.jsonl", PROBE_ROWS),
        series=write_jsonl(target / "cot.jsonl", COT_ROWS),
        dir=target,
    )
