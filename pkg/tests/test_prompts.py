from dataclasses import dataclass

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hiernav.prompts import (
    AnswerKind,
    CHOICE_LETTERS,
    MCQ_TEMPLATES,
    PromptTemplate,
    QUESTION_SLOT,
    TaskTemplateMismatch,
    mcq_block,
    parse_choice,
    parse_path,
    reference_digests,
    render,
    template_digest,
    template_text,
)


@dataclass(frozen=True)
class FakeMcq:
    question: str
    options: dict


@dataclass(frozen=True)
class FakePair:
    system: str
    code_a: str
    code_b: str


MCQ = FakeMcq(
    question="What is the description of code 001 in DEMO?",
    options={"A": "first", "B": "second", "C": "third", "D": "fourth"},
)
PAIR = FakePair(system="DEMO", code_a="001", code_b="002")


def test_all_templates_match_pinned_digests():
    pinned = reference_digests()
    for template in PromptTemplate:
        assert template_digest(template) == pinned[template.value]


def test_direct_qa_opening_line():
    text = render(PromptTemplate.DIRECT_QA, MCQ)
    assert text.startswith("Answer only A,B,C,D according to the answer")


def test_structured_scaffold_lines():
    text = render(PromptTemplate.STRUCTURED, MCQ)
    for line in ("Step 2A:", "Step 2B:", "Step 2C:", "Step 2D:"):
        assert line in text
    assert "Final Answer: [A/B/C/D]" in text


def test_chain_of_thought_declares_format():
    text = render(PromptTemplate.CHAIN_OF_THOUGHT, MCQ)
    assert "Answer: <A/B/C/D>" in text
    assert "Explanation: <your explanation here>" in text


def test_render_is_deterministic():
    for template in MCQ_TEMPLATES:
        assert render(template, MCQ) == render(template, MCQ)


def test_render_fills_slot_verbatim():
    block = mcq_block(MCQ.question, MCQ.options)
    for template in MCQ_TEMPLATES:
        text = render(template, MCQ)
        assert QUESTION_SLOT not in text
        assert block in text
        assert text == template_text(template).replace(QUESTION_SLOT, block)


def test_render_injective_over_tasks():
    other = FakeMcq(question="Different question?", options=MCQ.options)
    for template in MCQ_TEMPLATES:
        assert render(template, MCQ) != render(template, other)


def test_render_nca_pair():
    text = render(PromptTemplate.NCA_PATH, PAIR)
    assert "DEMO" in text
    assert "Code A: 001" in text
    assert "Code B: 002" in text
    assert "NCA:" in text and "PATH_A:" in text and "PATH_B:" in text


def test_render_task_mismatch():
    with pytest.raises(TaskTemplateMismatch):
        render(PromptTemplate.DIRECT_QA, PAIR)
    with pytest.raises(TaskTemplateMismatch):
        render(PromptTemplate.NCA_PATH, MCQ)


def test_mcq_block_layout():
    block = mcq_block("Q?", {"A": "w", "B": "x", "C": "y", "D": "z"})
    assert block == "Q?\nA. w\nB. x\nC. y\nD. z"


def test_parse_cot_answer_line():
    parsed = parse_choice(
        PromptTemplate.CHAIN_OF_THOUGHT, "Answer: B\nExplanation: because."
    )
    assert parsed.kind is AnswerKind.CHOICE
    assert parsed.choice == "B"


def test_parse_structured_bracket_variant():
    parsed = parse_choice(PromptTemplate.STRUCTURED, "final answer: [c] because ...")
    assert parsed.choice == "C"


def test_parse_direct_unparseable():
    parsed = parse_choice(PromptTemplate.DIRECT_QA, "I am not sure.")
    assert parsed.kind is AnswerKind.UNPARSEABLE
    assert parsed.choice is None


def test_parse_direct_bare_letter_variants():
    for raw, want in [("B", "B"), ("b.", "B"), ("(C)", "C"), ("The answer is D.", "D")]:
        assert parse_choice(PromptTemplate.DIRECT_QA, raw).choice == want


def test_parse_skips_echoed_scaffold():
    raw = (
        "Answer format:\n"
        "Step 1: …\n"
        "Final Answer: [A/B/C/D] because …\n\n"
        "Step 1: the code sits under chapter 7.\n"
        "Final Answer: [B] because it matches.\n"
    )
    assert parse_choice(PromptTemplate.STRUCTURED, raw).choice == "B"


def test_parse_skips_echoed_answer_placeholder():
    raw = "Respond as:\nAnswer: <A/B/C/D>\n\nAnswer: D\nExplanation: fits."
    assert parse_choice(PromptTemplate.CHAIN_OF_THOUGHT, raw).choice == "D"


def test_parse_accepts_filled_placeholder_brackets():
    assert parse_choice(PromptTemplate.CHAIN_OF_THOUGHT, "Answer: <B>").choice == "B"


def test_parse_strips_think_blocks():
    raw = "<think>Answer: A? no, reconsider.</think>\nAnswer: C\nExplanation: x"
    assert parse_choice(PromptTemplate.CHAIN_OF_THOUGHT, raw).choice == "C"


def test_parse_drops_unclosed_think_block():
    raw = "<think>maybe A, maybe B, I keep going"
    parsed = parse_choice(PromptTemplate.CHAIN_OF_THOUGHT, raw)
    assert parsed.kind is AnswerKind.UNPARSEABLE


def test_parse_strips_fences_and_role_preamble():
    raw = "Assistant: ```\nAnswer: a\n```"
    assert parse_choice(PromptTemplate.CHAIN_OF_THOUGHT, raw).choice == "A"


def test_parse_returns_uppercase():
    for template, raw in [
        (PromptTemplate.DIRECT_QA, "d"),
        (PromptTemplate.CHAIN_OF_THOUGHT, "answer - d"),
        (PromptTemplate.STRUCTURED, "Final Answer d"),
    ]:
        assert parse_choice(template, raw).choice == "D"


def test_parse_round_trip_compliant_responses():
    def compliant(template, letter):
        if template is PromptTemplate.DIRECT_QA:
            return letter
        if template is PromptTemplate.CHAIN_OF_THOUGHT:
            return f"Answer: {letter}\nExplanation: option {letter} is right."
        return (
            "Step 1: recalled.\nStep 2A: no.\nStep 2B: no.\n"
            f"Step 2C: no.\nStep 2D: no.\nFinal Answer: [{letter}] because so."
        )

    for template in MCQ_TEMPLATES:
        for letter in CHOICE_LETTERS:
            assert parse_choice(template, compliant(template, letter)).choice == letter


def test_parse_choice_rejects_path_template():
    with pytest.raises(TaskTemplateMismatch):
        parse_choice(PromptTemplate.NCA_PATH, "Answer: A")


@given(st.text(max_size=200))
def test_parse_never_yields_foreign_letter(raw):
    for template in MCQ_TEMPLATES:
        parsed = parse_choice(template, raw)
        if parsed.kind is AnswerKind.CHOICE:
            assert parsed.choice in CHOICE_LETTERS
        else:
            assert parsed.kind is AnswerKind.UNPARSEABLE


def test_parse_path_well_formed():
    parsed = parse_path("NCA: A01\nPATH_A: A > A01\nPATH_B: A > A01")
    assert parsed.kind is AnswerKind.PATH
    assert parsed.nca == "A01"
    assert parsed.path_a == ("A", "A01")
    assert parsed.path_b == ("A", "A01")


def test_parse_path_missing_line():
    parsed = parse_path("NCA: A01\nPATH_A: A > A01")
    assert parsed.kind is AnswerKind.UNPARSEABLE


def test_parse_path_internal_spaces_kept():
    parsed = parse_path("NCA: A 01\nPATH_A: A 01 > B 02\nPATH_B: A 01")
    assert parsed.nca == "A 01"
    assert parsed.path_a == ("A 01", "B 02")


def test_parse_path_skips_placeholder_echo():
    raw = (
        "NCA: <code of the nearest common ancestor>\n"
        "PATH_A: <root code> > <next code>\n"
        "PATH_B: <root code>\n"
        "NCA: R7\n"
        "PATH_A: R7 > K2\n"
        "PATH_B: R7 > K3\n"
    )
    parsed = parse_path(raw)
    assert parsed.nca == "R7"
    assert parsed.path_a == ("R7", "K2")
    assert parsed.path_b == ("R7", "K3")


def test_parse_path_empty_segments_dropped():
    parsed = parse_path("NCA: X\nPATH_A: A >  > B\nPATH_B: A")
    assert parsed.path_a == ("A", "B")


def test_parse_path_blank_path_unparseable():
    parsed = parse_path("NCA: X\nPATH_A:  >  \nPATH_B: A")
    assert parsed.kind is AnswerKind.UNPARSEABLE
