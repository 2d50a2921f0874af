import pytest

from tm_prompting.errors import TemplateError
from tm_prompting.templates import (
    DEFAULT_TM_TEMPLATE,
    DEFAULT_ZERO_SHOT_TEMPLATE,
    Demonstration,
    DemoOrder,
    PromptRequest,
    PromptTemplate,
    Provenance,
    TemplateStyle,
    catalog,
    get_template,
    order_demos,
    render,
)

APPLE = Demonstration("I have an apple.", "Ich habe einen Apfel.", Provenance.TM, fms=0.75)
QUERY = "I have an orange."

# Every catalog row rendered English -> German with one demonstration.
GOLDENS = {
    1: 'If the translation of "I have an apple." from English to German is "Ich habe einen Apfel." '
       'then what is the translation of "I have an orange." from English to German? '
       "Only translation results are required.",
    2: 'What is the translation of "I have an orange." from English to German? '
       "Only translation results are required.",
    3: 'If "I have an apple." translated into German is "Ich habe einen Apfel." then what is the '
       'translation of "I have an orange." should be if translated into German? '
       "Only translation results are required.",
    4: 'What is the translation of "I have an orange." should be if translated into German? '
       "Only translation results are required.",
    5: "If [I have an apple.] translated into German is [Ich habe einen Apfel.] then what is the "
       "translation of [I have an orange.] should be if translated into German? "
       "Only translation results are required.",
    6: "Translate English to German.\n[English]: [I have an apple.]\n[German]: [Ich habe einen Apfel.]\n"
       "[English]: [I have an orange.]\n[German]:",
    7: "Translate English to German.\n[English]=[I have an apple.]\n[German]=[Ich habe einen Apfel.]\n"
       "[English]=[I have an orange.]\n[German]=",
    8: "Translate English to German. [English]=[I have an apple.] [German]=[Ich habe einen Apfel.] "
       "[English]=[I have an orange.] [German]=",
    9: "Translate English to German.\n[English]=[I have an apple.] [German]=[Ich habe einen Apfel.]\n"
       "[English]=[I have an orange.] [German]=",
    10: "if English = [I have an apple.] then German = [Ich habe einen Apfel.]; "
        "if English = [I have an orange.] then German =",
    11: 'English="I have an apple." German="Ich habe einen Apfel." English="I have an orange." German=',
    12: "English=[I have an apple.] German=[Ich habe einen Apfel.] English=[I have an orange.] German=",
    13: "[English] I have an apple. [German] Ich habe einen Apfel. [English] I have an orange. [German]",
    14: "[English]: [I have an apple.] [German]: [Ich habe einen Apfel.] [English]: [I have an orange.] [German]:",
    15: "[English]: [I have an orange.] [German]:",
    16: "[English] = [I have an apple.] [German] = [Ich habe einen Apfel.] [English] = [I have an orange.] [German] =",
    17: "[English]=[I have an apple.] [German]=[Ich habe einen Apfel.] [English]=[I have an orange.] [German]=",
    18: "[English]=[I have an orange.] [German]=",
    19: "{English}={I have an apple.} {German}={Ich habe einen Apfel.} {English}={I have an orange.} {German}=",
    20: "{[English]=[I have an apple.]} {[German]=[Ich habe einen Apfel.]} {[English]=[I have an orange.]} {[German]=}",
}


@pytest.mark.parametrize("template_id", sorted(GOLDENS))
def test_catalog_row_matches_golden(template_id, en_de):
    template = get_template(template_id)
    demos = [APPLE] if template.with_tm else []
    request = render(template, en_de, QUERY, demos)
    assert request.rendered == GOLDENS[template_id]
    assert request.k == len(demos)
    assert request.warnings == ()


def test_catalog_shape():
    templates = catalog()
    assert [t.id for t in templates] == list(range(1, 21))
    assert {t.id for t in templates if not t.with_tm} == {2, 4, 15, 18}
    assert {t.id for t in templates if t.style == TemplateStyle.INSTRUCTION} == {1, 2, 3, 4, 5}
    assert get_template(DEFAULT_TM_TEMPLATE).with_tm
    assert not get_template(DEFAULT_ZERO_SHOT_TEMPLATE).with_tm


def test_unknown_template_id():
    with pytest.raises(TemplateError):
        get_template(21)


def test_two_demonstrations_code_style(en_de):
    second = Demonstration("I have a pear.", "Ich habe eine Birne.", Provenance.TM, fms=0.75)
    request = render(get_template(17), en_de, QUERY, [APPLE, second])
    assert request.rendered == (
        "[English]=[I have an apple.] [German]=[Ich habe einen Apfel.] "
        "[English]=[I have a pear.] [German]=[Ich habe eine Birne.] "
        "[English]=[I have an orange.] [German]="
    )


def test_two_demonstrations_instruction_style_repeats_clause(en_de):
    second = Demonstration("I have a pear.", "Ich habe eine Birne.", Provenance.TM, fms=0.75)
    rendered = render(get_template(1), en_de, QUERY, [APPLE, second]).rendered
    assert rendered.startswith(
        'If the translation of "I have an apple." from English to German is "Ich habe einen Apfel." and '
        'the translation of "I have a pear." from English to German is "Ich habe eine Birne." then'
    )


def test_prompt_length_grows_with_k(en_de):
    demos = [Demonstration(f"s{i}", f"t{i}", Provenance.TM, fms=0.5) for i in range(9)]
    for template in catalog():
        if not template.with_tm:
            continue
        lengths = [len(render(template, en_de, QUERY, demos[:k]).rendered) for k in range(1, 10)]
        assert lengths == sorted(set(lengths))


def test_demonstration_count_must_fit_template(en_de):
    with pytest.raises(TemplateError):
        render(get_template(17), en_de, QUERY, [])
    with pytest.raises(TemplateError):
        render(get_template(18), en_de, QUERY, [APPLE])


def test_query_with_closing_delimiter_warns(en_de):
    request = render(get_template(17), en_de, "see [1] here", [APPLE])
    assert len(request.warnings) == 1
    assert "]" in request.warnings[0]
    assert render(get_template(13), en_de, "see [1] here", [APPLE]).warnings == ()


def test_template_slot_validation():
    with pytest.raises(TemplateError):
        PromptTemplate(99, TemplateStyle.CODE, False, "[<< src_lang >>]=[<< source >>]")
    with pytest.raises(TemplateError):
        PromptTemplate(99, TemplateStyle.CODE, False, "no query slot")
    with pytest.raises(TemplateError):
        PromptTemplate(99, TemplateStyle.CODE, True, "<< demos >> << query >>", demo_block="<< source >>", joiner=" ")


def test_demonstration_validation():
    with pytest.raises(TemplateError):
        Demonstration("", "x", Provenance.TM, fms=1.0)
    with pytest.raises(TemplateError):
        Demonstration("x", "y", Provenance.TM)
    with pytest.raises(TemplateError):
        Demonstration("x", "y", Provenance.NMT, fms=0.5)


def test_order_demos_ascending_puts_best_last():
    demos = [Demonstration(f"s{f}", "t", Provenance.TM, fms=f) for f in (0.5, 0.9, 0.7)]
    assert [d.fms for d in order_demos(demos, DemoOrder.ASCENDING)] == [0.5, 0.7, 0.9]
    assert [d.fms for d in order_demos(demos, "desc")] == [0.9, 0.7, 0.5]


def test_order_demos_is_stable_and_a_permutation():
    demos = [Demonstration(f"s{i}", "t", Provenance.TM, fms=f) for i, f in enumerate((0.5, 0.5, 0.8, 0.5))]
    ascending = order_demos(demos, "asc")
    assert [d.source for d in ascending] == ["s0", "s1", "s3", "s2"]
    assert sorted(ascending, key=lambda d: d.source) == sorted(order_demos(demos, "desc"), key=lambda d: d.source)


def test_order_demos_without_scores_is_unchanged():
    demos = [Demonstration("b", "t", Provenance.RANDOM_IN), Demonstration("a", "t", Provenance.RANDOM_IN)]
    assert order_demos(demos, "asc") == demos


def test_order_demos_rejects_mixed_scores():
    demos = [APPLE, Demonstration("x", "y", Provenance.NMT)]
    with pytest.raises(TemplateError):
        order_demos(demos, "desc")


def test_prompt_request_dict_round_trip(en_de):
    request = render(get_template(17), en_de, QUERY, [APPLE], query_id=7)
    assert PromptRequest.from_dict(request.to_dict()) == request
