"""
Prompt templates: the zero-shot f(x) and TM-augmented f_ref(x, X_tm, Y_tm) forms.

Templates are data (see catalog.yaml). A template's `pattern` holds the
`<< demos >>` and `<< query >>` slots; `demo_block` is rendered once per
demonstration and the copies are joined with `joiner` to fill `<< demos >>`.
"""

import logging
import re
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from functools import cached_property, lru_cache
from pathlib import Path

import yaml
from jinja2 import Environment, StrictUndefined, Template, TemplateSyntaxError, nodes

from .corpus import LangPair
from .errors import TemplateError

logger = logging.getLogger(__name__)

CATALOG_PATH = Path(__file__).with_name("catalog.yaml")

DEFAULT_TM_TEMPLATE = 17
DEFAULT_ZERO_SHOT_TEMPLATE = 18
INSTRUCTION_TM_TEMPLATE = 1
INSTRUCTION_ZERO_SHOT_TEMPLATE = 2

PATTERN_SLOTS = frozenset({"src_lang", "tgt_lang", "demos", "query"})
DEMO_SLOTS = frozenset({"src_lang", "tgt_lang", "source", "target"})
CLOSING_DELIMITERS = frozenset('"]}')

# Angle delimiters keep the literal [ ] { } " of the templates free of Jinja syntax.
_ENV = Environment(
    variable_start_string="<<",
    variable_end_string=">>",
    block_start_string="<%",
    block_end_string="%>",
    comment_start_string="<#",
    comment_end_string="#>",
    keep_trailing_newline=True,
    undefined=StrictUndefined,
    autoescape=False,
)
_QUERY_SLOT_RE = re.compile(r"<<\s*query\s*>>")


class Provenance(StrEnum):
    TM = "tm"
    NMT = "nmt"
    RANDOM_IN = "random-in"
    RANDOM_OUT = "random-out"


class TemplateStyle(StrEnum):
    INSTRUCTION = "instruction"
    CODE = "code"


class DemoOrder(StrEnum):
    ASCENDING = "asc"
    DESCENDING = "desc"


@dataclass(frozen=True)
class Demonstration:
    source: str
    target: str
    provenance: Provenance
    fms: float | None = None

    def __post_init__(self):
        if not self.source or not self.target:
            raise TemplateError("demonstration source and target must be non-empty")
        if (self.fms is not None) != (self.provenance == Provenance.TM):
            raise TemplateError(f"fms must be present exactly for tm demonstrations (got {self.provenance})")

    def to_dict(self) -> dict:
        return {"source": self.source, "target": self.target, "provenance": str(self.provenance), "fms": self.fms}

    @classmethod
    def from_dict(cls, data: dict) -> "Demonstration":
        return cls(data["source"], data["target"], Provenance(data["provenance"]), data.get("fms"))


def _slot_counts(template_source: str) -> dict[str, int]:
    try:
        tree = _ENV.parse(template_source)
    except TemplateSyntaxError as exc:
        raise TemplateError(f"invalid template pattern {template_source!r}: {exc}") from exc
    counts: dict[str, int] = {}
    for name in tree.find_all(nodes.Name):
        counts[name.name] = counts.get(name.name, 0) + 1
    return counts


@dataclass(frozen=True)
class PromptTemplate:
    id: int
    style: TemplateStyle
    with_tm: bool
    pattern: str
    demo_block: str | None = None
    joiner: str | None = None

    def __post_init__(self):
        slots = _slot_counts(self.pattern)
        unknown = set(slots) - PATTERN_SLOTS
        if unknown:
            raise TemplateError(f"template #{self.id} has unknown slots {sorted(unknown)}")
        if slots.get("query", 0) != 1:
            raise TemplateError(f"template #{self.id} must contain exactly one query slot")
        if self.with_tm:
            if slots.get("demos", 0) != 1 or not self.demo_block or self.joiner is None:
                raise TemplateError(f"template #{self.id} needs one demos slot, a demo_block and a joiner")
            demo_slots = _slot_counts(self.demo_block)
            if set(demo_slots) - DEMO_SLOTS or not {"source", "target"} <= set(demo_slots):
                raise TemplateError(f"template #{self.id} demo_block must use source and target slots only")
        elif "demos" in slots or self.demo_block:
            raise TemplateError(f"zero-shot template #{self.id} cannot contain demonstrations")

    @cached_property
    def _pattern_template(self) -> Template:
        return _ENV.from_string(self.pattern)

    @cached_property
    def _demo_template(self) -> Template | None:
        return _ENV.from_string(self.demo_block) if self.demo_block else None

    @cached_property
    def query_delimiter(self) -> str | None:
        """The character closing the query slot, if it is a quote or bracket."""
        match = _QUERY_SLOT_RE.search(self.pattern)
        following = self.pattern[match.end():match.end() + 1]
        return following if following in CLOSING_DELIMITERS else None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "style": str(self.style),
            "with_tm": self.with_tm,
            "pattern": self.pattern,
            "demo_block": self.demo_block,
            "joiner": self.joiner,
        }


@dataclass(frozen=True)
class PromptRequest:
    rendered: str
    template_id: int
    lang: LangPair
    query: str
    demos: tuple[Demonstration, ...]
    k: int
    query_id: int | None = None
    warnings: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "template_id": self.template_id,
            "lang": self.lang.to_dict(),
            "query": self.query,
            "k": self.k,
            "demos": [demo.to_dict() for demo in self.demos],
            "rendered": self.rendered,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PromptRequest":
        demos = tuple(Demonstration.from_dict(d) for d in data["demos"])
        return cls(
            rendered=data["rendered"],
            template_id=data["template_id"],
            lang=LangPair.from_dict(data["lang"]),
            query=data["query"],
            demos=demos,
            k=data["k"],
            query_id=data.get("query_id"),
            warnings=tuple(data.get("warnings", ())),
        )


def load_catalog(path: str | Path) -> list[PromptTemplate]:
    with open(path, "r", encoding="utf-8") as f:
        records = yaml.safe_load(f)
    templates = []
    for record in records:
        templates.append(PromptTemplate(
            id=int(record["id"]),
            style=TemplateStyle(record["style"]),
            with_tm=bool(record["with_tm"]),
            pattern=record["pattern"],
            demo_block=record.get("demo_block"),
            joiner=record.get("joiner"),
        ))
    ids = [t.id for t in templates]
    if len(set(ids)) != len(ids):
        raise TemplateError(f"duplicate template ids in {path}")
    return sorted(templates, key=lambda t: t.id)


@lru_cache(maxsize=1)
def _builtin_catalog() -> tuple[PromptTemplate, ...]:
    return tuple(load_catalog(CATALOG_PATH))


def catalog() -> list[PromptTemplate]:
    """The 20 built-in templates, ordered by id."""
    return list(_builtin_catalog())


def get_template(template_id: int, templates: Sequence[PromptTemplate] | None = None) -> PromptTemplate:
    for template in templates if templates is not None else _builtin_catalog():
        if template.id == template_id:
            return template
    raise TemplateError(f"no template with id {template_id}")


def render(
    template: PromptTemplate,
    lang: LangPair,
    query: str,
    demos: Sequence[Demonstration],
    query_id: int | None = None,
) -> PromptRequest:
    if template.with_tm and not demos:
        raise TemplateError(f"template #{template.id} needs at least one demonstration")
    if not template.with_tm and demos:
        raise TemplateError(f"zero-shot template #{template.id} takes no demonstrations, got {len(demos)}")

    names = {"src_lang": lang.src_name, "tgt_lang": lang.tgt_name}
    demo_text = ""
    if template.with_tm:
        demo_text = template.joiner.join(
            template._demo_template.render(source=demo.source, target=demo.target, **names)
            for demo in demos
        )
    rendered = template._pattern_template.render(query=query, demos=demo_text, **names)

    warnings = []
    delimiter = template.query_delimiter
    if delimiter and delimiter in query:
        warnings.append(f"query contains the closing delimiter {delimiter!r} of template #{template.id}")
        logger.warning("Query %r collides with delimiter %r", query, delimiter)

    return PromptRequest(
        rendered=rendered,
        template_id=template.id,
        lang=lang,
        query=query,
        demos=tuple(demos),
        k=len(demos),
        query_id=query_id,
        warnings=tuple(warnings),
    )


def order_demos(demos: Sequence[Demonstration], order: DemoOrder | str) -> list[Demonstration]:
    """Stable sort by FMS. Ascending puts the most similar demonstration next to the query."""
    order = DemoOrder(order)
    with_fms = [demo.fms is not None for demo in demos]
    if not any(with_fms):
        logger.debug("No FMS on %d demonstrations; order left unchanged", len(demos))
        return list(demos)
    if not all(with_fms):
        raise TemplateError("cannot order demonstrations with mixed presence of fms")
    return sorted(demos, key=lambda demo: demo.fms, reverse=order == DemoOrder.DESCENDING)
