"""Structural parser and printer for Lean 4 theorem scripts.

Parsing is line and indentation based. It segments a tactic proof into lines,
top-level steps and `have` blocks; it never elaborates anything. Lean itself
(through the REPL oracle) is the authority on what the text means.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import MalformedHeader, NotFound, TermModeProof

ANONYMOUS = "_"

OPENERS = {"(": ")", "[": "]", "{": "}", "⦃": "⦄", "⟨": "⟩"}
CLOSERS = set(OPENERS.values())

DECLARATION_RE = re.compile(
    r"^(?P<prefix>(?:@\[[^\]]*\]\s*)?(?:(?:private|protected|noncomputable|nonrec)\s+)*)"
    r"(?P<keyword>theorem|lemma)\s+(?P<name>[^\s:({\[⦃]+)",
    re.MULTILINE,
)
HAVE_RE = re.compile(r"^have\b")
BLOCK_OPEN_RE = re.compile(r"(?:\bby|=>|\bdo|[(\[{⟨])$")
BLOCK_CLOSE_RE = re.compile(r"^[)\]}⟩\s]+$")
IDENT_RE = re.compile(r"^[^\s()\[\]{}⦃⦄⟨⟩:,]+$")


class BinderKind(str, Enum):
    EXPLICIT = "explicit"
    IMPLICIT = "implicit"
    INSTANCE = "instance"


class LineKind(str, Enum):
    HAVE_INTRO = "have_intro"
    PLAIN = "plain"
    BLOCK_OPEN = "block_open"
    BLOCK_CLOSE = "block_close"
    COMMENT_OR_BLANK = "comment_or_blank"


@dataclass(frozen=True)
class Binder:
    """One named hypothesis or variable of a theorem header."""
    name: str
    type_text: str
    kind: BinderKind = BinderKind.EXPLICIT

    def render(self) -> str:
        if self.kind is BinderKind.INSTANCE:
            if self.name == ANONYMOUS:
                return f"[{self.type_text}]"
            return f"[{self.name} : {self.type_text}]"
        if self.kind is BinderKind.IMPLICIT:
            return f"{{{self.name} : {self.type_text}}}"
        return f"({self.name} : {self.type_text})"


@dataclass(frozen=True)
class TacticLine:
    """One physical line of a tactic body."""
    index: int
    text: str
    indent: int
    kind: LineKind
    introduced: tuple[str, str] | None = None

    @property
    def counted(self) -> bool:
        return self.kind is not LineKind.COMMENT_OR_BLANK


@dataclass(frozen=True)
class TheoremScript:
    """A parsed `theorem ... := by` declaration."""
    name: str
    binders: tuple[Binder, ...]
    goal_text: str
    body: tuple[TacticLine, ...]
    source_path: Path | None = None
    preamble: str = ""
    keyword: str = "theorem"
    # Verbatim source pieces, kept so that printing reproduces the input.
    header_text: str | None = None
    by_text: str = " := by"
    inline_gap: str | None = None
    trailer: str = ""

    @property
    def header(self) -> str:
        if self.header_text is not None:
            return self.header_text
        return render_header(self.name, self.binders, self.goal_text, self.keyword)

    @property
    def n(self) -> int:
        return proof_length(self.body)

    @property
    def k(self) -> int:
        return len(have_blocks(self))


@dataclass(frozen=True)
class TacticStep:
    """A top-level tactic line together with its deeper-indented continuation."""
    start: int
    end: int
    lines: tuple[TacticLine, ...]


@dataclass(frozen=True)
class HaveBlock:
    """A top-level intermediate hypothesis and its sub-proof."""
    start: int
    end: int
    name: str
    type_text: str
    head: TacticLine
    inline_proof: str | None
    sub_lines: tuple[TacticLine, ...]

    def proof_lines(self) -> list[str]:
        """The hypothesis' own proof as a standalone tactic body (indent 0)."""
        lines: list[str] = []
        inline = (self.inline_proof or "").strip()
        if inline == "by":
            inline = ""
        elif inline.startswith("by "):
            inline = inline[3:].strip()
        elif inline:
            inline = f"exact {inline}"
        if inline:
            lines.append(inline)
        lines.extend(reindent(self.sub_lines, 0))
        return lines


# --- bracket-aware scanning ---


def _scan_top_level(text: str, start: int = 0) -> Iterable[tuple[int, str]]:
    """Yield (position, char) pairs of characters at bracket depth 0."""
    depth = 0
    for pos in range(start, len(text)):
        char = text[pos]
        if char in OPENERS:
            if depth == 0:
                yield pos, char
            depth += 1
        elif char in CLOSERS:
            depth = max(0, depth - 1)
            if depth == 0:
                yield pos, char
        elif depth == 0:
            yield pos, char


def find_top_level(text: str, token: str, start: int = 0) -> int:
    """Position of the first depth-0 occurrence of `:` or `:=`, or -1.

    `:` never matches the colon of a `:=`.
    """
    for pos, char in _scan_top_level(text, start):
        if char != ":":
            continue
        is_assign = text.startswith(":=", pos)
        if token == ":=" and is_assign:
            return pos
        if token == ":" and not is_assign:
            return pos
    return -1


def _matching_close(text: str, open_pos: int) -> int:
    depth = 0
    for pos in range(open_pos, len(text)):
        char = text[pos]
        if char in OPENERS:
            depth += 1
        elif char in CLOSERS:
            depth -= 1
            if depth == 0:
                return pos
    return -1


# --- headers ---


def parse_binders(text: str) -> tuple[Binder, ...]:
    """Segment a binder list such as `(x y : ℕ) {α : Type} [Group α]`."""
    binders: list[Binder] = []
    pos = 0
    while pos < len(text):
        char = text[pos]
        if char.isspace():
            pos += 1
            continue
        if char not in ("(", "{", "[", "⦃"):
            raise MalformedHeader(f"unexpected text in binders: {text[pos:pos + 20]!r}")
        close = _matching_close(text, pos)
        if close < 0:
            raise MalformedHeader(f"unbalanced binder starting at {text[pos:pos + 20]!r}")

        inner = text[pos + 1:close]
        if char == "{" and inner.startswith("{") and inner.endswith("}"):
            inner = inner[1:-1]
        kind = {
            "(": BinderKind.EXPLICIT,
            "{": BinderKind.IMPLICIT,
            "⦃": BinderKind.IMPLICIT,
            "[": BinderKind.INSTANCE,
        }[char]
        binders.extend(_binder_group(inner, kind))
        pos = close + 1

    names = [b.name for b in binders if b.name != ANONYMOUS]
    if len(names) != len(set(names)):
        raise MalformedHeader(f"duplicate binder names in {text!r}")
    return tuple(binders)


def _binder_group(inner: str, kind: BinderKind) -> list[Binder]:
    colon = find_top_level(inner, ":")
    if colon < 0:
        if kind is BinderKind.INSTANCE and inner.strip():
            return [Binder(ANONYMOUS, inner.strip(), kind)]
        raise MalformedHeader(f"binder without type: {inner!r}")

    type_text = inner[colon + 1:].strip()
    names = inner[:colon].split()
    if not type_text or not names:
        raise MalformedHeader(f"incomplete binder: {inner!r}")
    for name in names:
        if not IDENT_RE.match(name):
            raise MalformedHeader(f"bad binder name {name!r}")
    return [Binder(name, type_text, kind) for name in names]


def split_signature(signature: str) -> tuple[tuple[Binder, ...], str]:
    """Split the text after a declaration name into binders and goal."""
    colon = find_top_level(signature, ":")
    if colon < 0:
        raise MalformedHeader("no `:` separating binders from the goal")
    goal_text = signature[colon + 1:].strip()
    if not goal_text:
        raise MalformedHeader("empty goal")
    return parse_binders(signature[:colon]), goal_text


def parse_header(header: str) -> tuple[str, str, tuple[Binder, ...], str]:
    """Parse `theorem name binders : goal` into (keyword, name, binders, goal)."""
    match = DECLARATION_RE.match(header.strip())
    if match is None:
        raise MalformedHeader(f"not a theorem header: {header[:40]!r}")
    signature = header.strip()[match.end():]
    assign = find_top_level(signature, ":=")
    if assign >= 0:
        signature = signature[:assign]
    binders, goal = split_signature(signature)
    return match.group("keyword"), match.group("name"), binders, goal


def render_header(
    name: str,
    binders: Sequence[Binder],
    goal_text: str,
    keyword: str = "theorem",
) -> str:
    """Render a theorem header from its parts."""
    parts = [keyword, name, *(b.render() for b in binders), ":", goal_text]
    return " ".join(parts)


# --- lines ---


def classify_line(text: str, in_block_comment: bool = False) -> tuple[LineKind, tuple[str, str] | None, bool]:
    """Classify one body line.

    Returns (kind, introduced hypothesis, whether a block comment is still open).
    """
    stripped = text.strip()
    if in_block_comment:
        return LineKind.COMMENT_OR_BLANK, None, "-/" not in stripped
    if not stripped or stripped.startswith("--"):
        return LineKind.COMMENT_OR_BLANK, None, False
    if stripped.startswith("/-"):
        return LineKind.COMMENT_OR_BLANK, None, "-/" not in stripped[2:]

    if HAVE_RE.match(stripped):
        introduced = _have_intro(stripped)
        if introduced is not None:
            return LineKind.HAVE_INTRO, introduced, False
    if BLOCK_CLOSE_RE.match(stripped):
        return LineKind.BLOCK_CLOSE, None, False
    if stripped in ("·", ".") or BLOCK_OPEN_RE.search(stripped):
        return LineKind.BLOCK_OPEN, None, False
    return LineKind.PLAIN, None, False


def _have_intro(stripped: str) -> tuple[str, str] | None:
    rest = stripped[len("have"):]
    colon = find_top_level(rest, ":")
    if colon < 0:
        return None
    assign = find_top_level(rest, ":=")
    if 0 <= assign < colon:
        return None

    lhs = rest[:colon].split()
    name = lhs[0] if lhs and IDENT_RE.match(lhs[0]) else "this"
    type_end = assign if assign >= 0 else len(rest)
    return name, rest[colon + 1:type_end].strip()


def parse_body(lines: Sequence[str]) -> tuple[TacticLine, ...]:
    """Classify raw lines into TacticLines with contiguous indices."""
    body: list[TacticLine] = []
    in_comment = False
    for index, text in enumerate(lines):
        kind, introduced, in_comment = classify_line(text, in_comment)
        indent = len(text) - len(text.lstrip())
        body.append(TacticLine(index, text.rstrip(), indent, kind, introduced))
    return tuple(body)


def parse_proof_text(proof_text: str) -> tuple[TacticLine, ...]:
    """Parse a standalone tactic body (as stored on lemmas and attempts)."""
    lines = proof_text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    return parse_body(lines)


def proof_length(body: Sequence[TacticLine]) -> int:
    """Number of non-comment, non-blank lines of a body."""
    return sum(1 for line in body if line.counted)


def text_proof_length(proof_text: str) -> int:
    return proof_length(parse_proof_text(proof_text))


def top_indent(body: Sequence[TacticLine]) -> int:
    indents = [line.indent for line in body if line.counted]
    return min(indents) if indents else 0


def block_end(body: Sequence[TacticLine], i: int) -> int:
    """Exclusive end of the block headed by body[i].

    The block is the maximal following run of strictly deeper lines; comment
    lines inside the run belong to it, trailing ones do not.
    """
    last = i
    head_indent = body[i].indent
    for j in range(i + 1, len(body)):
        line = body[j]
        if not line.counted:
            continue
        if line.indent <= head_indent:
            break
        last = j
    return last + 1


def reindent(lines: Sequence[TacticLine], indent: int) -> list[str]:
    """Shift lines so that their shallowest counted line sits at `indent`."""
    base = top_indent(lines)
    out: list[str] = []
    for line in lines:
        if not line.text.strip():
            out.append("")
        elif line.indent < base:
            out.append(" " * indent + line.text.strip())
        else:
            out.append(" " * indent + line.text[base:])
    return out


def steps(script: TheoremScript) -> list[TacticStep]:
    """Group the body into top-level steps."""
    body = script.body
    result: list[TacticStep] = []
    i = 0
    while i < len(body):
        if not body[i].counted:
            i += 1
            continue
        end = block_end(body, i)
        result.append(TacticStep(i, end, body[i:end]))
        i = end
    return result


def have_blocks(script: TheoremScript) -> list[HaveBlock]:
    """Top-level intermediate hypotheses in body order."""
    body = script.body
    level = top_indent(body)
    blocks: list[HaveBlock] = []
    for line in body:
        if line.kind is not LineKind.HAVE_INTRO or line.indent != level:
            continue
        assert line.introduced is not None
        end = block_end(body, line.index)
        stripped = line.text.strip()
        assign = find_top_level(stripped, ":=")
        inline = stripped[assign + 2:].strip() if assign >= 0 else None
        name, type_text = line.introduced
        blocks.append(HaveBlock(
            start=line.index,
            end=end,
            name=name,
            type_text=type_text,
            head=line,
            inline_proof=inline,
            sub_lines=body[line.index + 1:end],
        ))
    return blocks


# --- declarations ---


def find_declarations(source_text: str) -> list[str]:
    """Names of `theorem`/`lemma` declarations in order of appearance."""
    return [m.group("name") for m in DECLARATION_RE.finditer(source_text)]


def locate_declaration(source_text: str, theorem_name: str) -> tuple[re.Match[str], int]:
    """Declaration match and position of its top-level `:=`."""
    matches = [m for m in DECLARATION_RE.finditer(source_text) if m.group("name") == theorem_name]
    if not matches:
        raise NotFound(f"no theorem or lemma named {theorem_name!r}")
    if len(matches) > 1:
        raise MalformedHeader(f"{theorem_name!r} is declared {len(matches)} times")
    match = matches[0]
    assign = find_top_level(source_text, ":=", match.end())
    if assign < 0:
        raise MalformedHeader(f"{theorem_name}: no `:=` after the header")
    return match, assign


def parse_theorem(
    source_text: str,
    theorem_name: str,
    source_path: Path | None = None,
) -> TheoremScript:
    """Parse the tactic-mode declaration `theorem_name` out of a Lean file.

    Raises:
        NotFound: no such declaration.
        TermModeProof: the proof is not a `by` block.
        MalformedHeader: the header could not be segmented.
    """
    match, assign = locate_declaration(source_text, theorem_name)
    preamble = source_text[:match.start()]

    header_text = source_text[match.start():assign].rstrip()
    binders, goal_text = split_signature(source_text[match.end():assign])

    after = assign + 2
    rest = source_text[after:]
    by_match = re.match(r"\s*by\b", rest)
    if by_match is None:
        raise TermModeProof(theorem_name, declaration_text(rest))

    by_end = after + by_match.end()
    by_text = source_text[len(header_text) + match.start():by_end]
    line_end = source_text.find("\n", by_end)
    if line_end < 0:
        line_end = len(source_text)
    inline = source_text[by_end:line_end]

    raw_lines, trailer = _split_body(source_text[line_end + 1:] if line_end < len(source_text) else "")
    inline_gap: str | None = None
    if inline.strip() and not inline.strip().startswith("--"):
        inline_gap = inline[:len(inline) - len(inline.lstrip())]
        indent = min((len(t) - len(t.lstrip()) for t in raw_lines if t.strip()), default=2)
        raw_lines.insert(0, " " * indent + inline.strip())
    elif inline.strip():
        # A trailing comment after `by` is kept verbatim in the by-text.
        by_text += inline

    body = parse_body(raw_lines)

    return TheoremScript(
        name=theorem_name,
        binders=binders,
        goal_text=goal_text,
        body=body,
        source_path=source_path,
        preamble=preamble,
        keyword=match.group("keyword"),
        header_text=header_text,
        by_text=by_text,
        inline_gap=inline_gap,
        trailer=trailer,
    )


def _split_body(text: str) -> tuple[list[str], str]:
    """Split the text after the `by` line into body lines and the trailer."""
    lines = text.split("\n")
    end = len(lines)
    for i, line in enumerate(lines):
        if line.strip() and not line[0].isspace():
            end = i
            break
    body = lines[:end]
    while body and not body[-1].strip():
        body.pop()
    trailer_lines = lines[len(body):]
    trailer = "\n" + "\n".join(trailer_lines) if trailer_lines else ""
    return body, trailer


def declaration_text(rest: str) -> str:
    """The text after `:=` up to the next column-0 line."""
    lines = rest.split("\n")
    out = [lines[0]]
    for line in lines[1:]:
        if line.strip() and not line[0].isspace():
            break
        out.append(line)
    return "\n".join(out).strip()


def print_theorem(script: TheoremScript) -> str:
    """Emit Lean source for a script."""
    body = list(script.body)
    text = script.preamble + script.header + script.by_text
    if script.inline_gap is not None and body:
        text += script.inline_gap + body[0].text.strip()
        body = body[1:]
    if body:
        text += "\n" + "\n".join(line.text for line in body)
    return text + script.trailer


def render_declaration(
    header: str,
    proof_lines: Sequence[str],
    preamble: str = "",
    indent: int = 2,
) -> str:
    """Render `header := by` followed by an indented body.

    An empty body renders as `sorry`, so the result always parses and an
    empty proof can never verify as proved.
    """
    lines = [line for line in proof_lines]
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        lines = ["sorry"]
    pad = " " * indent
    body = "\n".join(pad + line if line.strip() else "" for line in lines)
    return f"{preamble}{header} := by\n{body}\n"


def term_as_tactic(term: str) -> list[str]:
    """A term-mode proof as an `exact` tactic body."""
    first, *rest = term.strip().split("\n")
    return [f"exact {first}", *("  " + line.strip() for line in rest if line.strip())]
