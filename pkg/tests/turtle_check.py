"""A small, strict Turtle parser used as an independent export check.

Covers the subset the exporter may legally emit: full IRIs, the `a`
keyword, quoted string literals with standard escapes, one statement per
`.` terminator, and `#` comments. Anything else is a syntax error. This is
a recognizer built from the grammar, sharing no code with the writer.
"""

from __future__ import annotations

import re

_IRIREF = re.compile(r'<([^\x00-\x20<>"{}|^`\\]*)>')
_STRING = re.compile(r'"((?:[^"\\\r\n]|\\.)*)"')
_ESCAPES = {"\\": "\\", '"': '"', "n": "\n", "r": "\r", "t": "\t", "b": "\b", "f": "\f", "'": "'"}

A_PREDICATE = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type"


class TurtleSyntaxError(ValueError):
    pass


def _unescape(raw: str) -> str:
    out = []
    i = 0
    while i < len(raw):
        ch = raw[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        if i + 1 >= len(raw):
            raise TurtleSyntaxError("dangling escape in literal")
        nxt = raw[i + 1]
        if nxt in _ESCAPES:
            out.append(_ESCAPES[nxt])
            i += 2
        elif nxt == "u":
            if i + 6 > len(raw):
                raise TurtleSyntaxError("truncated \\u escape")
            out.append(chr(int(raw[i + 2 : i + 6], 16)))
            i += 6
        elif nxt == "U":
            if i + 10 > len(raw):
                raise TurtleSyntaxError("truncated \\U escape")
            out.append(chr(int(raw[i + 2 : i + 10], 16)))
            i += 10
        else:
            raise TurtleSyntaxError(f"unknown escape \\{nxt}")
    return "".join(out)


def _tokenize(text: str):
    tokens = []
    pos = 0
    end = len(text)
    while pos < end:
        ch = text[pos]
        if ch in " \t\r\n":
            pos += 1
            continue
        if ch == "#":
            newline = text.find("\n", pos)
            pos = end if newline == -1 else newline + 1
            continue
        if ch == "<":
            m = _IRIREF.match(text, pos)
            if not m:
                raise TurtleSyntaxError(f"bad IRI at offset {pos}")
            tokens.append(("iri", m.group(1)))
            pos = m.end()
            continue
        if ch == '"':
            m = _STRING.match(text, pos)
            if not m:
                raise TurtleSyntaxError(f"bad string literal at offset {pos}")
            tokens.append(("lit", _unescape(m.group(1))))
            pos = m.end()
            continue
        if ch == ".":
            tokens.append(("dot", "."))
            pos += 1
            continue
        if ch == "a" and (pos + 1 == end or text[pos + 1] in ' \t\r\n<"'):
            tokens.append(("a", "a"))
            pos += 1
            continue
        raise TurtleSyntaxError(f"unexpected character {ch!r} at offset {pos}")
    return tokens


def parse_turtle(text: str):
    """Parse to a list of (subject_iri, predicate_iri, (kind, value)) triples.

    kind is "iri" or "lit". The `a` keyword resolves to the rdf:type IRI.
    Raises TurtleSyntaxError on anything outside the subset grammar.
    """
    tokens = _tokenize(text)
    if len(tokens) % 4 != 0:
        raise TurtleSyntaxError("token stream is not whole statements")
    triples = []
    for i in range(0, len(tokens), 4):
        s_kind, s_val = tokens[i]
        p_kind, p_val = tokens[i + 1]
        o_kind, o_val = tokens[i + 2]
        d_kind, _ = tokens[i + 3]
        if d_kind != "dot":
            raise TurtleSyntaxError("statement not terminated by '.'")
        if s_kind != "iri":
            raise TurtleSyntaxError("subject must be an IRI")
        if p_kind == "a":
            predicate = A_PREDICATE
        elif p_kind == "iri":
            predicate = p_val
        else:
            raise TurtleSyntaxError("predicate must be an IRI or 'a'")
        if o_kind not in ("iri", "lit"):
            raise TurtleSyntaxError("object must be an IRI or a literal")
        triples.append((s_val, predicate, (o_kind, o_val)))
    return triples
