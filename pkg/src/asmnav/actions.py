"""Free-form navigation text -> discrete action.

A model may answer "Okay, I think you should move forward now"; the
controller needs one of four actions.  Matching is case-insensitive and
word-boundary anchored.  A multi-word pattern matches a window of
consecutive words that starts and ends with pattern tokens, contains all
of them in any order, and has at most two extra filler words, so both
"move forward" and "move slowly forward" hit the same pattern.

When several patterns match, the one starting at the earliest character
offset wins; exact offset ties fall back to the fixed priority
STOP > FORWARD > TURN_LEFT > TURN_RIGHT.  Text with no match raises
NoMatchError rather than guessing.
"""

from __future__ import annotations

import enum
import json
import re
from collections import Counter

from .errors import ConfigError, NoMatchError

_WORD = re.compile(r"[a-z]+")
_VALID_PATTERN = re.compile(r"^[a-z]+( [a-z]+)*$")
_MAX_FILLERS = 2


class Action(enum.Enum):
    FORWARD = "FORWARD"
    TURN_LEFT = "TURN_LEFT"
    TURN_RIGHT = "TURN_RIGHT"
    STOP = "STOP"


# Tie-break order for same-offset matches.
_PRIORITY = {Action.STOP: 0, Action.FORWARD: 1,
             Action.TURN_LEFT: 2, Action.TURN_RIGHT: 3}


class PatternRuleset:
    """Immutable action -> phrase patterns table."""

    def __init__(self, patterns: dict):
        cleaned = {}
        seen = {}
        for action in Action:
            raw = patterns.get(action, ())
            plist = []
            for p in raw:
                norm = " ".join(str(p).lower().split())
                if not _VALID_PATTERN.match(norm):
                    raise ConfigError(f"bad pattern {p!r}: letters and spaces only")
                if norm in seen and seen[norm] is not action:
                    raise ConfigError(
                        f"pattern {norm!r} listed under both "
                        f"{seen[norm].value} and {action.value}")
                seen[norm] = action
                plist.append(norm)
            if len(plist) < 2:
                raise ConfigError(
                    f"{action.value} needs at least 2 patterns, got {len(plist)}")
            cleaned[action] = tuple(plist)
        self._patterns = cleaned

    def patterns_for(self, action: Action) -> tuple:
        return self._patterns[action]

    def __eq__(self, other):
        return (isinstance(other, PatternRuleset)
                and self._patterns == other._patterns)

    def to_json(self) -> str:
        return json.dumps({a.value: list(self._patterns[a]) for a in Action},
                          indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PatternRuleset":
        try:
            doc = json.loads(text)
        except ValueError as e:
            raise ConfigError(f"rules file is not valid JSON: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError("rules file must be a JSON object")
        by_action = {}
        for key, plist in doc.items():
            try:
                action = Action(key)
            except ValueError:
                raise ConfigError(f"unknown action {key!r} in rules file") from None
            if not isinstance(plist, list):
                raise ConfigError(f"{key}: patterns must be a JSON list")
            by_action[action] = plist
        return cls(by_action)


_DEFAULT_PATTERNS = {
    Action.FORWARD: (
        "move forward", "proceed", "go forward", "go straight", "move ahead",
        "advance", "step forward", "walk forward", "keep going",
        "continue forward", "head forward",
    ),
    Action.TURN_LEFT: (
        "turn left", "rotate left", "veer left", "go left", "pivot left",
        "head left", "spin left",
    ),
    Action.TURN_RIGHT: (
        "turn right", "rotate right", "veer right", "go right", "pivot right",
        "head right", "spin right",
    ),
    Action.STOP: (
        "stop", "halt", "wait", "stay", "stand still", "stop moving",
        "stay put", "remain here",
    ),
}

_default = None


def default_ruleset() -> PatternRuleset:
    global _default
    if _default is None:
        _default = PatternRuleset(_DEFAULT_PATTERNS)
    return _default


def _earliest_match(words, offsets, tokens) -> int:
    """Earliest character offset where the token multiset matches, or -1."""
    need = Counter(tokens)
    k = len(tokens)
    token_set = set(tokens)
    for i in range(len(words)):
        if words[i] not in token_set:
            continue
        for size in range(k, k + _MAX_FILLERS + 1):
            if i + size > len(words):
                break
            window = words[i: i + size]
            if window[-1] not in token_set:
                continue
            have = Counter(window)
            if all(have[t] >= n for t, n in need.items()):
                return offsets[i]
    return -1


def parse_action(text: str, rules: PatternRuleset = None) -> Action:
    """Map model text to the action stated earliest in it."""
    if rules is None:
        rules = default_ruleset()
    lowered = text.lower()
    words, offsets = [], []
    for m in _WORD.finditer(lowered):
        words.append(m.group(0))
        offsets.append(m.start())

    best = None
    for action in Action:
        for pattern in rules.patterns_for(action):
            off = _earliest_match(words, offsets, pattern.split())
            if off >= 0:
                key = (off, _PRIORITY[action])
                if best is None or key < best[0]:
                    best = (key, action)
    if best is None:
        raise NoMatchError(text)
    return best[1]
