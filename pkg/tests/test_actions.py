import random

import pytest

from asmnav.actions import Action, PatternRuleset, default_ruleset, parse_action
from asmnav.errors import ConfigError, NoMatchError

# Phrases the parser must understand verbatim, with their actions.
CORE_PHRASES = [
    ("move forward", Action.FORWARD),
    ("proceed", Action.FORWARD),
    ("turn left", Action.TURN_LEFT),
    ("rotate left", Action.TURN_LEFT),
    ("turn right", Action.TURN_RIGHT),
    ("rotate right", Action.TURN_RIGHT),
    ("stop", Action.STOP),
    ("halt", Action.STOP),
    ("wait", Action.STOP),
]

PREFIXES = [
    "", "Okay, ", "I think you should ", "The best next action is to ",
    "Based on the map you must ", "Sure: ", "Answer: please ",
]
SUFFIXES = [
    "", ".", "!", " now", " towards the chair", " along the corridor",
    " and look around",
]

DISTRACTORS = [
    "the cat sat", "a red chair near the window", "I see a corridor ahead",
    "the map shows a bed", "nothing to report", "unsure what to do",
    "the door is on the side", "there is a plant behind you",
    "robot ready", "awaiting instructions from the operator",
    "the hallway continues beyond the lamp", "two tables and a sofa",
    "describe the scene", "what a nice kitchen", "the image is dark",
    "navigation system online", "target not yet visible", "no obstacles seen",
    "the goal is far away", "sensors nominal",
]


def test_core_phrases():
    for phrase, action in CORE_PHRASES:
        assert parse_action(phrase) == action, phrase


def test_case_invariance():
    for phrase, action in CORE_PHRASES:
        assert parse_action(phrase.upper()) == action
        assert parse_action(phrase.title()) == action


def test_punctuation_and_wrapping():
    assert parse_action("Rotate LEFT.") == Action.TURN_LEFT
    assert parse_action('"Move forward!"') == Action.FORWARD
    assert parse_action("stop.") == Action.STOP


def test_prefix_robustness_sweep():
    # 9 core phrases x 7 prefixes x 7 suffixes = 441 variants.
    for phrase, action in CORE_PHRASES:
        for pre in PREFIXES:
            for suf in SUFFIXES:
                assert parse_action(pre + phrase + suf) == action


def test_filler_words_inside_pattern():
    assert parse_action("move slowly forward") == Action.FORWARD
    assert parse_action("turn slightly to left") == Action.TURN_LEFT
    assert parse_action("move very carefully forward") == Action.FORWARD


def test_word_rearrangement():
    assert parse_action("forward move") == Action.FORWARD
    assert parse_action("left turn") == Action.TURN_LEFT


def test_too_many_fillers_is_no_match():
    with pytest.raises(NoMatchError):
        parse_action("move very very carefully and slowly forward")


def test_distractors_raise_no_match():
    for text in DISTRACTORS:
        with pytest.raises(NoMatchError):
            parse_action(text)
    try:
        parse_action("the cat sat")
    except NoMatchError as e:
        assert e.text == "the cat sat"


def test_earliest_offset_wins():
    # Offsets counted by hand: "stop" begins at 7, "turn right" at 23.
    text = "I will stop here after I turn right"
    assert text.index("stop") == 7
    assert text.index("turn right") == 25
    assert parse_action(text) == Action.STOP


def test_earliest_offset_fixtures():
    fixtures = [
        ("turn left then stop", Action.TURN_LEFT),
        ("stop, then turn left", Action.STOP),
        ("move forward and then turn right at the door", Action.FORWARD),
        ("rotate right before you halt", Action.TURN_RIGHT),
        ("halt! do not move forward", Action.STOP),
        ("after the plant, turn right, then proceed", Action.TURN_RIGHT),
        ("proceed, or if blocked turn left", Action.FORWARD),
        ("you could turn left or turn right", Action.TURN_LEFT),
        ("wait here while I move forward", Action.STOP),
        ("go straight and then wait", Action.FORWARD),
    ]
    for text, action in fixtures:
        assert parse_action(text) == action, text


def test_same_offset_tie_uses_priority():
    rules = PatternRuleset({
        Action.FORWARD: ("go", "advance"),
        Action.TURN_LEFT: ("turn left", "rotate left"),
        Action.TURN_RIGHT: ("turn right", "rotate right"),
        Action.STOP: ("go now", "halt"),
    })
    # "go now" (STOP) and "go" (FORWARD) both match at offset 0.
    assert parse_action("go now", rules) == Action.STOP
    assert parse_action("go on", rules) == Action.FORWARD


def test_generated_variant_sweep():
    rng = random.Random(31)
    verbs = {
        Action.FORWARD: ["move forward", "go straight", "advance", "keep going"],
        Action.TURN_LEFT: ["turn left", "veer left", "rotate left"],
        Action.TURN_RIGHT: ["turn right", "veer right", "rotate right"],
        Action.STOP: ["stop", "halt", "stand still", "stay put"],
    }
    for _ in range(100):
        action = rng.choice(list(verbs))
        phrase = rng.choice(verbs[action])
        text = rng.choice(PREFIXES) + phrase + rng.choice(SUFFIXES)
        assert parse_action(text) == action, text


def test_default_ruleset_invariants():
    rules = default_ruleset()
    for action in Action:
        assert len(rules.patterns_for(action)) >= 2
    assert "halt" in rules.patterns_for(Action.STOP)
    assert "proceed" in rules.patterns_for(Action.FORWARD)


def test_json_roundtrip():
    rules = default_ruleset()
    assert PatternRuleset.from_json(rules.to_json()) == rules


def test_bad_rulesets_rejected():
    base = {
        Action.FORWARD: ("move forward", "proceed"),
        Action.TURN_LEFT: ("turn left", "rotate left"),
        Action.TURN_RIGHT: ("turn right", "rotate right"),
        Action.STOP: ("stop", "halt"),
    }
    dup = dict(base)
    dup[Action.STOP] = ("stop", "move forward")
    with pytest.raises(ConfigError):
        PatternRuleset(dup)
    short = dict(base)
    short[Action.STOP] = ("stop",)
    with pytest.raises(ConfigError):
        PatternRuleset(short)
    junk = dict(base)
    junk[Action.STOP] = ("stop", "st()p!")
    with pytest.raises(ConfigError):
        PatternRuleset(junk)
    with pytest.raises(ConfigError):
        PatternRuleset.from_json("not json")
    with pytest.raises(ConfigError):
        PatternRuleset.from_json('{"JUMP": ["leap", "hop"]}')


def test_empty_text_no_match():
    with pytest.raises(NoMatchError):
        parse_action("")
    with pytest.raises(NoMatchError):
        parse_action("   \n\t ")
