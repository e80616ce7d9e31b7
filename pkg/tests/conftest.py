"""Prints a one-line verdict per acceptance criterion after the run."""

CRITERIA = {
    "test_memory_constancy": "memory constancy: map state byte-identical at 1/10/100/300 steps, history baseline linear",
    "test_mapping_fidelity": "mapping fidelity: obstacle IoU >= 0.9 vs surface rasterization on 3 worlds, obstacles within explored",
    "test_region_extraction_oracle": "region extraction: exact match with flood-fill oracle on 200 random masks, tau-monotone",
    "test_annotation_determinism": "annotation: golden PNG byte-identical, no visible label overlap on 100 random layouts",
    "test_action_parser": "parser: full phrase corpus + 50 variants, 0 false positives on 50 distractors, earliest match wins",
    "test_expert_navigation_soundness": "expert policy: SR 1.0, zero collisions, mean SPL >= 0.9 over 50 episodes, utterances parse",
    "test_metrics_fixtures": "metrics: 3 hand-computed trajectories within 1e-6, identity gives ndtw=spl=1, os/sr split",
    "test_dataset_phases": "dataset: all 3 phases validate, relabels match expert re-query, recoveries start with a rotation",
    "test_vlm_replay": "model replay: byte-identical artifact from scripted responses, covers retry and bad-reply recovery",
}

_results = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" in report.nodeid and name in CRITERIA:
        _results[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, description in CRITERIA.items():
        outcome = _results.get(name)
        if outcome is None:
            continue
        verdict = "PASS" if outcome == "passed" else "FAIL"
        tr.write_line(f"[{verdict}] {description}")
