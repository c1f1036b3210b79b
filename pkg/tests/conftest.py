"""Prints one verdict line per acceptance criterion after the run."""

_ACCEPTANCE = {
    "test_gradient_correctness": "1. gradient correctness (finite-difference oracle)",
    "test_memory_key_invariant": "2. memory key norms and untouched-key bits",
    "test_kernel_identities": "3. similarity kernel identities",
    "test_retrieval_metric_oracle": "4. retrieval metrics vs naive oracle",
    "test_ablation_trend": "5. objective-term trend on the synthetic benchmark",
    "test_binary_mode_sanity": "6. binary retrieval within 0.8x of real",
    "test_training_determinism": "7. identical checkpoints and metric logs",
    "test_serialization_round_trips": "8. bit-exact serialization round trips",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" not in nodeid:
                continue
            if status == "passed" and getattr(rep, "when", "call") != "call":
                continue
            name = nodeid.split("::")[-1].split("[")[0]
            if name not in _ACCEPTANCE:
                continue
            ok = status == "passed"
            outcomes[name] = outcomes.get(name, True) and ok
    if not outcomes:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, label in _ACCEPTANCE.items():
        if name in outcomes:
            verdict = "PASS" if outcomes[name] else "FAIL"
        else:
            verdict = "NOT RUN"
        terminalreporter.write_line(f"{verdict:<8} {label}")
