import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (passed, one-line detail); filled by test_acceptance.py
ACCEPTANCE = {}
CRITERIA = {
    1: "protocol oracle grid",
    2: "AUC correctness",
    3: "split finder oracle + loss trace",
    4: "qualitative table ordering",
    5: "Bayes oracle bound",
    6: "covid drift",
    7: "subgroup TPR ordering",
    8: "C-NLP corpus F1",
    9: "bootstrap coverage + Pearson p-value",
    10: "end-to-end determinism",
}


def record(criterion: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    status = "PASS" if passed else "FAIL"
    print(f"[acceptance {criterion:2d}] {status}  {CRITERIA[criterion]}: {detail}")
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        if n in ACCEPTANCE:
            passed, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n:2d} {'PASS' if passed else 'FAIL'}  {name}: {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d} NOT RUN  {name}")
