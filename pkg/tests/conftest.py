import time

import pytest

CRITERIA = {
    1: "metric oracle equivalence",
    2: "dice loss gradient check",
    3: "partition invariants",
    4: "sampling protocol",
    5: "multi-expert / fine-tune loss consistency",
    6: "learning-rate schedule",
    7: "tiny overfit",
    8: "pretraining helps few-shot adaptation",
    9: "single-expert training matrix",
    10: "more pretraining experts help",
    11: "statistics",
    12: "reproducibility",
}

_outcomes: dict[int, list[str]] = {}
_notes: dict[int, list[str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    numbers = [m.args[0] for m in item.iter_markers("criterion")]
    if not numbers:
        return
    if rep.when == "call" or rep.outcome != "passed":
        state = "xfailed" if hasattr(rep, "wasxfail") else rep.outcome
        for n in numbers:
            _outcomes.setdefault(n, []).append(state)


@pytest.fixture
def note():
    """Attach a one-line measurement to a criterion's summary line."""
    def add(criterion: int, text: str) -> None:
        _notes.setdefault(criterion, []).append(text)
    return add


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        states = _outcomes.get(n, [])
        if not states:
            verdict = "NOT RUN"
        elif all(s == "passed" for s in states):
            verdict = "PASS"
        elif any(s == "failed" for s in states):
            verdict = "FAIL"
        else:
            verdict = "INCOMPLETE"
        detail = "; ".join(_notes.get(n, []))
        line = f"criterion {n:2d} {verdict:<10} {title} ({len(states)} tests)"
        tr.write_line(line + (f" -- {detail}" if detail else ""))


# ------------------------------------------------------------ shared runs


class _Overfit:
    """Memoised tiny-overfit runs, keyed by optimiser and seed."""

    def __init__(self):
        self.runs = {}

    def __call__(self, optimizer: str = "radam", seed: int = 0, tag: str = ""):
        key = (optimizer, seed, tag)
        if key not in self.runs:
            from expertadapt.data import restrict
            from expertadapt.model import ModelConfig, build_model
            from expertadapt.synth import SynthConfig, generate_dataset
            from expertadapt.training import TrainConfig, evaluate_model, train

            ds = generate_dataset(SynthConfig(n_cases=2, n_test=0))
            ds = restrict(ds, (1,), ds.case_indices)
            cfg = TrainConfig(batch_size=4, train_steps=500, crop_size=(64, 64), optimizer=optimizer, seed=seed)
            start = time.perf_counter()
            ckpt = train(build_model(ModelConfig.desk(experts=(1,)), seed), ds, (1,), cfg)
            seconds = time.perf_counter() - start
            self.runs[key] = (ckpt, evaluate_model(ckpt, ds, 1, 1).mean.dice, seconds)
        return self.runs[key]


@pytest.fixture(scope="session")
def overfit():
    return _Overfit()
