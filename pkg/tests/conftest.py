import subprocess
import sys

import pytest

CLI = [sys.executable, "-m", "hiercase.cli"]

DEMO_LINES = [
    "The cat sat on the mat",
    "We love the iPhone",
    "The iPhone rocks",
    "NASA launched a rocket on Monday",
    "Plain words only here",
    "She met Dr Smith in Paris",
    "The API returns JSON",
    "He bought an iPhone in May",
    "Rain fell on Paris all night",
    "The rocket landed near Houston",
    "Alice told Bob about the iPhone",
    "Numbers like 42 stay plain",
    "The dog barked at the mailman",
    "Engineers at NASA wrote the report",
    "Monday was quiet in Houston",
    "Bob sold the car to Alice",
    "The mailman knows Dr Smith",
    "May brings rain to Paris",
    "The report cites the API",
    "Cats and dogs share the mat",
]


def run_cli(*args, stdin_bytes=None, check=None):
    proc = subprocess.run(
        CLI + [str(a) for a in args],
        input=stdin_bytes,
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        timeout=600,
    )
    if check is not None:
        assert proc.returncode == check, proc.stderr.decode("utf-8", "replace")
    return proc


@pytest.fixture(scope="session")
def demo_corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "demo.txt"
    path.write_text("\n".join(DEMO_LINES) + "\n", encoding="utf-8")
    return str(path)


@pytest.fixture(scope="session")
def trained_model(tmp_path_factory, demo_corpus):
    """A small student checkpoint shared by the CLI tests."""
    out = tmp_path_factory.mktemp("model") / "student.hcm"
    run_cli("train", "--corpus", demo_corpus, "--out", out,
            "--epochs", 8, "--batch-size", 10, "--seed", 11,
            "--validation-fraction", 0.2, "--patience", 8,
            "--learning-rate", "3e-3", "--eval-sentences", 4,
            "--target-accuracy", 1.0, check=0)
    return str(out)
