import pytest

from fedsynth.codes import decompose_code, recompose_code
from fedsynth.errors import MalformedCode


@pytest.mark.parametrize(
    "code,parts",
    [
        ("E11.65", ["E11", "65"]),
        ("I11.65", ["I11", "65"]),
        ("BP", ["BP"]),
    ],
)
def test_decompose(code, parts):
    assert decompose_code(code) == parts


def test_round_trip():
    for code in ["E11.65", "BP", "A00.1.2"]:
        assert recompose_code(decompose_code(code)) == code


@pytest.mark.parametrize("bad", ["", ".", "E11.", ".65", "A..B"])
def test_malformed(bad):
    with pytest.raises(MalformedCode):
        decompose_code(bad)
