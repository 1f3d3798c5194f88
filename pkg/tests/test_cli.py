import json

import numpy as np
import pytest

from cpdilate.algebra import BlockAlgebra
from cpdilate.cli import EXIT_FAIL, EXIT_INPUT, EXIT_OK, run
from cpdilate.cli.jsonio import (MODELS, canonical, dumps, enc_cpmap, enc_cpmap_body, enc_flips, enc_row_contraction,
                                 enc_triple, header, loads)
from cpdilate.corr import Correspondence
from cpdilate.cpmap import compose, from_classical_matrix
from cpdilate.dilate import RowContraction
from cpdilate.gallery import SPARSE_MARKOV_MATRIX, bhat_triple, flip_example_data
from cpdilate.systems import FlipData, identity_flips


def markov_pair():
    cyc = np.roll(np.eye(3), 1, axis=0)
    t1 = from_classical_matrix(0.3 * np.eye(3) + 0.7 * cyc)
    t2 = from_classical_matrix(cyc @ cyc)
    return {**header("cpmap-pair"), "first": enc_cpmap_body(t1), "second": enc_cpmap_body(t2)}


def sparse_markov_pair():
    t = from_classical_matrix(SPARSE_MARKOV_MATRIX)
    return {**header("cpmap-pair"), "first": enc_cpmap_body(t), "second": enc_cpmap_body(compose(t, t))}


def row_doc():
    rng = np.random.default_rng(0)
    ops = [rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)) for _ in range(2)]
    s = sum(o.conj().T @ o for o in ops)
    ops = [o / np.sqrt(np.linalg.norm(s, 2) * 1.1) for o in ops]
    return enc_row_contraction(RowContraction(ops), 3)


def identity_flip_doc():
    c1 = BlockAlgebra([1])
    e = Correspondence(c1, c1, [[2]])
    return enc_flips(FlipData([e, e], identity_flips([e, e])))


INPUTS = {
    "gns": lambda: enc_cpmap(from_classical_matrix(SPARSE_MARKOV_MATRIX)),
    "kraus-min": lambda: enc_cpmap(from_classical_matrix(SPARSE_MARKOV_MATRIX)),
    "unitalize": lambda: enc_cpmap(from_classical_matrix([[0.5, 0.2], [0.1, 0.3]])),
    "strong-commute": sparse_markov_pair,
    "build-product": identity_flip_doc,
    "two-param-dilation": markov_pair,
    "dilate-row": row_doc,
    "classify-triple": lambda: enc_triple(bhat_triple(6.0, 3)),
    "superproduct": lambda: enc_triple(bhat_triple(6.0, 3)),
    "check-exchange": lambda: enc_flips(flip_example_data()),
    "perm-chains": lambda: {**header("index-function"), "values": [2, 1, 2, 1]},
}

EXPECTED_EXIT = {"strong-commute": EXIT_FAIL, "check-exchange": EXIT_FAIL}


def call(capsys, argv):
    code = run(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def write(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(doc if isinstance(doc, str) else dumps(doc), encoding="utf-8")
    return str(path)


def test_perm_sigma_exact_output(capsys):
    code, out, _ = call(capsys, ["perm-sigma", "--values", "2,1,2,1"])
    assert code == EXIT_OK
    assert json.loads(out) == {"schema": "cpdilate.perm-sigma", "version": 1, "sigma": [2, 4, 1, 3],
                               "inversions": 3}


def test_verify_example_bhat(capsys):
    code, out, _ = call(capsys, ["verify-example", "bhat", "--param-C", "6"])
    assert code == EXIT_OK
    doc = json.loads(out)
    claim = next(c for c in doc["claims"] if c["id"] == "norm_T1")
    assert claim["pass"] and abs(claim["computed"] - (5 + np.sqrt(13)) / 12) <= 1e-10


def test_verify_example_bad_parameter(capsys):
    code, _, err = call(capsys, ["verify-example", "bhat", "--param-C", "1"])
    assert code == EXIT_INPUT and json.loads(err)["schema"] == "cpdilate.error"
    code, _, _ = call(capsys, ["verify-example", "nosuch"])
    assert code == EXIT_INPUT


def test_check_exchange_flip_example(capsys, tmp_path):
    path = write(tmp_path, "flip.json", enc_flips(flip_example_data()))
    code, out, _ = call(capsys, ["check-exchange", path])
    assert code == EXIT_FAIL
    doc = json.loads(out)
    assert doc["holds"] is False and doc["witness"] == [1, 2, 3]
    assert abs(doc["witness_residual"] - np.sqrt(2)) <= 1e-12


@pytest.mark.parametrize("cmd", sorted(INPUTS))
def test_every_subcommand_runs(cmd, capsys, tmp_path):
    path = write(tmp_path, "in.json", INPUTS[cmd]())
    out_path = tmp_path / "out.json"
    code, out, err = call(capsys, [cmd, path, "--out", str(out_path)])
    assert code == EXPECTED_EXIT.get(cmd, EXIT_OK), err
    assert out == ""
    text = out_path.read_text(encoding="utf-8")
    # every output is a canonical document of a known schema
    assert canonical(text) == text
    assert loads(text)["schema"][len("cpdilate."):] in MODELS


def test_out_dash_streams(capsys, tmp_path):
    path = write(tmp_path, "in.json", INPUTS["kraus-min"]())
    code, out, _ = call(capsys, ["kraus-min", path, "--out", "-"])
    assert code == EXIT_OK and json.loads(out)["schema"] == "cpdilate.cpmap"


def test_stdin_input(capsys, monkeypatch):
    import io
    monkeypatch.setattr("sys.stdin", io.StringIO(dumps(INPUTS["perm-chains"]())))
    code, out, _ = call(capsys, ["perm-chains", "-"])
    assert code == EXIT_OK
    doc = json.loads(out)
    assert doc["sigma"] == [2, 4, 1, 3] and all(len(c) == 3 for c in doc["chains"])


def bad_kraus_entry():
    doc = json.loads(dumps(enc_cpmap(from_classical_matrix(SPARSE_MARKOV_MATRIX))))
    doc["kraus"][1][0][0] = [1, "x"]
    return doc


def extra_field():
    doc = json.loads(dumps(enc_cpmap(from_classical_matrix(SPARSE_MARKOV_MATRIX))))
    doc["extra"] = 1
    return doc


def bad_second_shape():
    doc = json.loads(dumps(sparse_markov_pair()))
    doc["second"]["kraus"][0] = [[1, 0]]
    return doc


@pytest.mark.parametrize("cmd,make,where", [
    ("gns", bad_kraus_entry, "/kraus/1/0/0"),
    ("gns", extra_field, "/extra"),
    ("strong-commute", bad_second_shape, "/second/kraus/0"),
])
def test_input_errors_point_at_field(cmd, make, where, capsys, tmp_path):
    code, out, err = call(capsys, [cmd, write(tmp_path, "bad.json", make())])
    assert code == EXIT_INPUT and out == ""
    doc = json.loads(err)
    assert doc["schema"] == "cpdilate.error" and doc["pointer"] == where


def test_malformed_json_and_missing_file(capsys, tmp_path):
    code, _, err = call(capsys, ["gns", write(tmp_path, "bad.json", '{"schema": ')])
    assert code == EXIT_INPUT and "error" in json.loads(err)
    code, _, _ = call(capsys, ["gns", str(tmp_path / "missing.json")])
    assert code == EXIT_INPUT


def test_wrong_schema_and_version(capsys, tmp_path):
    doc = INPUTS["perm-chains"]()
    code, _, err = call(capsys, ["gns", write(tmp_path, "a.json", doc)])
    assert code == EXIT_INPUT and json.loads(err)["pointer"] == "/schema"
    doc = {**INPUTS["gns"](), "version": 2}
    code, _, err = call(capsys, ["gns", write(tmp_path, "b.json", doc)])
    assert code == EXIT_INPUT and json.loads(err)["pointer"] == "/version"


def test_bad_flags(capsys):
    assert call(capsys, ["perm-sigma", "--values", "a,b"])[0] == EXIT_INPUT
    assert call(capsys, ["perm-sigma", "--values", "1,2", "--tol-eq", "-1"])[0] == EXIT_INPUT
    assert call(capsys, ["nosuch"])[0] == EXIT_INPUT


def test_not_row_contractive_is_input_error(capsys, tmp_path):
    doc = json.loads(dumps(row_doc()))
    doc["ops"][0] = [[[3, 0], [0, 0]], [[0, 0], [3, 0]]]
    code, _, err = call(capsys, ["dilate-row", write(tmp_path, "r.json", doc)])
    assert code == EXIT_INPUT and json.loads(err)["pointer"] == "/ops"


def test_round_trip_byte_identical_every_schema(capsys, tmp_path):
    """Serialize, parse and serialize again for one document of each schema."""
    docs = {}
    for cmd, make in INPUTS.items():
        d = make()
        docs[d["schema"]] = d
        path = write(tmp_path, "in.json", d)
        call(capsys, [cmd, path, "--out", str(tmp_path / "out.json")])
        out = loads((tmp_path / "out.json").read_text(encoding="utf-8"))
        docs[out["schema"]] = out
    call(capsys, ["perm-sigma", "--values", "3,1,2", "--out", str(tmp_path / "s.json")])
    docs["cpdilate.perm-sigma"] = loads((tmp_path / "s.json").read_text(encoding="utf-8"))
    call(capsys, ["verify-example", "unitalized_pair_not_strong", "--out", str(tmp_path / "r.json")])
    docs["cpdilate.report"] = loads((tmp_path / "r.json").read_text(encoding="utf-8"))
    call(capsys, ["gns", str(tmp_path / "missing.json")])
    docs["cpdilate.error"] = {**header("error"), "error": "x", "pointer": ""}
    system = docs["cpdilate.two-param-dilation"]["system"]
    docs["cpdilate.system"] = system
    assert {"cpdilate." + k for k in MODELS} <= set(docs)
    for schema, d in docs.items():
        text = dumps(d)
        once = canonical(text)
        assert canonical(once) == once, schema
        assert once == text, schema


def test_floats_use_17_digits():
    text = dumps({**header("perm-sigma"), "sigma": [1], "inversions": 0, "x": 0.1})
    assert "0.10000000000000001" in text
