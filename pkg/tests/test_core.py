import json
import warnings

import numpy as np
import pytest

from scalelab.core import (
    MODELS,
    MODELS_BY_NAME,
    DatasetValidationError,
    FitDataset,
    ForgettingWarning,
    LossCurve,
    ModelSpec,
    RunRecord,
    flops_infer,
    flops_train,
    l0_table,
    read_curve_csv,
    read_runs_jsonl,
    validate_dataset,
    write_curve_csv,
    write_runs_jsonl,
)


def rec(n=41_000_000, d=300_000, p=0.0, ft=3.0, pt=3.3, domain="arxiv"):
    return RunRecord(domain, n, d, p, ft, pt, 10, 1024, 32)


# Printed training FLOPs per model size, mantissa to three figures.
PRINTED_FLOPS = {"Tiny": 1.25e18, "Small": 7.84e18, "Medium": 6.61e19, "Large": 2.63e20, "XL": 7.62e20}


def test_flops_exact_integers():
    assert flops_train(41_000_000, 5_100_000_000) == 1_254_600_000_000_000_000
    assert flops_train(1_270_000_000, 100_000_000_000) == 762_000_000_000_000_000_000
    assert flops_infer(10, 7) == 140
    assert isinstance(flops_train(2, 3), int)


@pytest.mark.parametrize("name", list(PRINTED_FLOPS))
def test_flops_match_printed_table(name):
    exact = MODELS_BY_NAME[name].flops
    expo = len(str(exact)) - 3
    # The printed mantissas are the exact value cut to three figures.
    assert float(exact // 10**expo * 10**expo) == pytest.approx(PRINTED_FLOPS[name], rel=1e-12)


@pytest.mark.parametrize("bad", [0, -5, 1.5, float("nan")])
def test_flops_reject_non_counts(bad):
    with pytest.raises(ValueError):
        flops_train(bad, 10)


def test_model_table():
    assert [m.name for m in MODELS] == ["Tiny", "Small", "Medium", "Large", "XL"]
    assert [m.batch_size for m in MODELS] == [32, 32, 64, 128, 112]
    assert l0_table() == {41_000_000: 3.19, 109_000_000: 2.92, 334_000_000: 2.60, 665_000_000: 2.39,
                          1_270_000_000: 2.27}
    assert l0_table("terminal")[41_000_000] == 3.13
    with pytest.raises(ValueError):
        l0_table("cosine")
    with pytest.raises(ValueError, match="rewarmed loss below terminal"):
        ModelSpec("bad", 10, 1, 1, 1, 1, 1e-3, 10, 3.0, 2.9)


def test_record_dict_roundtrip():
    r = rec(p=0.005)
    assert RunRecord.from_dict(r.to_dict()) == r
    d = r.to_dict()
    del d["seq_len"]
    with pytest.raises(ValueError, match="missing field"):
        RunRecord.from_dict(d)
    with pytest.raises(ValueError, match="unknown field"):
        RunRecord.from_dict({**r.to_dict(), "lr": 1.0})
    with pytest.raises(ValueError):
        RunRecord.from_dict({**r.to_dict(), "n_params": 1.5})


def test_validate_collects_every_issue():
    bad = [rec(), rec(p=1.5, d=900_000), rec(ft=-1.0, d=3_000_000), rec(), rec(domain="github", d=9_000_000)]
    with pytest.raises(DatasetValidationError) as ei:
        validate_dataset(bad)
    rules = {(i["rule"], i["index"]) for i in ei.value.issues}
    assert {("p_range", 1), ("non_positive_loss", 2), ("duplicate", 3), ("mixed_domain", 4)} <= rules
    dup = next(i for i in ei.value.issues if i["rule"] == "duplicate")
    assert dup["other"] == 0 and "0" in dup["message"] and "3" in dup["message"]


def test_validate_empty():
    with pytest.raises(DatasetValidationError, match="empty dataset"):
        validate_dataset([])


def test_validate_warns_below_baseline_and_is_idempotent():
    ds = FitDataset((rec(pt=3.0), rec(d=900_000, pt=3.5)), "arxiv")
    with pytest.warns(ForgettingWarning):
        out = validate_dataset(ds, l0_table())
    assert out is ds
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert validate_dataset(out) is out


def test_dataset_columns_and_subsets():
    ds = FitDataset([rec(d=d) for d in (1, 2, 3)], "arxiv")
    assert ds.dft_tokens.tolist() == [1, 2, 3]
    assert len(ds.subset([2, 2, 0])) == 3
    assert ds.where([True, False, True]).dft_tokens.tolist() == [1, 3]


def test_jsonl_roundtrip_and_line_numbers(tmp_path):
    recs = [rec(d=d, ft=3.0 + 1e-13 * d) for d in (300_000, 900_000)]
    path = tmp_path / "runs.jsonl"
    write_runs_jsonl(recs, path)
    assert read_runs_jsonl(path) == recs
    lines = path.read_text().splitlines()
    path.write_text(lines[0] + "\n" + lines[1][:-3] + "\n")
    with pytest.raises(ValueError, match=r"runs.jsonl:2"):
        read_runs_jsonl(path)
    path.write_text(json.dumps({"domain": "x"}) + "\n")
    with pytest.raises(ValueError, match=r":1: missing field"):
        read_runs_jsonl(path)


def test_curve_validation():
    with pytest.raises(ValueError, match="strictly increasing"):
        LossCurve("c", [0, 2, 2], [1, 1, 1])
    with pytest.raises(ValueError, match="points"):
        LossCurve("c", [0, 1, 2], [1, 1])


def test_curve_csv_roundtrip(tmp_path):
    c = LossCurve("run", np.arange(0, 50, 10), np.linspace(3, 2, 5) + 1e-15, None, np.linspace(2, 2.1, 5))
    path = tmp_path / "c.csv"
    write_curve_csv(c, path)
    assert path.read_text().splitlines()[0] == "step,train_ft,val_ft,val_pt"
    back = read_curve_csv(path)
    assert back.train_ft is None
    assert np.array_equal(back.val_ft, c.val_ft) and np.array_equal(back.val_pt, c.val_pt)
    assert np.array_equal(back.steps, c.steps)
    path.write_text("step,val_ft\n0,1\n")
    with pytest.raises(ValueError, match="header"):
        read_curve_csv(path)
