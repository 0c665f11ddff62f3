import json

import numpy as np
import pytest

from introspeak.cli import main
from introspeak.harness import (
    ConfigError,
    ExperimentConfig,
    SweepReport,
    SweepRow,
    best_lambda,
    report_csv,
    run_discrim_captioning,
    run_rs_samplesweep,
    run_sweep,
    write_report,
)

SMALL = ExperimentConfig(
    seeds=(0, 1),
    methods=("S", "IS"),
    lambda_grid=(0.0, 0.5, 1.0),
    n_contexts=2,
    n_shared=1,
    n_distinct=1,
    captions_per_context=40,
    hard_top_k=1,
    figures=False,
)


@pytest.fixture(scope="module")
def small_report():
    return run_sweep(SMALL)


def test_config_validation():
    with pytest.raises(ConfigError, match="seed"):
        ExperimentConfig(seeds=())
    with pytest.raises(ConfigError, match="unknown methods"):
        ExperimentConfig(methods=("S", "XX"))
    with pytest.raises(ConfigError, match="lambda_grid"):
        ExperimentConfig(lambda_grid=(0.5, 1.2))
    with pytest.raises(ConfigError, match="lambda_grid"):
        ExperimentConfig(lambda_grid=())
    with pytest.raises(ConfigError, match="together"):
        ExperimentConfig(corpus_path="x.tsv")
    assert ExperimentConfig(corpus_path="x.tsv", pairs_path="y.jsonl").uses_corpus
    assert not ExperimentConfig().uses_corpus


def test_from_toml_sections_aliases_and_coercion(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text(
        """
[experiment]
seeds = [3, 4]
lambda_grid = [0.0, 1.0]
beam_width = 7

[lm]
order = 2

[synth]
n_contexts = 3

[corpus]
path = "c.tsv"
pairs = "p.jsonl"
features = "f.tsv"
""",
        encoding="utf-8",
    )
    cfg = ExperimentConfig.from_toml(path)
    assert cfg.seeds == (3, 4) and isinstance(cfg.seeds, tuple)
    assert cfg.lambda_grid == (0.0, 1.0)
    assert cfg.beam_width == 7 and cfg.order == 2 and cfg.n_contexts == 3
    assert cfg.corpus_path == "c.tsv"
    assert cfg.pairs_path == "p.jsonl"
    assert cfg.features_path == "f.tsv"


def test_from_toml_rejects_unknown_keys_and_scalar_sections(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[experiment]\nbeam_widht = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="beam_widht"):
        ExperimentConfig.from_toml(bad)
    bad.write_text("experiment = 5\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="must be a table"):
        ExperimentConfig.from_toml(bad)


def test_replaced_and_lock_json():
    cfg = ExperimentConfig()
    other = cfg.replaced(beam_width=3, seeds=(9,))
    assert other.beam_width == 3 and other.seeds == (9,)
    assert cfg.beam_width == 10, "replaced() must not mutate the original"
    doc = json.loads(cfg.lock_json())
    assert doc["lambda_grid"] == [0.0, 0.3, 0.5, 0.7, 1.0]


def test_sweep_rows_cover_the_grid(small_report):
    keys = {(r.method, r.lam) for r in small_report.rows}
    assert keys == {(m, lam) for m in SMALL.methods for lam in SMALL.lambda_grid}
    for row in small_report.rows:
        # two seeds x two ordered pairs
        assert row.n_items == 4
        assert row.samples is None and row.split is None
        assert 0.0 <= row.twoafc_mean <= 1.0


def test_speaker_rows_do_not_depend_on_lambda(small_report):
    s_rows = [r for r in small_report.rows if r.method == "S"]
    assert len({(r.cider_mean, r.twoafc_mean) for r in s_rows}) == 1


def test_is_at_lambda_one_matches_speaker(small_report):
    by_key = {(r.method, r.lam): r for r in small_report.rows}
    s, is1 = by_key[("S", 1.0)], by_key[("IS", 1.0)]
    assert is1.cider_mean == s.cider_mean
    assert is1.twoafc_mean == s.twoafc_mean


def test_rows_are_recomputable_from_items(small_report):
    for row in small_report.rows:
        mine = [
            i
            for i in small_report.items
            if i["method"] == row.method and i["lambda"] == row.lam
        ]
        assert len(mine) == row.n_items
        assert float(np.mean([i["cider"] for i in mine])) == row.cider_mean
        assert float(np.mean([i["twoafc_credit"] for i in mine])) == row.twoafc_mean


def test_sweep_is_deterministic(small_report):
    again = run_sweep(SMALL)
    assert report_csv(again) == report_csv(small_report)
    assert again.items == small_report.items


def test_rs_samplesweep_row_shape():
    cfg = SMALL.replaced(seeds=(0,), sample_grid=(5, 10))
    report = run_rs_samplesweep(cfg)
    keys = {(r.method, r.samples) for r in report.rows}
    assert keys == {("RS", 5), ("RS", 10), ("IS", None)}
    is_items = [i for i in report.items if i["method"] == "IS"]
    assert is_items and all(i["beam_width"] == 10 for i in is_items)
    rs_items = [i for i in report.items if i["method"] == "RS"]
    assert {i["samples"] for i in rs_items} == {5, 10}


def test_discrim_rows_and_meta():
    cfg = SMALL.replaced(seeds=(0,))
    report = run_discrim_captioning(cfg)
    keys = {(r.method, r.lam, r.split) for r in report.rows}
    assert keys == {
        ("S", None, "easy"),
        ("S", None, "hard"),
        ("IS", cfg.discrim_lambda, "easy"),
        ("IS", cfg.discrim_lambda, "hard"),
    }
    assert "hard_identical_pairs" in report.meta
    for row in report.rows:
        assert row.cider_mean is None and row.n_items > 0
    # Every pair is graded in both directions.
    directed = {(i["target"], i["distractor"]) for i in report.items}
    assert all((b, a) in directed for a, b in directed)


def _fake_report(rows):
    return SweepReport(
        kind="sweep", rows=rows, items=[], meta={}, timings=[], config=ExperimentConfig()
    )


def test_best_lambda_breaks_ties_toward_smaller():
    row = lambda lam, mean: SweepRow("IS", lam, None, None, 1, mean, 0.0, 0.5)
    report = _fake_report([row(0.7, 2.0), row(0.3, 2.0), row(0.0, 1.0)])
    assert best_lambda(report, "IS") == 0.3
    with pytest.raises(ValueError, match="no scored rows"):
        best_lambda(report, "RS")


def test_report_csv_layout(small_report):
    lines = report_csv(small_report).splitlines()
    assert lines[0] == "method,lambda,samples,split,n_items,cider_mean,cider_sem,twoafc_mean"
    assert len(lines) == 1 + len(small_report.rows)
    for line in lines[1:]:
        assert len(line.split(",")) == 8


def test_write_report_file_set(small_report, tmp_path):
    out = tmp_path / "run"
    written = {p.name for p in write_report(small_report, out)}
    assert written == {"report.csv", "items.jsonl", "config.lock", "timings.csv"}
    timing_lines = (out / "timings.csv").read_text().splitlines()
    assert timing_lines[0] == "row,seconds"
    assert len(timing_lines) == 1 + len(small_report.rows)
    lock = json.loads((out / "config.lock").read_text())
    assert lock["n_contexts"] == SMALL.n_contexts
    items = [json.loads(l) for l in (out / "items.jsonl").read_text().splitlines()]
    assert items == small_report.items


def test_write_report_bytes_are_reproducible(small_report, tmp_path):
    a = write_report(small_report, tmp_path / "a")[0].read_bytes()
    b = write_report(run_sweep(SMALL), tmp_path / "b")[0].read_bytes()
    assert a == b


def test_write_report_renders_figures(small_report, tmp_path):
    report = run_sweep(SMALL.replaced(figures=True, seeds=(0,)))
    written = write_report(report, tmp_path / "figs")
    pngs = [p for p in written if p.suffix == ".png"]
    assert pngs and all(p.stat().st_size > 0 for p in pngs)


def test_discrim_report_includes_meta_json(tmp_path):
    report = run_discrim_captioning(SMALL.replaced(seeds=(0,)))
    written = {p.name for p in write_report(report, tmp_path / "d")}
    assert "meta.json" in written


SMALL_TOML = """
[experiment]
seeds = [0]
lambda_grid = [0.0, 1.0]

[synth]
n_contexts = 2
n_shared = 1
n_distinct = 1
captions_per_context = 40
"""


def test_cli_sweep_smoke(tmp_path, capsys):
    cfg_path = tmp_path / "exp.toml"
    cfg_path.write_text(SMALL_TOML, encoding="utf-8")
    out = tmp_path / "run"
    rc = main(
        [
            "sweep",
            "--config",
            str(cfg_path),
            "--out-dir",
            str(out),
            "--methods",
            "S,IS",
            "--no-figures",
        ]
    )
    assert rc == 0
    assert (out / "report.csv").exists()
    stdout = capsys.readouterr().out
    assert "best lambda for IS" in stdout


def test_cli_synth_train_generate_justify_pair(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--contexts", "2", "--shared", "1", "--distinct", "1",
                 "--captions", "30", "--seed", "4", "--out-dir", str(data)]) == 0
    for name in ("world.json", "corpus.tsv", "features.tsv", "refs.jsonl"):
        assert (data / name).exists(), name

    model = tmp_path / "model.lm"
    vocab = tmp_path / "vocab.txt"
    assert main(["train", str(data / "corpus.tsv"), "--order", "2",
                 "--out", str(model), "--vocab-out", str(vocab)]) == 0
    assert model.exists() and vocab.exists()
    capsys.readouterr()

    assert main(["generate", "--model", str(model), "--context", "ctx00",
                 "--beam", "3", "--max-len", "8"]) == 0
    line = capsys.readouterr().out.strip()
    score, text = line.split("\t")
    float(score)
    assert text

    assert main(["justify", "--model", str(model), "--target", "ctx00",
                 "--distractor", "ctx01", "--lam", "0.3", "--beam", "3",
                 "--max-len", "8", "--length-normalize", "--top", "2"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert 1 <= len(lines) <= 2

    pairs_csv = tmp_path / "pairs.csv"
    assert main(["pair", "--features", str(data / "features.tsv"),
                 "--out", str(pairs_csv)]) == 0
    rows = pairs_csv.read_text().splitlines()
    assert rows[0] == "target,distractor,similarity,kind"
    assert len(rows) == 3

    # hard mode refuses to run blind
    assert main(["pair", "--features", str(data / "features.tsv"),
                 "--mode", "hard"]) == 2

    hard_csv = tmp_path / "hard.csv"
    assert main(["pair", "--features", str(data / "features.tsv"), "--mode", "hard",
                 "--model", str(model), "--top-k", "1", "--out", str(hard_csv)]) == 0
    assert hard_csv.read_text().splitlines()[1].endswith("hard")


def test_cli_eval_scores_items(tmp_path, capsys):
    items = tmp_path / "items.jsonl"
    refs = [
        ("x", ["this", "bird", "has", "a", "red", "crown"]),
        ("y", ["this", "bird", "has", "a", "yellow", "belly"]),
        ("z", ["this", "is", "a", "plain", "bird"]),
    ]
    with items.open("w", encoding="utf-8") as fh:
        for item_id, ref in refs:
            fh.write(json.dumps({"id": item_id, "candidate": ref, "references": [ref]}) + "\n")
    out_csv = tmp_path / "scores.csv"
    assert main(["eval", "--items", str(items), "--out", str(out_csv)]) == 0
    lines = out_csv.read_text().splitlines()
    assert lines[0] == "id,cider,cider_1,cider_2,cider_3,cider_4"
    # candidate == its only reference maxes the score
    assert lines[1].startswith("x,10,")
    assert lines[-1].startswith("MEAN,10,")

    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps({"id": "x"}) + "\n", encoding="utf-8")
    assert main(["eval", "--items", str(bad)]) == 2
    capsys.readouterr()
