"""Smoke test for the catalog_scribe extension module."""

import tempfile
from pathlib import Path

import catalog_scribe as cs


def main() -> None:
    assert cs.tokenize_name("optCtrExpD") == ["opt", "ctr", "exp", "d"]
    result = cs.expand_name("ytd_dist_amt", "fund_positions", "lakehouse")
    assert result["expanded_name"] == "year to date distribution amount", result

    assert cs.lcs(["shr", "exp", "d"], ["opt", "ctr", "exp", "d"]) == (2, [1, 2])
    p, r, f1 = cs.rouge1("year to date amount", "year to date distribution amount")
    assert (p, r) == (1.0, 0.8) and abs(f1 - 8 / 9) < 1e-12
    assert abs(cs.embed_similarity("net asset value", "net asset value")[2] - 1.0) < 1e-6

    with tempfile.TemporaryDirectory() as tmp:
        catalog = cs.make_fixture(120, 8, 11, out=tmp)
        assert len(catalog["columns"]) >= 120
        engine = cs.Engine(Path(tmp) / "catalog.jsonl", mock="echo")
        pending = engine.undescribed()
        assert pending, "fixture should contain undescribed columns"
        run = engine.describe_column(*pending[0])
        text = run["generation"]["processed_output"]
        assert text, run
        print(f"{pending[0][0]} -> {text!r} ({len(run['retrieval']['examples'])} examples)")

        table = catalog["tables"][0]
        summary = engine.describe_table(table["table_name"], table["data_source"], "Holdings by account.")
        print(f"{table['table_name']} -> {summary['description'][:80]!r}")

    print("smoke test ok")


if __name__ == "__main__":
    main()
