import json
import socket

import pytest

from ctxbench.errors import (
    BadFilter,
    ColumnMissing,
    FetchFailure,
    FixtureMissing,
    HashCollision,
    IntegrityError,
    SchemaMismatch,
    UnknownDataset,
    UnknownParent,
    UnknownTransform,
)
from ctxbench.registry import (
    SEQUENCE_COLUMN,
    DataViewConfig,
    FetcherSpec,
    Registry,
    SequenceFetcher,
    Table,
    apply_view,
    insert_sequence,
    lineage,
    parse_filter,
    register_dataset,
    run_view,
    stream_dataset,
)
from ctxbench.registry.views import apply_var_map, autofill_identifier, create_range

PEPTIDE_VIEW = {
    "dataset_name": "brown_mdm2_ace2_12ca5",
    "functions_to_run": ["autofill_identifier", "create_range", "insert_protein_sequence"],
    "args_for_functions": [
        {"autofill_column": "Name", "key_column": "Sequence"},
        {"column": "KD (nM)", "keys": ["Putative binder"], "subs": [0]},
        {"gene_column": "Protein Target"},
    ],
    "var_map": {"X1": "Sequence", "X2": "protein_or_rna_sequence", "ID1": "Name", "ID2": "Protein Target"},
}

PEPTIDES = (b"Name,Sequence,KD (nM),Protein Target\n"
            b"pep1,SQETFSDLWKLLPEN,5.5,MDM2\n"
            b",SQETFSDLWKLLPEN,Putative binder,MDM2\n"
            b"pep2,IEDFNIEQSLL,Putative binder,ACE2\n"
            b"pep3,DYPYDVPDYA,12,12CA5\n"
            b",MPRFAPAVLLL,40,ACE2\n")

FIXTURES = {"MDM2": "MCNTNMSVPTDGAVT", "ACE2": "MSSSSWLLLSLVAVTAA", "12CA5": "EVQLVESGGGLVKPGG"}


class CountingTransport:
    def __init__(self, body=b">sp|X\nMKV\nLLA\n"):
        self.calls = []
        self.body = body

    def __call__(self, url, timeout):
        self.calls.append(url)
        return self.body


@pytest.fixture
def reg(tmp_path):
    return Registry(tmp_path / "reg", clock=lambda: "2024-01-01T00:00:00+00:00")


# ---------------------------------------------------------------- registration


def test_versions_increment_and_hash_is_stable(reg):
    m1 = register_dataset(reg, "x", b"a,b\n1,2\n")
    m2 = register_dataset(reg, "x", b"a,b\n1,2\n")
    assert (m1.version, m2.version) == (1, 2)
    assert m1.content_hash == m2.content_hash
    assert reg.get("x").version == 2
    assert m1.schema == {"a": "int", "b": "int"}


def test_unknown_parent_version(reg):
    reg.register("x", b"a\n1\n")
    reg.register("x", b"a\n2\n")
    with pytest.raises(UnknownParent):
        reg.register("y", b"a\n1\n", parent=("x", 3))


def test_schema_mismatch(reg):
    with pytest.raises(SchemaMismatch):
        reg.register("x", b"a,b\n1,2\n", {"a": "int"})
    with pytest.raises(SchemaMismatch):
        reg.register("x", b"a,b\n1,zz\n", {"a": "int", "b": "float"})
    with pytest.raises(SchemaMismatch):
        reg.register("x", b"a\n1\n", {"a": "date"})
    assert reg.register("x", b"a,b\n1,\n", {"a": "int", "b": "float"}).version == 1


def test_hash_collision_refused(reg):
    m = reg.register("x", b"a\n1\n")
    (reg.blobs / f"{m.content_hash}.csv").write_bytes(b"a\n9\n")
    with pytest.raises(HashCollision):
        reg.register("x", b"a\n1\n")


def test_unknown_dataset(reg):
    with pytest.raises(UnknownDataset):
        reg.get("nope")
    reg.register("x", b"a\n1\n")
    with pytest.raises(UnknownDataset):
        reg.get("x", 7)


def test_index_survives_reopen(reg, tmp_path):
    reg.register("x", b"a\n1\n")
    again = Registry(tmp_path / "reg")
    assert again.get("x", 1).content_hash == reg.get("x", 1).content_hash


# ---------------------------------------------------------------- lineage


def test_lineage_chain(reg):
    root = reg.register("base", b"a,b\n1,x\n2,y\n")
    assert [m.version for m in lineage(reg, "base", 1)] == [1]
    cfg = DataViewConfig("base", (("select_columns", {"columns": ["b"]}),))
    view = apply_view(cfg, reg, 1)
    chain = reg.lineage(view.manifest.name, view.manifest.version)
    assert len(chain) == 2
    assert chain[0] == root
    assert chain[1].parent == ("base", 1)
    assert chain[1].view_config == cfg.to_dict()


def test_tampered_blob_detected(reg):
    m = reg.register("x", b"a\n1\n2\n")
    (reg.blobs / f"{m.content_hash}.csv").write_bytes(b"a\n1\n3\n")
    with pytest.raises(IntegrityError):
        reg.read_bytes("x")
    with pytest.raises(IntegrityError):
        reg.lineage("x")
    with pytest.raises(IntegrityError):
        list(reg.stream("x", chunk_size=1))


# ---------------------------------------------------------------- streaming


def big_table(n=250):
    rows = [(str(i), ["brain", "lung", "heart"][i % 3], ["male", "female"][i % 2], f"{i * 0.5}") for i in range(n)]
    return Table(("cell", "tissue", "sex", "umi"), rows)


def test_stream_batches(reg):
    reg.register("atlas", big_table().to_csv())
    sizes = [len(b) for b in stream_dataset(reg, "atlas", chunk_size=100)]
    assert sizes == [100, 100, 50]


@pytest.mark.parametrize("chunk", [1, 7, 100, 1000])
def test_stream_concatenation_equals_eager_read(reg, chunk):
    reg.register("atlas", big_table().to_csv())
    expr = "tissue == 'brain' and sex == 'male'"
    peak = [0]

    def probe(n):
        peak[0] = max(peak[0], n)

    batches = list(reg.stream("atlas", filter=expr, chunk_size=chunk, probe=probe))
    rows = [r for b in batches for r in b.rows]
    eager = reg.read_table("atlas", filter=expr)
    assert Table(eager.columns, rows).to_csv() == eager.to_csv()
    assert all(r[1] == "brain" and r[2] == "male" for r in rows)
    assert [int(r[0]) for r in rows] == sorted(int(r[0]) for r in rows)
    assert peak[0] <= chunk


def test_stream_is_lazy(reg):
    reg.register("atlas", big_table(1000).to_csv())
    gen = reg.stream("atlas", chunk_size=10)
    first = next(gen)
    assert len(first) == 10
    gen.close()


def test_filter_language(reg):
    reg.register("atlas", big_table(30).to_csv())
    assert len(reg.read_table("atlas", filter="umi >= 10")) == 10
    assert len(reg.read_table("atlas", filter="tissue in ['lung', 'heart'] and umi < 5")) == 6
    assert len(reg.read_table("atlas", filter="tissue != \"brain\"")) == 20
    assert len(reg.read_table("atlas", filter="")) == 30
    for bad in ["tissue = 'x'", "tissue ==", "nope == 1", "tissue == 'a' or sex == 'b'", "tissue in 'a'",
                "umi > [1]", "tissue == 'unterminated"]:
        with pytest.raises(BadFilter):
            reg.read_table("atlas", filter=bad)
    with pytest.raises(BadFilter):
        reg.stream("atlas", filter="ghost == 1")
    assert parse_filter("`KD (nM)` > 3")[0].column == "KD (nM)"


# ---------------------------------------------------------------- transforms and views


def test_var_map_renames():
    t = Table(("X1", "y"), [("AC", "1")])
    assert apply_var_map(t, {"X1": "Sequence"}).columns == ("Sequence", "y")
    with pytest.raises(ColumnMissing):
        apply_var_map(t, {"Q": "R"})


def test_autofill_identifier_uses_shared_key():
    t = Table.from_csv(PEPTIDES)
    out = autofill_identifier(t, autofill_column="Name", key_column="Sequence")
    assert out.column("Name") == ["pep1", "pep1", "pep2", "pep3", ""]


def test_create_range_substitutes_keys():
    out = create_range(Table.from_csv(PEPTIDES), column="KD (nM)", keys=["Putative binder"], subs=[0])
    assert out.column("KD (nM)") == ["5.5", "0", "0", "12", "40"]


def test_insert_sequence_fetches_each_key_once():
    t = Table.from_csv(PEPTIDES)
    transport = CountingTransport()
    fetcher = SequenceFetcher(FetcherSpec(kind="fixture_file", fixtures=FIXTURES), transport)
    out = insert_sequence(t, "Protein Target", fetcher)
    assert out.column(SEQUENCE_COLUMN)[:2] == [FIXTURES["MDM2"]] * 2
    assert fetcher.fetches == 3
    assert transport.calls == []


def test_fixture_missing():
    fetcher = SequenceFetcher(FetcherSpec(kind="fixture_file", fixtures={}))
    with pytest.raises(FixtureMissing):
        insert_sequence(Table.from_csv(PEPTIDES), "Protein Target", fetcher)


def test_live_mode_caches_and_parses_fasta(tmp_path):
    transport = CountingTransport()
    spec = FetcherSpec(kind="rest_get_sequence", cache_dir=str(tmp_path / "cache"))
    fetcher = SequenceFetcher(spec, transport)
    out = insert_sequence(Table.from_csv(PEPTIDES), "Protein Target", fetcher)
    assert set(out.column(SEQUENCE_COLUMN)) == {"MKVLLA"}
    assert len(transport.calls) == 3
    assert "gene_exact:MDM2" in transport.calls[0]
    second = SequenceFetcher(spec, transport)
    second.fetch("MDM2")
    assert len(transport.calls) == 3 and second.cache_hits == 1


def test_live_mode_failure():
    def broken(url, timeout):
        raise OSError("unreachable")

    with pytest.raises(FetchFailure):
        SequenceFetcher(FetcherSpec(kind="rest_get_sequence"), broken).fetch("MDM2")
    with pytest.raises(FetchFailure):
        SequenceFetcher(FetcherSpec(kind="rest_get_sequence"), CountingTransport(b"")).fetch("MDM2")


def test_fetch_mode_from_env(monkeypatch, tmp_path):
    path = tmp_path / "fx.json"
    path.write_text(json.dumps(FIXTURES))
    monkeypatch.setenv("CTXBENCH_FETCH_MODE", "fixture")
    monkeypatch.setenv("CTXBENCH_FIXTURES", str(path))
    assert SequenceFetcher(FetcherSpec.from_env()).fetch("ACE2") == FIXTURES["ACE2"]
    monkeypatch.setenv("CTXBENCH_FETCH_MODE", "live")
    assert FetcherSpec.from_env().kind == "rest_get_sequence"


def test_view_config_round_trip_and_validation():
    cfg = DataViewConfig.from_dict(PEPTIDE_VIEW)
    assert cfg.to_dict() == PEPTIDE_VIEW
    assert DataViewConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(UnknownTransform):
        DataViewConfig("x", (("explode", {}),))
    with pytest.raises(ValueError):
        DataViewConfig("x", (), {"a": "z", "b": "z"})


def test_peptide_view_end_to_end_offline(reg, monkeypatch):
    def no_network(*a, **k):
        raise AssertionError("network access attempted")

    monkeypatch.setattr(socket, "create_connection", no_network)
    transport = CountingTransport()
    fetcher = SequenceFetcher(FetcherSpec(kind="fixture_file", fixtures=FIXTURES), transport)
    reg.register("brown_mdm2_ace2_12ca5", PEPTIDES)
    cfg = DataViewConfig.from_dict(PEPTIDE_VIEW)
    result = apply_view(cfg, reg, fetcher=fetcher)
    t = result.table
    assert t.columns == ("ID1", "X1", "KD (nM)", "ID2", "X2")
    assert t.column("ID1") == ["pep1", "pep1", "pep2", "pep3", ""]
    assert t.column("KD (nM)") == ["5.5", "0", "0", "12", "40"]
    assert t.column("X2") == [FIXTURES[k] for k in ["MDM2", "MDM2", "ACE2", "12CA5", "ACE2"]]
    assert transport.calls == [] and fetcher.network_calls == 0
    assert result.manifest.parent == ("brown_mdm2_ace2_12ca5", 1)


def test_apply_view_is_deterministic(reg):
    reg.register("brown_mdm2_ace2_12ca5", PEPTIDES)
    cfg = DataViewConfig.from_dict(PEPTIDE_VIEW)
    outs = [run_view(cfg, reg.read_table("brown_mdm2_ace2_12ca5"), SequenceFetcher(FetcherSpec(fixtures=FIXTURES))).to_csv()
            for _ in range(3)]
    assert outs[0] == outs[1] == outs[2]
    m1 = apply_view(cfg, reg, fetcher=SequenceFetcher(FetcherSpec(fixtures=FIXTURES))).manifest
    m2 = apply_view(cfg, reg, fetcher=SequenceFetcher(FetcherSpec(fixtures=FIXTURES))).manifest
    assert m1.content_hash == m2.content_hash


def test_missing_column_names_step(reg):
    cfg = DataViewConfig("src", (("create_range", {"column": "Ghost", "keys": ["a"], "subs": [0]}),))
    reg.register("src", PEPTIDES)
    with pytest.raises(ColumnMissing) as err:
        apply_view(cfg, reg)
    assert err.value.detail == {"step": "create_range", "column": "Ghost"}


def test_filter_and_select_steps(reg):
    reg.register("atlas", big_table(12).to_csv())
    cfg = DataViewConfig("atlas", (("filter_rows", {"expr": "tissue == 'lung'"}),
                                   ("select_columns", {"columns": ["cell", "umi"]})), {"umi": "count"})
    out = apply_view(cfg, reg).table
    assert out.columns == ("cell", "count") and out.column("cell") == ["1", "4", "7", "10"]
