import csv
import io
import json

import numpy as np
import pytest

from emflow.blockio import DeviceConfig
from emflow.cli import main, manifest_path, parse_size, parse_sweep, square_dims
from emflow.grid import GridDims, GridKind, Layout, read_grid, write_grid
from emflow.naive import brute_force_accumulation
from emflow.runner import BENCH_FIELDS, VARIANTS, run_variant
from emflow.terrain import gen_random_elevation

from conftest import random_flowdir


def rows_of(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture
def fd_file(tmp_path):
    path = tmp_path / "fd.emg"
    assert main(["gen", "--kind", "drainage", "--n", "64", "--seed", "7", "--out", str(path)]) == 0
    return path


def test_parse_size():
    assert parse_size("4096") == 4096
    assert parse_size("4K") == parse_size("4KiB") == parse_size("4kb") == 4096
    assert parse_size("1M") == parse_size("2^20") == 1 << 20
    with pytest.raises(Exception):
        parse_size("four")


def test_parse_sweep():
    assert parse_sweep("2^18..2^22") == [2**18, 2**20, 2**22]
    assert parse_sweep("2^4..2^7", factor=2) == [16, 32, 64, 128]
    assert parse_sweep("16,64, 256") == [16, 64, 256]
    with pytest.raises(Exception):
        parse_sweep("2^8..2^4")


def test_square_dims():
    assert square_dims(2**18) == GridDims(512, 512)
    assert square_dims(2**19) == GridDims(512, 1024)
    assert square_dims(12).n == 12


def test_gen_writes_grid_and_manifest(fd_file):
    g = read_grid(fd_file)
    assert g.kind == GridKind.FLOWDIR and g.dims == GridDims(64, 64)
    m = json.loads(manifest_path(fd_file).read_text())
    assert m["command"] == "gen" and m["seed"] == 7
    assert m["parameters"]["kind"] == "drainage" and m["outputs"] == [str(fd_file)]


def test_gen_is_deterministic(tmp_path, monkeypatch):
    monkeypatch.setenv("EMG_SEED", "11")
    a, b = tmp_path / "a.emg", tmp_path / "b.emg"
    for p in (a, b):
        assert main(["gen", "--kind", "directions", "--rows", "30", "--cols", "41",
                     "--nodata", "0.2", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert json.loads(manifest_path(a).read_text())["seed"] == 11


def test_gen_meander_with_elevation(tmp_path):
    fd, el = tmp_path / "m.emg", tmp_path / "m_elev.emg"
    assert main(["gen", "--kind", "meander", "--n", "64", "--layout", "z",
                 "--elev-out", str(el), "--out", str(fd)]) == 0
    g = read_grid(fd)
    assert g.layout == Layout.Z_ORDER
    assert brute_force_accumulation(g.with_layout(Layout.ROW_MAJOR)).data.max() == 64 * 64
    assert read_grid(el).kind == GridKind.ELEVATION
    assert "river_length" in json.loads(manifest_path(fd).read_text())["extra"]


def test_accumulate_simulated(tmp_path, fd_file, capsys):
    out = tmp_path / "acc.emg"
    rc = main(["accumulate", "--algo", "sep-aware", "--in", str(fd_file), "--out", str(out),
               "--mem", "1048576", "--block", "4096", "--simulate"])
    assert rc == 0
    acc = read_grid(out)
    assert acc == brute_force_accumulation(read_grid(fd_file))
    (row,) = rows_of(capsys.readouterr().out)
    assert list(row) == BENCH_FIELDS
    assert row["algorithm"] == "sep-aware" and int(row["N"]) == 64 * 64
    assert int(row["reads"]) > 0 and int(row["writes"]) > 0
    m = json.loads(manifest_path(out).read_text())
    assert m["stats"]["block_size"] == 4096 and m["stats"]["ios"] == int(row["ios"])


@pytest.mark.parametrize("algo", list(VARIANTS))
def test_accumulate_every_algorithm_file_backed(tmp_path, fd_file, algo):
    out, log = tmp_path / "acc.emg", tmp_path / "runs.csv"
    assert main(["accumulate", "--algo", algo, "--in", str(fd_file), "--out", str(out),
                 "--mem", "64K", "--block", "1K", "--csv", str(log)]) == 0
    assert main(["verify", "--flowdir", str(fd_file), "--acc", str(out)]) == 0
    (row,) = rows_of(log.read_text())
    assert row["reads"] == "" and float(row["wall_s"]) >= 0


def test_verify_detects_mismatch(tmp_path, fd_file, capsys):
    out = tmp_path / "acc.emg"
    main(["accumulate", "--algo", "naive-row", "--in", str(fd_file), "--out", str(out),
          "--simulate"])
    acc = read_grid(out)
    acc.data[3, 5] += 1
    write_grid(acc, out)
    capsys.readouterr()
    assert main(["verify", "--flowdir", str(fd_file), "--acc", str(out)]) == 1
    assert "mismatched cells: 1" in capsys.readouterr().out


def test_bench_rows(tmp_path):
    out = tmp_path / "bench.csv"
    rc = main(["bench", "--algos", "naive-row,naive-z,sep-aware,tfp", "--terrain", "meander",
               "--n", "2^10..2^12", "--mem", "64K", "--block", "1K", "--check",
               "--out", str(out)])
    assert rc == 0
    rows = rows_of(out.read_text())
    assert [(r["algorithm"], int(r["N"])) for r in rows] == [
        (a, n) for n in (2**10, 2**12) for a in ("naive-row", "naive-z", "sep-aware", "tfp")]
    assert all(int(r["ios"]) == int(r["reads"]) + int(r["writes"]) for r in rows)
    assert manifest_path(out).exists()


def test_bench_matches_runner(tmp_path, capsys):
    assert main(["bench", "--algos", "sep-oblivious", "--terrain", "drainage", "--n", "900",
                 "--mem", "32K", "--block", "512", "--seed", "4"]) == 0
    (row,) = rows_of(capsys.readouterr().out)
    from emflow.terrain import gen_random_drainage
    m = run_variant("sep-oblivious", gen_random_drainage(GridDims(30, 30), 4),
                    DeviceConfig(512, 32 * 1024))
    assert int(row["ios"]) == m.stats.ios


def test_convert_round_trip(tmp_path, fd_file):
    z, back = tmp_path / "z.emg", tmp_path / "back.emg"
    for strategy in ("zscan", "rowscan", "sort"):
        assert main(["convert", "--in", str(fd_file), "--out", str(z), "--strategy", strategy,
                     "--simulate", "--mem", "64K", "--block", "1K"]) == 0
        assert read_grid(z).layout == Layout.Z_ORDER
        assert main(["convert", "--in", str(z), "--out", str(back), "--strategy", strategy]) == 0
        assert read_grid(back, normalize=False) == read_grid(fd_file, normalize=False)


@pytest.mark.parametrize("algo", ["watershed", "separator"])
def test_flood_and_verify(tmp_path, algo):
    el, out = tmp_path / "e.emg", tmp_path / "f.emg"
    write_grid(gen_random_elevation(GridDims(40, 37), 3, 0.1, levels=6), el)
    args = ["flood", "--algo", algo, "--in", str(el), "--out", str(out), "--simulate",
            "--mem", "64K", "--block", "1K"]
    if algo == "separator":
        args += ["--z", "9"]
    assert main(args) == 0
    assert main(["verify", "--elev", str(el), "--flooded", str(out)]) == 0
    assert main(["verify", "--elev", str(el), "--flooded", str(el)]) == 1


def test_confluence(tmp_path):
    fd, out = tmp_path / "u.emg", tmp_path / "c.csv"
    main(["gen", "--kind", "uniform", "--n", "100", "--out", str(fd)])
    assert main(["confluence", "--in", str(fd), "--d", "4,8", "--out", str(out)]) == 0
    rows = rows_of(out.read_text())
    assert [(int(r["d"]), int(r["max"])) for r in rows] == [(4, 4), (8, 8)]
    assert json.loads(manifest_path(out).read_text())["extra"]["gamma"] == 8


def test_usage_errors(tmp_path, fd_file, capsys):
    assert main([]) == 2
    assert main(["accumulate", "--algo", "nope", "--in", "x", "--out", "y"]) == 2
    assert main(["bench", "--algos", "naive-row,bogus", "--n", "64"]) == 2
    assert main(["verify"]) == 2
    # block larger than memory
    assert main(["accumulate", "--algo", "naive-row", "--in", str(fd_file),
                 "--out", str(tmp_path / "a.emg"), "--mem", "1K", "--block", "4K"]) == 2
    # elevation file where directions are expected
    el = tmp_path / "e.emg"
    write_grid(gen_random_elevation(GridDims(5, 5), 0), el)
    assert main(["accumulate", "--algo", "tfp", "--in", str(el),
                 "--out", str(tmp_path / "a.emg")]) == 2
    assert main(["gen", "--kind", "meander", "--rows", "8", "--cols", "16",
                 "--out", str(tmp_path / "m.emg")]) == 2


def test_data_errors(tmp_path):
    bad = tmp_path / "bad.emg"
    bad.write_bytes(b"not a grid file at all")
    assert main(["accumulate", "--algo", "naive-row", "--in", str(bad),
                 "--out", str(tmp_path / "a.emg")]) == 3
    assert main(["accumulate", "--algo", "naive-row", "--in", str(tmp_path / "missing.emg"),
                 "--out", str(tmp_path / "a.emg")]) == 3
    assert main(["gen", "--kind", "meander", "--n", "4", "--out", str(tmp_path / "m.emg")]) == 3


def test_manifest_is_deterministic_apart_from_timing(tmp_path, fd_file):
    outs = [tmp_path / "a.emg", tmp_path / "b.emg"]
    docs = []
    for out in outs:
        main(["accumulate", "--algo", "sep-oblivious", "--in", str(fd_file), "--out", str(out),
              "--simulate", "--mem", "64K", "--block", "1K"])
        d = json.loads(manifest_path(out).read_text())
        for k in ("wall_time", "argv", "outputs"):
            d.pop(k)
        d["parameters"].pop("out")
        docs.append(d)
    assert docs[0] == docs[1]
    assert np.array_equal(read_grid(outs[0]).data, read_grid(outs[1]).data)


def test_run_variant_rejects_unknown():
    with pytest.raises((KeyError, ValueError)):
        run_variant("quick", random_flowdir(1, 4, 4), DeviceConfig(64, 4096))
