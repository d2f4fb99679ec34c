import numpy as np
import pytest

from reweighted.io import (
    DatasetMissing,
    RatingsDataset,
    format_float,
    read_config,
    read_csv,
    read_movielens,
    read_pgm,
    read_problem,
    read_triplets,
    read_vector,
    write_config,
    write_csv,
    write_pgm,
)


def test_movielens_tab_format(tmp_path):
    path = tmp_path / "u.data"
    path.write_text("196\t242\t3\t881250949\n186\t302\t3\t891717742\n\n22\t377\t1\t878887116\n")
    d = read_movielens(path)
    assert len(d) == 3
    assert d.records[0] == (196, 242, 3.0)
    assert d.n_users == 3 and d.n_items == 3


def test_movielens_double_colon_format(tmp_path):
    path = tmp_path / "ratings.dat"
    path.write_text("1::1193::5::978300760\n1::661::3::978302109\n")
    d = read_movielens(path)
    np.testing.assert_array_equal(d.items, [1193, 661])
    assert d.n_users == 1


def test_movielens_missing_file(tmp_path):
    with pytest.raises(DatasetMissing):
        read_movielens(tmp_path / "nope.data")


def test_ratings_dataset_validation():
    with pytest.raises(ValueError):
        RatingsDataset([1], [1], [6.0])
    with pytest.raises(ValueError):
        RatingsDataset([1, 1], [2, 2], [3.0, 4.0])
    d = RatingsDataset([1, 2, 3], [4, 5, 6], [1.0, 2.0, 3.0])
    assert d.subset([0, 2]).records == [(1, 4, 1.0), (3, 6, 3.0)]


def test_pgm_round_trip(tmp_path):
    img = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
    write_pgm(tmp_path / "a.pgm", img)
    np.testing.assert_allclose(read_pgm(tmp_path / "a.pgm"), img / 255.0)
    data = (tmp_path / "a.pgm").read_bytes()
    assert data.startswith(b"P5\n4 3\n255\n")


def test_pgm_float_and_rescale(tmp_path):
    img = np.array([[0.0, 0.5], [1.0, 2.0]])
    write_pgm(tmp_path / "f.pgm", img)
    np.testing.assert_allclose(read_pgm(tmp_path / "f.pgm") * 255, [[0, 128], [255, 255]])
    write_pgm(tmp_path / "r.pgm", img, rescale=True)
    np.testing.assert_allclose(read_pgm(tmp_path / "r.pgm") * 255, [[0, 64], [128, 255]])


def test_pgm_rejects_ascii(tmp_path):
    (tmp_path / "p2.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(ValueError):
        read_pgm(tmp_path / "p2.pgm")


def test_format_float_round_trips():
    for v in (0.1, 1 / 3, 1e-300, -2.5e17):
        assert float(format_float(v)) == v
    assert format_float(True) == "true"
    assert format_float(np.int64(7)) == "7"
    assert format_float(float("inf")) == "inf"
    assert format_float(float("nan")) == "nan"


def test_csv_round_trip(tmp_path):
    write_csv(tmp_path / "t.csv", ["a", "b"], [[1, 0.1], [2, np.float64(1 / 3)]])
    header, rows = read_csv(tmp_path / "t.csv")
    assert header == ["a", "b"]
    assert float(rows[1][1]) == 1 / 3


def test_config_round_trip(tmp_path):
    write_config(tmp_path / "c.cfg", {"n": 128, "eta": 1e-5, "grid": [1, 2, 3]})
    (tmp_path / "c.cfg").write_text((tmp_path / "c.cfg").read_text() + "# comment\nk-max = 20  # trailing\n")
    cfg = read_config(tmp_path / "c.cfg")
    assert cfg == {"n": "128", "eta": "1.0000000000000001e-05", "grid": "1,2,3", "k_max": "20"}
    (tmp_path / "bad.cfg").write_text("just words\n")
    with pytest.raises(ValueError):
        read_config(tmp_path / "bad.cfg")


def test_triplets(tmp_path):
    (tmp_path / "t.csv").write_text("row,col,value\n0,1,2.5\n2,0,-1\n")
    r, c, v = read_triplets(tmp_path / "t.csv")
    np.testing.assert_array_equal(r, [0, 2])
    np.testing.assert_array_equal(c, [1, 0])
    np.testing.assert_array_equal(v, [2.5, -1.0])
    (tmp_path / "bad.csv").write_text("0,1\n")
    with pytest.raises(ValueError):
        read_triplets(tmp_path / "bad.csv")


def test_vector(tmp_path):
    (tmp_path / "w.csv").write_text("1,2\n3\n")
    np.testing.assert_array_equal(read_vector(tmp_path / "w.csv"), [1, 2, 3])


def test_problem(tmp_path):
    (tmp_path / "p.csv").write_text("A,1,0,1\nA,0,1,1\nx,0,0,1\n")
    A, x = read_problem(tmp_path / "p.csv")
    np.testing.assert_array_equal(A, [[1, 0, 1], [0, 1, 1]])
    np.testing.assert_array_equal(x, [0, 0, 1])
    (tmp_path / "q.csv").write_text("A,1,0\nx,0,0,1\n")
    with pytest.raises(ValueError):
        read_problem(tmp_path / "q.csv")
