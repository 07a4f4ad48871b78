import numpy as np
import pytest

from multihomog.cell import reiterated_on_lattice
from multihomog.coefficients import MultiscaleCoefficient
from multihomog.elliptic import face_gradient, solve_dirichlet
from multihomog.errors import InvalidInput
from multihomog.gridio import read_corrector_table, read_field, write_corrector_table, write_field


def test_field_round_trip(tmp_path):
    c = MultiscaleCoefficient.from_expr("2+sin(2*pi*y1[1])*cos(2*pi*y1[2])", [0.25], dim=2, ellipticity=0.5)
    u = solve_dirichlet(c, F="1", h=1 / 32)
    for field in (u, face_gradient(u)):
        write_field(tmp_path / "f.mhg", field)
        back = read_field(tmp_path / "f.mhg")
        assert back.grid == field.grid and back.location == field.location and back.kind == field.kind
        np.testing.assert_array_equal(back.values, field.values)


@pytest.mark.parametrize("keep", [False, True])
def test_corrector_table_round_trip(tmp_path, keep):
    c = MultiscaleCoefficient.from_expr("(2+sin(2*pi*y1))*(2+cos(2*pi*y2))", [0.1, 0.01], ellipticity=1 / 9)
    table = reiterated_on_lattice(c, 4, 1 / 16, keep_correctors=keep)
    write_corrector_table(tmp_path / "t.mhg", table)
    back = read_corrector_table(tmp_path / "t.mhg")
    np.testing.assert_array_equal(back.matrices, table.matrices)
    np.testing.assert_array_equal(back.slow_points, table.slow_points)
    assert back.lattice == table.lattice and back.h == table.h
    if keep:
        for a, b in zip(back.correctors, table.correctors):
            np.testing.assert_array_equal(a.values, b.values)
            np.testing.assert_array_equal(a.gradient, b.gradient)
    else:
        assert back.correctors is None


def test_bad_magic(tmp_path):
    path = tmp_path / "junk.mhg"
    path.write_bytes(b"not a grid file at all")
    with pytest.raises(InvalidInput):
        read_field(path)


def test_truncated_payload(tmp_path):
    c = MultiscaleCoefficient.from_expr("2", [0.5])
    u = solve_dirichlet(c, F="1", h=1 / 8, override=True)
    path = tmp_path / "u.mhg"
    write_field(path, u)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(InvalidInput):
        read_field(path)


def test_kind_mismatch(tmp_path):
    c = MultiscaleCoefficient.from_expr("2", [0.5])
    write_field(tmp_path / "u.mhg", solve_dirichlet(c, F="1", h=1 / 8, override=True))
    with pytest.raises(InvalidInput):
        read_corrector_table(tmp_path / "u.mhg")
