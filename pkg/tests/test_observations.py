import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tobitbo.observations import MalformedRecord, Observation, as_arrays, read_jsonl, write_jsonl

reals = st.floats(allow_nan=False, allow_infinity=False, width=64)


class TestObservation:
    def test_censored_sits_at_cutoff(self):
        with pytest.raises(ValueError):
            Observation((0.0,), 1.0, True, 2.0)
        Observation((0.0,), 2.0, True, 2.0)

    def test_uncensored_below_cutoff(self):
        with pytest.raises(ValueError):
            Observation((0.0,), 3.0, False, 2.0)

    @pytest.mark.parametrize("y", [math.nan, math.inf])
    def test_rejects_non_finite(self, y):
        with pytest.raises(ValueError):
            Observation((0.0,), y)

    def test_json_schema(self):
        rec = json.loads(Observation((1.0, 2.0), 0.5).to_json())
        assert rec == {"x": [1.0, 2.0], "y": 0.5, "censored": False, "cutoff": None}

    def test_extra_fields_survive(self):
        o = Observation((1.0,), 0.5, extra={"iteration": 3, "incumbent": True})
        back = Observation.from_json(o.to_json())
        assert back.extra == {"iteration": 3, "incumbent": True}

    @given(st.lists(reals, min_size=1, max_size=6), reals, st.booleans())
    def test_round_trip_bit_exact(self, x, y, censored):
        cutoff = y if censored else math.inf
        o = Observation(tuple(x), y, censored, cutoff)
        back = Observation.from_json(o.to_json())
        assert back == o
        assert np.array(back.x).tobytes() == np.array(o.x).tobytes()

    def test_awkward_float(self):
        y = 0.1 + 0.2
        assert Observation.from_json(Observation((y,), y).to_json()).y == y


class TestJsonl:
    def test_file_round_trip(self, tmp_path):
        obs = [Observation((i * 0.1,), i * 1.5, i % 2 == 1, i * 1.5 if i % 2 else math.inf) for i in range(5)]
        p = tmp_path / "d.jsonl"
        write_jsonl(p, obs)
        assert read_jsonl(p) == obs

    def test_malformed_line_number(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        good = Observation((0.0,), 1.0).to_json()
        p.write_text(good + "\n" + good + "\n{not json\n")
        with pytest.raises(MalformedRecord) as exc:
            read_jsonl(p)
        assert exc.value.lineno == 3

    @pytest.mark.parametrize("line", ['{"x": [0], "y": 1}', '{"x": 0, "y": 1, "censored": false}',
                                      '{"x": [0], "y": "a", "censored": false}', '[1, 2]',
                                      '{"x": [0], "y": 2, "censored": true, "cutoff": 1}'])
    def test_malformed_records(self, line):
        with pytest.raises(MalformedRecord):
            Observation.from_json(line, 7)


class TestArrays:
    def test_stack(self):
        d = as_arrays([Observation((1.0, 2.0), 3.0), Observation((4.0, 5.0), 6.0, True, 6.0)])
        np.testing.assert_array_equal(d.X, [[1, 2], [4, 5]])
        np.testing.assert_array_equal(d.censored, [False, True])

    def test_one_dim_inputs_become_a_column(self):
        d = as_arrays((np.arange(3.0), np.zeros(3), np.zeros(3, bool)))
        assert d.X.shape == (3, 1)

    def test_empty(self):
        with pytest.raises(ValueError):
            as_arrays([])
