import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ntklab.errors import ConfigError, ParseError
from ntklab.searchspace import (
    EDGES,
    OPS,
    SPACE_SIZE,
    ArchPool,
    CellArch,
    decode,
    dump_pool,
    encode,
    enumerate_space,
    load_pool,
    sample_pool,
)

arch_strategy = st.builds(CellArch, st.tuples(*[st.sampled_from(OPS)] * len(EDGES)),
                          st.integers(min_value=1, max_value=12))


class TestEncoding:
    def test_all_skip(self):
        a = CellArch.uniform("skip")
        assert encode(a) == "|skip|skip|skip|skip|skip|skip|x1"
        assert decode(encode(a)) == a

    def test_all_zero_round_trip(self):
        a = CellArch.uniform("zero")
        assert decode(encode(a)) == a

    @given(arch_strategy)
    def test_round_trip(self, arch):
        assert decode(encode(arch)) == arch

    def test_enumerated_prefix_round_trips(self):
        for a in enumerate_space(2000):
            assert decode(a.arch_id) == a

    def test_edge_lookup(self):
        a = CellArch(("zero", "skip", "linear", "linear_relu", "linear_tanh", "skip"))
        assert a.op(1, 2) == "linear"
        assert a.op(2, 3) == "skip"

    @pytest.mark.parametrize("text,offset", [
        ("skip|skip|skip|skip|skip|skip|x1", 0),
        ("|skip|conv|skip|skip|skip|skip|x1", 6),
        ("|skip|skip|skip|skip|skip|skip|y1", 31),
        ("|skip|skip|skip|skip|skip|skip|x0", 32),
        ("|skip|skip|skip|skip|skip|skip|x01", 32),
        ("|skip|skip", 10),
    ])
    def test_parse_errors_carry_offsets(self, text, offset):
        with pytest.raises(ParseError) as info:
            decode(text)
        assert info.value.offset == offset

    def test_invalid_construction(self):
        with pytest.raises(ConfigError):
            CellArch(("skip",) * 5)
        with pytest.raises(ConfigError):
            CellArch(("pool",) * 6)


class TestIndexing:
    def test_space_size(self):
        assert SPACE_SIZE == 15625

    @given(st.integers(min_value=0, max_value=SPACE_SIZE - 1))
    def test_index_round_trip(self, k):
        assert CellArch.from_index(k).index == k

    def test_lexical_order(self):
        first = enumerate_space(5)
        assert first.entries[0] == CellArch.uniform("zero")
        ids = [a.op_indices for a in first]
        assert ids == sorted(ids)
        assert first.entries[1].edge_ops[-1] == "skip"


class TestPools:
    def test_sampling_deterministic(self):
        assert sample_pool(10, 7).ids == sample_pool(10, 7).ids

    def test_sampled_pool_unique(self):
        pool = sample_pool(1000, 3)
        assert len(set(pool.ids)) == 1000

    def test_size_limit(self):
        with pytest.raises(ConfigError):
            sample_pool(SPACE_SIZE + 1, 0)
        assert len(sample_pool(SPACE_SIZE, 0)) == SPACE_SIZE

    def test_duplicates_rejected(self):
        a = CellArch.uniform("skip")
        with pytest.raises(ConfigError):
            ArchPool((a, a))

    def test_uniform_edge_frequencies(self):
        rng = np.random.default_rng(11)
        draws = [CellArch.from_index(int(k)).edge_ops[0] for k in rng.integers(0, SPACE_SIZE, 50000)]
        counts = Counter(draws)
        for op in OPS:
            assert abs(counts[op] / 50000 - 0.2) <= 0.02

    def test_sampled_edge_frequencies(self):
        counts = Counter(a.edge_ops[0] for a in sample_pool(10000, 4))
        for op in OPS:
            assert abs(counts[op] / 10000 - 0.2) <= 0.02

    def test_file_round_trip(self, tmp_path):
        pool = sample_pool(20, 1)
        path = tmp_path / "pool.json"
        path.write_text(dump_pool(pool))
        assert load_pool(path).ids == pool.ids
        path.write_text(json.dumps(["|skip|bad|skip|skip|skip|skip|x1"]))
        with pytest.raises(ParseError):
            load_pool(path)
