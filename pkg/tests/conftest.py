import numpy as np
import pytest

from locdep.graph import BlockPartition, LocalGraph


def random_graph(partition: BlockPartition, density: float, seed: int) -> LocalGraph:
    rng = np.random.default_rng(seed)
    g = LocalGraph(partition)
    for ref in partition.refs():
        g.set_subgraph(ref, rng.random(partition.n_pairs(ref)) < density)
    return g


@pytest.fixture
def three_blocks():
    """Blocks of sizes 3, 4, 5 with two node groups and two block groups."""
    blocks = [range(0, 3), range(3, 7), range(7, 12)]
    return BlockPartition(blocks, node_groups=np.arange(12) % 2, block_groups=[0, 1, 0])


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
