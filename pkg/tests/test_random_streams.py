import numpy as np

from random_streams import replica_generator
from replica_pool import ReplicaPool


def test_replica_streams_are_keyed():
    a = replica_generator(42, 100, 3).random(5)
    assert np.array_equal(a, replica_generator(42, 100, 3).random(5))
    assert not np.array_equal(a, replica_generator(42, 100, 4).random(5))
    assert not np.array_equal(a, replica_generator(43, 100, 3).random(5))


def test_pool_keeps_submission_order():
    items = list(range(40))

    def task(k):
        return float(replica_generator(7, k).random())

    assert ReplicaPool(1).map_ordered(task, items) == ReplicaPool(4).map_ordered(task, items)
    assert ReplicaPool(3).map_ordered(lambda k: k * k, items) == [k * k for k in items]
    assert ReplicaPool(0).workers >= 1
