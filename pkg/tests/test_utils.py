import itertools

import numpy as np

from src import utils
from src.channel import SimulationContext
from src.training import generate_sample
from src.utils import Stream, substream


def _draws(*keys):
    return substream(*keys).random(8)


def test_substream_is_reproducible():
    np.testing.assert_array_equal(_draws(7, Stream.SCENE, 3), _draws(7, Stream.SCENE, 3))
    assert not np.array_equal(_draws(7, Stream.SCENE, 3), _draws(8, Stream.SCENE, 3))


def test_trailing_zero_keys_do_not_alias():
    assert not np.array_equal(_draws(7, 0), _draws(7, 0, 0))
    assert not np.array_equal(_draws(7, 1), _draws(7, 1, 0))
    assert not np.array_equal(_draws(7), _draws(7, 0))


def test_stream_families_never_alias():
    seed = 7
    keys = [(seed, Stream.INIT), (seed, Stream.SERVICE_SCENE), (seed, Stream.BEAM_SCENE)]
    keys += [(seed, Stream.SCENE, i) for i in range(8)]
    keys += [(seed, Stream.SHUFFLE, e) for e in range(3)]
    keys += [(seed, Stream.VALIDATION_NOISE, i) for i in range(4)]
    keys += [(seed, Stream.EVAL_NOISE, i) for i in range(4)]
    keys += [(seed, Stream.SELFTEST, i) for i in range(3)]
    keys += [(seed, Stream.TRAIN_NOISE, e, i) for e, i in itertools.product(range(2), range(4))]
    # per-stage noise streams extend an episode key by the stage index
    keys += [(seed, Stream.EVAL_NOISE, i, t) for i, t in itertools.product(range(4), range(3))]
    firsts = {tuple(_draws(*key)) for key in keys}
    assert len(firsts) == len(keys)


def test_dataset_scene_differs_from_init_stream(tiny_config):
    context = SimulationContext.from_system(tiny_config.system)
    R = context.region_half_width
    sample = generate_sample(context, 7, 0)
    init_position = substream(7, Stream.INIT).uniform(-R, R, size=2)
    assert not np.allclose(sample.ue_position[:2], init_position)


def test_worker_count_is_capped(monkeypatch):
    monkeypatch.setattr(utils, "ERA_LOC_THREADS", 3)
    assert utils.worker_count() == 3
    assert utils.worker_count(8) == 3
    assert utils.worker_count(2) == 2
    assert utils.worker_count(0) == 1
