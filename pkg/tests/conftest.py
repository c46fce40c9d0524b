import numpy as np
import pytest

from gluemix import ArchSpec, Batch, ExpertBank, ExpertMeta, expert_optim, init_params, train_expert

SMALL_ARCH = ArchSpec([4, 8, 3], activation="relu", output="logits")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_arch():
    return SMALL_ARCH


def make_batch(arch, b, rng, classification=True):
    x = rng.standard_normal((b, arch.in_dim))
    if classification:
        y = rng.integers(0, arch.out_dim, size=b)
    else:
        y = rng.standard_normal((b, arch.out_dim))
    return Batch(x, y)


def random_bank(arch, k, seed=0, train_sizes=None):
    rng = np.random.default_rng(seed)
    experts = np.stack([init_params(arch, rng) for _ in range(k)])
    meta = None
    if train_sizes is not None:
        meta = [ExpertMeta(expert_id=i, train_size=n) for i, n in enumerate(train_sizes)]
    return ExpertBank(arch, experts, meta)


def identical_bank(arch, k, seed=0, train_sizes=None):
    rng = np.random.default_rng(seed)
    one = init_params(arch, rng)
    meta = None
    if train_sizes is not None:
        meta = [ExpertMeta(expert_id=i, train_size=n) for i, n in enumerate(train_sizes)]
    return ExpertBank(arch, np.stack([one] * k), meta)


@pytest.fixture(scope="session")
def separation_scenario():
    """Two experts: index 0 trained on off-target labels, index 1 on the
    target label pair. Target sets contain only classes 2 and 3."""
    arch = ArchSpec([5, 16, 4], activation="relu", output="logits")
    rng = np.random.default_rng(777)
    means = 2.5 * rng.standard_normal((4, 5))

    def draw(classes, n, gen):
        y = gen.choice(classes, size=n)
        x = means[y] + gen.standard_normal((n, 5))
        return Batch(x, y)

    off_data = draw([0, 1], 400, np.random.default_rng(1))
    on_data = draw([2, 3], 400, np.random.default_rng(2))
    target_train = draw([2, 3], 600, np.random.default_rng(3))
    target_holdout = draw([2, 3], 400, np.random.default_rng(4))

    init = init_params(arch, np.random.default_rng(9))
    optim = expert_optim(batch_size=32)
    expert_off = train_expert(arch, init, off_data, 15, optim, seed=11)
    expert_on = train_expert(arch, init, on_data, 15, optim, seed=12)
    bank = ExpertBank(
        arch,
        np.stack([expert_off, expert_on]),
        [ExpertMeta(0, train_size=400), ExpertMeta(1, train_size=400)],
    )
    return {
        "arch": arch,
        "bank": bank,
        "target_train": target_train,
        "target_holdout": target_holdout,
    }
