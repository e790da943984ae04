"""Bagging: equal-weight mixtures of independently trained models."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from .data import Dataset
from .dists import Mixture
from .errors import ConfigurationError, TrainingDivergence
from .optim import TrainConfig, train
from .param_models import ModelSpec, model_from_dict

DEFAULT_K = 10


@dataclass
class BaggedModel:
    members: list

    def __post_init__(self):
        if not self.members:
            raise ConfigurationError("a bag needs at least one member")
        first = self.members[0]
        for m in self.members[1:]:
            if m.family != first.family or tuple(m.registry) != tuple(first.registry):
                raise ConfigurationError("bag members must share family and predictor registry")

    @property
    def K(self) -> int:
        return len(self.members)

    @property
    def family(self) -> str:
        return self.members[0].family

    @property
    def registry(self) -> tuple:
        return tuple(self.members[0].registry)

    def predict(self, ds: Dataset):
        return bag_predict(self, ds)

    def to_dict(self) -> dict:
        return {"bag": True, "K": self.K, "members": [m.to_dict() for m in self.members]}

    @classmethod
    def from_dict(cls, d: dict) -> "BaggedModel":
        return cls([model_from_dict(m) for m in d["members"]])


def bag_predict(bag: BaggedModel, ds: Dataset):
    """cdf of the bag = mean of the member cdfs (a K-component mixture)."""
    dists = [m.predict(ds) for m in bag.members]
    if len(dists) == 1:
        return dists[0]
    return Mixture(tuple(dists), tuple(1.0 / len(dists) for _ in dists))


def _train_member(args):
    spec, ds, cfg, seed = args
    return train(spec.build(seed=seed), ds, replace(cfg, seed=seed)).model


def bag_train(spec: ModelSpec, ds: Dataset, cfg: TrainConfig, K: int = DEFAULT_K, base_seed: int = 0,
              jobs: int = 1) -> BaggedModel:
    """Train K members with seeds base_seed + k for a fixed number of epochs."""
    if K < 1:
        raise ConfigurationError("K must be at least 1")
    fixed = replace(cfg, patience=0, until_converged=False)
    tasks = [(spec, ds, fixed, base_seed + k) for k in range(K)]
    members = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_train_member, t) for t in tasks]
            for k, fut in enumerate(futures):
                members.append(_member_result(fut.result, k))
    else:
        for k, t in enumerate(tasks):
            members.append(_member_result(lambda t=t: _train_member(t), k))
    return BaggedModel(members)


def _member_result(get, k):
    try:
        return get()
    except TrainingDivergence as exc:
        raise TrainingDivergence(exc.reason, epoch=exc.epoch, batch=exc.batch, member=k) from exc
