from data.augment import strong_augment, weak_augment
from data.config import AugmentConfig, DataConfig, DomainSpec
from data.domains import Domain, load_domain
from data.idx import LabeledSet, UnlabeledSet, load_idx, read_idx, write_idx
from data.normalize import denormalize, normalize, pad_to
from data.prefetch import PrefetchLoader
from data.sampler import BatchRecipe, DomainBatch, EpochSampler, sample_batch
from data.synthetic import make_synthetic_domain, make_toy_set

__all__ = [
    "AugmentConfig", "BatchRecipe", "DataConfig", "Domain", "DomainBatch", "DomainSpec", "EpochSampler", "LabeledSet",
    "PrefetchLoader", "UnlabeledSet", "denormalize", "load_domain", "load_idx", "make_synthetic_domain", "make_toy_set",
    "normalize", "pad_to", "read_idx", "sample_batch", "strong_augment", "weak_augment", "write_idx",
]
