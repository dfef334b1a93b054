"""Chunk-based retrieval-augmented decoding (kNN-MT with chunk datastores)."""

from .cache import CacheScope, NeighborsCache
from .core import BOS, EOS, PAD, UNK, MixParams, ProbDist, SentencePair, Vocab
from .core import interpolate, retrieval_distribution, sq_l2
from .datastore import Datastore, append_examples, build_datastore, fit_pca
from .decode import DecodeConfig, Strategy, translate_batch
from .evalbench import StreamConfig, bench, corpus_bleu, run_stream
from .index import FlatIndex, IvfIndex, build_ivf, refresh
from .model import ToyModel, train_toy
from .schedule import ScheduleConfig, chunk_size_at, next_interval, schedule_steps

__version__ = "0.1.0"
