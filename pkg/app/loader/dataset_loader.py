import logging
import struct
from pathlib import Path

import numpy as np

from app.loader.matrix_format import PathLike, \
    decode_matrix, \
    encode_matrix
from app.models.types import LabeledEmbeddingSet
from app.utils.error_handlers import BadDocument, \
    BadMagic, \
    DimensionError, \
    TruncatedPayload, \
    VersionMismatch

logger = logging.getLogger(__name__)

DATASET_MAGIC_PREFIX = b'NPULDS'
DATASET_VERSION = b'01'
DATASET_MAGIC = DATASET_MAGIC_PREFIX + DATASET_VERSION
COUNT = struct.Struct('<I')


def encode_dataset(dataset: LabeledEmbeddingSet, dtype: str = 'f32') -> bytes:
    n = len(dataset)
    if dataset.domain_labels.shape[0] != n or dataset.class_labels.shape[0] != n:
        raise DimensionError("feature and label counts differ")
    return (DATASET_MAGIC + COUNT.pack(n) +
            encode_matrix(dataset.features,
                          dtype) +
            encode_matrix(np.asarray(dataset.domain_labels).reshape(-1,
                                                                    1),
                          'u32') +
            encode_matrix(np.asarray(dataset.class_labels).reshape(-1,
                                                                   1),
                          'u32'))


def decode_dataset(buffer: bytes) -> LabeledEmbeddingSet:
    magic = bytes(buffer[:len(DATASET_MAGIC)])
    if len(magic) < len(DATASET_MAGIC):
        raise TruncatedPayload("file ends inside the dataset magic")
    if magic[:len(DATASET_MAGIC_PREFIX)] != DATASET_MAGIC_PREFIX:
        raise BadMagic(f"bad dataset magic {magic!r}")
    if magic[len(DATASET_MAGIC_PREFIX):] != DATASET_VERSION:
        raise VersionMismatch(f"dataset format version {magic[len(DATASET_MAGIC_PREFIX):]!r} is not supported")
    offset = len(DATASET_MAGIC)
    if len(buffer) - offset < COUNT.size:
        raise TruncatedPayload("file ends inside the dataset count")
    (n,) = COUNT.unpack_from(buffer,
                             offset)
    offset += COUNT.size

    features, offset = decode_matrix(buffer,
                                     offset)
    domains, offset = decode_matrix(buffer,
                                    offset)
    classes, offset = decode_matrix(buffer,
                                    offset)
    if offset != len(buffer):
        raise TruncatedPayload(f"{len(buffer) - offset} unexpected trailing bytes after the dataset")
    if domains.dtype != np.uint32 or classes.dtype != np.uint32:
        raise BadDocument("dataset label blocks must be stored as uint32")
    if not (features.shape[0] == domains.shape[0] == classes.shape[0] == n):
        raise BadDocument(f"dataset count {n} disagrees with block sizes "
                          f"{features.shape[0]}/{domains.shape[0]}/{classes.shape[0]}")
    return LabeledEmbeddingSet(features,
                               domains.reshape(-1).astype(np.int64),
                               classes.reshape(-1).astype(np.int64))


def save_dataset(path: PathLike, dataset: LabeledEmbeddingSet, dtype: str = 'f32') -> None:
    target = Path(path)
    target.parent.mkdir(parents=True,
                        exist_ok=True)
    target.write_bytes(encode_dataset(dataset,
                                      dtype))
    logger.info(f"Saved dataset of {len(dataset)} samples to {target}")


def load_dataset(path: PathLike) -> LabeledEmbeddingSet:
    return decode_dataset(Path(path).read_bytes())
