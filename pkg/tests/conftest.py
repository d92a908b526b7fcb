import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from healthids import nslkdd, surrogate  # noqa: E402
from healthids.ids import LayeredIDS  # noqa: E402
from healthids.svm import KernelSpec, SvmParams, train_binary, train_multiclass  # noqa: E402

DATA_DIR_ENV = "HEALTHIDS_DATA_DIR"


def real_nslkdd_files():
    """(train, test) paths of the public NSL-KDD files, or None when not configured."""
    root = os.environ.get(DATA_DIR_ENV)
    if not root:
        return None
    train, test = Path(root) / "KDDTrain+.txt", Path(root) / "KDDTest+.txt"
    if train.is_file() and test.is_file():
        return train, test
    return None


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("surrogate")
    surrogate.write_corpus(d, seed=7)
    return d


@pytest.fixture(scope="session")
def sources(corpus_dir):
    return (nslkdd.parse_file(corpus_dir / "KDDTrain+.txt"),
            nslkdd.parse_file(corpus_dir / "KDDTest+.txt"))


@pytest.fixture(scope="session")
def misuse_split(sources):
    return nslkdd.build_misuse_dataset(*sources)


@pytest.fixture(scope="session")
def schema(misuse_split):
    return nslkdd.fit_schema(misuse_split.train)


@pytest.fixture(scope="session")
def encoded(misuse_split, schema):
    X = nslkdd.encode_matrix(misuse_split.train, schema)
    Xt = nslkdd.encode_matrix(misuse_split.test, schema)
    return X, np.array([r.label for r in misuse_split.train]), Xt, np.array([r.label for r in misuse_split.test])


@pytest.fixture(scope="session")
def trained(encoded, schema):
    X, labels, _, _ = encoded
    kernel = KernelSpec.default_for(schema.dimension)
    y = np.where(labels == nslkdd.NORMAL, -1.0, 1.0)
    anomaly = train_binary(X, y, SvmParams(), kernel, class_pair=(nslkdd.ATTACK, nslkdd.NORMAL))
    misuse = train_multiclass(X, labels, SvmParams(), kernel)
    return LayeredIDS(schema, anomaly, misuse)
