# Copyright © 2025 mlx-popcast contributors.

from typing import List, Optional

import numpy as np

from ..featurizer import FeaturizerConfig, featurize_manifest


class ArrayDataset:
    """
    Light-weight wrapper holding a featurized split.

    ``saliency`` holds the saliency targets scaled to [0, 1] and ``mask``
    is 1 where a target exists. Rows without a target contribute nothing to
    the saliency term of the training loss.
    """

    def __init__(
        self,
        X: np.ndarray,
        y: np.ndarray,
        saliency: Optional[np.ndarray] = None,
        mask: Optional[np.ndarray] = None,
        ids: Optional[List[str]] = None,
    ):
        self.X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        self.y = np.asarray(y, dtype=np.float64).reshape(-1)
        n = self.X.shape[0]
        if self.y.shape[0] != n:
            raise ValueError(f"Got {n} feature rows but {self.y.shape[0]} targets.")
        if saliency is None:
            saliency = np.zeros((n, 3), dtype=np.float64)
            mask = np.zeros(n, dtype=np.float64)
        elif mask is None:
            mask = np.ones(n, dtype=np.float64)
        self.saliency = np.asarray(saliency, dtype=np.float64)
        self.mask = np.asarray(mask, dtype=np.float64)
        self.ids = list(ids) if ids is not None else [str(i) for i in range(n)]

    @classmethod
    def from_manifest(
        cls,
        manifest,
        snapshot_day: int,
        cfg: FeaturizerConfig = None,
        use_saliency: bool = True,
        verbose: bool = False,
    ) -> "ArrayDataset":
        X, y, ids = featurize_manifest(
            manifest, snapshot_day, cfg, use_saliency=use_saliency, verbose=verbose
        )
        saliency = np.zeros((len(ids), 3), dtype=np.float64)
        mask = np.zeros(len(ids), dtype=np.float64)
        for i, vid in enumerate(ids):
            s = manifest.saliency_of(vid)
            if s is not None:
                saliency[i] = (np.asarray(s.saliency, dtype=np.float64) - 1) / 9
                mask[i] = 1.0
        return cls(X, y, saliency, mask, ids)

    def subset(self, idx) -> "ArrayDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return ArrayDataset(
            self.X[idx],
            self.y[idx],
            self.saliency[idx],
            self.mask[idx],
            [self.ids[i] for i in idx],
        )

    def __getitem__(self, idx: int):
        return self.X[idx], self.y[idx], self.saliency[idx], self.mask[idx]

    def __len__(self):
        return self.X.shape[0]
