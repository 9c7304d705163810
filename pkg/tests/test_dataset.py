import numpy as np
import pandas as pd
import pytest
import torch

from dataloader.dataset_class import (EmbeddingSet, TeacherTargetDataset, read_embeddings, sample_pairs,
                                      split_records, split_sizes, teacher2dataloader, validation_indices,
                                      write_embeddings)
from utils.errors import DimensionMismatch, InsufficientSamples, ValidationError


class TestEmbeddingSet:

    def test_basic(self, clustered):
        assert len(clustered) == 48
        assert clustered.dim == 12
        assert clustered.classes == [f"id{c}" for c in range(6)]
        groups = clustered.indices_by_class()
        assert list(groups) == clustered.classes
        assert all(len(idx) == 8 for idx in groups.values())

    def test_labels_become_strings(self):
        data = EmbeddingSet([1, 2, 2], np.zeros((3, 2)))
        assert data.labels.tolist() == ["1", "2", "2"]

    def test_single_vector(self):
        assert EmbeddingSet(["a"], [1.0, 2.0]).vectors.shape == (1, 2)

    def test_count_mismatch(self):
        with pytest.raises(DimensionMismatch):
            EmbeddingSet(["a", "b"], np.zeros((3, 2)))

    def test_empty(self):
        with pytest.raises(InsufficientSamples):
            EmbeddingSet([], np.zeros((0, 2)))

    def test_empty_label(self):
        with pytest.raises(ValidationError):
            EmbeddingSet(["a", ""], np.zeros((2, 2)))

    def test_subset_and_views(self, clustered, rng):
        sub = clustered.subset([0, 9, 17])
        assert sub.labels.tolist() == ["id0", "id1", "id2"]
        moved = clustered.with_vectors(np.ones((48, 3)))
        assert moved.dim == 3 and np.array_equal(moved.labels, clustered.labels)
        shuffled = clustered.shuffled_labels(rng)
        assert sorted(shuffled.labels) == sorted(clustered.labels)
        assert np.array_equal(shuffled.vectors, clustered.vectors)


class TestEmbeddingFiles:

    def test_write_then_read_is_exact(self, clustered, tmp_path):
        path = tmp_path / "emb.csv"
        write_embeddings(clustered, path)
        back = read_embeddings(str(path))
        assert np.array_equal(back.vectors, clustered.vectors)
        assert np.array_equal(back.labels, clustered.labels)

    def test_header(self, tmp_path):
        path = tmp_path / "emb.csv"
        path.write_text("label,f0,f1\nalice,0.5,1e-3\nNA,-2,3\n", encoding="utf-8")
        data = read_embeddings(str(path))
        assert data.labels.tolist() == ["alice", "NA"]
        assert data.vectors.tolist() == [[0.5, 1e-3], [-2.0, 3.0]]

    @pytest.mark.parametrize("content", [
        "name,f0,f1\na,1,2\n",
        "label,f1,f0\na,1,2\n",
        "label,f0,f1\na,1,x\n",
        "label,f0,f1\na,1,\n",
        "label,f0\n,1\n",
    ])
    def test_malformed(self, tmp_path, content):
        path = tmp_path / "bad.csv"
        path.write_text(content, encoding="utf-8")
        with pytest.raises(ValidationError):
            read_embeddings(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_embeddings(str(tmp_path / "none.csv"))

    def test_frame(self, clustered):
        frame = clustered.to_frame()
        assert list(frame.columns[:3]) == ["label", "f0", "f1"]
        assert isinstance(EmbeddingSet.from_frame(frame), EmbeddingSet)
        with pytest.raises(ValidationError):
            EmbeddingSet.from_frame(pd.DataFrame({"label": ["a"], "g0": [1.0]}))


class TestSampling:

    def test_pairs_are_distinct(self, rng):
        i, j = sample_pairs(np.array([3, 5, 7]), 200, rng)
        assert np.all(i != j)
        assert set(i) | set(j) <= {3, 5, 7}

    def test_pairs_need_two_records(self, rng):
        with pytest.raises(InsufficientSamples):
            sample_pairs(np.array([1]), 5, rng)

    def test_split_records(self, rng):
        train, val = split_records(50, 0.1, rng)
        assert len(val) == 5 and len(train) == 45
        assert set(train).isdisjoint(val)
        train, val = split_records(4, 0.1, rng)
        assert len(val) == 2 and len(train) == 2

    def test_dataloader(self, rng):
        x, y = rng.standard_normal((20, 4)), rng.standard_normal((20, 2))
        train_loader, val_loader = teacher2dataloader(x, y, batch_size=8, val_fraction=0.25,
                                                      generator=torch.Generator().manual_seed(0))
        assert len(train_loader.dataset) == 15 and len(val_loader.dataset) == 5
        xb, yb = next(iter(train_loader))
        assert xb.dtype == torch.float64 and xb.shape[1] == 4 and yb.shape[1] == 2

    def test_validation_indices_match_the_loader(self, rng):
        x, y = rng.standard_normal((40, 4)), rng.standard_normal((40, 2))
        _, val = teacher2dataloader(x, y, batch_size=8, val_fraction=0.25, generator=torch.Generator().manual_seed(3),
                                    return_dataset=True)
        held_out = validation_indices(40, 0.25, 3)
        assert held_out.tolist() == sorted(val.indices)
        assert len(held_out) == 10
        assert not np.array_equal(held_out, validation_indices(40, 0.25, 4))

    @pytest.mark.parametrize("n, fraction, expected", [(50, 0.1, [45, 5]), (10, 0.0, [9, 1]), (3, 0.9, [1, 2])])
    def test_split_sizes(self, n, fraction, expected):
        assert split_sizes(n, fraction) == expected

    def test_dataset_mismatch(self, rng):
        with pytest.raises(DimensionMismatch):
            TeacherTargetDataset(rng.standard_normal((3, 2)), rng.standard_normal((4, 2)))
