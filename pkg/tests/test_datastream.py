import numpy as np
import pytest

from noisemix.datastream import (
    load_embedding_stream,
    make_synthetic_stream,
    partition_classes,
    shuffle_class_order,
    synthetic_class_means,
)
from noisemix.numeric import SeededRng, ridge_solve


def default_stream(**overrides):
    kwargs = dict(
        num_classes=20,
        samples_per_class=50,
        dim=32,
        separation=8.0,
        overlap_classes=0,
        num_tasks=5,
        seed=1993,
    )
    kwargs.update(overrides)
    return make_synthetic_stream(**kwargs)


class TestSyntheticStream:
    def test_counts(self):
        stream = default_stream()
        assert stream.num_tasks == 5
        for task in stream.tasks:
            assert len(task.class_set) == 4
            assert len(task.train) == 4 * 40
            assert len(task.test) == 4 * 10

    def test_determinism(self):
        assert default_stream().content_hash() == default_stream().content_hash()

    def test_seed_changes_stream(self):
        assert default_stream().content_hash() != default_stream(seed=2024).content_hash()

    def test_class_sets_disjoint_and_exhaustive(self):
        stream = default_stream()
        seen = []
        for task in stream.tasks:
            seen.extend(task.class_set)
            for s in task.train + task.test:
                assert s.label in task.class_set
        assert sorted(seen) == list(range(20))

    def test_zero_separation_gives_chance_accuracy(self):
        stream = default_stream(separation=0.0, samples_per_class=50)
        xs, ys = [], []
        for task in stream.tasks:
            x, y = task.train_arrays()
            xs.append(x)
            ys.append(y)
        x = np.vstack(xs)
        y = np.concatenate(ys)
        targets = np.zeros((len(y), 20))
        targets[np.arange(len(y)), y] = 1.0
        w = ridge_solve(x, targets, 1.0)
        tx, ty = [], []
        for task in stream.tasks:
            x_, y_ = task.test_arrays()
            tx.append(x_)
            ty.append(y_)
        pred = np.argmax(np.vstack(tx) @ w, axis=1)
        acc = float(np.mean(pred == np.concatenate(ty)))
        assert abs(acc - 0.05) < 0.05

    def test_empirical_means_converge_to_planted(self):
        n = 200
        stream = default_stream(samples_per_class=n)
        means = synthetic_class_means(20, 32, 8.0, 0, 5, 1993)
        for task in stream.tasks:
            x, y = task.train_arrays()
            xt, yt = task.test_arrays()
            allx = np.vstack([x, xt])
            ally = np.concatenate([y, yt])
            for c in task.class_set:
                emp = allx[ally == c].mean(axis=0)
                # per-coordinate error of a mean of n unit-variance draws
                assert np.max(np.abs(emp - means[c])) < 4.5 / np.sqrt(n)

    def test_overlap_pairs_are_cross_task_and_nearby(self):
        stream = default_stream(overlap_classes=4)
        means = synthetic_class_means(20, 32, 8.0, 4, 5, 1993)
        task_of = {}
        for task in stream.tasks:
            for c in task.class_set:
                task_of[c] = task.task_index
        close = []
        for a in range(20):
            for b in range(a + 1, 20):
                d = np.linalg.norm(means[a] - means[b])
                if d < 0.15 * 8.0 + 1e-9:
                    close.append((a, b, d))
        assert len(close) == 2
        for a, b, _ in close:
            assert task_of[a] != task_of[b]

    def test_every_class_can_participate_in_overlap(self):
        stream = default_stream(overlap_classes=20)
        assert stream.num_classes == 20

    def test_validation_errors(self):
        with pytest.raises(ValueError):
            default_stream(num_tasks=21)
        with pytest.raises(ValueError):
            default_stream(samples_per_class=4)
        with pytest.raises(ValueError):
            default_stream(dim=1)
        with pytest.raises(ValueError):
            default_stream(overlap_classes=21)


class TestClassOrder:
    def test_single_class(self):
        assert shuffle_class_order(1, 123) == (0,)

    def test_stable(self):
        assert shuffle_class_order(10, 1993) == shuffle_class_order(10, 1993)

    def test_bijection(self):
        assert sorted(shuffle_class_order(17, 5)) == list(range(17))

    def test_uneven_partition_front_loads_extras(self):
        chunks = partition_classes(tuple(range(10)), 3)
        assert [len(c) for c in chunks] == [4, 3, 3]


def write_embedding_csv(path, labels, features):
    dim = features.shape[1]
    lines = ["label," + ",".join(f"f{i}" for i in range(dim))]
    for lab, row in zip(labels, features):
        lines.append(f"{lab}," + ",".join(f"{v:.6f}" for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class TestEmbeddingStream:
    def make_file(self, tmp_path, num_classes=10, per_class=10, dim=3):
        rng = SeededRng(1)
        labels = [c for c in range(num_classes) for _ in range(per_class)]
        features = rng.standard_normal(len(labels), dim)
        path = tmp_path / "data.csv"
        write_embedding_csv(path, labels, features)
        return path

    def test_partition_follows_seeded_order(self, tmp_path):
        path = self.make_file(tmp_path)
        stream = load_embedding_stream(path, 5, 1993)
        order = shuffle_class_order(10, 1993)
        got = [c for task in stream.tasks for c in task.class_set]
        assert tuple(got) == order
        assert all(len(task.class_set) == 2 for task in stream.tasks)

    def test_single_task_holds_every_class(self, tmp_path):
        path = self.make_file(tmp_path)
        stream = load_embedding_stream(path, 1, 7)
        assert stream.num_tasks == 1
        assert sorted(stream.tasks[0].class_set) == list(range(10))

    def test_seeds_produce_distinct_orders(self, tmp_path):
        path = self.make_file(tmp_path)
        orders = {load_embedding_stream(path, 5, s).class_order for s in range(10)}
        assert len(orders) > 1

    def test_default_split_is_80_20(self, tmp_path):
        path = self.make_file(tmp_path, per_class=10)
        stream = load_embedding_stream(path, 2, 3)
        for task in stream.tasks:
            assert len(task.train) == 8 * len(task.class_set)
            assert len(task.test) == 2 * len(task.class_set)

    def test_split_file_respected(self, tmp_path):
        path = self.make_file(tmp_path, num_classes=2, per_class=5)
        # rows 0..4 are class 0, rows 5..9 class 1; mark one row per class as test
        (tmp_path / "data.split").write_text("0\n5\n", encoding="utf-8")
        stream = load_embedding_stream(path, 2, 3)
        for task in stream.tasks:
            assert len(task.test) == 1
            assert len(task.train) == 4

    def test_malformed_rows_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("label,f0,f1\n0,1.0\n", encoding="utf-8")
        with pytest.raises(ValueError, match="expected 3 fields"):
            load_embedding_stream(path, 1, 1)
        path.write_text("label,f0,f1\n0,1.0,x\n", encoding="utf-8")
        with pytest.raises(ValueError, match="malformed"):
            load_embedding_stream(path, 1, 1)
        path.write_text("wrong,f0\n0,1.0\n", encoding="utf-8")
        with pytest.raises(ValueError, match="header"):
            load_embedding_stream(path, 1, 1)

    def test_fewer_classes_than_tasks_rejected(self, tmp_path):
        path = self.make_file(tmp_path, num_classes=3)
        with pytest.raises(ValueError, match="fewer"):
            load_embedding_stream(path, 4, 1)

    def test_non_contiguous_labels_rejected(self, tmp_path):
        path = tmp_path / "gap.csv"
        rng = SeededRng(2)
        labels = [0] * 5 + [2] * 5
        write_embedding_csv(path, labels, rng.standard_normal(10, 3))
        with pytest.raises(ValueError, match="contiguous"):
            load_embedding_stream(path, 2, 1)

    def test_split_file_emptying_a_class_rejected(self, tmp_path):
        path = self.make_file(tmp_path, num_classes=2, per_class=5)
        # rows 0..4 (all of class 0) marked test, class 1 keeps one test row
        (tmp_path / "data.split").write_text("0\n1\n2\n3\n4\n5\n", encoding="utf-8")
        with pytest.raises(ValueError, match="no training samples|empty"):
            load_embedding_stream(path, 2, 1)

    def test_uneven_class_division_front_loads(self, tmp_path):
        path = self.make_file(tmp_path, num_classes=7)
        stream = load_embedding_stream(path, 3, 4)
        assert [len(t.class_set) for t in stream.tasks] == [3, 2, 2]
