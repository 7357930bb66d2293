"""Acceptance suite: one PASS/FAIL line per criterion, printed even under capture.

Run alone with ``pytest tests/test_acceptance.py -v``. Criterion 4 trains the
full desk model and takes a few minutes on one core.
"""

import json
import math
import time

import numpy as np
import pytest

from cgcn.centrality import (
    assemble_centrality_set,
    edge_betweenness,
    joint_closeness,
    shortest_paths,
    triplet_comembership,
)
from cgcn.cli import main
from cgcn.config import RunConfig
from cgcn.dataio import length_indices, load_dataset, normalize_length
from cgcn.experiment import build_models, prepare, train
from cgcn.gradcheck import LAYERS, THRESHOLD, run_gradcheck
from cgcn.graph import load_template
from cgcn.spectral import (
    ChebyshevFilter,
    chebyshev_conv,
    decompose,
    laplacian,
    linear_conv,
    spectral_conv_exact,
)
from cgcn.synth import ARCHETYPES, synth_generate, synth_sequence
from oracles import (
    bfs_distances,
    brute_edge_betweenness,
    brute_triplets,
    floyd_warshall,
    random_connected_weights,
    random_tree_edges,
    tree_split_sizes,
)


@pytest.fixture
def verdict(capsys):
    """Print one line per criterion whether the check passes or raises."""

    def check(number, title, fn):
        start = time.perf_counter()
        try:
            detail = fn() or ""
        except BaseException as e:
            with capsys.disabled():
                print(f"\nFAIL criterion {number}: {title} ({time.perf_counter() - start:.1f}s) {type(e).__name__}: {e}")
            raise
        with capsys.disabled():
            print(f"\nPASS criterion {number}: {title} ({time.perf_counter() - start:.1f}s) {detail}")

    return check


def run_cli(*argv):
    code = main([str(a) for a in argv])
    assert code == 0, f"command {argv[0]} exited {code}"


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    # 4 archetypes x 20 sequences, N=25, T=32
    return synth_generate(tmp_path_factory.mktemp("synth"), per_class=20, T=32, seed=0)


def test_criterion_1_centrality_oracles(verdict):
    def body():
        start = time.perf_counter()
        rng = np.random.default_rng(101)
        for seed in range(100):
            n = 3 + seed % 7
            w = random_connected_weights(n, np.random.default_rng([seed, n]), weights=(1.0, 2.0, 3.0))
            table = shortest_paths(w)
            fw = floyd_warshall(w)
            np.testing.assert_allclose(joint_closeness(table), (n - 1) / fw.sum(axis=1), rtol=0, atol=1e-9)
            np.testing.assert_allclose(edge_betweenness(w, table, normalize=False), brute_edge_betweenness(w),
                                       rtol=0, atol=1e-9)
        for _ in range(50):
            edges = random_tree_edges(25, rng)
            w = np.zeros((25, 25))
            for a, b in edges:
                w[a, b] = w[b, a] = rng.uniform(0.1, 2.0)
            eb = edge_betweenness(w, normalize=False)
            for e in edges:
                a, c = tree_split_sizes(25, edges, e)
                assert abs(eb[e[0], e[1]] - (a * c - 1)) <= 1e-9
        for n in range(3, 26):
            w = random_connected_weights(n, rng, p=min(0.5, 3 / n))
            oracle, count = brute_triplets(w)
            np.testing.assert_allclose(triplet_comembership(w, normalize=False), oracle, rtol=0, atol=1e-9)
            assert count == np.trace(oracle) / 3
        elapsed = time.perf_counter() - start
        assert elapsed < 60, f"{elapsed:.1f}s exceeds 60s"
        return "100 graphs N<=9, 50 trees N=25, triplets N<=25"

    verdict(1, "centrality vs oracles at 1e-9", body)


def test_criterion_2_spectral_chain(verdict):
    def body():
        start = time.perf_counter()
        rng = np.random.default_rng(202)
        for n in range(2, 11):
            for _ in range(5):
                w = random_connected_weights(n, rng, weights=(1.0,))
                x = rng.normal(size=n)
                theta = rng.normal()
                cheb = chebyshev_conv(ChebyshevFilter([theta, -theta], 2.0), laplacian(w), x)
                np.testing.assert_allclose(cheb, linear_conv(w, theta, x), rtol=0, atol=1e-10)
        for n in range(3, 11):
            for _ in range(5):
                w = random_connected_weights(n, rng, weights=(0.5, 1.0, 2.0))
                lap = laplacian(w)
                dec = decompose(lap)
                distinct = [dec.Lambda[0]]
                for v in dec.Lambda[1:]:
                    if v - distinct[-1] > 1e-6:
                        distinct.append(v)
                distinct = np.array(distinct)
                target = rng.normal(size=distinct.size)
                coeffs = np.polynomial.chebyshev.chebfit(2 * distinct / dec.lambda_max - 1, target, distinct.size - 1)
                theta = target[np.abs(dec.Lambda[:, None] - distinct[None, :]).argmin(axis=1)]
                x = rng.normal(size=n)
                np.testing.assert_allclose(chebyshev_conv(ChebyshevFilter(coeffs, dec.lambda_max), lap, x),
                                           spectral_conv_exact(dec, theta, x), rtol=0, atol=1e-8)
        for order in (1, 2, 3, 4):
            n = 12
            edges = random_tree_edges(n, rng)
            w = np.zeros((n, n))
            for a, b in edges:
                w[a, b] = w[b, a] = 1.0
            lap = laplacian(w)
            filt = ChebyshevFilter(rng.normal(size=order + 1), 2.0)
            for probe in range(n):
                hops = bfs_distances(n, edges, probe)
                x = rng.normal(size=n)
                y = x + 10.0 * (np.array(hops) > order)
                assert chebyshev_conv(filt, lap, x)[probe] == chebyshev_conv(filt, lap, y)[probe]
                z = x + 10.0 * (np.array(hops) == order)
                assert order > max(hops) or chebyshev_conv(filt, lap, x)[probe] != chebyshev_conv(filt, lap, z)[probe]
        elapsed = time.perf_counter() - start
        assert elapsed < 10, f"{elapsed:.1f}s exceeds 10s"
        return "linear form at 1e-10, exact filter at 1e-8, M-hop locality"

    verdict(2, "spectral equivalence chain", body)


def test_criterion_3_gradcheck(verdict):
    def body():
        start = time.perf_counter()
        reports = run_gradcheck(LAYERS, shapes=5, seed=0)
        assert [r.layer for r in reports] == list(LAYERS)
        bad = [f"{r.layer}={r.max_rel_error:.2e}" for r in reports if not r.max_rel_error < 1e-4]
        assert not bad, f"relative error above 1e-4: {bad}"
        assert THRESHOLD <= 1e-4
        elapsed = time.perf_counter() - start
        assert elapsed < 120, f"{elapsed:.1f}s exceeds 2 min"
        worst = max(reports, key=lambda r: r.max_rel_error)
        return f"{len(reports)} layers, worst {worst.layer} {worst.max_rel_error:.1e}"

    verdict(3, "gradient checks below 1e-4", body)


def test_criterion_4_desk_overfit(verdict, synth_dir):
    def body():
        start = time.perf_counter()
        cfg = RunConfig(epochs=200, seed=0, stop_top1=0.95)
        assert cfg.mode == "four-stream" and cfg.channels == "desk" and cfg.target_T == 32
        prep = prepare(load_dataset(synth_dir), cfg)
        assert prep.dataset.features.shape == (80, 9, 32, 25) and prep.num_classes == 4
        report = train(prep, build_models(prep), stop_top1=cfg.stop_top1)
        losses = [r.loss for r in report.rows]
        assert all(math.isfinite(v) for v in losses), "non-finite loss"
        assert len(report.rows) <= 200
        final = report.rows[-1].top1
        assert final >= 0.95, f"top-1 {final:.4f} after {len(report.rows)} epochs"
        elapsed = time.perf_counter() - start
        assert elapsed < 600, f"{elapsed:.0f}s exceeds 10 min"
        return f"top-1 {final:.4f} at epoch {len(report.rows)}"

    verdict(4, "desk-scale overfit to top-1 >= 0.95", body)


def test_criterion_5_ablation_matches_eval(verdict, synth_dir, tmp_path, capsys):
    def body():
        cfg = tmp_path / "ablate.yaml"
        cfg.write_text("epochs: 10\n")
        run_cli("ablate", "--data", synth_dir, "--config", cfg, "--out", tmp_path / "ab", "--json")
        rows = json.loads(capsys.readouterr().out)["rows"]
        assert [r["method"] for r in rows] == [
            "CGCN", "CGCN without J", "CGCN without B", "CGCN without W", "A only"]
        assert [r["streams"] for r in rows] == [
            ["J", "B", "W", "A"], ["B", "W", "A"], ["J", "W", "A"], ["J", "B", "A"], ["A"]]
        table = (tmp_path / "ab" / "ablation.md").read_text().splitlines()
        assert sum(line.startswith("| ") for line in table) == 6
        for r in rows:
            run_cli("eval", "--data", synth_dir, "--checkpoints", tmp_path / "ab" / "checkpoints",
                    "--streams", ",".join(r["streams"]), "--topk", "1", "--json")
            got = json.loads(capsys.readouterr().out)["top1"]
            assert got == r["top1"], f"{r['method']}: ablate {r['top1']} vs eval {got}"
        return ", ".join(f"{r['method']}={r['top1']:.4f}" for r in rows)

    verdict(5, "ablation rows equal independent eval", body)


def test_criterion_6_determinism(verdict, tmp_path, capsys):
    def body():
        a = synth_generate(tmp_path / "da", per_class=5, T=32, seed=11)
        b = synth_generate(tmp_path / "db", per_class=5, T=32, seed=11)
        names = sorted(p.name for p in a.iterdir())
        assert names == sorted(p.name for p in b.iterdir())
        for name in names:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name
        cfg = tmp_path / "c.yaml"
        cfg.write_text("epochs: 2\nbatch_size: 8\n")
        for out in ("r1", "r2"):
            run_cli("train", "--data", a, "--config", cfg, "--out", tmp_path / out, "--seed", 7, "--quiet",
                    "--checkpoint-every", 1)
        capsys.readouterr()
        files = sorted(p.relative_to(tmp_path / "r1") for p in (tmp_path / "r1").rglob("*")
                       if p.is_file() and p.name != "timing.csv")
        assert any(p.parts[0] == "checkpoints" for p in files)
        for rel in files:
            assert (tmp_path / "r1" / rel).read_bytes() == (tmp_path / "r2" / rel).read_bytes(), str(rel)
        return f"{len(names)} synth files, {len(files)} run artifacts byte-identical"

    verdict(6, "determinism of reports, checkpoints and synthetic data", body)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def test_criterion_7_invariances(verdict):
    def body():
        rng = np.random.default_rng(707)
        graph = load_template("ntu25")
        names = sorted(ARCHETYPES)
        for i in range(20):
            seq = synth_sequence(names[i % 4], 8, rng)
            base = assemble_centrality_set(graph, seq.frames)
            scale = rng.uniform(0.1, 10.0)
            rot, shift = random_rotation(rng), rng.normal(scale=5.0, size=3)
            for frames in (seq.frames * scale, seq.frames @ rot.T + shift, scale * (seq.frames @ rot.T) + shift):
                moved = assemble_centrality_set(graph, frames)
                for name in "JBW":
                    np.testing.assert_allclose(moved.matrix(name), base.matrix(name), rtol=0, atol=1e-9)
        return "20 sequences, J B W within 1e-9"

    verdict(7, "scale and rigid-motion invariance", body)


def test_criterion_8_frame_normalization(verdict):
    def body():
        idx = length_indices(120, 300, "repeat")
        assert idx.tolist() == list(range(120)) * 2 + list(range(60))
        a = length_indices(300, 150, "random_crop", 8)
        assert a.tolist() == length_indices(300, 150, "random_crop", 8).tolist()
        assert len(a) == 150 and np.all(np.diff(a) > 0) and a.max() < 300
        seq = synth_sequence("wave", 300, np.random.default_rng(3))
        x = normalize_length(seq, 150, "random_crop", 8)
        y = normalize_length(seq, 150, "random_crop", 8)
        assert x.frames.tobytes() == y.frames.tobytes() and x.T == 150
        np.testing.assert_array_equal(x.frames, seq.frames[a])
        return "120->300 repetition index-exact, seeded 150-frame crop reproducible"

    verdict(8, "frame-length normalization", body)

