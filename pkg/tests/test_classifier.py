from collections import OrderedDict

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from opmodes import classifier as clf
from opmodes.classifier import (
    WEIGHTS_MAGIC,
    CompactCnn,
    CompactCnnConfig,
    EarlyStopping,
    SgdState,
    TrainConfig,
    argmax_lowest,
    forward,
    get_weights,
    load_weights,
    loss_and_grad,
    predict,
    predict_proba,
    save_weights,
    set_repro_mode,
    set_weights,
    sgd_step,
    train,
)
from opmodes.config import DESK_CHANNELS, DESK_STRIDES
from opmodes.dsp import ParameterError, RealSignal
from opmodes.features import DURATIONS_S, N_FFTS, SpectrogramConfig, featurize_batch, window_matrix
from opmodes.modes import Payload, get_mode, synthesize

SMALL = CompactCnnConfig(channels=(4, 6, 8, 8), num_classes=5)


@pytest.fixture(autouse=True)
def _repro():
    set_repro_mode(True)


def images(n, shape=(20, 24), seed=0):
    return np.random.default_rng(seed).random((n, 1, *shape)).astype(np.float32)


class TestArchitecture:
    def test_defaults_match_compact_recipe(self):
        cfg = CompactCnnConfig()
        assert cfg.channels == (16, 32, 64, 128) and cfg.num_classes == 98

    def test_parameter_counts_below_one_million(self):
        assert CompactCnn().parameter_count() < 1_000_000
        desk = CompactCnn(CompactCnnConfig(DESK_CHANNELS, DESK_STRIDES, 20))
        assert desk.parameter_count() < 1_000_000

    def test_invalid_configs(self):
        with pytest.raises(ParameterError):
            CompactCnnConfig(num_classes=1)
        with pytest.raises(ParameterError):
            CompactCnnConfig(channels=(4, 4), strides=(1,))

    def test_zero_input_finite(self):
        m = CompactCnn().eval()
        with torch.no_grad():
            logits = forward(m, np.zeros((3, 65, 186), np.float32))
        assert logits.shape == (98,) and torch.all(torch.isfinite(logits))
        assert float(torch.softmax(logits, 0).sum()) == pytest.approx(1, abs=1e-6)

    @pytest.mark.parametrize("duration", DURATIONS_S)
    @pytest.mark.parametrize("n_fft", N_FFTS)
    def test_grid_shapes_accepted(self, duration, n_fft):
        cfg = SpectrogramConfig(n_fft=n_fft, duration_s=duration)
        m = CompactCnn(CompactCnnConfig(DESK_CHANNELS, DESK_STRIDES, 20)).eval()
        x = np.zeros((2, 1, *cfg.shape()), np.float32)
        with torch.no_grad():
            assert forward(m, x).shape == (2, 20)

    def test_undersized_input(self):
        with pytest.raises(ParameterError):
            forward(CompactCnn(), np.zeros((3, 15, 40), np.float32))

    def test_one_and_three_channels_agree(self):
        m = CompactCnn(SMALL).eval()
        x = images(2)
        with torch.no_grad():
            a = forward(m, x)
            b = forward(m, np.repeat(x, 3, axis=1))
        assert torch.equal(a, b)

    def test_init_is_seeded(self):
        a = get_weights(CompactCnn(SMALL, seed=1))
        b = get_weights(CompactCnn(SMALL, seed=1))
        c = get_weights(CompactCnn(SMALL, seed=2))
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert not np.array_equal(a["head.weight"], c["head.weight"])


class TestLoss:
    def test_uniform_logits_ln98(self):
        m = CompactCnn()
        with torch.no_grad():
            m.head.weight.zero_()
            m.head.bias.zero_()
        loss, _ = loss_and_grad(m, images(4, (16, 16)), [0, 5, 50, 97])
        assert loss == pytest.approx(np.log(98), abs=1e-3)
        assert loss == pytest.approx(4.5850, abs=1e-3)

    def test_confident_logits_near_zero(self):
        m = CompactCnn(SMALL)
        with torch.no_grad():
            m.head.weight.zero_()
            m.head.bias.copy_(torch.tensor([60.0, 0, 0, 0, 0]))
        loss, _ = loss_and_grad(m, images(3), [0, 0, 0])
        assert loss < 1e-20

    def test_label_range(self):
        with pytest.raises(ParameterError):
            loss_and_grad(CompactCnn(SMALL), images(2), [0, 5])
        with pytest.raises(ParameterError):
            loss_and_grad(CompactCnn(SMALL), images(2), [-1, 0])

    def test_every_parameter_has_a_gradient(self):
        m = CompactCnn(SMALL)
        _, grads = loss_and_grad(m, images(4), [0, 1, 2, 3])
        assert list(grads) == [n for n, _ in m.named_parameters()]
        assert all(torch.all(torch.isfinite(g)) for g in grads.values())

    def test_finite_difference_gradients(self):
        torch.manual_seed(0)
        m = CompactCnn(SMALL, seed=3).double()
        x = torch.from_numpy(images(4, seed=5)).double()
        y = [0, 3, 1, 4]
        _, grads = loss_and_grad(m, x, y)
        params = OrderedDict(m.named_parameters())
        r = np.random.default_rng(11)
        probes = []
        for name, p in params.items():
            # at least one probe per tensor, 30+ in total
            for flat in r.choice(p.numel(), size=min(p.numel(), 3), replace=False):
                probes.append((name, int(flat)))
        kinds = {n.split(".")[-1] for n, _ in probes}
        layers = {type(dict(m.named_modules())[n.rsplit(".", 1)[0]]).__name__ for n, _ in probes}
        assert len(probes) >= 25 and {"Conv2d", "BatchNorm2d", "Linear"} <= layers and "bias" in kinds
        eps = 1e-4
        worst = 0.0
        for name, flat in probes:
            p = params[name].data.view(-1)
            orig = float(p[flat])
            p[flat] = orig + eps
            lp, _ = loss_and_grad(m, x, y)
            p[flat] = orig - eps
            lm, _ = loss_and_grad(m, x, y)
            p[flat] = orig
            fd = (lp - lm) / (2 * eps)
            an = float(grads[name].view(-1)[flat])
            scale = max(abs(fd), abs(an))
            if scale < 1e-8:
                continue
            worst = max(worst, abs(fd - an) / scale)
        assert worst <= 1e-4


class TestSgd:
    def _one_param_model(self):
        m = torch.nn.Linear(1, 1, bias=False).double()
        with torch.no_grad():
            m.weight.fill_(1.0)
        return m

    @staticmethod
    def _w(m):
        return m.weight.detach().item()

    def test_no_momentum_step(self):
        m = self._one_param_model()
        sgd_step(m, {"weight": torch.tensor([[2.0]], dtype=torch.float64)}, SgdState(), 0.001, 0.0)
        assert self._w(m) == pytest.approx(1 - 0.001 * 2, abs=1e-12)

    def test_velocity_persists_through_zero_gradient(self):
        m = self._one_param_model()
        s = SgdState()
        sgd_step(m, {"weight": torch.tensor([[1.0]], dtype=torch.float64)}, s, 0.001, 0.9)
        before = self._w(m)
        sgd_step(m, {"weight": torch.tensor([[0.0]], dtype=torch.float64)}, s, 0.001, 0.9)
        assert before - self._w(m) == pytest.approx(0.001 * 0.9, rel=1e-9)

    def test_two_steps_closed_form(self):
        m = self._one_param_model()
        s = SgdState()
        g = {"weight": torch.tensor([[3.0]], dtype=torch.float64)}
        sgd_step(m, g, s, 0.001, 0.9)
        sgd_step(m, g, s, 0.001, 0.9)
        assert 1 - self._w(m) == pytest.approx(0.001 * 3 * (1 + 1.9), rel=1e-9)

    def test_key_mismatch(self):
        with pytest.raises(RuntimeError):
            sgd_step(self._one_param_model(), {"bias": torch.zeros(1)}, SgdState())


class TestEarlyStopping:
    def test_decreasing_stops_at_six(self):
        es = EarlyStopping(5)
        stops = [es.update(e, 1.0 - 0.1 * e, f"w{e}") for e in range(1, 10)]
        assert stops.index(True) == 5  # epoch 6
        assert es.best_epoch == 1 and es.best_weights == "w1"

    def test_ties_are_not_improvements(self):
        es = EarlyStopping(2)
        assert not es.update(1, 0.5, "a")
        assert not es.update(2, 0.5, "b")
        assert es.update(3, 0.5, "c")
        assert es.best_weights == "a"

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.integers(1, 6))
    def test_never_returns_later_than_best(self, metrics, patience):
        es = EarlyStopping(patience)
        seen = []
        for e, v in enumerate(metrics, 1):
            seen.append(v)
            if es.update(e, v, e):
                break
        assert es.best_weights == es.best_epoch == 1 + int(np.argmax(seen))

    def test_train_stops_and_restores(self, monkeypatch):
        vals = iter([0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2])
        monkeypatch.setattr(clf, "accuracy", lambda *a, **k: (next(vals), 1.0))
        m = CompactCnn(SMALL)
        snapshots = []
        x, y = images(8), np.arange(8) % 5
        best, hist = train(
            m, (x, y), (x, y), TrainConfig(batch_size=4, max_epochs=20), on_epoch=lambda r: snapshots.append(get_weights(m))
        )
        assert len(hist) == 6
        assert [r["best"] for r in hist] == [True] + [False] * 5
        for k in best:
            np.testing.assert_array_equal(best[k], snapshots[0][k])
            np.testing.assert_array_equal(get_weights(m)[k], snapshots[0][k])


class TestTraining:
    def test_empty_sets(self):
        m = CompactCnn(SMALL)
        with pytest.raises(ParameterError):
            train(m, (images(4), np.arange(4) % 5), (images(0), np.zeros(0, int)))
        with pytest.raises(ParameterError):
            train(m, (images(0), np.zeros(0, int)), (images(2), np.arange(2)))

    def test_deterministic_history(self):
        def run():
            m = CompactCnn(SMALL, seed=4)
            src = lambda epoch: (images(12, seed=epoch), np.arange(12) % 5)  # noqa: E731
            best, hist = train(m, src, (images(6, seed=99), np.arange(6) % 5), TrainConfig(batch_size=4, max_epochs=3, seed=7))
            return best, [{k: v for k, v in r.items() if k != "seconds"} for r in hist]

        (w1, h1), (w2, h2) = run(), run()
        assert h1 == h2
        assert all(np.array_equal(w1[k], w2[k]) for k in w1)
        assert {"train_loss", "val_accuracy", "epoch_seed"} <= set(h1[0])

    def test_tone_vs_noise_toy_task(self):
        cfg = SpectrogramConfig(n_fft=64, duration_s=1.0)
        r = np.random.default_rng(0)

        def split(seconds, seed):
            t = np.arange(6000 * seconds) / 6000
            tone_sig = RealSignal(0.5 * np.sin(2 * np.pi * (700 + 600 * r.random()) * t), 6000)
            noise_sig = RealSignal(np.random.default_rng(seed).standard_normal(len(t)) * 0.3, 6000)
            x = np.concatenate([featurize_batch(window_matrix(s, 1.0, 1.0), cfg) for s in (tone_sig, noise_sig)])
            y = np.repeat([0, 1], len(x) // 2)
            return x, y

        train_set, val_set = split(60, 1), split(20, 2)
        m = CompactCnn(CompactCnnConfig(num_classes=2))
        _, hist = train(m, train_set, val_set, TrainConfig(batch_size=16, max_epochs=5))
        assert max(r["val_accuracy"] for r in hist) >= 0.99

    def test_memorize_sixteen_samples(self):
        m = CompactCnn(CompactCnnConfig(num_classes=16))
        x, y = images(16, (16, 16)), np.arange(16)
        state = SgdState()
        for epoch in range(200):
            losses = []
            for i in range(0, 16, 2):
                loss, grads = loss_and_grad(m, x[i : i + 2], y[i : i + 2])
                sgd_step(m, grads, state)
                losses.append(loss)
            if np.mean(losses) < 0.01:
                break
        assert np.mean(losses) < 0.01


class TestPredict:
    def test_tie_goes_to_lowest_index(self):
        p = np.zeros(10)
        p[3] = p[7] = 0.5
        assert argmax_lowest(p) == 3

    def test_label_and_probability(self):
        m = CompactCnn(SMALL, seed=2)
        m.class_labels = ["a", "b", "c", "d", "e"]
        label, p = predict(m, images(1)[0])
        assert p.shape == (5,) and p.sum() == pytest.approx(1, abs=1e-6)
        assert p[m.class_labels.index(label)] == np.sort(p)[::-1][0]

    def test_batch_matches_single(self):
        m = CompactCnn(SMALL, seed=2)
        x = images(7)
        labels, pb = predict(m, x)
        for i in range(7):
            label, p = predict(m, x[i])
            assert label == labels[i]
            np.testing.assert_allclose(p, pb[i], rtol=0, atol=1e-6)
            assert argmax_lowest(p) == argmax_lowest(pb[i])

    def test_gain_invariant_predictions(self):
        cfg = SpectrogramConfig(n_fft=64, duration_s=1.0)
        m = CompactCnn(SMALL, seed=2)
        x = synthesize(get_mode("RTTY"), Payload(1), 2.0)
        a = featurize_batch(window_matrix(x, 1.0, 0.5), cfg)
        b = featurize_batch(window_matrix(x.with_samples(3.7 * x.samples), 1.0, 0.5), cfg)
        assert np.array_equal(argmax_lowest(predict_proba(m, a)), argmax_lowest(predict_proba(m, b)))


class TestWeightFile:
    def test_roundtrip_bit_exact(self, tmp_path):
        m = CompactCnn(SMALL, seed=6)
        # give the running statistics non-default values
        m.train()
        with torch.no_grad():
            m(torch.from_numpy(images(4)))
        w = get_weights(m)
        save_weights(tmp_path / "w.bin", w, {"labels": ["x"]})
        back, meta = load_weights(tmp_path / "w.bin")
        assert meta == {"labels": ["x"]}
        assert list(back) == list(w)
        for k in w:
            assert back[k].tobytes() == w[k].tobytes()
        m2 = set_weights(CompactCnn(SMALL, seed=0), back)
        x = images(5, seed=9)
        assert predict_proba(m, x).tobytes() == predict_proba(m2, x).tobytes()

    def test_header_layout(self, tmp_path):
        save_weights(tmp_path / "w.bin", get_weights(CompactCnn(SMALL)))
        data = (tmp_path / "w.bin").read_bytes()
        assert data.startswith(WEIGHTS_MAGIC)
        assert int.from_bytes(data[8:10], "little") == 1

    def test_bad_magic(self, tmp_path):
        (tmp_path / "w.bin").write_bytes(b"NOTAWEIGHTFILE")
        with pytest.raises(ParameterError, match="byte 0"):
            load_weights(tmp_path / "w.bin")

    def test_truncated(self, tmp_path):
        save_weights(tmp_path / "w.bin", get_weights(CompactCnn(SMALL)))
        data = (tmp_path / "w.bin").read_bytes()
        (tmp_path / "w.bin").write_bytes(data[:-10])
        with pytest.raises(ParameterError, match="truncated"):
            load_weights(tmp_path / "w.bin")

    def test_key_mismatch(self):
        with pytest.raises(ParameterError):
            set_weights(CompactCnn(SMALL), {"head.weight": np.zeros((5, 8))})
