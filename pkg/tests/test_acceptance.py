"""The acceptance suite: one test per criterion, each at its stated tolerance.

Run ``pytest tests/test_acceptance.py`` to get the per-criterion PASS/FAIL
lines in the terminal summary.
"""
import math
import time
import warnings
from collections import OrderedDict

import numpy as np
import pytest

from oracles import eer_bruteforce, min_tdcf_straight_line
from rwresnet import BackboneConfig, FrontendConfig, RWResNet, cli
from rwresnet.audio import (
    SampleRateWarning,
    format_protocol,
    parse_protocol,
    parse_wav,
    serialize_wav,
    stack_audio,
    synth_dataset,
)
from rwresnet.checkpoint import load_checkpoint, save_checkpoint
from rwresnet.frontend import PRESETS
from rwresnet.metrics import (
    ScoreRecord,
    TdcfCost,
    compute_eer,
    compute_min_tdcf,
    read_scores,
    score,
    score_via_log_softmax,
    write_scores,
)
from rwresnet.model import predict_logits
from rwresnet.training import ScheduleConfig, init_params, locate_cycle, lr_at, lr_in_cycle, train

ASV = dict(p_miss_asv=0.05, p_fa_asv=0.02, p_miss_spoof_asv=0.4)

# desk-scale recipe shared by the overfit and variant-ordering criteria
DESK = dict(n_per_class=32, input_len=8000, preset="S", cg=1, epochs=30, batch=16)
VARIANT_SEEDS = range(5)


def detail(record_property, text):
    record_property("detail", text)


# -- 1. shapes -------------------------------------------------------------

@pytest.mark.acceptance("shape conformance")
def test_shape_conformance(record_property):
    start = time.perf_counter()
    for name in PRESETS:
        for cg in (1, 2, 4):
            cfg = FrontendConfig.preset(name, cg=cg)
            model = RWResNet(cfg).eval()
            feats = model.frontend.forward(np.zeros((1, 1, 128000), dtype=np.float32))
            F = cfg.c3 // cg
            assert feats.shape == (1, cg, 400, F)
            logits = model.backbone.forward(feats)
            assert logits.shape == (1, 2)
            assert [s[1:] for s in model.backbone.stage_shapes] == [
                (16, 400, F), (16, 400, F), (32, 200, F // 2), (64, 100, F // 4), (128, 50, F // 8),
            ]
    elapsed = time.perf_counter() - start
    detail(record_property, f"9 combinations in {elapsed:.1f} s")
    assert elapsed < 10


# -- 2. gradients ----------------------------------------------------------

@pytest.mark.acceptance("gradient suite")
def test_gradient_suite(record_property, capsys):
    start = time.perf_counter()
    code = cli.main(["gradcheck", "--seeds", "20"])
    elapsed = time.perf_counter() - start
    out = capsys.readouterr().out
    worst = max(float(line.split()[1]) for line in out.splitlines())
    detail(record_property, f"exit {code}, worst rel. error {worst:.2e}, {elapsed:.1f} s")
    assert code == 0
    assert elapsed < 60


# -- 3. metric oracles -----------------------------------------------------

def _labeled(rng, n):
    scores = rng.normal(size=n)
    if rng.random() < 0.5:
        scores = np.round(scores, 2)  # exercise ties
    labels = rng.integers(0, 2, n)
    labels[:2] = [0, 1]
    return scores[labels == 1], scores[labels == 0]


def _random_monotone_map(rng, bona, spoof):
    """A strictly increasing map on the observed scores with random gaps."""
    values = np.unique(np.concatenate([bona, spoof]))
    image = np.cumsum(rng.exponential(size=values.size)) * 10 ** rng.uniform(-3, 3) + rng.normal() * 100
    def f(x):
        return image[np.searchsorted(values, x)]
    return f(bona), f(spoof)


@pytest.mark.acceptance("metric oracles")
def test_metric_oracles(record_property):
    rng = np.random.default_rng(2024)
    worst_eer = worst_tdcf = 0.0
    for _ in range(50):
        bona, spoof = _labeled(rng, 1000)
        eer, thr = compute_eer(bona, spoof)
        ref, ref_thr = eer_bruteforce(list(bona), list(spoof))
        worst_eer = max(worst_eer, abs(eer - ref), abs(thr - ref_thr))
    for _ in range(50):
        bona, spoof = _labeled(rng, 200)
        value, _ = compute_min_tdcf(bona, spoof, TdcfCost(**ASV))
        ref, _ = min_tdcf_straight_line(list(bona), list(spoof), **ASV)
        worst_tdcf = max(worst_tdcf, abs(value - ref))
    exact = 0
    for _ in range(20):
        bona, spoof = _labeled(rng, 500)
        mb, ms = _random_monotone_map(rng, bona, spoof)
        exact += compute_eer(mb, ms)[0] == compute_eer(bona, spoof)[0]
    detail(record_property, f"EER max |diff| {worst_eer:.1e}, t-DCF max |diff| {worst_tdcf:.1e}, "
                            f"monotone maps exact {exact}/20")
    assert worst_eer < 1e-12
    assert worst_tdcf < 1e-12
    assert exact == 20


# -- 4. score identity -----------------------------------------------------

@pytest.mark.acceptance("score identity")
def test_score_identity(record_property):
    rng = np.random.default_rng(1)
    logits = rng.normal(scale=5, size=(100_000, 2))
    worst = float(np.max(np.abs(score(logits) - score_via_log_softmax(logits))))
    detail(record_property, f"max |diff| {worst:.1e} over 1e5 pairs")
    assert worst < 1e-12


# -- 5/6. desk-scale training ----------------------------------------------

_runs: dict = {}


def desk_run(variant: str, seed: int):
    """Train the desk-scale recipe once per (variant, seed) and cache it."""
    key = (variant, seed)
    if key not in _runs:
        trials, audio = synth_dataset(DESK["n_per_class"], DESK["input_len"], seed)
        waves, labels = stack_audio(trials, audio)
        cfg = FrontendConfig.preset(DESK["preset"], cg=DESK["cg"], input_len=DESK["input_len"], variant=variant)
        model = RWResNet(cfg)
        init_params(model, seed)
        start = time.perf_counter()
        best, history = train(model, waves, labels, epochs=DESK["epochs"], batch_size=DESK["batch"], seed=seed)
        elapsed = time.perf_counter() - start
        model.load_state_dict(best)
        eval_trials, eval_audio = synth_dataset(DESK["n_per_class"], DESK["input_len"], 1000 + seed, prefix="EVAL")
        ew, ey = stack_audio(eval_trials, eval_audio)
        s = score(predict_logits(model, ew).astype(np.float64))
        eer, _ = compute_eer(s[ey == 1], s[ey == 0])
        _runs[key] = dict(history=history, seconds=elapsed, eval_eer=eer)
    return _runs[key]


@pytest.mark.acceptance("overfit smoke test")
def test_overfit_smoke(record_property):
    run = desk_run("reswavegram", 0)
    hist = run["history"]
    best_acc = max(r.accuracy for r in hist)
    first = next((r.epoch for r in hist if r.accuracy >= 0.95), None)
    loss0 = hist[0].mean_loss
    detail(record_property, f"epoch-0 loss {loss0:.3f}, best train acc {best_acc:.3f} "
                            f"(first >= 0.95 at epoch {first}), {run['seconds']:.0f} s")
    assert all(math.isfinite(r.mean_loss) for r in hist)
    assert abs(loss0 - math.log(2)) <= 0.15
    assert best_acc >= 0.95
    assert run["seconds"] < 20 * 60


@pytest.mark.acceptance("variant ordering")
def test_variant_ordering(record_property):
    res = np.mean([desk_run("reswavegram", s)["eval_eer"] for s in VARIANT_SEEDS])
    wav = np.mean([desk_run("wavegram", s)["eval_eer"] for s in VARIANT_SEEDS])
    detail(record_property, f"mean eval EER reswavegram {100 * res:.2f}% vs wavegram {100 * wav:.2f}% "
                            f"over {len(VARIANT_SEEDS)} seeds")
    assert res <= wav + 0.02


# -- 7. schedule -----------------------------------------------------------

@pytest.mark.acceptance("schedule conformance")
def test_schedule_conformance(record_property):
    s = ScheduleConfig()
    worst = 0.0
    start = 0.0
    for i in range(4):
        period = s.t0 * s.t_mult ** i
        assert locate_cycle(s, start) == (i, 0.0, period)
        worst = max(worst, abs(lr_at(s, start) - 1e-4))
        worst = max(worst, abs(lr_at(s, start + period / 2) - (1e-4 + 1e-8) / 2))
        # cycle end: the closed-form value at t = T_i and the left limit of lr_at
        worst = max(worst, abs(lr_in_cycle(s, period, period) - 1e-8))
        worst = max(worst, abs(lr_at(s, math.nextafter(start + period, 0)) - 1e-8))
        start += period
    detail(record_property, f"max deviation {worst:.1e} over 4 cycles")
    assert worst < 1e-12


# -- 8. determinism --------------------------------------------------------

@pytest.mark.acceptance("determinism")
def test_determinism(record_property, tmp_path, capsys):
    trials, audio = synth_dataset(4, 3200, seed=3)
    waves, labels = stack_audio(trials, audio)
    blobs = []
    for run in ("a", "b"):
        model = RWResNet(FrontendConfig.preset("S", input_len=3200))
        init_params(model, 7)
        train(model, waves, labels, epochs=3, batch_size=4, seed=7, checkpoint_dir=tmp_path / run)
        blobs.append(sorted((p.name, p.read_bytes()) for p in (tmp_path / run).iterdir()))
    assert blobs[0] == blobs[1]

    corpus = tmp_path / "corpus"
    assert cli.main(["synth-data", "--n", "3", "--length", "3200", "--out-dir", str(corpus)]) == 0
    outputs = []
    for name in ("s1.txt", "s2.txt"):
        assert cli.main([
            "score", "--checkpoint", str(tmp_path / "a" / "epoch_002.rwrn"),
            "--protocol", str(corpus / "protocol.txt"), "--audio-root", str(corpus / "wav"),
            "--output", str(tmp_path / name),
        ]) == 0
        outputs.append((tmp_path / name).read_bytes())
    capsys.readouterr()
    detail(record_property, f"{len(blobs[0])} checkpoints bit-identical; score files byte-identical")
    assert outputs[0] == outputs[1]


# -- 9. format round trips -------------------------------------------------

@pytest.mark.acceptance("format round trips")
def test_format_round_trips(record_property, tmp_path):
    rng = np.random.default_rng(5)
    for n in (0, 1, 7, 4000):
        pcm = rng.integers(-32768, 32768, n).astype(np.int16)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SampleRateWarning)
            w = parse_wav(serialize_wav(pcm, 16000))
        assert w.samples.tobytes() == pcm.tobytes() and w.sample_rate == 16000

    model = RWResNet(FrontendConfig.preset("M", cg=2, input_len=3200), BackboneConfig(in_channels=2))
    init_params(model, 1)
    save_checkpoint(model, tmp_path / "m.rwrn")
    loaded = load_checkpoint(tmp_path / "m.rwrn", expect=model)
    state = model.state_dict()
    assert list(loaded.tensors) == list(state)
    assert all(loaded.tensors[k].tobytes() == v.tobytes() for k, v in state.items())
    assert loaded.config == model.config()

    recs = [ScoreRecord(f"LA_E_{i:07d}", float(v)) for i, v in enumerate(rng.normal(scale=30, size=1000))]
    text = write_scores(recs)
    back = read_scores(text)
    assert [r.utt_id for r in back] == [r.utt_id for r in recs]
    assert max(abs(a.score - b.score) for a, b in zip(recs, back)) < 5e-7
    assert write_scores(back) == text

    trials, _ = synth_dataset(10, 320, seed=2)
    proto = format_protocol(trials)
    assert parse_protocol(proto) == trials
    assert format_protocol(parse_protocol(proto)) == proto
    detail(record_property, "WAV, checkpoint, score file and protocol lossless")
