import numpy as np
import pytest

from mrpnet.dataset import ConfigError, Example
from mrpnet.model import (
    NetConfig,
    batch_tensors,
    build_net,
    column_channels,
    column_forward_batch,
    cross_validate,
    evaluate,
    forward,
    forward_batch,
    backward_batch,
    load_net,
    save_net,
    single_column_variant,
    train,
)
from mrpnet.nn_core import dropout, fc_forward, gradient_check, relu, softmax


def make_example(rng, label, source_id, mrp_offset=0.0, spec_offset=0.0):
    return Example(
        mrp_channels=(rng.standard_normal((56, 32, 32)) * 0.1 + mrp_offset).astype(np.float32),
        spec_channels=(rng.standard_normal((8, 32, 32)) * 0.1 + spec_offset).astype(np.float32),
        label=label,
        source_id=source_id,
    )


def tiny_config(**kwargs):
    defaults = dict(num_classes=2, f1=2, f2=2, hidden=8, batch_size=4, seed=0)
    defaults.update(kwargs)
    return NetConfig(**defaults)


def zero_net(config):
    net = build_net(config)
    for p in net.all_params():
        p.weights[:] = 0.0
        p.biases[:] = 0.0
    return net


def test_zero_net_uniform_probabilities():
    rng = np.random.default_rng(0)
    net = zero_net(tiny_config(num_classes=4))
    probs = forward(net, make_example(rng, 0, "s"))
    assert probs == pytest.approx([0.25] * 4, abs=1e-15)


def test_probabilities_sum_to_one():
    rng = np.random.default_rng(1)
    net = build_net(tiny_config(num_classes=3))
    for _ in range(5):
        probs = forward(net, make_example(rng, 0, "s"))
        assert abs(probs.sum() - 1.0) < 1e-12
        assert np.all(probs >= 0)


def test_merge_additivity_column_b_zeroed():
    """Forcing column B's flatten to zero must equal a head fed column A alone."""
    rng = np.random.default_rng(2)
    config = tiny_config(num_classes=3)
    net = build_net(config)
    # silence column B: zero its last conv so its flatten is exactly zero
    net.column_b[3].weights[:] = 0.0
    net.column_b[3].biases[:] = 0.0
    example = make_example(rng, 0, "s")
    got = forward(net, example)

    mrp, spec, _ = batch_tensors([example])
    fa, _ = column_forward_batch(net.column_a, mrp, config.conv_dropout, "eval", None)
    h1 = relu(fc_forward(fa, net.head[0]))
    h1, _ = dropout(h1, config.head_dropout, "eval")
    logits = fc_forward(h1, net.head[1])
    assert np.array_equal(got, softmax(logits)[0])


def test_single_column_variants():
    net = build_net(tiny_config(num_classes=4, variant="combined"))
    assert single_column_variant(net, "combined") is net

    mrp_net = single_column_variant(net, "mrp")
    assert column_channels(mrp_net.config.variant) == (56, 56)
    assert mrp_net.column_b[0].weights.shape[1] == 56

    spec_net = single_column_variant(net, "spec")
    assert spec_net.column_a[0].weights.shape[1] == 8


def test_spec_variant_ignores_mrp_channels():
    rng = np.random.default_rng(3)
    net = build_net(tiny_config(num_classes=2, variant="spec"))
    example = make_example(rng, 0, "s")
    poked = Example(
        mrp_channels=rng.standard_normal((56, 32, 32)).astype(np.float32),
        spec_channels=example.spec_channels.copy(),
        label=example.label,
        source_id=example.source_id,
    )
    assert np.array_equal(forward(net, example), forward(net, poked))


def test_mrp_variant_ignores_spec_channels():
    rng = np.random.default_rng(4)
    net = build_net(tiny_config(num_classes=2, variant="mrp"))
    example = make_example(rng, 0, "s")
    poked = Example(
        mrp_channels=example.mrp_channels.copy(),
        spec_channels=rng.standard_normal((8, 32, 32)).astype(np.float32),
        label=example.label,
        source_id=example.source_id,
    )
    assert np.array_equal(forward(net, example), forward(net, poked))


def test_train_zero_epochs_is_identity():
    rng = np.random.default_rng(5)
    net = build_net(tiny_config())
    before = [p.weights.copy() for p in net.all_params()]
    _, trace = train(net, [make_example(rng, i % 2, f"s{i}") for i in range(4)], 0, seed=1)
    assert trace == []
    for p, w in zip(net.all_params(), before):
        assert np.array_equal(p.weights, w)


def test_train_deterministic():
    rng = np.random.default_rng(6)
    examples = [make_example(rng, i % 2, f"s{i}") for i in range(8)]
    runs = []
    for _ in range(2):
        net = build_net(tiny_config())
        _, trace = train(net, examples, 3, seed=9)
        runs.append((trace, [p.weights.copy() for p in net.all_params()]))
    assert runs[0][0] == runs[1][0]
    for a, b in zip(runs[0][1], runs[1][1]):
        assert np.array_equal(a, b)


def test_train_separable_toy_reaches_zero_error():
    # dropout off and full-batch steps so the late loss descent is clean
    rng = np.random.default_rng(7)
    examples = [
        make_example(rng, 0, f"a{i}", mrp_offset=0.4, spec_offset=0.8) for i in range(8)
    ] + [
        make_example(rng, 1, f"b{i}", mrp_offset=-0.4, spec_offset=-0.8) for i in range(8)
    ]
    net = build_net(tiny_config(f1=4, f2=4, hidden=16, batch_size=16,
                                conv_dropout=0.0, head_dropout=0.0))
    _, trace = train(net, examples, 30, seed=3)
    error, _ = evaluate(net, examples)
    assert error == 0.0
    tail = trace[-10:]
    assert all(tail[i + 1] <= tail[i] + 1e-9 for i in range(len(tail) - 1)), tail


def test_train_empty_set_rejected():
    with pytest.raises(ConfigError):
        train(build_net(tiny_config()), [], 1, seed=0)


def test_evaluate_perfect_and_constant_predictors():
    rng = np.random.default_rng(8)
    examples = [make_example(rng, i % 4, f"s{i}") for i in range(8)]

    constant = zero_net(tiny_config(num_classes=4))
    constant.head[1].biases[:] = [5.0, 0.0, 0.0, 0.0]  # always predicts class 0
    error, confusion = evaluate(constant, examples)
    assert error == 0.75
    assert confusion.counts[:, 0].sum() == 8

    # a perfect predictor: train on the trivially separable layout below
    separable = [
        make_example(rng, 0, f"a{i}", spec_offset=1.0) for i in range(4)
    ] + [make_example(rng, 1, f"b{i}", spec_offset=-1.0) for i in range(4)]
    net = build_net(tiny_config(f1=4, f2=4, hidden=16))
    train(net, separable, 30, seed=1)
    error, confusion = evaluate(net, separable)
    assert error == 0.0
    assert np.array_equal(confusion.counts, np.diag([4, 4]))


def test_evaluate_groups_variants_by_source():
    rng = np.random.default_rng(9)
    examples = [make_example(rng, 0, "src0") for _ in range(5)] + [
        make_example(rng, 1, "src1") for _ in range(3)
    ]
    net = build_net(tiny_config())
    _, confusion = evaluate(net, examples)
    assert confusion.total() == 2  # two distinct sources


def test_cross_validate_shapes_and_mean():
    rng = np.random.default_rng(10)
    examples = [make_example(rng, i % 2, f"s{i}") for i in range(12)]
    result = cross_validate(examples, "combined", folds=10, seed=4, epochs=1,
                            config=tiny_config(), workers=1)
    assert len(result.per_fold_errors) == 10
    assert result.mean_error == pytest.approx(np.mean(result.per_fold_errors))
    assert result.confusion.total() == 12
    assert len(result.fold_nets) == 10


def test_cross_validate_deterministic_and_worker_invariant():
    rng = np.random.default_rng(11)
    examples = [make_example(rng, i % 2, f"s{i}") for i in range(12)]
    kwargs = dict(folds=10, seed=4, epochs=1, config=tiny_config())
    a = cross_validate(examples, "combined", workers=1, **kwargs)
    b = cross_validate(examples, "combined", workers=1, **kwargs)
    c = cross_validate(examples, "combined", workers=2, **kwargs)
    assert a.per_fold_errors == b.per_fold_errors == c.per_fold_errors
    assert np.array_equal(a.confusion.counts, c.confusion.counts)
    for na, nc in zip(a.fold_nets, c.fold_nets):
        for pa, pc in zip(na.all_params(), nc.all_params()):
            assert np.array_equal(pa.weights, pc.weights)


def test_cross_validate_test_set_uses_first_variant_per_source():
    """Augmented duplicates train, but only the first per source is scored."""
    rng = np.random.default_rng(12)
    examples = []
    for i in range(10):
        first = make_example(rng, i % 2, f"s{i}")
        examples.append(first)
        examples.append(make_example(rng, i % 2, f"s{i}"))
    result = cross_validate(examples, "combined", folds=10, seed=0, epochs=0,
                            config=tiny_config(), workers=1)
    assert result.confusion.total() == 10


def test_full_pipeline_gradient_check_tiny_net():
    rng = np.random.default_rng(13)
    config = tiny_config(num_classes=3, conv_dropout=0.0, head_dropout=0.0, seed=2, hidden=8)
    net = build_net(config)
    example = make_example(rng, 1, "s")
    mrp, spec, labels = batch_tensors([example])

    def loss_and_grads():
        probs, cache = forward_batch(net, mrp, spec, "eval")
        from mrpnet.nn_core import softmax_xent_batch

        losses, dlogits = softmax_xent_batch(cache["logits"], labels)
        grads = backward_batch(net, cache, dlogits)
        return float(losses[0]), grads

    report = gradient_check(loss_and_grads, net.all_params(), np.random.default_rng(3), probes=150)
    assert report.max_rel_error < 1e-4, report.worst


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(14)
    net = build_net(tiny_config(num_classes=3, seed=8))
    train(net, [make_example(rng, i % 3, f"s{i}") for i in range(6)], 2, seed=0)
    path = tmp_path / "net.params.ftc"
    save_net(net, path)
    back = load_net(path)
    assert back.config == net.config
    for pa, pb in zip(net.all_params(), back.all_params()):
        assert np.array_equal(pb.weights, pa.weights.astype(np.float32).astype(np.float64))
        assert np.array_equal(pb.biases, pa.biases.astype(np.float32).astype(np.float64))
