import math

import pytest

import fedagg

SMALL = {
    "seed": 2,
    "epochs": 2,
    "dataset": {"classes": 3, "input_dim": 6, "samples": 240, "spread": 0.5},
    "autoencoder": {"epochs": 3, "public_samples": 240},
    "topology": {
        "tiers": [
            {"count": 1, "model": "large"},
            {"count": 2, "model": "medium"},
            {"count": 4, "model": "small"},
        ]
    },
    "distill": {"lr": 0.05},
}


def test_softmax_temperature_values():
    p = fedagg.softmax([3.0, 1.0, -2.0], 3.0)
    assert p == pytest.approx([0.5874430332413048, 0.3016033097225179, 0.11095365703617732], abs=1e-12)
    assert sum(p) == pytest.approx(1.0)


def test_distillation_loss_reduces_to_cross_entropy():
    z = [0.3, -1.2, 2.0]
    loss, grad = fedagg.distillation_loss(z, 2, [5.0, 0.0, 0.0], 0.0, 3.0)
    p = fedagg.softmax(z)
    assert loss == pytest.approx(-math.log(p[2]), abs=1e-12)
    assert grad == pytest.approx([p[0], p[1], p[2] - 1.0], abs=1e-12)


def test_dirichlet_heterogeneity_falls_with_alpha():
    _, labels = fedagg.generate_synthetic(4, 8, 800, 0.5, 1)
    tv = [fedagg.dirichlet_label_tv(labels, 8, a, 3)[0] for a in (0.1, 1.0, 100.0)]
    assert tv[0] > tv[1] > tv[2]
    _, sizes = fedagg.dirichlet_label_tv(labels, 8, 1.0, 3)
    assert sum(sizes) == 800 and min(sizes) > 0


def test_partial_order_witness_rejected():
    parents = {10: None, 9: 10, 5: 10, 8: 9, 7: 9, 4: 5, 3: 5}
    tiers = {10: 1, 9: 2, 5: 2, 8: 3, 7: 3, 4: 3, 3: 3}
    sizes = {k: k for k in parents}
    ok, reason = fedagg.can_migrate(parents, tiers, 7, 5, "partial_order", sizes)
    assert not ok and "Model(7)" in reason
    assert fedagg.can_migrate(parents, tiers, 7, 5, "equivalence", sizes)[0]


def test_config_errors_name_the_field():
    bad = dict(SMALL, distill={"betaa": 1.0})
    with pytest.raises(fedagg.ConfigError, match="distill.betaa"):
        fedagg.parse_config(bad)
    resolved = fedagg.parse_config(SMALL)
    assert resolved["distill"]["beta"] == 10.0
    assert fedagg.config_hash(SMALL | {"seed": 9}) == fedagg.config_hash(SMALL)


def test_run_and_compare(tmp_path):
    a = fedagg.run(SMALL, output_dir=tmp_path / "a")
    b = fedagg.run(SMALL, output_dir=tmp_path / "b")
    assert len(a["rows"]) == 3
    assert a["privacy_violations"] == 0
    with open(a["metrics_path"]) as fa, open(b["metrics_path"]) as fb:
        assert fa.read() == fb.read()
    report = fedagg.compare([a["metrics_path"], b["metrics_path"]], [0.5])
    assert report.splitlines()[0] == "run,method,final_epoch,final_accuracy,best_accuracy,epoch_to_0.5"
    assert len(report.splitlines()) == 3
