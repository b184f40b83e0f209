import json

import numpy as np
import pytest

from privkit import ConfigError, MetricReport, TransferReport
from privkit.config import (
    build_registry,
    format_variant_name,
    load_config,
    parse_variant_name,
)
from privkit.reports import (
    comparison_csv,
    comparison_markdown,
    markdown_table,
    metric_row_labels,
    transfer_report_csv,
    transfer_report_markdown,
)


def write_config(tmp_path, **overrides):
    raw = {
        "seed": 7,
        "output_dir": "out",
        "datasets": {"originals": "originals.json"},
        "backends": [
            {"name": "proj", "kind": "embedding", "type": "random_projection_embedding",
             "params": {"image_shape": [2, 2, 3], "dim": 4, "seed": 1}},
            {"name": "gen", "kind": "generator", "type": "linear_generator_identity",
             "params": {"image_shape": [2, 2, 3]}},
            {"name": "mse", "kind": "perceptual", "type": "mean_squared_distance"},
        ],
        "variants": [
            {"name": "Gen_0.003_500", "method": "privacygan", "generator": "gen",
             "perceptual": "mse"},
            {"name": "cloak", "method": "pixel_cloak",
             "hyper": {"K": 1.0, "num_iterations": 20, "rho": 0.08}},
        ],
        "plan": {"optimize_embeddings": ["proj"], "evaluate_embeddings": ["proj"],
                 "k_values": [1, 3, 10]},
        "target_selection": {"embedding": "proj", "far_fraction": 0.25},
    }
    raw.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return path


class TestVariantGrammar:
    def test_parse(self):
        assert parse_variant_name("StyleGAN_0.003_500") == ("StyleGAN", 0.003, 500)
        assert parse_variant_name("VQGAN_0.03_1000") == ("VQGAN", 0.03, 1000)

    def test_format_round_trip(self):
        name = format_variant_name("VQGAN", 0.005, 128)
        assert name == "VQGAN_0.005_128"
        assert parse_variant_name(name) == ("VQGAN", 0.005, 128)

    def test_bad_names(self):
        for bad in ("NoUnderscores", "A_b_c", "X_1_2_3"):
            with pytest.raises(ConfigError):
                parse_variant_name(bad)


class TestLoadConfig:
    def test_defaults_and_name_grammar(self, tmp_path):
        config = load_config(write_config(tmp_path))
        variant = config.variant("Gen_0.003_500")
        assert variant.hyper.K == 0.003
        assert variant.hyper.num_iterations == 500
        assert variant.hyper.learning_rate == 0.01  # default
        assert variant.hyper.batch_size == 32  # default
        assert config.far_fraction == 0.25
        assert config.variant("cloak").hyper.rho == 0.08

    def test_preset_resolution(self, tmp_path):
        path = write_config(tmp_path, variants=[
            {"name": "std", "method": "privacygan", "generator": "gen",
             "perceptual": "mse", "hyper": {"preset": "vqgan_standard"}},
        ])
        config = load_config(path)
        hyper = config.variant("std").hyper
        assert (hyper.K, hyper.num_iterations) == (0.03, 1000)

    def test_registry_construction(self, tmp_path):
        config = load_config(write_config(tmp_path))
        registry = build_registry(config)
        assert registry.embedding("proj").dim == 4
        assert registry.generator("gen").latent_dim == 12
        assert registry.perceptual("mse").distance(np.zeros((1, 1, 3)),
                                                   np.zeros((1, 1, 3))) == 0.0

    def test_import_backend_type(self, tmp_path):
        path = write_config(tmp_path, backends=[
            {"name": "ext", "kind": "embedding", "type": "import",
             "params": {"locator": "privkit.backends:IdentityEmbedding",
                        "image_shape": [1, 1, 2]}},
        ])
        registry = build_registry(load_config(path))
        assert registry.embedding("ext").dim == 2

    def test_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(bad)
        with pytest.raises(ConfigError):
            load_config(write_config(tmp_path, output_dir=""))
        with pytest.raises(ConfigError):
            load_config(write_config(tmp_path, variants=[
                {"name": "dup", "method": "pixel_cloak"},
                {"name": "dup", "method": "pixel_cloak"},
            ]))

    def test_hash_canonical_under_key_order(self, tmp_path):
        a = load_config(write_config(tmp_path))
        raw = json.loads((tmp_path / "config.json").read_text())
        shuffled = dict(reversed(list(raw.items())))
        (tmp_path / "config2.json").write_text(json.dumps(shuffled))
        b = load_config(tmp_path / "config2.json")
        assert a.config_hash == b.config_hash


def make_report(backend="net", seed=0):
    rng = np.random.default_rng(seed)
    ks = (1, 3, 5, 10, 50, 100)
    base = sorted(float(v) for v in rng.uniform(0, 100, size=len(ks)))
    return MetricReport(
        backend_name=backend, k_values=ks,
        recall_mi={k: v for k, v in zip(ks, base)},
        recall_oi={k: min(100.0, v + 1.0) for k, v in zip(ks, base)},
        percentage=12.345678, n_queries=10, n_gallery=12, n_confounders=2,
    )


class TestReportLayout:
    def test_row_labels_match_reference_layout(self):
        assert metric_row_labels() == [
            "Percentage",
            "Recall@1: m.i.", "Recall@1: o.i.",
            "Recall@3: m.i.", "Recall@3: o.i.",
            "Recall@5: m.i.", "Recall@5: o.i.",
            "Recall@10: m.i.", "Recall@10: o.i.",
            "Recall@50: m.i.", "Recall@50: o.i.",
            "Recall@100: m.i.", "Recall@100: o.i.",
        ]

    def test_markdown_table_single_column(self):
        text = markdown_table({"PixelCloak": make_report()})
        lines = text.splitlines()
        assert lines[0] == "| Metric | PixelCloak |"
        assert lines[2].startswith("| Percentage | 12.346")
        assert "| Recall@100: o.i. |" in lines[-1]

    def test_markdown_cells_three_decimals(self):
        report = MetricReport(
            backend_name="net", k_values=(1, 10),
            recall_mi={1: 20.5214, 10: 83.4123}, recall_oi={1: 23.886, 10: 82.938},
            percentage=0.782, n_queries=5, n_gallery=6, n_confounders=1)
        text = markdown_table({"PixelCloak": report})
        assert "| Recall@1: m.i. | 20.521 |" in text
        assert "| Percentage | 0.782 |" in text

    def test_transfer_report_formats(self):
        report = TransferReport(
            per_embedding={"net": make_report()}, transfer_recall=62.163,
            optimized_set=("other",))
        md = transfer_report_markdown(report, title="demo")
        assert "Transfer recall (mean Recall@10, m.i., held-out backends): 62.16" in md
        csv_text = transfer_report_csv(report, header_comment="h")
        assert csv_text.startswith("# h\nbackend,metric,context,value")
        assert "TransferRecall@10" in csv_text

    def test_comparison_column_order_and_summary(self):
        reports = {
            "MethodA": TransferReport(per_embedding={"net": make_report(seed=1)},
                                      transfer_recall=12.3456, optimized_set=()),
            "MethodB": TransferReport(per_embedding={"net": make_report(seed=2)},
                                      transfer_recall=None, optimized_set=()),
        }
        md = comparison_markdown(reports)
        header = next(line for line in md.splitlines() if line.startswith("| Metric"))
        assert header == "| Metric | MethodA | MethodB |"
        assert "Transfer recall: MethodA = 12.35, MethodB = n/a" in md
        csv_text = comparison_csv(reports)
        assert "MethodA" in csv_text and "MethodB" in csv_text
