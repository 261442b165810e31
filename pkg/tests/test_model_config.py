import pytest

from ehr_sequence_workbench.build_sequence_model import build_model
from ehr_sequence_workbench.model_config import (
    FAMILIES, REFERENCE_PARAMETER_COUNTS, closed_form_parameter_count, parameter_shapes, preset,
    shape_parameter_count,
)

REFERENCE_VOCAB = 4470
REFERENCE_CONTEXT = 512
SIZES = ("Tiny", "Small", "Medium")


@pytest.mark.parametrize("family", sorted(FAMILIES))
@pytest.mark.parametrize("size_index", range(3))
def test_parameter_counts_match_reference_table(family, size_index):
    cfg = preset(family, SIZES[size_index], REFERENCE_VOCAB, REFERENCE_CONTEXT)
    expected = REFERENCE_PARAMETER_COUNTS[family][size_index] * 1e6
    count = shape_parameter_count(parameter_shapes(cfg))
    assert abs(count - expected) <= 0.15 * expected, f"{family} {SIZES[size_index]}: {count:,}"


@pytest.mark.parametrize("family", sorted(FAMILIES))
@pytest.mark.parametrize("size", ["DeskTiny", "Tiny", "Medium"])
def test_closed_form_equals_shape_enumeration(family, size):
    cfg = preset(family, size, REFERENCE_VOCAB, REFERENCE_CONTEXT)
    assert closed_form_parameter_count(cfg) == shape_parameter_count(parameter_shapes(cfg))


def test_built_model_count_equals_closed_form():
    cfg = preset("LLAMA", "DeskTiny", 100, 64)
    model = build_model(cfg, seed=0)
    assert model.count_parameters() == closed_form_parameter_count(cfg)


def test_tiny_transformers_use_two_layers():
    for family in ("BERT", "MBERT_lite", "LLAMA"):
        assert preset(family, "Tiny", REFERENCE_VOCAB, REFERENCE_CONTEXT).n_layers == 2


def test_weight_tying_per_family():
    assert "head.decoder_w" not in parameter_shapes(preset("BERT", "DeskTiny", 50, 16))
    assert "head.decoder_w" in parameter_shapes(preset("LLAMA", "DeskTiny", 50, 16))
    assert "head.decoder_w" in parameter_shapes(preset("MAMBA2", "DeskTiny", 50, 16))


def test_unknown_preset_and_size():
    with pytest.raises(ValueError, match="Unknown preset"):
        preset("GPT", "Tiny", 10, 16)
    with pytest.raises(ValueError, match="Unknown preset size"):
        preset("BERT", "Huge", 10, 16)


def test_invalid_design_combinations():
    with pytest.raises(ValueError, match="divisible"):
        preset("BERT", "DeskTiny", 50, 16, n_h=3)
    with pytest.raises(ValueError, match="trained with NTP"):
        preset("MAMBA", "DeskTiny", 50, 16, objective="MLM")
    with pytest.raises(ValueError, match="dropout"):
        preset("LLAMA", "DeskTiny", 50, 16, dropout=1.0)


def test_config_dict_round_trip():
    cfg = preset("MAMBA2", "DeskTiny", 80, 32)
    assert type(cfg).from_dict(cfg.to_dict()) == cfg
