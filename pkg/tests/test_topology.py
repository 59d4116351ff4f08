import pytest
from hypothesis import given
from hypothesis import strategies as st

from odt_asr.device import ResourceSnapshot
from odt_asr.errors import NoFeasibleSubModel, ParseError
from odt_asr.net import NetConfig, expected_param_count, init_model
from odt_asr.topology import (Category, LayerSpec, ModelTopology, SelectionThresholds, extract_submodel,
                              format_millions, format_percent, paper_mirror, parse_manifest, select_category,
                              select_training_mode, total_params)

TH = SelectionThresholds()


def snap(ratio, total=100_000):
    return ResourceSnapshot(0, total, round(ratio * total), 100.0)


def test_paper_mirror_total():
    assert total_params(paper_mirror()) == 30_240_000


def test_paper_mirror_group_sums():
    topo = paper_mirror()
    by_kind = {}
    for layer in topo.layers:
        by_kind[layer.kind] = by_kind.get(layer.kind, 0) + layer.param_count
    assert by_kind == {"conv": 42_336, "birnn": 10_237_664 + 18_871_200, "fc": 1_088_800}


def test_single_layer_total():
    assert total_params(ModelTopology((LayerSpec("only", "fc", 10),))) == 10


def test_toy_total_matches_closed_form():
    cfg = NetConfig()
    assert total_params(init_model(cfg).topology()) == expected_param_count(cfg) == 95_084


def test_light_on_paper_mirror():
    spec = extract_submodel(paper_mirror(), Category.Light, TH)
    assert spec.layer_names == ("FC1", "FC2", "FC3")
    assert spec.param_fraction == pytest.approx(0.0360, abs=5e-4)
    assert spec.trainable_params == 1_088_800


def test_medium_on_paper_mirror():
    spec = extract_submodel(paper_mirror(), Category.Medium, TH)
    assert spec.layer_names == ("BLSTM2", "BLSTM3", "BLSTM4", "FC1", "FC2", "FC3")
    assert spec.param_fraction == pytest.approx(0.660, abs=1e-3)
    assert spec.first_trainable_index == 4


def test_heavy_is_whole_model():
    spec = extract_submodel(paper_mirror(), Category.Heavy, TH)
    assert spec.param_fraction == 1.0
    assert spec.first_trainable_index == 0 and spec.trainable_layer_count == 10


def test_output_layer_too_big_for_light():
    topo = ModelTopology((LayerSpec("a", "conv", 50), LayerSpec("b", "fc", 50)))
    with pytest.raises(NoFeasibleSubModel):
        extract_submodel(topo, Category.Light, TH)


@pytest.mark.parametrize("ratio, expected", [
    (0.6625, Category.Heavy), (0.40, Category.Medium), (0.10, None), (0.5, Category.Heavy),
    (0.35, Category.Medium), (0.15, Category.Light), (0.149, None),
])
def test_select_category(ratio, expected):
    assert select_category(ratio, TH) == expected


def test_select_training_mode_returns_spec():
    spec = select_training_mode(snap(0.40), TH, paper_mirror())
    assert spec.category is Category.Medium
    assert select_training_mode(snap(0.10), TH, paper_mirror()) is None


def test_thresholds_must_be_ordered():
    with pytest.raises(ValueError):
        SelectionThresholds(r1=0.3, r2=0.35, r3=0.15)
    with pytest.raises(ValueError):
        SelectionThresholds(light_cap=0.8, medium_cap=0.7)


def test_parse_manifest_comments_and_errors():
    topo = parse_manifest("# header\nA conv 10\n\nB fc 5  # trailing\n")
    assert topo.names == ["A", "B"]
    for bad in ("A conv", "A lstm 4", "A conv x", "A conv 0", "A conv 1\nA fc 2", ""):
        with pytest.raises(ParseError):
            parse_manifest(bad)


@pytest.mark.parametrize("n, text", [(30_240_000, "30.24M"), (19_960_000, "19.96M"), (1_088_800, "1.08M")])
def test_format_millions(n, text):
    assert format_millions(n) == text


@pytest.mark.parametrize("f, text", [(1.0, "100%"), (0.66005, "66%"), (0.036005, "3.6%")])
def test_format_percent(f, text):
    assert format_percent(f) == text


topologies = st.lists(st.integers(1, 10_000), min_size=1, max_size=8).map(
    lambda counts: ModelTopology(tuple(LayerSpec(f"L{i}", "fc", c) for i, c in enumerate(counts))))


@given(topologies, st.sampled_from(list(Category)))
def test_extracted_spec_is_a_fraction_correct_suffix(topo, category):
    try:
        spec = extract_submodel(topo, category, TH)
    except NoFeasibleSubModel:
        assert topo.layers[-1].param_count > TH.cap(category) * total_params(topo)
        return
    n = len(topo.layers)
    assert spec.first_trainable_index + spec.trainable_layer_count == n
    recomputed = sum(l.param_count for l in topo.layers[spec.first_trainable_index:]) / total_params(topo)
    assert abs(recomputed - spec.param_fraction) <= 1e-12
    assert spec.param_fraction <= TH.cap(category)
    if category is Category.Heavy:
        assert spec.param_fraction == 1.0
    elif spec.first_trainable_index > 0:
        # one more layer would break the cap: the suffix is the longest feasible one
        longer = sum(l.param_count for l in topo.layers[spec.first_trainable_index - 1:])
        assert longer > TH.cap(category) * total_params(topo)


@given(st.floats(0, 1), st.floats(0, 1))
def test_selection_is_monotone_in_ram(a, b):
    lo, hi = sorted((a, b))
    rank = {None: 0, Category.Light: 1, Category.Medium: 2, Category.Heavy: 3}
    assert rank[select_category(lo, TH)] <= rank[select_category(hi, TH)]
