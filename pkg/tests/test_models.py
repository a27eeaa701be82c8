import pytest
from pydantic import ValidationError

from kge_lab.exceptions import UsageError
from kge_lab.models import EvalReport, LossSpec, RunManifest, TrainConfig
from kge_lab.presets import PRESETS, get_preset


class TestLossSpec:
    """Test cases for LossSpec"""

    def test_short_alias(self):
        assert LossSpec(family='ns').family == 'ns-original'
        assert LossSpec(family=' SANS ').family == 'sans'

    def test_defaults(self):
        spec = LossSpec()
        assert (spec.family, spec.gamma, spec.nu, spec.subsampling) == ('ns-kge', 0.0, 1, 'none')
        assert spec.rescale_subsampling

    @pytest.mark.parametrize('field, value', [
        ('family', 'hinge'),
        ('gamma', -1.0),
        ('nu', 0),
        ('alpha', 0.0),
        ('subsampling', 'word2vec'),
    ])
    def test_invalid_values(self, field, value):
        with pytest.raises(ValidationError):
            LossSpec(**{field: value})


class TestTrainConfig:
    """Test cases for TrainConfig"""

    def test_model_is_normalized(self):
        assert TrainConfig(model=' RotatE ').model == 'rotate'

    def test_unknown_model(self):
        with pytest.raises(ValidationError):
            TrainConfig(model='conve')

    @pytest.mark.parametrize('field, value', [
        ('dim', 0),
        ('batch_size', 0),
        ('max_steps', 0),
        ('learning_rate', 0.0),
        ('p', 3),
        ('lr_schedule', 'cosine'),
        ('halve_fraction', 1.5),
    ])
    def test_invalid_values(self, field, value):
        with pytest.raises(ValidationError):
            TrainConfig(**{field: value})

    def test_nested_loss_from_dict(self):
        config = TrainConfig.model_validate({'model': 'transe', 'loss': {'family': 'ns', 'nu': 8}})
        assert config.loss.family == 'ns-original' and config.loss.nu == 8

    def test_json_round_trip(self):
        config = TrainConfig(model='hake', p=2, loss=LossSpec(family='sans', gamma=6.0, nu=16))
        assert TrainConfig.model_validate_json(config.model_dump_json()) == config


class TestEvalReport:
    """Test cases for EvalReport"""

    def test_hits_must_be_ordered(self):
        with pytest.raises(ValidationError):
            EvalReport(mrr=0.5, hits1=0.4, hits3=0.3, hits10=0.6, num_queries=2)

    def test_mrr_at_least_hits1(self):
        with pytest.raises(ValidationError):
            EvalReport(mrr=0.2, hits1=0.4, hits3=0.5, hits10=0.6, num_queries=2)

    def test_range(self):
        with pytest.raises(ValidationError):
            EvalReport(mrr=1.2, hits1=1.0, hits3=1.0, hits10=1.0, num_queries=1)

    def test_manifest_status(self):
        with pytest.raises(ValidationError):
            RunManifest(config={}, root_seed=0, tool_version='x', started_at='2024-01-01T00:00:00Z', status='lost')


class TestPresets:
    """Test cases for the named hyperparameter presets"""

    def test_fb15k237_transe(self):
        config = get_preset('fb15k237-transe')
        assert (config.model, config.batch_size, config.dim, config.max_steps) == ('transe', 1024, 1000, 100000)
        assert config.loss.family == 'sans' and config.loss.alpha == 1.0
        assert config.preset == 'fb15k237-transe'
        assert config.dataset_path.endswith('FB15k-237')

    def test_wn18rr_rotate(self):
        config = get_preset('wn18rr-rotate')
        assert (config.batch_size, config.dim, config.loss.alpha, config.max_steps) == (512, 500, 0.5, 80000)

    def test_coverage(self):
        assert sum(name.startswith('fb15k237-') for name in PRESETS) == 6
        assert sum(name.startswith('wn18rr-') for name in PRESETS) == 6
        assert {name for name in PRESETS if name.startswith('yago310-')} == {
            'yago310-transe', 'yago310-rotate', 'yago310-hake',
        }

    def test_copies_are_independent(self):
        config = get_preset('wn18rr-hake')
        config.loss.gamma = 0.0
        assert get_preset('wn18rr-hake').loss.gamma == 6.0

    def test_unknown_preset(self):
        with pytest.raises(UsageError):
            get_preset('yago310-distmult')
