"""
Tests for Configuration Module
"""

import pytest

from crowdmap.exceptions import ValidationError
from crowdmap.utils.config import Config


class TestConfig:
    def test_defaults(self):
        config = Config()
        assert config.get('density.sigma') == 4.0
        assert config.get('knn.k') == 3
        assert config.get('knn.beta') == 0.3
        assert config.get('augment.window') == 256
        assert config.get('augment.stride') == 70
        assert config.get('training.learning_rate') == 1e-5
        assert config.get('training.batch_size') == 32

    def test_defaults_are_not_shared(self):
        first = Config()
        first.set('density.sigma', 9.0)
        assert Config().get('density.sigma') == 4.0

    def test_missing_key(self):
        assert Config().get('density.nothing', 'fallback') == 'fallback'

    def test_yaml_merge(self, tmp_path):
        path = tmp_path / 'config.yaml'
        path.write_text("knn:\n  k: 5\nunknown_section:\n  x: 1\n", encoding='utf-8')
        config = Config(str(path))
        assert config.get('knn.k') == 5
        assert config.get('knn.beta') == 0.3
        assert config.get('unknown_section') is None

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ValidationError):
            Config(str(tmp_path / 'missing.yaml'))

    def test_non_mapping(self, tmp_path):
        path = tmp_path / 'config.yaml'
        path.write_text("- 1\n- 2\n", encoding='utf-8')
        with pytest.raises(ValidationError):
            Config(str(path))

    def test_save_and_reload(self, tmp_path):
        config = Config()
        config.set('face.t_overlaps', 5)
        path = str(tmp_path / 'out' / 'config.yaml')
        config.save_config(path)
        assert Config(path).get('face.t_overlaps') == 5

    def test_provenance(self):
        resolved = Config().resolved()
        assert resolved['density.sigma'] == {'value': 4.0, 'provenance': 'published'}
        assert resolved['knn.beta']['provenance'] == 'artifact-default'
        assert resolved['training.batch_size']['provenance'] == 'published'

    def test_threads(self, monkeypatch):
        config = Config()
        monkeypatch.setenv('CROWDMAP_THREADS', '3')
        assert config.threads() == 3
        monkeypatch.delenv('CROWDMAP_THREADS')
        config.set('runtime.threads', 2)
        assert config.threads() == 2
        config.set('runtime.threads', None)
        assert config.threads() >= 1

    def test_threads_not_an_integer(self, monkeypatch):
        monkeypatch.setenv('CROWDMAP_THREADS', 'many')
        with pytest.raises(ValidationError, match='CROWDMAP_THREADS'):
            Config().threads()

    def test_show_config(self):
        assert 'sigma: 4.0' in Config().show_config()
