"""
Preset Manager Module for Amplab
Loads named experiment presets from the presets directory
"""

import os
import json
import logging

from .config import PROJECT_ROOT, ExperimentSpec
from .errors import ConfigError

# Get logger
logger = logging.getLogger('Amplab')


class PresetManager:
    """Manages named experiment presets"""

    def __init__(self, presets_dir=None):
        self.presets_dir = presets_dir or os.path.join(PROJECT_ROOT, 'presets')
        self.available_presets = self.load_available_presets()

    def load_available_presets(self):
        """Load all preset definitions; broken files are logged and skipped"""
        presets = {}
        if not os.path.exists(self.presets_dir):
            logger.warning(f"Presets directory {self.presets_dir} not found")
            return presets

        for filename in sorted(os.listdir(self.presets_dir)):
            if filename.endswith('.json'):
                preset_id = filename[:-5]
                try:
                    with open(os.path.join(self.presets_dir, filename), 'r') as f:
                        data = json.load(f)
                    ExperimentSpec.from_dict(data['experiment'])
                    presets[preset_id] = data
                except (OSError, ValueError, KeyError, ConfigError) as e:
                    logger.error(f"Failed to load preset {filename}: {e}")
        return presets

    def get_preset_list(self):
        """(id, name, description) for every loaded preset"""
        return [(preset_id, data.get('name', preset_id), data.get('description', ''))
                for preset_id, data in self.available_presets.items()]

    def get_preset(self, preset_id):
        if preset_id not in self.available_presets:
            raise ConfigError(f"Preset '{preset_id}' not found; available: {', '.join(self.available_presets)}")
        entry = dict(self.available_presets[preset_id]['experiment'])
        entry.setdefault('name', preset_id)
        return ExperimentSpec.from_dict(entry)
