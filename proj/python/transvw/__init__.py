# Copyright 2026 The transvw Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Python access to the transvw library: metrics, phantoms, artifacts, CLI."""

import json

from ._transvw import (
    ConfigError,
    IntegrityError,
    NumericalError,
    UsageError,
    auc,
    dice_iou,
    run_cli,
    ttest_independent,
    ttest_paired,
)
from . import _transvw

__all__ = [
    "ConfigError",
    "IntegrityError",
    "NumericalError",
    "UsageError",
    "auc",
    "config_digest",
    "dice_iou",
    "generate_cohort",
    "read_tensor_file",
    "resolved_config",
    "run_cli",
    "ttest_independent",
    "ttest_paired",
]


def generate_cohort(patients, config=None, first_id=0):
    """Phantom volumes ([1, *grid] float32 arrays) and their cluster layouts."""
    volumes, layouts = _transvw._generate_cohort(json.dumps(config or {}), patients, first_id)
    return volumes, json.loads(layouts)


def read_tensor_file(path):
    """Tensors and metadata of a .tvw file (checkpoint, patch or volume)."""
    tensors, meta = _transvw._read_tensor_file(str(path))
    return tensors, json.loads(meta)


def config_digest(config=None):
    """Digest recorded in every artifact produced under `config`."""
    return _transvw._config_digest(json.dumps(config or {}))


def resolved_config(config=None):
    """`config` with every default filled in and section seeds derived."""
    return json.loads(_transvw._resolved_config(json.dumps(config or {})))
