#!/usr/bin/env python
# coding=utf-8

# Copyright 2026 The STRADS contributors. All rights reserved.
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
__version__ = "0.3.0.dev0"

from .utils import *  # noqa: I001
from .monitoring import *
from .trace import *
from .config import *
from .core import *
from .data_io import *
from .transport import *
from .engine import *
from .runtime import *
from .lasso import *
from .mf import *
from .baselines import *
from .theory import *
from .cli import *  # Last: the CLI reads __version__ and every module above
