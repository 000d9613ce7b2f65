"""Truncated diffusion times for score-based generative models: ELBO terms, auxiliary bridges and likelihoods."""

###################################################################################
# Apache Software License 2.0
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
# http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
###################################################################################

from __future__ import annotations

from difftime import bridge, elbo, likelihood, mixture, score, sde, simulation
from difftime.base import NonFiniteError
from difftime.mixture import GaussianMixture, diffuse
from difftime.options import set_options
from difftime.score import ScoreNet, TrainConfig, oracle_score, train
from difftime.sde import DiffusionSpec, VEDiffusion, VEToyDiffusion, VPDiffusion, pnoise
from difftime.streams import Streams

__version__ = "0.1.0"
