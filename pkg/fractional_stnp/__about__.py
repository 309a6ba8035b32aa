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
__version__ = "0.1.0"
__license__ = "Apache-2.0"
__docs__ = "Sequential-in-time neural solvers for fractional Burgers equations."
__long_docs__ = """
fractional-stnp evolves the parameters of a small tanh network in time so that the network tracks the solution of a
fractional Burgers equation. Two models are supported:

    - FBEFL: viscous Burgers with fractional Laplacian diffusion, discretized with shifted Grunwald-Letnikov formulas
    - FBENN: Burgers with a nonlocal Caputo flux, discretized with the L1 scheme and checked against an exact
      fractional Hopf-Cole solution

At every step the vector field is projected onto the tangent space of the network by regularized least squares and
the parameters are advanced with SSP-RK3 or adaptive Dormand-Prince RK45. Each step reports the projection residual,
conditioning, a truncation-error proxy and the energy budget implied by the L2 stability estimate.
"""

__all__ = ["__docs__", "__license__", "__version__"]
