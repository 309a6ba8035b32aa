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
import os
import re
from typing import List

_PROJECT_ROOT = os.path.dirname(os.path.dirname(__file__))
_TEST_HELPERS = os.path.join(_PROJECT_ROOT, "tests", "helpers")


def _load_requirements(path_dir: str, file_name: str = "requirements.txt", comment_char: str = "#") -> List[str]:
    """Load requirements from a file, dropping comments and direct URL installs.

    >>> _load_requirements(_TEST_HELPERS, file_name="direct_dep_req.txt")  # doctest: +ELLIPSIS +NORMALIZE_WHITESPACE
    skipping direct dependency 'http://github.com/user/repo/tarball/master'
    ['torch...', 'scipy...']
    """
    with open(os.path.join(path_dir, file_name)) as file:
        lines = [ln.split(comment_char, 1)[0].strip() for ln in file]
    reqs = []
    for ln in lines:
        if ln.startswith(("http", "git+")) or "@http" in ln:
            print(f"skipping direct dependency '{ln}'")
            continue
        if ln:
            reqs.append(ln)
    return reqs


def _load_readme_description(path_dir: str) -> str:
    """Load the readme as the long description, without the sections marked as repository-only.

    >>> _load_readme_description(_PROJECT_ROOT)  # doctest: +ELLIPSIS +NORMALIZE_WHITESPACE
    '# fractional-stnp...'
    """
    with open(os.path.join(path_dir, "README.md"), encoding="utf-8") as fp:
        text = fp.read()
    skip_begin = r"<!-- following section will be skipped from PyPI description -->"
    skip_end = r"<!-- end skipping PyPI description -->"
    return re.sub(rf"{skip_begin}.+?{skip_end}", "<!--  -->", text, flags=re.IGNORECASE + re.DOTALL)
