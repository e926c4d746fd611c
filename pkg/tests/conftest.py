import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from hypothesis import settings  # noqa: E402

settings.register_profile("default", deadline=None, derandomize=True)
settings.load_profile("default")
