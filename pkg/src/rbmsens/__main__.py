"""Allow ``python -m rbmsens`` to behave like the console script."""

import sys

from .cli import main

sys.exit(main())
