import sys

from wbancoex.cli import main

sys.exit(main())
