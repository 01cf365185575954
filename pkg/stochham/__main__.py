import sys

from stochham.cli import main

sys.exit(main())
